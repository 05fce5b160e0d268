//! Reference systems shipped with the crate.

use crate::system::SwitchingSystem;

pub const WORKED_EXAMPLE_JSON: &str = include_str!("../fixtures/worked_example.json");
pub const SELF_LOOP_JSON: &str = include_str!("../fixtures/autociclo.json");
pub const OBSERVABLE_PAIR_JSON: &str = include_str!("../fixtures/observable_pair.json");

/// Six-mode system that is detectable but not observable.
pub fn worked_example() -> SwitchingSystem {
    SwitchingSystem::from_json(WORKED_EXAMPLE_JSON).expect("bundled fixture is valid")
}

/// Single mode with a self-loop whose reset moves states along the unobservable direction.
pub fn self_loop() -> SwitchingSystem {
    SwitchingSystem::from_json(SELF_LOOP_JSON).expect("bundled fixture is valid")
}

/// Two observable modes with distinct Markov parameters.
pub fn observable_pair() -> SwitchingSystem {
    SwitchingSystem::from_json(OBSERVABLE_PAIR_JSON).expect("bundled fixture is valid")
}
