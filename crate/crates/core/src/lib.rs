pub mod decomposition;
pub mod fixtures;
pub mod location;
pub mod observer;
pub mod ode;
pub mod report;
pub mod ser;
pub mod simulate;
pub mod stability;
pub mod subspace;
pub mod system;
