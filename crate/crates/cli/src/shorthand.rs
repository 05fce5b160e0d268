//! Compact command-line spellings for inputs, policies and initial conditions.
//!
//! Anything that is not a shorthand is read as JSON, either inline (starting
//! with `{`) or from a file path.

use std::fs;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use switchscope::simulate::{InputSignal, ScheduledJump, SwitchingPolicy};

fn json_or_file<T: DeserializeOwned>(arg: &str, what: &str) -> Result<T> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).with_context(|| format!("{what}: cannot read {arg:?}"))?
    };
    serde_json::from_str(&text).with_context(|| format!("{what}: invalid JSON"))
}

fn floats(list: &str, what: &str) -> Result<Vec<f64>> {
    list.split(',').map(|s| s.trim().parse::<f64>().with_context(|| format!("{what}: {s:?} is not a number"))).collect()
}

/// `MODE:x1,x2,...`
pub fn initial(arg: &str) -> Result<(String, Vec<f64>)> {
    let (mode, state) = arg.rsplit_once(':').ok_or_else(|| anyhow!("--initial expects MODE:x1,x2,..., got {arg:?}"))?;
    if mode.is_empty() {
        bail!("--initial: empty mode label");
    }
    Ok((mode.to_string(), floats(state, "--initial")?))
}

/// `zero`, `exp:LAMBDA:z1,z2,...`, or a JSON input signal.
pub fn input(arg: &str) -> Result<InputSignal> {
    if arg == "zero" {
        return Ok(InputSignal::Zero);
    }
    if let Some(rest) = arg.strip_prefix("exp:") {
        let (lambda, z) = rest.split_once(':').ok_or_else(|| anyhow!("--input expects exp:LAMBDA:z1,z2,..."))?;
        let lambda = lambda.trim().parse().with_context(|| format!("--input: bad rate {lambda:?}"))?;
        return Ok(InputSignal::Exponential { z: floats(z, "--input")?, lambda });
    }
    json_or_file(arg, "--input")
}

/// `none`, `random:MIN:MAX[:SEED]`, `schedule:T@FROM>TO,...`, or a JSON policy.
pub fn policy(arg: &str) -> Result<SwitchingPolicy> {
    if arg == "none" {
        return Ok(SwitchingPolicy::none());
    }
    if let Some(rest) = arg.strip_prefix("random:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if !(2..=3).contains(&parts.len()) {
            bail!("--policy expects random:MIN:MAX[:SEED]");
        }
        let num = |s: &str| s.trim().parse::<f64>().with_context(|| format!("--policy: bad dwell {s:?}"));
        let seed = match parts.get(2) {
            Some(s) => s.trim().parse().with_context(|| format!("--policy: bad seed {s:?}"))?,
            None => 0,
        };
        return Ok(SwitchingPolicy::RandomDwell { min_dwell: num(parts[0])?, max_dwell: num(parts[1])?, seed });
    }
    if let Some(rest) = arg.strip_prefix("schedule:") {
        let jumps = rest
            .split(',')
            .map(|j| {
                let (t, edge) = j.split_once('@').ok_or_else(|| anyhow!("--policy: jump {j:?} should be T@FROM>TO"))?;
                let (from, to) =
                    edge.split_once('>').ok_or_else(|| anyhow!("--policy: jump {j:?} should be T@FROM>TO"))?;
                let t = t.trim().parse().with_context(|| format!("--policy: bad time {t:?}"))?;
                Ok(ScheduledJump::new(t, from.trim(), to.trim()))
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(SwitchingPolicy::Schedule { jumps });
    }
    json_or_file(arg, "--policy")
}
