use serde::{Deserialize, Serialize};

use super::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter name so
/// they can be checkpointed alongside the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub moments: Vec<(String, Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update using the accumulated gradients. The parameter
    /// list must have the same names in the same order on every call.
    pub fn step(&mut self, params: Vec<(String, &mut Param)>) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|(n, p)| (n.clone(), vec![0.0; p.len()], vec![0.0; p.len()]))
                .collect();
        }
        assert_eq!(self.moments.len(), params.len(), "parameter set changed");
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - (beta1 as f64).powi(self.t as i32);
        let bc2 = 1.0 - (beta2 as f64).powi(self.t as i32);
        let step = (lr as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        for ((name, p), (mname, m, v)) in params.into_iter().zip(&mut self.moments) {
            debug_assert_eq!(&name, mname);
            for (((w, g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= step * *m / (v.sqrt() / bc2_sqrt + eps);
            }
        }
    }

    /// Flattened moment buffers for checkpointing: `(name.m, m)` and
    /// `(name.v, v)` pairs.
    pub fn state(&self) -> Vec<(String, Vec<f32>)> {
        self.moments
            .iter()
            .flat_map(|(n, m, v)| [(format!("{n}.m"), m.clone()), (format!("{n}.v"), v.clone())])
            .collect()
    }

    /// Restores buffers saved by [`Adam::state`] for the given parameter
    /// names and step count.
    pub fn load_state(&mut self, names: &[(String, usize)], t: u64, state: &[(String, Vec<f32>)]) -> Result<()> {
        if t == 0 {
            self.t = 0;
            self.moments.clear();
            return Ok(());
        }
        let lookup: std::collections::HashMap<&str, &Vec<f32>> =
            state.iter().map(|(n, v)| (n.as_str(), v)).collect();
        let mut moments = Vec::with_capacity(names.len());
        for (name, len) in names {
            let get = |suffix: &str| -> Result<Vec<f32>> {
                let key = format!("{name}.{suffix}");
                let v = lookup
                    .get(key.as_str())
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor '{key}'")))?;
                if v.len() != *len {
                    return Err(Error::Checkpoint(format!("optimizer tensor '{key}' has wrong length")));
                }
                Ok((*v).clone())
            };
            moments.push((name.clone(), get("m")?, get("v")?));
        }
        self.t = t;
        self.moments = moments;
        Ok(())
    }
}
