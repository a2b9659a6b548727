//! Adam with a per-epoch cosine learning-rate schedule.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("non-finite gradient entry {index} in tensor {tensor}")]
    NonFiniteGradient {
        tensor: alloc::string::String,
        index: usize,
    },
    #[error("parameter has length {params}, gradient has {grads}")]
    ShapeMismatch { params: usize, grads: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Bias-corrected Adam. Moments are created lazily per tensor key.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<K: Ord> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<K, Moments>,
}

impl<K: Ord + Copy + core::fmt::Debug> Adam<K> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr` to every `(key, params,
    /// grads)` triple. Nothing is modified if any gradient is non-finite.
    pub fn step<'a, I>(&mut self, lr: f64, updates: I) -> Result<(), OptimError>
    where
        I: IntoIterator<Item = (K, &'a mut [f64], &'a [f64])>,
    {
        let updates: Vec<(K, &'a mut [f64], &'a [f64])> = updates.into_iter().collect();
        for (key, p, g) in &updates {
            check(key, p, g)?;
        }
        self.begin_step();
        for (key, params, grads) in updates {
            self.apply(key, lr, params, grads)?;
        }
        Ok(())
    }

    /// Advances the shared step counter used for bias correction. Call once
    /// per optimisation step, then [`Adam::apply`] for each tensor.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates one tensor at the current step.
    pub fn apply(
        &mut self,
        key: K,
        lr: f64,
        params: &mut [f64],
        grads: &[f64],
    ) -> Result<(), OptimError> {
        check(&key, params, grads)?;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let t = self.step.max(1) as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        let mo = self.moments.entry(key).or_insert_with(|| Moments {
            m: vec![0.0; grads.len()],
            v: vec![0.0; grads.len()],
        });
        for i in 0..grads.len() {
            let g = grads[i];
            mo.m[i] = beta1 * mo.m[i] + (1.0 - beta1) * g;
            mo.v[i] = beta2 * mo.v[i] + (1.0 - beta2) * g * g;
            let m_hat = mo.m[i] / c1;
            let v_hat = mo.v[i] / c2;
            params[i] -= lr * m_hat / (math::sqrt(v_hat) + eps);
        }
        Ok(())
    }
}

fn check<K: core::fmt::Debug>(key: &K, params: &[f64], grads: &[f64]) -> Result<(), OptimError> {
    if params.len() != grads.len() {
        return Err(OptimError::ShapeMismatch {
            params: params.len(),
            grads: grads.len(),
        });
    }
    if let Some(index) = grads.iter().position(|x| !x.is_finite()) {
        return Err(OptimError::NonFiniteGradient {
            tensor: alloc::format!("{key:?}"),
            index,
        });
    }
    Ok(())
}

/// `lr(e) = base * 0.5 * (1 + cos(pi * e / total))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub base: f64,
    pub total_epochs: usize,
}

impl CosineSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        if self.total_epochs == 0 {
            return self.base;
        }
        let frac = epoch.min(self.total_epochs) as f64 / self.total_epochs as f64;
        self.base * 0.5 * (1.0 + math::cos(core::f64::consts::PI * frac))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_fresh_state_is_a_no_op() {
        let mut adam: Adam<u8> = Adam::new(AdamConfig::default());
        let mut p = [1.5, -2.0];
        adam.step(0.1, [(0u8, &mut p[..], &[0.0, 0.0][..])])
            .unwrap();
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn zero_lr_is_a_fixed_point() {
        let mut adam: Adam<u8> = Adam::new(AdamConfig::default());
        let mut p = [1.5, -2.0];
        for _ in 0..3 {
            adam.step(0.0, [(0u8, &mut p[..], &[0.3, -7.0][..])])
                .unwrap();
        }
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn three_step_trace_matches_hand_arithmetic() {
        let cfg = AdamConfig::default();
        let mut adam: Adam<u8> = Adam::new(cfg);
        let grads = [0.5, -1.0, 2.0];
        let mut p = [1.0];
        // hand-rolled reference
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        for (i, g) in grads.iter().enumerate() {
            adam.step(0.01, [(0u8, &mut p[..], &[*g][..])]).unwrap();
            let t = (i + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
            assert!((p[0] - x).abs() < 1e-12);
        }
        // first Adam step moves by ~lr regardless of gradient scale
        assert_eq!(adam.steps(), 3);
    }

    #[test]
    fn nan_gradient_aborts_without_touching_params() {
        let mut adam: Adam<u8> = Adam::new(AdamConfig::default());
        let mut a = [1.0];
        let mut b = [2.0];
        let err = adam
            .step(
                0.1,
                [
                    (0u8, &mut a[..], &[0.5][..]),
                    (1u8, &mut b[..], &[f64::NAN][..]),
                ],
            )
            .unwrap_err();
        assert!(matches!(
            err,
            OptimError::NonFiniteGradient { index: 0, .. }
        ));
        assert_eq!((a, b), ([1.0], [2.0]));
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = CosineSchedule {
            base: 0.01,
            total_epochs: 20,
        };
        assert_eq!(s.lr(0), 0.01);
        assert!((s.lr(10) - 0.005).abs() < 1e-15);
        assert!(s.lr(20).abs() < 1e-18);
        assert!(s.lr(5) > s.lr(6));
    }
}
