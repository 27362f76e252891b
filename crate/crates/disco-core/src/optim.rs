//! AdamW with decoupled weight decay, and the two learning-rate schedules
//! used by the training phases (constant, cosine with linear warmup).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::Params;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.beta1 && self.beta1 < 1.0) || !(0.0 < self.beta2 && self.beta2 < 1.0) {
            return Err(Error::Domain(format!(
                "betas must lie in (0, 1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Domain("epsilon must be positive".to_string()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Domain(
                "weight decay must be non-negative".to_string(),
            ));
        }
        Ok(())
    }
}

/// First/second moment buffers for one parameter.
#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Per-parameter optimizer state keyed by parameter path. Moments start at
/// zero and the shared step counter starts at zero.
#[derive(Debug)]
pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamW {
            config,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    /// One decoupled-weight-decay Adam update over every parameter in the
    /// collection that holds a gradient. Gradients are consumed as-is;
    /// callers zero them afterwards. A non-finite gradient aborts with the
    /// path of the offending parameter.
    pub fn step<T: Scalar, P: Params<T>>(&mut self, store: &mut P, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(t as i32);
        let bias2 = 1.0 - c.beta2.powi(t as i32);
        for (path, tensor) in store.params_mut() {
            let Some(grad) = tensor.grad() else {
                continue;
            };
            if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at `{path}`[{bad}]"
                )));
            }
            let grad: Vec<f64> = grad.iter().map(|g| g.to_f64()).collect();
            let entry = self
                .moments
                .entry(path.to_string())
                .or_insert_with(|| Moments {
                    m: vec![0.0; grad.len()],
                    v: vec![0.0; grad.len()],
                });
            if entry.m.len() != grad.len() {
                return Err(Error::shape(
                    "adamw_step",
                    format!("state/grad length mismatch at `{path}`"),
                ));
            }
            for (i, value) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                entry.m[i] = c.beta1 * entry.m[i] + (1.0 - c.beta1) * g;
                entry.v[i] = c.beta2 * entry.v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = entry.m[i] / bias1;
                let v_hat = entry.v[i] / bias2;
                let theta = value.to_f64();
                let update = m_hat / (v_hat.sqrt() + c.epsilon) + c.weight_decay * theta;
                *value = T::from_f64(theta - lr * update);
            }
        }
        Ok(())
    }
}

/// Learning-rate schedule over a fixed step horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant {
        peak_lr: f64,
    },
    /// Linear ramp from zero over `round(warmup_ratio * total_steps)` steps,
    /// then half-cosine decay from peak to zero at `total_steps`.
    CosineWarmup {
        peak_lr: f64,
        warmup_ratio: f64,
        total_steps: u64,
    },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::Constant { peak_lr } => {
                if peak_lr <= 0.0 {
                    return Err(Error::Domain("peak_lr must be positive".to_string()));
                }
            }
            LrSchedule::CosineWarmup {
                peak_lr,
                warmup_ratio,
                ..
            } => {
                if peak_lr <= 0.0 {
                    return Err(Error::Domain("peak_lr must be positive".to_string()));
                }
                if !(0.0..1.0).contains(&warmup_ratio) {
                    return Err(Error::Domain(format!(
                        "warmup_ratio {warmup_ratio} outside [0, 1)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Learning rate at `step`; `step` must lie in `0..=total_steps` for the
    /// cosine schedule.
    pub fn lr_at(&self, step: u64) -> Result<f64> {
        self.validate()?;
        match *self {
            LrSchedule::Constant { peak_lr } => Ok(peak_lr),
            LrSchedule::CosineWarmup {
                peak_lr,
                warmup_ratio,
                total_steps,
            } => {
                if step > total_steps {
                    return Err(Error::Domain(format!(
                        "step {step} beyond total_steps {total_steps}"
                    )));
                }
                let warmup = (warmup_ratio * total_steps as f64).round() as u64;
                if warmup > 0 && step < warmup {
                    return Ok(peak_lr * step as f64 / warmup as f64);
                }
                if total_steps == warmup {
                    return Ok(peak_lr);
                }
                let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
                Ok(peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::ParamStore;
    use crate::tensor::Tensor;

    fn store_with(path: &str, data: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new(1);
        s.insert_shared(
            path,
            Tensor::new(vec![data.len()], data)
                .unwrap()
                .with_requires_grad(true),
        );
        s
    }

    #[test]
    fn zero_grad_zero_decay_is_fixed_point() {
        let mut store = store_with("shared/w", vec![1.5, -2.0]);
        store
            .shared_mut("shared/w")
            .unwrap()
            .accumulate_grad(&[0.0, 0.0])
            .unwrap();
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        })
        .unwrap();
        opt.step(&mut store, 0.1).unwrap();
        assert_eq!(store.shared("shared/w").unwrap().data(), &[1.5, -2.0]);
    }

    #[test]
    fn decoupled_decay_hand_value() {
        // grad = 0, wd = 0.01, lr = 0.1, theta = 1.0  ->  theta' = 0.999
        let mut store = store_with("shared/w", vec![1.0]);
        store
            .shared_mut("shared/w")
            .unwrap()
            .accumulate_grad(&[0.0])
            .unwrap();
        let mut opt = AdamW::new(AdamWConfig::default()).unwrap();
        opt.step(&mut store, 0.1).unwrap();
        let got = store.shared("shared/w").unwrap().data()[0];
        assert!((got - 0.999).abs() < 1e-15, "got {got}");
    }

    #[test]
    fn quadratic_converges() {
        // minimize theta^2 from theta = 5 at lr 0.1 for 500 steps
        let mut store = store_with("shared/w", vec![5.0]);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        })
        .unwrap();
        for _ in 0..500 {
            let theta = store.shared("shared/w").unwrap().data()[0];
            store
                .shared_mut("shared/w")
                .unwrap()
                .accumulate_grad(&[2.0 * theta])
                .unwrap();
            opt.step(&mut store, 0.1).unwrap();
            store.shared_mut("shared/w").unwrap().zero_grad();
        }
        let theta = store.shared("shared/w").unwrap().data()[0];
        assert!(theta.abs() < 1e-2, "theta = {theta}");
    }

    #[test]
    fn update_is_parameter_independent_when_decay_is_zero() {
        // Same (g, m, v, t): the step taken must not depend on theta.
        let run = |theta0: f64| -> f64 {
            let mut store = store_with("shared/w", vec![theta0]);
            let mut opt = AdamW::new(AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::default()
            })
            .unwrap();
            store
                .shared_mut("shared/w")
                .unwrap()
                .accumulate_grad(&[0.37])
                .unwrap();
            opt.step(&mut store, 0.05).unwrap();
            store.shared("shared/w").unwrap().data()[0] - theta0
        };
        let d1 = run(10.0);
        let d2 = run(-3.0);
        assert!((d1 - d2).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_path() {
        let mut store = store_with("shared/bad", vec![1.0]);
        store
            .shared_mut("shared/bad")
            .unwrap()
            .accumulate_grad(&[f64::NAN])
            .unwrap();
        let mut opt = AdamW::new(AdamWConfig::default()).unwrap();
        let err = opt.step(&mut store, 0.1).unwrap_err();
        assert!(err.to_string().contains("shared/bad"), "{err}");
    }

    #[test]
    fn constant_schedule() {
        let s = LrSchedule::Constant { peak_lr: 1e-4 };
        for step in [0u64, 1, 57, 10_000] {
            assert_eq!(s.lr_at(step).unwrap(), 1e-4);
        }
    }

    #[test]
    fn cosine_ramp_completes_at_warmup() {
        let s = LrSchedule::CosineWarmup {
            peak_lr: 3e-4,
            warmup_ratio: 0.03,
            total_steps: 1000,
        };
        assert!((s.lr_at(30).unwrap() - 3e-4).abs() < 1e-18);
        assert_eq!(s.lr_at(1000).unwrap(), 0.0);
        assert!(s.lr_at(1001).is_err());
    }

    #[test]
    fn cosine_is_continuous_at_warmup_boundary() {
        let s = LrSchedule::CosineWarmup {
            peak_lr: 3e-4,
            warmup_ratio: 0.1,
            total_steps: 200,
        };
        let before = s.lr_at(19).unwrap();
        let at = s.lr_at(20).unwrap();
        let after = s.lr_at(21).unwrap();
        let ramp_slope = 3e-4 / 20.0;
        assert!((at - 3e-4).abs() < 1e-18);
        assert!((at - before) <= ramp_slope + 1e-12);
        assert!(at - after < ramp_slope + 1e-12);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cosine_stays_in_range_and_decays_after_warmup(
                peak in 1e-6f64..1.0,
                ratio in 0.0f64..0.5,
                total in 10u64..500,
            ) {
                let s = LrSchedule::CosineWarmup {
                    peak_lr: peak,
                    warmup_ratio: ratio,
                    total_steps: total,
                };
                let warmup = (ratio * total as f64).round() as u64;
                let mut prev = None;
                for step in 0..=total {
                    let lr = s.lr_at(step).unwrap();
                    prop_assert!((0.0..=peak * (1.0 + 1e-12)).contains(&lr));
                    if step >= warmup {
                        if let Some(p) = prev {
                            prop_assert!(lr <= p + 1e-15, "rose at {step}: {p} -> {lr}");
                        }
                        prev = Some(lr);
                    }
                }
                prop_assert!(s.lr_at(total).unwrap() < 1e-12);
            }
        }
    }
}
