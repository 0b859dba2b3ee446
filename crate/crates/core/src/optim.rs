//! Adam with a cosine learning-rate schedule over hand parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{HandParams, ParamVec, WRIST_OFFSET};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub iterations: usize,
    pub lr: f64,
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Stop once the lowest total of the last `window` iterations is less
    /// than `min_improvement` below the lowest of the `window` before.
    pub window: usize,
    pub min_improvement: f64,
    /// Metres of wrist travel per unit of optimizer step.
    pub wrist_scale: f64,
    /// Gradients longer than this are rescaled to this length before the
    /// moment updates, so a burst of large gradients does not stall the
    /// steps that follow.
    pub max_grad_norm: Option<f64>,
    /// Halve a step that raises the total energy up to this many times. If
    /// every trial rises the iterate stays put and the gradient at the
    /// shortest trial feeds the moments, which steers the next step along
    /// the barrier that stopped it. Zero takes every step.
    pub backtrack: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            iterations: 1000,
            lr: 1e-2,
            lr_final: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            window: 100,
            min_improvement: 1e-10,
            wrist_scale: 0.1,
            max_grad_norm: None,
            backtrack: 0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.iterations >= 1
            && self.lr > 0.0
            && self.lr_final > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.wrist_scale > 0.0
            && self.max_grad_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("optimizer settings out of range"))
        }
    }

    /// Learning rate at iteration `k`, cosine-decayed from `lr` to `lr_final`.
    pub fn learning_rate(&self, k: usize) -> f64 {
        let progress = if self.iterations > 1 {
            k as f64 / (self.iterations - 1) as f64
        } else {
            0.0
        };
        let c = 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos());
        self.lr_final + (self.lr - self.lr_final) * c
    }
}

/// Result of [`minimize`]: final parameters and one trace record per
/// evaluated iteration.
#[derive(Debug, Clone)]
pub struct Minimized<T> {
    pub params: HandParams,
    pub trace: Vec<T>,
    pub converged: bool,
}

fn evaluate<T>(
    objective: &mut impl FnMut(&HandParams) -> Result<(f64, ParamVec, T)>,
    params: &HandParams,
    k: usize,
) -> Result<(f64, ParamVec, T)> {
    let (total, grad, record) = objective(params)?;
    if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(k));
    }
    Ok((total, grad, record))
}

/// Minimizes `objective`, which returns the total energy, its gradient and a
/// trace record. Parameters are canonicalized after every step.
pub fn minimize<T>(
    init: &HandParams,
    config: &AdamConfig,
    mut objective: impl FnMut(&HandParams) -> Result<(f64, ParamVec, T)>,
) -> Result<Minimized<T>> {
    config.validate()?;
    let mut scale = ParamVec::repeat(1.0);
    for i in 0..3 {
        scale[WRIST_OFFSET + i] = config.wrist_scale;
    }
    let mut params = init.clone().canonicalized();
    let mut m = ParamVec::zeros();
    let mut v = ParamVec::zeros();
    let mut trace = Vec::with_capacity(config.iterations);
    let mut totals: Vec<f64> = Vec::with_capacity(config.iterations);
    let mut converged = false;
    let mut current = evaluate(&mut objective, &params, 0)?;

    for k in 0..config.iterations {
        let (total, grad, record) = current;
        trace.push(record);
        totals.push(total);
        if config.window > 0 && totals.len() >= 2 * config.window {
            let (earlier, recent) = totals[totals.len() - 2 * config.window..].split_at(config.window);
            let lowest = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);
            if lowest(earlier) - lowest(recent) < config.min_improvement {
                converged = true;
                break;
            }
        }
        if k + 1 == config.iterations {
            break;
        }

        let mut g = grad.component_mul(&scale);
        if let Some(c) = config.max_grad_norm {
            let n = g.norm();
            if n > c {
                g *= c / n;
            }
        }
        m = m * config.beta1 + g * (1.0 - config.beta1);
        v = v * config.beta2 + g.component_mul(&g) * (1.0 - config.beta2);
        let t = (k + 1) as i32;
        let m_hat = m / (1.0 - config.beta1.powi(t));
        let v_hat = v / (1.0 - config.beta2.powi(t));
        let lr = config.learning_rate(k);
        let step = m_hat.zip_map(&v_hat, |a, b| a / (b.sqrt() + config.eps));
        let x = params.to_vector();
        let mut factor = 1.0;
        current = loop {
            let trial = HandParams::from_vector(&(x - (step * (lr * factor)).component_mul(&scale))).canonicalized();
            let next = evaluate(&mut objective, &trial, k + 1)?;
            if config.backtrack == 0 || next.0 <= total {
                params = trial;
                break next;
            }
            if factor < 0.5f64.powi(config.backtrack as i32 - 1) {
                let (total, _, record) = evaluate(&mut objective, &params, k + 1)?;
                break (total, next.1, record);
            }
            factor *= 0.5;
        };
    }
    Ok(Minimized {
        params,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::BETA_OFFSET;
    use crate::mesh::Vec3;

    #[test]
    fn schedule_endpoints() {
        let c = AdamConfig::default();
        assert!((c.learning_rate(0) - 1e-2).abs() < 1e-15);
        assert!((c.learning_rate(999) - 1e-3).abs() < 1e-15);
        assert!(c.learning_rate(500) < 1e-2 && c.learning_rate(500) > 1e-3);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = HandParams {
            wrist: Vec3::new(0.05, -0.02, 0.01),
            beta: (0..10).map(|i| 0.1 * i as f64 - 0.4).collect(),
            ..HandParams::default()
        }
        .to_vector();
        let res = minimize(&HandParams::default(), &AdamConfig::default(), |p| {
            let d = p.to_vector() - target;
            Ok((d.norm_squared(), d * 2.0, d.norm_squared()))
        })
        .unwrap();
        let err = (res.params.to_vector() - target).amax();
        assert!(err < 5e-3, "error {err}");
        assert!(res.trace.last().unwrap() < &res.trace[0]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let init = HandParams {
            wrist: Vec3::new(0.1, 0.2, 0.3),
            ..HandParams::default()
        };
        let res = minimize(&init, &AdamConfig::default(), |_| Ok((0.0, ParamVec::zeros(), ()))).unwrap();
        assert_eq!(res.params, init);
        assert!(res.converged);
        assert_eq!(res.trace.len(), 2 * AdamConfig::default().window);
    }

    #[test]
    fn backtracking_never_raises_the_total() {
        // A narrow valley in the wrist where plain Adam overshoots.
        let energy = |p: &HandParams| {
            let w = p.wrist;
            let e = w.x * w.x + 1e4 * (w.y - 0.1 * w.x * w.x).powi(2);
            let gy = 2e4 * (w.y - 0.1 * w.x * w.x);
            (e, ParamVec::from_fn(|i, _| match i {
                i if i == WRIST_OFFSET => 2.0 * w.x - 0.2 * w.x * gy,
                i if i == WRIST_OFFSET + 1 => gy,
                _ => 0.0,
            }))
        };
        let init = HandParams {
            wrist: Vec3::new(0.3, 0.0, 0.0),
            ..HandParams::default()
        };
        let config = AdamConfig {
            lr: 0.2,
            backtrack: 2,
            window: 0,
            ..AdamConfig::default()
        };
        let res = minimize(&init, &config, |p| {
            let (e, g) = energy(p);
            Ok((e, g, e))
        })
        .unwrap();
        assert!(res.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.trace.last().unwrap() < &(0.1 * res.trace[0]));

        let plain = minimize(&init, &AdamConfig { backtrack: 0, ..config }, |p| {
            let (e, g) = energy(p);
            Ok((e, g, e))
        })
        .unwrap();
        assert!(plain.trace.windows(2).any(|w| w[1] > w[0]));
    }

    #[test]
    fn non_finite_energy_is_reported() {
        let err = minimize(&HandParams::default(), &AdamConfig::default(), |_| {
            let mut g = ParamVec::zeros();
            g[BETA_OFFSET] = f64::NAN;
            Ok((1.0, g, ()))
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(0)));
    }
}
