use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One AdamW update at step `step` (1-based) with learning rate `lr`.
/// Weight decay is decoupled: it scales the parameter, not the gradient,
/// and is skipped when `decay` is false.
pub fn adamw_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    step: u64,
    lr: f64,
    cfg: &AdamWConfig,
    decay: bool,
) -> Result<()> {
    if param.len() != grad.len() || state.m.len() != param.len() {
        return Err(Error::dim(
            "adamw_step",
            format!("param {} / grad {} / state {}", param.len(), grad.len(), state.m.len()),
        ));
    }
    if step == 0 {
        return Err(Error::Config("optimizer steps are 1-based".into()));
    }
    if let Some((i, g)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NumericInstability(format!(
            "non-finite gradient {g} at entry {i} of {} on step {step}",
            grad.len()
        )));
    }
    let wd = if decay { cfg.weight_decay } else { 0.0 };
    let bc1 = 1.0 - cfg.beta1.powi(step.min(i32::MAX as u64) as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step.min(i32::MAX as u64) as i32);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + wd * *p);
    }
    Ok(())
}

/// Linear warmup to `base_lr` over the first `ceil(warmup * total)` steps,
/// then linear decay to zero at `total`.
pub fn lr_schedule(step: usize, total: usize, base_lr: f64, warmup: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if step == 0 || step > total {
        return Err(Error::Config(format!("step {step} outside 1..={total}")));
    }
    let warm = (warmup * total as f64).ceil() as usize;
    if step <= warm {
        return Ok(base_lr * step as f64 / warm as f64);
    }
    Ok(base_lr * (total - step) as f64 / (total - warm) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // m = 0.05, v = 0.00025; m_hat = 0.5, v_hat = 0.25; update = 0.5 / (0.5 + 1e-8)
        let mut p = [1.0];
        let mut s = AdamState::new(1);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adamw_step(&mut p, &[0.5], &mut s, 1, 0.1, &cfg, true).unwrap();
        let expected = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8));
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = [1.5, -2.0, 0.25];
        let before = p;
        let mut s = AdamState::new(3);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for t in 1..=5 {
            adamw_step(&mut p, &[0.0; 3], &mut s, t, 0.1, &cfg, true).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn decay_shrinks_geometrically() {
        let mut p = [2.0];
        let mut s = AdamState::new(1);
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut expected = 2.0;
        for t in 1..=4 {
            adamw_step(&mut p, &[0.0], &mut s, t, 0.5, &cfg, true).unwrap();
            expected *= 1.0 - 0.5 * 0.1;
            assert!((p[0] - expected).abs() < 1e-15);
        }
        let mut q = [2.0];
        adamw_step(&mut q, &[0.0], &mut AdamState::new(1), 1, 0.5, &cfg, false).unwrap();
        assert_eq!(q[0], 2.0);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = [1.0, 1.0];
        let err = adamw_step(&mut p, &[0.0, f64::NAN], &mut AdamState::new(2), 1, 0.1, &AdamWConfig::default(), true)
            .unwrap_err();
        assert!(matches!(err, Error::NumericInstability(ref m) if m.contains("entry 1")));
        assert_eq!(p, [1.0, 1.0]);
    }

    #[test]
    fn schedule_shape() {
        let total = 100;
        // ceil(0.1 * 100) = 10 warmup steps
        assert_eq!(lr_schedule(10, total, 2e-3, 0.1).unwrap(), 2e-3);
        assert!((lr_schedule(5, total, 2e-3, 0.1).unwrap() - 1e-3).abs() < 1e-18);
        assert_eq!(lr_schedule(total, total, 2e-3, 0.1).unwrap(), 0.0);
        assert!((lr_schedule(55, total, 2e-3, 0.1).unwrap() - 1e-3).abs() < 1e-12);
        assert!(lr_schedule(0, total, 1.0, 0.1).is_err());
        assert!(lr_schedule(1, 0, 1.0, 0.1).is_err());
        // no warmup: pure decay
        assert_eq!(lr_schedule(1, 4, 1.0, 0.0).unwrap(), 0.75);
        // non-round boundary: ceil(0.1 * 37) = 4
        assert_eq!(lr_schedule(4, 37, 1.0, 0.1).unwrap(), 1.0);
        assert!(lr_schedule(5, 37, 1.0, 0.1).unwrap() < 1.0);
    }
}
