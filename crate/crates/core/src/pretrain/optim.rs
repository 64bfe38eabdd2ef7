use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{is_decay_exempt, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Decay {
    Polynomial { power: f64 },
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub peak_lr: f64,
    #[serde(default)]
    pub end_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub decay: Decay,
}

impl OptimizerConfig {
    /// Pre-training regime of the full-size model: peak 1e-6 after a
    /// 1000-step ramp, β = (0.9, 0.98), weight decay 0.1, about 16k steps.
    pub fn pretrain_base() -> Self {
        Self {
            peak_lr: 1e-6,
            end_lr: 0.0,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.1,
            warmup_steps: 1000,
            total_steps: 16_000,
            decay: Decay::Polynomial { power: 1.0 },
        }
    }

    /// Linear warm-up and decay used for fine-tuning.
    pub fn linear(peak_lr: f64, warmup_steps: u64, total_steps: u64, eps: f64) -> Self {
        Self {
            peak_lr,
            end_lr: 0.0,
            beta1: 0.9,
            beta2: 0.98,
            eps,
            weight_decay: 0.1,
            warmup_steps,
            total_steps,
            decay: Decay::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0) || self.end_lr < 0.0 || self.end_lr > self.peak_lr {
            return Err(Error::Config(format!(
                "need 0 <= end_lr <= peak_lr and peak_lr > 0, got {} / {}",
                self.end_lr, self.peak_lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} not in [0, 1)")));
            }
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("eps must be positive and weight_decay non-negative".into()));
        }
        if let Decay::Polynomial { power } = self.decay {
            if !(power > 0.0) {
                return Err(Error::Config(format!("decay power {power} must be positive")));
            }
        }
        Ok(())
    }
}

/// Linear ramp from 0 to the peak over `warmup_steps`, then decay to
/// `end_lr` at `total_steps`, constant afterwards.
pub fn lr_at(step: u64, c: &OptimizerConfig) -> f64 {
    if step < c.warmup_steps {
        return c.peak_lr * step as f64 / c.warmup_steps as f64;
    }
    if step >= c.total_steps {
        // Without a decay phase the rate stays at its peak.
        return if c.total_steps == c.warmup_steps { c.peak_lr } else { c.end_lr };
    }
    let remaining = 1.0 - (step - c.warmup_steps) as f64 / (c.total_steps - c.warmup_steps) as f64;
    let power = match c.decay {
        Decay::Polynomial { power } => power,
        Decay::Linear => 1.0,
    };
    c.end_lr + (c.peak_lr - c.end_lr) * remaining.powf(power)
}

/// Adam moments for every parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
    /// Optimizer steps taken so far.
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f32>> = params.tensors().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }
}

/// One Adam update with bias correction and decoupled weight decay.
///
/// The step counter is advanced first and the learning rate is taken at the
/// new count, so the very first update already uses a non-zero rate. Decay
/// multiplies every non-exempt parameter by `1 - lr·weight_decay` before the
/// Adam increment is subtracted. Returns the learning rate used.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut OptimizerState,
    config: &OptimizerConfig,
) -> Result<f64> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} gradients / {} moment sets for {} parameters",
            grads.len(),
            state.first.len(),
            params.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!("gradient of {name} has shape {:?}", g.shape())));
        }
        if !g.all_finite() {
            return Err(Error::Training(format!("non-finite gradient for {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = lr_at(state.step, config);
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = (1.0 - lr * config.weight_decay) as f32;
    for (i, (name, p)) in params.iter_mut().enumerate() {
        let exempt = is_decay_exempt(name);
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for ((w, &g), (mi, vi)) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m.iter_mut().zip(v.iter_mut())) {
            let g64 = g as f64;
            let m_new = b1 * *mi as f64 + (1.0 - b1) * g64;
            let v_new = b2 * *vi as f64 + (1.0 - b2) * g64 * g64;
            *mi = m_new as f32;
            *vi = v_new as f32;
            if !exempt {
                *w *= decay;
            }
            let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + config.eps);
            *w -= update as f32;
        }
    }
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OptimizerConfig {
        OptimizerConfig {
            peak_lr: 0.1,
            end_lr: 0.0,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_steps: 10,
            total_steps: 110,
            decay: Decay::Linear,
        }
    }

    fn scalar_store(v: f32) -> ParamStore {
        let mut s = ParamStore::default();
        s.insert("w.weight", Tensor::new(vec![1], vec![v]).unwrap());
        s
    }

    #[test]
    fn schedule_boundaries() {
        let c = cfg();
        assert_eq!(lr_at(0, &c), 0.0);
        assert!((lr_at(5, &c) - 0.05).abs() < 1e-15);
        assert_eq!(lr_at(10, &c), 0.1);
        assert!((lr_at(60, &c) - 0.05).abs() < 1e-15);
        assert_eq!(lr_at(110, &c), 0.0);
        assert_eq!(lr_at(500, &c), 0.0);
        let mut q = c.clone();
        q.decay = Decay::Polynomial { power: 2.0 };
        assert!((lr_at(60, &q) - 0.025).abs() < 1e-15);
    }

    #[test]
    fn base_preset() {
        let c = OptimizerConfig::pretrain_base();
        c.validate().unwrap();
        assert_eq!(c.peak_lr, 1e-6);
        assert_eq!(c.warmup_steps, 1000);
        assert_eq!((c.beta1, c.beta2), (0.9, 0.98));
        assert_eq!(c.weight_decay, 0.1);
        assert_eq!(lr_at(1000, &c), 1e-6);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = scalar_store(0.7);
        let mut st = OptimizerState::new(&s);
        let g = vec![Tensor::zeros(&[1])];
        for _ in 0..5 {
            adam_step(&mut s, &g, &mut st, &cfg()).unwrap();
        }
        assert_eq!(s.get("w.weight").unwrap().data(), [0.7]);
    }

    #[test]
    fn two_steps_match_hand_arithmetic() {
        let c = OptimizerConfig {
            weight_decay: 0.01,
            ..cfg()
        };
        let mut s = scalar_store(1.0);
        let mut st = OptimizerState::new(&s);
        let (g1, g2) = (0.5f64, -0.25f64);
        adam_step(&mut s, &[Tensor::new(vec![1], vec![g1 as f32]).unwrap()], &mut st, &c).unwrap();
        adam_step(&mut s, &[Tensor::new(vec![1], vec![g2 as f32]).unwrap()], &mut st, &c).unwrap();

        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, g) in [(1, g1), (2, g2)] {
            let lr = 0.1 * t as f64 / 10.0;
            m = 0.9 * m + 0.1 * g;
            v = 0.98 * v + 0.02 * g * g;
            let mhat = m / (1.0 - 0.9f64.powi(t));
            let vhat = v / (1.0 - 0.98f64.powi(t));
            w *= 1.0 - lr * 0.01;
            w -= lr * mhat / (vhat.sqrt() + 1e-8);
        }
        let got = s.get("w.weight").unwrap().data()[0] as f64;
        assert!((got - w).abs() < 1e-7, "{got} vs {w}");
    }

    #[test]
    fn constant_gradient_moves_by_lr_per_step() {
        let c = OptimizerConfig {
            warmup_steps: 0,
            total_steps: 0,
            ..cfg()
        };
        let mut s = scalar_store(0.0);
        let mut st = OptimizerState::new(&s);
        let g = vec![Tensor::new(vec![1], vec![3.0]).unwrap()];
        let mut last = 0.0;
        for _ in 0..200 {
            adam_step(&mut s, &g, &mut st, &c).unwrap();
            let w = s.get("w.weight").unwrap().data()[0];
            assert!(((last - w) as f64 - 0.1).abs() < 1e-5);
            last = w;
        }
    }

    #[test]
    fn exempt_parameters_ignore_weight_decay() {
        let mut on = ParamStore::default();
        on.insert("layer.bias", Tensor::new(vec![2], vec![0.3, -0.4]).unwrap());
        on.insert("layer.norm.gain", Tensor::new(vec![2], vec![1.1, 0.9]).unwrap());
        let mut off = on.clone();
        let grads = vec![Tensor::zeros(&[2]), Tensor::zeros(&[2])];
        let decayed = OptimizerConfig {
            weight_decay: 0.1,
            ..cfg()
        };
        let (mut s1, mut s2) = (OptimizerState::new(&on), OptimizerState::new(&off));
        for _ in 0..20 {
            adam_step(&mut on, &grads, &mut s1, &decayed).unwrap();
            adam_step(&mut off, &grads, &mut s2, &cfg()).unwrap();
        }
        for ((_, a), (_, b)) in on.iter().zip(off.iter()) {
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = scalar_store(1.0);
        let mut st = OptimizerState::new(&s);
        let mut g = vec![Tensor::zeros(&[1])];
        g[0].data_mut()[0] = f32::INFINITY;
        let err = adam_step(&mut s, &g, &mut st, &cfg()).unwrap_err();
        assert!(matches!(err, Error::Training(_)));
        assert_eq!(st.step, 0);
    }
}
