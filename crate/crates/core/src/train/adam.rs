//! Bias-corrected Adam.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::nn::Param;
use crate::{Error, Real, Result};

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
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps.is_finite()
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "adam: need lr > 0, betas in [0, 1), eps > 0",
            ))
        }
    }
}

/// Step count and per-parameter moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &[Param<T>], config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Ok(Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }
}

/// One Adam update of every trainable parameter.
///
/// A non-finite gradient aborts before anything is modified, naming the
/// offending parameter group.
pub fn adam_step<T: Real>(
    params: &mut [Param<T>],
    grads: &[Vec<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(
            "adam parameter groups",
            params.len(),
            grads.len(),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(Error::dim("adam gradient length", p.len(), g.len()));
        }
        if p.trainable && g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.to_string()));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
    let step_size = T::of(c.lr / bc1);
    let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
    let eps = T::of(c.eps);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        if !p.trainable {
            continue;
        }
        for (((w, &g), m), v) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *w -= step_size * *m / ((*v).sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;

    fn scalar(w: f64) -> Vec<Param<f64>> {
        vec![Param {
            name: String::from("w"),
            shape: vec![1],
            data: vec![w],
            trainable: true,
        }]
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = scalar(1.5);
        let mut s = OptimizerState::new(&p, AdamConfig::default()).unwrap();
        adam_step(&mut p, &[vec![0.0]], &mut s).unwrap();
        assert_eq!(p[0].data[0], 1.5);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut s = OptimizerState::new(&p, AdamConfig::default()).unwrap();
        adam_step(&mut p, &[vec![1.0]], &mut s).unwrap();
        assert!((p[0].data[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = scalar(0.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut s = OptimizerState::new(&p, cfg).unwrap();
        for _ in 0..100 {
            let g = 2.0 * (p[0].data[0] - 3.0);
            adam_step(&mut p, &[vec![g]], &mut s).unwrap();
        }
        assert!((p[0].data[0] - 3.0).abs() < 0.5, "{}", p[0].data[0]);
    }

    #[test]
    fn nan_gradient_names_group() {
        let mut p = scalar(2.0);
        let mut s = OptimizerState::new(&p, AdamConfig::default()).unwrap();
        let e = adam_step(&mut p, &[vec![f64::NAN]], &mut s).unwrap_err();
        assert_eq!(e, Error::NonFiniteGradient(String::from("w")));
        assert_eq!(p[0].data[0], 2.0);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn non_trainable_untouched() {
        let mut p = scalar(2.0);
        p[0].trainable = false;
        let mut s = OptimizerState::new(&p, AdamConfig::default()).unwrap();
        adam_step(&mut p, &[vec![1.0]], &mut s).unwrap();
        assert_eq!(p[0].data[0], 2.0);
    }
}
