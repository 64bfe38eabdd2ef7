//! Central-difference verification of analytic gradients.
//!
//! Both sides are evaluated by the same generic graph code in a chosen
//! precision. The analytic side defaults to `f32`, the precision the engine
//! trains in; the finite-difference side defaults to `f64`, which keeps the
//! rounding noise of `(f(x+h) - f(x-h)) / 2h` far below the step-size error.
//! Elementwise relative error on near-zero gradient entries is dominated by
//! `f32` rounding (~1e-8 absolute), so formula-level checks run the analytic
//! side in `f64` as well.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Element, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// A scalar-valued function the checker can evaluate in any precision.
pub trait ScalarFn {
    fn eval<E: Element>(&self, g: &mut Graph<E>, inputs: &[Var]) -> Result<Var>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords_per_input: Option<usize>,
    pub analytic_precision: Precision,
    pub numeric_precision: Precision,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_coords_per_input: None,
            analytic_precision: Precision::F32,
            numeric_precision: Precision::F64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
    pub coords_checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks every coordinate of a single input with step `h`.
pub fn grad_check<F: ScalarFn>(f: &F, x: &Tensor, h: f64) -> Result<GradCheckReport> {
    let opts = GradCheckOptions {
        step: h,
        ..Default::default()
    };
    grad_check_with(f, std::slice::from_ref(x), &opts)
}

pub fn grad_check_with<F: ScalarFn>(
    f: &F,
    inputs: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    fn flatten<E: Element>(ts: Vec<Tensor<E>>) -> Vec<Vec<f64>> {
        ts.iter()
            .map(|t| t.data().iter().map(|v| v.as_f64()).collect())
            .collect()
    }
    let analytic = match opts.analytic_precision {
        Precision::F32 => flatten(analytic_gradients::<f32, F>(f, inputs)?),
        Precision::F64 => flatten(analytic_gradients::<f64, F>(f, inputs)?),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    for (input, x) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(k) if k < x.numel() => index::sample(&mut rng, x.numel(), k).into_vec(),
            _ => (0..x.numel()).collect(),
        };
        for coord in coords {
            let numeric = match opts.numeric_precision {
                Precision::F64 => central_difference::<f64, F>(f, inputs, input, coord, opts.step)?,
                Precision::F32 => central_difference::<f32, F>(f, inputs, input, coord, opts.step)?,
            };
            let a = analytic[input][coord];
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(Mismatch {
                    input,
                    coord,
                    analytic: a,
                    numeric,
                    rel_error: err,
                });
            }
        }
    }
    Ok(report)
}

/// Gradients of `f` at `inputs` from the reverse-mode engine.
pub fn analytic_gradients<E: Element, F: ScalarFn>(f: &F, inputs: &[Tensor]) -> Result<Vec<Tensor<E>>> {
    let mut g = Graph::<E>::new();
    let vars = inputs
        .iter()
        .map(|t| g.param(t.cast()))
        .collect::<Result<Vec<_>>>()?;
    let out = f.eval(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::Contract("grad_check needs a scalar-valued function".into()));
    }
    let grads = g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect())
}

fn eval_at<E: Element, F: ScalarFn>(f: &F, inputs: &[Tensor<E>]) -> Result<f64> {
    let mut g = Graph::<E>::new();
    let vars = inputs
        .iter()
        .map(|t| g.constant(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f.eval(&mut g, &vars)?;
    Ok(g.value(out).item().as_f64())
}

fn central_difference<E: Element, F: ScalarFn>(
    f: &F,
    inputs: &[Tensor],
    input: usize,
    coord: usize,
    h: f64,
) -> Result<f64> {
    let mut xs: Vec<Tensor<E>> = inputs.iter().map(|t| t.cast()).collect();
    let base = xs[input].data()[coord];
    let (up, down) = (base + E::from_f64(h), base - E::from_f64(h));
    xs[input].data_mut()[coord] = up;
    let plus = eval_at(f, &xs)?;
    xs[input].data_mut()[coord] = down;
    let minus = eval_at(f, &xs)?;
    // The representable step, not the requested one, in low precision.
    Ok((plus - minus) / (up.as_f64() - down.as_f64()))
}
