//! Central-difference validation of backprop gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamSet;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct FdOptions {
    pub h: f64,
    pub tol: f64,
    /// Probe at most this many entries per parameter (chosen at random).
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-5,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FdReport {
    /// `(parameter name, max relative error over probed entries)`.
    pub per_param: Vec<(String, f64)>,
    pub tol: f64,
}

impl FdReport {
    pub fn max_error(&self) -> f64 {
        self.per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.tol
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Relative error with denominator `max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_loss<F>(params: &ParamSet, build: &F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &'t ParamSet) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let loss = build(&tape, params)?;
    let v = loss.item();
    Ok(v)
}

/// Compares backprop gradients of the scalar built by `build` against
/// `(f(p + h) − f(p − h)) / 2h`, entry by entry.
pub fn finite_diff_check<F>(params: &mut ParamSet, opts: &FdOptions, build: F) -> Result<FdReport>
where
    F: for<'t> Fn(&'t Tape, &'t ParamSet) -> Result<Var<'t>>,
{
    assert!(opts.h > 0.0, "finite difference step must be positive");
    let analytic = {
        let tape = Tape::new();
        let loss = build(&tape, params)?;
        if !loss.item().is_finite() {
            return Err(Error::NonFinite {
                param: "<none>".into(),
                probe: "base point".into(),
            });
        }
        loss.backward()?;
        tape.param_grads(params)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let ids: Vec<_> = params.ids().collect();
    let mut per_param = Vec::with_capacity(ids.len());
    for (id, grad) in ids.into_iter().zip(analytic) {
        let n = params.get(id).len();
        let entries: Vec<usize> = match opts.max_entries {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for e in entries {
            let orig = params.get(id).data()[e];
            let mut probe = |x: f64, label: &str| -> Result<f64> {
                params.get_mut(id).data_mut()[e] = x;
                let f = eval_loss(params, &build);
                params.get_mut(id).data_mut()[e] = orig;
                let f = f?;
                if !f.is_finite() {
                    return Err(Error::NonFinite {
                        param: params.name(id).to_string(),
                        probe: format!("entry {e}, {label}"),
                    });
                }
                Ok(f)
            };
            let plus = probe(orig + opts.h, "+h")?;
            let minus = probe(orig - opts.h, "-h")?;
            let numeric = (plus - minus) / (2.0 * opts.h);
            worst = worst.max(relative_error(grad.data()[e], numeric));
        }
        per_param.push((params.name(id).to_string(), worst));
    }
    Ok(FdReport {
        per_param,
        tol: opts.tol,
    })
}
