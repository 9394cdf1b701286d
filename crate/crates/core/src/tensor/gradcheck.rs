//! Central finite-difference oracle for tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct CheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Coordinates probed per parameter tensor; `None` probes all of them.
    pub max_coords: Option<usize>,
    /// Seed for coordinate sampling.
    pub seed: u64,
    /// Op whose backward rule is sign-flipped on the analytic tape.
    pub fault: Option<String>,
    /// Use the fourth-order central stencil
    /// `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`.
    pub five_point: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            step: 1e-5,
            tol: 1e-6,
            max_coords: None,
            seed: 0,
            fault: None,
            five_point: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    /// Coordinates skipped because a perturbation changed a ReLU sign,
    /// a max-pool winner or an angle clamp.
    pub kinks_skipped: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error <= self.tol)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |p| p.max_rel_error)
    }

    pub fn kinks_skipped(&self) -> usize {
        self.params.iter().map(|p| p.kinks_skipped).sum()
    }

    pub fn coords_checked(&self) -> usize {
        self.params.iter().map(|p| p.coords_checked).sum()
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`; non-finite inputs count as infinite error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if !analytic.is_finite() || !numeric.is_finite() {
        return f64::INFINITY;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_loss<F>(f: &mut F, store: &ParamStore<f64>) -> Result<(f64, u64)>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let root = f(&mut tape, store)?;
    Ok((tape.value(root).item(), tape.branch_signature()))
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences, parameter tensor by parameter tensor.
///
/// `f` must be deterministic in the parameter values. The store's gradient
/// buffers are overwritten.
pub fn finite_difference_check<F>(
    store: &mut ParamStore<f64>,
    mut f: F,
    opts: &CheckOptions,
) -> Result<CheckReport>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let ids: Vec<_> = store.ids().collect();
    for &id in &ids {
        store.get_mut(id).clear_grad();
    }
    let mut tape = Tape::new();
    if let Some(op) = &opts.fault {
        tape.inject_backward_fault(op);
    }
    let root = f(&mut tape, store)?;
    let base = tape.value(root).item();
    let base_branches = tape.branch_signature();
    if !base.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss at base point ({})",
            tape.first_non_finite().unwrap_or_default()
        )));
    }
    tape.backward(root)?;
    store.accumulate_grads(&tape);
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = opts.step;
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let name = store.name(id).to_string();
        let numel = store.get(id).numel();
        let analytic: Vec<f64> = store
            .get(id)
            .grad()
            .map_or_else(|| vec![0.0; numel], <[f64]>::to_vec);
        let mut coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < numel => sample(&mut rng, numel, k).into_vec(),
            _ => (0..numel).collect(),
        };
        coords.sort_unstable();
        let mut check = ParamCheck {
            name: name.clone(),
            coords_checked: 0,
            kinks_skipped: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in coords {
            let orig = store.get(id).data()[i];
            let offsets: &[(f64, f64)] = if opts.five_point {
                &[(2.0, -1.0 / 12.0), (1.0, 8.0 / 12.0), (-1.0, -8.0 / 12.0), (-2.0, 1.0 / 12.0)]
            } else {
                &[(1.0, 0.5), (-1.0, -0.5)]
            };
            let mut numeric = 0.0;
            let mut smooth = true;
            for &(k, w) in offsets {
                store.get_mut(id).data_mut()[i] = orig + k * h;
                let value = eval_loss(&mut f, store);
                store.get_mut(id).data_mut()[i] = orig;
                let (value, branches) = value?;
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("loss while perturbing {name}[{i}]")));
                }
                smooth &= branches == base_branches;
                numeric += w * value;
            }
            if !smooth {
                check.kinks_skipped += 1;
                continue;
            }
            check.coords_checked += 1;
            let numeric = numeric / h;
            let err = relative_error(analytic[i], numeric);
            if err > check.max_rel_error || (err.is_nan() && !check.max_rel_error.is_nan()) {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = analytic[i];
                check.numeric = numeric;
            }
        }
        params.push(check);
    }
    Ok(CheckReport {
        tol: opts.tol,
        params,
    })
}
