//! Central finite-difference verification of analytic gradients.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Relative error between an analytic and a numeric derivative, with an absolute floor of 1.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    libm::fabs(analytic - numeric) / f64::max(1.0, libm::fabs(analytic))
}

/// Checks the gradient of a scalar function built on a graph.
///
/// `f` receives a fresh graph and a leaf holding `theta` and must return a
/// scalar node. Returns the maximum over coordinates of
/// `|analytic − central difference| / max(1, |analytic|)`.
pub fn grad_check<F>(mut f: F, theta: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.variable(theta.clone());
    let y = f(&mut g, x)?;
    g.backward(y)?;
    let analytic: Vec<f64> = match g.grad(x) {
        Some(gr) => gr.to_vec(),
        None => alloc::vec![0.0; theta.len()],
    };

    let mut eval = |t: Tensor, coord: usize| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(t);
        let v = f(&mut g, x).map_err(|_| Error::Evaluation { coord })?;
        let out = g.value(v).data()[0];
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::Evaluation { coord })
        }
    };

    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus.data_mut()[i] += h;
        let mut minus = theta.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus, i)? - eval(minus, i)?) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

/// Per-parameter outcome of [`grad_check_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: alloc::string::String,
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Finite-difference check of a loss over every trainable tensor in a store.
///
/// `loss` returns the scalar value and its analytic gradients. At most
/// `max_coords` coordinates per tensor are perturbed, spread evenly.
pub fn grad_check_params<F>(mut loss: F, store: &ParamStore, h: f64, max_coords: usize) -> Result<Vec<ParamCheck>>
where
    F: FnMut(&ParamStore) -> Result<(f64, Gradients)>,
{
    let (_, grads) = loss(store)?;
    let mut work = store.clone();
    let mut report = Vec::new();
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.entry(id).trainable).collect();
    for id in ids {
        let n = store.get(id).len();
        let step = n.div_ceil(max_coords.max(1)).max(1);
        let analytic = grads.get(id);
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for i in (0..n).step_by(step) {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let fp = loss(&work).map_err(|_| Error::Evaluation { coord: i })?.0;
            work.get_mut(id).data_mut()[i] = orig - h;
            let fm = loss(&work).map_err(|_| Error::Evaluation { coord: i })?.0;
            work.get_mut(id).data_mut()[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Evaluation { coord: i });
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.map_or(0.0, |g| g[i]);
            worst = worst.max(rel_err(a, numeric));
            checked += 1;
        }
        report.push(ParamCheck {
            name: store.entry(id).name.clone(),
            checked,
            max_rel_err: worst,
        });
    }
    Ok(report)
}
