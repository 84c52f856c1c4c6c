//! Central finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{shape_err, Result};

/// Finite-difference step used in 64-bit mode.
pub const FD_STEP: f64 = 1e-4;

/// Denominator floor so that near-zero gradient pairs are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn scalar_of(g: &Graph<'_, f64>, v: Var) -> Result<f64> {
    match g.value(v).data() {
        [s] => Ok(*s),
        _ => Err(shape_err!("grad check function must return a scalar")),
    }
}

/// Max relative error between the reverse-mode gradient of `f` at `x` and
/// central differences.
pub fn grad_check<F>(f: F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
{
    grad_check_with(&ParamStore::new(), f, x)
}

/// As [`grad_check`], with parameters available to `f` (held fixed).
pub fn grad_check_with<F>(store: &ParamStore<f64>, f: F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
{
    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new(store);
        let v = g.input(t, false);
        let out = f(&mut g, v)?;
        scalar_of(&g, out)
    };
    let mut g = Graph::new(store);
    let xv = g.input(x.clone(), true);
    let out = f(&mut g, xv)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .input(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= FD_STEP;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
}

/// Check `coords_per_param` randomly chosen coordinates of every parameter
/// (all of them when the tensor is smaller).
pub fn grad_check_params<F>(
    store: &ParamStore<f64>,
    f: F,
    coords_per_param: usize,
    seed: u64,
) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let out = f(&mut g)?;
    let grads = g.backward(out)?;
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let mut report = Vec::with_capacity(store.len());
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let analytic = grads.param(id, store);
        let n = store.get(id).len();
        let coords: Vec<usize> = if n <= coords_per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, coords_per_param).into_vec()
        };
        let mut worst: f64 = 0.0;
        for &c in &coords {
            let orig = work.get(id).data()[c];
            let mut eval_at = |v: f64| -> Result<f64> {
                work.get_mut(id).data_mut()[c] = v;
                let mut g = Graph::new(&work);
                let out = f(&mut g)?;
                scalar_of(&g, out)
            };
            let up = eval_at(orig + FD_STEP)?;
            let down = eval_at(orig - FD_STEP)?;
            work.get_mut(id).data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[c], numeric));
        }
        report.push(ParamCheck {
            name: store.name(id).to_string(),
            coords_checked: coords.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}
