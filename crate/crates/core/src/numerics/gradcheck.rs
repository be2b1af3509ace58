//! Central-difference verification of analytic gradients.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NumericsError, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates sampled per parameter tensor; `None` checks all of them.
    pub coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-5, tol: 1e-4, coords_per_param: Some(8), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Binding of every tensor in a [`ParamStore`] to a leaf of one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn new<F: super::Scalar>(graph: &mut Graph<F>, store: &ParamStore<F>, requires_grad: bool) -> Self {
        let vars = (0..store.len())
            .map(|i| graph.leaf(Arc::clone(store.tensor_arc(i)), requires_grad && !store.is_frozen(i)))
            .collect();
        Bound { vars }
    }

    pub fn get(&self, id: super::ParamId) -> Var {
        self.vars[id.index()]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients per parameter after `graph.backward`; `None` where nothing flowed.
    pub fn grads<F: super::Scalar>(&self, graph: &Graph<F>) -> Vec<Option<Vec<F>>> {
        self.vars.iter().map(|&v| graph.grad(v).map(<[F]>::to_vec)).collect()
    }
}

fn evaluate<L>(store: &ParamStore<f64>, loss_fn: &L) -> Result<f64, NumericsError>
where
    L: Fn(&mut Graph<f64>, &Bound) -> Result<Var, NumericsError>,
{
    let mut graph = Graph::new();
    let bound = Bound::new(&mut graph, store, false);
    let loss = loss_fn(&mut graph, &bound)?;
    let value = graph.value(loss).item();
    if !value.is_finite() {
        return Err(NumericsError::NonFinite(value));
    }
    Ok(value)
}

/// Compares backward-pass gradients of `loss_fn` against
/// `(f(p+eps) - f(p-eps)) / (2 eps)` with error `|a - n| / max(1, |a|)`.
///
/// `loss_fn` must be deterministic (evaluation graphs never apply dropout).
pub fn finite_diff_check<L>(
    store: &mut ParamStore<f64>,
    loss_fn: L,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NumericsError>
where
    L: Fn(&mut Graph<f64>, &Bound) -> Result<Var, NumericsError>,
{
    let mut graph = Graph::new();
    let bound = Bound::new(&mut graph, store, true);
    let loss = loss_fn(&mut graph, &bound)?;
    let base = graph.value(loss).item();
    if !base.is_finite() {
        return Err(NumericsError::NonFinite(base));
    }
    graph.backward(loss)?;
    let grads = bound.grads(&graph);
    drop(graph);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    for p in 0..store.len() {
        if store.is_frozen(p) {
            continue;
        }
        let n = store.tensor(p).numel();
        let coords: Vec<usize> = match opts.coords_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for idx in coords {
            let analytic = grads[p].as_ref().map_or(0.0, |g| g[idx]);
            let orig = store.tensor(p).data()[idx];
            store.tensor_mut(p).data_mut()[idx] = orig + opts.eps;
            let plus = evaluate(store, &loss_fn);
            store.tensor_mut(p).data_mut()[idx] = orig - opts.eps;
            let minus = evaluate(store, &loss_fn);
            store.tensor_mut(p).data_mut()[idx] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.eps);
            let rel_err = (analytic - numeric).abs() / analytic.abs().max(1.0);
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel_err);
            if rel_err > opts.tol {
                report.failures.push(GradMismatch {
                    param: store.name(p).to_string(),
                    index: idx,
                    analytic,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(report)
}

/// Convenience wrapper for checking a function of plain tensors.
pub fn finite_diff_check_tensors<L>(
    inputs: &[Tensor<f64>],
    loss_fn: L,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NumericsError>
where
    L: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut store = ParamStore::new();
    for (i, t) in inputs.iter().enumerate() {
        store.insert(format!("x{i}"), t.clone());
    }
    finite_diff_check(&mut store, |g, b| loss_fn(g, b.vars()), opts)
}
