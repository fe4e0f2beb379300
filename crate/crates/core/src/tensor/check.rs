//! Central-difference gradient checking.

use super::graph::{Graph, NodeId, TensorError};
use super::optim::ParamStore;
use super::Tensor;
use crate::rng::{hash_str, Rng};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step size.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tol: f64,
    /// Elements sampled per parameter (all elements when the parameter is
    /// smaller than this).
    pub samples_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tol: 1e-4,
            samples_per_param: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Names of parameters whose sampled elements exceeded the tolerance.
    pub failures: Vec<String>,
    /// Worst relative error seen per parameter.
    pub per_param: BTreeMap<String, f64>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative error with a scale floor so near-zero gradients are compared
/// absolutely at floor * tol.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-2);
    (analytic - numeric).abs() / denom
}

/// Compares analytic gradients against central differences.
///
/// `build` must reconstruct the same forward computation from the current
/// store contents on every call; it is invoked twice per sampled element
/// with one value nudged by the step size.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut build: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&ParamStore) -> (Graph, NodeId),
{
    assert!(opts.step > 0.0, "step must be positive");
    let (graph, loss) = build(store);
    let grads = graph.backward(loss)?;
    // A parameter referenced through several leaves owns the sum of their
    // gradients.
    let mut analytic: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, grad) in graph.param_grads(&grads) {
        analytic
            .entry(name.to_string())
            .and_modify(|t| t.add_assign(grad))
            .or_insert_with(|| grad.clone());
    }

    let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        failures: Vec::new(),
        per_param: BTreeMap::new(),
        tol: opts.tol,
    };

    for name in names {
        let len = store.get(&name).value.len();
        let indices = sample_indices(len, opts.samples_per_param, opts.seed, &name);
        let mut worst = 0.0f64;
        for idx in indices {
            let original = store.get(&name).value.data()[idx];
            store.get_mut(&name).value.data_mut()[idx] = original + opts.step;
            let (g_plus, l_plus) = build(store);
            let plus = g_plus.value(l_plus).item();
            store.get_mut(&name).value.data_mut()[idx] = original - opts.step;
            let (g_minus, l_minus) = build(store);
            let minus = g_minus.value(l_minus).item();
            store.get_mut(&name).value.data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic
                .get(&name)
                .map(|t| t.data()[idx])
                .unwrap_or(0.0);
            worst = worst.max(rel_err(a, numeric));
        }
        report.per_param.insert(name.clone(), worst);
        report.max_rel_err = report.max_rel_err.max(worst);
        if worst >= opts.tol {
            report.failures.push(name);
        }
    }
    Ok(report)
}

/// Convenience wrapper asserting the check passed; returns the report text
/// when it did not.
pub fn grad_check_report(report: &GradCheckReport) -> String {
    let mut out = format!(
        "max_rel_err={:.3e} tol={:.1e} status={}\n",
        report.max_rel_err,
        report.tol,
        if report.passed() { "pass" } else { "FAIL" }
    );
    for (name, err) in &report.per_param {
        let mark = if *err >= report.tol { " <-- FAIL" } else { "" };
        out.push_str(&format!("  {name}: {err:.3e}{mark}\n"));
    }
    out
}

fn sample_indices(len: usize, want: usize, seed: u64, name: &str) -> Vec<usize> {
    if len <= want {
        return (0..len).collect();
    }
    let mut rng = Rng::derive(seed, &[hash_str(name)]);
    let mut chosen = std::collections::BTreeSet::new();
    while chosen.len() < want {
        chosen.insert(rng.next_below(len as u64) as usize);
    }
    chosen.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn linear_layer_passes_tightly() {
        let mut rng = Rng::from_seed(11);
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_fn(3, 2, |_, _| rng.normal() * 0.5));
        store.insert("b", Tensor::from_fn(1, 2, |_, _| rng.normal() * 0.1));
        let x = Tensor::row_vec(vec![0.3, -0.7, 1.1]);
        let target = Tensor::row_vec(vec![0.2, -0.4]);
        let report = grad_check(
            &mut store,
            |s| {
                let mut g = Graph::new();
                let w = g.param(s, "w");
                let b = g.param(s, "b");
                let xi = g.input(x.clone());
                let h = g.matmul(xi, w);
                let y = g.add_row(h, b);
                let loss = g.mse_mean(y, target.clone());
                (g, loss)
            },
            &GradCheckOptions {
                tol: 1e-6,
                ..GradCheckOptions::default()
            },
        )
        .unwrap();
        assert!(report.passed(), "{}", grad_check_report(&report));
    }

    #[test]
    fn three_layer_composition_matches_finite_differences() {
        let mut rng = Rng::from_seed(17);
        let mut store = ParamStore::new();
        store.insert("w1", Tensor::from_fn(4, 5, |_, _| rng.normal() * 0.4));
        store.insert("w2", Tensor::from_fn(5, 4, |_, _| rng.normal() * 0.4));
        store.insert("w3", Tensor::from_fn(4, 3, |_, _| rng.normal() * 0.4));
        store.insert("b3", Tensor::from_fn(1, 3, |_, _| rng.normal() * 0.1));
        let x = Tensor::row_vec(vec![0.5, -0.2, 0.8, -0.9]);
        let report = grad_check(
            &mut store,
            |s| {
                let mut g = Graph::new();
                let xi = g.input(x.clone());
                let w1 = g.param(s, "w1");
                let w2 = g.param(s, "w2");
                let w3 = g.param(s, "w3");
                let b3 = g.param(s, "b3");
                let h1 = g.matmul(xi, w1);
                let a1 = g.tanh(h1);
                let h2 = g.matmul(a1, w2);
                let a2 = g.sigmoid(h2);
                let h3 = g.matmul(a2, w3);
                let logits = g.add_row(h3, b3);
                let loss = g.cross_entropy_sum(logits, vec![1]);
                (g, loss)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "{}",
            grad_check_report(&report)
        );
    }

    #[test]
    fn corrupted_backward_is_reported_as_failing() {
        // The builder returns a different function once perturbation starts,
        // so the recorded analytic gradient no longer matches the numeric one.
        let mut store = ParamStore::new();
        store.insert("p", Tensor::row_vec(vec![0.4, -0.3]));
        let calls = std::cell::Cell::new(0usize);
        let report = grad_check(
            &mut store,
            |s| {
                let n = calls.get();
                calls.set(n + 1);
                let factor = if n == 0 { 1.0 } else { 2.0 };
                let mut g = Graph::new();
                let p = g.param(s, "p");
                let scaled = g.scale(p, factor);
                let loss = g.mse_mean(scaled, Tensor::row_vec(vec![1.0, 1.0]));
                (g, loss)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures, vec!["p".to_string()]);
    }

    #[test]
    fn every_primitive_op_passes_gradient_check() {
        // One composite graph touching each differentiable primitive.
        let mut rng = Rng::from_seed(23);
        let mut store = ParamStore::new();
        store.insert("table", Tensor::from_fn(6, 4, |_, _| rng.normal() * 0.5));
        store.insert("w", Tensor::from_fn(8, 5, |_, _| rng.normal() * 0.4));
        store.insert("kern", Tensor::from_fn(3 * 4, 4, |_, _| rng.normal() * 0.3));
        store.insert("row", Tensor::from_fn(1, 5, |_, _| rng.normal() * 0.2));
        let report = grad_check(
            &mut store,
            |s| {
                let mut g = Graph::new();
                let table = g.param(s, "table");
                let w = g.param(s, "w");
                let kern = g.param(s, "kern");
                let row = g.param(s, "row");
                let emb = g.gather_rows(table, vec![2, 0, 5, 2]); // 4x4, repeated id
                let conv = g.conv1d_same(emb, kern, 3); // 4x4
                let act = g.tanh(conv);
                let catted = g.concat_cols(&[act, emb]); // 4x8
                let h = g.matmul(catted, w); // 4x5
                let hb = g.add_row(h, row);
                let sm = g.softmax_rows(hb);
                let lsm = g.log_softmax_rows(hb);
                let both = g.mul(sm, lsm);
                let part = g.slice_cols(both, 1, 3); // 4x3
                let part2 = g.slice_rows(part, 0, 3); // 3x3
                let tr = g.transpose(part2);
                let sg = g.sigmoid(tr);
                let sc = g.scale(sg, 0.7);
                let flatish = g.concat_rows(&[sc, part2]); // 6x3
                let loss1 = g.mse_mean(flatish, Tensor::zeros(6, 3));
                let stop = g.slice_cols(hb, 0, 1); // 4x1 logits
                let loss2 = g.bce_with_logits_mean(stop, vec![1.0, 0.0, 0.0, 1.0]);
                let loss3 = g.cross_entropy_sum(hb, vec![0, 2, 4, 1]);
                let l3s = g.scale(loss3, 0.25);
                let partial = g.add(loss1, loss2);
                let loss = g.add(partial, l3s);
                (g, loss)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{}", grad_check_report(&report));
    }
}
