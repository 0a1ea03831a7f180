use crate::bp_engine::{decide, BeliefTable};
use crate::factor_graph::CopInstance;

/// Per-variable `softmax(-b)`, shifted by the largest `-b` before exponentiating.
pub fn assignment_probs(beliefs: &BeliefTable) -> Vec<Vec<f64>> {
    beliefs
        .0
        .iter()
        .map(|b| {
            let top = b.iter().map(|x| -x).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = b.iter().map(|x| (-x - top).exp()).collect();
            let total: f64 = e.iter().sum();
            e.into_iter().map(|x| x / total).collect()
        })
        .collect()
}

/// Expected total cost when every variable is drawn independently from
/// `probs`, summed function by function over table entries.
pub fn smoothed_loss(instance: &CopInstance, probs: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut values = Vec::new();
    for f in instance.functions() {
        values.clear();
        values.resize(f.scope.len(), 0usize);
        for &cost in &f.table {
            let p: f64 = f
                .scope
                .iter()
                .zip(&values)
                .map(|(&v, &k)| probs[v][k])
                .product();
            total += cost * p;
            for pos in (0..values.len()).rev() {
                values[pos] += 1;
                if values[pos] < instance.domain(f.scope[pos]) {
                    break;
                }
                values[pos] = 0;
            }
        }
    }
    total
}

/// `(|smoothed loss - cost of the decided assignment|, Σ_ℓ Δ_ℓ (1 - Π 1/|D_i|))`
/// where `Δ_ℓ` is the spread of function `ℓ`'s table.
pub fn decision_gap(instance: &CopInstance, beliefs: &BeliefTable) -> (f64, f64) {
    let loss = smoothed_loss(instance, &assignment_probs(beliefs));
    let cost = instance.total_cost_unchecked(&decide(beliefs).0);
    let bound = instance
        .functions()
        .iter()
        .map(|f| {
            let uniform: f64 = f
                .scope
                .iter()
                .map(|&v| 1.0 / instance.domain(v) as f64)
                .product();
            f.range() * (1.0 - uniform)
        })
        .sum();
    ((loss - cost).abs(), bound)
}

/// Window positions of the `t_eff` cheapest iterations, earlier first on
/// ties, returned in ascending order. A short window is used whole.
pub fn select_effective(costs: &[f64], t_eff: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]).then(a.cmp(&b)));
    order.truncate(t_eff);
    order.sort_unstable();
    order
}
