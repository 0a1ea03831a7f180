//! Differentiable form of one BP iteration, recorded on a [`Tape`].
//!
//! Messages live in flat columns: entry `offset(e) + τ` holds value `τ` of edge
//! `e`. The index plan is built once per instance and reused every iteration.
//! Forward values match the plain engine in [`super`].

use std::sync::Arc;

use super::{BeliefTable, HyperParams, MessageSet};
use crate::diff::{DiffError, Tape, Tensor, Var};
use crate::factor_graph::{CopInstance, FactorGraph};

/// Precomputed gather/segment indices for one instance.
#[derive(Debug, Clone)]
pub struct TapePlan {
    num_edges: usize,
    num_vars: usize,
    edge_offset: Vec<usize>,
    num_entries: usize,
    /// Owning edge per message entry.
    entry_edge: Arc<[usize]>,
    /// `|N_i| - 1` per message entry.
    entry_others: Tensor,
    /// Flat weight layout: owning edge and neighbor edge per weight.
    weight_edge: Vec<usize>,
    weight_neighbor: Vec<usize>,
    weight_offset: Vec<usize>,
    term_weight: Arc<[usize]>,
    term_f2v: Arc<[usize]>,
    term_out: Arc<[usize]>,
    cand_cost: Tensor,
    cand_entry: Vec<usize>,
    /// One gather per other-scope position into `v2f ++ [0]`.
    cand_terms: Vec<Arc<[usize]>>,
    var_offset: Vec<usize>,
    num_beliefs: usize,
    entry_belief: Arc<[usize]>,
    belief_var: Arc<[usize]>,
    loss_cost: Tensor,
    /// One gather per scope position into `probs ++ [1]`.
    loss_slots: Vec<Arc<[usize]>>,
}

impl TapePlan {
    pub fn new(graph: &FactorGraph, instance: &CopInstance) -> Self {
        let r = graph.num_edges();
        let mut edge_offset = Vec::with_capacity(r + 1);
        let mut entry_edge = Vec::new();
        let mut entry_others = Vec::new();
        for e in 0..r {
            edge_offset.push(entry_edge.len());
            let others = (graph.degree(graph.edge(e).var) - 1) as f64;
            for _ in 0..graph.edge_domain(e) {
                entry_edge.push(e);
                entry_others.push(others);
            }
        }
        edge_offset.push(entry_edge.len());
        let num_entries = entry_edge.len();

        let (mut weight_edge, mut weight_neighbor, mut weight_offset) =
            (Vec::new(), Vec::new(), Vec::with_capacity(r + 1));
        let (mut term_weight, mut term_f2v, mut term_out) = (Vec::new(), Vec::new(), Vec::new());
        for e in 0..r {
            weight_offset.push(weight_edge.len());
            let var = graph.edge(e).var;
            for &m in graph.var_edges(var).iter().filter(|&&m| m != e) {
                weight_edge.push(e);
                weight_neighbor.push(m);
            }
        }
        weight_offset.push(weight_edge.len());
        // terms ordered by output entry, then neighbor, matching the plain engine
        for e in 0..r {
            for tau in 0..graph.edge_domain(e) {
                for w in weight_offset[e]..weight_offset[e + 1] {
                    term_weight.push(w);
                    term_f2v.push(edge_offset[weight_neighbor[w]] + tau);
                    term_out.push(edge_offset[e] + tau);
                }
            }
        }

        let (mut cand_cost, mut cand_entry) = (Vec::new(), Vec::new());
        let (mut loss_cost, mut cand_terms) = (Vec::new(), Vec::new());
        let mut var_offset = Vec::with_capacity(graph.num_variables() + 1);
        let mut belief_var = Vec::new();
        for var in 0..graph.num_variables() {
            var_offset.push(belief_var.len());
            belief_var.extend(std::iter::repeat_n(var, graph.domain(var)));
        }
        var_offset.push(belief_var.len());
        let num_beliefs = belief_var.len();
        let max_arity = instance
            .functions()
            .iter()
            .map(|f| f.arity())
            .max()
            .unwrap_or(0);
        let mut loss_slots = vec![Vec::new(); max_arity];
        cand_terms.resize(max_arity.saturating_sub(1), Vec::new());

        let mut values = Vec::new();
        for (function, f) in instance.functions().iter().enumerate() {
            let edges = graph.function_edges(function);
            let dims: Vec<usize> = f.scope.iter().map(|&v| instance.domain(v)).collect();
            values.clear();
            values.resize(dims.len(), 0usize);
            for &cost in &f.table {
                for (slot, &target) in edges.iter().enumerate() {
                    cand_cost.push(cost);
                    cand_entry.push(edge_offset[target] + values[slot]);
                    let mut others = edges
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != slot)
                        .map(|(j, &e)| edge_offset[e] + values[j]);
                    for column in cand_terms.iter_mut() {
                        column.push(others.next().unwrap_or(num_entries));
                    }
                }
                loss_cost.push(cost);
                for (pos, slot) in loss_slots.iter_mut().enumerate() {
                    slot.push(match f.scope.get(pos) {
                        Some(&var) => var_offset[var] + values[pos],
                        None => num_beliefs,
                    });
                }
                for pos in (0..dims.len()).rev() {
                    values[pos] += 1;
                    if values[pos] < dims[pos] {
                        break;
                    }
                    values[pos] = 0;
                }
            }
        }

        let mut entry_belief = vec![0; num_entries];
        for e in 0..r {
            let var = graph.edge(e).var;
            for tau in 0..graph.edge_domain(e) {
                entry_belief[edge_offset[e] + tau] = var_offset[var] + tau;
            }
        }

        Self {
            num_edges: r,
            num_vars: graph.num_variables(),
            edge_offset,
            num_entries,
            entry_edge: entry_edge.into(),
            entry_others: Tensor::column(entry_others),
            weight_edge,
            weight_neighbor,
            weight_offset,
            term_weight: term_weight.into(),
            term_f2v: term_f2v.into(),
            term_out: term_out.into(),
            cand_cost: Tensor::column(cand_cost),
            cand_entry,
            cand_terms: cand_terms.into_iter().map(Arc::from).collect(),
            var_offset,
            num_beliefs,
            entry_belief: entry_belief.into(),
            belief_var: belief_var.into(),
            loss_cost: Tensor::column(loss_cost),
            loss_slots: loss_slots.into_iter().map(Arc::from).collect(),
        }
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn num_entries(&self) -> usize {
        self.num_entries
    }

    pub fn num_weights(&self) -> usize {
        self.weight_edge.len()
    }

    /// `(edge, neighbor edge)` for every slot of the flat weight column.
    pub fn weight_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.weight_edge
            .iter()
            .copied()
            .zip(self.weight_neighbor.iter().copied())
    }

    pub fn edge_offset(&self, edge: usize) -> usize {
        self.edge_offset[edge]
    }

    /// Flattens per-edge vectors into a message column.
    pub fn flatten(&self, msgs: &[Vec<f64>]) -> Tensor {
        Tensor::column(msgs.iter().flatten().copied().collect())
    }

    /// Splits a message column back into per-edge vectors.
    pub fn unflatten(&self, flat: &Tensor) -> Vec<Vec<f64>> {
        (0..self.num_edges)
            .map(|e| flat.data()[self.edge_offset[e]..self.edge_offset[e + 1]].to_vec())
            .collect()
    }

    pub fn flatten_hyperparams(&self, hp: &HyperParams) -> (Tensor, Tensor) {
        (
            Tensor::column(hp.lambda.clone()),
            Tensor::column(hp.weights.iter().flatten().copied().collect()),
        )
    }

    pub fn unflatten_hyperparams(&self, lambda: &Tensor, weights: &Tensor) -> HyperParams {
        HyperParams {
            lambda: lambda.data().to_vec(),
            weights: (0..self.num_edges)
                .map(|e| weights.data()[self.weight_offset[e]..self.weight_offset[e + 1]].to_vec())
                .collect(),
        }
    }

    /// Composed and min-normalized variable-to-function messages.
    /// `lambda` is `edges x 1`, `weights` is `num_weights x 1`.
    pub fn v2f(
        &self,
        tape: &mut Tape,
        prev_v2f: Var,
        prev_f2v: Var,
        lambda: Var,
        weights: Var,
    ) -> Result<Var, DiffError> {
        let w = tape.gather_rows(weights, self.term_weight.clone())?;
        let mu = tape.gather_rows(prev_f2v, self.term_f2v.clone())?;
        let terms = tape.mul(w, mu)?;
        let sums = tape.segment_sum(terms, self.term_out.clone(), self.num_entries)?;
        let lam = tape.gather_rows(lambda, self.entry_edge.clone())?;
        let keep = tape.mul(lam, prev_v2f)?;
        let others = tape.constant(self.entry_others.clone());
        let mix = tape.one_minus(lam);
        let scale = tape.mul(mix, others)?;
        let fresh = tape.mul(scale, sums)?;
        let raw = tape.add(keep, fresh)?;
        let mins = tape.segment_min(raw, &self.entry_edge, self.num_edges)?;
        let shift = tape.gather_rows(mins, self.entry_edge.clone())?;
        tape.sub(raw, shift)
    }

    /// Function-to-variable messages from the given variable-to-function column.
    pub fn f2v(&self, tape: &mut Tape, v2f: Var) -> Result<Var, DiffError> {
        let mut cand = tape.constant(self.cand_cost.clone());
        if !self.cand_terms.is_empty() {
            let zero = tape.constant(Tensor::scalar(0.0));
            let padded = tape.concat_rows(v2f, zero)?;
            for column in &self.cand_terms {
                let part = tape.gather_rows(padded, column.clone())?;
                cand = tape.add(cand, part)?;
            }
        }
        tape.segment_min(cand, &self.cand_entry, self.num_entries)
    }

    /// Belief column: entry `var_offset(i) + τ` is `b_i(τ)`.
    pub fn beliefs(&self, tape: &mut Tape, f2v: Var) -> Result<Var, DiffError> {
        tape.segment_sum(f2v, self.entry_belief.clone(), self.num_beliefs)
    }

    pub fn belief_table(&self, beliefs: &Tensor) -> BeliefTable {
        BeliefTable(
            (0..self.num_vars)
                .map(|v| beliefs.data()[self.var_offset[v]..self.var_offset[v + 1]].to_vec())
                .collect(),
        )
    }

    /// Per-variable `softmax(-b)`.
    pub fn probs(&self, tape: &mut Tape, beliefs: Var) -> Result<Var, DiffError> {
        let neg = tape.scale(beliefs, -1.0);
        tape.segment_softmax(neg, self.belief_var.clone(), self.num_vars)
    }

    /// Expected total cost when each variable is drawn independently from `probs`.
    pub fn smoothed_loss(&self, tape: &mut Tape, probs: Var) -> Result<Var, DiffError> {
        let cost = tape.constant(self.loss_cost.clone());
        if self.loss_slots.is_empty() {
            return Ok(tape.sum(cost));
        }
        let one = tape.constant(Tensor::scalar(1.0));
        let padded = tape.concat_rows(probs, one)?;
        let mut prod = cost;
        for slot in &self.loss_slots {
            let p = tape.gather_rows(padded, slot.clone())?;
            prod = tape.mul(prod, p)?;
        }
        Ok(tape.sum(prod))
    }

    /// A zero message column.
    pub fn zeros(&self) -> Tensor {
        Tensor::zeros(self.num_entries, 1)
    }

    pub fn to_message_set(&self, v2f: &Tensor, f2v: &Tensor, iteration: usize) -> MessageSet {
        MessageSet {
            v2f: self.unflatten(v2f),
            f2v: self.unflatten(f2v),
            iteration,
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::bp_engine::{self, beliefs, f2v_step, v2f_compose};
    use crate::diff::{finite_difference, max_relative_error};
    use crate::factor_graph::{gen_random_cop, CostFunction, GeneratorConfig, InstanceMeta};

    fn random_hp(graph: &FactorGraph, rng: &mut ChaCha8Rng) -> HyperParams {
        let mut hp = HyperParams::uniform(graph, 0.0);
        for (e, w) in hp.weights.iter_mut().enumerate() {
            hp.lambda[e] = rng.gen();
            let raw: Vec<f64> = w.iter().map(|_| rng.gen::<f64>() + 0.01).collect();
            let total: f64 = raw.iter().sum();
            *w = raw.iter().map(|x| x / total).collect();
        }
        hp
    }

    #[test]
    fn matches_plain_engine() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = gen_random_cop(&GeneratorConfig::random_cop(8, 0.5, 3).with_domain(3)).unwrap();
        let graph = FactorGraph::new(&inst);
        let plan = TapePlan::new(&graph, &inst);
        let mut msgs = MessageSet::zeros(&graph);
        for _ in 0..6 {
            let hp = random_hp(&graph, &mut rng);
            let mut tape = Tape::new();
            let pv = tape.constant(plan.flatten(&msgs.v2f));
            let pf = tape.constant(plan.flatten(&msgs.f2v));
            let (l, w) = plan.flatten_hyperparams(&hp);
            let l = tape.constant(l);
            let w = tape.constant(w);
            let v2f = plan.v2f(&mut tape, pv, pf, l, w).unwrap();
            let f2v = plan.f2v(&mut tape, v2f).unwrap();
            let b = plan.beliefs(&mut tape, f2v).unwrap();

            let next = bp_engine::iterate_weighted(&graph, &inst, &msgs, &hp).unwrap();
            let mut raw = v2f_compose(&graph, &msgs, &hp).unwrap();
            bp_engine::normalize(&mut raw);
            assert_eq!(plan.unflatten(tape.value(v2f)), next.v2f);
            assert_eq!(plan.unflatten(tape.value(f2v)), next.f2v);
            assert_eq!(plan.belief_table(tape.value(b)), beliefs(&graph, &next.f2v));
            assert_eq!(f2v_step(&graph, &inst, &raw).unwrap(), next.f2v);
            msgs = next;
        }
    }

    #[test]
    fn loss_handles_mixed_arity() {
        let inst = CopInstance::new(
            vec![2, 3],
            vec![
                CostFunction::new(vec![1], vec![1.0, 2.0, 3.0]),
                CostFunction::new(vec![0, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            ],
            InstanceMeta::custom(),
        )
        .unwrap();
        let graph = FactorGraph::new(&inst);
        let plan = TapePlan::new(&graph, &inst);
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::column(vec![0.25, 0.75, 0.2, 0.3, 0.5]));
        let loss = plan.smoothed_loss(&mut tape, p).unwrap();
        let unary = 0.2 * 1.0 + 0.3 * 2.0 + 0.5 * 3.0;
        let p0 = [0.25, 0.75];
        let p1 = [0.2, 0.3, 0.5];
        let mut binary = 0.0;
        for (a, pa) in p0.iter().enumerate() {
            for (b, pb) in p1.iter().enumerate() {
                binary += (a * 3 + b + 1) as f64 * pa * pb;
            }
        }
        assert!((tape.value(loss).item() - unary - binary).abs() < 1e-12);
    }

    #[test]
    fn ternary_functions_match_plain_engine() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let table =
            |n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| rng.gen::<f64>() * 10.0).collect();
        let inst = CopInstance::new(
            vec![2, 3, 2, 2],
            vec![
                CostFunction::new(vec![0, 1, 2], table(12, &mut rng)),
                CostFunction::new(vec![1, 3], table(6, &mut rng)),
                CostFunction::new(vec![2, 3, 0], table(8, &mut rng)),
                CostFunction::new(vec![3], table(2, &mut rng)),
            ],
            InstanceMeta::custom(),
        )
        .unwrap();
        let graph = FactorGraph::new(&inst);
        let plan = TapePlan::new(&graph, &inst);
        let mut msgs = MessageSet::zeros(&graph);
        for _ in 0..5 {
            let hp = random_hp(&graph, &mut rng);
            let mut tape = Tape::new();
            let pv = tape.constant(plan.flatten(&msgs.v2f));
            let pf = tape.constant(plan.flatten(&msgs.f2v));
            let (l, w) = plan.flatten_hyperparams(&hp);
            let (l, w) = (tape.constant(l), tape.constant(w));
            let v2f = plan.v2f(&mut tape, pv, pf, l, w).unwrap();
            let f2v = plan.f2v(&mut tape, v2f).unwrap();
            let next = bp_engine::iterate_weighted(&graph, &inst, &msgs, &hp).unwrap();
            assert_eq!(
                plan.to_message_set(tape.value(v2f), tape.value(f2v), 1).f2v,
                next.f2v
            );
            msgs = next;
        }
    }

    #[test]
    fn hyperparam_layout_round_trips() {
        let inst = gen_random_cop(&GeneratorConfig::random_cop(6, 0.6, 2).with_domain(2)).unwrap();
        let graph = FactorGraph::new(&inst);
        let plan = TapePlan::new(&graph, &inst);
        let hp = random_hp(&graph, &mut ChaCha8Rng::seed_from_u64(3));
        let (l, w) = plan.flatten_hyperparams(&hp);
        assert_eq!(w.rows(), plan.num_weights());
        assert_eq!(plan.unflatten_hyperparams(&l, &w), hp);
        for (k, (e, m)) in plan.weight_pairs().enumerate() {
            assert_eq!(graph.edge(e).var, graph.edge(m).var);
            assert_ne!(e, m);
            assert!(k < plan.num_weights());
        }
    }

    #[test]
    fn loss_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inst = gen_random_cop(
            &GeneratorConfig::random_cop(6, 0.6, 5)
                .with_domain(3)
                .with_costs(0.0, 1.0),
        )
        .unwrap();
        let graph = FactorGraph::new(&inst);
        let plan = TapePlan::new(&graph, &inst);
        // warm messages so the min selections are not all ties
        let mut msgs = MessageSet::zeros(&graph);
        for _ in 0..2 {
            let hp = random_hp(&graph, &mut rng);
            msgs = bp_engine::iterate_weighted(&graph, &inst, &msgs, &hp).unwrap();
        }
        let hp = random_hp(&graph, &mut rng);
        let (lambda, weights) = plan.flatten_hyperparams(&hp);

        let run = |lambda: &Tensor, weights: &Tensor| {
            let mut tape = Tape::new();
            let pv = tape.constant(plan.flatten(&msgs.v2f));
            let pf = tape.constant(plan.flatten(&msgs.f2v));
            let l = tape.input(lambda.clone());
            let w = tape.input(weights.clone());
            let v2f = plan.v2f(&mut tape, pv, pf, l, w).unwrap();
            let f2v = plan.f2v(&mut tape, v2f).unwrap();
            let b = plan.beliefs(&mut tape, f2v).unwrap();
            let p = plan.probs(&mut tape, b).unwrap();
            let loss = plan.smoothed_loss(&mut tape, p).unwrap();
            (tape, l, w, loss)
        };
        let (tape, l, w, loss) = run(&lambda, &weights);
        let grads = tape.backward(loss).unwrap();
        let fd_l = finite_difference(&lambda, 1e-4, |x| {
            let (t, _, _, loss) = run(x, &weights);
            t.value(loss).item()
        });
        let fd_w = finite_difference(&weights, 1e-4, |x| {
            let (t, _, _, loss) = run(&lambda, x);
            t.value(loss).item()
        });
        let gl = grads.wrt(l).unwrap();
        let gw = grads.wrt(w).unwrap();
        assert!(max_relative_error(gl.data(), fd_l.data(), 1e-6) < 1e-5);
        assert!(max_relative_error(gw.data(), fd_w.data(), 1e-6) < 1e-5);
    }
}
