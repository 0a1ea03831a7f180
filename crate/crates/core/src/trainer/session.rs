use super::{select_effective, TrainConfig, TrainError};
use crate::bp_engine::decide;
use crate::bp_engine::tape::TapePlan;
use crate::diff::{ParamGrads, Tape, Tensor, Var};
use crate::factor_graph::{Assignment, CopInstance, FactorGraph};
use crate::model::{BoundModel, EncoderState, ModelParameters, ModelPlan};

/// Outcome of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub assignment: Assignment,
    pub cost: f64,
    pub loss: f64,
    pub converged: bool,
}

/// One restart of learned message passing: messages, encoder state and the
/// tape recording the current update window.
pub struct OnlineSession<'a> {
    instance: &'a CopInstance,
    bp: TapePlan,
    model: ModelPlan,
    eps: f64,
    tape: Tape,
    bound: BoundModel,
    v2f: Var,
    f2v: Var,
    h_v2f: Var,
    h_f2v: Var,
    window: Vec<(f64, Var)>,
}

impl<'a> OnlineSession<'a> {
    /// Fresh session with zero messages and zero encoder state. `eps` is the
    /// convergence threshold.
    pub fn new(
        instance: &'a CopInstance,
        params: &ModelParameters,
        eps: f64,
    ) -> Result<Self, TrainError> {
        let graph = FactorGraph::new(instance);
        let bp = TapePlan::new(&graph, instance);
        let model = ModelPlan::new(&graph, params.config())?;
        let state = EncoderState::zeros(graph.num_edges(), params.config().hidden);
        let zeros = bp.zeros();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let v2f = tape.constant(zeros.clone());
        let f2v = tape.constant(zeros);
        let h_v2f = tape.constant(state.h_v2f);
        let h_f2v = tape.constant(state.h_f2v);
        Ok(Self {
            instance,
            bp,
            model,
            eps,
            tape,
            bound,
            v2f,
            f2v,
            h_v2f,
            h_f2v,
            window: Vec::new(),
        })
    }

    /// Infers hyperparameters, runs one BP iteration and scores it.
    pub fn step(&mut self) -> Result<StepRecord, TrainError> {
        let tape = &mut self.tape;
        let out = self.model.step(
            tape,
            &self.bound,
            self.h_v2f,
            self.h_f2v,
            self.v2f,
            self.f2v,
        )?;
        let v2f = self
            .bp
            .v2f(tape, self.v2f, self.f2v, out.lambda, out.weights)?;
        let f2v = self.bp.f2v(tape, v2f)?;
        let beliefs = self.bp.beliefs(tape, f2v)?;
        let probs = self.bp.probs(tape, beliefs)?;
        let loss = self.bp.smoothed_loss(tape, probs)?;

        let assignment = decide(&self.bp.belief_table(tape.value(beliefs)));
        let cost = self.instance.total_cost(&assignment)?;
        let converged = max_abs_diff(tape.value(v2f), tape.value(self.v2f))
            .max(max_abs_diff(tape.value(f2v), tape.value(self.f2v)))
            <= self.eps;
        let loss_value = tape.value(loss).item();

        self.window.push((cost, loss));
        self.v2f = v2f;
        self.f2v = f2v;
        self.h_v2f = out.h_v2f;
        self.h_f2v = out.h_f2v;
        Ok(StepRecord {
            assignment,
            cost,
            loss: loss_value,
            converged,
        })
    }

    /// Iterations recorded since the last update.
    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Mean loss over the `t_eff` cheapest iterations of the window, and its
    /// gradient with respect to every parameter.
    pub fn loss_and_grads(
        &mut self,
        params: &ModelParameters,
        t_eff: usize,
    ) -> Result<(f64, ParamGrads), TrainError> {
        let costs: Vec<f64> = self.window.iter().map(|w| w.0).collect();
        let picked: Vec<Var> = select_effective(&costs, t_eff)
            .into_iter()
            .map(|k| self.window[k].1)
            .collect();
        let stacked = self.tape.stack_rows(&picked)?;
        let mean = self.tape.mean(stacked);
        let grads = self.tape.backward(mean)?.params(params.store());
        Ok((self.tape.value(mean).item(), grads))
    }

    /// One Adam step on the current window, then a fresh tape that starts
    /// from the current messages and encoder state with no history.
    pub fn update(
        &mut self,
        params: &mut ModelParameters,
        cfg: &TrainConfig,
    ) -> Result<f64, TrainError> {
        let (loss, grads) = self.loss_and_grads(params, cfg.t_eff)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite(format!("window loss {loss}")));
        }
        let finite = grads
            .0
            .iter()
            .flatten()
            .all(|g| g.data().iter().all(|x| x.is_finite()));
        if !finite {
            return Err(TrainError::NonFinite("gradient".into()));
        }
        params
            .store_mut()
            .adam_step(&grads, cfg.lr, cfg.weight_decay)?;
        self.restart_tape(params);
        Ok(loss)
    }

    fn restart_tape(&mut self, params: &ModelParameters) {
        let carry: [Tensor; 4] =
            [self.v2f, self.f2v, self.h_v2f, self.h_f2v].map(|v| self.tape.value(v).clone());
        let mut tape = Tape::new();
        self.bound = params.bind(&mut tape);
        let [v2f, f2v, h_v2f, h_f2v] = carry.map(|t| tape.constant(t));
        self.v2f = v2f;
        self.f2v = f2v;
        self.h_v2f = h_v2f;
        self.h_f2v = h_f2v;
        self.tape = tape;
        self.window.clear();
    }
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
