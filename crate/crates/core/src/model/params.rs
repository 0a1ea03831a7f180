use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};
use crate::diff::{
    GatConfig, GatParams, GatVars, GruParams, GruVars, ParamId, ParameterStore, Tape, Var,
};

/// One attention head: `W1` (`2d' x 1`) over the concatenated projections
/// `W2 e_ℓ` and `W3 e_m` (each `d x d'`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionHead {
    pub w1: ParamId,
    pub w2: ParamId,
    pub w3: ParamId,
}

/// All learnable parameters of the model in one store.
#[derive(Debug, Clone)]
pub struct ModelParameters {
    config: ModelConfig,
    store: ParameterStore,
    phi1: GruParams,
    phi2: GruParams,
    psi: Vec<GatParams>,
    zeta: Vec<AttentionHead>,
    var_embed: ParamId,
    func_embed: ParamId,
}

/// Parameters bound to a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub(crate) phi1: GruVars,
    pub(crate) phi2: GruVars,
    pub(crate) psi: Vec<(GatVars, GatConfig)>,
    pub(crate) zeta: Vec<(Var, Var, Var)>,
    pub(crate) var_embed: Var,
    pub(crate) func_embed: Var,
}

impl ModelParameters {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let q = config.hidden;
        let phi1 = GruParams::new(&mut store, "phi1", config.msg_width, q, &mut rng);
        let phi2 = GruParams::new(&mut store, "phi2", config.msg_width, q, &mut rng);
        let mut input = q;
        let psi = (0..config.gat_layers)
            .map(|g| {
                let cfg = gat_config(&config, g);
                let p = GatParams::new(&mut store, &format!("psi{}", g + 1), input, &cfg, &mut rng);
                input = cfg.output_width();
                p
            })
            .collect();
        let (d, dk) = (config.embed_width(), config.attn_width);
        let zeta = (0..config.attn_heads)
            .map(|k| {
                let name = format!("zeta{}", k + 1);
                AttentionHead {
                    w1: store.add_uniform(format!("{name}.w1"), 2 * dk, 1, 2 * dk, &mut rng),
                    w2: store.add_uniform(format!("{name}.w2"), d, dk, d, &mut rng),
                    w3: store.add_uniform(format!("{name}.w3"), d, dk, d, &mut rng),
                }
            })
            .collect();
        let var_embed = store.add_uniform("embed.variable", 1, q, q, &mut rng);
        let func_embed = store.add_uniform("embed.function", 1, q, q, &mut rng);
        Ok(Self {
            config,
            store,
            phi1,
            phi2,
            psi,
            zeta,
            var_embed,
            func_embed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    /// Parameter ids by group: `phi1`, `phi2`, `psi1..psiG`, `zeta1..zetaK`, `embed`.
    pub fn groups(&self) -> Vec<(String, Vec<ParamId>)> {
        let mut out = vec![
            ("phi1".to_string(), self.phi1.ids().to_vec()),
            ("phi2".to_string(), self.phi2.ids().to_vec()),
        ];
        for (g, p) in self.psi.iter().enumerate() {
            out.push((format!("psi{}", g + 1), p.ids().to_vec()));
        }
        for (k, h) in self.zeta.iter().enumerate() {
            out.push((format!("zeta{}", k + 1), vec![h.w1, h.w2, h.w3]));
        }
        out.push(("embed".to_string(), vec![self.var_embed, self.func_embed]));
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let store = &self.store;
        BoundModel {
            phi1: self.phi1.bind(tape, store),
            phi2: self.phi2.bind(tape, store),
            psi: self
                .psi
                .iter()
                .enumerate()
                .map(|(g, p)| (p.bind(tape, store), gat_config(&self.config, g)))
                .collect(),
            zeta: self
                .zeta
                .iter()
                .map(|h| {
                    (
                        tape.param(store, h.w1),
                        tape.param(store, h.w2),
                        tape.param(store, h.w3),
                    )
                })
                .collect(),
            var_embed: tape.param(store, self.var_embed),
            func_embed: tape.param(store, self.func_embed),
        }
    }
}

/// Hidden layers concatenate heads; the last one averages them.
fn gat_config(config: &ModelConfig, layer: usize) -> GatConfig {
    GatConfig {
        heads: config.gat_heads,
        channels: config.gat_channels,
        concat: layer + 1 < config.gat_layers,
        score_slope: config.score_slope,
        output_slope: config.output_slope,
    }
}
