//! Benchmark instance generators.
//!
//! All families produce pairwise constraints. Every generator is a pure
//! function of its configuration: the seed drives a ChaCha stream, so output is
//! identical across runs and platforms.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CopInstance, CostFunction, InstanceError, InstanceMeta};

/// Topology family and its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// Each variable pair is constrained independently with probability `p1`.
    RandomCop { p1: f64 },
    /// Random topology as [`Family::RandomCop`]; costs only on equal values.
    Wgcp { p1: f64 },
    /// Barabási–Albert growth from a ring of `m0` vertices, `m1` links per new vertex.
    ScaleFree { m0: usize, m1: usize },
    /// Newman–Watts–Strogatz: ring lattice of degree `k` plus shortcuts with probability `p`.
    SmallWorld { k: usize, p: f64 },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::RandomCop { .. } => "random-cop",
            Family::Wgcp { .. } => "wgcp",
            Family::ScaleFree { .. } => "scale-free",
            Family::SmallWorld { .. } => "small-world",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub family: Family,
    pub num_variables: usize,
    pub domain_size: usize,
    /// Inclusive range costs are drawn from (continuous uniform).
    pub cost_range: (f64, f64),
    pub seed: u64,
}

impl GeneratorConfig {
    /// Domain 15, costs in [0, 100].
    pub fn random_cop(num_variables: usize, p1: f64, seed: u64) -> Self {
        Self {
            family: Family::RandomCop { p1 },
            num_variables,
            domain_size: 15,
            cost_range: (0.0, 100.0),
            seed,
        }
    }

    /// Domain 5, diagonal costs in [1, 100].
    pub fn wgcp(num_variables: usize, p1: f64, seed: u64) -> Self {
        Self {
            family: Family::Wgcp { p1 },
            num_variables,
            domain_size: 5,
            cost_range: (1.0, 100.0),
            seed,
        }
    }

    pub fn scale_free(num_variables: usize, m0: usize, m1: usize, seed: u64) -> Self {
        Self {
            family: Family::ScaleFree { m0, m1 },
            num_variables,
            domain_size: 15,
            cost_range: (0.0, 100.0),
            seed,
        }
    }

    pub fn small_world(num_variables: usize, k: usize, p: f64, seed: u64) -> Self {
        Self {
            family: Family::SmallWorld { k, p },
            num_variables,
            domain_size: 15,
            cost_range: (0.0, 100.0),
            seed,
        }
    }

    pub fn with_domain(mut self, domain_size: usize) -> Self {
        self.domain_size = domain_size;
        self
    }

    pub fn with_costs(mut self, lo: f64, hi: f64) -> Self {
        self.cost_range = (lo, hi);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<(), InstanceError> {
        let bad = |msg: String| Err(InstanceError::InvalidGenerator(msg));
        if self.domain_size == 0 {
            return bad("domain size must be positive".into());
        }
        let (lo, hi) = self.cost_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("invalid cost range [{lo}, {hi}]"));
        }
        match self.family {
            Family::RandomCop { p1 } | Family::Wgcp { p1 } => {
                if !(p1 > 0.0 && p1 <= 1.0) {
                    return bad(format!("p1 must lie in (0, 1], got {p1}"));
                }
            }
            Family::ScaleFree { m0, m1 } => {
                if m1 < 1 || m0 < m1 {
                    return bad(format!("need m0 >= m1 >= 1, got m0={m0}, m1={m1}"));
                }
                if self.num_variables <= m0 {
                    return bad(format!(
                        "need more than m0={m0} variables, got {}",
                        self.num_variables
                    ));
                }
            }
            Family::SmallWorld { k, p } => {
                if k == 0 || k % 2 != 0 || k >= self.num_variables {
                    return bad(format!(
                        "k must be positive, even and below {}, got {k}",
                        self.num_variables
                    ));
                }
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("p must lie in [0, 1], got {p}"));
                }
            }
        }
        Ok(())
    }

    fn meta(&self) -> InstanceMeta {
        let mut params = BTreeMap::new();
        params.insert("n".to_string(), self.num_variables as f64);
        params.insert("domain".to_string(), self.domain_size as f64);
        params.insert("cost_lo".to_string(), self.cost_range.0);
        params.insert("cost_hi".to_string(), self.cost_range.1);
        match self.family {
            Family::RandomCop { p1 } | Family::Wgcp { p1 } => {
                params.insert("p1".to_string(), p1);
            }
            Family::ScaleFree { m0, m1 } => {
                params.insert("m0".to_string(), m0 as f64);
                params.insert("m1".to_string(), m1 as f64);
            }
            Family::SmallWorld { k, p } => {
                params.insert("k".to_string(), k as f64);
                params.insert("p".to_string(), p);
            }
        }
        InstanceMeta {
            family: self.family.name().to_string(),
            params,
            seed: Some(self.seed),
        }
    }
}

/// Dispatches on the configured family.
pub fn generate(cfg: &GeneratorConfig) -> Result<CopInstance, InstanceError> {
    match cfg.family {
        Family::RandomCop { .. } => gen_random_cop(cfg),
        Family::Wgcp { .. } => gen_wgcp(cfg),
        Family::ScaleFree { .. } => gen_scale_free(cfg),
        Family::SmallWorld { .. } => gen_small_world(cfg),
    }
}

pub fn gen_random_cop(cfg: &GeneratorConfig) -> Result<CopInstance, InstanceError> {
    let Family::RandomCop { p1 } = cfg.family else {
        return Err(family_mismatch("random-cop", cfg));
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let edges = random_pairs(&mut rng, cfg.num_variables, p1);
    build_uniform(cfg, &mut rng, &edges)
}

pub fn gen_wgcp(cfg: &GeneratorConfig) -> Result<CopInstance, InstanceError> {
    let Family::Wgcp { p1 } = cfg.family else {
        return Err(family_mismatch("wgcp", cfg));
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let edges = random_pairs(&mut rng, cfg.num_variables, p1);
    let d = cfg.domain_size;
    let functions = edges
        .iter()
        .map(|&(u, v)| {
            let mut table = vec![0.0; d * d];
            for value in 0..d {
                table[value * d + value] = sample_cost(&mut rng, cfg.cost_range);
            }
            CostFunction::new(vec![u, v], table)
        })
        .collect();
    CopInstance::new(vec![d; cfg.num_variables], functions, cfg.meta())
}

pub fn gen_scale_free(cfg: &GeneratorConfig) -> Result<CopInstance, InstanceError> {
    let Family::ScaleFree { m0, m1 } = cfg.family else {
        return Err(family_mismatch("scale-free", cfg));
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.num_variables;
    let mut edges = Vec::new();
    let mut present = HashSet::new();
    let mut degree = vec![0usize; n];
    let mut add = |u: usize, v: usize, edges: &mut Vec<(usize, usize)>, degree: &mut [usize]| {
        let key = (u.min(v), u.max(v));
        if u != v && present.insert(key) {
            edges.push(key);
            degree[u] += 1;
            degree[v] += 1;
        }
    };
    // ring seed graph; degenerates to a single edge for m0 = 2 and nothing for m0 = 1
    for i in 0..m0 {
        add(i, (i + 1) % m0, &mut edges, &mut degree);
    }
    for new in m0..n {
        let mut targets: Vec<usize> = Vec::with_capacity(m1);
        while targets.len() < m1 {
            let candidate = weighted_pick(&mut rng, &degree[..new], &targets);
            if !targets.contains(&candidate) {
                targets.push(candidate);
            }
        }
        for t in targets {
            add(new, t, &mut edges, &mut degree);
        }
    }
    build_uniform(cfg, &mut rng, &edges)
}

pub fn gen_small_world(cfg: &GeneratorConfig) -> Result<CopInstance, InstanceError> {
    let Family::SmallWorld { k, p } = cfg.family else {
        return Err(family_mismatch("small-world", cfg));
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.num_variables;
    let mut edges = Vec::new();
    let mut present = HashSet::new();
    let mut degree = vec![0usize; n];
    for offset in 1..=k / 2 {
        for u in 0..n {
            let v = (u + offset) % n;
            present.insert((u.min(v), u.max(v)));
            edges.push((u.min(v), u.max(v)));
            degree[u] += 1;
            degree[v] += 1;
        }
    }
    let lattice: Vec<(usize, usize)> = edges.clone();
    for (u, _) in lattice {
        if rng.gen::<f64>() >= p {
            continue;
        }
        if degree[u] >= n - 1 {
            continue;
        }
        let w = loop {
            let w = rng.gen_range(0..n);
            if w != u && !present.contains(&(u.min(w), u.max(w))) {
                break w;
            }
        };
        present.insert((u.min(w), u.max(w)));
        edges.push((u.min(w), u.max(w)));
        degree[u] += 1;
        degree[w] += 1;
    }
    build_uniform(cfg, &mut rng, &edges)
}

/// Random spanning tree (each vertex links to a uniformly chosen earlier one)
/// with uniform pairwise costs. Handy for exactness checks.
pub fn gen_random_tree(
    num_variables: usize,
    domain_size: usize,
    cost_range: (f64, f64),
    seed: u64,
) -> Result<CopInstance, InstanceError> {
    let cfg = GeneratorConfig {
        family: Family::RandomCop { p1: 1.0 },
        num_variables,
        domain_size,
        cost_range,
        seed,
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<(usize, usize)> = (1..num_variables)
        .map(|v| (rng.gen_range(0..v), v))
        .collect();
    let mut inst = build_uniform(&cfg, &mut rng, &edges)?;
    inst.meta.family = "tree".to_string();
    inst.meta.params.remove("p1");
    Ok(inst)
}

fn family_mismatch(expected: &str, cfg: &GeneratorConfig) -> InstanceError {
    InstanceError::InvalidGenerator(format!(
        "expected a {expected} configuration, got {}",
        cfg.family.name()
    ))
}

fn random_pairs(rng: &mut ChaCha8Rng, n: usize, p1: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p1 {
                edges.push((u, v));
            }
        }
    }
    edges
}

fn sample_cost(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Degree-proportional draw over `degree`, skipping `exclude`. Falls back to a
/// uniform draw when no remaining vertex has positive degree.
fn weighted_pick(rng: &mut ChaCha8Rng, degree: &[usize], exclude: &[usize]) -> usize {
    let total: usize = degree
        .iter()
        .enumerate()
        .filter(|(v, _)| !exclude.contains(v))
        .map(|(_, &d)| d)
        .sum();
    if total == 0 {
        loop {
            let v = rng.gen_range(0..degree.len());
            if !exclude.contains(&v) {
                return v;
            }
        }
    }
    // Draw over the full degree mass; duplicates are rejected by the caller.
    let full: usize = degree.iter().sum();
    let mut ticket = rng.gen_range(0..full);
    for (v, &d) in degree.iter().enumerate() {
        if ticket < d {
            return v;
        }
        ticket -= d;
    }
    unreachable!("ticket below total degree mass")
}

fn build_uniform(
    cfg: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
    edges: &[(usize, usize)],
) -> Result<CopInstance, InstanceError> {
    let d = cfg.domain_size;
    let functions = edges
        .iter()
        .map(|&(u, v)| {
            let table = (0..d * d)
                .map(|_| sample_cost(rng, cfg.cost_range))
                .collect();
            CostFunction::new(vec![u, v], table)
        })
        .collect();
    CopInstance::new(vec![d; cfg.num_variables], functions, cfg.meta())
}
