use std::path::{Path, PathBuf};

use dabp::factor_graph::{generate, serialize, Family, GeneratorConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{io_err, CliError};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Family and size parameters for `gen`. Unset domain and cost range fall
/// back to the family defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyArgs {
    pub family: Family,
    pub num_variables: usize,
    pub domain: Option<usize>,
    pub costs: Option<(f64, f64)>,
}

impl FamilyArgs {
    fn config(&self, seed: u64) -> GeneratorConfig {
        let n = self.num_variables;
        let mut cfg = match self.family {
            Family::RandomCop { p1 } => GeneratorConfig::random_cop(n, p1, seed),
            Family::Wgcp { p1 } => GeneratorConfig::wgcp(n, p1, seed),
            Family::ScaleFree { m0, m1 } => GeneratorConfig::scale_free(n, m0, m1, seed),
            Family::SmallWorld { k, p } => GeneratorConfig::small_world(n, k, p, seed),
        };
        if let Some(d) = self.domain {
            cfg = cfg.with_domain(d);
        }
        if let Some((lo, hi)) = self.costs {
            cfg = cfg.with_costs(lo, hi);
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub file: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub family: String,
    pub base_seed: u64,
    pub instances: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Writes `count` instances plus a manifest into `out_dir`. Instance seeds are
/// drawn from a stream seeded with `seed`, so the same call reproduces the
/// same files.
pub fn cmd_gen(
    args: &FamilyArgs,
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest, CliError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut stream = ChaCha8Rng::seed_from_u64(seed);
    let name = args.family.name();
    let mut instances = Vec::with_capacity(count);
    for i in 0..count {
        let inst_seed: u64 = stream.gen();
        let inst = generate(&args.config(inst_seed))?;
        let id = format!("{name}-{i:04}");
        let file = PathBuf::from(format!("{id}.json"));
        let path = out_dir.join(&file);
        std::fs::write(&path, serialize(&inst)).map_err(io_err(&path))?;
        instances.push(ManifestEntry {
            id,
            file,
            seed: inst_seed,
        });
    }
    let manifest = Manifest {
        family: name.to_string(),
        base_seed: seed,
        instances,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}
