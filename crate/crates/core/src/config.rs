//! Run configuration: nested TOML sections with defaults, validation, a
//! canonical content hash and derived seeds.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarse_solver::{FixedPointConfig, UpdateScaling};
use crate::downscale::{ConstraintRegion, DownscaleConfig};
use crate::error::{Error, Result};
use crate::fine_solver::NewtonConfig;
use crate::mesh::MeshHierarchy;
use crate::physics::{AnalyticVelocity, FluxFunction, InitialCondition, TransportProblem};
use crate::surrogate::TrainerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshSection {
    pub nx: usize,
    pub ny: usize,
    pub refine: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self { nx: 20, ny: 20, refine: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OversampleSection {
    pub plus: usize,
    pub plusplus: usize,
    /// `plus` or `plusplus`: which block carries mean constraints.
    pub constraints: String,
}

impl Default for OversampleSection {
    fn default() -> Self {
        let d = DownscaleConfig::default();
        Self {
            plus: d.plus_layers,
            plusplus: d.plusplus_layers,
            constraints: d.constraints.name().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemSection {
    pub velocity: String,
    pub initial: String,
    pub dt: f64,
    pub n_steps: usize,
    pub flux: String,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            velocity: "constant11".into(),
            initial: "example1".into(),
            dt: 0.1,
            n_steps: 5,
            flux: "quadratic".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedPointSection {
    pub tol: f64,
    pub omega: f64,
    pub max_iters: usize,
    pub scaling: String,
}

impl Default for FixedPointSection {
    fn default() -> Self {
        let d = FixedPointConfig::default();
        Self {
            tol: d.tol,
            omega: d.omega,
            max_iters: d.max_iters,
            scaling: d.scaling.name().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonSection {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonSection {
    fn default() -> Self {
        let d = NewtonConfig::default();
        Self {
            tol: d.residual_tol,
            max_iters: d.max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateSection {
    /// Hidden layer sizes; empty means two layers of `hidden_factor · N_K`.
    pub hidden: Vec<usize>,
    pub hidden_factor: usize,
    pub n_samples: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub model: String,
    pub dataset: String,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self {
            hidden: Vec::new(),
            hidden_factor: 6,
            n_samples: 5000,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            batch_size: t.batch_size,
            epochs: t.epochs,
            validation_fraction: t.validation_fraction,
            model: "model.bin".into(),
            dataset: "dataset.bin".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    /// Report directory relative to `output_dir`.
    pub report_dir: String,
    pub strict: bool,
    pub mesh: MeshSection,
    pub oversample: OversampleSection,
    pub problem: ProblemSection,
    pub fixed_point: FixedPointSection,
    pub newton: NewtonSection,
    pub surrogate: SurrogateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: "out".into(),
            report_dir: "report".into(),
            strict: false,
            mesh: MeshSection::default(),
            oversample: OversampleSection::default(),
            problem: ProblemSection::default(),
            fixed_point: FixedPointSection::default(),
            newton: NewtonSection::default(),
            surrogate: SurrogateSection::default(),
        }
    }
}

/// Sub-seed counters fanned out from the global seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Dataset = 1,
    Init = 2,
    Shuffle = 3,
}

/// SplitMix64 of `seed + counter · φ`: independent, reproducible sub-seeds.
pub fn derive_seed(seed: u64, counter: u64) -> u64 {
    let mut z = seed.wrapping_add(counter.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const BUNDLED: &[(&str, &str)] = &[
    ("example1", include_str!("../../../configs/example1.cfg")),
    ("example2", include_str!("../../../configs/example2.cfg")),
    ("example3", include_str!("../../../configs/example3.cfg")),
    ("smoke", include_str!("../../../configs/smoke.cfg")),
];

/// Dotted paths of keys present in `value` but absent from `known`.
fn unknown_keys(value: &toml::Table, known: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in value {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, known.get(k)) {
            (_, None) => out.push(path),
            (toml::Value::Table(inner), Some(toml::Value::Table(kinner))) => unknown_keys(inner, kinner, &path, out),
            _ => {}
        }
    }
}

fn parse_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

impl RunConfig {
    /// Parses TOML text, applies `section.key=value` overrides, fills defaults
    /// and validates. Unknown keys are errors when `strict`, warnings otherwise.
    pub fn parse(text: &str, overrides: &[String], strict: bool) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let at = e
                .span()
                .map(|s| {
                    let line = text[..s.start].matches('\n').count() + 1;
                    let col = s.start - text[..s.start].rfind('\n').map_or(0, |p| p + 1) + 1;
                    format!(" at line {line}, column {col}")
                })
                .unwrap_or_default();
            Error::Config(format!("parse error{at}: {}", e.message()))
        })?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not of the form key=value")))?;
            let mut parts: Vec<&str> = key.trim().split('.').collect();
            let leaf = parts.pop().unwrap_or_default();
            let mut cur = &mut table;
            for p in parts {
                cur = cur
                    .entry(p)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("override '{o}': '{p}' is not a section")))?;
            }
            cur.insert(leaf.to_string(), parse_value(value.trim()));
        }

        let known = toml::Table::try_from(RunConfig::default()).map_err(|e| Error::Internal(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&table, &known, "", &mut unknown);
        if !unknown.is_empty() {
            let msg = format!("unknown configuration keys: {}", unknown.join(", "));
            if strict || table.get("strict").and_then(|v| v.as_bool()) == Some(true) {
                return Err(Error::Config(msg));
            }
            log::warn!("{msg}");
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let problems = cfg.validate();
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String], strict: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, overrides, strict)
    }

    /// A bundled configuration by name (`example1`, `example2`, `example3`, `smoke`).
    pub fn bundled_text(name: &str) -> Option<&'static str> {
        let stem = name.strip_suffix(".cfg").unwrap_or(name);
        BUNDLED.iter().find(|(n, _)| *n == stem).map(|(_, t)| *t)
    }

    /// Loads `spec` as a file if it exists, otherwise as a bundled name.
    pub fn resolve(spec: &str, overrides: &[String], strict: bool) -> Result<Self> {
        let path = Path::new(spec);
        if path.is_file() {
            return Self::load(path, overrides, strict);
        }
        match Self::bundled_text(spec) {
            Some(text) => Self::parse(text, overrides, strict),
            None => Err(Error::Config(format!("no config file or bundled config named '{spec}'"))),
        }
    }

    /// Every violated constraint, with its dotted key.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut positive = |name: &str, value: f64| {
            if !(value > 0.0 && value.is_finite()) {
                v.push(format!("{name} must be positive (got {value})"));
            }
        };
        positive("mesh.nx", self.mesh.nx as f64);
        positive("mesh.ny", self.mesh.ny as f64);
        positive("mesh.refine", self.mesh.refine as f64);
        positive("problem.dt", self.problem.dt);
        positive("problem.n_steps", self.problem.n_steps as f64);
        positive("fixed_point.tol", self.fixed_point.tol);
        positive("fixed_point.omega", self.fixed_point.omega);
        positive("fixed_point.max_iters", self.fixed_point.max_iters as f64);
        positive("newton.tol", self.newton.tol);
        positive("newton.max_iters", self.newton.max_iters as f64);
        positive("surrogate.n_samples", self.surrogate.n_samples as f64);
        if self.surrogate.hidden.is_empty() {
            positive("surrogate.hidden_factor", self.surrogate.hidden_factor as f64);
        }
        if self.surrogate.hidden.contains(&0) {
            v.push("surrogate.hidden entries must be positive".into());
        }
        if self.oversample.plusplus < 1 {
            v.push(format!(
                "oversample.plusplus must be at least 1 (got {})",
                self.oversample.plusplus
            ));
        }
        let names: [(&str, std::result::Result<(), Error>); 5] = [
            ("problem.velocity", AnalyticVelocity::from_name(&self.problem.velocity).map(drop)),
            ("problem.initial", InitialCondition::from_name(&self.problem.initial).map(drop)),
            ("problem.flux", FluxFunction::from_name(&self.problem.flux).map(drop)),
            ("fixed_point.scaling", UpdateScaling::from_name(&self.fixed_point.scaling).map(drop)),
            ("oversample.constraints", ConstraintRegion::from_name(&self.oversample.constraints).map(drop)),
        ];
        for (key, r) in names {
            if let Err(e) = r {
                v.push(format!("{key}: {e}"));
            }
        }
        for msg in self.trainer(0).validate() {
            v.push(format!("surrogate.{msg}"));
        }
        v
    }

    /// Canonical TOML of the resolved configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// Hash of the sections that determine the fine reference.
    pub fn reference_hash(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            mesh: &'a MeshSection,
            problem: &'a ProblemSection,
            newton: &'a NewtonSection,
        }
        let key = toml::to_string(&Key {
            mesh: &self.mesh,
            problem: &self.problem,
            newton: &self.newton,
        })
        .expect("config serializes");
        hex::encode(Sha256::digest(key.as_bytes()))
    }

    pub fn seed_for(&self, stream: SeedStream) -> u64 {
        derive_seed(self.seed, stream as u64)
    }

    pub fn problem(&self) -> Result<TransportProblem> {
        TransportProblem::new(
            MeshHierarchy::build(self.mesh.nx, self.mesh.ny, self.mesh.refine)?,
            AnalyticVelocity::from_name(&self.problem.velocity)?,
            FluxFunction::from_name(&self.problem.flux)?,
            InitialCondition::from_name(&self.problem.initial)?,
            self.problem.dt,
        )
    }

    pub fn newton(&self) -> NewtonConfig {
        NewtonConfig {
            residual_tol: self.newton.tol,
            max_iters: self.newton.max_iters,
        }
    }

    pub fn fixed_point(&self) -> Result<FixedPointConfig> {
        Ok(FixedPointConfig {
            tol: self.fixed_point.tol,
            omega: self.fixed_point.omega,
            max_iters: self.fixed_point.max_iters,
            scaling: UpdateScaling::from_name(&self.fixed_point.scaling)?,
        })
    }

    pub fn downscale(&self) -> Result<DownscaleConfig> {
        Ok(DownscaleConfig {
            plus_layers: self.oversample.plus,
            plusplus_layers: self.oversample.plusplus,
            constraints: ConstraintRegion::from_name(&self.oversample.constraints)?,
            newton: self.newton(),
        })
    }

    pub fn trainer(&self, shuffle_seed: u64) -> TrainerConfig {
        let s = &self.surrogate;
        TrainerConfig {
            learning_rate: s.learning_rate,
            beta1: s.beta1,
            beta2: s.beta2,
            epsilon: s.epsilon,
            batch_size: s.batch_size,
            epochs: s.epochs,
            validation_fraction: s.validation_fraction,
            shuffle_seed,
        }
    }

    pub fn layer_sizes(&self, problem: &TransportProblem) -> Vec<usize> {
        let nk = problem.mesh.num_coarse();
        let hidden = if self.surrogate.hidden.is_empty() {
            vec![self.surrogate.hidden_factor * nk; 2]
        } else {
            self.surrogate.hidden.clone()
        };
        let mut sizes = vec![2 * nk];
        sizes.extend(hidden);
        sizes.push(problem.mesh.num_trace_slots());
        sizes
    }

    /// `path` under the output directory unless absolute.
    pub fn output_path(&self, path: &str) -> PathBuf {
        Path::new(&self.output_dir).join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults_and_stable_hash() {
        let a = RunConfig::parse("", &[], true).unwrap();
        assert_eq!(a, RunConfig::default());
        let b = RunConfig::parse("\n# nothing\n", &[], true).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn example1_bundle() {
        let c = RunConfig::resolve("example1.cfg", &[], true).unwrap();
        assert_eq!((c.mesh.nx, c.mesh.ny, c.mesh.refine), (20, 20, 5));
        assert_eq!(c.problem.dt, 0.1);
        assert_eq!(c.problem.velocity, "constant11");
        assert_eq!(c.problem.initial, "example1");
        assert_eq!(c.problem.n_steps, 5);
        assert_eq!(c.fixed_point.tol, 1e-4);
        for name in ["example2", "example3", "smoke"] {
            RunConfig::resolve(name, &[], true).unwrap();
        }
        let e2 = RunConfig::resolve("example2", &[], true).unwrap();
        let e3 = RunConfig::resolve("example3", &[], true).unwrap();
        assert_eq!(e2.surrogate.model, e3.surrogate.model);
        assert_eq!(e2.problem.velocity, e3.problem.velocity);
        assert_ne!(e2.problem.initial, e3.problem.initial);
    }

    #[test]
    fn validation_names_every_violation() {
        match RunConfig::parse("[fixed_point]\ntol = -1.0\n[problem]\ndt = 0.0\nvelocity = \"spiral\"\n", &[], false) {
            Err(Error::Validation(v)) => {
                assert_eq!(v.len(), 3, "{v:?}");
                assert!(v[0].contains("problem.dt") || v.iter().any(|m| m.contains("problem.dt")));
                assert!(v.iter().any(|m| m.contains("fixed_point.tol")));
                assert!(v.iter().any(|m| m.contains("problem.velocity")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_parse_errors() {
        assert!(RunConfig::parse("[mesh]\nnx = 4\ncolour = 1\n", &[], false).is_ok());
        match RunConfig::parse("[mesh]\nnx = 4\ncolour = 1\n", &[], true) {
            Err(Error::Config(m)) => assert!(m.contains("mesh.colour")),
            other => panic!("{other:?}"),
        }
        match RunConfig::parse("[mesh]\nnx = = 4\n", &[], false) {
            Err(Error::Config(m)) => assert!(m.contains("line 2"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_and_round_trip() {
        let c = RunConfig::parse("", &["mesh.nx=5".into(), "problem.velocity=example2".into(), "seed=9".into()], true)
            .unwrap();
        assert_eq!(c.mesh.nx, 5);
        assert_eq!(c.problem.velocity, "example2");
        assert_eq!(c.seed, 9);
        let back = RunConfig::parse(&c.canonical(), &[], true).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.canonical(), c.canonical());
        assert_ne!(c.hash(), RunConfig::default().hash());
        assert!(RunConfig::parse("", &["mesh".into()], false).is_err());
    }

    #[test]
    fn reference_hash_tracks_only_reference_inputs() {
        let base = RunConfig::default();
        let surrogate = RunConfig::parse("", &["surrogate.epochs=3".into(), "oversample.plus=1".into()], true).unwrap();
        let mesh = RunConfig::parse("", &["mesh.refine=3".into()], true).unwrap();
        assert_eq!(base.reference_hash(), surrogate.reference_hash());
        assert_ne!(base.hash(), surrogate.hash());
        assert_ne!(base.reference_hash(), mesh.reference_hash());
        assert_eq!(base.reference_hash().len(), 64);
    }

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let c = RunConfig::default();
        let s: Vec<u64> = [SeedStream::Dataset, SeedStream::Init, SeedStream::Shuffle]
            .iter()
            .map(|&k| c.seed_for(k))
            .collect();
        assert!(s[0] != s[1] && s[1] != s[2] && s[0] != s[2]);
        assert_eq!(derive_seed(0, 1), s[0]);
        assert_ne!(derive_seed(1, 1), s[0]);
    }

    #[test]
    fn layer_sizes_follow_the_mesh() {
        let c = RunConfig::resolve("example1", &[], true).unwrap();
        let p = c.problem().unwrap();
        assert_eq!(c.layer_sizes(&p), vec![800, 2400, 2400, 4200]);
    }
}
