//! Run configuration: a flat key=value file merged with command-line
//! overrides, then validated into typed settings.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use dpvp::datasets::HoldoutPlan;
use dpvp::mcmc::{FSchedule, SamplerOptions};

/// Failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<dpvp::Error> for CliError {
    fn from(e: dpvp::Error) -> Self {
        use dpvp::Error::*;
        let code = match e {
            Config(_) | Parse { .. } | TreeSyntax(_) | TreeHeight { .. } | Shape(_) | GroundSetMismatch(..) => 2,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const KEYS: &[&str] = &[
    "model",
    "kernel",
    "k",
    "iterations",
    "burnin",
    "thin",
    "seed",
    "data",
    "generator",
    "vdb_dir",
    "holdout_fraction",
    "repeats",
    "methods",
    "out",
    "schedule",
    "tree",
    "lengthscale",
    "alpha",
];

fn normalize_key(key: &str) -> String {
    let k = key.trim().to_ascii_lowercase().replace('-', "_");
    match k.as_str() {
        "truncation" => "k".into(),
        _ => k,
    }
}

/// Raw settings in key order, as written to `config.echo`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig(pub BTreeMap<String, String>);

impl RawConfig {
    pub fn parse(text: &str, origin: &Path) -> CliResult<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("{}:{}: expected key=value", origin.display(), n + 1))
            })?;
            let key = normalize_key(k);
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::usage(format!(
                    "{}:{}: unknown key '{}'",
                    origin.display(),
                    n + 1,
                    k.trim()
                )));
            }
            map.insert(key, v.trim().to_string());
        }
        Ok(RawConfig(map))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Later values win.
    pub fn set(&mut self, key: &str, value: Option<String>) {
        if let Some(v) = value {
            self.0.insert(normalize_key(key), v);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn echo(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::usage(format!("invalid value '{v}' for {key}: {e}")))
            })
            .transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Mcm,
    Ecs,
    BaselineIndependent,
    BaselineShared,
}

impl std::str::FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mcm" => Ok(Model::Mcm),
            "ecs" => Ok(Model::Ecs),
            "baseline-independent" => Ok(Model::BaselineIndependent),
            "baseline-shared" => Ok(Model::BaselineShared),
            _ => Err("expected mcm, ecs, baseline-independent or baseline-shared".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Se,
    Similarity,
    Tree,
}

impl std::str::FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "se" => Ok(KernelKind::Se),
            "similarity" => Ok(KernelKind::Similarity),
            "tree" => Ok(KernelKind::Tree),
            _ => Err("expected se, similarity or tree".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Manifest(PathBuf),
    Generator(String),
    Vdb(PathBuf),
}

pub const GENERATORS: &[&str] = &["gaussian-clusters", "mcm-t3", "ecs", "se-surrogate"];

/// Validated settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: Model,
    pub kernel: KernelKind,
    pub tree: Option<PathBuf>,
    pub lengthscale: f64,
    pub data: DataSource,
    pub sampler: SamplerOptions,
    pub holdout: HoldoutPlan,
    pub methods: Vec<String>,
    pub out: PathBuf,
}

fn existing(path: &str, what: &str) -> CliResult<PathBuf> {
    let p = PathBuf::from(path);
    if p.exists() {
        Ok(p)
    } else {
        Err(CliError::usage(format!("{what} not found: {}", p.display())))
    }
}

/// The data specification alone; `simulate` needs nothing else.
pub fn data_source(raw: &RawConfig) -> CliResult<DataSource> {
    let given: Vec<&str> = ["data", "generator", "vdb_dir"]
        .into_iter()
        .filter(|k| raw.get(k).is_some())
        .collect();
    match given.as_slice() {
        ["data"] => Ok(DataSource::Manifest(existing(raw.get("data").unwrap(), "data file")?)),
        ["generator"] => {
            let g = raw.get("generator").unwrap();
            if GENERATORS.contains(&g) {
                Ok(DataSource::Generator(g.to_string()))
            } else {
                Err(CliError::usage(format!(
                    "unknown generator '{g}' (expected one of {})",
                    GENERATORS.join(", ")
                )))
            }
        }
        ["vdb_dir"] => Ok(DataSource::Vdb(existing(raw.get("vdb_dir").unwrap(), "survey directory")?)),
        [] => Err(CliError::usage("no data given: use --data, --generator or --vdb-dir")),
        _ => Err(CliError::usage(format!(
            "exactly one data specification is allowed, got {}",
            given.join(" and ")
        ))),
    }
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> CliResult<Self> {
        let data = data_source(raw)?;
        let default_model = match &data {
            DataSource::Vdb(_) => Model::Ecs,
            DataSource::Generator(g) if g == "ecs" || g == "se-surrogate" => Model::Ecs,
            _ => Model::Mcm,
        };
        let model = raw.parsed("model")?.unwrap_or(default_model);
        let kernel = raw.parsed("kernel")?.unwrap_or(match model {
            Model::Ecs => KernelKind::Se,
            _ => KernelKind::Similarity,
        });
        let tree = match (kernel, raw.get("tree")) {
            (KernelKind::Tree, Some(t)) => Some(existing(t, "tree file")?),
            (KernelKind::Tree, None) => return Err(CliError::usage("the tree kernel needs --tree <newick file>")),
            (_, _) => None,
        };
        if model == Model::Ecs && kernel == KernelKind::Tree {
            return Err(CliError::usage("the ecs model takes an se or similarity kernel"));
        }
        let d = SamplerOptions::default();
        let mut sampler = SamplerOptions {
            iterations: raw.parsed("iterations")?.unwrap_or(d.iterations),
            burnin: raw.parsed("burnin")?.unwrap_or(d.burnin),
            thin: raw.parsed("thin")?.unwrap_or(d.thin),
            seed: raw.parsed("seed")?.unwrap_or(d.seed),
            truncation: raw.parsed("k")?.unwrap_or(d.truncation),
            alpha: raw.parsed("alpha")?.unwrap_or(d.alpha),
            ..d
        };
        if let Some(s) = raw.get("schedule") {
            sampler.schedule = s
                .parse::<FSchedule>()
                .map_err(|e| CliError::usage(format!("invalid value '{s}' for schedule: {e}")))?;
        }
        sampler.validate()?;
        let holdout = HoldoutPlan {
            fraction: raw.parsed("holdout_fraction")?.unwrap_or(0.1),
            repeats: raw.parsed("repeats")?.unwrap_or(10),
            seed: sampler.seed,
        };
        holdout.validate()?;
        let model_name = match model {
            Model::Ecs => "ecs",
            _ => "mcm",
        };
        let methods = match raw.get("methods") {
            Some(m) => m.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            None => vec!["independent".into(), "shared".into(), model_name.into()],
        };
        for m in &methods {
            m.parse::<dpvp::datasets::Method>()?;
        }
        Ok(RunConfig {
            model,
            kernel,
            tree,
            lengthscale: raw.parsed("lengthscale")?.unwrap_or(1.0),
            data,
            sampler,
            holdout,
            methods,
            out: PathBuf::from(raw.get("out").unwrap_or("out")),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(text: &str) -> RawConfig {
        RawConfig::parse(text, Path::new("test.cfg")).unwrap()
    }

    #[test]
    fn flags_override_file() {
        let mut r = raw("# comment\niterations = 50\nburnin=10\ngenerator=mcm-t3\n");
        r.set("iterations", Some("20".into()));
        r.set("holdout-fraction", Some("0.2".into()));
        let c = RunConfig::from_raw(&r).unwrap();
        assert_eq!((c.sampler.iterations, c.sampler.burnin), (20, 10));
        assert_eq!(c.holdout.fraction, 0.2);
        assert_eq!(c.model, Model::Mcm);
        assert_eq!(c.kernel, KernelKind::Similarity);
        assert_eq!(r.echo().lines().next(), Some("burnin=10"));
    }

    #[test]
    fn usage_errors() {
        let bad = |text: &str| RunConfig::from_raw(&raw(text)).unwrap_err().code;
        assert_eq!(bad("generator=nope"), 2);
        assert_eq!(bad("generator=mcm-t3\nrepeats=0"), 2);
        assert_eq!(bad("generator=mcm-t3\ndata=x.txt"), 2);
        assert_eq!(bad("generator=mcm-t3\nkernel=tree"), 2);
        assert_eq!(bad("generator=mcm-t3\niterations=10\nburnin=10"), 2);
        assert_eq!(bad("generator=mcm-t3\nmethods=dependent,magic"), 2);
        assert!(RawConfig::parse("colour=blue", Path::new("c")).is_err());
    }

    #[test]
    fn missing_data_names_path() {
        let e = RunConfig::from_raw(&raw("data=/no/such/manifest.txt")).unwrap_err();
        assert_eq!(e.code, 2);
        assert!(e.message.contains("/no/such/manifest.txt"));
    }
}
