//! Run configuration files and flag overrides.

use std::fs;
use std::path::{Path, PathBuf};

use coevo::data::{PerturbSpec, ToySpec};
use coevo::geometry::primitives::Shape;
use coevo::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{MakeDataArgs, TrainArgs};
use crate::{CliError, CliResult};

/// Default output root when neither a flag nor the environment sets one.
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const OUTPUT_ROOT_ENV: &str = "COEVO_OUTPUT_ROOT";

pub fn output_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub output_root: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub train: TrainConfig,
    pub perturb: PerturbSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            output_root: None,
            dataset: None,
            train: TrainConfig::default(),
            perturb: PerturbSpec::default(),
        }
    }
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

pub fn to_toml<T: Serialize>(value: &T) -> CliResult<String> {
    toml::to_string_pretty(value).map_err(|e| CliError::Runtime(e.into()))
}

impl RunConfig {
    /// Defaults, then the config file, then flags.
    pub fn resolve(args: &TrainArgs) -> CliResult<Self> {
        let mut c: RunConfig = match &args.config {
            Some(p) => read_toml(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &args.name {
            c.name = v.clone();
        }
        if let Some(v) = &args.output_root {
            c.output_root = Some(v.clone());
        }
        if let Some(v) = &args.dataset {
            c.dataset = Some(v.clone());
        }
        let t = &mut c.train;
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag {
                    $field = v;
                }
            };
        }
        set!(args.cycles, t.cycles);
        set!(args.da_iters, t.da_iters_per_cycle);
        set!(args.recon_iters, t.recon_iters_per_cycle);
        set!(args.batch_size, t.batch_size);
        set!(args.learning_rate, t.learning_rate);
        set!(args.seed, t.seed);
        set!(args.image_size, t.image_size);
        set!(args.azimuth_sigma, c.perturb.azimuth_sigma);
        set!(args.brightness_sigma, c.perturb.brightness_sigma);
        set!(args.perturb_seed, c.perturb.seed);
        if c.dataset.is_none() {
            return Err(CliError::Usage("no dataset given (use --dataset or set `dataset` in the config)".into()));
        }
        if c.name.is_empty() || c.name.contains(['/', '\\']) {
            return Err(CliError::Usage(format!("invalid run name '{}'", c.name)));
        }
        c.train.validate()?;
        c.perturb.validate()?;
        Ok(c)
    }

    pub fn run_dir(&self) -> PathBuf {
        output_root(self.output_root.as_deref()).join(&self.name)
    }
}

/// Parses `cube=10,sphere=5`.
pub fn parse_shapes(s: &str) -> CliResult<Vec<(Shape, usize)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|part| {
            let (name, n) = part
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("expected shape=count, got '{part}'")))?;
            let shape: Shape = name.trim().parse().map_err(CliError::Usage)?;
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("invalid count in '{part}'")))?;
            Ok((shape, n))
        })
        .collect()
}

pub fn resolve_toy_spec(args: &MakeDataArgs) -> CliResult<ToySpec> {
    let mut spec: ToySpec = match &args.config {
        Some(p) => read_toml(p)?,
        None => ToySpec::default(),
    };
    if let Some(s) = &args.shapes {
        spec.counts = parse_shapes(s)?;
    }
    if let Some(v) = args.image_size {
        spec.image_size = v;
    }
    if let Some(v) = &args.background {
        spec.background = v.clone();
    }
    if args.per_view_backgrounds {
        spec.per_view_backgrounds = true;
    }
    if let Some(v) = args.test_fraction {
        spec.test_fraction = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    spec.validate()?;
    Ok(spec)
}
