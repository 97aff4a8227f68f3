//! Training configuration resolved from flags, a `key=value` file and defaults.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use difftensor::model::ModelSpec;
use difftensor::ode::{SolverConfig, Terms};
use difftensor::train::{SamplerMode, TrainConfig};

use crate::CliError;

/// Comma-separated layer widths; the empty string means no hidden layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Widths(pub Vec<usize>);

impl FromStr for Widths {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Widths(Vec::new()));
        }
        s.split(',')
            .map(|w| match w.trim().parse::<usize>() {
                Ok(0) | Err(_) => Err(format!("bad layer width {w:?}")),
                Ok(n) => Ok(n),
            })
            .collect::<Result<_, _>>()
            .map(Widths)
    }
}

impl fmt::Display for Widths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Every training knob that flags or the config file may set.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct TrainFlags {
    /// Key=value file with defaults for any of these options.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training observations (CSV: index columns, time, value).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Held-out observations scored after every epoch.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Output directory for the checkpoint, history and resolved config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of modes; inferred from the column count when omitted.
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Embedding rank.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs without improvement before the learning rate decays.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    #[arg(long)]
    pub max_lr: Option<f64>,
    /// RK4 steps per unit of model time.
    #[arg(long)]
    pub substeps: Option<usize>,
    /// Hidden widths of each per-mode reaction network, e.g. "10".
    #[arg(long)]
    pub reaction_hidden: Option<Widths>,
    /// Hidden widths of the readout network, e.g. "50,50".
    #[arg(long)]
    pub readout_hidden: Option<Widths>,
    /// Drop the reaction term.
    #[arg(long)]
    pub diffusion_only: bool,
    /// Drop the diffusion term.
    #[arg(long)]
    pub reaction_only: bool,
    /// Map training timestamps onto [0, 1].
    #[arg(long)]
    pub rescale_time: Option<bool>,
    /// Mini-batch scheme: stratified or naive.
    #[arg(long)]
    pub sampler: Option<String>,
    /// Use N/B weights with stratified batches.
    #[arg(long)]
    pub unweighted: bool,
    /// Print progress every this many epochs (0 for never).
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Also save the checkpoint every this many epochs (0 for only at the end).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub out: PathBuf,
    pub order: Option<usize>,
    pub rescale_time: bool,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub model: ModelSpec,
    pub training: TrainConfig,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `key=value` lines; `#` starts a comment and dashes in keys become underscores.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| usage(format!("config line {}: expected key=value", i + 1)))?;
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}

struct Layers {
    file: BTreeMap<String, String>,
}

impl Layers {
    fn take<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        let from_file = self.file.remove(key);
        if flag.is_some() {
            return Ok(flag);
        }
        from_file.map(|v| v.parse::<T>().map_err(|e| usage(format!("config key {key}: {e}")))).transpose()
    }

    fn pick<T: FromStr>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.take(key, flag)?.unwrap_or(default))
    }

    fn switch(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        self.pick(key, flag.then_some(true), false)
    }
}

impl RunConfig {
    pub fn resolve(flags: TrainFlags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
                parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };
        let mut l = Layers { file };
        let dm = ModelSpec::default();
        let dt = TrainConfig::default();

        let train = l.take("train", flags.train)?.ok_or_else(|| usage("--train is required"))?;
        let test = l.take("test", flags.test)?;
        let out = l.take("out", flags.out)?.ok_or_else(|| usage("--out is required"))?;
        let order = l.take("order", flags.order)?;
        let diffusion_only = l.switch("diffusion_only", flags.diffusion_only)?;
        let reaction_only = l.switch("reaction_only", flags.reaction_only)?;
        let terms = Terms::from_flags(!reaction_only, !diffusion_only).map_err(|e| usage(e.to_string()))?;
        let substeps = l.pick("substeps", flags.substeps, dm.solver.substeps_per_unit)?;
        let model = ModelSpec {
            rank: l.pick("rank", flags.rank, dm.rank)?,
            reaction_hidden: l.pick("reaction_hidden", flags.reaction_hidden, Widths(dm.reaction_hidden))?.0,
            readout_hidden: l.pick("readout_hidden", flags.readout_hidden, Widths(dm.readout_hidden))?.0,
            terms,
            solver: SolverConfig::new(substeps).map_err(|e| usage(e.to_string()))?,
        };
        let sampler = l.pick("sampler", flags.sampler, dt.sampler.name().to_string())?;
        let training = TrainConfig {
            epochs: l.pick("epochs", flags.epochs, dt.epochs)?,
            batch_size: l.pick("batch_size", flags.batch_size, dt.batch_size)?,
            sampler: SamplerMode::parse(&sampler).map_err(|e| usage(e.to_string()))?,
            reweight: !l.switch("unweighted", flags.unweighted)?,
            lr: l.pick("lr", flags.lr, dt.lr)?,
            patience: l.pick("patience", flags.patience, dt.patience)?,
            decay: l.pick("decay", flags.decay, dt.decay)?,
            min_lr: l.pick("min_lr", flags.min_lr, dt.min_lr)?,
            max_lr: l.pick("max_lr", flags.max_lr, dt.max_lr)?,
            max_retries: dt.max_retries,
            seed: l.pick("seed", flags.seed, dt.seed)?,
        };
        let rescale_time = l.pick("rescale_time", flags.rescale_time, false)?;
        let log_every = l.pick("log_every", flags.log_every, 10)?;
        let checkpoint_every = l.pick("checkpoint_every", flags.checkpoint_every, 0)?;
        if let Some(key) = l.file.keys().next() {
            return Err(usage(format!("unknown config key {key:?}")));
        }
        if model.rank == 0 {
            return Err(usage("rank must be >= 1"));
        }
        if order == Some(0) {
            return Err(usage("order must be >= 1"));
        }
        training.validate().map_err(|e| usage(e.to_string()))?;
        Ok(Self { train, test, out, order, rescale_time, log_every, checkpoint_every, model, training })
    }

    /// The resolved configuration in the same `key=value` format it can be read from.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("train", self.train.display().to_string());
        if let Some(t) = &self.test {
            kv("test", t.display().to_string());
        }
        kv("out", self.out.display().to_string());
        if let Some(o) = self.order {
            kv("order", o.to_string());
        }
        let t = &self.training;
        kv("seed", t.seed.to_string());
        kv("rank", self.model.rank.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("epochs", t.epochs.to_string());
        kv("lr", t.lr.to_string());
        kv("patience", t.patience.to_string());
        kv("decay", t.decay.to_string());
        kv("min_lr", t.min_lr.to_string());
        kv("max_lr", t.max_lr.to_string());
        kv("substeps", self.model.solver.substeps_per_unit.to_string());
        kv("reaction_hidden", Widths(self.model.reaction_hidden.clone()).to_string());
        kv("readout_hidden", Widths(self.model.readout_hidden.clone()).to_string());
        kv("diffusion_only", (!self.model.terms.reaction()).to_string());
        kv("reaction_only", (!self.model.terms.diffusion()).to_string());
        kv("rescale_time", self.rescale_time.to_string());
        kv("sampler", t.sampler.name().to_string());
        kv("unweighted", (!t.reweight).to_string());
        kv("log_every", self.log_every.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_text()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}
