//! Flat `key = value` run configuration.
//!
//! One schema covers every command; each command reads the keys it needs.
//! Files are line-oriented text: `#` starts a comment, blank lines are
//! skipped, and each remaining line must be `key = value` for a known key.
//! Unknown keys are hard errors, never warnings, so a typo cannot silently
//! fall back to a default.
//!
//! [`RunConfig::echo`] renders the effective configuration (defaults with
//! every file and flag override applied) as sorted `key = value` lines.
//! The rendering round-trips: parsing an echo reproduces the config, and
//! echoing it again reproduces the bytes. Commands write it next to their
//! outputs so any run can be replayed exactly.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::chemprops::PropertyFn;
use crate::env::EnvConfig;
use crate::nets::{Aggregation, GcpnConfig};
use crate::trainer::PpoConfig;

/// Name of the effective-config file written to every output directory.
pub const ECHO_FILE: &str = "config.echo";

#[derive(Debug)]
pub enum ConfigError {
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// A line that is not `key = value` (after comment stripping).
    Parse { line: usize, detail: String },
    /// A key outside the schema.
    UnknownKey { line: usize, key: String },
    /// A known key whose value does not parse or fails validation.
    BadValue {
        line: usize,
        key: String,
        detail: String,
    },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, source } => {
                write!(f, "config file {}: {source}", path.display())
            }
            ConfigError::Parse { line, detail } => {
                write!(f, "config line {line}: {detail}")
            }
            ConfigError::UnknownKey { line, key } => {
                write!(f, "config line {line}: unknown key '{key}'")
            }
            ConfigError::BadValue { line, key, detail } => {
                write!(f, "config line {line}: key '{key}': {detail}")
            }
        }
    }
}

impl std::error::Error for ConfigError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            ConfigError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

/// Effective settings for one command invocation.
///
/// Every field corresponds to exactly one config key (the field name) and
/// has a working default, so an empty file is a valid configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // -- run identity ------------------------------------------------------
    /// Root seed; all randomness derives from it through named streams.
    pub seed: u64,
    /// Output directory for reports, checkpoints, molecule files, and the
    /// config echo.
    pub out: String,

    // -- inputs ------------------------------------------------------------
    /// Molecule corpus path (expert imitation, discriminator, anchors).
    pub corpus: Option<String>,
    /// Checkpoint path to load (warm start, generation, evaluation).
    pub checkpoint: Option<String>,
    /// Initial-molecule list for constrained runs: episodes reset from
    /// molecules sampled off this file instead of a bare atom.
    pub constrained: Option<String>,

    // -- objective ---------------------------------------------------------
    /// Property name: molecular_weight | logp_lite | penalized_logp_lite.
    pub property: String,
    /// Optional target band `LO:HI`; wraps the property so reward peaks
    /// inside the band.
    pub target: Option<(f64, f64)>,
    /// Explicit reward-scaling anchors `LO:HI`; default derives them from
    /// the corpus score range at startup.
    pub anchors: Option<(f64, f64)>,
    /// Similarity threshold for constrained evaluation.
    pub delta: f64,

    // -- environment -------------------------------------------------------
    pub atom_cap: usize,
    pub step_limit: usize,
    pub step_reward: f64,
    /// Pay +/-2 at termination for passing/failing the reactive-pattern
    /// blacklist.
    pub filter_rewards: bool,

    // -- reward channels ---------------------------------------------------
    /// Master switch: train a discriminator and mix its reward in.
    pub adversarial: bool,
    /// With `adversarial`: score every intermediate step (default), not
    /// just the final molecule.
    pub intermediate_adversarial: bool,
    /// With `adversarial`: score the final molecule.
    pub final_adversarial: bool,
    /// Interleave one expert-imitation step per training iteration.
    pub expert_imitation: bool,

    // -- network -----------------------------------------------------------
    pub layers: usize,
    pub embed_dim: usize,
    /// Aggregation across bond types: sum | mean | max | concat.
    pub agg: String,
    pub batch_norm: bool,

    // -- optimization ------------------------------------------------------
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub policy_lr: f64,
    pub expert_lr: f64,
    pub disc_lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub grad_clip: f64,
    pub episodes_per_iter: usize,
    pub iterations: usize,

    // -- command-specific --------------------------------------------------
    /// Molecules to sample (generate).
    pub count: usize,
    /// Expert-imitation epochs (pretrain).
    pub pretrain_epochs: usize,
    /// Independent restarts (hillclimb).
    pub restarts: usize,
    /// Extra checkpoint every N iterations; 0 keeps only initial, final,
    /// and last-good.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ppo = PpoConfig::default();
        let net = GcpnConfig::default();
        let env = EnvConfig::new(PropertyFn::MolecularWeight, (0.0, 1.0));
        RunConfig {
            seed: 0,
            out: "out".to_string(),
            corpus: None,
            checkpoint: None,
            constrained: None,
            property: "molecular_weight".to_string(),
            target: None,
            anchors: None,
            delta: 0.4,
            atom_cap: env.atom_cap,
            step_limit: env.step_limit,
            step_reward: env.step_reward,
            filter_rewards: env.filter_rewards,
            adversarial: false,
            intermediate_adversarial: true,
            final_adversarial: true,
            expert_imitation: false,
            layers: net.layers,
            embed_dim: net.embed_dim,
            agg: net.agg.name().to_string(),
            batch_norm: net.batch_norm,
            clip_epsilon: ppo.clip_epsilon,
            gamma: ppo.gamma,
            gae_lambda: ppo.gae_lambda,
            epochs: ppo.epochs,
            minibatch: ppo.minibatch,
            policy_lr: ppo.policy_lr,
            expert_lr: ppo.expert_lr,
            disc_lr: ppo.disc_lr,
            value_coef: ppo.value_coef,
            entropy_coef: ppo.entropy_coef,
            grad_clip: ppo.grad_clip,
            episodes_per_iter: ppo.episodes_per_iter,
            iterations: ppo.iterations,
            count: 100,
            pretrain_epochs: 100,
            restarts: 5,
            checkpoint_every: 0,
        }
    }
}

fn bad(line: usize, key: &str, detail: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        line,
        key: key.to_string(),
        detail: detail.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse()
        .map_err(|e| bad(line, key, format!("cannot parse '{v}': {e}")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(bad(line, key, format!("expected true or false, got '{other}'"))),
    }
}

/// `LO:HI` with both halves finite numbers.
fn parse_pair(line: usize, key: &str, v: &str) -> Result<(f64, f64), ConfigError> {
    let (lo, hi) = v
        .split_once(':')
        .ok_or_else(|| bad(line, key, format!("expected LO:HI, got '{v}'")))?;
    let lo: f64 = parse_num(line, key, lo.trim())?;
    let hi: f64 = parse_num(line, key, hi.trim())?;
    if !lo.is_finite() || !hi.is_finite() {
        return Err(bad(line, key, format!("bounds must be finite, got {lo}:{hi}")));
    }
    Ok((lo, hi))
}

fn render_pair((lo, hi): (f64, f64)) -> String {
    format!("{lo}:{hi}")
}

impl RunConfig {
    /// Parse a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::from_str_text(&text)
    }

    /// Parse config text on top of the defaults.
    pub fn from_str_text(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Apply `key = value` lines to this config. Later lines win.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let stripped = stripped.trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| ConfigError::Parse {
                line,
                detail: format!("expected 'key = value', got '{stripped}'"),
            })?;
            self.set(key.trim(), value.trim(), line)?;
        }
        Ok(())
    }

    /// Set one key from its text form. `line` is only for error messages;
    /// flag overrides pass 0.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = parse_num(line, key, value)?,
            "out" => self.out = value.to_string(),
            "corpus" => self.corpus = Some(value.to_string()),
            "checkpoint" => self.checkpoint = Some(value.to_string()),
            "constrained" => self.constrained = Some(value.to_string()),
            "property" => {
                PropertyFn::parse(value)
                    .map_err(|e| bad(line, key, e.to_string()))?;
                self.property = value.to_string();
            }
            "target" => {
                let (lo, hi) = parse_pair(line, key, value)?;
                if !(lo < hi) {
                    return Err(bad(line, key, format!("need LO < HI, got {lo}:{hi}")));
                }
                self.target = Some((lo, hi));
            }
            "anchors" => {
                let (lo, hi) = parse_pair(line, key, value)?;
                if !(lo < hi) {
                    return Err(bad(line, key, format!("need LO < HI, got {lo}:{hi}")));
                }
                self.anchors = Some((lo, hi));
            }
            "delta" => {
                let d: f64 = parse_num(line, key, value)?;
                if !(0.0..=1.0).contains(&d) {
                    return Err(bad(line, key, format!("must lie in [0,1], got {d}")));
                }
                self.delta = d;
            }
            "atom_cap" => self.atom_cap = parse_num(line, key, value)?,
            "step_limit" => self.step_limit = parse_num(line, key, value)?,
            "step_reward" => self.step_reward = parse_num(line, key, value)?,
            "filter_rewards" => self.filter_rewards = parse_bool(line, key, value)?,
            "adversarial" => self.adversarial = parse_bool(line, key, value)?,
            "intermediate_adversarial" => {
                self.intermediate_adversarial = parse_bool(line, key, value)?
            }
            "final_adversarial" => self.final_adversarial = parse_bool(line, key, value)?,
            "expert_imitation" => self.expert_imitation = parse_bool(line, key, value)?,
            "layers" => self.layers = parse_num(line, key, value)?,
            "embed_dim" => self.embed_dim = parse_num(line, key, value)?,
            "agg" => {
                Aggregation::parse(value).map_err(|e| bad(line, key, e.to_string()))?;
                self.agg = value.to_string();
            }
            "batch_norm" => self.batch_norm = parse_bool(line, key, value)?,
            "clip_epsilon" => self.clip_epsilon = parse_num(line, key, value)?,
            "gamma" => self.gamma = parse_num(line, key, value)?,
            "gae_lambda" => self.gae_lambda = parse_num(line, key, value)?,
            "epochs" => self.epochs = parse_num(line, key, value)?,
            "minibatch" => self.minibatch = parse_num(line, key, value)?,
            "policy_lr" => self.policy_lr = parse_num(line, key, value)?,
            "expert_lr" => self.expert_lr = parse_num(line, key, value)?,
            "disc_lr" => self.disc_lr = parse_num(line, key, value)?,
            "value_coef" => self.value_coef = parse_num(line, key, value)?,
            "entropy_coef" => self.entropy_coef = parse_num(line, key, value)?,
            "grad_clip" => self.grad_clip = parse_num(line, key, value)?,
            "episodes_per_iter" => self.episodes_per_iter = parse_num(line, key, value)?,
            "iterations" => self.iterations = parse_num(line, key, value)?,
            "count" => self.count = parse_num(line, key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_num(line, key, value)?,
            "restarts" => self.restarts = parse_num(line, key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(line, key, value)?,
            other => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: other.to_string(),
                })
            }
        }
        Ok(())
    }

    /// The effective configuration as sorted `key = value` lines. Optional
    /// keys that are unset are omitted; parsing the result reproduces this
    /// config, and echoing that reproduces these bytes.
    pub fn echo(&self) -> String {
        let mut entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("out", self.out.clone()),
            ("property", self.property.clone()),
            ("delta", self.delta.to_string()),
            ("atom_cap", self.atom_cap.to_string()),
            ("step_limit", self.step_limit.to_string()),
            ("step_reward", self.step_reward.to_string()),
            ("filter_rewards", self.filter_rewards.to_string()),
            ("adversarial", self.adversarial.to_string()),
            (
                "intermediate_adversarial",
                self.intermediate_adversarial.to_string(),
            ),
            ("final_adversarial", self.final_adversarial.to_string()),
            ("expert_imitation", self.expert_imitation.to_string()),
            ("layers", self.layers.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("agg", self.agg.clone()),
            ("batch_norm", self.batch_norm.to_string()),
            ("clip_epsilon", self.clip_epsilon.to_string()),
            ("gamma", self.gamma.to_string()),
            ("gae_lambda", self.gae_lambda.to_string()),
            ("epochs", self.epochs.to_string()),
            ("minibatch", self.minibatch.to_string()),
            ("policy_lr", self.policy_lr.to_string()),
            ("expert_lr", self.expert_lr.to_string()),
            ("disc_lr", self.disc_lr.to_string()),
            ("value_coef", self.value_coef.to_string()),
            ("entropy_coef", self.entropy_coef.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("episodes_per_iter", self.episodes_per_iter.to_string()),
            ("iterations", self.iterations.to_string()),
            ("count", self.count.to_string()),
            ("pretrain_epochs", self.pretrain_epochs.to_string()),
            ("restarts", self.restarts.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        if let Some(v) = &self.corpus {
            entries.push(("corpus", v.clone()));
        }
        if let Some(v) = &self.checkpoint {
            entries.push(("checkpoint", v.clone()));
        }
        if let Some(v) = &self.constrained {
            entries.push(("constrained", v.clone()));
        }
        if let Some(p) = self.target {
            entries.push(("target", render_pair(p)));
        }
        if let Some(p) = self.anchors {
            entries.push(("anchors", render_pair(p)));
        }
        entries.sort_by_key(|(k, _)| *k);
        let mut out = String::new();
        for (k, v) in entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Write the echo into `dir` as [`ECHO_FILE`].
    pub fn write_echo(&self, dir: &Path) -> Result<PathBuf, ConfigError> {
        let path = dir.join(ECHO_FILE);
        let io_err = |source| ConfigError::Io {
            path: path.clone(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io_err)?;
        let mut f = std::fs::File::create(&path).map_err(io_err)?;
        f.write_all(self.echo().as_bytes()).map_err(io_err)?;
        Ok(path)
    }

    // -- typed views -------------------------------------------------------

    /// The objective, with the target band applied when one is set.
    pub fn property_fn(&self) -> Result<PropertyFn, ConfigError> {
        let base = PropertyFn::parse(&self.property).map_err(|e| bad(0, "property", e.to_string()))?;
        match self.target {
            None => Ok(base),
            Some((lo, hi)) => PropertyFn::target_range(base, lo, hi)
                .map_err(|e| bad(0, "target", e.to_string())),
        }
    }

    /// Network architecture settings.
    pub fn net(&self) -> Result<GcpnConfig, ConfigError> {
        let cfg = GcpnConfig {
            layers: self.layers,
            embed_dim: self.embed_dim,
            agg: Aggregation::parse(&self.agg).map_err(|e| bad(0, "agg", e.to_string()))?,
            batch_norm: self.batch_norm,
            atom_cap: self.atom_cap,
        };
        cfg.validate().map_err(|e| bad(0, "layers", e.to_string()))?;
        Ok(cfg)
    }

    /// Optimization settings. The root seed rides along so training streams
    /// derive from it.
    pub fn ppo(&self) -> Result<PpoConfig, ConfigError> {
        let cfg = PpoConfig {
            clip_epsilon: self.clip_epsilon,
            gamma: self.gamma,
            gae_lambda: self.gae_lambda,
            epochs: self.epochs,
            minibatch: self.minibatch,
            policy_lr: self.policy_lr,
            expert_lr: self.expert_lr,
            disc_lr: self.disc_lr,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            grad_clip: self.grad_clip,
            episodes_per_iter: self.episodes_per_iter,
            iterations: self.iterations,
            seed: self.seed,
        };
        cfg.validate().map_err(|e| bad(0, "clip_epsilon", e.to_string()))?;
        Ok(cfg)
    }

    /// Environment settings. `anchors` must already be resolved (explicit
    /// key or derived from a corpus) because the environment needs concrete
    /// reward-scaling bounds.
    pub fn env(&self, anchors: (f64, f64)) -> Result<EnvConfig, ConfigError> {
        let property = self.property_fn()?;
        let mut cfg = EnvConfig::new(property, anchors);
        cfg.atom_cap = self.atom_cap;
        cfg.step_limit = self.step_limit;
        cfg.step_reward = self.step_reward;
        cfg.filter_rewards = self.filter_rewards;
        cfg.intermediate_adversarial = self.intermediate_adversarial;
        cfg.final_adversarial = self.final_adversarial;
        if self.atom_cap == 0 || self.step_limit == 0 {
            return Err(bad(
                0,
                "atom_cap",
                format!(
                    "atom_cap and step_limit must be positive (got {}, {})",
                    self.atom_cap, self.step_limit
                ),
            ));
        }
        Ok(cfg)
    }
}
