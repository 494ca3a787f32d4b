//! Experiment configuration: a sectioned TOML document with a fixed set of
//! leaf keys, command-line overrides, and validation that points back at the
//! line (or flag) that set the offending value.
//!
//! Overrides are applied in the order given; a later write to the same key
//! wins. `--seed` is applied after every `--set`.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use robust_dsgd::aggregation::{ClipRadius, TrimCount};
use robust_dsgd::engine::Init;
use robust_dsgd::tasks::PartitionMode;
use robust_dsgd::{Attack, Rule, RuleKind, StepSchedule};
use toml::{Table, Value};

use crate::error::{CliError, Result};

/// Every leaf the configuration accepts, as `section.key`.
pub const KEYS: &[&str] = &[
    "topology.n",
    "topology.p",
    "topology.byzantine",
    "topology.seed",
    "topology.weights",
    "rule.name",
    "rule.q",
    "rule.tau",
    "attack.name",
    "attack.param",
    "task.name",
    "task.partition",
    "task.dim",
    "task.samples",
    "task.seed",
    "task.data_dir",
    "task.mu_reg",
    "task.bias",
    "noise.C",
    "schedule.kind",
    "schedule.mu",
    "schedule.k0",
    "schedule.a",
    "run.K",
    "run.B",
    "run.seed",
    "run.eval_every",
    "run.init",
    "run.init_std",
    "run.parallel",
    "privacy.delta",
    "privacy.M",
    "output.dir",
    "output.reports",
    "output.mixing_trials",
];

/// Where a value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Set,
    Flag(&'static str),
}

/// The parsed document before typing, with provenance per key.
#[derive(Debug, Clone)]
pub struct RawConfig {
    path: PathBuf,
    table: Table,
    origins: HashMap<String, Origin>,
}

impl RawConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let table: Table = toml::from_str(text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
        let mut raw = RawConfig { path: path.to_path_buf(), table: Table::new(), origins: HashMap::new() };
        let lines = key_lines(text);
        for (section, body) in table {
            let Value::Table(body) = body else {
                return Err(raw.error_at(&section, lines.get(&section).copied(), "expected a [section]"));
            };
            for (key, value) in body {
                let full = format!("{section}.{key}");
                let line = lines.get(&full).copied();
                if !KEYS.contains(&full.as_str()) {
                    return Err(raw.error_at(&full, line, "unknown key"));
                }
                raw.insert(&full, value, line.map_or(Origin::Set, Origin::Line));
            }
        }
        Ok(raw)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Directory relative paths in the document are resolved against.
    pub fn base_dir(&self) -> PathBuf {
        self.path.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    /// Applies `key=value`. The value is read as a TOML value when it parses
    /// as one and as a bare string otherwise.
    pub fn apply_set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set {assignment}: expected KEY=VALUE")))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(CliError::Config(format!("--set {key}: unknown key")));
        }
        self.insert(key, parse_value(value.trim()), Origin::Set);
        Ok(())
    }

    pub fn set_flag(&mut self, key: &str, value: Value, flag: &'static str) {
        self.insert(key, value, Origin::Flag(flag));
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        let (section, leaf) = key.split_once('.')?;
        self.table.get(section)?.as_table()?.get(leaf)
    }

    fn insert(&mut self, key: &str, value: Value, origin: Origin) {
        let (section, leaf) = key.split_once('.').expect("keys are section.leaf");
        let body = self.table.entry(section).or_insert_with(|| Value::Table(Table::new()));
        if let Value::Table(t) = body {
            t.insert(leaf.to_string(), value);
        }
        self.origins.insert(key.to_string(), origin);
    }

    /// `path:line: key`, `--set key`, or `path: key` for defaults.
    pub fn locate(&self, key: &str) -> String {
        match self.origins.get(key) {
            Some(Origin::Line(l)) => format!("{}:{l}: {key}", self.path.display()),
            Some(Origin::Set) => format!("--set {key}"),
            Some(Origin::Flag(f)) => format!("{f} ({key})"),
            None => format!("{}: {key} (default)", self.path.display()),
        }
    }

    pub fn error(&self, key: &str, msg: impl fmt::Display) -> CliError {
        CliError::Config(format!("{}: {msg}", self.locate(key)))
    }

    fn error_at(&self, key: &str, line: Option<usize>, msg: &str) -> CliError {
        match line {
            Some(l) => CliError::Config(format!("{}:{l}: {key}: {msg}", self.path.display())),
            None => CliError::Config(format!("{}: {key}: {msg}", self.path.display())),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Float(v)) => Ok(*v),
            Some(Value::Integer(v)) => Ok(*v as f64),
            Some(other) => Err(self.error(key, format!("expected a number, got {other}"))),
        }
    }

    fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|_| self.f64_or(key, 0.0)).transpose()
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Integer(v)) if *v >= 0 => Ok(*v as u64),
            Some(other) => Err(self.error(key, format!("expected a nonnegative integer, got {other}"))),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.u64_or(key, default as u64).map(|v| v as usize)
    }

    fn str_or<'a>(&'a self, key: &str, default: &'a str) -> Result<&'a str> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::String(s)) => Ok(s),
            Some(other) => Err(self.error(key, format!("expected a string, got {other}"))),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(other) => Err(self.error(key, format!("expected true or false, got {other}"))),
        }
    }

    fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                    other => Err(self.error(key, format!("expected agent ids, got {other}"))),
                })
                .collect(),
            Some(other) => Err(self.error(key, format!("expected a list of agent ids, got {other}"))),
        }
    }

    fn str_list(&self, key: &str, default: &[&str]) -> Result<Vec<String>> {
        match self.get(key) {
            None => Ok(default.iter().map(ToString::to_string).collect()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    other => Err(self.error(key, format!("expected strings, got {other}"))),
                })
                .collect(),
            Some(other) => Err(self.error(key, format!("expected a list of strings, got {other}"))),
        }
    }
}

fn parse_value(text: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

/// One-based line of every `section.key` assignment, found by a line scan of
/// the flat sectioned layout.
fn key_lines(text: &str) -> HashMap<String, usize> {
    let mut out = HashMap::new();
    let mut section = String::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            section = name.trim().to_string();
            out.entry(section.clone()).or_insert(i + 1);
        } else if let Some((key, _)) = line.split_once('=') {
            let key = key.trim().trim_matches('"');
            if !key.is_empty() && !key.starts_with('#') {
                out.entry(format!("{section}.{key}")).or_insert(i + 1);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    Metropolis,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologySpec {
    pub n: usize,
    pub p: f64,
    pub byzantine: Vec<usize>,
    pub seed: u64,
    pub weights: WeightScheme,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpec {
    Quadratic { dim: usize, samples: usize, seed: u64 },
    Mnist { data_dir: PathBuf, partition: PartitionMode, mu_reg: f64, bias: bool, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Reports {
    pub metrics: bool,
    pub mixing: bool,
    pub privacy: bool,
}

/// A fully typed configuration. Cross-module preconditions are checked when
/// the experiment is built.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub topology: TopologySpec,
    pub rule: Rule,
    pub attack: Attack,
    pub task: TaskSpec,
    pub noise_c: f64,
    pub schedule: StepSchedule,
    pub rounds: u64,
    /// `None` means full batch.
    pub batch: Option<usize>,
    pub seed: u64,
    pub eval_every: u64,
    pub init: Init,
    pub parallel: bool,
    pub delta: f64,
    /// Gradient clip and sensitivity bound; `None` disables clipping.
    pub clip: Option<f64>,
    pub out_dir: PathBuf,
    pub reports: Reports,
    pub mixing_trials: usize,
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        let r = &raw;
        let weights = match r.str_or("topology.weights", "metropolis")? {
            "metropolis" => WeightScheme::Metropolis,
            "uniform" => WeightScheme::Uniform,
            other => return Err(r.error("topology.weights", format!("unknown scheme `{other}`"))),
        };
        let topology = TopologySpec {
            n: r.usize_or("topology.n", 12)?,
            p: r.f64_or("topology.p", 1.0)?,
            byzantine: r.usize_list("topology.byzantine")?,
            seed: r.u64_or("topology.seed", 1)?,
            weights,
        };

        let kind = RuleKind::parse(r.str_or("rule.name", "mean")?).map_err(|e| r.error("rule.name", e))?;
        let q = match r.get("rule.q") {
            None => TrimCount::ByzantineNeighbors,
            Some(Value::String(s)) if s == "byz" => TrimCount::ByzantineNeighbors,
            Some(Value::Integer(q)) if *q >= 0 => TrimCount::Global(*q as usize),
            Some(other) => return Err(r.error("rule.q", format!("expected a count or \"byz\", got {other}"))),
        };
        let tau = match r.get("rule.tau") {
            None => ClipRadius::Oracle,
            Some(Value::String(s)) if s == "oracle" => ClipRadius::Oracle,
            Some(Value::Float(_) | Value::Integer(_)) => ClipRadius::Constant(r.f64_or("rule.tau", 0.0)?),
            Some(other) => return Err(r.error("rule.tau", format!("expected a radius or \"oracle\", got {other}"))),
        };
        let rule = match kind {
            RuleKind::Mean => Rule::Mean,
            RuleKind::TrimmedMean => Rule::TrimmedMean { q },
            RuleKind::Scc => Rule::Scc { tau },
            RuleKind::Ios => Rule::Ios { q },
        };

        let attack = Attack::parse(r.str_or("attack.name", "none")?, r.opt_f64("attack.param")?)
            .map_err(|e| r.error(if r.get("attack.param").is_some() { "attack.param" } else { "attack.name" }, e))?;

        let task_seed = r.u64_or("task.seed", 1)?;
        let task = match r.str_or("task.name", "quadratic")? {
            "quadratic" => TaskSpec::Quadratic {
                dim: r.usize_or("task.dim", 10)?,
                samples: r.usize_or("task.samples", 50)?,
                seed: task_seed,
            },
            "mnist" => {
                let dir = r.str_or("task.data_dir", "")?;
                if dir.is_empty() {
                    return Err(r.error("task.data_dir", "required for the mnist task"));
                }
                let partition = PartitionMode::parse(r.str_or("task.partition", "iid")?)
                    .map_err(|e| r.error("task.partition", e))?;
                TaskSpec::Mnist {
                    data_dir: r.base_dir().join(dir),
                    partition,
                    mu_reg: r.f64_or("task.mu_reg", robust_dsgd::SoftmaxTask::DEFAULT_MU_REG)?,
                    bias: r.bool_or("task.bias", true)?,
                    seed: task_seed,
                }
            }
            other => return Err(r.error("task.name", format!("unknown task `{other}` (expected quadratic or mnist)"))),
        };

        let schedule = match r.str_or("schedule.kind", "sqrt")? {
            "theoretical" => StepSchedule::theoretical(
                r.f64_or("schedule.mu", 1.0)?,
                r.f64_or("schedule.k0", StepSchedule::DEFAULT_K0)?,
            ),
            "sqrt" => StepSchedule::sqrt(r.f64_or("schedule.a", 0.9)?),
            other => return Err(r.error("schedule.kind", format!("unknown schedule `{other}`"))),
        }
        .map_err(|e| r.error("schedule.kind", e))?;

        let batch = match r.get("run.B") {
            None => None,
            Some(Value::String(s)) if s == "full" => None,
            Some(Value::Integer(b)) if *b > 0 => Some(*b as usize),
            Some(other) => {
                return Err(r.error("run.B", format!("expected a positive batch size or \"full\", got {other}")))
            }
        };
        let init = match r.str_or("run.init", "zero")? {
            "zero" => Init::Zero,
            "gaussian" => Init::Gaussian { std: r.f64_or("run.init_std", 1.0)? },
            other => return Err(r.error("run.init", format!("unknown init `{other}`"))),
        };
        let eval_every = r.u64_or("run.eval_every", 10)?;
        if eval_every == 0 {
            return Err(r.error("run.eval_every", "must be positive"));
        }

        let noise_c = r.f64_or("noise.C", 0.0)?;
        if !(noise_c >= 0.0 && noise_c.is_finite()) {
            return Err(r.error("noise.C", format!("must be a nonnegative number, got {noise_c}")));
        }
        let delta = r.f64_or("privacy.delta", 1e-4)?;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(r.error("privacy.delta", format!("must lie in (0, 1), got {delta}")));
        }
        let clip = r.opt_f64("privacy.M")?;
        if clip.is_some_and(|m| !(m > 0.0 && m.is_finite())) {
            return Err(r.error("privacy.M", "must be positive"));
        }

        let mut reports = Reports::default();
        for name in r.str_list("output.reports", &["metrics", "mixing", "privacy"])? {
            match name.as_str() {
                "metrics" => reports.metrics = true,
                "mixing" => reports.mixing = true,
                "privacy" => reports.privacy = true,
                other => return Err(r.error("output.reports", format!("unknown report `{other}`"))),
            }
        }

        Ok(ExperimentConfig {
            topology,
            rule,
            attack,
            task,
            noise_c,
            schedule,
            rounds: r.u64_or("run.K", 1000)?,
            batch,
            seed: r.u64_or("run.seed", 0)?,
            eval_every,
            init,
            parallel: r.bool_or("run.parallel", false)?,
            delta,
            clip,
            out_dir: PathBuf::from(r.str_or("output.dir", "out")?),
            reports,
            mixing_trials: r.usize_or("output.mixing_trials", 0)?,
            raw,
        })
    }

    /// Loads `path`, applies `--set` assignments in order, then the optional
    /// seed and output-directory flags.
    pub fn load(path: &Path, sets: &[String], seed: Option<u64>, out: Option<&Path>) -> Result<Self> {
        let mut raw = RawConfig::load(path)?;
        for s in sets {
            raw.apply_set(s)?;
        }
        if let Some(seed) = seed {
            raw.set_flag("run.seed", Value::Integer(seed as i64), "--seed");
        }
        if let Some(out) = out {
            raw.set_flag("output.dir", Value::String(out.display().to_string()), "--out");
        }
        Self::from_raw(raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_raw(RawConfig::parse(text, Path::new("exp.toml"))?)
    }

    #[test]
    fn defaults_fill_missing_keys() {
        let cfg = parse("[run]\nK = 5\n").unwrap();
        assert_eq!(cfg.rounds, 5);
        assert_eq!(cfg.rule, Rule::Mean);
        assert_eq!(cfg.batch, None);
        assert!(cfg.reports.metrics && cfg.reports.mixing && cfg.reports.privacy);
    }

    #[test]
    fn errors_name_the_line() {
        let err = parse("[topology]\nn = 12\n\n[rule]\nname = \"krum\"\n").unwrap_err().to_string();
        assert!(err.starts_with("exp.toml:5: rule.name:"), "{err}");
        let err = parse("[run]\nK = 5\nbogus = 1\n").unwrap_err().to_string();
        assert!(err.starts_with("exp.toml:3: run.bogus: unknown key"), "{err}");
        let err = parse("[noise]\nC = -1\n").unwrap_err().to_string();
        assert!(err.starts_with("exp.toml:2: noise.C"), "{err}");
    }

    #[test]
    fn overrides_compose_left_to_right() {
        let mut raw = RawConfig::parse("[noise]\nC = 2.0\n", Path::new("exp.toml")).unwrap();
        raw.apply_set("noise.C=3").unwrap();
        raw.apply_set("noise.C=0.5").unwrap();
        raw.apply_set("rule.name=ios").unwrap();
        raw.apply_set("topology.byzantine=[1, 4]").unwrap();
        let cfg = ExperimentConfig::from_raw(raw).unwrap();
        assert_eq!(cfg.noise_c, 0.5);
        assert_eq!(cfg.rule.kind(), RuleKind::Ios);
        assert_eq!(cfg.topology.byzantine, vec![1, 4]);
        let err = ExperimentConfig::from_raw({
            let mut raw = RawConfig::parse("", Path::new("exp.toml")).unwrap();
            raw.apply_set("noise.C=-2").unwrap();
            raw
        })
        .unwrap_err();
        assert!(err.to_string().starts_with("--set noise.C"), "{err}");
    }

    #[test]
    fn unknown_override_key_is_rejected() {
        let mut raw = RawConfig::parse("", Path::new("exp.toml")).unwrap();
        assert!(raw.apply_set("noise.sigma=1").is_err());
        assert!(raw.apply_set("noise.C").is_err());
    }

    #[test]
    fn parameter_spellings() {
        let cfg = parse("[rule]\nname = \"tm\"\nq = 2\n[run]\nB = 32\n").unwrap();
        assert_eq!(cfg.rule, Rule::TrimmedMean { q: TrimCount::Global(2) });
        assert_eq!(cfg.batch, Some(32));
        let cfg = parse("[rule]\nname = \"scc\"\ntau = 0.5\n").unwrap();
        assert_eq!(cfg.rule, Rule::Scc { tau: ClipRadius::Constant(0.5) });
        let cfg = parse("[rule]\nname = \"scc\"\ntau = \"oracle\"\n").unwrap();
        assert_eq!(cfg.rule, Rule::Scc { tau: ClipRadius::Oracle });
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse("[run]\nK = = 5\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
