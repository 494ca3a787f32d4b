//! The `run`, `sweep`, `analyze` and `privacy` subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use robust_dsgd::privacy::{self, PrivacyParams, PrivacyReport};
use robust_dsgd::{MetricsLog, MixingAnalysis, RuleKind};
use toml::Value;

use crate::config::{ExperimentConfig, RawConfig, KEYS};
use crate::error::{CliError, Result};
use crate::experiment::Experiment;

pub const PRIVACY_HEADER: &str = "C,M,S,B,K,delta,epsilon,g,g_max,clamped";
pub const SUMMARY_HEADER: &str = "value,final_f_best,final_H,epsilon";
pub const TABLE_HEADER: &str = "C,K,epsilon,g,clamped";

/// Where the configuration comes from and how the command line modifies it.
#[derive(Debug, Clone, Default)]
pub struct Source {
    pub config: PathBuf,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Source {
    fn raw(&self) -> Result<RawConfig> {
        let mut raw = RawConfig::load(&self.config)?;
        for s in &self.sets {
            raw.apply_set(s)?;
        }
        if let Some(seed) = self.seed {
            raw.set_flag("run.seed", Value::Integer(seed as i64), "--seed");
        }
        if let Some(out) = &self.out {
            raw.set_flag("output.dir", Value::String(out.display().to_string()), "--out");
        }
        Ok(raw)
    }

    pub fn experiment(&self) -> Result<Experiment> {
        Experiment::build(ExperimentConfig::from_raw(self.raw()?)?)
    }
}

/// Final numbers of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub final_f_best: f64,
    pub final_h: f64,
    pub epsilon: f64,
    pub mixing: Option<MixingAnalysis>,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

pub fn privacy_csv(params: Option<&PrivacyParams>, report: &PrivacyReport, c: f64) -> String {
    let (m, s, b, k) = match params {
        Some(p) => (format!("{:.16e}", p.m), p.s.to_string(), p.b.to_string(), p.k.to_string()),
        None => Default::default(),
    };
    format!(
        "{PRIVACY_HEADER}\n{c:.16e},{m},{s},{b},{k},{:.16e},{:.16e},{},{},{}\n",
        report.delta,
        report.epsilon,
        opt(report.g_used),
        opt(report.g_max),
        report.clamped
    )
}

fn mixing_for(exp: &Experiment, kind: RuleKind) -> Result<MixingAnalysis> {
    let trials = exp.config.mixing_trials;
    let estimate = (trials > 0).then_some((trials, exp.config.seed));
    Ok(MixingAnalysis::compute(kind, &exp.run.topology, &exp.run.weights, exp.dim(), false, estimate)?)
}

/// Runs one experiment and writes its artifacts. Every declared file is read
/// back before returning.
pub fn run_experiment(exp: &Experiment) -> Result<RunOutcome> {
    let dir = exp.config.out_dir.clone();
    let reports = exp.config.reports;
    // analytical reports first, so a failure there costs no simulation time
    let mixing = reports.mixing.then(|| mixing_for(exp, exp.config.rule.kind())).transpose()?;
    let report = exp
        .privacy_report()
        .unwrap_or_else(|| PrivacyReport { epsilon: f64::NAN, ..PrivacyReport::without_noise(exp.config.delta) });

    let log = exp.engine()?.run()?;
    create_dir(&dir)?;
    write(&dir.join("topology.txt"), &exp.run.topology.to_listing())?;
    if reports.metrics {
        let path = dir.join("metrics.csv");
        write(&path, &log.to_csv())?;
        MetricsLog::from_csv(&read(&path)?)?;
    }
    if let Some(m) = &mixing {
        let path = dir.join("mixing.csv");
        write(&path, &format!("{}\n{}\n", MixingAnalysis::CSV_HEADER, m.csv_row()))?;
        expect_rows(&path, MixingAnalysis::CSV_HEADER, 1)?;
    }
    if reports.privacy {
        let path = dir.join("privacy.csv");
        write(&path, &privacy_csv(exp.privacy.as_ref(), &report, exp.config.noise_c))?;
        expect_rows(&path, PRIVACY_HEADER, 1)?;
    }
    let last = log.last().expect("a run records at least the initial row");
    Ok(RunOutcome { out_dir: dir, final_f_best: last.f_best, final_h: last.h, epsilon: report.epsilon, mixing })
}

fn expect_rows(path: &Path, header: &str, rows: usize) -> Result<()> {
    let text = read(path)?;
    let mut lines = text.lines();
    let cols = header.split(',').count();
    let ok =
        lines.next() == Some(header) && lines.clone().count() == rows && lines.all(|l| l.split(',').count() == cols);
    if ok {
        Ok(())
    } else {
        Err(CliError::Io { path: path.into(), source: std::io::Error::other("file did not read back as written") })
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Runs the configuration once per value of `axis`, each into
/// `<out>/<axis>=<value>/`, and writes `summary.csv` (plus `mixing.csv` when
/// the mixing report is selected) into `<out>`. The sweep value is applied
/// after every other override.
pub fn sweep(source: &Source, axis: &str, values: &[String]) -> Result<Vec<RunOutcome>> {
    if !KEYS.contains(&axis) || axis.starts_with("output.") {
        return Err(CliError::Config(format!("unknown sweep axis `{axis}`")));
    }
    if values.is_empty() {
        return Err(CliError::Config(format!("sweep over `{axis}` needs at least one value")));
    }
    let base = source.raw()?;
    let root = ExperimentConfig::from_raw(base.clone())?.out_dir;
    let mut outcomes = Vec::new();
    for value in values {
        let mut raw = base.clone();
        raw.apply_set(&format!("{axis}={value}"))?;
        let sub = root.join(format!("{axis}={value}").replace(['/', '\\', ' '], "_"));
        raw.set_flag("output.dir", Value::String(sub.display().to_string()), "sweep");
        let exp = Experiment::build(ExperimentConfig::from_raw(raw)?)?;
        outcomes.push(run_experiment(&exp)?);
    }

    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut mixing = format!("value,{}\n", MixingAnalysis::CSV_HEADER);
    for (value, o) in values.iter().zip(&outcomes) {
        let v = csv_field(value);
        let _ = writeln!(summary, "{v},{:.16e},{:.16e},{:.16e}", o.final_f_best, o.final_h, o.epsilon);
        if let Some(m) = &o.mixing {
            let _ = writeln!(mixing, "{v},{}", m.csv_row());
        }
    }
    create_dir(&root)?;
    write(&root.join("summary.csv"), &summary)?;
    if outcomes.iter().any(|o| o.mixing.is_some()) {
        write(&root.join("mixing.csv"), &mixing)?;
    }
    Ok(outcomes)
}

/// Mixing analysis for every rule on the configured topology. Rules whose
/// analytical preconditions fail are reported in the second list.
pub fn analyze(exp: &Experiment) -> Result<(String, Vec<String>)> {
    let mut csv = format!("{}\n", MixingAnalysis::CSV_HEADER);
    let mut skipped = Vec::new();
    for kind in [RuleKind::Mean, RuleKind::TrimmedMean, RuleKind::Scc, RuleKind::Ios] {
        match mixing_for(exp, kind) {
            Ok(m) => {
                let _ = writeln!(csv, "{}", m.csv_row());
            }
            Err(CliError::Core(e)) => skipped.push(format!("{kind}: {e}")),
            Err(e) => return Err(e),
        }
    }
    let dir = &exp.config.out_dir;
    create_dir(dir)?;
    write(&dir.join("analysis.csv"), &csv)?;
    write(&dir.join("topology.txt"), &exp.run.topology.to_listing())?;
    Ok((csv, skipped))
}

/// Privacy budgets over a grid of noise multipliers and iteration counts,
/// using the configured gradient bound, shard size, batch and `δ`.
pub fn privacy_table(exp: &Experiment, cs: &[f64], ks: &[u64]) -> Result<String> {
    let raw = &exp.config.raw;
    let m = exp.config.clip.ok_or_else(|| raw.error("privacy.M", "a gradient bound is needed for a finite budget"))?;
    let s = exp.run.topology.honest().iter().map(|&n| exp.task.shard_size(n)).min().unwrap_or(0) as u64;
    let b = exp.config.batch.map_or(s, |b| (b as u64).min(s));
    let cs = if cs.is_empty() { vec![exp.config.noise_c] } else { cs.to_vec() };
    let ks = if ks.is_empty() { vec![exp.config.rounds] } else { ks.to_vec() };
    let mut out = format!("{TABLE_HEADER}\n");
    for &c in &cs {
        for &k in &ks {
            let r = if c == 0.0 {
                PrivacyReport::without_noise(exp.config.delta)
            } else {
                let p = PrivacyParams::new(c, m, s, b, k, exp.config.delta)
                    .map_err(|e| CliError::Config(format!("C = {c}: {e}")))?;
                privacy::compose_and_convert(&p).map_err(|e| CliError::Config(format!("C = {c}, K = {k}: {e}")))?
            };
            let _ = writeln!(out, "{c},{k},{:.16e},{},{}", r.epsilon, opt(r.g_used), r.clamped);
        }
    }
    Ok(out)
}
