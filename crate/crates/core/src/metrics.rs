//! Per-round evaluation: disagreement, global loss and its running best,
//! test accuracy, and the CSV log.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tasks::{self, Dataset, SoftmaxLayout};
use crate::vector;

/// `H = (1/|R|) Σ_n ‖x_n − x̄‖²`.
pub fn disagreement(models: &[&[f64]]) -> f64 {
    if models.is_empty() {
        return 0.0;
    }
    let dim = models[0].len();
    let avg = vector::mean(models.iter().copied(), dim);
    models.iter().map(|m| vector::dist_sq(m, &avg)).sum::<f64>() / models.len() as f64
}

/// Prefix minimum of a series. Non-finite values never become the best; a
/// prefix with no finite value stays at `+∞`.
pub fn running_best(series: &[f64]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    series
        .iter()
        .map(|&v| {
            if v.is_finite() && v < best {
                best = v;
            }
            best
        })
        .collect()
}

/// Accuracy of a linear softmax model on a test set.
pub fn accuracy(layout: SoftmaxLayout, x: &[f64], test: &Dataset) -> Result<f64> {
    tasks::softmax_accuracy(layout, x, test)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite()).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub k: u64,
    /// Disagreement `H^k`.
    pub h: f64,
    /// `f(x̄^k)`.
    pub loss: f64,
    pub f_best: f64,
    /// `NaN` when the task has no test set.
    pub accuracy: f64,
    pub alpha: f64,
    pub sigma: f64,
}

/// Rows recorded at the evaluation cadence, with `k` strictly increasing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub const CSV_HEADER: &'static str = "k,H,loss,f_best,accuracy,alpha,sigma";

    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row, filling in `f_best` from the previous rows.
    pub fn record(&mut self, k: u64, h: f64, loss: f64, accuracy: f64, alpha: f64, sigma: f64) -> Result<()> {
        let prev = self.rows.last();
        if prev.is_some_and(|r| r.k >= k) {
            return Err(Error::invalid(format!("round {k} recorded out of order")));
        }
        let best_so_far = prev.map_or(f64::INFINITY, |r| r.f_best);
        let f_best = if loss.is_finite() { best_so_far.min(loss) } else { best_so_far };
        self.rows.push(MetricsRow { k, h, loss, f_best, accuracy, alpha, sigma });
        Ok(())
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// Row recorded at round `k`, if any.
    pub fn at(&self, k: u64) -> Option<&MetricsRow> {
        self.rows.binary_search_by_key(&k, |r| r.k).ok().map(|i| &self.rows[i])
    }

    /// CSV with 17 significant digits per float.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.k, r.h, r.loss, r.f_best, r.accuracy, r.alpha, r.sigma
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(Self::CSV_HEADER) {
            return Err(Error::invalid("metrics CSV has an unexpected header"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::invalid(format!("metrics CSV line {}: malformed row", i + 2));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(bad());
            }
            let k = fields[0].parse().map_err(|_| bad())?;
            let mut v = [0.0; 6];
            for (slot, f) in v.iter_mut().zip(&fields[1..]) {
                *slot = f.parse().map_err(|_| bad())?;
            }
            rows.push(MetricsRow { k, h: v[0], loss: v[1], f_best: v[2], accuracy: v[3], alpha: v[4], sigma: v[5] });
        }
        Ok(MetricsLog { rows })
    }
}
