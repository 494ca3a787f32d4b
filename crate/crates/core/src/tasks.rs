//! Learning tasks: a strongly convex quadratic with a closed-form optimum and
//! softmax regression on MNIST-style data, plus data partitioning and the
//! IDX file loader.

use std::fs;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::vector;

pub const NUM_CLASSES: usize = 10;

/// A local objective `f_n` for every honest agent.
///
/// Batch indices are positions inside the agent's own shard.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn shard_size(&self, agent: usize) -> usize;

    /// Mean gradient of `f_n` over the given shard positions.
    fn batch_gradient(&self, agent: usize, x: &[f64], batch: &[usize]) -> Result<Vec<f64>>;

    /// `f_n(x)` over the agent's whole shard.
    fn shard_loss(&self, agent: usize, x: &[f64]) -> f64;

    /// Test accuracy, if the task has a notion of it.
    fn accuracy(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// `f(x) = (1/|R|) Σ_n f_n(x)` over the given honest agents.
pub fn global_loss(task: &dyn Objective, honest: &[usize], x: &[f64]) -> f64 {
    let total: f64 = honest.par_iter().map(|&n| task.shard_loss(n, x)).sum();
    total / honest.len() as f64
}

/// `f_n(x; ξ) = ½‖x − ξ‖²`, so `μ = 1` and the global optimum is the mean
/// of the honest agents' shard means.
#[derive(Debug, Clone)]
pub struct QuadraticTask {
    dim: usize,
    /// Samples per agent id; empty for Byzantine agents.
    samples: Vec<Vec<Vec<f64>>>,
    honest: Vec<usize>,
}

impl QuadraticTask {
    pub fn new(dim: usize, samples: Vec<Vec<Vec<f64>>>, honest: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("quadratic task needs a positive dimension"));
        }
        if honest.is_empty() {
            return Err(Error::invalid("quadratic task needs at least one honest agent"));
        }
        for &n in &honest {
            let shard = samples.get(n).ok_or_else(|| Error::invalid(format!("no samples for agent {n}")))?;
            if shard.is_empty() {
                return Err(Error::invalid(format!("agent {n} has an empty shard")));
            }
            if shard.iter().any(|s| s.len() != dim || s.iter().any(|v| !v.is_finite())) {
                return Err(Error::invalid(format!("agent {n} has a malformed sample")));
            }
        }
        Ok(QuadraticTask { dim, samples, honest })
    }

    /// Heterogeneous synthetic data: agent `n` draws its samples around a
    /// private centre `c_n ~ N(4·1, 4 I)` with unit noise.
    pub fn synthetic(num_agents: usize, honest: &[usize], dim: usize, per_agent: usize, seed: u64) -> Result<Self> {
        if per_agent == 0 {
            return Err(Error::invalid("need at least one sample per agent"));
        }
        let mut samples = vec![Vec::new(); num_agents];
        for &n in honest {
            if n >= num_agents {
                return Err(Error::invalid(format!("honest id {n} out of range")));
            }
            let mut rng = rng::stream(seed, Purpose::Dataset, 0, n as u64, 0);
            let centre: Vec<f64> = (0..dim)
                .map(|_| 4.0 + 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>();
            samples[n] = (0..per_agent)
                .map(|_| centre.iter().map(|c| c + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect())
                .collect();
        }
        Self::new(dim, samples, honest.to_vec())
    }

    pub fn samples(&self, agent: usize) -> &[Vec<f64>] {
        &self.samples[agent]
    }

    pub fn honest(&self) -> &[usize] {
        &self.honest
    }

    /// Closed-form minimiser of the global loss.
    pub fn optimum(&self) -> Vec<f64> {
        let means: Vec<Vec<f64>> =
            self.honest.iter().map(|&n| vector::mean(self.samples[n].iter().map(|s| s.as_slice()), self.dim)).collect();
        vector::mean(means.iter().map(|m| m.as_slice()), self.dim)
    }

    pub fn optimal_loss(&self) -> f64 {
        global_loss(self, &self.honest, &self.optimum())
    }
}

/// `x − mean(batch)`, the gradient of the quadratic loss.
pub fn quadratic_grad(x: &[f64], batch: &[&[f64]]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mean = vector::mean(batch.iter().copied(), x.len());
    Ok(vector::sub(x, &mean))
}

impl Objective for QuadraticTask {
    fn dim(&self) -> usize {
        self.dim
    }

    fn shard_size(&self, agent: usize) -> usize {
        self.samples.get(agent).map_or(0, Vec::len)
    }

    fn batch_gradient(&self, agent: usize, x: &[f64], batch: &[usize]) -> Result<Vec<f64>> {
        let shard = &self.samples[agent];
        let picked: Vec<&[f64]> = batch.iter().map(|&i| shard[i].as_slice()).collect();
        quadratic_grad(x, &picked)
    }

    fn shard_loss(&self, agent: usize, x: &[f64]) -> f64 {
        let shard = &self.samples[agent];
        shard.iter().map(|s| 0.5 * vector::dist_sq(x, s)).sum::<f64>() / shard.len() as f64
    }
}

/// Labelled feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u8>,
    d_in: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<u8>, d_in: usize) -> Result<Self> {
        if d_in == 0 || features.len() != labels.len() * d_in {
            return Err(Error::invalid(format!(
                "{} features do not form {} rows of width {d_in}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::invalid(format!("label {bad} out of range")));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature in sample {}", i / d_in)));
        }
        Ok(Dataset { features, labels, d_in })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.d_in..(i + 1) * self.d_in]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Parameter layout of a linear softmax model: class `c` owns the contiguous
/// block `x[c·stride .. (c+1)·stride]`, with the bias last when present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SoftmaxLayout {
    pub d_in: usize,
    pub bias: bool,
}

impl SoftmaxLayout {
    pub fn stride(&self) -> usize {
        self.d_in + usize::from(self.bias)
    }

    pub fn dim(&self) -> usize {
        NUM_CLASSES * self.stride()
    }

    fn logits(&self, x: &[f64], feature: &[f64]) -> [f64; NUM_CLASSES] {
        let stride = self.stride();
        let mut out = [0.0; NUM_CLASSES];
        for (c, z) in out.iter_mut().enumerate() {
            let block = &x[c * stride..(c + 1) * stride];
            *z = vector::dot(&block[..self.d_in], feature);
            if self.bias {
                *z += block[self.d_in];
            }
        }
        out
    }

    /// Class probabilities and log-probabilities, stabilised by subtracting
    /// the largest logit.
    fn softmax(&self, x: &[f64], feature: &[f64]) -> ([f64; NUM_CLASSES], [f64; NUM_CLASSES]) {
        let z = self.logits(x, feature);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = z.iter().map(|zc| (zc - max).exp()).sum();
        let lse = max + total.ln();
        let log_p = z.map(|zc| zc - lse);
        (log_p.map(f64::exp), log_p)
    }

    /// Predicted class; ties go to the lowest class id.
    pub fn predict(&self, x: &[f64], feature: &[f64]) -> usize {
        let z = self.logits(x, feature);
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if z[c] > z[best] {
                best = c;
            }
        }
        best
    }
}

/// Mean cross-entropy over `batch` plus `(μ_reg/2)‖x‖²`, and its gradient.
pub fn softmax_loss_grad(
    layout: SoftmaxLayout,
    x: &[f64],
    data: &Dataset,
    batch: &[usize],
    mu_reg: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if x.len() != layout.dim() || data.d_in() != layout.d_in {
        return Err(Error::invalid(format!("model has dimension {}, expected {}", x.len(), layout.dim())));
    }
    let stride = layout.stride();
    let mut grad = vec![0.0; x.len()];
    let mut loss = 0.0;
    for &i in batch {
        let feature = data.feature(i);
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature in sample {i}")));
        }
        let (p, log_p) = layout.softmax(x, feature);
        let y = data.label(i) as usize;
        loss -= log_p[y];
        for (c, pc) in p.iter().enumerate() {
            let coeff = pc - if c == y { 1.0 } else { 0.0 };
            let block = &mut grad[c * stride..(c + 1) * stride];
            vector::axpy(&mut block[..layout.d_in], coeff, feature);
            if layout.bias {
                block[layout.d_in] += coeff;
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    vector::scale(&mut grad, inv);
    vector::axpy(&mut grad, mu_reg, x);
    Ok((loss * inv + 0.5 * mu_reg * vector::norm_sq(x), grad))
}

/// Fraction of test samples whose predicted class is correct.
pub fn softmax_accuracy(layout: SoftmaxLayout, x: &[f64], data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if x.len() != layout.dim() || data.d_in() != layout.d_in {
        return Err(Error::invalid(format!("model has dimension {}, expected {}", x.len(), layout.dim())));
    }
    let correct = (0..data.len())
        .into_par_iter()
        .filter(|&i| layout.predict(x, data.feature(i)) == data.label(i) as usize)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Softmax regression with an `ℓ2` regulariser, which makes every `f_n`
/// `μ_reg`-strongly convex.
#[derive(Debug, Clone)]
pub struct SoftmaxTask {
    layout: SoftmaxLayout,
    train: Arc<Dataset>,
    test: Option<Arc<Dataset>>,
    partition: Partition,
    mu_reg: f64,
}

impl SoftmaxTask {
    pub const DEFAULT_MU_REG: f64 = 1e-2;

    pub fn new(
        train: Arc<Dataset>,
        test: Option<Arc<Dataset>>,
        partition: Partition,
        mu_reg: f64,
        bias: bool,
    ) -> Result<Self> {
        if !(mu_reg >= 0.0 && mu_reg.is_finite()) {
            return Err(Error::invalid(format!("mu_reg must be nonnegative, got {mu_reg}")));
        }
        if let Some(t) = &test {
            if t.d_in() != train.d_in() {
                return Err(Error::invalid("train and test feature widths differ"));
            }
        }
        if partition.shards.iter().flatten().any(|&i| i >= train.len()) {
            return Err(Error::invalid("partition refers to samples outside the training set"));
        }
        let layout = SoftmaxLayout { d_in: train.d_in(), bias };
        Ok(SoftmaxTask { layout, train, test, partition, mu_reg })
    }

    pub fn layout(&self) -> SoftmaxLayout {
        self.layout
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn mu_reg(&self) -> f64 {
        self.mu_reg
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }
}

impl Objective for SoftmaxTask {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn shard_size(&self, agent: usize) -> usize {
        self.partition.shards.get(agent).map_or(0, Vec::len)
    }

    fn batch_gradient(&self, agent: usize, x: &[f64], batch: &[usize]) -> Result<Vec<f64>> {
        let shard = &self.partition.shards[agent];
        let idx: Vec<usize> = batch.iter().map(|&i| shard[i]).collect();
        Ok(softmax_loss_grad(self.layout, x, &self.train, &idx, self.mu_reg)?.1)
    }

    fn shard_loss(&self, agent: usize, x: &[f64]) -> f64 {
        let shard = &self.partition.shards[agent];
        let ce: f64 =
            shard.iter().map(|&i| -self.layout.softmax(x, self.train.feature(i)).1[self.train.label(i) as usize]).sum();
        ce / shard.len() as f64 + 0.5 * self.mu_reg * vector::norm_sq(x)
    }

    fn accuracy(&self, x: &[f64]) -> Option<f64> {
        self.test.as_ref().and_then(|t| softmax_accuracy(self.layout, x, t).ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    /// Seeded shuffle, then equal contiguous split.
    Iid,
    /// The i-th honest agent receives every sample of class i.
    NonIid,
}

impl PartitionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(PartitionMode::Iid),
            "noniid" | "non-iid" => Ok(PartitionMode::NonIid),
            other => Err(Error::invalid(format!("unknown partition `{other}`"))),
        }
    }
}

/// Sample indices held by each agent id. Byzantine agents hold nothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub mode: PartitionMode,
    pub shards: Vec<Vec<usize>>,
}

pub fn make_partition(
    labels: &[u8],
    num_agents: usize,
    honest: &[usize],
    mode: PartitionMode,
    seed: u64,
) -> Result<Partition> {
    if honest.is_empty() || honest.iter().any(|&n| n >= num_agents) {
        return Err(Error::invalid("honest ids must be nonempty and in range"));
    }
    let mut shards = vec![Vec::new(); num_agents];
    match mode {
        PartitionMode::Iid => {
            if labels.len() < honest.len() {
                return Err(Error::invalid(format!("{} samples cannot cover {} agents", labels.len(), honest.len())));
            }
            let mut order: Vec<usize> = (0..labels.len()).collect();
            order.shuffle(&mut rng::stream(seed, Purpose::Partition, 0, 0, 0));
            let (base, extra) = (labels.len() / honest.len(), labels.len() % honest.len());
            let mut start = 0;
            for (i, &n) in honest.iter().enumerate() {
                let len = base + usize::from(i < extra);
                shards[n] = order[start..start + len].to_vec();
                start += len;
            }
        }
        PartitionMode::NonIid => {
            if honest.len() != NUM_CLASSES {
                return Err(Error::invalid(format!(
                    "non-iid partition needs exactly {NUM_CLASSES} honest agents, got {}",
                    honest.len()
                )));
            }
            for (class, &n) in honest.iter().enumerate() {
                shards[n] = (0..labels.len()).filter(|&i| labels[i] as usize == class).collect();
                if shards[n].is_empty() {
                    return Err(Error::invalid(format!("no samples of class {class}")));
                }
            }
        }
    }
    Ok(Partition { mode, shards })
}

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

/// Reads a file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format { offset: bytes.len() as u64, message: "truncated header".into() })
}

/// Parses an IDX image file: `(rows, cols, pixels scaled to [0, 1])`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("image magic {magic:#010x}, expected 0x00000803") });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let payload = &bytes[16..];
    let need = count * rows * cols;
    if payload.len() < need {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated pixels: header declares {need} bytes, found {}", payload.len()),
        });
    }
    let pixels = payload[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((rows, cols, pixels))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format { offset: 0, message: format!("label magic {magic:#010x}, expected 0x00000801") });
    }
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated labels: header declares {count}, found {}", payload.len()),
        });
    }
    Ok(payload[..count].to_vec())
}

/// Loads a pair of IDX files (optionally gzipped) into a dataset.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (rows, cols, pixels) = parse_idx_images(&read_maybe_gz(images)?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels)?)?;
    let d_in = rows * cols;
    if d_in == 0 || pixels.len() / d_in != labels.len() {
        return Err(Error::Format {
            offset: 4,
            message: format!("{} images but {} labels", pixels.len() / d_in.max(1), labels.len()),
        });
    }
    Dataset::new(pixels, labels, d_in).map_err(|e| Error::Format { offset: 8, message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Dataset {
        Dataset::new(vec![0.0, 1.0, 0.5, -1.0, 2.0, 0.0], vec![3, 0, 9], 2).unwrap()
    }

    #[test]
    fn quadratic_grad_examples() {
        let xi = [2.0, 0.0];
        assert_eq!(quadratic_grad(&[0.0, 0.0], &[&xi]).unwrap(), vec![-2.0, 0.0]);
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        assert_eq!(quadratic_grad(&[2.0, 3.0], &[&a, &b]).unwrap(), vec![0.0, 0.0]);
        assert!(quadratic_grad(&[0.0], &[]).is_err());
    }

    #[test]
    fn quadratic_two_agent_loss() {
        let t = QuadraticTask::new(1, vec![vec![vec![0.0]], vec![vec![2.0]]], vec![0, 1]).unwrap();
        assert_eq!(global_loss(&t, &[0, 1], &[1.0]), 0.5);
        assert_eq!(t.optimum(), vec![1.0]);
    }

    #[test]
    fn softmax_uniform_at_zero() {
        let d = fixture();
        let layout = SoftmaxLayout { d_in: 2, bias: true };
        let (loss, _) = softmax_loss_grad(layout, &vec![0.0; layout.dim()], &d, &[0, 1, 2], 0.5).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_feature_gives_zero_data_gradient() {
        let d = Dataset::new(vec![0.0, 0.0], vec![4], 2).unwrap();
        let layout = SoftmaxLayout { d_in: 2, bias: false };
        let x: Vec<f64> = (0..layout.dim()).map(|i| i as f64 * 0.1).collect();
        let (_, g) = softmax_loss_grad(layout, &x, &d, &[0], 0.0).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn accuracy_ties_go_to_class_zero() {
        let feats: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let labels: Vec<u8> = (0..10).collect();
        let d = Dataset::new(feats, labels, 2).unwrap();
        let layout = SoftmaxLayout { d_in: 2, bias: true };
        assert_eq!(softmax_accuracy(layout, &vec![0.0; layout.dim()], &d).unwrap(), 0.1);
        assert!(softmax_accuracy(layout, &[0.0; 3], &d).is_err());
    }

    #[test]
    fn separable_fixture_is_classified() {
        let d = Dataset::new(vec![1.0, 0.0, 0.0, 1.0], vec![2, 7], 2).unwrap();
        let layout = SoftmaxLayout { d_in: 2, bias: false };
        let mut x = vec![0.0; layout.dim()];
        x[2 * 2] = 1.0; // class 2 reads feature 0
        x[7 * 2 + 1] = 1.0; // class 7 reads feature 1
        assert_eq!(softmax_accuracy(layout, &x, &d).unwrap(), 1.0);
    }

    #[test]
    fn iid_partition_is_even_and_disjoint() {
        let labels = vec![0u8; 100];
        let honest: Vec<usize> = (0..10).collect();
        let p = make_partition(&labels, 10, &honest, PartitionMode::Iid, 5).unwrap();
        assert!(p.shards.iter().all(|s| s.len() == 10));
        let mut all: Vec<usize> = p.shards.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(p, make_partition(&labels, 10, &honest, PartitionMode::Iid, 5).unwrap());
    }

    #[test]
    fn noniid_needs_ten_agents() {
        let labels: Vec<u8> = (0..50).map(|i| (i % 10) as u8).collect();
        let honest: Vec<usize> = (0..10).collect();
        let p = make_partition(&labels, 12, &honest, PartitionMode::NonIid, 0).unwrap();
        assert!(p.shards[3].iter().all(|&i| labels[i] == 3));
        assert!(p.shards[10].is_empty());
        assert!(make_partition(&labels, 12, &honest[..9], PartitionMode::NonIid, 0).is_err());
    }

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = vec![0, 0, 8, 3];
        for v in [count, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let pixels = [0u8, 255, 51, 102, 0, 0, 0, 255];
        let bytes = idx_images(4, 1, 2, &pixels);
        let (r, c, px) = parse_idx_images(&bytes).unwrap();
        assert_eq!((r, c), (1, 2));
        assert_eq!(px[1], 1.0);
        assert_eq!(px[2], 0.2);

        let mut labels = vec![0, 0, 8, 3];
        labels.extend_from_slice(&[0, 0, 0, 1, 7]);
        assert!(matches!(parse_idx_labels(&labels), Err(Error::Format { offset: 0, .. })));
        labels[3] = 1;
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![7]);

        let short = &bytes[..bytes.len() - 1];
        assert!(matches!(parse_idx_images(short), Err(Error::Format { offset: 23, .. })));
    }
}
