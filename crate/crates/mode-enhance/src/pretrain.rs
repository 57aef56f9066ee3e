//! Unsupervised initialization of the mixture.
//!
//! Clean log-spectrum frames are embedded by an autoencoder and clustered
//! with k-means; the cluster labels then supervise a warm start: the gate is
//! trained as a cluster classifier and each expert is trained on the frames
//! of its own cluster. Without this stage the gate tends to route
//! everything to one or two experts.

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::serial::{self, ArtifactKind};
use crate::nn::{mse, mse_grad, Activation, AdamConfig, AdamState, Mlp, MlpSpec};

#[derive(Debug, Clone)]
pub struct AutoencoderConfig {
    pub embedding_dim: usize,
    /// Encoder funnel widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self { embedding_dim: 16, hidden: vec![256, 64], epochs: 30, batch_size: 128, lr: 1e-3, seed: 0 }
    }
}

/// Encoder/decoder pair with a linear embedding layer.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub encoder: Mlp<f64>,
    pub decoder: Mlp<f64>,
    pub embedding_dim: usize,
    /// Reconstruction loss over the training frames after the final epoch.
    pub final_loss: f64,
}

impl Autoencoder {
    pub fn encode(&self, frames: &Array2<f64>) -> Result<Array2<f64>> {
        self.encoder.infer(frames)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        serial::write_header(&mut w, ArtifactKind::Autoencoder)?;
        serial::put_u64(&mut w, self.embedding_dim as u64)?;
        serial::put_f64(&mut w, self.final_loss)?;
        serial::put_mlp(&mut w, &self.encoder)?;
        serial::put_mlp(&mut w, &self.decoder)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            Error::Data(format!("cannot open autoencoder file {}: {e}", path.display()))
        })?;
        let mut r = BufReader::new(file);
        serial::read_header(&mut r, ArtifactKind::Autoencoder)?;
        let embedding_dim = serial::get_u64(&mut r)? as usize;
        let final_loss = serial::get_f64(&mut r)?;
        let encoder = serial::get_mlp(&mut r)?;
        let decoder = serial::get_mlp(&mut r)?;
        if encoder.output_dim() != embedding_dim || decoder.input_dim() != embedding_dim {
            return Err(Error::Format("autoencoder dimensions do not match header".into()));
        }
        Ok(Self { encoder, decoder, embedding_dim, final_loss })
    }
}

/// Trains an autoencoder on feature frames by Adam on the reconstruction
/// error. ReLU funnel, linear embedding and output.
pub fn train_autoencoder(frames: &Array2<f64>, cfg: &AutoencoderConfig) -> Result<Autoencoder> {
    let n = frames.nrows();
    if n < 10 * cfg.embedding_dim {
        return Err(Error::Data(format!(
            "autoencoder training needs at least {} frames, got {n}",
            10 * cfg.embedding_dim
        )));
    }
    let dim = frames.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let encoder_spec =
        MlpSpec::with_hidden(dim, &cfg.hidden, cfg.embedding_dim, Activation::Linear, false);
    let decoder_hidden: Vec<usize> = cfg.hidden.iter().rev().copied().collect();
    let decoder_spec =
        MlpSpec::with_hidden(cfg.embedding_dim, &decoder_hidden, dim, Activation::Linear, false);
    let mut encoder = Mlp::init(&encoder_spec, &mut rng);
    let mut decoder = Mlp::init(&decoder_spec, &mut rng);

    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut enc_state = AdamState::new(encoder.param_count(), adam);
    let mut dec_state = AdamState::new(decoder.param_count(), adam);

    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = frames.select(Axis(0), chunk);
            let (code, enc_cache) = encoder.forward(&batch, crate::nn::Mode::Train)?;
            let (recon, dec_cache) = decoder.forward(&code, crate::nn::Mode::Train)?;
            let grad = mse_grad(&recon, &batch)?;
            let dec_grads = decoder.backward(&dec_cache, &grad)?;
            let enc_grads = encoder.backward(&enc_cache, &dec_grads.input)?;

            let mut params = decoder.flatten_params();
            dec_state.step(&mut params, &dec_grads.flatten())?;
            decoder.set_flat_params(&params)?;
            let mut params = encoder.flatten_params();
            enc_state.step(&mut params, &enc_grads.flatten())?;
            encoder.set_flat_params(&params)?;
        }
    }

    let recon = decoder.infer(&encoder.infer(frames)?)?;
    let final_loss = mse(&recon, frames)?;
    Ok(Autoencoder { encoder, decoder, embedding_dim: cfg.embedding_dim, final_loss })
}

#[derive(Debug, Clone)]
pub struct KmeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self { restarts: 10, max_iters: 100, seed: 0 }
    }
}

/// Result of one k-means run: centroids, per-point labels and the
/// within-cluster sum of squares.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    pub wcss: f64,
    /// WCSS after each assignment step of the winning restart.
    pub wcss_history: Vec<f64>,
    /// Final WCSS of every restart, in run order.
    pub restart_wcss: Vec<f64>,
}

impl Clustering {
    pub fn num_clusters(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        serial::write_header(&mut w, ArtifactKind::Clustering)?;
        serial::put_array2(&mut w, &self.centroids)?;
        serial::put_u64(&mut w, self.labels.len() as u64)?;
        for &l in &self.labels {
            serial::put_u64(&mut w, l as u64)?;
        }
        serial::put_f64(&mut w, self.wcss)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            Error::Data(format!("cannot open clustering file {}: {e}", path.display()))
        })?;
        let mut r = BufReader::new(file);
        serial::read_header(&mut r, ArtifactKind::Clustering)?;
        let centroids = serial::get_array2(&mut r)?;
        let n = serial::get_u64(&mut r)? as usize;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let l = serial::get_u64(&mut r)? as usize;
            if l >= centroids.nrows() {
                return Err(Error::Format(format!("label {l} out of range")));
            }
            labels.push(l);
        }
        let wcss = serial::get_f64(&mut r)?;
        Ok(Self { centroids, labels, wcss, wcss_history: vec![], restart_wcss: vec![] })
    }
}

fn squared_distance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Nearest-centroid assignment; ties resolve to the lowest index.
pub fn assign_to_centroids(points: &Array2<f64>, centroids: &Array2<f64>) -> Vec<usize> {
    points
        .rows()
        .into_iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, c) in centroids.rows().into_iter().enumerate() {
                let d = squared_distance(p, c);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn kmeans_plusplus(points: &Array2<f64>, m: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((m, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));

    let mut min_d2: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|p| squared_distance(p, centroids.row(0)))
        .collect();
    for j in 1..m {
        let total: f64 = min_d2.iter().sum();
        let idx = if total <= 0.0 {
            // All points coincide with a centroid; any choice is equivalent.
            rng.random_range(0..n)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in min_d2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.row_mut(j).assign(&points.row(idx));
        for (i, p) in points.rows().into_iter().enumerate() {
            let d = squared_distance(p, centroids.row(j));
            if d < min_d2[i] {
                min_d2[i] = d;
            }
        }
    }
    centroids
}

fn lloyd(
    points: &Array2<f64>,
    mut centroids: Array2<f64>,
    max_iters: usize,
) -> (Array2<f64>, Vec<usize>, f64, Vec<f64>) {
    let m = centroids.nrows();
    let dim = points.ncols();
    let mut labels = vec![0usize; points.nrows()];
    let mut history = Vec::new();
    let mut prev_wcss = f64::INFINITY;
    for _ in 0..max_iters {
        labels = assign_to_centroids(points, &centroids);
        let wcss: f64 = points
            .rows()
            .into_iter()
            .zip(&labels)
            .map(|(p, &l)| squared_distance(p, centroids.row(l)))
            .sum();
        history.push(wcss);

        let mut sums = Array2::<f64>::zeros((m, dim));
        let mut counts = vec![0usize; m];
        for (p, &l) in points.rows().into_iter().zip(&labels) {
            sums.row_mut(l).scaled_add(1.0, &p);
            counts[l] += 1;
        }
        for (j, &count) in counts.iter().enumerate() {
            if count > 0 {
                let c = count as f64;
                centroids.row_mut(j).assign(&(&sums.row(j) / c));
            } else {
                // Re-seed an empty cluster at the point farthest from its
                // current centroid.
                let far = points
                    .rows()
                    .into_iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| {
                        squared_distance(*a, centroids.row(labels[0]))
                            .total_cmp(&squared_distance(*b, centroids.row(labels[0])))
                    })
                    .map(|(i, _)| i)
                    .expect("non-empty point set");
                centroids.row_mut(j).assign(&points.row(far));
            }
        }

        if (prev_wcss - wcss).abs() <= 1e-12 * wcss.max(1.0) {
            break;
        }
        prev_wcss = wcss;
    }
    let final_labels = assign_to_centroids(points, &centroids);
    let final_wcss: f64 = points
        .rows()
        .into_iter()
        .zip(&final_labels)
        .map(|(p, &l)| squared_distance(p, centroids.row(l)))
        .sum();
    history.push(final_wcss);
    (centroids, final_labels, final_wcss, history)
}

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs by
/// within-cluster sum of squares.
pub fn kmeans(points: &Array2<f64>, m: usize, cfg: &KmeansConfig) -> Result<Clustering> {
    if m == 0 {
        return Err(Error::Config("need at least one cluster".into()));
    }
    if points.nrows() < m {
        return Err(Error::Data(format!(
            "k-means needs at least {m} points, got {}",
            points.nrows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<Clustering> = None;
    let mut restart_wcss = Vec::with_capacity(cfg.restarts.max(1));
    for _ in 0..cfg.restarts.max(1) {
        let init = kmeans_plusplus(points, m, &mut rng);
        let (centroids, labels, wcss, history) = lloyd(points, init, cfg.max_iters);
        restart_wcss.push(wcss);
        if best.as_ref().is_none_or(|b| wcss < b.wcss) {
            best = Some(Clustering { centroids, labels, wcss, wcss_history: history, restart_wcss: vec![] });
        }
    }
    let mut clustering = best.expect("at least one restart");
    clustering.restart_wcss = restart_wcss;
    Ok(clustering)
}

/// Labels new frames by their nearest centroid in the embedded space.
pub fn assign_labels(
    autoencoder: &Autoencoder,
    clustering: &Clustering,
    frames: &Array2<f64>,
) -> Result<Vec<usize>> {
    let embedded = autoencoder.encode(frames)?;
    if embedded.ncols() != clustering.centroids.ncols() {
        return Err(Error::Dimension(format!(
            "embedding dim {} does not match centroid dim {}",
            embedded.ncols(),
            clustering.centroids.ncols()
        )));
    }
    Ok(assign_to_centroids(&embedded, &clustering.centroids))
}

/// Shared settings for the supervised warm-start loops.
#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 128, lr: 1e-3, seed: 0 }
    }
}

/// Trains the gate to predict cluster labels with cross-entropy.
/// Returns the final training accuracy.
pub fn pretrain_gate(
    gate: &mut Mlp<f64>,
    inputs: &Array2<f64>,
    labels: &[usize],
    cfg: &PretrainConfig,
) -> Result<f64> {
    if inputs.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} input rows but {} labels",
            inputs.nrows(),
            labels.len()
        )));
    }
    let m = gate.output_dim();
    if let Some(&bad) = labels.iter().find(|&&l| l >= m) {
        return Err(Error::Data(format!("label {bad} out of range for {m} experts")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(gate.param_count(), AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut order: Vec<usize> = (0..inputs.nrows()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = inputs.select(Axis(0), chunk);
            let (probs, cache) = gate.forward(&batch, crate::nn::Mode::Train)?;
            // Cross-entropy through the softmax: logit gradient (p - y) / B.
            let mut logit_grad = probs;
            let scale = 1.0 / chunk.len() as f64;
            for (row, &idx) in chunk.iter().enumerate() {
                logit_grad[[row, labels[idx]]] -= 1.0;
            }
            logit_grad.mapv_inplace(|v| v * scale);
            let grads = gate.backward_from_logits(&cache, &logit_grad)?;
            let mut params = gate.flatten_params();
            state.step(&mut params, &grads.flatten())?;
            gate.set_flat_params(&params)?;
            gate.commit_batchnorm(&cache);
        }
    }

    let probs = gate.infer(inputs)?;
    let correct = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &l)| {
            row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i) == Some(l)
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Outcome of the per-cluster expert warm start.
#[derive(Debug, Clone)]
pub struct ExpertPretrainReport {
    /// Experts whose cluster was empty; they fell back to the full dataset.
    pub fallback_experts: Vec<usize>,
    /// Final training loss of each expert on its own frames.
    pub per_expert_loss: Vec<f64>,
}

/// Trains expert `i` by mean squared error on the frames labeled `i`.
/// An expert whose cluster is empty falls back to the full dataset and is
/// flagged in the report.
pub fn pretrain_experts(
    experts: &mut [Mlp<f64>],
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    labels: &[usize],
    cfg: &PretrainConfig,
) -> Result<ExpertPretrainReport> {
    if inputs.nrows() != labels.len() || targets.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "inputs {}, targets {} and labels {} disagree",
            inputs.nrows(),
            targets.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= experts.len()) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {} experts",
            experts.len()
        )));
    }
    let all_rows: Vec<usize> = (0..inputs.nrows()).collect();
    let mut fallback_experts = Vec::new();
    let mut per_expert_loss = Vec::with_capacity(experts.len());
    for (i, expert) in experts.iter_mut().enumerate() {
        let rows: Vec<usize> =
            labels.iter().enumerate().filter(|(_, &l)| l == i).map(|(n, _)| n).collect();
        let rows = if rows.is_empty() {
            fallback_experts.push(i);
            &all_rows
        } else {
            &rows
        };
        let x = inputs.select(Axis(0), rows);
        let t = targets.select(Axis(0), rows);

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
        let mut state =
            AdamState::new(expert.param_count(), AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
        let mut order: Vec<usize> = (0..x.nrows()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let xb = x.select(Axis(0), chunk);
                let tb = t.select(Axis(0), chunk);
                let (out, cache) = expert.forward(&xb, crate::nn::Mode::Train)?;
                let grads = expert.backward(&cache, &mse_grad(&out, &tb)?)?;
                let mut params = expert.flatten_params();
                state.step(&mut params, &grads.flatten())?;
                expert.set_flat_params(&params)?;
                expert.commit_batchnorm(&cache);
            }
        }
        per_expert_loss.push(mse(&expert.infer(&x)?, &t)?);
    }
    Ok(ExpertPretrainReport { fallback_experts, per_expert_loss })
}

/// Column-mean helper used when reporting cluster geometry.
pub fn cluster_sizes(labels: &[usize], m: usize) -> Vec<usize> {
    let mut sizes = vec![0usize; m];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

/// Mean centroid used for degenerate embeddings in tests and reports.
pub fn mean_row(points: &Array2<f64>) -> Array1<f64> {
    points.mean_axis(Axis(0)).expect("non-empty")
}
