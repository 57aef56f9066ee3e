//! Mixture of deep experts for mask estimation.
//!
//! A gating network maps MFCC context features to a distribution over `m`
//! experts; each expert maps log-spectrum context features to a sigmoid
//! mask. Training minimizes the specialization loss
//! `-log sum_i p_i * exp(-d_i)` with `d_i = 0.5 * ||rho - rho_i||^2`, which
//! rewards the best-matching expert rather than the ensemble mean. The
//! analytic gradients route each example to experts in proportion to the
//! posterior weight `w_i = p_i * exp(-d_i) / sum_j p_j * exp(-d_j)` and move
//! the gate toward that posterior.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::serial::{self, ArtifactKind};
use crate::nn::{Activation, ForwardCache, Gradients, Mlp, MlpSpec, Mode};

/// Inference strategy: evaluate the full mixture or only the most probable
/// expert per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferStrategy {
    Full,
    Top1,
}

/// Architecture and feature-layout parameters of a mixture model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeConfig {
    /// Number of experts.
    pub num_experts: usize,
    /// Context frames on each side of the center frame.
    pub context: usize,
    /// Mask length, `frame_len / 2 + 1`.
    pub num_bins: usize,
    /// Cepstral coefficients per frame in the gate input.
    pub num_mfcc: usize,
    pub expert_hidden: Vec<usize>,
    pub gate_hidden: Vec<usize>,
    pub batchnorm: bool,
    /// Hash of the feature configuration the model was built for; artifacts
    /// with a different hash are refused.
    pub feature_hash: u64,
}

impl ModeConfig {
    pub fn expert_input_dim(&self) -> usize {
        (2 * self.context + 1) * self.num_bins
    }

    pub fn gate_input_dim(&self) -> usize {
        (2 * self.context + 1) * self.num_mfcc
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_experts == 0 {
            return Err(Error::Config("need at least one expert".into()));
        }
        if self.num_bins == 0 || self.num_mfcc == 0 {
            return Err(Error::Config("feature dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Gate plus `m` structurally identical experts.
#[derive(Debug)]
pub struct ModeModel {
    pub gate: Mlp<f64>,
    pub experts: Vec<Mlp<f64>>,
    pub config: ModeConfig,
    expert_evals: AtomicU64,
}

impl Clone for ModeModel {
    fn clone(&self) -> Self {
        Self {
            gate: self.gate.clone(),
            experts: self.experts.clone(),
            config: self.config.clone(),
            expert_evals: AtomicU64::new(self.expert_evals.load(Ordering::Relaxed)),
        }
    }
}

/// Everything produced by a mixture forward pass, including the caches
/// needed by [`ModeModel::backward`].
#[derive(Debug, Clone)]
pub struct ModeForward {
    /// Shape (batch, m); rows on the probability simplex.
    pub gate_probs: Array2<f64>,
    /// Per-expert sigmoid masks, each (batch, num_bins).
    pub expert_masks: Vec<Array2<f64>>,
    /// Probability-weighted combination of the expert masks.
    pub combined: Array2<f64>,
    gate_cache: ForwardCache<f64>,
    expert_caches: Vec<ForwardCache<f64>>,
}

/// Gradients of the specialization loss for the gate and every expert.
#[derive(Debug, Clone)]
pub struct ModeGradients {
    pub gate: Gradients<f64>,
    pub experts: Vec<Gradients<f64>>,
    /// Posterior weights used to route the expert gradients, shape (batch, m).
    pub posteriors: Array2<f64>,
}

impl ModeModel {
    /// Fresh model with seeded initialization.
    pub fn init(config: ModeConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let gate_spec = MlpSpec::with_hidden(
            config.gate_input_dim(),
            &config.gate_hidden,
            config.num_experts,
            Activation::Softmax,
            config.batchnorm,
        );
        let expert_spec = MlpSpec::with_hidden(
            config.expert_input_dim(),
            &config.expert_hidden,
            config.num_bins,
            Activation::Sigmoid,
            config.batchnorm,
        );
        let gate = Mlp::init(&gate_spec, rng);
        let experts = (0..config.num_experts).map(|_| Mlp::init(&expert_spec, rng)).collect();
        Ok(Self { gate, experts, config, expert_evals: AtomicU64::new(0) })
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    /// Expert evaluations performed by [`ModeModel::infer_mask`] since the
    /// last reset, counted per frame.
    pub fn expert_evaluations(&self) -> u64 {
        self.expert_evals.load(Ordering::Relaxed)
    }

    pub fn reset_expert_evaluations(&self) {
        self.expert_evals.store(0, Ordering::Relaxed);
    }

    /// Refuses features built under a different configuration.
    pub fn check_feature_hash(&self, hash: u64) -> Result<()> {
        if self.config.feature_hash != hash {
            return Err(Error::ConfigHashMismatch(format!(
                "model was built for feature config {:016x}, features carry {:016x}",
                self.config.feature_hash, hash
            )));
        }
        Ok(())
    }

    fn check_inputs(&self, expert_input: &Array2<f64>, gate_input: &Array2<f64>) -> Result<()> {
        if expert_input.ncols() != self.config.expert_input_dim() {
            return Err(Error::Dimension(format!(
                "expert input dim {} != expected {}",
                expert_input.ncols(),
                self.config.expert_input_dim()
            )));
        }
        if gate_input.ncols() != self.config.gate_input_dim() {
            return Err(Error::Dimension(format!(
                "gate input dim {} != expected {}",
                gate_input.ncols(),
                self.config.gate_input_dim()
            )));
        }
        if expert_input.nrows() != gate_input.nrows() {
            return Err(Error::Dimension(format!(
                "expert batch {} != gate batch {}",
                expert_input.nrows(),
                gate_input.nrows()
            )));
        }
        Ok(())
    }

    /// Runs the gate and all experts; the combined mask is the gate-weighted
    /// sum of the expert masks.
    pub fn forward(
        &self,
        expert_input: &Array2<f64>,
        gate_input: &Array2<f64>,
        mode: Mode,
    ) -> Result<ModeForward> {
        self.check_inputs(expert_input, gate_input)?;
        let (gate_probs, gate_cache) = self.gate.forward(gate_input, mode)?;
        let mut expert_masks = Vec::with_capacity(self.experts.len());
        let mut expert_caches = Vec::with_capacity(self.experts.len());
        for expert in &self.experts {
            let (mask, cache) = expert.forward(expert_input, mode)?;
            expert_masks.push(mask);
            expert_caches.push(cache);
        }
        let mut combined = Array2::zeros((expert_input.nrows(), self.config.num_bins));
        for (i, mask) in expert_masks.iter().enumerate() {
            let p = gate_probs.column(i);
            for (mut crow, (mrow, &pn)) in combined
                .rows_mut()
                .into_iter()
                .zip(mask.rows().into_iter().zip(p.iter()))
            {
                crow.scaled_add(pn, &mrow);
            }
        }
        Ok(ModeForward { gate_probs, expert_masks, combined, gate_cache, expert_caches })
    }

    /// Folds cached batch statistics into running batchnorm statistics after
    /// a training step.
    pub fn commit_batchnorm(&mut self, fwd: &ModeForward) {
        self.gate.commit_batchnorm(&fwd.gate_cache);
        for (expert, cache) in self.experts.iter_mut().zip(&fwd.expert_caches) {
            expert.commit_batchnorm(cache);
        }
    }

    /// Gradients of [`mode_loss`] for every gate and expert parameter.
    ///
    /// Expert `i` receives its plain regression gradient scaled by the
    /// posterior weight `w_i`; the gate gradient is taken at the softmax
    /// logits, where it is `(p - w) / batch` per example.
    pub fn backward(&self, fwd: &ModeForward, targets: &Array2<f64>) -> Result<ModeGradients> {
        let distances = expert_distances(&fwd.expert_masks, targets)?;
        let posteriors = posterior_weights(&fwd.gate_probs, &distances)?;
        self.backward_given_posteriors(fwd, targets, &posteriors)
    }

    pub(crate) fn backward_given_posteriors(
        &self,
        fwd: &ModeForward,
        targets: &Array2<f64>,
        posteriors: &Array2<f64>,
    ) -> Result<ModeGradients> {
        let batch = targets.nrows() as f64;
        let mut expert_grads = Vec::with_capacity(self.experts.len());
        for (i, expert) in self.experts.iter().enumerate() {
            let mask = &fwd.expert_masks[i];
            let mut output_grad = mask - targets;
            for (mut row, &w) in output_grad.rows_mut().into_iter().zip(posteriors.column(i)) {
                row.mapv_inplace(|v| v * w / batch);
            }
            expert_grads.push(expert.backward(&fwd.expert_caches[i], &output_grad)?);
        }
        let logit_grad = (&fwd.gate_probs - posteriors) / batch;
        let gate_grad = self.gate.backward_from_logits(&fwd.gate_cache, &logit_grad)?;
        Ok(ModeGradients { gate: gate_grad, experts: expert_grads, posteriors: posteriors.clone() })
    }

    /// Mask inference. `Full` evaluates every expert and combines them;
    /// `Top1` evaluates only the gate's argmax expert for each frame.
    pub fn infer_mask(
        &self,
        expert_input: &Array2<f64>,
        gate_input: &Array2<f64>,
        strategy: InferStrategy,
    ) -> Result<Array2<f64>> {
        self.check_inputs(expert_input, gate_input)?;
        let batch = expert_input.nrows();
        let gate_probs = self.gate.infer(gate_input)?;
        match strategy {
            InferStrategy::Full => {
                let mut combined = Array2::zeros((batch, self.config.num_bins));
                for (i, expert) in self.experts.iter().enumerate() {
                    let mask = expert.infer(expert_input)?;
                    self.expert_evals.fetch_add(batch as u64, Ordering::Relaxed);
                    for (mut crow, (mrow, &pn)) in combined
                        .rows_mut()
                        .into_iter()
                        .zip(mask.rows().into_iter().zip(gate_probs.column(i)))
                    {
                        crow.scaled_add(pn, &mrow);
                    }
                }
                Ok(combined)
            }
            InferStrategy::Top1 => {
                let winners: Vec<usize> = gate_probs
                    .rows()
                    .into_iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .max_by(|a, b| a.1.total_cmp(b.1))
                            .map(|(i, _)| i)
                            .expect("at least one expert")
                    })
                    .collect();
                let mut out = Array2::zeros((batch, self.config.num_bins));
                for (i, expert) in self.experts.iter().enumerate() {
                    let rows: Vec<usize> =
                        winners.iter().enumerate().filter(|(_, &w)| w == i).map(|(n, _)| n).collect();
                    if rows.is_empty() {
                        continue;
                    }
                    let subset = expert_input.select(Axis(0), &rows);
                    let mask = expert.infer(&subset)?;
                    self.expert_evals.fetch_add(rows.len() as u64, Ordering::Relaxed);
                    for (j, &n) in rows.iter().enumerate() {
                        out.row_mut(n).assign(&mask.row(j));
                    }
                }
                Ok(out)
            }
        }
    }

    /// Serializes the model to `path` (header, config, gate, then experts).
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        serial::write_header(&mut w, ArtifactKind::ModeModel)?;
        self.put(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            Error::Data(format!("cannot open model file {}: {e}", path.display()))
        })?;
        let mut r = BufReader::new(file);
        serial::read_header(&mut r, ArtifactKind::ModeModel)?;
        Self::get(&mut r)
    }

    pub(crate) fn put<W: Write>(&self, w: &mut W) -> Result<()> {
        let c = &self.config;
        serial::put_u32(w, c.num_experts as u32)?;
        serial::put_u32(w, c.context as u32)?;
        serial::put_u64(w, c.num_bins as u64)?;
        serial::put_u64(w, c.num_mfcc as u64)?;
        serial::put_u8(w, c.batchnorm as u8)?;
        serial::put_u64(w, c.feature_hash)?;
        serial::put_u32(w, c.expert_hidden.len() as u32)?;
        for &h in &c.expert_hidden {
            serial::put_u64(w, h as u64)?;
        }
        serial::put_u32(w, c.gate_hidden.len() as u32)?;
        for &h in &c.gate_hidden {
            serial::put_u64(w, h as u64)?;
        }
        serial::put_mlp(w, &self.gate)?;
        for expert in &self.experts {
            serial::put_mlp(w, expert)?;
        }
        Ok(())
    }

    pub(crate) fn get<R: Read>(r: &mut R) -> Result<Self> {
        let num_experts = serial::get_u32(r)? as usize;
        let context = serial::get_u32(r)? as usize;
        let num_bins = serial::get_u64(r)? as usize;
        let num_mfcc = serial::get_u64(r)? as usize;
        let batchnorm = serial::get_u8(r)? != 0;
        let feature_hash = serial::get_u64(r)?;
        let n = serial::get_u32(r)? as usize;
        let mut expert_hidden = Vec::with_capacity(n);
        for _ in 0..n {
            expert_hidden.push(serial::get_u64(r)? as usize);
        }
        let n = serial::get_u32(r)? as usize;
        let mut gate_hidden = Vec::with_capacity(n);
        for _ in 0..n {
            gate_hidden.push(serial::get_u64(r)? as usize);
        }
        let config = ModeConfig {
            num_experts,
            context,
            num_bins,
            num_mfcc,
            expert_hidden,
            gate_hidden,
            batchnorm,
            feature_hash,
        };
        config.validate()?;
        let gate = serial::get_mlp(r)?;
        let mut experts = Vec::with_capacity(num_experts);
        for _ in 0..num_experts {
            experts.push(serial::get_mlp(r)?);
        }
        let model = Self { gate, experts, config, expert_evals: AtomicU64::new(0) };
        if model.gate.output_dim() != num_experts
            || model.gate.input_dim() != model.config.gate_input_dim()
            || model.experts.iter().any(|e| {
                e.output_dim() != num_bins || e.input_dim() != model.config.expert_input_dim()
            })
        {
            return Err(Error::Format("model dimensions do not match its header".into()));
        }
        Ok(model)
    }
}

fn check_gate_probs(gate_probs: &Array2<f64>) -> Result<()> {
    for row in gate_probs.rows() {
        let mut sum = 0.0;
        for &p in row.iter() {
            if p < 0.0 || !p.is_finite() {
                return Err(Error::Data(format!("gate probability {p} outside [0, 1]")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("gate probabilities sum to {sum}, expected 1")));
        }
    }
    Ok(())
}

/// Half squared distances `d_{n,i} = 0.5 * ||rho_n - mask_i(n)||^2`,
/// shape (batch, m).
pub fn expert_distances(expert_masks: &[Array2<f64>], targets: &Array2<f64>) -> Result<Array2<f64>> {
    if expert_masks.is_empty() {
        return Err(Error::Dimension("no expert masks".into()));
    }
    let batch = targets.nrows();
    let mut distances = Array2::zeros((batch, expert_masks.len()));
    for (i, mask) in expert_masks.iter().enumerate() {
        if mask.dim() != targets.dim() {
            return Err(Error::Dimension(format!(
                "expert {i} mask is {:?} but target is {:?}",
                mask.dim(),
                targets.dim()
            )));
        }
        for (n, (mrow, trow)) in mask.rows().into_iter().zip(targets.rows()).enumerate() {
            let d: f64 = mrow
                .iter()
                .zip(trow.iter())
                .map(|(a, b)| {
                    let diff = a - b;
                    0.5 * diff * diff
                })
                .sum();
            distances[[n, i]] = d;
        }
    }
    Ok(distances)
}

/// Specialization loss `-log sum_i p_i exp(-d_i)`, mean over the batch.
///
/// Evaluated as a max-shifted log-sum-exp of `ln p_i - d_i`, so large
/// distances cannot underflow the sum.
pub fn mode_loss(
    gate_probs: &Array2<f64>,
    expert_masks: &[Array2<f64>],
    targets: &Array2<f64>,
) -> Result<f64> {
    check_gate_probs(gate_probs)?;
    let distances = expert_distances(expert_masks, targets)?;
    if gate_probs.nrows() != targets.nrows() || gate_probs.ncols() != expert_masks.len() {
        return Err(Error::Dimension(format!(
            "gate probs are {:?}, expected ({}, {})",
            gate_probs.dim(),
            targets.nrows(),
            expert_masks.len()
        )));
    }
    let mut total = 0.0;
    for (prow, drow) in gate_probs.rows().into_iter().zip(distances.rows()) {
        total -= log_sum_p_exp_neg_d(prow.iter().copied(), drow.iter().copied());
    }
    Ok(total / targets.nrows() as f64)
}

/// `log sum_i p_i exp(-d_i)` via a shift by `max_i (ln p_i - d_i)`.
fn log_sum_p_exp_neg_d(
    probs: impl Iterator<Item = f64> + Clone,
    distances: impl Iterator<Item = f64> + Clone,
) -> f64 {
    let scores = probs.zip(distances).map(|(p, d)| if p > 0.0 { p.ln() - d } else { f64::NEG_INFINITY });
    let max = scores.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.map(|s| (s - max).exp()).sum();
    max + sum.ln()
}

/// Posterior expert weights `w_i = p_i exp(-d_i) / sum_j p_j exp(-d_j)`,
/// shape (batch, m). Stabilized the same way as [`mode_loss`]; never NaN.
pub fn posterior_weights(gate_probs: &Array2<f64>, distances: &Array2<f64>) -> Result<Array2<f64>> {
    check_gate_probs(gate_probs)?;
    if gate_probs.dim() != distances.dim() {
        return Err(Error::Dimension(format!(
            "gate probs are {:?} but distances are {:?}",
            gate_probs.dim(),
            distances.dim()
        )));
    }
    let mut weights = Array2::zeros(gate_probs.dim());
    for ((prow, drow), mut wrow) in gate_probs
        .rows()
        .into_iter()
        .zip(distances.rows())
        .zip(weights.rows_mut())
    {
        let scores: Vec<f64> = prow
            .iter()
            .zip(drow.iter())
            .map(|(&p, &d)| if p > 0.0 { p.ln() - d } else { f64::NEG_INFINITY })
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (w, &s) in wrow.iter_mut().zip(&scores) {
            *w = (s - max).exp();
            sum += *w;
        }
        wrow.mapv_inplace(|w| w / sum);
    }
    Ok(weights)
}
