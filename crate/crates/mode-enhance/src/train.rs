//! Training loops: clustering-based warm start, joint mixture training with
//! the specialization loss, and the width-matched single-network baseline.

use ndarray::{Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::mode::{expert_distances, mode_loss, posterior_weights, ModeModel};
use crate::nn::{mse, mse_grad, AdamConfig, AdamState, Mlp, Mode};
use crate::pretrain::{
    kmeans, train_autoencoder, Autoencoder, AutoencoderConfig, Clustering, ExpertPretrainReport,
    KmeansConfig, PretrainConfig,
};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 128, lr: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub epochs: Vec<EpochStats>,
    pub final_train_loss: f64,
    pub final_val_loss: Option<f64>,
    /// Plain per-bin mask MSE on the validation set, full-mixture inference.
    pub final_val_mask_mse: Option<f64>,
}

fn select_rows(matrix: &FeatureMatrix, rows: &[usize]) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    (
        matrix.expert.select(Axis(0), rows),
        matrix.gate.select(Axis(0), rows),
        matrix.targets.select(Axis(0), rows),
    )
}

/// Joint training of gate and experts on the specialization loss.
///
/// Deterministic under the seed: one optimizer thread, fixed shuffle order,
/// fixed reduction order.
pub fn train_mode_model(
    model: &mut ModeModel,
    train: &FeatureMatrix,
    val: Option<&FeatureMatrix>,
    cfg: &TrainConfig,
) -> Result<TrainSummary> {
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut gate_state = AdamState::new(model.gate.param_count(), adam);
    let mut expert_states: Vec<AdamState<f64>> =
        model.experts.iter().map(|e| AdamState::new(e.param_count(), adam)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut final_train_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, v, t) = select_rows(train, chunk);
            let fwd = model.forward(&x, &v, Mode::Train)?;
            loss_sum += mode_loss(&fwd.gate_probs, &fwd.expert_masks, &t)?;
            batches += 1;
            let grads = model.backward(&fwd, &t)?;

            let mut params = model.gate.flatten_params();
            gate_state.step(&mut params, &grads.gate.flatten())?;
            model.gate.set_flat_params(&params)?;
            for ((expert, state), grad) in
                model.experts.iter_mut().zip(&mut expert_states).zip(&grads.experts)
            {
                let mut params = expert.flatten_params();
                state.step(&mut params, &grad.flatten())?;
                expert.set_flat_params(&params)?;
            }
            model.commit_batchnorm(&fwd);
        }
        final_train_loss = loss_sum / batches as f64;
        let val_loss = match val {
            Some(v) => Some(mode_validation_loss(model, v)?),
            None => None,
        };
        epochs.push(EpochStats { epoch, train_loss: final_train_loss, val_loss });
    }

    let (final_val_loss, final_val_mask_mse) = match val {
        Some(v) => {
            let fwd = model.forward(&v.expert, &v.gate, Mode::Infer)?;
            (
                Some(mode_loss(&fwd.gate_probs, &fwd.expert_masks, &v.targets)?),
                Some(crate::eval::mask_mse(&fwd.combined, &v.targets)?),
            )
        }
        None => (None, None),
    };
    Ok(TrainSummary { epochs, final_train_loss, final_val_loss, final_val_mask_mse })
}

fn mode_validation_loss(model: &ModeModel, val: &FeatureMatrix) -> Result<f64> {
    let fwd = model.forward(&val.expert, &val.gate, Mode::Infer)?;
    mode_loss(&fwd.gate_probs, &fwd.expert_masks, &val.targets)
}

/// Posterior-weight summary of a trained model over a feature set; useful
/// when reporting how training distributed the data across experts.
pub fn posterior_utilization(model: &ModeModel, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
    let fwd = model.forward(&matrix.expert, &matrix.gate, Mode::Infer)?;
    let d = expert_distances(&fwd.expert_masks, &matrix.targets)?;
    let w = posterior_weights(&fwd.gate_probs, &d)?;
    let mean = w.mean_axis(Axis(0)).expect("non-empty");
    Ok(mean.to_vec())
}

/// Input matrix for the single-network baseline: log-spectrum context
/// features concatenated with the MFCC context features.
pub fn concat_features(matrix: &FeatureMatrix) -> Array2<f64> {
    let n = matrix.len();
    let e = matrix.expert.ncols();
    let g = matrix.gate.ncols();
    let mut out = Array2::zeros((n, e + g));
    out.slice_mut(ndarray::s![.., ..e]).assign(&matrix.expert);
    out.slice_mut(ndarray::s![.., e..]).assign(&matrix.gate);
    out
}

/// Width-matched single-expert baseline: one network with the same total
/// hidden neurons per layer as all `m` experts combined, fed the
/// concatenated features, trained on plain mask MSE.
pub fn dse_spec(
    expert_input_dim: usize,
    gate_input_dim: usize,
    num_bins: usize,
    expert_hidden: &[usize],
    num_experts: usize,
    batchnorm: bool,
) -> crate::nn::MlpSpec {
    let hidden: Vec<usize> = expert_hidden.iter().map(|&h| h * num_experts).collect();
    crate::nn::MlpSpec::with_hidden(
        expert_input_dim + gate_input_dim,
        &hidden,
        num_bins,
        crate::nn::Activation::Sigmoid,
        batchnorm,
    )
}

/// Trains the baseline network; mirrors the mixture loop (same batching,
/// same optimizer, same seed handling).
pub fn train_dse(
    model: &mut Mlp<f64>,
    train: &FeatureMatrix,
    val: Option<&FeatureMatrix>,
    cfg: &TrainConfig,
) -> Result<TrainSummary> {
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let inputs = concat_features(train);
    let val_inputs = val.map(concat_features);
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut state = AdamState::new(model.param_count(), adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut final_train_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let x = inputs.select(Axis(0), chunk);
            let t = train.targets.select(Axis(0), chunk);
            let (out, cache) = model.forward(&x, Mode::Train)?;
            loss_sum += mse(&out, &t)?;
            batches += 1;
            let grads = model.backward(&cache, &mse_grad(&out, &t)?)?;
            let mut params = model.flatten_params();
            state.step(&mut params, &grads.flatten())?;
            model.set_flat_params(&params)?;
            model.commit_batchnorm(&cache);
        }
        final_train_loss = loss_sum / batches as f64;
        let val_loss = match (&val_inputs, val) {
            (Some(vi), Some(v)) => Some(mse(&model.infer(vi)?, &v.targets)?),
            _ => None,
        };
        epochs.push(EpochStats { epoch, train_loss: final_train_loss, val_loss });
    }
    let (final_val_loss, final_val_mask_mse) = match (&val_inputs, val) {
        (Some(vi), Some(v)) => {
            let out = model.infer(vi)?;
            (Some(mse(&out, &v.targets)?), Some(crate::eval::mask_mse(&out, &v.targets)?))
        }
        _ => (None, None),
    };
    Ok(TrainSummary { epochs, final_train_loss, final_val_loss, final_val_mask_mse })
}

/// Settings for the full unsupervised warm start.
#[derive(Debug, Clone, Default)]
pub struct PretrainPipelineConfig {
    pub autoencoder: AutoencoderConfig,
    pub kmeans: KmeansConfig,
    pub gate: PretrainConfig,
    pub experts: PretrainConfig,
}

/// Artifacts produced by the warm start, kept for reuse and reporting.
#[derive(Debug, Clone)]
pub struct PretrainArtifacts {
    pub autoencoder: Autoencoder,
    pub clustering: Clustering,
    pub gate_accuracy: f64,
    pub expert_report: ExpertPretrainReport,
    /// Cluster label of every training frame, in dataset order.
    pub frame_labels: Vec<usize>,
}

/// Clustering-based initialization of a mixture model.
///
/// Clean log-spectrum frames are embedded and clustered into one group per
/// expert; the gate is then trained to predict the cluster from the noisy
/// MFCC context, and each expert is trained on the mask targets of its own
/// cluster's frames.
pub fn pretrain_mode_model(
    model: &mut ModeModel,
    dataset: &Dataset,
    cfg: &PretrainPipelineConfig,
) -> Result<PretrainArtifacts> {
    model.check_feature_hash(dataset.feature_hash)?;
    let clean_frames = dataset.clean_frames();
    let autoencoder = train_autoencoder(&clean_frames, &cfg.autoencoder)?;
    let embedded = autoencoder.encode(&clean_frames)?;
    let clustering = kmeans(&embedded, model.num_experts(), &cfg.kmeans)?;
    let frame_labels = clustering.labels.clone();

    let matrix = dataset.stack();
    let gate_accuracy = crate::pretrain::pretrain_gate(
        &mut model.gate,
        &matrix.gate,
        &frame_labels,
        &cfg.gate,
    )?;
    let expert_report = crate::pretrain::pretrain_experts(
        &mut model.experts,
        &matrix.expert,
        &matrix.targets,
        &frame_labels,
        &cfg.experts,
    )?;
    Ok(PretrainArtifacts { autoencoder, clustering, gate_accuracy, expert_report, frame_labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_corpus, SynthConfig};
    use crate::data::{build_dataset, DatasetConfig};
    use crate::dsp::StftConfig;
    use crate::mode::ModeConfig;
    use rand::SeedableRng;

    fn small_dataset(seed: u64) -> Dataset {
        let synth = SynthConfig {
            num_utterances: 4,
            seed,
            segment_dur: 0.15,
            segments_per_utt: 3,
            ..SynthConfig::default()
        };
        let stft = StftConfig {
            frame_len: 128,
            hop: 64,
            n_mels: 20,
            n_mfcc: 6,
            ..StftConfig::default()
        };
        let (clean, noise) = generate_corpus(&synth, &stft).unwrap();
        let cfg = DatasetConfig { snr_list: vec![0.0, 5.0], context: 2, gamma: 0.5, seed };
        build_dataset(&clean, &noise, &stft, &cfg).unwrap()
    }

    fn small_model(dataset: &Dataset, m: usize, seed: u64) -> ModeModel {
        let cfg = ModeConfig {
            num_experts: m,
            context: dataset.context,
            num_bins: dataset.stft.num_bins(),
            num_mfcc: dataset.stft.n_mfcc,
            expert_hidden: vec![16],
            gate_hidden: vec![16],
            batchnorm: true,
            feature_hash: dataset.feature_hash,
        };
        ModeModel::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn joint_training_reduces_the_loss() {
        let ds = small_dataset(1);
        let (train, val) = ds.split(0.25, 3);
        let train_m = train.stack();
        let val_m = val.stack();
        let mut model = small_model(&ds, 2, 5);
        let cfg = TrainConfig { epochs: 5, batch_size: 64, lr: 1e-3, seed: 7 };
        let summary = train_mode_model(&mut model, &train_m, Some(&val_m), &cfg).unwrap();
        assert_eq!(summary.epochs.len(), 5);
        assert!(
            summary.final_train_loss < summary.epochs[0].train_loss,
            "loss did not decrease: {} -> {}",
            summary.epochs[0].train_loss,
            summary.final_train_loss
        );
        assert!(summary.final_val_mask_mse.unwrap() > 0.0);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let ds = small_dataset(2);
        let matrix = ds.stack();
        let cfg = TrainConfig { epochs: 2, batch_size: 32, lr: 1e-3, seed: 11 };
        let mut a = small_model(&ds, 2, 13);
        let mut b = small_model(&ds, 2, 13);
        train_mode_model(&mut a, &matrix, None, &cfg).unwrap();
        train_mode_model(&mut b, &matrix, None, &cfg).unwrap();
        assert_eq!(a.gate.flatten_params(), b.gate.flatten_params());
        for (x, y) in a.experts.iter().zip(&b.experts) {
            assert_eq!(x.flatten_params(), y.flatten_params());
        }
    }

    #[test]
    fn dse_is_width_matched_and_trains() {
        let ds = small_dataset(3);
        let matrix = ds.stack();
        let spec = dse_spec(
            matrix.expert.ncols(),
            matrix.gate.ncols(),
            ds.stft.num_bins(),
            &[16],
            3,
            true,
        );
        assert_eq!(spec.layers[0].dim, 48);
        let mut dse = Mlp::init(&spec, &mut ChaCha8Rng::seed_from_u64(17));
        let cfg = TrainConfig { epochs: 3, batch_size: 64, lr: 1e-3, seed: 19 };
        let summary = train_dse(&mut dse, &matrix, Some(&matrix), &cfg).unwrap();
        assert!(summary.final_train_loss < summary.epochs[0].train_loss);
    }

    #[test]
    fn pretraining_pipeline_produces_consistent_artifacts() {
        let ds = small_dataset(4);
        let mut model = small_model(&ds, 3, 23);
        let cfg = PretrainPipelineConfig {
            autoencoder: AutoencoderConfig {
                embedding_dim: 4,
                hidden: vec![16],
                epochs: 10,
                batch_size: 64,
                lr: 1e-3,
                seed: 29,
            },
            kmeans: KmeansConfig { restarts: 3, max_iters: 30, seed: 31 },
            gate: PretrainConfig { epochs: 5, batch_size: 64, lr: 1e-3, seed: 37 },
            experts: PretrainConfig { epochs: 3, batch_size: 64, lr: 1e-3, seed: 41 },
        };
        let artifacts = pretrain_mode_model(&mut model, &ds, &cfg).unwrap();
        assert_eq!(artifacts.frame_labels.len(), ds.num_examples());
        assert_eq!(artifacts.clustering.num_clusters(), 3);
        assert!(artifacts.gate_accuracy > 0.3, "accuracy {}", artifacts.gate_accuracy);
        assert!(artifacts.frame_labels.iter().all(|&l| l < 3));
        let util = posterior_utilization(&model, &ds.stack()).unwrap();
        assert!((util.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
