//! Stacked denoising autoencoder: greedy layer-wise pretraining of
//! denoising sub-autoencoders, stacking, end-to-end fine-tuning and encoding.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::neural::{
    dropout_masks, mse_gradient, mse_loss, Activation, LossNormalization, DenseLayer, DenseStack, DropoutMasks, Sgd, StackFile,
    TrainConfig,
};
use crate::rng::{substream, StageRng};
use crate::{Error, Result};

/// Hidden widths between the input and the embedding.
pub const DEFAULT_HIDDEN: [usize; 3] = [500, 500, 2000];
pub const DEFAULT_EMBEDDING_DIM: usize = 10;

/// Encoder dimension chain `d_in, hidden..., d_e`.
pub fn encoder_dims(input_dim: usize, hidden: &[usize], embedding_dim: usize) -> Vec<usize> {
    std::iter::once(input_dim)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(embedding_dim))
        .collect()
}

/// One denoising autoencoder: `h = f1(W1 x̃ + b1)`, `y = f2(W2 h̃ + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubAutoencoder {
    pub encoder: DenseLayer,
    pub decoder: DenseLayer,
    /// Mean reconstruction loss per epoch.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub pretrain: Vec<Vec<f64>>,
    pub finetune: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdaeModel {
    pub encoder: DenseStack,
    pub decoder: DenseStack,
    pub history: TrainHistory,
    pub config: TrainConfig,
}

fn batches(n: usize, batch_size: usize, rng: &mut StageRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn check_finite(loss: f64, stage: &str, cfg: &TrainConfig) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!(
            "{stage}: reconstruction loss became {loss} at learning rate {}; try a smaller learning rate",
            cfg.learning_rate
        )))
    }
}

/// Mini-batch SGD on reconstruction of clean `x`, with dropout on every
/// layer input when `corrupt` is set. Returns the per-epoch mean loss.
fn fit_reconstruction(
    stack: &mut DenseStack,
    x: &ArrayView2<f64>,
    cfg: &TrainConfig,
    epochs: usize,
    stage: &str,
    stage_index: u64,
    corrupt: bool,
) -> Result<Vec<f64>> {
    let mut shuffle_rng = substream(cfg.seed, &format!("{stage}/shuffle"), stage_index);
    let mut drop_rng = substream(cfg.seed, &format!("{stage}/dropout"), stage_index);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut history = Vec::with_capacity(epochs);
    let use_masks = corrupt && cfg.dropout_rate > 0.0;
    for _ in 0..epochs {
        let mut total = 0.0;
        let mut count = 0;
        for idx in batches(x.nrows(), cfg.batch_size, &mut shuffle_rng) {
            let xb = x.select(Axis(0), &idx);
            let masks: Option<DropoutMasks> = if use_masks {
                let mut m = Vec::with_capacity(stack.layers().len());
                for l in stack.layers() {
                    m.push(Some(dropout_masks(idx.len(), l.input_dim(), cfg.dropout_rate, &mut drop_rng)?));
                }
                Some(m)
            } else {
                None
            };
            let cache = stack.forward(xb.view(), masks.as_ref())?;
            let loss = mse_loss(cache.output.view(), xb.view())?;
            check_finite(loss, stage, cfg)?;
            let mut grad = mse_gradient(cache.output.view(), xb.view())?;
            if cfg.loss_normalization == LossNormalization::PerElement {
                grad /= xb.ncols() as f64;
            }
            let grads = stack.backward(&cache, grad.view())?;
            opt.step(stack, &grads.layers)?;
            total += loss * idx.len() as f64;
            count += idx.len();
        }
        history.push(if count > 0 { total / count as f64 } else { 0.0 });
    }
    Ok(history)
}

/// Greedy layer-wise pretraining over the encoder chain `dims`.
///
/// Sub-autoencoder `k` learns to reconstruct the clean output of encoder
/// `k-1` from its dropout-corrupted version. Every activation is ReLU except
/// the final encoder, which is linear.
pub fn pretrain_layerwise(x: ArrayView2<f64>, cfg: &TrainConfig, dims: &[usize]) -> Result<Vec<SubAutoencoder>> {
    cfg.validate()?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::invalid(format!("invalid encoder dimensions {dims:?}")));
    }
    if x.ncols() != dims[0] {
        return Err(Error::DimensionMismatch {
            context: "pretraining input",
            expected: dims[0],
            got: x.ncols(),
        });
    }
    let n_subs = dims.len() - 1;
    let mut subs = Vec::with_capacity(n_subs);
    let mut current = x.to_owned();
    for k in 0..n_subs {
        let (d_in, d_out) = (dims[k], dims[k + 1]);
        let enc_act = if k + 1 == n_subs {
            Activation::Identity
        } else {
            Activation::Relu
        };
        let mut init = substream(cfg.seed, "sdae/init", k as u64);
        let mut stack = DenseStack::new(vec![
            DenseLayer::random(d_in, d_out, enc_act, &mut init),
            DenseLayer::random(d_out, d_in, Activation::Relu, &mut init),
        ])?;
        let losses = fit_reconstruction(&mut stack, &current.view(), cfg, cfg.epochs, "sdae/pretrain", k as u64, true)?;
        log::debug!(
            "sub-autoencoder {k} ({d_in}->{d_out}): loss {:.6} -> {:.6}",
            losses.first().copied().unwrap_or(f64::NAN),
            losses.last().copied().unwrap_or(f64::NAN)
        );
        let mut layers = stack.into_layers().into_iter();
        let encoder = layers.next().expect("encoder layer");
        let decoder = layers.next().expect("decoder layer");
        current = DenseStack::new(vec![encoder.clone()])?.predict(current.view())?;
        subs.push(SubAutoencoder {
            encoder,
            decoder,
            losses,
        });
    }
    Ok(subs)
}

/// Concatenate the pretrained encoders followed by the decoders in reverse
/// order and fine-tune the deep autoencoder on clean input without dropout.
pub fn stack_and_finetune(subs: &[SubAutoencoder], x: ArrayView2<f64>, cfg: &TrainConfig) -> Result<SdaeModel> {
    cfg.validate()?;
    if subs.is_empty() {
        return Err(Error::invalid("no sub-autoencoders to stack"));
    }
    let encoders: Vec<DenseLayer> = subs.iter().map(|s| s.encoder.clone()).collect();
    let decoders: Vec<DenseLayer> = subs.iter().rev().map(|s| s.decoder.clone()).collect();
    let n_enc = encoders.len();
    let mut deep = DenseStack::new(encoders.into_iter().chain(decoders).collect())?;
    let finetune = fit_reconstruction(&mut deep, &x, cfg, cfg.epochs, "sdae/finetune", 0, false)?;
    let mut layers = deep.into_layers();
    let decoder_layers = layers.split_off(n_enc);
    Ok(SdaeModel {
        encoder: DenseStack::new(layers)?,
        decoder: DenseStack::new(decoder_layers)?,
        history: TrainHistory {
            pretrain: subs.iter().map(|s| s.losses.clone()).collect(),
            finetune,
        },
        config: cfg.clone(),
    })
}

/// Pretrain and fine-tune in one call.
pub fn train_sdae(x: ArrayView2<f64>, cfg: &TrainConfig, hidden: &[usize], embedding_dim: usize) -> Result<SdaeModel> {
    let dims = encoder_dims(x.ncols(), hidden, embedding_dim);
    let subs = pretrain_layerwise(x, cfg, &dims)?;
    stack_and_finetune(&subs, x, cfg)
}

impl SdaeModel {
    pub fn embedding_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn reconstruct(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let e = self.encoder.predict(x)?;
        self.decoder.predict(e.view())
    }
}

/// Deterministic embedding of every row (no dropout, linear final layer).
pub fn encode(model: &SdaeModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    model.encoder.predict(x)
}

pub const MANIFEST_FORMAT: &str = "resili.sdae";

/// Persisted SDAE: encoder and decoder weights plus training metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdaeFile {
    pub format: String,
    pub version: u32,
    pub dims: Vec<usize>,
    pub embedding_dim: usize,
    pub config: TrainConfig,
    pub history: TrainHistory,
    pub encoder: StackFile,
    pub decoder: StackFile,
}

impl SdaeFile {
    pub fn from_model(model: &SdaeModel) -> Self {
        SdaeFile {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            dims: model.encoder.dims(),
            embedding_dim: model.embedding_dim(),
            config: model.config.clone(),
            history: model.history.clone(),
            encoder: StackFile::from_stack(&model.encoder, Some(model.config.seed)),
            decoder: StackFile::from_stack(&model.decoder, Some(model.config.seed)),
        }
    }

    pub fn to_model(&self) -> Result<SdaeModel> {
        if self.format != MANIFEST_FORMAT {
            return Err(Error::invalid(format!("not an SDAE file: {}", self.format)));
        }
        Ok(SdaeModel {
            encoder: self.encoder.to_stack()?,
            decoder: self.decoder.to_stack()?,
            history: self.history.clone(),
            config: self.config.clone(),
        })
    }
}
