use crate::error::{Result, VqError};
use crate::models::{
    classify_nll_with_grad, recon_nll_with_grad, DenseGrad, DiscretizedLikelihoodHead, MlpCache,
    MlpStack,
};
use crate::numerics::Matrix;
use crate::quantizer::{
    codebook_grad, quantize, straight_through_backward, vq_loss, Assignment, Codebook,
    LossBreakdown, QuantizerConfig,
};

use super::batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormState};

/// What the decoder predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    /// Reconstruct the input levels through a per-dimension categorical.
    Autoencode(DiscretizedLikelihoodHead),
    /// Predict a class label.
    Classify { classes: usize },
}

/// Model inputs with their targets: level indices (`n × dims`, row-major)
/// for autoencoding, one label per row for classification.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BottleneckMode {
    PassThrough,
    Quantize,
}

/// Encoder → optional batch norm → bottleneck → decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct VqModel {
    pub encoder: MlpStack,
    pub batch_norm: Option<BatchNormState>,
    /// One codebook per head; `None` for a model without a bottleneck.
    pub codebooks: Option<Vec<Codebook>>,
    pub decoder: MlpStack,
    pub task: TaskKind,
    pub quantizer: QuantizerConfig,
}

/// Output of the encoder half of a forward pass.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub enc_cache: MlpCache,
    pub bn_cache: Option<BatchNormCache>,
    pub latents: Matrix,
}

/// Everything one forward pass produces, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub enc_cache: MlpCache,
    pub bn_cache: Option<BatchNormCache>,
    /// Encoder output after batch normalization; what the quantizer sees.
    pub latents: Matrix,
    pub quantized: Option<Matrix>,
    pub assignment: Option<Assignment>,
    pub dec_cache: MlpCache,
    pub grad_logits: Matrix,
    pub loss: LossBreakdown,
}

impl ForwardPass {
    pub fn logits(&self) -> &Matrix {
        self.dec_cache.output()
    }
}

/// Parameter gradients in the order of [`VqModel::param_slices`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub encoder: Vec<DenseGrad>,
    pub bn_gain: Vec<f64>,
    pub bn_bias: Vec<f64>,
    /// Gradient of the codebook term per head; zero while passing through.
    pub codebooks: Vec<Matrix>,
    pub decoder: Vec<DenseGrad>,
    /// Gradient reaching the (post-normalization) latents.
    pub latents: Matrix,
}

impl Gradients {
    /// Network parameter gradients, excluding codebooks.
    fn network_slices(&self) -> (Vec<&[f64]>, Vec<&[f64]>) {
        let mut front: Vec<&[f64]> = crate::models::grad_slices(&self.encoder);
        if !self.bn_gain.is_empty() {
            front.push(&self.bn_gain);
            front.push(&self.bn_bias);
        }
        (front, crate::models::grad_slices(&self.decoder))
    }

    pub fn flat(&self) -> Vec<f64> {
        let (front, back) = self.network_slices();
        let mut out: Vec<f64> = front.concat();
        for g in &self.codebooks {
            out.extend_from_slice(g.data());
        }
        out.extend(back.concat());
        out
    }
}

impl VqModel {
    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn has_bottleneck(&self) -> bool {
        self.codebooks.is_some()
    }

    /// Encoder and batch normalization only. In training mode batch
    /// normalization uses batch statistics and refreshes its running ones.
    pub fn encode(&mut self, inputs: &Matrix, training: bool) -> Result<Encoded> {
        let (encoded, enc_cache) = self.encoder.forward(inputs)?;
        let (latents, bn_cache) = match self.batch_norm.as_mut() {
            Some(bn) => batchnorm_forward(&encoded, bn, training)?,
            None => (encoded, None),
        };
        Ok(Encoded {
            enc_cache,
            bn_cache,
            latents,
        })
    }

    /// Bottleneck, decoder and loss on top of [`VqModel::encode`].
    pub fn finish(&self, encoded: Encoded, targets: &[usize], mode: BottleneckMode) -> Result<ForwardPass> {
        let Encoded {
            enc_cache,
            bn_cache,
            latents,
        } = encoded;
        let (quantized, assignment) = match mode {
            BottleneckMode::PassThrough => (None, None),
            BottleneckMode::Quantize => {
                let cbs = self
                    .codebooks
                    .as_ref()
                    .ok_or_else(|| VqError::InvalidArgument("model has no bottleneck to quantize with".into()))?;
                let (q, a) = quantize(&latents, cbs, &self.quantizer)?;
                (Some(q), Some(a))
            }
        };

        let decoder_input = quantized.as_ref().unwrap_or(&latents);
        let (logits, dec_cache) = self.decoder.forward(decoder_input)?;
        let (task, grad_logits) = match self.task {
            TaskKind::Autoencode(head) => recon_nll_with_grad(targets, &logits, head.levels)?,
            TaskKind::Classify { .. } => classify_nll_with_grad(targets, &logits)?,
        };
        if !task.is_finite() {
            return Err(VqError::NonFinite("task loss"));
        }
        let loss = match &quantized {
            Some(q) => vq_loss(&latents, q, task, self.quantizer.gamma_commit)?,
            None => LossBreakdown::task_only(task),
        };

        Ok(ForwardPass {
            enc_cache,
            bn_cache,
            latents,
            quantized,
            assignment,
            dec_cache,
            grad_logits,
            loss,
        })
    }

    pub fn forward(&mut self, batch: &Batch, mode: BottleneckMode, training: bool) -> Result<ForwardPass> {
        let encoded = self.encode(&batch.inputs, training)?;
        self.finish(encoded, &batch.targets, mode)
    }

    /// Backward through decoder, straight-through bottleneck, batch norm and
    /// encoder. `task_weight` scales the task loss gradient (1 for training).
    pub fn full_backward(&self, fwd: &ForwardPass, task_weight: f64) -> Result<Gradients> {
        let grad_logits = if task_weight == 1.0 {
            fwd.grad_logits.clone()
        } else {
            fwd.grad_logits.scale(task_weight)
        };
        let (grad_dec_in, decoder) = self.decoder.backward(&fwd.dec_cache, &grad_logits)?;

        let (grad_latents, codebooks) = match (&fwd.quantized, &fwd.assignment) {
            (Some(q), Some(a)) => {
                let g = straight_through_backward(&grad_dec_in, &fwd.latents, q, self.quantizer.gamma_commit)?;
                let cbs = self.codebooks.as_ref().ok_or(VqError::MissingCache("codebooks"))?;
                let d = cbs[0].dim();
                let grads = cbs
                    .iter()
                    .enumerate()
                    .map(|(h, cb)| {
                        let block = fwd.latents.col_block(h * d, d)?;
                        codebook_grad(&block, &a.head_indices(h), cb)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (g, grads)
            }
            _ => {
                let zeros = self
                    .codebooks
                    .as_ref()
                    .map(|cbs| cbs.iter().map(|c| Matrix::zeros(c.size(), c.dim())).collect())
                    .unwrap_or_default();
                (grad_dec_in, zeros)
            }
        };

        let (grad_encoded, bn_gain, bn_bias) = match &self.batch_norm {
            Some(_) => batchnorm_backward(&grad_latents, fwd.bn_cache.as_ref())?,
            None => (grad_latents.clone(), Vec::new(), Vec::new()),
        };
        let (_, encoder) = self.encoder.backward(&fwd.enc_cache, &grad_encoded)?;

        Ok(Gradients {
            encoder,
            bn_gain,
            bn_bias,
            codebooks,
            decoder,
            latents: grad_latents,
        })
    }

    /// All trainable parameters: encoder, batch-norm gain and bias, codebooks,
    /// decoder.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.param_slices();
        if let Some(bn) = &self.batch_norm {
            out.push(&bn.gain);
            out.push(&bn.bias);
        }
        if let Some(cbs) = &self.codebooks {
            out.extend(cbs.iter().map(|c| c.words().data()));
        }
        out.extend(self.decoder.param_slices());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.param_slices_mut();
        if let Some(bn) = &mut self.batch_norm {
            out.push(&mut bn.gain);
            out.push(&mut bn.bias);
        }
        if let Some(cbs) = &mut self.codebooks {
            out.extend(cbs.iter_mut().map(|c| c.words_mut().data_mut()));
        }
        out.extend(self.decoder.param_slices_mut());
        out
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.param_slices().iter().map(|s| s.len()).sum();
        if total != flat.len() {
            return Err(VqError::shape("set_flat_params", total, flat.len()));
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            let len = s.len();
            s.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Network (non-codebook) parameters paired with their gradients.
    pub(crate) fn network_params_and_grads<'a>(
        &'a mut self,
        grads: &'a Gradients,
    ) -> Vec<(&'a mut [f64], &'a [f64])> {
        let (front_g, back_g) = grads.network_slices();
        let mut front_p = self.encoder.param_slices_mut();
        if let Some(bn) = &mut self.batch_norm {
            front_p.push(&mut bn.gain);
            front_p.push(&mut bn.bias);
        }
        let back_p = self.decoder.param_slices_mut();
        front_p
            .into_iter()
            .zip(front_g)
            .chain(back_p.into_iter().zip(back_g))
            .collect()
    }
}
