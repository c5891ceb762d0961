//! Full anomaly models: encoder plus either a one-class head or a decoder,
//! each optionally fused with the interaction branch.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{global_avg_pool, global_avg_pool_backward, BackboneConfig, Decoder, Encoder, EncoderTrace};
use crate::dataset::{Clip, ClipConfig};
use crate::error::{Result, VadError};
use crate::interaction::{
    fuse_oc, fuse_oc_backward, fuse_recon, fuse_recon_backward, propose, BranchTrace, InteractionBranch,
    InteractionConfig, ProposalContext, ProposalSet, ReconFusion,
};
use crate::nn::{Linear, ParamView, Parameters};
use crate::recon::{recon_loss, recon_score, Reduction};
use crate::svdd::{svdd_loss, svdd_score, Center};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ocsvdd,
    Recon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub method: Method,
    pub backbone: BackboneConfig,
    /// Present when the interaction branch is enabled.
    pub interaction: Option<InteractionConfig>,
    pub reduction: Reduction,
    /// λ of the one-class objective; ignored by reconstruction.
    pub weight_decay: f64,
}

impl ModelConfig {
    pub fn clip_config(&self) -> ClipConfig {
        let i = self.backbone.input;
        ClipConfig {
            frames: i.frames,
            height: i.height,
            width: i.width,
            flow: i.channels == 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.backbone.input.channels, 3 | 5) {
            return Err(VadError::Invalid(format!(
                "clips carry 3 (RGB) or 5 (RGB + flow) channels, got {}",
                self.backbone.input.channels
            )));
        }
        if self.method == Method::Ocsvdd && self.backbone.bias {
            return Err(VadError::Invalid("the one-class objective requires bias-free layers".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(VadError::NegativeWeightDecay(self.weight_decay));
        }
        let [_, h, w, _] = self.backbone.bottleneck_shape()?;
        if self.method == Method::Recon && self.interaction.is_some() && h != w {
            return Err(VadError::NonSquareFusion { h, w });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    /// One-class head: d -> Z, or 2d -> Z with the interaction branch.
    pub head: Option<Linear>,
    pub decoder: Option<Decoder>,
    pub branch: Option<InteractionBranch>,
    pub fusion: Option<ReconFusion>,
    /// Not a parameter; fixed before training starts.
    pub center: Center,
}

/// Intermediate values of one forward pass.
struct Forward {
    enc: EncoderTrace,
    props: Option<ProposalSet>,
    branch: Option<BranchTrace>,
    out: Output,
}

enum Output {
    Embedding(Array1<f64>),
    Reconstruction {
        fused: Option<Array4<f64>>,
        dec: crate::backbone::DecoderTrace,
    },
}

impl AnomalyModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let b = &config.backbone;
        let d = b.bottleneck_channels();
        let [_, side, _, _] = b.bottleneck_shape()?;
        let gcn = config.interaction.is_some();
        let encoder = Encoder::new(b, rng)?;
        let (head, decoder, fusion) = match config.method {
            Method::Ocsvdd => (
                Some(Linear::new(if gcn { 2 * d } else { d }, b.z, false, 1.0, rng)),
                None,
                None,
            ),
            Method::Recon => (
                None,
                Some(Decoder::new(b, if gcn { 2 * d } else { d }, rng)?),
                gcn.then(|| ReconFusion::new(d, side, rng)),
            ),
        };
        let branch = gcn.then(|| InteractionBranch::new(d, rng));
        Ok(Self {
            config,
            encoder,
            head,
            decoder,
            branch,
            fusion,
            center: Center::default(),
        })
    }

    /// Same structure, every parameter zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero_();
        z
    }

    pub fn clip_config(&self) -> ClipConfig {
        self.config.clip_config()
    }

    pub fn proposals(&self, clip: &Clip) -> Result<Option<ProposalSet>> {
        let Some(ic) = &self.config.interaction else {
            return Ok(None);
        };
        let [t, h, w, _] = self.config.backbone.bottleneck_shape()?;
        let ctx = ProposalContext {
            feature_dims: [t, h, w],
            clip_frames: clip.data.dim().0,
            frame_boxes: clip.boxes.as_deref(),
        };
        propose(&ctx, ic.provider, ic.proposals_per_frame).map(Some)
    }

    fn forward(&self, clip: &Clip) -> Result<Forward> {
        let enc = self.encoder.forward(&clip.data)?;
        let h = enc.output();
        let props = self.proposals(clip)?;
        let branch = match (&self.branch, &props) {
            (Some(b), Some(p)) => Some(b.forward(h, p)?),
            _ => None,
        };
        let out = match self.config.method {
            Method::Ocsvdd => {
                let head = self.head.as_ref().expect("one-class model has a head");
                let f = match &branch {
                    Some(tr) => fuse_oc(h, tr.output(), head)?,
                    None => head.forward_vec(global_avg_pool(h).view()),
                };
                Output::Embedding(f)
            }
            Method::Recon => {
                let dec = self.decoder.as_ref().expect("reconstruction model has a decoder");
                let fused = match (&branch, &self.fusion) {
                    (Some(tr), Some(fu)) => Some(fuse_recon(h, tr.output(), fu)?),
                    _ => None,
                };
                let trace = dec.forward(fused.as_ref().unwrap_or(h))?;
                Output::Reconstruction { fused, dec: trace }
            }
        };
        Ok(Forward {
            enc,
            props,
            branch,
            out,
        })
    }

    /// One-class embedding of a clip.
    pub fn embed(&self, clip: &Clip) -> Result<Array1<f64>> {
        match self.forward(clip)?.out {
            Output::Embedding(f) => Ok(f),
            Output::Reconstruction { .. } => Err(VadError::Invalid("reconstruction models have no embedding".into())),
        }
    }

    pub fn reconstruct(&self, clip: &Clip) -> Result<Array4<f64>> {
        match self.forward(clip)?.out {
            Output::Reconstruction { mut dec, .. } => Ok(dec.acts.pop().expect("decoder output")),
            Output::Embedding(_) => Err(VadError::Invalid("one-class models do not reconstruct".into())),
        }
    }

    /// Distance to the center, or reconstruction error.
    pub fn score(&self, clip: &Clip) -> Result<f64> {
        match self.forward(clip)?.out {
            Output::Embedding(f) => svdd_score(f.view(), &self.center),
            Output::Reconstruction { dec, .. } => recon_score(clip.data.view(), dec.output().view()),
        }
    }

    /// Sets and freezes the one-class center from the mean embedding.
    pub fn init_center(&mut self, clips: &[Clip]) -> Result<()> {
        let feats = clips.iter().map(|c| self.embed(c)).collect::<Result<Vec<_>>>()?;
        self.center.init(&feats)
    }

    /// Minibatch objective and its gradient with respect to every parameter.
    pub fn loss_and_grads(&self, batch: &[Clip]) -> Result<(f64, Self)> {
        if batch.is_empty() {
            return Err(VadError::EmptySample);
        }
        let mut grads = self.zeros_like();
        let passes = batch.iter().map(|c| self.forward(c)).collect::<Result<Vec<_>>>()?;
        let loss = match self.config.method {
            Method::Ocsvdd => {
                let feats: Vec<Array1<f64>> = passes
                    .iter()
                    .map(|p| match &p.out {
                        Output::Embedding(f) => f.clone(),
                        Output::Reconstruction { .. } => unreachable!(),
                    })
                    .collect();
                let views: Vec<_> = feats.iter().map(|f| f.view().insert_axis(Axis(0))).collect();
                let stacked: Array2<f64> = ndarray::concatenate(Axis(0), &views).expect("equal lengths");
                let lambda = self.config.weight_decay;
                let l = svdd_loss(stacked.view(), &self.center, self.squared_norm(), lambda)?;
                for (i, pass) in passes.iter().enumerate() {
                    self.backward_oc(pass, l.grad_features.row(i).to_owned(), &mut grads)?;
                }
                grads.axpy_(lambda, self);
                l.value
            }
            Method::Recon => {
                let recons: Vec<_> = passes
                    .iter()
                    .map(|p| match &p.out {
                        Output::Reconstruction { dec, .. } => dec.output().view(),
                        Output::Embedding(_) => unreachable!(),
                    })
                    .collect();
                let xs: Vec<_> = batch.iter().map(|c| c.data.view()).collect();
                let l = recon_loss(&xs, &recons, self.config.reduction)?;
                for (pass, g) in passes.iter().zip(l.grad_recon) {
                    self.backward_recon(pass, g, &mut grads)?;
                }
                l.value
            }
        };
        Ok((loss, grads))
    }

    fn backward_branch(&self, pass: &Forward, d_h: &mut Array4<f64>, d_gcn: Array2<f64>, grads: &mut Self) {
        let (Some(branch), Some(trace), Some(props)) = (&self.branch, &pass.branch, &pass.props) else {
            return;
        };
        let dims: [usize; 4] = pass.enc.output().dim().into();
        *d_h += &branch.backward(props, trace, &d_gcn, dims, grads.branch.as_mut().expect("same structure"));
    }

    fn backward_oc(&self, pass: &Forward, d_f: Array1<f64>, grads: &mut Self) -> Result<()> {
        let h = pass.enc.output();
        let head = self.head.as_ref().expect("head");
        let ghead = grads.head.as_mut().expect("head");
        let d_h = match &pass.branch {
            Some(tr) => {
                let (mut d_h, d_gcn) = fuse_oc_backward(h, tr.output(), head, d_f.view(), ghead)?;
                self.backward_branch(pass, &mut d_h, d_gcn, grads);
                d_h
            }
            None => {
                let pooled = global_avg_pool(h);
                let d_pool = head.backward_vec(pooled.view(), d_f.view(), ghead);
                global_avg_pool_backward(d_pool.view(), h.dim().into())
            }
        };
        self.encoder.backward(&pass.enc, d_h, &mut grads.encoder);
        Ok(())
    }

    fn backward_recon(&self, pass: &Forward, d_out: Array4<f64>, grads: &mut Self) -> Result<()> {
        let Output::Reconstruction { fused, dec } = &pass.out else {
            unreachable!()
        };
        let decoder = self.decoder.as_ref().expect("decoder");
        let d_in = decoder.backward(dec, d_out, grads.decoder.as_mut().expect("decoder"));
        let h = pass.enc.output();
        let d_h = match (fused, &pass.branch, &self.fusion) {
            (Some(_), Some(tr), Some(fu)) => {
                let gfu = grads.fusion.as_mut().expect("fusion");
                let (mut d_h, d_gcn) = fuse_recon_backward(h, tr.output(), fu, &d_in, gfu)?;
                self.backward_branch(pass, &mut d_h, d_gcn, grads);
                d_h
            }
            _ => d_in,
        };
        self.encoder.backward(&pass.enc, d_h, &mut grads.encoder);
        Ok(())
    }
}

impl Parameters for AnomalyModel {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        self.encoder.params(prefix, out);
        if let Some(h) = &self.head {
            h.params(&format!("{prefix}head"), out);
        }
        if let Some(b) = &self.branch {
            b.params(&format!("{prefix}branch."), out);
        }
        if let Some(f) = &self.fusion {
            f.params(prefix, out);
        }
        if let Some(d) = &self.decoder {
            d.params(prefix, out);
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.encoder.params_mut(out);
        if let Some(h) = &mut self.head {
            h.params_mut(out);
        }
        if let Some(b) = &mut self.branch {
            b.params_mut(out);
        }
        if let Some(f) = &mut self.fusion {
            f.params_mut(out);
        }
        if let Some(d) = &mut self.decoder {
            d.params_mut(out);
        }
    }
}
