//! The full classifier: staged backbone plus residual and spatial CNN
//! branches, channel refinement and augmentation, spatial attention, and
//! the softmax head.

pub mod backbone;
pub mod branches;
pub mod config;
pub mod fusion;
pub mod ict;
pub mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::params::ParamStore;
use crate::scalar::Scalar;

pub use config::{BackboneConfig, HsFuseConfig, ModelConfig, StageConfig};

pub struct Model {
    pub config: ModelConfig,
    pub backbone: backbone::Backbone,
    pub residual: branches::ResidualBranch,
    pub spatial: branches::SpatialBranch,
    pub cfa_residual: fusion::Cfa,
    pub cfa_spatial: fusion::Cfa,
    pub spatial_attention: fusion::SpatialAttention,
    pub head: fusion::Head,
}

pub struct ModelOut {
    pub logits: Value,
    /// Pooled pre-classifier features (N, fused_channels, 1, 1).
    pub penultimate: Value,
    pub fused: Value,
    pub stage_outputs: Vec<Value>,
}

impl Model {
    /// Build the parameter set for `config`, deterministically under `seed`.
    pub fn build<T: Scalar>(
        config: &ModelConfig,
        ps: &mut ParamStore<T>,
        seed: u64,
    ) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ctx = layers::InitCtx::new(ps, &mut rng);
        let grids = config.stage_grids();
        let backbone = backbone::Backbone::init(
            &mut ctx,
            "backbone",
            &config.backbone,
            &grids,
            config.irffn_ratio,
            config.attn_window,
            config.eq10_literal,
        )?;
        let residual = branches::ResidualBranch::init(&mut ctx, "residual", &config.residual_widths)?;
        let spatial = branches::SpatialBranch::init(&mut ctx, "spatial", &config.spatial_widths)?;
        let cfa_residual = fusion::Cfa::init(&mut ctx, "fusion.cfa_residual", config.residual_widths[3])?;
        let cfa_spatial = fusion::Cfa::init(&mut ctx, "fusion.cfa_spatial", config.spatial_widths[4])?;
        let spatial_attention = fusion::SpatialAttention::init(&mut ctx, "fusion.spatial_attention")?;
        let head = fusion::Head::init(
            &mut ctx,
            "head",
            config.fused_channels(),
            config.num_classes,
            config.dropout,
        )?;
        Ok(Model {
            config: config.clone(),
            backbone,
            residual,
            spatial,
            cfa_residual,
            cfa_spatial,
            spatial_attention,
            head,
        })
    }

    /// Full forward pass on an (N, 3, H, W) input node.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<ModelOut> {
        let shape = g.value(x).shape();
        if shape.c() != 3 {
            return Err(Error::dim("input channels", 3, shape.c()));
        }
        let (backbone_map, stage_outputs) = self.backbone.forward(g, ps, x)?;
        let res_map = self.residual.forward(g, ps, x)?;
        let spat_map = self.spatial.forward(g, ps, x)?;
        let res_refined = self.cfa_residual.forward(g, ps, res_map)?;
        let spat_refined = self.cfa_spatial.forward(g, ps, spat_map)?;
        let fused = fusion::channel_augment(g, res_refined, spat_refined, backbone_map)?;
        let attended = self.spatial_attention.forward(g, ps, fused)?;
        let head_out = self.head.forward(g, ps, attended)?;
        Ok(ModelOut {
            logits: head_out.logits,
            penultimate: head_out.penultimate,
            fused,
            stage_outputs,
        })
    }

    /// Class probabilities: softmax over the logits' channel axis.
    pub fn classify<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<(Value, ModelOut)> {
        let out = self.forward(g, ps, x)?;
        let probs = g.softmax(out.logits, 1)?;
        Ok((probs, out))
    }
}

/// Overwrite branch (or any) parameters from another store where names
/// match; returns (matched, skipped) name lists. A shape mismatch on a
/// matched name is a hard error naming the tensor.
pub fn import_pretrained<T: Scalar>(
    target: &mut ParamStore<T>,
    source: &ParamStore<T>,
    name_filter: impl Fn(&str) -> bool,
) -> Result<(Vec<String>, Vec<String>)> {
    let mut matched = Vec::new();
    let mut skipped = Vec::new();
    for p in source.iter() {
        if !name_filter(&p.name) {
            continue;
        }
        match target.lookup(&p.name) {
            Some(id) => {
                let want = target.value(id).shape();
                if want != p.value.shape() {
                    return Err(Error::Format(format!(
                        "checkpoint tensor {} has shape {}, model expects {}",
                        p.name,
                        p.value.shape(),
                        want
                    )));
                }
                target.set_value(id, p.value.clone());
                matched.push(p.name.clone());
            }
            None => skipped.push(p.name.clone()),
        }
    }
    Ok((matched, skipped))
}
