//! End-to-end model: backbone pyramid → fused map → grouped local
//! semantics + global semantic vector → association graph → semantic
//! vector group S. Every ablation switch swaps one stage for its
//! shape-preserving bypass, so any checkpoint feeds the same scoring path.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{self, BackboneIds, BackboneParams};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fusion::{self, FusionIds, FusionParams};
use crate::gem::{self, GemIds, GemParams};
use crate::gla::{self, GlaIds, GlaParams};
use crate::lid::{self, LidIds, LidParams};
use crate::tensor::{Scalar, Tape, Tensor, TensorId};

const SALT_INIT: u64 = 0x1217_0001;

#[derive(Debug)]
pub struct Model {
    pub backbone: BackboneParams,
    pub fusion: FusionParams,
    pub lid: LidParams,
    pub gem: GemParams,
    pub gla: GlaParams,
}

pub struct ModelIds {
    pub backbone: BackboneIds,
    pub fusion: FusionIds,
    pub lid: LidIds,
    pub gem: GemIds,
    pub gla: GlaIds,
}

impl Model {
    /// Fresh parameters drawn deterministically from the run seed.
    pub fn init(cfg: &RunConfig) -> Result<Model> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SALT_INIT);
        Ok(Model {
            backbone: BackboneParams::init(&mut rng, cfg.channels),
            fusion: FusionParams::init(&mut rng, cfg.channels, cfg.fused_channels()),
            lid: LidParams::init(&mut rng, cfg.d_w, cfg.n_groups, cfg.per_group_weights),
            gem: GemParams::init(&mut rng, cfg.channels[2], cfg.d_w),
            gla: GlaParams::init(&mut rng, cfg.d_w, cfg.n_groups, cfg.learnable_affinity)?,
        })
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.backbone.named();
        out.extend(self.fusion.named());
        out.extend(self.lid.named());
        out.extend(self.gem.named());
        out.extend(self.gla.named());
        out
    }

    /// Mutable parameters, ordered exactly as [`Self::named`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.backbone.params_mut();
        out.extend(self.fusion.params_mut());
        out.extend(self.lid.params_mut());
        out.extend(self.gem.params_mut());
        out.extend(self.gla.params_mut());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, cfg: &RunConfig) -> Result<ModelIds> {
        Ok(ModelIds {
            backbone: self.backbone.bind(tape),
            fusion: self.fusion.bind(tape),
            lid: self.lid.bind(tape),
            gem: self.gem.bind(tape),
            gla: self.gla.bind(tape, cfg.n_groups)?,
        })
    }

    /// Restore parameters from a named-tensor map (checkpoint contents).
    pub fn load_from(&mut self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let names: Vec<String> = self.named().iter().map(|(n, _)| n.clone()).collect();
        for (name, param) in names.iter().zip(self.params_mut()) {
            let loaded = tensors
                .get(name)
                .ok_or_else(|| Error::Usage(format!("checkpoint is missing tensor `{name}`")))?;
            if loaded.shape() != param.shape() {
                return Err(Error::Usage(format!(
                    "checkpoint tensor `{name}` has shape {:?}, model wants {:?}",
                    loaded.shape(),
                    param.shape()
                )));
            }
            param.data_mut().copy_from_slice(loaded.data());
            param.grad = None;
        }
        Ok(())
    }
}

/// Parameter leaf handles in exactly the order of [`Model::named`] /
/// [`Model::params_mut`]; the constant affinity leaf is excluded unless it
/// is learnable.
pub fn ordered_param_ids(ids: &ModelIds, learnable_affinity: bool) -> Vec<TensorId> {
    let mut out = Vec::new();
    for stage in &ids.backbone.stages {
        for &(w, b) in stage {
            out.push(w);
            out.push(b);
        }
    }
    for pair in [ids.fusion.proj_hi, ids.fusion.proj_lo, ids.fusion.out, ids.fusion.bypass] {
        out.push(pair.0);
        out.push(pair.1);
    }
    for s in &ids.lid.sets {
        out.extend([s.embed, s.wq, s.wk, s.wv, s.ffn_w1, s.ffn_b1, s.ffn_w2, s.ffn_b2]);
    }
    out.extend([
        ids.gem.mlp_w1,
        ids.gem.mlp_b1,
        ids.gem.mlp_w2,
        ids.gem.mlp_b2,
        ids.gem.screen_w,
        ids.gem.screen_b,
    ]);
    out.push(ids.gla.w_s);
    if learnable_affinity {
        out.push(ids.gla.affinity);
    }
    out
}

/// Rebuild a [`ModelIds`] from parameter leaves bound by someone else (the
/// gradient checker), in [`ordered_param_ids`] order. Counts must match the
/// model layout implied by `cfg`.
pub fn ids_from_ordered<T: Scalar>(
    tape: &mut Tape<T>,
    ordered: &[TensorId],
    cfg: &RunConfig,
) -> Result<ModelIds> {
    let mut it = ordered.iter().copied();
    let mut next = |what: &str| {
        it.next()
            .ok_or_else(|| Error::Usage(format!("ordered parameter list too short at {what}")))
    };
    let mut stages = Vec::with_capacity(3);
    for _ in 0..3 {
        stages.push([
            (next("backbone.w")?, next("backbone.b")?),
            (next("backbone.w")?, next("backbone.b")?),
        ]);
    }
    let backbone = BackboneIds { stages };
    let fusion = FusionIds {
        proj_hi: (next("fusion")?, next("fusion")?),
        proj_lo: (next("fusion")?, next("fusion")?),
        out: (next("fusion")?, next("fusion")?),
        bypass: (next("fusion")?, next("fusion")?),
    };
    let set_count = if cfg.per_group_weights { cfg.n_groups } else { 1 };
    let mut sets = Vec::with_capacity(set_count);
    for _ in 0..set_count {
        sets.push(crate::lid::LidWeightIds {
            embed: next("lid")?,
            wq: next("lid")?,
            wk: next("lid")?,
            wv: next("lid")?,
            ffn_w1: next("lid")?,
            ffn_b1: next("lid")?,
            ffn_w2: next("lid")?,
            ffn_b2: next("lid")?,
        });
    }
    let lid = LidIds { sets };
    let gem = GemIds {
        mlp_w1: next("gem")?,
        mlp_b1: next("gem")?,
        mlp_w2: next("gem")?,
        mlp_b2: next("gem")?,
        screen_w: next("gem")?,
        screen_b: next("gem")?,
    };
    let w_s = next("gla")?;
    let affinity = if cfg.learnable_affinity {
        next("gla")?
    } else {
        tape.leaf_cast(&gla::build_affinity(cfg.n_groups)?)
    };
    if it.next().is_some() {
        return Err(Error::Usage("ordered parameter list too long".into()));
    }
    Ok(ModelIds {
        backbone,
        fusion,
        lid,
        gem,
        gla: GlaIds { w_s, affinity },
    })
}

/// Run the full pipeline for one image already on the tape; returns the
/// n×d_w semantic vector group.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    ids: &ModelIds,
    cfg: &RunConfig,
    image: TensorId,
) -> Result<TensorId> {
    let slope = cfg.leaky_slope;
    let pyramid = backbone::forward_pyramid(tape, &ids.backbone, image, slope)?;

    let fused = if cfg.ablation.mlfef {
        fusion::fuse_all(tape, &ids.fusion, &pyramid, slope)?
    } else {
        fusion::project_mid_only(tape, &ids.fusion, pyramid.f_mid, slope)?
    };

    let groups = lid::split_groups(tape, fused, cfg.n_groups, cfg.d_w)?;
    let locals = if cfg.ablation.lid {
        lid::local_semantics(tape, &ids.lid, &groups, cfg.attention_scale, slope)?
    } else {
        lid::pool_groups_only(tape, &groups)?
    };

    if cfg.ablation.gla {
        let gf = if cfg.ablation.gem {
            let desc = gem::channel_descriptor(tape, pyramid.f_lo)?;
            let enhanced =
                gem::channel_enhance(tape, &ids.gem, &desc, pyramid.f_lo, cfg.gate_sigmoid, slope)?;
            gem::global_semantic(tape, &ids.gem, enhanced)?
        } else {
            gem::screen_only(tape, &ids.gem, pyramid.f_lo)?
        };
        gla::graph_forward(tape, locals, gf, &ids.gla, slope)
    } else {
        gla::no_graph_forward(tape, locals, &ids.gla, slope)
    }
}
