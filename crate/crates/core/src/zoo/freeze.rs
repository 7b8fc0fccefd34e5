use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::Backbone;
use super::variant::{FreezePolicy, VariantSpec};
use crate::autograd::{ParamGroup, ParamStore};
use crate::error::{config, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub name: String,
    pub size: usize,
    pub trainable: bool,
}

/// Trainability of every backbone tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainableMask {
    pub entries: Vec<MaskEntry>,
    pub total: usize,
    pub trainable: usize,
}

impl TrainableMask {
    pub fn of(backbone: &Backbone, store: &ParamStore) -> Self {
        let entries: Vec<MaskEntry> = backbone
            .param_ids()
            .iter()
            .map(|&id| {
                let p = store.get(id);
                MaskEntry {
                    name: p.name.clone(),
                    size: p.value.len(),
                    trainable: p.trainable,
                }
            })
            .collect();
        let total = entries.iter().map(|e| e.size).sum();
        let trainable = entries.iter().filter(|e| e.trainable).map(|e| e.size).sum();
        Self {
            entries,
            total,
            trainable,
        }
    }
}

fn has_group(backbone: &Backbone, store: &ParamStore, g: ParamGroup) -> bool {
    backbone.param_ids().iter().any(|&id| store.get(id).group == g)
}

/// Sets trainability flags on the backbone's parameters. LoRA attaches
/// adapters first (seeded by `rng`) and then trains only those.
pub fn apply_freeze_policy(
    backbone: &mut Backbone,
    store: &mut ParamStore,
    policy: FreezePolicy,
    rng: &mut ChaCha8Rng,
) -> Result<TrainableMask> {
    let rule: fn(ParamGroup) -> bool = match policy {
        FreezePolicy::None => |_| true,
        FreezePolicy::FullFreeze => |_| false,
        FreezePolicy::LayernormOnly => {
            if !has_group(backbone, store, ParamGroup::LayerNorm) {
                return config(format!("layernorm_only: variant `{}` has no LayerNorm parameters", backbone.kind));
            }
            |g| matches!(g, ParamGroup::LayerNorm | ParamGroup::Positional)
        }
        FreezePolicy::Lora { r, alpha } => {
            if backbone.attention_layers().is_empty() {
                return config(format!("lora: variant `{}` has no attention projections", backbone.kind));
            }
            backbone.attach_lora(store, r, alpha, rng)?;
            |g| g == ParamGroup::Adapter
        }
    };
    for &id in backbone.param_ids() {
        let p = store.get_mut(id);
        p.trainable = rule(p.group);
    }
    Ok(TrainableMask::of(backbone, store))
}

/// Builds the backbone described by `spec` for `seq_len` tokens of width
/// `width`, with its freeze policy applied. Same spec and seed give
/// bitwise-identical parameters.
pub fn build_variant(
    spec: &VariantSpec,
    width: usize,
    seq_len: usize,
    seed: u64,
) -> Result<(Backbone, ParamStore, TrainableMask)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (backbone, mask) = build_variant_into(&mut store, spec, width, seq_len, &mut rng)?;
    Ok((backbone, store, mask))
}

/// As [`build_variant`] but registering into an existing store.
pub fn build_variant_into(
    store: &mut ParamStore,
    spec: &VariantSpec,
    width: usize,
    seq_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Backbone, TrainableMask)> {
    let mut backbone = Backbone::build(store, spec, width, seq_len, rng)?;
    let mask = apply_freeze_policy(&mut backbone, store, spec.effective_policy(), rng)?;
    Ok((backbone, mask))
}
