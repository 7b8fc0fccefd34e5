//! Backbone variants that stand in for the language model, plus the
//! reprogramming pieces layered around them: freeze policies, LoRA
//! adapters, text-prototype selection and Mixer fusion.

mod backbone;
mod checkpoint;
mod freeze;
mod lora;
mod mixer;
mod pretrain;
mod prototypes;
mod variant;

pub use backbone::{gpt_tensor_shapes, Backbone, Dense, LayerNormIds, LoraIds, SelfAttention, Snapshots};
pub use checkpoint::Checkpoint;
pub use freeze::{apply_freeze_policy, build_variant, build_variant_into, MaskEntry, TrainableMask};
pub use lora::{lora_wrap, random_weight, LoraLinear};
pub use mixer::Mixer;
pub use pretrain::{pretrain_checkpoint, PretrainConfig, PretrainReport};
pub use prototypes::{select_prototypes, BankSource, PrototypeBank, Selection};
pub use variant::{Activation, DecompositionSpec, FreezePolicy, Mechanisms, MixerSpec, VariantKind, VariantSpec};
