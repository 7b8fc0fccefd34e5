use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    /// Pretrained transformer loaded from a checkpoint.
    Llm,
    /// Same architecture as `Llm`, seeded re-initialization.
    Random,
    /// One linear map followed by LayerNorm. Tables label it "LN".
    #[serde(alias = "ln")]
    Linear,
    /// One multi-head self-attention layer.
    Att,
    /// One transformer encoder layer.
    Trans,
    /// Identity: embeddings go straight to the head.
    #[serde(alias = "no_llm")]
    Nollm,
}

impl VariantKind {
    pub const ALL: [VariantKind; 6] = [
        VariantKind::Llm,
        VariantKind::Random,
        VariantKind::Linear,
        VariantKind::Att,
        VariantKind::Trans,
        VariantKind::Nollm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Llm => "llm",
            VariantKind::Random => "random",
            VariantKind::Linear => "linear",
            VariantKind::Att => "att",
            VariantKind::Trans => "trans",
            VariantKind::Nollm => "nollm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "llm" => Ok(VariantKind::Llm),
            "random" => Ok(VariantKind::Random),
            "linear" | "ln" => Ok(VariantKind::Linear),
            "att" => Ok(VariantKind::Att),
            "trans" => Ok(VariantKind::Trans),
            "nollm" | "no_llm" => Ok(VariantKind::Nollm),
            other => config(format!("unknown variant `{other}`")),
        }
    }

    fn is_transformer(self) -> bool {
        matches!(self, VariantKind::Llm | VariantKind::Random)
    }
}

impl std::fmt::Display for VariantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum FreezePolicy {
    None,
    LayernormOnly,
    Lora { r: usize, alpha: f64 },
    FullFreeze,
}

impl FreezePolicy {
    pub const DEFAULT_LORA: FreezePolicy = FreezePolicy::Lora { r: 8, alpha: 16.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
}

/// Token-mixing then feature-mixing MLP pair that shrinks `K + S` tokens to `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixerSpec {
    pub m: usize,
    #[serde(default = "default_token_hidden")]
    pub token_hidden: usize,
    /// Defaults to twice the token width when absent.
    #[serde(default)]
    pub feature_hidden: Option<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_token_hidden() -> usize {
    32
}

fn default_activation() -> Activation {
    Activation::Gelu
}

impl Default for MixerSpec {
    fn default() -> Self {
        Self {
            m: 16,
            token_hidden: default_token_hidden(),
            feature_hidden: None,
            activation: Activation::Gelu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSpec {
    pub period: usize,
    pub kernel: usize,
}

impl Default for DecompositionSpec {
    fn default() -> Self {
        Self { period: 24, kernel: 25 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Mechanisms {
    /// Top-K text prototypes prepended to the series tokens.
    #[serde(default)]
    pub prototypes: Option<usize>,
    #[serde(default)]
    pub decomposition: Option<DecompositionSpec>,
    #[serde(default)]
    pub mixer: Option<MixerSpec>,
    /// Prototype bank size when no checkpoint vocabulary is available.
    #[serde(default)]
    pub bank_size: Option<usize>,
}

impl Mechanisms {
    pub fn is_empty(&self) -> bool {
        self.prototypes.is_none() && self.decomposition.is_none() && self.mixer.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub kind: VariantKind,
    #[serde(default)]
    pub depth: Option<usize>,
    /// Token width `D`; defaults to the experiment's width.
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default)]
    pub heads: Option<usize>,
    /// Defaults to `layernorm_only` for `llm`/`random`, `none` otherwise.
    #[serde(default)]
    pub freeze_policy: Option<FreezePolicy>,
    #[serde(default)]
    pub mechanisms: Mechanisms,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Rows of the positional table; defaults to the sequence length.
    #[serde(default)]
    pub max_positions: Option<usize>,
}

impl VariantSpec {
    pub fn new(kind: VariantKind) -> Self {
        Self {
            kind,
            depth: None,
            width: None,
            heads: None,
            freeze_policy: None,
            mechanisms: Mechanisms::default(),
            checkpoint: None,
            max_positions: None,
        }
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = Some(depth);
        self
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = Some(heads);
        self
    }

    pub fn with_policy(mut self, policy: FreezePolicy) -> Self {
        self.freeze_policy = Some(policy);
        self
    }

    pub fn with_checkpoint(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint = Some(path.into());
        self
    }

    pub fn effective_policy(&self) -> FreezePolicy {
        self.freeze_policy.unwrap_or(if self.kind.is_transformer() {
            FreezePolicy::LayernormOnly
        } else {
            FreezePolicy::None
        })
    }

    pub fn effective_heads(&self, width: usize) -> usize {
        self.heads.unwrap_or(if width.is_multiple_of(4) { 4 } else { 1 })
    }

    pub fn effective_depth(&self) -> usize {
        self.depth.unwrap_or(match self.kind {
            VariantKind::Llm | VariantKind::Random => 2,
            VariantKind::Att | VariantKind::Trans => 1,
            VariantKind::Linear | VariantKind::Nollm => 0,
        })
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        if width == 0 {
            return config("width must be positive");
        }
        if let Some(w) = self.width {
            if w != width {
                return config(format!("variant width {w} differs from token width {width}"));
            }
        }
        match self.kind {
            VariantKind::Linear | VariantKind::Nollm => {
                if self.depth.is_some() || self.heads.is_some() {
                    return config(format!("variant `{}` takes no depth or heads", self.kind));
                }
            }
            _ => {
                let heads = self.effective_heads(width);
                if heads == 0 || !width.is_multiple_of(heads) {
                    return config(format!("{heads} heads do not divide width {width}"));
                }
                if self.effective_depth() == 0 {
                    return config("depth must be at least 1");
                }
            }
        }
        if self.kind == VariantKind::Llm && self.checkpoint.is_none() {
            return config("variant `llm` requires a checkpoint");
        }
        if let FreezePolicy::Lora { r, alpha } = self.effective_policy() {
            if r == 0 {
                return config("LoRA rank must be at least 1");
            }
            if !alpha.is_finite() || alpha <= 0.0 {
                return config("LoRA alpha must be positive");
            }
        }
        if let Some(k) = self.mechanisms.prototypes {
            if k == 0 {
                return config("prototype count K must be at least 1");
            }
        }
        if let Some(mx) = &self.mechanisms.mixer {
            if mx.m == 0 {
                return config("mixer output count m must be at least 1");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants() {
        assert!(VariantSpec::new(VariantKind::Llm).validate(16).is_err());
        assert!(VariantSpec::new(VariantKind::Linear).with_depth(2).validate(16).is_err());
        assert!(VariantSpec::new(VariantKind::Nollm).with_heads(2).validate(16).is_err());
        assert!(VariantSpec::new(VariantKind::Random)
            .with_policy(FreezePolicy::Lora { r: 0, alpha: 1.0 })
            .validate(16)
            .is_err());
        assert!(VariantSpec::new(VariantKind::Random).with_heads(3).validate(16).is_err());
        assert!(VariantSpec::new(VariantKind::Random).validate(16).is_ok());
    }

    #[test]
    fn serde_names() {
        let s: VariantSpec = serde_json::from_str(r#"{"kind":"ln"}"#).unwrap();
        assert_eq!(s.kind, VariantKind::Linear);
        let p: FreezePolicy = serde_json::from_str(r#"{"policy":"lora","r":4,"alpha":8.0}"#).unwrap();
        assert_eq!(p, FreezePolicy::Lora { r: 4, alpha: 8.0 });
        assert_eq!(VariantKind::parse("NoLLM").unwrap(), VariantKind::Nollm);
    }
}
