//! Run configuration, read from and written to TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LgsanError, Result};
use crate::ops::PadMode;

/// The three ablation switches: language grounding (`c`), Fourier edge
/// enhancement (`e`) and the structure-aware attention plus local refinement
/// decoder (`sc`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AblationFlags {
    pub grounding: bool,
    pub edge: bool,
    pub structure: bool,
}

impl AblationFlags {
    pub const BASE: Self = Self { grounding: false, edge: false, structure: false };
    pub const FULL: Self = Self { grounding: true, edge: true, structure: true };

    /// B, B+C, B+C+E, B+C+E+SC.
    pub fn ladder() -> [Self; 4] {
        [
            Self::BASE,
            Self { grounding: true, ..Self::BASE },
            Self { grounding: true, edge: true, structure: false },
            Self::FULL,
        ]
    }

    pub fn label(&self) -> String {
        let mut s = String::from("B");
        if self.grounding {
            s.push_str("+C");
        }
        if self.edge {
            s.push_str("+E");
        }
        if self.structure {
            s.push_str("+SC");
        }
        s
    }
}

impl FromStr for AblationFlags {
    type Err = LgsanError;

    fn from_str(s: &str) -> Result<Self> {
        let mut f = Self::BASE;
        for tok in s.split([',', '+']).map(str::trim).filter(|t| !t.is_empty()) {
            match tok.to_ascii_lowercase().as_str() {
                "b" | "none" => {}
                "c" => f.grounding = true,
                "e" => f.edge = true,
                "sc" => f.structure = true,
                other => return Err(LgsanError::Config(format!("unknown ablation flag {other:?}"))),
            }
        }
        Ok(f)
    }
}

impl fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.grounding {
            parts.push("c");
        }
        if self.edge {
            parts.push("e");
        }
        if self.structure {
            parts.push("sc");
        }
        f.write_str(&parts.join(","))
    }
}

impl Serialize for AblationFlags {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AblationFlags {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub decoder_channels: usize,
    pub head_channels: usize,
    /// Pad inputs whose sides are not multiples of 32 and crop predictions back.
    pub pad_to_multiple: bool,
    /// Run prediction heads on upsampled features instead of upsampling logits.
    pub full_res_heads: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { decoder_channels: 24, head_channels: 8, pad_to_multiple: false, full_res_heads: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSection {
    pub channels: [usize; 4],
    /// Extra stride-1 residual convolutions per stage.
    pub depth: usize,
    pub pretrained_adapter: Option<String>,
}

impl Default for BackboneSection {
    fn default() -> Self {
        Self { channels: [16, 32, 48, 64], depth: 1, pretrained_adapter: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingProvider {
    Synthetic,
    PretrainedAdapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundingSection {
    pub enabled: bool,
    pub provider: GroundingProvider,
    pub text_dim: usize,
    pub visual_channels: usize,
    pub attn_channels: usize,
    pub text_seed: u64,
    pub prompt_template: String,
}

impl Default for GroundingSection {
    fn default() -> Self {
        Self {
            enabled: true,
            provider: GroundingProvider::Synthetic,
            text_dim: 32,
            visual_channels: 24,
            attn_channels: 32,
            text_seed: 0,
            prompt_template: "a photo of the camouflaged {category}".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerSection {
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for TransformerSection {
    fn default() -> Self {
        Self { depth: 1, heads: 2, mlp_ratio: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeemSection {
    pub channels: usize,
    pub cutoff_ratio: f64,
    pub padding_mode: PadMode,
}

impl Default for FeemSection {
    fn default() -> Self {
        Self { channels: 16, cutoff_ratio: 0.25, padding_mode: PadMode::Zeros }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaamSection {
    pub dim: usize,
}

impl Default for SaamSection {
    fn default() -> Self {
        Self { dim: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CglrmSection {
    pub shared_local_weights: bool,
    pub reduction: usize,
}

impl Default for CglrmSection {
    fn default() -> Self {
        Self { shared_local_weights: true, reduction: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr: f64,
    pub poly_power: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Validate every this many steps; 0 validates only at the end.
    pub eval_every: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self { lr: 1e-4, poly_power: 0.9, steps: 600, batch_size: 4, eval_every: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset directory; synthetic data is generated when absent.
    pub root: Option<PathBuf>,
    pub size: usize,
    pub samples: usize,
    pub camo_strength: f64,
    pub val_fraction: f64,
    /// Seed of the synthetic generator, independent of the model seed.
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { root: None, size: 64, samples: 250, camo_strength: 0.7, val_fraction: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub lambda: f64,
    pub flags: AblationFlags,
    pub model: ModelSection,
    pub backbone: BackboneSection,
    pub grounding: GroundingSection,
    pub transformer: TransformerSection,
    pub feem: FeemSection,
    pub saam: SaamSection,
    pub cglrm: CglrmSection,
    pub optimizer: OptimizerSection,
    pub data: DataSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lambda: 5.0,
            flags: AblationFlags::FULL,
            model: ModelSection::default(),
            backbone: BackboneSection::default(),
            grounding: GroundingSection::default(),
            transformer: TransformerSection::default(),
            feem: FeemSection::default(),
            saam: SaamSection::default(),
            cglrm: CglrmSection::default(),
            optimizer: OptimizerSection::default(),
            data: DataSection::default(),
        }
    }
}

impl RunConfig {
    /// The original training regime: 521x521 inputs padded to 544, batch 4,
    /// 25 epochs over the data.
    pub fn full_scale() -> Self {
        let mut c = Self::default();
        c.model.pad_to_multiple = true;
        c.data.size = 521;
        c.backbone.channels = [64, 128, 320, 512];
        c.model.decoder_channels = 64;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LgsanError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LgsanError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short digest of the full serialized configuration.
    pub fn hash(&self) -> String {
        digest(&self.to_toml())
    }

    /// Digest of everything that determines the parameter layout.
    pub fn architecture_hash(&self) -> String {
        let arch = (
            self.effective_flags().to_string(),
            &self.model,
            &self.backbone,
            &self.grounding,
            &self.transformer,
            &self.feem,
            &self.saam,
            &self.cglrm,
        );
        digest(&toml::to_string(&Wrapper { arch }).expect("config serializes"))
    }

    /// `grounding.enabled = false` turns the C flag off.
    pub fn effective_flags(&self) -> AblationFlags {
        AblationFlags { grounding: self.flags.grounding && self.grounding.enabled, ..self.flags }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LgsanError::Config(m));
        if !(self.feem.cutoff_ratio > 0.0 && self.feem.cutoff_ratio < 1.0) {
            return bad(format!("feem.cutoff_ratio must lie in (0, 1), got {}", self.feem.cutoff_ratio));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.backbone.channels.contains(&0) || self.model.decoder_channels == 0 || self.saam.dim == 0 {
            return bad("channel widths must be positive".into());
        }
        if self.transformer.heads == 0 || self.grounding.attn_channels % self.transformer.heads != 0 {
            return bad(format!(
                "grounding.attn_channels ({}) must be divisible by transformer.heads ({})",
                self.grounding.attn_channels, self.transformer.heads
            ));
        }
        if self.cglrm.reduction == 0 || self.cglrm.reduction > self.model.decoder_channels {
            return bad("cglrm.reduction must lie in 1..=decoder_channels".into());
        }
        if !self.model.pad_to_multiple && self.data.size % 32 != 0 {
            return bad(format!(
                "data.size {} is not a multiple of 32; enable model.pad_to_multiple",
                self.data.size
            ));
        }
        if self.optimizer.lr <= 0.0 || self.optimizer.batch_size == 0 || self.optimizer.steps == 0 {
            return bad("optimizer.lr, batch_size and steps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.data.camo_strength) || !(0.0..1.0).contains(&self.data.val_fraction) {
            return bad("data.camo_strength must lie in [0, 1] and data.val_fraction in [0, 1)".into());
        }
        if self.grounding.provider == GroundingProvider::PretrainedAdapter || self.backbone.pretrained_adapter.is_some() {
            return bad("pretrained adapters are plug-in only; none is registered in this build".into());
        }
        if !self.grounding.prompt_template.contains("{category}") {
            return bad("grounding.prompt_template must contain {category}".into());
        }
        Ok(())
    }

    pub fn prompt_for(&self, category: &str) -> String {
        self.grounding.prompt_template.replace("{category}", category)
    }
}

#[derive(Serialize)]
struct Wrapper<T: Serialize> {
    arch: T,
}

fn digest(s: &str) -> String {
    hex::encode(&Sha256::digest(s.as_bytes())[..8])
}

/// Poly learning-rate decay `lr0 * (1 - step / total)^power`.
pub fn poly_lr(lr0: f64, step: usize, total: usize, power: f64) -> f64 {
    let frac = (step as f64 / total.max(1) as f64).min(1.0);
    lr0 * (1.0 - frac).powf(power)
}
