use serde::{Deserialize, Serialize};

use crate::attention::MipcVariant;
use crate::error::{Error, Result};

/// Overall downsampling from image to token grid: three stride-2 stem stages
/// and a stride-2 embedding.
pub const TOKEN_STRIDE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Tiny,
    Custom,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "tiny" => Ok(Preset::Tiny),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected paper, tiny or custom)"))),
        }
    }
}

/// Block applied to the stride-8 features before embedding, and to the
/// decoder feature that feeds the global residue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionBlock {
    /// Mutual-inclusion block.
    Mipc,
    /// Position and channel attention without mutual gating.
    Pc,
    /// No block.
    None,
}

/// Skip levels that receive the purified decoder feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GlPlacement {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "1")]
    First,
    #[serde(rename = "2")]
    Second,
    #[serde(rename = "3")]
    Third,
    #[serde(rename = "all")]
    All,
}

impl GlPlacement {
    pub const ALL: [GlPlacement; 5] =
        [GlPlacement::None, GlPlacement::First, GlPlacement::Second, GlPlacement::Third, GlPlacement::All];

    /// Whether skip level `level` (0 = stride 2) receives the global feature.
    pub fn includes(self, level: usize) -> bool {
        match self {
            GlPlacement::None => false,
            GlPlacement::First => level == 0,
            GlPlacement::Second => level == 1,
            GlPlacement::Third => level == 2,
            GlPlacement::All => level < 3,
        }
    }

    pub fn levels(self) -> Vec<usize> {
        (0..3).filter(|&l| self.includes(l)).collect()
    }

    pub fn label(self) -> &'static str {
        match self {
            GlPlacement::None => "none",
            GlPlacement::First => "1",
            GlPlacement::Second => "2",
            GlPlacement::Third => "3",
            GlPlacement::All => "all",
        }
    }
}

impl std::str::FromStr for GlPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GlPlacement::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown gl_placement `{s}` (expected none, 1, 2, 3 or all)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub hidden_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Preset,
    pub input_size: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub stem_base_width: usize,
    pub transformer: TransformerConfig,
    pub token_stride: usize,
    pub attention_block: AttentionBlock,
    pub mipc_variant: MipcVariant,
    pub use_da_skips: bool,
    pub gl_placement: GlPlacement,
}

impl ModelConfig {
    /// Full-size network: 224 px RGB input, 9 classes, ViT-B/16 transformer dims.
    pub fn paper() -> Self {
        Self {
            preset: Preset::Paper,
            input_size: 224,
            in_channels: 3,
            num_classes: 9,
            stem_base_width: 64,
            transformer: TransformerConfig { hidden_dim: 768, depth: 12, heads: 12, mlp_ratio: 4 },
            token_stride: TOKEN_STRIDE,
            attention_block: AttentionBlock::Mipc,
            mipc_variant: MipcVariant::default(),
            use_da_skips: true,
            gl_placement: GlPlacement::First,
        }
    }

    /// Desk-scale network: 64 px grayscale input, 4 classes.
    pub fn tiny() -> Self {
        Self {
            preset: Preset::Tiny,
            input_size: 64,
            in_channels: 1,
            num_classes: 4,
            stem_base_width: 8,
            transformer: TransformerConfig { hidden_dim: 64, depth: 2, heads: 4, mlp_ratio: 4 },
            token_stride: TOKEN_STRIDE,
            attention_block: AttentionBlock::Mipc,
            mipc_variant: MipcVariant::default(),
            use_da_skips: true,
            gl_placement: GlPlacement::First,
        }
    }

    /// Smallest useful network, sized for finite-difference checks.
    pub fn micro() -> Self {
        Self {
            preset: Preset::Custom,
            input_size: 32,
            in_channels: 1,
            num_classes: 3,
            stem_base_width: 4,
            transformer: TransformerConfig { hidden_dim: 16, depth: 1, heads: 2, mlp_ratio: 2 },
            ..Self::tiny()
        }
    }

    pub fn from_preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Tiny => Self::tiny(),
            Preset::Custom => Self::micro(),
        }
    }

    /// Disables encoder attention, DA skips and the global residue.
    pub fn baseline(mut self) -> Self {
        self.attention_block = AttentionBlock::None;
        self.use_da_skips = false;
        self.gl_placement = GlPlacement::None;
        self
    }

    pub fn grid_side(&self) -> usize {
        self.input_size / self.token_stride
    }

    pub fn num_tokens(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// Channel widths of the three stem stages.
    pub fn stage_widths(&self) -> [usize; 3] {
        let w = self.stem_base_width;
        [w, 2 * w, 4 * w]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        for (key, v) in [
            ("input_size", self.input_size),
            ("in_channels", self.in_channels),
            ("stem_base_width", self.stem_base_width),
            ("transformer.hidden_dim", self.transformer.hidden_dim),
            ("transformer.heads", self.transformer.heads),
            ("transformer.mlp_ratio", self.transformer.mlp_ratio),
        ] {
            if v == 0 {
                return fail(key, "must be positive".into());
            }
        }
        if !(2..=256).contains(&self.num_classes) {
            return fail("num_classes", format!("{} outside 2..=256", self.num_classes));
        }
        if self.token_stride != TOKEN_STRIDE {
            return fail("token_stride", format!("{} unsupported; the stem and embedding fix it at {TOKEN_STRIDE}", self.token_stride));
        }
        if self.input_size % self.token_stride != 0 {
            return fail("input_size", format!("{} is not divisible by token_stride {}", self.input_size, self.token_stride));
        }
        if self.transformer.hidden_dim % self.transformer.heads != 0 {
            return fail(
                "transformer.heads",
                format!("{} does not divide hidden_dim {}", self.transformer.heads, self.transformer.hidden_dim),
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [ModelConfig::paper(), ModelConfig::tiny(), ModelConfig::micro()] {
            cfg.validate().unwrap();
        }
        assert_eq!(ModelConfig::paper().num_tokens(), 196);
        assert_eq!(ModelConfig::tiny().num_tokens(), 16);
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let cfg = ModelConfig { input_size: 72, ..ModelConfig::tiny() };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("input_size"), "{err}");
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let cfg = ModelConfig::tiny();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"gl_placement\":\"1\""));
        assert_eq!(serde_json::from_str::<ModelConfig>(&text).unwrap(), cfg);
        let bad = text.replacen("\"use_da_skips\"", "\"use_da_skip\"", 1);
        let err = serde_json::from_str::<ModelConfig>(&bad).unwrap_err().to_string();
        assert!(err.contains("use_da_skip"), "{err}");
    }
}
