use serde::{Deserialize, Serialize};

use crate::tensor::{Result, TensorError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Embeddings, graph attention, GRU, affine head.
    #[default]
    Gam,
    /// GAM with the time-aware attention head.
    GamTa,
    /// LSTM over the raw zero-padded attribute vectors.
    Lstm,
    /// GRU over the glucose row only.
    GruGlucoseOnly,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Gam => "gam",
            Variant::GamTa => "gam_ta",
            Variant::Lstm => "lstm",
            Variant::GruGlucoseOnly => "gru_glucose_only",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gam" => Ok(Variant::Gam),
            "gam_ta" => Ok(Variant::GamTa),
            "lstm" => Ok(Variant::Lstm),
            "gru_glucose_only" => Ok(Variant::GruGlucoseOnly),
            _ => Err(format!(
                "unknown variant `{s}` (expected gam, gam_ta, lstm or gru_glucose_only)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatActivation {
    #[default]
    Elu,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// N
    pub n_attributes: usize,
    /// Row of the glucose attribute, used by `gru_glucose_only`.
    pub glucose_index: usize,
    /// T
    pub history: usize,
    /// W
    pub horizon: usize,
    /// E
    pub embed_dim: usize,
    /// E′
    pub gat_dim: usize,
    /// M
    pub heads: usize,
    /// L
    pub layers: usize,
    /// H
    pub hidden: usize,
    pub gat_activation: GatActivation,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Gam,
            n_attributes: 6,
            glucose_index: 0,
            history: 12,
            horizon: 6,
            embed_dim: 32,
            gat_dim: 32,
            heads: 1,
            layers: 1,
            hidden: 256,
            gat_activation: GatActivation::Elu,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_attributes", self.n_attributes),
            ("history", self.history),
            ("horizon", self.horizon),
            ("embed_dim", self.embed_dim),
            ("gat_dim", self.gat_dim),
            ("heads", self.heads),
            ("layers", self.layers),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(TensorError::Contract(format!("model {name} must be at least 1")));
        }
        if self.glucose_index >= self.n_attributes {
            return Err(TensorError::Contract(format!(
                "glucose index {} outside {} attributes",
                self.glucose_index, self.n_attributes
            )));
        }
        if !self.leaky_slope.is_finite() {
            return Err(TensorError::Contract("leaky slope must be finite".into()));
        }
        Ok(())
    }
}
