use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture selector: the full model and its four ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Multimodal graph with cross-modal edges and graph attention.
    Full,
    /// Multimodal graph with degree-normalized convolution instead of attention.
    Gcn,
    /// Separate unimodal graphs, pooled separately and concatenated.
    Concat,
    /// Text graph only.
    Text,
    /// Visual graph only.
    Visual,
}

impl Variant {
    /// Ablation table order.
    pub const ALL: [Variant; 5] = [
        Variant::Text,
        Variant::Visual,
        Variant::Concat,
        Variant::Gcn,
        Variant::Full,
    ];

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "GAME-ON",
            Variant::Gcn => "GCN-Fusion",
            Variant::Concat => "Concatenation",
            Variant::Text => "Textual",
            Variant::Visual => "Visual",
        }
    }

    pub fn uses_attention(self) -> bool {
        self != Variant::Gcn
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::Gcn => "gcn",
            Variant::Concat => "concat",
            Variant::Text => "text",
            Variant::Visual => "visual",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "game-on" | "gameon" => Ok(Variant::Full),
            "gcn" | "gcn-fusion" => Ok(Variant::Gcn),
            "concat" | "concatenation" => Ok(Variant::Concat),
            "text" | "textual" => Ok(Variant::Text),
            "visual" => Ok(Variant::Visual),
            other => Err(Error::Validation(format!(
                "unknown variant {other:?}; expected one of full, gcn, concat, text, visual"
            ))),
        }
    }
}

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Node feature width entering the shared projection.
    pub d_in: usize,
    /// Width of the shared multimodal space.
    pub d_shared: usize,
    /// Output width of each attention (or convolution) layer.
    pub d_gat: usize,
    /// Hidden width of the classifier.
    pub d_hidden: usize,
    pub n_classes: usize,
    /// Attention heads per layer; head outputs are averaged.
    pub n_heads: usize,
    pub n_gat_layers: usize,
    /// Feature dropout on graph-layer inputs and after the classifier ReLU.
    pub dropout: f64,
    pub leaky_slope: f64,
    pub variant: Variant,
    /// Bias on the message (feature) projection.
    pub gat_feat_bias: bool,
    /// Bias on the attention projection.
    pub gat_att_bias: bool,
    /// Use the message projection for attention scores too, instead of a
    /// separate attention projection.
    pub shared_gat_projection: bool,
    /// Connect every node to itself.
    pub self_loops: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 768,
            d_shared: 768,
            d_gat: 256,
            d_hidden: 128,
            n_classes: 2,
            n_heads: 1,
            n_gat_layers: 1,
            dropout: 0.4,
            leaky_slope: 0.2,
            variant: Variant::Full,
            gat_feat_bias: false,
            gat_att_bias: true,
            shared_gat_projection: false,
            self_loops: true,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_in", self.d_in),
            ("d_shared", self.d_shared),
            ("d_gat", self.d_gat),
            ("d_hidden", self.d_hidden),
            ("n_classes", self.n_classes),
            ("n_heads", self.n_heads),
            ("n_gat_layers", self.n_gat_layers),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("{name} must be positive")));
        }
        if self.n_classes < 2 {
            return Err(Error::Validation("n_classes must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Validation(format!(
                "leaky_slope {} outside (0,1)",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Width of the pooled representation fed to the classifier.
    pub fn classifier_input(&self) -> usize {
        match self.variant {
            Variant::Concat => 2 * self.d_gat,
            _ => self.d_gat,
        }
    }
}
