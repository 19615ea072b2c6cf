use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    /// Global-node-guided multi-head graph attention.
    Kgf,
    ConcatFusion,
    SelfAttFusion,
    Gcn,
    IndependentGat,
}

impl FusionVariant {
    /// Row order of the fusion comparison table.
    pub const TABLE_ORDER: [FusionVariant; 5] = [
        FusionVariant::ConcatFusion,
        FusionVariant::SelfAttFusion,
        FusionVariant::Gcn,
        FusionVariant::IndependentGat,
        FusionVariant::Kgf,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            FusionVariant::Kgf => "KGF",
            FusionVariant::ConcatFusion => "Concat Fusion",
            FusionVariant::SelfAttFusion => "Self-att Fusion",
            FusionVariant::Gcn => "GCN",
            FusionVariant::IndependentGat => "Independent GAT",
        }
    }

    pub fn is_graph(self) -> bool {
        matches!(
            self,
            FusionVariant::Kgf | FusionVariant::Gcn | FusionVariant::IndependentGat
        )
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_t: usize,
    pub d_v: usize,
    /// Shared latent dimension after the per-source projections.
    pub d: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    /// Output width of each attention head.
    pub d_hidden: usize,
    /// Hidden width of the two-layer classifier.
    pub d_classifier: usize,
    pub num_classes: usize,
    pub fusion: FusionVariant,
    pub use_global_concat: bool,
    pub use_knowledge: bool,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_t: 16,
            d_v: 16,
            d: 32,
            num_heads: 4,
            num_layers: 2,
            d_hidden: 16,
            d_classifier: 32,
            num_classes: 5,
            fusion: FusionVariant::Kgf,
            use_global_concat: true,
            use_knowledge: true,
            leaky_slope: 0.2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_t", self.d_t),
            ("d_v", self.d_v),
            ("d", self.d),
            ("num_heads", self.num_heads),
            ("num_layers", self.num_layers),
            ("d_hidden", self.d_hidden),
            ("d_classifier", self.d_classifier),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::Config(format!(
                "leaky_slope {} outside (0, 1)",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Global concatenation only applies to the KGF stack.
    pub fn global_concat_active(&self) -> bool {
        self.fusion == FusionVariant::Kgf && self.use_global_concat
    }

    /// `(input, output)` widths of the per-head map at each graph layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut prev = self.d;
        (0..self.num_layers)
            .map(|l| {
                let input = if self.global_concat_active() {
                    5 * prev
                } else {
                    prev
                };
                prev = if l + 1 == self.num_layers {
                    self.d_hidden
                } else {
                    self.num_heads * self.d_hidden
                };
                (input, self.d_hidden)
            })
            .collect()
    }

    /// Width of the pooled representation fed to the classifier.
    pub fn pooled_dim(&self) -> usize {
        match self.fusion {
            FusionVariant::Kgf | FusionVariant::Gcn | FusionVariant::IndependentGat => {
                self.d_hidden
            }
            FusionVariant::SelfAttFusion => self.d,
            FusionVariant::ConcatFusion => {
                if self.use_knowledge {
                    5 * self.d
                } else {
                    4 * self.d
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_ledger() {
        let cfg = ModelConfig {
            d: 8,
            d_hidden: 4,
            num_heads: 4,
            ..ModelConfig::default()
        };
        assert_eq!(cfg.layer_dims(), vec![(40, 4), (80, 4)]);
        let indep = ModelConfig {
            fusion: FusionVariant::IndependentGat,
            ..cfg.clone()
        };
        assert_eq!(indep.layer_dims(), vec![(8, 4), (16, 4)]);
        let off = ModelConfig {
            use_global_concat: false,
            ..cfg
        };
        assert_eq!(off.layer_dims(), indep.layer_dims());
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            ModelConfig {
                num_heads: 0,
                ..ModelConfig::default()
            },
            ModelConfig {
                leaky_slope: 1.0,
                ..ModelConfig::default()
            },
            ModelConfig {
                num_classes: 1,
                ..ModelConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in FusionVariant::TABLE_ORDER {
            let s = serde_json::to_string(&v).unwrap();
            assert_eq!(serde_json::from_str::<FusionVariant>(&s).unwrap(), v);
        }
        assert_eq!(
            serde_json::to_string(&FusionVariant::IndependentGat).unwrap(),
            "\"independent_gat\""
        );
    }
}
