//! Production weights and depth limits for concept sampling.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Alternative labels per nonterminal, in grammar listing order. These are
/// the keys accepted by weight overrides (`weight.<nonterminal>.<label>`)
/// and the names recorded in run manifests.
pub mod labels {
    pub const START: [&str; 2] = ["exists", "for_all"];
    pub const BOOLEAN: [&str; 22] = [
        "and",
        "or",
        "not",
        "eq_color",
        "eq_shape",
        "eq_material",
        "eq_size",
        "eq_location",
        "eq_number",
        "gt_size",
        "gt_location",
        "gt_number",
        "all_color",
        "all_shape",
        "all_material",
        "all_size",
        "all_location",
        "any_color",
        "any_shape",
        "any_material",
        "any_size",
        "any_location",
    ];
    pub const NUMBER: [&str; 8] = [
        "count_color",
        "count_shape",
        "count_material",
        "count_size",
        "count_location",
        "lit_1",
        "lit_2",
        "lit_3",
    ];
    pub const COLOR: [&str; 9] = [
        "gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow", "access",
    ];
    pub const SHAPE: [&str; 4] = ["cube", "sphere", "cylinder", "access"];
    pub const MATERIAL: [&str; 3] = ["rubber", "metal", "access"];
    pub const SIZE: [&str; 3] = ["large", "small", "access"];
    pub const LOCATION: [&str; 9] = [
        "lit_1", "lit_2", "lit_3", "lit_4", "lit_5", "lit_6", "lit_7", "lit_8", "access",
    ];
    pub const SET: [&str; 2] = ["s", "s_minus_x"];
    pub const LOCATION_AXIS: [&str; 2] = ["location_x", "location_y"];
}

#[derive(Debug, Error, PartialEq)]
pub enum GrammarConfigError {
    #[error("max depth {0} is below 3; no complete derivation fits")]
    MaxDepthTooSmall(usize),
    #[error("weight for {nonterminal}.{label} must be positive and finite, got {weight}")]
    InvalidWeight {
        nonterminal: String,
        label: String,
        weight: f64,
    },
    #[error("unknown nonterminal {0:?} in weight override")]
    UnknownNonterminal(String),
    #[error("unknown alternative {label:?} for nonterminal {nonterminal:?}")]
    UnknownAlternative { nonterminal: String, label: String },
}

/// Raw production weights, one slot per alternative. Positive and finite;
/// normalization happens per nonterminal at sampling time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarWeights {
    pub start: Vec<f64>,
    pub boolean: Vec<f64>,
    pub number: Vec<f64>,
    pub color: Vec<f64>,
    pub shape: Vec<f64>,
    pub material: Vec<f64>,
    pub size: Vec<f64>,
    pub location: Vec<f64>,
    pub set: Vec<f64>,
    pub location_axis: Vec<f64>,
}

impl Default for GrammarWeights {
    fn default() -> Self {
        // Uniform over alternatives, except disjunction sampled at half the
        // weight of conjunction.
        let mut boolean = vec![1.0; labels::BOOLEAN.len()];
        boolean[1] = 0.5; // "or"
        GrammarWeights {
            start: vec![1.0; 2],
            boolean,
            number: vec![1.0; 8],
            color: vec![1.0; 9],
            shape: vec![1.0; 4],
            material: vec![1.0; 3],
            size: vec![1.0; 3],
            location: vec![1.0; 9],
            set: vec![1.0; 2],
            location_axis: vec![1.0; 2],
        }
    }
}

impl GrammarWeights {
    fn slot_mut(&mut self, nonterminal: &str) -> Option<(&mut Vec<f64>, &'static [&'static str])> {
        match nonterminal {
            "start" => Some((&mut self.start, &labels::START)),
            "bool" => Some((&mut self.boolean, &labels::BOOLEAN)),
            "num" => Some((&mut self.number, &labels::NUMBER)),
            "color" => Some((&mut self.color, &labels::COLOR)),
            "shape" => Some((&mut self.shape, &labels::SHAPE)),
            "material" => Some((&mut self.material, &labels::MATERIAL)),
            "size" => Some((&mut self.size, &labels::SIZE)),
            "location" => Some((&mut self.location, &labels::LOCATION)),
            "set" => Some((&mut self.set, &labels::SET)),
            "location_axis" => Some((&mut self.location_axis, &labels::LOCATION_AXIS)),
            _ => None,
        }
    }

    /// Applies one `weight.<nonterminal>.<label> = w` override.
    pub fn set(
        &mut self,
        nonterminal: &str,
        label: &str,
        weight: f64,
    ) -> Result<(), GrammarConfigError> {
        let (slots, names) = self
            .slot_mut(nonterminal)
            .ok_or_else(|| GrammarConfigError::UnknownNonterminal(nonterminal.to_string()))?;
        let idx = names.iter().position(|n| *n == label).ok_or_else(|| {
            GrammarConfigError::UnknownAlternative {
                nonterminal: nonterminal.to_string(),
                label: label.to_string(),
            }
        })?;
        if !(weight.is_finite() && weight > 0.0) {
            return Err(GrammarConfigError::InvalidWeight {
                nonterminal: nonterminal.to_string(),
                label: label.to_string(),
                weight,
            });
        }
        slots[idx] = weight;
        Ok(())
    }

    fn validate(&self) -> Result<(), GrammarConfigError> {
        let tables: [(&str, &[f64], &[&str]); 10] = [
            ("start", &self.start, &labels::START),
            ("bool", &self.boolean, &labels::BOOLEAN),
            ("num", &self.number, &labels::NUMBER),
            ("color", &self.color, &labels::COLOR),
            ("shape", &self.shape, &labels::SHAPE),
            ("material", &self.material, &labels::MATERIAL),
            ("size", &self.size, &labels::SIZE),
            ("location", &self.location, &labels::LOCATION),
            ("set", &self.set, &labels::SET),
            ("location_axis", &self.location_axis, &labels::LOCATION_AXIS),
        ];
        for (nt, slots, names) in tables {
            for (i, &w) in slots.iter().enumerate() {
                if !(w.is_finite() && w > 0.0) {
                    return Err(GrammarConfigError::InvalidWeight {
                        nonterminal: nt.to_string(),
                        label: names[i].to_string(),
                        weight: w,
                    });
                }
            }
        }
        Ok(())
    }

    /// Labeled view of all weights, as recorded in run manifests.
    pub fn as_map(&self) -> BTreeMap<String, BTreeMap<String, f64>> {
        fn table(names: &[&str], slots: &[f64]) -> BTreeMap<String, f64> {
            names
                .iter()
                .zip(slots)
                .map(|(n, w)| (n.to_string(), *w))
                .collect()
        }
        let mut out = BTreeMap::new();
        out.insert("start".into(), table(&labels::START, &self.start));
        out.insert("bool".into(), table(&labels::BOOLEAN, &self.boolean));
        out.insert("num".into(), table(&labels::NUMBER, &self.number));
        out.insert("color".into(), table(&labels::COLOR, &self.color));
        out.insert("shape".into(), table(&labels::SHAPE, &self.shape));
        out.insert("material".into(), table(&labels::MATERIAL, &self.material));
        out.insert("size".into(), table(&labels::SIZE, &self.size));
        out.insert("location".into(), table(&labels::LOCATION, &self.location));
        out.insert("set".into(), table(&labels::SET, &self.set));
        out.insert(
            "location_axis".into(),
            table(&labels::LOCATION_AXIS, &self.location_axis),
        );
        out
    }
}

pub const DEFAULT_MAX_DEPTH: usize = 6;

/// Sampling configuration: production weights plus the derivation depth bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub max_depth: usize,
    pub weights: GrammarWeights,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            max_depth: DEFAULT_MAX_DEPTH,
            weights: GrammarWeights::default(),
        }
    }
}

impl GrammarConfig {
    /// Validates weights and depth; a valid config makes sampling infallible.
    pub fn validate(&self) -> Result<(), GrammarConfigError> {
        if self.max_depth < 3 {
            return Err(GrammarConfigError::MaxDepthTooSmall(self.max_depth));
        }
        self.weights.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        GrammarConfig::default().validate().unwrap();
    }

    #[test]
    fn or_down_weighted_by_default() {
        let w = GrammarWeights::default();
        assert_eq!(w.boolean[0], 1.0);
        assert_eq!(w.boolean[1], 0.5);
    }

    #[test]
    fn depth_below_three_rejected() {
        let cfg = GrammarConfig {
            max_depth: 2,
            ..Default::default()
        };
        assert_eq!(
            cfg.validate(),
            Err(GrammarConfigError::MaxDepthTooSmall(2))
        );
    }

    #[test]
    fn weight_override_by_label() {
        let mut w = GrammarWeights::default();
        w.set("bool", "or", 0.25).unwrap();
        assert_eq!(w.boolean[1], 0.25);
        assert!(w.set("bool", "xor", 1.0).is_err());
        assert!(w.set("frobnicate", "or", 1.0).is_err());
        assert!(w.set("bool", "or", 0.0).is_err());
    }
}
