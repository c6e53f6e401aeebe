//! Run configuration: deterministic knobs for every stage, loadable from a
//! flat key-value config file and overridable from the command line.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::episode::NegativesMode;
use crate::filter::FilterThresholds;
use crate::grammar::{GrammarConfig, GrammarWeights, DEFAULT_MAX_DEPTH};
use crate::splits::{HoldoutSpec, SplitKind};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Master seed; every stage derives substreams from it.
    pub seed: u64,
    /// Raw concept samples drawn from the grammar before filtering.
    pub raw_concepts: usize,
    /// Scene pool size used for filtering, episodes, and oracles.
    pub pool_size: usize,
    pub max_depth: usize,
    pub max_true_rate: f64,
    pub min_true_count: usize,
    /// Split kinds to build; defaults to all nine.
    pub splits: Vec<SplitKind>,
    pub episodes_train: usize,
    pub episodes_val: usize,
    pub episodes_test: usize,
    /// Negatives mode for single-mode commands; `all` runs both.
    pub negatives: NegativesMode,
    /// Positive scenes per concept in the mAP target set.
    pub map_k: usize,
    pub out_dir: PathBuf,
    /// Enforce distinct scene ids across each episode.
    pub distinct_episode_scenes: bool,
    pub concept_iid_test_fraction: f64,
    pub val_fraction: f64,
    pub complexity_threshold: usize,
    pub grammar_weights: GrammarWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            raw_concepts: 50_000,
            pool_size: 100_000,
            max_depth: DEFAULT_MAX_DEPTH,
            max_true_rate: 0.10,
            min_true_count: 10,
            splits: SplitKind::ALL.to_vec(),
            episodes_train: 2_000,
            episodes_val: 200,
            episodes_test: 500,
            negatives: NegativesMode::Hard,
            map_k: 3,
            out_dir: PathBuf::from("curi_out"),
            distinct_episode_scenes: true,
            concept_iid_test_fraction: 0.2,
            val_fraction: 0.1,
            complexity_threshold: 10,
            grammar_weights: GrammarWeights::default(),
        }
    }
}

impl RunConfig {
    pub fn grammar_config(&self) -> GrammarConfig {
        GrammarConfig {
            max_depth: self.max_depth,
            weights: self.grammar_weights.clone(),
        }
    }

    pub fn thresholds(&self) -> FilterThresholds {
        FilterThresholds {
            max_true_rate: self.max_true_rate,
            min_true_count: self.min_true_count,
        }
    }

    /// The holdout spec for one split kind under this config.
    pub fn holdout_spec(&self, kind: SplitKind) -> HoldoutSpec {
        let mut spec = HoldoutSpec::default_for(kind);
        spec.test_fraction = self.concept_iid_test_fraction;
        spec.val_fraction = self.val_fraction;
        spec.length_threshold = self.complexity_threshold;
        spec
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |msg: String| Err(PipelineError::InvalidConfig(msg));
        if !(self.max_true_rate > 0.0 && self.max_true_rate <= 1.0) {
            return err(format!("max_true_rate {} outside (0, 1]", self.max_true_rate));
        }
        for (name, f) in [
            ("concept_iid_test_fraction", self.concept_iid_test_fraction),
            ("val_fraction", self.val_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return err(format!("{name} {f} outside [0, 1)"));
            }
        }
        if self.map_k == 0 {
            return err("map_k must be at least 1".into());
        }
        if self.splits.is_empty() {
            return err("at least one split kind required".into());
        }
        self.grammar_config()
            .validate()
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let bad = |what: &str| {
            Err(PipelineError::InvalidConfig(format!(
                "bad value {value:?} for {what}"
            )))
        };
        match key {
            "seed" => match value.parse() {
                Ok(v) => self.seed = v,
                Err(_) => return bad(key),
            },
            "raw_concepts" => match value.parse() {
                Ok(v) => self.raw_concepts = v,
                Err(_) => return bad(key),
            },
            "pool_size" => match value.parse() {
                Ok(v) => self.pool_size = v,
                Err(_) => return bad(key),
            },
            "max_depth" => match value.parse() {
                Ok(v) => self.max_depth = v,
                Err(_) => return bad(key),
            },
            "max_true_rate" => match value.parse() {
                Ok(v) => self.max_true_rate = v,
                Err(_) => return bad(key),
            },
            "min_true_count" => match value.parse() {
                Ok(v) => self.min_true_count = v,
                Err(_) => return bad(key),
            },
            "episodes_train" => match value.parse() {
                Ok(v) => self.episodes_train = v,
                Err(_) => return bad(key),
            },
            "episodes_val" => match value.parse() {
                Ok(v) => self.episodes_val = v,
                Err(_) => return bad(key),
            },
            "episodes_test" => match value.parse() {
                Ok(v) => self.episodes_test = v,
                Err(_) => return bad(key),
            },
            "map_k" => match value.parse() {
                Ok(v) => self.map_k = v,
                Err(_) => return bad(key),
            },
            "out_dir" => self.out_dir = PathBuf::from(value),
            "negatives" => match NegativesMode::parse(value) {
                Some(m) => self.negatives = m,
                None => return bad(key),
            },
            "distinct_episode_scenes" => match value.parse() {
                Ok(v) => self.distinct_episode_scenes = v,
                Err(_) => return bad(key),
            },
            "concept_iid_test_fraction" => match value.parse() {
                Ok(v) => self.concept_iid_test_fraction = v,
                Err(_) => return bad(key),
            },
            "val_fraction" => match value.parse() {
                Ok(v) => self.val_fraction = v,
                Err(_) => return bad(key),
            },
            "complexity_threshold" => match value.parse() {
                Ok(v) => self.complexity_threshold = v,
                Err(_) => return bad(key),
            },
            "splits" => {
                let mut kinds = Vec::new();
                for part in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    match SplitKind::parse(part) {
                        Some(k) => kinds.push(k),
                        None => {
                            return Err(PipelineError::InvalidConfig(format!(
                                "unknown split kind {part:?}"
                            )))
                        }
                    }
                }
                self.splits = kinds;
            }
            _ => {
                if let Some(rest) = key.strip_prefix("weight.") {
                    let (nt, label) = rest.split_once('.').ok_or_else(|| {
                        PipelineError::InvalidConfig(format!(
                            "weight override {key:?} needs the form weight.<nonterminal>.<label>"
                        ))
                    })?;
                    let w: f64 = value
                        .parse()
                        .map_err(|_| PipelineError::InvalidConfig(format!("bad weight {value:?}")))?;
                    self.grammar_weights
                        .set(nt, label, w)
                        .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
                } else {
                    return Err(PipelineError::InvalidConfig(format!(
                        "unknown config key {key:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses the flat `key = value` config format: one pair per line,
    /// `#` starts a comment, blank lines ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), PipelineError> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::InvalidConfig(format!(
                    "{}:{}: expected key = value, got {raw:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}
