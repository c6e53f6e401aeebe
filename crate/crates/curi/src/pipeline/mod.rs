//! End-to-end orchestration: staged, digest-gated, deterministic builds of
//! every artifact from one master seed, plus the comp-gap experiment driver.

pub mod config;
pub mod io;
pub mod manifest;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;
use thiserror::Error;

use crate::episode::{
    build_episode_set, Episode, EpisodeError, EpisodeRecord, NegativesMode,
};
use crate::exec::{evaluate, hash_bits, Signature, SignatureRecord};
use crate::filter::{
    assemble_space, build_space, FilterError, HypothesisSpace, Provenance, SpaceConcept,
};
use crate::grammar::{parse_postfix, CompiledGrammar, GrammarConfigError, ParseError};
use crate::metrics::{
    average_precision, build_map_pool, class_balanced_accuracy, comp_gap, MapPool, MetricError,
    MetricsReport, OracleMetrics,
};
use crate::oracle::{posterior, predictive, OracleError, OracleKind, OraclePrior, OracleRecord};
use crate::rng::substream;
use crate::scene::{build_pool, ScenePool};
use crate::splits::{assign, validate, Side, SplitAssignment, SplitError, SplitKind};

pub use config::RunConfig;
pub use manifest::Manifest;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("output directory {0} holds a run with a different config")]
    ConfigMismatch(String),
    #[error("artifact {artifact} digest mismatch: manifest {expected}, disk {actual}")]
    DigestMismatch {
        artifact: String,
        expected: String,
        actual: String,
    },
    #[error("corrupt artifact: {0}")]
    CorruptArtifact(String),
    #[error("split {0} failed validation: {1}")]
    SplitInvalid(&'static str, String),
    #[error(transparent)]
    Grammar(#[from] GrammarConfigError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Concept record as persisted to JSONL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub id: u64,
    pub postfix: Vec<String>,
    pub length: usize,
}

/// Space-level manifest: filter provenance and synonym statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceManifest {
    pub provenance: Provenance,
    pub thresholds: crate::filter::FilterThresholds,
    pub pool_seed: u64,
    pub pool_size: usize,
    pub accepted: usize,
    /// Count after signature-level dedup, reported alongside the
    /// string-level count.
    pub distinct_signatures: usize,
    pub cluster_histogram: BTreeMap<usize, usize>,
}

pub const CONCEPTS_FILE: &str = "concepts_raw.jsonl";
pub const POOL_FILE: &str = "pool.jsonl";
pub const SPACE_CONCEPTS_FILE: &str = "space/accepted.jsonl";
pub const SPACE_SIGNATURES_FILE: &str = "space/signatures.jsonl";
pub const SPACE_MATRIX_FILE: &str = "space/signatures.bin";
pub const SPACE_MANIFEST_FILE: &str = "space/manifest.json";
pub const SUMMARY_JSON_FILE: &str = "summary.json";
pub const SUMMARY_CSV_FILE: &str = "summary.csv";

pub fn split_file(kind: SplitKind) -> String {
    format!("splits/{}.json", kind.as_str())
}

pub fn episodes_file(kind: SplitKind, mode: NegativesMode, side: Side) -> String {
    format!(
        "episodes/{}_{}_{}.jsonl",
        kind.as_str(),
        mode.as_str(),
        side.as_str()
    )
}

pub fn compgap_file(kind: SplitKind, mode: NegativesMode) -> String {
    format!("reports/compgap_{}_{}.json", kind.as_str(), mode.as_str())
}

pub fn oracle_file(kind: SplitKind, mode: NegativesMode, oracle: OracleKind) -> String {
    format!(
        "reports/oracle_{}_{}_{}.jsonl",
        kind.as_str(),
        mode.as_str(),
        oracle.as_str()
    )
}

/// The staged pipeline over one output directory. Stages are skipped when
/// their artifacts verify against the manifest, so interrupted runs resume
/// to identical outputs.
pub struct Pipeline {
    cfg: RunConfig,
    manifest: Manifest,
    pool: Option<ScenePool>,
    space: Option<HypothesisSpace>,
    map_pool: Option<MapPool>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Pipeline, PipelineError> {
        cfg.validate()?;
        let manifest = Manifest::load_or_new(&cfg)?;
        Ok(Pipeline {
            cfg,
            manifest,
            pool: None,
            space: None,
            map_pool: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn out(&self) -> &PathBuf {
        &self.cfg.out_dir
    }

    fn finish_stage(&mut self, stage: &str, started: Instant, rels: &[&str]) -> Result<(), PipelineError> {
        let out = self.cfg.out_dir.clone();
        for rel in rels {
            self.manifest.record_artifact(&out, rel)?;
        }
        self.manifest
            .timings
            .insert(stage.to_string(), started.elapsed().as_secs_f64());
        self.manifest.save(&out)
    }

    /// Stage 1: raw concept samples from the grammar.
    pub fn cmd_sample_concepts(&mut self) -> Result<PathBuf, PipelineError> {
        if !self.manifest.verify_artifact(self.out(), CONCEPTS_FILE)? {
            let t0 = Instant::now();
            let grammar = CompiledGrammar::new(self.cfg.grammar_config())?;
            let seed = self.cfg.seed;
            let records: Vec<ConceptRecord> = (0..self.cfg.raw_concepts as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = substream(seed, "concepts", i);
                    let ast = grammar.sample(&mut rng);
                    let postfix = ast.tokens();
                    ConceptRecord {
                        id: i,
                        length: postfix.len(),
                        postfix,
                    }
                })
                .collect();
            io::write_jsonl(&self.out().join(CONCEPTS_FILE), &records)?;
            self.finish_stage("concepts", t0, &[CONCEPTS_FILE])?;
        }
        Ok(self.out().join(CONCEPTS_FILE))
    }

    /// Stage 2: the scene pool.
    pub fn cmd_build_pool(&mut self) -> Result<PathBuf, PipelineError> {
        if !self.manifest.verify_artifact(self.out(), POOL_FILE)? {
            let t0 = Instant::now();
            let path = self.out().join(POOL_FILE);
            self.pool_in_memory();
            io::write_jsonl(&path, &self.pool.as_ref().unwrap().scenes)?;
            self.finish_stage("pool", t0, &[POOL_FILE])?;
        }
        Ok(self.out().join(POOL_FILE))
    }

    /// The pool is cheap to regenerate and fully determined by the config,
    /// so in-memory use never round-trips through the artifact.
    fn pool_in_memory(&mut self) -> &ScenePool {
        if self.pool.is_none() {
            self.pool = Some(build_pool(self.cfg.pool_size, self.cfg.seed));
        }
        self.pool.as_ref().unwrap()
    }

    /// Stage 3: filter raw concepts into the hypothesis space.
    pub fn cmd_filter(&mut self) -> Result<PathBuf, PipelineError> {
        self.ensure_space()?;
        Ok(self.out().join(SPACE_MANIFEST_FILE))
    }

    fn space_artifacts_verify(&self) -> Result<bool, PipelineError> {
        for rel in [
            SPACE_CONCEPTS_FILE,
            SPACE_SIGNATURES_FILE,
            SPACE_MATRIX_FILE,
            SPACE_MANIFEST_FILE,
        ] {
            if !self.manifest.verify_artifact(self.out(), rel)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn ensure_space(&mut self) -> Result<&HypothesisSpace, PipelineError> {
        if self.space.is_some() {
            return Ok(self.space.as_ref().unwrap());
        }
        if self.space_artifacts_verify()? {
            let space = self.load_space()?;
            self.space = Some(space);
            return Ok(self.space.as_ref().unwrap());
        }

        self.cmd_sample_concepts()?;
        let t0 = Instant::now();
        let records: Vec<ConceptRecord> = io::read_jsonl(&self.out().join(CONCEPTS_FILE))?;
        let mut raw = Vec::with_capacity(records.len());
        for r in &records {
            raw.push(parse_postfix(&r.postfix)?);
        }
        self.pool_in_memory();
        let pool = self.pool.as_ref().unwrap();
        let space = build_space(&raw, pool, self.cfg.thresholds())?;

        let concept_records: Vec<ConceptRecord> = space
            .concepts
            .iter()
            .map(|c| ConceptRecord {
                id: c.id,
                postfix: c.tokens.clone(),
                length: c.length,
            })
            .collect();
        io::write_jsonl(&self.out().join(SPACE_CONCEPTS_FILE), &concept_records)?;

        let sig_records: Vec<SignatureRecord> = space
            .concepts
            .iter()
            .map(|c| SignatureRecord {
                concept_id: c.id,
                true_count: c.signature.true_count,
                true_rate: c.signature.true_rate,
                sig_hash: c.signature.hash.clone(),
            })
            .collect();
        io::write_jsonl(&self.out().join(SPACE_SIGNATURES_FILE), &sig_records)?;

        io::write_signature_matrix(
            &self.out().join(SPACE_MATRIX_FILE),
            space.concepts.iter().map(|c| c.signature.bits.clone()),
            space.len(),
            space.pool_len,
        )?;

        let space_manifest = SpaceManifest {
            provenance: space.provenance,
            thresholds: space.thresholds,
            pool_seed: space.pool_seed,
            pool_size: space.pool_len,
            accepted: space.len(),
            distinct_signatures: space.clusters.len(),
            cluster_histogram: space.cluster_histogram(),
        };
        io::write_json(&self.out().join(SPACE_MANIFEST_FILE), &space_manifest)?;

        self.finish_stage(
            "space",
            t0,
            &[
                SPACE_CONCEPTS_FILE,
                SPACE_SIGNATURES_FILE,
                SPACE_MATRIX_FILE,
                SPACE_MANIFEST_FILE,
            ],
        )?;
        self.space = Some(space);
        Ok(self.space.as_ref().unwrap())
    }

    fn load_space(&self) -> Result<HypothesisSpace, PipelineError> {
        let records: Vec<ConceptRecord> = io::read_jsonl(&self.out().join(SPACE_CONCEPTS_FILE))?;
        let (rows, pool_len) = io::read_signature_matrix(&self.out().join(SPACE_MATRIX_FILE))?;
        if rows.len() != records.len() || pool_len != self.cfg.pool_size {
            return Err(PipelineError::CorruptArtifact(
                "signature matrix does not match the accepted concept list".into(),
            ));
        }
        let sm: SpaceManifest = io::read_json(&self.out().join(SPACE_MANIFEST_FILE))?;
        let mut concepts = Vec::with_capacity(records.len());
        for (r, bits) in records.into_iter().zip(rows) {
            let ast = parse_postfix(&r.postfix)?;
            let true_count = bits.count_ones();
            concepts.push(SpaceConcept {
                id: r.id,
                length: r.postfix.len(),
                tokens: r.postfix,
                ast,
                signature: Signature {
                    true_rate: true_count as f64 / pool_len as f64,
                    hash: hash_bits(&bits),
                    bits,
                    true_count,
                },
            });
        }
        Ok(assemble_space(
            concepts,
            sm.provenance,
            sm.thresholds,
            sm.pool_seed,
            pool_len,
        )?)
    }

    /// Stage 4: one split assignment.
    pub fn cmd_split(&mut self, kind: SplitKind) -> Result<PathBuf, PipelineError> {
        let rel = split_file(kind);
        let path = self.out().join(&rel);
        if !self.manifest.verify_artifact(self.out(), &rel)? {
            self.ensure_space()?;
            let t0 = Instant::now();
            let space = self.space.as_ref().unwrap();
            let spec = self.cfg.holdout_spec(kind);
            let assignment = assign(space, &spec, self.cfg.seed)?;
            let report = validate(&assignment, space);
            if !report.is_clean() {
                return Err(PipelineError::SplitInvalid(
                    kind.as_str(),
                    format!("{:?}", report.findings),
                ));
            }
            io::write_json(&path, &assignment)?;
            self.finish_stage(&format!("split/{}", kind.as_str()), t0, &[rel.as_str()])?;
        }
        Ok(path)
    }

    fn load_split(&mut self, kind: SplitKind) -> Result<SplitAssignment, PipelineError> {
        self.cmd_split(kind)?;
        io::read_json(&self.out().join(split_file(kind)))
    }

    /// Stage 5: episodes for one split and negatives mode, all three sides.
    pub fn cmd_episodes(
        &mut self,
        kind: SplitKind,
        mode: NegativesMode,
    ) -> Result<Vec<PathBuf>, PipelineError> {
        let rels: Vec<String> = Side::ALL
            .iter()
            .map(|&side| episodes_file(kind, mode, side))
            .collect();
        let mut all_ok = true;
        for rel in &rels {
            all_ok &= self.manifest.verify_artifact(self.out(), rel)?;
        }
        if !all_ok {
            let assignment = self.load_split(kind)?;
            self.ensure_space()?;
            let t0 = Instant::now();
            let space = self.space.as_ref().unwrap();
            for (&side, rel) in Side::ALL.iter().zip(&rels) {
                let count = match side {
                    Side::Train => self.cfg.episodes_train,
                    Side::Val => self.cfg.episodes_val,
                    Side::Test => self.cfg.episodes_test,
                };
                let episodes = if count == 0 {
                    Vec::new()
                } else {
                    build_episode_set(
                        space,
                        &assignment,
                        side,
                        count,
                        mode,
                        self.cfg.seed,
                        self.cfg.distinct_episode_scenes,
                    )?
                };
                let records: Vec<EpisodeRecord> =
                    episodes.iter().map(EpisodeRecord::from).collect();
                io::write_jsonl(&self.out().join(rel), &records)?;
            }
            let stage = format!("episodes/{}/{}", kind.as_str(), mode.as_str());
            let rel_strs: Vec<&str> = rels.iter().map(String::as_str).collect();
            self.finish_stage(&stage, t0, &rel_strs)?;
        }
        Ok(rels.iter().map(|r| self.out().join(r)).collect())
    }

    fn load_test_episodes(
        &mut self,
        kind: SplitKind,
        mode: NegativesMode,
    ) -> Result<Vec<Episode>, PipelineError> {
        self.cmd_episodes(kind, mode)?;
        let rel = episodes_file(kind, mode, Side::Test);
        let records: Vec<EpisodeRecord> = io::read_jsonl(&self.out().join(rel))?;
        Ok(records
            .into_iter()
            .map(|r| Episode {
                idx: r.idx,
                concept_id: r.concept_id,
                kind,
                mode,
                support: r.support.iter().map(|p| (p.scene, p.y == 1)).collect(),
                query: r.query.iter().map(|p| (p.scene, p.y == 1)).collect(),
                alt_support: r.alt_support,
                alt_query: r.alt_query,
                seed: self.cfg.seed,
            })
            .collect())
    }

    fn ensure_map_pool(&mut self) -> Result<(), PipelineError> {
        if self.map_pool.is_none() {
            self.ensure_space()?;
            self.pool_in_memory();
            let space = self.space.as_ref().unwrap();
            let pool = self.pool.as_ref().unwrap();
            self.map_pool = Some(build_map_pool(space, pool, self.cfg.map_k, self.cfg.seed)?);
        }
        Ok(())
    }

    /// Stage 6: scores both oracles on the test episodes of one split/mode
    /// and writes the metrics report.
    pub fn cmd_compgap(
        &mut self,
        kind: SplitKind,
        mode: NegativesMode,
    ) -> Result<MetricsReport, PipelineError> {
        let rel = compgap_file(kind, mode);
        if self.manifest.verify_artifact(self.out(), &rel)? {
            return io::read_json(&self.out().join(&rel));
        }
        let assignment = self.load_split(kind)?;
        let episodes = self.load_test_episodes(kind, mode)?;
        self.ensure_map_pool()?;
        let t0 = Instant::now();
        let space = self.space.as_ref().unwrap();
        let map_pool = self.map_pool.as_ref().unwrap();

        let report = score_split(
            space,
            map_pool,
            &assignment,
            &episodes,
            mode,
            self.cfg.seed,
            |oracle, records| {
                let rel = oracle_file(kind, mode, oracle);
                io::write_jsonl(&self.out().join(rel), records)
            },
        )?;

        io::write_json(&self.out().join(&rel), &report)?;
        let strong_rel = oracle_file(kind, mode, OracleKind::Strong);
        let weak_rel = oracle_file(kind, mode, OracleKind::Weak);
        self.finish_stage(
            &format!("compgap/{}/{}", kind.as_str(), mode.as_str()),
            t0,
            &[rel.as_str(), strong_rel.as_str(), weak_rel.as_str()],
        )?;
        Ok(report)
    }

    /// Full pipeline: every configured split, both negatives modes, and the
    /// cross-split summary table.
    pub fn cmd_all(&mut self) -> Result<Vec<MetricsReport>, PipelineError> {
        self.cmd_sample_concepts()?;
        self.cmd_build_pool()?;
        self.cmd_filter()?;
        let kinds = self.cfg.splits.clone();
        let mut reports = Vec::new();
        for &kind in &kinds {
            self.cmd_split(kind)?;
        }
        for mode in NegativesMode::ALL {
            for &kind in &kinds {
                self.cmd_episodes(kind, mode)?;
                reports.push(self.cmd_compgap(kind, mode)?);
            }
        }
        let t0 = Instant::now();
        // Summary rows ordered by descending mAP comp gap within each mode,
        // hard negatives first.
        let mode_rank = |m: NegativesMode| match m {
            NegativesMode::Hard => 0,
            NegativesMode::Easy => 1,
        };
        reports.sort_by(|a, b| {
            mode_rank(a.negatives)
                .cmp(&mode_rank(b.negatives))
                .then(b.comp_gap_map.partial_cmp(&a.comp_gap_map).unwrap())
        });
        io::write_json(&self.out().join(SUMMARY_JSON_FILE), &reports)?;
        let mut csv = String::from(
            "split,negatives,modality,map_strong,map_weak,cba_strong,cba_weak,comp_gap_map,comp_gap_cba\n",
        );
        for r in &reports {
            csv.push_str(&format!(
                "{},{},schema-oracle,{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.split.as_str(),
                r.negatives.as_str(),
                r.strong.map,
                r.weak.map,
                r.strong.cba,
                r.weak.cba,
                r.comp_gap_map,
                r.comp_gap_cba
            ));
        }
        io::write_atomic(&self.out().join(SUMMARY_CSV_FILE), csv.as_bytes())?;
        self.finish_stage("summary", t0, &[SUMMARY_JSON_FILE, SUMMARY_CSV_FILE])?;
        Ok(reports)
    }

    /// Loaded hypothesis space, building upstream stages if needed.
    pub fn space(&mut self) -> Result<&HypothesisSpace, PipelineError> {
        self.ensure_space()
    }

    pub fn scene_pool(&mut self) -> &ScenePool {
        self.pool_in_memory()
    }
}

/// Scores both oracles over the test episodes of one split.
fn score_split<W>(
    space: &HypothesisSpace,
    map_pool: &MapPool,
    assignment: &SplitAssignment,
    episodes: &[Episode],
    mode: NegativesMode,
    seed: u64,
    mut write_records: W,
) -> Result<MetricsReport, PipelineError>
where
    W: FnMut(OracleKind, &[OracleRecord]) -> Result<(), PipelineError>,
{
    let entries = |ids: &[u64]| -> Vec<(u64, usize)> {
        ids.iter().map(|&id| (id, space.concept(id).length)).collect()
    };
    let mut strong_entries = entries(&assignment.train);
    strong_entries.extend(entries(&assignment.test));
    let strong = OraclePrior::new(OracleKind::Strong, &strong_entries)?;
    let weak = OraclePrior::new(OracleKind::Weak, &entries(&assignment.train))?;

    let target_ids = map_pool.item_ids(space.pool_len);
    let pool_len = space.pool_len;
    let truth = |id: u64, scene: u64| -> bool {
        if (scene as usize) < pool_len {
            space.concept(id).signature.bits.get(scene as usize)
        } else {
            evaluate(
                &space.concept(id).ast,
                &map_pool.fresh[scene as usize - pool_len],
            )
        }
    };

    let mut per_oracle: Vec<(OracleKind, Vec<OracleRecord>, OracleMetrics, Vec<(u64, f64)>, Vec<(u64, f64)>)> =
        Vec::new();
    for (kind, prior) in [(OracleKind::Strong, &strong), (OracleKind::Weak, &weak)] {
        let scored: Vec<(OracleRecord, f64, f64)> = episodes
            .par_iter()
            .map(|e| {
                let post = posterior(prior, &e.support, &truth);
                let query_scores: Vec<f64> = e
                    .query
                    .iter()
                    .map(|&(scene, _)| predictive(prior, &post, scene, &truth))
                    .collect();
                let query_labels: Vec<bool> = e.query.iter().map(|&(_, y)| y).collect();
                let cba = class_balanced_accuracy(&query_scores, &query_labels, 0.5)?;
                let gt = map_pool.concept_labels(space, e.concept_id);
                let items: Vec<(u64, f64, bool)> = target_ids
                    .iter()
                    .zip(&gt)
                    .map(|(&tid, &y)| (tid, predictive(prior, &post, tid, &truth), y))
                    .collect();
                let ap = average_precision(&items)?;
                let record = OracleRecord {
                    idx: e.idx,
                    oracle: kind,
                    consistent: post.consistent_count(),
                    fallback: post.fallback,
                    scores: query_scores,
                };
                Ok((record, cba, ap))
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;

        let n = scored.len().max(1);
        let fallback_fraction =
            scored.iter().filter(|(r, _, _)| r.fallback).count() as f64 / n as f64;
        let cba = scored.iter().map(|(_, c, _)| *c).sum::<f64>() / n as f64;
        let map = scored.iter().map(|(_, _, a)| *a).sum::<f64>() / n as f64;
        let cba_pairs: Vec<(u64, f64)> =
            scored.iter().map(|(r, c, _)| (r.idx, *c)).collect();
        let ap_pairs: Vec<(u64, f64)> = scored.iter().map(|(r, _, a)| (r.idx, *a)).collect();
        let records: Vec<OracleRecord> = scored.into_iter().map(|(r, _, _)| r).collect();
        per_oracle.push((
            kind,
            records,
            OracleMetrics {
                map,
                cba,
                fallback_fraction,
            },
            ap_pairs,
            cba_pairs,
        ));
    }

    let comp_gap_map = comp_gap(&per_oracle[0].3, &per_oracle[1].3)?;
    let comp_gap_cba = comp_gap(&per_oracle[0].4, &per_oracle[1].4)?;

    for (kind, records, _, _, _) in &per_oracle {
        write_records(*kind, records)?;
    }

    Ok(MetricsReport {
        split: assignment.kind,
        negatives: mode,
        strong: per_oracle[0].2,
        weak: per_oracle[1].2,
        comp_gap_map,
        comp_gap_cba,
        episodes: episodes.len(),
        seed,
    })
}
