use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bkt::{bkt_em_fit, bkt_evaluate, group_by_tag, tag_map, BktFit, BktParams, EmConfig};
use crate::dataio::{
    save_checkpoint, save_corpus, save_responses, sha256_file, split_train_test, write_json, write_jsonl, write_text,
    Corpus, ResponseLog,
};
use crate::dfes::{self, compute_correct_rates, save_rates, train_dfes, DfesConfig, DifficultyLine, DifficultyTable};
use crate::error::{Error, Result};
use crate::evalkit::{compare_runs, emit_curve, AucMode, Comparison, EvalReport};
use crate::kdes::{self, save_knowledge, train_kdes, KdesConfig, KnowledgeLine};
use crate::sfes::{cluster_corpus, export_dendrogram, save_assignment, ClusterAssignment};
use crate::syngen::{gen_corpus, gen_responses, GenConfig, GroundTruth};
use crate::tracer::{train_tracer, FeatureTable, TracerConfig};

/// Output directory plus the content hash of every file written into it.
pub struct Artifacts {
    root: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Artifacts {
            root: root.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Run `write` on `root/rel` and record the resulting file's hash.
    pub fn write(&mut self, rel: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write(&path)?;
        self.hashes.insert(rel.to_string(), sha256_file(&path)?);
        log::debug!("wrote {}", path.display());
        Ok(path)
    }

    pub fn hashes(&self) -> &BTreeMap<String, String> {
        &self.hashes
    }

    pub fn absorb(&mut self, prefix: &str, other: Artifacts) {
        for (k, v) in other.hashes {
            self.hashes.insert(format!("{prefix}/{k}"), v);
        }
    }
}

pub fn gen(cfg: &GenConfig, art: &mut Artifacts) -> Result<(Corpus, GroundTruth, Vec<ResponseLog>)> {
    let (corpus, mut truth) = gen_corpus(cfg)?;
    let logs = gen_responses(cfg, &corpus, &mut truth)?;
    let emb = art.root().join("embeddings.txt");
    art.write("exercises.jsonl", |p| save_corpus(&corpus, p, &emb))?;
    art.write("embeddings.txt", |_| Ok(()))?;
    art.write("responses.jsonl", |p| save_responses(p, &logs))?;
    art.write("truth.jsonl", |p| write_jsonl(p, &truth.to_lines()))?;
    Ok((corpus, truth, logs))
}

pub fn split(logs: &[ResponseLog], ratio: f64, seed: u64, art: &mut Artifacts) -> Result<(Vec<ResponseLog>, Vec<ResponseLog>)> {
    let (train, test) = split_train_test(logs, ratio, seed)?;
    art.write("train.jsonl", |p| save_responses(p, &train))?;
    art.write("test.jsonl", |p| save_responses(p, &test))?;
    Ok((train, test))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubsystemSummary {
    pub metric: String,
    pub value: f64,
    pub heldout: usize,
}

pub fn kdes_stage(corpus: &Corpus, cfg: &KdesConfig, seed: u64, fp: &str, art: &mut Artifacts) -> Result<Vec<KnowledgeLine>> {
    let trained = train_kdes(corpus, cfg, seed)?;
    log::info!("kdes: held-out accuracy {:.4}", trained.heldout_accuracy);
    art.write("kdes/checkpoint.json", |p| save_checkpoint(p, &trained.params.to_checkpoint(fp)))?;
    art.write("kdes/curve.csv", |p| emit_curve(&trained.curve, p, None))?;
    let summary = SubsystemSummary {
        metric: "heldout_accuracy".into(),
        value: trained.heldout_accuracy,
        heldout: trained.heldout_ids.len(),
    };
    art.write("kdes/summary.json", |p| write_json(p, &summary))?;
    let lines = kdes::predict_corpus(&trained.params, corpus)?;
    art.write("knowledge.jsonl", |p| save_knowledge(p, &lines))?;
    Ok(lines)
}

pub fn rates_stage(train: &[ResponseLog], min_attempts: u64, art: &mut Artifacts) -> Result<DifficultyTable> {
    let table = compute_correct_rates(train, min_attempts);
    art.write("rates.jsonl", |p| save_rates(p, &table))?;
    Ok(table)
}

pub fn dfes_stage(
    corpus: &Corpus,
    rates: &DifficultyTable,
    cfg: &DfesConfig,
    seed: u64,
    fp: &str,
    art: &mut Artifacts,
) -> Result<Vec<DifficultyLine>> {
    let trained = train_dfes(corpus, rates, cfg, seed)?;
    log::info!("dfes: held-out rmse {:.4}", trained.heldout_rmse);
    art.write("dfes/checkpoint.json", |p| save_checkpoint(p, &trained.params.to_checkpoint(fp)))?;
    art.write("dfes/curve.csv", |p| emit_curve(&trained.curve, p, None))?;
    let summary = SubsystemSummary {
        metric: "heldout_rmse".into(),
        value: trained.heldout_rmse,
        heldout: trained.heldout_ids.len(),
    };
    art.write("dfes/summary.json", |p| write_json(p, &summary))?;
    // every exercise gets a predicted difficulty, including cold-start ones
    let lines = dfes::predict_corpus(&trained.params, corpus)?;
    art.write("difficulty.jsonl", |p| dfes::save_difficulty(p, &lines))?;
    Ok(lines)
}

pub fn cluster_stage(corpus: &Corpus, lambda: usize, art: &mut Artifacts) -> Result<ClusterAssignment> {
    let (dend, assignment) = cluster_corpus(corpus, lambda)?;
    let svg = art.root().join("sfes/dendrogram.svg");
    art.write("sfes/dendrogram.txt", |p| export_dendrogram(&dend, p, Some(&svg)))?;
    art.write("sfes/dendrogram.svg", |_| Ok(()))?;
    art.write("clusters.jsonl", |p| save_assignment(p, &assignment))?;
    Ok(assignment)
}

/// Knowledge, clusters and difficulty joined onto the corpus, as available.
pub fn feature_table(
    corpus: &Corpus,
    knowledge: Option<&[KnowledgeLine]>,
    clusters: Option<&ClusterAssignment>,
    difficulty: Option<&[DifficultyLine]>,
) -> Result<FeatureTable> {
    let mut t = FeatureTable::from_corpus(corpus)?;
    if let Some(k) = knowledge {
        t = t.with_knowledge(k)?;
    }
    if let Some(c) = clusters {
        t = t.with_clusters(c)?;
    }
    if let Some(d) = difficulty {
        t = t.with_difficulty(d)?;
    }
    Ok(t)
}

#[allow(clippy::too_many_arguments)]
pub fn tracer_stage(
    cfg: &TracerConfig,
    table: &FeatureTable,
    train: &[ResponseLog],
    test: &[ResponseLog],
    run_id: &str,
    fp: &str,
    art: &mut Artifacts,
) -> Result<EvalReport> {
    let name = cfg.variant.name();
    let trained = train_tracer(cfg, table, train, Some(test))?;
    let scored = trained.test.as_ref().ok_or_else(|| Error::InvalidArgument("no test events to score".into()))?;
    let mut report = scored.report(run_id, name, fp, cfg.seed, cfg.auc_mode)?;
    log::info!("{name}: test auc {:.4} (epoch {})", report.auc, trained.best_epoch);
    art.write(&format!("tracer/{name}.checkpoint.json"), |p| {
        save_checkpoint(p, &trained.params.to_checkpoint(fp, table))
    })?;
    let curve = format!("tracer/{name}.curve.csv");
    art.write(&curve, |p| emit_curve(&trained.curve, p, None))?;
    report.curve_path = Some(curve);
    art.write(&format!("tracer/{name}.report.json"), |p| write_json(p, &report))?;
    Ok(report)
}

pub fn bkt_fit_stage(corpus: &Corpus, train: &[ResponseLog], em: &EmConfig, art: &mut Artifacts) -> Result<BktFit> {
    let tags = tag_map(corpus)?;
    let fit = bkt_em_fit(&group_by_tag(train, &tags)?, corpus.num_tags(), em)?;
    art.write("bkt/params.json", |p| write_json(p, &fit.params))?;
    art.write("bkt/fit.json", |p| write_json(p, &fit.tags))?;
    Ok(fit)
}

#[allow(clippy::too_many_arguments)]
pub fn bkt_eval_stage(
    params: &BktParams,
    corpus: &Corpus,
    test: &[ResponseLog],
    mode: AucMode,
    run_id: &str,
    fp: &str,
    seed: u64,
    art: &mut Artifacts,
) -> Result<EvalReport> {
    let scored = bkt_evaluate(params, test, &tag_map(corpus)?)?;
    let report = scored.report(run_id, "BKT", fp, seed, mode)?;
    log::info!("BKT: test auc {:.4}", report.auc);
    art.write("bkt/report.json", |p| write_json(p, &report))?;
    Ok(report)
}

pub fn compare_stage(reports: &[EvalReport], art: &mut Artifacts) -> Result<Comparison> {
    let cmp = compare_runs(reports)?;
    art.write("comparison.csv", |p| write_text(p, &cmp.to_csv()))?;
    art.write("comparison.txt", |p| write_text(p, &cmp.to_text()))?;
    Ok(cmp)
}
