use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::stages::{self, Artifacts};
use crate::dataio::{check_exercise_ids, load_corpus, load_responses, write_json};
use crate::error::Result;
use crate::evalkit::{Comparison, EvalReport};
use crate::numkit::derive_seed;
use crate::tracer::Variant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub seed: u64,
    pub stage: String,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything needed to audit a run: the config, what ran, and a sha256 of
/// every artifact relative to the run directory. No timestamps, so reruns
/// of the same config compare equal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub fingerprint: String,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub run_dir: PathBuf,
    pub manifest: Manifest,
    pub reports: Vec<EvalReport>,
    pub comparison: Comparison,
}

pub fn run_dir(cfg: &RunConfig, out: &Path) -> PathBuf {
    out.join(format!("run-{}", cfg.fingerprint()))
}

struct Recorder {
    stages: Vec<StageRecord>,
}

impl Recorder {
    fn run<T>(&mut self, seed: u64, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        log::info!("seed {seed}: {stage}");
        let res = f();
        self.stages.push(StageRecord {
            seed,
            stage: stage.to_string(),
            status: if res.is_ok() { StageStatus::Ok } else { StageStatus::Failed },
            error: res.as_ref().err().map(|e| e.to_string()),
        });
        res
    }
}

/// gen → split → kdes → rates/dfes → sfes → tracer variants → bkt, once per
/// seed, then one comparison across seeds. On failure the manifest is still
/// written, with the failing stage marked.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let dir = run_dir(cfg, out);
    let mut top = Artifacts::new(&dir)?;
    let mut rec = Recorder { stages: Vec::new() };
    let result = run_all(cfg, &mut top, &mut rec);
    let manifest = Manifest {
        fingerprint: cfg.fingerprint(),
        config: cfg.clone(),
        stages: rec.stages,
        artifacts: top.hashes().clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    let (reports, comparison) = result?;
    Ok(PipelineOutcome {
        run_dir: dir,
        manifest,
        reports,
        comparison,
    })
}

fn run_all(cfg: &RunConfig, top: &mut Artifacts, rec: &mut Recorder) -> Result<(Vec<EvalReport>, Comparison)> {
    let fp = cfg.fingerprint();
    let mut reports = Vec::new();
    for seed in cfg.seed_list() {
        let sc = cfg.for_seed(seed);
        let mut art = Artifacts::new(&top.root().join(format!("seed-{seed}")))?;
        let res = run_seed(&sc, &fp, &mut art, rec);
        top.absorb(&format!("seed-{seed}"), art);
        reports.extend(res?);
    }
    let last = *cfg.seed_list().last().unwrap_or(&cfg.seed);
    let cmp = rec.run(last, "compare", || stages::compare_stage(&reports, top))?;
    Ok((reports, cmp))
}

fn run_seed(cfg: &RunConfig, fp: &str, art: &mut Artifacts, rec: &mut Recorder) -> Result<Vec<EvalReport>> {
    let seed = cfg.seed;
    let run_id = format!("run-{fp}/seed-{seed}");
    let (corpus, logs) = rec.run(seed, "data", || match &cfg.data {
        Some(d) => {
            let corpus = load_corpus(&d.exercises, &d.embeddings)?;
            let logs = load_responses(&d.responses)?;
            check_exercise_ids(&logs, &corpus)?;
            Ok((corpus, logs))
        }
        None => stages::gen(&cfg.gen, art).map(|(c, _, l)| (c, l)),
    })?;
    let (train, test) = rec.run(seed, "split", || {
        stages::split(&logs, cfg.split.train_ratio, derive_seed(seed, "split"), art)
    })?;

    let wants = |f: fn(Variant) -> bool| cfg.variants.iter().any(|&v| f(v));
    let knowledge = if wants(Variant::needs_knowledge) {
        Some(rec.run(seed, "kdes", || stages::kdes_stage(&corpus, &cfg.kdes, seed, fp, art))?)
    } else {
        None
    };
    let difficulty = if wants(Variant::needs_difficulty) {
        let rates = rec.run(seed, "rates", || stages::rates_stage(&train, cfg.dfes.min_attempts, art))?;
        Some(rec.run(seed, "dfes", || stages::dfes_stage(&corpus, &rates, &cfg.dfes, seed, fp, art))?)
    } else {
        None
    };
    let clusters = if wants(Variant::needs_clusters) {
        Some(rec.run(seed, "sfes", || stages::cluster_stage(&corpus, cfg.sfes.lambda, art))?)
    } else {
        None
    };
    let table = stages::feature_table(&corpus, knowledge.as_deref(), clusters.as_ref(), difficulty.as_deref())?;

    let mut reports = Vec::new();
    for &variant in &cfg.variants {
        let tc = crate::tracer::TracerConfig {
            variant,
            ..cfg.tracer.clone()
        };
        let r = rec.run(seed, &format!("tracer:{variant}"), || {
            stages::tracer_stage(&tc, &table, &train, &test, &run_id, fp, art)
        })?;
        reports.push(r);
    }
    if cfg.bkt {
        let r = rec.run(seed, "bkt", || {
            let fit = stages::bkt_fit_stage(&corpus, &train, &cfg.em, art)?;
            stages::bkt_eval_stage(&fit.params, &corpus, &test, cfg.tracer.auc_mode, &run_id, fp, seed, art)
        })?;
        reports.push(r);
    }
    Ok(reports)
}
