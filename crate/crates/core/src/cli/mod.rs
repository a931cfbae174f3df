//! Command-line front end. Every subcommand takes `--seed`, `--config` and
//! `--out`, reads only its named inputs and writes only under `--out`.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data or format error,
//! 3 numerical failure.

pub mod config;
pub mod pipeline;
pub mod stages;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::bkt::BktParams;
use crate::dataio::{
    check_exercise_ids, load_checkpoint, load_corpus, load_responses, read_json, write_json, Corpus,
    ResponseLog,
};
use crate::dfes::{self, load_rates, DfesParams};
use crate::error::{Error, Result};
use crate::evalkit::EvalReport;
use crate::kdes::{self, load_knowledge, save_knowledge, TextCnnParams};
use crate::sfes::load_assignment;
use crate::tracer::{evaluate_tracer, TracerParams, Variant};
use config::RunConfig;
use stages::Artifacts;

#[derive(Debug, Parser)]
#[command(name = "ehfkt", version, about = "Exercise-feature enhanced knowledge tracing")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub exercises: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    /// knowledge.jsonl from predict-kdes / train-kdes.
    #[arg(long)]
    pub knowledge: Option<PathBuf>,
    /// clusters.jsonl from cluster.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// difficulty.jsonl from predict-dfes / train-dfes.
    #[arg(long)]
    pub difficulty: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus, response logs and ground truth.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Split response logs by student.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Train the knowledge-distribution classifier and predict every exercise.
    TrainKdes {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
    },
    /// Knowledge distributions from a saved classifier.
    PredictKdes {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Empirical correct rate per exercise.
    ComputeRates {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        responses: PathBuf,
    },
    /// Train the difficulty regressor and predict every exercise.
    TrainDfes {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        rates: PathBuf,
    },
    /// Difficulty estimates from a saved regressor.
    PredictDfes {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Average-linkage clustering cut at `--lambda` clusters.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        lambda: Option<usize>,
    },
    /// Train one tracer variant and score it on the test logs.
    TrainTracer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        features: FeatureArgs,
        /// DKT, EHFKT_K, EHFKT_S, EHFKT_D, EHFKT_T or EHFKT.
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Fit per-tag BKT by EM.
    FitBkt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        train: PathBuf,
    },
    /// Score fitted BKT on test logs.
    EvalBkt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Score a saved tracer checkpoint on test logs.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        features: FeatureArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Table of mean ± std AUC per variant over report files.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
    },
    /// Everything, end to end, under a run-stamped directory.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData { common }
            | Command::Split { common, .. }
            | Command::TrainKdes { common, .. }
            | Command::PredictKdes { common, .. }
            | Command::ComputeRates { common, .. }
            | Command::TrainDfes { common, .. }
            | Command::PredictDfes { common, .. }
            | Command::Cluster { common, .. }
            | Command::TrainTracer { common, .. }
            | Command::FitBkt { common, .. }
            | Command::EvalBkt { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Compare { common, .. }
            | Command::Pipeline { common } => common,
        }
    }
}

/// Parse, run, and map the outcome onto an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            if let Some(help) = subcommand_help(&args) {
                eprintln!("\n{help}");
            }
            return 1;
        }
    };
    init_logging(cli.verbose);
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Usage(_)) {
                if let Some(help) = subcommand_help(&args) {
                    eprintln!("\n{help}");
                }
            }
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    // flags only; no environment lookup
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

fn subcommand_help(args: &[OsString]) -> Option<String> {
    let mut cmd = Cli::command();
    let name = args.iter().skip(1).filter_map(|a| a.to_str()).find(|a| cmd.find_subcommand(a).is_some())?;
    let sub = cmd.find_subcommand_mut(name)?;
    Some(sub.render_help().to_string())
}

fn resolve(common: &Common) -> Result<Option<RunConfig>> {
    let Some(path) = &common.config else { return Ok(None) };
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.seeds = None;
    }
    Ok(Some(cfg))
}

/// Settings for a single-stage subcommand: the config's, or defaults.
struct Settings {
    cfg: RunConfig,
    explicit: bool,
}

impl Settings {
    fn new(common: &Common) -> Result<Self> {
        Ok(match resolve(common)? {
            Some(cfg) => {
                let seed = cfg.seed;
                Settings {
                    cfg: cfg.for_seed(seed),
                    explicit: true,
                }
            }
            None => {
                // lambda is only consulted by `cluster`, which insists on it
                let mut cfg = RunConfig::with_lambda(1);
                let seed = common.seed.unwrap_or(0);
                cfg = cfg.for_seed(seed);
                Settings { cfg, explicit: false }
            }
        })
    }

    fn fingerprint(&self) -> String {
        self.cfg.fingerprint()
    }
}

fn corpus_of(a: &CorpusArgs) -> Result<Corpus> {
    load_corpus(&a.exercises, &a.embeddings)
}

fn logs_for(path: &PathBuf, corpus: &Corpus) -> Result<Vec<ResponseLog>> {
    let logs = load_responses(path)?;
    check_exercise_ids(&logs, corpus)?;
    Ok(logs)
}

fn features_for(corpus: &Corpus, f: &FeatureArgs) -> Result<crate::tracer::FeatureTable> {
    let knowledge = f.knowledge.as_deref().map(load_knowledge).transpose()?;
    let clusters = f.clusters.as_deref().map(load_assignment).transpose()?;
    let difficulty = f.difficulty.as_deref().map(dfes::load_difficulty).transpose()?;
    stages::feature_table(corpus, knowledge.as_deref(), clusters.as_ref(), difficulty.as_deref())
}

fn announce(art: &Artifacts) {
    for rel in art.hashes().keys() {
        println!("{}", art.root().join(rel).display());
    }
}

fn execute(cmd: &Command) -> Result<()> {
    let common = cmd.common();
    if let Command::Pipeline { .. } = cmd {
        let cfg = resolve(common)?
            .ok_or_else(|| Error::Usage("pipeline needs --config (sfes.lambda has no default)".into()))?;
        // an explicit --out wins over the config's `out`
        let out = match &cfg.out {
            Some(o) if common.out == PathBuf::from("out") => o.clone(),
            _ => common.out.clone(),
        };
        let outcome = pipeline::run_pipeline(&cfg, &out)?;
        print!("{}", outcome.comparison.to_text());
        println!("{}", outcome.run_dir.display());
        return Ok(());
    }
    let s = Settings::new(common)?;
    let cfg = &s.cfg;
    let fp = s.fingerprint();
    let mut art = Artifacts::new(&common.out)?;
    match cmd {
        Command::GenData { .. } => {
            stages::gen(&cfg.gen, &mut art)?;
        }
        Command::Split { responses, ratio, .. } => {
            let logs = load_responses(responses)?;
            let ratio = ratio.unwrap_or(cfg.split.train_ratio);
            stages::split(&logs, ratio, crate::numkit::derive_seed(cfg.seed, "split"), &mut art)?;
        }
        Command::TrainKdes { corpus, .. } => {
            stages::kdes_stage(&corpus_of(corpus)?, &cfg.kdes, cfg.seed, &fp, &mut art)?;
        }
        Command::PredictKdes { corpus, checkpoint, .. } => {
            let params = TextCnnParams::from_checkpoint(&load_checkpoint(checkpoint)?)?;
            let lines = kdes::predict_corpus(&params, &corpus_of(corpus)?)?;
            art.write("knowledge.jsonl", |p| save_knowledge(p, &lines))?;
        }
        Command::ComputeRates { responses, .. } => {
            stages::rates_stage(&load_responses(responses)?, cfg.dfes.min_attempts, &mut art)?;
        }
        Command::TrainDfes { corpus, rates, .. } => {
            let table = load_rates(rates, cfg.dfes.min_attempts)?;
            stages::dfes_stage(&corpus_of(corpus)?, &table, &cfg.dfes, cfg.seed, &fp, &mut art)?;
        }
        Command::PredictDfes { corpus, checkpoint, .. } => {
            let params = DfesParams::from_checkpoint(&load_checkpoint(checkpoint)?)?;
            let lines = dfes::predict_corpus(&params, &corpus_of(corpus)?)?;
            art.write("difficulty.jsonl", |p| dfes::save_difficulty(p, &lines))?;
        }
        Command::Cluster { corpus, lambda, .. } => {
            let k = match (lambda, s.explicit) {
                (Some(k), _) => *k,
                (None, true) => cfg.sfes.lambda,
                (None, false) => return Err(Error::Usage("cluster needs --lambda or a --config with sfes.lambda".into())),
            };
            let a = stages::cluster_stage(&corpus_of(corpus)?, k, &mut art)?;
            println!("{} clusters", a.num_clusters());
        }
        Command::TrainTracer {
            corpus,
            features,
            variant,
            train,
            test,
            ..
        } => {
            let corpus = corpus_of(corpus)?;
            let table = features_for(&corpus, features)?;
            let tc = crate::tracer::TracerConfig {
                variant: variant.unwrap_or(cfg.tracer.variant),
                ..cfg.tracer.clone()
            };
            let run_id = format!("train-tracer/{}", tc.variant);
            let r = stages::tracer_stage(
                &tc,
                &table,
                &logs_for(train, &corpus)?,
                &logs_for(test, &corpus)?,
                &run_id,
                &fp,
                &mut art,
            )?;
            println!("{} auc {:.6}", r.variant, r.auc);
        }
        Command::FitBkt { corpus, train, .. } => {
            let corpus = corpus_of(corpus)?;
            stages::bkt_fit_stage(&corpus, &logs_for(train, &corpus)?, &cfg.em, &mut art)?;
        }
        Command::EvalBkt { corpus, params, test, .. } => {
            let corpus = corpus_of(corpus)?;
            let p: BktParams = read_json(params)?;
            for (tag, tp) in &p.tags {
                tp.validate().map_err(|e| Error::format(params.display().to_string(), format!("tag {tag}: {e}")))?;
            }
            let test = logs_for(test, &corpus)?;
            let r = stages::bkt_eval_stage(&p, &corpus, &test, cfg.tracer.auc_mode, "eval-bkt", &fp, cfg.seed, &mut art)?;
            println!("BKT auc {:.6}", r.auc);
        }
        Command::Evaluate {
            corpus,
            features,
            checkpoint,
            test,
            ..
        } => {
            let corpus = corpus_of(corpus)?;
            let table = features_for(&corpus, features)?;
            let params = TracerParams::from_checkpoint(&load_checkpoint(checkpoint)?, &table)?;
            let scored = evaluate_tracer(&params, &table, &logs_for(test, &corpus)?, cfg.tracer.max_len)?;
            let name = params.layout.variant.name();
            let r = scored.report("evaluate", name, &fp, cfg.seed, cfg.tracer.auc_mode)?;
            art.write(&format!("{name}.report.json"), |p| write_json(p, &r))?;
            println!("{name} auc {:.6}", r.auc);
        }
        Command::Compare { reports, .. } => {
            let rs = reports.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
            let cmp = stages::compare_stage(&rs, &mut art)?;
            print!("{}", cmp.to_text());
        }
        Command::Pipeline { .. } => unreachable!("handled above"),
    }
    if !matches!(cmd, Command::Compare { .. }) {
        announce(&art);
    }
    Ok(())
}

fn read_report(path: &PathBuf) -> Result<EvalReport> {
    let r: EvalReport = read_json(path)?;
    r.validate()?;
    Ok(r)
}
