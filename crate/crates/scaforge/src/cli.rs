//! Command-line workflow. Exit status is 0 on success, 1 for usage and
//! configuration errors, 2 for data, file and format errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use scaforge_core::aes::{sbox_label, ByteIndex};
use scaforge_core::forest::{gini_importance, top_k, ForestModel};
use scaforge_core::keyrank::{accuracy, rank_curve, score_keys, traces_to_rank0, KeyRankConfig, DEFAULT_STEP};
use scaforge_core::nn::{train_samples, NetModel};
use scaforge_core::template::TemplateModel;
use scaforge_core::traces::{fit_scaler, select_features, FeatureIndexList, TraceSet};
use scaforge_core::LogProbMatrix;

use crate::checkpoint::{Checkpoint, Model, ModelKind};
use crate::config::{parse_key_byte, ConfigError, RunConfig};
use crate::report::{self, AttackInfo, RankSummary, ReportRow};
use crate::{logprob, scat};

pub const SEED_VAR: &str = "SCAFORGE_SEED";

#[derive(Debug, Parser)]
#[command(name = "scaforge", version, about = "Profiled side-channel attacks on an AES key byte")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate profiling and attack trace files from the simulator section.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `output.directory`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the configured model on the profiling set and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a checkpoint to traces and write per-trace log-probabilities.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use only the first N traces.
        #[arg(long)]
        n_traces: Option<usize>,
    },
    /// Score key hypotheses and write the rank curve, score table and summary.
    Rank {
        #[arg(long)]
        logprobs: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        /// Correct key byte in hex; defaults to the key stored in the trace file.
        #[arg(long, value_parser = parse_key_byte)]
        true_key: Option<u8>,
        /// Targeted key byte; defaults to the trace file's.
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..16))]
        byte_index: Option<u8>,
        #[arg(long, default_value_t = DEFAULT_STEP, value_parser = parse_step)]
        step: usize,
        #[arg(long, default_value_t = KeyRankConfig::default().epsilon)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank features by Gini importance from a random-forest checkpoint.
    Importance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        top_k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge several rank output directories into one comparison table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        /// `.json` gives JSON, anything else CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, attack and rank in one go from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) => m,
        }
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<scaforge_core::Error> for Failure {
    fn from(e: scaforge_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => Failure::Data(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            eprintln!("scaforge: {}", text.lines().next().unwrap_or("usage error").trim_start_matches("error: "));
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("scaforge: error: {}", f.message());
            f.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Simulate { config, out } => {
            let cfg = load_config(&config)?;
            let out = output_dir(&cfg, out)?;
            simulate_cmd(&cfg, &out)
        }
        Command::Train { config, out } => {
            let cfg = load_config(&config)?;
            let model_kind = require_model(&cfg)?;
            let out = output_dir(&cfg, out)?;
            let profiling = profiling_set(&cfg)?;
            let ckpt = train_model(&cfg, model_kind, &profiling)?;
            create_dir(&out)?;
            write_train_outputs(&out, &ckpt)?;
            Ok(())
        }
        Command::Attack { model, traces, out, n_traces } => {
            let ckpt = Checkpoint::load(&model)?;
            let set = limit(scat::load_native(&traces)?, n_traces)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            attack(&ckpt, &set, &out)
        }
        Command::Rank { logprobs, traces, true_key, byte_index, step, epsilon, out } => {
            let cfg = KeyRankConfig::new(epsilon).map_err(|e| Failure::Usage(e.to_string()))?;
            let probs = logprob::load(&logprobs)?;
            let set = scat::load_native(&traces)?;
            let info_path = sidecar_path(&logprobs);
            let info: Option<AttackInfo> = if info_path.exists() { Some(report::read_json(&info_path)?) } else { None };
            let byte_index = match byte_index {
                Some(b) => ByteIndex::new(b as usize)?,
                None => set.byte_index(),
            };
            create_dir(&out)?;
            rank(&probs, &set, RankTarget { true_key, byte_index, step }, &cfg, info, &out)
        }
        Command::Importance { model, top_k: k, out } => {
            let ckpt = Checkpoint::load(&model)?;
            let Model::Forest(forest) = &ckpt.model else {
                return Err(Failure::Data(format!("{}: importance needs an rf checkpoint, found {}", model.display(), ckpt.kind())));
            };
            if k == 0 || k > forest.n_features() {
                return Err(Failure::Usage(format!("--top-k must be in 1..={}", forest.n_features())));
            }
            let ranking = gini_importance(forest);
            let map = ckpt.features.as_ref().map(FeatureIndexList::as_slice);
            let chosen: Vec<usize> = top_k(&ranking, k)?.as_slice().iter().map(|&f| map.map_or(f, |m| m[f])).collect();
            create_dir(&out)?;
            report::write_text(&out.join("importance.csv"), &report::importance_csv(&ranking, map))?;
            report::write_text(&out.join("top_k.txt"), &report::feature_list_text(&chosen))?;
            Ok(())
        }
        Command::Report { inputs, out } => {
            let mut rows = Vec::with_capacity(inputs.len());
            for dir in &inputs {
                let summary: RankSummary = report::read_json(&dir.join("summary.json"))?;
                let run = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
                rows.push(ReportRow { run, summary });
            }
            let text = if out.extension().is_some_and(|e| e == "json") {
                report::comparison_json(&rows)
            } else {
                report::comparison_csv(&rows)
            };
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            report::write_text(&out, &text)?;
            Ok(())
        }
        Command::Run { config, out } => {
            let cfg = load_config(&config)?;
            let model_kind = require_model(&cfg)?;
            let out = output_dir(&cfg, out)?;
            if cfg.dataset.path.is_some() && cfg.dataset.attack_path.is_none() {
                return Err(Failure::Usage("run: dataset.attack_path is required with dataset.path".into()));
            }
            pipeline(&cfg, model_kind, &out)
        }
    }
}

fn parse_step(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("step must be a positive integer, got {s:?}")),
        Ok(v) => Ok(v),
    }
}

fn load_config(path: &Path) -> Outcome<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(raw) = std::env::var_os(SEED_VAR) {
        let seed = raw
            .to_str()
            .and_then(|s| s.trim().parse::<u64>().ok())
            .ok_or_else(|| Failure::Usage(format!("{SEED_VAR} must be an unsigned integer")))?;
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn require_model(cfg: &RunConfig) -> Outcome<ModelKind> {
    cfg.model.as_ref().map(|m| m.kind).ok_or_else(|| Failure::Usage("config has no [model] section".into()))
}

fn output_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> Outcome<PathBuf> {
    flag.or_else(|| cfg.output.directory.clone())
        .ok_or_else(|| Failure::Usage("no output directory: pass --out or set output.directory".into()))
}

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))
}

fn limit(set: TraceSet, n: Option<usize>) -> Outcome<TraceSet> {
    match n {
        Some(0) => Err(Failure::Usage("trace count must be >= 1".into())),
        Some(n) if n < set.n_traces() => Ok(set.head(n)?),
        _ => Ok(set),
    }
}

fn sidecar_path(logprobs: &Path) -> PathBuf {
    let mut s = logprobs.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn simulate_cmd(cfg: &RunConfig, out: &Path) -> Outcome {
    let plan = cfg.sim_plan()?.ok_or_else(|| Failure::Usage("simulate needs a [dataset.simulator] section".into()))?;
    let profiling = scaforge_core::sim::simulate(&plan.profiling, plan.n_profiling)?;
    let attack = scaforge_core::sim::simulate(&plan.attack, plan.n_attack)?;
    create_dir(out)?;
    scat::save_native(&out.join("profiling.scat"), &profiling)?;
    scat::save_native(&out.join("attack.scat"), &attack)?;
    Ok(())
}

/// Labels are taken from the file, or derived from stored keys.
fn with_labels(set: TraceSet) -> Outcome<TraceSet> {
    if set.labels().is_some() {
        return Ok(set);
    }
    let Some(keys) = set.keys() else {
        return Err(Failure::Data("profiling set carries neither labels nor keys".into()));
    };
    let b = set.byte_index().get();
    let labels = set.plaintexts().iter().zip(keys).map(|(p, k)| sbox_label(p[b], k[b])).collect();
    Ok(TraceSet::new(
        set.samples().clone(),
        set.plaintexts().to_vec(),
        Some(keys.to_vec()),
        Some(labels),
        set.byte_index(),
        set.source_dtype(),
    )?)
}

fn profiling_set(cfg: &RunConfig) -> Outcome<TraceSet> {
    let set = match (cfg.sim_plan()?, &cfg.dataset.path) {
        (Some(plan), _) => scaforge_core::sim::simulate(&plan.profiling, plan.n_profiling)?,
        (None, Some(path)) => scat::load_native(path)?,
        (None, None) => unreachable!("config validation requires a dataset source"),
    };
    with_labels(set)
}

fn attack_set(cfg: &RunConfig) -> Outcome<TraceSet> {
    match (cfg.sim_plan()?, &cfg.dataset.attack_path) {
        (Some(plan), _) => Ok(scaforge_core::sim::simulate(&plan.attack, plan.n_attack)?),
        (None, Some(path)) => Ok(scat::load_native(path)?),
        (None, None) => Err(Failure::Usage("no attack set configured".into())),
    }
}

/// Everything `train` produces, kept in memory until written.
struct Trained {
    checkpoint: Checkpoint,
    extra: Vec<(&'static str, String)>,
}

fn train_model(cfg: &RunConfig, kind: ModelKind, profiling: &TraceSet) -> Outcome<Trained> {
    let labels = profiling.labels().expect("labels ensured");
    let mut extra = Vec::new();
    let features = if let Some(path) = &cfg.preprocessing.feature_file {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let idx = report::parse_feature_list(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        Some(FeatureIndexList::new(idx, profiling.trace_len())?)
    } else if let Some(k) = cfg.preprocessing.top_k {
        if k > profiling.trace_len() {
            return Err(Failure::Usage(format!("top_k {k} exceeds trace length {}", profiling.trace_len())));
        }
        let ranker = ForestModel::fit(profiling.samples(), labels, cfg.forest_config()?)?;
        let ranking = gini_importance(&ranker);
        let chosen = top_k(&ranking, k)?;
        extra.push(("selection_importance.csv", report::importance_csv(&ranking, None)));
        extra.push(("features.txt", report::feature_list_text(chosen.as_slice())));
        Some(chosen)
    } else {
        None
    };
    let reduced = match &features {
        Some(f) => select_features(profiling, f)?,
        None => profiling.clone(),
    };
    let scaler = if cfg.preprocessing.standardize { Some(fit_scaler(&reduced)?) } else { None };
    let x = match &scaler {
        Some(s) => s.transform(reduced.samples())?,
        None => reduced.samples().clone(),
    };
    let model = match kind {
        ModelKind::Template => Model::Template(TemplateModel::fit(&x, labels)?),
        ModelKind::Rf => {
            let forest = ForestModel::fit(&x, labels, cfg.forest_config()?)?;
            let map = features.as_ref().map(FeatureIndexList::as_slice);
            extra.push(("importance.csv", report::importance_csv(&gini_importance(&forest), map)));
            Model::Forest(forest)
        }
        ModelKind::Cnn | ModelKind::Resnet => {
            let net_cfg = cfg.net_config(x.cols())?;
            let train_cfg = cfg.train_config()?;
            let mut net = NetModel::new(net_cfg, train_cfg.seed)?;
            let history = train_samples(&mut net, &x, labels, &train_cfg)?;
            extra.push(("history.csv", report::history_csv(&history)));
            Model::Net(Box::new(net))
        }
    };
    let checkpoint = Checkpoint { input_len: profiling.trace_len(), features, scaler, model };
    Ok(Trained { checkpoint, extra })
}

fn write_train_outputs(out: &Path, trained: &Trained) -> Outcome {
    trained.checkpoint.save(&out.join("model.scmd"))?;
    for (name, text) in &trained.extra {
        report::write_text(&out.join(name), text)?;
    }
    Ok(())
}

fn attack(ckpt: &Checkpoint, set: &TraceSet, out: &Path) -> Outcome {
    let probs = ckpt.predict_log_proba(set)?;
    logprob::save(out, &probs)?;
    let info = AttackInfo { model: ckpt.kind().to_string(), n_features: ckpt.n_model_features(), n_traces: set.n_traces() };
    report::write_text(&sidecar_path(out), &report::to_json(&info))?;
    Ok(())
}

struct RankTarget {
    true_key: Option<u8>,
    byte_index: ByteIndex,
    step: usize,
}

fn rank(
    probs: &LogProbMatrix,
    set: &TraceSet,
    target: RankTarget,
    cfg: &KeyRankConfig,
    info: Option<AttackInfo>,
    out: &Path,
) -> Outcome {
    let n = probs.rows();
    if n > set.n_traces() {
        return Err(Failure::Data(format!("{n} probability rows but only {} traces", set.n_traces())));
    }
    let b = target.byte_index.get();
    let true_key = match (target.true_key, set.keys()) {
        (Some(k), _) => k,
        (None, Some(keys)) => {
            let k = keys[0][b];
            if keys[..n].iter().any(|key| key[b] != k) {
                return Err(Failure::Usage("trace keys vary; pass --true-key".into()));
            }
            k
        }
        (None, None) => return Err(Failure::Usage("trace file has no keys; pass --true-key".into())),
    };
    let pts: Vec<u8> = set.plaintexts()[..n].iter().map(|p| p[b]).collect();
    let scores = score_keys(probs, &pts, cfg)?;
    let curve = rank_curve(probs, &pts, true_key, target.step, cfg)?;
    let labels: Vec<u8> = pts.iter().map(|&p| sbox_label(p, true_key)).collect();
    let summary = RankSummary {
        model: info.as_ref().map(|i| i.model.clone()),
        n_features: info.as_ref().map(|i| i.n_features),
        n_traces: n,
        byte_index: b,
        true_key,
        best_key: scores.best_key(),
        traces_to_rank0: traces_to_rank0(&curve),
        final_rank: curve.final_rank().expect("curve is never empty"),
        accuracy: accuracy(probs, &labels)?,
    };
    report::write_text(&out.join("rank_curve.csv"), &report::rank_curve_csv(&curve))?;
    report::write_text(&out.join("rank_curve.json"), &report::rank_curve_json(&curve, true_key))?;
    report::write_text(&out.join("scores.csv"), &report::scores_csv(&scores))?;
    report::write_text(&out.join("scores.json"), &report::scores_json(&scores))?;
    report::write_text(&out.join("summary.json"), &report::to_json(&summary))?;
    Ok(())
}

fn pipeline(cfg: &RunConfig, kind: ModelKind, out: &Path) -> Outcome {
    let profiling = profiling_set(cfg)?;
    let attack_traces = limit(attack_set(cfg)?, cfg.attack.n_traces)?;
    let trained = train_model(cfg, kind, &profiling)?;
    create_dir(out)?;
    write_train_outputs(out, &trained)?;
    let lp_path = out.join("attack.sclp");
    attack(&trained.checkpoint, &attack_traces, &lp_path)?;
    let probs = logprob::load(&lp_path)?;
    let info: AttackInfo = report::read_json(&sidecar_path(&lp_path))?;
    let target = RankTarget { true_key: cfg.true_key(), byte_index: attack_traces.byte_index(), step: cfg.attack.step };
    rank(&probs, &attack_traces, target, &cfg.rank_config()?, Some(info), out)
}
