use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use drim_core::eval::{evaluate, export_embeddings};
use drim_core::ingest::{
    filter_min_counts, generate_synthetic, load_interactions, write_interactions, write_labels, Dataset, Format,
    SyntheticConfig,
};
use drim_core::numeric::GradCheckConfig;
use drim_core::serving::{build_index, recommend, write_recommendations, BackendKind};
use drim_core::trainer::{check_joint_gradients, joint_check_grid, train, Model, TrainConfig};
use drim_core::DrimError;

#[derive(Parser, Debug)]
#[command(name = "drim", version, about = "Multi-interest matching model: train, evaluate, retrieve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter an interaction log by minimum counts and write it back out
    Prepare(PrepareArgs),
    /// Generate the planted two-cluster dataset
    Synth(SynthArgs),
    /// Train a model and write a checkpoint
    Train(TrainArgs),
    /// Train and evaluate across a grid of separator weights
    Sweep(SweepArgs),
    /// Hit rate, popularity baseline and interest diversity for a checkpoint
    Eval(EvalArgs),
    /// Write top-N recommendations as TSV
    Retrieve(RetrieveArgs),
    /// Write per-user interest vectors as TSV
    Export(ExportArgs),
    /// Finite-difference check of the joint loss gradients
    CheckGrad(CheckGradArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn enabled(self) -> bool {
        matches!(self, OnOff::On)
    }
}

#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// key=value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// none | entropy | mean | div
    #[arg(long)]
    separator: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    max_len: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    /// negatives per sample
    #[arg(long)]
    neg: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    /// uniform | popularity
    #[arg(long)]
    neg_dist: Option<String>,
    #[arg(long)]
    routing_iterations: Option<String>,
    /// zeros | gaussian | gaussian:STD
    #[arg(long)]
    routing_init: Option<String>,
    /// stop | full
    #[arg(long)]
    routing_gradient: Option<String>,
    /// corrected | paper
    #[arg(long)]
    div_sign: Option<String>,
    #[arg(long)]
    user_profile: Option<OnOff>,
    #[arg(long)]
    min_item: Option<String>,
    #[arg(long)]
    min_user: Option<String>,
    #[arg(long)]
    train_frac: Option<String>,
    #[arg(long)]
    exclude_history: Option<OnOff>,
}

impl ConfigFlags {
    fn resolve(&self) -> drim_core::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        let on_off = |v: &Option<OnOff>| v.map(|x| if x.enabled() { "on".to_string() } else { "off".to_string() });
        let pairs = [
            ("separator", self.separator.clone()),
            ("lambda", self.lambda.clone()),
            ("k", self.k.clone()),
            ("dim", self.dim.clone()),
            ("max_len", self.max_len.clone()),
            ("epochs", self.epochs.clone()),
            ("batch", self.batch.clone()),
            ("n_neg", self.neg.clone()),
            ("lr", self.lr.clone()),
            ("seed", self.seed.clone()),
            ("threads", self.threads.clone()),
            ("neg_dist", self.neg_dist.clone()),
            ("routing_iterations", self.routing_iterations.clone()),
            ("routing_init", self.routing_init.clone()),
            ("routing_gradient", self.routing_gradient.clone()),
            ("div_sign", self.div_sign.clone()),
            ("user_profile", on_off(&self.user_profile)),
            ("min_item", self.min_item.clone()),
            ("min_user", self.min_user.clone()),
            ("train_frac", self.train_frac.clone()),
            ("exclude_history", on_off(&self.exclude_history)),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_item: u64,
    #[arg(long, default_value_t = 1)]
    min_user: u64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// also write `item_id \t cluster` labels here
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    users: usize,
    #[arg(long, default_value_t = 2)]
    clusters: usize,
    #[arg(long, default_value_t = 100)]
    items_per_cluster: usize,
    #[arg(long, default_value_t = 20)]
    seq_len: usize,
    #[arg(long, default_value_t = 10)]
    subtopics: usize,
    #[arg(long, default_value_t = 0.7)]
    primary_share: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// separator weights to train
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.1,1")]
    lambdas: Vec<f64>,
    /// retrieval sizes
    #[arg(long, value_delimiter = ',', default_value = "50,100")]
    n: Vec<usize>,
    /// keep one checkpoint per weight in this directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "50,100")]
    n: Vec<usize>,
    /// defaults to the checkpoint's setting
    #[arg(long)]
    exclude_history: Option<OnOff>,
    /// exact | approx
    #[arg(long, default_value = "exact")]
    backend: String,
    #[arg(long)]
    max_users: Option<usize>,
    /// also write line-delimited JSON records here
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// file with one user id per line; all users when absent
    #[arg(long)]
    users: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long)]
    exclude_history: Option<OnOff>,
    #[arg(long, default_value = "exact")]
    backend: String,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_users: Option<usize>,
}

#[derive(Args, Debug)]
struct CheckGradArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl From<DrimError> for Failure {
    fn from(e: DrimError) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else if matches!(e, DrimError::Config(_)) {
            Failure::Usage(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn load_dataset(path: &Path, cfg: &TrainConfig) -> drim_core::Result<Dataset> {
    let data = load_interactions(path, Format::from_path(path))?;
    Dataset::prepare(data, cfg.min_item, cfg.min_user, cfg.train_frac)
}

/// Dataset split as at training time, indexed by the model's item table.
fn dataset_for_model(path: &Path, model: &Model) -> drim_core::Result<Dataset> {
    let cfg = &model.config;
    let data = load_interactions(path, Format::from_path(path))?;
    let (data, _) = filter_min_counts(data, cfg.min_item, cfg.min_user)?;
    Dataset::new(&data, model.items.clone(), cfg.train_frac)
}

fn prepare(a: PrepareArgs) -> CmdResult {
    let data = load_interactions(&a.data, Format::from_path(&a.data))?;
    let before = data.len();
    let (data, vocab) = filter_min_counts(data, a.min_item, a.min_user)?;
    write_interactions(&a.out, &data, Format::from_path(&a.out))?;
    println!("events: {before} -> {}", data.len());
    println!("items: {}", vocab.len());
    Ok(())
}

fn synth(a: SynthArgs) -> CmdResult {
    let cfg = SyntheticConfig {
        n_users: a.users,
        n_clusters: a.clusters,
        items_per_cluster: a.items_per_cluster,
        seq_len: a.seq_len,
        subtopics_per_cluster: a.subtopics,
        primary_share: a.primary_share,
        seed: a.seed,
    };
    let syn = generate_synthetic(&cfg)?;
    write_interactions(&a.out, &syn.interactions, Format::from_path(&a.out))?;
    if let Some(path) = &a.labels {
        write_labels(path, &syn.item_clusters)?;
    }
    println!("events: {}", syn.interactions.len());
    Ok(())
}

fn run_train(a: TrainArgs) -> CmdResult {
    let cfg = a.flags.resolve()?;
    let data = load_dataset(&a.data, &cfg)?;
    info!("{} users, {} items", data.users.len(), data.vocab.len());
    let (_, report) = train(&data, &cfg, Some(&a.checkpoint))?;
    for e in &report.epochs {
        println!(
            "epoch {} joint {:.12} softmax {:.12} separator {:.12} secs {:.2}",
            e.epoch, e.mean_joint, e.mean_softmax, e.mean_separator, e.wall_secs
        );
    }
    println!("checkpoint: {}", a.checkpoint.display());
    Ok(())
}

fn sweep(a: SweepArgs) -> CmdResult {
    let base = a.flags.resolve()?;
    let data = load_dataset(&a.data, &base)?;
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    }
    let mut header = vec!["lambda".to_string(), "final_joint".into()];
    header.extend(a.n.iter().map(|n| format!("hr@{n}")));
    header.extend(a.n.iter().map(|n| format!("most_popular_hr@{n}")));
    header.push("mean_cosine".into());
    println!("{}", header.join("\t"));
    for &lambda in &a.lambdas {
        let cfg = TrainConfig { lambda, ..base.clone() };
        cfg.validate()?;
        let path = a.out_dir.as_ref().map(|d| d.join(format!("lambda_{lambda}.ckpt")));
        let (model, report) = train(&data, &cfg, path.as_deref())?;
        let r = evaluate(&model, &data, &a.n, cfg.exclude_history, BackendKind::Exact, None)?;
        let mut row = vec![
            lambda.to_string(),
            report.epochs.last().map_or("-".into(), |e| format!("{:.6}", e.mean_joint)),
        ];
        row.extend(r.hit_rates.iter().map(|p| format!("{:.4}", p.1)));
        row.extend(r.baseline.iter().map(|p| format!("{:.4}", p.1)));
        row.push(r.diversity.as_ref().map_or("-".into(), |d| format!("{:.4}", d.mean_cosine)));
        println!("{}", row.join("\t"));
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> CmdResult {
    let model = Model::load(&a.checkpoint)?;
    let data = dataset_for_model(&a.data, &model)?;
    let backend: BackendKind = a.backend.parse()?;
    let exclude = a.exclude_history.map_or(model.config.exclude_history, OnOff::enabled);
    let report = evaluate(&model, &data, &a.n, exclude, backend, a.max_users)?;
    print!("{}", report.to_text());
    if let Some(path) = &a.json {
        fs::write(path, report.to_json_lines()).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn retrieve(a: RetrieveArgs) -> CmdResult {
    let model = Model::load(&a.checkpoint)?;
    let data = dataset_for_model(&a.data, &model)?;
    let backend: BackendKind = a.backend.parse()?;
    let exclude = a.exclude_history.map_or(model.config.exclude_history, OnOff::enabled);
    let seqs: Vec<_> = match &a.users {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            let mut out = Vec::new();
            for id in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                let s = data
                    .sequences
                    .iter()
                    .find(|s| data.users[s.user_index] == id)
                    .ok_or_else(|| Failure::Data(format!("unknown user {id:?}")))?;
                out.push(s.clone());
            }
            out
        }
        None => data.sequences.clone(),
    };
    if a.n == 0 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    let index = build_index(&model, backend)?;
    let recs = recommend(&model, &index, &seqs, &data.users, a.n, exclude)?;
    write_recommendations(&a.out, &recs, &data.users, &model)?;
    println!("users: {}", recs.len());
    Ok(())
}

fn export(a: ExportArgs) -> CmdResult {
    let model = Model::load(&a.checkpoint)?;
    let data = dataset_for_model(&a.data, &model)?;
    let rows = export_embeddings(&model, &data, a.max_users, &a.out)?;
    println!("rows: {rows}");
    Ok(())
}

fn check_grad(a: CheckGradArgs) -> CmdResult {
    let cfg = GradCheckConfig {
        rel_tol: a.tol,
        seed: a.seed,
        ..GradCheckConfig::default()
    };
    let mut worst = 0.0f64;
    for check in joint_check_grid(a.seed) {
        let report = check_joint_gradients(&check, &cfg)?;
        println!(
            "separator {} lambda {} routing {}: checked {} max_rel_error {:.3e}",
            check.separator, check.lambda, check.gradient, report.checked, report.max_rel_error
        );
        worst = worst.max(report.max_rel_error);
    }
    println!("max_rel_error: {worst:.3e}");
    if worst < a.tol {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("gradient check failed: {worst:.3e} >= {:.1e}", a.tol)))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => run_train(a),
        Command::Sweep(a) => sweep(a),
        Command::Eval(a) => run_eval(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Export(a) => export(a),
        Command::CheckGrad(a) => check_grad(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
