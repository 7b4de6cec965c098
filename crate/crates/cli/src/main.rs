//! `hyperman`: preprocess, synthesize, train, evaluate, ablate and sweep.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use hyperman_core::config::KEY_DOCS;
use hyperman_core::data::{
    build_meta_tasks, generate_labeled, ingest_checkins, read_dataset, split_sessions, write_dataset, DatasetHeader,
    InputFormat, SessionConfig,
};
use hyperman_core::eval::{
    evaluate_tasks, fingerprint, prepare_run, run_experiment, sweep, AblationSpec, MetricsReport, SweepParameter,
    Variant,
};
use hyperman_core::metalearn::{behavior_entropy, train, HypergraphObjective};
use hyperman_core::model::{load_checkpoint, save_checkpoint};
use hyperman_core::{CheckinRecord, Error, ModelParams, NodeSpace, Relation, RunConfig, Vocab};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "hyperman", version, about = "Hypergraph meta-learning for next-POI recommendation")]
struct Cli {
    /// Cap on worker threads; results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set meta.epochs=5`; repeatable, wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a check-in TSV into a dataset file.
    Preprocess {
        #[arg(long, value_name = "TSV")]
        input: PathBuf,
        #[arg(long, value_name = "DATASET")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a synthetic population from the `synth` settings.
    Synth {
        #[arg(long, value_name = "DATASET")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Meta-train on the training users of the seeded split and write a checkpoint.
    Train {
        #[arg(long, value_name = "DATASET")]
        data: PathBuf,
        #[arg(long, value_name = "CKPT")]
        out: PathBuf,
        /// Training log; defaults to `<CKPT>.log.jsonl`.
        #[arg(long, value_name = "JSONL")]
        log: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Cold-start evaluation: repeated train and test runs, or one checkpoint on its held-out users.
    Eval {
        #[arg(long, value_name = "DATASET")]
        data: PathBuf,
        /// Evaluate this checkpoint on the held-out users of the split for `seed`.
        #[arg(long, value_name = "CKPT")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "full")]
        variant: String,
        /// Report JSON; printed to stdout when omitted.
        #[arg(long, value_name = "JSON")]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the full model and every ablation variant.
    Ablate {
        #[arg(long, value_name = "DATASET")]
        data: PathBuf,
        #[arg(long, value_name = "JSON")]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Repeat the experiment over values of one setting.
    Sweep {
        #[arg(long, value_name = "DATASET")]
        data: PathBuf,
        /// `inner_steps` or `delta_km`
        #[arg(long)]
        param: String,
        /// Comma-separated values, at least two.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "full")]
        variant: String,
        /// Curve CSV.
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        /// Full per-value reports.
        #[arg(long, value_name = "JSON")]
        json: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::Io { .. } => 3,
            Error::Divergence { .. } | Error::NonFinite { .. } => 4,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 3,
        message: format!("{}: {e}", path.display()),
    }
}

fn load_config(args: &ConfigArgs) -> CliResult<RunConfig> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?,
        None => String::new(),
    };
    Ok(RunConfig::from_toml_with_overrides(&text, &args.set)?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

/// The resolved configuration next to an artifact.
fn write_config_echo(artifact: &Path, cfg: &RunConfig) -> CliResult<()> {
    write_bytes(&sidecar(artifact, ".config.toml"), cfg.to_toml().as_bytes())
}

fn write_json(path: Option<&Path>, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    match path {
        Some(p) => write_bytes(p, format!("{text}\n").as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("configuration serializes")
}

fn load_dataset(path: &Path) -> CliResult<(Vocab, Vec<CheckinRecord>)> {
    let (header, records) = read_dataset(path)?;
    Ok((header.vocab, records))
}

fn parse_variant(name: &str) -> CliResult<AblationSpec> {
    Ok(AblationSpec::new(name.parse::<Variant>()?))
}

#[derive(Serialize)]
struct PreprocessSummary {
    users: usize,
    pois: usize,
    categories: usize,
    slots: usize,
    records: usize,
    trajectories: usize,
    dropped_checkins: usize,
    tasks: usize,
    excluded_users: usize,
}

fn preprocess(input: &Path, out: &Path, cfg: &RunConfig) -> CliResult<()> {
    let slots = cfg.data.time_slots()?;
    let (vocab, records) = ingest_checkins(input, InputFormat::FoursquareTsv, slots, cfg.data.local_time)?;
    let sessions = split_sessions(
        &records,
        SessionConfig {
            local_time: cfg.data.local_time,
        },
    );
    let tasks = build_meta_tasks(&sessions.trajectories, cfg.data.support_fraction)?;
    let summary = PreprocessSummary {
        users: vocab.user_count(),
        pois: vocab.poi_count(),
        categories: vocab.category_count(),
        slots: vocab.slot_count(),
        records: records.len(),
        trajectories: sessions.trajectories.len(),
        dropped_checkins: sessions.dropped_checkins,
        tasks: tasks.tasks.len(),
        excluded_users: tasks.excluded_users,
    };
    write_dataset(out, &DatasetHeader::new(vocab, config_json(cfg)), &records)?;
    write_json(None, &summary)
}

#[derive(Serialize)]
struct SynthSummary {
    users: usize,
    routine_users: usize,
    explorer_users: usize,
    pois: usize,
    records: usize,
    zero_entropy_users: usize,
    mean_entropy_routine: f64,
    mean_entropy_explorer: f64,
    max_entropy: f64,
}

fn synth(out: &Path, cfg: &RunConfig) -> CliResult<()> {
    let data = generate_labeled(&cfg.synth)?;
    let mut by_user: BTreeMap<usize, Vec<CheckinRecord>> = BTreeMap::new();
    for r in &data.records {
        by_user.entry(r.user).or_default().push(r.clone());
    }
    let mut sums = [(0.0, 0usize), (0.0, 0usize)];
    let (mut zero, mut max) = (0, 0.0f64);
    for (user, recs) in &by_user {
        let h = behavior_entropy(recs)?;
        let slot = if data.routine[*user] { 0 } else { 1 };
        sums[slot].0 += h;
        sums[slot].1 += 1;
        zero += usize::from(h == 0.0);
        max = max.max(h);
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s / n as f64 };
    let routine = data.routine.iter().filter(|&&r| r).count();
    let summary = SynthSummary {
        users: data.vocab.user_count(),
        routine_users: routine,
        explorer_users: data.vocab.user_count() - routine,
        pois: data.vocab.poi_count(),
        records: data.records.len(),
        zero_entropy_users: zero,
        mean_entropy_routine: mean(sums[0]),
        mean_entropy_explorer: mean(sums[1]),
        max_entropy: max,
    };
    write_dataset(out, &DatasetHeader::new(data.vocab, config_json(cfg)), &data.records)?;
    write_json(None, &summary)
}

fn train_command(data: &Path, out: &Path, log: Option<&Path>, cfg: &RunConfig) -> CliResult<()> {
    let (vocab, records) = load_dataset(data)?;
    let prepared = prepare_run(&vocab, &records, cfg, cfg.seed)?;
    let ops = prepared.graph.operators(&Relation::ALL);
    let params = ModelParams::init(&cfg.model_for_seed(cfg.seed), &ops.nodes)?;
    let meta = cfg.meta_for_seed(cfg.seed);
    let log_path = log.map_or_else(|| sidecar(out, ".log.jsonl"), Path::to_path_buf);
    let file = File::create(&log_path).map_err(|e| io_failure(&log_path, e))?;
    let mut writer = BufWriter::new(file);
    let objective = HypergraphObjective { ops: &ops };
    let result = train(params, &prepared.train_tasks, &meta, &objective, |entry| {
        let line = serde_json::to_string(entry)?;
        writeln!(writer, "{line}")
            .and_then(|_| writer.flush())
            .map_err(|e| Error::Io {
                path: log_path.clone(),
                source: e,
            })?;
        eprintln!(
            "epoch {:>3}  support {:.4} -> {:.4}  query {:.4}  alpha {:.5}",
            entry.epoch,
            entry.mean_support_loss_pre,
            entry.mean_support_loss_post,
            entry.mean_query_loss,
            entry.mean_alpha_u
        );
        Ok(())
    })?;
    save_checkpoint(out, &result.params)?;
    write_config_echo(out, cfg)?;
    eprintln!(
        "trained on {} users, held out {}; checkpoint {}",
        prepared.train_tasks.len(),
        prepared.test_tasks.len(),
        out.display()
    );
    Ok(())
}

fn print_summary(label: &str, mean: &[hyperman_core::eval::AtK], std: Option<&[hyperman_core::eval::AtK]>) {
    let mut parts = vec![label.to_string()];
    for (i, m) in mean.iter().enumerate() {
        match std {
            Some(s) => parts.push(format!(
                "recall@{k} {:.4}±{:.4}  ndcg@{k} {:.4}±{:.4}",
                m.recall,
                s[i].recall,
                m.ndcg,
                s[i].ndcg,
                k = m.k
            )),
            None => parts.push(format!("recall@{k} {:.4}  ndcg@{k} {:.4}", m.recall, m.ndcg, k = m.k)),
        }
    }
    eprintln!("{}", parts.join("  "));
}

fn eval_command(
    data: &Path,
    checkpoint: Option<&Path>,
    spec: AblationSpec,
    out: Option<&Path>,
    cfg: &RunConfig,
) -> CliResult<()> {
    let (vocab, records) = load_dataset(data)?;
    match checkpoint {
        Some(ckpt) => {
            let params = load_checkpoint(ckpt, &cfg.model_for_seed(cfg.seed), &NodeSpace::from_vocab(&vocab))?;
            let prepared = prepare_run(&vocab, &records, cfg, cfg.seed)?;
            let ops = prepared.graph.operators(&spec.kept_relations());
            let meta = spec.meta_config(&cfg.meta_for_seed(cfg.seed));
            let (acc, per_user) = evaluate_tasks(&params, &prepared.test_tasks, &meta, &ops, &cfg.eval.ks)?;
            let report = MetricsReport {
                seed: cfg.seed,
                instances: acc.count(),
                zero_shot_users: per_user.iter().filter(|u| u.zero_shot).count(),
                metrics: acc.means(),
                per_user,
                fingerprint: fingerprint(cfg, &spec),
            };
            print_summary(spec.variant.name(), &report.metrics, None);
            #[derive(Serialize)]
            struct Echo<'a> {
                config: &'a RunConfig,
                report: &'a MetricsReport,
            }
            write_json(out, &Echo { config: cfg, report: &report })
        }
        None => {
            let report = run_experiment(&vocab, &records, cfg, &spec)?;
            print_summary(spec.variant.name(), &report.mean, Some(&report.std));
            write_json(out, &report)
        }
    }
}

fn ablate(data: &Path, out: Option<&Path>, cfg: &RunConfig) -> CliResult<()> {
    let (vocab, records) = load_dataset(data)?;
    let mut reports = Vec::new();
    for v in Variant::ALL {
        let report = run_experiment(&vocab, &records, cfg, &AblationSpec::new(v))?;
        print_summary(v.name(), &report.mean, Some(&report.std));
        reports.push(report);
    }
    write_json(out, &reports)
}

fn sweep_command(
    data: &Path,
    param: &str,
    values: &[f64],
    spec: AblationSpec,
    out: &Path,
    json: Option<&Path>,
    cfg: &RunConfig,
) -> CliResult<()> {
    let parameter: SweepParameter = param.parse()?;
    let (vocab, records) = load_dataset(data)?;
    let report = sweep(&vocab, &records, cfg, &spec, parameter, values)?;
    for p in &report.points {
        print_summary(&format!("{}={}", parameter.name(), p.value), &p.report.mean, Some(&p.report.std));
    }
    write_bytes(out, report.to_csv().as_bytes())?;
    write_config_echo(out, cfg)?;
    if let Some(path) = json {
        write_json(Some(path), &report)?;
    }
    Ok(())
}

fn settings_help() -> String {
    let defaults: BTreeMap<String, String> = RunConfig::default().resolved().into_iter().collect();
    let width = KEY_DOCS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Settings (TOML sections or --set KEY=VALUE), with defaults:\n");
    for (key, doc) in KEY_DOCS {
        let default = defaults.get(*key).map_or("unset", String::as_str);
        out.push_str(&format!("  {key:<width$}  {doc} [default: {default}]\n"));
    }
    out
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure {
                code: 2,
                message: "--threads must be at least 1".into(),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure {
                code: 2,
                message: e.to_string(),
            })?;
    }
    match cli.command {
        Command::Preprocess { input, out, cfg } => preprocess(&input, &out, &load_config(&cfg)?),
        Command::Synth { out, cfg } => synth(&out, &load_config(&cfg)?),
        Command::Train { data, out, log, cfg } => train_command(&data, &out, log.as_deref(), &load_config(&cfg)?),
        Command::Eval {
            data,
            checkpoint,
            variant,
            out,
            cfg,
        } => eval_command(&data, checkpoint.as_deref(), parse_variant(&variant)?, out.as_deref(), &load_config(&cfg)?),
        Command::Ablate { data, out, cfg } => ablate(&data, out.as_deref(), &load_config(&cfg)?),
        Command::Sweep {
            data,
            param,
            values,
            variant,
            out,
            json,
            cfg,
        } => sweep_command(
            &data,
            &param,
            &values,
            parse_variant(&variant)?,
            &out,
            json.as_deref(),
            &load_config(&cfg)?,
        ),
    }
}

fn main() -> ExitCode {
    let help = settings_help();
    let mut command = Cli::command().after_long_help(help.clone());
    for sub in ["preprocess", "synth", "train", "eval", "ablate", "sweep"] {
        let text = help.clone();
        command = command.mut_subcommand(sub, |c| c.after_long_help(text));
    }
    let matches = command.get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
