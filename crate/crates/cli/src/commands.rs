use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dqrnn::analysis::{
    cell_state_stats, exploding_state_demo, throughput_bench, ActivationStats, BenchPlan, BenchSubject,
    MatrixFamily, ThroughputReport,
};
use dqrnn::config::{ConfigError, RunConfig};
use dqrnn::gradcheck::{check_stack, standard_suite, CheckReport, GradCheckConfig};
use dqrnn::lm::{evaluate, read_corpus, CharVocab, Encoding};
use dqrnn::train::{load_model, train_loop, Checkpoint, TrainError, Trainer};
use dqrnn::ActivationKind;
use log::info;

use crate::{BenchArgs, Cli, Command, EvalArgs, ExplodeArgs};

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Numerical(String),
    Other(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config: {m}"),
            Failure::Data(m) => write!(f, "data: {m}"),
            Failure::Numerical(m) => write!(f, "numerical: {m}"),
            Failure::Other(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } | TrainError::Model(dqrnn::Error::NonFinite { .. }) => {
                Failure::Numerical(e.to_string())
            }
            TrainError::Checkpoint(_) | TrainError::Mismatch(_) => Failure::Data(e.to_string()),
            TrainError::Io(_) | TrainError::Model(_) => Failure::Other(e.to_string()),
        }
    }
}

fn other(e: impl fmt::Display) -> Failure {
    Failure::Other(e.to_string())
}

fn data(e: impl fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

fn config_arg(e: impl fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let config = load_config(cli)?;
    if cli.print_effective_config {
        let config = config.ok_or_else(|| Failure::Config("--print-effective-config needs --config".into()))?;
        print!("{}", config.to_toml_string());
        return Ok(());
    }
    match &cli.command {
        Command::Train { resume } => {
            let config = config.ok_or_else(|| Failure::Config("train needs --config".into()))?;
            train(&config, resume.as_deref())
        }
        Command::Eval(args) => eval(cli, config.as_ref(), args),
        Command::Stats { eval, tau } => stats(cli, config.as_ref(), eval, *tau),
        Command::Bench(args) => bench(cli, args),
        Command::Gradcheck {
            tolerance,
            points,
            hidden,
        } => gradcheck(cli, config.as_ref(), *tolerance, *points, *hidden),
        Command::DemoExplode(args) => demo_explode(cli, args),
    }
}

/// Reads --config, makes its paths relative to the file and applies the
/// global overrides.
fn load_config(cli: &Cli) -> Result<Option<RunConfig>, Failure> {
    let Some(path) = &cli.config else {
        return Ok(None);
    };
    let mut config = RunConfig::from_file(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    config.resolve_paths(&base);
    if let Some(seed) = cli.seed {
        config.optimizer.seed = seed;
    }
    if let (Command::Train { .. }, Some(out)) = (&cli.command, &cli.out) {
        config.output.log = out.clone();
    }
    config.validate()?;
    Ok(Some(config))
}

fn read_text(path: &Path, encoding: Encoding) -> Result<String, Failure> {
    read_corpus(path, encoding).map_err(|e| Failure::Data(format!("cannot read corpus {}: {e}", path.display())))
}

fn create_file(path: &Path) -> Result<File, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| other(format!("cannot create {}: {e}", dir.display())))?;
    }
    File::create(path).map_err(|e| other(format!("cannot create {}: {e}", path.display())))
}

fn write_record(path: Option<&PathBuf>, lines: &[String]) -> Result<(), Failure> {
    let Some(path) = path else {
        return Ok(());
    };
    let mut f = create_file(path)?;
    for line in lines {
        writeln!(f, "{line}").map_err(other)?;
    }
    Ok(())
}

fn train(config: &RunConfig, resume: Option<&Path>) -> Result<(), Failure> {
    config.check_paths().map_err(data)?;
    let encoding = config.encoding()?;
    let text = read_text(&config.data.train, encoding)?;
    let train_config = config.train_config();
    let mut trainer = match resume {
        Some(path) => {
            let checkpoint =
                Checkpoint::load(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            let desc = checkpoint.descriptor().map_err(data)?;
            if desc.model.stack_config()? != config.stack_config()? {
                return Err(Failure::Data(format!(
                    "checkpoint {} was written for a different [model] section",
                    path.display()
                )));
            }
            let vocab = CharVocab::from_code_points(&desc.vocab.code_points).map_err(data)?;
            if CharVocab::build_with_unknown(&text).map_err(data)? != vocab {
                return Err(Failure::Data(format!(
                    "vocabulary of {} differs from the one stored in {}",
                    config.data.train.display(),
                    path.display()
                )));
            }
            let ids = vocab.encode(&text).map_err(data)?;
            info!("resuming from {} at step {}", path.display(), checkpoint.step);
            Trainer::restore(&checkpoint, ids, train_config).map_err(|e| match e {
                TrainError::Model(m) => data(m),
                e => e.into(),
            })?
        }
        None => {
            let vocab = CharVocab::build_with_unknown(&text).map_err(data)?;
            let ids = vocab.encode(&text).map_err(data)?;
            Trainer::new(config.stack_config()?, vocab, ids, train_config).map_err(|e| match e {
                TrainError::Model(m) => data(m),
                e => e.into(),
            })?
        }
    };
    info!(
        "vocabulary {} symbols, {} parameters",
        trainer.vocab().len(),
        dqrnn::layers::Parameterized::param_count(trainer.model())
    );

    let ckpt_dir = &config.output.checkpoint_dir;
    fs::create_dir_all(ckpt_dir).map_err(|e| other(format!("cannot create {}: {e}", ckpt_dir.display())))?;
    fs::write(ckpt_dir.join("vocab.txt"), trainer.vocab().to_text()).map_err(other)?;

    let valid = match &config.data.valid {
        Some(path) => Some(trainer.vocab().encode(&read_text(path, encoding)?).map_err(data)?),
        None => None,
    };
    let log_path = &config.output.log;
    let log_file = if resume.is_some() {
        OpenOptions::new()
            .append(true)
            .create(true)
            .open(log_path)
            .map_err(|e| other(format!("cannot open {}: {e}", log_path.display())))?
    } else {
        create_file(log_path)?
    };
    let mut log = BufWriter::new(log_file);
    let summary = train_loop(&mut trainer, valid.as_deref(), &mut log, Some(ckpt_dir))?;
    match summary.last {
        Some(last) => println!("trained to step {}; last training bpc {:.4}", summary.steps, last.bpc),
        None => println!("no steps run; initial checkpoint written"),
    }
    if let Some(best) = summary.best_valid_bpc {
        println!("best validation bpc {best:.4}");
    }
    Ok(())
}

/// Loads the checkpoint and the evaluation text named by the flags or config.
fn eval_inputs(
    config: Option<&RunConfig>,
    args: &EvalArgs,
) -> Result<(dqrnn::lm::LmModel, Vec<usize>, PathBuf, usize), Failure> {
    let checkpoint = Checkpoint::load(&args.checkpoint)
        .map_err(|e| Failure::Data(format!("{}: {e}", args.checkpoint.display())))?;
    let (model, vocab) = load_model(&checkpoint)?;
    let corpus = match (&args.corpus, config) {
        (Some(p), _) => p.clone(),
        (None, Some(c)) => c.data.valid.clone().unwrap_or_else(|| c.data.train.clone()),
        (None, None) => return Err(Failure::Config("give --corpus or a --config with a data section".into())),
    };
    let encoding = match (&args.encoding, config) {
        (Some(e), _) => e.parse().map_err(config_arg)?,
        (None, Some(c)) => c.encoding()?,
        (None, None) => Encoding::default(),
    };
    let seq_len = args.seq_len.or(config.map(|c| c.data.seq_len)).unwrap_or(100);
    let ids = vocab.encode(&read_text(&corpus, encoding)?).map_err(data)?;
    if ids.len() < 2 {
        return Err(Failure::Data(format!("{} has fewer than two characters", corpus.display())));
    }
    Ok((model, ids, corpus, seq_len))
}

fn eval(cli: &Cli, config: Option<&RunConfig>, args: &EvalArgs) -> Result<(), Failure> {
    let (model, ids, corpus, seq_len) = eval_inputs(config, args)?;
    let result = evaluate(&model, &ids, seq_len).map_err(other)?;
    println!("{} characters, {:.6} bpc", result.predictions, result.bpc);
    write_record(
        cli.out.as_ref(),
        &[
            "checkpoint\tcorpus\tpredictions\tbpc".into(),
            format!(
                "{}\t{}\t{}\t{}",
                args.checkpoint.display(),
                corpus.display(),
                result.predictions,
                result.bpc
            ),
        ],
    )
}

fn stats(cli: &Cli, config: Option<&RunConfig>, args: &EvalArgs, tau: f64) -> Result<(), Failure> {
    let (model, ids, _, seq_len) = eval_inputs(config, args)?;
    let per_layer = cell_state_stats(&model, &ids, seq_len, tau).map_err(config_arg)?;
    println!("activation {}, interval (-{tau}, {tau})", model.config().activation);
    println!("{:>5}  {:>9}  {:>9}  {:>9}", "layer", "near-zero", "negative", "positive");
    let mut lines = vec![ActivationStats::TSV_HEADER.to_string()];
    for (i, s) in per_layer.iter().enumerate() {
        println!(
            "{:>5}  {:>8.2}%  {:>8.2}%  {:>8.2}%",
            i,
            100.0 * s.near_zero,
            100.0 * s.negative,
            100.0 * s.positive
        );
        lines.push(s.tsv(i));
    }
    write_record(cli.out.as_ref(), &lines)
}

fn print_reports(reports: &[&ThroughputReport]) {
    println!(
        "{:<14} {:>6} {:>5} {:>7} {:>12} {:>14} {:>7}",
        "model", "hidden", "batch", "seq_len", "fwd tok/s", "fwd+bwd tok/s", "ratio"
    );
    for r in reports {
        println!(
            "{:<14} {:>6} {:>5} {:>7} {:>12.0} {:>14.0} {:>7.3}",
            r.model, r.hidden_size, r.batch, r.seq_len, r.forward_tps, r.train_tps, r.ratio
        );
    }
}

fn bench(cli: &Cli, args: &BenchArgs) -> Result<(), Failure> {
    let activation: ActivationKind = args.activation.parse().map_err(config_arg)?;
    let seed = cli.seed.unwrap_or(0);
    let d = args.hidden;
    let qrnn = BenchSubject::qrnn(args.conv_width, d, d, activation, seed).map_err(config_arg)?;
    let lstm = BenchSubject::lstm(d, d, seed).map_err(config_arg)?;
    let plan = BenchPlan {
        batch: args.batch,
        seq_len: args.seq_len,
        repeats: args.repeats,
        warmup: args.warmup,
        seed,
    };
    let (q, l) = throughput_bench(&qrnn, &lstm, plan).map_err(config_arg)?;
    let mut lines = vec![ThroughputReport::TSV_HEADER.to_string(), q.tsv(), l.tsv()];
    print_reports(&[&q, &l]);
    if args.self_check {
        let (mut a, _) = throughput_bench(&qrnn, &qrnn.clone(), plan).map_err(config_arg)?;
        println!("self ratio {:.3}", a.ratio);
        a.model.push_str("-self");
        lines.push(a.tsv());
    }
    write_record(cli.out.as_ref(), &lines)
}

fn gradcheck(
    cli: &Cli,
    config: Option<&RunConfig>,
    tolerance: f64,
    points: usize,
    hidden: usize,
) -> Result<(), Failure> {
    let gc = GradCheckConfig {
        tolerance,
        points,
        seed: cli.seed.unwrap_or(0),
        ..GradCheckConfig::default()
    };
    let mut reports = standard_suite(&gc).map_err(other)?;
    if let Some(config) = config {
        let mut stack = config.stack_config()?;
        stack.input_size = 2;
        stack.hidden_size = hidden;
        stack.dropout = 0.0;
        reports.push(check_stack(&stack, &gc).map_err(other)?);
    }
    let mut lines = vec![CheckReport::TSV_HEADER.to_string()];
    println!("{:<28} {:>6} {:>8} {:>7} {:>12}  result", "check", "points", "coords", "skipped", "max rel err");
    for r in &reports {
        println!(
            "{:<28} {:>6} {:>8} {:>7} {:>12.3e}  {}",
            r.name,
            r.points,
            r.coordinates,
            r.skipped,
            r.max_rel_error,
            if r.passed { "pass" } else { "FAIL" }
        );
        lines.push(r.tsv());
    }
    write_record(cli.out.as_ref(), &lines)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn demo_explode(cli: &Cli, args: &ExplodeArgs) -> Result<(), Failure> {
    let activation: ActivationKind = args.activation.parse().map_err(config_arg)?;
    let family: MatrixFamily = args.matrix.parse().map_err(config_arg)?;
    if args.seeds == 0 {
        return Err(Failure::Config("--seeds must be at least 1".into()));
    }
    let first = cli.seed.unwrap_or(0);
    let mut lines = Vec::new();
    if args.seeds == 1 {
        let traj = exploding_state_demo(activation, args.rho, args.steps, args.dim, family, first).map_err(config_arg)?;
        println!("{:>5} {:>14} {:>14}", "t", "l2 norm", "max |h|");
        lines.push("t\tl2\tmax_abs".to_string());
        for (t, (l2, m)) in traj.l2.iter().zip(&traj.max_abs).enumerate() {
            println!("{t:>5} {l2:>14.6e} {m:>14.6e}");
            lines.push(format!("{t}\t{l2}\t{m}"));
        }
        println!("final/initial = {:.6e}", traj.growth());
    } else {
        lines.push("seed\tgrowth\tmax_abs".to_string());
        let mut grown = 0;
        for seed in first..first + args.seeds {
            let traj = exploding_state_demo(activation, args.rho, args.steps, args.dim, family, seed).map_err(config_arg)?;
            let peak = traj.max_abs.iter().copied().fold(0.0, f64::max);
            grown += usize::from(traj.growth() >= 10.0);
            lines.push(format!("{seed}\t{}\t{peak}", traj.growth()));
        }
        println!(
            "{} rho={} T={} d={} {:?}: final/initial >= 10 in {grown}/{} seeds",
            activation, args.rho, args.steps, args.dim, family, args.seeds
        );
    }
    write_record(cli.out.as_ref(), &lines)
}
