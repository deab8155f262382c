use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dqrnn::config::RunConfig;
use dqrnn::lm::{synthetic_text, CharVocab};
use dqrnn::train::{Checkpoint, Trainer};
use tempfile::TempDir;

fn dqrnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dqrnn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

struct Run {
    dir: TempDir,
}

impl Run {
    /// A temp dir with a small corpus and a tiny model config; `extra` is
    /// appended to the [optimizer] section.
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("train.txt"), synthetic_text(2, 4_000)).unwrap();
        let run = Self { dir };
        run.write_config(extra);
        run
    }

    fn write_config(&self, extra: &str) {
        let text = format!(
            "[model]\nlayers = 2\nembedding_size = 6\nhidden_size = 8\nfirst_conv_width = 2\n\
             \n[data]\ntrain = \"train.txt\"\nbatch_size = 4\nseq_len = 12\n\
             \n[optimizer]\nmax_steps = 20\nseed = 5\n{extra}\n\
             \n[output]\nlog = \"train.log\"\ncheckpoint_dir = \"ckpt\"\nlog_throughput = false\n"
        );
        fs::write(self.config(), text).unwrap();
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("run.toml")
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn cli(&self, args: &[&str]) -> Output {
        let config = self.config();
        let mut all = vec!["--config", config.to_str().unwrap()];
        all.extend_from_slice(args);
        dqrnn(&all)
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_corpus_exits_3_and_names_the_path() {
    let run = Run::new("");
    fs::remove_file(run.path("train.txt")).unwrap();
    let out = run.cli(&["train"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("train.txt"), "{}", stderr(&out));
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let run = Run::new("learning_rate = 0.1");
    let out = run.cli(&["train"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));
}

#[test]
fn invalid_values_exit_2() {
    let run = Run::new("");
    let text = fs::read_to_string(run.config()).unwrap().replace("layers = 2", "layers = 2\nactivation = \"swish\"");
    fs::write(run.config(), text).unwrap();
    assert_eq!(code(&run.cli(&["train"])), 2);
    assert_eq!(code(&dqrnn(&["demo-explode", "--matrix", "diagonal"])), 2);
    assert_eq!(code(&dqrnn(&["bench", "--activation", "gelu"])), 2);
}

#[test]
fn zero_steps_writes_a_checkpoint_and_succeeds() {
    let run = Run::new("").with_steps(0);
    let out = run.cli(&["train"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ckpt = Checkpoint::load(&run.path("ckpt/last.ckpt")).unwrap();
    assert_eq!(ckpt.step, 0);
    assert!(run.path("ckpt/vocab.txt").exists());
    assert_eq!(fs::read_to_string(run.path("train.log")).unwrap(), "");
}

impl Run {
    fn with_steps(self, steps: u64) -> Self {
        let text = fs::read_to_string(self.config())
            .unwrap()
            .replace("max_steps = 20", &format!("max_steps = {steps}"));
        fs::write(self.config(), text).unwrap();
        self
    }
}

#[test]
fn hundred_step_smoke_run_logs_every_step() {
    let run = Run::new("").with_steps(100);
    let out = run.cli(&["train"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let log = fs::read_to_string(run.path("train.log")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 100);
    for (i, line) in lines.iter().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 5, "{line}");
        assert_eq!(f[0].parse::<u64>().unwrap(), i as u64 + 1);
        let nats: f64 = f[1].parse().unwrap();
        let bpc: f64 = f[2].parse().unwrap();
        let gn: f64 = f[3].parse().unwrap();
        assert!(nats.is_finite() && gn.is_finite() && gn >= 0.0);
        assert!((bpc - nats / std::f64::consts::LN_2).abs() <= 1e-12 * bpc.max(1.0));
        assert_eq!(f[4], "-");
    }
    let first: f64 = lines[0].split('\t').nth(2).unwrap().parse().unwrap();
    let last: f64 = lines[99].split('\t').nth(2).unwrap().parse().unwrap();
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn out_overrides_the_log_path() {
    let run = Run::new("").with_steps(3);
    let log = run.path("elsewhere/run.tsv");
    assert_eq!(code(&run.cli(&["--out", s(&log), "train"])), 0);
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 3);
    assert!(!run.path("train.log").exists());
}

#[test]
fn eval_of_a_zero_output_model_reports_log2_vocab() {
    let run = Run::new("");
    let text = fs::read_to_string(run.path("train.txt")).unwrap();
    let config = RunConfig::from_file(&run.config()).unwrap();
    let vocab = CharVocab::build_with_unknown(&text).unwrap();
    let ids = vocab.encode(&text).unwrap();
    let mut trainer = Trainer::new(config.stack_config().unwrap(), vocab.clone(), ids, config.train_config()).unwrap();
    trainer.model_mut().output_weight.value_mut().fill(0.0);
    let ckpt = run.path("zero.ckpt");
    trainer.checkpoint().save(&ckpt).unwrap();

    let record = run.path("eval.tsv");
    let out = run.cli(&["--out", s(&record), "eval", "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let tsv = fs::read_to_string(&record).unwrap();
    let row: Vec<&str> = tsv.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[2].parse::<usize>().unwrap(), text.chars().count() - 1);
    let bpc: f64 = row[3].parse().unwrap();
    assert!((bpc - (vocab.len() as f64).log2()).abs() < 1e-12);

    let stats = run.path("stats.tsv");
    let out = run.cli(&["--out", s(&stats), "stats", "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let tsv = fs::read_to_string(&stats).unwrap();
    assert_eq!(tsv.lines().count(), 3);
    for row in tsv.lines().skip(1) {
        let f: Vec<f64> = row.split('\t').skip(1).map(|x| x.parse().unwrap()).collect();
        assert!((f[0] + f[1] + f[2] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn eval_of_a_missing_checkpoint_exits_3() {
    let out = dqrnn(&["eval", "--checkpoint", "/nonexistent/x.ckpt", "--corpus", "/nonexistent/y.txt"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("/nonexistent/x.ckpt"));
}

#[test]
fn gradcheck_passes_with_the_configured_model() {
    let run = Run::new("");
    let record = run.path("gc.tsv");
    let out = run.cli(&["--out", s(&record), "gradcheck", "--points", "5"]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    let tsv = fs::read_to_string(&record).unwrap();
    assert!(tsv.lines().count() > 10);
    assert!(tsv.lines().skip(1).all(|l| l.ends_with("\tpass")), "{tsv}");
}

#[test]
fn tanh_demo_stays_within_the_unit_box() {
    let dir = tempfile::tempdir().unwrap();
    let record = dir.path().join("traj.tsv");
    let out = dqrnn(&["--seed", "3", "--out", s(&record), "demo-explode", "--activation", "tanh"]);
    assert_eq!(code(&out), 0);
    let tsv = fs::read_to_string(&record).unwrap();
    assert_eq!(tsv.lines().count(), 102);
    for row in tsv.lines().skip(1) {
        let max_abs: f64 = row.split('\t').nth(2).unwrap().parse().unwrap();
        assert!(max_abs <= 1.0);
    }
    let out = dqrnn(&["demo-explode", "--matrix", "permutation", "--seeds", "5"]);
    assert!(stdout(&out).contains("in 5/5 seeds"), "{}", stdout(&out));
}

#[test]
fn effective_config_round_trips() {
    let run = Run::new("");
    let out = run.cli(&["--seed", "77", "--print-effective-config", "train"]);
    assert_eq!(code(&out), 0);
    let printed = RunConfig::from_toml_str(&stdout(&out)).unwrap();
    let mut expected = RunConfig::from_file(&run.config()).unwrap();
    expected.resolve_paths(run.dir.path());
    expected.optimizer.seed = 77;
    assert_eq!(printed, expected);
    assert_eq!(printed.model.dropout, 0.15);
    assert!(!run.path("train.log").exists());
}

#[test]
fn seed_flag_controls_the_run() {
    let run = Run::new("");
    let log = |name: &str, seed: &str| {
        let path = run.path(name);
        assert_eq!(code(&run.cli(&["--seed", seed, "--out", s(&path), "train"])), 0);
        fs::read(path).unwrap()
    };
    let a = log("a.log", "11");
    let b = log("b.log", "11");
    let c = log("c.log", "12");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn resume_with_a_different_model_exits_3() {
    let run = Run::new("");
    assert_eq!(code(&run.cli(&["train"])), 0);
    let text = fs::read_to_string(run.config()).unwrap().replace("hidden_size = 8", "hidden_size = 9");
    fs::write(run.config(), text).unwrap();
    let ckpt = run.path("ckpt/last.ckpt");
    let out = run.cli(&["train", "--resume", s(&ckpt)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn divergence_exits_4() {
    let run = Run::new("lr = 1e300");
    let out = run.cli(&["train"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"), "{}", stderr(&out));
}
