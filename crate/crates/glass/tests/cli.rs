use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5
[generator]
channels = 2
samples = 6
sample_rate = 32.0
characters = 3
sequences = 3
[fit]
iterations = 20
[predict]
draws = 48
"#;

fn glass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glass")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = glass(args);
    assert!(
        out.status.success(),
        "glass {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let path = root.join("run.toml");
        std::fs::write(&path, config).unwrap();
        Run {
            _dir: dir,
            root,
            config: path,
        }
    }

    fn p(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn simulate(&self, out: &str) -> PathBuf {
        let dir = self.p(out);
        ok(&["simulate", "--config", s(&self.config), "--out", s(&dir)]);
        dir
    }

    fn fit(&self, data: &Path, out: &str, extra: &[&str]) -> PathBuf {
        let dir = self.p(out);
        let mut args = vec!["fit", "--config", s(&self.config), "--data", s(data), "--out", s(&dir)];
        args.extend_from_slice(extra);
        ok(&args);
        dir
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let run = Run::new(SMALL);
    let a = run.simulate("a");
    let b = run.simulate("b");
    for f in ["train.glds", "test.glds", "truth.json", "resolved-config.toml"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let other = run.p("c");
    ok(&["simulate", "--config", s(&run.config), "--seed", "6", "--out", s(&other)]);
    assert_ne!(read(&a.join("train.glds")), read(&other.join("train.glds")));
}

#[test]
fn presets_simulate() {
    let dir = tempfile::tempdir().unwrap();
    for preset in glass::config::PRESETS {
        let out = dir.path().join(preset);
        ok(&["simulate", "--preset", preset, "--out", s(&out)]);
        let truth: serde_json::Value = serde_json::from_slice(&read(&out.join("truth.json"))).unwrap();
        let resolved = String::from_utf8(read(&out.join("resolved-config.toml"))).unwrap();
        assert!(resolved.contains("tool_version"));
        match preset {
            "attention-drift" => assert_eq!(truth["corruption"]["attention_drift"], true),
            "noisy-eeg" => assert_eq!(truth["corruption"]["noisy_eeg"], true),
            "sim2-high" => assert!(resolved.contains("noise_var = 40.0")),
            "sim2-moderate" => assert!(resolved.contains("noise_var = 20.0")),
            _ => assert!(truth["relabel"].is_object()),
        }
    }
}

#[test]
fn full_pipeline_and_reproducible_fit() {
    let run = Run::new(SMALL);
    let sim = run.simulate("sim");
    let train = sim.join("train.glds");
    let test = sim.join("test.glds");
    let fit = run.fit(&train, "fit", &[]);
    let again = run.fit(&train, "fit-again", &["--threads", "3"]);
    assert_eq!(read(&fit.join("model.json")), read(&again.join("model.json")));
    assert_eq!(read(&fit.join("trace.csv")), read(&again.join("trace.csv")));

    let pred = run.p("pred");
    let model = fit.join("model.json");
    ok(&["predict", "--model", s(&model), "--data", s(&test), "--out", s(&pred)]);
    let csv = String::from_utf8(read(&pred.join("predictions.csv"))).unwrap();
    assert!(csv.starts_with("c,u,n_seq_used,argmax_j,prob_1,prob_2,prob_3,prob_4,prob_5,prob_6,ess\n"));
    // Three characters, two orientations, three sequence counts.
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 3);
    let decoded = String::from_utf8(read(&pred.join("decoded.csv"))).unwrap();
    assert!(decoded.starts_with("c,n_seq,row,column,symbol,truth\n"));
    assert!(pred.join("half-predictions.csv").exists());
    assert!(pred.join("resolved-config.toml").exists());

    let pred2 = run.p("pred2");
    ok(&["--threads", "2", "predict", "--model", s(&model), "--data", s(&test), "--out", s(&pred2)]);
    assert_eq!(read(&pred.join("predictions.csv")), read(&pred2.join("predictions.csv")));

    let summ = run.p("summary");
    ok(&["summarize", "--model", s(&model), "--out", s(&summ)]);
    let effects = String::from_utf8(read(&summ.join("effects.csv"))).unwrap();
    assert_eq!(effects.lines().count(), 1 + 6);
    let channels = String::from_utf8(read(&summ.join("channels.csv"))).unwrap();
    assert_eq!(channels.lines().count(), 1 + 2);
    let plot: serde_json::Value = serde_json::from_slice(&read(&summ.join("plot-data.json"))).unwrap();
    assert_eq!(plot["effect_median"].as_array().unwrap().len(), 6);

    let eval = run.p("eval");
    ok(&["evaluate", "--model", s(&model), "--data", s(&test), s(&test), "--out", s(&eval)]);
    let metrics = String::from_utf8(read(&eval.join("metrics.csv"))).unwrap();
    assert!(metrics.starts_with("n_seq,mean_acc,sd,utility\n"));
    assert_eq!(metrics.lines().count(), 1 + 3);
    assert!(eval.join("metrics.json").exists());
}

#[test]
fn zero_iterations_returns_initialization() {
    let run = Run::new(SMALL);
    let sim = run.simulate("sim");
    let fit = run.fit(&sim.join("train.glds"), "fit", &["--iterations", "0", "--tau", "0.1"]);
    let cp = glass::io::Checkpoint::read(&fit.join("model.json")).unwrap();
    let init = glass_core::vi::initialize(2, 6, cp.fit.seed());
    assert_eq!(cp.variational, init);
    assert_eq!(cp.hyper.tau, 0.1);
}

#[test]
fn shrinkage_grid_writes_one_model_per_ratio() {
    let run = Run::new(SMALL);
    let sim = run.simulate("sim");
    let fit = run.fit(&sim.join("train.glds"), "grid", &["--shrinkage-ratio", "0,0.5,1,2"]);
    let mut taus = Vec::new();
    for r in ["0", "0.5", "1", "2"] {
        let dir = fit.join(format!("ratio-{r}"));
        let cp = glass::io::Checkpoint::read(&dir.join("model.json")).unwrap();
        assert!(dir.join("resolved-config.toml").exists());
        taus.push(cp.hyper.tau);
    }
    assert_eq!(taus[0], 0.0);
    assert!(taus.windows(2).all(|w| w[0] <= w[1]), "{taus:?}");
    assert!((taus[3] - 2.0 * taus[2]).abs() <= 1e-12 * taus[3].max(1.0));
}

#[test]
fn less_training_keeps_first_sequences() {
    let run = Run::new(SMALL);
    let sim = run.simulate("sim");
    let fit = run.fit(&sim.join("train.glds"), "less", &["--less-training", "--iterations", "2"]);
    assert!(fit.join("model.json").exists());
    let fit1 = run.fit(&sim.join("train.glds"), "less1", &["--less-training", "1", "--iterations", "2"]);
    assert_ne!(read(&fit.join("model.json")), read(&fit1.join("model.json")));
    let out = glass(&[
        "fit", "--config", s(&run.config), "--data", s(&sim.join("train.glds")), "--out", s(&run.p("x")),
        "--less-training", "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_error_exits_2_with_line_number() {
    let run = Run::new("seed = 1\n[fit]\niterations = 3\nstep = 0.1\n");
    let out = glass(&["simulate", "--config", s(&run.config), "--out", s(&run.p("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run.toml:4:"), "{err}");
    let bad = Run::new("[fit]\nstep_size = -1.0\n");
    let out = glass(&["simulate", "--config", s(&bad.config), "--out", s(&bad.p("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = glass(&["simulate", "--preset", "unknown", "--out", s(&bad.p("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dimension_mismatch_exits_4_naming_shapes() {
    let run = Run::new(SMALL);
    let sim = run.simulate("sim");
    let fit = run.fit(&sim.join("train.glds"), "fit", &["--iterations", "2"]);
    let wide = Run::new(&SMALL.replace("channels = 2", "channels = 3"));
    let other = wide.simulate("sim");
    let out = glass(&[
        "predict", "--model", s(&fit.join("model.json")), "--data", s(&other.join("test.glds")), "--out",
        s(&run.p("p")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('2') && err.contains('3'), "{err}");
}

#[test]
fn missing_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = glass(&["summarize", "--model", s(&dir.path().join("none.json")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn non_finite_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("c,s,u,j,channel,is_target,v1,v2\n");
    for u in ["row", "column"] {
        for j in 1..=6 {
            let v = if j == 1 { "1.7e308" } else { "-1.7e308" };
            csv.push_str(&format!("1,1,{u},{j},Cz,{},{v},{v}\n", (j == 1) as u8));
        }
    }
    let path = dir.path().join("huge.csv");
    std::fs::write(&path, csv).unwrap();
    let data = dir.path().join("huge.glds");
    ok(&["import", "--csv", s(&path), "--sample-rate", "32", "--out", s(&data)]);
    let out = glass(&["fit", "--data", s(&data), "--out", s(&dir.path().join("fit")), "--tau", "0"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn import_export_round_trip() {
    let run = Run::new(SMALL);
    let sim = run.simulate("sim");
    let csv = run.p("x/train.csv");
    ok(&["export", "--data", s(&sim.join("train.glds")), "--out", s(&csv)]);
    assert!(run.p("x/resolved-config.toml").exists());
    let back = run.p("y/train.glds");
    ok(&["import", "--csv", s(&csv), "--sample-rate", "32", "--out", s(&back)]);
    let a = glass::io::dataset::read_dataset(&sim.join("train.glds")).unwrap();
    let b = glass::io::dataset::read_dataset(&back).unwrap();
    assert_eq!(a.half_sequences, b.half_sequences);
}

#[test]
fn preprocess_downsamples_and_filters() {
    let run = Run::new(&SMALL.replace("samples = 6", "samples = 205").replace("sample_rate = 32.0", "sample_rate = 256.0"));
    let sim = run.simulate("sim");
    let out = run.p("pp/train.glds");
    ok(&[
        "preprocess", "--data", s(&sim.join("train.glds")), "--out", s(&out), "--bandpass", "0.5", "15",
        "--downsample", "32",
    ]);
    let d = glass::io::dataset::read_dataset(&out).unwrap();
    assert_eq!((d.samples, d.sample_rate), (26, 32.0));
    let ex = run.p("pp/ex.glds");
    ok(&["preprocess", "--data", s(&sim.join("train.glds")), "--out", s(&ex), "--downsample", "32", "--endpoint", "exclusive"]);
    assert_eq!(glass::io::dataset::read_dataset(&ex).unwrap().samples, 25);
    let bad = glass(&["preprocess", "--data", s(&sim.join("train.glds")), "--out", s(&ex), "--downsample", "30"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn evaluate_perfect_scores_gives_full_accuracy() {
    let run = Run::new(SMALL);
    let sim = run.simulate("sim");
    let test = glass::io::dataset::read_dataset(&sim.join("test.glds")).unwrap();
    let mut csv = String::from("c,s,u,j,score\n");
    for h in &test.half_sequences {
        for j in 0..6 {
            let score = if Some(j) == h.target { 1.0 } else { 0.0 };
            csv.push_str(&format!(
                "{},{},{},{},{score}\n",
                h.key.character,
                h.key.sequence,
                h.key.orientation.as_str(),
                j + 1
            ));
        }
    }
    let scores = run.p("scores.csv");
    std::fs::write(&scores, csv).unwrap();
    let out = run.p("eval");
    ok(&["evaluate", "--scores", s(&scores), "--data", s(&sim.join("test.glds")), "--out", s(&out)]);
    let m: serde_json::Value = serde_json::from_slice(&read(&out.join("metrics.json"))).unwrap();
    for a in m["accuracy"].as_array().unwrap() {
        assert_eq!(a.as_f64(), Some(1.0));
    }
}

#[test]
fn sensitivity_writes_table() {
    let run = Run::new(SMALL);
    let sim = run.simulate("sim");
    let out = run.p("sens");
    ok(&[
        "sensitivity", "--config", s(&run.config), "--train", s(&sim.join("train.glds")), "--test",
        s(&sim.join("test.glds")), "--out", s(&out), "--iterations", "5",
    ]);
    let table = String::from_utf8(read(&out.join("sensitivity.csv"))).unwrap();
    assert!(table.starts_with("ratio,tau,acc_n1,acc_n2,acc_n3,best_utility,best_n_seq,n_seq_80\n"), "{table}");
    assert_eq!(table.lines().count(), 1 + 4);
}

#[test]
fn recovery_needs_reference_model() {
    let run = Run::new(SMALL);
    let sim = run.simulate("sim");
    let fit = run.fit(&sim.join("train.glds"), "fit", &["--iterations", "2"]);
    let out = glass(&[
        "recovery", "--truth", s(&sim.join("truth.json")), "--model", s(&fit.join("model.json")), "--out",
        s(&run.p("r")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
