use glass::config::RunConfig;
use glass::io::checkpoint::Checkpoint;
use glass::io::dataset::{decode, encode, export_csv, import_csv_reader};
use glass::io::tables::read_scores_from;
use glass::pipeline;
use glass_core::model::{Dataset, TimingConfig};
use glass_core::simulate::{simulate_generative, toy_dataset, GenerativeConfig};
use proptest::prelude::*;

fn small_config() -> RunConfig {
    let text = r#"
seed = 11
[generator]
channels = 2
samples = 6
sample_rate = 32.0
characters = 2
sequences = 2
[fit]
iterations = 15
[predict]
draws = 40
"#;
    RunConfig::from_toml_str(text, "small.toml").unwrap().resolve().unwrap()
}

#[test]
fn binary_round_trip_is_exact() {
    let (data, _) = simulate_generative(&GenerativeConfig::sim2_moderate()).unwrap();
    let bytes = encode(&data);
    assert_eq!(&bytes[..8], b"GLASSDS1");
    assert_eq!(decode(&bytes).unwrap(), data);
}

#[test]
fn binary_rejects_bad_magic_and_truncation() {
    let data = toy_dataset(2, 3, 4, 1).unwrap();
    let mut bytes = encode(&data);
    assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    bytes[0] = b'X';
    assert!(decode(&bytes).is_err());
}

#[test]
fn csv_round_trip_keeps_epochs_and_labels() {
    let (data, _) = simulate_generative(&GenerativeConfig::sim2_moderate()).unwrap();
    let mut buf = Vec::new();
    export_csv(&data, &mut buf).unwrap();
    let back = import_csv_reader(buf.as_slice(), data.sample_rate, data.timing).unwrap();
    assert_eq!(back.half_sequences, data.half_sequences);
    assert_eq!(back.channel_names, data.channel_names);
    assert_eq!((back.channels, back.samples), (data.channels, data.samples));
}

#[test]
fn csv_import_reports_line_of_bad_value() {
    let text = "c,s,u,j,channel,is_target,v1,v2\n1,1,row,1,Cz,1,0.5,x\n";
    let err = import_csv_reader(text.as_bytes(), 32.0, TimingConfig::default()).unwrap_err();
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn csv_import_rejects_wrong_header() {
    let text = "c,s,j,u,channel,is_target,v1\n";
    assert!(import_csv_reader(text.as_bytes(), 32.0, TimingConfig::default()).is_err());
}

#[test]
fn checkpoint_json_round_trip() {
    let cfg = small_config();
    let sim = pipeline::simulate(&cfg).unwrap();
    let cp = pipeline::train(&sim.train, &cfg).unwrap();
    let text = cp.to_json();
    let back = Checkpoint::from_json(&text).unwrap();
    assert_eq!(back, cp);
    assert_eq!(back.to_json(), text);
    assert_eq!(back.draws().unwrap(), cp.draws().unwrap());
}

#[test]
fn checkpoint_rejects_other_versions_and_shapes() {
    let cfg = small_config();
    let sim = pipeline::simulate(&cfg).unwrap();
    let cp = pipeline::train(&sim.train, &RunConfig { fit: glass_core::vi::FitConfig { iterations: 1, ..cfg.fit }, ..cfg }).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&cp.to_json()).unwrap();
    v["format_version"] = 99.into();
    assert!(Checkpoint::from_json(&v.to_string()).unwrap_err().contains("format_version"));
    let mut v: serde_json::Value = serde_json::from_str(&cp.to_json()).unwrap();
    v["samples"] = 999.into();
    assert!(Checkpoint::from_json(&v.to_string()).is_err());
    let mut v: serde_json::Value = serde_json::from_str(&cp.to_json()).unwrap();
    v["unexpected"] = 1.into();
    assert!(Checkpoint::from_json(&v.to_string()).is_err());
}

#[test]
fn scores_parse_and_reject_bad_rows() {
    let ok = "c,s,u,j,score\n1,1,row,2,0.5\n1,1,column,3,-1\n";
    let rows = read_scores_from(ok.as_bytes()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].stimulus, 3);
    let bad = "c,s,u,j,score\n1,1,diagonal,2,0.5\n";
    assert!(read_scores_from(bad.as_bytes()).unwrap_err().contains("line 2"));
}

#[test]
fn resolved_config_round_trips_through_toml() {
    let cfg = small_config();
    let text = cfg.to_toml().unwrap();
    let back = RunConfig::from_toml_str(&text, "echo").unwrap().resolve().unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn config_errors_carry_line_numbers() {
    let text = "seed = 1\n[fit]\niterations = 5\nbogus = 2\n";
    let err = RunConfig::from_toml_str(text, "run.toml").unwrap_err().to_string();
    assert!(err.starts_with("run.toml:4:"), "{err}");
    let text = "seed = 1\n\n[generator]\nchannels = \"many\"\n";
    let err = RunConfig::from_toml_str(text, "run.toml").unwrap_err().to_string();
    assert!(err.starts_with("run.toml:4:"), "{err}");
}

#[test]
fn presets_layer_under_file_keys() {
    let cfg = RunConfig::from_toml_str("preset = \"noisy-eeg\"\n[corruption]\nnoisy_var = 2.0\n", "x")
        .unwrap()
        .resolve()
        .unwrap();
    assert!(cfg.corruption.noisy_eeg);
    assert_eq!(cfg.corruption.noisy_var, 2.0);
    assert_eq!(cfg.generator.channels, 16);
    assert!(RunConfig::preset("nope").is_err());
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..4, 1usize..6, 1usize..5, any::<u64>()).prop_map(|(e, m, n, seed)| toy_dataset(e, m, n, seed).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn binary_round_trip_any(data in arb_dataset()) {
        prop_assert_eq!(decode(&encode(&data)).unwrap(), data);
    }

    #[test]
    fn csv_round_trip_any(data in arb_dataset()) {
        let mut buf = Vec::new();
        export_csv(&data, &mut buf).unwrap();
        let back = import_csv_reader(buf.as_slice(), data.sample_rate, data.timing).unwrap();
        prop_assert_eq!(back.half_sequences, data.half_sequences);
    }

    #[test]
    fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode(&bytes);
    }
}
