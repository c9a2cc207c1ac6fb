//! End-to-end stages shared by the command-line driver and the tests.

use glass_core::eval::{self, AccuracyCurve, GroupDecoding, ScoreRecord};
use glass_core::grad;
use glass_core::ingest::{self, Identifiability};
use glass_core::model::{log_prior, Dataset, STIMULI};
use glass_core::predict::{self, CharacterDecoding, HalfPrediction, Predictor};
use glass_core::rng;
use glass_core::simulate::{self, CorruptionConfig, GenerativeTruth, RecoveryMetrics, RelabelTruth, TrueModel};
use glass_core::speller::Keyboard;
use glass_core::summary::{self, ChannelSummary, EffectSummary};
use glass_core::vi::{self, PosteriorDraws, TauCalibration};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{PredictConfig, RunConfig};
use crate::error::{AppError, Result};
use crate::io::checkpoint::{CalibrationRecord, Checkpoint, DrawRecord, FORMAT_VERSION, TOOL_VERSION};
use crate::io::tables::SensitivityRow;

/// Seed tags of the pipeline stages.
mod tag {
    pub const RELABEL_TRAIN: u64 = 0xa001;
    pub const RELABEL_TEST: u64 = 0xa002;
    pub const CORRUPT_TRAIN: u64 = 0xa003;
    pub const CORRUPT_TEST: u64 = 0xa004;
    pub const DRAWS: u64 = 0xa005;
}

/// Draws scored together; fixed so results do not depend on the thread count.
const JOINT_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelRecord {
    pub model: TrueModel,
    pub train: RelabelTruth,
    pub test: RelabelTruth,
}

/// Sidecar describing how a simulated dataset pair was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tool_version: String,
    pub seed: u64,
    pub train: GenerativeTruth,
    pub test: GenerativeTruth,
    pub relabel: Option<RelabelRecord>,
    pub corruption: CorruptionConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub train: Dataset,
    pub test: Dataset,
    pub truth: GroundTruth,
}

/// Simulates the training and test sets described by `cfg`.
///
/// With `relabel`, both sets are relabeled under the reference model.
/// Attention drift corrupts the training set only; added noise affects both.
pub fn simulate(cfg: &RunConfig) -> Result<Simulation> {
    let (mut train, train_truth) = simulate::simulate_generative(&cfg.train_generator())?;
    let (mut test, test_truth) = simulate::simulate_generative(&cfg.test_generator())?;
    let seed = cfg.seed;
    let relabel = match &cfg.relabel {
        Some(r) => {
            let model = TrueModel::reference(train.samples, train.sample_rate, train.channels, &r.signal_channels, r.scale)?;
            let (a, ta) =
                simulate::simulate_from_model(&model.theta, &model.hyper, &train, rng::derive(seed, tag::RELABEL_TRAIN))?;
            let (b, tb) =
                simulate::simulate_from_model(&model.theta, &model.hyper, &test, rng::derive(seed, tag::RELABEL_TEST))?;
            train = a;
            test = b;
            Some(RelabelRecord {
                model,
                train: ta,
                test: tb,
            })
        }
        None => None,
    };
    let c = cfg.corruption;
    if c.attention_drift || c.noisy_eeg {
        train = simulate::apply_corruptions(&train, &c, cfg.generator.unit, rng::derive(seed, tag::CORRUPT_TRAIN))?;
    }
    if c.noisy_eeg {
        let noise_only = CorruptionConfig {
            attention_drift: false,
            ..c
        };
        test = simulate::apply_corruptions(&test, &noise_only, cfg.generator.unit, rng::derive(seed, tag::CORRUPT_TEST))?;
    }
    Ok(Simulation {
        train,
        test,
        truth: GroundTruth {
            tool_version: TOOL_VERSION.to_string(),
            seed,
            train: train_truth,
            test: test_truth,
            relabel,
            corruption: c,
        },
    })
}

/// Training log joint of every draw, scored in parallel over fixed chunks.
pub fn attach_log_joint(draws: &mut PosteriorDraws, data: &Dataset, hyper: &glass_core::model::Hyperparams) -> Result<()> {
    let joint: Vec<Vec<f64>> = draws
        .thetas
        .par_chunks(JOINT_CHUNK)
        .map(|chunk| -> Result<Vec<f64>> {
            let liks = grad::log_likelihood_many(data, chunk, hyper.tau)?;
            chunk
                .iter()
                .zip(liks)
                .map(|(theta, lik)| Ok(lik + log_prior(theta, hyper)?))
                .collect()
        })
        .collect::<Result<_>>()?;
    draws.log_joint = Some(joint.into_iter().flatten().collect());
    Ok(())
}

/// Shrinkage calibration, or `None` when `cfg` fixes the threshold.
pub fn calibrate(data: &Dataset, cfg: &RunConfig) -> Result<Option<TauCalibration>> {
    if cfg.calibration.tau.is_some() {
        return Ok(None);
    }
    require_labels(data)?;
    Ok(Some(vi::calibrate_tau(data, &cfg.hyper, &cfg.fit, cfg.calibration.ratio)?))
}

fn require_labels(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(glass_core::Error::EmptyDataset.into());
    }
    if let Some(index) = data.half_sequences.iter().position(|h| h.target.is_none()) {
        return Err(glass_core::Error::MissingLabel { index }.into());
    }
    Ok(())
}

/// Fits at threshold `tau` and records the posterior draws.
pub fn train_at(data: &Dataset, cfg: &RunConfig, tau: f64, calibration: Option<CalibrationRecord>) -> Result<Checkpoint> {
    require_labels(data)?;
    let hyper = cfg.hyper.with_tau(tau);
    let result = vi::fit(data, &hyper, &cfg.fit)?;
    let draw_seed = rng::derive(cfg.seed, tag::DRAWS);
    let mut draws = vi::posterior_draws(&result.xi, cfg.predict.draws, draw_seed)?;
    attach_log_joint(&mut draws, data, &hyper)?;
    Ok(Checkpoint {
        format_version: FORMAT_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        channels: data.channels,
        samples: data.samples,
        sample_rate: data.sample_rate,
        channel_names: data.channel_names.clone(),
        hyper,
        fit: cfg.fit,
        seed: cfg.seed,
        calibration,
        variational: result.xi,
        trace: result.trace,
        draws: DrawRecord {
            count: draws.len(),
            seed: draw_seed,
            log_joint: draws.log_joint,
        },
    })
}

/// Calibrates the threshold unless fixed, then fits.
pub fn train(data: &Dataset, cfg: &RunConfig) -> Result<Checkpoint> {
    match calibrate(data, cfg)? {
        Some(cal) => {
            let record = CalibrationRecord {
                ratio: cal.ratio,
                tau: cal.tau,
                baseline_medians: cal.baseline_medians,
            };
            train_at(data, cfg, cal.tau, Some(record))
        }
        None => train_at(data, cfg, cfg.calibration.tau.unwrap_or(cfg.hyper.tau), None),
    }
}

/// Cheap necessary condition for identifiability, `5N >= EM`.
pub fn identifiability_warning(data: &Dataset) -> Option<String> {
    let rows = (STIMULI - 1) * data.len();
    let cols = data.channels * data.samples;
    (rows < cols).then(|| format!("5N = {rows} < EM = {cols}: the full coefficient matrix is not identifiable"))
}

pub fn identifiability(data: &Dataset) -> Identifiability {
    ingest::identifiability_check(data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub half: Vec<HalfPrediction>,
    pub decodings: Vec<CharacterDecoding>,
    pub ess: f64,
    pub degenerate: bool,
}

pub fn predictor(cp: &Checkpoint, cfg: &PredictConfig) -> Result<Predictor> {
    let draws = cp.draws()?;
    Ok(Predictor::new(&draws, cp.hyper.tau, cfg.weighting.into())?)
}

/// Predicts and decodes every character of `data`.
pub fn predict(cp: &Checkpoint, data: &Dataset, cfg: &PredictConfig) -> Result<Prediction> {
    data.check_compatible(cp.channels, cp.samples)?;
    let p = predictor(cp, cfg)?;
    predict_with(&p, data, cfg)
}

pub fn predict_with(p: &Predictor, data: &Dataset, cfg: &PredictConfig) -> Result<Prediction> {
    let half: Vec<HalfPrediction> = data
        .half_sequences
        .par_iter()
        .map(|h| {
            Ok(HalfPrediction {
                character: h.key.character,
                sequence: h.key.sequence,
                dist: p.predict(h)?,
            })
        })
        .collect::<Result<_>>()?;
    let decodings = predict::decode_dataset(data, &half, &Keyboard::default(), cfg.max_sequences)?;
    Ok(Prediction {
        half,
        decodings,
        ess: p.weights().ess,
        degenerate: p.weights().degenerate(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub effects: EffectSummary,
    pub channels: ChannelSummary,
}

pub fn summarize(cp: &Checkpoint) -> Result<Summary> {
    let draws = cp.draws()?;
    Ok(Summary {
        effects: summary::summarize_effects(&draws, &cp.hyper)?,
        channels: summary::summarize_channels(&draws)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub curve: AccuracyCurve,
    pub utility: Vec<f64>,
    pub best: Option<(usize, f64)>,
    pub n_seq_80: Option<usize>,
}

/// Accuracy, utility and sequences-to-80% over decoded groups.
pub fn evaluate_groups(groups: &[GroupDecoding], timing: &glass_core::model::TimingConfig) -> Result<Evaluation> {
    let curve = eval::accuracy_by_sequences(groups)?;
    let n_keys = Keyboard::default().len();
    Ok(Evaluation {
        utility: eval::utility_curve(&curve, timing, n_keys),
        best: eval::best_utility(&curve, timing, n_keys),
        n_seq_80: eval::n_seq_80(&curve),
        curve,
    })
}

/// Evaluates a model on labeled test sets, one group per set.
pub fn evaluate(cp: &Checkpoint, tests: &[Dataset], cfg: &PredictConfig) -> Result<Evaluation> {
    let first = tests.first().ok_or_else(|| AppError::Config("no test data given".into()))?;
    let p = predictor(cp, cfg)?;
    let mut groups = Vec::with_capacity(tests.len());
    for data in tests {
        data.check_compatible(cp.channels, cp.samples)?;
        let pred = predict_with(&p, data, cfg)?;
        groups.push(GroupDecoding::from_decodings(&pred.decodings)?);
    }
    evaluate_groups(&groups, &first.timing)
}

/// Truth symbols of the labeled characters of `data`, by character.
fn truths(data: &Dataset) -> Result<std::collections::BTreeMap<u32, char>> {
    let kb = Keyboard::default();
    let mut rows = std::collections::BTreeMap::new();
    let mut cols = std::collections::BTreeMap::new();
    for (index, h) in data.half_sequences.iter().enumerate() {
        let z = h.target.ok_or(glass_core::Error::MissingLabel { index })?;
        let map = match h.key.orientation {
            glass_core::model::Orientation::Row => &mut rows,
            glass_core::model::Orientation::Column => &mut cols,
        };
        map.entry(h.key.character).or_insert(z);
    }
    Ok(rows
        .iter()
        .filter_map(|(c, r)| cols.get(c).and_then(|col| kb.symbol(r + 1, col + 1)).map(|s| (*c, s)))
        .collect())
}

/// Scores external classifier outputs against the labels of `data`.
pub fn evaluate_scores(records: &[ScoreRecord], data: &Dataset) -> Result<Evaluation> {
    let truth = truths(data)?;
    let decoded = eval::decode_scores(records, &Keyboard::default())?;
    let depth = {
        let mut per_char = std::collections::BTreeMap::<u32, usize>::new();
        for d in &decoded {
            *per_char.entry(d.character).or_default() += 1;
        }
        per_char.values().copied().min().unwrap_or(0)
    };
    let mut group = GroupDecoding {
        predictions: vec![Vec::new(); depth],
        truths: Vec::new(),
    };
    for (c, t) in &truth {
        let mine: Vec<_> = decoded.iter().filter(|d| d.character == *c).collect();
        if mine.len() < depth || depth == 0 {
            return Err(AppError::Config(format!("scores are missing for character {c}")));
        }
        group.truths.push(*t);
        for (n, d) in mine.iter().take(depth).enumerate() {
            group.predictions[n].push(d.decoded.symbol);
        }
    }
    evaluate_groups(&[group], &data.timing)
}

/// Fits one model per shrinkage ratio from a shared baseline fit.
pub fn train_grid(data: &Dataset, cfg: &RunConfig, ratios: &[f64]) -> Result<Vec<Checkpoint>> {
    require_labels(data)?;
    let baseline = vi::calibrate_tau(data, &cfg.hyper, &cfg.fit, 1.0)?;
    ratios
        .iter()
        .map(|&ratio| {
            let tau = vi::tau_from_medians(&baseline.baseline_medians, ratio);
            let record = CalibrationRecord {
                ratio,
                tau,
                baseline_medians: baseline.baseline_medians.clone(),
            };
            train_at(data, cfg, tau, Some(record))
        })
        .collect()
}

/// Fits one model per shrinkage ratio and evaluates each on `test`.
pub fn sensitivity(
    train: &Dataset,
    test: &Dataset,
    cfg: &RunConfig,
    ratios: &[f64],
) -> Result<Vec<(SensitivityRow, Checkpoint)>> {
    let models = train_grid(train, cfg, ratios)?;
    let mut out = Vec::with_capacity(models.len());
    for cp in models {
        let ev = evaluate(&cp, std::slice::from_ref(test), &cfg.predict)?;
        let (best_n_seq, best_utility) = ev.best.unwrap_or((0, 0.0));
        let cal = cp.calibration.as_ref().expect("grid models record their calibration");
        out.push((
            SensitivityRow {
                ratio: cal.ratio,
                tau: cal.tau,
                accuracy: ev.curve.means(),
                best_utility,
                best_n_seq,
                n_seq_80: ev.n_seq_80,
            },
            cp,
        ));
    }
    Ok(out)
}

/// How well a checkpoint recovers the model a simulation was drawn from.
pub fn recovery(truth: &GroundTruth, cp: &Checkpoint) -> Result<RecoveryMetrics> {
    let relabel = truth
        .relabel
        .as_ref()
        .ok_or_else(|| AppError::Config("ground truth has no reference model".into()))?;
    let draws = cp.draws()?;
    Ok(simulate::recovery_metrics(&relabel.model, &draws, &cp.hyper)?)
}
