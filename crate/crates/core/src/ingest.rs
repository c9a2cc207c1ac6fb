//! Epoch extraction from continuous recordings, band-pass filtering,
//! decimation and the identifiability diagnostic.
//!
//! The decoder consumes unfiltered full-rate epochs; filtering and decimation
//! serve baseline pipelines and data inspection.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Complex, ComplexField, DMatrix};

use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::model::{Dataset, HalfKey, HalfSequence, Orientation, StimulusEpoch, TimingConfig, STIMULI};

/// Whether a window of `w` ms at rate `r` covers `floor(w r / 1000) + 1`
/// samples (both ends) or one fewer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Endpoint {
    #[default]
    Inclusive,
    Exclusive,
}

/// Samples per epoch for a window of `window_ms` at `sample_rate`.
pub fn window_samples(window_ms: f64, sample_rate: f64, endpoint: Endpoint) -> usize {
    let span = libm::floor(window_ms * sample_rate / 1000.0 + 1e-9) as usize;
    match endpoint {
        Endpoint::Inclusive => span + 1,
        Endpoint::Exclusive => span,
    }
}

/// One stimulus onset in a continuous recording.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Event {
    /// Sample index of the flash onset.
    pub index: usize,
    pub character: u32,
    pub sequence: u32,
    pub orientation: Orientation,
    /// 1-based stimulus number within the half-sequence.
    pub stimulus: usize,
    pub is_target: Option<bool>,
}

/// Channel-major `E x T` recording with its stimulus events.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRecording {
    pub data: Vec<f64>,
    pub channels: usize,
    pub sample_rate: f64,
    pub events: Vec<Event>,
    pub channel_names: Vec<String>,
}

impl ContinuousRecording {
    pub fn new(data: Vec<f64>, channels: usize, sample_rate: f64, events: Vec<Event>) -> Result<Self> {
        if channels == 0 || data.len() % channels != 0 {
            return Err(Error::len("recording length", channels, data.len()));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!("sample_rate must be > 0, got {sample_rate}")));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "recording", index });
        }
        if let Some(k) = events.windows(2).position(|w| w[1].index <= w[0].index) {
            return Err(Error::InvalidConfig(alloc::format!(
                "event indices must be strictly increasing (event {})",
                k + 1
            )));
        }
        Ok(Self {
            data,
            channels,
            sample_rate,
            events,
            channel_names: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channel(&self, e: usize) -> &[f64] {
        let t = self.len();
        &self.data[e * t..(e + 1) * t]
    }
}

/// Cuts a window after every event and groups the epochs into
/// half-sequences ordered by `(c, s, u)`.
pub fn extract_epochs(
    rec: &ContinuousRecording,
    timing: TimingConfig,
    endpoint: Endpoint,
) -> Result<Dataset> {
    timing.validate()?;
    let window = window_samples(timing.window_ms, rec.sample_rate, endpoint);
    let len = rec.len();
    type Slots = [Option<(StimulusEpoch, Option<bool>)>; STIMULI];
    let mut groups: BTreeMap<(u32, u32, u8), Slots> = BTreeMap::new();
    for (k, ev) in rec.events.iter().enumerate() {
        if ev.index + window > len {
            return Err(Error::WindowOverrun {
                event: k,
                start: ev.index,
                window,
                len,
            });
        }
        let incomplete = Error::IncompleteHalfSequence {
            character: ev.character,
            sequence: ev.sequence,
            orientation: ev.orientation,
        };
        if !(1..=STIMULI).contains(&ev.stimulus) {
            return Err(incomplete);
        }
        let mut data = Vec::with_capacity(rec.channels * window);
        for e in 0..rec.channels {
            data.extend_from_slice(&rec.channel(e)[ev.index..ev.index + window]);
        }
        let epoch = StimulusEpoch::new(rec.channels, window, rec.sample_rate, data)?;
        let slots = groups
            .entry((ev.character, ev.sequence, ev.orientation.code()))
            .or_insert_with(|| core::array::from_fn(|_| None));
        let slot = &mut slots[ev.stimulus - 1];
        if slot.is_some() {
            return Err(incomplete);
        }
        *slot = Some((epoch, ev.is_target));
    }

    let mut halves = Vec::with_capacity(groups.len());
    for ((c, s, u), slots) in groups {
        let orientation = Orientation::from_code(u).expect("codes come from orientations");
        let incomplete = Error::IncompleteHalfSequence {
            character: c,
            sequence: s,
            orientation,
        };
        let mut epochs = Vec::with_capacity(STIMULI);
        let mut targets = Vec::new();
        for (j, slot) in slots.into_iter().enumerate() {
            let (epoch, flag) = slot.ok_or_else(|| incomplete.clone())?;
            if flag == Some(true) {
                targets.push(j);
            }
            epochs.push(epoch);
        }
        let target = match targets.as_slice() {
            [] => None,
            [j] => Some(*j),
            _ => return Err(incomplete),
        };
        let epochs: [StimulusEpoch; STIMULI] = epochs.try_into().unwrap_or_else(|_| unreachable!());
        halves.push(HalfSequence::new(HalfKey::new(c, s, orientation), epochs, target)?);
    }
    Dataset::new(halves, rec.channels, window, rec.sample_rate, timing, rec.channel_names.clone())
}

/// Butterworth band-pass design and application settings.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FilterSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Order of the low-pass prototype; the band-pass has twice as many poles.
    pub order: usize,
    /// Forward-backward application.
    pub zero_phase: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            low_hz: 0.5,
            high_hz: 15.0,
            order: 4,
            zero_phase: true,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        let ok = self.low_hz > 0.0 && self.low_hz < self.high_hz && self.high_hz < sample_rate / 2.0;
        if !ok || self.order == 0 {
            return Err(Error::InvalidBand {
                low_hz: self.low_hz,
                high_hz: self.high_hz,
                sample_rate,
            });
        }
        Ok(())
    }
}

/// Second-order section `b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z: Complex<f64>) -> Complex<f64> {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = 1.0 + zi * (self.a[0] + zi * self.a[1]);
        num / den
    }

    /// Transposed direct-form II states at steady state for a unit step.
    fn step_state(&self) -> [f64; 2] {
        let y = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1]);
        [y - self.b[0], self.b[2] - self.a[1] * y]
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    fn run(&self, x: &mut [f64], mut state: [f64; 2]) {
        for v in x.iter_mut() {
            let y = self.b[0] * *v + state[0];
            state[0] = self.b[1] * *v - self.a[0] * y + state[1];
            state[1] = self.b[2] * *v - self.a[1] * y;
            *v = y;
        }
    }
}

/// Cascade of sections realizing a digital Butterworth band-pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    /// Bilinear-transform design with prewarped band edges, normalized to
    /// unit gain at the band centre.
    pub fn butterworth_bandpass(spec: &FilterSpec, sample_rate: f64) -> Result<Self> {
        spec.validate(sample_rate)?;
        let fs2 = 2.0 * sample_rate;
        let warp = |f: f64| fs2 * libm::tan(PI * f / sample_rate);
        let (lo, hi) = (warp(spec.low_hz), warp(spec.high_hz));
        let (bw, w0) = (hi - lo, sqrt(lo * hi));
        let n = spec.order;

        // Upper-half-plane analog band-pass poles; each is paired with its conjugate.
        let mut upper = Vec::with_capacity(n);
        let mut real = Vec::new();
        for k in 0..n {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let p = Complex::new(libm::cos(theta), libm::sin(theta));
            if p.im < 0.0 {
                continue;
            }
            let half = p * (bw / 2.0);
            let root = (half * half - w0 * w0).sqrt();
            for s in [half + root, half - root] {
                if p.im == 0.0 || s.im.abs() < 1e-12 * s.modulus() {
                    real.push(s.re);
                } else {
                    upper.push(if s.im > 0.0 { s } else { s.conj() });
                }
            }
        }
        // A real prototype pole yields one conjugate pair or two real poles.
        upper.sort_by(|a, b| a.im.total_cmp(&b.im));
        upper.dedup_by(|a, b| (*a - *b).modulus() < 1e-9 * b.modulus());

        let to_z = |s: Complex<f64>| (fs2 + s) / (fs2 - s);
        let mut sections = Vec::with_capacity(n);
        for s in &upper {
            let z = to_z(*s);
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-2.0 * z.re, z.norm_sqr()],
            });
        }
        for pair in real.chunks(2) {
            let z1 = to_z(Complex::new(pair[0], 0.0)).re;
            let z2 = pair.get(1).map_or(0.0, |p| to_z(Complex::new(*p, 0.0)).re);
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-(z1 + z2), z1 * z2],
            });
        }
        if sections.len() != n {
            return Err(Error::InvalidBand {
                low_hz: spec.low_hz,
                high_hz: spec.high_hz,
                sample_rate,
            });
        }
        let mut filter = Self { sections };
        let centre = 2.0 * libm::atan(w0 / fs2);
        let gain = filter.response(centre).modulus();
        for b in filter.sections[0].b.iter_mut() {
            *b /= gain;
        }
        Ok(filter)
    }

    /// Complex frequency response at `omega` radians per sample.
    pub fn response(&self, omega: f64) -> Complex<f64> {
        let z = Complex::new(libm::cos(omega), libm::sin(omega));
        self.sections.iter().map(|s| s.response(z)).product()
    }

    /// Single forward pass from rest.
    pub fn filter(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.run(x, [0.0; 2]);
        }
    }

    fn filter_from_steady(&self, x: &mut [f64]) {
        let mut level = x.first().copied().unwrap_or(0.0);
        for s in &self.sections {
            let state = s.step_state().map(|v| v * level);
            s.run(x, state);
            level *= s.dc_gain();
        }
    }

    /// Forward-backward filtering with odd extension of `3 (2n + 1)` samples
    /// (fewer for short inputs) and steady-state initial conditions.
    pub fn filtfilt(&self, x: &mut [f64]) {
        let len = x.len();
        if len < 2 {
            return;
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(len - 1);
        let mut ext = Vec::with_capacity(len + 2 * pad);
        ext.extend((1..=pad).rev().map(|k| 2.0 * x[0] - x[k]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|k| 2.0 * x[len - 1] - x[len - 1 - k]));
        self.filter_from_steady(&mut ext);
        ext.reverse();
        self.filter_from_steady(&mut ext);
        ext.reverse();
        x.copy_from_slice(&ext[pad..pad + len]);
    }
}

/// Band-passes every channel of a recording.
pub fn bandpass(rec: &ContinuousRecording, spec: &FilterSpec) -> Result<ContinuousRecording> {
    let filter = SosFilter::butterworth_bandpass(spec, rec.sample_rate)?;
    let mut out = rec.clone();
    let t = rec.len();
    if t == 0 {
        return Ok(out);
    }
    for channel in out.data.chunks_mut(t) {
        if spec.zero_phase {
            filter.filtfilt(channel);
        } else {
            filter.filter(channel);
        }
    }
    Ok(out)
}

/// Band-passes every channel of every epoch independently.
///
/// Epochs are short, so edge transients matter more than on a continuous
/// recording; filter the recording before epoching when it is available.
pub fn bandpass_dataset(data: &Dataset, spec: &FilterSpec) -> Result<Dataset> {
    let filter = SosFilter::butterworth_bandpass(spec, data.sample_rate)?;
    let mut out = data.clone();
    for half in &mut out.half_sequences {
        for epoch in &mut half.epochs {
            for e in 0..data.channels {
                let x = epoch.channel_mut(e);
                if spec.zero_phase {
                    filter.filtfilt(x);
                } else {
                    filter.filter(x);
                }
            }
        }
    }
    Ok(out)
}

/// How the decimation stride is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Decimation {
    /// The target rate must divide the source rate.
    #[default]
    Exact,
    /// Stride `round(source / target)`; the result runs at `source / stride`.
    Nearest,
}

fn stride(source_hz: f64, target_hz: f64, mode: Decimation) -> Result<usize> {
    let err = Error::InvalidRate { source_hz, target_hz };
    if !(target_hz > 0.0 && target_hz <= source_hz && target_hz.is_finite()) {
        return Err(err);
    }
    let ratio = source_hz / target_hz;
    let k = libm::round(ratio);
    if mode == Decimation::Exact && (ratio - k).abs() > 1e-9 * ratio {
        return Err(err);
    }
    Ok(k as usize)
}

/// Keeps samples `0, k, 2k, ...` of every channel and shifts event indices
/// to the nearest kept sample at or after the onset.
pub fn downsample_recording(rec: &ContinuousRecording, target_hz: f64, mode: Decimation) -> Result<ContinuousRecording> {
    let k = stride(rec.sample_rate, target_hz, mode)?;
    let t = rec.len();
    let kept = t.div_ceil(k);
    let mut data = Vec::with_capacity(rec.channels * kept);
    for e in 0..rec.channels {
        data.extend(rec.channel(e).iter().step_by(k));
    }
    let events = rec
        .events
        .iter()
        .map(|ev| Event {
            index: ev.index.div_ceil(k),
            ..*ev
        })
        .collect();
    let mut out = ContinuousRecording::new(data, rec.channels, rec.sample_rate / k as f64, events)?;
    out.channel_names = rec.channel_names.clone();
    Ok(out)
}

/// Decimates every epoch by index selection from sample 0:
/// `floor((M - 1) / k) + 1` samples inclusive, one fewer exclusive.
pub fn downsample_dataset(data: &Dataset, target_hz: f64, mode: Decimation, endpoint: Endpoint) -> Result<Dataset> {
    let k = stride(data.sample_rate, target_hz, mode)?;
    let mut n = (data.samples - 1) / k + 1;
    if endpoint == Endpoint::Exclusive && k > 1 {
        n -= 1;
    }
    if n == 0 {
        return Err(Error::InvalidRate {
            source_hz: data.sample_rate,
            target_hz,
        });
    }
    let rate = data.sample_rate / k as f64;
    let mut halves = Vec::with_capacity(data.len());
    for half in &data.half_sequences {
        let epochs: Vec<StimulusEpoch> = half
            .epochs
            .iter()
            .map(|epoch| {
                let mut values = Vec::with_capacity(data.channels * n);
                for e in 0..data.channels {
                    values.extend(epoch.channel(e).iter().step_by(k).take(n));
                }
                StimulusEpoch::new(data.channels, n, rate, values)
            })
            .collect::<Result<_>>()?;
        let epochs: [StimulusEpoch; STIMULI] = epochs.try_into().unwrap_or_else(|_| unreachable!());
        halves.push(HalfSequence::new(half.key, epochs, half.target)?);
    }
    let mut out = Dataset::new(halves, data.channels, n, rate, data.timing, data.channel_names.clone())?;
    out.characters = data.characters;
    out.sequences = data.sequences;
    Ok(out)
}

/// Relative singular-value tolerance for the rank.
pub const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Identifiability {
    pub rank: usize,
    pub full_column_rank: bool,
    /// `5N`.
    pub rows: usize,
    /// `EM`.
    pub columns: usize,
    pub message: Option<String>,
}

/// Numerical rank of the stacked contrasts `vec(X_ij - X_i6)`, `j = 1..5`.
///
/// Costs a dense SVD of a `5N x EM` matrix; meant for on-demand diagnosis.
pub fn identifiability_check(data: &Dataset) -> Identifiability {
    let rows = (STIMULI - 1) * data.len();
    let columns = data.channels * data.samples;
    let mut x = DMatrix::<f64>::zeros(rows, columns);
    for (i, half) in data.half_sequences.iter().enumerate() {
        let pivot = half.epochs[STIMULI - 1].data();
        for j in 0..STIMULI - 1 {
            let r = i * (STIMULI - 1) + j;
            for (col, (a, b)) in half.epochs[j].data().iter().zip(pivot).enumerate() {
                x[(r, col)] = a - b;
            }
        }
    }
    let rank = if rows == 0 || columns == 0 {
        0
    } else {
        let sv = x.singular_values();
        let largest = sv.iter().fold(0.0f64, |a, b| a.max(*b));
        if largest == 0.0 {
            0
        } else {
            sv.iter().filter(|s| **s > RANK_TOLERANCE * largest).count()
        }
    };
    let full_column_rank = rank == columns;
    let message = if rows < columns {
        Some(alloc::format!(
            "necessary condition 5N >= EM fails: 5N = {rows} < EM = {columns}"
        ))
    } else if !full_column_rank {
        Some(alloc::format!("contrast matrix has rank {rank} < EM = {columns}"))
    } else {
        None
    };
    Identifiability {
        rank,
        full_column_rank,
        rows,
        columns,
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sine(freq: f64, rate: f64, len: usize) -> Vec<f64> {
        (0..len).map(|t| libm::sin(2.0 * PI * freq * t as f64 / rate)).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        sqrt(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
    }

    fn recording(values: Vec<f64>, channels: usize, rate: f64) -> ContinuousRecording {
        ContinuousRecording::new(values, channels, rate, Vec::new()).unwrap()
    }

    #[test]
    fn window_sample_counts() {
        assert_eq!(window_samples(800.0, 256.0, Endpoint::Inclusive), 205);
        assert_eq!(window_samples(800.0, 32.0, Endpoint::Inclusive), 26);
        assert_eq!(window_samples(800.0, 32.0, Endpoint::Exclusive), 25);
    }

    #[test]
    fn filter_passes_the_band_and_stops_mains() {
        let spec = FilterSpec::default();
        let filter = SosFilter::butterworth_bandpass(&spec, 256.0).unwrap();
        assert_eq!(filter.sections.len(), 4);
        // Butterworth magnitude at the band edges is 1/sqrt(2) after prewarping.
        for edge in [0.5, 15.0] {
            let g = filter.response(2.0 * PI * edge / 256.0).modulus();
            assert!((g - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9, "edge {edge}: {g}");
        }
        let len = 256 * 20;
        let settle = 256 * 2;
        for (freq, check) in [(50.0, 0), (5.0, 1)] {
            let x = sine(freq, 256.0, len);
            let y = bandpass(&recording(x.clone(), 1, 256.0), &spec).unwrap().data;
            let ratio = rms(&y[settle..len - settle]) / rms(&x[settle..len - settle]);
            if check == 0 {
                assert!(ratio <= 0.05, "50 Hz ratio {ratio}");
            } else {
                assert!(ratio >= 0.9, "5 Hz ratio {ratio}");
            }
        }
        let zero = bandpass(&recording(vec![0.0; 300], 1, 256.0), &spec).unwrap();
        assert!(zero.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn filter_is_linear() {
        let spec = FilterSpec::default();
        let x = sine(3.0, 256.0, 700);
        let y: Vec<f64> = (0..700).map(|t| ((t * 37) % 11) as f64 - 5.0).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.5 * a - 0.7 * b).collect();
        let f = |v: Vec<f64>| bandpass(&recording(v, 1, 256.0), &spec).unwrap().data;
        let (fx, fy, fm) = (f(x), f(y), f(mix));
        for t in 0..700 {
            assert!((fm[t] - (2.5 * fx[t] - 0.7 * fy[t])).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_bands_are_rejected() {
        for (lo, hi) in [(0.0, 15.0), (15.0, 0.5), (0.5, 128.0)] {
            let spec = FilterSpec {
                low_hz: lo,
                high_hz: hi,
                ..FilterSpec::default()
            };
            assert!(matches!(
                SosFilter::butterworth_bandpass(&spec, 256.0),
                Err(Error::InvalidBand { .. })
            ));
        }
    }

    fn events_for(characters: u32, spacing: usize) -> Vec<Event> {
        let mut events = Vec::new();
        let mut index = 0;
        for c in 1..=characters {
            for orientation in [Orientation::Row, Orientation::Column] {
                for stimulus in 1..=STIMULI {
                    events.push(Event {
                        index,
                        character: c,
                        sequence: 1,
                        orientation,
                        stimulus,
                        is_target: Some(stimulus == 2),
                    });
                    index += spacing;
                }
            }
        }
        events
    }

    #[test]
    fn constant_recording_gives_constant_epochs() {
        let events = events_for(2, 40);
        let len = 24 * 40 + 205;
        let rec = ContinuousRecording::new(vec![3.5; 2 * len], 2, 256.0, events).unwrap();
        let data = extract_epochs(&rec, TimingConfig::default(), Endpoint::Inclusive).unwrap();
        assert_eq!((data.len(), data.samples, data.channels), (4, 205, 2));
        assert!(data.half_sequences.iter().all(|h| h.target == Some(1)));
        assert!(data
            .half_sequences
            .iter()
            .flat_map(|h| h.epochs.iter())
            .all(|e| e.data().iter().all(|v| *v == 3.5)));
    }

    #[test]
    fn extraction_errors() {
        let mut events = events_for(1, 40);
        let len = 12 * 40 + 100;
        let rec = ContinuousRecording::new(vec![0.0; len], 1, 256.0, events.clone()).unwrap();
        assert!(matches!(
            extract_epochs(&rec, TimingConfig::default(), Endpoint::Inclusive),
            Err(Error::WindowOverrun { .. })
        ));
        events.remove(3);
        let rec = ContinuousRecording::new(vec![0.0; 12 * 40 + 205], 1, 256.0, events).unwrap();
        assert!(matches!(
            extract_epochs(&rec, TimingConfig::default(), Endpoint::Inclusive),
            Err(Error::IncompleteHalfSequence { character: 1, .. })
        ));
    }

    #[test]
    fn decimation_counts_and_constants() {
        let events = events_for(1, 40);
        let rec = ContinuousRecording::new(vec![1.25; 12 * 40 + 205], 1, 256.0, events).unwrap();
        let data = extract_epochs(&rec, TimingConfig::default(), Endpoint::Inclusive).unwrap();
        let inc = downsample_dataset(&data, 32.0, Decimation::Exact, Endpoint::Inclusive).unwrap();
        let exc = downsample_dataset(&data, 32.0, Decimation::Exact, Endpoint::Exclusive).unwrap();
        assert_eq!((inc.samples, exc.samples), (26, 25));
        assert_eq!(inc.sample_rate, 32.0);
        assert!(inc.half_sequences[0].epochs[0].data().iter().all(|v| *v == 1.25));
        let same = downsample_dataset(&data, 256.0, Decimation::Exact, Endpoint::Exclusive).unwrap();
        assert_eq!(same, data);
        assert!(matches!(
            downsample_dataset(&data, 30.0, Decimation::Exact, Endpoint::Inclusive),
            Err(Error::InvalidRate { .. })
        ));
        let near = downsample_dataset(&data, 31.0, Decimation::Nearest, Endpoint::Inclusive).unwrap();
        assert_eq!(near.sample_rate, 32.0);

        let ramp = recording((0..64).map(|v| v as f64).collect(), 1, 256.0);
        let d = downsample_recording(&ramp, 32.0, Decimation::Exact).unwrap();
        assert_eq!(d.data, (0..8).map(|k| (8 * k) as f64).collect::<Vec<_>>());
    }

    fn scalar_half(values: [f64; STIMULI], c: u32) -> HalfSequence {
        let epochs = values.map(|v| StimulusEpoch::new(1, 1, 32.0, vec![v]).unwrap());
        HalfSequence::new(HalfKey::new(c, 1, Orientation::Row), epochs, None).unwrap()
    }

    #[test]
    fn identifiability_examples() {
        let one = Dataset::new(
            vec![scalar_half([1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 1)],
            1,
            1,
            32.0,
            TimingConfig::default(),
            Vec::new(),
        )
        .unwrap();
        let r = identifiability_check(&one);
        assert_eq!((r.rank, r.full_column_rank, r.rows, r.columns), (1, true, 5, 1));

        let epochs = |seed: u64| -> [StimulusEpoch; STIMULI] {
            let mut rng = crate::rng::stream(seed, 0);
            core::array::from_fn(|_| {
                let v = (0..6).map(|_| rand::RngExt::random::<f64>(&mut rng)).collect();
                StimulusEpoch::new(2, 3, 32.0, v).unwrap()
            })
        };
        let half = |seed: u64, c: u32| {
            HalfSequence::new(HalfKey::new(c, 1, Orientation::Row), epochs(seed), None).unwrap()
        };
        let base = Dataset::new(vec![half(1, 1)], 2, 3, 32.0, TimingConfig::default(), Vec::new()).unwrap();
        let doubled = base.with_half_sequences(vec![half(1, 1), half(1, 2)]);
        let (a, b) = (identifiability_check(&base), identifiability_check(&doubled));
        assert_eq!(a.rank, b.rank);
        // One half-sequence gives 5 rows for 6 columns.
        assert_eq!(a.rank, 5);
        assert!(!a.full_column_rank);

        let wide = Dataset::new(
            vec![HalfSequence::new(
                HalfKey::new(1, 1, Orientation::Row),
                core::array::from_fn(|j| StimulusEpoch::new(1, 8, 32.0, (0..8).map(|m| ((j * 8 + m) as f64).sin()).collect()).unwrap()),
                None,
            )
            .unwrap()],
            1,
            8,
            32.0,
            TimingConfig::default(),
            Vec::new(),
        )
        .unwrap();
        let w = identifiability_check(&wide);
        assert!(!w.full_column_rank);
        assert!(w.message.unwrap().contains("5N >= EM"));
    }
}
