//! Dataset files.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic      b"GLASSDS1"
//! header     u32 channels, u32 samples, f64 sample_rate,
//!            u32 characters, u32 sequences,
//!            f64 flash_ms, f64 isi_ms, f64 pause_s, f64 window_ms,
//!            u32 name count, then per name u32 byte length + UTF-8
//! body       u64 half-sequence count, then per half-sequence:
//!            u32 c, u32 s, u8 orientation (0 row, 1 column),
//!            u8 labeled, u8 target (0-based), u8 reserved,
//!            six channel-major channels x samples f64 blocks in stimulus order
//! ```
//!
//! The text import has a header row `c,s,u,j,channel,is_target,v1..vM` and
//! one row per stimulus and channel; `u` is `row` or `column`, `j` is 1-based
//! and `is_target` is `1`, `0` or empty.

use std::collections::BTreeMap;
use std::path::Path;

use glass_core::model::{Dataset, HalfKey, HalfSequence, Orientation, StimulusEpoch, TimingConfig, STIMULI};

use crate::error::{AppError, Result};

pub const MAGIC: &[u8; 8] = b"GLASSDS1";
pub const EXTENSION: &str = "glds";

pub fn encode(data: &Dataset) -> Vec<u8> {
    let block = data.channels * data.samples;
    let mut out = Vec::with_capacity(128 + data.len() * (12 + STIMULI * block * 8));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(data.channels as u32).to_le_bytes());
    out.extend_from_slice(&(data.samples as u32).to_le_bytes());
    out.extend_from_slice(&data.sample_rate.to_le_bytes());
    out.extend_from_slice(&(data.characters as u32).to_le_bytes());
    out.extend_from_slice(&(data.sequences as u32).to_le_bytes());
    let t = &data.timing;
    for v in [t.flash_ms, t.isi_ms, t.pause_s, t.window_ms] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(data.channel_names.len() as u32).to_le_bytes());
    for name in &data.channel_names {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for half in &data.half_sequences {
        out.extend_from_slice(&half.key.character.to_le_bytes());
        out.extend_from_slice(&half.key.sequence.to_le_bytes());
        out.push(half.key.orientation.code());
        out.push(half.target.is_some() as u8);
        out.push(half.target.unwrap_or(0) as u8);
        out.push(0);
        for epoch in &half.epochs {
            for v in epoch.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Dataset, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err("not a GLASSDS1 dataset".into());
    }
    let channels = r.u32()? as usize;
    let samples = r.u32()? as usize;
    let sample_rate = r.f64()?;
    let characters = r.u32()? as usize;
    let sequences = r.u32()? as usize;
    let timing = TimingConfig {
        flash_ms: r.f64()?,
        isi_ms: r.f64()?,
        pause_s: r.f64()?,
        window_ms: r.f64()?,
    };
    let names = r.u32()? as usize;
    let mut channel_names = Vec::with_capacity(names.min(4096));
    for _ in 0..names {
        let len = r.u32()? as usize;
        let raw = r.take(len)?;
        channel_names.push(String::from_utf8(raw.to_vec()).map_err(|_| "channel name is not UTF-8".to_string())?);
    }
    let count = r.u64()? as usize;
    let block = channels * samples;
    let mut halves = Vec::with_capacity(count.min(1 << 20));
    for index in 0..count {
        let c = r.u32()?;
        let s = r.u32()?;
        let orientation = Orientation::from_code(r.u8()?).ok_or(format!("half-sequence {index}: bad orientation"))?;
        let labeled = r.u8()?;
        let z = r.u8()? as usize;
        r.u8()?;
        let mut epochs = Vec::with_capacity(STIMULI);
        for _ in 0..STIMULI {
            let raw = r.take(block * 8)?;
            let values = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            epochs.push(StimulusEpoch::new(channels, samples, sample_rate, values).map_err(|e| e.to_string())?);
        }
        let epochs: [StimulusEpoch; STIMULI] = epochs.try_into().unwrap_or_else(|_| unreachable!());
        let target = (labeled != 0).then_some(z);
        halves.push(HalfSequence::new(HalfKey::new(c, s, orientation), epochs, target).map_err(|e| e.to_string())?);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let mut data =
        Dataset::new(halves, channels, samples, sample_rate, timing, channel_names).map_err(|e| e.to_string())?;
    data.characters = characters;
    data.sequences = sequences;
    Ok(data)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    std::fs::write(path, encode(data)).map_err(|e| AppError::io(path, e))
}

/// Reads a binary dataset.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes).map_err(|m| AppError::format(path, m))
}

fn parse_orientation(s: &str) -> Option<Orientation> {
    match s.trim().to_ascii_lowercase().as_str() {
        "row" | "r" => Some(Orientation::Row),
        "column" | "col" | "c" => Some(Orientation::Column),
        _ => None,
    }
}

type EpochKey = (u32, u32, Orientation);

/// Imports the text format at `sample_rate`.
pub fn import_csv(path: &Path, sample_rate: f64, timing: TimingConfig) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    import_csv_reader(file, sample_rate, timing).map_err(|m| AppError::format(path, m))
}

pub fn import_csv_reader<R: std::io::Read>(
    input: R,
    sample_rate: f64,
    timing: TimingConfig,
) -> std::result::Result<Dataset, String> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(|e| e.to_string())?.clone();
    let expected = ["c", "s", "u", "j", "channel", "is_target"];
    if header.len() <= expected.len() || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(format!("header must start with {} followed by sample columns", expected.join(",")));
    }
    let samples = header.len() - expected.len();
    let mut channel_order: Vec<String> = Vec::new();
    let mut values: BTreeMap<EpochKey, [BTreeMap<String, Vec<f64>>; STIMULI]> = BTreeMap::new();
    let mut targets: BTreeMap<EpochKey, [Option<bool>; STIMULI]> = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| format!("line {line}: {e}"))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize, what: &str| field(i).parse::<u32>().map_err(|_| format!("line {line}: bad {what} {:?}", field(i)));
        let c = int(0, "character")?;
        let s = int(1, "sequence")?;
        let u = parse_orientation(field(2)).ok_or(format!("line {line}: bad orientation {:?}", field(2)))?;
        let j = int(3, "stimulus")? as usize;
        if !(1..=STIMULI).contains(&j) {
            return Err(format!("line {line}: stimulus {j} outside 1..=6"));
        }
        let channel = field(4).to_string();
        if !channel_order.contains(&channel) {
            channel_order.push(channel.clone());
        }
        let flag = match field(5) {
            "" => None,
            "1" | "true" => Some(true),
            "0" | "false" => Some(false),
            other => return Err(format!("line {line}: bad is_target {other:?}")),
        };
        let row: Vec<f64> = (0..samples)
            .map(|m| {
                field(6 + m)
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or(format!("line {line}: bad sample value {:?}", field(6 + m)))
            })
            .collect::<std::result::Result<_, _>>()?;
        let slots = values.entry((c, s, u)).or_insert_with(|| std::array::from_fn(|_| BTreeMap::new()));
        if slots[j - 1].insert(channel, row).is_some() {
            return Err(format!("line {line}: duplicate row"));
        }
        let t = targets.entry((c, s, u)).or_insert([None; STIMULI]);
        if let Some(flag) = flag {
            if t[j - 1].replace(flag).is_some_and(|old| old != flag) {
                return Err(format!("line {line}: conflicting is_target"));
            }
        }
    }
    let channels = channel_order.len();
    let mut halves = Vec::with_capacity(values.len());
    for ((c, s, u), slots) in values {
        let incomplete = || format!("half-sequence (c={c}, s={s}, {}) is incomplete", u.as_str());
        let mut epochs = Vec::with_capacity(STIMULI);
        for mut rows in slots {
            let mut data = Vec::with_capacity(channels * samples);
            for name in &channel_order {
                data.extend(rows.remove(name).ok_or_else(incomplete)?);
            }
            epochs.push(StimulusEpoch::new(channels, samples, sample_rate, data).map_err(|e| e.to_string())?);
        }
        let flags = targets[&(c, s, u)];
        let marked: Vec<usize> = (0..STIMULI).filter(|&j| flags[j] == Some(true)).collect();
        let target = match marked.as_slice() {
            [] => None,
            [j] => Some(*j),
            _ => return Err(format!("half-sequence (c={c}, s={s}, {}) has several targets", u.as_str())),
        };
        let epochs: [StimulusEpoch; STIMULI] = epochs.try_into().unwrap_or_else(|_| unreachable!());
        halves.push(HalfSequence::new(HalfKey::new(c, s, u), epochs, target).map_err(|e| e.to_string())?);
    }
    Dataset::new(halves, channels, samples, sample_rate, timing, channel_order).map_err(|e| e.to_string())
}

/// Writes the text format.
pub fn export_csv<W: std::io::Write>(data: &Dataset, out: W) -> std::result::Result<(), String> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["c", "s", "u", "j", "channel", "is_target"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=data.samples).map(|m| format!("v{m}")));
    w.write_record(&header).map_err(|e| e.to_string())?;
    for half in &data.half_sequences {
        for (j, epoch) in half.epochs.iter().enumerate() {
            for (e, name) in data.channel_names.iter().enumerate() {
                let flag = half.target.map_or(String::new(), |z| ((z == j) as u8).to_string());
                let mut row = vec![
                    half.key.character.to_string(),
                    half.key.sequence.to_string(),
                    half.key.orientation.as_str().to_string(),
                    (j + 1).to_string(),
                    name.clone(),
                    flag,
                ];
                row.extend(epoch.channel(e).iter().map(|v| v.to_string()));
                w.write_record(&row).map_err(|e| e.to_string())?;
            }
        }
    }
    w.flush().map_err(|e| e.to_string())
}
