//! PhysioNet WFDB ingest: header text, format-212 signal files and MIT
//! annotation streams, converted into physical-unit [`EcgRecord`]s.
//!
//! Only the subset of WFDB needed for the MIT-BIH style databases is
//! supported: single-segment records whose signals are all stored in
//! format 212. A two-column CSV fallback covers datasets distributed
//! outside WFDB.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of leading samples kept from every record.
pub const DEFAULT_MAX_SAMPLES: usize = 409_600;

const FORMAT_212: u32 = 212;
const DEFAULT_GAIN: f64 = 200.0;

/// One signal line of a header file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub file_name: String,
    pub storage_format: u32,
    /// ADC units per physical unit (per mV for ECG leads).
    pub adc_gain: f64,
    /// Raw value corresponding to 0 physical units.
    pub baseline: i32,
    pub units: String,
    pub adc_resolution: u32,
    pub adc_zero: i32,
    pub initial_value: i32,
    pub checksum: Option<i32>,
    pub block_size: u32,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub record_name: String,
    pub n_signals: usize,
    pub fs: f64,
    pub n_samples: usize,
    pub signals: Vec<SignalSpec>,
}

impl RecordHeader {
    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.signals.iter().position(|s| s.label == label)
    }
}

/// Parse the text of a `.hea` file.
pub fn parse_header(text: &str) -> Result<RecordHeader> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (line_no, record_line) = lines.next().ok_or(Error::HeaderParse {
        line: 1,
        msg: "no record line".into(),
    })?;
    let bad = |msg: String| Error::HeaderParse { line: line_no, msg };

    let fields: Vec<&str> = record_line.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(bad(format!(
            "record line needs `name n_signals fs n_samples`, got {} fields",
            fields.len()
        )));
    }
    let record_name = fields[0];
    if record_name.contains('/') {
        return Err(bad("multi-segment records are not supported".into()));
    }
    let n_signals: usize = fields[1]
        .parse()
        .map_err(|_| bad(format!("bad signal count `{}`", fields[1])))?;
    if n_signals == 0 {
        return Err(bad("record declares no signals".into()));
    }
    // `fs[/counter_freq[(base_counter)]]`
    let fs_text = fields[2].split('/').next().unwrap_or_default();
    let fs: f64 = fs_text
        .parse()
        .map_err(|_| bad(format!("bad sampling frequency `{}`", fields[2])))?;
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(bad(format!("sampling frequency must be positive, got {fs}")));
    }
    let n_samples: usize = fields[3]
        .parse()
        .map_err(|_| bad(format!("bad sample count `{}`", fields[3])))?;

    let mut signals = Vec::with_capacity(n_signals);
    for _ in 0..n_signals {
        let (line_no, line) = lines.next().ok_or(Error::HeaderParse {
            line: line_no,
            msg: format!("expected {n_signals} signal lines, found {}", signals.len()),
        })?;
        signals.push(parse_signal_line(line_no, line)?);
    }

    Ok(RecordHeader {
        record_name: record_name.to_string(),
        n_signals,
        fs,
        n_samples,
        signals,
    })
}

fn parse_signal_line(line_no: usize, line: &str) -> Result<SignalSpec> {
    let bad = |msg: String| Error::HeaderParse { line: line_no, msg };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 2 {
        return Err(bad("signal line needs at least `file format`".into()));
    }

    let format_field = fields[1];
    let digits_end = format_field
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(format_field.len());
    let storage_format: u32 = format_field[..digits_end]
        .parse()
        .map_err(|_| bad(format!("bad storage format `{format_field}`")))?;
    if storage_format != FORMAT_212 {
        return Err(Error::UnsupportedFormat(storage_format));
    }
    if digits_end != format_field.len() {
        return Err(bad(format!(
            "frame-size, skew and byte-offset modifiers are not supported (`{format_field}`)"
        )));
    }

    let int_field = |idx: usize, name: &str| -> Result<Option<i32>> {
        fields
            .get(idx)
            .map(|f| {
                f.parse::<i32>()
                    .map_err(|_| bad(format!("bad {name} `{f}`")))
            })
            .transpose()
    };

    // `gain[(baseline)][/units]`
    let (mut adc_gain, mut baseline, mut units) = (DEFAULT_GAIN, None, "mV".to_string());
    if let Some(gain_field) = fields.get(2) {
        let (gain_part, unit_part) = match gain_field.split_once('/') {
            Some((g, u)) => (g, Some(u)),
            None => (*gain_field, None),
        };
        let (gain_text, base_text) = match gain_part.split_once('(') {
            Some((g, rest)) => (g, Some(rest.trim_end_matches(')'))),
            None => (gain_part, None),
        };
        adc_gain = gain_text
            .parse()
            .map_err(|_| bad(format!("bad ADC gain `{gain_field}`")))?;
        if adc_gain == 0.0 {
            adc_gain = DEFAULT_GAIN;
        }
        if !(adc_gain > 0.0 && adc_gain.is_finite()) {
            return Err(bad(format!("ADC gain must be positive, got {adc_gain}")));
        }
        if let Some(b) = base_text {
            baseline = Some(
                b.parse::<i32>()
                    .map_err(|_| bad(format!("bad baseline in `{gain_field}`")))?,
            );
        }
        if let Some(u) = unit_part {
            units = u.to_string();
        }
    }

    let adc_resolution = int_field(3, "ADC resolution")?.unwrap_or(12);
    let adc_zero = int_field(4, "ADC zero")?.unwrap_or(0);
    let initial_value = int_field(5, "initial value")?.unwrap_or(adc_zero);
    let checksum = int_field(6, "checksum")?;
    let block_size = int_field(7, "block size")?.unwrap_or(0);
    let label = if fields.len() > 8 {
        fields[8..].join(" ")
    } else {
        String::new()
    };

    Ok(SignalSpec {
        file_name: fields[0].to_string(),
        storage_format,
        adc_gain,
        baseline: baseline.unwrap_or(adc_zero),
        units,
        adc_resolution: adc_resolution.max(0) as u32,
        adc_zero,
        initial_value,
        checksum,
        block_size: block_size.max(0) as u32,
        label,
    })
}

fn sign_extend_12(v: u16) -> i16 {
    ((v << 4) as i16) >> 4
}

/// Decode interleaved format-212 samples into one sequence per signal.
pub fn decode_format212(bytes: &[u8], n_samples: usize, n_signals: usize) -> Result<Vec<Vec<i16>>> {
    if n_signals == 0 {
        return Err(Error::InvalidInput("n_signals must be at least 1".into()));
    }
    let total = n_samples * n_signals;
    let needed = (total * 3).div_ceil(2);
    if bytes.len() < needed {
        // Offset of the first byte that is missing.
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed,
        });
    }

    let mut out = vec![Vec::with_capacity(n_samples); n_signals];
    for k in 0..total {
        let base = (k / 2) * 3;
        let value = if k % 2 == 0 {
            u16::from(bytes[base]) | (u16::from(bytes[base + 1] & 0x0F) << 8)
        } else {
            u16::from(bytes[base + 2]) | (u16::from(bytes[base + 1] & 0xF0) << 4)
        };
        out[k % n_signals].push(sign_extend_12(value));
    }
    Ok(out)
}

/// Pack per-signal raw samples into interleaved format-212 bytes.
pub fn encode_format212(raw: &[Vec<i32>]) -> Result<Vec<u8>> {
    let n_signals = raw.len();
    if n_signals == 0 {
        return Ok(Vec::new());
    }
    let n_samples = raw[0].len();
    if let Some(bad) = raw.iter().position(|s| s.len() != n_samples) {
        return Err(Error::Shape(format!(
            "signal {bad} has {} samples, expected {n_samples}",
            raw[bad].len()
        )));
    }
    let total = n_samples * n_signals;
    let mut flat = Vec::with_capacity(total);
    for i in 0..n_samples {
        for (s, sig) in raw.iter().enumerate() {
            let v = sig[i];
            if !(-2048..=2047).contains(&v) {
                return Err(Error::SampleRange {
                    signal: s,
                    index: i,
                    value: v,
                });
            }
            flat.push((v as u16) & 0x0FFF);
        }
    }

    let mut bytes = Vec::with_capacity((total * 3).div_ceil(2));
    for pair in flat.chunks(2) {
        let a = pair[0];
        let b = pair.get(1).copied().unwrap_or(0);
        bytes.push((a & 0xFF) as u8);
        bytes.push((((a >> 8) & 0x0F) | ((b >> 4) & 0xF0)) as u8);
        if pair.len() == 2 {
            bytes.push((b & 0xFF) as u8);
        }
    }
    Ok(bytes)
}

/// WFDB annotation codes counted as heartbeats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeatCodeSet(BTreeSet<u8>);

impl Default for BeatCodeSet {
    fn default() -> Self {
        BeatCodeSet((1..=13).chain([25, 34, 38]).collect())
    }
}

impl BeatCodeSet {
    pub fn new(codes: impl IntoIterator<Item = u8>) -> Self {
        BeatCodeSet(codes.into_iter().collect())
    }

    pub fn contains(&self, code: u8) -> bool {
        self.0.contains(&code)
    }
}

/// One entry of an annotation stream, with the modifier fields that apply to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub sample: u64,
    pub code: u8,
    pub subtype: i16,
    pub chan: u16,
    pub num: i16,
    pub aux: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeatAnnotations {
    /// Strictly ascending sample indices.
    pub beat_samples: Vec<usize>,
    pub beat_codes: Vec<u8>,
}

impl BeatAnnotations {
    pub fn len(&self) -> usize {
        self.beat_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beat_samples.is_empty()
    }

    /// Keep beats with index below `limit`.
    pub fn truncate_to(&mut self, limit: usize) {
        let keep = self.beat_samples.partition_point(|&s| s < limit);
        self.beat_samples.truncate(keep);
        self.beat_codes.truncate(keep);
    }

    /// Rescale indices to a new sampling rate, rounding to the nearest sample.
    pub fn rescaled(&self, fs_from: f64, fs_to: f64) -> BeatAnnotations {
        let ratio = fs_to / fs_from;
        let mut out = BeatAnnotations::default();
        for (&s, &c) in self.beat_samples.iter().zip(&self.beat_codes) {
            let idx = (s as f64 * ratio).round() as usize;
            if out.beat_samples.last().is_none_or(|&last| idx > last) {
                out.beat_samples.push(idx);
                out.beat_codes.push(c);
            }
        }
        out
    }
}

const CODE_SKIP: u8 = 59;
const CODE_NUM: u8 = 60;
const CODE_SUB: u8 = 61;
const CODE_CHN: u8 = 62;
const CODE_AUX: u8 = 63;
const ACMAX: u8 = 49;

/// Decode every annotation of an MIT-format stream.
///
/// Modifier words (NUM, SUB, CHN, AUX) follow the annotation they modify.
/// `num` and `chan` carry over to later annotations; `subtype` and `aux` do not.
pub fn parse_annotation_stream(bytes: &[u8]) -> Result<Vec<Annotation>> {
    let mut anns: Vec<Annotation> = Vec::new();
    let mut pos = 0usize;
    let mut time: i64 = 0;
    let (mut num, mut chan) = (0i16, 0u16);

    let word_at = |p: usize| -> Option<u16> {
        Some(u16::from_le_bytes([*bytes.get(p)?, *bytes.get(p + 1)?]))
    };

    loop {
        let word = word_at(pos).ok_or(Error::Annotation {
            offset: pos,
            msg: "stream ended before the end-of-file marker".into(),
        })?;
        let code = (word >> 10) as u8;
        let field = word & 0x03FF;
        match code {
            0 if field == 0 => break,
            CODE_SKIP => {
                let hi = word_at(pos + 2);
                let lo = word_at(pos + 4);
                let (Some(hi), Some(lo)) = (hi, lo) else {
                    return Err(Error::Annotation {
                        offset: pos,
                        msg: "SKIP interval runs past end of stream".into(),
                    });
                };
                let skip = ((u32::from(hi) << 16) | u32::from(lo)) as i32;
                time += i64::from(skip);
                pos += 6;
            }
            CODE_NUM | CODE_SUB | CODE_CHN | CODE_AUX => {
                let Some(last) = anns.last_mut() else {
                    return Err(Error::Annotation {
                        offset: pos,
                        msg: format!("modifier code {code} before any annotation"),
                    });
                };
                pos += 2;
                match code {
                    CODE_NUM => {
                        num = field as i16;
                        last.num = num;
                    }
                    CODE_SUB => last.subtype = field as i16,
                    CODE_CHN => {
                        chan = field;
                        last.chan = chan;
                    }
                    _ => {
                        let len = usize::from(field);
                        let end = pos + len;
                        if end > bytes.len() {
                            return Err(Error::Annotation {
                                offset: pos,
                                msg: format!("AUX payload of {len} bytes overruns stream"),
                            });
                        }
                        last.aux = bytes[pos..end].to_vec();
                        pos += len + (len & 1);
                    }
                }
            }
            _ if code <= ACMAX => {
                time += i64::from(field);
                if time < 0 {
                    return Err(Error::Annotation {
                        offset: pos,
                        msg: "annotation time became negative".into(),
                    });
                }
                anns.push(Annotation {
                    sample: time as u64,
                    code,
                    subtype: 0,
                    chan,
                    num,
                    aux: Vec::new(),
                });
                pos += 2;
            }
            _ => {
                return Err(Error::Annotation {
                    offset: pos,
                    msg: format!("reserved annotation code {code}"),
                })
            }
        }
    }
    Ok(anns)
}

/// Decode an MIT annotation stream, keeping only heartbeat annotations.
pub fn parse_mit_annotations(bytes: &[u8], beat_codes: &BeatCodeSet) -> Result<BeatAnnotations> {
    let mut out = BeatAnnotations::default();
    for ann in parse_annotation_stream(bytes)? {
        if !beat_codes.contains(ann.code) {
            continue;
        }
        let idx = ann.sample as usize;
        if out.beat_samples.last().is_some_and(|&last| idx <= last) {
            continue;
        }
        out.beat_samples.push(idx);
        out.beat_codes.push(ann.code);
    }
    Ok(out)
}

/// How to choose the lead used downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelSelect {
    Index(usize),
    Label(String),
}

impl Default for ChannelSelect {
    fn default() -> Self {
        ChannelSelect::Index(0)
    }
}

#[derive(Debug, Clone)]
pub struct ReadOptions {
    pub channel: ChannelSelect,
    /// Truncate to this many leading samples (`None` keeps everything).
    pub max_samples: Option<usize>,
    /// Annotator extension; `None` reads signals only.
    pub annotator: Option<String>,
    pub beat_codes: BeatCodeSet,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            channel: ChannelSelect::default(),
            max_samples: Some(DEFAULT_MAX_SAMPLES),
            annotator: Some("atr".into()),
            beat_codes: BeatCodeSet::default(),
        }
    }
}

/// A single-segment record in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgRecord {
    /// Header with `n_samples` updated to the retained length.
    pub header: RecordHeader,
    /// Samples in physical units (mV), one sequence per header signal.
    pub channels: Vec<Vec<f64>>,
    /// Index of the selected lead in `channels`.
    pub selected: usize,
    pub annotations: BeatAnnotations,
    /// Non-fatal problems noticed while reading (checksum mismatches, ...).
    pub warnings: Vec<String>,
}

impl EcgRecord {
    pub fn name(&self) -> &str {
        &self.header.record_name
    }

    pub fn fs(&self) -> f64 {
        self.header.fs
    }

    pub fn signal(&self) -> &[f64] {
        &self.channels[self.selected]
    }
}

fn read_file(path: &Path, what: &'static str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(what, path, e))
}

/// Convert a raw ADC value to physical units.
pub fn raw_to_physical(raw: i32, spec: &SignalSpec) -> f64 {
    f64::from(raw - spec.baseline) / spec.adc_gain
}

/// Inverse of [`raw_to_physical`], rounding to the nearest ADC unit.
pub fn physical_to_raw(value: f64, spec: &SignalSpec) -> i32 {
    (value * spec.adc_gain + f64::from(spec.baseline)).round() as i32
}

/// Read `<dir>/<name>.hea`, its format-212 signal files and (optionally) annotations.
pub fn read_record(dir: &Path, name: &str, opts: &ReadOptions) -> Result<EcgRecord> {
    let hea_path = dir.join(format!("{name}.hea"));
    let text = fs::read_to_string(&hea_path).map_err(|e| Error::io("reading header", &hea_path, e))?;
    let mut header = parse_header(&text)?;
    let mut warnings = Vec::new();

    // Signals sharing a file are interleaved within it, in header order.
    let mut raw: Vec<Vec<i16>> = vec![Vec::new(); header.n_signals];
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, sig) in header.signals.iter().enumerate() {
        match groups.iter_mut().find(|(f, _)| *f == sig.file_name) {
            Some((_, members)) => members.push(i),
            None => groups.push((sig.file_name.clone(), vec![i])),
        }
    }
    for (file, members) in &groups {
        let bytes = read_file(&dir.join(file), "reading signal file")?;
        let decoded = decode_format212(&bytes, header.n_samples, members.len())?;
        for (&sig, samples) in members.iter().zip(decoded) {
            raw[sig] = samples;
        }
    }

    for (i, (sig, samples)) in header.signals.iter().zip(&raw).enumerate() {
        if let Some(expected) = sig.checksum {
            let sum = samples.iter().fold(0u16, |acc, &v| acc.wrapping_add(v as u16));
            if sum != expected as u16 {
                let msg = format!(
                    "record {name} signal {i}: checksum {} does not match header {expected}",
                    sum as i16
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }

    let keep = opts
        .max_samples
        .map_or(header.n_samples, |m| m.min(header.n_samples));
    let channels: Vec<Vec<f64>> = header
        .signals
        .iter()
        .zip(&raw)
        .map(|(spec, samples)| {
            samples[..keep]
                .iter()
                .map(|&r| raw_to_physical(i32::from(r), spec))
                .collect()
        })
        .collect();
    header.n_samples = keep;

    let selected = match &opts.channel {
        ChannelSelect::Index(i) if *i < header.n_signals => *i,
        ChannelSelect::Index(i) => {
            return Err(Error::InvalidInput(format!(
                "record {name} has {} signals, channel {i} requested",
                header.n_signals
            )))
        }
        ChannelSelect::Label(l) => header.channel_index(l).ok_or_else(|| {
            Error::InvalidInput(format!("record {name} has no channel labelled `{l}`"))
        })?,
    };

    let annotations = match &opts.annotator {
        Some(ext) => {
            let bytes = read_file(&dir.join(format!("{name}.{ext}")), "reading annotations")?;
            let mut ann = parse_mit_annotations(&bytes, &opts.beat_codes)?;
            ann.truncate_to(keep);
            ann
        }
        None => BeatAnnotations::default(),
    };

    Ok(EcgRecord {
        header,
        channels,
        selected,
        annotations,
        warnings,
    })
}

/// Read the CSV fallback: a `sample_index,mV` signal file plus a text file with
/// one beat sample index per line.
pub fn read_csv_record(
    name: &str,
    signal_csv: &Path,
    beats_txt: Option<&Path>,
    fs: f64,
    max_samples: Option<usize>,
) -> Result<EcgRecord> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::UnsupportedRate(fs));
    }
    let text = fs::read_to_string(signal_csv).map_err(|e| Error::io("reading CSV", signal_csv, e))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (Some(idx), Some(val)) = (cols.next(), cols.next()) else {
            return Err(Error::HeaderParse {
                line: i + 1,
                msg: "expected `sample_index,mV`".into(),
            });
        };
        let Ok(value) = val.parse::<f64>() else {
            // Tolerate a single header row.
            if samples.is_empty() && idx.parse::<f64>().is_err() {
                continue;
            }
            return Err(Error::HeaderParse {
                line: i + 1,
                msg: format!("bad sample value `{val}`"),
            });
        };
        if !value.is_finite() {
            return Err(Error::HeaderParse {
                line: i + 1,
                msg: "non-finite sample".into(),
            });
        }
        samples.push(value);
    }
    let keep = max_samples.map_or(samples.len(), |m| m.min(samples.len()));
    samples.truncate(keep);

    let mut annotations = BeatAnnotations::default();
    if let Some(path) = beats_txt {
        annotations = read_beat_indices(path)?;
        annotations.truncate_to(keep);
    }

    let header = RecordHeader {
        record_name: name.to_string(),
        n_signals: 1,
        fs,
        n_samples: keep,
        signals: vec![SignalSpec {
            file_name: signal_csv.display().to_string(),
            storage_format: 0,
            adc_gain: 1.0,
            baseline: 0,
            units: "mV".into(),
            adc_resolution: 0,
            adc_zero: 0,
            initial_value: 0,
            checksum: None,
            block_size: 0,
            label: "csv".into(),
        }],
    };
    Ok(EcgRecord {
        header,
        channels: vec![samples],
        selected: 0,
        annotations,
        warnings: Vec::new(),
    })
}

/// Read a one-column beat index file. Beats get code 1 (normal).
pub fn read_beat_indices(path: &Path) -> Result<BeatAnnotations> {
    let text = fs::read_to_string(path).map_err(|e| Error::io("reading beat indices", path, e))?;
    let mut ann = BeatAnnotations::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let idx: usize = line.parse().map_err(|_| Error::HeaderParse {
            line: i + 1,
            msg: format!("bad beat index `{line}`"),
        })?;
        if ann.beat_samples.last().is_some_and(|&last| idx <= last) {
            return Err(Error::HeaderParse {
                line: i + 1,
                msg: "beat indices must be strictly ascending".into(),
            });
        }
        ann.beat_samples.push(idx);
        ann.beat_codes.push(1);
    }
    Ok(ann)
}

/// Write beat indices one per line (the format [`read_beat_indices`] reads).
pub fn write_beat_indices(path: &Path, ann: &BeatAnnotations) -> Result<()> {
    let mut text = String::with_capacity(ann.len() * 8);
    for s in &ann.beat_samples {
        text.push_str(&s.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io("writing beat indices", path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER_100: &str = "100 2 360 650000\n\
        100.dat 212 200 11 1024 995 -22131 0 MLII\n\
        100.dat 212 200 11 1024 1011 20052 0 V5\n\
        # 69 M 1085 1629 x1\n";

    #[test]
    fn parses_mitdb_style_header() {
        let h = parse_header(HEADER_100).unwrap();
        assert_eq!(h.record_name, "100");
        assert_eq!(h.n_signals, 2);
        assert_eq!(h.fs, 360.0);
        assert_eq!(h.n_samples, 650_000);
        let s = &h.signals[0];
        assert_eq!(s.adc_gain, 200.0);
        assert_eq!(s.adc_zero, 1024);
        assert_eq!(s.baseline, 1024);
        assert_eq!(s.initial_value, 995);
        assert_eq!(s.checksum, Some(-22131));
        assert_eq!(s.label, "MLII");
        assert_eq!(h.channel_index("V5"), Some(1));
    }

    #[test]
    fn parses_gain_with_baseline_and_units() {
        let h = parse_header("r 1 360 10\nr.dat 212 200.0(1000)/mV 12 0 3 7 0 MLII\n").unwrap();
        assert_eq!(h.signals[0].baseline, 1000);
        assert_eq!(h.signals[0].adc_zero, 0);
        assert_eq!(h.signals[0].units, "mV");
    }

    #[test]
    fn empty_record_is_allowed() {
        let h = parse_header("x 1 360 0\nx.dat 212 200 11 1024 0 0 0 MLII\n").unwrap();
        assert_eq!(h.n_samples, 0);
    }

    #[test]
    fn other_formats_are_rejected() {
        let err = parse_header("x 1 360 10\nx.dat 16 200 16 0 0 0 0 I\n").unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(16)), "{err}");
    }

    #[test]
    fn malformed_lines_name_their_line_number() {
        let err = parse_header("# comment\nx 1 abc 10\nx.dat 212\n").unwrap_err();
        assert!(matches!(err, Error::HeaderParse { line: 2, .. }), "{err}");
        let err = parse_header("x 2 360 10\nx.dat 212 200\n").unwrap_err();
        assert!(matches!(err, Error::HeaderParse { .. }), "{err}");
        let err = parse_header("x 1 360 10\nx.dat 212 -5\n").unwrap_err();
        assert!(matches!(err, Error::HeaderParse { line: 2, .. }), "{err}");
    }

    #[test]
    fn decode_reference_bytes() {
        assert_eq!(decode_format212(&[0, 0, 0], 2, 1).unwrap(), vec![vec![0, 0]]);
        assert_eq!(
            decode_format212(&[0x01, 0x20, 0x02], 2, 1).unwrap(),
            vec![vec![1, 514]]
        );
        assert_eq!(
            decode_format212(&[0xFF, 0x0F, 0x00], 2, 1).unwrap(),
            vec![vec![-1, 0]]
        );
    }

    #[test]
    fn decode_interleaves_signals() {
        let bytes = encode_format212(&[vec![1, 3, -5], vec![2, -4, 6]]).unwrap();
        let out = decode_format212(&bytes, 3, 2).unwrap();
        assert_eq!(out, vec![vec![1, 3, -5], vec![2, -4, 6]]);
    }

    #[test]
    fn truncated_stream_reports_offset() {
        let err = decode_format212(&[0, 0, 0, 0], 4, 1).unwrap_err();
        assert!(
            matches!(err, Error::Truncated { offset: 4, needed: 6 }),
            "{err}"
        );
    }

    #[test]
    fn odd_sample_count_uses_two_bytes() {
        let bytes = encode_format212(&[vec![-7]]).unwrap();
        assert_eq!(bytes.len(), 2);
        assert_eq!(decode_format212(&bytes, 1, 1).unwrap(), vec![vec![-7]]);
    }

    #[test]
    fn encode_reference_values() {
        assert_eq!(encode_format212(&[vec![0, 0]]).unwrap(), vec![0, 0, 0]);
        assert_eq!(encode_format212(&[vec![-1, 0]]).unwrap(), vec![0xFF, 0x0F, 0x00]);
        let err = encode_format212(&[vec![0, 2048]]).unwrap_err();
        assert!(
            matches!(err, Error::SampleRange { index: 1, value: 2048, .. }),
            "{err}"
        );
    }

    #[test]
    fn annotation_single_beat() {
        let ann = parse_mit_annotations(&[0x64, 0x04, 0, 0], &BeatCodeSet::default()).unwrap();
        assert_eq!(ann.beat_samples, vec![100]);
        assert_eq!(ann.beat_codes, vec![1]);
    }

    #[test]
    fn annotation_eof_only() {
        let ann = parse_mit_annotations(&[0, 0], &BeatCodeSet::default()).unwrap();
        assert!(ann.is_empty());
    }

    #[test]
    fn annotation_skip_then_beat() {
        // SKIP word, interval 100000 as high word then low word, beat code 1 +5, EOF.
        let bytes = [0x00, 0xEC, 0x01, 0x00, 0xA0, 0x86, 0x05, 0x04, 0x00, 0x00];
        let ann = parse_mit_annotations(&bytes, &BeatCodeSet::default()).unwrap();
        assert_eq!(ann.beat_samples, vec![100_005]);
    }

    #[test]
    fn annotation_modifiers_and_aux() {
        // '+' (28) at 18 with aux "(N" then NUM 1, then a beat at +10 with SUB 2.
        let mut bytes = vec![];
        bytes.extend_from_slice(&((28u16 << 10) | 18).to_le_bytes());
        bytes.extend_from_slice(&((63u16 << 10) | 3).to_le_bytes());
        bytes.extend_from_slice(b"(N\0\0");
        bytes.extend_from_slice(&(60u16 << 10 | 1).to_le_bytes());
        bytes.extend_from_slice(&((1u16 << 10) | 10).to_le_bytes());
        bytes.extend_from_slice(&((61u16 << 10) | 2).to_le_bytes());
        bytes.extend_from_slice(&[0, 0]);
        let anns = parse_annotation_stream(&bytes).unwrap();
        assert_eq!(anns.len(), 2);
        assert_eq!(anns[0].aux, b"(N\0");
        assert_eq!(anns[0].num, 1);
        assert_eq!(anns[1].sample, 28);
        assert_eq!(anns[1].num, 1, "NUM persists");
        assert_eq!(anns[1].subtype, 2);
        let beats = parse_mit_annotations(&bytes, &BeatCodeSet::default()).unwrap();
        assert_eq!(beats.beat_samples, vec![28]);
    }

    #[test]
    fn annotation_errors() {
        let err = parse_mit_annotations(&[0x64, 0x04], &BeatCodeSet::default()).unwrap_err();
        assert!(matches!(err, Error::Annotation { offset: 2, .. }), "{err}");
        let mut bytes = vec![];
        bytes.extend_from_slice(&((1u16 << 10) | 5).to_le_bytes());
        bytes.extend_from_slice(&((63u16 << 10) | 40).to_le_bytes());
        bytes.extend_from_slice(b"abc");
        let err = parse_mit_annotations(&bytes, &BeatCodeSet::default()).unwrap_err();
        assert!(err.to_string().contains("overruns"), "{err}");
    }

    #[test]
    fn physical_conversion() {
        let spec = parse_header(HEADER_100).unwrap().signals[0].clone();
        assert_eq!(raw_to_physical(1024, &spec), 0.0);
        assert_eq!(raw_to_physical(1224, &spec), 1.0);
        assert_eq!(physical_to_raw(1.0, &spec), 1224);
    }

    #[test]
    fn rescaled_annotations_stay_ascending() {
        let ann = BeatAnnotations {
            beat_samples: vec![0, 250, 251, 500],
            beat_codes: vec![1; 4],
        };
        let r = ann.rescaled(250.0, 360.0);
        assert_eq!(r.beat_samples, vec![0, 360, 361, 720]);
    }
}
