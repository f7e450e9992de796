//! R-peak picking on denoised output, inter-beat intervals, and alignment of
//! detected beats with annotated ground truth.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::BeatAnnotations;

/// Minimum peak spacing in seconds (108 samples at 360 Hz, i.e. 200 bpm).
pub const MIN_PEAK_SPACING_S: f64 = 0.3;

/// Default beat-matching tolerance in seconds (54 samples at 360 Hz).
pub const MATCH_TOLERANCE_S: f64 = 0.150;

pub fn min_distance_for(fs: f64) -> usize {
    (MIN_PEAK_SPACING_S * fs).round() as usize
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakList {
    pub indices: Vec<usize>,
    pub fs_hz: u32,
}

impl PeakList {
    pub fn fs(&self) -> f64 {
        f64::from(self.fs_hz)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Which samples are eligible before the greedy spacing pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CandidateRule {
    /// Local maxima that are also the maximum of their `±min_distance`
    /// neighbourhood.
    #[default]
    NeighbourhoodMaxima,
    /// Every strict local maximum (plateaus count once, at their first sample).
    AllLocalMaxima,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakDetector {
    pub min_distance: usize,
    pub rule: CandidateRule,
}

impl PeakDetector {
    pub fn for_rate(fs: f64) -> PeakDetector {
        PeakDetector {
            min_distance: min_distance_for(fs),
            rule: CandidateRule::default(),
        }
    }

    pub fn with_rule(mut self, rule: CandidateRule) -> PeakDetector {
        self.rule = rule;
        self
    }

    /// Greedy distance-constrained peak picking.
    ///
    /// Candidates are visited by amplitude, highest first (ties: earlier
    /// sample first); a candidate is kept iff it lies at least `min_distance`
    /// samples from every peak kept so far. The result is ascending.
    pub fn detect(&self, samples: &[f64], fs: f64) -> Result<PeakList> {
        let d = self.min_distance;
        if samples.len() <= d {
            return Err(Error::InvalidInput(format!(
                "need more than {d} samples for peak detection, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("signal contains non-finite samples".into()));
        }
        let mut candidates = match self.rule {
            CandidateRule::AllLocalMaxima => local_maxima(samples),
            CandidateRule::NeighbourhoodMaxima => {
                let dominant = neighbourhood_maxima(samples, d);
                local_maxima(samples).into_iter().filter(|&i| dominant[i]).collect()
            }
        };
        candidates.sort_by(|&a, &b| samples[b].total_cmp(&samples[a]).then(a.cmp(&b)));

        // `taken` holds accepted indices in ascending order.
        let mut taken: Vec<usize> = Vec::new();
        for c in candidates {
            let pos = taken.partition_point(|&p| p < c);
            let left_ok = pos == 0 || c - taken[pos - 1] >= d;
            let right_ok = pos == taken.len() || taken[pos] - c >= d;
            if left_ok && right_ok {
                taken.insert(pos, c);
            }
        }
        Ok(PeakList {
            indices: taken,
            fs_hz: fs.round() as u32,
        })
    }
}

/// Detect R-peaks with the default detector for `fs`.
pub fn detect_peaks(samples: &[f64], fs: f64) -> Result<PeakList> {
    PeakDetector::for_rate(fs).detect(samples, fs)
}

fn local_maxima(x: &[f64]) -> Vec<usize> {
    let n = x.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            // Walk across a plateau.
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Marks `i` where `x[i] >= x[j]` for all `|i - j| <= radius`, computed with a
/// monotone deque sliding-window maximum.
fn neighbourhood_maxima(x: &[f64], radius: usize) -> Vec<bool> {
    let n = x.len();
    let mut out = vec![false; n];
    let mut deque: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut next = 0usize;
    for i in 0..n {
        let hi = (i + radius).min(n - 1);
        while next <= hi {
            while deque.back().is_some_and(|&b| x[b] <= x[next]) {
                deque.pop_back();
            }
            deque.push_back(next);
            next += 1;
        }
        let lo = i.saturating_sub(radius);
        while deque.front().is_some_and(|&f| f < lo) {
            deque.pop_front();
        }
        out[i] = x[i] >= x[*deque.front().unwrap()];
    }
    out
}

/// Inter-beat intervals in ms with the time of each interval's closing beat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbiSeries {
    pub intervals_ms: Vec<f64>,
    pub anchor_times_ms: Vec<f64>,
}

impl IbiSeries {
    pub fn len(&self) -> usize {
        self.intervals_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals_ms.is_empty()
    }
}

pub fn ibi_from_peaks(peaks: &PeakList) -> Result<IbiSeries> {
    if peaks.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 peaks for an interval, got {}",
            peaks.len()
        )));
    }
    let ms = 1000.0 / peaks.fs();
    let intervals_ms = peaks
        .indices
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 * ms)
        .collect();
    let anchor_times_ms = peaks.indices[1..].iter().map(|&i| i as f64 * ms).collect();
    Ok(IbiSeries {
        intervals_ms,
        anchor_times_ms,
    })
}

/// One-to-one pairing of detected and annotated beats.
///
/// `pairs` hold positions into the estimated and true lists, ordered by the
/// true beat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeatMatch {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_estimated: usize,
    pub unmatched_true: usize,
    pub tolerance: usize,
}

impl BeatMatch {
    pub fn sensitivity(&self) -> f64 {
        let total = self.pairs.len() + self.unmatched_true;
        if total == 0 {
            return 1.0;
        }
        self.pairs.len() as f64 / total as f64
    }

    pub fn precision(&self) -> f64 {
        let total = self.pairs.len() + self.unmatched_estimated;
        if total == 0 {
            return 1.0;
        }
        self.pairs.len() as f64 / total as f64
    }
}

pub fn tolerance_samples(fs: f64, tolerance_s: f64) -> usize {
    (tolerance_s * fs).round() as usize
}

/// Greedy nearest-neighbour matching within `±tolerance` samples.
///
/// Candidate pairs are accepted closest first; ties go to the earlier true
/// beat, then the earlier estimate. Each beat is used at most once.
pub fn match_beats(estimated: &PeakList, truth: &BeatAnnotations, tolerance: usize) -> BeatMatch {
    let est = &estimated.indices;
    let tru = &truth.beat_samples;
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    let mut start = 0usize;
    for (ti, &t) in tru.iter().enumerate() {
        while start < est.len() && est[start] + tolerance < t {
            start += 1;
        }
        for (ei, &e) in est.iter().enumerate().skip(start) {
            if e > t + tolerance {
                break;
            }
            candidates.push((e.abs_diff(t), ti, ei));
        }
    }
    candidates.sort_unstable();

    let mut est_used = vec![false; est.len()];
    let mut true_used = vec![false; tru.len()];
    let mut pairs = Vec::new();
    for (_, ti, ei) in candidates {
        if !est_used[ei] && !true_used[ti] {
            est_used[ei] = true;
            true_used[ti] = true;
            pairs.push((ei, ti));
        }
    }
    pairs.sort_unstable_by_key(|&(_, ti)| ti);
    BeatMatch {
        unmatched_estimated: est.len() - pairs.len(),
        unmatched_true: tru.len() - pairs.len(),
        pairs,
        tolerance,
    }
}

/// Estimated and true IBIs over intervals bounded by matched beats on both
/// sides, with no missed or spurious beat in between.
pub fn paired_ibis(
    matched: &BeatMatch,
    estimated: &PeakList,
    truth: &BeatAnnotations,
    fs: f64,
) -> Result<(IbiSeries, IbiSeries)> {
    let ms = 1000.0 / fs;
    let mut p = IbiSeries {
        intervals_ms: Vec::new(),
        anchor_times_ms: Vec::new(),
    };
    let mut o = p.clone();
    for w in matched.pairs.windows(2) {
        let ((e0, t0), (e1, t1)) = (w[0], w[1]);
        if e1 != e0 + 1 || t1 != t0 + 1 {
            continue;
        }
        let (es, ts) = (&estimated.indices, &truth.beat_samples);
        p.intervals_ms.push((es[e1] - es[e0]) as f64 * ms);
        p.anchor_times_ms.push(es[e1] as f64 * ms);
        o.intervals_ms.push((ts[t1] - ts[t0]) as f64 * ms);
        o.anchor_times_ms.push(ts[t1] as f64 * ms);
    }
    if p.len() < 2 {
        return Err(Error::Degenerate(format!(
            "only {} paired intervals; need at least 2",
            p.len()
        )));
    }
    Ok((p, o))
}

pub fn write_peaks_csv(path: &Path, peaks: &PeakList) -> Result<()> {
    let mut out = String::from("sample_index\n");
    for i in &peaks.indices {
        out.push_str(&format!("{i}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io("writing peaks", path, e))
}

pub fn write_ibi_csv(path: &Path, ibis: &IbiSeries) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io("writing IBIs", path, e))?;
    let mut out = String::from("anchor_ms,ibi_ms\n");
    for (a, v) in ibis.anchor_times_ms.iter().zip(&ibis.intervals_ms) {
        out.push_str(&format!("{a:.4},{v:.4}\n"));
    }
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io("writing IBIs", path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn truth(samples: &[usize]) -> BeatAnnotations {
        BeatAnnotations {
            beat_samples: samples.to_vec(),
            beat_codes: vec![1; samples.len()],
        }
    }

    fn peaks(indices: &[usize]) -> PeakList {
        PeakList {
            indices: indices.to_vec(),
            fs_hz: 360,
        }
    }

    #[test]
    fn impulse_train() {
        let mut x = vec![0.0; 3600];
        for k in 0..10 {
            x[50 + 360 * k] = 1.0;
        }
        let p = detect_peaks(&x, 360.0).unwrap();
        assert_eq!(p.indices, (0..10).map(|k| 50 + 360 * k).collect::<Vec<_>>());
        let p = PeakDetector::for_rate(360.0)
            .with_rule(CandidateRule::AllLocalMaxima)
            .detect(&x, 360.0)
            .unwrap();
        assert_eq!(p.indices.len(), 10);
    }

    #[test]
    fn close_maxima_keep_the_larger() {
        let mut x = vec![0.0; 400];
        x[100] = 0.8;
        x[150] = 1.0;
        for rule in [CandidateRule::AllLocalMaxima, CandidateRule::NeighbourhoodMaxima] {
            let p = PeakDetector::for_rate(360.0).with_rule(rule).detect(&x, 360.0).unwrap();
            assert_eq!(p.indices, vec![150]);
        }
    }

    #[test]
    fn baseline_ripple_between_beats() {
        // Beats every 320 samples with a T wave and a small ripple in the
        // diastolic gap: under the literal rule every ripple crest far enough
        // from both beats is accepted; the neighbourhood rule rejects them.
        let x: Vec<f64> = (0..2990)
            .map(|i| {
                let t = (i % 320) as f64;
                let beat = if t == 10.0 { 1.0 } else { 0.0 };
                let twave = 0.3 * (-((t - 90.0) / 20.0).powi(2)).exp();
                beat + twave + 0.01 * (i as f64 * 0.9).sin()
            })
            .collect();
        let strict = detect_peaks(&x, 360.0).unwrap();
        assert_eq!(strict.indices, (0..10).map(|k| 10 + 320 * k).collect::<Vec<_>>());
        let literal = PeakDetector::for_rate(360.0)
            .with_rule(CandidateRule::AllLocalMaxima)
            .detect(&x, 360.0)
            .unwrap();
        assert!(literal.indices.len() > 10);
    }

    #[test]
    fn too_short_is_an_error() {
        assert!(detect_peaks(&[0.0; 108], 360.0).is_err());
        assert!(detect_peaks(&[], 360.0).is_err());
        assert_eq!(min_distance_for(360.0), 108);
        assert_eq!(min_distance_for(250.0), 75);
    }

    #[test]
    fn ibi_examples() {
        let s = ibi_from_peaks(&peaks(&[0, 360, 720])).unwrap();
        assert_eq!(s.intervals_ms, vec![1000.0, 1000.0]);
        assert_eq!(s.anchor_times_ms, vec![1000.0, 2000.0]);
        assert_eq!(ibi_from_peaks(&peaks(&[0, 180])).unwrap().intervals_ms, vec![500.0]);
        let s = ibi_from_peaks(&peaks(&[0, 361])).unwrap();
        assert!((s.intervals_ms[0] - 1002.777_777_777_777_8).abs() < 1e-9);
        assert!(ibi_from_peaks(&peaks(&[5])).is_err());
    }

    #[test]
    fn match_examples() {
        let t = truth(&[100, 400, 700, 1000]);
        let m = match_beats(&peaks(&[100, 400, 700, 1000]), &t, 54);
        assert_eq!(m.pairs.len(), 4);
        assert_eq!((m.unmatched_estimated, m.unmatched_true), (0, 0));

        let est = peaks(&[110, 410, 710, 1010]);
        let m = match_beats(&est, &t, 54);
        assert_eq!(m.pairs.len(), 4);
        for &(e, ti) in &m.pairs {
            assert_eq!(est.indices[e] - t.beat_samples[ti], 10);
        }

        let m = match_beats(&peaks(&[100, 250, 400, 700, 1000]), &t, 54);
        assert_eq!((m.unmatched_estimated, m.unmatched_true), (1, 0));

        let m = match_beats(&peaks(&[]), &truth(&[]), 54);
        assert!(m.pairs.is_empty());
    }

    #[test]
    fn match_ties_go_to_earlier_true_beat() {
        let m = match_beats(&peaks(&[150]), &truth(&[100, 200]), 54);
        assert_eq!(m.pairs, vec![(0, 0)]);
        assert_eq!(m.unmatched_true, 1);
    }

    #[test]
    fn paired_examples() {
        let t = truth(&[100, 400, 700, 1000, 1300]);
        let est = peaks(&[100, 400, 700, 1000, 1300]);
        let m = match_beats(&est, &t, 54);
        let (p, o) = paired_ibis(&m, &est, &t, 360.0).unwrap();
        assert_eq!(p, o);

        // Missed beat at 700 removes both intervals touching it.
        let est = peaks(&[100, 400, 1000, 1300]);
        let m = match_beats(&est, &t, 54);
        let (p, o) = paired_ibis(&m, &est, &t, 360.0).unwrap();
        assert_eq!(p.len(), 2);
        let ms = 1000.0 / 360.0;
        assert_eq!(o.anchor_times_ms, vec![400.0 * ms, 1300.0 * ms]);

        // Spurious beat between 400 and 700 removes that interval only.
        let est = peaks(&[100, 400, 550, 700, 1000, 1300]);
        let m = match_beats(&est, &t, 54);
        let (p, o) = paired_ibis(&m, &est, &t, 360.0).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p, o);

        let est = peaks(&[100, 400]);
        let m = match_beats(&est, &t, 54);
        assert!(paired_ibis(&m, &est, &t, 360.0).is_err());
    }

    #[test]
    fn paired_jitter_bound() {
        let t: Vec<usize> = (1..40).map(|k| k * 300).collect();
        let est: Vec<usize> = t
            .iter()
            .enumerate()
            .map(|(i, &s)| if i % 2 == 0 { s + 3 } else { s - 3 })
            .collect();
        let (est, t) = (peaks(&est), truth(&t));
        let m = match_beats(&est, &t, 54);
        let (p, o) = paired_ibis(&m, &est, &t, 360.0).unwrap();
        for (a, b) in p.intervals_ms.iter().zip(&o.intervals_ms) {
            assert!((a - b).abs() <= 16.7);
        }
    }

    proptest! {
        #[test]
        fn min_distance_always_holds(x in prop::collection::vec(-1.0f64..1.0, 200..1500),
                                     literal in any::<bool>()) {
            let rule = if literal { CandidateRule::AllLocalMaxima } else { CandidateRule::NeighbourhoodMaxima };
            let p = PeakDetector::for_rate(360.0).with_rule(rule).detect(&x, 360.0).unwrap();
            prop_assert!(p.indices.windows(2).all(|w| w[1] - w[0] >= 108));
        }

        #[test]
        fn scaling_invariance(x in prop::collection::vec(-1.0f64..1.0, 200..1000), c in 0.01f64..100.0) {
            let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
            prop_assert_eq!(detect_peaks(&x, 360.0).unwrap(), detect_peaks(&scaled, 360.0).unwrap());
        }

        #[test]
        fn ibi_inverts_cumulative_sum(intervals in prop::collection::vec(1usize..600, 1..50), start in 0usize..1000) {
            let mut idx = vec![start];
            for d in &intervals {
                idx.push(idx.last().unwrap() + d);
            }
            let s = ibi_from_peaks(&peaks(&idx)).unwrap();
            for (ms, &d) in s.intervals_ms.iter().zip(&intervals) {
                prop_assert!((ms * 0.36 - d as f64).abs() < 1e-9);
            }
        }
    }
}
