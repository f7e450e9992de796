//! Noise-stress synthesis: a weighted blend of electrode-motion (EM), muscle
//! artifact (MA) and baseline-wander (BW) noise, scaled so that each noisy
//! variant hits a target SNR.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{read_record, ChannelSelect, ReadOptions};
use crate::sigproc::{mean_power, resample_to_360, TARGET_FS};

/// Target SNRs of the 13-rung ladder, 36 dB down to -36 dB in 6 dB steps.
pub const SNR_LADDER_DB: [i32; 13] = [36, 30, 24, 18, 12, 6, 0, -6, -12, -18, -24, -30, -36];

/// Largest tolerated gap between achieved and target SNR.
pub const SNR_TOLERANCE_DB: f64 = 0.05;

/// The three noise sources, each standardised to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    pub em: Vec<f64>,
    pub ma: Vec<f64>,
    pub bw: Vec<f64>,
    pub fs: f64,
}

impl NoiseBank {
    /// Build a bank from 360 Hz noise sequences, standardising each.
    pub fn new(em: &[f64], ma: &[f64], bw: &[f64]) -> Result<NoiseBank> {
        Ok(NoiseBank {
            em: standardize(em)?,
            ma: standardize(ma)?,
            bw: standardize(bw)?,
            fs: TARGET_FS,
        })
    }

    /// Load `em`, `ma` and `bw` WFDB records (first channel) from `dir`.
    pub fn from_wfdb_dir(dir: &Path) -> Result<NoiseBank> {
        let opts = ReadOptions {
            channel: ChannelSelect::Index(0),
            max_samples: None,
            annotator: None,
            ..ReadOptions::default()
        };
        let load = |name: &str| -> Result<Vec<f64>> {
            let rec = read_record(dir, name, &opts)?;
            resample_to_360(rec.signal(), rec.fs())
        };
        NoiseBank::new(&load("em")?, &load("ma")?, &load("bw")?)
    }

    fn min_len(&self) -> usize {
        self.em.len().min(self.ma.len()).min(self.bw.len())
    }
}

/// Scale to zero mean and unit (population) variance.
pub fn standardize(noise: &[f64]) -> Result<Vec<f64>> {
    let p = mean_power(noise)?;
    if !(p > 0.0) {
        return Err(Error::Degenerate("noise sequence is constant".into()));
    }
    let m = noise.iter().sum::<f64>() / noise.len() as f64;
    let sd = p.sqrt();
    Ok(noise.iter().map(|x| (x - m) / sd).collect())
}

/// Relative weights of the EM, MA and BW components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixWeights {
    pub em: f64,
    pub ma: f64,
    pub bw: f64,
}

impl Default for MixWeights {
    fn default() -> Self {
        MixWeights {
            em: 0.35,
            ma: 0.50,
            bw: 0.15,
        }
    }
}

impl MixWeights {
    /// Weights must be positive, ordered MA > EM > BW, and sum to one.
    pub fn validate(&self) -> Result<()> {
        let MixWeights { em, ma, bw } = *self;
        if !(bw > 0.0 && em > bw && ma > em) {
            return Err(Error::Config(format!(
                "mix weights must satisfy ma > em > bw > 0, got em={em} ma={ma} bw={bw}"
            )));
        }
        if ((em + ma + bw) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mix weights must sum to 1, got {}",
                em + ma + bw
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.em, self.ma, self.bw]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub target_snr_db: f64,
    pub weights: MixWeights,
    pub seed: u64,
    /// Start position inside the (circular) noise sequences.
    pub segment_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyVariant {
    pub samples: Vec<f64>,
    pub achieved_snr_db: f64,
    /// `(a1, a2, a3)`: the effective EM, MA and BW gains.
    pub gains: [f64; 3],
    pub spec: MixSpec,
    pub source_record: String,
}

/// `w_em*EM' + w_ma*MA' + w_bw*BW'` read circularly from `offset`.
///
/// Weights are not validated here so degenerate blends can be used in tests.
pub fn composite_noise(
    bank: &NoiseBank,
    weights: [f64; 3],
    length: usize,
    offset: usize,
) -> Result<Vec<f64>> {
    if bank.min_len() == 0 {
        return Err(Error::InvalidInput("noise bank is empty".into()));
    }
    let [w_em, w_ma, w_bw] = weights;
    let at = |src: &[f64], i: usize| src[(offset + i) % src.len()];
    Ok((0..length)
        .map(|i| w_em * at(&bank.em, i) + w_ma * at(&bank.ma, i) + w_bw * at(&bank.bw, i))
        .collect())
}

/// Gain `g` with `10 log10(p_signal / (g² p_noise)) == target_snr_db`.
pub fn gain_for_snr(p_signal: f64, p_noise: f64, target_snr_db: f64) -> Result<f64> {
    if !(p_signal > 0.0) || !(p_noise > 0.0) {
        return Err(Error::InvalidInput(format!(
            "powers must be positive (signal {p_signal}, noise {p_noise})"
        )));
    }
    Ok((p_signal * 10f64.powf(-target_snr_db / 10.0) / p_noise).sqrt())
}

/// `10 log10(P(clean) / P(noisy - clean))`, from the actual sequences.
pub fn measured_snr_db(clean: &[f64], noisy: &[f64]) -> Result<f64> {
    if clean.len() != noisy.len() {
        return Err(Error::Shape(format!(
            "clean has {} samples, noisy {}",
            clean.len(),
            noisy.len()
        )));
    }
    let diff: Vec<f64> = noisy.iter().zip(clean).map(|(n, c)| n - c).collect();
    Ok(10.0 * (mean_power(clean)? / mean_power(&diff)?).log10())
}

/// Add weighted noise to a 360 Hz clean signal at `spec.target_snr_db`.
pub fn mix_at_snr(clean: &[f64], source_record: &str, bank: &NoiseBank, spec: &MixSpec) -> Result<NoisyVariant> {
    spec.weights.validate()?;
    let weights = spec.weights.as_array();
    let noise = composite_noise(bank, weights, clean.len(), spec.segment_offset)?;
    let g = gain_for_snr(mean_power(clean)?, mean_power(&noise)?, spec.target_snr_db)?;
    let samples: Vec<f64> = clean.iter().zip(&noise).map(|(c, n)| c + g * n).collect();
    let achieved_snr_db = measured_snr_db(clean, &samples)?;
    Ok(NoisyVariant {
        samples,
        achieved_snr_db,
        gains: weights.map(|w| g * w),
        spec: spec.clone(),
        source_record: source_record.to_string(),
    })
}

/// Seed for one (record, rung) pair, independent of generation order.
pub fn derive_seed(seed: u64, record: &str, rung: i32) -> u64 {
    // FNV-1a over the record name, folded with the seed and rung through splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in record.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17) ^ (rung as i64 as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The 13 noisy variants of one record, one per ladder rung.
pub fn build_snr_ladder(
    clean: &[f64],
    source_record: &str,
    bank: &NoiseBank,
    weights: MixWeights,
    seed: u64,
) -> Result<Vec<NoisyVariant>> {
    weights.validate()?;
    let noise_len = bank.min_len();
    if noise_len == 0 {
        return Err(Error::InvalidInput("noise bank is empty".into()));
    }
    SNR_LADDER_DB
        .par_iter()
        .map(|&snr| {
            let rung_seed = derive_seed(seed, source_record, snr);
            let mut rng = ChaCha8Rng::seed_from_u64(rung_seed);
            let spec = MixSpec {
                target_snr_db: f64::from(snr),
                weights,
                seed: rung_seed,
                segment_offset: rng.random_range(0..noise_len),
            };
            mix_at_snr(clean, source_record, bank, &spec)
        })
        .collect()
}

/// Write a signal as raw little-endian f32 plus a one-line sidecar header
/// (`name fs length`) at `<path>.hdr`.
pub fn write_f32_signal(path: &Path, name: &str, fs: f64, samples: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(samples.len() * 4);
    for &v in samples {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io("writing signal", path, e))?;
    let hdr = sidecar_path(path);
    let mut f = fs::File::create(&hdr).map_err(|e| Error::io("writing sidecar", &hdr, e))?;
    writeln!(f, "{name} {fs} {}", samples.len()).map_err(|e| Error::io("writing sidecar", &hdr, e))
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    s.into()
}

/// Read a signal written by [`write_f32_signal`]; returns `(name, fs, samples)`.
pub fn read_f32_signal(path: &Path) -> Result<(String, f64, Vec<f64>)> {
    let hdr = sidecar_path(path);
    let text = fs::read_to_string(&hdr).map_err(|e| Error::io("reading sidecar", &hdr, e))?;
    let fields: Vec<&str> = text.split_whitespace().collect();
    let parsed = match fields.as_slice() {
        [name, fs, len] => fs
            .parse::<f64>()
            .ok()
            .zip(len.parse::<usize>().ok())
            .map(|(fs, len)| (name.to_string(), fs, len)),
        _ => None,
    };
    let (name, fs, len) = parsed.ok_or_else(|| Error::HeaderParse {
        line: 1,
        msg: format!("{}: expected `name fs length`", hdr.display()),
    })?;
    let bytes = fs::read(path).map_err(|e| Error::io("reading signal", path, e))?;
    if bytes.len() != len * 4 {
        return Err(Error::Truncated {
            offset: bytes.len(),
            needed: len * 4,
        });
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Ok((name, fs, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(n: usize, f: f64, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / 360.0 + phase).sin())
            .collect()
    }

    fn test_bank() -> NoiseBank {
        // Sines at distinct whole-period frequencies are mutually orthogonal.
        NoiseBank::new(&sine(3600, 7.0, 0.3), &sine(3600, 23.0, 1.1), &sine(3600, 1.0, 0.0)).unwrap()
    }

    fn clean_signal(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i % 288;
                if t < 6 {
                    1.0
                } else {
                    0.05 * (i as f64 / 40.0).sin()
                }
            })
            .collect()
    }

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize(&[1.0, -1.0, 1.0, -1.0]).unwrap(), vec![1.0, -1.0, 1.0, -1.0]);
        assert_eq!(standardize(&[0.0, 2.0, 0.0, 2.0]).unwrap(), vec![-1.0, 1.0, -1.0, 1.0]);
        assert!(standardize(&[4.0; 8]).is_err());
        let s = standardize(&sine(1000, 3.3, 0.2)).unwrap();
        assert!(crate::sigproc::mean(&s).abs() < 1e-9);
        assert!((mean_power(&s).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn composite_examples() {
        let bank = test_bank();
        let ma_only = composite_noise(&bank, [0.0, 1.0, 0.0], 100, 5).unwrap();
        assert_eq!(ma_only, bank.ma[5..105].to_vec());

        let src = sine(720, 4.0, 0.0);
        let same = NoiseBank::new(&src, &src, &src).unwrap();
        let third = 1.0 / 3.0;
        let c = composite_noise(&same, [third, third, third], 720, 0).unwrap();
        for (a, b) in c.iter().zip(&same.em) {
            assert!((a - b).abs() < 1e-12);
        }

        // Direct variance of the blend of orthogonal unit-variance sources.
        let blend = composite_noise(&bank, MixWeights::default().as_array(), 3600, 0).unwrap();
        let expected = 0.35f64.powi(2) + 0.50f64.powi(2) + 0.15f64.powi(2);
        assert!((expected - 0.395).abs() < 1e-12);
        assert!((mean_power(&blend).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn composite_wraps_circularly() {
        let bank = test_bank();
        let c = composite_noise(&bank, [0.0, 1.0, 0.0], 10, 3595).unwrap();
        assert_eq!(c[5], bank.ma[0]);
    }

    #[test]
    fn gain_examples() {
        assert!((gain_for_snr(1.0, 1.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((gain_for_snr(1.0, 1.0, -20.0).unwrap() - 10.0).abs() < 1e-12);
        let g = gain_for_snr(4.0, 1.0, 6.0).unwrap();
        assert!((g - (4.0 * 10f64.powf(-0.6)).sqrt()).abs() < 1e-15);
        assert!((g - 1.002_374_467).abs() < 1e-9);
        assert!(gain_for_snr(0.0, 1.0, 0.0).is_err());
        assert!(gain_for_snr(1.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn gain_hits_snr_on_real_sequences() {
        // signal power 4 (sd 2), unit noise
        let clean: Vec<f64> = sine(3600, 2.0, 0.0).iter().map(|v| v * 8f64.sqrt()).collect();
        let noise = standardize(&sine(3600, 31.0, 0.4)).unwrap();
        let g = gain_for_snr(mean_power(&clean).unwrap(), 1.0, 6.0).unwrap();
        let noisy: Vec<f64> = clean.iter().zip(&noise).map(|(c, n)| c + g * n).collect();
        assert!((measured_snr_db(&clean, &noisy).unwrap() - 6.0).abs() < 0.05);
    }

    #[test]
    fn mix_examples() {
        let bank = test_bank();
        let clean = clean_signal(5000);
        let spec = |snr: f64| MixSpec {
            target_snr_db: snr,
            weights: MixWeights::default(),
            seed: 1,
            segment_offset: 17,
        };
        let v = mix_at_snr(&clean, "r", &bank, &spec(36.0)).unwrap();
        assert!((v.achieved_snr_db - 36.0).abs() <= SNR_TOLERANCE_DB);
        let max_dev = v.samples.iter().zip(&clean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_dev < 0.1, "36 dB noise should be small, got {max_dev}");

        let v = mix_at_snr(&clean, "r", &bank, &spec(0.0)).unwrap();
        let diff: Vec<f64> = v.samples.iter().zip(&clean).map(|(a, b)| a - b).collect();
        let ratio = mean_power(&diff).unwrap() / mean_power(&clean).unwrap();
        assert!((ratio - 1.0).abs() < 0.01);
        let [a1, a2, a3] = v.gains;
        assert!(a2 > a1 && a1 > a3 && a3 > 0.0);

        let bad = MixSpec {
            weights: MixWeights {
                em: 0.0,
                ma: 1.0,
                bw: 0.0,
            },
            ..spec(0.0)
        };
        assert!(matches!(mix_at_snr(&clean, "r", &bank, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn ladder_is_deterministic_and_calibrated() {
        let bank = test_bank();
        let clean = clean_signal(4000);
        let a = build_snr_ladder(&clean, "100", &bank, MixWeights::default(), 9).unwrap();
        let b = build_snr_ladder(&clean, "100", &bank, MixWeights::default(), 9).unwrap();
        assert_eq!(a.len(), 13);
        assert_eq!(a, b);
        for (v, &target) in a.iter().zip(SNR_LADDER_DB.iter()) {
            assert_eq!(v.spec.target_snr_db, f64::from(target));
            assert!((v.achieved_snr_db - f64::from(target)).abs() <= SNR_TOLERANCE_DB);
            let [a1, a2, a3] = v.gains;
            assert!(a2 > a1 && a1 > a3 && a3 > 0.0);
        }
        assert!(a.windows(2).all(|w| w[0].achieved_snr_db > w[1].achieved_snr_db));
        let other = build_snr_ladder(&clean, "101", &bank, MixWeights::default(), 9).unwrap();
        assert_ne!(a[0].spec.segment_offset, other[0].spec.segment_offset);
    }

    #[test]
    fn f32_signal_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sig.f32");
        write_f32_signal(&path, "100_snr+00", 360.0, &[0.5, -1.25, 3.0]).unwrap();
        let (name, fs, x) = read_f32_signal(&path).unwrap();
        assert_eq!((name.as_str(), fs), ("100_snr+00", 360.0));
        assert_eq!(x, vec![0.5, -1.25, 3.0]);
        fs::write(&path, [0u8; 5]).unwrap();
        assert!(read_f32_signal(&path).is_err());
    }
}
