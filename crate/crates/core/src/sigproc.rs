//! Rate conversion, power measurement, amplitude normalisation and the
//! window split/stitch used around the denoiser.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rate every signal is brought to before mixing and denoising.
pub const TARGET_FS: f64 = 360.0;

/// Default model window (about 5.7 s at 360 Hz).
pub const DEFAULT_WINDOW_LEN: usize = 2048;
pub const DEFAULT_STRIDE: usize = 1024;

/// Linearly interpolate `samples` from `fs_in` up to 360 Hz.
///
/// Output sample `j` sits at input position `j * fs_in / 360`; the output has
/// `floor((n - 1) * 360 / fs_in) + 1` samples. Rates above 360 Hz would need
/// an anti-alias filter and are rejected.
pub fn resample_to_360(samples: &[f64], fs_in: f64) -> Result<Vec<f64>> {
    if !(fs_in > 0.0 && fs_in.is_finite()) || fs_in > TARGET_FS {
        return Err(Error::UnsupportedRate(fs_in));
    }
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot resample an empty sequence".into()));
    }
    if fs_in == TARGET_FS {
        return Ok(samples.to_vec());
    }
    let n = samples.len();

    // Integer rates keep positions exact: j*fs_in / 360 as quotient + remainder.
    if fs_in.fract() == 0.0 {
        let fs_i = fs_in as u64;
        let out_len = ((n as u64 - 1) * 360 / fs_i) as usize + 1;
        return Ok((0..out_len)
            .map(|j| {
                let num = j as u64 * fs_i;
                let i = (num / 360) as usize;
                let rem = num % 360;
                if rem == 0 {
                    samples[i]
                } else {
                    let frac = rem as f64 / 360.0;
                    samples[i] + (samples[i + 1] - samples[i]) * frac
                }
            })
            .collect());
    }

    let ratio = fs_in / TARGET_FS;
    let out_len = (((n - 1) as f64) / ratio).floor() as usize + 1;
    Ok((0..out_len)
        .map(|j| {
            let pos = j as f64 * ratio;
            let i = (pos.floor() as usize).min(n - 1);
            let frac = pos - i as f64;
            if frac == 0.0 || i + 1 >= n {
                samples[i]
            } else {
                samples[i] + (samples[i + 1] - samples[i]) * frac
            }
        })
        .collect())
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Mean-removed power `(1/N) Σ (x_i - mean)²`.
pub fn mean_power(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "mean power needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let m = mean(samples);
    Ok(samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / samples.len() as f64)
}

/// Result of [`normalize_peak`]; `x = samples * scale + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub samples: Vec<f64>,
    pub scale: f64,
    pub offset: f64,
}

impl Normalized {
    pub fn denormalize(&self) -> Vec<f64> {
        self.samples.iter().map(|v| v * self.scale + self.offset).collect()
    }
}

/// Remove the mean and divide by the largest absolute deviation, so the
/// output lies in [-1, 1] and touches at least one endpoint.
pub fn normalize_peak(samples: &[f64]) -> Result<Normalized> {
    if samples.is_empty() {
        return Err(Error::Degenerate("cannot normalise an empty sequence".into()));
    }
    let offset = mean(samples);
    let scale = samples
        .iter()
        .map(|x| (x - offset).abs())
        .fold(0.0f64, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Degenerate("sequence is constant".into()));
    }
    let samples = samples
        .iter()
        .map(|x| ((x - offset) / scale).clamp(-1.0, 1.0))
        .collect();
    Ok(Normalized {
        samples,
        scale,
        offset,
    })
}

/// Fixed-length windows cut from a longer sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub windows: Vec<Vec<f64>>,
    pub offsets: Vec<usize>,
    pub window_len: usize,
    pub stride: usize,
    pub source_len: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Same geometry, new window contents (e.g. denoised output).
    pub fn with_windows(&self, windows: Vec<Vec<f64>>) -> Result<WindowSet> {
        if windows.len() != self.windows.len() {
            return Err(Error::Shape(format!(
                "expected {} windows, got {}",
                self.windows.len(),
                windows.len()
            )));
        }
        Ok(WindowSet {
            windows,
            ..self.clone()
        })
    }
}

/// Window start offsets: `0, stride, 2*stride, ...`, plus a final right-aligned
/// window when the regular grid leaves a tail uncovered.
pub fn window_offsets(source_len: usize, window_len: usize, stride: usize) -> Vec<usize> {
    if source_len < window_len || window_len == 0 || stride == 0 {
        return Vec::new();
    }
    let mut offsets: Vec<usize> = (0..)
        .map(|k| k * stride)
        .take_while(|&o| o + window_len <= source_len)
        .collect();
    let last = *offsets.last().unwrap();
    if last + window_len < source_len {
        offsets.push(source_len - window_len);
    }
    offsets
}

pub fn split_windows(samples: &[f64], window_len: usize, stride: usize) -> Result<WindowSet> {
    if window_len == 0 || window_len % 8 != 0 {
        return Err(Error::Config(format!(
            "window length {window_len} is not a positive multiple of 8"
        )));
    }
    if stride == 0 || stride > window_len {
        return Err(Error::Config(format!(
            "stride {stride} must be in 1..={window_len}"
        )));
    }
    if samples.len() < window_len {
        return Err(Error::InvalidInput(format!(
            "sequence of {} samples is shorter than the window ({window_len})",
            samples.len()
        )));
    }
    let offsets = window_offsets(samples.len(), window_len, stride);
    let windows = offsets
        .iter()
        .map(|&o| samples[o..o + window_len].to_vec())
        .collect();
    Ok(WindowSet {
        windows,
        offsets,
        window_len,
        stride,
        source_len: samples.len(),
    })
}

/// Reassemble a sequence, averaging overlapping samples with equal weight.
pub fn stitch_windows(set: &WindowSet) -> Result<Vec<f64>> {
    if set.windows.len() != set.offsets.len() {
        return Err(Error::Shape(format!(
            "{} windows but {} offsets",
            set.windows.len(),
            set.offsets.len()
        )));
    }
    let mut sum = vec![0.0; set.source_len];
    let mut count = vec![0u32; set.source_len];
    for (k, (w, &o)) in set.windows.iter().zip(&set.offsets).enumerate() {
        if w.len() != set.window_len {
            return Err(Error::Shape(format!(
                "window {k} has {} samples, expected {}",
                w.len(),
                set.window_len
            )));
        }
        if o + w.len() > set.source_len {
            return Err(Error::Shape(format!(
                "window {k} at offset {o} runs past the source length {}",
                set.source_len
            )));
        }
        for (i, v) in w.iter().enumerate() {
            sum[o + i] += v;
            count[o + i] += 1;
        }
    }
    if let Some(gap) = count.iter().position(|&c| c == 0) {
        return Err(Error::Shape(format!("sample {gap} is not covered by any window")));
    }
    Ok(sum
        .into_iter()
        .zip(count)
        .map(|(s, c)| if c == 1 { s } else { s / f64::from(c) })
        .collect())
}
