use rayon::prelude::*;

use super::model::{Mode, TiramisuModel};
use super::ops::Tensor;
use super::train::TrainingPair;
use crate::error::{Error, Result};
use crate::sigproc::{normalize_peak, split_windows, stitch_windows};

/// Windows per inference batch.
const INFER_BATCH: usize = 32;

fn normalized_f32(window: &[f64]) -> Option<Vec<f32>> {
    normalize_peak(window)
        .ok()
        .map(|n| n.samples.into_iter().map(|v| v as f32).collect())
}

/// Cut aligned `(noisy, clean)` windows, peak-normalising each window on its
/// own. Windows where either side is constant are skipped.
pub fn make_training_pairs(
    noisy: &[f64],
    clean: &[f64],
    window_len: usize,
    stride: usize,
) -> Result<Vec<TrainingPair<f32>>> {
    if noisy.len() != clean.len() {
        return Err(Error::Shape(format!(
            "noisy signal has {} samples, clean {}",
            noisy.len(),
            clean.len()
        )));
    }
    let xs = split_windows(noisy, window_len, stride)?;
    let ys = split_windows(clean, window_len, stride)?;
    Ok(xs
        .windows
        .iter()
        .zip(&ys.windows)
        .filter_map(|(x, y)| {
            Some(TrainingPair {
                input: normalized_f32(x)?,
                target: normalized_f32(y)?,
            })
        })
        .collect())
}

/// Denoise a whole signal: overlapping windows are peak-normalised, passed
/// through the model and averaged back together. The output is in the
/// model's normalised units.
pub fn denoise_signal(model: &TiramisuModel<f32>, samples: &[f64], stride: usize) -> Result<Vec<f64>> {
    let len = model.config.window_len;
    let set = split_windows(samples, len, stride)?;
    let inputs: Vec<Vec<f32>> = set
        .windows
        .iter()
        .map(|w| normalized_f32(w).unwrap_or_else(|| vec![0.0; len]))
        .collect();
    let outputs: Vec<Vec<Vec<f64>>> = inputs
        .par_chunks(INFER_BATCH)
        .map(|chunk| {
            let data = chunk.iter().flatten().copied().collect();
            let x = Tensor::from_vec(data, chunk.len(), 1, len);
            let (y, _) = model.forward_batch(&x, Mode::Inference)?;
            Ok(y.data
                .chunks_exact(len)
                .map(|w| w.iter().map(|&v| f64::from(v)).collect())
                .collect())
        })
        .collect::<Result<_>>()?;
    let windows = outputs.into_iter().flatten().collect();
    stitch_windows(&set.with_windows(windows)?)
}
