//! IBI accuracy metrics and report aggregation: RMSE, percentage error,
//! Bland-Altman limits of agreement, Pearson correlation and box-plot
//! statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(p: &[f64], o: &[f64], min_len: usize) -> Result<()> {
    if p.len() != o.len() {
        return Err(Error::Shape(format!(
            "estimated series has {} values, reference {}",
            p.len(),
            o.len()
        )));
    }
    if p.len() < min_len {
        return Err(Error::Degenerate(format!(
            "need at least {min_len} paired values, got {}",
            p.len()
        )));
    }
    Ok(())
}

/// `sqrt(Σ (P_i - O_i)² / n)` in the units of the inputs (ms).
pub fn rmse_ibi(p: &[f64], o: &[f64]) -> Result<f64> {
    check_pair(p, o, 1)?;
    let ss: f64 = p.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / p.len() as f64).sqrt())
}

/// `(1/n) Σ |O_i - P_i| / O_i * 100`.
pub fn pct_error(p: &[f64], o: &[f64]) -> Result<f64> {
    check_pair(p, o, 1)?;
    if let Some(i) = o.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "reference interval {i} is {} (must be positive)",
            o[i]
        )));
    }
    let sum: f64 = p.iter().zip(o).map(|(a, b)| (b - a).abs() / b).sum();
    Ok(sum / p.len() as f64 * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub mean_diff: f64,
    /// Sample (n-1) standard deviation of the differences.
    pub sd_diff: f64,
    pub loa_upper: f64,
    pub loa_lower: f64,
    /// `(mean of pair, P - O)` per pair.
    pub points: Vec<(f64, f64)>,
}

impl BlandAltman {
    /// Flags the points lying outside the limits of agreement.
    pub fn outside_limits(&self) -> Vec<bool> {
        self.points
            .iter()
            .map(|&(_, d)| d > self.loa_upper || d < self.loa_lower)
            .collect()
    }
}

pub const LOA_Z: f64 = 1.96;

pub fn bland_altman(p: &[f64], o: &[f64]) -> Result<BlandAltman> {
    check_pair(p, o, 2)?;
    let n = p.len() as f64;
    let points: Vec<(f64, f64)> = p.iter().zip(o).map(|(a, b)| ((a + b) / 2.0, a - b)).collect();
    let mean_diff = points.iter().map(|&(_, d)| d).sum::<f64>() / n;
    let var = points
        .iter()
        .map(|&(_, d)| (d - mean_diff) * (d - mean_diff))
        .sum::<f64>()
        / (n - 1.0);
    let sd_diff = var.sqrt();
    Ok(BlandAltman {
        mean_diff,
        sd_diff,
        loa_upper: mean_diff + LOA_Z * sd_diff,
        loa_lower: mean_diff - LOA_Z * sd_diff,
        points,
    })
}

pub fn pearson_r(p: &[f64], o: &[f64]) -> Result<f64> {
    check_pair(p, o, 2)?;
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let mo = o.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(o) {
        let (dx, dy) = (a - mp, b - mo);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate(
            "correlation is undefined for a constant series".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Quantile of sorted data by linear interpolation at position `q (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Tukey box: whiskers reach the furthest datum within 1.5 IQR of the box.
pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::Degenerate("box statistics of an empty set".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("box statistics need finite values".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&s, 0.25);
    let median = quantile_sorted(&s, 0.5);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || s.iter().copied().filter(|&v| v >= lo_fence && v <= hi_fence);
    let whisker_low = inside().fold(f64::INFINITY, f64::min);
    let whisker_high = inside().fold(f64::NEG_INFINITY, f64::max);
    let outliers = s
        .iter()
        .copied()
        .filter(|&v| v < lo_fence || v > hi_fence)
        .collect();
    Ok(BoxStats {
        median,
        q1,
        q3,
        whisker_low,
        whisker_high,
        outliers,
    })
}

/// Metrics of one record at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub dataset: String,
    pub record: String,
    pub snr_db: i32,
    pub rmse_ms: f64,
    pub pct_error: f64,
    pub n_ibis: usize,
    pub mean_diff_ms: f64,
    pub loa_upper_ms: f64,
    pub loa_lower_ms: f64,
    /// `None` when either series is constant.
    pub pearson_r: Option<f64>,
    pub matched: usize,
    pub unmatched_estimated: usize,
    pub unmatched_true: usize,
}

impl RecordResult {
    /// Compute every metric from paired estimated/true IBIs.
    pub fn from_pairs(
        dataset: &str,
        record: &str,
        snr_db: i32,
        p: &[f64],
        o: &[f64],
        counts: (usize, usize, usize),
    ) -> Result<RecordResult> {
        let ba = bland_altman(p, o)?;
        Ok(RecordResult {
            dataset: dataset.to_string(),
            record: record.to_string(),
            snr_db,
            rmse_ms: rmse_ibi(p, o)?,
            pct_error: pct_error(p, o)?,
            n_ibis: p.len(),
            mean_diff_ms: ba.mean_diff,
            loa_upper_ms: ba.loa_upper,
            loa_lower_ms: ba.loa_lower,
            pearson_r: pearson_r(p, o).ok(),
            matched: counts.0,
            unmatched_estimated: counts.1,
            unmatched_true: counts.2,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrAggregate {
    pub snr_db: i32,
    pub n_records: usize,
    pub mean_rmse_ms: f64,
    pub mean_pct_error: f64,
    pub rmse_box: BoxStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAggregate {
    pub dataset: String,
    pub n_records: usize,
    /// Mean over all of the dataset's (record, SNR) rows.
    pub mean_rmse_ms: f64,
    pub mean_pct_error: f64,
    /// Per-SNR means for this dataset (table rows).
    pub per_snr: Vec<SnrAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<RecordResult>,
    pub per_snr: Vec<SnrAggregate>,
    pub per_dataset: Vec<DatasetAggregate>,
    /// Dataset means weighted by the number of records in each dataset.
    pub weighted_rmse_ms: f64,
    pub weighted_pct_error: f64,
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn snr_aggregates(rows: &[&RecordResult]) -> Result<Vec<SnrAggregate>> {
    let mut by_snr: BTreeMap<std::cmp::Reverse<i32>, Vec<&RecordResult>> = BTreeMap::new();
    for r in rows {
        by_snr.entry(std::cmp::Reverse(r.snr_db)).or_default().push(r);
    }
    by_snr
        .into_iter()
        .map(|(std::cmp::Reverse(snr_db), rs)| {
            let rmse: Vec<f64> = rs.iter().map(|r| r.rmse_ms).collect();
            Ok(SnrAggregate {
                snr_db,
                n_records: rs.len(),
                mean_rmse_ms: mean_of(rmse.iter().copied()),
                mean_pct_error: mean_of(rs.iter().map(|r| r.pct_error)),
                rmse_box: box_stats(&rmse)?,
            })
        })
        .collect()
}

/// Aggregate per-record results by SNR and by dataset.
pub fn aggregate_report(rows: Vec<RecordResult>) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::Degenerate("no results to aggregate".into()));
    }
    let all: Vec<&RecordResult> = rows.iter().collect();
    let per_snr = snr_aggregates(&all)?;

    let mut by_dataset: BTreeMap<&str, Vec<&RecordResult>> = BTreeMap::new();
    for r in &rows {
        by_dataset.entry(r.dataset.as_str()).or_default().push(r);
    }
    let mut per_dataset = Vec::new();
    for (name, rs) in by_dataset {
        let mut records: Vec<&str> = rs.iter().map(|r| r.record.as_str()).collect();
        records.sort_unstable();
        records.dedup();
        per_dataset.push(DatasetAggregate {
            dataset: name.to_string(),
            n_records: records.len(),
            mean_rmse_ms: mean_of(rs.iter().map(|r| r.rmse_ms)),
            mean_pct_error: mean_of(rs.iter().map(|r| r.pct_error)),
            per_snr: snr_aggregates(&rs)?,
        });
    }
    let total: usize = per_dataset.iter().map(|d| d.n_records).sum();
    let weighted = |f: fn(&DatasetAggregate) -> f64| {
        per_dataset
            .iter()
            .map(|d| f(d) * d.n_records as f64)
            .sum::<f64>()
            / total as f64
    };
    let weighted_rmse_ms = weighted(|d| d.mean_rmse_ms);
    let weighted_pct_error = weighted(|d| d.mean_pct_error);
    Ok(EvalReport {
        rows,
        per_snr,
        per_dataset,
        weighted_rmse_ms,
        weighted_pct_error,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

impl EvalReport {
    /// One row per record × SNR.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "dataset,record,snr_db,rmse_ms,pct_error,n_ibis,mean_diff_ms,loa_upper_ms,loa_lower_ms,pearson_r,matched,unmatched_estimated,unmatched_true\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{},{:.6},{:.6},{:.6},{},{},{},{}",
                r.dataset,
                r.record,
                r.snr_db,
                r.rmse_ms,
                r.pct_error,
                r.n_ibis,
                r.mean_diff_ms,
                r.loa_upper_ms,
                r.loa_lower_ms,
                opt(r.pearson_r),
                r.matched,
                r.unmatched_estimated,
                r.unmatched_true
            );
        }
        out
    }

    /// Per-SNR RMSE values for box-and-whisker plots.
    pub fn box_data_csv(&self) -> String {
        let mut out = String::from("snr_db,dataset,record,rmse_ms\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6}", r.snr_db, r.dataset, r.record, r.rmse_ms);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Bland-Altman scatter points as CSV rows.
pub fn ba_points_csv(rows: &[(String, i32, BlandAltman)]) -> String {
    let mut out = String::from("record,snr_db,mean_ms,diff_ms,outside_loa\n");
    for (record, snr, ba) in rows {
        for (&(m, d), outside) in ba.points.iter().zip(ba.outside_limits()) {
            let _ = writeln!(out, "{record},{snr},{m:.6},{d:.6},{}", u8::from(outside));
        }
    }
    out
}
