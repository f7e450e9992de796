use std::fmt::Write;
use std::path::Path;

use ecgibi_core::evalkit::EvalReport;
use ecgibi_core::Error;

pub fn load(eval_dir: &Path) -> anyhow::Result<EvalReport> {
    let path = eval_dir.join("report.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|_| Error::InvalidInput(format!("no report at {}; run `eval` first", path.display())))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

/// Per-dataset RMSE / %error tables by SNR, box statistics and the weighted averages.
pub fn render(report: &EvalReport) -> String {
    let mut out = String::new();
    for ds in &report.per_dataset {
        let _ = writeln!(out, "{} ({} records)", ds.dataset, ds.n_records);
        let _ = write!(out, "{:>12}", "SNR (dB)");
        for s in &ds.per_snr {
            let _ = write!(out, "{:>10}", s.snr_db);
        }
        let _ = write!(out, "\n{:>12}", "RMSE (ms)");
        for s in &ds.per_snr {
            let _ = write!(out, "{:>10.3}", s.mean_rmse_ms);
        }
        let _ = write!(out, "\n{:>12}", "error (%)");
        for s in &ds.per_snr {
            let _ = write!(out, "{:>10.3}", s.mean_pct_error);
        }
        let _ = writeln!(out, "\n");
    }
    let _ = writeln!(out, "RMSE distribution over records (ms)");
    let _ = writeln!(
        out,
        "{:>8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8}",
        "SNR", "low", "q1", "median", "q3", "high", "outliers"
    );
    for s in &report.per_snr {
        let b = &s.rmse_box;
        let _ = writeln!(
            out,
            "{:>8} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>8}",
            s.snr_db,
            b.whisker_low,
            b.q1,
            b.median,
            b.q3,
            b.whisker_high,
            b.outliers.len()
        );
    }
    let _ = writeln!(
        out,
        "\nweighted average: RMSE {:.3} ms, error {:.3} %",
        report.weighted_rmse_ms, report.weighted_pct_error
    );
    out
}
