use std::fs;
use std::path::Path;

use ecgibi_core::beats::{detect_peaks, match_beats, paired_ibis, tolerance_samples};
use ecgibi_core::evalkit::{aggregate_report, ba_points_csv, bland_altman, BlandAltman, EvalReport, RecordResult};
use ecgibi_core::ingest::read_beat_indices;
use ecgibi_core::sigproc::TARGET_FS;
use ecgibi_core::tiramisu::{denoise_signal, Checkpoint, TiramisuModel};
use ecgibi_core::Error;
use rayon::prelude::*;

use crate::config::{Denoiser, PipelineConfig};
use crate::manifest::{read_signal, Manifest, RecordEntry};

pub struct EvalRequest<'a> {
    pub denoiser: Denoiser,
    pub checkpoint: &'a Path,
    /// Restrict evaluation to these records (`dataset/record` or bare record names).
    pub records: &'a [String],
}

struct Job<'a> {
    rec: &'a RecordEntry,
    snr_db: i32,
}

fn selected(req: &EvalRequest<'_>, dataset: &str, record: &str) -> bool {
    req.records.is_empty()
        || req
            .records
            .iter()
            .any(|r| r == record || *r == format!("{dataset}/{record}"))
}

/// Test records to evaluate, refusing anything the model was trained on.
fn test_records<'m>(cfg: &PipelineConfig, manifest: &'m Manifest, req: &EvalRequest<'_>) -> anyhow::Result<Vec<&'m RecordEntry>> {
    for r in req.records {
        let (ds, name) = r.split_once('/').map_or((None, r.as_str()), |(d, n)| (Some(d), n));
        let leaked = cfg
            .datasets
            .iter()
            .any(|(d, c)| ds.is_none_or(|ds| ds == d) && c.train.iter().any(|t| t == name));
        if leaked {
            return Err(Error::Config(format!("record {r} is in the training list; refusing to evaluate it")).into());
        }
    }
    let mut out = Vec::new();
    for (dataset, ds) in &cfg.datasets {
        for name in ds.test.iter().filter(|n| selected(req, dataset, n)) {
            let rec = manifest
                .find(dataset, name)
                .ok_or_else(|| Error::InvalidInput(format!("test record {dataset}/{name} is not in the manifest")))?;
            out.push(rec);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no test records selected".into()).into());
    }
    Ok(out)
}

fn evaluate_one(
    cfg: &PipelineConfig,
    dir: &Path,
    model: Option<&TiramisuModel<f32>>,
    job: &Job<'_>,
) -> anyhow::Result<Option<(RecordResult, BlandAltman)>> {
    let rec = job.rec;
    let v = rec.variant(job.snr_db)?;
    let noisy = read_signal(dir, &v.file, &v.sha256)?;
    let truth = read_beat_indices(&dir.join(&rec.beats_file))?;
    let signal = match model {
        Some(m) => denoise_signal(m, &noisy, cfg.eval.stride)?,
        None => noisy,
    };
    let peaks = detect_peaks(&signal, TARGET_FS)?;
    let matched = match_beats(&peaks, &truth, tolerance_samples(TARGET_FS, cfg.eval.tolerance_ms / 1000.0));
    let (p, o) = match paired_ibis(&matched, &peaks, &truth, TARGET_FS) {
        Ok(pair) => pair,
        Err(e @ Error::Degenerate(_)) => {
            log::warn!("{}/{} at {} dB skipped: {e}", rec.dataset, rec.record, job.snr_db);
            return Ok(None);
        }
        Err(e) => return Err(e.into()),
    };
    let counts = (matched.pairs.len(), matched.unmatched_estimated, matched.unmatched_true);
    let row = RecordResult::from_pairs(&rec.dataset, &rec.record, job.snr_db, &p.intervals_ms, &o.intervals_ms, counts)?;
    Ok(Some((row, bland_altman(&p.intervals_ms, &o.intervals_ms)?)))
}

pub fn run(cfg: &PipelineConfig, req: &EvalRequest<'_>) -> anyhow::Result<EvalReport> {
    let dir = cfg.dataset_dir();
    let manifest = Manifest::load(&dir)?;
    let records = test_records(cfg, &manifest, req)?;

    let model = match req.denoiser {
        Denoiser::Identity => None,
        Denoiser::Model => {
            let ck = Checkpoint::load(req.checkpoint)?;
            Some(ck.to_model::<f32>(Some(&cfg.model))?)
        }
    };

    let jobs: Vec<Job<'_>> = records
        .iter()
        .flat_map(|&rec| cfg.eval.snr_set.iter().map(move |&snr_db| Job { rec, snr_db }))
        .collect();
    let results = jobs
        .par_iter()
        .map(|job| evaluate_one(cfg, &dir, model.as_ref(), job))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (rows, ba): (Vec<RecordResult>, Vec<(String, i32, BlandAltman)>) = results
        .into_iter()
        .flatten()
        .map(|(row, ba)| {
            let key = (format!("{}/{}", row.dataset, row.record), row.snr_db, ba);
            (row, key)
        })
        .unzip();
    if rows.is_empty() {
        return Err(Error::Degenerate("no record produced enough paired intervals".into()).into());
    }
    let report = aggregate_report(rows)?;

    let out = cfg.eval_dir();
    fs::create_dir_all(&out).map_err(|e| Error::InvalidInput(format!("creating {}: {e}", out.display())))?;
    crate::write_resolved(cfg, &out)?;
    let files = [
        ("report.csv", report.to_csv()),
        ("report.json", report.to_json()? + "\n"),
        ("ba_points.csv", ba_points_csv(&ba)),
        ("box_data.csv", report.box_data_csv()),
    ];
    for (name, text) in files {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| Error::InvalidInput(format!("writing {}: {e}", path.display())))?;
    }
    Ok(report)
}
