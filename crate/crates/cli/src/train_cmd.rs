use std::fs;
use std::path::PathBuf;

use ecgibi_core::tiramisu::{loss_csv, make_training_pairs, train, Init, TiramisuModel, TrainOptions, TrainingPair};
use ecgibi_core::Error;

use crate::config::PipelineConfig;
use crate::manifest::{read_signal, Manifest, Split};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub first_loss: f64,
    pub final_loss: f64,
    pub n_windows: usize,
}

/// Windows from every training record at every configured rung, with every
/// k-th window held out for validation.
fn collect_pairs(
    cfg: &PipelineConfig,
    manifest: &Manifest,
) -> anyhow::Result<(Vec<TrainingPair<f32>>, Vec<TrainingPair<f32>>)> {
    let dir = cfg.dataset_dir();
    let mut all = Vec::new();
    let mut n_records = 0;
    for (dataset, ds) in &cfg.datasets {
        for name in &ds.train {
            let rec = manifest
                .find(dataset, name)
                .filter(|r| r.split == Split::Train)
                .ok_or_else(|| Error::InvalidInput(format!("training record {dataset}/{name} is not in the manifest")))?;
            n_records += 1;
            let clean = read_signal(&dir, &rec.clean_file, &rec.clean_sha256)?;
            for &snr in &cfg.training.train_snr_set {
                let v = rec.variant(snr)?;
                let noisy = read_signal(&dir, &v.file, &v.sha256)?;
                all.extend(make_training_pairs(&noisy, &clean, cfg.model.window_len, cfg.split.train_stride)?);
            }
        }
    }
    if n_records == 0 {
        return Err(Error::Config("no training records configured".into()).into());
    }
    if cfg.split.val_fraction == 0.0 {
        return Ok((all, Vec::new()));
    }
    let every = (1.0 / cfg.split.val_fraction).round() as usize;
    let (mut tr, mut val) = (Vec::new(), Vec::new());
    for (i, p) in all.into_iter().enumerate() {
        if i % every == every - 1 {
            val.push(p);
        } else {
            tr.push(p);
        }
    }
    Ok((tr, val))
}

pub fn run(cfg: &PipelineConfig, record_wall_time: bool) -> anyhow::Result<TrainSummary> {
    let manifest = Manifest::load(&cfg.dataset_dir())?;
    let (pairs, validation) = collect_pairs(cfg, &manifest)?;
    log::info!("training on {} windows ({} held out)", pairs.len(), validation.len());

    let out = cfg.train_dir();
    fs::create_dir_all(&out).map_err(|e| Error::InvalidInput(format!("creating {}: {e}", out.display())))?;
    crate::write_resolved(cfg, &out)?;

    let mut model = TiramisuModel::<f32>::build(&cfg.model, Init::HeUniform { seed: cfg.training.seed })?;
    let checkpoint = out.join(CHECKPOINT_FILE);
    let outcome = train(
        &mut model,
        &pairs,
        &validation,
        &cfg.training,
        &TrainOptions {
            checkpoint_path: Some(checkpoint.clone()),
            record_wall_time,
        },
    )?;
    let loss_path = out.join("loss.csv");
    fs::write(&loss_path, loss_csv(&outcome.history))
        .map_err(|e| Error::InvalidInput(format!("writing {}: {e}", loss_path.display())))?;

    let losses: Vec<f64> = outcome.history.iter().map(|e| e.train_loss).collect();
    Ok(TrainSummary {
        checkpoint,
        first_loss: losses[0],
        final_loss: *losses.last().expect("at least one epoch"),
        n_windows: pairs.len(),
    })
}
