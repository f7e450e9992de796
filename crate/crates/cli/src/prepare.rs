use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use ecgibi_core::ingest::{read_csv_record, read_record, write_beat_indices, EcgRecord, ReadOptions};
use ecgibi_core::noisemix::{build_snr_ladder, write_f32_signal, NoiseBank};
use ecgibi_core::sigproc::{resample_to_360, TARGET_FS};
use ecgibi_core::Error;
use rayon::prelude::*;

use crate::config::{DatasetConfig, PipelineConfig, RecordFormat};
use crate::manifest::{sha256_file, sha256_hex, Manifest, RecordEntry, Split, VariantEntry, MANIFEST_FILE};

/// Check every configured checksum whose file name passes `wanted`.
pub fn verify_checksums(root: &Path, expected: &BTreeMap<String, String>, wanted: impl Fn(&str) -> bool) -> anyhow::Result<()> {
    for (file, sha) in expected.iter().filter(|(f, _)| wanted(f)) {
        let actual = sha256_file(&root.join(file))?;
        if !actual.eq_ignore_ascii_case(sha) {
            return Err(Error::InvalidInput(format!(
                "checksum mismatch for {}: expected {sha}, got {actual}",
                root.join(file).display()
            ))
            .into());
        }
    }
    Ok(())
}

fn belongs_to(file: &str, record: &str) -> bool {
    file.strip_prefix(record).is_some_and(|rest| rest.starts_with('.'))
}

fn load_record(ds: &DatasetConfig, name: &str) -> anyhow::Result<EcgRecord> {
    let rec = match ds.format {
        RecordFormat::Wfdb => read_record(
            &ds.root,
            name,
            &ReadOptions {
                channel: ds.channel.select(),
                max_samples: None,
                annotator: Some(ds.annotator.clone()),
                ..ReadOptions::default()
            },
        )?,
        RecordFormat::Csv => {
            let beats = ds.root.join(format!("{name}.beats"));
            read_csv_record(
                name,
                &ds.root.join(format!("{name}.csv")),
                Some(&beats),
                ds.fs.expect("validated"),
                None,
            )?
        }
    };
    for w in &rec.warnings {
        log::warn!("{name}: {w}");
    }
    Ok(rec)
}

fn prepare_record(
    cfg: &PipelineConfig,
    bank: &NoiseBank,
    out: &Path,
    dataset: &str,
    name: &str,
    split: Split,
) -> anyhow::Result<RecordEntry> {
    let ds = &cfg.datasets[dataset];
    verify_checksums(&ds.root, &ds.sha256, |f| belongs_to(f, name))?;
    let rec = load_record(ds, name).with_context(|| format!("record {dataset}/{name}"))?;

    let mut clean = resample_to_360(rec.signal(), rec.fs())?;
    clean.truncate(cfg.prepare.max_samples);
    let mut beats = rec.annotations.rescaled(rec.fs(), TARGET_FS);
    beats.truncate_to(clean.len());

    let rel = format!("{dataset}/{name}");
    let dir = out.join(&rel);
    fs::create_dir_all(&dir).map_err(|e| Error::InvalidInput(format!("creating {}: {e}", dir.display())))?;

    let clean_file = format!("{rel}/clean.f32");
    write_f32_signal(&out.join(&clean_file), name, TARGET_FS, &clean)?;
    let beats_file = format!("{rel}/beats.txt");
    write_beat_indices(&out.join(&beats_file), &beats)?;

    let variants = build_snr_ladder(&clean, name, bank, cfg.mix.weights(), cfg.mix.seed)?
        .into_iter()
        .map(|v| {
            let snr = v.spec.target_snr_db as i32;
            let file = format!("{rel}/snr{snr:+03}.f32");
            let path = out.join(&file);
            write_f32_signal(&path, name, TARGET_FS, &v.samples)?;
            Ok(VariantEntry {
                target_snr_db: snr,
                achieved_snr_db: v.achieved_snr_db,
                gains: v.gains,
                weights: v.spec.weights,
                seed: v.spec.seed,
                offset: v.spec.segment_offset,
                sha256: sha256_file(&path)?,
                file,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    Ok(RecordEntry {
        dataset: dataset.to_string(),
        record: name.to_string(),
        split,
        source_fs: rec.fs(),
        channel: rec.header.signals[rec.selected].label.clone(),
        n_samples: clean.len(),
        clean_sha256: sha256_file(&out.join(&clean_file))?,
        clean_file,
        beats_file,
        n_beats: beats.len(),
        variants,
    })
}

/// Ingest, resample and truncate every listed record, build its SNR ladder
/// and write the manifest. Returns the manifest's SHA-256.
pub fn run(cfg: &PipelineConfig) -> anyhow::Result<String> {
    let jobs: Vec<(&str, &str, Split)> = cfg
        .datasets
        .iter()
        .flat_map(|(ds, c)| {
            let train = c.train.iter().map(move |r| (ds.as_str(), r.as_str(), Split::Train));
            train.chain(c.test.iter().map(move |r| (ds.as_str(), r.as_str(), Split::Test)))
        })
        .collect();
    if jobs.is_empty() {
        return Err(Error::Config("record lists are empty".into()).into());
    }

    let noise = &cfg.paths.noise_root;
    verify_checksums(noise, &cfg.paths.noise_sha256, |_| true)?;
    let bank = NoiseBank::from_wfdb_dir(noise).with_context(|| format!("noise records in {}", noise.display()))?;

    let out = cfg.dataset_dir();
    fs::create_dir_all(&out).map_err(|e| Error::InvalidInput(format!("creating {}: {e}", out.display())))?;
    let records = jobs
        .par_iter()
        .map(|&(ds, name, split)| prepare_record(cfg, &bank, &out, ds, name, split))
        .collect::<anyhow::Result<Vec<_>>>()?;

    let manifest = Manifest {
        version: 1,
        target_fs: TARGET_FS,
        max_samples: cfg.prepare.max_samples,
        mix_seed: cfg.mix.seed,
        weights: cfg.mix.weights(),
        records,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
    text.push('\n');
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, &text).map_err(|e| Error::InvalidInput(format!("writing {}: {e}", path.display())))?;
    crate::write_resolved(cfg, &out)?;
    Ok(sha256_hex(text.as_bytes()))
}
