use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use ecgibi_core::ingest::parse_header;
use ecgibi_core::Error;

use crate::config::{PipelineConfig, RecordFormat};
use crate::prepare::verify_checksums;

const ARCHIVE: &str = "https://physionet.org/files";
const MAX_BYTES: u64 = 256 << 20;

fn default_url(dataset: &str) -> Option<String> {
    let version = match dataset {
        "mitdb" | "nstdb" | "edb" => "1.0.0",
        _ => return None,
    };
    Some(format!("{ARCHIVE}/{dataset}/{version}"))
}

fn download(url: &str, dest: &Path) -> anyhow::Result<()> {
    if dest.exists() {
        log::info!("{} present, skipping", dest.display());
        return Ok(());
    }
    log::info!("GET {url}");
    let mut resp = ureq::get(url).call().with_context(|| format!("fetching {url}"))?;
    let bytes = resp
        .body_mut()
        .with_config()
        .limit(MAX_BYTES)
        .read_to_vec()
        .with_context(|| format!("reading {url}"))?;
    let tmp = dest.with_extension("part");
    fs::write(&tmp, &bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, dest).with_context(|| format!("renaming {}", dest.display()))?;
    Ok(())
}

/// Header, signal files and annotations of one WFDB record.
fn fetch_record(base: &str, root: &Path, name: &str, annotator: Option<&str>) -> anyhow::Result<()> {
    let hea = root.join(format!("{name}.hea"));
    download(&format!("{base}/{name}.hea"), &hea)?;
    let header = parse_header(&fs::read_to_string(&hea)?)?;
    let mut files: Vec<&str> = header.signals.iter().map(|s| s.file_name.as_str()).collect();
    files.dedup();
    for f in files {
        download(&format!("{base}/{f}"), &root.join(f))?;
    }
    if let Some(ext) = annotator {
        download(&format!("{base}/{name}.{ext}"), &root.join(format!("{name}.{ext}")))?;
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Download the configured records and noise sources from the public
/// archive, then verify any configured checksums.
pub fn run(cfg: &PipelineConfig, only: &[String]) -> anyhow::Result<()> {
    for (name, ds) in cfg.datasets.iter().filter(|(n, _)| only.is_empty() || only.contains(n)) {
        if ds.format == RecordFormat::Csv {
            log::warn!("dataset {name}: csv records have no archive source; skipping");
            continue;
        }
        let base = ds
            .url
            .clone()
            .or_else(|| default_url(name))
            .ok_or_else(|| Error::Config(format!("dataset {name}: no `url` configured")))?;
        ensure_dir(&ds.root)?;
        for rec in ds.train.iter().chain(&ds.test) {
            fetch_record(&base, &ds.root, rec, Some(&ds.annotator))?;
        }
        verify_checksums(&ds.root, &ds.sha256, |_| true)?;
    }
    if only.is_empty() || only.iter().any(|n| n == "noise") {
        let base = cfg.paths.noise_url.clone().or_else(|| default_url("nstdb")).expect("nstdb has a default");
        ensure_dir(&cfg.paths.noise_root)?;
        for rec in ["bw", "em", "ma"] {
            fetch_record(&base, &cfg.paths.noise_root, rec, None)?;
        }
        verify_checksums(&cfg.paths.noise_root, &cfg.paths.noise_sha256, |_| true)?;
    }
    Ok(())
}

/// SHA-256 of every file in `dir`, keyed by file name, for pasting into a config.
pub fn hash_dir(dir: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() {
            let name = path.file_name().expect("file has a name").to_string_lossy().into_owned();
            out.insert(name, crate::manifest::sha256_file(&path)?);
        }
    }
    Ok(out)
}
