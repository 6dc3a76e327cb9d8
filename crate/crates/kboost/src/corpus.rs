//! Corpus directories: rendered WAV files plus a line-delimited JSON manifest.
//!
//! Layout:
//!
//! ```text
//! <dir>/manifest.jsonl
//! <dir>/<split>/<id>/mixture.wav
//! <dir>/<split>/<id>/reference<k>.wav
//! <dir>/<split>/<id>/noise.wav        (tasks with ambient noise)
//! <dir>/<split>/<id>/enrollment.wav   (target speaker extraction)
//! ```

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use kboost_core::dsp::{AudioSignal, Stft};
use kboost_core::synth::{build_corpus, make_mixture, measure_snr, CorpusSpec, MixtureRecipe, Split, Task};
use kboost_core::train::Example;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{io_err, Error, Result};
use crate::wav::{read_wav, write_wav};

pub const MANIFEST: &str = "manifest.jsonl";

/// Files of one mixture, relative to the corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub mixture: String,
    pub references: Vec<String>,
    #[serde(default)]
    pub noise: Option<String>,
    #[serde(default)]
    pub enrollment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub recipe: MixtureRecipe,
    pub paths: Paths,
    /// Hash of the corpus specification the row was generated from.
    pub config_hash: String,
}

impl ManifestRow {
    pub fn new(recipe: MixtureRecipe, config_hash: &str) -> Self {
        let base = format!("{}/{}", recipe.split.name(), recipe.id);
        let paths = Paths {
            mixture: format!("{base}/mixture.wav"),
            references: (0..recipe.sources.len()).map(|k| format!("{base}/reference{k}.wav")).collect(),
            noise: recipe.noise.map(|_| format!("{base}/noise.wav")),
            enrollment: recipe.enrollment.map(|_| format!("{base}/enrollment.wav")),
        };
        Self {
            recipe,
            paths,
            config_hash: config_hash.to_string(),
        }
    }
}

pub fn corpus_hash(spec: &CorpusSpec) -> String {
    hex(&Sha256::digest(serde_json::to_vec(spec).expect("corpus spec serializes")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusSummary {
    pub task: Task,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub config_hash: String,
    /// False when an identical manifest was already on disk.
    pub changed: bool,
}

pub fn manifest_text(rows: &[ManifestRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("rows serialize"));
        out.push('\n');
    }
    out
}

/// Renders the corpus of `spec` into `dir` on `jobs` worker threads.
/// An identical existing manifest means nothing is rewritten; a different
/// one is a collision unless `force` is set.
pub fn write_corpus(spec: &CorpusSpec, dir: &Path, force: bool, jobs: usize) -> Result<CorpusSummary> {
    let hash = corpus_hash(spec);
    let rows: Vec<ManifestRow> = build_corpus(spec)?.into_iter().map(|r| ManifestRow::new(r, &hash)).collect();
    let text = manifest_text(&rows);
    let count = |s: Split| rows.iter().filter(|r| r.recipe.split == s).count();
    let mut summary = CorpusSummary {
        task: spec.task,
        train: count(Split::Train),
        val: count(Split::Val),
        test: count(Split::Test),
        config_hash: hash,
        changed: true,
    };
    let manifest = dir.join(MANIFEST);
    if manifest.exists() {
        let old = std::fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
        if old == text {
            summary.changed = false;
            return Ok(summary);
        }
        if !force {
            return Err(Error::Collision(manifest));
        }
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let next = AtomicUsize::new(0);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= rows.len() || failure.lock().unwrap().is_some() {
                    break;
                }
                if let Err(e) = render_row(dir, &rows[i]) {
                    failure.lock().unwrap().get_or_insert(e);
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    std::fs::write(&manifest, text).map_err(io_err(&manifest))?;
    Ok(summary)
}

fn render_row(dir: &Path, row: &ManifestRow) -> Result<()> {
    let m = make_mixture(&row.recipe)?;
    let mix = dir.join(&row.paths.mixture);
    let parent = mix.parent().expect("paths have a parent");
    std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    write_wav(&mix, &m.mixture)?;
    for (r, p) in m.references.iter().zip(&row.paths.references) {
        write_wav(&dir.join(p), r)?;
    }
    if let (Some(n), Some(p)) = (&m.noise, &row.paths.noise) {
        write_wav(&dir.join(p), n)?;
    }
    if let (Some(e), Some(p)) = (&m.enrollment, &row.paths.enrollment) {
        write_wav(&dir.join(p), e)?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dir.join(MANIFEST);
    let file = std::fs::File::open(&path).map_err(io_err(&path))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.clone(),
            line: n + 1,
            source,
        })?);
    }
    Ok(rows)
}

/// Signals of one manifest row, read back from disk.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub mixture: AudioSignal<f64>,
    pub references: Vec<AudioSignal<f64>>,
    pub noise: Option<AudioSignal<f64>>,
    pub enrollment: Option<AudioSignal<f64>>,
}

pub fn load_item(dir: &Path, row: &ManifestRow) -> Result<CorpusItem> {
    let opt = |p: &Option<String>| p.as_ref().map(|p| read_wav(&dir.join(p))).transpose();
    Ok(CorpusItem {
        mixture: read_wav(&dir.join(&row.paths.mixture))?,
        references: row.paths.references.iter().map(|p| read_wav(&dir.join(p))).collect::<Result<_>>()?,
        noise: opt(&row.paths.noise)?,
        enrollment: opt(&row.paths.enrollment)?,
    })
}

/// SNR of the stored files: summed speech images against the stored noise.
pub fn measured_snr(item: &CorpusItem) -> Option<f64> {
    let noise = item.noise.as_ref()?;
    let (n, sr) = (item.mixture.len(), item.mixture.sample_rate());
    let mut speech = AudioSignal::<f64>::zeros(2, n, sr);
    for r in &item.references {
        for c in 0..2 {
            for (a, b) in speech.channel_mut(c).iter_mut().zip(r.channel(c)) {
                *a += b;
            }
        }
    }
    Some(measure_snr(&speech, noise))
}

/// Rows of one split, optionally truncated to the first `limit`.
pub fn split_rows(rows: &[ManifestRow], split: Split, limit: Option<usize>) -> Vec<ManifestRow> {
    let it = rows.iter().filter(|r| r.recipe.split == split).cloned();
    match limit {
        Some(n) => it.take(n).collect(),
        None => it.collect(),
    }
}

/// Training examples of one split.
pub fn load_examples(dir: &Path, rows: &[ManifestRow], task: Task, stft: &Stft<f64>) -> Result<Vec<Example<f64>>> {
    rows.iter()
        .map(|row| {
            if row.recipe.task != task {
                return Err(kboost_core::Error::Config(format!(
                    "corpus row {} is a {} mixture, config task is {}",
                    row.recipe.id,
                    row.recipe.task.name(),
                    task.name()
                ))
                .into());
            }
            let item = load_item(dir, row)?;
            Ok(Example::from_signals(
                row.recipe.id.clone(),
                &item.mixture,
                &item.references,
                item.enrollment.as_ref(),
                task,
                stft,
            )?)
        })
        .collect()
}
