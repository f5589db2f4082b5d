//! Cohort container: `FPSQ1` magic, u64 little-endian manifest length, JSON
//! manifest, then every trial's frames as little-endian f32 in
//! `(trial, t, p, w, h)` order, trials in manifest order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sequence::{Cohort, PressureSequence, TrialId};
use crate::error::{AstnError, Result};

pub const COHORT_MAGIC: &[u8; 5] = b"FPSQ1";
const KIND: &str = "cohort";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrialEntry {
    subject: u32,
    trial: u32,
    seconds: usize,
    frame_labels: Vec<u8>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    width: usize,
    height: usize,
    sample_rate: usize,
    subjects: Vec<u32>,
    trials: Vec<TrialEntry>,
}

pub fn encode_cohort(cohort: &Cohort) -> Result<Vec<u8>> {
    let manifest = Manifest {
        width: cohort.width,
        height: cohort.height,
        sample_rate: cohort.sample_rate,
        subjects: cohort.trials_by_subject().keys().copied().collect(),
        trials: cohort
            .sequences()
            .iter()
            .map(|s| TrialEntry {
                subject: s.id.subject,
                trial: s.id.trial,
                seconds: s.seconds(),
                frame_labels: s.frame_labels().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let payload: usize = cohort.sequences().iter().map(|s| s.frames().len()).sum();
    let mut out = Vec::with_capacity(COHORT_MAGIC.len() + 8 + json.len() + 4 * payload);
    out.extend_from_slice(COHORT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for s in cohort.sequences() {
        for v in s.frames() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_cohort(bytes: &[u8], path: &Path) -> Result<Cohort> {
    let bad = |detail: String| AstnError::format(KIND, path, detail);
    if bytes.len() < COHORT_MAGIC.len() + 8 || &bytes[..COHORT_MAGIC.len()] != COHORT_MAGIC {
        return Err(bad("missing FPSQ1 magic".into()));
    }
    let mut at = COHORT_MAGIC.len();
    let len = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes")) as usize;
    at += 8;
    if bytes.len() - at < len {
        return Err(bad(format!("manifest needs {len} bytes, file has {}", bytes.len() - at)));
    }
    let manifest: Manifest =
        serde_json::from_slice(&bytes[at..at + len]).map_err(|e| bad(format!("manifest: {e}")))?;
    at += len;
    let plane = manifest.width * manifest.height;
    let mut sequences = Vec::with_capacity(manifest.trials.len());
    for t in manifest.trials {
        let id = TrialId::new(t.subject, t.trial);
        if t.frame_labels.len() != t.seconds * manifest.sample_rate {
            return Err(bad(format!(
                "{id}: {} frame labels for {} s at {} Hz",
                t.frame_labels.len(),
                t.seconds,
                manifest.sample_rate
            )));
        }
        let n = t.frame_labels.len() * plane;
        let end = at + 4 * n;
        if end > bytes.len() {
            return Err(bad(format!("{id}: payload truncated")));
        }
        let frames: Vec<f32> = bytes[at..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        at = end;
        let seq = PressureSequence::new(id, manifest.width, manifest.height, manifest.sample_rate, frames, t.frame_labels)
            .map_err(|e| bad(e.to_string()))?;
        sequences.push(seq);
    }
    if at != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - at)));
    }
    Cohort::new(sequences).map_err(|e| bad(e.to_string()))
}

pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    let bytes = encode_cohort(cohort)?;
    let mut f = std::fs::File::create(path).map_err(|e| AstnError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| AstnError::io(path, e))
}

pub fn load_cohort(path: &Path) -> Result<Cohort> {
    let bytes = std::fs::read(path).map_err(|e| AstnError::io(path, e))?;
    decode_cohort(&bytes, path)
}

/// Reads a directory of `trial_<m>_<n>/frame_<k>.csv` grids (W rows of H
/// raw force levels each) with a `labels.csv` of per-frame 0/1 annotations
/// in every trial folder. Raw levels are scaled by `levels − 1`; a trailing
/// partial second is dropped.
pub fn ingest_csv_dir(dir: &Path, sample_rate: usize, levels: u32) -> Result<Cohort> {
    let mut trials = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| AstnError::io(dir, e))? {
        let entry = entry.map_err(|e| AstnError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(rest) = name.strip_prefix("trial_") else { continue };
        let parsed: Option<(u32, u32)> = rest
            .split_once('_')
            .and_then(|(m, n)| Some((m.parse().ok()?, n.parse().ok()?)));
        let (m, n) = parsed.ok_or_else(|| AstnError::Data(format!("cannot parse trial folder name {name}")))?;
        trials.push((TrialId::new(m, n), entry.path()));
    }
    trials.sort();
    if trials.is_empty() {
        return Err(AstnError::Data(format!("no trial_<m>_<n> folders in {}", dir.display())));
    }
    let mut sequences = Vec::new();
    for (id, folder) in trials {
        let labels_path = folder.join("labels.csv");
        let frame_labels: Vec<u8> = read_grid(&labels_path)?
            .into_iter()
            .flatten()
            .map(|v| u8::from(v != 0.0))
            .collect();
        let mut raw = Vec::new();
        let (mut w, mut h) = (0, 0);
        for k in 0..frame_labels.len() {
            let p = folder.join(format!("frame_{k}.csv"));
            let grid = read_grid(&p)?;
            let (gw, gh) = (grid.len(), grid.first().map_or(0, Vec::len));
            if k == 0 {
                (w, h) = (gw, gh);
            }
            if (gw, gh) != (w, h) || grid.iter().any(|r| r.len() != h) {
                return Err(AstnError::format("csv frame", &p, format!("expected {w}×{h} grid")));
            }
            raw.extend(grid.into_iter().flatten());
        }
        let frames = super::normalize_levels(&raw, levels)?;
        sequences.push(PressureSequence::truncated(id, w, h, sample_rate, frames, frame_labels)?);
    }
    Cohort::new(sequences)
}

fn read_grid(path: &Path) -> Result<Vec<Vec<f32>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| AstnError::format("csv", path, e.to_string()))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AstnError::format("csv", path, e.to_string()))?;
        let row: std::result::Result<Vec<f32>, _> = rec.iter().map(str::parse::<f32>).collect();
        rows.push(row.map_err(|e| AstnError::format("csv", path, e.to_string()))?);
    }
    Ok(rows)
}
