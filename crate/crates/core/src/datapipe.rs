//! Episode ingestion and training-pair construction, plus dataset
//! statistics and foresight score aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rule for choosing the future frame of a training pair: half the
/// subtask's remaining length (pretraining pairs) or the subtask's final
/// frame (policy fine-tuning goals).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OffsetPolicy {
    HalfLength,
    FinalState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskSegment {
    pub start_frame: u32,
    /// Inclusive.
    pub end_frame: u32,
    pub instruction: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub episode_id: String,
    pub fps: u32,
    pub frames_dir: String,
    pub frame_count: u32,
    pub source: String,
    pub subtasks: Vec<SubtaskSegment>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid manifest {episode_id:?}: {field}: {reason}")]
pub struct ManifestError {
    pub episode_id: String,
    pub field: &'static str,
    pub reason: String,
}

impl EpisodeManifest {
    pub fn validate(&self) -> Result<(), ManifestError> {
        let err = |field: &'static str, reason: String| ManifestError {
            episode_id: self.episode_id.clone(),
            field,
            reason,
        };
        if self.fps == 0 {
            return Err(err("fps", "must be positive".into()));
        }
        let mut prev_end: Option<u32> = None;
        for (i, s) in self.subtasks.iter().enumerate() {
            if s.start_frame > s.end_frame {
                return Err(err("subtasks", format!("segment {i} has start > end")));
            }
            if s.end_frame >= self.frame_count {
                return Err(err(
                    "subtasks",
                    format!("segment {i} ends at {} but frame_count is {}", s.end_frame, self.frame_count),
                ));
            }
            if let Some(pe) = prev_end {
                if s.start_frame <= pe {
                    return Err(err("subtasks", format!("segment {i} overlaps or is unordered")));
                }
            }
            prev_end = Some(s.end_frame);
        }
        Ok(())
    }
}

/// One (condition frame, future frame, instruction) supervision record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub episode_id: String,
    pub subtask_index: u32,
    pub cond_frame: u32,
    pub future_frame: u32,
    pub instruction: String,
    pub offset_policy: OffsetPolicy,
}

/// Condition frames sampled at 1-second intervals inside each subtask;
/// future frame chosen by the offset policy, clamped to the subtask end.
/// Pairs where the condition equals the future frame are dropped.
pub fn sample_pairs(
    manifest: &EpisodeManifest,
    policy: OffsetPolicy,
) -> Result<Vec<TrainingPair>, ManifestError> {
    manifest.validate()?;
    let stride = manifest.fps; // frames per second
    let mut out = Vec::new();
    for (si, seg) in manifest.subtasks.iter().enumerate() {
        let (s, e) = (seg.start_frame, seg.end_frame);
        let half = (e - s) / 2;
        let mut i = 0u32;
        loop {
            let cond = s + i * stride;
            if cond > e {
                break;
            }
            let future = match policy {
                OffsetPolicy::HalfLength => (cond + half).min(e),
                OffsetPolicy::FinalState => e,
            };
            if cond < future {
                out.push(TrainingPair {
                    episode_id: manifest.episode_id.clone(),
                    subtask_index: si as u32,
                    cond_frame: cond,
                    future_frame: future,
                    instruction: seg.instruction.clone(),
                    offset_policy: policy,
                });
            }
            i += 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SourceStats {
    pub episodes: u64,
    pub subtasks: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StatsReport {
    pub per_source: BTreeMap<String, SourceStats>,
    pub total_episodes: u64,
    pub total_subtasks: u64,
    pub pairs_half_length: u64,
    pub pairs_final_state: u64,
}

impl StatsReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "source\tepisodes\tsubtasks").unwrap();
        for (src, st) in &self.per_source {
            writeln!(s, "{src}\t{}\t{}", st.episodes, st.subtasks).unwrap();
        }
        writeln!(s, "total\t{}\t{}", self.total_episodes, self.total_subtasks).unwrap();
        writeln!(s, "pairs_half_length\t{}", self.pairs_half_length).unwrap();
        writeln!(s, "pairs_final_state\t{}", self.pairs_final_state).unwrap();
        s
    }
}

/// Full-enumeration dataset statistics over a set of manifests.
pub fn dataset_stats(manifests: &[EpisodeManifest]) -> Result<StatsReport, ManifestError> {
    let mut report = StatsReport::default();
    for m in manifests {
        m.validate()?;
        let entry = report.per_source.entry(m.source.clone()).or_default();
        entry.episodes += 1;
        entry.subtasks += m.subtasks.len() as u64;
        report.total_episodes += 1;
        report.total_subtasks += m.subtasks.len() as u64;
        report.pairs_half_length += sample_pairs(m, OffsetPolicy::HalfLength)?.len() as u64;
        report.pairs_final_state += sample_pairs(m, OffsetPolicy::FinalState)?.len() as u64;
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    InDist,
    Ood,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::InDist => "in-distribution",
            Split::Ood => "out-of-distribution",
        }
    }
}

/// One human (or rubric) judgment of a generated image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoreRecord {
    pub image_id: String,
    pub split: Split,
    pub fidelity: u8,
    pub quality: u8,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("score record line {line}: {reason}")]
pub struct ScoreParseError {
    pub line: usize,
    pub reason: String,
}

/// Parses the comma-separated score file: header row, then
/// `image_id,split,fidelity,quality` with split in {indist, ood} and
/// binary scores.
pub fn read_score_records(text: &str) -> Result<Vec<ScoreRecord>, ScoreParseError> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(ScoreParseError { line: 0, reason: "empty file".into() });
    };
    if header.trim() != "image_id,split,fidelity,quality" {
        return Err(ScoreParseError { line: 1, reason: format!("bad header {header:?}") });
    }
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let err = |reason: String| ScoreParseError { line: idx + 1, reason };
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", fields.len())));
        }
        let split = match fields[1].to_ascii_lowercase().as_str() {
            "indist" | "in-distribution" => Split::InDist,
            "ood" | "out-of-distribution" => Split::Ood,
            other => return Err(err(format!("unknown split {other:?}"))),
        };
        let bin = |s: &str| -> Result<u8, ScoreParseError> {
            match s {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(ScoreParseError {
                    line: idx + 1,
                    reason: format!("score must be 0 or 1, got {other:?}"),
                }),
            }
        };
        out.push(ScoreRecord {
            image_id: fields[0].to_string(),
            split,
            fidelity: bin(fields[2])?,
            quality: bin(fields[3])?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub split: Split,
    pub count: usize,
    pub fidelity_mean: f64,
    pub quality_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    pub warnings: Vec<String>,
}

impl ScoreTable {
    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "split\tn\tfidelity\tquality").unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{}\t{}\t{:.2}\t{:.2}",
                r.split.name(),
                r.count,
                r.fidelity_mean,
                r.quality_mean
            )
            .unwrap();
        }
        for w in &self.warnings {
            writeln!(s, "warning: {w}").unwrap();
        }
        s
    }
}

/// Mean fidelity/quality per split. Splits with no records are omitted
/// from the rows and flagged with a warning instead.
pub fn aggregate_scores(records: &[ScoreRecord]) -> ScoreTable {
    let mut table = ScoreTable::default();
    for split in [Split::InDist, Split::Ood] {
        let in_split: Vec<&ScoreRecord> = records.iter().filter(|r| r.split == split).collect();
        if in_split.is_empty() {
            table.warnings.push(format!("no records for split {}", split.name()));
            continue;
        }
        let n = in_split.len() as f64;
        table.rows.push(ScoreRow {
            split,
            count: in_split.len(),
            fidelity_mean: in_split.iter().map(|r| r.fidelity as f64).sum::<f64>() / n,
            quality_mean: in_split.iter().map(|r| r.quality as f64).sum::<f64>() / n,
        });
    }
    table
}

/// Reads every `manifest.json` under `dir` (recursively) plus any
/// `*.jsonl` file with one manifest per line.
pub fn load_manifests(dir: &Path) -> std::io::Result<Vec<EpisodeManifest>> {
    let mut out = Vec::new();
    fn walk(dir: &Path, out: &mut Vec<EpisodeManifest>) -> std::io::Result<()> {
        let mut entries: Vec<_> =
            fs::read_dir(dir)?.collect::<Result<Vec<_>, _>>()?.into_iter().collect();
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let path = entry.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.file_name().is_some_and(|n| n == "manifest.json") {
                let text = fs::read_to_string(&path)?;
                let m: EpisodeManifest = serde_json::from_str(&text).map_err(|e| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("{}: {e}", path.display()),
                    )
                })?;
                out.push(m);
            } else if path.extension().is_some_and(|e| e == "jsonl") {
                let text = fs::read_to_string(&path)?;
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let m: EpisodeManifest = serde_json::from_str(line).map_err(|e| {
                        std::io::Error::new(
                            std::io::ErrorKind::InvalidData,
                            format!("{}: {e}", path.display()),
                        )
                    })?;
                    out.push(m);
                }
            }
        }
        Ok(())
    }
    walk(dir, &mut out)?;
    out.sort_by(|a, b| a.episode_id.cmp(&b.episode_id));
    Ok(out)
}

/// Writes pairs as line-delimited records, ordered for reproducibility.
pub fn write_pairs(path: &Path, pairs: &[TrainingPair]) -> std::io::Result<()> {
    let mut sorted: Vec<&TrainingPair> = pairs.iter().collect();
    sorted.sort_by_key(|p| (p.episode_id.clone(), p.subtask_index, p.cond_frame));
    let mut f = fs::File::create(path)?;
    for p in sorted {
        writeln!(f, "{}", serde_json::to_string(p).expect("pair serializes"))?;
    }
    Ok(())
}
