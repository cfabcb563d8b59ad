//! Error-rate reports over verdicts and ground truth.
//!
//! Every cell is an exact `(errors, total)` pair; percentages are derived
//! only when rendering, and micro averages are always recomputed from the
//! summed pairs.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Category, Outcome, Reason, Topic, Utterance, VerdictRecord};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no verdict for utterance '{0}'")]
    MissingVerdict(String),
    #[error("verdict for '{0}' has no manifest entry")]
    UnknownVerdict(String),
    #[error("more than one verdict for utterance '{0}'")]
    DuplicateVerdict(String),
    #[error("manifest contains no misinformation utterances")]
    EmptyMisinformation,
}

/// Exact error count over a sample count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub errors: u64,
    pub total: u64,
}

impl Cell {
    pub fn new(errors: u64, total: u64) -> Self {
        debug_assert!(errors <= total);
        Self { errors, total }
    }

    /// Percentage, or `None` for an empty cell.
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| 100.0 * self.errors as f64 / self.total as f64)
    }

    /// Two-decimal percentage rounded half-up on the exact fraction, or
    /// "–" for an empty cell.
    pub fn render_rate(&self) -> String {
        if self.total == 0 {
            return "–".to_owned();
        }
        let (e, t) = (u128::from(self.errors), u128::from(self.total));
        let hundredths = (20_000 * e + t) / (2 * t);
        format!("{}.{:02}", hundredths / 100, hundredths % 100)
    }

    fn add(&mut self, error: bool) {
        self.total += 1;
        self.errors += u64::from(error);
    }
}

impl std::ops::Add for Cell {
    type Output = Cell;
    fn add(self, o: Cell) -> Cell {
        Cell::new(self.errors + o.errors, self.total + o.total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicRow {
    pub topic: Topic,
    pub cell: Cell,
}

/// Per-topic error table with its micro average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageReport {
    pub rows: Vec<TopicRow>,
    pub micro: Cell,
}

impl StageReport {
    /// Rows for the five watchable topics always appear (possibly empty);
    /// "other" appears only when it has samples.
    pub fn from_cells(cells: &[Cell; 6]) -> Self {
        let rows: Vec<TopicRow> = Topic::ALL
            .iter()
            .filter(|t| **t != Topic::Other || cells[t.index()].total > 0)
            .map(|&topic| TopicRow {
                topic,
                cell: cells[topic.index()],
            })
            .collect();
        let micro = rows.iter().fold(Cell::default(), |acc, r| acc + r.cell);
        Self { rows, micro }
    }

    pub fn cell(&self, topic: Topic) -> Option<Cell> {
        self.rows.iter().find(|r| r.topic == topic).map(|r| r.cell)
    }

    pub fn micro_rate(&self) -> Option<f64> {
        self.micro.rate()
    }
}

/// Count-weighted mean of per-stratum percentages: Σ rate·n / Σ n.
pub fn micro_from_rates(rates_and_counts: &[(f64, u64)]) -> f64 {
    let total: u64 = rates_and_counts.iter().map(|(_, n)| n).sum();
    let weighted: f64 = rates_and_counts.iter().map(|(r, n)| r * *n as f64).sum();
    weighted / total as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountingMode {
    /// A misinformation sample counts as detected when its outcome is
    /// misinformation, whichever watchlisted speaker matched.
    PairOnly,
    /// Detection also requires the matched speaker to be the true one.
    #[default]
    PairAndSpeaker,
}

impl CountingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CountingMode::PairOnly => "pair_only",
            CountingMode::PairAndSpeaker => "pair_and_speaker",
        }
    }
}

impl FromStr for CountingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pair_only" => Ok(CountingMode::PairOnly),
            "pair_and_speaker" => Ok(CountingMode::PairAndSpeaker),
            _ => Err(format!("unknown counting mode '{s}' (pair_only | pair_and_speaker)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumRow {
    pub category: Category,
    pub total: u64,
    /// Utterances whose verdict outcome is misinformation.
    pub flagged: u64,
    /// Utterances with an error record instead of a verdict.
    pub failed: u64,
}

/// Where each missed misinformation sample was lost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attribution {
    pub deepfake: u64,
    pub speaker: u64,
    pub topic: u64,
    pub failed: u64,
}

impl Attribution {
    pub fn sum(&self) -> u64 {
        self.deepfake + self.speaker + self.topic + self.failed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributionRow {
    pub topic: Topic,
    pub counts: Attribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionReport {
    pub mode: CountingMode,
    pub strata: Vec<StratumRow>,
    /// Per-topic misses over the misinformation stratum.
    pub misinformation: StageReport,
    /// Flagged utterances in each of the three other strata.
    pub false_positives: Vec<(Category, Cell)>,
    /// Stage-attributed misses per topic; each row sums to that topic's
    /// error count.
    pub attribution: Vec<AttributionRow>,
    /// Speaker-stage errors on the misinformation stratum.
    pub speaker_stage: StageReport,
}

impl DetectionReport {
    pub fn false_positive(&self, category: Category) -> Option<Cell> {
        self.false_positives
            .iter()
            .find(|(c, _)| *c == category)
            .map(|(_, cell)| *cell)
    }
}

fn align<'a>(
    verdicts: &'a [VerdictRecord],
    manifest: &'a [Utterance],
) -> Result<Vec<(&'a Utterance, &'a VerdictRecord)>, EvalError> {
    let mut by_id: HashMap<&str, &VerdictRecord> = HashMap::with_capacity(verdicts.len());
    for v in verdicts {
        if by_id.insert(v.utterance_id(), v).is_some() {
            return Err(EvalError::DuplicateVerdict(v.utterance_id().to_owned()));
        }
    }
    let mut pairs = Vec::with_capacity(manifest.len());
    for u in manifest {
        let v = by_id
            .remove(u.id.as_str())
            .ok_or_else(|| EvalError::MissingVerdict(u.id.clone()))?;
        pairs.push((u, v));
    }
    if let Some(v) = verdicts.iter().find(|v| by_id.contains_key(v.utterance_id())) {
        return Err(EvalError::UnknownVerdict(v.utterance_id().to_owned()));
    }
    Ok(pairs)
}

fn speaker_error(u: &Utterance, v: &VerdictRecord) -> bool {
    match v.verdict() {
        Some(v) => v.matched_speaker.as_ref() != Some(&u.speaker),
        None => true,
    }
}

/// Speaker-stage errors over the misinformation stratum: an utterance is
/// an error unless retrieval matched its true speaker. Verdicts are paired
/// with manifest entries by utterance id.
pub fn eval_speaker_stage(
    verdicts: &[VerdictRecord],
    manifest: &[Utterance],
) -> Result<StageReport, EvalError> {
    let mut cells = [Cell::default(); 6];
    for (u, v) in align(verdicts, manifest)? {
        if u.ground_truth.is_misinformation() {
            cells[u.ground_truth.topic.index()].add(speaker_error(u, v));
        }
    }
    Ok(StageReport::from_cells(&cells))
}

/// Topic-stage errors, stratified by true topic.
pub fn eval_topic_stage(predictions: &[Topic], labels: &[Topic]) -> Result<StageReport, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut cells = [Cell::default(); 6];
    for (p, l) in predictions.iter().zip(labels) {
        cells[l.index()].add(p != l);
    }
    Ok(StageReport::from_cells(&cells))
}

pub fn eval_detection(
    verdicts: &[VerdictRecord],
    manifest: &[Utterance],
    mode: CountingMode,
) -> Result<DetectionReport, EvalError> {
    let pairs = align(verdicts, manifest)?;
    let mut strata: Vec<StratumRow> = Category::ALL
        .iter()
        .map(|&category| StratumRow {
            category,
            total: 0,
            flagged: 0,
            failed: 0,
        })
        .collect();
    let mut misses = [Cell::default(); 6];
    let mut speaker = [Cell::default(); 6];
    let mut attribution = [Attribution::default(); 6];

    for (u, record) in pairs {
        let gt = &u.ground_truth;
        let row = &mut strata[gt.category.index()];
        row.total += 1;
        let verdict = record.verdict();
        match verdict {
            Some(v) if v.outcome == Outcome::Misinformation => row.flagged += 1,
            Some(_) => {}
            None => row.failed += 1,
        }
        if !gt.is_misinformation() {
            continue;
        }
        let t = gt.topic.index();
        let wrong_speaker = speaker_error(u, record);
        speaker[t].add(wrong_speaker);
        let Some(v) = verdict else {
            misses[t].add(true);
            attribution[t].failed += 1;
            continue;
        };
        let error = match mode {
            CountingMode::PairOnly => v.outcome != Outcome::Misinformation,
            CountingMode::PairAndSpeaker => {
                v.outcome != Outcome::Misinformation || wrong_speaker
            }
        };
        misses[t].add(error);
        if error {
            let a = &mut attribution[t];
            match v.reason {
                Reason::BonafideAudio => a.deepfake += 1,
                Reason::SpeakerNotWatchlisted => a.speaker += 1,
                _ if wrong_speaker => a.speaker += 1,
                _ => a.topic += 1,
            }
        }
    }

    let misinformation = StageReport::from_cells(&misses);
    if misinformation.micro.total == 0 {
        return Err(EvalError::EmptyMisinformation);
    }
    let false_positives = strata
        .iter()
        .filter(|s| s.category != Category::SyntheticCelebritySpecificTopic)
        .map(|s| (s.category, Cell::new(s.flagged, s.total)))
        .collect();
    let attribution = misinformation
        .rows
        .iter()
        .map(|r| AttributionRow {
            topic: r.topic,
            counts: attribution[r.topic.index()],
        })
        .collect();
    Ok(DetectionReport {
        mode,
        strata,
        misinformation,
        false_positives,
        attribution,
        speaker_stage: StageReport::from_cells(&speaker),
    })
}

/// Machine-readable report document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    SpeakerStage(StageReport),
    TopicStage(StageReport),
    Detection(DetectionReport),
}

/// Human-readable table plus the JSON object it was rendered from.
pub fn render_report(report: &Report) -> (String, serde_json::Value) {
    let value = serde_json::to_value(report).expect("report serializes");
    (render_table(report), value)
}

pub fn render_table(report: &Report) -> String {
    let mut out = String::new();
    match report {
        Report::SpeakerStage(r) => {
            out.push_str("speaker stage (misinformation stratum)\n");
            stage_table(&mut out, r);
        }
        Report::TopicStage(r) => {
            out.push_str("topic stage\n");
            stage_table(&mut out, r);
        }
        Report::Detection(r) => detection_table(&mut out, r),
    }
    out
}

fn stage_table(out: &mut String, r: &StageReport) {
    let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>9}", "topic", "samples", "errors", "rate (%)");
    for row in &r.rows {
        cell_line(out, row.topic.as_str(), row.cell);
    }
    cell_line(out, "micro", r.micro);
}

fn cell_line(out: &mut String, label: &str, c: Cell) {
    let _ = writeln!(
        out,
        "{:<10} {:>8} {:>8} {:>9}",
        label,
        c.total,
        c.errors,
        c.render_rate()
    );
}

fn detection_table(out: &mut String, r: &DetectionReport) {
    let _ = writeln!(out, "misinformation detection (mode: {})", r.mode.as_str());
    out.push('\n');
    let _ = writeln!(out, "{:<36} {:>8} {:>8} {:>8}", "stratum", "samples", "flagged", "failed");
    for s in &r.strata {
        let _ = writeln!(
            out,
            "{:<36} {:>8} {:>8} {:>8}",
            s.category.as_str(),
            s.total,
            s.flagged,
            s.failed
        );
    }
    out.push('\n');
    out.push_str("missed misinformation\n");
    stage_table(out, &r.misinformation);
    out.push('\n');
    out.push_str("speaker stage (misinformation stratum)\n");
    stage_table(out, &r.speaker_stage);
    out.push('\n');
    let _ = writeln!(
        out,
        "{:<10} {:>8} {:>8} {:>8} {:>8}",
        "attributed", "deepfake", "speaker", "topic", "failed"
    );
    for a in &r.attribution {
        let c = &a.counts;
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>8} {:>8} {:>8}",
            a.topic.as_str(),
            c.deepfake,
            c.speaker,
            c.topic,
            c.failed
        );
    }
    out.push('\n');
    let _ = writeln!(out, "{:<36} {:>8} {:>8} {:>9}", "false positives", "samples", "flagged", "rate (%)");
    for (category, c) in &r.false_positives {
        let _ = writeln!(
            out,
            "{:<36} {:>8} {:>8} {:>9}",
            category.as_str(),
            c.total,
            c.errors,
            c.render_rate()
        );
    }
}
