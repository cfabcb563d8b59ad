//! Domain types shared by every stage: identifiers, the annotation taxonomy,
//! the line-delimited manifest, the watched-pair policy and verdicts.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate utterance id '{id}'")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: inconsistent annotation: {message}")]
    Integrity { line: usize, message: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid identifier: {0}")]
    InvalidId(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Opaque non-empty speaker identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SpeakerId(String);

impl SpeakerId {
    pub fn new(value: impl Into<String>) -> Result<Self, ModelError> {
        let value = value.into();
        if value.is_empty() {
            return Err(ModelError::InvalidId("speaker id must be non-empty".into()));
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SpeakerId {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<SpeakerId> for String {
    fn from(id: SpeakerId) -> Self {
        id.0
    }
}

impl fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topic {
    Politics,
    Medicine,
    Education,
    Laws,
    Finance,
    Other,
}

impl Topic {
    pub const ALL: [Topic; 6] = [
        Topic::Politics,
        Topic::Medicine,
        Topic::Education,
        Topic::Laws,
        Topic::Finance,
        Topic::Other,
    ];

    /// Topics a policy may watch; `Other` never is.
    pub const WATCHABLE: [Topic; 5] = [
        Topic::Politics,
        Topic::Medicine,
        Topic::Education,
        Topic::Laws,
        Topic::Finance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Topic::Politics => "politics",
            Topic::Medicine => "medicine",
            Topic::Education => "education",
            Topic::Laws => "laws",
            Topic::Finance => "finance",
            Topic::Other => "other",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Topic {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Topic::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ModelError::InvalidId(format!("unknown topic '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Recording,
    SyntheticOrdinary,
    SyntheticCelebrityOtherTopic,
    SyntheticCelebritySpecificTopic,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Recording,
        Category::SyntheticOrdinary,
        Category::SyntheticCelebrityOtherTopic,
        Category::SyntheticCelebritySpecificTopic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Recording => "recording",
            Category::SyntheticOrdinary => "synthetic_ordinary",
            Category::SyntheticCelebrityOtherTopic => "synthetic_celebrity_other_topic",
            Category::SyntheticCelebritySpecificTopic => "synthetic_celebrity_specific_topic",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub synthetic: bool,
    pub celebrity: bool,
    pub topic: Topic,
    pub category: Category,
    pub generator_system: Option<String>,
}

impl GroundTruth {
    pub fn is_misinformation(&self) -> bool {
        self.category == Category::SyntheticCelebritySpecificTopic
    }

    /// Checks the flag/category consistency rules. Violations are reported,
    /// never repaired.
    pub fn check(&self) -> Result<(), String> {
        let expect_synthetic = self.category != Category::Recording;
        if self.synthetic != expect_synthetic {
            return Err(format!(
                "category {} requires synthetic={}",
                self.category, expect_synthetic
            ));
        }
        match self.category {
            Category::SyntheticOrdinary if self.celebrity => {
                return Err("synthetic_ordinary requires celebrity=false".into())
            }
            Category::SyntheticCelebrityOtherTopic | Category::SyntheticCelebritySpecificTopic
                if !self.celebrity =>
            {
                return Err(format!("category {} requires celebrity=true", self.category))
            }
            Category::SyntheticCelebritySpecificTopic if self.topic == Topic::Other => {
                return Err("a watched topic cannot be 'other'".into())
            }
            _ => {}
        }
        match &self.generator_system {
            Some(s) if s.is_empty() => Err("generator_system must be non-empty when present".into()),
            Some(_) if self.category == Category::Recording => {
                Err("recordings carry no generator_system".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: SpeakerId,
    pub duration_s: f64,
    pub ground_truth: GroundTruth,
    pub provider_key: String,
}

/// One manifest line, in serialization key order.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    id: String,
    speaker: String,
    duration_s: f64,
    synthetic: bool,
    celebrity: bool,
    topic: Topic,
    category: Category,
    provider_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator_system: Option<String>,
}

const MANIFEST_KEYS: [&str; 9] = [
    "id",
    "speaker",
    "duration_s",
    "synthetic",
    "celebrity",
    "topic",
    "category",
    "provider_key",
    "generator_system",
];

impl From<&Utterance> for ManifestRecord {
    fn from(u: &Utterance) -> Self {
        let gt = &u.ground_truth;
        ManifestRecord {
            id: u.id.clone(),
            speaker: u.speaker.as_str().to_owned(),
            duration_s: u.duration_s,
            synthetic: gt.synthetic,
            celebrity: gt.celebrity,
            topic: gt.topic,
            category: gt.category,
            provider_key: u.provider_key.clone(),
            generator_system: gt.generator_system.clone(),
        }
    }
}

fn record_to_utterance(rec: ManifestRecord, line: usize) -> Result<Utterance, ModelError> {
    let parse = |message: String| ModelError::Parse { line, message };
    if rec.id.is_empty() {
        return Err(parse("empty id".into()));
    }
    if rec.provider_key.is_empty() {
        return Err(parse("empty provider_key".into()));
    }
    if !(rec.duration_s.is_finite() && rec.duration_s > 0.0) {
        return Err(parse(format!("duration_s must be positive, got {}", rec.duration_s)));
    }
    let speaker = SpeakerId::new(rec.speaker).map_err(|e| parse(e.to_string()))?;
    let ground_truth = GroundTruth {
        synthetic: rec.synthetic,
        celebrity: rec.celebrity,
        topic: rec.topic,
        category: rec.category,
        generator_system: rec.generator_system,
    };
    ground_truth
        .check()
        .map_err(|message| ModelError::Integrity { line, message })?;
    Ok(Utterance {
        id: rec.id,
        speaker,
        duration_s: rec.duration_s,
        ground_truth,
        provider_key: rec.provider_key,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ManifestOptions {
    /// Reject unknown keys instead of ignoring them with a warning.
    pub strict: bool,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        Self { strict: true }
    }
}

/// Streaming manifest parser; yields one utterance per non-blank line.
pub struct ManifestReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
    seen: HashSet<String>,
    options: ManifestOptions,
    warnings: Vec<String>,
}

impl<R: BufRead> ManifestReader<R> {
    pub fn new(reader: R, options: ManifestOptions) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            seen: HashSet::new(),
            options,
            warnings: Vec::new(),
        }
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn parse_line(&mut self, text: &str) -> Result<Utterance, ModelError> {
        let line = self.line_no;
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ModelError::Parse {
            line,
            message: e.to_string(),
        })?;
        let serde_json::Value::Object(mut map) = value else {
            return Err(ModelError::Parse {
                line,
                message: "record is not an object".into(),
            });
        };
        let unknown: Vec<String> = map
            .keys()
            .filter(|k| !MANIFEST_KEYS.contains(&k.as_str()))
            .cloned()
            .collect();
        for key in unknown {
            if self.options.strict {
                return Err(ModelError::UnknownKey { line, key });
            }
            self.warnings
                .push(format!("line {line}: ignoring unknown key '{key}'"));
            map.remove(&key);
        }
        let rec: ManifestRecord =
            serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| ModelError::Parse {
                line,
                message: e.to_string(),
            })?;
        let utt = record_to_utterance(rec, line)?;
        if !self.seen.insert(utt.id.clone()) {
            return Err(ModelError::DuplicateId { line, id: utt.id });
        }
        Ok(utt)
    }
}

impl<R: BufRead> Iterator for ManifestReader<R> {
    type Item = Result<Utterance, ModelError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(self.parse_line(&text));
        }
    }
}

#[derive(Debug, Default)]
pub struct Manifest {
    pub utterances: Vec<Utterance>,
    pub warnings: Vec<String>,
}

pub fn parse_manifest<R: BufRead>(
    reader: R,
    options: ManifestOptions,
) -> Result<Manifest, ModelError> {
    let mut it = ManifestReader::new(reader, options);
    let utterances = it.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(Manifest {
        utterances,
        warnings: it.warnings,
    })
}

pub fn write_manifest<W: Write>(mut w: W, utterances: &[Utterance]) -> io::Result<()> {
    for u in utterances {
        serde_json::to_writer(&mut w, &ManifestRecord::from(u))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// One (speaker, topic) entry of a policy file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WatchedPair {
    pub speaker: SpeakerId,
    pub topic: Topic,
}

/// Watched (speaker, topic) pairs. Membership of the predicted pair means
/// misinformation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicySet {
    pairs: BTreeSet<(SpeakerId, Topic)>,
}

impl PolicySet {
    pub fn new(pairs: impl IntoIterator<Item = WatchedPair>) -> Result<Self, ModelError> {
        let mut set = BTreeSet::new();
        for p in pairs {
            if p.topic == Topic::Other {
                return Err(ModelError::InvalidPolicy(format!(
                    "pair ({}, other): 'other' is never a watched topic",
                    p.speaker
                )));
            }
            set.insert((p.speaker, p.topic));
        }
        Ok(Self { pairs: set })
    }

    pub fn contains(&self, speaker: &SpeakerId, topic: Topic) -> bool {
        self.pairs.contains(&(speaker.clone(), topic))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = WatchedPair> + '_ {
        self.pairs.iter().map(|(s, t)| WatchedPair {
            speaker: s.clone(),
            topic: *t,
        })
    }

    pub fn speakers(&self) -> BTreeSet<SpeakerId> {
        self.pairs.iter().map(|(s, _)| s.clone()).collect()
    }

    pub fn topics(&self) -> BTreeSet<Topic> {
        self.pairs.iter().map(|(_, t)| *t).collect()
    }

    pub fn insert(&mut self, pair: WatchedPair) -> Result<bool, ModelError> {
        if pair.topic == Topic::Other {
            return Err(ModelError::InvalidPolicy(format!(
                "pair ({}, other): 'other' is never a watched topic",
                pair.speaker
            )));
        }
        Ok(self.pairs.insert((pair.speaker, pair.topic)))
    }

    pub fn remove(&mut self, speaker: &SpeakerId, topic: Topic) -> bool {
        self.pairs.remove(&(speaker.clone(), topic))
    }

    /// Reports watched speakers that never appear in `manifest`.
    pub fn validate(&self, manifest: &[Utterance]) -> PolicyReport {
        let present: HashSet<&SpeakerId> = manifest.iter().map(|u| &u.speaker).collect();
        let missing_speakers = self
            .speakers()
            .into_iter()
            .filter(|s| !present.contains(s))
            .collect();
        PolicyReport { missing_speakers }
    }

    pub fn read_json<R: io::Read>(reader: R) -> Result<Self, ModelError> {
        let pairs: Vec<WatchedPair> = serde_json::from_reader(reader)
            .map_err(|e| ModelError::InvalidPolicy(e.to_string()))?;
        Self::new(pairs)
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> io::Result<()> {
        let pairs: Vec<WatchedPair> = self.pairs().collect();
        serde_json::to_writer_pretty(&mut w, &pairs)?;
        w.write_all(b"\n")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PolicyReport {
    pub missing_speakers: Vec<SpeakerId>,
}

impl PolicyReport {
    pub fn findings(&self) -> usize {
        self.missing_speakers.len()
    }
}

/// Validates raw policy pairs against a manifest: an `other` pair is an
/// error, watched speakers absent from the manifest are warnings.
pub fn validate_policy(
    pairs: &[WatchedPair],
    manifest: &[Utterance],
) -> Result<PolicyReport, ModelError> {
    Ok(PolicySet::new(pairs.iter().cloned())?.validate(manifest))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Misinformation,
    NonMisinformation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    BonafideAudio,
    SpeakerNotWatchlisted,
    TopicNotWatched,
    WatchedPairMatched,
}

/// Cascade stage, used to tag errors and attribute misses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Deepfake,
    Speaker,
    Topic,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Deepfake => "deepfake",
            Stage::Speaker => "speaker",
            Stage::Topic => "topic",
        })
    }
}

/// Final decision for one utterance, carrying every field computed up to
/// the stage that terminated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub utterance_id: String,
    pub outcome: Outcome,
    pub reason: Reason,
    pub matched_speaker: Option<SpeakerId>,
    pub similarity: Option<f64>,
    pub predicted_topic: Option<Topic>,
}

impl Verdict {
    pub fn bonafide(utterance_id: impl Into<String>) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            outcome: Outcome::NonMisinformation,
            reason: Reason::BonafideAudio,
            matched_speaker: None,
            similarity: None,
            predicted_topic: None,
        }
    }

    pub fn speaker_not_watchlisted(utterance_id: impl Into<String>, similarity: f64) -> Self {
        Self {
            utterance_id: utterance_id.into(),
            outcome: Outcome::NonMisinformation,
            reason: Reason::SpeakerNotWatchlisted,
            matched_speaker: None,
            similarity: Some(similarity),
            predicted_topic: None,
        }
    }

    /// Stage-3 verdict; `watched` is the policy lookup result.
    pub fn classified(
        utterance_id: impl Into<String>,
        speaker: SpeakerId,
        similarity: f64,
        topic: Topic,
        watched: bool,
    ) -> Self {
        let (outcome, reason) = if watched {
            (Outcome::Misinformation, Reason::WatchedPairMatched)
        } else {
            (Outcome::NonMisinformation, Reason::TopicNotWatched)
        };
        Self {
            utterance_id: utterance_id.into(),
            outcome,
            reason,
            matched_speaker: Some(speaker),
            similarity: Some(similarity),
            predicted_topic: Some(topic),
        }
    }

    pub fn is_misinformation(&self) -> bool {
        self.outcome == Outcome::Misinformation
    }

    pub fn check(&self) -> Result<(), String> {
        let expect = if self.reason == Reason::WatchedPairMatched {
            Outcome::Misinformation
        } else {
            Outcome::NonMisinformation
        };
        if self.outcome != expect {
            return Err(format!("outcome {:?} contradicts reason {:?}", self.outcome, self.reason));
        }
        let fields = (
            self.matched_speaker.is_some(),
            self.similarity.is_some(),
            self.predicted_topic.is_some(),
        );
        let ok = match self.reason {
            Reason::BonafideAudio => fields == (false, false, false),
            Reason::SpeakerNotWatchlisted => fields == (false, true, false),
            Reason::TopicNotWatched | Reason::WatchedPairMatched => fields == (true, true, true),
        };
        if !ok {
            return Err(format!("fields present do not match reason {:?}", self.reason));
        }
        if let Some(s) = self.similarity {
            if !(-1.0..=1.0).contains(&s) {
                return Err(format!("similarity {s} outside [-1, 1]"));
            }
        }
        Ok(())
    }
}

/// A stage failure recorded in place of a verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct FailedVerdict {
    pub utterance_id: String,
    pub stage: Stage,
    pub message: String,
}

/// One line of verdict output: a decision or a stage error.
#[derive(Debug, Clone, PartialEq)]
pub enum VerdictRecord {
    Decided(Verdict),
    Failed(FailedVerdict),
}

impl VerdictRecord {
    pub fn utterance_id(&self) -> &str {
        match self {
            VerdictRecord::Decided(v) => &v.utterance_id,
            VerdictRecord::Failed(f) => &f.utterance_id,
        }
    }

    pub fn verdict(&self) -> Option<&Verdict> {
        match self {
            VerdictRecord::Decided(v) => Some(v),
            VerdictRecord::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LineOutcome {
    Misinformation,
    NonMisinformation,
    Error,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictLine {
    utterance_id: String,
    outcome: LineOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reason: Option<Reason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matched_speaker: Option<SpeakerId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predicted_topic: Option<Topic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl From<&VerdictRecord> for VerdictLine {
    fn from(r: &VerdictRecord) -> Self {
        match r {
            VerdictRecord::Decided(v) => VerdictLine {
                utterance_id: v.utterance_id.clone(),
                outcome: match v.outcome {
                    Outcome::Misinformation => LineOutcome::Misinformation,
                    Outcome::NonMisinformation => LineOutcome::NonMisinformation,
                },
                reason: Some(v.reason),
                matched_speaker: v.matched_speaker.clone(),
                similarity: v.similarity,
                predicted_topic: v.predicted_topic,
                stage: None,
                error: None,
            },
            VerdictRecord::Failed(f) => VerdictLine {
                utterance_id: f.utterance_id.clone(),
                outcome: LineOutcome::Error,
                reason: None,
                matched_speaker: None,
                similarity: None,
                predicted_topic: None,
                stage: Some(f.stage),
                error: Some(f.message.clone()),
            },
        }
    }
}

impl TryFrom<VerdictLine> for VerdictRecord {
    type Error = String;
    fn try_from(l: VerdictLine) -> Result<Self, String> {
        let outcome = match l.outcome {
            LineOutcome::Error => {
                return match (l.stage, l.error) {
                    (Some(stage), Some(message)) => Ok(VerdictRecord::Failed(FailedVerdict {
                        utterance_id: l.utterance_id,
                        stage,
                        message,
                    })),
                    _ => Err("error verdict needs 'stage' and 'error'".into()),
                };
            }
            LineOutcome::Misinformation => Outcome::Misinformation,
            LineOutcome::NonMisinformation => Outcome::NonMisinformation,
        };
        if l.stage.is_some() || l.error.is_some() {
            return Err("'stage'/'error' only allowed on error verdicts".into());
        }
        let v = Verdict {
            utterance_id: l.utterance_id,
            outcome,
            reason: l.reason.ok_or("missing 'reason'")?,
            matched_speaker: l.matched_speaker,
            similarity: l.similarity,
            predicted_topic: l.predicted_topic,
        };
        v.check()?;
        Ok(VerdictRecord::Decided(v))
    }
}

pub fn write_verdicts<W: Write>(mut w: W, records: &[VerdictRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, &VerdictLine::from(r))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_verdicts<R: BufRead>(reader: R) -> Result<Vec<VerdictRecord>, ModelError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let parsed: VerdictLine = serde_json::from_str(&text).map_err(|e| ModelError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let rec = VerdictRecord::try_from(parsed).map_err(|message| ModelError::Integrity {
            line: line_no,
            message,
        })?;
        out.push(rec);
    }
    Ok(out)
}
