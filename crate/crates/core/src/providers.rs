//! Stage inputs. The engine never sees audio: embeddings, transcripts and
//! deepfake decisions are fetched by `provider_key` from pluggable sources.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Read, Write};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{self, ByteReader, FormatError};
use crate::model::{SpeakerId, Utterance};
use crate::rng::keyed_rng;
use crate::speakerdb::Embedding;

const EMB_MAGIC: &[u8; 8] = b"SPMISEMB";
const EMB_VERSION: u16 = 1;
const UNIT_NORM_TOL: f64 = 1e-6;

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("missing feature for key '{0}'")]
    MissingFeature(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("bad provider key '{key}': {message}")]
    Key { key: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("stored vector for '{0}' is zero or non-finite")]
    BadVector(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    /// Unit-norm embedding for `key`.
    fn embedding(&self, key: &str) -> Result<Embedding, ProviderError>;
}

pub trait TranscriptProvider: Send + Sync {
    fn transcript(&self, key: &str) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeepfakeDecision {
    Synthetic,
    Bonafide,
}

pub trait DeepfakeProvider: Send + Sync {
    fn decide(&self, utterance: &Utterance) -> Result<DeepfakeDecision, ProviderError>;
}

/// Keyed `f32` vectors backed by the `SPMISEMB` file format.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    keys: Vec<String>,
    values: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            keys: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    /// Inserts or replaces the vector stored under `key`.
    pub fn insert(&mut self, key: impl Into<String>, values: &[f32]) -> Result<(), ProviderError> {
        if values.len() != self.dim {
            return Err(ProviderError::Dim {
                expected: self.dim,
                got: values.len(),
            });
        }
        let key = key.into();
        match self.index.get(&key) {
            Some(&i) => self.values[i * self.dim..(i + 1) * self.dim].copy_from_slice(values),
            None => {
                self.index.insert(key.clone(), self.keys.len());
                self.keys.push(key);
                self.values.extend_from_slice(values);
            }
        }
        Ok(())
    }

    /// Raw stored values, without normalization.
    pub fn raw(&self, key: &str) -> Option<&[f32]> {
        self.index
            .get(key)
            .map(|&i| &self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), ProviderError> {
        w.write_all(EMB_MAGIC)?;
        binio::write_u16(&mut w, EMB_VERSION)?;
        binio::write_u32(&mut w, self.dim as u32)?;
        binio::write_u64(&mut w, self.keys.len() as u64)?;
        for (i, key) in self.keys.iter().enumerate() {
            binio::write_string(&mut w, key)?;
            binio::write_f32_slice(&mut w, &self.values[i * self.dim..(i + 1) * self.dim])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self, ProviderError> {
        let mut r = ByteReader::new(r);
        r.expect_magic(EMB_MAGIC)?;
        let at = r.offset();
        let version = r.u16()?;
        if version != EMB_VERSION {
            return Err(r.invalid(at, format!("unsupported version {version}")).into());
        }
        let at = r.offset();
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(r.invalid(at, "dimension is zero").into());
        }
        let count = r.u64()?;
        let mut store = Self::new(dim);
        for _ in 0..count {
            let at = r.offset();
            let key = r.string()?;
            if store.index.contains_key(&key) {
                return Err(r.invalid(at, format!("duplicate key '{key}'")).into());
            }
            store.index.insert(key.clone(), store.keys.len());
            store.keys.push(key);
            r.f32_into(dim, &mut store.values)?;
        }
        r.expect_eof()?;
        Ok(store)
    }
}

impl EmbeddingProvider for EmbeddingStore {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Returns the stored vector, re-normalized when its norm is off by more
    /// than 1e-6.
    fn embedding(&self, key: &str) -> Result<Embedding, ProviderError> {
        let raw = self
            .raw(key)
            .ok_or_else(|| ProviderError::MissingFeature(key.to_owned()))?;
        let norm = raw
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(ProviderError::BadVector(key.to_owned()));
        }
        let values = if (norm - 1.0).abs() > UNIT_NORM_TOL {
            raw.iter().map(|&v| (f64::from(v) / norm) as f32).collect()
        } else {
            raw.to_vec()
        };
        Embedding::new(values).map_err(|_| ProviderError::BadVector(key.to_owned()))
    }
}

fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(
    reader: R,
) -> Result<Vec<(usize, T)>, ProviderError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&text).map_err(|e| ProviderError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TranscriptLine {
    key: String,
    text: String,
}

/// Key → transcript text, in insertion order; line-delimited `{key, text}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TranscriptStore {
    keys: Vec<String>,
    texts: HashMap<String, String>,
}

impl TranscriptStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, text: impl Into<String>) {
        let key = key.into();
        if self.texts.insert(key.clone(), text.into()).is_none() {
            self.keys.push(key);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.texts.get(key).map(String::as_str)
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, ProviderError> {
        let mut store = Self::new();
        for (line, rec) in read_jsonl::<_, TranscriptLine>(reader)? {
            if store.texts.contains_key(&rec.key) {
                return Err(ProviderError::Parse {
                    line,
                    message: format!("duplicate key '{}'", rec.key),
                });
            }
            store.insert(rec.key, rec.text);
        }
        Ok(store)
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        for key in &self.keys {
            let line = TranscriptLine {
                key: key.clone(),
                text: self.texts[key].clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl TranscriptProvider for TranscriptStore {
    fn transcript(&self, key: &str) -> Result<String, ProviderError> {
        self.get(key)
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::MissingFeature(key.to_owned()))
    }
}

/// Stage-1 stand-in that returns the ground-truth synthetic flag.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleDeepfake;

impl DeepfakeProvider for OracleDeepfake {
    fn decide(&self, utterance: &Utterance) -> Result<DeepfakeDecision, ProviderError> {
        Ok(if utterance.ground_truth.synthetic {
            DeepfakeDecision::Synthetic
        } else {
            DeepfakeDecision::Bonafide
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreLine {
    key: String,
    score: f64,
}

/// Externally computed anti-spoofing scores in [0, 1]; `score >= threshold`
/// means synthetic.
#[derive(Debug, Clone)]
pub struct ScoreStore {
    scores: HashMap<String, f64>,
    threshold: f64,
}

impl ScoreStore {
    pub fn new(threshold: f64) -> Self {
        Self {
            scores: HashMap::new(),
            threshold,
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, score: f64) -> Result<(), ProviderError> {
        let key = key.into();
        if !(0.0..=1.0).contains(&score) {
            return Err(ProviderError::Key {
                key,
                message: format!("score {score} outside [0, 1]"),
            });
        }
        self.scores.insert(key, score);
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R, threshold: f64) -> Result<Self, ProviderError> {
        let mut store = Self::new(threshold);
        for (line, rec) in read_jsonl::<_, ScoreLine>(reader)? {
            if store.scores.contains_key(&rec.key) {
                return Err(ProviderError::Parse {
                    line,
                    message: format!("duplicate key '{}'", rec.key),
                });
            }
            store.insert(rec.key, rec.score).map_err(|e| ProviderError::Parse {
                line,
                message: e.to_string(),
            })?;
        }
        Ok(store)
    }

    pub fn decide_key(&self, key: &str) -> Result<DeepfakeDecision, ProviderError> {
        let score = *self
            .scores
            .get(key)
            .ok_or_else(|| ProviderError::MissingFeature(key.to_owned()))?;
        Ok(if score >= self.threshold {
            DeepfakeDecision::Synthetic
        } else {
            DeepfakeDecision::Bonafide
        })
    }
}

impl DeepfakeProvider for ScoreStore {
    fn decide(&self, utterance: &Utterance) -> Result<DeepfakeDecision, ProviderError> {
        self.decide_key(&utterance.provider_key)
    }
}

/// Provider key layout used by synthetic corpora:
/// `<speaker>/<clip>/<system>`, with `-` as the system of bona fide audio.
/// The speaker part may itself contain `/`; the last two segments never do.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClipKey {
    pub speaker: SpeakerId,
    pub clip: String,
    pub system: Option<String>,
}

impl ClipKey {
    pub fn parse(key: &str) -> Result<Self, ProviderError> {
        let err = |message: &str| ProviderError::Key {
            key: key.to_owned(),
            message: message.to_owned(),
        };
        let mut parts = key.rsplitn(3, '/');
        let system = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| err("missing system"))?;
        let clip = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| err("missing clip"))?;
        let speaker = parts.next().ok_or_else(|| err("missing speaker"))?;
        let speaker = SpeakerId::new(speaker).map_err(|_| err("empty speaker"))?;
        Ok(Self {
            speaker,
            clip: clip.to_owned(),
            system: (system != "-").then(|| system.to_owned()),
        })
    }
}

impl fmt::Display for ClipKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.speaker,
            self.clip,
            self.system.as_deref().unwrap_or("-")
        )
    }
}

/// Parameters of the clustered synthetic embedding model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModelParams {
    pub seed: u64,
    pub dim: usize,
    /// Expected norm of the per-clip noise vector.
    pub sigma: f64,
    /// Norm of the per-synthesis-system offset vector.
    pub system_bias: f64,
}

/// Deterministic desk-scale stand-in for a speaker-embedding extractor:
///
/// `normalize(center(speaker) + bias(system) + sigma * g(key))`
///
/// where `center` is a uniform point on the unit sphere, `bias` has norm
/// `system_bias` (zero for bona fide audio) and `g` is an isotropic Gaussian
/// with per-component variance `1/dim`, so `E‖g‖² = 1`. All three are drawn
/// from keyed streams and can be recomputed from (seed, key) alone.
#[derive(Debug, Clone)]
pub struct SyntheticEmbeddings {
    params: EmbeddingModelParams,
    centers: HashMap<SpeakerId, Vec<f64>>,
}

impl SyntheticEmbeddings {
    pub fn new(params: EmbeddingModelParams, speakers: impl IntoIterator<Item = SpeakerId>) -> Self {
        let centers = speakers
            .into_iter()
            .map(|s| {
                let c = unit_gaussian_direction(params.seed, "center", s.as_str(), params.dim);
                (s, c)
            })
            .collect();
        Self { params, centers }
    }

    pub fn params(&self) -> &EmbeddingModelParams {
        &self.params
    }

    pub fn center(&self, speaker: &SpeakerId) -> Option<&[f64]> {
        self.centers.get(speaker).map(Vec::as_slice)
    }

    /// Offset vector of a synthesis system, norm `system_bias`.
    pub fn bias(&self, system: &str) -> Vec<f64> {
        let mut b = unit_gaussian_direction(self.params.seed, "system", system, self.params.dim);
        b.iter_mut().for_each(|v| *v *= self.params.system_bias);
        b
    }

    pub fn embed_clip(&self, clip: &ClipKey, key: &str) -> Result<Embedding, ProviderError> {
        let center = self.centers.get(&clip.speaker).ok_or_else(|| ProviderError::Key {
            key: key.to_owned(),
            message: format!("unknown speaker '{}'", clip.speaker),
        })?;
        let mut v = center.clone();
        if let Some(system) = &clip.system {
            for (x, b) in v.iter_mut().zip(self.bias(system)) {
                *x += b;
            }
        }
        if self.params.sigma > 0.0 {
            let mut rng = keyed_rng(self.params.seed, "noise", key);
            let scale = self.params.sigma / (self.params.dim as f64).sqrt();
            for x in v.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *x += scale * g;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ProviderError::BadVector(key.to_owned()));
        }
        Embedding::new(v.iter().map(|x| (x / norm) as f32).collect())
            .map_err(|_| ProviderError::BadVector(key.to_owned()))
    }
}

impl EmbeddingProvider for SyntheticEmbeddings {
    fn dim(&self) -> usize {
        self.params.dim
    }

    fn embedding(&self, key: &str) -> Result<Embedding, ProviderError> {
        self.embed_clip(&ClipKey::parse(key)?, key)
    }
}

fn unit_gaussian_direction(seed: u64, domain: &str, key: &str, dim: usize) -> Vec<f64> {
    let mut rng = keyed_rng(seed, domain, key);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Category, GroundTruth, Topic};

    fn utt(synthetic: bool) -> Utterance {
        Utterance {
            id: "u".into(),
            speaker: SpeakerId::new("s").unwrap(),
            duration_s: 1.0,
            ground_truth: GroundTruth {
                synthetic,
                celebrity: false,
                topic: Topic::Other,
                category: if synthetic {
                    Category::SyntheticOrdinary
                } else {
                    Category::Recording
                },
                generator_system: None,
            },
            provider_key: "s/u0/-".into(),
        }
    }

    #[test]
    fn file_lookup_identity_missing_and_renormalize() {
        let mut store = EmbeddingStore::new(2);
        store.insert("unit", &[0.6, 0.8]).unwrap();
        store.insert("long", &[1.2, 1.6]).unwrap();
        let mut buf = Vec::new();
        store.write(&mut buf).unwrap();
        let store = EmbeddingStore::read(&buf[..]).unwrap();

        assert_eq!(store.embedding("unit").unwrap().as_slice(), &[0.6, 0.8]);
        match store.embedding("nope") {
            Err(ProviderError::MissingFeature(k)) => assert_eq!(k, "nope"),
            other => panic!("unexpected {other:?}"),
        }
        // norm 2.0 -> scaled back to the unit direction (0.6, 0.8)
        let e = store.embedding("long").unwrap();
        assert!((e.norm() - 1.0).abs() < 1e-6);
        assert!((f64::from(e.as_slice()[0]) - 0.6).abs() < 1e-6);
        assert!((f64::from(e.as_slice()[1]) - 0.8).abs() < 1e-6);
    }

    #[test]
    fn insert_rejects_wrong_dim() {
        let mut store = EmbeddingStore::new(3);
        assert!(matches!(
            store.insert("k", &[1.0]),
            Err(ProviderError::Dim { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn bad_version_is_format_error() {
        let mut buf = Vec::new();
        EmbeddingStore::new(2).write(&mut buf).unwrap();
        buf[8] = 9;
        assert!(matches!(EmbeddingStore::read(&buf[..]), Err(ProviderError::Format(_))));
    }

    #[test]
    fn oracle_follows_ground_truth() {
        assert_eq!(OracleDeepfake.decide(&utt(false)).unwrap(), DeepfakeDecision::Bonafide);
        assert_eq!(OracleDeepfake.decide(&utt(true)).unwrap(), DeepfakeDecision::Synthetic);
    }

    #[test]
    fn score_threshold_ties_are_synthetic() {
        let text = "{\"key\":\"a\",\"score\":0.4}\n{\"key\":\"b\",\"score\":0.5}\n{\"key\":\"c\",\"score\":0.99}\n";
        let s = ScoreStore::read(text.as_bytes(), 0.5).unwrap();
        assert_eq!(s.decide_key("a").unwrap(), DeepfakeDecision::Bonafide);
        assert_eq!(s.decide_key("b").unwrap(), DeepfakeDecision::Synthetic);
        assert_eq!(s.decide_key("c").unwrap(), DeepfakeDecision::Synthetic);
        assert!(matches!(s.decide_key("d"), Err(ProviderError::MissingFeature(_))));
    }

    #[test]
    fn score_out_of_range_rejected() {
        let text = "{\"key\":\"a\",\"score\":1.5}\n";
        assert!(matches!(
            ScoreStore::read(text.as_bytes(), 0.5),
            Err(ProviderError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn transcripts_roundtrip_preserving_order() {
        let mut t = TranscriptStore::new();
        t.insert("b", "second line");
        t.insert("a", "first \"quoted\"");
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(TranscriptStore::read(&buf[..]).unwrap(), t);
        assert!(matches!(t.transcript("zz"), Err(ProviderError::MissingFeature(_))));
    }

    #[test]
    fn clip_key_parse_and_format() {
        let k = ClipKey::parse("group/spk1/u7/tts_a").unwrap();
        assert_eq!(k.speaker.as_str(), "group/spk1");
        assert_eq!(k.clip, "u7");
        assert_eq!(k.system.as_deref(), Some("tts_a"));
        assert_eq!(k.to_string(), "group/spk1/u7/tts_a");
        assert_eq!(ClipKey::parse("s/e0/-").unwrap().system, None);
        assert!(ClipKey::parse("nokey").is_err());
    }

    fn model(sigma: f64) -> SyntheticEmbeddings {
        let speakers = (0..200).map(|i| SpeakerId::new(format!("s{i}")).unwrap());
        SyntheticEmbeddings::new(
            EmbeddingModelParams {
                seed: 11,
                dim: 64,
                sigma,
                system_bias: 0.02,
            },
            speakers,
        )
    }

    #[test]
    fn synthetic_is_deterministic_and_unit() {
        let m = model(0.05);
        let a = m.embedding("s3/u1/tts_a").unwrap();
        let b = m.embedding("s3/u1/tts_a").unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert!(matches!(m.embedding("ghost/u1/tts_a"), Err(ProviderError::Key { .. })));
    }

    #[test]
    fn zero_noise_is_normalized_center_plus_bias() {
        let m = model(0.0);
        let s = SpeakerId::new("s5").unwrap();
        let c = m.center(&s).unwrap();
        let expect: Vec<f64> = c.iter().zip(m.bias("tts_b")).map(|(c, b)| c + b).collect();
        let n = expect.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expect: Vec<f32> = expect.iter().map(|x| (x / n) as f32).collect();
        assert_eq!(m.embedding("s5/u1/tts_b").unwrap().as_slice(), &expect[..]);
        assert_eq!(
            m.embedding("s5/u1/tts_b").unwrap(),
            m.embedding("s5/u99/tts_b").unwrap()
        );
    }

    #[test]
    fn within_speaker_beats_cross_speaker_on_average() {
        let m = model(0.05);
        let cos = |a: &Embedding, b: &Embedding| -> f64 {
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| f64::from(*x) * f64::from(*y))
                .sum()
        };
        let mut within = 0.0;
        let mut cross = 0.0;
        for i in 0..100 {
            let a = m.embedding(&format!("s{i}/u0/tts_a")).unwrap();
            let b = m.embedding(&format!("s{i}/u1/tts_a")).unwrap();
            let c = m.embedding(&format!("s{}/u1/tts_a", i + 100)).unwrap();
            within += cos(&a, &b);
            cross += cos(&a, &c);
        }
        assert!(within / 100.0 > cross / 100.0);
    }
}
