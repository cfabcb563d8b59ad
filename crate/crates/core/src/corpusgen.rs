//! Seeded synthetic corpus with the four-way annotation taxonomy: bona fide
//! recordings, synthetic speech of ordinary speakers, synthetic speech of
//! watchlisted speakers off their watched topic, and on it (the
//! misinformation stratum).
//!
//! Everything is a pure function of [`CorpusConfig`], seed included.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    write_manifest, Category, GroundTruth, PolicySet, SpeakerId, Topic, Utterance, WatchedPair,
};
use crate::providers::{
    ClipKey, EmbeddingModelParams, EmbeddingStore, ProviderError, SyntheticEmbeddings,
    TranscriptStore,
};
use crate::rng::keyed_rng;

pub const SYSTEMS: [&str; 2] = ["tts_a", "tts_b"];

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const POLICY_FILE: &str = "policy.json";
pub const ENROLL_MANIFEST_FILE: &str = "enroll_manifest.jsonl";
pub const ENROLL_EMBEDDINGS_FILE: &str = "enroll_embeddings.bin";

const ZIPF_EXPONENT: f64 = 1.1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("infeasible corpus config: {0}")]
    Config(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_speakers: usize,
    pub n_celebrities: usize,
    pub dim: usize,
    /// Expected norm of per-clip embedding noise.
    pub sigma: f64,
    /// Norm of the per-synthesis-system embedding offset.
    pub system_bias: f64,
    /// Shares of recording, synthetic_ordinary,
    /// synthetic_celebrity_other_topic, synthetic_celebrity_specific_topic.
    pub category_weights: [f64; 4],
    /// Relative topic frequencies (politics, medicine, education, laws,
    /// finance, other) for synthetic utterances not on a watched topic.
    pub topic_weights: [f64; 6],
    pub samples_total: usize,
    pub topic_vocab_size: usize,
    pub shared_vocab_size: usize,
    /// Probability that a transcript token is a topic keyword.
    pub keyword_mix: f64,
    /// Inclusive transcript length range in tokens.
    pub doc_length: [usize; 2],
    /// Reference clips generated per watchlisted speaker.
    pub enrollment_clips: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_speakers: 200,
            n_celebrities: 20,
            dim: 512,
            sigma: 0.05,
            system_bias: 0.02,
            category_weights: [0.0566, 0.8474, 0.0719, 0.0241],
            topic_weights: [1.0; 6],
            samples_total: 10_000,
            topic_vocab_size: 50,
            shared_vocab_size: 200,
            keyword_mix: 0.3,
            doc_length: [30, 120],
            enrollment_clips: 6,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |m: String| Err(CorpusError::Config(m));
        if self.n_speakers == 0 {
            return fail("n_speakers must be positive".into());
        }
        if self.n_celebrities > self.n_speakers {
            return fail(format!(
                "n_celebrities {} exceeds n_speakers {}",
                self.n_celebrities, self.n_speakers
            ));
        }
        if self.dim == 0 {
            return fail("dim must be positive".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return fail("sigma must be non-negative".into());
        }
        if !(self.system_bias >= 0.0 && self.system_bias.is_finite()) {
            return fail("system_bias must be non-negative".into());
        }
        let w = &self.category_weights;
        if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return fail("category_weights must be non-negative".into());
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return fail(format!("category_weights sum to {sum}, not 1"));
        }
        if self.samples_total == 0 {
            return fail("samples_total must be positive".into());
        }
        let n_ordinary = self.n_speakers - self.n_celebrities;
        if n_ordinary == 0 && w[Category::SyntheticOrdinary.index()] > 0.0 {
            return fail("synthetic_ordinary weight > 0 but every speaker is a celebrity".into());
        }
        if self.n_celebrities == 0
            && (w[Category::SyntheticCelebrityOtherTopic.index()] > 0.0
                || w[Category::SyntheticCelebritySpecificTopic.index()] > 0.0)
        {
            return fail("celebrity category weight > 0 but n_celebrities = 0".into());
        }
        let tw = &self.topic_weights;
        if tw.iter().any(|x| !(*x >= 0.0 && x.is_finite())) || tw.iter().sum::<f64>() <= 0.0 {
            return fail("topic_weights must be non-negative with a positive sum".into());
        }
        for watched in Topic::WATCHABLE {
            let rest: f64 = Topic::ALL
                .iter()
                .filter(|t| **t != watched)
                .map(|t| tw[t.index()])
                .sum();
            if rest <= 0.0 && w[Category::SyntheticCelebrityOtherTopic.index()] > 0.0 {
                return fail(format!("no off-topic weight left for celebrities watching {watched}"));
            }
        }
        if self.topic_vocab_size == 0 || self.shared_vocab_size == 0 {
            return fail("vocabulary sizes must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.keyword_mix) {
            return fail("keyword_mix must lie in [0, 1]".into());
        }
        let [lo, hi] = self.doc_length;
        if lo == 0 || lo > hi {
            return fail(format!("doc_length range [{lo}, {hi}] is empty"));
        }
        if self.n_celebrities > 0 && self.enrollment_clips == 0 {
            return fail("enrollment_clips must be positive when celebrities exist".into());
        }
        Ok(())
    }

    pub fn embedding_params(&self) -> EmbeddingModelParams {
        EmbeddingModelParams {
            seed: self.seed,
            dim: self.dim,
            sigma: self.sigma,
            system_bias: self.system_bias,
        }
    }
}

/// Largest-remainder apportionment of `total` by `weights` (ties in the
/// remainder go to the lower index).
pub fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Disjoint word lists: one per watchable topic plus a shared list.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicVocabularies {
    pub keywords: BTreeMap<Topic, Vec<String>>,
    pub shared: Vec<String>,
}

impl TopicVocabularies {
    fn generate(cfg: &CorpusConfig) -> Self {
        const ONSETS: &[u8] = b"bcdfghjklmnprstvz";
        const VOWELS: &[u8] = b"aeiou";
        let mut rng = keyed_rng(cfg.seed, "vocab", "");
        let mut used = HashSet::new();
        let mut word = |rng: &mut rand_chacha::ChaCha8Rng| loop {
            let syllables = rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(ONSETS[rng.random_range(0..ONSETS.len())] as char);
                w.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
            }
            if rng.random_bool(0.5) {
                w.push(ONSETS[rng.random_range(0..ONSETS.len())] as char);
            }
            if used.insert(w.clone()) {
                return w;
            }
        };
        let keywords = Topic::WATCHABLE
            .iter()
            .map(|&t| (t, (0..cfg.topic_vocab_size).map(|_| word(&mut rng)).collect()))
            .collect();
        let shared = (0..cfg.shared_vocab_size).map(|_| word(&mut rng)).collect();
        Self { keywords, shared }
    }

    fn transcript(&self, cfg: &CorpusConfig, utterance_id: &str, topic: Topic) -> String {
        let mut rng = keyed_rng(cfg.seed, "transcript", utterance_id);
        let zipf = Zipf::new(self.shared.len() as f64, ZIPF_EXPONENT).expect("valid zipf");
        let len = rng.random_range(cfg.doc_length[0]..=cfg.doc_length[1]);
        let keywords = self.keywords.get(&topic);
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            let w = match keywords {
                Some(kw) if rng.random_bool(cfg.keyword_mix) => &kw[rng.random_range(0..kw.len())],
                _ => {
                    let rank = zipf.sample(&mut rng) as usize;
                    &self.shared[rank.clamp(1, self.shared.len()) - 1]
                }
            };
            words.push(w.as_str());
        }
        let mut text = words.join(" ");
        text.push('.');
        text
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub config: CorpusConfig,
    pub speakers: Vec<SpeakerId>,
    /// Watchlisted speakers and their single watched topic.
    pub watched: BTreeMap<SpeakerId, Topic>,
    pub systems: BTreeMap<SpeakerId, &'static str>,
    pub vocabularies: TopicVocabularies,
    pub manifest: Vec<Utterance>,
    pub embeddings: EmbeddingStore,
    pub transcripts: TranscriptStore,
    pub policy: PolicySet,
    /// Bona fide reference clips of watchlisted speakers, kept apart from
    /// the evaluation utterances.
    pub enrollment_manifest: Vec<Utterance>,
    pub enrollment_embeddings: EmbeddingStore,
}

/// Paths written by [`GeneratedCorpus::emit`].
#[derive(Debug, Clone)]
pub struct EmittedFiles {
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
    pub transcripts: PathBuf,
    pub policy: PathBuf,
    pub enroll_manifest: PathBuf,
    pub enroll_embeddings: PathBuf,
}

impl EmittedFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            manifest: dir.join(MANIFEST_FILE),
            embeddings: dir.join(EMBEDDINGS_FILE),
            transcripts: dir.join(TRANSCRIPTS_FILE),
            policy: dir.join(POLICY_FILE),
            enroll_manifest: dir.join(ENROLL_MANIFEST_FILE),
            enroll_embeddings: dir.join(ENROLL_EMBEDDINGS_FILE),
        }
    }
}

pub fn generate(cfg: &CorpusConfig) -> Result<GeneratedCorpus, CorpusError> {
    cfg.validate()?;
    let mut rng = keyed_rng(cfg.seed, "corpus", "main");

    let width = (cfg.n_speakers.saturating_sub(1)).to_string().len().max(4);
    let speakers: Vec<SpeakerId> = (0..cfg.n_speakers)
        .map(|i| SpeakerId::new(format!("spk{i:0width$}")).expect("non-empty"))
        .collect();

    let mut order: Vec<usize> = (0..cfg.n_speakers).collect();
    order.shuffle(&mut rng);
    let mut celeb_idx: Vec<usize> = order[..cfg.n_celebrities].to_vec();
    celeb_idx.sort_unstable();
    let is_celeb: HashSet<usize> = celeb_idx.iter().copied().collect();
    let ordinary_idx: Vec<usize> = (0..cfg.n_speakers).filter(|i| !is_celeb.contains(i)).collect();
    let watched: BTreeMap<SpeakerId, Topic> = celeb_idx
        .iter()
        .map(|&i| {
            let t = Topic::WATCHABLE[rng.random_range(0..Topic::WATCHABLE.len())];
            (speakers[i].clone(), t)
        })
        .collect();

    order.shuffle(&mut rng);
    let half = cfg.n_speakers.div_ceil(2);
    let mut system_of = vec![SYSTEMS[0]; cfg.n_speakers];
    for &i in &order[half..] {
        system_of[i] = SYSTEMS[1];
    }

    let counts = apportion(&cfg.category_weights, cfg.samples_total);
    let mut categories: Vec<Category> = Category::ALL
        .iter()
        .zip(&counts)
        .flat_map(|(&c, &n)| std::iter::repeat_n(c, n))
        .collect();
    categories.shuffle(&mut rng);

    let topic_dist = WeightedIndex::new(cfg.topic_weights).expect("validated weights");
    let off_topic_dists: BTreeMap<Topic, (Vec<Topic>, WeightedIndex<f64>)> = Topic::WATCHABLE
        .iter()
        .filter_map(|&w| {
            let topics: Vec<Topic> = Topic::ALL.into_iter().filter(|t| *t != w).collect();
            let weights: Vec<f64> = topics.iter().map(|t| cfg.topic_weights[t.index()]).collect();
            WeightedIndex::new(weights).ok().map(|d| (w, (topics, d)))
        })
        .collect();

    let id_width = (cfg.samples_total.saturating_sub(1)).to_string().len().max(6);
    let mut manifest = Vec::with_capacity(cfg.samples_total);
    for (i, &category) in categories.iter().enumerate() {
        let (speaker_idx, topic) = match category {
            Category::Recording => (rng.random_range(0..cfg.n_speakers), Topic::Other),
            Category::SyntheticOrdinary => {
                let s = ordinary_idx[rng.random_range(0..ordinary_idx.len())];
                (s, Topic::ALL[topic_dist.sample(&mut rng)])
            }
            Category::SyntheticCelebrityOtherTopic => {
                let s = celeb_idx[rng.random_range(0..celeb_idx.len())];
                let (topics, dist) = &off_topic_dists[&watched[&speakers[s]]];
                (s, topics[dist.sample(&mut rng)])
            }
            Category::SyntheticCelebritySpecificTopic => {
                let s = celeb_idx[rng.random_range(0..celeb_idx.len())];
                (s, watched[&speakers[s]])
            }
        };
        let synthetic = category != Category::Recording;
        let system = synthetic.then(|| system_of[speaker_idx].to_owned());
        let key = ClipKey {
            speaker: speakers[speaker_idx].clone(),
            clip: format!("u{i}"),
            system: system.clone(),
        };
        let duration_ms: u32 = rng.random_range(2_000..=20_000);
        manifest.push(Utterance {
            id: format!("utt{i:0id_width$}"),
            speaker: speakers[speaker_idx].clone(),
            duration_s: f64::from(duration_ms) / 1000.0,
            ground_truth: GroundTruth {
                synthetic,
                celebrity: is_celeb.contains(&speaker_idx),
                topic,
                category,
                generator_system: system,
            },
            provider_key: key.to_string(),
        });
    }

    let model = SyntheticEmbeddings::new(cfg.embedding_params(), speakers.iter().cloned());
    let embeddings = embed_all(&model, manifest.iter().map(|u| u.provider_key.as_str()), cfg.dim)?;

    let vocabularies = TopicVocabularies::generate(cfg);
    let texts: Vec<String> = manifest
        .par_iter()
        .map(|u| vocabularies.transcript(cfg, &u.id, u.ground_truth.topic))
        .collect();
    let mut transcripts = TranscriptStore::new();
    for (u, text) in manifest.iter().zip(texts) {
        transcripts.insert(u.provider_key.clone(), text);
    }

    let mut enrollment_manifest = Vec::new();
    for speaker in watched.keys() {
        for c in 0..cfg.enrollment_clips {
            let key = ClipKey {
                speaker: speaker.clone(),
                clip: format!("e{c}"),
                system: None,
            };
            enrollment_manifest.push(Utterance {
                id: format!("enroll_{speaker}_{c}"),
                speaker: speaker.clone(),
                duration_s: 10.0,
                ground_truth: GroundTruth {
                    synthetic: false,
                    celebrity: true,
                    topic: Topic::Other,
                    category: Category::Recording,
                    generator_system: None,
                },
                provider_key: key.to_string(),
            });
        }
    }
    let enrollment_embeddings = embed_all(
        &model,
        enrollment_manifest.iter().map(|u| u.provider_key.as_str()),
        cfg.dim,
    )?;

    let policy = PolicySet::new(watched.iter().map(|(s, t)| WatchedPair {
        speaker: s.clone(),
        topic: *t,
    }))
    .map_err(|e| CorpusError::Config(e.to_string()))?;
    let systems = speakers
        .iter()
        .cloned()
        .zip(system_of.iter().copied())
        .collect();

    Ok(GeneratedCorpus {
        config: cfg.clone(),
        speakers,
        watched,
        systems,
        vocabularies,
        manifest,
        embeddings,
        transcripts,
        policy,
        enrollment_manifest,
        enrollment_embeddings,
    })
}

fn embed_all<'a>(
    model: &SyntheticEmbeddings,
    keys: impl Iterator<Item = &'a str>,
    dim: usize,
) -> Result<EmbeddingStore, ProviderError> {
    use crate::providers::EmbeddingProvider;
    let keys: Vec<&str> = keys.collect();
    let vectors = keys
        .par_iter()
        .map(|k| model.embedding(k))
        .collect::<Result<Vec<_>, _>>()?;
    let mut store = EmbeddingStore::new(dim);
    for (k, v) in keys.into_iter().zip(vectors) {
        store.insert(k, v.as_slice())?;
    }
    Ok(store)
}

impl GeneratedCorpus {
    pub fn embedding_model(&self) -> SyntheticEmbeddings {
        SyntheticEmbeddings::new(self.config.embedding_params(), self.speakers.iter().cloned())
    }

    pub fn category_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for u in &self.manifest {
            counts[u.ground_truth.category.index()] += 1;
        }
        counts
    }

    /// Writes manifest, embeddings, transcripts, policy and the enrollment
    /// clip set into `dir`, which must exist.
    pub fn emit(&self, dir: &Path) -> Result<EmittedFiles, CorpusError> {
        let files = EmittedFiles::in_dir(dir);
        write_file(&files.manifest, |w| write_manifest(w, &self.manifest))?;
        write_file(&files.embeddings, |w| {
            self.embeddings.write(w).map_err(provider_io)
        })?;
        write_file(&files.transcripts, |w| self.transcripts.write(w))?;
        write_file(&files.policy, |w| self.policy.write_json(w))?;
        write_file(&files.enroll_manifest, |w| {
            write_manifest(w, &self.enrollment_manifest)
        })?;
        write_file(&files.enroll_embeddings, |w| {
            self.enrollment_embeddings.write(w).map_err(provider_io)
        })?;
        Ok(files)
    }
}

fn provider_io(e: ProviderError) -> io::Error {
    match e {
        ProviderError::Io(e) => e,
        other => io::Error::other(other.to_string()),
    }
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<(), CorpusError> {
    let wrap = |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
    body(&mut w).map_err(wrap)?;
    w.flush().map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topicclf::tokenize;

    fn small() -> CorpusConfig {
        CorpusConfig {
            n_speakers: 30,
            n_celebrities: 6,
            dim: 16,
            samples_total: 400,
            ..Default::default()
        }
    }

    #[test]
    fn apportion_defaults_exactly() {
        let w = CorpusConfig::default().category_weights;
        assert_eq!(apportion(&w, 10_000), [566, 8474, 719, 241]);
        assert_eq!(apportion(&w, 7).iter().sum::<usize>(), 7);
    }

    #[test]
    fn no_celebrities_means_no_misinformation() {
        let cfg = CorpusConfig {
            n_celebrities: 0,
            category_weights: [0.1, 0.9, 0.0, 0.0],
            ..small()
        };
        let c = generate(&cfg).unwrap();
        assert!(c.manifest.iter().all(|u| !u.ground_truth.is_misinformation()));
        assert!(c.policy.is_empty());
    }

    #[test]
    fn infeasible_configs_rejected() {
        let cfg = CorpusConfig {
            n_celebrities: 0,
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(CorpusError::Config(_))));
        let cfg = CorpusConfig {
            n_celebrities: 31,
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(CorpusError::Config(_))));
        let cfg = CorpusConfig {
            category_weights: [0.5, 0.5, 0.5, 0.0],
            ..small()
        };
        assert!(matches!(generate(&cfg), Err(CorpusError::Config(_))));
    }

    #[test]
    fn stratum_semantics_and_policy() {
        let c = generate(&small()).unwrap();
        let expected: BTreeMap<_, _> = c.watched.clone();
        let pairs: BTreeMap<_, _> = c.policy.pairs().map(|p| (p.speaker, p.topic)).collect();
        assert_eq!(pairs, expected);
        for u in &c.manifest {
            let gt = &u.ground_truth;
            gt.check().unwrap();
            let on_watch = c.watched.get(&u.speaker) == Some(&gt.topic);
            assert_eq!(
                gt.is_misinformation(),
                c.watched.contains_key(&u.speaker) && on_watch && gt.synthetic
            );
            if gt.is_misinformation() {
                assert!(c.policy.contains(&u.speaker, gt.topic));
            }
        }
    }

    #[test]
    fn vocabularies_are_disjoint_and_other_has_no_keywords() {
        let c = generate(&small()).unwrap();
        let mut all = HashSet::new();
        let mut total = 0;
        for words in c.vocabularies.keywords.values().chain([&c.vocabularies.shared]) {
            total += words.len();
            all.extend(words.iter().cloned());
        }
        assert_eq!(all.len(), total);
        let keywords: HashSet<&String> = c.vocabularies.keywords.values().flatten().collect();
        for u in c.manifest.iter().filter(|u| u.ground_truth.topic == Topic::Other) {
            let text = c.transcripts.get(&u.provider_key).unwrap();
            assert!(tokenize(text).iter().all(|t| !keywords.contains(t)));
        }
    }

    #[test]
    fn systems_split_in_half() {
        let c = generate(&small()).unwrap();
        let a = c.systems.values().filter(|s| **s == SYSTEMS[0]).count();
        assert_eq!(a, 15);
    }

    #[test]
    fn enrollment_clips_are_separate_bonafide_references() {
        let c = generate(&small()).unwrap();
        assert_eq!(c.enrollment_manifest.len(), 6 * c.config.enrollment_clips);
        let eval_keys: HashSet<&str> = c.manifest.iter().map(|u| u.provider_key.as_str()).collect();
        for u in &c.enrollment_manifest {
            assert!(!eval_keys.contains(u.provider_key.as_str()));
            assert!(u.provider_key.ends_with("/-"));
        }
    }

    #[test]
    fn zero_noise_collapses_each_speaker() {
        let cfg = CorpusConfig {
            sigma: 0.0,
            system_bias: 0.0,
            ..small()
        };
        let c = generate(&cfg).unwrap();
        let model = c.embedding_model();
        for u in c.manifest.iter().take(50) {
            let center = model.center(&u.speaker).unwrap();
            let v = c.embeddings.raw(&u.provider_key).unwrap();
            for (a, b) in v.iter().zip(center) {
                assert_eq!(*a, *b as f32);
            }
        }
    }
}
