//! The detection cascade: deepfake gate → speaker retrieval → topic
//! classification → policy lookup, with hard short-circuiting.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{FailedVerdict, PolicySet, Stage, Topic, Utterance, Verdict, VerdictRecord};
use crate::providers::{
    DeepfakeDecision, DeepfakeProvider, EmbeddingProvider, ProviderError, TranscriptProvider,
};
use crate::speakerdb::{DbError, Embedding, SpeakerDb};
use crate::topicclf::TopicModel;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("speaker database has dimension {db} but the embedding provider yields {provider}")]
    DimMismatch { db: usize, provider: usize },
    #[error("policy watches topic '{0}' which the topic model cannot predict")]
    UnmodeledTopic(Topic),
}

#[derive(Debug, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Db(#[from] DbError),
}

#[derive(Debug, Error)]
#[error("{stage} stage failed for key '{key}': {source}")]
pub struct StageError {
    pub stage: Stage,
    pub key: String,
    #[source]
    pub source: StageFailure,
}

/// Stage logic over already-loaded state, independent of where the stage
/// inputs come from.
#[derive(Debug, Clone)]
pub struct Detector {
    db: SpeakerDb,
    model: TopicModel,
    policy: PolicySet,
}

impl Detector {
    pub fn new(db: SpeakerDb, model: TopicModel, policy: PolicySet) -> Result<Self, PipelineError> {
        if let Some(t) = policy.topics().into_iter().find(|t| !model.topic_order().contains(t)) {
            return Err(PipelineError::UnmodeledTopic(t));
        }
        Ok(Self { db, model, policy })
    }

    pub fn db(&self) -> &SpeakerDb {
        &self.db
    }

    /// Enroll or drop watchlisted speakers between batches.
    pub fn db_mut(&mut self) -> &mut SpeakerDb {
        &mut self.db
    }

    pub fn model(&self) -> &TopicModel {
        &self.model
    }

    pub fn policy(&self) -> &PolicySet {
        &self.policy
    }

    /// Replaces the policy, checking that its topics are predictable.
    pub fn set_policy(&mut self, policy: PolicySet) -> Result<(), PipelineError> {
        if let Some(t) = policy
            .topics()
            .into_iter()
            .find(|t| !self.model.topic_order().contains(t))
        {
            return Err(PipelineError::UnmodeledTopic(t));
        }
        self.policy = policy;
        Ok(())
    }

    /// Runs the cascade. Later stage inputs are fetched lazily, so an input
    /// for a stage that is never reached is never requested.
    pub fn decide<D, E, T>(
        &self,
        utterance_id: &str,
        key: &str,
        deepfake: D,
        embedding: E,
        transcript: T,
    ) -> Result<Verdict, StageError>
    where
        D: FnOnce() -> Result<DeepfakeDecision, ProviderError>,
        E: FnOnce() -> Result<Embedding, ProviderError>,
        T: FnOnce() -> Result<String, ProviderError>,
    {
        let fail = |stage: Stage, source: StageFailure| StageError {
            stage,
            key: key.to_owned(),
            source,
        };

        let decision = deepfake().map_err(|e| fail(Stage::Deepfake, e.into()))?;
        if decision == DeepfakeDecision::Bonafide {
            return Ok(Verdict::bonafide(utterance_id));
        }

        let probe = embedding().map_err(|e| fail(Stage::Speaker, e.into()))?;
        let hit = self.db.query(&probe).map_err(|e| fail(Stage::Speaker, e.into()))?;
        let speaker = match (hit.matched, hit.best_speaker) {
            (true, Some(s)) => s,
            _ => return Ok(Verdict::speaker_not_watchlisted(utterance_id, hit.similarity)),
        };

        let text = transcript().map_err(|e| fail(Stage::Topic, e.into()))?;
        let (topic, _) = self.model.predict(&text);
        let watched = self.policy.contains(&speaker, topic);
        Ok(Verdict::classified(
            utterance_id,
            speaker,
            hit.similarity,
            topic,
            watched,
        ))
    }
}

/// A [`Detector`] wired to its stage input providers.
pub struct Pipeline {
    detector: Detector,
    deepfake: Box<dyn DeepfakeProvider>,
    embeddings: Box<dyn EmbeddingProvider>,
    transcripts: Box<dyn TranscriptProvider>,
}

impl Pipeline {
    pub fn new(
        detector: Detector,
        deepfake: Box<dyn DeepfakeProvider>,
        embeddings: Box<dyn EmbeddingProvider>,
        transcripts: Box<dyn TranscriptProvider>,
    ) -> Result<Self, PipelineError> {
        if detector.db.dim() != embeddings.dim() {
            return Err(PipelineError::DimMismatch {
                db: detector.db.dim(),
                provider: embeddings.dim(),
            });
        }
        Ok(Self {
            detector,
            deepfake,
            embeddings,
            transcripts,
        })
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn detector_mut(&mut self) -> &mut Detector {
        &mut self.detector
    }

    pub fn detect(&self, utterance: &Utterance) -> Result<Verdict, StageError> {
        let key = utterance.provider_key.as_str();
        self.detector.decide(
            &utterance.id,
            key,
            || self.deepfake.decide(utterance),
            || self.embeddings.embedding(key),
            || self.transcripts.transcript(key),
        )
    }

    /// Detects every utterance, in parallel, returning verdicts in input
    /// order. With `fail_fast` the first failing utterance (in input order)
    /// aborts the batch; otherwise failures become error records.
    pub fn detect_batch(
        &self,
        utterances: &[Utterance],
        fail_fast: bool,
    ) -> Result<Vec<VerdictRecord>, StageError> {
        let results: Vec<Result<Verdict, StageError>> =
            utterances.par_iter().map(|u| self.detect(u)).collect();
        results
            .into_iter()
            .zip(utterances)
            .map(|(r, u)| match r {
                Ok(v) => Ok(VerdictRecord::Decided(v)),
                Err(e) if fail_fast => Err(e),
                Err(e) => Ok(VerdictRecord::Failed(FailedVerdict {
                    utterance_id: u.id.clone(),
                    stage: e.stage,
                    message: e.to_string(),
                })),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;
    use crate::model::{Category, GroundTruth, Outcome, Reason, SpeakerId, WatchedPair};
    use crate::providers::{OracleDeepfake, TranscriptStore};
    use crate::topicclf::{fit_tfidf, tokenize, train, TrainConfig};

    const DIM: usize = 8;

    fn sid(s: &str) -> SpeakerId {
        SpeakerId::new(s).unwrap()
    }

    fn axis(i: usize) -> Vec<f32> {
        let mut v = vec![0.0; DIM];
        v[i] = 1.0;
        v
    }

    #[derive(Clone, Default)]
    struct Counting {
        vectors: HashMap<String, Vec<f32>>,
        texts: HashMap<String, String>,
        embedding_calls: Arc<AtomicUsize>,
        transcript_calls: Arc<AtomicUsize>,
    }

    impl EmbeddingProvider for Counting {
        fn dim(&self) -> usize {
            DIM
        }
        fn embedding(&self, key: &str) -> Result<Embedding, ProviderError> {
            self.embedding_calls.fetch_add(1, Ordering::SeqCst);
            let v = self
                .vectors
                .get(key)
                .ok_or_else(|| ProviderError::MissingFeature(key.into()))?;
            Ok(Embedding::new(v.clone()).unwrap())
        }
    }

    impl TranscriptProvider for Counting {
        fn transcript(&self, key: &str) -> Result<String, ProviderError> {
            self.transcript_calls.fetch_add(1, Ordering::SeqCst);
            self.texts
                .get(key)
                .cloned()
                .ok_or_else(|| ProviderError::MissingFeature(key.into()))
        }
    }

    fn toy_model() -> TopicModel {
        let docs = [
            ("vote senate ballot", Topic::Politics),
            ("senate vote campaign", Topic::Politics),
            ("stock bond market", Topic::Finance),
            ("market stock dividend", Topic::Finance),
            ("weather lunch walk", Topic::Other),
            ("lunch walk park", Topic::Other),
        ];
        let tokens: Vec<Vec<String>> = docs.iter().map(|(d, _)| tokenize(d)).collect();
        let vocab = fit_tfidf(&tokens, 100).unwrap();
        let x: Vec<_> = tokens.iter().map(|t| vocab.transform_tokens(t)).collect();
        let y: Vec<Topic> = docs.iter().map(|(_, t)| *t).collect();
        train(vocab, &x, &y, &TrainConfig::default()).unwrap().0
    }

    fn policy(pairs: &[(&str, Topic)]) -> PolicySet {
        PolicySet::new(pairs.iter().map(|(s, t)| WatchedPair {
            speaker: sid(s),
            topic: *t,
        }))
        .unwrap()
    }

    fn detector(pairs: &[(&str, Topic)]) -> Detector {
        let mut db = SpeakerDb::new(DIM, 0.95).unwrap();
        db.enroll(sid("alice"), &[Embedding::new(axis(0)).unwrap()]).unwrap();
        db.enroll(sid("bob"), &[Embedding::new(axis(1)).unwrap()]).unwrap();
        Detector::new(db, toy_model(), policy(pairs)).unwrap()
    }

    fn utt(id: &str, speaker: &str, synthetic: bool) -> Utterance {
        Utterance {
            id: id.into(),
            speaker: sid(speaker),
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
                generator_system: synthetic.then(|| "tts_a".into()),
            },
            provider_key: id.into(),
        }
    }

    fn pipeline(det: Detector, inputs: &Counting) -> Pipeline {
        Pipeline::new(
            det,
            Box::new(OracleDeepfake),
            Box::new(inputs.clone()),
            Box::new(inputs.clone()),
        )
        .unwrap()
    }

    /// 50 utterances cycling through every cascade branch.
    fn fixture() -> (Vec<Utterance>, Counting) {
        let mut inputs = Counting::default();
        let texts = ["senate vote ballot", "stock market bond", "lunch park walk"];
        let mut manifest = Vec::new();
        for i in 0..50 {
            let id = format!("u{i:02}");
            let u = utt(&id, "x", i % 5 != 0);
            let mut v = axis(i % 4);
            if i % 7 == 0 {
                v[2] = 0.5;
                v[0] = 1.0;
            }
            inputs.vectors.insert(id.clone(), v);
            inputs.texts.insert(id, texts[i % 3].into());
            manifest.push(u);
        }
        (manifest, inputs)
    }

    #[test]
    fn recording_stops_at_stage_one_without_fetching() {
        let inputs = Counting::default();
        let p = pipeline(detector(&[("alice", Topic::Politics)]), &inputs);
        let v = p.detect(&utt("r", "alice", false)).unwrap();
        assert_eq!(v, Verdict::bonafide("r"));
        assert_eq!(inputs.embedding_calls.load(Ordering::SeqCst), 0);
        assert_eq!(inputs.transcript_calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn centroid_probe_on_watched_topic_is_misinformation() {
        let mut inputs = Counting::default();
        inputs.vectors.insert("s".into(), axis(0));
        inputs.texts.insert("s".into(), "vote senate ballot campaign".into());
        let p = pipeline(detector(&[("alice", Topic::Politics)]), &inputs);
        let v = p.detect(&utt("s", "alice", true)).unwrap();
        assert_eq!(v.outcome, Outcome::Misinformation);
        assert_eq!(v.reason, Reason::WatchedPairMatched);
        assert_eq!(v.matched_speaker, Some(sid("alice")));
        assert_eq!(v.similarity, Some(1.0));
        assert_eq!(v.predicted_topic, Some(Topic::Politics));
    }

    #[test]
    fn orthogonal_probe_is_not_watchlisted() {
        let mut inputs = Counting::default();
        inputs.vectors.insert("o".into(), axis(5));
        let p = pipeline(detector(&[("alice", Topic::Politics)]), &inputs);
        let v = p.detect(&utt("o", "carol", true)).unwrap();
        assert_eq!(v, Verdict::speaker_not_watchlisted("o", 0.0));
        assert_eq!(inputs.transcript_calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn matched_speaker_off_topic() {
        let mut inputs = Counting::default();
        inputs.vectors.insert("f".into(), axis(0));
        inputs.texts.insert("f".into(), "stock market dividend".into());
        let p = pipeline(detector(&[("alice", Topic::Politics)]), &inputs);
        let v = p.detect(&utt("f", "alice", true)).unwrap();
        assert_eq!(v.reason, Reason::TopicNotWatched);
        assert_eq!(v.predicted_topic, Some(Topic::Finance));
    }

    #[test]
    fn provider_failures_are_stage_tagged() {
        let mut inputs = Counting::default();
        inputs.vectors.insert("t".into(), axis(1));
        let p = pipeline(detector(&[("bob", Topic::Finance)]), &inputs);
        let e = p.detect(&utt("e", "bob", true)).unwrap_err();
        assert_eq!((e.stage, e.key.as_str()), (Stage::Speaker, "e"));
        let e = p.detect(&utt("t", "bob", true)).unwrap_err();
        assert_eq!(e.stage, Stage::Topic);
    }

    #[test]
    fn batch_matches_pointwise_and_keeps_cardinality() {
        let (manifest, inputs) = fixture();
        let p = pipeline(detector(&[("alice", Topic::Politics), ("bob", Topic::Finance)]), &inputs);
        assert!(p.detect_batch(&[], false).unwrap().is_empty());
        let batch = p.detect_batch(&manifest, false).unwrap();
        assert_eq!(batch.len(), 50);
        for (u, r) in manifest.iter().zip(&batch) {
            assert_eq!(r, &VerdictRecord::Decided(p.detect(u).unwrap()));
            r.verdict().unwrap().check().unwrap();
        }
        assert_eq!(batch, p.detect_batch(&manifest, false).unwrap());

        let mut broken = inputs.clone();
        broken.vectors.remove("u03");
        broken.texts.remove("u01");
        let p = pipeline(detector(&[("alice", Topic::Politics)]), &broken);
        let batch = p.detect_batch(&manifest, false).unwrap();
        assert_eq!(batch.len(), 50);
        let failed: Vec<&str> = batch
            .iter()
            .filter_map(|r| match r {
                VerdictRecord::Failed(f) => Some(f.utterance_id.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(failed, ["u01", "u03"]);
        let err = p.detect_batch(&manifest, true).unwrap_err();
        assert_eq!(err.key, "u01");
    }

    #[test]
    fn short_circuit_purity() {
        let (manifest, inputs) = fixture();
        let p = pipeline(detector(&[("alice", Topic::Politics)]), &inputs);
        for r in p.detect_batch(&manifest, false).unwrap() {
            let v = r.verdict().unwrap();
            match v.reason {
                Reason::BonafideAudio => {
                    assert!(v.matched_speaker.is_none() && v.similarity.is_none());
                    assert!(v.predicted_topic.is_none());
                }
                Reason::SpeakerNotWatchlisted => {
                    assert!(v.similarity.is_some() && v.predicted_topic.is_none());
                }
                _ => assert!(v.predicted_topic.is_some()),
            }
        }
    }

    #[test]
    fn policy_monotonicity() {
        let (manifest, inputs) = fixture();
        let full = [("alice", Topic::Politics), ("bob", Topic::Finance), ("bob", Topic::Politics)];
        let mut p = pipeline(detector(&full), &inputs);
        let before = p.detect_batch(&manifest, false).unwrap();
        p.detector_mut()
            .set_policy(policy(&[("alice", Topic::Politics)]))
            .unwrap();
        let after = p.detect_batch(&manifest, false).unwrap();
        let mut changed = 0;
        for (b, a) in before.iter().zip(&after) {
            let (b, a) = (b.verdict().unwrap(), a.verdict().unwrap());
            if !b.is_misinformation() {
                assert!(!a.is_misinformation());
            }
            if b != a {
                changed += 1;
                assert_eq!(b.matched_speaker, Some(sid("bob")));
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn dropping_a_speaker_only_touches_its_argmax_utterances() {
        let (manifest, inputs) = fixture();
        let mut p = pipeline(detector(&[("alice", Topic::Politics), ("bob", Topic::Finance)]), &inputs);
        let before = p.detect_batch(&manifest, false).unwrap();
        let argmax: Vec<Option<SpeakerId>> = manifest
            .iter()
            .map(|u| {
                let probe = Embedding::new(inputs.vectors[&u.id].clone()).unwrap();
                p.detector().db().query(&probe).unwrap().best_speaker
            })
            .collect();
        assert!(p.detector_mut().db_mut().remove(&sid("bob")));
        let after = p.detect_batch(&manifest, false).unwrap();
        let mut changed = 0;
        for ((b, a), best) in before.iter().zip(&after).zip(&argmax) {
            if b != a {
                changed += 1;
                assert_eq!(best.as_ref(), Some(&sid("bob")));
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn wiring_is_validated() {
        let inputs = Counting::default();
        let db = SpeakerDb::new(DIM + 1, 0.95).unwrap();
        let det = Detector::new(db, toy_model(), PolicySet::default()).unwrap();
        assert!(matches!(
            Pipeline::new(det, Box::new(OracleDeepfake), Box::new(inputs.clone()), Box::new(TranscriptStore::new())),
            Err(PipelineError::DimMismatch { db: 9, provider: 8 })
        ));
        let db = SpeakerDb::new(DIM, 0.95).unwrap();
        assert!(matches!(
            Detector::new(db, toy_model(), policy(&[("alice", Topic::Laws)])),
            Err(PipelineError::UnmodeledTopic(Topic::Laws))
        ));
    }
}
