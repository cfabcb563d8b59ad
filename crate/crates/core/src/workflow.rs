//! Batch steps shared by the CLI, the FFI layer and the acceptance suite:
//! building a watchlist database from reference clips and training the
//! topic classifier on a held-out split.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::eval::{eval_topic_stage, StageReport};
use crate::model::{SpeakerId, Topic, Utterance};
use crate::providers::{EmbeddingProvider, ProviderError, TranscriptProvider};
use crate::speakerdb::{DbError, Embedding, SpeakerDb};
use crate::topicclf::{
    fit_tfidf, stratified_split, tokenize, train, TopicError, TopicModel, TrainConfig, TrainReport,
};

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error("speaker '{speaker}' has {have} bona fide reference clips, {need} requested")]
    NotEnoughClips {
        speaker: SpeakerId,
        have: usize,
        need: usize,
    },
    #[error("clips_per_speaker must be positive")]
    ZeroClips,
    #[error("train fraction {0} leaves an empty side")]
    Split(f64),
}

/// Enrolls every listed speaker from its first `clips_per_speaker` bona
/// fide clips in manifest order.
pub fn enroll_watchlist(
    manifest: &[Utterance],
    embeddings: &dyn EmbeddingProvider,
    speakers: &BTreeSet<SpeakerId>,
    clips_per_speaker: usize,
    threshold: f32,
) -> Result<SpeakerDb, WorkflowError> {
    if clips_per_speaker == 0 {
        return Err(WorkflowError::ZeroClips);
    }
    let mut db = SpeakerDb::new(embeddings.dim(), threshold)?;
    for speaker in speakers {
        let keys: Vec<&str> = manifest
            .iter()
            .filter(|u| &u.speaker == speaker && !u.ground_truth.synthetic)
            .map(|u| u.provider_key.as_str())
            .collect();
        if keys.len() < clips_per_speaker {
            return Err(WorkflowError::NotEnoughClips {
                speaker: speaker.clone(),
                have: keys.len(),
                need: clips_per_speaker,
            });
        }
        let clips = keys[..clips_per_speaker]
            .iter()
            .map(|k| embeddings.embedding(k))
            .collect::<Result<Vec<Embedding>, _>>()?;
        db.enroll(speaker.clone(), &clips)?;
    }
    Ok(db)
}

#[derive(Debug, Clone)]
pub struct TopicTraining {
    pub model: TopicModel,
    pub report: TrainReport,
    pub n_train: usize,
    /// Held-out error table (true topic vs prediction).
    pub held_out: StageReport,
}

/// Stratified split, TF-IDF fit on the training side only, then LR.
pub fn train_topic_classifier(
    manifest: &[Utterance],
    transcripts: &dyn TranscriptProvider,
    max_features: usize,
    cfg: &TrainConfig,
    split_seed: u64,
    train_fraction: f64,
) -> Result<TopicTraining, WorkflowError> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(WorkflowError::Split(train_fraction));
    }
    let labels: Vec<Topic> = manifest.iter().map(|u| u.ground_truth.topic).collect();
    let tokens = manifest
        .iter()
        .map(|u| transcripts.transcript(&u.provider_key).map(|t| tokenize(&t)))
        .collect::<Result<Vec<_>, _>>()?;
    let (train_idx, test_idx) = stratified_split(&labels, train_fraction, split_seed);
    if train_idx.is_empty() {
        return Err(WorkflowError::Split(train_fraction));
    }
    let train_docs: Vec<Vec<&str>> = train_idx
        .iter()
        .map(|&i| tokens[i].iter().map(String::as_str).collect())
        .collect();
    let vocab = fit_tfidf(&train_docs, max_features)?;
    let x: Vec<_> = train_idx.iter().map(|&i| vocab.transform_tokens(&tokens[i])).collect();
    let y: Vec<Topic> = train_idx.iter().map(|&i| labels[i]).collect();
    let (model, report) = train(vocab, &x, &y, cfg)?;
    let predictions: Vec<Topic> = test_idx
        .iter()
        .map(|&i| model.predict_vector(&model.vocabulary().transform_tokens(&tokens[i])).0)
        .collect();
    let truth: Vec<Topic> = test_idx.iter().map(|&i| labels[i]).collect();
    let held_out = eval_topic_stage(&predictions, &truth).expect("aligned by construction");
    Ok(TopicTraining {
        model,
        report,
        n_train: train_idx.len(),
        held_out,
    })
}
