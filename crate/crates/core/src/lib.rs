//! Detection engine for synthetic spoken misinformation.
//!
//! A sample is misinformation when it is synthetic speech attributed to a
//! watchlisted speaker talking about that speaker's watched topic. The
//! engine runs a fixed three-stage cascade:
//!
//! 1. deepfake gate ([`providers::DeepfakeProvider`]),
//! 2. speaker retrieval against an enrollable database ([`speakerdb`]),
//! 3. topic classification ([`topicclf`]),
//!
//! and ends in a lookup of the predicted (speaker, topic) pair in a
//! [`model::PolicySet`]. The [`corpusgen`] module produces seeded synthetic
//! corpora with the same category taxonomy, and [`eval`] computes per-topic
//! and micro-averaged error rates over pipeline verdicts.

pub mod binio;
pub mod cli;
pub mod corpusgen;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod providers;
pub mod rng;
pub mod speakerdb;
pub mod topicclf;
pub mod workflow;

pub use model::{
    Category, GroundTruth, Outcome, PolicySet, Reason, SpeakerId, Topic, Utterance, Verdict,
    VerdictRecord,
};
pub use speakerdb::{Embedding, QueryResult, SpeakerDb};
