//! C ABI for the spmis detection engine.
//!
//! Objects cross the boundary as opaque handles created by `*_new` / `*_load`
//! and released by the matching `*_free`. Every fallible call returns a
//! [`SpmisStatus`]; on failure [`spmis_last_error`] describes the most recent
//! error on the calling thread. Output parameters are written only on
//! success. Strings are NUL-terminated UTF-8.
//!
//! Handles are not synchronized: share one across threads only for
//! read-only calls (queries, predictions, decisions).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use spmis_core::model::{Outcome, PolicySet, Reason, SpeakerId, Topic};
use spmis_core::pipeline::Detector;
use spmis_core::providers::{DeepfakeDecision, ProviderError};
use spmis_core::speakerdb::{DbError, Embedding, SpeakerDb};
use spmis_core::topicclf::TopicModel;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpmisStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Utf8 = 3,
    Io = 4,
    Format = 5,
    DimensionMismatch = 6,
    AlreadyEnrolled = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpmisTopic {
    Politics = 0,
    Medicine = 1,
    Education = 2,
    Laws = 3,
    Finance = 4,
    Other = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpmisOutcome {
    NonMisinformation = 0,
    Misinformation = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpmisReason {
    BonafideAudio = 0,
    SpeakerNotWatchlisted = 1,
    TopicNotWatched = 2,
    WatchedPairMatched = 3,
}

/// Top-1 retrieval result. `best_index` is the entry position of the most
/// similar speaker (see `spmis_db_speaker_at`), or -1 for an empty
/// database.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpmisQuery {
    pub matched: bool,
    pub similarity: f64,
    pub best_index: i64,
}

/// Cascade decision. Fields past the terminating stage are unset:
/// `similarity` is NaN before speaker retrieval, `matched_index` is -1
/// without a match and `has_topic` is false before topic prediction.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpmisVerdict {
    pub outcome: SpmisOutcome,
    pub reason: SpmisReason,
    pub similarity: f64,
    pub matched_index: i64,
    pub has_topic: bool,
    pub predicted_topic: SpmisTopic,
}

pub struct SpmisSpeakerDb(SpeakerDb);
pub struct SpmisTopicModel(TopicModel);
pub struct SpmisDetector(Detector);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(SpmisStatus, String);

type Res<T> = Result<T, Failure>;

fn fail<T>(status: SpmisStatus, message: impl Into<String>) -> Res<T> {
    Err(Failure(status, message.into()))
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `body`, translating errors and panics into a status code.
fn guard(body: impl FnOnce() -> Res<()>) -> SpmisStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            SpmisStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpmisStatus::Internal
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Res<&'a T> {
    p.as_ref()
        .map_or_else(|| fail(SpmisStatus::NullPointer, format!("{name} is null")), Ok)
}

unsafe fn borrow_mut<'a, T>(p: *mut T, name: &str) -> Res<&'a mut T> {
    p.as_mut()
        .map_or_else(|| fail(SpmisStatus::NullPointer, format!("{name} is null")), Ok)
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Res<&'a str> {
    if p.is_null() {
        return fail(SpmisStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(SpmisStatus::Utf8, format!("{name} is not valid UTF-8")))
}

unsafe fn floats<'a>(p: *const f32, len: usize, name: &str) -> Res<&'a [f32]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(SpmisStatus::NullPointer, format!("{name} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn speaker_id(s: &str) -> Res<SpeakerId> {
    SpeakerId::new(s).or_else(|e| fail(SpmisStatus::InvalidArgument, e.to_string()))
}

fn db_failure(e: DbError) -> Failure {
    let status = match &e {
        DbError::Dim { .. } => SpmisStatus::DimensionMismatch,
        DbError::AlreadyEnrolled(_) => SpmisStatus::AlreadyEnrolled,
        DbError::Format(_) => SpmisStatus::Format,
        DbError::Io(_) => SpmisStatus::Io,
        _ => SpmisStatus::InvalidArgument,
    };
    Failure(status, e.to_string())
}

fn open(path: &str) -> Res<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .or_else(|e| fail(SpmisStatus::Io, format!("{path}: {e}")))
}

fn embedding(values: &[f32]) -> Res<Embedding> {
    Embedding::new(values.to_vec()).map_err(db_failure)
}

fn c_topic(t: Topic) -> SpmisTopic {
    match t {
        Topic::Politics => SpmisTopic::Politics,
        Topic::Medicine => SpmisTopic::Medicine,
        Topic::Education => SpmisTopic::Education,
        Topic::Laws => SpmisTopic::Laws,
        Topic::Finance => SpmisTopic::Finance,
        Topic::Other => SpmisTopic::Other,
    }
}

/// Copies `s` plus a terminating NUL into `buf`. `*needed` receives the
/// required size including the NUL, also when the buffer is too small.
unsafe fn copy_out(s: &str, buf: *mut c_char, buf_len: usize, needed: *mut usize) -> Res<()> {
    if !needed.is_null() {
        *needed = s.len() + 1;
    }
    if buf_len < s.len() + 1 {
        return fail(
            SpmisStatus::BufferTooSmall,
            format!("buffer of {buf_len} bytes, {} needed", s.len() + 1),
        );
    }
    if buf.is_null() {
        return fail(SpmisStatus::NullPointer, "buf is null");
    }
    ptr::copy_nonoverlapping(s.as_ptr().cast::<c_char>(), buf, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Message for the last failing call on this thread; empty after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn spmis_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn spmis_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an empty speaker database.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spmis_db_new(
    dim: usize,
    threshold: f32,
    out: *mut *mut SpmisSpeakerDb,
) -> SpmisStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        let db = SpeakerDb::new(dim, threshold).map_err(db_failure)?;
        *out = Box::into_raw(Box::new(SpmisSpeakerDb(db)));
        Ok(())
    })
}

/// Loads a database file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spmis_db_load(
    path: *const c_char,
    out: *mut *mut SpmisSpeakerDb,
) -> SpmisStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        let path = text(path, "path")?;
        let db = SpeakerDb::load(open(path)?).map_err(|e| {
            let Failure(status, msg) = db_failure(e);
            Failure(status, format!("{path}: {msg}"))
        })?;
        *out = Box::into_raw(Box::new(SpmisSpeakerDb(db)));
        Ok(())
    })
}

/// Writes the database to `path`.
///
/// # Safety
/// `db` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn spmis_db_save(db: *const SpmisSpeakerDb, path: *const c_char) -> SpmisStatus {
    guard(|| {
        let db = borrow(db, "db")?;
        let path = text(path, "path")?;
        let file = File::create(Path::new(path))
            .or_else(|e| fail(SpmisStatus::Io, format!("{path}: {e}")))?;
        let mut w = BufWriter::new(file);
        db.0.save(&mut w).map_err(db_failure)?;
        w.flush()
            .or_else(|e| fail(SpmisStatus::Io, format!("{path}: {e}")))
    })
}

/// Releases a database handle. Null is ignored.
///
/// # Safety
/// `db` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spmis_db_free(db: *mut SpmisSpeakerDb) {
    if !db.is_null() {
        drop(Box::from_raw(db));
    }
}

/// Number of enrolled speakers (0 for null).
///
/// # Safety
/// `db` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn spmis_db_len(db: *const SpmisSpeakerDb) -> usize {
    db.as_ref().map_or(0, |d| d.0.len())
}

/// Embedding dimension (0 for null).
///
/// # Safety
/// `db` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn spmis_db_dim(db: *const SpmisSpeakerDb) -> usize {
    db.as_ref().map_or(0, |d| d.0.dim())
}

/// Enrolls `speaker` from `n_clips` row-major clips of `dim` floats each.
///
/// # Safety
/// `clips` must point to `n_clips * dim` floats.
#[no_mangle]
pub unsafe extern "C" fn spmis_db_enroll(
    db: *mut SpmisSpeakerDb,
    speaker: *const c_char,
    clips: *const f32,
    n_clips: usize,
    dim: usize,
) -> SpmisStatus {
    guard(|| {
        let db = borrow_mut(db, "db")?;
        let speaker = speaker_id(text(speaker, "speaker")?)?;
        let total = n_clips
            .checked_mul(dim)
            .map_or_else(|| fail(SpmisStatus::InvalidArgument, "n_clips * dim overflows"), Ok)?;
        let values = floats(clips, total, "clips")?;
        if dim == 0 {
            return Err(db_failure(DbError::Dim {
                expected: db.0.dim(),
                got: 0,
            }));
        }
        let clips = values
            .chunks_exact(dim)
            .map(embedding)
            .collect::<Res<Vec<_>>>()?;
        db.0.enroll(speaker, &clips).map_err(db_failure)
    })
}

/// Removes `speaker`; `*removed` tells whether it was enrolled.
///
/// # Safety
/// Pointers must be valid; `removed` may be null.
#[no_mangle]
pub unsafe extern "C" fn spmis_db_remove(
    db: *mut SpmisSpeakerDb,
    speaker: *const c_char,
    removed: *mut bool,
) -> SpmisStatus {
    guard(|| {
        let db = borrow_mut(db, "db")?;
        let speaker = speaker_id(text(speaker, "speaker")?)?;
        let was = db.0.remove(&speaker);
        if !removed.is_null() {
            *removed = was;
        }
        Ok(())
    })
}

/// Copies the id of the entry at `index` into `buf`.
///
/// # Safety
/// `buf` must hold `buf_len` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn spmis_db_speaker_at(
    db: *const SpmisSpeakerDb,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> SpmisStatus {
    guard(|| {
        let db = borrow(db, "db")?;
        let Some(entry) = db.0.entries().nth(index) else {
            return fail(
                SpmisStatus::InvalidArgument,
                format!("index {index} out of range for {} entries", db.0.len()),
            );
        };
        copy_out(entry.speaker.as_str(), buf, buf_len, needed)
    })
}

fn position(db: &SpeakerDb, speaker: &SpeakerId) -> i64 {
    db.entries()
        .position(|e| e.speaker == speaker)
        .map_or(-1, |i| i as i64)
}

/// Exact top-1 cosine query.
///
/// # Safety
/// `probe` must point to `dim` floats and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn spmis_db_query(
    db: *const SpmisSpeakerDb,
    probe: *const f32,
    dim: usize,
    out: *mut SpmisQuery,
) -> SpmisStatus {
    guard(|| {
        let db = borrow(db, "db")?;
        let out = borrow_mut(out, "out")?;
        let probe = embedding(floats(probe, dim, "probe")?)?;
        let q = db.0.query(&probe).map_err(db_failure)?;
        *out = SpmisQuery {
            matched: q.matched,
            similarity: q.similarity,
            best_index: q.best_speaker.map_or(-1, |s| position(&db.0, &s)),
        };
        Ok(())
    })
}

/// Loads a topic model file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn spmis_topic_model_load(
    path: *const c_char,
    out: *mut *mut SpmisTopicModel,
) -> SpmisStatus {
    guard(|| {
        let out = borrow_mut(out, "out")?;
        let path = text(path, "path")?;
        let model = TopicModel::load(open(path)?)
            .or_else(|e| fail(SpmisStatus::Format, format!("{path}: {e}")))?;
        *out = Box::into_raw(Box::new(SpmisTopicModel(model)));
        Ok(())
    })
}

/// Releases a topic model handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spmis_topic_model_free(model: *mut SpmisTopicModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicts the topic of a transcript.
///
/// # Safety
/// `transcript` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn spmis_topic_model_predict(
    model: *const SpmisTopicModel,
    transcript: *const c_char,
    out: *mut SpmisTopic,
) -> SpmisStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let out = borrow_mut(out, "out")?;
        *out = c_topic(model.0.predict(text(transcript, "transcript")?).0);
        Ok(())
    })
}

/// Builds a detector from copies of `db` and `model` plus a policy file
/// (JSON array of {speaker, topic}).
///
/// # Safety
/// Handles must come from this library; `policy_path` must be
/// NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn spmis_detector_new(
    db: *const SpmisSpeakerDb,
    model: *const SpmisTopicModel,
    policy_path: *const c_char,
    out: *mut *mut SpmisDetector,
) -> SpmisStatus {
    guard(|| {
        let db = borrow(db, "db")?;
        let model = borrow(model, "model")?;
        let out = borrow_mut(out, "out")?;
        let path = text(policy_path, "policy_path")?;
        let policy = PolicySet::read_json(open(path)?)
            .or_else(|e| fail(SpmisStatus::Format, format!("{path}: {e}")))?;
        let detector = Detector::new(db.0.clone(), model.0.clone(), policy)
            .or_else(|e| fail(SpmisStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(SpmisDetector(detector)));
        Ok(())
    })
}

/// Releases a detector handle. Null is ignored.
///
/// # Safety
/// `detector` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spmis_detector_free(detector: *mut SpmisDetector) {
    if !detector.is_null() {
        drop(Box::from_raw(detector));
    }
}

/// Runs the cascade on one utterance. `synthetic` is the deepfake-stage
/// decision. `embedding` is read only when `synthetic` is true and
/// `transcript` only when the speaker stage matched, so either may be null
/// when its stage is not reached.
///
/// # Safety
/// `embedding` must point to `dim` floats when read; `transcript` must be
/// NUL-terminated when read; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn spmis_detector_decide(
    detector: *const SpmisDetector,
    synthetic: bool,
    embedding: *const f32,
    dim: usize,
    transcript: *const c_char,
    out: *mut SpmisVerdict,
) -> SpmisStatus {
    guard(|| {
        let det = borrow(detector, "detector")?;
        let out = borrow_mut(out, "out")?;
        let missing = |name: &str| ProviderError::MissingFeature(name.to_owned());
        let verdict = det
            .0
            .decide(
                "",
                "",
                || {
                    Ok(if synthetic {
                        DeepfakeDecision::Synthetic
                    } else {
                        DeepfakeDecision::Bonafide
                    })
                },
                || {
                    let values = floats(embedding, dim, "embedding").map_err(|_| missing("embedding"))?;
                    Embedding::new(values.to_vec()).map_err(|_| ProviderError::BadVector("embedding".into()))
                },
                || {
                    text(transcript, "transcript")
                        .map(str::to_owned)
                        .map_err(|_| missing("transcript"))
                },
            )
            .map_err(|e| {
                let status = match e.source {
                    spmis_core::pipeline::StageFailure::Db(DbError::Dim { .. }) => {
                        SpmisStatus::DimensionMismatch
                    }
                    spmis_core::pipeline::StageFailure::Provider(ProviderError::MissingFeature(_)) => {
                        SpmisStatus::NullPointer
                    }
                    _ => SpmisStatus::InvalidArgument,
                };
                Failure(status, format!("{} stage: {}", e.stage, e.source))
            })?;
        *out = SpmisVerdict {
            outcome: match verdict.outcome {
                Outcome::Misinformation => SpmisOutcome::Misinformation,
                Outcome::NonMisinformation => SpmisOutcome::NonMisinformation,
            },
            reason: match verdict.reason {
                Reason::BonafideAudio => SpmisReason::BonafideAudio,
                Reason::SpeakerNotWatchlisted => SpmisReason::SpeakerNotWatchlisted,
                Reason::TopicNotWatched => SpmisReason::TopicNotWatched,
                Reason::WatchedPairMatched => SpmisReason::WatchedPairMatched,
            },
            similarity: verdict.similarity.unwrap_or(f64::NAN),
            matched_index: verdict
                .matched_speaker
                .as_ref()
                .map_or(-1, |s| position(det.0.db(), s)),
            has_topic: verdict.predicted_topic.is_some(),
            predicted_topic: verdict.predicted_topic.map_or(SpmisTopic::Other, c_topic),
        };
        Ok(())
    })
}

/// Copies the id of the detector database's entry at `index` into `buf`.
///
/// # Safety
/// As for `spmis_db_speaker_at`.
#[no_mangle]
pub unsafe extern "C" fn spmis_detector_speaker_at(
    detector: *const SpmisDetector,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> SpmisStatus {
    guard(|| {
        let det = borrow(detector, "detector")?;
        let Some(entry) = det.0.db().entries().nth(index) else {
            return fail(SpmisStatus::InvalidArgument, format!("index {index} out of range"));
        };
        copy_out(entry.speaker.as_str(), buf, buf_len, needed)
    })
}
