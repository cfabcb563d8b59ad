//! Enrollable speaker vector database with exact cosine top-1 retrieval.
//!
//! Each enrolled speaker is represented by the L2-normalized arithmetic mean
//! of its reference clip embeddings. Centroids live in one contiguous
//! row-major `f32` array; a query is a single pass of dot products over it,
//! accumulated in `f64`.

use std::collections::HashMap;
use std::io::{self, Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::binio::{self, ByteReader, FormatError};
use crate::model::SpeakerId;

pub const DEFAULT_DIM: usize = 512;
pub const DEFAULT_THRESHOLD: f32 = 0.95;

const MAGIC: &[u8; 8] = b"SPKDB1\0\0";
const UNIT_NORM_TOL: f64 = 1e-6;
const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DbError {
    #[error("enrollment of '{0}' needs at least one clip")]
    EmptyEnrollment(SpeakerId),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("speaker '{0}' is already enrolled")]
    AlreadyEnrolled(SpeakerId),
    #[error("mean embedding of '{0}' has near-zero norm")]
    DegenerateMean(SpeakerId),
    #[error("embedding contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f32),
    #[error("dimension must be positive")]
    ZeroDim,
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A fixed-length embedding with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self, DbError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DbError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }
}

/// Read-only view of one database entry.
#[derive(Debug, Clone, Copy)]
pub struct SpeakerEntry<'a> {
    pub speaker: &'a SpeakerId,
    pub centroid: &'a [f32],
    pub clip_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub matched: bool,
    pub best_speaker: Option<SpeakerId>,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
pub struct SpeakerDb {
    dim: usize,
    threshold: f32,
    ids: Vec<SpeakerId>,
    clip_counts: Vec<u32>,
    /// `ids.len() * dim` centroid values, row-major.
    values: Vec<f32>,
    /// 1/‖centroid‖ in f64, so self-similarity is 1 despite f32 storage.
    inv_norms: Vec<f64>,
    index: HashMap<SpeakerId, usize>,
}

impl SpeakerDb {
    pub fn new(dim: usize, threshold: f32) -> Result<Self, DbError> {
        if dim == 0 {
            return Err(DbError::ZeroDim);
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(DbError::InvalidThreshold(threshold));
        }
        Ok(Self {
            dim,
            threshold,
            ids: Vec::new(),
            clip_counts: Vec::new(),
            values: Vec::new(),
            inv_norms: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f32) -> Result<(), DbError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(DbError::InvalidThreshold(threshold));
        }
        self.threshold = threshold;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, speaker: &SpeakerId) -> bool {
        self.index.contains_key(speaker)
    }

    pub fn entry(&self, speaker: &SpeakerId) -> Option<SpeakerEntry<'_>> {
        self.index.get(speaker).map(|&i| self.entry_at(i))
    }

    pub fn entries(&self) -> impl Iterator<Item = SpeakerEntry<'_>> + '_ {
        (0..self.ids.len()).map(move |i| self.entry_at(i))
    }

    fn entry_at(&self, i: usize) -> SpeakerEntry<'_> {
        SpeakerEntry {
            speaker: &self.ids[i],
            centroid: &self.values[i * self.dim..(i + 1) * self.dim],
            clip_count: self.clip_counts[i],
        }
    }

    /// Adds `speaker` with centroid = normalize(mean(clips)).
    pub fn enroll(&mut self, speaker: SpeakerId, clips: &[Embedding]) -> Result<(), DbError> {
        if clips.is_empty() {
            return Err(DbError::EmptyEnrollment(speaker));
        }
        if let Some(bad) = clips.iter().find(|c| c.dim() != self.dim) {
            return Err(DbError::Dim {
                expected: self.dim,
                got: bad.dim(),
            });
        }
        if self.index.contains_key(&speaker) {
            return Err(DbError::AlreadyEnrolled(speaker));
        }
        let mut mean = vec![0.0f64; self.dim];
        for clip in clips {
            for (m, &v) in mean.iter_mut().zip(clip.as_slice()) {
                *m += f64::from(v);
            }
        }
        let n = clips.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
        if norm < DEGENERATE_NORM {
            return Err(DbError::DegenerateMean(speaker));
        }
        let centroid: Vec<f32> = mean.iter().map(|m| (m / norm) as f32).collect();
        let clip_count = u32::try_from(clips.len()).unwrap_or(u32::MAX);
        self.push(speaker, clip_count, &centroid);
        Ok(())
    }

    fn push(&mut self, speaker: SpeakerId, clip_count: u32, centroid: &[f32]) {
        let sq: f64 = centroid.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
        self.index.insert(speaker.clone(), self.ids.len());
        self.ids.push(speaker);
        self.clip_counts.push(clip_count);
        self.values.extend_from_slice(centroid);
        self.inv_norms.push(1.0 / sq.sqrt());
    }

    /// Drops `speaker`; returns whether it was present. Order of the
    /// remaining entries is preserved.
    pub fn remove(&mut self, speaker: &SpeakerId) -> bool {
        let Some(i) = self.index.remove(speaker) else {
            return false;
        };
        self.ids.remove(i);
        self.clip_counts.remove(i);
        self.inv_norms.remove(i);
        self.values.drain(i * self.dim..(i + 1) * self.dim);
        for (j, id) in self.ids.iter().enumerate().skip(i) {
            self.index.insert(id.clone(), j);
        }
        true
    }

    /// Exact top-1 cosine retrieval. Ties go to the lexicographically
    /// smallest speaker id; an empty database yields similarity −1.
    pub fn query(&self, probe: &Embedding) -> Result<QueryResult, DbError> {
        if probe.dim() != self.dim {
            return Err(DbError::Dim {
                expected: self.dim,
                got: probe.dim(),
            });
        }
        let p: Vec<f64> = probe.as_slice().iter().map(|&v| f64::from(v)).collect();
        let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if self.ids.is_empty() || p_norm == 0.0 {
            // a zero probe has no direction; report the empty-match result
            return Ok(QueryResult {
                matched: false,
                best_speaker: None,
                similarity: -1.0,
            });
        }
        let inv_p = 1.0 / p_norm;
        let mut best = 0usize;
        let mut best_sim = f64::NEG_INFINITY;
        for (i, row) in self.values.chunks_exact(self.dim).enumerate() {
            let sim = (dot(row, &p) * self.inv_norms[i] * inv_p).clamp(-1.0, 1.0);
            if sim > best_sim || (sim == best_sim && self.ids[i] < self.ids[best]) {
                best = i;
                best_sim = sim;
            }
        }
        Ok(QueryResult {
            matched: best_sim >= f64::from(self.threshold),
            best_speaker: Some(self.ids[best].clone()),
            similarity: best_sim,
        })
    }

    /// Runs [`query`](Self::query) over many probes in parallel; results
    /// follow probe order.
    pub fn query_batch(&self, probes: &[Embedding]) -> Result<Vec<QueryResult>, DbError> {
        probes.par_iter().map(|p| self.query(p)).collect()
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<(), DbError> {
        w.write_all(MAGIC)?;
        binio::write_u32(&mut w, self.dim as u32)?;
        binio::write_f32(&mut w, self.threshold)?;
        binio::write_u64(&mut w, self.ids.len() as u64)?;
        for i in 0..self.ids.len() {
            let e = self.entry_at(i);
            binio::write_string(&mut w, e.speaker.as_str())?;
            binio::write_u32(&mut w, e.clip_count)?;
            binio::write_f32_slice(&mut w, e.centroid)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self, DbError> {
        let mut r = ByteReader::new(r);
        r.expect_magic(MAGIC)?;
        let at = r.offset();
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(r.invalid(at, "dimension is zero").into());
        }
        let at = r.offset();
        let threshold = r.f32()?;
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(r.invalid(at, format!("threshold {threshold} outside (0, 1]")).into());
        }
        let count = r.u64()?;
        let mut db = SpeakerDb::new(dim, threshold)?;
        let mut centroid = Vec::with_capacity(dim);
        for _ in 0..count {
            let at = r.offset();
            let id = r.string()?;
            let speaker = SpeakerId::new(id).map_err(|e| r.invalid(at, e.to_string()))?;
            if db.contains(&speaker) {
                return Err(r.invalid(at, format!("duplicate speaker '{speaker}'")).into());
            }
            let at = r.offset();
            let clip_count = r.u32()?;
            if clip_count == 0 {
                return Err(r.invalid(at, "clip_count is zero").into());
            }
            let at = r.offset();
            centroid.clear();
            r.f32_into(dim, &mut centroid)?;
            if centroid.iter().any(|v| !v.is_finite()) {
                return Err(r.invalid(at, "non-finite centroid value").into());
            }
            let norm = centroid
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(r.invalid(at, format!("centroid norm {norm} is not 1")).into());
            }
            db.push(speaker, clip_count, &centroid);
        }
        r.expect_eof()?;
        Ok(db)
    }
}

const LANES: usize = 32;

fn dot(row: &[f32], probe: &[f64]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime
        return unsafe { dot_avx2(row, probe) };
    }
    dot_lanes(row, probe)
}

// Same lane layout and summation order as the portable path, so both give
// bit-identical results; only the vector width differs.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_avx2(row: &[f32], probe: &[f64]) -> f64 {
    dot_lanes(row, probe)
}

/// Dot product of an f32 row with an f64 probe over `LANES` running sums,
/// combined pairwise at the end.
#[inline(always)]
fn dot_lanes(row: &[f32], probe: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let rc = row.chunks_exact(LANES);
    let pc = probe.chunks_exact(LANES);
    let (rr, pr) = (rc.remainder(), pc.remainder());
    for (r, p) in rc.zip(pc) {
        for k in 0..LANES {
            acc[k] += f64::from(r[k]) * p[k];
        }
    }
    let mut tail = 0.0;
    for (r, p) in rr.iter().zip(pr) {
        tail += f64::from(*r) * p;
    }
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for k in 0..width {
            acc[k] += acc[k + width];
        }
    }
    acc[0] + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(s: &str) -> SpeakerId {
        SpeakerId::new(s).unwrap()
    }

    fn basis(dim: usize, i: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        Embedding::new(v).unwrap()
    }

    #[test]
    fn single_unit_clip_is_its_own_centroid() {
        let mut db = SpeakerDb::new(4, 0.95).unwrap();
        let v = Embedding::new(vec![0.6, 0.0, 0.8, 0.0]).unwrap();
        db.enroll(sid("a"), std::slice::from_ref(&v)).unwrap();
        assert_eq!(db.entry(&sid("a")).unwrap().centroid, v.as_slice());
    }

    #[test]
    fn two_orthonormal_clips_average_to_diagonal() {
        let mut db = SpeakerDb::new(3, 0.95).unwrap();
        db.enroll(sid("a"), &[basis(3, 0), basis(3, 1)]).unwrap();
        let c = db.entry(&sid("a")).unwrap().centroid;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((f64::from(c[0]) - h).abs() < 1e-7);
        assert!((f64::from(c[1]) - h).abs() < 1e-7);
        assert_eq!(c[2], 0.0);
        let r = db.query(&basis(3, 0)).unwrap();
        assert!((r.similarity - h).abs() < 1e-7);
        assert!(!r.matched);
    }

    #[test]
    fn enrollment_errors() {
        let mut db = SpeakerDb::new(3, 0.95).unwrap();
        assert!(matches!(db.enroll(sid("a"), &[]), Err(DbError::EmptyEnrollment(_))));
        assert!(matches!(
            db.enroll(sid("a"), &[basis(4, 0)]),
            Err(DbError::Dim { expected: 3, got: 4 })
        ));
        db.enroll(sid("a"), &[basis(3, 0)]).unwrap();
        assert!(matches!(
            db.enroll(sid("a"), &[basis(3, 1)]),
            Err(DbError::AlreadyEnrolled(_))
        ));
        let neg = Embedding::new(vec![-1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            db.enroll(sid("b"), &[basis(3, 0), neg]),
            Err(DbError::DegenerateMean(_))
        ));
        assert!(matches!(Embedding::new(vec![f32::NAN]), Err(DbError::NonFinite(0))));
    }

    #[test]
    fn remove_semantics() {
        let mut db = SpeakerDb::new(3, 0.95).unwrap();
        db.enroll(sid("a"), &[basis(3, 0)]).unwrap();
        assert!(!db.remove(&sid("zz")));
        assert_eq!(db.len(), 1);
        assert!(db.remove(&sid("a")));
        assert!(db.is_empty());
        db.enroll(sid("a"), &[basis(3, 1)]).unwrap();
        assert!(db.contains(&sid("a")));
    }

    #[test]
    fn remove_keeps_order_and_index() {
        let mut db = SpeakerDb::new(3, 0.5).unwrap();
        for (i, s) in ["a", "b", "c"].iter().enumerate() {
            db.enroll(sid(s), &[basis(3, i)]).unwrap();
        }
        db.remove(&sid("a"));
        let ids: Vec<_> = db.entries().map(|e| e.speaker.as_str().to_owned()).collect();
        assert_eq!(ids, ["b", "c"]);
        let r = db.query(&basis(3, 2)).unwrap();
        assert_eq!(r.best_speaker, Some(sid("c")));
        assert_eq!(db.entry(&sid("c")).unwrap().centroid, basis(3, 2).as_slice());
    }

    #[test]
    fn self_query_matches_with_similarity_one() {
        let mut db = SpeakerDb::new(5, 0.95).unwrap();
        let clips = [
            Embedding::new(vec![0.3, -0.2, 0.5, 0.1, 0.7]).unwrap(),
            Embedding::new(vec![0.2, -0.1, 0.4, 0.3, 0.6]).unwrap(),
        ];
        db.enroll(sid("a"), &clips).unwrap();
        let probe = Embedding::new(db.entry(&sid("a")).unwrap().centroid.to_vec()).unwrap();
        let r = db.query(&probe).unwrap();
        assert!(r.matched);
        assert!((r.similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn near_miss_below_threshold_still_reports_speaker() {
        // probe = 0.93·c + sqrt(1-0.93²)·u with u ⟂ c
        let mut db = SpeakerDb::new(2, 0.95).unwrap();
        db.enroll(sid("a"), &[basis(2, 0)]).unwrap();
        let s = (1.0f64 - 0.93 * 0.93).sqrt();
        let probe = Embedding::new(vec![0.93, s as f32]).unwrap();
        let r = db.query(&probe).unwrap();
        assert!(!r.matched);
        assert_eq!(r.best_speaker, Some(sid("a")));
        assert!((r.similarity - 0.93).abs() < 1e-6);
    }

    #[test]
    fn ties_go_to_smallest_id() {
        let mut db = SpeakerDb::new(2, 0.5).unwrap();
        db.enroll(sid("b"), &[basis(2, 0)]).unwrap();
        db.enroll(sid("a"), &[basis(2, 1)]).unwrap();
        let probe = Embedding::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(db.query(&probe).unwrap().best_speaker, Some(sid("a")));
    }

    #[test]
    fn empty_db_query() {
        let db = SpeakerDb::new(2, 0.95).unwrap();
        let r = db.query(&basis(2, 0)).unwrap();
        assert_eq!(
            r,
            QueryResult {
                matched: false,
                best_speaker: None,
                similarity: -1.0
            }
        );
        assert!(matches!(db.query(&basis(3, 0)), Err(DbError::Dim { .. })));
    }

    #[test]
    fn empty_db_roundtrip_and_bad_magic() {
        let db = SpeakerDb::new(8, 0.95).unwrap();
        let mut buf = Vec::new();
        db.save(&mut buf).unwrap();
        let back = SpeakerDb::load(&buf[..]).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 8);
        buf[0] = b'X';
        match SpeakerDb::load(&buf[..]) {
            Err(DbError::Format(e)) => assert_eq!(e.offset(), 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let mut db = SpeakerDb::new(4, 0.95).unwrap();
        db.enroll(sid("abc"), &[basis(4, 1)]).unwrap();
        let mut buf = Vec::new();
        db.save(&mut buf).unwrap();
        // header: 8 magic + 4 dim + 4 tau + 8 count = 24; id: 4 + 3; clip count 4
        buf.truncate(24 + 7 + 4 + 6);
        match SpeakerDb::load(&buf[..]) {
            Err(DbError::Format(FormatError::Truncated { offset, .. })) => assert_eq!(offset, 41),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dispatch_matches_portable_kernel_bitwise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for len in [0, 1, 7, 31, 32, 33, 100, 512] {
            let row: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let probe: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let naive: f64 = row.iter().zip(&probe).map(|(a, b)| f64::from(*a) * b).sum();
            let got = dot(&row, &probe);
            assert_eq!(got.to_bits(), dot_lanes(&row, &probe).to_bits());
            assert!((got - naive).abs() < 1e-12);
        }
    }
}
