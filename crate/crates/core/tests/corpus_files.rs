use std::fs;

use spmis_core::corpusgen::{generate, CorpusConfig, EmittedFiles};
use spmis_core::eval::eval_speaker_stage;
use spmis_core::model::{parse_manifest, ManifestOptions, PolicySet, Verdict, VerdictRecord};
use spmis_core::providers::{EmbeddingProvider, EmbeddingStore, TranscriptStore};
use spmis_core::workflow::enroll_watchlist;

fn cfg() -> CorpusConfig {
    CorpusConfig {
        n_speakers: 50,
        n_celebrities: 10,
        dim: 48,
        samples_total: 800,
        category_weights: [0.1, 0.7, 0.1, 0.1],
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn emitted_files_reload_cleanly() {
    let corpus = generate(&cfg()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let files: EmittedFiles = corpus.emit(tmp.path()).unwrap();

    let m = parse_manifest(fs::read(&files.manifest).unwrap().as_slice(), ManifestOptions::default())
        .unwrap();
    assert!(m.warnings.is_empty());
    assert_eq!(m.utterances, corpus.manifest);

    let policy = PolicySet::read_json(fs::File::open(&files.policy).unwrap()).unwrap();
    assert_eq!(policy, corpus.policy);
    assert_eq!(policy.validate(&m.utterances).findings(), 0);

    let transcripts =
        TranscriptStore::read(fs::read(&files.transcripts).unwrap().as_slice()).unwrap();
    assert_eq!(transcripts.len(), corpus.manifest.len());

    let model = corpus.embedding_model();
    for path in [&files.embeddings, &files.enroll_embeddings] {
        let store = EmbeddingStore::read(fs::File::open(path).unwrap()).unwrap();
        assert_eq!(store.dim(), 48);
        for key in store.keys() {
            let expect = model.embedding(key).unwrap();
            assert_eq!(store.raw(key).unwrap(), expect.as_slice(), "{key}");
        }
    }
    let enroll = parse_manifest(
        fs::read(&files.enroll_manifest).unwrap().as_slice(),
        ManifestOptions::default(),
    )
    .unwrap();
    assert_eq!(enroll.utterances, corpus.enrollment_manifest);
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = generate(&cfg()).unwrap().emit(a.path()).unwrap();
    let fb = generate(&cfg()).unwrap().emit(b.path()).unwrap();
    for (x, y) in [
        (&fa.manifest, &fb.manifest),
        (&fa.embeddings, &fb.embeddings),
        (&fa.transcripts, &fb.transcripts),
        (&fa.policy, &fb.policy),
        (&fa.enroll_embeddings, &fb.enroll_embeddings),
    ] {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn noiseless_corpus_has_perfect_speaker_stage() {
    let corpus = generate(&CorpusConfig {
        sigma: 0.0,
        system_bias: 0.0,
        ..cfg()
    })
    .unwrap();
    let db = enroll_watchlist(
        &corpus.enrollment_manifest,
        &corpus.enrollment_embeddings,
        &corpus.policy.speakers(),
        1,
        0.95,
    )
    .unwrap();
    let verdicts: Vec<VerdictRecord> = corpus
        .manifest
        .iter()
        .map(|u| {
            let q = db.query(&corpus.embeddings.embedding(&u.provider_key).unwrap()).unwrap();
            VerdictRecord::Decided(match (q.matched, q.best_speaker) {
                (true, Some(s)) => Verdict::classified(&u.id, s, q.similarity, u.ground_truth.topic, true),
                _ => Verdict::speaker_not_watchlisted(&u.id, q.similarity),
            })
        })
        .collect();
    let r = eval_speaker_stage(&verdicts, &corpus.manifest).unwrap();
    assert!(r.micro.total > 0);
    assert_eq!(r.micro.errors, 0);
}
