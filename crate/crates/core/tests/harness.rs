use std::path::Path;

use simulpolicy::harness::{
    evaluate_corpus, is_unstable_token, load_manifest, sweep, write_report, write_sweep_csv,
    write_synthetic_cascade_corpus, write_synthetic_corpus, Backend, CascadeSettings, CorpusSummary,
    EvalOptions, HarnessError, Sensitivity, SweepConfig, SyntheticCorpusSpec,
    SyntheticTranslatorSpec, Utterance,
};
use simulpolicy::regularize::{NoiseKind, RegularizerSpec};
use simulpolicy::{EngineConfig, PolicySpec};

fn translator(k: usize) -> SyntheticTranslatorSpec {
    SyntheticTranslatorSpec {
        tokens_per_chunk: 2,
        unstable_suffix_len: k,
        sensitivity: Sensitivity::FullInput,
        seed: 5,
        segment_ms: 250,
    }
}

fn corpus(n: usize) -> SyntheticCorpusSpec {
    SyntheticCorpusSpec {
        num_utterances: n,
        min_duration_ms: 1000,
        max_duration_ms: 3000,
        sample_rate_hz: 8000,
        seed: 3,
    }
}

fn make(dir: &Path, n: usize, k: usize) -> Vec<Utterance> {
    let m = write_synthetic_corpus(dir, &corpus(n), &translator(k)).unwrap();
    load_manifest(&m).unwrap()
}

fn rbi() -> PolicySpec {
    PolicySpec::Rbi {
        regularizers: vec![RegularizerSpec::noise(NoiseKind::Gaussian), RegularizerSpec::time_shift()],
    }
}

#[test]
fn stable_backend_matches_offline_bleu() {
    let dir = tempfile::tempdir().unwrap();
    // References come from a k=2 backend, so the k=0 output is imperfect.
    let utts = make(dir.path(), 8, 2);
    let backend = Backend::synthetic(translator(0));
    for chunk in [250, 400, 1000] {
        let r = evaluate_corpus(&utts, &backend, &EngineConfig::new(chunk, rbi()), &EvalOptions::default()).unwrap();
        assert!(r.summary.offline_bleu < 100.0);
        assert_eq!(r.summary.metrics.bleu, r.summary.offline_bleu);
    }
}

#[test]
fn finalize_only_lags_by_the_source_duration() {
    let dir = tempfile::tempdir().unwrap();
    let utts = make(dir.path(), 6, 2);
    let cfg = EngineConfig::new(500, PolicySpec::Hold { n: 10_000 });
    let r = evaluate_corpus(&utts, &Backend::synthetic(translator(2)), &cfg, &EvalOptions::default()).unwrap();
    let mean_t = r.utterances.iter().map(|u| u.result.src_duration_ms).sum::<f64>() / r.utterances.len() as f64;
    assert!((r.summary.metrics.al_ms - mean_t).abs() < 1e-6 * mean_t);
    assert_eq!(r.summary.metrics.bleu, 100.0);
    assert!(r.utterances.iter().all(|u| u.result.policy_committed == 0));
}

#[test]
fn reports_are_deterministic_and_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let utts = make(dir.path(), 10, 2);
    let backend = Backend::synthetic(translator(2));
    let cfg = EngineConfig::new(250, rbi()).with_seed(17);
    let serial = evaluate_corpus(&utts, &backend, &cfg, &EvalOptions::default()).unwrap();
    let parallel = evaluate_corpus(&utts, &backend, &cfg, &EvalOptions { jobs: 4, ..Default::default() }).unwrap();
    assert_eq!(serial, parallel);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_report(&serial, &a).unwrap();
    write_report(&parallel, &b).unwrap();
    for f in ["utterances.jsonl", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    // Only the perturbations depend on the seed; the filtered commits do not.
    let other = evaluate_corpus(&utts, &backend, &cfg.clone().with_seed(18), &EvalOptions::default()).unwrap();
    assert_eq!(serial.utterances[0].result.committed, other.utterances[0].result.committed);
}

#[test]
fn summary_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let utts = make(dir.path(), 4, 2);
    let r = evaluate_corpus(&utts, &Backend::synthetic(translator(2)), &EngineConfig::new(500, rbi()), &EvalOptions::default()).unwrap();
    write_report(&r, &dir.path().join("out")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap();
    let parsed: CorpusSummary = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, r.summary);
    let lines = std::fs::read_to_string(dir.path().join("out/utterances.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 4);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    for key in ["id", "tokens", "consumed_ms", "metrics"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert!(first["metrics"].get("AL_ms").is_some());
}

#[test]
fn failing_utterances_abort_or_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    make(dir.path(), 3, 2);
    let spec = hound::WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(dir.path().join("wav/utt0001.wav"), spec).unwrap();
    for _ in 0..16000 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    let utts = load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
    let backend = Backend::synthetic(translator(2));
    let cfg = EngineConfig::new(500, rbi());
    match evaluate_corpus(&utts, &backend, &cfg, &EvalOptions::default()) {
        Err(HarnessError::Utterance { id, .. }) => assert_eq!(id, "utt0001"),
        other => panic!("{other:?}"),
    }
    let r = evaluate_corpus(&utts, &backend, &cfg, &EvalOptions { skip_errors: true, ..Default::default() }).unwrap();
    assert_eq!(r.summary.num_failed, 1);
    assert_eq!(r.summary.failures[0].id, "utt0001");
    assert_eq!(r.utterances.len(), 2);
}

#[test]
fn mode_must_match_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let utts = make(dir.path(), 2, 2);
    let cascade = Backend::synthetic_cascade(translator(2), CascadeSettings::default());
    let err = evaluate_corpus(&utts, &cascade, &EngineConfig::new(500, rbi()), &EvalOptions::default()).unwrap_err();
    assert!(err.to_string().contains("cascade mode needs `logits`"), "{err}");
}

#[test]
fn sweep_is_a_cartesian_product() {
    let dir = tempfile::tempdir().unwrap();
    let utts = make(dir.path(), 3, 2);
    let backend = Backend::synthetic(translator(2));
    let cfg = SweepConfig::new(vec![PolicySpec::LocalAgreement { n: 2 }, rbi()]);
    let rows = sweep(&utts, &backend, &EngineConfig::new(500, rbi()), &cfg, &EvalOptions::default()).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows.iter().map(|r| r.chunk_ms).collect::<Vec<_>>(), vec![250, 500, 1000, 250, 500, 1000]);
    let mut csv = Vec::new();
    write_sweep_csv(&rows, &mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "policy,chunk_ms,bleu,al_ms,ap,dal_ms");
    assert_eq!(csv.lines().count(), 7);

    let one = SweepConfig { chunk_sizes_ms: vec![500], policies: vec![PolicySpec::Hold { n: 1 }] };
    assert_eq!(sweep(&utts, &backend, &EngineConfig::new(500, rbi()), &one, &EvalOptions::default()).unwrap().len(), 1);
    let empty = SweepConfig { chunk_sizes_ms: vec![], policies: vec![PolicySpec::Hold { n: 1 }] };
    assert!(sweep(&utts, &backend, &EngineConfig::new(500, rbi()), &empty, &EvalOptions::default()).is_err());
}

#[test]
fn withholding_more_never_lowers_latency() {
    let dir = tempfile::tempdir().unwrap();
    let utts = make(dir.path(), 12, 2);
    let backend = Backend::synthetic(translator(2));
    let mean_al = |policy: PolicySpec, chunk: u32| {
        evaluate_corpus(&utts, &backend, &EngineConfig::new(chunk, policy), &EvalOptions::default())
            .unwrap()
            .summary
            .metrics
            .al_ms
    };
    for chunk in [250, 500] {
        let hold: Vec<f64> = (0..5).map(|n| mean_al(PolicySpec::Hold { n }, chunk)).collect();
        assert!(hold.windows(2).all(|w| w[0] <= w[1]), "{hold:?}");
        let la: Vec<f64> = (1..5).map(|n| mean_al(PolicySpec::LocalAgreement { n }, chunk)).collect();
        assert!(la.windows(2).all(|w| w[0] <= w[1]), "{la:?}");
    }
}

#[test]
fn cascade_corpus_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticTranslatorSpec { tokens_per_chunk: 1, ..translator(2) };
    let m = write_synthetic_cascade_corpus(dir.path(), &corpus(5), &spec, 40.0, 0.2).unwrap();
    let utts = load_manifest(&m).unwrap();
    assert!(utts.iter().all(|u| u.source_transcript.is_some()));
    let backend = Backend::synthetic_cascade(spec, CascadeSettings::default());
    let cascade_rbi = PolicySpec::Rbi { regularizers: vec![RegularizerSpec::Identity] };
    let r = evaluate_corpus(&utts, &backend, &EngineConfig::new(500, cascade_rbi), &EvalOptions::default()).unwrap();
    assert_eq!(r.summary.offline_bleu, 100.0);
    for u in &r.utterances {
        assert!(u.result.committed[..u.result.policy_committed].iter().all(|c| !is_unstable_token(&c.token)));
        assert_eq!(u.result.decode_calls % u.result.num_chunks, 0);
    }
    let e2e = Backend::synthetic(translator(2));
    assert!(evaluate_corpus(&utts, &e2e, &EngineConfig::new(500, rbi()), &EvalOptions::default()).is_err());
}
