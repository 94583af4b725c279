use super::*;
use crate::parallel::NumaPolicy;

fn small() -> LayerShapes {
    LayerShapes::new(64, 96, 2).unwrap()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn presets() {
    assert_eq!(LayerShapes::preset("toy").unwrap(), LayerShapes::new(512, 1376, 2).unwrap());
    assert_eq!(
        LayerShapes::preset("llama8b-layer").unwrap(),
        LayerShapes::new(4096, 14336, 1).unwrap()
    );
    assert!(LayerShapes::preset("llama70b").is_err());
    assert_eq!(LayerShapes::TOY.head_dim(), 64);
    assert_eq!(LayerShapes::TOY.n_heads(), 8);
    assert_eq!(LayerShapes::new(96, 32, 1).unwrap().head_dim(), 32);
    assert_eq!(LayerShapes::TOY.linear_rows(), 2 * (4 * 512 + 3 * 1376));
}

#[test]
fn shape_violations() {
    assert!(matches!(LayerShapes::new(100, 128, 1), Err(Error::Shape(_))));
    assert!(matches!(LayerShapes::new(128, 0, 1), Err(Error::Shape(_))));
    assert!(matches!(LayerShapes::new(128, 128, 0), Err(Error::Shape(_))));
    let bad = LayerShapes { d_model: 48, d_ff: 64, n_layers: 1 };
    assert!(ToyDecoder::new(bad, 1).is_err());
}

#[test]
fn same_seed_same_weights() {
    let a = ToyDecoder::new(small(), 5).unwrap();
    let b = ToyDecoder::new(small(), 5).unwrap();
    let c = ToyDecoder::new(small(), 6).unwrap();
    for l in 0..2 {
        for name in MATRIX_NAMES {
            let m = a.matrix(l, name).unwrap();
            assert_eq!(qmat::encode(&m), qmat::encode(&b.matrix(l, name).unwrap()));
            assert_ne!(m, c.matrix(l, name).unwrap());
        }
    }
    assert_eq!(a.matrix(0, "wup").unwrap().rows(), 96);
    assert_eq!(a.matrix(0, "wdown").unwrap().cols(), 96);
    assert!(a.matrix(2, "wq").is_none());
    assert!(a.matrix(0, "wx").is_none());
}

#[test]
fn prefill_shapes_and_cache() {
    let exec = Executor::serial();
    let mut m = ToyDecoder::new(small(), 1).unwrap();
    let (hidden, stats) = m.prefill(&exec, 5).unwrap();
    assert_eq!((hidden.rows(), hidden.cols()), (64, 5));
    assert_eq!(stats.tokens, 5);
    assert_eq!(stats.step_seconds.len(), 1);
    assert_eq!(m.kv_len(), 5);
    assert!(hidden.values().iter().all(|v| v.is_finite()));
    assert!(m.prefill(&exec, 0).is_err());
}

#[test]
fn generate_requires_prefill() {
    let exec = Executor::serial();
    let mut m = ToyDecoder::new(small(), 1).unwrap();
    assert!(matches!(m.generate(&exec, 3), Err(Error::State(_))));
    m.prefill(&exec, 2).unwrap();
    m.reset();
    assert_eq!(m.kv_len(), 0);
    assert!(matches!(m.generate(&exec, 3), Err(Error::State(_))));
}

#[test]
fn zero_tokens_has_no_throughput() {
    let exec = Executor::serial();
    let mut m = ToyDecoder::new(small(), 1).unwrap();
    m.prefill(&exec, 1).unwrap();
    let stats = m.generate(&exec, 0).unwrap();
    assert_eq!(stats.seconds(), 0.0);
    assert!(matches!(stats.tokens_per_second(), Err(Error::State(_))));
}

#[test]
fn throughput_is_tokens_over_summed_steps() {
    let stats = PhaseStats { tokens: 4, step_seconds: vec![0.5, 0.25, 0.125, 0.125] };
    assert_eq!(stats.tokens_per_second().unwrap(), 4.0);
}

#[test]
fn cache_grows_to_prompt_plus_generated() {
    let exec = Executor::serial();
    let mut m = ToyDecoder::new(LayerShapes::new(64, 64, 1).unwrap(), 3).unwrap();
    m.prefill(&exec, DEFAULT_PROMPT_LEN).unwrap();
    let stats = m.generate(&exec, DEFAULT_GEN_TOKENS).unwrap();
    assert_eq!(stats.step_seconds.len(), 256);
    assert_eq!(m.kv_len(), 278);
    // A new prefill starts a new sequence.
    m.prefill(&exec, 3).unwrap();
    assert_eq!(m.kv_len(), 3);
}

fn sequential_last(m: &mut ToyDecoder, exec: &Executor, p: usize) -> Vec<f32> {
    m.reset();
    let mut last = Vec::new();
    for pos in 0..p {
        let x = m.embedding(pos);
        last = m.decode_step(exec, &x).unwrap();
    }
    last
}

#[test]
fn prefill_equals_sequential_steps() {
    let exec = Executor::serial();
    let mut m = ToyDecoder::new(small(), 9).unwrap();
    for p in [1, 2, 7] {
        let (hidden, _) = m.prefill(&exec, p).unwrap();
        let seq = sequential_last(&mut m, &exec, p);
        assert_eq!(bits(hidden.column(p - 1)), bits(&seq), "p={p}");
    }
}

#[test]
fn outputs_independent_of_threads_and_policy() {
    let mut m = ToyDecoder::new(small(), 4).unwrap();
    let serial = Executor::serial();
    let (want, _) = m.prefill(&serial, 6).unwrap();
    m.generate(&serial, 3).unwrap();
    let want_next = m.decode_step(&serial, &m.embedding(9)).unwrap();
    for (t, policy) in [(3, NumaPolicy::MemoryInterleave), (4, NumaPolicy::CoreBinding), (2, NumaPolicy::AllOff)] {
        let exec = Executor::new(t, policy).unwrap();
        m.place_on(&exec).unwrap();
        let (got, _) = m.prefill(&exec, 6).unwrap();
        assert_eq!(bits(got.values()), bits(want.values()));
        m.generate(&exec, 3).unwrap();
        let next = m.decode_step(&exec, &m.embedding(9)).unwrap();
        assert_eq!(bits(&next), bits(&want_next));
    }
}

#[test]
fn export_import_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = ToyDecoder::new(small(), 11).unwrap();
    let manifest = m.export(dir.path(), "small").unwrap();
    assert_eq!(manifest.matrices.len(), 14);
    assert_eq!(manifest.matrices[6].file, "layer0.wdown.qmat");
    let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(text.starts_with("name small\nd_model 64\nd_ff 96\nn_layers 2\nseed 11\nmatrix layer0.wq 64 64 layer0.wq.qmat\n"));
    assert_eq!(Manifest::parse(&text).unwrap(), manifest);

    let (back, parsed) = ToyDecoder::import(dir.path()).unwrap();
    assert_eq!(parsed, manifest);
    assert_eq!(back.seed(), 11);
    for l in 0..2 {
        for name in MATRIX_NAMES {
            assert_eq!(back.matrix(l, name), m.matrix(l, name));
        }
    }
}

#[test]
fn import_rejects_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    ToyDecoder::new(small(), 11).unwrap().export(dir.path(), "small").unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap();

    std::fs::write(&path, text.replace("d_ff 96", "d_ff 128")).unwrap();
    assert!(ToyDecoder::import(dir.path()).is_err());
    std::fs::write(&path, text.replace("matrix layer0.wq 64 64", "matrix layer0.wq 64 32")).unwrap();
    assert!(matches!(ToyDecoder::import(dir.path()), Err(Error::Format(_))));
    std::fs::write(&path, text.replace("seed 11\n", "")).unwrap();
    assert!(matches!(ToyDecoder::import(dir.path()), Err(Error::Format(_))));
    std::fs::write(&path, text.replace("name small", "name small extra")).unwrap();
    assert!(matches!(ToyDecoder::import(dir.path()), Err(Error::Format(_))));
    std::fs::remove_file(dir.path().join("layer1.wv.qmat")).unwrap();
    std::fs::write(&path, &text).unwrap();
    assert!(matches!(ToyDecoder::import(dir.path()), Err(Error::Io { .. })));
}
