use orthoattn::backbone::BackboneSpec;
use orthoattn::corpus::{kfold_split, synth, Preprocessing};
use orthoattn::experiment::{
    parse_markdown_table, prepare, report, run_cv, train_fold, Adam, Confusion, FoldReport, Metrics, Protocol, RunOptions, RunSummary,
    TrainConfig,
};
use orthoattn::model::ScopeModel;
use orthoattn::ortho::Variant;
use orthoattn::tensor::{GradBuffer, Graph, ParamGroup, ParamStore, RngState, Tensor};
use rand::Rng;

fn tiny_config() -> TrainConfig {
    TrainConfig { epochs: 4, patience: 2, k: 4, ..TrainConfig::default() }
}

fn small_backbone() -> BackboneSpec {
    BackboneSpec::ToyEncoder { d: 16, vocab_size: 512, n_layers: 1, n_heads: 4, max_len: 64 }
}

// Reference Adam written out per scalar, independently of the library's loop.
fn reference_adam(theta: &mut [f64], grads: &[Vec<f64>], lr: f64) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / (1.0 - b1.powi(t));
            let vhat = v[i] / (1.0 - b2.powi(t));
            theta[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[test]
fn adam_matches_reference_over_100_steps() {
    let mut rng = RngState::new(3);
    let init = Tensor::randn(vec![2, 3], 1.0, &mut rng).unwrap();
    let mut store = ParamStore::new();
    let id = store.add("w", init.clone(), ParamGroup::Head).unwrap();
    let grads: Vec<Vec<f64>> = (0..100).map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let mut adam = Adam::new(&store, 1e-3, 1e-2);
    for g in &grads {
        let mut buf = GradBuffer::zeros_like(&store);
        buf.add(id, g);
        adam.step(&mut store, &buf).unwrap();
    }
    let mut want = init.data().to_vec();
    reference_adam(&mut want, &grads, 1e-2);
    for (a, b) in store.get(id).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    assert_eq!(adam.steps(), 100);
}

#[test]
fn adam_descends_a_quadratic() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::new(vec![1], vec![1.0]).unwrap(), ParamGroup::Head).unwrap();
    let mut adam = Adam::new(&store, 0.0, 0.1);
    let mut prev = f64::INFINITY;
    for _ in 0..10 {
        let mut g = Graph::with_params(&store);
        let x = g.param(id);
        let loss = g.mul(x, x).unwrap();
        let loss = g.sum_all(loss);
        g.backward(loss).unwrap();
        let value = g.value(loss).data()[0];
        assert!(value < prev);
        prev = value;
        let mut buf = GradBuffer::zeros_like(&store);
        g.accumulate_param_grads(&mut buf);
        drop(g);
        adam.step(&mut store, &buf).unwrap();
    }
    // no Adam step is longer than lr, and ten of them cover most of the way
    let x = store.get(id).data()[0];
    assert!((0.0..0.5).contains(&x), "x = {x}");
}

#[test]
fn early_stopping_contract() {
    let samples = synth::bundled();
    let cfg = TrainConfig { epochs: 12, patience: 2, ..tiny_config() };
    let spec = cfg.model_spec(&small_backbone(), 4).unwrap();
    let mut model = ScopeModel::new(spec, 5).unwrap();
    let vocab = *model.backbone.vocab().unwrap();
    let folds = kfold_split(samples.len(), 4, 0).unwrap();
    let part = |idx: &[usize]| prepare(&samples, idx, cfg.preprocessing, &vocab, cfg.max_len).unwrap();
    let (train, val, test) = (part(&folds[0].train), part(&folds[0].val), part(&folds[0].test));
    let r = train_fold(&mut model, &train, &val, &test, &cfg, 0, 9).unwrap();

    assert_eq!(r.val_f1.len(), r.epochs_run);
    // best epoch: first strict maximum of the validation curve
    let best = r.val_f1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first = r.val_f1.iter().position(|&f| f == best).unwrap() + 1;
    assert_eq!(r.best_epoch, first);
    // stopped exactly `patience` epochs after the best, or ran out of epochs
    assert!(r.epochs_run == cfg.epochs || r.epochs_run - r.best_epoch == cfg.patience, "{r:?}");
    assert!(r.epochs_run - r.best_epoch <= cfg.patience);
    // the reported test score is that of the restored best snapshot
    let again = orthoattn::experiment::evaluate(&model, &test).unwrap();
    assert_eq!(again, r.confusion);
}

fn summary(variant: Variant, train: &str, test: &str, f1: f64) -> RunSummary {
    let cfg = TrainConfig { variant, ..TrainConfig::default() };
    let fold = FoldReport {
        fold: 0,
        seed: 0,
        precision: f1,
        recall: f1,
        f1,
        confusion: Confusion::default(),
        best_epoch: 1,
        epochs_run: 1,
        val_f1: vec![f1],
        train_seconds: 0.0,
    };
    RunSummary {
        run_id: RunSummary::run_id(train, test, &cfg),
        variant,
        preprocessing: Preprocessing::Normal,
        train_set: train.into(),
        test_set: test.into(),
        protocol: Protocol::CrossValidation,
        folds: vec![fold],
        macro_f1: f1,
        pooled: Metrics { precision: f1, recall: f1, f1 },
        config: cfg.clone(),
        model: cfg.model_spec(&small_backbone(), 4).unwrap(),
    }
}

#[test]
fn report_differences_and_round_trip() {
    let runs = [
        summary(Variant::Em, "sherlock", "sherlock", 0.90),
        summary(Variant::Ca, "sherlock", "sherlock", 0.88),
        summary(Variant::C, "sfu", "sfu", 0.70),
    ];
    let r = report(&runs, false);
    let diff = |model: &str| r.rows.iter().find(|row| row.model.starts_with(model)).unwrap();
    assert_eq!(diff("OA-EM ").diff_to_best, 0.0);
    assert!(diff("OA-EM ").best);
    assert!((diff("OA-CA").diff_to_best + 0.02).abs() < 1e-12);
    assert!(!diff("OA-CA").best);
    // a combination with a single run is trivially best
    assert!(diff("OA-C ").best && diff("OA-C ").diff_to_best == 0.0);

    let md = parse_markdown_table(&r.markdown());
    let text = r.csv().unwrap();
    let mut csv = csv::Reader::from_reader(text.as_bytes());
    let csv_rows: Vec<csv::StringRecord> = csv.records().map(Result::unwrap).collect();
    assert_eq!(md.len(), csv_rows.len());
    for (m, c) in md.iter().zip(&csv_rows) {
        assert_eq!((&m[0], &m[1], &m[2], &m[3], &m[4]), (&c[0].to_string(), &c[1].to_string(), &c[2].to_string(), &c[3].to_string(), &c[4].to_string()));
    }
}

#[test]
fn cv_is_deterministic_and_aggregates_folds() {
    let samples = synth::generate(24, 4);
    let cfg = TrainConfig { epochs: 2, k: 3, seed: 8, ..tiny_config() };
    let spec = cfg.model_spec(&small_backbone(), 4).unwrap();
    let a = run_cv(&samples, "tiny", &cfg, &spec, &RunOptions::default()).unwrap();
    let b = run_cv(&samples, "tiny", &cfg, &spec, &RunOptions { jobs: 2, checkpoint_dir: None }).unwrap();
    let strip = |s: &RunSummary| s.folds.iter().map(|f| (f.f1, f.confusion, f.val_f1.clone(), f.seed)).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.run_id, "tiny-em-normal-s8");
    assert_eq!(a.folds.len(), 3);

    let mean = a.folds.iter().map(|f| f.f1).sum::<f64>() / 3.0;
    assert!((a.macro_f1 - mean).abs() < 1e-15);
    let mut total = Confusion::default();
    a.folds.iter().for_each(|f| total.add(f.confusion));
    assert_eq!(a.pooled, total.metrics());
}

#[test]
fn kfold_partitions_for_many_sizes() {
    for n in [20, 37, 100] {
        for k in [3, 5, 10] {
            let folds = kfold_split(n, k, n as u64).unwrap();
            let mut tests: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
            tests.sort_unstable();
            assert_eq!(tests, (0..n).collect::<Vec<_>>());
            for f in &folds {
                let mut all: Vec<usize> = f.train.iter().chain(&f.val).chain(&f.test).copied().collect();
                all.sort_unstable();
                assert_eq!(all, (0..n).collect::<Vec<_>>(), "n={n} k={k}");
            }
        }
    }
    assert_eq!(kfold_split(50, 5, 1).unwrap(), kfold_split(50, 5, 1).unwrap());
    assert_ne!(kfold_split(50, 5, 1).unwrap(), kfold_split(50, 5, 2).unwrap());
}

#[test]
fn sparse_embedding_gradients_equal_dense() {
    let mut rng = RngState::new(1);
    let mut store = ParamStore::new();
    let table = store.add("emb", Tensor::randn(vec![6, 3], 1.0, &mut rng).unwrap(), ParamGroup::Backbone).unwrap();
    let w = store.add("w", Tensor::randn(vec![3, 2], 1.0, &mut rng).unwrap(), ParamGroup::Head).unwrap();
    let grads = |sparse: bool| {
        let mut g = Graph::with_params(&store);
        g.set_sparse_param_rows(sparse);
        let t = g.param(table);
        let rows = g.gather_rows(t, &[4, 1, 4, 0]).unwrap();
        let wv = g.param(w);
        let y = g.matmul(rows, wv).unwrap();
        let y = g.mul(y, y).unwrap();
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        let mut buf = GradBuffer::zeros_like(&store);
        g.accumulate_param_grads(&mut buf);
        buf
    };
    let (dense, sparse) = (grads(false), grads(true));
    assert_eq!(dense.get(table), sparse.get(table));
    assert_eq!(dense.get(w), sparse.get(w));
    assert!(dense.get(table)[3 * 2..3 * 4].iter().all(|&g| g == 0.0), "untouched rows stay zero");
}
