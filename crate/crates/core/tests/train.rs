mod common;

use common::naive_freq_loss;

use dfssm::checkpoint;
use dfssm::data::{Dataset, RainParams};
use dfssm::gradcheck::{self, Options};
use dfssm::network::{Model, ModelConfig};
use dfssm::train::{
    augment, cosine_lr, freq_loss, l1_loss, total_loss, train_loop, AdamW, Augmentation, OptimizerState,
    TrainConfig, CSV_HEADER,
};
use dfssm::{Error, ParamStore, Shape, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn scalar_loss(
    f: for<'t> fn(&dfssm::Var<'t, f64>, &dfssm::Var<'t, f64>) -> dfssm::Result<dfssm::Var<'t, f64>>,
    a: &Tensor<f64>,
    b: &Tensor<f64>,
) -> f64 {
    let tape = Tape::new();
    let (x, y) = (tape.constant(a.clone()), tape.constant(b.clone()));
    f(&x, &y).unwrap().value().data()[0]
}

#[test]
fn l1_examples() {
    let a = random(Shape::new(2, 3, 4, 5), 1);
    assert_eq!(scalar_loss(l1_loss, &a, &a), 0.0);
    let b = a.map(|v| v + 0.5);
    assert!((scalar_loss(l1_loss, &b, &a) - 0.5).abs() < 1e-12);
}

#[test]
fn l1_gradient_is_sign_over_numel() {
    let a = random(Shape::new(1, 2, 3, 3), 2);
    let b = random(Shape::new(1, 2, 3, 3), 3);
    let tape = Tape::new();
    let x = tape.leaf(a.clone(), true);
    let y = tape.constant(b.clone());
    let loss = l1_loss(&x, &y).unwrap();
    let g = tape.backward(&loss).unwrap().wrt(&x);
    let n = a.numel() as f64;
    for i in 0..a.numel() {
        let want = (a.data()[i] - b.data()[i]).signum() / n;
        assert_eq!(g.data()[i], want);
    }
    let report = gradcheck::check_inputs(
        &[a, b],
        |_, v| l1_loss(&v[0], &v[1]),
        &Options::for_precision::<f64>().with_coords(None),
    )
    .unwrap();
    assert!(report.worst() < 1e-6, "{:?}", report.errors);
}

#[test]
fn l1_tie_has_zero_subgradient() {
    let a = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 2.0]).unwrap();
    let b = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 0.0]).unwrap();
    let tape = Tape::new();
    let x = tape.leaf(a, true);
    let loss = l1_loss(&x, &tape.constant(b)).unwrap();
    assert_eq!(tape.backward(&loss).unwrap().wrt(&x).data(), &[0.0, 0.5]);
}

#[test]
fn freq_loss_matches_naive_dft() {
    for (seed, shape) in [(4, Shape::new(1, 3, 8, 8)), (5, Shape::new(2, 1, 5, 7)), (6, Shape::new(1, 2, 6, 3))] {
        let a = random(shape, seed);
        let b = random(shape, seed + 100);
        let got = scalar_loss(freq_loss, &a, &b);
        let want = naive_freq_loss(&a, &b);
        assert!((got - want).abs() <= 1e-4 * want, "{shape}: {got} vs {want}");
    }
}

#[test]
fn freq_loss_examples() {
    let a = random(Shape::new(1, 3, 6, 8), 7);
    assert!(scalar_loss(freq_loss, &a, &a).abs() < 1e-12);
    let c = -0.3;
    let b = a.map(|v| v + c);
    let (h, w) = (6.0, 8.0);
    let bins = 3.0 * 6.0 * 5.0;
    let want = (c as f64).abs() * h * w * 3.0 / bins;
    let got = scalar_loss(freq_loss, &b, &a);
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn freq_loss_gradcheck() {
    for seed in 0..3 {
        let a = random(Shape::new(1, 2, 5, 6), 10 + seed);
        let b = random(Shape::new(1, 2, 5, 6), 20 + seed);
        let report = gradcheck::check_inputs(
            &[a, b],
            |_, v| freq_loss(&v[0], &v[1]),
            &Options::for_precision::<f64>().with_coords(None),
        )
        .unwrap();
        assert!(report.worst() < 1e-6, "{:?}", report.errors);
    }
}

#[test]
fn total_loss_combines_components() {
    let a = random(Shape::new(1, 3, 8, 6), 30);
    let b = random(Shape::new(1, 3, 8, 6), 31);
    let tape = Tape::new();
    let (x, y) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let plain = total_loss(&x, &y, 0.0).unwrap();
    assert_eq!(plain.total.value().data()[0], l1_loss(&x, &y).unwrap().value().data()[0]);

    let mixed = total_loss(&x, &y, 0.01).unwrap();
    let l1: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.numel() as f64;
    let want = l1 + 0.01 * naive_freq_loss(&a, &b);
    assert!((mixed.total.value().data()[0] - want).abs() < 1e-10);

    let same = total_loss(&x, &x, 0.01).unwrap();
    assert!(same.total.value().data()[0].abs() < 1e-12);
    assert!(total_loss(&x, &y, -1.0).is_err());
}

fn single_param(value: f64, grad: f64, decay: bool) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    let id = store.add("p", Tensor::scalar(value), decay).unwrap();
    store.get_mut(id).grad = Tensor::scalar(grad);
    store
}

#[test]
fn adamw_first_step_closed_form() {
    let mut store = single_param(1.0, 1.0, true);
    let mut state = OptimizerState::new(&store);
    let opt = AdamW {
        weight_decay: 0.0,
        ..Default::default()
    };
    opt.step(&mut store, &mut state, 0.1).unwrap();
    let want = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
    assert!((store.iter().next().unwrap().tensor.data()[0] - want).abs() < 1e-15);
    assert_eq!(state.step, 1);
}

#[test]
fn adamw_zero_grad_keeps_params_and_decays_moments() {
    let mut store = single_param(0.7, 0.0, true);
    let mut state = OptimizerState::new(&store);
    state.m[0] = Tensor::scalar(0.0);
    state.v[0] = Tensor::scalar(0.0);
    let opt = AdamW {
        weight_decay: 0.0,
        ..Default::default()
    };
    opt.step(&mut store, &mut state, 0.1).unwrap();
    assert_eq!(store.iter().next().unwrap().tensor.data()[0], 0.7);

    let mut state = OptimizerState::new(&store);
    state.m[0] = Tensor::scalar(0.5);
    state.v[0] = Tensor::scalar(0.25);
    let mut frozen = single_param(0.7, 0.0, true);
    opt.step(&mut frozen, &mut state, 0.0).unwrap();
    assert_eq!(frozen.iter().next().unwrap().tensor.data()[0], 0.7);
    assert!((state.m[0].data()[0] - 0.45).abs() < 1e-15);
    assert!((state.v[0].data()[0] - 0.24975).abs() < 1e-15);
}

#[test]
fn adamw_decay_is_a_pure_shrink() {
    let mut store = single_param(2.0, 0.0, true);
    let id = store.add("bias", Tensor::scalar(2.0), false).unwrap();
    store.get_mut(id).grad = Tensor::scalar(0.0);
    let mut state = OptimizerState::new(&store);
    let opt = AdamW {
        weight_decay: 0.5,
        ..Default::default()
    };
    opt.step(&mut store, &mut state, 0.1).unwrap();
    let vals: Vec<f64> = store.iter().map(|p| p.tensor.data()[0]).collect();
    assert_eq!(vals, vec![2.0 * (1.0 - 0.1 * 0.5), 2.0]);
}

#[test]
fn adamw_without_decay_is_adam() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut store = ParamStore::new();
    let init: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    store
        .add("w", Tensor::from_vec(Shape::new(1, 6, 1, 1), init.clone()).unwrap(), true)
        .unwrap();
    let mut state = OptimizerState::new(&store);
    let opt = AdamW {
        beta1: 0.8,
        beta2: 0.99,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    // reference Adam
    let (mut p, mut m, mut v) = (init, vec![0.0; 6], vec![0.0; 6]);
    for t in 1..=7 {
        let g: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lr = 0.01 * t as f64;
        store.iter_mut().next().unwrap().grad = Tensor::from_vec(Shape::new(1, 6, 1, 1), g.clone()).unwrap();
        opt.step(&mut store, &mut state, lr).unwrap();
        for i in 0..6 {
            m[i] = 0.8 * m[i] + 0.2 * g[i];
            v[i] = 0.99 * v[i] + 0.01 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.8f64.powi(t));
            let vh = v[i] / (1.0 - 0.99f64.powi(t));
            p[i] -= lr * mh / (vh.sqrt() + 1e-8);
        }
    }
    let got = store.iter().next().unwrap().tensor.data().to_vec();
    for i in 0..6 {
        assert!((got[i] - p[i]).abs() < 1e-14, "{got:?} vs {p:?}");
    }
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(0, 1000, 3e-4, 1e-6), 3e-4);
    assert!((cosine_lr(1000, 1000, 3e-4, 1e-6) - 1e-6).abs() < 1e-18);
    assert!((cosine_lr(500, 1000, 3e-4, 1e-6) - 1.505e-4).abs() < 1e-15);
    let mut prev = f64::INFINITY;
    for t in 0..=100 {
        let lr = cosine_lr(t, 100, 3e-4, 1e-6);
        assert!(lr <= prev);
        prev = lr;
    }
}

/// Each pixel holds its own coordinates, so a crop reveals its window.
fn coordinate_image(h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(Shape::new(1, 2, h, w), |[_, c, y, x]| if c == 0 { y as f64 } else { x as f64 })
}

#[test]
fn augmentation_keeps_pairs_aligned() {
    let img = coordinate_image(20, 24);
    let other = img.map(|v| v + 1000.0);
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..20 {
        let (a, b) = augment(&img, &other, 8, &mut rng).unwrap();
        assert_eq!(a.shape(), Shape::new(1, 2, 8, 8));
        for (p, q) in a.data().iter().zip(b.data()) {
            assert_eq!(*p + 1000.0, *q);
        }
        // the window is a contiguous block of the source
        let ys: Vec<f64> = (0..8).map(|y| a.at([0, 0, y, 0])).collect();
        let xs: Vec<f64> = (0..8).map(|x| a.at([0, 1, 0, x])).collect();
        for v in [ys, xs] {
            let step = v[1] - v[0];
            assert!(step.abs() == 1.0 && v.windows(2).all(|p| p[1] - p[0] == step));
        }
    }
}

#[test]
fn flips_are_involutions() {
    let img = coordinate_image(6, 6);
    for (hflip, vflip) in [(true, false), (false, true), (true, true)] {
        let a = Augmentation {
            top: 0,
            left: 0,
            size: 6,
            hflip,
            vflip,
        };
        assert_eq!(a.apply(&a.apply(&img)), img);
    }
}

#[test]
fn augmentation_replays_from_seed() {
    let img = random(Shape::new(1, 3, 16, 16), 60);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..10).map(|_| augment(&img, &img, 9, &mut rng).unwrap().0).collect::<Vec<_>>()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(augment(&img, &img, 17, &mut rng), Err(Error::Config(_))));
}

#[test]
fn train_config_invariants() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = TrainConfig {
        lr_final: 1e-3,
        lr_init: 1e-4,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = TrainConfig {
        lr_init: 0.0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
}

fn micro_setup() -> (Model<f32>, Dataset, TrainConfig) {
    let model = Model::<f32>::new(ModelConfig::preset("micro").unwrap(), 5).unwrap();
    let data = Dataset::synthetic(3, 16, &RainParams { seed: 9, length: 5, density: 0.02, ..Default::default() });
    let cfg = TrainConfig {
        iterations: 4,
        batch: 2,
        patch: 12,
        lr_init: 1e-3,
        lr_final: 1e-5,
        seed: 11,
        log_every: 2,
        ckpt_every: 2,
        ..Default::default()
    };
    (model, data, cfg)
}

#[test]
fn zero_iterations_writes_the_initial_checkpoint() {
    let (mut model, data, mut cfg) = micro_setup();
    cfg.iterations = 0;
    let before = model.params.clone();
    let dir = tempfile::tempdir().unwrap();
    let report = train_loop(&mut model, &data, None, &cfg, Some(dir.path())).unwrap();
    assert!(report.rows.is_empty());
    let mut restored = before.clone();
    checkpoint::apply(&mut restored, &checkpoint::load(&dir.path().join("final.dfsm")).unwrap()).unwrap();
    for (a, b) in restored.iter().zip(before.iter()) {
        assert_eq!(a.tensor, b.tensor);
    }
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.trim(), CSV_HEADER);
}

#[test]
fn training_is_deterministic_and_logs() {
    let run = || {
        let (mut model, data, cfg) = micro_setup();
        let dir = tempfile::tempdir().unwrap();
        let val = data.pairs[0].clone();
        train_loop(&mut model, &data, Some(&val), &cfg, Some(dir.path())).unwrap();
        let bytes = std::fs::read(dir.path().join("final.dfsm")).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(dir.path().join("ckpt_000002.dfsm").exists());
        (bytes, csv)
    };
    let (a, csv_a) = run();
    let (b, csv_b) = run();
    assert_eq!(a, b);
    assert_eq!(csv_a, csv_b);
    let lines: Vec<&str> = csv_a.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 3);
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 6);
        assert!(fields[5].parse::<f64>().unwrap().is_finite());
    }
}

#[test]
fn training_reduces_loss_on_a_fixed_batch() {
    let (mut model, data, mut cfg) = micro_setup();
    cfg.iterations = 40;
    cfg.batch = 3;
    cfg.patch = 16;
    cfg.log_every = 1;
    cfg.lr_init = 3e-3;
    let report = train_loop(&mut model, &data, None, &cfg, None).unwrap();
    let first: f64 = report.rows[..5].iter().map(|r| r.total).sum::<f64>() / 5.0;
    let last: f64 = report.rows[35..].iter().map(|r| r.total).sum::<f64>() / 5.0;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn non_finite_loss_aborts_with_numeric_error() {
    let (mut model, data, cfg) = micro_setup();
    let id = model.params.id_of("head.bias").unwrap();
    model.params.get_mut(id).tensor.data_mut()[0] = f32::NAN;
    let err = train_loop(&mut model, &data, None, &cfg, None).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
    assert!(err.to_string().contains("batch seed"), "{err}");
}
