use lanetopo::decoder::{decoder_forward, Bound, ForwardOptions, Model, ModelConfig, SceneInput, TrafficNoise};
use lanetopo::nn::gradcheck::grad_check;
use lanetopo::nn::{Graph, Var};
use lanetopo::scene::{generate_scene, SceneConfig};
use lanetopo::training::{
    curve_csv, fit, focal_loss, giou, giou_loss, giou_loss_rows, hungarian_match, l1_reg_loss, prepare, topology_loss,
    total_loss, Assignment, LossWeights, OptimizerKind, Schedule, Target, TrainConfig, CURVE_HEADER,
};
use lanetopo::{BinaryMatrix, Matrix, Scene};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_cfg() -> ModelConfig {
    ModelConfig { d: 8, n_p: 4, n_l: 5, n_t: 2, k: 4, layers: 2, ffn_hidden: 8, samples: 2, ..Default::default() }
}

fn tiny_scenes(cfg: &ModelConfig, n: u64) -> Vec<Scene> {
    (0..n).map(|s| generate_scene(100 + s, &SceneConfig { arms: 2, k: cfg.k, ..Default::default() }).unwrap()).collect()
}

fn input_for(cfg: &ModelConfig, scene: &Scene) -> SceneInput {
    SceneInput::from_scene(scene, cfg, &TrafficNoise::default(), scene.seed).unwrap()
}

/// Smallest total cost over every injective row-to-column map.
fn brute_force_cost(c: &Matrix) -> f64 {
    fn go(c: &Matrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == c.rows() {
            *best = best.min(acc);
            return;
        }
        for j in 0..c.cols() {
            if !used[j] {
                used[j] = true;
                go(c, row + 1, used, acc + c.get(row, j), best);
                used[j] = false;
            }
        }
    }
    let t;
    let c = if c.rows() > c.cols() {
        t = c.transpose();
        &t
    } else {
        c
    };
    let mut best = f64::INFINITY;
    go(c, 0, &mut vec![false; c.cols()], 0.0, &mut best);
    if best.is_infinite() {
        0.0
    } else {
        best
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let x = rng.random_range(0.0..1.0);
    let y = rng.random_range(0.0..1.0);
    [x, y, x + rng.random_range(0.05..0.6), y + rng.random_range(0.05..0.6)]
}

proptest! {
    #[test]
    fn hungarian_matches_brute_force(
        p in 1usize..=5,
        g in 1usize..=5,
        vals in prop::collection::vec(0u8..6, 25),
        continuous in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..p * g)
            .map(|i| if continuous { rng.random_range(0.0..10.0) } else { f64::from(vals[i]) })
            .collect();
        let c = Matrix::from_vec(p, g, data).unwrap();
        let pairs = hungarian_match(&c).unwrap();
        prop_assert_eq!(pairs.len(), p.min(g));
        let mut rows: Vec<usize> = pairs.iter().map(|x| x.0).collect();
        let mut cols: Vec<usize> = pairs.iter().map(|x| x.1).collect();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        prop_assert_eq!(rows.len(), p.min(g));
        prop_assert_eq!(cols.len(), p.min(g));
        let total: f64 = pairs.iter().map(|&(r, j)| c.get(r, j)).sum();
        prop_assert!((total - brute_force_cost(&c)).abs() < 1e-9, "{} vs {}", total, brute_force_cost(&c));
    }

    #[test]
    fn focal_reduces_to_cross_entropy(p in 1e-6f64..(1.0 - 1e-6), y in any::<bool>()) {
        let bce = if y { -p.ln() } else { -(1.0 - p).ln() };
        let alpha = if y { 1.0 } else { 0.0 };
        prop_assert!((focal_loss(p, y, alpha, 0.0) - bce).abs() < 1e-12);
        let sym = 0.5 * bce;
        prop_assert!((focal_loss(p, y, 0.5, 0.0) - sym).abs() < 1e-12);
        prop_assert!(focal_loss(p, y, 0.25, 2.0) >= 0.0);
    }

    #[test]
    fn giou_loss_range_and_containment(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_box(&mut rng);
        let b = random_box(&mut rng);
        let l = giou_loss(&a, &b).unwrap();
        prop_assert!((0.0..=2.0).contains(&l));
        prop_assert!((giou(&a, &b).unwrap() - giou(&b, &a).unwrap()).abs() < 1e-15);
        let inner = [a[0] + 0.01, a[1] + 0.01, a[2] - 0.01, a[3] - 0.01];
        let iou = lanetopo::eval::iou(&a, &inner).unwrap();
        prop_assert!((giou_loss(&a, &inner).unwrap() - (1.0 - iou)).abs() < 1e-12);
    }
}

#[test]
fn hungarian_examples() {
    let id = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    assert_eq!(hungarian_match(&id).unwrap(), vec![(0, 0), (1, 1)]);
    let anti = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert_eq!(hungarian_match(&anti).unwrap(), vec![(0, 1), (1, 0)]);
    assert_eq!(hungarian_match(&Matrix::zeros(3, 2)).unwrap().len(), 2);
}

#[test]
fn l1_and_focal_examples() {
    assert_eq!(l1_reg_loss(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap(), 2.0);
    let v: Vec<f64> = (0..9).map(f64::from).collect();
    let shifted: Vec<f64> = v.iter().map(|x| x + 0.5).collect();
    assert_eq!(l1_reg_loss(&shifted, &v).unwrap(), 0.5);
    assert!((focal_loss(0.5, true, 0.25, 2.0) - 0.043322).abs() < 1e-6);
}

#[test]
fn topology_loss_closed_forms() {
    let mut g = Graph::new();
    let half = g.constant(Matrix::filled(3, 4, 0.5));
    let empty = BinaryMatrix::new(3, 4);
    let v = topology_loss(&mut g, half, &empty, &[], &[]).unwrap();
    assert!((g.scalar(v) - 0.75 * 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
    assert!((g.scalar(v) - 0.1300).abs() < 1e-4);

    let gt = BinaryMatrix::from_edges(2, 2, &[[0, 1]]).unwrap();
    let rows = [(0, 0), (1, 1)];
    let perfect = g.constant(gt.to_matrix());
    let v = topology_loss(&mut g, perfect, &gt, &rows, &rows).unwrap();
    assert!(g.scalar(v) < 1e-10);

    let scores = Matrix::from_rows(&[vec![0.2, 0.7], vec![0.4, 0.9]]).unwrap();
    let s = g.constant(scores.clone());
    let base = topology_loss(&mut g, s, &gt, &rows, &rows).unwrap();
    let swapped = Matrix::from_rows(&[vec![0.9, 0.4], vec![0.7, 0.2]]).unwrap();
    let s2 = g.constant(swapped);
    let perm = topology_loss(&mut g, s2, &gt, &[(1, 0), (0, 1)], &[(1, 0), (0, 1)]).unwrap();
    assert!((g.scalar(base) - g.scalar(perm)).abs() < 1e-15);
}

#[test]
fn giou_rows_match_scalar_and_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a: Vec<[f64; 4]> = (0..6).map(|_| random_box(&mut rng)).collect();
    let b: Vec<[f64; 4]> = (0..6).map(|_| random_box(&mut rng)).collect();
    let ma = Matrix::from_vec(6, 4, a.iter().flatten().copied().collect()).unwrap();
    let mb = Matrix::from_vec(6, 4, b.iter().flatten().copied().collect()).unwrap();
    let mut g = Graph::new();
    let (va, vb) = (g.constant(ma.clone()), g.constant(mb.clone()));
    let rows = giou_loss_rows(&mut g, va, vb).unwrap();
    for i in 0..6 {
        assert!((g.value(rows).get(i, 0) - giou_loss(&a[i], &b[i]).unwrap()).abs() < 1e-12);
    }
    let r = grad_check(|g, v| giou_loss_rows(g, v[0], v[1]), &[ma, mb], 1e-4).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn focal_and_l1_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = Matrix::from_vec(5, 3, (0..15).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap();
    let y = Matrix::from_vec(5, 3, (0..15).map(|_| f64::from(rng.random_range(0..2u8))).collect()).unwrap();
    let r = grad_check(|g, v| g.focal_sum(v[0], &y, 0.25, 2.0), &[p], 1e-4).unwrap();
    assert!(r.passed, "{r:?}");
    let x = Matrix::from_vec(4, 3, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let t = Matrix::from_vec(4, 3, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let r = grad_check(
        |g, v| {
            let c = g.constant(t.clone());
            let d = g.sub(v[0], c)?;
            let s = g.abs_sum(d);
            Ok(g.scale(s, 1.0 / 12.0))
        },
        &[x],
        1e-4,
    )
    .unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn breakdown_is_additive_and_weights_are_linear() {
    let cfg = tiny_cfg();
    let scene = &tiny_scenes(&cfg, 1)[0];
    let model = Model::init(&cfg, 3).unwrap();
    let input = input_for(&cfg, scene);
    let target = Target::from_scene(scene, &cfg).unwrap();
    let run = |w: &LossWeights, a: Option<&[Assignment]>| {
        let mut g = Graph::new();
        let preds = model.forward(&mut g, &input).unwrap();
        let (_, b, used) = total_loss(&mut g, &preds, &target, &input.traffic, a, w).unwrap();
        (b, used)
    };
    let (base, used) = run(&LossWeights::default(), None);
    assert_eq!(base.per_layer.len(), cfg.layers);
    assert!(base.total >= 0.0);
    assert!((base.per_layer.iter().sum::<f64>() - base.total).abs() < 1e-9);
    assert!((base.terms.sum() - base.total).abs() < 1e-9);
    for a in &used {
        a.validate((cfg.n_p, scene.points.len()), (cfg.n_l, scene.lanes.len()), (cfg.n_t, scene.traffic.len()))
            .unwrap();
    }

    let doubled = LossWeights { lambda_ll: 10.0, ..LossWeights::default() };
    let (b2, _) = run(&doubled, Some(&used));
    assert!((b2.terms.ll - 2.0 * base.terms.ll).abs() < 1e-12 * base.terms.ll.max(1.0));
    assert_eq!(b2.terms.pl, base.terms.pl);

    let (zero, _) = run(&LossWeights::zero(), Some(&used));
    assert_eq!(zero.total, 0.0);
}

#[test]
fn total_loss_gradient_with_fixed_assignment() {
    let cfg = ModelConfig { d: 8, n_p: 3, n_l: 4, n_t: 2, k: 4, layers: 2, ffn_hidden: 8, samples: 2, ..Default::default() };
    let scene = &tiny_scenes(&cfg, 1)[0];
    let model = Model::init(&cfg, 8).unwrap();
    let input = input_for(&cfg, scene);
    let target = Target::from_scene(scene, &cfg).unwrap();
    let assignment = {
        let mut g = Graph::new();
        let preds = model.forward(&mut g, &input).unwrap();
        total_loss(&mut g, &preds, &target, &input.traffic, None, &LossWeights::default()).unwrap().2
    };
    let names: Vec<String> = model.params.names().cloned().collect();
    let tensors: Vec<Matrix> = names.iter().map(|n| model.params.get(n).unwrap().clone()).collect();
    let r = grad_check(
        |g, v| {
            let b: Bound = names.iter().cloned().zip(v.iter().copied()).collect::<Bound>();
            let preds = decoder_forward(g, &b, &cfg, &input, ForwardOptions::default())?;
            let (total, _, _) =
                total_loss(g, &preds, &target, &input.traffic, Some(&assignment), &LossWeights::default())?;
            Ok::<Var, lanetopo::Error>(total)
        },
        &tensors,
        1e-3,
    )
    .unwrap();
    assert!(r.passed, "{r:?}");
}

fn quick(iterations: usize, lr: f64) -> TrainConfig {
    TrainConfig { iterations, lr, optimizer: OptimizerKind::Adam, schedule: Schedule::Constant, ..TrainConfig::default() }
}

#[test]
fn zero_learning_rate_keeps_the_curve_flat() {
    let cfg = tiny_cfg();
    let scenes = tiny_scenes(&cfg, 3);
    let r = fit(&scenes, &cfg, &TrainConfig { iterations: 4, lr: 0.0, ..TrainConfig::default() }).unwrap();
    assert_eq!(r.curve.len(), 4);
    assert!(r.curve.iter().all(|c| c.loss.total == r.curve[0].loss.total));
    assert_eq!(r.model.params, Model::init(&cfg, TrainConfig::default().seed).unwrap().params);
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let cfg = tiny_cfg();
    let scenes = tiny_scenes(&cfg, 4);
    let tc = TrainConfig { batch_size: 2, ..quick(25, 5e-3) };
    let a = fit(&scenes, &cfg, &tc).unwrap();
    let b = fit(&scenes, &cfg, &tc).unwrap();
    assert!(a.stopped.is_none());
    assert_eq!(curve_csv(&a.curve), curve_csv(&b.curve));
    assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
    let full = fit(&scenes, &cfg, &quick(25, 5e-3)).unwrap();
    let first = full.curve[0].loss.total;
    let last = full.curve.last().unwrap().loss.total;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn curve_csv_layout() {
    let cfg = tiny_cfg();
    let scenes = tiny_scenes(&cfg, 1);
    let r = fit(&scenes, &cfg, &quick(3, 1e-3)).unwrap();
    let csv = curve_csv(&r.curve);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CURVE_HEADER);
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1].split(',').count(), CURVE_HEADER.split(',').count());
}

#[test]
fn fit_rejects_bad_inputs() {
    let cfg = tiny_cfg();
    assert!(fit(&[], &cfg, &quick(1, 1e-3)).is_err());
    let scenes = tiny_scenes(&cfg, 1);
    let bad = TrainConfig { weights: LossWeights { lambda_t: -1.0, ..LossWeights::default() }, ..quick(1, 1e-3) };
    assert!(fit(&scenes, &cfg, &bad).is_err());
    let wrong_k = ModelConfig { k: 6, ..cfg.clone() };
    assert!(prepare(&scenes, &wrong_k, &TrafficNoise::default()).is_err());
}
