use deltavox::geometry::{Category, FlowField};
use deltavox::metrics::{classify_points, evaluate, Evaluator, Region};
use deltavox::synth::{generate, reference_predictor, BackgroundSpec, EgoSpec, MoverSpec, Predictor, SceneSpec};

fn scene(seed: u64) -> SceneSpec {
    let movers = Category::ALL
        .iter()
        .enumerate()
        .map(|(i, &category)| MoverSpec {
            category,
            size: [2.0, 1.0, 1.5],
            points: 40 + 10 * i,
            velocity: [3.0 + i as f64, 0.5, 0.0],
            position: [-10.0 + 6.0 * i as f64, 3.0, 0.75],
            yaw: 0.2 * i as f64,
        })
        .collect();
    SceneSpec {
        seed,
        n_frames: 5,
        dt: 0.1,
        extent: [50.0, 50.0, 6.0],
        background: BackgroundSpec {
            ground_points: 400,
            buildings: 3,
            building_points: 60,
        },
        movers,
        ego: EgoSpec::Constant {
            velocity: [7.0, 0.3, 0.0],
            yaw_rate: 0.15,
            height: 1.8,
        },
    }
}

#[test]
fn ego_only_baseline_scores_one_per_category() {
    for seed in 0..5 {
        let seq = generate(&scene(seed)).unwrap();
        let preds = reference_predictor(&seq, Predictor::ZeroResidual).unwrap();
        let mut ev = Evaluator::new();
        for (k, p) in preds.iter().enumerate() {
            ev.add_frame(p, &seq.frames[k], seq.dt).unwrap();
        }
        let r = ev.finish();
        for c in Category::ALL {
            assert!((r.bucket.ratio(c).unwrap() - 1.0).abs() <= 1e-9, "{c:?}");
        }
        assert!(r.threeway.bs.abs() <= 1e-9);
        assert_eq!(r.threeway.counts[1], 0);
    }
}

#[test]
fn oracle_scores_zero() {
    let seq = generate(&scene(3)).unwrap();
    let preds = reference_predictor(&seq, Predictor::Oracle).unwrap();
    for (k, p) in preds.iter().enumerate() {
        let r = evaluate(p, &seq.frames[k], seq.dt).unwrap();
        assert_eq!(r.threeway.mean, 0.0);
        assert!(r.bucket.ratios.iter().all(|v| *v == Some(0.0)));
    }
}

#[test]
fn noisy_fd_epe_matches_brute_force() {
    let seq = generate(&scene(8)).unwrap();
    let sigma = 0.05;
    let preds = reference_predictor(&seq, Predictor::NoisyOracle { sigma, seed: 2 }).unwrap();
    let mut ev = Evaluator::new();
    let (mut sum, mut n) = (0.0, 0usize);
    for (k, p) in preds.iter().enumerate() {
        let f = &seq.frames[k];
        ev.add_frame(p, f, seq.dt).unwrap();
        let gt = f.gt_flow().unwrap();
        for (i, region) in classify_points(f, seq.dt).unwrap().iter().enumerate() {
            if *region == Region::ForegroundDynamic {
                sum += (p[i] - gt[i]).norm();
                n += 1;
            }
        }
    }
    let fd = ev.threeway().fd;
    assert!((fd - 100.0 * sum / n as f64).abs() < 1e-9);
    // Mean of a 3-D isotropic Gaussian norm is σ·2·√(2/π).
    let expected_cm = 100.0 * sigma * 2.0 * (2.0 / std::f64::consts::PI).sqrt();
    assert!((fd - expected_cm).abs() < 0.1 * expected_cm, "{fd} vs {expected_cm}");
}

#[test]
fn counts_match_the_spec() {
    let spec = scene(1);
    let seq = generate(&spec).unwrap();
    for f in &seq.frames {
        for (id, m) in spec.movers.iter().enumerate() {
            let n = (0..f.len())
                .filter(|&i| {
                    f.label(i)
                        .is_some_and(|l| l.instance == id as u32 && l.category == m.category)
                })
                .count();
            assert_eq!(n, m.points);
        }
        assert_eq!(
            f.len(),
            400 + 3 * 60 + spec.movers.iter().map(|m| m.points).sum::<usize>()
        );
    }
    assert_eq!(FlowField::zeros(0).len(), 0);
}
