mod common;

use std::time::Instant;

use common::random_skeleton;
use handocc::geom::Vec3;
use handocc::kinematics::*;
use handocc::loss::*;
use handocc::occupancy::{CapsuleField, OccupancyField};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const KINDS: [PointSetKind; 3] = [PointSetKind::Sparse, PointSetKind::DENSE, PointSetKind::Mesh];

fn close_pair(seed: u64) -> (Skeleton<f64>, Skeleton<f64>) {
    random_close_pair(&mut ChaCha8Rng::seed_from_u64(seed), 30.0)
}

#[test]
fn separated_hands_have_no_loss() {
    let f = CapsuleField::default();
    let r = random_skeleton(1, Side::Right);
    let l = random_skeleton(2, Side::Left);
    let l = l.translated(r.wrist() - l.wrist() + Vec3::new(500.0, 0.0, 0.0));
    for kind in KINDS {
        let mut cfg = LossConfig::for_points(kind);
        cfg.both_hands = true;
        let res = intersection_loss(&r, &l, &f, &cfg).unwrap();
        assert!(res.value < 1e-6);
        assert!(res.grad_left.iter().chain(&res.grad_right).all(|g| g.norm() < 1e-6));
    }
}

#[test]
fn dense_set_has_121_points() {
    let (r, l) = close_pair(3);
    let res = intersection_loss(&r, &l, &CapsuleField::default(), &LossConfig::default()).unwrap();
    assert_eq!(res.probs.len(), 121);
    assert_eq!(PointSetKind::DENSE.point_count(), 121);
}

#[test]
fn mirrored_pair_doubles_exactly() {
    let f = CapsuleField::default();
    for seed in 0..5 {
        // Centre on x = 0 so that the hand and its mirror image overlap.
        let r = random_skeleton(seed, Side::Right);
        let cx = r.joints.iter().map(|p| p.x).sum::<f64>() / 21.0;
        let r = r.translated(Vec3::new(-cx, 0.0, 0.0));
        let l = flip_x(&r);
        for kind in KINDS {
            for truncated in [false, true] {
                let mut cfg = LossConfig::for_points(kind);
                cfg.truncated = truncated;
                let one = intersection_loss(&r, &l, &f, &cfg).unwrap().value;
                cfg.both_hands = true;
                let two = intersection_loss(&r, &l, &f, &cfg).unwrap().value;
                assert!(one > 0.0);
                assert!((two - 2.0 * one).abs() <= 1e-12 * two, "{kind:?}: {two} vs 2 x {one}");
            }
        }
    }
}

#[test]
fn coincident_hands_match_direct_sum() {
    let f = CapsuleField::default();
    let r = random_skeleton(7, Side::Right);
    let l = Skeleton { side: Side::Left, joints: r.joints };
    let res = intersection_loss(&r, &l, &f, &LossConfig::for_points(PointSetKind::Sparse)).unwrap();
    let mut sum = 0.0;
    for j in 0..21 {
        let p = f.eval(l.joints[j], &r);
        sum += p * p;
    }
    assert!((res.value - sum).abs() <= 1e-12 * sum);
    assert!(res.value > 10.0);
}

#[test]
fn truncation_examples() {
    assert_eq!(truncate_kernel(&[0.2, 0.6, 0.5]), vec![0.0, 0.6, 0.0]);
    assert_eq!(truncate_kernel(&[0.1, 0.4]), vec![0.0, 0.0]);
    let r = random_skeleton(1, Side::Right);
    let l = random_skeleton(2, Side::Left);
    let l = l.translated(Vec3::new(400.0, 0.0, 0.0));
    let mut cfg = LossConfig::default();
    cfg.truncated = true;
    let res = intersection_loss(&r, &l, &CapsuleField::default(), &cfg).unwrap();
    assert_eq!(res.value, 0.0);
    assert!(res.grad_left.iter().all(|g| g.norm() == 0.0));
}

#[test]
fn truncated_gradients_match_above_threshold() {
    let f = CapsuleField::default();
    let r = random_skeleton(11, Side::Right);
    let l = Skeleton { side: Side::Left, joints: r.joints.map(|p| p + Vec3::new(4.0, 0.0, 0.0)) };
    let cfg = LossConfig::default();
    let tcfg = LossConfig { truncated: true, ..cfg };
    let a = intersection_loss(&r, &l, &f, &cfg).unwrap();
    let b = intersection_loss(&r, &l, &f, &tcfg).unwrap();
    let mut above = 0;
    for i in 0..a.probs.len() {
        if a.probs[i] > 0.5 {
            above += 1;
            assert_eq!(a.point_grads[i], b.point_grads[i]);
        } else {
            assert_eq!(b.point_grads[i], Vec3::zero());
        }
    }
    assert!(above > 0);
}

#[test]
fn intersecting_pair_has_gradient_on_points() {
    let f = CapsuleField::default();
    let r = random_skeleton(13, Side::Right);
    let l = Skeleton { side: Side::Left, joints: r.joints.map(|p| p + Vec3::new(6.0, 2.0, 0.0)) };
    let res = intersection_loss(&r, &l, &f, &LossConfig::default()).unwrap();
    assert!(res.point_grads.iter().any(|g| g.norm() > 1e-3));
}

#[test]
fn bad_inputs_are_rejected() {
    let r = random_skeleton(1, Side::Right);
    let f = CapsuleField::default();
    assert!(intersection_loss(&r, &r, &f, &LossConfig::default()).is_err());
    let l = flip_x(&r);
    let cfg = LossConfig { weight: -1.0, ..LossConfig::default() };
    assert!(intersection_loss(&r, &l, &f, &cfg).is_err());
}

#[test]
fn config_json_round_trip() {
    for kind in KINDS {
        let cfg = LossConfig { both_hands: true, ..LossConfig::for_points(kind) };
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<LossConfig>(&s).unwrap(), cfg);
    }
    assert_eq!(LossConfig::for_points(PointSetKind::Mesh).weight, 1e-8);
    assert_eq!(LossConfig::default().weight, 1e-6);
}

#[test]
fn capsule_gradcheck_per_point_set() {
    let f = CapsuleField::default();
    for kind in KINDS {
        for both_hands in [false, true] {
            let cfg = LossConfig { both_hands, ..LossConfig::for_points(kind) };
            let err = loss_gradcheck(&cfg, &f, 5, 8).unwrap();
            assert!(err < 1e-4, "{kind:?} both={both_hands}: {err}");
        }
    }
}

#[test]
fn larger_point_sets_cost_more() {
    let f = CapsuleField::default();
    let (r, l) = close_pair(19);
    let time = |kind: PointSetKind| {
        let cfg = LossConfig::for_points(kind);
        let t = Instant::now();
        for _ in 0..30 {
            std::hint::black_box(intersection_loss(&r, &l, &f, &cfg).unwrap());
        }
        t.elapsed().as_secs_f64()
    };
    let (s, d, m) = (time(PointSetKind::Sparse), time(PointSetKind::DENSE), time(PointSetKind::Mesh));
    assert!(s < 2.0 * d && d < 2.0 * m, "sparse {s}, dense {d}, mesh {m}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn truncated_never_exceeds_full(seed in any::<u64>(), kind in 0usize..3, both in any::<bool>()) {
        let (r, l) = close_pair(seed);
        let f = CapsuleField::default();
        let cfg = LossConfig { both_hands: both, ..LossConfig::for_points(KINDS[kind]) };
        let full = intersection_loss(&r, &l, &f, &cfg).unwrap();
        let tr = intersection_loss(&r, &l, &f, &LossConfig { truncated: true, ..cfg }).unwrap();
        prop_assert!(tr.value <= full.value);
        prop_assert!(full.value >= 0.0);
        for (p, q) in truncate_kernel(&full.probs).iter().zip(&full.probs) {
            prop_assert!(p * p <= q * q);
        }
    }

    #[test]
    fn swapping_mirrored_hands_keeps_the_loss(seed in any::<u64>(), kind in 0usize..3) {
        let (r, l) = close_pair(seed);
        let f = CapsuleField::default();
        let cfg = LossConfig { both_hands: true, ..LossConfig::for_points(KINDS[kind]) };
        let a = intersection_loss(&r, &l, &f, &cfg).unwrap().value;
        let b = intersection_loss(&flip_x(&l), &flip_x(&r), &f, &cfg).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
    }

    #[test]
    fn squaring_shrinks_small_probabilities(p in 0.001f64..0.999, q in 0.001f64..0.999) {
        prop_assume!(p < q);
        prop_assert!((p * p) / (q * q) < p / q);
    }
}
