mod common;

use common::{random_skeleton, surface_distance, winding_number};
use handocc::geom::{Aabb, Mat3, Vec3};
use handocc::kinematics::*;
use handocc::mesh::*;
use handocc::occupancy::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rest(side: Side) -> Skeleton<f64> {
    forward_kinematics(&rest_pose(side)).unwrap()
}

fn sample_in(rng: &mut ChaCha8Rng, b: &Aabb) -> Vec3<f64> {
    Vec3::new(
        rng.random_range(b.min.x..b.max.x),
        rng.random_range(b.min.y..b.max.y),
        rng.random_range(b.min.z..b.max.z),
    )
}

#[test]
fn palm_interior_point_is_inside() {
    let m = generate(&rest(Side::Right), MeshVariant::Plain).unwrap();
    // Four vertices spread around the second palm ring span a tetrahedron
    // inside the palm.
    let ids = [32 + 2, 32 + 10, 32 + 18, 32 + 26];
    let c = ids.iter().map(|&i| m.vertices[i]).fold(Vec3::zero(), |a, b| a + b) * 0.25;
    assert!((winding_number(&m, c) - 1.0).abs() < 1e-6);
    assert!(ray_cast_inside(&m, c).unwrap());
}

#[test]
fn outside_box_is_outside() {
    let m = generate(&rest(Side::Right), MeshVariant::Plain).unwrap();
    assert!(!ray_cast_inside(&m, Vec3::new(0.0, 0.0, 500.0)).unwrap());
    assert!(!ray_cast_inside(&m, m.aabb().max + Vec3::new(1e-3, 0.0, 0.0)).unwrap());
}

#[test]
fn open_mesh_is_refused() {
    let mut m = generate(&rest(Side::Right), MeshVariant::Plain).unwrap();
    m.faces.pop();
    assert!(matches!(RayCaster::new(&m), Err(handocc::Error::NotWatertight(_))));
}

#[test]
fn ray_cast_agrees_with_winding_number() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (seed, v) in [(1, MeshVariant::Plain), (2, MeshVariant::Refined), (3, MeshVariant::Plain)] {
        let m = generate(&random_skeleton(seed, Side::Right), v).unwrap();
        let rc = RayCaster::new(&m).unwrap();
        let b = m.aabb().padded(2.0);
        let mut inside = 0;
        for _ in 0..2000 {
            let p = sample_in(&mut rng, &b);
            let w = winding_number(&m, p);
            if (w - w.round()).abs() > 1e-3 && surface_distance(&m, p) < 1e-6 {
                continue;
            }
            let want = (w.round() as i64).rem_euclid(2) == 1;
            assert_eq!(rc.inside(p), want, "point {p:?}, winding {w}");
            inside += usize::from(want);
        }
        assert!(inside > 20, "sampling never landed inside ({inside})");
        assert_eq!(rc.unresolved(), 0);
    }
}

#[test]
fn parity_is_direction_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let m = generate(&random_skeleton(9, Side::Left), MeshVariant::Refined).unwrap();
    let rc = RayCaster::new(&m).unwrap();
    let b = m.aabb().padded(1.0);
    let mut checked = 0;
    for _ in 0..2000 {
        let p = sample_in(&mut rng, &b);
        let results: Vec<_> = (0..5).filter_map(|_| rc.ray_parity(p, random_unit(&mut rng))).collect();
        if results.len() > 1 {
            checked += 1;
            assert!(results.iter().all(|&r| r == results[0]), "{p:?}: {results:?}");
            assert_eq!(rc.inside(p), results[0]);
        }
    }
    assert!(checked > 1900);
}

#[test]
fn lattice_matches_single_rays() {
    let m = generate(&random_skeleton(5, Side::Right), MeshVariant::Plain).unwrap();
    let rc = RayCaster::new(&m).unwrap();
    let spec = GridSpec::new(m.aabb().padded(5.0), 24).unwrap();
    let g = caster_grid(&rc, spec);
    for (i, p) in spec.points().into_iter().enumerate() {
        assert_eq!(g.mask[i], rc.inside(p), "sample {i}");
    }
}

#[test]
fn lattice_with_columns_through_vertices() {
    // A grid whose columns pass exactly through mesh vertices exercises the
    // per-point fallback.
    let m = generate(&rest(Side::Right), MeshVariant::Plain).unwrap();
    let rc = RayCaster::new(&m).unwrap();
    let v = m.vertices[40];
    let xs = vec![v.x - 1.0, v.x, v.x + 1.0];
    let ys = vec![v.y - 1.0, v.y, v.y + 1.0];
    let zs: Vec<f64> = (0..40).map(|k| -20.0 + k as f64).collect();
    let got = rc.inside_lattice(&xs, &ys, &zs);
    for (ix, &x) in xs.iter().enumerate() {
        for (iy, &y) in ys.iter().enumerate() {
            for (iz, &z) in zs.iter().enumerate() {
                let p = Vec3::new(x, y, z);
                let w = winding_number(&m, p);
                if surface_distance(&m, p) > 1e-6 {
                    assert_eq!(got[(ix * 3 + iy) * 40 + iz], w.round() as i64 % 2 == 1);
                }
            }
        }
    }
}

#[test]
fn grid_sizes_and_empty_regions() {
    let m = generate(&rest(Side::Right), MeshVariant::Plain).unwrap();
    let spec = GridSpec::new(m.aabb().padded(GRID_PADDING), 50).unwrap();
    assert_eq!(spec.points().len(), 125_000);
    let g = mesh_grid(&m, spec).unwrap();
    assert_eq!(g.mask.len(), 125_000);
    assert!(g.count() > 1000);
    let far = Aabb { min: Vec3::new(500.0, 500.0, 500.0), max: Vec3::new(600.0, 600.0, 600.0) };
    let spec = GridSpec::new(far, 10).unwrap();
    assert_eq!(mesh_grid(&m, spec).unwrap().count(), 0);
    assert_eq!(field_grid(&CapsuleField::default(), &rest(Side::Right), spec).count(), 0);
    assert!(GridSpec::new(far, 1).is_err());
}

#[test]
fn grid_count_is_invariant_under_rigid_motion() {
    let m = generate(&random_skeleton(12, Side::Right), MeshVariant::Plain).unwrap();
    let spec = GridSpec::new(m.aabb().padded(GRID_PADDING), 40).unwrap();
    let base = mesh_grid(&m, spec).unwrap().count();
    // A quarter turn about z plus an integer shift maps the lattice onto itself.
    let r = Mat3::rot_z(std::f64::consts::FRAC_PI_2);
    let t = Vec3::new(17.0, -3.0, 40.0);
    let mut moved = m.clone();
    for v in moved.vertices.iter_mut() {
        *v = r.mul_vec(*v) + t;
    }
    let corners = [spec.bbox.min, spec.bbox.max].map(|c| r.mul_vec(c) + t);
    let bbox = Aabb::from_points(&corners);
    let got = mesh_grid(&moved, GridSpec::new(bbox, 40).unwrap()).unwrap().count();
    assert!((got as i64 - base as i64).abs() <= 2, "{base} vs {got}");
}

#[test]
fn iou_examples() {
    let spec = GridSpec::new(Aabb { min: Vec3::zero(), max: Vec3::new(1.0, 1.0, 1.0) }, 10).unwrap();
    let mut a = vec![false; 1000];
    let mut b = vec![false; 1000];
    a[..100].iter_mut().for_each(|x| *x = true);
    b[..400].iter_mut().for_each(|x| *x = true);
    let ga = OccupancyGrid::from_mask(spec, a.clone()).unwrap();
    let gb = OccupancyGrid::from_mask(spec, b).unwrap();
    assert_eq!(iou(&ga, &gb).unwrap(), 0.25);
    assert_eq!(iou(&ga, &ga).unwrap(), 1.0);
    let empty = OccupancyGrid::from_mask(spec, vec![false; 1000]).unwrap();
    assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
    let mut c = vec![false; 1000];
    c[500..600].iter_mut().for_each(|x| *x = true);
    assert_eq!(iou(&ga, &OccupancyGrid::from_mask(spec, c).unwrap()).unwrap(), 0.0);
    let other = GridSpec::new(spec.bbox, 9).unwrap();
    let gc = OccupancyGrid::from_mask(other, vec![false; 729]).unwrap();
    assert!(iou(&ga, &gc).is_err());
}

#[test]
fn grid_serialization_round_trip() {
    let m = generate(&rest(Side::Right), MeshVariant::Plain).unwrap();
    let spec = GridSpec::new(m.aabb().padded(GRID_PADDING), 20).unwrap();
    let g = mesh_grid(&m, spec).unwrap();
    let back = OccupancyGrid::from_json(&g.to_json().unwrap()).unwrap();
    assert_eq!(back.mask, g.mask);
    assert_eq!(back.spec, g.spec);
    let f = field_grid(&CapsuleField::default(), &rest(Side::Right), spec);
    let csv = f.to_csv();
    assert_eq!(csv.lines().count(), 8001);
    assert!(csv.starts_with("x,y,z,prob\n"));
}

#[test]
fn pair_counts() {
    let r = generate(&rest(Side::Right), MeshVariant::Plain).unwrap();
    let far = generate(&rest(Side::Left).translated(Vec3::new(300.0, 0.0, 0.0)), MeshVariant::Plain).unwrap();
    assert_eq!(pair_intersection_count(&r, &far, 50).unwrap(), 0);

    let spec = GridSpec::new(pair_bbox(&r.aabb(), &r.aabb()), 50).unwrap();
    let single = mesh_grid(&r, spec).unwrap().count();
    assert_eq!(pair_intersection_count(&r, &r, 50).unwrap(), single);

    // Left hand turned to face the right one, fingers pushed between its fingers.
    let s = rest(Side::Right);
    let l = flip_x(&s).transformed(&Mat3::rot_z(std::f64::consts::PI), Vec3::new(11.0, 230.0, 2.0));
    let ml = generate(&l, MeshVariant::Plain).unwrap();
    let n = pair_intersection_count(&r, &ml, 50).unwrap();
    assert!(n > 0);
    let spec = GridSpec::new(pair_bbox(&r.aabb(), &ml.aabb()), 50).unwrap();
    let (a, b) = (RayCaster::new(&r).unwrap(), RayCaster::new(&ml).unwrap());
    let brute = spec.points().into_iter().filter(|&p| a.inside(p) && b.inside(p)).count();
    assert_eq!(n, brute);
}

#[test]
fn capsule_examples() {
    let s = rest(Side::Right);
    let f = CapsuleField::default();
    let (a, b) = s.bone(9);
    assert!(f.eval(a.lerp(b, 0.3), &s) > 0.5);
    // Just past the index tip along its bone: only the distal capsule matters.
    let (a, b) = s.bone(7);
    let dir = (b - a).normalized();
    let p = b + dir * f.radii[7];
    assert!((f.eval(p, &s) - 0.5).abs() < 1e-6);
    let p = b + dir * (f.radii[7] + 10.0 / f.beta + 1.0);
    assert!(f.eval(p, &s) < 1e-4);
    let far = Vec3::new(0.0, 0.0, 300.0);
    assert!(f.grad_point(far, &s).norm() < 1e-6);
    assert!(f.grad_skeleton(far, &s).iter().all(|g| g.norm() < 1e-6));
    assert!(CapsuleField::new([1.0; 20], 0.0).is_err());
    assert!(CapsuleField::new([0.0; 20], 2.0).is_err());
}

#[test]
fn capsule_matches_mesh_on_rest_pose() {
    let s = rest(Side::Right);
    let m = generate(&s, MeshVariant::Plain).unwrap();
    let spec = GridSpec::new(m.aabb().padded(GRID_PADDING), GRID_N).unwrap();
    let g = mesh_grid(&m, spec).unwrap();
    let i = iou(&field_grid(&CapsuleField::default(), &s, spec), &g).unwrap();
    assert!(i >= 0.75, "iou {i}");
}

#[test]
fn default_radii_reproduce_calibration() {
    let s = rest(Side::Right);
    let m = generate(&s, MeshVariant::Plain).unwrap();
    let spec = GridSpec::new(m.aabb().padded(GRID_PADDING), GRID_N).unwrap();
    let f = calibrate_radii(&mesh_grid(&m, spec).unwrap(), &s, DEFAULT_BETA).unwrap();
    for (e, (a, b)) in f.radii.iter().zip(DEFAULT_RADII).enumerate() {
        assert!((a - b).abs() < 0.01, "edge {e}: {a} vs {b}");
    }
}

fn fd_check(f: &CapsuleField, s: &Skeleton<f64>, p: Vec3<f64>) -> f64 {
    let h = 1e-4;
    let (_, gp, gj) = f.eval_grad(s, p);
    let mut ana = Vec::new();
    let mut num = Vec::new();
    for k in 0..3 {
        let mut d = Vec3::zero();
        match k {
            0 => d.x = h,
            1 => d.y = h,
            _ => d.z = h,
        }
        num.push((f.eval(p + d, s) - f.eval(p - d, s)) / (2.0 * h));
        ana.push(gp[k]);
        for j in 0..21 {
            let (mut sp, mut sm) = (s.clone(), s.clone());
            sp.joints[j] += d;
            sm.joints[j] -= d;
            num.push((f.eval(p, &sp) - f.eval(p, &sm)) / (2.0 * h));
            ana.push(gj[j][k]);
        }
    }
    let diff: f64 = ana.iter().zip(&num).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = ana.iter().map(|a| a * a).sum::<f64>().sqrt().max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn capsule_gradients_match_finite_differences(seed in any::<u64>(), u in prop::array::uniform3(-1.0f64..1.0)) {
        let s = random_skeleton(seed, Side::Right);
        let b = s.aabb();
        let p = Vec3::new(
            b.min.x + (u[0] + 1.0) * 0.5 * (b.max.x - b.min.x),
            b.min.y + (u[1] + 1.0) * 0.5 * (b.max.y - b.min.y),
            b.min.z + (u[2] + 1.0) * 0.5 * (b.max.z - b.min.z),
        );
        let err = fd_check(&CapsuleField::default(), &s, p);
        prop_assert!(err < 1e-4, "rel err {}", err);
    }

    #[test]
    fn capsule_is_reflection_symmetric(seed in any::<u64>(), p in prop::array::uniform3(-100.0f64..100.0)) {
        let s = random_skeleton(seed, Side::Right);
        let f = CapsuleField::default();
        let p = Vec3::from(p) + s.wrist();
        let q = Vec3::new(-p.x, p.y, p.z);
        prop_assert_eq!(f.eval(p, &s), f.eval(q, &flip_x(&s)));
    }

    #[test]
    fn capsule_decreases_away_from_a_bone(seed in any::<u64>(), e in 0usize..20) {
        let s = random_skeleton(seed, Side::Right);
        let f = CapsuleField::default();
        let (a, b) = s.bone(e);
        let m = a.lerp(b, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let axis = (b - a).normalized();
        let mut dir = random_unit(&mut rng);
        dir = (dir - axis * dir.dot(axis)).normalized();
        let mut prev = f.eval(m, &s);
        // Only the first few mm: further out another bone may take over.
        for k in 1..=20 {
            let v = f.eval(m + dir * (0.25 * k as f64), &s);
            prop_assert!(v <= prev + 1e-12 || v > 0.999, "step {}: {} > {}", k, v, prev);
            prev = v;
        }
    }

    #[test]
    fn probabilities_are_bounded(seed in any::<u64>(), p in prop::array::uniform3(-300.0f64..300.0)) {
        let s = random_skeleton(seed, Side::Left);
        let v = CapsuleField::default().eval(Vec3::from(p), &s);
        prop_assert!((0.0..=1.0).contains(&v));
    }
}
