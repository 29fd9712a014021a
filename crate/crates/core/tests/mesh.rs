mod common;

use common::{random_skeleton, self_intersections};
use handocc::dual::Dual;
use handocc::geom::{Mat3, Vec3};
use handocc::kinematics::*;
use handocc::mesh::*;
use proptest::prelude::*;

fn rest(side: Side) -> Skeleton<f64> {
    forward_kinematics(&rest_pose(side)).unwrap()
}

#[test]
fn rest_meshes_have_expected_counts_and_are_closed() {
    for side in [Side::Right, Side::Left] {
        for (v, n) in [(MeshVariant::Plain, 307), (MeshVariant::Refined, 699)] {
            let m = generate(&rest(side), v).unwrap();
            assert_eq!(m.vertices.len(), n);
            let r = validate_watertight(&m);
            assert!(r.is_closed && r.is_oriented, "{:?}", r.defects);
            assert_eq!(r.euler_char, 2);
            assert!(r.is_ok());
            assert!(m.volume() > 0.0, "outward winding gives positive volume");
            assert_eq!(self_intersections(&m), 0);
        }
    }
}

#[test]
fn translation_moves_every_vertex() {
    let s = random_skeleton(4, Side::Right);
    let t = Vec3::new(12.5, -40.25, 3.0);
    for v in [MeshVariant::Plain, MeshVariant::Refined] {
        let a = generate(&s, v).unwrap();
        let b = generate(&s.translated(t), v).unwrap();
        for (p, q) in a.vertices.iter().zip(&b.vertices) {
            assert!((*p + t - *q).norm() < 1e-10);
        }
        assert_eq!(a.faces, b.faces);
    }
}

#[test]
fn left_mesh_mirrors_right_mesh() {
    let s = random_skeleton(8, Side::Right);
    let m = generate(&s, MeshVariant::Plain).unwrap();
    let f = generate(&flip_x(&s), MeshVariant::Plain).unwrap();
    for (p, q) in m.vertices.iter().zip(&f.vertices) {
        assert!((Vec3::new(-p.x, p.y, p.z) - *q).norm() < 1e-9);
    }
    for (a, b) in m.faces.iter().zip(&f.faces) {
        assert_eq!([a[0], a[2], a[1]], *b);
    }
    assert!((m.volume() - f.volume()).abs() < 1e-6 * m.volume());
}

#[test]
fn zero_length_bone_is_named() {
    let mut s = rest(Side::Right);
    s.joints[11] = s.joints[10];
    let err = generate(&s, MeshVariant::Plain).unwrap_err();
    assert!(err.to_string().contains("middle middle"), "{err}");
}

#[test]
fn generation_is_deterministic() {
    let s = random_skeleton(21, Side::Left);
    assert_eq!(generate(&s, MeshVariant::Refined).unwrap(), generate(&s, MeshVariant::Refined).unwrap());
}

#[test]
fn mismatched_table_is_rejected() {
    let t = OffsetTable::default_for(MeshVariant::Refined);
    assert!(generate_mesh(&rest(Side::Right), MeshVariant::Plain, &t).is_err());
}

#[test]
fn custom_table_is_used() {
    let mut t = OffsetTable::default_for(MeshVariant::Plain);
    for r in t.fingers.iter_mut().flat_map(|f| f.rings.iter_mut()) {
        for o in r.offsets.iter_mut() {
            o[0] *= 0.8;
            o[2] *= 0.8;
        }
    }
    let s = rest(Side::Right);
    let thin = generate_mesh(&s, MeshVariant::Plain, &t).unwrap();
    assert!(validate_watertight(&thin).is_ok());
    assert!(thin.volume() < generate(&s, MeshVariant::Plain).unwrap().volume());
}

#[test]
fn deleted_face_leaves_three_boundary_edges() {
    let mut m = generate(&rest(Side::Right), MeshVariant::Plain).unwrap();
    m.faces.remove(100);
    let r = validate_watertight(&m);
    assert!(!r.is_closed);
    let boundary = r.defects.iter().filter(|d| matches!(d, MeshDefect::BoundaryEdge(..))).count();
    assert_eq!(boundary, 3);
}

#[test]
fn reversed_face_breaks_orientation() {
    let mut m = generate(&rest(Side::Right), MeshVariant::Plain).unwrap();
    m.faces[42].swap(0, 1);
    let r = validate_watertight(&m);
    assert!(r.is_closed);
    assert!(!r.is_oriented);
}

#[test]
fn surface_pointset_is_the_vertex_list() {
    for v in [MeshVariant::Plain, MeshVariant::Refined] {
        let m = generate(&rest(Side::Right), v).unwrap();
        let ps = mesh_surface_pointset(&m);
        assert_eq!(ps.len(), v.vertex_count());
        assert_eq!(ps.points, m.vertices);
        assert_eq!(ps.provenance, Provenance::MeshSurface);
    }
}

#[test]
fn obj_round_trip() {
    let m = generate(&random_skeleton(2, Side::Left), MeshVariant::Refined).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hand.obj");
    export_obj(&m, &path).unwrap();
    let back = import_obj(&path).unwrap();
    assert_eq!(back.faces, m.faces);
    for (p, q) in m.vertices.iter().zip(&back.vertices) {
        assert!((*p - *q).norm() < 1e-6);
    }
}

#[test]
fn obj_parse_errors_carry_line_numbers() {
    let quad = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3 4\n";
    match parse_obj(quad) {
        Err(handocc::Error::Parse { line, .. }) => assert_eq!(line, 5),
        other => panic!("expected parse error, got {other:?}"),
    }
    assert!(matches!(parse_obj(""), Err(handocc::Error::Parse { .. })));
    let bad = "v 0 0 0\nv 1 zero 0\n";
    match parse_obj(bad) {
        Err(handocc::Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
    assert!(parse_obj("v 0 0 0\nf 1 1 2\n").is_err());
}

#[test]
fn vertex_jacobian_matches_finite_differences() {
    // Forward-mode derivative of every vertex with respect to one joint
    // coordinate against central differences.
    let s = random_skeleton(31, Side::Right);
    for (j, c) in [(0, 0), (6, 2), (13, 1), (20, 0)] {
        let mut sd: Skeleton<Dual<f64, 1>> = s.cast();
        let p = &mut sd.joints[j];
        let x = match c {
            0 => &mut p.x,
            1 => &mut p.y,
            _ => &mut p.z,
        };
        *x = Dual::variable(x.re, 0);
        let vd = envelope_vertices(&sd, MeshVariant::Plain).unwrap();
        let h = 1e-5;
        let shift = |d: f64| {
            let mut t = s.clone();
            let p = &mut t.joints[j];
            match c {
                0 => p.x += d,
                1 => p.y += d,
                _ => p.z += d,
            }
            envelope_vertices(&t, MeshVariant::Plain).unwrap()
        };
        let (vp, vm) = (shift(h), shift(-h));
        for i in 0..vd.len() {
            let fd = (vp[i] - vm[i]) * (0.5 / h);
            let ad = Vec3::new(vd[i].x.eps[0], vd[i].y.eps[0], vd[i].z.eps[0]);
            assert!((fd - ad).norm() < 1e-5 * (1.0 + ad.norm()), "joint {j} vertex {i}: {fd:?} vs {ad:?}");
        }
    }
}

fn variant() -> impl Strategy<Value = MeshVariant> {
    prop_oneof![Just(MeshVariant::Plain), Just(MeshVariant::Refined)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_poses_give_watertight_meshes(seed in any::<u64>(), left in any::<bool>(), v in variant()) {
        let side = if left { Side::Left } else { Side::Right };
        let m = generate(&random_skeleton(seed, side), v).unwrap();
        prop_assert_eq!(m.vertices.len(), v.vertex_count());
        let r = validate_watertight(&m);
        prop_assert!(r.is_ok(), "{:?}", r.defects);
        prop_assert_eq!(r.euler_char, 2);
        prop_assert!(m.volume() > 0.0);
    }

    #[test]
    fn rigid_motion_is_equivariant(seed in any::<u64>(), rot in prop::array::uniform3(-3.0f64..3.0), t in prop::array::uniform3(-200.0f64..200.0)) {
        let s = random_skeleton(seed, Side::Right);
        let r = Mat3::from_axis_angle(Vec3::from(rot));
        let t = Vec3::from(t);
        let a = generate(&s, MeshVariant::Plain).unwrap();
        let b = generate(&s.transformed(&r, t), MeshVariant::Plain).unwrap();
        for (p, q) in a.vertices.iter().zip(&b.vertices) {
            let want = r.mul_vec(*p) + t;
            prop_assert!((want - *q).norm() <= 1e-9 * want.norm().max(1.0));
        }
    }

    #[test]
    fn small_joint_motion_moves_vertices_a_little(seed in any::<u64>(), j in 0usize..21, d in prop::array::uniform3(-1e-3f64..1e-3)) {
        let s = random_skeleton(seed, Side::Right);
        let mut t = s.clone();
        t.joints[j] += Vec3::from(d);
        let a = envelope_vertices(&s, MeshVariant::Refined).unwrap();
        let b = envelope_vertices(&t, MeshVariant::Refined).unwrap();
        let moved = a.iter().zip(&b).map(|(p, q)| (*p - *q).norm()).fold(0.0, f64::max);
        prop_assert!(moved < 0.05, "moved {}", moved);
    }
}

#[test]
fn random_plain_meshes_do_not_self_intersect() {
    for seed in 0..20 {
        let m = generate(&random_skeleton(seed, Side::Right), MeshVariant::Plain).unwrap();
        assert_eq!(self_intersections(&m), 0, "seed {seed}");
    }
}
