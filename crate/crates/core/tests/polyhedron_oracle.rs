mod support;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use veripc_core::lp::{solve_lp, LinearProgram, LpStatus, SolverConfig};
use veripc_core::polyhedron::{BoxSet, Polyhedron};

use support::{brute_lp, brute_vertices, in_hull_low_dim, random_bounded, rng};

const TOL: f64 = 1e-7;

fn random_polytope(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let m = r.gen_range(2..=6);
    let (_, a, b) = random_bounded(r, n, m);
    (a, b)
}

#[test]
fn emptiness_matches_vertex_enumeration() {
    let mut r = rng(101);
    let mut empties = 0;
    for _ in 0..200 {
        let n = r.gen_range(2..=3);
        let (a, b) = random_polytope(&mut r, n);
        let p = Polyhedron::new(a.clone(), b.clone()).unwrap();
        let oracle_empty = brute_vertices(&a, &b, 1e-9).is_empty();
        assert_eq!(p.is_empty(), oracle_empty);
        empties += oracle_empty as usize;
    }
    assert!(empties > 5, "instances should include empty sets, got {empties}");
}

#[test]
fn box_containment_matches_corner_test() {
    let mut r = rng(102);
    for _ in 0..200 {
        let n = r.gen_range(2..=3);
        let (a, b) = random_polytope(&mut r, n);
        let p = Polyhedron::new(a.clone(), b.clone()).unwrap();
        let c = DVector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
        let bx = BoxSet::new(c.clone(), c.add_scalar(r.gen_range(0.0..0.6))).unwrap();
        let oracle = bx
            .corners()
            .iter()
            .all(|x| (0..a.nrows()).all(|i| a.row(i).transpose().dot(x) <= b[i] + TOL));
        assert_eq!(p.contains_box(&bx, TOL), oracle);
    }
}

#[test]
fn bounding_box_matches_vertex_extremes() {
    let mut r = rng(103);
    let mut checked = 0;
    while checked < 200 {
        let n = r.gen_range(2..=3);
        let (a, b) = random_polytope(&mut r, n);
        let verts = brute_vertices(&a, &b, 1e-9);
        if verts.is_empty() {
            continue;
        }
        let bb = Polyhedron::new(a, b).unwrap().bounding_box().unwrap();
        for j in 0..n {
            let lo = verts.iter().map(|v| v[j]).fold(f64::INFINITY, f64::min);
            let hi = verts.iter().map(|v| v[j]).fold(f64::NEG_INFINITY, f64::max);
            assert!((bb.lo()[j] - lo).abs() <= TOL && (bb.hi()[j] - hi).abs() <= TOL);
        }
        checked += 1;
    }
}

#[test]
fn projection_matches_projected_vertex_hull() {
    let mut r = rng(104);
    let mut checked = 0;
    while checked < 200 {
        let n = r.gen_range(2..=3);
        let (a, b) = random_polytope(&mut r, n);
        let verts = brute_vertices(&a, &b, 1e-9);
        if verts.is_empty() {
            continue;
        }
        let keep: Vec<usize> = if n == 2 { vec![r.gen_range(0..2)] } else { vec![0, 2] };
        let proj = Polyhedron::new(a, b).unwrap().project(&keep).unwrap();
        let shadow: Vec<DVector<f64>> = verts
            .iter()
            .map(|v| DVector::from_iterator(keep.len(), keep.iter().map(|&k| v[k])))
            .collect();
        // every projected vertex lies in the projection
        for s in &shadow {
            assert!(proj.max_violation(s) <= TOL);
        }
        // every vertex of the projection is the shadow of some vertex
        let pv = brute_vertices(proj.a(), proj.b(), 1e-9);
        assert!(!pv.is_empty());
        for v in &pv {
            assert!(in_hull_low_dim(&shadow, v, TOL), "projection vertex {v} outside the shadow");
        }
        checked += 1;
    }
}

#[test]
fn random_lps_match_basic_solution_enumeration() {
    let mut r = rng(105);
    let cfg = SolverConfig::default();
    for _ in 0..200 {
        let n = r.gen_range(2..=4);
        let m = r.gen_range(4..=10) - 2 * n.min(2);
        let (c, a, b) = random_bounded(&mut r, n, m.max(1));
        let s = solve_lp(&LinearProgram::new(c.clone(), a.clone(), b.clone()), &cfg).unwrap();
        match brute_lp(&c, &a, &b) {
            None => assert_eq!(s.status, LpStatus::Infeasible),
            Some(v) => {
                assert_eq!(s.status, LpStatus::Optimal);
                assert!((s.objective - v).abs() <= TOL, "{} vs {v}", s.objective);
            }
        }
    }
}

fn poly_strategy(n: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..7).prop_flat_map(move |m| {
        (
            prop::collection::vec(prop::collection::vec(-1.0..1.0f64, n), m),
            prop::collection::vec(-0.2..1.5f64, m),
        )
    })
}

fn points_strategy(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0..2.0f64, n), 50)
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn intersection_is_conjunction((a1, b1) in poly_strategy(2), (a2, b2) in poly_strategy(2), pts in points_strategy(2)) {
        let p = Polyhedron::from_rows(&a1, &b1).unwrap();
        let q = Polyhedron::from_rows(&a2, &b2).unwrap();
        let pq = p.intersect(&q).unwrap();
        for x in pts {
            let x = DVector::from_vec(x);
            let both = p.contains(&x, 1e-9).unwrap() && q.contains(&x, 1e-9).unwrap();
            // points within rounding of a boundary may go either way
            if (p.max_violation(&x).abs() > 1e-7) && (q.max_violation(&x).abs() > 1e-7) {
                prop_assert_eq!(pq.contains(&x, 1e-9).unwrap(), both);
            }
        }
    }

    #[test]
    fn redundancy_removal_keeps_the_set((a, b) in poly_strategy(3), pts in points_strategy(3)) {
        let p = Polyhedron::from_rows(&a, &b).unwrap();
        let q = p.remove_redundant().unwrap();
        prop_assert!(q.num_rows() <= p.num_rows());
        for x in pts {
            let x = DVector::from_vec(x);
            if p.max_violation(&x).abs() > 1e-7 {
                prop_assert_eq!(p.contains(&x, 0.0).unwrap(), q.contains(&x, 1e-9).unwrap());
            }
        }
    }

    #[test]
    fn projection_is_monotone((a, b) in poly_strategy(3), pts in points_strategy(3)) {
        let p = Polyhedron::from_rows(&a, &b).unwrap();
        let proj = p.project(&[0, 1]).unwrap();
        for x in pts {
            let x = DVector::from_vec(x);
            if p.contains(&x, 0.0).unwrap() {
                prop_assert!(proj.max_violation(&x.rows(0, 2).into_owned()) <= 1e-7);
            }
        }
    }

    #[test]
    fn chebyshev_ball_lies_inside((a, b) in poly_strategy(2), dirs in prop::collection::vec(0.0..std::f64::consts::TAU, 100)) {
        let p = Polyhedron::from_rows(&a, &b).unwrap().intersect(&Polyhedron::from_box(&BoxSet::cube(2, 3.0))).unwrap();
        let ball = p.chebyshev_center().unwrap();
        // an empty set reports a negative radius
        if ball.radius >= 0.0 {
            for t in dirs {
                let x = &ball.center + DVector::from_vec(vec![t.cos(), t.sin()]) * ball.radius;
                prop_assert!(p.max_violation(&x) <= 1e-7);
            }
        }
    }

    #[test]
    fn vertices_have_full_rank_tight_rows((a, b) in poly_strategy(3)) {
        let p = Polyhedron::from_rows(&a, &b).unwrap().intersect(&Polyhedron::from_box(&BoxSet::cube(3, 3.0))).unwrap();
        for v in p.vertices().unwrap() {
            let tight: Vec<usize> = (0..p.num_rows())
                .filter(|&i| (p.a().row(i).transpose().dot(&v) - p.b()[i]).abs() <= 1e-7)
                .collect();
            let sub = DMatrix::from_fn(tight.len(), 3, |r, c| p.a()[(tight[r], c)]);
            prop_assert_eq!(sub.rank(1e-9), 3);
        }
    }

    #[test]
    fn bisected_halves_hull_back(lo in prop::collection::vec(-5.0..5.0f64, 3), w in prop::collection::vec(0.0..3.0f64, 3)) {
        let lo = DVector::from_vec(lo);
        let hi = &lo + DVector::from_vec(w);
        let bx = BoxSet::new(lo, hi).unwrap();
        let (l, r) = bx.bisect(bx.widest_dim());
        prop_assert_eq!(l.hull(&r), bx.clone());
        prop_assert!(bx.contains_box(&l, 0.0) && bx.contains_box(&r, 0.0));
    }
}
