mod support;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use veripc_core::expr::{SymbolTable, VectorField};
use veripc_core::hybrid::{HoldMode, HybridAutomaton};
use veripc_core::mpc::{
    build_parametric_lp, discretize, solve_mplp, AffineLaw, CriticalRegion, ExplicitSolution, MpcProblem, MplpConfig,
    NormKind,
};
use veripc_core::polyhedron::{BoxSet, Polyhedron};
use veripc_core::reach::{
    cell_tube, check_safety, compute_reach, partition_initial, successor_cells, ReachConfig, TubeSegment, VerdictKind,
};

use support::{brute_vertices, rng, uniform_in};

/// Explicit MPC for `dynamics`, linearized at the origin, with `|u| ≤ 1`
/// and `|x_i| ≤ xb`.
fn closed_loop(dynamics: &[&str], horizon: usize, xb: f64, hold: HoldMode) -> HybridAutomaton {
    let n = dynamics.len();
    let field = VectorField::parse(dynamics, &SymbolTable::new(n, 1)).unwrap();
    let (jx, ju) = field.jacobian().unwrap().eval(&vec![0.0; n], &[0.0]).unwrap();
    let (a_d, b_d) = discretize(&jx, &ju, 1.0).unwrap();
    let p = MpcProblem {
        a_d,
        b_d,
        horizon,
        ts: 1.0,
        q: DMatrix::identity(n, n),
        r: DMatrix::identity(1, 1),
        norm: NormKind::Inf,
        u_min: DVector::from_element(1, -1.0),
        u_max: DVector::from_element(1, 1.0),
        x_min: DVector::from_element(n, -xb),
        x_max: DVector::from_element(n, xb),
        param_domain: BoxSet::cube(n, xb),
    };
    let sol = solve_mplp(&build_parametric_lp(&p).unwrap(), &p.param_domain, &MplpConfig::default()).unwrap();
    HybridAutomaton::build(field, sol, 1.0, hold).unwrap()
}

fn cruise(hold: HoldMode) -> HybridAutomaton {
    closed_loop(&["u1 - 0.1*x1 - 0.004*x1^3"], 3, 5.0, hold)
}

fn pendulum() -> HybridAutomaton {
    closed_loop(&["x2", "-sin(x1) - 0.2*x2 + u1"], 2, 3.0, HoldMode::StateFeedback)
}

fn single_mode(dynamics: &[&str]) -> HybridAutomaton {
    let n = dynamics.len();
    let region = Polyhedron::from_box(&BoxSet::cube(n, 50.0));
    let law = AffineLaw { f: DMatrix::zeros(1, n), g: DVector::zeros(1) };
    let sol = ExplicitSolution::new(n, 1, vec![CriticalRegion { region, law, active_set: vec![] }]).unwrap();
    let field = VectorField::parse(dynamics, &SymbolTable::new(n, 1)).unwrap();
    HybridAutomaton::build(field, sol, 1.0, HoldMode::StateFeedback).unwrap()
}

fn bx(lo: &[f64], hi: &[f64]) -> BoxSet {
    BoxSet::from_slices(lo, hi).unwrap()
}

fn assert_tube_covers(ha: &HybridAutomaton, theta: &BoxSet, tv: f64, seed: u64) {
    let cfg = ReachConfig::default();
    let v = compute_reach(ha, theta, tv, &[], &cfg);
    assert_eq!(v.kind, VerdictKind::RobustSafe, "{}", v.detail);
    let mut r = rng(seed);
    let h = ha.ts() / (10 * cfg.steps_per_period) as f64;
    for _ in 0..40 {
        let x0 = uniform_in(&mut r, theta.lo(), theta.hi());
        let traj = ha.simulate(&x0, tv, h).unwrap();
        assert!(!traj.infeasible);
        for s in &traj.samples {
            assert!(v.tube.covers(s.t, &s.x, 1e-7), "x({}) = {} from {x0} not covered", s.t, s.x);
        }
    }
}

#[test]
fn tubes_cover_simulated_trajectories() {
    assert_tube_covers(&cruise(HoldMode::StateFeedback), &bx(&[2.0], &[2.2]), 8.0, 401);
    assert_tube_covers(&cruise(HoldMode::Zoh), &bx(&[-3.1], &[-3.0]), 6.0, 402);
    assert_tube_covers(&pendulum(), &bx(&[0.3, 0.0], &[0.31, 0.01]), 4.0, 403);
}

#[test]
fn trajectory_pairs_respect_the_discrepancy_bound() {
    let ha = pendulum();
    let cfg = ReachConfig::default();
    let mut r = rng(404);
    for mode in 0..ha.mode_count() {
        let ball = ha.solution().region(mode).region.chebyshev_center().unwrap();
        let cell = BoxSet::point(&ball.center).inflate(0.01);
        let Ok(tube) = cell_tube(&ha, mode, &cell, 0.0, 1.0, &cfg) else { continue };
        let bound = tube.bound;
        for _ in 0..20 {
            let x = uniform_in(&mut r, cell.lo(), cell.hi());
            let y = uniform_in(&mut r, cell.lo(), cell.hi());
            let d = (&x - &y).norm();
            let fx = ha.flow(mode, &x, 1.0, 500).unwrap();
            let fy = ha.flow(mode, &y, 1.0, 500).unwrap();
            for k in (0..=500).step_by(10) {
                let t = k as f64 / 500.0;
                let sep = (&fx[k] - &fy[k]).norm();
                let allowed = d * (bound.lambda * t).exp() * bound.bloat_safety + 2.0 * bound.step_error;
                assert!(sep <= allowed, "mode {mode}, t = {t}: {sep} > {allowed}");
            }
        }
    }
}

#[test]
fn segments_tile_the_time_axis() {
    let ha = cruise(HoldMode::StateFeedback);
    let cfg = ReachConfig::default();
    let tube = cell_tube(&ha, ha.locate_mode(&DVector::from_element(1, 2.1)).unwrap(), &bx(&[2.0], &[2.2]), 3.0, 0.7, &cfg)
        .unwrap();
    assert_eq!(tube.segments.first().unwrap().t0, 3.0);
    assert_eq!(tube.segments.last().unwrap().t1, 3.7);
    for w in tube.segments.windows(2) {
        assert_eq!(w[0].t1, w[1].t0);
    }

    let v = compute_reach(&ha, &bx(&[2.0], &[2.2]), 5.5, &[], &cfg);
    let mut spans: Vec<(f64, f64)> = v.tube.segments.iter().map(|s| (s.t0, s.t1)).collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut reach = 0.0;
    for (t0, t1) in spans {
        assert!(t0 <= reach + 1e-12, "gap before {t0}");
        reach = f64::max(reach, t1);
    }
    assert!((reach - 5.5).abs() < 1e-12);
}

#[test]
fn expansive_mode_bloats_at_least_exponentially() {
    let ha = single_mode(&["x1"]);
    let start = bx(&[0.9], &[1.1]);
    let tube = cell_tube(&ha, 0, &start, 0.0, 1.0, &ReachConfig::default()).unwrap();
    assert!(tube.bound.lambda >= 1.0);
    let e = 1f64.exp();
    assert!(tube.end_box.lo()[0] <= 0.9 * e && tube.end_box.hi()[0] >= 1.1 * e);
    assert!(tube.end_box.widths()[0] >= 0.2 * e * 1.1);
}

#[test]
fn shrinking_unsafe_sets_preserves_safety() {
    let ha = cruise(HoldMode::StateFeedback);
    let theta = bx(&[2.0], &[2.2]);
    let cfg = ReachConfig { max_partitions: 64, ..ReachConfig::default() };
    let mut r = rng(405);
    let mut safe_seen = 0;
    for _ in 0..12 {
        let c: f64 = r.gen_range(-4.0..4.0);
        let w: f64 = r.gen_range(0.05..0.6);
        let big = Polyhedron::from_box(&bx(&[c - w], &[c + w]));
        let small = Polyhedron::from_box(&bx(&[c - w / 3.0], &[c + w / 3.0]));
        let vb = compute_reach(&ha, &theta, 6.0, std::slice::from_ref(&big), &cfg);
        let vs = compute_reach(&ha, &theta, 6.0, &[small], &cfg);
        if vb.kind == VerdictKind::RobustSafe {
            safe_seen += 1;
            assert!(check_safety(&vb.tube.segments, &[big]));
            assert_eq!(vs.kind, VerdictKind::RobustSafe, "unsafe box around {c}");
        }
    }
    assert!(safe_seen >= 3);
}

#[test]
fn doubling_the_budget_keeps_the_verdict() {
    let ha = pendulum();
    let theta = bx(&[0.3, 0.0], &[0.31, 0.01]);
    // a halfspace between the simulated minimum of x2 and the tube's lower
    // edge forces refinement
    let free = compute_reach(&ha, &theta, 3.0, &[], &ReachConfig::default());
    let tube_low = free.tube.segments.iter().map(|s| s.enclosure.lo()[1]).fold(f64::INFINITY, f64::min);
    let true_low = theta
        .sample_grid(3)
        .iter()
        .flat_map(|x0| ha.simulate(x0, 3.0, 0.01).unwrap().samples)
        .map(|s| s.x[1])
        .fold(f64::INFINITY, f64::min);
    assert!(tube_low < true_low);
    let cut = Polyhedron::from_rows(&[vec![0.0, 1.0]], &[tube_low + 0.8 * (true_low - tube_low)]).unwrap();
    let verdicts: Vec<(usize, VerdictKind, usize)> = [1usize, 2, 4, 8, 16, 32, 64, 128]
        .into_iter()
        .map(|budget| {
            let cfg = ReachConfig { max_partitions: budget, ..ReachConfig::default() };
            let v = compute_reach(&ha, &theta, 3.0, std::slice::from_ref(&cut), &cfg);
            (budget, v.kind, v.partitions_used)
        })
        .collect();
    assert_eq!(verdicts[0].1, VerdictKind::MaxPart, "{verdicts:?}");
    for w in verdicts.windows(2) {
        if w[0].1 == VerdictKind::RobustSafe {
            assert_eq!(w[1].1, VerdictKind::RobustSafe, "{verdicts:?}");
            assert_eq!(w[1].2, w[0].2);
        }
    }
    assert_eq!(verdicts.last().unwrap().1, VerdictKind::RobustSafe, "{verdicts:?}");
}

#[test]
fn verdicts_do_not_depend_on_thread_count() {
    let ha = pendulum();
    let theta = bx(&[0.3, 0.0], &[0.31, 0.01]);
    let run = |threads| {
        let cfg = ReachConfig { threads: Some(threads), deterministic: true, ..ReachConfig::default() };
        let v = compute_reach(&ha, &theta, 3.0, &[], &cfg);
        (serde_json::to_string(&v.to_json()).unwrap(), serde_json::to_string(&v.tube).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn safety_check_matches_vertex_oracle() {
    let mut r = rng(406);
    let mut hits = 0;
    for _ in 0..200 {
        let n = 2;
        let m = r.gen_range(1..4);
        let (_, a, b) = support::random_bounded(&mut r, n, m);
        let unsafe_set = Polyhedron::new(a.clone(), b.clone()).unwrap();
        let c = DVector::from_fn(n, |_, _| r.gen_range(-3.0..3.0));
        let enc = BoxSet::new(c.clone(), c.add_scalar(r.gen_range(0.05..1.0))).unwrap();
        let seg = TubeSegment { t0: 0.0, t1: 1.0, enclosure: enc.clone(), mode: 0 };
        // stack the box onto the polytope and look for any vertex
        let rows = a.nrows();
        let mut aa = DMatrix::zeros(rows + 2 * n, n);
        let mut bb = DVector::zeros(rows + 2 * n);
        aa.rows_mut(0, rows).copy_from(&a);
        bb.rows_mut(0, rows).copy_from(&b);
        for j in 0..n {
            aa[(rows + 2 * j, j)] = 1.0;
            bb[rows + 2 * j] = enc.hi()[j];
            aa[(rows + 2 * j + 1, j)] = -1.0;
            bb[rows + 2 * j + 1] = -enc.lo()[j];
        }
        let meets = !brute_vertices(&aa, &bb, 1e-9).is_empty();
        assert_eq!(check_safety(&[seg], &[unsafe_set]), !meets);
        hits += meets as usize;
    }
    assert!(hits > 20 && hits < 180, "{hits}");
}

fn assert_cells_cover(boxed: &BoxSet, cells: &[veripc_core::reach::Cell], sol: &ExplicitSolution, r: &mut rand_chacha::ChaCha8Rng) {
    for _ in 0..300 {
        let x = uniform_in(r, boxed.lo(), boxed.hi());
        if sol.locate(&x).is_none() {
            continue;
        }
        let ok = cells
            .iter()
            .any(|c| c.bx.contains(&x, 1e-7) && sol.region(c.mode).region.max_violation(&x) <= 1e-7);
        assert!(ok, "{x} not covered by a cell of its own region");
    }
}

#[test]
fn partitions_and_successors_cover_their_boxes() {
    let ha = pendulum();
    let sol = ha.solution();
    let cfg = ReachConfig::default();
    let mut r = rng(407);
    for _ in 0..30 {
        let c = uniform_in(&mut r, &DVector::from_element(2, -1.5), &DVector::from_element(2, 1.5));
        let w = r.gen_range(0.01..0.4);
        let theta = BoxSet::new(c.clone(), c.add_scalar(w)).unwrap();
        if let Ok(cells) = partition_initial(&theta, sol, &cfg) {
            for cell in &cells {
                assert!(theta.contains_box(&cell.bx, 1e-9));
            }
            assert_cells_cover(&theta, &cells, sol, &mut r);
        }
        if let Ok(cells) = successor_cells(&theta, sol, 1.0, 0, &cfg) {
            assert_cells_cover(&theta, &cells, sol, &mut r);
        }
    }
}
