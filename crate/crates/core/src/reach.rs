//! Bounded-time safety of the closed loop by simulation and discrepancy
//! bloating, chained across sampling periods.
//!
//! Each period starts from a set of cells (box + mode). A cell's center is
//! simulated over the period and the trajectory is bloated by an exponential
//! bound on neighbouring trajectories, `δ(t) = δ₀·e^{λt}·bloat + step_error`,
//! where `λ` bounds the matrix measure `μ₂` of the closed-loop Jacobian over a
//! coarse enclosure. Segments hitting an unsafe set trigger bisection of the
//! cell. The box at the end of the period is split among the regions it meets,
//! which become the next period's cells.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::hybrid::{HoldMode, HybridAutomaton};
use crate::mpc::ExplicitSolution;
use crate::polyhedron::{BoxSet, Polyhedron};

#[derive(Debug, Clone, PartialEq)]
pub struct ReachConfig {
    /// Bisections allowed over the whole run before giving up.
    pub max_partitions: usize,
    pub steps_per_period: usize,
    /// Multiplier on the exponential part of the discrepancy.
    pub bloat_safety: f64,
    pub containment_tol: f64,
    /// Every enclosure must stay inside this box; `None` means `[-1e6, 1e6]ⁿ`.
    pub world_box: Option<BoxSet>,
    /// Bisection depth when splitting the initial set among regions.
    pub max_split_depth: usize,
    /// Interior lattice cells per side added to the leak-check grid (0 or 1:
    /// corners, face centers and center only).
    pub leak_grid: usize,
    /// Worker threads; `None` uses the rayon default.
    pub threads: Option<usize>,
    /// Leave wall time out of the verdict so repeated runs are byte-identical.
    pub deterministic: bool,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            max_partitions: 512,
            steps_per_period: 50,
            bloat_safety: 1.1,
            containment_tol: 1e-7,
            world_box: None,
            max_split_depth: 6,
            leak_grid: 2,
            threads: None,
            deterministic: false,
        }
    }
}

impl ReachConfig {
    /// NaN fails every check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        if self.max_partitions < 1 {
            return Err("max_partitions must be at least 1".into());
        }
        if self.steps_per_period < 4 {
            return Err("steps_per_period must be at least 4".into());
        }
        if !(self.bloat_safety >= 1.0) {
            return Err("bloat_safety must be at least 1".into());
        }
        if !(self.containment_tol >= 0.0) {
            return Err("containment_tol must be nonnegative".into());
        }
        if self.threads == Some(0) {
            return Err("threads must be at least 1".into());
        }
        Ok(())
    }

    fn world(&self, n: usize) -> BoxSet {
        self.world_box.clone().unwrap_or_else(|| BoxSet::world(n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub bx: BoxSet,
    pub mode: usize,
    /// Absolute start time.
    pub t: f64,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeSegment {
    pub t0: f64,
    pub t1: f64,
    #[serde(flatten)]
    pub enclosure: BoxSet,
    pub mode: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Reachtube {
    #[serde(rename = "Tv")]
    pub tv: f64,
    #[serde(rename = "Ts")]
    pub ts: f64,
    pub segments: Vec<TubeSegment>,
}

impl Reachtube {
    /// Segments whose time span contains `t` and whose box contains `x`.
    pub fn covers(&self, t: f64, x: &DVector<f64>, tol: f64) -> bool {
        self.segments
            .iter()
            .any(|s| s.t0 - 1e-12 <= t && t <= s.t1 + 1e-12 && s.enclosure.contains(x, tol))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictKind {
    RobustSafe,
    MaxPart,
    Infeasible,
}

impl VerdictKind {
    pub fn exit_code(self) -> i32 {
        match self {
            VerdictKind::RobustSafe => 0,
            VerdictKind::MaxPart => 2,
            VerdictKind::Infeasible => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub detail: String,
    /// Empty unless `kind` is `RobustSafe`.
    pub tube: Reachtube,
    pub partitions_used: usize,
    pub wall_time_s: Option<f64>,
    /// Offending box and its time, for the two failure kinds.
    pub offending: Option<(BoxSet, f64)>,
}

/// On-disk form of a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictJson {
    pub kind: VerdictKind,
    pub detail: String,
    pub partitions_used: usize,
    pub wall_time_s: Option<f64>,
}

impl Verdict {
    pub fn to_json(&self) -> VerdictJson {
        VerdictJson {
            kind: self.kind,
            detail: self.detail.clone(),
            partitions_used: self.partitions_used,
            wall_time_s: self.wall_time_s,
        }
    }
}

/// `δ(t) = base_radius·e^{lambda·t}·bloat_safety + step_error`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscrepancyBound {
    pub lambda: f64,
    pub base_radius: f64,
    pub step_error: f64,
    pub bloat_safety: f64,
}

impl DiscrepancyBound {
    pub fn at(&self, t: f64) -> f64 {
        self.base_radius * (self.lambda * t).exp() * self.bloat_safety + self.step_error
    }

    /// Largest value over `[t0, t1]`.
    pub fn max_over(&self, t0: f64, t1: f64) -> f64 {
        self.at(t0).max(self.at(t1))
    }
}

/// `λ_max((J + Jᵀ)/2)`.
pub fn matrix_measure(j: &DMatrix<f64>) -> f64 {
    let sym = (j + j.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.max()
}

/// Jacobian whose matrix measure governs the distance between trajectories
/// of `mode`. Under ZOH the state is augmented with the held sample.
fn rate_jacobian(ha: &HybridAutomaton, mode: usize, x: &DVector<f64>) -> Result<DMatrix<f64>, EvalError> {
    match ha.hold() {
        HoldMode::StateFeedback => ha.closed_loop_jacobian(mode, x),
        HoldMode::Zoh => {
            let n = ha.state_dim();
            let law = ha.law(mode);
            let u = law.eval(x);
            let (jx, ju) = ha.jacobians(x, &u)?;
            let mut aug = DMatrix::zeros(2 * n, 2 * n);
            aug.view_mut((0, 0), (n, n)).copy_from(&jx);
            aug.view_mut((0, n), (n, n)).copy_from(&(ju * &law.f));
            Ok(aug)
        }
    }
}

/// Sampled `max μ₂(J)` over `coarse` plus a Lipschitz padding for the space
/// between samples.
pub fn rate_over(ha: &HybridAutomaton, mode: usize, coarse: &BoxSet) -> Result<f64, EvalError> {
    let pts = coarse.sample_grid(1);
    let center = coarse.center();
    let jc = rate_jacobian(ha, mode, &center)?;
    let mut mu = matrix_measure(&jc);
    let mut lip: f64 = 0.0;
    for p in &pts {
        let j = rate_jacobian(ha, mode, p)?;
        mu = mu.max(matrix_measure(&j));
        let dist = (p - &center).norm();
        if dist > 0.0 {
            lip = lip.max((j - &jc).norm() / dist);
        }
    }
    if !mu.is_finite() || !lip.is_finite() {
        return Err(EvalError::DomainViolation("non-finite Jacobian".into()));
    }
    Ok(mu + lip * coarse.half_diagonal())
}

/// Center simulation of one cell over a span, with its error estimates.
struct CenterRun {
    /// States at the half-step grid: index `2j` is step `j` of the coarse grid.
    fine: Vec<DVector<f64>>,
    steps: usize,
    h: f64,
    step_error: f64,
    /// Chord-to-arc padding per coarse step.
    bulge: Vec<f64>,
}

fn steps_for(span: f64, ts: f64, spp: usize) -> usize {
    ((spp as f64 * span / ts).ceil() as usize).max(4)
}

fn center_run(ha: &HybridAutomaton, mode: usize, x0: &DVector<f64>, span: f64, steps: usize) -> Result<CenterRun, EvalError> {
    let coarse = ha.flow(mode, x0, span, steps)?;
    let fine = ha.flow(mode, x0, span, 2 * steps)?;
    let scale = fine.iter().map(|x| x.amax()).fold(1.0, f64::max);
    let step_error = (0..=steps)
        .map(|j| (&coarse[j] - &fine[2 * j]).norm())
        .fold(0.0, f64::max)
        + 1e-9 * scale;
    let bend: Vec<f64> = (0..steps)
        .map(|j| (&fine[2 * j] - &fine[2 * j + 1] * 2.0 + &fine[2 * j + 2]).norm())
        .collect();
    let bulge = (0..steps)
        .map(|j| {
            let lo = j.saturating_sub(1);
            let hi = (j + 1).min(steps - 1);
            bend[lo..=hi].iter().copied().fold(0.0, f64::max) / 2.0
        })
        .collect();
    Ok(CenterRun { fine, steps, h: span / steps as f64, step_error, bulge })
}

fn base_radius(ha: &HybridAutomaton, bx: &BoxSet) -> f64 {
    match ha.hold() {
        HoldMode::StateFeedback => bx.half_diagonal(),
        HoldMode::Zoh => bx.half_diagonal() * std::f64::consts::SQRT_2,
    }
}

/// Discrepancy with its rate taken over `coarse` and step error from a
/// halved-step comparison of the simulation from `coarse`'s center.
pub fn discrepancy_bound(
    ha: &HybridAutomaton,
    mode: usize,
    coarse: &BoxSet,
    delta0: f64,
    cfg: &ReachConfig,
) -> Result<DiscrepancyBound, EvalError> {
    let steps = cfg.steps_per_period;
    let run = center_run(ha, mode, &coarse.center(), ha.ts(), steps)?;
    Ok(DiscrepancyBound {
        lambda: rate_over(ha, mode, coarse)?,
        base_radius: delta0,
        step_error: run.step_error,
        bloat_safety: cfg.bloat_safety,
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TubeError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    /// The enclosure grew past the world box.
    #[error("enclosure left the world box")]
    Diverged,
}

/// Reach set of one box over `span` seconds in `mode`, starting at `t_start`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTube {
    pub segments: Vec<TubeSegment>,
    pub end_box: BoxSet,
    pub bound: DiscrepancyBound,
}

pub fn cell_tube(
    ha: &HybridAutomaton,
    mode: usize,
    bx: &BoxSet,
    t_start: f64,
    span: f64,
    cfg: &ReachConfig,
) -> Result<CellTube, TubeError> {
    let world = cfg.world(ha.state_dim());
    let steps = steps_for(span, ha.ts(), cfg.steps_per_period);
    let run = center_run(ha, mode, &bx.center(), span, steps)?;
    let delta0 = base_radius(ha, bx);
    let max_bulge = run.bulge.iter().copied().fold(0.0, f64::max);
    let hull = run
        .fine
        .iter()
        .skip(1)
        .fold(BoxSet::point(&run.fine[0]), |b, x| b.hull_point(x));

    // rate over an enclosure built with the rate itself, iterated until the
    // enclosure no longer grows
    let coarse_for = |lambda: f64| {
        let r = delta0 * cfg.bloat_safety * (lambda.max(0.0) * span).exp() + run.step_error + max_bulge;
        hull.inflate(r)
    };
    let mut lambda = rate_over(ha, mode, &bx.inflate(run.step_error))?;
    for _ in 0..8 {
        let coarse = coarse_for(lambda);
        if !world.contains_box(&coarse, 0.0) {
            return Err(TubeError::Diverged);
        }
        let next = rate_over(ha, mode, &coarse)?;
        if next <= lambda {
            break;
        }
        lambda = next;
    }
    let bound = DiscrepancyBound {
        lambda,
        base_radius: delta0,
        step_error: run.step_error,
        bloat_safety: cfg.bloat_safety,
    };

    let mut segments = Vec::with_capacity(run.steps);
    for j in 0..run.steps {
        let (a, b) = (j as f64 * run.h, (j + 1) as f64 * run.h);
        let enclosure = BoxSet::point(&run.fine[2 * j])
            .hull_point(&run.fine[2 * j + 1])
            .hull_point(&run.fine[2 * j + 2])
            .inflate(bound.max_over(a, b) + run.bulge[j]);
        segments.push(TubeSegment {
            t0: t_start + a,
            t1: if j + 1 == run.steps { t_start + span } else { t_start + b },
            enclosure,
            mode,
        });
    }
    let end_box = BoxSet::point(&run.fine[2 * run.steps]).inflate(bound.at(span));
    Ok(CellTube { segments, end_box, bound })
}

/// True iff no segment meets any unsafe set. Touching counts as meeting.
pub fn check_safety(segments: &[TubeSegment], unsafe_sets: &[Polyhedron]) -> bool {
    segments
        .iter()
        .all(|s| unsafe_sets.iter().all(|u| !u.intersects_box(&s.enclosure)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PostOutcome {
    Safe {
        segments: Vec<TubeSegment>,
        end_boxes: Vec<BoxSet>,
        partitions: usize,
    },
    MaxPartExceeded {
        detail: String,
        bx: BoxSet,
        partitions: usize,
    },
}

/// One period from `cell`, bisecting whenever the tube meets an unsafe set or
/// leaves the world box. At most `budget` bisections.
pub fn compute_post(
    ha: &HybridAutomaton,
    cell: &Cell,
    span: f64,
    unsafe_sets: &[Polyhedron],
    cfg: &ReachConfig,
    budget: usize,
) -> PostOutcome {
    let world = cfg.world(ha.state_dim());
    let mut stack = vec![cell.bx.clone()];
    let mut used = 0;
    let mut segments = Vec::new();
    let mut end_boxes = Vec::new();
    while let Some(bx) = stack.pop() {
        let tube = match cell_tube(ha, cell.mode, &bx, cell.t, span, cfg) {
            Ok(t) => Some(t),
            Err(TubeError::Diverged) => None,
            Err(TubeError::Eval(e)) => {
                return PostOutcome::MaxPartExceeded {
                    detail: format!("evaluation failed in mode {} at t = {}: {e}", cell.mode, cell.t),
                    bx,
                    partitions: used,
                }
            }
        };
        let (escaped, hit) = match &tube {
            None => (true, None),
            Some(tube) => (
                tube.segments.iter().any(|s| !world.contains_box(&s.enclosure, 0.0)),
                tube.segments.iter().find_map(|s| {
                    unsafe_sets
                        .iter()
                        .position(|u| u.intersects_box(&s.enclosure))
                        .map(|i| (i, s.t0))
                }),
            ),
        };
        if let (Some(tube), false, None) = (tube, escaped, hit) {
            segments.extend(tube.segments);
            end_boxes.push(tube.end_box);
            continue;
        }
        used += 1;
        if used > budget {
            let detail = match hit {
                Some((i, t)) => format!(
                    "tube of mode {} meets unsafe set {i} at t = {t} and the partition budget is spent",
                    cell.mode
                ),
                None => format!(
                    "tube of mode {} leaves the world box after t = {} and the partition budget is spent",
                    cell.mode, cell.t
                ),
            };
            return PostOutcome::MaxPartExceeded { detail, bx, partitions: used };
        }
        let (left, right) = bx.bisect(bx.widest_dim());
        stack.push(right);
        stack.push(left);
    }
    PostOutcome::Safe { segments, end_boxes, partitions: used }
}

fn grid_points(bx: &BoxSet, cfg: &ReachConfig) -> Vec<DVector<f64>> {
    bx.sample_grid(cfg.leak_grid)
}

/// Splits `end_box` among the regions it meets. `Err` carries a grid point of
/// `end_box` that lies in no region.
pub fn successor_cells(
    end_box: &BoxSet,
    sol: &ExplicitSolution,
    t: f64,
    depth: usize,
    cfg: &ReachConfig,
) -> Result<Vec<Cell>, DVector<f64>> {
    if let Some(p) = grid_points(end_box, cfg).into_iter().find(|p| sol.locate(p).is_none()) {
        return Err(p);
    }
    let mut cells = Vec::new();
    for i in 0..sol.k() {
        if !sol.region_box(i).intersects(end_box) {
            continue;
        }
        let region = &sol.region(i).region;
        if !region.intersects_box(end_box) {
            continue;
        }
        let clipped = region
            .intersect_raw(&Polyhedron::from_box(end_box))
            .and_then(|p| p.bounding_box_within(end_box));
        let bx = match clipped {
            Ok(b) => b,
            // degenerate contact: keep the whole box for this mode
            Err(_) => end_box.clone(),
        };
        cells.push(Cell { bx, mode: i, t, depth });
    }
    Ok(cells)
}

/// Splits `theta` into boxes each inside one region; boxes that straddle
/// facets at the depth limit are split among regions like a period end.
pub fn partition_initial(theta: &BoxSet, sol: &ExplicitSolution, cfg: &ReachConfig) -> Result<Vec<Cell>, DVector<f64>> {
    let mut cells = Vec::new();
    let mut stack = vec![(theta.clone(), 0usize)];
    while let Some((bx, depth)) = stack.pop() {
        if let Some(p) = grid_points(&bx, cfg).into_iter().find(|p| sol.locate(p).is_none()) {
            return Err(p);
        }
        if let Some(i) = (0..sol.k()).find(|&i| sol.region(i).region.contains_box(&bx, cfg.containment_tol)) {
            cells.push(Cell { bx, mode: i, t: 0.0, depth });
            continue;
        }
        if depth >= cfg.max_split_depth {
            cells.extend(successor_cells(&bx, sol, 0.0, depth, cfg)?);
            continue;
        }
        let (left, right) = bx.bisect(bx.widest_dim());
        stack.push((right, depth + 1));
        stack.push((left, depth + 1));
    }
    Ok(cells)
}

fn fmt_box(b: &BoxSet) -> String {
    format!(
        "[{:?}, {:?}]",
        b.lo().iter().collect::<Vec<_>>(),
        b.hi().iter().collect::<Vec<_>>()
    )
}

fn failure(kind: VerdictKind, detail: String, bx: BoxSet, t: f64, partitions: usize, tv: f64, ts: f64) -> Verdict {
    Verdict {
        kind,
        detail,
        tube: Reachtube { tv, ts, segments: Vec::new() },
        partitions_used: partitions,
        wall_time_s: None,
        offending: Some((bx, t)),
    }
}

/// Bounded safety over `[0, tv]` from every state in `theta`.
pub fn compute_reach(
    ha: &HybridAutomaton,
    theta: &BoxSet,
    tv: f64,
    unsafe_sets: &[Polyhedron],
    cfg: &ReachConfig,
) -> Verdict {
    let started = Instant::now();
    let mut verdict = match cfg.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| reach_inner(ha, theta, tv, unsafe_sets, cfg)),
            Err(_) => reach_inner(ha, theta, tv, unsafe_sets, cfg),
        },
        None => reach_inner(ha, theta, tv, unsafe_sets, cfg),
    };
    if !cfg.deterministic {
        verdict.wall_time_s = Some(started.elapsed().as_secs_f64());
    }
    verdict
}

fn reach_inner(ha: &HybridAutomaton, theta: &BoxSet, tv: f64, unsafe_sets: &[Polyhedron], cfg: &ReachConfig) -> Verdict {
    let ts = ha.ts();
    let sol = ha.solution();
    let mut cells = match partition_initial(theta, sol, cfg) {
        Ok(c) => c,
        Err(p) => {
            return failure(
                VerdictKind::Infeasible,
                format!("initial state {:?} lies outside every region of the control law", p.as_slice()),
                theta.clone(),
                0.0,
                0,
                tv,
                ts,
            )
        }
    };
    let mut used = 0usize;
    let mut segments = Vec::new();
    let mut period = 0usize;
    loop {
        let t = period as f64 * ts;
        if t >= tv - 1e-12 {
            break;
        }
        let span = ts.min(tv - t);
        let last = t + span >= tv - 1e-12;
        let budget = cfg.max_partitions - used;
        let outcomes: Vec<PostOutcome> = cells
            .par_iter()
            .map(|c| compute_post(ha, c, span, unsafe_sets, cfg, budget))
            .collect();
        let mut ends: Vec<(BoxSet, usize)> = Vec::new();
        for (cell, out) in cells.iter().zip(outcomes) {
            match out {
                PostOutcome::Safe { segments: segs, end_boxes, partitions } => {
                    used += partitions;
                    if used > cfg.max_partitions {
                        return failure(
                            VerdictKind::MaxPart,
                            format!("partition budget of {} spent during period starting at t = {t}", cfg.max_partitions),
                            cell.bx.clone(),
                            t,
                            used,
                            tv,
                            ts,
                        );
                    }
                    segments.extend(segs);
                    ends.extend(end_boxes.into_iter().map(|b| (b, cell.depth)));
                }
                PostOutcome::MaxPartExceeded { detail, bx, partitions } => {
                    return failure(VerdictKind::MaxPart, detail, bx, t, used + partitions, tv, ts);
                }
            }
        }
        if last {
            break;
        }
        let t_next = (period + 1) as f64 * ts;
        let mut merged: BTreeMap<usize, (BoxSet, usize)> = BTreeMap::new();
        for (end, depth) in &ends {
            match successor_cells(end, sol, t_next, *depth, cfg) {
                Ok(next) => {
                    for c in next {
                        merged
                            .entry(c.mode)
                            .and_modify(|(b, d)| {
                                *b = b.hull(&c.bx);
                                *d = (*d).max(c.depth);
                            })
                            .or_insert((c.bx, c.depth));
                    }
                }
                Err(p) => {
                    return failure(
                        VerdictKind::Infeasible,
                        format!(
                            "reachable set {} at t = {t_next} leaves the feasible region of the control law near {:?}",
                            fmt_box(end),
                            p.as_slice()
                        ),
                        end.clone(),
                        t_next,
                        used,
                        tv,
                        ts,
                    );
                }
            }
        }
        cells = merged
            .into_iter()
            .map(|(mode, (bx, depth))| Cell { bx, mode, t: t_next, depth })
            .collect();
        period += 1;
    }
    segments.sort_by(|a, b| a.t0.total_cmp(&b.t0));
    let count = segments.len();
    Verdict {
        kind: VerdictKind::RobustSafe,
        detail: format!("all reachable states avoid the unsafe sets up to Tv = {tv} ({count} segments)"),
        tube: Reachtube { tv, ts, segments },
        partitions_used: used,
        wall_time_s: None,
        offending: None,
    }
}
