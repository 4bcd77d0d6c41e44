//! Independent reference computations for the integration and acceptance
//! tests. Nothing here calls into the solver or polyhedron code under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every `k`-subset of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Vertices of `{x : a x ≤ b}` by solving every square subsystem and keeping
/// feasible solutions, deduplicated.
pub fn brute_vertices(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Vec<DVector<f64>> {
    let (m, n) = a.shape();
    let mut out: Vec<DVector<f64>> = Vec::new();
    if m < n {
        return out;
    }
    for rows in subsets(m, n) {
        let sub = DMatrix::from_fn(n, n, |r, c| a[(rows[r], c)]);
        let rhs = DVector::from_fn(n, |r, _| b[rows[r]]);
        let Some(x) = sub.lu().solve(&rhs) else { continue };
        if !x.iter().all(|v| v.is_finite()) {
            continue;
        }
        let feasible = (0..m).all(|i| a.row(i).transpose().dot(&x) <= b[i] + tol);
        if feasible && !out.iter().any(|v| (v - &x).amax() < 1e-9) {
            out.push(x);
        }
    }
    out
}

/// Minimum of `c·x` over `{a x ≤ b}` (assumed bounded) by vertex enumeration;
/// `None` when infeasible.
pub fn brute_lp(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Option<f64> {
    brute_vertices(a, b, 1e-9)
        .iter()
        .map(|v| c.dot(v))
        .min_by(|x, y| x.total_cmp(y))
}

/// Random bounded LP data: `m` random rows plus the box `[-3, 3]ⁿ`.
pub fn random_bounded(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::from_fn(m + 2 * n, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut b = DVector::from_fn(m + 2 * n, |_, _| rng.gen_range(-0.5..2.0));
    for j in 0..n {
        for (k, s) in [1.0, -1.0].into_iter().enumerate() {
            let r = m + 2 * j + k;
            a.row_mut(r).fill(0.0);
            a[(r, j)] = s;
            b[r] = 3.0;
        }
    }
    let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    (c, a, b)
}

/// Is `x` in the convex hull of `pts`? Checked in 1-D or 2-D only.
pub fn in_hull_low_dim(pts: &[DVector<f64>], x: &DVector<f64>, tol: f64) -> bool {
    match x.len() {
        1 => {
            let lo = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            lo - tol <= x[0] && x[0] <= hi + tol
        }
        2 => {
            // x in hull iff x is in some triangle (or segment) of the points
            let k = pts.len();
            let on_segment = |p: &DVector<f64>, q: &DVector<f64>| {
                let d = q - p;
                let len2 = d.norm_squared();
                if len2 < 1e-24 {
                    return (x - p).norm() <= tol;
                }
                let s = ((x - p).dot(&d) / len2).clamp(0.0, 1.0);
                (p + d * s - x).norm() <= tol
            };
            if pts.iter().any(|p| (p - x).norm() <= tol) {
                return true;
            }
            for i in 0..k {
                for j in i + 1..k {
                    if on_segment(&pts[i], &pts[j]) {
                        return true;
                    }
                    for l in j + 1..k {
                        let (p, q, r) = (&pts[i], &pts[j], &pts[l]);
                        let m = DMatrix::from_row_slice(2, 2, &[q[0] - p[0], r[0] - p[0], q[1] - p[1], r[1] - p[1]]);
                        let Some(w) = m.lu().solve(&(x - p)) else { continue };
                        if w[0] >= -1e-9 && w[1] >= -1e-9 && w[0] + w[1] <= 1.0 + 1e-9 {
                            return true;
                        }
                    }
                }
            }
            false
        }
        _ => panic!("hull test only in 1-D or 2-D"),
    }
}

/// Central finite-difference Jacobian of `f` at `x`.
pub fn central_jacobian<F>(f: F, x: &[f64], out_dim: usize, step: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    let n = x.len();
    let mut j = DMatrix::zeros(out_dim, n);
    for c in 0..n {
        let h = step * (1.0 + x[c].abs());
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[c] += h;
        xm[c] -= h;
        let d = (f(&xp) - f(&xm)) / (2.0 * h);
        j.set_column(c, &d);
    }
    j
}

/// Classic RK4 over `[0, t]` with `steps` steps, written out independently
/// of the integrator under test.
pub fn rk4<F>(f: F, x0: &DVector<f64>, t: f64, steps: usize) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let h = t / steps as f64;
    let mut x = x0.clone();
    for _ in 0..steps {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (h / 2.0)));
        let k3 = f(&(&x + &k2 * (h / 2.0)));
        let k4 = f(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

pub fn uniform_in(rng: &mut ChaCha8Rng, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(lo.len(), |i, _| {
        if hi[i] > lo[i] {
            rng.gen_range(lo[i]..hi[i])
        } else {
            lo[i]
        }
    })
}
