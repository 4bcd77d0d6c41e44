use nalgebra::DMatrix;

use super::MpcError;

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm1 = (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    // scale to 1-norm ≤ 1/2, where 20 terms leave a residual below 1e-24
    let squarings = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings);
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if term.amax() <= 1e-18 * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Exact zero-order-hold discretization of `ẋ = A_c x + B_c u`:
/// `A_d = e^{A_c Ts}`, `B_d = ∫₀^Ts e^{A_c s} ds · B_c`, both read off the
/// exponential of the augmented matrix `[[A_c, B_c], [0, 0]]·Ts`.
pub fn discretize(
    a_c: &DMatrix<f64>,
    b_c: &DMatrix<f64>,
    ts: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), MpcError> {
    let n = a_c.nrows();
    let m = b_c.ncols();
    if a_c.ncols() != n || b_c.nrows() != n {
        return Err(MpcError::DimensionMismatch(format!(
            "A_c is {}x{}, B_c is {}x{}",
            n,
            a_c.ncols(),
            b_c.nrows(),
            m
        )));
    }
    if !(ts.is_finite() && ts > 0.0) {
        return Err(MpcError::Validation(format!("sampling period must be positive, got {ts}")));
    }
    if a_c.iter().chain(b_c.iter()).any(|v| !v.is_finite()) {
        return Err(MpcError::NonFiniteInput("continuous-time model".into()));
    }
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a_c * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(b_c * ts));
    let e = expm(&aug);
    let a_d = e.view((0, 0), (n, n)).into_owned();
    let b_d = e.view((0, n), (n, m)).into_owned();
    if a_d.iter().chain(b_d.iter()).any(|v| !v.is_finite()) {
        return Err(MpcError::NonFiniteInput("matrix exponential overflowed".into()));
    }
    Ok((a_d, b_d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn double_integrator_closed_form() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let (ad, bd) = discretize(&a, &b, 1.0).unwrap();
        assert!((ad - DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])).amax() < 1e-14);
        assert!((bd - DMatrix::from_row_slice(2, 1, &[0.5, 1.0])).amax() < 1e-14);
    }

    #[test]
    fn zero_dynamics() {
        let b = DMatrix::from_row_slice(2, 1, &[2.0, -1.0]);
        let (ad, bd) = discretize(&DMatrix::zeros(2, 2), &b, 0.3).unwrap();
        assert_eq!(ad, DMatrix::identity(2, 2));
        assert!((bd - &b * 0.3).amax() < 1e-15);
    }

    #[test]
    fn rejects_bad_period() {
        let a = DMatrix::zeros(1, 1);
        assert!(discretize(&a, &a, 0.0).is_err());
        assert!(discretize(&a, &a, f64::NAN).is_err());
    }

    /// RK4 on the augmented system `ẋ = A x + B u`, `u̇ = 0` with tiny steps.
    fn rk4_flow(a: &DMatrix<f64>, b: &DMatrix<f64>, ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = a.nrows();
        let m = b.ncols();
        let mut aug = DMatrix::zeros(n + m, n + m);
        aug.view_mut((0, 0), (n, n)).copy_from(a);
        aug.view_mut((0, n), (n, m)).copy_from(b);
        let steps = 4000;
        let h = ts / steps as f64;
        let mut phi = DMatrix::<f64>::identity(n + m, n + m);
        for _ in 0..steps {
            let k1 = &aug * &phi;
            let k2 = &aug * (&phi + &k1 * (h / 2.0));
            let k3 = &aug * (&phi + &k2 * (h / 2.0));
            let k4 = &aug * (&phi + &k3 * h);
            phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        (
            phi.view((0, 0), (n, n)).into_owned(),
            phi.view((0, n), (n, m)).into_owned(),
        )
    }

    #[test]
    fn random_stable_systems_match_ode_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let n = rng.gen_range(1..=4);
            let mut a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            // shift the spectrum left
            for i in 0..n {
                a[(i, i)] -= 2.0;
            }
            let b = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
            let ts = rng.gen_range(0.1..2.0);
            let (ad, bd) = discretize(&a, &b, ts).unwrap();
            let (ao, bo) = rk4_flow(&a, &b, ts);
            assert!((ad - ao).amax() < 1e-11);
            assert!((bd - bo).amax() < 1e-11);
        }
    }
}
