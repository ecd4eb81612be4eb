//! Small dense linear-algebra helpers shared by the estimators.
//!
//! The central piece is [`GramPair`]: a regularized Gram matrix kept together
//! with its inverse under rank-1 updates. The inverse is maintained with the
//! Sherman-Morrison identity and re-derived from scratch by full inversion at
//! a fixed cadence so drift cannot accumulate over long streams.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition-number ceiling past which updates are refused.
pub const COND_LIMIT: f64 = 1e12;

/// Full re-inversion cadence (number of rank-1 updates between refreshes).
pub const REFRESH_EVERY: usize = 256;

/// Max-norm tolerance for `Lambda * Lambda_inv - I` right after a refresh.
pub const REFRESH_IDENTITY_TOL: f64 = 1e-8;

/// x^T M x without allocating.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let d = x.len();
    debug_assert_eq!(m.nrows(), d);
    debug_assert_eq!(m.ncols(), d);
    let mut acc = 0.0;
    for j in 0..d {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        let col = m.column(j);
        let mut dot = 0.0;
        for i in 0..d {
            dot += col[i] * x[i];
        }
        acc += xj * dot;
    }
    acc
}

/// A regularized Gram matrix `Lambda = lambda0 * I + sum_i w_i phi_i phi_i^T`
/// paired with its inverse.
#[derive(Clone, Debug)]
pub struct GramPair {
    lambda: DMatrix<f64>,
    lambda_inv: DMatrix<f64>,
    updates: usize,
    refreshes: usize,
    refresh_every: usize,
}

impl GramPair {
    pub fn new(dim: usize, lambda0: f64) -> Result<Self> {
        if !(lambda0.is_finite() && lambda0 > 0.0) {
            return Err(Error::NonFinite(format!(
                "ridge parameter must be positive and finite, got {lambda0}"
            )));
        }
        Ok(Self {
            lambda: DMatrix::identity(dim, dim) * lambda0,
            lambda_inv: DMatrix::identity(dim, dim) / lambda0,
            updates: 0,
            refreshes: 0,
            refresh_every: REFRESH_EVERY,
        })
    }

    pub fn dim(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn lambda_inv(&self) -> &DMatrix<f64> {
        &self.lambda_inv
    }

    /// Number of rank-1 updates applied so far.
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Number of full re-inversions performed so far.
    pub fn refreshes(&self) -> usize {
        self.refreshes
    }

    /// phi^T Lambda^{-1} phi, clamped at zero against rounding.
    pub fn inv_quad(&self, phi: &DVector<f64>) -> f64 {
        quad_form(&self.lambda_inv, phi).max(0.0)
    }

    /// Applies `Lambda += weight * phi phi^T` and patches the inverse with the
    /// Sherman-Morrison identity. A zero feature vector leaves both matrices
    /// untouched but still counts toward the update cadence.
    pub fn rank1_update(&mut self, phi: &DVector<f64>, weight: f64) -> Result<()> {
        if phi.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "feature has length {}, Gram matrix is {}x{}",
                phi.len(),
                self.dim(),
                self.dim()
            )));
        }
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::NonFinite(format!("update weight {weight}")));
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature vector in rank-1 update".into()));
        }
        self.updates += 1;
        let zero = phi.iter().all(|&x| x == 0.0);
        if !zero && weight > 0.0 {
            let u = &self.lambda_inv * phi;
            let denom = 1.0 + weight * u.dot(phi);
            if !(denom.is_finite() && denom > 0.0) {
                return Err(Error::IllConditioned(format!(
                    "Sherman-Morrison denominator {denom} after {} updates",
                    self.updates
                )));
            }
            self.lambda.ger(weight, phi, phi, 1.0);
            self.lambda_inv.ger(-weight / denom, &u, &u, 1.0);
        }
        if self.updates % self.refresh_every == 0 {
            self.refresh()?;
        }
        Ok(())
    }

    /// Recomputes the inverse by full inversion and verifies it.
    pub fn refresh(&mut self) -> Result<()> {
        let cond = self.condition_estimate();
        if !cond.is_finite() || cond > COND_LIMIT {
            return Err(Error::IllConditioned(format!(
                "condition estimate {cond:.3e} exceeds {COND_LIMIT:.0e} after {} updates",
                self.updates
            )));
        }
        let inv = self
            .lambda
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::IllConditioned("Gram matrix not invertible".into()))?;
        self.lambda_inv = inv;
        self.refreshes += 1;
        let residual = identity_residual(&self.lambda, &self.lambda_inv);
        if residual > REFRESH_IDENTITY_TOL {
            return Err(Error::IllConditioned(format!(
                "post-refresh identity residual {residual:.3e} exceeds {REFRESH_IDENTITY_TOL:.0e}"
            )));
        }
        Ok(())
    }

    /// Ratio of extreme eigenvalues of the (symmetric) Gram matrix.
    pub fn condition_estimate(&self) -> f64 {
        let eig = self.lambda.symmetric_eigenvalues();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for &e in eig.iter() {
            lo = lo.min(e);
            hi = hi.max(e);
        }
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }
}

/// max-norm of `a * b - I`.
pub fn identity_residual(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let prod = a * b;
    let d = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((prod[(i, j)] - target).abs());
        }
    }
    worst
}

/// Ordinary least squares of y on x. Returns (slope, intercept, r_squared).
pub fn ols(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Dimension(format!(
            "ols needs two matched samples at minimum, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    if sxx <= 0.0 {
        return Err(Error::Dimension("ols abscissae are all identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy <= 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok((slope, intercept, r2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_phi(rng: &mut ChaCha12Rng, d: usize) -> DVector<f64> {
        let v = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1.0 {
            v / n
        } else {
            v
        }
    }

    #[test]
    fn single_update_matches_closed_form() {
        // (lambda I + w phi phi^T)^{-1} = (1/lambda)(I - w phi phi^T / (lambda + w |phi|^2))
        let lambda0 = 0.25;
        let phi = DVector::from_vec(vec![0.6, -0.3, 0.1]);
        let w = 2.0;
        let mut g = GramPair::new(3, lambda0).unwrap();
        g.rank1_update(&phi, w).unwrap();
        let denom = lambda0 + w * phi.norm_squared();
        for i in 0..3 {
            for j in 0..3 {
                let expect = (if i == j { 1.0 } else { 0.0 } - w * phi[i] * phi[j] / denom) / lambda0;
                assert!((g.lambda_inv()[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn incremental_inverse_tracks_direct_inversion() {
        // Oracle: full nalgebra inversion of the accumulated Gram matrix.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let d = 5;
        let mut g = GramPair::new(d, 0.01).unwrap();
        let mut direct = DMatrix::<f64>::identity(d, d) * 0.01;
        // 600 updates crosses two refresh boundaries (256, 512).
        for _ in 0..600 {
            let phi = random_phi(&mut rng, d);
            let w = rng.random_range(0.05..40.0);
            direct.ger(w, &phi, &phi, 1.0);
            g.rank1_update(&phi, w).unwrap();
        }
        assert_eq!(g.refreshes(), 2);
        let oracle = direct.clone().try_inverse().unwrap();
        let worst = (g.lambda_inv() - &oracle).abs().max();
        assert!(worst < 1e-7, "inverse drift {worst}");
        assert!(identity_residual(g.lambda(), g.lambda_inv()) < 1e-7);
    }

    #[test]
    fn zero_feature_leaves_matrices_unchanged() {
        let mut g = GramPair::new(2, 1.0).unwrap();
        let before = g.lambda().clone();
        g.rank1_update(&DVector::zeros(2), 3.0).unwrap();
        assert_eq!(g.updates(), 1);
        assert_eq!(g.lambda(), &before);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut g = GramPair::new(2, 1.0).unwrap();
        assert!(matches!(
            g.rank1_update(&DVector::from_vec(vec![f64::NAN, 0.0]), 1.0),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            g.rank1_update(&DVector::from_vec(vec![1.0, 0.0]), -1.0),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            g.rank1_update(&DVector::from_vec(vec![1.0, 0.0, 0.0]), 1.0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(GramPair::new(2, 0.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn condition_limit_trips() {
        let mut g = GramPair::new(2, 1e-13).unwrap();
        let phi = DVector::from_vec(vec![1.0, 0.0]);
        // One enormous update along a single axis leaves the other axis at
        // the tiny ridge value, so the eigenvalue ratio blows past the limit.
        g.rank1_update(&phi, 1e6).unwrap();
        assert!(matches!(g.refresh(), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn quad_form_matches_naive() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x = DVector::from_vec(vec![3.0, -1.0]);
        let naive = (&m * &x).dot(&x);
        assert!((quad_form(&m, &x) - naive).abs() < 1e-12);
    }

    #[test]
    fn ols_recovers_exact_line() {
        let x: Vec<f64> = (1..=9).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v + 2.0).collect();
        let (slope, intercept, r2) = ols(&x, &y).unwrap();
        assert!((slope - 0.5).abs() < 1e-12);
        assert!((intercept - 2.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }
}
