//! Variance-weighted ridge regression for one-step value expectations.
//!
//! For a fixed candidate value function v, each transition (phi_i, s'_i)
//! yields a sample of E[v(s')|phi] = phi^T (mu^T v). The estimator regresses
//! both v(s') and v(s')^2 on phi with per-sample weights 1/sigma_i^2, where
//! sigma_i^2 is itself an optimistic upper bound on the conditional variance
//! computed from the state of the estimator before sample i arrived:
//!
//!   sigma_1^2 = 4,
//!   sigma_i^2 = phi^T theta_tilde - (phi^T theta_hat)^2
//!               + 16 alpha sqrt(phi^T Lambda^{-1} phi) + 4 eps   (i >= 2),
//!
//! floored at 4 eps so weights stay finite. The first two terms are the
//! plug-in variance E[v^2] - (E v)^2; the remaining terms absorb estimation
//! error so the bound dominates the true variance with high probability.
//!
//! Everything is incremental: the Gram pair absorbs rank-1 updates and the
//! regression vectors are refreshed in O(d^2) per sample, which tests pin
//! against a from-scratch batch solve of the same weighted problem.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::GramPair;

/// Scale constants for the estimator and its confidence radius.
#[derive(Clone, Debug)]
pub struct WlsParams {
    /// Ridge coefficient lambda.
    pub lambda: f64,
    /// Bonus multiplier alpha; also appears inside the variance bound.
    pub alpha: f64,
    /// Additive slack eps accounting for the finite net resolution.
    pub eps_bonus: f64,
    /// Confidence radius: containment asserts ||theta_hat - mu^T v||_Lambda
    /// <= kappa.
    pub kappa: f64,
    /// Cadence for re-inverting the Gram matrix from scratch.
    pub refresh_every: usize,
    /// Keep the per-sample weight history (memory-heavy on long runs).
    pub record_weights: bool,
}

impl WlsParams {
    /// Default constants for a run of `episodes` episodes of length
    /// `horizon` at confidence delta. The bonus and radius grow with
    /// d log(KH/delta); the ridge shrinks with the horizon; the net slack
    /// shrinks polynomially in KH so it never dominates.
    pub fn from_scale(dim: usize, episodes: usize, horizon: usize, delta: f64) -> Self {
        let kh = (episodes as f64) * (horizon as f64);
        Self {
            lambda: 1.0 / (horizon as f64).powi(2),
            alpha: alpha_default(dim, kh, delta),
            eps_bonus: kh.powi(-4),
            kappa: kappa_default(dim, kh, delta),
            refresh_every: crate::linalg::REFRESH_EVERY,
            record_weights: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("eps_bonus", self.eps_bonus),
            ("kappa", self.kappa),
        ] {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::Validation(format!("{name} must be finite and nonnegative, got {x}")));
            }
        }
        if self.lambda == 0.0 {
            return Err(Error::Validation("lambda must be positive".into()));
        }
        Ok(())
    }
}

fn log_scale(kh: f64, delta: f64) -> f64 {
    (kh / delta).ln().max(1.0)
}

/// 150 d log(KH/delta).
pub fn alpha_default(dim: usize, kh: f64, delta: f64) -> f64 {
    150.0 * dim as f64 * log_scale(kh, delta)
}

/// 13 sqrt(6) d log(KH/delta) + 72 log(KH/delta). Dominated by alpha for
/// every d >= 1, which the bonus relies on.
pub fn kappa_default(dim: usize, kh: f64, delta: f64) -> f64 {
    let l = log_scale(kh, delta);
    13.0 * 6.0f64.sqrt() * dim as f64 * l + 72.0 * l
}

/// Incremental weighted regression state for one candidate value function.
#[derive(Clone, Debug)]
pub struct WlsState {
    params: WlsParams,
    gram: GramPair,
    /// Sum of w_i v(s'_i) phi_i.
    b: DVector<f64>,
    /// Sum of w_i v(s'_i)^2 phi_i.
    b_tilde: DVector<f64>,
    theta_hat: DVector<f64>,
    theta_tilde: DVector<f64>,
    n: usize,
    floor_hits: usize,
    sigma_sq: Vec<f64>,
}

impl WlsState {
    pub fn new(dim: usize, params: WlsParams) -> Result<Self> {
        params.validate()?;
        let gram = GramPair::new(dim, params.lambda)?;
        Ok(Self {
            params,
            gram,
            b: DVector::zeros(dim),
            b_tilde: DVector::zeros(dim),
            theta_hat: DVector::zeros(dim),
            theta_tilde: DVector::zeros(dim),
            n: 0,
            floor_hits: 0,
            sigma_sq: Vec::new(),
        })
    }

    /// State whose regression vectors are fixed externally instead of fitted
    /// from data. The Gram matrix stays at the ridge lambda I, so with
    /// alpha = 0 the bonus collapses to 4 eps and `mean_estimate` returns
    /// phi^T theta_hat verbatim. Tests use this to feed planners exact
    /// model quantities and isolate planning from estimation error.
    pub fn plug_in(
        dim: usize,
        params: WlsParams,
        theta_hat: DVector<f64>,
        theta_tilde: DVector<f64>,
    ) -> Result<Self> {
        params.validate()?;
        if theta_hat.len() != dim || theta_tilde.len() != dim {
            return Err(Error::Validation(format!(
                "plug-in vectors must have length {dim}, got {} and {}",
                theta_hat.len(),
                theta_tilde.len()
            )));
        }
        let gram = GramPair::new(dim, params.lambda)?;
        Ok(Self {
            params,
            gram,
            b: DVector::zeros(dim),
            b_tilde: DVector::zeros(dim),
            theta_hat,
            theta_tilde,
            n: 0,
            floor_hits: 0,
            sigma_sq: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.gram.dim()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> &WlsParams {
        &self.params
    }

    pub fn gram(&self) -> &GramPair {
        &self.gram
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn theta_tilde(&self) -> &DVector<f64> {
        &self.theta_tilde
    }

    /// Number of pushes whose weight came from the 4 eps floor rather than
    /// the variance formula.
    pub fn floor_hits(&self) -> usize {
        self.floor_hits
    }

    /// Per-sample weights sigma_i^2, recorded only when the params ask.
    pub fn sigma_sq_history(&self) -> &[f64] {
        &self.sigma_sq
    }

    /// phi^T theta_hat: estimated E[v(s') | phi].
    pub fn mean_estimate(&self, phi: &DVector<f64>) -> f64 {
        self.theta_hat.dot(phi)
    }

    /// phi^T theta_tilde: estimated E[v(s')^2 | phi].
    pub fn second_moment_estimate(&self, phi: &DVector<f64>) -> f64 {
        self.theta_tilde.dot(phi)
    }

    /// The optimistic variance bound from the current regression state, with
    /// the 4 eps floor applied. The first sample's weight does not come from
    /// this bound (it is a flat 4, handled in `push_sample`).
    pub fn variance_upper(&self, phi: &DVector<f64>) -> f64 {
        self.variance_upper_raw(phi).0
    }

    fn variance_upper_raw(&self, phi: &DVector<f64>) -> (f64, bool) {
        let mean = self.mean_estimate(phi);
        let second = self.second_moment_estimate(phi);
        let excursion = 16.0 * self.params.alpha * self.gram.inv_quad(phi).sqrt();
        let raw = second - mean * mean + excursion + 4.0 * self.params.eps_bonus;
        let floor = 4.0 * self.params.eps_bonus;
        if raw < floor {
            (floor, true)
        } else {
            (raw, false)
        }
    }

    /// Exploration bonus alpha sqrt(phi^T Lambda^{-1} phi) + 4 eps.
    pub fn bonus(&self, phi: &DVector<f64>) -> f64 {
        self.params.alpha * self.gram.inv_quad(phi).sqrt() + 4.0 * self.params.eps_bonus
    }

    /// Lambda-weighted norm sqrt(x^T Lambda x), the metric in which the
    /// confidence radius kappa is stated.
    pub fn lambda_norm(&self, x: &DVector<f64>) -> f64 {
        crate::linalg::quad_form(self.gram.lambda(), x).max(0.0).sqrt()
    }

    /// Absorbs one transition sample: the feature of the visited pair, the
    /// candidate value at the realized next state, and its square. The
    /// square is caller-supplied because net rows precompute it; the pair is
    /// validated for consistency.
    pub fn push_sample(&mut self, phi: &DVector<f64>, v_next: f64, v_next_sq: f64) -> Result<()> {
        if phi.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "feature of length {} pushed into estimator of dim {}",
                phi.len(),
                self.dim()
            )));
        }
        if !v_next.is_finite() || !v_next_sq.is_finite() || !phi.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("non-finite sample pushed".into()));
        }
        if (v_next_sq - v_next * v_next).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "supplied square {v_next_sq} does not match value {v_next}"
            )));
        }
        let sigma_sq = if self.n == 0 {
            4.0
        } else {
            let (value, floored) = self.variance_upper_raw(phi);
            if floored {
                self.floor_hits += 1;
            }
            value
        };
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(Error::NonFinite(format!("sample weight collapsed: sigma^2 = {sigma_sq}")));
        }
        let w = 1.0 / sigma_sq;
        self.gram.rank1_update(phi, w)?;
        self.b.axpy(w * v_next, phi, 1.0);
        self.b_tilde.axpy(w * v_next_sq, phi, 1.0);
        self.theta_hat = self.gram.lambda_inv() * &self.b;
        self.theta_tilde = self.gram.lambda_inv() * &self.b_tilde;
        self.n += 1;
        if self.params.record_weights {
            self.sigma_sq.push(sigma_sq);
        }
        Ok(())
    }
}

/// Runs the full recursion over an ordered sample batch (feature, value at
/// next state, squared value) and returns the final state.
pub fn wls_estimate(
    dim: usize,
    params: WlsParams,
    samples: &[(DVector<f64>, f64, f64)],
) -> Result<WlsState> {
    let mut state = WlsState::new(dim, params)?;
    for (phi, v, v_sq) in samples {
        state.push_sample(phi, *v, *v_sq)?;
    }
    Ok(state)
}
