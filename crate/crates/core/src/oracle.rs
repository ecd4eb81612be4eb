//! Brute-force oracles used to check analytic claims numerically.
//!
//! Everything here favors transparency over speed: exhaustive enumeration,
//! direct summation, Monte-Carlo with explicit error bands. Test suites and
//! the `verify` CLI subcommand treat these as ground truth against which the
//! optimized implementations are compared.
//!
//! Each inequality gets two entry points: a `check_*` function that evaluates
//! one concrete instance and returns a [`LemmaReport`], and a `run_*` trial
//! loop that aggregates seeded random instances into a single report. Margins
//! are always `rhs - lhs`, so nonnegative means the inequality held, and a
//! violation is only counted below `-VIOLATION_TOL` (or beyond the 3-sigma
//! band for the one Monte-Carlo check).

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::quad_form;
use crate::mdp::{
    generate_spec, optimal_values, policy_value, rollout, GeneratorParams, LinearMdpSpec,
    RewardNoise, TabularPolicy,
};
use crate::rng::{stream_rng, streams};

/// Inequality slack below which a margin counts as a violation.
pub const VIOLATION_TOL: f64 = 1e-9;

/// Outcome of one oracle, either a single instance or an aggregated trial
/// loop. `worst_margin` is the smallest `rhs - lhs` seen; `witness` describes
/// the inputs that produced it.
#[derive(Clone, Debug, Serialize)]
pub struct LemmaReport {
    pub id: String,
    pub trials: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub witness: String,
    pub notes: String,
}

struct TrialOutcome {
    margin: f64,
    violated: bool,
    witness: String,
}

fn reduce_trials(id: &str, outcomes: Vec<TrialOutcome>, notes: String) -> LemmaReport {
    let mut worst = f64::INFINITY;
    let mut witness = String::from("no trials");
    let mut violations = 0;
    for outcome in &outcomes {
        if outcome.violated {
            violations += 1;
        }
        if outcome.margin < worst {
            worst = outcome.margin;
            witness = outcome.witness.clone();
        }
    }
    LemmaReport {
        id: id.to_string(),
        trials: outcomes.len(),
        violations,
        worst_margin: worst,
        witness,
        notes,
    }
}

fn fmt_slice(xs: &[f64]) -> String {
    let mut s = String::from("[");
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{x:.4}");
    }
    s.push(']');
    s
}

/// Exhaustively searches all A^(S*H) deterministic tabular policies and
/// returns the best initial-state value with a witness policy. Exponential
/// by design; callers keep S, A, H tiny.
pub fn best_policy_by_enumeration(spec: &LinearMdpSpec) -> (f64, TabularPolicy) {
    let (s_n, a_n, horizon) = (spec.num_states, spec.num_actions, spec.horizon);
    let cells = s_n * horizon;
    let total = (a_n as u128).pow(cells as u32);
    assert!(total <= 1 << 24, "policy space too large to enumerate: {total}");
    let mut best = f64::NEG_INFINITY;
    let mut best_policy = None;
    let mut actions = vec![0usize; cells];
    for mut code in 0..total {
        for slot in actions.iter_mut() {
            *slot = (code % a_n as u128) as usize;
            code /= a_n as u128;
        }
        let policy = TabularPolicy {
            horizon,
            num_states: s_n,
            actions: actions.clone(),
        };
        let v = policy_value(spec, &policy)[0][spec.initial_state];
        if v > best {
            best = v;
            best_policy = Some(policy);
        }
    }
    (best, best_policy.expect("at least one policy"))
}

/// Variance of v under distribution p, computed in two passes (mean first,
/// then centered squares) so the result is nonnegative up to rounding.
pub fn brute_variance(p: &[f64], v: &[f64]) -> f64 {
    assert_eq!(p.len(), v.len(), "distribution and value lengths differ");
    let mean: f64 = p.iter().zip(v).map(|(pi, vi)| pi * vi).sum();
    let var: f64 = p.iter().zip(v).map(|(pi, vi)| pi * (vi - mean) * (vi - mean)).sum();
    debug_assert!(var >= -1e-12, "two-pass variance went negative: {var}");
    var.max(0.0)
}

fn validate_distribution(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Validation("empty distribution".into()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < -1e-12) {
        return Err(Error::Validation("negative or non-finite probability".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// Margin of var(X^2) <= 4 C^2 var(X) for the finite distribution placing
/// probability `probs[i]` on `xs[i]`, all within [-c, c]. Exact.
pub fn var_square_margin(probs: &[f64], xs: &[f64], c: f64) -> Result<f64> {
    validate_distribution(probs)?;
    if probs.len() != xs.len() {
        return Err(Error::Dimension("support and probability counts differ".into()));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Validation(format!("range bound must be positive, got {c}")));
    }
    if xs.iter().any(|x| x.abs() > c + 1e-12) {
        return Err(Error::Validation("support point outside [-c, c]".into()));
    }
    let squares: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let lhs = brute_variance(probs, &squares);
    let rhs = 4.0 * c * c * brute_variance(probs, xs);
    Ok(rhs - lhs)
}

/// Single-instance report for the squared-variable variance inequality.
pub fn check_var_square(probs: &[f64], xs: &[f64], c: f64) -> Result<LemmaReport> {
    let margin = var_square_margin(probs, xs, c)?;
    Ok(LemmaReport {
        id: "var-square".into(),
        trials: 1,
        violations: usize::from(margin < -VIOLATION_TOL),
        worst_margin: margin,
        witness: format!("p={}, x={}, c={c:.4}", fmt_slice(probs), fmt_slice(xs)),
        notes: "margin = 4 c^2 var(X) - var(X^2), exact".into(),
    })
}

/// Random-instance loop for the squared-variable variance inequality:
/// five-point supports in [-1, 1] with simplex-uniform probabilities.
pub fn run_var_square(trials: usize, seed: u64) -> LemmaReport {
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, streams::TRIAL_BASE + t as u64);
            let xs: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let mut probs: Vec<f64> =
                (0..5).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let total: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= total);
            let margin = var_square_margin(&probs, &xs, 1.0).expect("valid instance");
            TrialOutcome {
                margin,
                violated: margin < -VIOLATION_TOL,
                witness: format!("trial {t}: p={}, x={}", fmt_slice(&probs), fmt_slice(&xs)),
            }
        })
        .collect();
    reduce_trials(
        "var-square",
        outcomes,
        "five-point supports in [-1, 1], exact evaluation of both sides".into(),
    )
}

/// Convex body with exact uniform hull sampling and a closed-form centroid:
/// a simplex (affinely independent vertices, Dirichlet weights) or a
/// parallelotope (affine image of the unit box).
#[derive(Clone, Debug)]
pub enum Polytope {
    Simplex { vertices: Vec<DVector<f64>> },
    Parallelotope { origin: DVector<f64>, edges: Vec<DVector<f64>> },
}

impl Polytope {
    pub fn dim(&self) -> usize {
        match self {
            Polytope::Simplex { vertices } => vertices[0].len(),
            Polytope::Parallelotope { origin, .. } => origin.len(),
        }
    }

    /// All extreme points: the vertex list itself, or the 2^d corners.
    pub fn vertices(&self) -> Vec<DVector<f64>> {
        match self {
            Polytope::Simplex { vertices } => vertices.clone(),
            Polytope::Parallelotope { origin, edges } => {
                let mut out = Vec::with_capacity(1 << edges.len());
                for mask in 0..(1u32 << edges.len()) {
                    let mut v = origin.clone();
                    for (i, e) in edges.iter().enumerate() {
                        if mask & (1 << i) != 0 {
                            v += e;
                        }
                    }
                    out.push(v);
                }
                out
            }
        }
    }

    /// One uniform sample from the hull.
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> DVector<f64> {
        match self {
            Polytope::Simplex { vertices } => {
                let mut weights: Vec<f64> = (0..vertices.len())
                    .map(|_| -(1.0 - rng.random::<f64>()).ln())
                    .collect();
                let total: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= total);
                let mut point = DVector::zeros(self.dim());
                for (w, v) in weights.iter().zip(vertices) {
                    point.axpy(*w, v, 1.0);
                }
                point
            }
            Polytope::Parallelotope { origin, edges } => {
                let mut point = origin.clone();
                for e in edges {
                    point.axpy(rng.random::<f64>(), e, 1.0);
                }
                point
            }
        }
    }

    /// Exact centroid: vertex average for the simplex, origin plus half the
    /// edge sum for the parallelotope.
    pub fn exact_centroid(&self) -> DVector<f64> {
        match self {
            Polytope::Simplex { vertices } => {
                let mut c = DVector::zeros(self.dim());
                for v in vertices {
                    c += v;
                }
                c / vertices.len() as f64
            }
            Polytope::Parallelotope { origin, edges } => {
                let mut c = origin.clone();
                for e in edges {
                    c.axpy(0.5, e, 1.0);
                }
                c
            }
        }
    }
}

/// Per-direction outcome of the centroid-dominance check: the margin
/// `centroid . psi - max_vertex(phi . psi) / (2 d)` with its Monte-Carlo
/// standard error.
#[derive(Clone, Debug)]
pub struct DominanceMargin {
    pub margin: f64,
    pub mc_sigma: f64,
}

/// Estimates the hull centroid by Monte-Carlo and checks it retains at least
/// a 1/(2 d) fraction of the best vertex along every direction. Requires
/// each direction to be nonnegative over the hull, which for a linear form
/// means nonnegative at every vertex.
pub fn center_dominance_margins(
    polytope: &Polytope,
    psis: &[DVector<f64>],
    mc_samples: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<DominanceMargin>> {
    if mc_samples < 2 {
        return Err(Error::Validation("need at least two Monte-Carlo samples".into()));
    }
    let d = polytope.dim();
    let vertices = polytope.vertices();
    for (i, psi) in psis.iter().enumerate() {
        if psi.len() != d {
            return Err(Error::Dimension(format!("direction {i} has wrong length")));
        }
        let min_product = vertices.iter().map(|v| v.dot(psi)).fold(f64::INFINITY, f64::min);
        if min_product < -1e-12 {
            return Err(Error::Validation(format!(
                "direction {i} goes negative over the hull ({min_product})"
            )));
        }
    }
    let samples: Vec<DVector<f64>> = (0..mc_samples).map(|_| polytope.sample(rng)).collect();
    let mut out = Vec::with_capacity(psis.len());
    for psi in psis {
        let values: Vec<f64> = samples.iter().map(|s| s.dot(psi)).collect();
        let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let mc_sigma = (ss / (values.len() - 1) as f64 / values.len() as f64).sqrt();
        let best_vertex = vertices.iter().map(|v| v.dot(psi)).fold(f64::NEG_INFINITY, f64::max);
        let threshold = best_vertex / (2.0 * d as f64);
        out.push(DominanceMargin { margin: mean - threshold, mc_sigma });
    }
    Ok(out)
}

/// Single-instance report for centroid dominance; one trial per direction.
pub fn check_center_dominance(
    polytope: &Polytope,
    psis: &[DVector<f64>],
    mc_samples: usize,
    rng: &mut ChaCha12Rng,
) -> Result<LemmaReport> {
    let margins = center_dominance_margins(polytope, psis, mc_samples, rng)?;
    let outcomes = margins
        .iter()
        .enumerate()
        .map(|(i, m)| TrialOutcome {
            margin: m.margin,
            violated: m.margin < -3.0 * m.mc_sigma - VIOLATION_TOL,
            witness: format!("direction {i}: margin {:.6} +/- {:.6} (1 sigma)", m.margin, m.mc_sigma),
        })
        .collect();
    Ok(reduce_trials(
        "center-dominance",
        outcomes,
        format!("Monte-Carlo centroid over {mc_samples} samples; violations flagged beyond 3 sigma"),
    ))
}

/// Random-instance loop for centroid dominance: positive-orthant simplices
/// and parallelotopes in up to three dimensions, ten rejection-checked
/// directions each.
pub fn run_center_dominance(trials: usize, seed: u64, mc_samples: usize) -> LemmaReport {
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, streams::TRIAL_BASE + t as u64);
            let d = rng.random_range(1..=3usize);
            let polytope = if rng.random::<bool>() {
                let vertices =
                    (0..=d).map(|_| DVector::from_fn(d, |_, _| rng.random_range(0.0..2.0))).collect();
                Polytope::Simplex { vertices }
            } else {
                let origin = DVector::from_fn(d, |_, _| rng.random_range(0.0..1.0));
                let edges =
                    (0..d).map(|_| DVector::from_fn(d, |_, _| rng.random_range(0.0..1.0))).collect();
                Polytope::Parallelotope { origin, edges }
            };
            let vertices = polytope.vertices();
            let mut psis = Vec::with_capacity(10);
            while psis.len() < 10 {
                let mut psi = DVector::from_fn(d, |_, _| {
                    rng.sample::<f64, _>(rand_distr::StandardNormal)
                });
                if psi.norm() < 1e-9 {
                    continue;
                }
                psi /= psi.norm();
                // The precondition demands nonnegativity over the hull, so
                // candidate directions are rejected until the vertex minimum
                // clears zero; the coordinate flip keeps acceptance high
                // while still passing through the explicit check.
                for attempt in 0..2 {
                    let candidate = if attempt == 0 { psi.clone() } else { psi.abs() };
                    if vertices.iter().all(|v| v.dot(&candidate) >= 0.0) {
                        psis.push(candidate);
                        break;
                    }
                }
            }
            let margins = center_dominance_margins(&polytope, &psis, mc_samples, &mut rng)
                .expect("generator satisfies the precondition");
            let kind = match &polytope {
                Polytope::Simplex { .. } => "simplex",
                Polytope::Parallelotope { .. } => "parallelotope",
            };
            let mut worst = DominanceMargin { margin: f64::INFINITY, mc_sigma: 0.0 };
            let mut violated = false;
            for m in margins {
                if m.margin < -3.0 * m.mc_sigma - VIOLATION_TOL {
                    violated = true;
                }
                if m.margin < worst.margin {
                    worst = m;
                }
            }
            TrialOutcome {
                margin: worst.margin,
                violated,
                witness: format!(
                    "trial {t}: {kind} d={d}, margin {:.6} +/- {:.6} (1 sigma)",
                    worst.margin, worst.mc_sigma
                ),
            }
        })
        .collect();
    reduce_trials(
        "center-dominance",
        outcomes,
        format!(
            "Monte-Carlo centroid over {mc_samples} samples per polytope, ten directions each; \
             violations flagged beyond 3 sigma"
        ),
    )
}

/// Margin of the grouped-maximum inequality
/// `sum_i max_j phi_i . psi_j <= 2 l max_j sum_i phi_i . psi_j` for vectors
/// in dimension l with pairwise-nonnegative inner products. Exact.
pub fn group_max_margin(phis: &[DVector<f64>], psis: &[DVector<f64>]) -> Result<f64> {
    if phis.is_empty() || psis.is_empty() {
        return Err(Error::Validation("both vector groups must be nonempty".into()));
    }
    let l = phis[0].len();
    if phis.iter().chain(psis).any(|v| v.len() != l) {
        return Err(Error::Dimension("mixed vector lengths".into()));
    }
    let products: Vec<Vec<f64>> =
        phis.iter().map(|p| psis.iter().map(|q| p.dot(q)).collect()).collect();
    if products.iter().flatten().any(|&x| x < -1e-12) {
        return Err(Error::Validation("negative inner product violates the precondition".into()));
    }
    let lhs: f64 =
        products.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).sum();
    let best_column = (0..psis.len())
        .map(|j| products.iter().map(|row| row[j]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(2.0 * l as f64 * best_column - lhs)
}

/// Single-instance report for the grouped-maximum inequality.
pub fn check_group_max(phis: &[DVector<f64>], psis: &[DVector<f64>]) -> Result<LemmaReport> {
    let margin = group_max_margin(phis, psis)?;
    Ok(LemmaReport {
        id: "group-max".into(),
        trials: 1,
        violations: usize::from(margin < -VIOLATION_TOL),
        worst_margin: margin,
        witness: format!("l={} n={} m={}", phis[0].len(), phis.len(), psis.len()),
        notes: "margin = 2 l max-column-sum - sum-of-row-maxima, exact".into(),
    })
}

/// Random-instance loop for the grouped-maximum inequality. Instances are
/// drawn from a random cone (all vectors near a shared direction) and
/// rejection-checked so every pairwise inner product is nonnegative.
pub fn run_group_max(trials: usize, seed: u64) -> LemmaReport {
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, streams::TRIAL_BASE + t as u64);
            let l = rng.random_range(1..=6usize);
            let n = rng.random_range(1..=20usize);
            let m = rng.random_range(1..=20usize);
            let (phis, psis) = loop {
                let mut axis =
                    DVector::from_fn(l, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
                if axis.norm() < 1e-9 {
                    continue;
                }
                axis /= axis.norm();
                let mut draw = |count: usize| -> Vec<DVector<f64>> {
                    (0..count)
                        .map(|_| {
                            let mut v = axis.clone();
                            for x in v.iter_mut() {
                                *x += 0.35 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                            }
                            let norm = v.norm();
                            let scale = rng.random_range(0.1..=1.0);
                            v * (scale / norm.max(1e-12))
                        })
                        .collect()
                };
                let phis = draw(n);
                let psis = draw(m);
                let all = || phis.iter().chain(&psis);
                let ok = all().all(|a| all().all(|b| a.dot(b) >= 0.0));
                if ok {
                    break (phis, psis);
                }
            };
            let margin = group_max_margin(&phis, &psis).expect("cone instance is valid");
            TrialOutcome {
                margin,
                violated: margin < -VIOLATION_TOL,
                witness: format!("trial {t}: l={l} n={n} m={m}"),
            }
        })
        .collect();
    reduce_trials(
        "group-max",
        outcomes,
        "cone-sampled nonnegative-product instances, exact double loop".into(),
    )
}

/// Left side of the blocked elliptical potential inequality: for partition
/// boundaries 0 = i_1 < ... < i_z = n, each block contributes
/// `min(sum_{i in block} phi_i^T Lambda^-1 phi_i, 1)` with Lambda frozen at
/// the block start (regularizer lambda I plus all earlier outer products).
pub fn elliptical_potential_value(
    phis: &[DVector<f64>],
    lambda: f64,
    partition: &[usize],
) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Validation(format!("lambda must be positive, got {lambda}")));
    }
    let n = phis.len();
    if partition.first() != Some(&0) || partition.last() != Some(&n) {
        return Err(Error::Validation("partition must start at 0 and end at n".into()));
    }
    if partition.windows(2).any(|w| w[0] >= w[1]) && n > 0 {
        return Err(Error::Validation("partition boundaries must strictly increase".into()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let d = phis[0].len();
    if phis.iter().any(|p| p.len() != d) {
        return Err(Error::Dimension("mixed feature lengths".into()));
    }
    let mut gram = DMatrix::<f64>::identity(d, d) * lambda;
    let mut total = 0.0;
    for window in partition.windows(2) {
        let inv = gram
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::IllConditioned("regularized Gram not invertible".into()))?;
        let mut block = 0.0;
        for phi in &phis[window[0]..window[1]] {
            block += quad_form(&inv, phi);
            gram.ger(1.0, phi, phi, 1.0);
        }
        total += block.min(1.0);
    }
    Ok(total)
}

/// Right side of the blocked elliptical potential inequality.
pub fn elliptical_potential_bound(n: usize, d: usize, norm_cap: f64, lambda: f64) -> f64 {
    6.0 * d as f64 * (n as f64 * norm_cap / lambda).log2()
}

/// Single-instance report for the blocked elliptical potential inequality.
pub fn check_elliptical_potential(
    phis: &[DVector<f64>],
    lambda: f64,
    partition: &[usize],
    norm_cap: f64,
) -> Result<LemmaReport> {
    if phis.iter().any(|p| p.norm() > norm_cap + 1e-9) {
        return Err(Error::Validation("feature norm exceeds the stated cap".into()));
    }
    let lhs = elliptical_potential_value(phis, lambda, partition)?;
    let d = phis.first().map_or(1, |p| p.len());
    let bound = if phis.is_empty() {
        0.0
    } else {
        elliptical_potential_bound(phis.len(), d, norm_cap, lambda)
    };
    let margin = bound - lhs;
    Ok(LemmaReport {
        id: "elliptical-potential".into(),
        trials: 1,
        violations: usize::from(margin < -VIOLATION_TOL),
        worst_margin: margin,
        witness: format!(
            "n={} d={d} lambda={lambda:.4} blocks={} lhs={lhs:.6} bound={bound:.6}",
            phis.len(),
            partition.len().saturating_sub(1)
        ),
        notes: "blocked potential sum against 6 d log2(n L / lambda), exact".into(),
    })
}

/// Random-instance loop for the blocked elliptical potential inequality:
/// unit-ball features, lambda in [0.01, 1], random partitions.
pub fn run_elliptical_potential(trials: usize, seed: u64) -> LemmaReport {
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, streams::TRIAL_BASE + t as u64);
            let d = rng.random_range(1..=8usize);
            let n = rng.random_range(50..=500usize);
            let lambda = rng.random_range(0.01..=1.0);
            let phis: Vec<DVector<f64>> = (0..n)
                .map(|_| {
                    let mut v = DVector::from_fn(d, |_, _| {
                        rng.sample::<f64, _>(rand_distr::StandardNormal)
                    });
                    let norm = v.norm();
                    if norm > 1e-12 {
                        let radius = rng.random::<f64>().powf(1.0 / d as f64);
                        v *= radius / norm;
                    }
                    v
                })
                .collect();
            let blocks = rng.random_range(1..=12usize).min(n);
            let mut cuts: Vec<usize> = (0..blocks - 1)
                .map(|_| rng.random_range(1..n))
                .collect();
            cuts.sort_unstable();
            cuts.dedup();
            let mut partition = vec![0];
            partition.extend(cuts);
            partition.push(n);
            let lhs = elliptical_potential_value(&phis, lambda, &partition)
                .expect("generated instance is valid");
            let bound = elliptical_potential_bound(n, d, 1.0, lambda);
            let margin = bound - lhs;
            TrialOutcome {
                margin,
                violated: margin < -VIOLATION_TOL,
                witness: format!(
                    "trial {t}: d={d} n={n} lambda={lambda:.4} blocks={} lhs={lhs:.4} bound={bound:.4}",
                    partition.len() - 1
                ),
            }
        })
        .collect();
    reduce_trials(
        "elliptical-potential",
        outcomes,
        "unit-ball features, random partitions, exact blocked sums".into(),
    )
}

/// Per-step margins of the optimal-value drift bound
/// `||V_h - V_{h+1}||_inf <= 2 d / (H - h + 1)` (1-based h), together with
/// whether the drift sequence is non-decreasing in h.
pub fn value_drift_margins(spec: &LinearMdpSpec) -> (Vec<f64>, bool) {
    let ov = optimal_values(spec);
    let horizon = spec.horizon;
    let mut drifts = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let drift = (0..spec.num_states)
            .map(|s| (ov.v[h][s] - ov.v[h + 1][s]).abs())
            .fold(0.0f64, f64::max);
        drifts.push(drift);
    }
    let monotone = drifts.windows(2).all(|w| w[0] <= w[1] + 1e-12);
    let margins = drifts
        .iter()
        .enumerate()
        .map(|(h, drift)| 2.0 * spec.dim as f64 / (horizon - h) as f64 - drift)
        .collect();
    (margins, monotone)
}

/// Single-spec report for the value drift bound. The monotonicity direction
/// of the drift sequence is recorded in the notes, not asserted.
pub fn check_value_drift(spec: &LinearMdpSpec) -> LemmaReport {
    let (margins, monotone) = value_drift_margins(spec);
    let outcomes = margins
        .iter()
        .enumerate()
        .map(|(h, &margin)| TrialOutcome {
            margin,
            violated: margin < -VIOLATION_TOL,
            witness: format!(
                "h={} of H={}: margin {margin:.6} (S={} A={} d={})",
                h + 1,
                spec.horizon,
                spec.num_states,
                spec.num_actions,
                spec.dim
            ),
        })
        .collect();
    reduce_trials(
        "value-drift",
        outcomes,
        format!("exact backward induction; drift non-decreasing in h: {monotone} (recorded only)"),
    )
}

/// Random-instance loop for the value drift bound over generated specs.
pub fn run_value_drift(trials: usize, seed: u64) -> LemmaReport {
    let results: Vec<(TrialOutcome, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, streams::TRIAL_BASE + t as u64);
            let spec = loop {
                let params = GeneratorParams {
                    num_states: rng.random_range(2..=10),
                    num_actions: rng.random_range(2..=4),
                    horizon: rng.random_range(1..=32),
                    dim: rng.random_range(1..=5),
                    seed: rng.random::<u64>(),
                    reward_noise: RewardNoise::Deterministic,
                    target_value: rng.random_range(0.3..=1.0),
                    concentration: [0.5, 1.0, 2.0][rng.random_range(0..3)],
                    sparse_reward: rng.random::<f64>() < 0.25,
                    snap_resolution: None,
                };
                if let Ok(spec) = generate_spec(&params) {
                    break spec;
                }
            };
            let (margins, monotone) = value_drift_margins(&spec);
            let (worst_h, worst) = margins
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(h, m)| (h, *m))
                .expect("horizon is at least one");
            let violated = margins.iter().any(|&m| m < -VIOLATION_TOL);
            (
                TrialOutcome {
                    margin: worst,
                    violated,
                    witness: format!(
                        "trial {t}: S={} A={} d={} H={}, worst at h={}",
                        spec.num_states,
                        spec.num_actions,
                        spec.dim,
                        spec.horizon,
                        worst_h + 1
                    ),
                },
                monotone,
            )
        })
        .collect();
    let monotone_count = results.iter().filter(|(_, m)| *m).count();
    let outcomes = results.into_iter().map(|(o, _)| o).collect();
    reduce_trials(
        "value-drift",
        outcomes,
        format!(
            "exact backward induction on generated specs; drift non-decreasing in h in \
             {monotone_count}/{trials} trials (recorded, not asserted)"
        ),
    )
}

/// Per-h' margins of the on-policy total variance bound: rolling out the
/// optimal policy for `num_episodes` episodes, for every fixed h' the sum
/// over episodes and steps of Var(P_(s,a), V*_h') must stay below
/// K (36 iota + 18 d + 10 ln(K H)) with iota = ln(2 / delta).
pub fn total_variance_margins(
    spec: &LinearMdpSpec,
    num_episodes: usize,
    delta: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Validation(format!("delta must be in (0,1), got {delta}")));
    }
    if num_episodes == 0 {
        return Err(Error::Validation("need at least one episode".into()));
    }
    let ov = optimal_values(spec);
    let horizon = spec.horizon;
    // ov.v[h'] for h' = 0..=H, with the terminal row identically zero.
    let mut sums = vec![0.0; horizon + 1];
    for _ in 0..num_episodes {
        let traj = rollout(spec, &ov.policy, rng);
        for (s, a) in traj.states.iter().zip(&traj.actions) {
            let row = spec.transition_row(*s, *a);
            for (hp, sum) in sums.iter_mut().enumerate() {
                *sum += brute_variance(&row, &ov.v[hp]);
            }
        }
    }
    let iota = (2.0 / delta).ln();
    let k = num_episodes as f64;
    let bound = k
        * (36.0 * iota
            + 18.0 * spec.dim as f64
            + 10.0 * (k * horizon as f64).ln());
    Ok(sums.into_iter().map(|lhs| bound - lhs).collect())
}

/// Single-spec report for the total variance bound.
pub fn check_total_variance(
    spec: &LinearMdpSpec,
    num_episodes: usize,
    rng: &mut ChaCha12Rng,
) -> Result<LemmaReport> {
    let margins = total_variance_margins(spec, num_episodes, 0.01, rng)?;
    let outcomes = margins
        .iter()
        .enumerate()
        .map(|(hp, &margin)| TrialOutcome {
            margin,
            violated: margin < -VIOLATION_TOL,
            witness: format!("h'={} (1-based, H+1={} is terminal): margin {margin:.4}", hp + 1, spec.horizon + 1),
        })
        .collect();
    Ok(reduce_trials(
        "total-variance",
        outcomes,
        format!("optimal-policy rollouts, K={num_episodes}, delta=0.01, exact per-step variances"),
    ))
}

/// Random-instance loop for the total variance bound.
pub fn run_total_variance(trials: usize, seed: u64, num_episodes: usize) -> LemmaReport {
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, streams::TRIAL_BASE + t as u64);
            let spec = loop {
                let params = GeneratorParams {
                    num_states: rng.random_range(3..=8),
                    num_actions: rng.random_range(2..=4),
                    horizon: [5, 10][rng.random_range(0..2)],
                    dim: rng.random_range(2..=5),
                    seed: rng.random::<u64>(),
                    reward_noise: RewardNoise::Deterministic,
                    target_value: rng.random_range(0.5..=1.0),
                    concentration: 1.0,
                    sparse_reward: false,
                    snap_resolution: None,
                };
                if let Ok(spec) = generate_spec(&params) {
                    break spec;
                }
            };
            let margins = total_variance_margins(&spec, num_episodes, 0.01, &mut rng)
                .expect("valid instance");
            let (worst_hp, worst) = margins
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(hp, m)| (hp, *m))
                .expect("at least one h'");
            TrialOutcome {
                margin: worst,
                violated: margins.iter().any(|&m| m < -VIOLATION_TOL),
                witness: format!(
                    "trial {t}: S={} d={} H={}, worst at h'={}",
                    spec.num_states,
                    spec.dim,
                    spec.horizon,
                    worst_hp + 1
                ),
            }
        })
        .collect();
    reduce_trials(
        "total-variance",
        outcomes,
        format!("optimal-policy rollouts on generated specs, K={num_episodes} episodes each"),
    )
}

/// Default trial counts for the `verify` surface: at least 200 trials per
/// inequality, sized so the whole suite stays well under the two-minute
/// budget on one core.
pub fn run_all(seed: u64) -> Vec<LemmaReport> {
    vec![
        run_var_square(1000, seed),
        run_center_dominance(200, seed.wrapping_add(1), 4096),
        run_group_max(1000, seed.wrapping_add(2)),
        run_elliptical_potential(200, seed.wrapping_add(3)),
        run_value_drift(200, seed.wrapping_add(4)),
        run_total_variance(20, seed.wrapping_add(5), 256),
    ]
}
