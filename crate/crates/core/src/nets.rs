//! Finite covers of the value-function class.
//!
//! Candidate value functions have the form v(s) = clamp(max_a phi(s,a)^T
//! theta, 0, 1) for theta in a centered L2 ball. A net over the theta ball
//! therefore induces a net over value functions, and since ||phi||_2 <= 1
//! the map theta -> v is 1-Lipschitz: theta resolution transfers directly to
//! sup-norm resolution over values.
//!
//! The default cover is an axis-aligned lattice intersected with the ball;
//! when the lattice would exceed the point budget the builder falls back to
//! a low-discrepancy (Halton) sample of the ball, which trades the covering
//! guarantee for a controlled memory footprint. Either way the origin is
//! always included so the zero value function is representable exactly.

use std::collections::HashMap;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mdp::LinearMdpSpec;
use crate::rng::halton_ball;

/// A finite set of parameter vectors covering a ball.
#[derive(Clone, Debug)]
pub struct ThetaNet {
    pub dim: usize,
    pub radius: f64,
    pub resolution: f64,
    pub points: Vec<DVector<f64>>,
    /// True when the points are the full lattice; false after the budget
    /// fallback to a Halton sample.
    pub grid: bool,
}

impl ThetaNet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Monte-Carlo estimate of the covering radius: the worst distance from
    /// a probe drawn in the ball to its nearest net point. For the lattice
    /// this is below resolution * sqrt(dim) (rounding each coordinate toward
    /// zero stays inside the ball and moves each coordinate less than one
    /// cell).
    pub fn covering_radius_estimate(&self, probes: usize, seed: u64) -> f64 {
        let samples = halton_ball(self.dim, self.radius, probes, seed);
        let mut worst = 0.0f64;
        for p in &samples {
            let mut best = f64::INFINITY;
            for q in &self.points {
                let d2 = (p - q).norm_squared();
                if d2 < best {
                    best = d2;
                }
            }
            worst = worst.max(best.sqrt());
        }
        worst
    }
}

/// Enumerates lattice points i * resolution with L2 norm at most radius,
/// in lexicographic order of the integer coordinates, pruning on the partial
/// sum of squares. Returns None once more than `budget` points exist.
fn lattice_in_ball(
    dim: usize,
    radius: f64,
    resolution: f64,
    budget: usize,
) -> Option<Vec<DVector<f64>>> {
    let m = (radius / resolution).floor() as i64;
    let r2 = radius * radius + 1e-12;
    let mut points = Vec::new();
    let mut coords = vec![0i64; dim];

    fn recurse(
        coords: &mut Vec<i64>,
        depth: usize,
        partial: f64,
        m: i64,
        r2: f64,
        resolution: f64,
        points: &mut Vec<DVector<f64>>,
        budget: usize,
    ) -> bool {
        if depth == coords.len() {
            if points.len() >= budget {
                return false;
            }
            points.push(DVector::from_iterator(
                coords.len(),
                coords.iter().map(|&i| i as f64 * resolution),
            ));
            return true;
        }
        for i in -m..=m {
            let x = i as f64 * resolution;
            let next = partial + x * x;
            if next > r2 {
                continue;
            }
            coords[depth] = i;
            if !recurse(coords, depth + 1, next, m, r2, resolution, points, budget) {
                return false;
            }
        }
        true
    }

    if recurse(&mut coords, 0, 0.0, m, r2, resolution, &mut points, budget) {
        Some(points)
    } else {
        None
    }
}

/// Builds the lattice cover, or a Halton sample of `budget` points (origin
/// included) when the lattice would exceed the budget.
pub fn build_theta_net(
    dim: usize,
    radius: f64,
    resolution: f64,
    budget: usize,
    seed: u64,
) -> Result<ThetaNet> {
    if dim == 0 {
        return Err(Error::Dimension("net dimension must be positive".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) || !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::Validation(format!(
            "radius and resolution must be positive and finite, got {radius} and {resolution}"
        )));
    }
    if budget < 1 {
        return Err(Error::Validation("point budget must be at least 1".into()));
    }
    if let Some(points) = lattice_in_ball(dim, radius, resolution, budget) {
        return Ok(ThetaNet { dim, radius, resolution, points, grid: true });
    }
    let mut points = vec![DVector::zeros(dim)];
    points.extend(halton_ball(dim, radius, budget.saturating_sub(1), seed));
    Ok(ThetaNet { dim, radius, resolution, points, grid: false })
}

/// The value function induced by theta on a spec: per-state optimistic
/// one-step evaluation clamped to [0, 1].
pub fn value_from_theta(spec: &LinearMdpSpec, theta: &DVector<f64>) -> Vec<f64> {
    (0..spec.num_states)
        .map(|s| {
            let best = (0..spec.num_actions)
                .map(|a| spec.feature_vec(s, a).dot(theta))
                .fold(f64::NEG_INFINITY, f64::max);
            best.clamp(0.0, 1.0)
        })
        .collect()
}

/// A theta net evaluated on a fixed spec. Distinct parameter vectors often
/// induce identical state-value rows (the clamp and max collapse them);
/// estimation only needs one regression target per distinct row, so rows are
/// deduplicated up front and consumers iterate over `distinct`.
#[derive(Clone, Debug)]
pub struct ValueNet {
    /// Per net element, the value at each state.
    pub values: Vec<Vec<f64>>,
    /// Per net element, the squared value at each state.
    pub squares: Vec<Vec<f64>>,
    /// Per net element, the index of the first element with a bitwise
    /// identical value row.
    pub canonical: Vec<usize>,
    /// Sorted indices of canonical elements.
    pub distinct: Vec<usize>,
}

impl ValueNet {
    pub fn build(spec: &LinearMdpSpec, net: &ThetaNet) -> Self {
        let mut values = Vec::with_capacity(net.len());
        let mut squares = Vec::with_capacity(net.len());
        let mut canonical = Vec::with_capacity(net.len());
        let mut distinct = Vec::new();
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        for (idx, theta) in net.points.iter().enumerate() {
            let row = value_from_theta(spec, theta);
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let canon = *seen.entry(key).or_insert_with(|| {
                distinct.push(idx);
                idx
            });
            squares.push(row.iter().map(|v| v * v).collect());
            values.push(row);
            canonical.push(canon);
        }
        ValueNet { values, squares, canonical, distinct }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Nearest canonical row in sup norm, lowest index winning ties, with
    /// the achieved distance. Scanning only canonical rows is exact: every
    /// duplicate sits at the same distance as its canonical row, which has
    /// the smaller index.
    pub fn project(&self, row: &[f64]) -> (usize, f64) {
        debug_assert!(!self.distinct.is_empty());
        let mut best_idx = self.distinct[0];
        let mut best = f64::INFINITY;
        for &j in &self.distinct {
            let d = self.values[j]
                .iter()
                .zip(row)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if d < best {
                best = d;
                best_idx = j;
            }
        }
        (best_idx, best)
    }
}
