//! Optimistic episodic planning against transition and reward confidence sets.
//!
//! Planning runs in two modes over shared state. Exact mode filters a finite
//! list of model candidates through both confidence constraints and solves
//! each survivor by backward induction, realizing the elimination argmax
//! faithfully whenever the model class is small enough to enumerate. Bonus
//! mode is the tractable default: value iteration where each backup projects
//! the running value function onto the net, reads that element's regression
//! estimate plus its confidence width, adds an optimistic reward from the
//! clipped-correlation set, and clips to [0,1].
//!
//! Projection error is recorded per step but deliberately not added to the
//! bonus: with coarse nets the inflated bonus swamps learning, so the error
//! is surfaced as a diagnostic for auditing instead.
//!
//! The per-net-element estimators all consume the same transition stream and
//! differ only in their regression targets v(s') and v(s')^2, so episode
//! ingestion is a parallel map across elements with no cross-element
//! sharing.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{WlsParams, WlsState};
use crate::mdp::{
    mu_transpose_v, optimal_values, LinearMdpSpec, RewardNoise, TabularPolicy, Trajectory,
};
use crate::nets::ValueNet;
use crate::voful::{CheckpointReport, VofulParams, VofulState};

/// One weighted estimator per distinct value-net row, all fed the same
/// transition history.
#[derive(Clone, Debug)]
pub struct TransitionConfidence {
    estimators: Vec<WlsState>,
    /// Net row index behind each estimator slot, ascending.
    rows: Vec<usize>,
    /// Net row index -> estimator slot, composed with the canonical map so
    /// duplicate rows resolve to the same slot.
    slot_of: Vec<usize>,
}

impl TransitionConfidence {
    pub fn new(net: &ValueNet, dim: usize, params: WlsParams) -> Result<Self> {
        if net.is_empty() {
            return Err(Error::Validation("value net has no rows".into()));
        }
        let rows = net.distinct.clone();
        let estimators = rows
            .iter()
            .map(|_| WlsState::new(dim, params.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { slot_of: Self::slots(net, &rows), estimators, rows })
    }

    /// Oracle construction: every estimator holds the exact regression
    /// vectors mu^T v and mu^T v^2 for its row under `spec`, with an empty
    /// sample history. Tests use it to isolate planning from estimation.
    pub fn plug_in_exact(net: &ValueNet, spec: &LinearMdpSpec, params: WlsParams) -> Result<Self> {
        if net.is_empty() {
            return Err(Error::Validation("value net has no rows".into()));
        }
        let rows = net.distinct.clone();
        let estimators = rows
            .iter()
            .map(|&r| {
                WlsState::plug_in(
                    spec.dim,
                    params.clone(),
                    mu_transpose_v(spec, &net.values[r]),
                    mu_transpose_v(spec, &net.squares[r]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { slot_of: Self::slots(net, &rows), estimators, rows })
    }

    fn slots(net: &ValueNet, rows: &[usize]) -> Vec<usize> {
        net.canonical
            .iter()
            .map(|&c| rows.binary_search(&c).expect("canonical index is a distinct row"))
            .collect()
    }

    /// The estimator responsible for a net row, resolving duplicates to
    /// their canonical slot.
    pub fn estimator(&self, net_index: usize) -> &WlsState {
        &self.estimators[self.slot_of[net_index]]
    }

    /// Distinct net rows, one estimator each.
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn num_estimators(&self) -> usize {
        self.estimators.len()
    }

    /// Samples absorbed so far; every estimator has seen the same stream.
    pub fn n(&self) -> usize {
        self.estimators.first().map(|e| e.n()).unwrap_or(0)
    }

    pub fn params(&self) -> &WlsParams {
        self.estimators[0].params()
    }

    /// Feeds one episode of (phi, next state) transitions, in step order, to
    /// every estimator in parallel. Each estimator extracts its own targets
    /// v(s') and v(s')^2 from its net row.
    pub fn push_episode(
        &mut self,
        net: &ValueNet,
        transitions: &[(DVector<f64>, usize)],
    ) -> Result<()> {
        let rows = &self.rows;
        self.estimators
            .par_iter_mut()
            .zip(rows.par_iter())
            .try_for_each(|(est, &row)| {
                for (phi, s_next) in transitions {
                    est.push_sample(phi, net.values[row][*s_next], net.squares[row][*s_next])?;
                }
                Ok(())
            })
    }
}

/// A transition kernel and reward vector pair proposed for elimination
/// planning. `mu` is stored with one row per state, matching the
/// `LinearMdpSpec` layout: P(s'|phi) = mu[s', :] . phi.
#[derive(Clone, Debug)]
pub struct ModelCandidate {
    pub mu: DMatrix<f64>,
    pub theta_r: DVector<f64>,
}

impl ModelCandidate {
    pub fn from_spec(spec: &LinearMdpSpec) -> Self {
        let mu = DMatrix::from_fn(spec.num_states, spec.dim, |s, j| spec.mu[s][j]);
        let theta_r = DVector::from_column_slice(&spec.theta_r);
        Self { mu, theta_r }
    }

    /// The candidate viewed as a full spec sharing `base`'s layout, so the
    /// standard backward induction applies verbatim. Candidate kernels need
    /// not be stochastic; the planner only does arithmetic on them.
    pub fn as_spec(&self, base: &LinearMdpSpec) -> LinearMdpSpec {
        LinearMdpSpec {
            num_states: base.num_states,
            num_actions: base.num_actions,
            horizon: base.horizon,
            dim: base.dim,
            features: base.features.clone(),
            mu: (0..base.num_states)
                .map(|s| self.mu.row(s).iter().copied().collect())
                .collect(),
            theta_r: self.theta_r.iter().copied().collect(),
            reward_noise: RewardNoise::Deterministic,
            initial_state: base.initial_state,
        }
    }
}

/// Every realized feature vector of a spec, the default probe set for
/// transition membership.
pub fn feature_probes(spec: &LinearMdpSpec) -> Vec<DVector<f64>> {
    (0..spec.num_states)
        .flat_map(|s| (0..spec.num_actions).map(move |a| (s, a)))
        .map(|(s, a)| spec.feature_vec(s, a))
        .collect()
}

/// Whether a candidate kernel is consistent with every estimator: for each
/// distinct net row v and each probe phi, the predicted regression value
/// phi^T mu~^T v must sit within the estimator's confidence width of its
/// current estimate.
pub fn transition_member(
    mu_tilde: &DMatrix<f64>,
    conf: &TransitionConfidence,
    net: &ValueNet,
    probes: &[DVector<f64>],
) -> bool {
    for (slot, &row) in conf.rows().iter().enumerate() {
        let est = &conf.estimators[slot];
        debug_assert_eq!(mu_tilde.nrows(), net.values[row].len());
        debug_assert_eq!(mu_tilde.ncols(), est.dim());
        let v_row = DVector::from_column_slice(&net.values[row]);
        let target = mu_tilde.tr_mul(&v_row);
        for phi in probes {
            if (phi.dot(&target) - est.mean_estimate(phi)).abs() > est.bonus(phi) {
                return false;
            }
        }
    }
    true
}

/// The output of one planning call.
#[derive(Clone, Debug)]
pub struct OptimisticPlan {
    pub policy: TabularPolicy,
    /// (H+1) x S table; row H is zero.
    pub optimistic_values: Vec<Vec<f64>>,
    /// Index into the candidate list, exact mode only.
    pub chosen_candidate: Option<usize>,
    /// H x (S*A) confidence widths applied, bonus mode only.
    pub bonuses: Vec<Vec<f64>>,
    /// Sup-norm distance between each backed-up value row and its nearest
    /// net row, bonus mode only, indexed by step.
    pub projection_errors: Vec<f64>,
    /// Exact mode: candidates surviving both filters. Bonus mode: reward
    /// candidates still alive in the clipped-correlation set.
    pub survivors: usize,
}

/// Elimination planning over an explicit model class. Candidates are kept
/// when their kernel passes `transition_member` and their reward vector
/// still belongs to the clipped-correlation set over all recorded
/// checkpoints; each survivor is solved exactly and the best initial value
/// wins, lowest index breaking ties.
pub fn plan_exact(
    candidates: &[ModelCandidate],
    conf: &TransitionConfidence,
    net: &ValueNet,
    voful: &VofulState,
    spec: &LinearMdpSpec,
    probes: &[DVector<f64>],
) -> Result<OptimisticPlan> {
    if candidates.is_empty() {
        return Err(Error::Validation("candidate list must be nonempty".into()));
    }
    let mut best: Option<(f64, usize, crate::mdp::OptimalValues)> = None;
    let mut survivors = 0usize;
    for (idx, cand) in candidates.iter().enumerate() {
        if !voful.member_at_prefix(&cand.theta_r, voful.n()) {
            continue;
        }
        if !transition_member(&cand.mu, conf, net, probes) {
            continue;
        }
        survivors += 1;
        let solved = optimal_values(&cand.as_spec(spec));
        let value = solved.v[0][spec.initial_state];
        if best.as_ref().map_or(true, |(b, _, _)| value > *b) {
            best = Some((value, idx, solved));
        }
    }
    let Some((_, idx, solved)) = best else {
        return Err(Error::EmptyModelClass(format!(
            "all {} model candidates eliminated",
            candidates.len()
        )));
    };
    Ok(OptimisticPlan {
        policy: solved.policy,
        optimistic_values: solved.v,
        chosen_candidate: Some(idx),
        bonuses: Vec::new(),
        projection_errors: Vec::new(),
        survivors,
    })
}

/// Bonus-based optimistic value iteration, the tractable default mode.
///
/// Backward over steps: the previous value row is projected onto the net,
/// its estimator supplies the transition estimate and confidence width, the
/// clipped-correlation set supplies an optimistic mean reward (computed on
/// /sqrt(d)-scaled features and unscaled back), and the backup clips to
/// [0,1]. Greedy actions break ties toward the lowest index.
pub fn plan_bonus(
    conf: &TransitionConfidence,
    net: &ValueNet,
    voful: &VofulState,
    spec: &LinearMdpSpec,
) -> Result<OptimisticPlan> {
    let (s_n, a_n, horizon) = (spec.num_states, spec.num_actions, spec.horizon);
    let sqrt_d = (spec.dim as f64).sqrt();
    let phis: Vec<DVector<f64>> = feature_probes(spec);
    let mut r_plus = vec![0.0; s_n * a_n];
    for (sa, phi) in phis.iter().enumerate() {
        r_plus[sa] = voful.optimistic_value(&(phi / sqrt_d))? * sqrt_d;
    }
    let mut v_bar = vec![vec![0.0; s_n]; horizon + 1];
    let mut bonuses = vec![vec![0.0; s_n * a_n]; horizon];
    let mut projection_errors = vec![0.0; horizon];
    let mut actions = vec![0usize; horizon * s_n];
    for h in (0..horizon).rev() {
        let (net_idx, err) = net.project(&v_bar[h + 1]);
        projection_errors[h] = err;
        let est = conf.estimator(net_idx);
        for s in 0..s_n {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0usize;
            for a in 0..a_n {
                let sa = s * a_n + a;
                let phi = &phis[sa];
                let b = est.bonus(phi);
                bonuses[h][sa] = b;
                let q = (r_plus[sa] + est.mean_estimate(phi) + b).clamp(0.0, 1.0);
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            v_bar[h][s] = best;
            actions[h * s_n + s] = best_a;
        }
    }
    Ok(OptimisticPlan {
        policy: TabularPolicy::new(horizon, s_n, actions)?,
        optimistic_values: v_bar,
        chosen_candidate: None,
        bonuses,
        projection_errors,
        survivors: voful.num_alive(),
    })
}

/// The full learner state for one run: transition estimators over a value
/// net plus the clipped-correlation reward set, updated once per episode.
#[derive(Clone, Debug)]
pub struct HfLearner {
    conf: TransitionConfidence,
    voful: VofulState,
    net: ValueNet,
    episodes: usize,
}

impl HfLearner {
    pub fn new(
        net: ValueNet,
        dim: usize,
        wls: WlsParams,
        voful_params: VofulParams,
    ) -> Result<Self> {
        let conf = TransitionConfidence::new(&net, dim, wls)?;
        let voful = VofulState::new(dim, voful_params)?;
        Ok(Self { conf, voful, net, episodes: 0 })
    }

    /// Same learner but with an explicit reward candidate list instead of
    /// the lattice net, for exact-mode runs and oracle tests.
    pub fn with_reward_candidates(
        net: ValueNet,
        dim: usize,
        wls: WlsParams,
        voful_params: VofulParams,
        reward_candidates: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let conf = TransitionConfidence::new(&net, dim, wls)?;
        let voful = VofulState::with_candidates(dim, voful_params, reward_candidates)?;
        Ok(Self { conf, voful, net, episodes: 0 })
    }

    pub fn confidence(&self) -> &TransitionConfidence {
        &self.conf
    }

    pub fn voful(&self) -> &VofulState {
        &self.voful
    }

    pub fn net(&self) -> &ValueNet {
        &self.net
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn plan(&self, spec: &LinearMdpSpec) -> Result<OptimisticPlan> {
        plan_bonus(&self.conf, &self.net, &self.voful, spec)
    }

    pub fn plan_exact(
        &self,
        candidates: &[ModelCandidate],
        spec: &LinearMdpSpec,
        probes: &[DVector<f64>],
    ) -> Result<OptimisticPlan> {
        plan_exact(candidates, &self.conf, &self.net, &self.voful, spec, probes)
    }

    /// Absorbs one trajectory: every estimator sees the H transitions in
    /// step order, the reward set ingests the /sqrt(d)-scaled pairs, and a
    /// pruning checkpoint closes the episode.
    pub fn observe_episode(
        &mut self,
        spec: &LinearMdpSpec,
        traj: &Trajectory,
    ) -> Result<CheckpointReport> {
        if traj.actions.len() != spec.horizon || traj.states.len() != spec.horizon + 1 {
            return Err(Error::Dimension(format!(
                "trajectory has {} steps, spec horizon is {}",
                traj.actions.len(),
                spec.horizon
            )));
        }
        let sqrt_d = (spec.dim as f64).sqrt();
        let transitions: Vec<(DVector<f64>, usize)> = (0..spec.horizon)
            .map(|h| (spec.feature_vec(traj.states[h], traj.actions[h]), traj.states[h + 1]))
            .collect();
        self.conf.push_episode(&self.net, &transitions)?;
        for (h, (phi, _)) in transitions.iter().enumerate() {
            self.voful.ingest(phi / sqrt_d, traj.rewards[h] / sqrt_d)?;
        }
        let report = self.voful.checkpoint()?;
        self.episodes += 1;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::wls_estimate;
    use crate::mdp::{generate_spec, hand_instance, policy_value, rollout, GeneratorParams};
    use crate::nets::{build_theta_net, ThetaNet};
    use crate::oracle::best_policy_by_enumeration;
    use crate::rng::{stream_rng, streams};

    fn zero_bonus_params() -> WlsParams {
        WlsParams {
            lambda: 1.0,
            alpha: 0.0,
            eps_bonus: 0.0,
            kappa: 1.0,
            refresh_every: 256,
            record_weights: false,
        }
    }

    fn single_reward_voful(spec: &LinearMdpSpec) -> VofulState {
        VofulState::with_candidates(
            spec.dim,
            VofulParams::default(),
            vec![DVector::from_column_slice(&spec.theta_r)],
        )
        .unwrap()
    }

    /// Net whose rows are exactly the optimal value rows of the spec: the
    /// zero vector covers V_H, and theta_r + mu^T V_{h+1} reproduces V_h
    /// through the clamped max.
    fn oracle_net(spec: &LinearMdpSpec) -> (ThetaNet, ValueNet) {
        let solved = optimal_values(spec);
        let mut points = vec![DVector::zeros(spec.dim)];
        let theta_r = DVector::from_column_slice(&spec.theta_r);
        for h in 0..spec.horizon {
            points.push(&theta_r + mu_transpose_v(spec, &solved.v[h + 1]));
        }
        let theta_net = ThetaNet {
            dim: spec.dim,
            radius: 2.0,
            resolution: 0.0,
            points,
            grid: false,
        };
        let value_net = ValueNet::build(spec, &theta_net);
        (theta_net, value_net)
    }

    #[test]
    fn oracle_components_recover_the_optimum() {
        let spec = hand_instance();
        let (_, net) = oracle_net(&spec);
        let conf = TransitionConfidence::plug_in_exact(&net, &spec, zero_bonus_params()).unwrap();
        let voful = single_reward_voful(&spec);
        let plan = plan_bonus(&conf, &net, &voful, &spec).unwrap();
        let star = optimal_values(&spec);
        for h in 0..=spec.horizon {
            for s in 0..spec.num_states {
                assert!(
                    (plan.optimistic_values[h][s] - star.v[h][s]).abs() < 1e-9,
                    "V[{h}][{s}] = {} vs optimal {}",
                    plan.optimistic_values[h][s],
                    star.v[h][s]
                );
            }
        }
        for (h, err) in plan.projection_errors.iter().enumerate() {
            assert!(*err < 1e-9, "projection error {err} at step {h}");
        }
        assert!(plan.bonuses.iter().flatten().all(|&b| b == 0.0));
        let realized = policy_value(&spec, &plan.policy)[0][spec.initial_state];
        assert!((realized - star.v[0][spec.initial_state]).abs() < 1e-9);
    }

    #[test]
    fn zero_data_planning_is_fully_optimistic() {
        let spec = hand_instance();
        let theta_net = build_theta_net(spec.dim, 2.0, 1.0, 100_000, 0).unwrap();
        let net = ValueNet::build(&spec, &theta_net);
        let params = WlsParams::from_scale(spec.dim, 1024, spec.horizon, 0.01);
        let conf = TransitionConfidence::new(&net, spec.dim, params).unwrap();
        let voful = single_reward_voful(&spec);
        let plan = plan_bonus(&conf, &net, &voful, &spec).unwrap();
        // The bonus alpha ||phi|| / sqrt(lambda) far exceeds 1 before any
        // data arrives, so every backup clips to the ceiling and the greedy
        // tie-break lands on action 0 everywhere.
        for h in 0..spec.horizon {
            for s in 0..spec.num_states {
                assert_eq!(plan.optimistic_values[h][s], 1.0);
                assert_eq!(plan.policy.action(h, s), 0);
            }
        }
        for row in &plan.optimistic_values {
            for &v in row {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn true_kernel_passes_membership_with_any_positive_bonus() {
        let spec = hand_instance();
        let theta_net = build_theta_net(spec.dim, 1.0, 0.5, 100_000, 0).unwrap();
        let net = ValueNet::build(&spec, &theta_net);
        let mut params = zero_bonus_params();
        params.alpha = 1e-6;
        let conf = TransitionConfidence::plug_in_exact(&net, &spec, params).unwrap();
        let truth = ModelCandidate::from_spec(&spec);
        assert!(transition_member(&truth.mu, &conf, &net, &feature_probes(&spec)));
    }

    #[test]
    fn perturbed_kernel_fails_membership_under_tight_bonus() {
        let spec = hand_instance();
        let theta_net = build_theta_net(spec.dim, 1.0, 0.5, 100_000, 0).unwrap();
        let net = ValueNet::build(&spec, &theta_net);
        let mut params = zero_bonus_params();
        params.alpha = 1e-6;
        let conf = TransitionConfidence::plug_in_exact(&net, &spec, params).unwrap();
        let mut cand = ModelCandidate::from_spec(&spec);
        cand.mu[(0, 0)] += 0.5;
        assert!(!transition_member(&cand.mu, &conf, &net, &feature_probes(&spec)));
    }

    #[test]
    fn enlarged_bonuses_never_lower_the_root_value() {
        // A single-row net pins the projection target, so raising alpha
        // enlarges every bonus pointwise while holding the estimates fixed.
        let spec = hand_instance();
        let theta_net = ThetaNet {
            dim: spec.dim,
            radius: 2.0,
            resolution: 0.0,
            points: vec![DVector::zeros(spec.dim)],
            grid: false,
        };
        let net = ValueNet::build(&spec, &theta_net);
        let voful = single_reward_voful(&spec);
        let mut last = f64::NEG_INFINITY;
        for alpha in [0.0, 0.05, 0.25, 1.0] {
            let mut params = zero_bonus_params();
            params.alpha = alpha;
            let conf = TransitionConfidence::plug_in_exact(&net, &spec, params).unwrap();
            let plan = plan_bonus(&conf, &net, &voful, &spec).unwrap();
            let root = plan.optimistic_values[0][spec.initial_state];
            assert!(
                root >= last - 1e-12,
                "root value dropped from {last} to {root} at alpha {alpha}"
            );
            last = root;
        }
    }

    fn candidate_family(spec: &LinearMdpSpec) -> Vec<ModelCandidate> {
        let truth = ModelCandidate::from_spec(spec);
        let mut out = vec![truth.clone()];
        // Uniformly larger rewards: an optimistic planner must prefer this
        // candidate whenever it survives.
        let mut richer = truth.clone();
        richer.theta_r *= 1.5;
        out.push(richer);
        let mut poorer = truth.clone();
        poorer.theta_r *= 0.5;
        out.push(poorer);
        let mut zero_reward = truth.clone();
        zero_reward.theta_r.fill(0.0);
        out.push(zero_reward);
        // Kernel variants: swap which state each feature leads to, or blur
        // toward uniform.
        let mut swapped = truth.clone();
        let top = swapped.mu.row(0).into_owned();
        let bottom = swapped.mu.row(1).into_owned();
        swapped.mu.set_row(0, &bottom);
        swapped.mu.set_row(1, &top);
        out.push(swapped);
        let mut blurred = truth.clone();
        blurred.mu = blurred.mu.map(|_| 0.5);
        out.push(blurred);
        let mut richer_swapped = out[4].clone();
        richer_swapped.theta_r *= 1.4;
        out.push(richer_swapped);
        let mut drifted = truth.clone();
        drifted.theta_r[1] += 0.2;
        out.push(drifted);
        out
    }

    #[test]
    fn exact_mode_matches_candidate_policy_enumeration() {
        let spec = hand_instance();
        let theta_net = build_theta_net(spec.dim, 1.0, 1.0, 100_000, 0).unwrap();
        let net = ValueNet::build(&spec, &theta_net);
        // Pre-data, wide bonuses: every candidate survives both filters and
        // the planner reduces to pure argmax over the class.
        let params = WlsParams::from_scale(spec.dim, 64, spec.horizon, 0.01);
        let conf = TransitionConfidence::new(&net, spec.dim, params).unwrap();
        let voful = VofulState::new(spec.dim, VofulParams::default()).unwrap();
        let candidates = candidate_family(&spec);
        let plan =
            plan_exact(&candidates, &conf, &net, &voful, &spec, &feature_probes(&spec)).unwrap();
        assert_eq!(plan.survivors, candidates.len());

        let mut best = f64::NEG_INFINITY;
        let mut best_idx = usize::MAX;
        for (idx, cand) in candidates.iter().enumerate() {
            let (value, _) = best_policy_by_enumeration(&cand.as_spec(&spec));
            if value > best {
                best = value;
                best_idx = idx;
            }
        }
        assert_eq!(plan.chosen_candidate, Some(best_idx));
        assert_eq!(plan.optimistic_values[0][spec.initial_state], best);
    }

    #[test]
    fn exact_mode_is_optimistic_when_truth_survives() {
        let spec = hand_instance();
        let theta_net = build_theta_net(spec.dim, 1.0, 1.0, 100_000, 0).unwrap();
        let net = ValueNet::build(&spec, &theta_net);
        let params = WlsParams::from_scale(spec.dim, 64, spec.horizon, 0.01);
        let conf = TransitionConfidence::new(&net, spec.dim, params).unwrap();
        let voful = VofulState::new(spec.dim, VofulParams::default()).unwrap();
        let star = optimal_values(&spec).v[0][spec.initial_state];
        let candidates = candidate_family(&spec);
        let plan =
            plan_exact(&candidates, &conf, &net, &voful, &spec, &feature_probes(&spec)).unwrap();
        assert!(plan.optimistic_values[0][spec.initial_state] >= star);

        // A singleton class containing only the truth returns the true
        // optimum and its policy exactly.
        let only_truth = vec![ModelCandidate::from_spec(&spec)];
        let plan =
            plan_exact(&only_truth, &conf, &net, &voful, &spec, &feature_probes(&spec)).unwrap();
        assert_eq!(plan.chosen_candidate, Some(0));
        assert_eq!(plan.optimistic_values[0][spec.initial_state], star);
        assert_eq!(plan.policy.actions, optimal_values(&spec).policy.actions);
    }

    #[test]
    fn eliminating_every_candidate_is_an_error() {
        let spec = hand_instance();
        let theta_net = build_theta_net(spec.dim, 1.0, 0.5, 100_000, 0).unwrap();
        let net = ValueNet::build(&spec, &theta_net);
        let mut params = zero_bonus_params();
        params.alpha = 1e-9;
        let conf = TransitionConfidence::plug_in_exact(&net, &spec, params).unwrap();
        let voful = single_reward_voful(&spec);
        let mut absurd = ModelCandidate::from_spec(&spec);
        absurd.mu[(0, 0)] += 1.0;
        let err = plan_exact(
            &[absurd],
            &conf,
            &net,
            &voful,
            &spec,
            &feature_probes(&spec),
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyModelClass(_)), "got {err}");
    }

    #[test]
    fn incremental_estimators_match_batch_replay() {
        let spec = hand_instance();
        let theta_net = build_theta_net(spec.dim, 1.0, 0.5, 100_000, 0).unwrap();
        let net = ValueNet::build(&spec, &theta_net);
        let params = WlsParams::from_scale(spec.dim, 16, spec.horizon, 0.1);
        let mut learner =
            HfLearner::new(net.clone(), spec.dim, params.clone(), VofulParams::default()).unwrap();
        let mut env_rng = stream_rng(7, streams::ENVIRONMENT);
        let mut pol_rng = stream_rng(7, streams::POLICY);
        let mut flat: Vec<(DVector<f64>, usize)> = Vec::new();
        for _ in 0..16 {
            let actions: Vec<usize> = (0..spec.horizon * spec.num_states)
                .map(|_| rand::Rng::random_range(&mut pol_rng, 0..spec.num_actions))
                .collect();
            let policy = TabularPolicy::new(spec.horizon, spec.num_states, actions).unwrap();
            let traj = rollout(&spec, &policy, &mut env_rng);
            for h in 0..spec.horizon {
                flat.push((spec.feature_vec(traj.states[h], traj.actions[h]), traj.states[h + 1]));
            }
            learner.observe_episode(&spec, &traj).unwrap();
        }
        assert_eq!(learner.confidence().n(), 16 * spec.horizon);
        for &row in learner.confidence().rows() {
            let est = learner.confidence().estimator(row);
            let samples: Vec<(DVector<f64>, f64, f64)> = flat
                .iter()
                .map(|(phi, s_next)| {
                    (phi.clone(), net.values[row][*s_next], net.squares[row][*s_next])
                })
                .collect();
            let batch = wls_estimate(spec.dim, params.clone(), &samples).unwrap();
            let gap = (est.theta_hat() - batch.theta_hat()).norm();
            assert!(gap < 1e-7, "row {row}: incremental vs batch gap {gap}");
        }
    }

    #[test]
    fn learner_bookkeeping_and_reward_scaling() {
        let spec = hand_instance();
        let theta_net = build_theta_net(spec.dim, 1.0, 1.0, 100_000, 0).unwrap();
        let net = ValueNet::build(&spec, &theta_net);
        let params = WlsParams::from_scale(spec.dim, 8, spec.horizon, 0.1);
        let mut learner =
            HfLearner::new(net, spec.dim, params, VofulParams::default()).unwrap();
        let mut env_rng = stream_rng(3, streams::ENVIRONMENT);
        let policy = optimal_values(&spec).policy;
        for k in 1..=8usize {
            let traj = rollout(&spec, &policy, &mut env_rng);
            learner.observe_episode(&spec, &traj).unwrap();
            assert_eq!(learner.episodes(), k);
            assert_eq!(learner.confidence().n(), k * spec.horizon);
            assert_eq!(learner.voful().n(), k * spec.horizon);
        }
        assert_eq!(learner.voful().checkpoints().len(), 8);
        // Rewards are deterministic, so the scaled stream (phi/sqrt(d),
        // r/sqrt(d)) is noiseless for theta_r and membership holds at every
        // prefix.
        let theta_r = DVector::from_column_slice(&spec.theta_r);
        for k in 0..=learner.voful().n() {
            assert!(learner.voful().member_at_prefix(&theta_r, k), "rejected at prefix {k}");
        }
    }

    #[test]
    fn planning_is_deterministic() {
        let spec = hand_instance();
        let theta_net = build_theta_net(spec.dim, 1.0, 0.5, 100_000, 0).unwrap();
        let net = ValueNet::build(&spec, &theta_net);
        let params = WlsParams::from_scale(spec.dim, 8, spec.horizon, 0.1);
        let build = || {
            let mut learner =
                HfLearner::new(net.clone(), spec.dim, params.clone(), VofulParams::default())
                    .unwrap();
            let mut env_rng = stream_rng(11, streams::ENVIRONMENT);
            let policy = optimal_values(&spec).policy;
            for _ in 0..8 {
                let traj = rollout(&spec, &policy, &mut env_rng);
                learner.observe_episode(&spec, &traj).unwrap();
            }
            learner.plan(&spec).unwrap()
        };
        let a = build();
        let b = build();
        assert_eq!(a.policy.actions, b.policy.actions);
        assert_eq!(a.optimistic_values, b.optimistic_values);
        assert_eq!(a.bonuses, b.bonuses);
        assert_eq!(a.projection_errors, b.projection_errors);
    }

    #[test]
    fn projection_error_bounds_the_optimism_gap() {
        // With exact plug-in estimators, zero bonuses, and the true reward,
        // the only losses in the backup are the per-step net projections,
        // so V_bar_1 >= V*_1 - H * max_err must hold deterministically.
        let mut accepted = 0usize;
        for seed in 0..40u64 {
            let spec = match generate_spec(&GeneratorParams {
                num_states: 3,
                num_actions: 2,
                horizon: 4,
                dim: 3,
                seed,
                ..GeneratorParams::default()
            }) {
                Ok(s) => s,
                Err(_) => continue,
            };
            accepted += 1;
            let theta_net = build_theta_net(spec.dim, 2.0, 1.0, 100_000, seed).unwrap();
            let net = ValueNet::build(&spec, &theta_net);
            let conf =
                TransitionConfidence::plug_in_exact(&net, &spec, zero_bonus_params()).unwrap();
            let voful = single_reward_voful(&spec);
            let plan = plan_bonus(&conf, &net, &voful, &spec).unwrap();
            let worst = plan.projection_errors.iter().fold(0.0f64, |m, &e| m.max(e));
            let star = optimal_values(&spec).v[0][spec.initial_state];
            let root = plan.optimistic_values[0][spec.initial_state];
            assert!(
                root >= star - (spec.horizon as f64) * worst - 1e-9,
                "seed {seed}: V_bar {root} < V* {star} - H*{worst}"
            );
            for row in &plan.optimistic_values {
                for &v in row {
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
        assert!(accepted >= 20, "only {accepted} generated specs were valid");
    }

    #[test]
    fn exact_mode_prefers_uniformly_richer_rewards() {
        let spec = hand_instance();
        let theta_net = build_theta_net(spec.dim, 1.0, 1.0, 100_000, 0).unwrap();
        let net = ValueNet::build(&spec, &theta_net);
        let params = WlsParams::from_scale(spec.dim, 64, spec.horizon, 0.01);
        let conf = TransitionConfidence::new(&net, spec.dim, params).unwrap();
        let voful = VofulState::new(spec.dim, VofulParams::default()).unwrap();
        let truth = ModelCandidate::from_spec(&spec);
        let mut richer = truth.clone();
        richer.theta_r *= 1.5;
        let plan = plan_exact(
            &[truth, richer],
            &conf,
            &net,
            &voful,
            &spec,
            &feature_probes(&spec),
        )
        .unwrap();
        assert_eq!(plan.chosen_candidate, Some(1));
        assert_eq!(plan.survivors, 2);
    }

    #[test]
    fn duplicate_net_rows_share_one_estimator() {
        let spec = hand_instance();
        // Doubling a parameter vector often leaves the clamped value row
        // unchanged; verify aliases resolve to the same slot and the slot
        // count matches the distinct rows.
        let theta_net = build_theta_net(spec.dim, 2.0, 0.5, 100_000, 0).unwrap();
        let net = ValueNet::build(&spec, &theta_net);
        let conf = TransitionConfidence::new(&net, spec.dim, zero_bonus_params()).unwrap();
        assert_eq!(conf.num_estimators(), net.distinct.len());
        assert!(net.distinct.len() < net.len(), "expected duplicate rows in this net");
        for idx in 0..net.len() {
            let canon = net.canonical[idx];
            assert!(std::ptr::eq(conf.estimator(idx), conf.estimator(canon)));
        }
    }
}
