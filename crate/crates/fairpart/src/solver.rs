//! Stochastic-approximation solver for the dual weights of the fair
//! partitioning problem: ascent in projected v-space when region sizes are
//! optimized, ascent in w-space when they are fixed, with Polyak averaging.

use crate::costmodel::CostModel;
use crate::error::{Error, Result};
use crate::population::{Location, Population};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The K x M dual weights w_{k,z} defining the generalized additively
/// weighted Voronoi diagram. Rows are facilities. In optimal-p mode every row
/// is orthogonal to the priors: sum_z q_z w_{k,z} = 0, enforced by
/// construction through projection. The dual functionals psi_z(k) of the
/// Kantorovich dual are recovered as psi_z(k) = q_z * w_{k,z}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    k: usize,
    m: usize,
    w: Vec<f64>,
    q: Vec<f64>,
}

impl WeightMatrix {
    pub fn zero(k: usize, q: &[f64]) -> Self {
        WeightMatrix {
            k,
            m: q.len(),
            w: vec![0.0; k * q.len()],
            q: q.to_vec(),
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, q: &[f64]) -> Result<Self> {
        let m = q.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch(
                "weight rows must have length M".into(),
            ));
        }
        Ok(WeightMatrix {
            k: rows.len(),
            m,
            w: rows.into_iter().flatten().collect(),
            q: q.to_vec(),
        })
    }

    pub fn from_flat(k: usize, m: usize, w: Vec<f64>, q: &[f64]) -> Result<Self> {
        if w.len() != k * m || q.len() != m {
            return Err(Error::DimensionMismatch("weight matrix shape".into()));
        }
        Ok(WeightMatrix {
            k,
            m,
            w,
            q: q.to_vec(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.w[k * self.m..(k + 1) * self.m]
    }

    pub fn get(&self, k: usize, z: usize) -> f64 {
        self.w[k * self.m + z]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.w
    }

    /// sum_z q_z w_{k,z} for row k; zero in optimal-p mode.
    pub fn row_constraint_residual(&self, k: usize) -> f64 {
        self.row(k).iter().zip(&self.q).map(|(w, q)| w * q).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.w.iter().fold(0.0, |a: f64, &b| a.max(b.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|v| v.is_finite())
    }
}

/// Unconstrained iterate of the optimal-p formulation; projecting each row
/// onto the orthogonal complement of q yields the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VMatrix {
    k: usize,
    m: usize,
    v: Vec<f64>,
}

impl VMatrix {
    pub fn zero(k: usize, m: usize) -> Self {
        VMatrix {
            k,
            m,
            v: vec![0.0; k * m],
        }
    }

    pub fn from_flat(k: usize, m: usize, v: Vec<f64>) -> Result<Self> {
        if v.len() != k * m {
            return Err(Error::DimensionMismatch("v matrix shape".into()));
        }
        Ok(VMatrix { k, m, v })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, k: usize, z: usize) -> f64 {
        self.v[k * self.m + z]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.v
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().all(|v| v.is_finite())
    }
}

/// Project each row of v onto the orthogonal complement of q:
/// w_{k,z} = v_{k,z} - (sum_{z'} q_{z'} v_{k,z'} / q'q) q_z.
pub fn project_v_to_w(v: &VMatrix, q: &[f64]) -> WeightMatrix {
    let qq: f64 = q.iter().map(|x| x * x).sum();
    let m = v.m;
    let mut w = vec![0.0; v.v.len()];
    for k in 0..v.k {
        let row = &v.v[k * m..(k + 1) * m];
        let s: f64 = row.iter().zip(q).map(|(v, q)| v * q).sum::<f64>() / qq;
        for z in 0..m {
            w[k * m + z] = row[z] - s * q[z];
        }
    }
    WeightMatrix {
        k: v.k,
        m,
        w,
        q: q.to_vec(),
    }
}

/// c(x,k) - E(w_{k,Z} | X=x), the effective score whose argmin induces the
/// partition.
pub fn effective_score(
    weights: &WeightMatrix,
    pop: &Population,
    cost: &CostModel,
    loc: Location,
    k: usize,
) -> Result<f64> {
    let post = pop.posterior(loc)?;
    score_with_posterior(weights, pop, cost, loc, k, &post)
}

fn score_with_posterior(
    weights: &WeightMatrix,
    pop: &Population,
    cost: &CostModel,
    loc: Location,
    k: usize,
    post: &[f64],
) -> Result<f64> {
    let c = cost.cost(pop, loc, k)?;
    let mix: f64 = weights.row(k).iter().zip(post).map(|(w, p)| w * p).sum();
    Ok(c - mix)
}

/// Smallest index among the minimizers of the effective score.
pub fn argmin_facility(
    weights: &WeightMatrix,
    pop: &Population,
    cost: &CostModel,
    loc: Location,
) -> Result<usize> {
    let post = pop.posterior(loc)?;
    argmin_with_posterior(weights, pop, cost, loc, &post)
}

fn argmin_with_posterior(
    weights: &WeightMatrix,
    pop: &Population,
    cost: &CostModel,
    loc: Location,
    post: &[f64],
) -> Result<usize> {
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for k in 0..weights.k {
        let s = score_with_posterior(weights, pop, cost, loc, k, post)?;
        if s < best_score {
            best_score = s;
            best = k;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    OptimalP,
    FixedP(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Full,
    Tail(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub mode: SolverMode,
    pub iterations: u64,
    /// Stepsize is step_scale / sqrt(n+1); None picks half the median
    /// pairwise facility cost.
    pub step_scale: Option<f64>,
    pub seed: u64,
    /// Monte Carlo budget for the final dual estimate and region masses.
    pub eval_samples: usize,
    /// Budget for per-checkpoint trace statistics.
    pub checkpoint_samples: usize,
    pub averaging: Averaging,
}

impl SolverConfig {
    pub fn new(mode: SolverMode, iterations: u64, seed: u64) -> Self {
        SolverConfig {
            mode,
            iterations,
            step_scale: None,
            seed,
            eval_samples: 100_000,
            checkpoint_samples: 5_000,
            averaging: Averaging::Full,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if let SolverMode::FixedP(p) = &self.mode {
            let _ = m;
            if p.is_empty() {
                return Err(Error::Config("solver.fixed_p must not be empty".into()));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "solver.fixed_p must sum to 1 (got {sum})"
                )));
            }
            if p.iter().any(|&x| x < 0.0) {
                return Err(Error::Config("solver.fixed_p entries must be >= 0".into()));
            }
        }
        if let Averaging::Tail(f) = self.averaging {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(
                    "solver.averaging tail fraction must lie in (0, 1]".into(),
                ));
            }
        }
        if let Some(a) = self.step_scale {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Config("solver.step_scale must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Raw iterate, running Polyak average, and counters of one SA run.
#[derive(Debug, Clone)]
pub struct SolverState {
    /// v in optimal-p mode, w in fixed-p mode.
    pub iterate: Vec<f64>,
    avg: Vec<f64>,
    avg_count: u64,
    /// First step index (0-based) whose iterate enters the average.
    avg_start: u64,
    pub n: u64,
    pub discarded: u64,
    k: usize,
    m: usize,
    qq: f64,
    step_scale: f64,
}

impl SolverState {
    pub fn new(k: usize, m: usize, q: &[f64], step_scale: f64, avg_start: u64) -> Self {
        SolverState {
            iterate: vec![0.0; k * m],
            avg: vec![0.0; k * m],
            avg_count: 0,
            avg_start,
            n: 0,
            discarded: 0,
            k,
            m,
            qq: q.iter().map(|x| x * x).sum(),
            step_scale,
        }
    }

    pub fn stepsize(&self) -> f64 {
        self.step_scale / ((self.n + 1) as f64).sqrt()
    }

    fn absorb_iterate(&mut self) {
        // tail averaging: the first avg_start iterates never enter
        if self.n <= self.avg_start {
            return;
        }
        self.avg_count += 1;
        let c = self.avg_count as f64;
        for (a, v) in self.avg.iter_mut().zip(&self.iterate) {
            *a += (v - *a) / c;
        }
    }

    /// Running Polyak mean of the iterates seen so far.
    pub fn polyak_average(&self) -> VMatrix {
        VMatrix {
            k: self.k,
            m: self.m,
            v: self.avg.clone(),
        }
    }

    pub fn v_matrix(&self) -> VMatrix {
        VMatrix {
            k: self.k,
            m: self.m,
            v: self.iterate.clone(),
        }
    }
}

/// One Algorithm-1 step in v-space: project, pick the winning facility, and
/// move the winner's row along the ascent direction of the unconstrained
/// dual. Returns the winner.
pub fn sa_step_optimal_p(
    state: &mut SolverState,
    sample: (Location, usize),
    pop: &Population,
    cost: &CostModel,
    post_buf: &mut Vec<f64>,
) -> Result<usize> {
    let (loc, z) = sample;
    let q = pop.priors();
    post_buf.resize(q.len(), 0.0);
    match pop.posterior_into(loc, post_buf) {
        Ok(()) => {}
        Err(Error::ZeroDensity) => {
            state.discarded += 1;
            return Err(Error::ZeroDensity);
        }
        Err(e) => return Err(e),
    }
    let v = VMatrix {
        k: state.k,
        m: state.m,
        v: state.iterate.clone(),
    };
    let w = project_v_to_w(&v, q);
    let winner = argmin_with_posterior(&w, pop, cost, loc, post_buf)?;
    let alpha = state.stepsize();
    let m = state.m;
    for zp in 0..m {
        let indicator = if zp == z { 1.0 } else { 0.0 };
        // ascent direction of the projected dual: q_Z q_z / q'q - 1{z'=z}
        state.iterate[winner * m + zp] += alpha * (q[z] * q[zp] / state.qq - indicator);
    }
    state.n += 1;
    state.absorb_iterate();
    Ok(winner)
}

/// One fixed-p step in w-space (no projection): ascent on the root system
/// residual p_k q_{z'} - 1{k=k*} 1{z'=z}, applied to every entry.
pub fn sa_step_fixed_p(
    state: &mut SolverState,
    sample: (Location, usize),
    p: &[f64],
    pop: &Population,
    cost: &CostModel,
    post_buf: &mut Vec<f64>,
) -> Result<usize> {
    let (loc, z) = sample;
    let q = pop.priors();
    post_buf.resize(q.len(), 0.0);
    match pop.posterior_into(loc, post_buf) {
        Ok(()) => {}
        Err(Error::ZeroDensity) => {
            state.discarded += 1;
            return Err(Error::ZeroDensity);
        }
        Err(e) => return Err(e),
    }
    let w = WeightMatrix {
        k: state.k,
        m: state.m,
        w: state.iterate.clone(),
        q: q.to_vec(),
    };
    let winner = argmin_with_posterior(&w, pop, cost, loc, post_buf)?;
    let alpha = state.stepsize();
    let m = state.m;
    for k in 0..state.k {
        for zp in 0..m {
            let hit = if k == winner && zp == z { 1.0 } else { 0.0 };
            state.iterate[k * m + zp] += alpha * (p[k] * q[zp] - hit);
        }
    }
    state.n += 1;
    state.absorb_iterate();
    Ok(winner)
}

/// Monte Carlo estimate (mean, standard error) of the dual objective
/// E{min_k [c(X,k) - E(w_{k,Z}|X)]} at the given weights.
pub fn dual_objective_estimate(
    weights: &WeightMatrix,
    pop: &Population,
    cost: &CostModel,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut post = vec![0.0; pop.group_count()];
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut n = 0u64;
    let mut discarded = 0u64;
    for _ in 0..n_samples {
        let (loc, _) = pop.sample_joint(&mut rng);
        match pop.posterior_into(loc, &mut post) {
            Ok(()) => {}
            Err(Error::ZeroDensity) => {
                discarded += 1;
                continue;
            }
            Err(e) => return Err(e),
        }
        let mut best = f64::INFINITY;
        for k in 0..weights.k {
            let s = score_with_posterior(weights, pop, cost, loc, k, &post)?;
            if s < best {
                best = s;
            }
        }
        sum += best;
        sumsq += best * best;
        n += 1;
    }
    check_discard_rate(discarded, n_samples as u64)?;
    if n == 0 {
        return Err(Error::Degenerate {
            discarded,
            total: n_samples as u64,
        });
    }
    let mean = sum / n as f64;
    let var = (sumsq / n as f64 - mean * mean).max(0.0);
    Ok((mean, (var / n as f64).sqrt()))
}

/// Monte Carlo estimate of the region masses p_k = P(Y = k).
pub fn region_masses(
    weights: &WeightMatrix,
    pop: &Population,
    cost: &CostModel,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut post = vec![0.0; pop.group_count()];
    let mut counts = vec![0u64; weights.k];
    let mut n = 0u64;
    let mut discarded = 0u64;
    for _ in 0..n_samples {
        let (loc, _) = pop.sample_joint(&mut rng);
        match pop.posterior_into(loc, &mut post) {
            Ok(()) => {}
            Err(Error::ZeroDensity) => {
                discarded += 1;
                continue;
            }
            Err(e) => return Err(e),
        }
        let k = argmin_with_posterior(weights, pop, cost, loc, &post)?;
        counts[k] += 1;
        n += 1;
    }
    check_discard_rate(discarded, n_samples as u64)?;
    Ok(counts.iter().map(|&c| c as f64 / n as f64).collect())
}

/// Monte Carlo estimate of max_{k,z} |P(Y=k|Z=z) - P(Y=k)|.
pub fn fairness_deviation_estimate(
    weights: &WeightMatrix,
    pop: &Population,
    cost: &CostModel,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut post = vec![0.0; pop.group_count()];
    let (kk, m) = (weights.k, weights.m);
    let mut joint = vec![0u64; kk * m];
    let mut by_group = vec![0u64; m];
    let mut by_facility = vec![0u64; kk];
    let mut n = 0u64;
    let mut discarded = 0u64;
    for _ in 0..n_samples {
        let (loc, z) = pop.sample_joint(&mut rng);
        match pop.posterior_into(loc, &mut post) {
            Ok(()) => {}
            Err(Error::ZeroDensity) => {
                discarded += 1;
                continue;
            }
            Err(e) => return Err(e),
        }
        let k = argmin_with_posterior(weights, pop, cost, loc, &post)?;
        joint[k * m + z] += 1;
        by_group[z] += 1;
        by_facility[k] += 1;
        n += 1;
    }
    check_discard_rate(discarded, n_samples as u64)?;
    let mut dev: f64 = 0.0;
    for k in 0..kk {
        let mass = by_facility[k] as f64 / n as f64;
        for z in 0..m {
            if by_group[z] == 0 {
                continue;
            }
            let share = joint[k * m + z] as f64 / by_group[z] as f64;
            dev = dev.max((share - mass).abs());
        }
    }
    Ok(dev)
}

pub fn check_discard_rate(discarded: u64, total: u64) -> Result<()> {
    // a run aborts if more than 0.1% of samples fall outside the support
    if discarded > 10 && discarded * 1000 > total {
        return Err(Error::Degenerate { discarded, total });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub n: u64,
    pub dual_estimate: f64,
    pub stderr: f64,
    pub max_fairness_dev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    /// Averaged iterate, projected in optimal-p mode.
    pub weights: WeightMatrix,
    pub raw_final: VMatrix,
    pub dual_value_estimate: (f64, f64),
    pub region_masses: Vec<f64>,
    pub trace: Vec<TracePoint>,
    pub discarded: u64,
    pub step_scale: f64,
}

// deterministic sub-seeds per module, all derived from the master seed
pub const SEED_SOLVE: u64 = 0x5eed_0001;
pub const SEED_EVAL: u64 = 0x5eed_0002;
pub const SEED_TRACE: u64 = 0x5eed_0003;

/// Run the configured SA loop end to end: N steps, trace checkpoints every
/// N/100 steps, averaged weights out.
pub fn run(config: &SolverConfig, pop: &Population, cost: &CostModel) -> Result<SolverResult> {
    let m = pop.group_count();
    let k = cost.k();
    let q = pop.priors().to_vec();
    config.validate(m)?;
    cost.validate_against(pop)?;
    if let SolverMode::FixedP(p) = &config.mode {
        if p.len() != k {
            return Err(Error::Config(format!(
                "solver.fixed_p has {} entries, expected K = {k}",
                p.len()
            )));
        }
    }
    let step_scale = config.step_scale.unwrap_or_else(|| cost.default_step_scale());
    let n_total = config.iterations;
    let avg_start = match config.averaging {
        Averaging::Full => 0,
        Averaging::Tail(f) => n_total - ((f * n_total as f64).ceil() as u64).min(n_total),
    };
    let mut state = SolverState::new(k, m, &q, step_scale, avg_start);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(SEED_SOLVE));
    let mut post_buf = vec![0.0; m];
    let checkpoint_every = (n_total / 100).max(1);
    let mut trace = Vec::new();

    let mut steps_done = 0u64;
    while steps_done < n_total {
        let sample = pop.sample_joint(&mut rng);
        let r = match &config.mode {
            SolverMode::OptimalP => {
                sa_step_optimal_p(&mut state, sample, pop, cost, &mut post_buf)
            }
            SolverMode::FixedP(p) => {
                sa_step_fixed_p(&mut state, sample, p, pop, cost, &mut post_buf)
            }
        };
        match r {
            Ok(_) => steps_done += 1,
            Err(Error::ZeroDensity) => {
                check_discard_rate(state.discarded, steps_done + state.discarded)?;
                continue;
            }
            Err(e) => return Err(e),
        }
        if steps_done % checkpoint_every == 0 || steps_done == n_total {
            let w = current_weights(&state, &config.mode, &q);
            if !w.is_finite() {
                return Err(Error::NonFinite);
            }
            let ck_seed = config
                .seed
                .wrapping_add(SEED_TRACE)
                .wrapping_add(steps_done);
            let (dual, se) =
                dual_objective_estimate(&w, pop, cost, config.checkpoint_samples, ck_seed)?;
            let dev =
                fairness_deviation_estimate(&w, pop, cost, config.checkpoint_samples, ck_seed)?;
            trace.push(TracePoint {
                n: steps_done,
                dual_estimate: dual,
                stderr: se,
                max_fairness_dev: dev,
            });
        }
    }

    let weights = current_weights(&state, &config.mode, &q);
    if !weights.is_finite() {
        return Err(Error::NonFinite);
    }
    let eval_seed = config.seed.wrapping_add(SEED_EVAL);
    let dual_value_estimate =
        dual_objective_estimate(&weights, pop, cost, config.eval_samples, eval_seed)?;
    let masses = region_masses(&weights, pop, cost, config.eval_samples, eval_seed)?;
    Ok(SolverResult {
        weights,
        raw_final: state.v_matrix(),
        dual_value_estimate,
        region_masses: masses,
        trace,
        discarded: state.discarded,
        step_scale,
    })
}

fn current_weights(state: &SolverState, mode: &SolverMode, q: &[f64]) -> WeightMatrix {
    let avg = if state.avg_count > 0 {
        state.polyak_average()
    } else {
        VMatrix::zero(state.k, state.m)
    };
    match mode {
        SolverMode::OptimalP => project_v_to_w(&avg, q),
        SolverMode::FixedP(_) => WeightMatrix {
            k: avg.k,
            m: avg.m,
            w: avg.v,
            q: q.to_vec(),
        },
    }
}

/// Classical semidiscrete OT with fixed region sizes: the M = 1
/// specialization run through the fixed-p iteration. Returns one scalar
/// weight per facility.
pub fn classical_ot_solve(
    pop: &Population,
    cost: &CostModel,
    p: &[f64],
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    let merged = pop.merged();
    let mut cfg = config.clone();
    cfg.mode = SolverMode::FixedP(p.to_vec());
    let result = run(&cfg, &merged, cost)?;
    Ok((0..result.weights.k()).map(|k| result.weights.get(k, 0)).collect())
}
