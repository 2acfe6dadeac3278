//! Independent verification machinery: exact gradients and deterministic
//! ascent on capped discrete instances, the Kantorovich-relaxation LP in
//! exact rational arithmetic, and duality-gap computation.

use crate::costmodel::CostModel;
use crate::error::{Error, Result};
use crate::population::{DiscretePopulation, Location, Population};
use crate::simplex::{self, rational_from_f64, rational_to_f64, StandardLp};
use crate::solver::{argmin_facility, project_v_to_w, VMatrix, WeightMatrix};
use num_rational::BigRational;
use num_traits::Zero;

pub const MAX_SITES: usize = 40;
pub const MAX_FACILITIES: usize = 4;
pub const MAX_GROUPS: usize = 3;

/// A discrete instance small enough for exact LP solves and exhaustive sums.
pub struct DiscreteInstance {
    pop: Population,
    cost: CostModel,
}

impl DiscreteInstance {
    pub fn new(discrete: DiscretePopulation, cost: CostModel) -> Result<Self> {
        if discrete.sites().len() > MAX_SITES {
            return Err(Error::Config(format!(
                "oracle instances are capped at {MAX_SITES} sites"
            )));
        }
        if cost.k() > MAX_FACILITIES {
            return Err(Error::Config(format!(
                "oracle instances are capped at K = {MAX_FACILITIES}"
            )));
        }
        if discrete.group_count() > MAX_GROUPS {
            return Err(Error::Config(format!(
                "oracle instances are capped at M = {MAX_GROUPS}"
            )));
        }
        let pop = Population::Discrete(discrete);
        cost.validate_against(&pop)?;
        Ok(DiscreteInstance { pop, cost })
    }

    pub fn population(&self) -> &Population {
        &self.pop
    }

    pub fn discrete(&self) -> &DiscretePopulation {
        match &self.pop {
            Population::Discrete(d) => d,
            Population::Mixture(_) => unreachable!(),
        }
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    pub fn k(&self) -> usize {
        self.cost.k()
    }

    pub fn m(&self) -> usize {
        self.pop.group_count()
    }

    pub fn sites(&self) -> usize {
        self.discrete().sites().len()
    }

    /// Collapse groups: the fairness-free view of the same instance.
    pub fn merged(&self) -> DiscreteInstance {
        let merged = match self.pop.merged() {
            Population::Discrete(d) => d,
            Population::Mixture(_) => unreachable!(),
        };
        DiscreteInstance {
            pop: Population::Discrete(merged),
            cost: self.cost.clone(),
        }
    }

    fn cost_at(&self, site: usize, k: usize) -> f64 {
        self.cost
            .cost(&self.pop, Location::Site(site), k)
            .expect("validated instance")
    }

    /// Lowest-index argmin of the effective score at every populated site.
    pub fn assignments(&self, weights: &WeightMatrix) -> Vec<Option<usize>> {
        self.discrete()
            .sites()
            .iter()
            .enumerate()
            .map(|(s, site)| {
                if site.total() > 0.0 {
                    Some(
                        argmin_facility(weights, &self.pop, &self.cost, Location::Site(s))
                            .expect("positive site total"),
                    )
                } else {
                    None
                }
            })
            .collect()
    }

    /// Exact dual objective at the given weights: the finite-sum version of
    /// E{min_k [c(X,k) - E(w_{k,Z}|X)]}, plus the p'q'w term in fixed-p mode.
    pub fn exact_dual_value(&self, weights: &WeightMatrix, p: Option<&[f64]>) -> f64 {
        let d = self.discrete();
        let q = d.priors();
        let mut value = 0.0;
        for (s, site) in d.sites().iter().enumerate() {
            let total = site.total();
            if total <= 0.0 {
                continue;
            }
            let mut best = f64::INFINITY;
            for k in 0..self.k() {
                let mix: f64 = weights
                    .row(k)
                    .iter()
                    .zip(&site.counts)
                    .map(|(w, c)| w * c / total)
                    .sum();
                best = best.min(self.cost_at(s, k) - mix);
            }
            value += d.site_mass(s) * best;
        }
        if let Some(p) = p {
            for k in 0..self.k() {
                for z in 0..self.m() {
                    value += p[k] * q[z] * weights.get(k, z);
                }
            }
        }
        value
    }

    /// Exact region masses induced by the weights.
    pub fn exact_masses(&self, weights: &WeightMatrix) -> Vec<f64> {
        let d = self.discrete();
        let mut masses = vec![0.0; self.k()];
        for (s, a) in self.assignments(weights).iter().enumerate() {
            if let Some(k) = a {
                masses[*k] += d.site_mass(s);
            }
        }
        masses
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    OptimalP,
    FixedP,
}

/// Exact expectation of the SA update direction, by summation over
/// (site, group) pairs instead of sampling. Optimal-p mode returns the
/// gradient of the projected unconstrained dual in v-space; fixed-p mode
/// returns p_k q_z - P(Y=k, Z=z).
pub fn exact_gradient(
    weights: &WeightMatrix,
    instance: &DiscreteInstance,
    mode: GradientMode,
    p: Option<&[f64]>,
) -> Vec<f64> {
    let d = instance.discrete();
    let q = d.priors();
    let m = instance.m();
    let kk = instance.k();
    let qq: f64 = q.iter().map(|x| x * x).sum();
    let assignments = instance.assignments(weights);
    // joint[k][z] = P(Y = k, Z = z)
    let mut joint = vec![0.0; kk * m];
    for (s, a) in assignments.iter().enumerate() {
        if let Some(k) = a {
            for z in 0..m {
                joint[k * m + z] += d.sites()[s].counts[z] / d.grand_total();
            }
        }
    }
    let mut grad = vec![0.0; kk * m];
    match mode {
        GradientMode::OptimalP => {
            for k in 0..kk {
                // E[q_Z 1{Y=k}] = sum_z q_z P(Y=k, Z=z)
                let qmass: f64 = (0..m).map(|z| q[z] * joint[k * m + z]).sum();
                for z in 0..m {
                    grad[k * m + z] = qmass * q[z] / qq - joint[k * m + z];
                }
            }
        }
        GradientMode::FixedP => {
            let p = p.expect("fixed-p gradient needs p");
            for k in 0..kk {
                for z in 0..m {
                    grad[k * m + z] = p[k] * q[z] - joint[k * m + z];
                }
            }
        }
    }
    grad
}

#[derive(Debug, Clone)]
pub struct AscentConfig {
    pub iterations: u64,
    /// None picks the cost model's default scale.
    pub step_scale: Option<f64>,
    /// Evaluate the averaged iterate every this many steps and keep the best.
    pub checkpoint_every: u64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig {
            iterations: 200_000,
            step_scale: None,
            checkpoint_every: 1_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AscentResult {
    pub weights: WeightMatrix,
    pub dual_value: f64,
    /// (iteration, exact dual value of the running average)
    pub checkpoints: Vec<(u64, f64)>,
}

/// Deterministic supergradient ascent in v-space using exact gradients, with
/// the alpha / sqrt(n+1) stepsize and Polyak averaging. Sampling-free
/// reference optimizer for the free-p dual.
pub fn exact_ascent(instance: &DiscreteInstance, config: &AscentConfig) -> Result<AscentResult> {
    let kk = instance.k();
    let m = instance.m();
    let q = instance.population().priors().to_vec();
    let alpha = config
        .step_scale
        .unwrap_or_else(|| instance.cost_model().default_step_scale());
    let mut v = vec![0.0; kk * m];
    let mut avg = vec![0.0; kk * m];
    let mut checkpoints = Vec::new();
    let mut best_value = f64::NEG_INFINITY;
    let mut best_weights =
        WeightMatrix::zero(kk, &q);
    for n in 0..config.iterations {
        let vm = VMatrix::from_flat(kk, m, v.clone())?;
        let w = project_v_to_w(&vm, &q);
        let grad = exact_gradient(&w, instance, GradientMode::OptimalP, None);
        let step = alpha / ((n + 1) as f64).sqrt();
        for (vi, g) in v.iter_mut().zip(&grad) {
            *vi += step * g;
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let c = (n + 1) as f64;
        for (a, vi) in avg.iter_mut().zip(&v) {
            *a += (vi - *a) / c;
        }
        if (n + 1) % config.checkpoint_every == 0 || n + 1 == config.iterations {
            let am = VMatrix::from_flat(kk, m, avg.clone())?;
            let aw = project_v_to_w(&am, &q);
            let value = instance.exact_dual_value(&aw, None);
            checkpoints.push((n + 1, value));
            if value > best_value {
                best_value = value;
                best_weights = aw;
            }
            // the raw iterate is a valid dual point too and often overshoots
            // the average early on; weak duality makes best-of sound
            let rm = VMatrix::from_flat(kk, m, v.clone())?;
            let rw = project_v_to_w(&rm, &q);
            let raw_value = instance.exact_dual_value(&rw, None);
            if raw_value > best_value {
                best_value = raw_value;
                best_weights = rw;
            }
        }
    }
    Ok(AscentResult {
        weights: best_weights,
        dual_value: best_value,
        checkpoints,
    })
}

/// Exact primal solution of the Kantorovich relaxation on a capped instance.
#[derive(Debug, Clone)]
pub struct LpSolution {
    /// g[s][k] = P(Y = k | X = site s)
    pub g: Vec<Vec<f64>>,
    /// Region sizes: given in fixed-p mode, recovered in free-p mode.
    pub p: Vec<f64>,
    pub objective: f64,
    pub max_marginal_residual: f64,
}

/// Solve the relaxation exactly: fixed p constrains the (k, z) marginals to
/// p_k; free p adds the region sizes as variables (the outer minimization).
pub fn lp_primal(instance: &DiscreteInstance, p: Option<&[f64]>) -> Result<LpSolution> {
    let d = instance.discrete();
    let sites: Vec<usize> = (0..d.sites().len())
        .filter(|&s| d.sites()[s].total() > 0.0)
        .collect();
    let ns = sites.len();
    let kk = instance.k();
    let m = instance.m();
    if let Some(p) = p {
        if p.len() != kk {
            return Err(Error::DimensionMismatch("p must have length K".into()));
        }
    }
    let free_p = p.is_none();
    // variables: g[s][k] (ns*kk of them), then p_k if free
    let n_vars = ns * kk + if free_p { kk } else { 0 };
    let g_idx = |si: usize, k: usize| si * kk + k;
    let p_idx = |k: usize| ns * kk + k;

    let mut a: Vec<Vec<BigRational>> = Vec::new();
    let mut b: Vec<BigRational> = Vec::new();
    // sum_k g[s][k] = 1 per site
    for si in 0..ns {
        let mut row = vec![BigRational::zero(); n_vars];
        for k in 0..kk {
            row[g_idx(si, k)] = simplex::int(1);
        }
        a.push(row);
        b.push(simplex::int(1));
    }
    // Exactly normalized rational pmfs: building them from the float pmf
    // values breaks feasibility, since the site rows force each group's
    // conditional to sum to exactly 1.
    let group_totals: Vec<BigRational> = (0..m)
        .map(|z| {
            sites
                .iter()
                .map(|&s| rational_from_f64(d.sites()[s].counts[z]))
                .sum()
        })
        .collect();
    let pmf = |z: usize, s: usize| rational_from_f64(d.sites()[s].counts[z]) / &group_totals[z];
    // in fixed-p mode the float vector is renormalized the same way
    let p_exact: Option<Vec<BigRational>> = p.map(|p| {
        let total: BigRational = p.iter().map(|&v| rational_from_f64(v)).sum();
        p.iter().map(|&v| rational_from_f64(v) / &total).collect()
    });
    // sum_s g[s][k] f_z(s) = p_k per (k, z)
    for k in 0..kk {
        for z in 0..m {
            let mut row = vec![BigRational::zero(); n_vars];
            for (si, &s) in sites.iter().enumerate() {
                row[g_idx(si, k)] = pmf(z, s);
            }
            if free_p {
                row[p_idx(k)] = simplex::int(-1);
                a.push(row);
                b.push(BigRational::zero());
            } else {
                a.push(row);
                b.push(p_exact.as_ref().unwrap()[k].clone());
            }
        }
    }
    // objective: sum_{s,k} mu_s c(s,k) g[s][k]
    let grand: BigRational = group_totals.iter().sum();
    let mut c = vec![BigRational::zero(); n_vars];
    for (si, &s) in sites.iter().enumerate() {
        let total: BigRational = (0..m)
            .map(|z| rational_from_f64(d.sites()[s].counts[z]))
            .sum();
        let mass = total / &grand;
        for k in 0..kk {
            c[g_idx(si, k)] = &mass * rational_from_f64(instance.cost_at(s, k));
        }
    }

    let opt = simplex::solve(&StandardLp { a, b, c })?;

    let mut g = vec![vec![0.0; kk]; d.sites().len()];
    for (si, &s) in sites.iter().enumerate() {
        for k in 0..kk {
            g[s][k] = rational_to_f64(&opt.x[g_idx(si, k)]);
        }
    }
    let p_out: Vec<f64> = match p {
        Some(p) => p.to_vec(),
        None => (0..kk).map(|k| rational_to_f64(&opt.x[p_idx(k)])).collect(),
    };
    // marginal residuals, recomputed in floating point as a cross-check
    let mut max_res: f64 = 0.0;
    for k in 0..kk {
        for z in 0..m {
            let lhs: f64 = sites.iter().map(|&s| g[s][k] * d.pmf(z, s)).sum();
            max_res = max_res.max((lhs - p_out[k]).abs());
        }
    }
    Ok(LpSolution {
        g,
        p: p_out,
        objective: rational_to_f64(&opt.objective),
        max_marginal_residual: max_res,
    })
}

/// Primal-optimum minus exact dual value at the given weights; nonnegative
/// up to rounding by weak duality, zero at the optimum.
pub fn duality_gap(
    instance: &DiscreteInstance,
    weights: &WeightMatrix,
    p: Option<&[f64]>,
) -> Result<f64> {
    let primal = lp_primal(instance, p)?;
    Ok(primal.objective - instance.exact_dual_value(weights, p))
}
