//! Monte Carlo evaluation of a solved partition: region sizes, group
//! conditional shares, per-group cost statistics, cost CDFs, and model
//! comparison tables.

use crate::costmodel::CostKind;
use crate::error::{Error, Result};
use crate::partition::PartitionHandle;
use crate::solver::check_discard_rate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Per-group cost statistics in raw distance units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    /// Estimated region sizes p_hat_k.
    pub region_shares: Vec<f64>,
    /// conditional_shares[k][z] = P(Y = k | Z = z).
    pub conditional_shares: Vec<Vec<f64>>,
    /// max over (k, z) of |P(Y = k | Z = z) - p_hat_k|.
    pub max_deviation: f64,
    pub group_stats: Vec<GroupStats>,
    pub overall: GroupStats,
    pub samples: usize,
    pub discarded: u64,
}

/// Nearest-rank percentile of a sorted slice; the even-count median is the
/// lower-rank element.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn stats_of(costs: &mut Vec<f64>) -> GroupStats {
    costs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = if costs.is_empty() {
        f64::NAN
    } else {
        costs.iter().sum::<f64>() / costs.len() as f64
    };
    GroupStats {
        mean,
        median: nearest_rank(costs, 50.0),
        p90: nearest_rank(costs, 90.0),
    }
}

/// Raw cost units: squared-Euclidean models report the square root of the
/// model cost so that every kind is comparable in distance units.
fn raw_cost(kind: CostKind, model_cost: f64) -> f64 {
    match kind {
        CostKind::SquaredEuclidean => model_cost.sqrt(),
        _ => model_cost,
    }
}

/// Evaluate a partition on one fresh sample stream. Deterministic for a
/// fixed seed.
pub fn evaluate(handle: &PartitionHandle, n_samples: usize, seed: u64) -> Result<FairnessReport> {
    let pop = handle.pop;
    let m = pop.group_count();
    let k = handle.weights.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut joint_counts = vec![0u64; k * m];
    let mut group_counts = vec![0u64; m];
    let mut all_costs: Vec<f64> = Vec::with_capacity(n_samples);
    let mut group_costs: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut discarded: u64 = 0;
    let mut accepted = 0usize;
    while accepted < n_samples {
        let (loc, z) = pop.sample_joint(&mut rng);
        let facility = match handle.assign(loc) {
            Ok(f) => f,
            Err(Error::ZeroDensity) => {
                discarded += 1;
                check_discard_rate(discarded, discarded + accepted as u64)?;
                continue;
            }
            Err(e) => return Err(e),
        };
        let cost = raw_cost(handle.cost.kind, handle.cost.cost(pop, loc, facility)?);
        joint_counts[facility * m + z] += 1;
        group_counts[z] += 1;
        all_costs.push(cost);
        group_costs[z].push(cost);
        accepted += 1;
    }
    let n = n_samples as f64;
    let region_shares: Vec<f64> = (0..k)
        .map(|f| (0..m).map(|z| joint_counts[f * m + z]).sum::<u64>() as f64 / n)
        .collect();
    let mut conditional_shares = vec![vec![0.0; m]; k];
    let mut max_deviation: f64 = 0.0;
    for f in 0..k {
        for z in 0..m {
            let share = if group_counts[z] > 0 {
                joint_counts[f * m + z] as f64 / group_counts[z] as f64
            } else {
                0.0
            };
            conditional_shares[f][z] = share;
            max_deviation = max_deviation.max((share - region_shares[f]).abs());
        }
    }
    let group_stats = group_costs.iter_mut().map(stats_of).collect();
    let overall = stats_of(&mut all_costs);
    Ok(FairnessReport {
        region_shares,
        conditional_shares,
        max_deviation,
        group_stats,
        overall,
        samples: n_samples,
        discarded,
    })
}

impl FairnessReport {
    pub fn group_count(&self) -> usize {
        self.group_stats.len()
    }
}

/// Empirical CDF of raw costs over a fresh stream.
#[derive(Debug, Clone)]
pub struct CostCdf {
    /// Sorted cost values.
    pub costs: Vec<f64>,
    /// cum[i] = fraction of samples with cost <= costs[i].
    pub cum: Vec<f64>,
}

impl CostCdf {
    fn from_costs(mut costs: Vec<f64>) -> CostCdf {
        costs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = costs.len() as f64;
        let cum = (0..costs.len()).map(|i| (i + 1) as f64 / n).collect();
        CostCdf { costs, cum }
    }
}

/// One CDF per group over a single fresh stream of n_samples draws.
pub fn cost_cdfs(handle: &PartitionHandle, n_samples: usize, seed: u64) -> Result<Vec<CostCdf>> {
    let pop = handle.pop;
    let m = pop.group_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_group: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut discarded: u64 = 0;
    let mut accepted = 0usize;
    while accepted < n_samples {
        let (loc, z) = pop.sample_joint(&mut rng);
        match handle.assign(loc) {
            Ok(f) => {
                let c = raw_cost(handle.cost.kind, handle.cost.cost(pop, loc, f)?);
                per_group[z].push(c);
                accepted += 1;
            }
            Err(Error::ZeroDensity) => {
                discarded += 1;
                check_discard_rate(discarded, discarded + accepted as u64)?;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(per_group.into_iter().map(CostCdf::from_costs).collect())
}

impl CostCdf {
    /// `cost,cum_fraction`, one line per sample.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "cost,cum_fraction")?;
        for (c, f) in self.costs.iter().zip(&self.cum) {
            writeln!(out, "{c},{f}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, path: &str) -> Result<CostCdf> {
        let mut costs = Vec::new();
        let mut cum = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 {
                if line.trim() != "cost,cum_fraction" {
                    return Err(Error::Parse {
                        path: path.into(),
                        line: 1,
                        msg: "expected header cost,cum_fraction".into(),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    msg: "expected two fields".into(),
                })?
                .trim()
                .parse()
                .map_err(|e| Error::Parse {
                    path: path.into(),
                    line: i + 1,
                    msg: format!("bad number: {e}"),
                })
            };
            costs.push(parse(parts.next())?);
            cum.push(parse(parts.next())?);
        }
        Ok(CostCdf { costs, cum })
    }
}

/// Side-by-side comparison of reports from multiple models over the same
/// statistic set.
pub struct Comparison {
    pub labels: Vec<String>,
    pub reports: Vec<FairnessReport>,
}

impl Comparison {
    pub fn new(labels: Vec<String>, reports: Vec<FairnessReport>) -> Result<Self> {
        if labels.len() != reports.len() || reports.is_empty() {
            return Err(Error::DimensionMismatch(
                "comparison needs one label per report".into(),
            ));
        }
        let m = reports[0].group_count();
        if reports.iter().any(|r| r.group_count() != m) {
            return Err(Error::DimensionMismatch(
                "all compared reports must cover the same groups".into(),
            ));
        }
        Ok(Comparison { labels, reports })
    }

    /// `group,stat,model_1,...,model_N,pct_change_2,...,pct_change_N`.
    /// Percent changes are relative to the first model; when the baseline
    /// value is zero the absolute difference is reported instead.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let n = self.reports.len();
        let mut header = String::from("group,stat");
        for label in &self.labels {
            header.push_str(&format!(",{label}"));
        }
        for i in 1..n {
            header.push_str(&format!(",pct_change_{}", i + 1));
        }
        writeln!(out, "{header}")?;
        let m = self.reports[0].group_count();
        let write_row = |out: &mut W, group: &str, stat: &str, values: Vec<f64>| -> Result<()> {
            write!(out, "{group},{stat}")?;
            for v in &values {
                write!(out, ",{v}")?;
            }
            let base = values[0];
            for v in &values[1..] {
                let change = if base == 0.0 {
                    v - base
                } else {
                    100.0 * (v - base) / base
                };
                write!(out, ",{change}")?;
            }
            writeln!(out)?;
            Ok(())
        };
        for z in 0..m {
            let group = format!("{}", z + 1);
            for (stat, get) in [
                ("mean", &(|s: &GroupStats| s.mean) as &dyn Fn(&GroupStats) -> f64),
                ("median", &|s: &GroupStats| s.median),
                ("p90", &|s: &GroupStats| s.p90),
            ] {
                let values: Vec<f64> = self
                    .reports
                    .iter()
                    .map(|r| get(&r.group_stats[z]))
                    .collect();
                write_row(out, &group, stat, values)?;
            }
        }
        for (stat, get) in [
            ("mean", &(|s: &GroupStats| s.mean) as &dyn Fn(&GroupStats) -> f64),
            ("median", &|s: &GroupStats| s.median),
            ("p90", &|s: &GroupStats| s.p90),
        ] {
            let values: Vec<f64> = self.reports.iter().map(|r| get(&r.overall)).collect();
            write_row(out, "all", stat, values)?;
        }
        let devs: Vec<f64> = self.reports.iter().map(|r| r.max_deviation).collect();
        write_row(out, "all", "max_fairness_dev", devs)?;
        Ok(())
    }
}
