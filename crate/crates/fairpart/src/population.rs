//! Population models: heterogeneous groups with priors `q_z` and per-group
//! spatial densities `f_z`, in two flavors — continuous Gaussian mixtures over
//! a bounding box, and discrete site tables loaded from CSV.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

pub type Point = [f64; 2];

/// Axis-aligned bounding box of the study region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Bounds {
    pub fn unit_square() -> Self {
        Bounds {
            xmin: 0.0,
            ymin: 0.0,
            xmax: 1.0,
            ymax: 1.0,
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.xmin && p[0] <= self.xmax && p[1] >= self.ymin && p[1] <= self.ymax
    }

    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin) * (self.ymax - self.ymin)
    }
}

/// One bivariate Gaussian component of a group density. Component weights are
/// not normalized: the group density is the plain weighted sum of pdfs, and
/// any common scale cancels in posteriors and argmin decisions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Point,
    pub cov: [[f64; 2]; 2],
}

impl GaussianComponent {
    fn det(&self) -> f64 {
        self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
    }

    fn pdf(&self, p: Point) -> f64 {
        let det = self.det();
        let dx = p[0] - self.mean[0];
        let dy = p[1] - self.mean[1];
        // quadratic form with the inverse covariance
        let q = (self.cov[1][1] * dx * dx - 2.0 * self.cov[0][1] * dx * dy
            + self.cov[0][0] * dy * dy)
            / det;
        (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
    }

    /// Lower Cholesky factor of the covariance.
    fn chol(&self) -> [f64; 3] {
        let l11 = self.cov[0][0].sqrt();
        let l21 = self.cov[1][0] / l11;
        let l22 = (self.cov[1][1] - l21 * l21).sqrt();
        [l11, l21, l22]
    }

    fn validate(&self) -> Result<()> {
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(Error::Config(
                "mixture component weight must be positive and finite".into(),
            ));
        }
        if self.cov[0][1] != self.cov[1][0] {
            return Err(Error::Config("covariance matrix must be symmetric".into()));
        }
        if self.cov[0][0] <= 0.0 || self.det() <= 0.0 {
            return Err(Error::Config(
                "covariance matrix must be positive definite".into(),
            ));
        }
        Ok(())
    }
}

/// A single group's spatial density: a weighted sum of Gaussian components,
/// truncated to the region bounds by rejection at sampling time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupDensity {
    pub components: Vec<GaussianComponent>,
}

impl GroupDensity {
    pub fn evaluate(&self, p: Point, bounds: &Bounds) -> f64 {
        if !bounds.contains(p) {
            return 0.0;
        }
        self.components.iter().map(|c| c.weight * c.pdf(p)).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, bounds: &Bounds) -> Point {
        use rand_distr::Distribution;
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        loop {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = 0;
            for (i, c) in self.components.iter().enumerate() {
                idx = i;
                if u < c.weight {
                    break;
                }
                u -= c.weight;
            }
            let c = &self.components[idx];
            let [l11, l21, l22] = c.chol();
            let z0: f64 = rand_distr::StandardNormal.sample(rng);
            let z1: f64 = rand_distr::StandardNormal.sample(rng);
            let p = [c.mean[0] + l11 * z0, c.mean[1] + l21 * z0 + l22 * z1];
            if bounds.contains(p) {
                return p;
            }
        }
    }
}

/// Continuous population: group priors plus one Gaussian-mixture density per
/// group over a common bounding box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupMixture {
    priors: Vec<f64>,
    densities: Vec<GroupDensity>,
    bounds: Bounds,
}

impl GroupMixture {
    pub fn new(priors: Vec<f64>, densities: Vec<GroupDensity>, bounds: Bounds) -> Result<Self> {
        if priors.is_empty() || priors.len() != densities.len() {
            return Err(Error::Config(
                "mixture must have one density per group prior".into(),
            ));
        }
        let sum: f64 = priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || priors.iter().any(|&q| !(q > 0.0) || !q.is_finite()) {
            return Err(Error::Config(
                "group priors must be positive and sum to 1".into(),
            ));
        }
        if bounds.xmax <= bounds.xmin || bounds.ymax <= bounds.ymin {
            return Err(Error::Config("bounds must have positive area".into()));
        }
        for d in &densities {
            if d.components.is_empty() {
                return Err(Error::Config("each group needs at least one component".into()));
            }
            for c in &d.components {
                c.validate()?;
            }
        }
        // remove residual rounding so the sum is 1 to machine precision
        let priors = priors.iter().map(|q| q / sum).collect();
        Ok(GroupMixture {
            priors,
            densities,
            bounds,
        })
    }

    pub fn group_count(&self) -> usize {
        self.priors.len()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn density(&self, z: usize, p: Point) -> f64 {
        self.densities[z].evaluate(p, &self.bounds)
    }

    /// Uniform Monte Carlo estimate of the integral of group `z`'s density
    /// over the bounds. Diagnostic: flags grossly mis-specified densities
    /// (truncation is expected to cost a few percent at most).
    pub fn density_integral_estimate<R: Rng + ?Sized>(
        &self,
        z: usize,
        samples: usize,
        rng: &mut R,
    ) -> f64 {
        let b = self.bounds;
        let mut acc = 0.0;
        for _ in 0..samples {
            let p = [
                b.xmin + rng.gen::<f64>() * (b.xmax - b.xmin),
                b.ymin + rng.gen::<f64>() * (b.ymax - b.ymin),
            ];
            acc += self.densities[z].evaluate(p, &b);
        }
        acc * b.area() / samples as f64
    }
}

/// One populated site of a discrete population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    pub point: Point,
    /// Person counts per group.
    pub counts: Vec<f64>,
}

impl Site {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Discrete population: a site table with per-group person counts. Priors and
/// per-group pmfs are derived from the counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscretePopulation {
    sites: Vec<Site>,
    priors: Vec<f64>,
    group_totals: Vec<f64>,
    grand_total: f64,
    /// Per-group cumulative pmf over sites, for inverse-cdf sampling.
    #[serde(skip)]
    cumulative: Vec<Vec<f64>>,
}

impl DiscretePopulation {
    pub fn from_sites(sites: Vec<Site>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Config("population has no sites".into()));
        }
        let m = sites[0].counts.len();
        if m == 0 {
            return Err(Error::Config("population has no groups".into()));
        }
        let mut group_totals = vec![0.0; m];
        for s in &sites {
            if s.counts.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "site `{}` has {} group counts, expected {}",
                    s.id,
                    s.counts.len(),
                    m
                )));
            }
            for (z, &c) in s.counts.iter().enumerate() {
                if !(c >= 0.0) || !c.is_finite() {
                    return Err(Error::Config(format!(
                        "site `{}` has a negative or non-finite count",
                        s.id
                    )));
                }
                group_totals[z] += c;
            }
        }
        for (z, &t) in group_totals.iter().enumerate() {
            if t <= 0.0 {
                return Err(Error::EmptyGroup { group: z + 1 });
            }
        }
        let grand_total: f64 = group_totals.iter().sum();
        let priors: Vec<f64> = group_totals.iter().map(|t| t / grand_total).collect();
        let cumulative = Self::build_cumulative(&sites, &group_totals);
        Ok(DiscretePopulation {
            sites,
            priors,
            group_totals,
            grand_total,
            cumulative,
        })
    }

    fn build_cumulative(sites: &[Site], group_totals: &[f64]) -> Vec<Vec<f64>> {
        (0..group_totals.len())
            .map(|z| {
                let mut acc = 0.0;
                sites
                    .iter()
                    .map(|s| {
                        acc += s.counts[z] / group_totals[z];
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn group_count(&self) -> usize {
        self.priors.len()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn grand_total(&self) -> f64 {
        self.grand_total
    }

    /// Normalized per-group pmf value at a site: f_z(site).
    pub fn pmf(&self, z: usize, site: usize) -> f64 {
        self.sites[site].counts[z] / self.group_totals[z]
    }

    /// Marginal probability of a site: sum_z q_z f_z(site).
    pub fn site_mass(&self, site: usize) -> f64 {
        self.sites[site].total() / self.grand_total
    }

    pub fn site_index(&self, id: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.id == id)
    }

    pub fn bounds(&self) -> Bounds {
        let mut b = Bounds {
            xmin: f64::INFINITY,
            ymin: f64::INFINITY,
            xmax: f64::NEG_INFINITY,
            ymax: f64::NEG_INFINITY,
        };
        for s in &self.sites {
            b.xmin = b.xmin.min(s.point[0]);
            b.ymin = b.ymin.min(s.point[1]);
            b.xmax = b.xmax.max(s.point[0]);
            b.ymax = b.ymax.max(s.point[1]);
        }
        b
    }
}

/// A query location: a free point for continuous populations, or an index
/// into the site table for discrete ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    Point(Point),
    Site(usize),
}

/// Either flavor of population behind one interface. Immutable after
/// construction and safe to share across threads; every worker owns its own
/// rng stream.
#[derive(Debug, Clone)]
pub enum Population {
    Mixture(GroupMixture),
    Discrete(DiscretePopulation),
}

impl Population {
    pub fn group_count(&self) -> usize {
        match self {
            Population::Mixture(m) => m.group_count(),
            Population::Discrete(d) => d.group_count(),
        }
    }

    pub fn priors(&self) -> &[f64] {
        match self {
            Population::Mixture(m) => m.priors(),
            Population::Discrete(d) => d.priors(),
        }
    }

    pub fn bounds(&self) -> Bounds {
        match self {
            Population::Mixture(m) => m.bounds(),
            Population::Discrete(d) => d.bounds(),
        }
    }

    pub fn point_of(&self, loc: Location) -> Point {
        match (self, loc) {
            (_, Location::Point(p)) => p,
            (Population::Discrete(d), Location::Site(i)) => d.sites()[i].point,
            (Population::Mixture(_), Location::Site(_)) => {
                panic!("site location queried against a continuous population")
            }
        }
    }

    /// P(Z=z | X=x) written into `out`, which must have length M.
    pub fn posterior_into(&self, loc: Location, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.group_count());
        match (self, loc) {
            (Population::Mixture(m), Location::Point(p)) => {
                let mut total = 0.0;
                for (z, q) in m.priors().iter().enumerate() {
                    let v = q * m.density(z, p);
                    out[z] = v;
                    total += v;
                }
                if total <= 0.0 {
                    return Err(Error::ZeroDensity);
                }
                for v in out.iter_mut() {
                    *v /= total;
                }
                Ok(())
            }
            (Population::Discrete(d), Location::Site(i)) => {
                // q_z f_z(s) = counts[s][z] / grand_total, so the posterior is
                // the count row normalized.
                let site = &d.sites()[i];
                let total = site.total();
                if total <= 0.0 {
                    return Err(Error::ZeroDensity);
                }
                for (z, v) in out.iter_mut().enumerate() {
                    *v = site.counts[z] / total;
                }
                Ok(())
            }
            (Population::Discrete(_), Location::Point(_)) => Err(Error::ZeroDensity),
            (Population::Mixture(_), Location::Site(_)) => Err(Error::ZeroDensity),
        }
    }

    pub fn posterior(&self, loc: Location) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.group_count()];
        self.posterior_into(loc, &mut out)?;
        Ok(out)
    }

    /// Draw (X, Z): Z ~ q, then X ~ f_Z. Deterministic given the rng stream.
    pub fn sample_joint<R: Rng + ?Sized>(&self, rng: &mut R) -> (Location, usize) {
        let q = self.priors();
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut z = q.len() - 1;
        for (i, &qi) in q.iter().enumerate() {
            acc += qi;
            if u < acc {
                z = i;
                break;
            }
        }
        match self {
            Population::Mixture(m) => {
                let p = m.densities[z].sample(rng, &m.bounds);
                (Location::Point(p), z)
            }
            Population::Discrete(d) => {
                let u: f64 = rng.gen();
                let cum = &d.cumulative[z];
                let i = match cum.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
                    Ok(i) => i + 1,
                    Err(i) => i,
                };
                (Location::Site(i.min(d.sites.len() - 1)), z)
            }
        }
    }

    /// Collapse all groups into one (M = 1): the classical, fairness-free view.
    pub fn merged(&self) -> Population {
        match self {
            Population::Mixture(m) => {
                // q_z-weighted union of all component lists
                let comps = m
                    .densities
                    .iter()
                    .zip(m.priors())
                    .flat_map(|(d, &q)| {
                        d.components.iter().map(move |c| GaussianComponent {
                            weight: q * c.weight,
                            ..c.clone()
                        })
                    })
                    .collect();
                Population::Mixture(
                    GroupMixture::new(
                        vec![1.0],
                        vec![GroupDensity { components: comps }],
                        m.bounds,
                    )
                    .expect("merged mixture is valid by construction"),
                )
            }
            Population::Discrete(d) => {
                let sites = d
                    .sites
                    .iter()
                    .map(|s| Site {
                        id: s.id.clone(),
                        point: s.point,
                        counts: vec![s.total()],
                    })
                    .collect();
                Population::Discrete(
                    DiscretePopulation::from_sites(sites)
                        .expect("merged population is valid by construction"),
                )
            }
        }
    }
}

/// Parse a population CSV: header `site_id,x,y,count_1,...,count_M`.
pub fn load_population(path: &Path) -> Result<DiscretePopulation> {
    let mut file = std::fs::File::open(path)?;
    let mut text = String::new();
    file.read_to_string(&mut text)?;
    parse_population(&text, &path.display().to_string())
}

pub fn parse_population(text: &str, path: &str) -> Result<DiscretePopulation> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| perr(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[0] != "site_id" || cols[1] != "x" || cols[2] != "y" {
        return Err(perr(1, "expected header `site_id,x,y,count_1,...`".into()));
    }
    let m = cols.len() - 3;
    let mut sites = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != m + 3 {
            return Err(perr(i + 1, format!("expected {} fields", m + 3)));
        }
        let x: f64 = fields[1]
            .parse()
            .map_err(|e| perr(i + 1, format!("bad x: {e}")))?;
        let y: f64 = fields[2]
            .parse()
            .map_err(|e| perr(i + 1, format!("bad y: {e}")))?;
        let mut counts = Vec::with_capacity(m);
        for f in &fields[3..] {
            let c: f64 = f
                .parse()
                .map_err(|e| perr(i + 1, format!("bad count: {e}")))?;
            if c < 0.0 || !c.is_finite() {
                return Err(perr(i + 1, format!("negative count {c}")));
            }
            counts.push(c);
        }
        sites.push(Site {
            id: fields[0].to_string(),
            point: [x, y],
            counts,
        });
    }
    DiscretePopulation::from_sites(sites)
}
