//! Assignment cost c(x, k) in three flavors: Euclidean distance, squared
//! Euclidean distance, and a tabulated site-by-facility matrix (for
//! precomputed road-network travel costs).

use crate::error::{Error, Result};
use crate::population::{Location, Point, Population};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

/// The K facility locations, in map units. Facilities may sit outside the
/// population bounding box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FacilitySet {
    pub locations: Vec<Point>,
    pub labels: Vec<String>,
}

impl FacilitySet {
    pub fn new(locations: Vec<Point>) -> Result<Self> {
        let labels = (1..=locations.len()).map(|k| k.to_string()).collect();
        Self::with_labels(locations, labels)
    }

    pub fn with_labels(locations: Vec<Point>, labels: Vec<String>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::Config("facility set must not be empty".into()));
        }
        if locations.len() != labels.len() {
            return Err(Error::DimensionMismatch(
                "facility labels do not match locations".into(),
            ));
        }
        Ok(FacilitySet { locations, labels })
    }

    pub fn k(&self) -> usize {
        self.locations.len()
    }

    /// Pairs of coincident facilities. Permitted, but worth a load-time
    /// warning: ties between them are resolved by the lowest-index rule.
    pub fn coincident_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.k() {
            for k in j + 1..self.k() {
                if self.locations[j] == self.locations[k] {
                    out.push((j, k));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Euclidean,
    SquaredEuclidean,
    Matrix,
}

#[derive(Debug, Clone)]
pub struct CostModel {
    pub kind: CostKind,
    pub facilities: FacilitySet,
    /// Matrix kind only: per-site cost rows keyed by site id.
    table: Option<HashMap<String, Vec<f64>>>,
}

impl CostModel {
    pub fn euclidean(facilities: FacilitySet) -> Self {
        CostModel {
            kind: CostKind::Euclidean,
            facilities,
            table: None,
        }
    }

    pub fn squared_euclidean(facilities: FacilitySet) -> Self {
        CostModel {
            kind: CostKind::SquaredEuclidean,
            facilities,
            table: None,
        }
    }

    pub fn from_table(facilities: FacilitySet, table: HashMap<String, Vec<f64>>) -> Result<Self> {
        let k = facilities.k();
        for (id, row) in &table {
            if row.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "cost row for site `{id}` has {} entries, expected {k}",
                    row.len()
                )));
            }
            if row.iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err(Error::Config(format!(
                    "cost row for site `{id}` has a negative or non-finite entry"
                )));
            }
        }
        Ok(CostModel {
            kind: CostKind::Matrix,
            facilities,
            table: Some(table),
        })
    }

    pub fn k(&self) -> usize {
        self.facilities.k()
    }

    /// c(x, k). For the matrix kind, `loc` must be a site of `pop` that is
    /// covered by the table.
    pub fn cost(&self, pop: &Population, loc: Location, k: usize) -> Result<f64> {
        if k >= self.k() {
            return Err(Error::IndexOutOfRange { index: k, k: self.k() });
        }
        match self.kind {
            CostKind::Euclidean => Ok(dist(pop.point_of(loc), self.facilities.locations[k])),
            CostKind::SquaredEuclidean => {
                let d = dist(pop.point_of(loc), self.facilities.locations[k]);
                Ok(d * d)
            }
            CostKind::Matrix => {
                let site = match (pop, loc) {
                    (Population::Discrete(d), Location::Site(i)) => &d.sites()[i],
                    _ => {
                        return Err(Error::Config(
                            "matrix costs require a discrete population site".into(),
                        ))
                    }
                };
                let row = self
                    .table
                    .as_ref()
                    .expect("matrix kind always has a table")
                    .get(&site.id)
                    .ok_or_else(|| Error::UnknownSite(site.id.clone()))?;
                Ok(row[k])
            }
        }
    }

    /// Every (site, facility) pair of `pop` must be covered by the table.
    pub fn validate_against(&self, pop: &Population) -> Result<()> {
        if self.kind != CostKind::Matrix {
            return Ok(());
        }
        let d = match pop {
            Population::Discrete(d) => d,
            Population::Mixture(_) => {
                return Err(Error::Config(
                    "matrix costs cannot be combined with a continuous mixture".into(),
                ))
            }
        };
        let table = self.table.as_ref().unwrap();
        for s in d.sites() {
            if !table.contains_key(&s.id) {
                return Err(Error::UnknownSite(s.id.clone()));
            }
        }
        Ok(())
    }

    /// Default stepsize scale: half the median pairwise facility cost. Makes
    /// the default unit-free across cost magnitudes.
    pub fn default_step_scale(&self) -> f64 {
        let mut costs: Vec<f64> = match self.kind {
            CostKind::Matrix => self
                .table
                .as_ref()
                .unwrap()
                .values()
                .flatten()
                .copied()
                .filter(|c| *c > 0.0)
                .collect(),
            _ => {
                let locs = &self.facilities.locations;
                let mut v = Vec::new();
                for j in 0..locs.len() {
                    for k in j + 1..locs.len() {
                        let d = dist(locs[j], locs[k]);
                        v.push(if self.kind == CostKind::SquaredEuclidean {
                            d * d
                        } else {
                            d
                        });
                    }
                }
                v
            }
        };
        if costs.is_empty() {
            return 1.0;
        }
        costs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        0.5 * costs[(costs.len() - 1) / 2]
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Parse a facility CSV: header `facility_id,x,y`.
pub fn load_facilities(path: &Path) -> Result<FacilitySet> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_facilities(&text, &path.display().to_string())
}

pub fn parse_facilities(text: &str, path: &str) -> Result<FacilitySet> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    if header.split(',').map(str::trim).collect::<Vec<_>>() != ["facility_id", "x", "y"] {
        return Err(perr(1, "expected header `facility_id,x,y`".into()));
    }
    let mut locations = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(perr(i + 1, "expected 3 fields".into()));
        }
        let x: f64 = f[1].parse().map_err(|e| perr(i + 1, format!("bad x: {e}")))?;
        let y: f64 = f[2].parse().map_err(|e| perr(i + 1, format!("bad y: {e}")))?;
        labels.push(f[0].to_string());
        locations.push([x, y]);
    }
    FacilitySet::with_labels(locations, labels)
}

/// Parse a cost matrix CSV: header `site_id,c_1,...,c_K`.
pub fn load_cost_matrix(path: &Path, facilities: FacilitySet) -> Result<CostModel> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_cost_matrix(&text, &path.display().to_string(), facilities)
}

pub fn parse_cost_matrix(text: &str, path: &str, facilities: FacilitySet) -> Result<CostModel> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let k = facilities.k();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"site_id") {
        return Err(perr(1, "expected header `site_id,c_1,...,c_K`".into()));
    }
    if cols.len() != k + 1 {
        return Err(Error::DimensionMismatch(format!(
            "cost matrix has {} cost columns, expected K = {k}",
            cols.len() - 1
        )));
    }
    let mut table = HashMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != k + 1 {
            return Err(Error::DimensionMismatch(format!(
                "cost matrix row at line {} has {} costs, expected K = {k}",
                i + 1,
                f.len() - 1
            )));
        }
        let mut row = Vec::with_capacity(k);
        for c in &f[1..] {
            let v: f64 = c
                .parse()
                .map_err(|e| perr(i + 1, format!("bad cost: {e}")))?;
            if v < 0.0 || !v.is_finite() {
                return Err(perr(i + 1, format!("negative cost {v}")));
            }
            row.push(v);
        }
        table.insert(f[0].to_string(), row);
    }
    CostModel::from_table(facilities, table)
}
