//! Partition extraction: point queries, full site-table assignment,
//! facility closure, rasterization, and contiguity diagnostics.

use crate::costmodel::CostModel;
use crate::error::{Error, Result};
use crate::population::{Bounds, Location, Population};
use crate::solver::{argmin_facility, effective_score, WeightMatrix};
use std::io::Write;

pub const CLOSURE_THRESHOLD: f64 = 1e-4;

/// A solved partition: weights plus everything needed to answer point
/// queries.
pub struct PartitionHandle<'a> {
    pub weights: WeightMatrix,
    pub pop: &'a Population,
    pub cost: &'a CostModel,
}

impl<'a> PartitionHandle<'a> {
    pub fn new(weights: WeightMatrix, pop: &'a Population, cost: &'a CostModel) -> Result<Self> {
        if weights.m() != pop.group_count() {
            return Err(Error::DimensionMismatch(
                "weight matrix group count does not match population".into(),
            ));
        }
        if weights.k() != cost.k() {
            return Err(Error::DimensionMismatch(
                "weight matrix facility count does not match cost model".into(),
            ));
        }
        cost.validate_against(pop)?;
        Ok(PartitionHandle { weights, pop, cost })
    }

    /// Facility index for one location; Err(ZeroDensity) off-support.
    pub fn assign(&self, loc: Location) -> Result<usize> {
        argmin_facility(&self.weights, self.pop, self.cost, loc)
    }

    /// Effective score of the assigned facility.
    pub fn score(&self, loc: Location, k: usize) -> Result<f64> {
        effective_score(&self.weights, self.pop, self.cost, loc, k)
    }
}

/// One output row of the site assignment table.
#[derive(Debug, Clone)]
pub struct AssignmentRow {
    pub site_id: String,
    pub facility: usize,
    pub cost: f64,
    pub counts: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AssignmentTable {
    pub rows: Vec<AssignmentRow>,
    pub group_count: usize,
}

/// Assign every populated site of a discrete population. Zero-count sites
/// are skipped (they carry no posterior).
pub fn assign_all_sites(handle: &PartitionHandle) -> Result<AssignmentTable> {
    let discrete = match handle.pop {
        Population::Discrete(d) => d,
        Population::Mixture(_) => {
            return Err(Error::Config(
                "site assignment tables require a discrete population".into(),
            ))
        }
    };
    let mut rows = Vec::with_capacity(discrete.sites().len());
    for (s, site) in discrete.sites().iter().enumerate() {
        if site.total() <= 0.0 {
            continue;
        }
        let facility = handle.assign(Location::Site(s))?;
        let cost = handle.cost.cost(handle.pop, Location::Site(s), facility)?;
        rows.push(AssignmentRow {
            site_id: site.id.clone(),
            facility,
            cost,
            counts: site.counts.clone(),
        });
    }
    Ok(AssignmentTable {
        rows,
        group_count: discrete.group_count(),
    })
}

impl AssignmentTable {
    /// `site_id,facility,cost,count_1,...,count_M` with 1-based facilities.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut header = String::from("site_id,facility,cost");
        for z in 0..self.group_count {
            header.push_str(&format!(",count_{}", z + 1));
        }
        writeln!(out, "{header}")?;
        for row in &self.rows {
            write!(out, "{},{},{}", row.site_id, row.facility + 1, row.cost)?;
            for c in &row.counts {
                write!(out, ",{c}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Facilities whose region mass falls below the closure threshold.
pub fn closed_facilities(masses: &[f64], threshold: f64) -> Vec<usize> {
    masses
        .iter()
        .enumerate()
        .filter(|(_, &m)| m < threshold)
        .map(|(k, _)| k)
        .collect()
}

/// Region labels on a regular nx-by-ny grid of cell centers, row-major from
/// the bottom-left cell. Cells with zero density get the sentinel -1.
#[derive(Debug, Clone)]
pub struct Raster {
    pub nx: usize,
    pub ny: usize,
    pub bounds: Bounds,
    /// -1 for off-support cells, otherwise the 0-based facility index.
    pub labels: Vec<i32>,
}

pub fn rasterize(handle: &PartitionHandle, nx: usize, ny: usize) -> Result<Raster> {
    if nx == 0 || ny == 0 {
        return Err(Error::Config("raster dimensions must be positive".into()));
    }
    let bounds = handle.pop.bounds();
    let dx = (bounds.xmax - bounds.xmin) / nx as f64;
    let dy = (bounds.ymax - bounds.ymin) / ny as f64;
    let mut labels = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let y = bounds.ymin + (j as f64 + 0.5) * dy;
        for i in 0..nx {
            let x = bounds.xmin + (i as f64 + 0.5) * dx;
            match handle.assign(Location::Point([x, y])) {
                Ok(k) => labels.push(k as i32),
                Err(Error::ZeroDensity) => labels.push(-1),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(Raster {
        nx,
        ny,
        bounds,
        labels,
    })
}

impl Raster {
    /// Header `nx,ny,xmin,ymin,xmax,ymax`, then one row of labels per grid
    /// row, bottom row first.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            self.nx, self.ny, self.bounds.xmin, self.bounds.ymin, self.bounds.xmax, self.bounds.ymax
        )?;
        for j in 0..self.ny {
            let row = &self.labels[j * self.nx..(j + 1) * self.nx];
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Fraction of in-support cells per region.
    pub fn area_shares(&self, k: usize) -> Vec<f64> {
        let mut counts = vec![0usize; k];
        let mut total = 0usize;
        for &label in &self.labels {
            if label >= 0 {
                counts[label as usize] += 1;
                total += 1;
            }
        }
        if total == 0 {
            return vec![0.0; k];
        }
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    }

    /// Number of 4-connected components among each region's cells. 1 means
    /// the region is contiguous on the raster; 0 means it is empty.
    pub fn component_counts(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0usize; k];
        let mut seen = vec![false; self.labels.len()];
        let mut stack = Vec::new();
        for start in 0..self.labels.len() {
            let label = self.labels[start];
            if label < 0 || seen[start] {
                continue;
            }
            counts[label as usize] += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(idx) = stack.pop() {
                let (i, j) = (idx % self.nx, idx / self.nx);
                let push = |ni: usize, nj: usize, stack: &mut Vec<usize>, seen: &mut Vec<bool>| {
                    let nidx = nj * self.nx + ni;
                    if !seen[nidx] && self.labels[nidx] == label {
                        seen[nidx] = true;
                        stack.push(nidx);
                    }
                };
                if i > 0 {
                    push(i - 1, j, &mut stack, &mut seen);
                }
                if i + 1 < self.nx {
                    push(i + 1, j, &mut stack, &mut seen);
                }
                if j > 0 {
                    push(i, j - 1, &mut stack, &mut seen);
                }
                if j + 1 < self.ny {
                    push(i, j + 1, &mut stack, &mut seen);
                }
            }
        }
        counts
    }
}
