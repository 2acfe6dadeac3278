//! Dense two-phase simplex in exact rational arithmetic, for the capped
//! verification LPs. Bland's rule, so it terminates without cycling; sizes
//! are capped by the caller, so no attempt is made at sparsity.

use crate::error::{Error, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// minimize c'x subject to Ax = b, x >= 0.
pub struct StandardLp {
    pub a: Vec<Vec<BigRational>>,
    pub b: Vec<BigRational>,
    pub c: Vec<BigRational>,
}

pub struct LpOptimum {
    pub x: Vec<BigRational>,
    pub objective: BigRational,
}

pub fn rational_from_f64(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite float")
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

struct Tableau {
    // rows[i][j] for j < n_cols, plus rhs at index n_cols
    rows: Vec<Vec<BigRational>>,
    basis: Vec<usize>,
    n_cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.rows[r][c].clone();
        for v in self.rows[r].iter_mut() {
            *v /= &piv;
        }
        for i in 0..self.rows.len() {
            if i == r || self.rows[i][c].is_zero() {
                continue;
            }
            let factor = self.rows[i][c].clone();
            for j in 0..=self.n_cols {
                let delta = &factor * &self.rows[r][j];
                self.rows[i][j] -= delta;
            }
        }
        self.basis[r] = c;
    }

    /// Bland's rule on the given cost vector (restricted to `active` columns).
    /// Returns the objective value at termination.
    fn optimize(&mut self, cost: &[BigRational], active: usize) -> Result<BigRational> {
        loop {
            // reduced costs r_j = c_j - c_B' B^-1 A_j
            let mut entering = None;
            for j in 0..active {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut rj = cost[j].clone();
                for (i, &bi) in self.basis.iter().enumerate() {
                    if !cost[bi].is_zero() {
                        rj -= &cost[bi] * &self.rows[i][j];
                    }
                }
                if rj.is_negative() {
                    entering = Some(j);
                    break; // Bland: smallest candidate index
                }
            }
            let Some(c) = entering else {
                let mut obj = BigRational::zero();
                for (i, &bi) in self.basis.iter().enumerate() {
                    obj += &cost[bi] * &self.rows[i][self.n_cols];
                }
                return Ok(obj);
            };
            // ratio test; ties broken by smallest basis index (Bland)
            let mut leave: Option<(usize, BigRational)> = None;
            for i in 0..self.rows.len() {
                if self.rows[i][c].is_positive() {
                    let ratio = &self.rows[i][self.n_cols] / &self.rows[i][c];
                    let better = match &leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < *lr || (ratio == *lr && self.basis[i] < self.basis[*li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((r, _)) = leave else {
                // cannot happen for the bounded transport LPs we build
                return Err(Error::Config("linear program is unbounded".into()));
            };
            self.pivot(r, c);
        }
    }
}

/// Solve the LP exactly. Returns `Error::Infeasible` when phase 1 cannot
/// drive the artificials to zero.
pub fn solve(lp: &StandardLp) -> Result<LpOptimum> {
    let m = lp.a.len();
    let n = lp.c.len();
    assert_eq!(lp.b.len(), m);
    let total = n + m; // structural + artificial columns

    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        assert_eq!(lp.a[i].len(), n);
        let mut row: Vec<BigRational> = Vec::with_capacity(total + 1);
        let flip = lp.b[i].is_negative();
        for j in 0..n {
            row.push(if flip { -&lp.a[i][j] } else { lp.a[i][j].clone() });
        }
        for j in 0..m {
            row.push(if i == j {
                BigRational::one()
            } else {
                BigRational::zero()
            });
        }
        row.push(if flip { -&lp.b[i] } else { lp.b[i].clone() });
        rows.push(row);
    }
    let mut t = Tableau {
        rows,
        basis: (n..total).collect(),
        n_cols: total,
    };

    // phase 1: minimize the sum of artificials
    let mut phase1_cost = vec![BigRational::zero(); total];
    for c in phase1_cost.iter_mut().skip(n) {
        *c = BigRational::one();
    }
    let infeasibility = t.optimize(&phase1_cost, total)?;
    if !infeasibility.is_zero() {
        return Err(Error::Infeasible);
    }

    // drive any degenerate artificials out of the basis
    for i in 0..m {
        if t.basis[i] >= n {
            if let Some(c) = (0..n).find(|&j| !t.rows[i][j].is_zero()) {
                t.pivot(i, c);
            }
            // an all-zero structural row is redundant; its artificial stays
            // basic at value zero, which is harmless in phase 2
        }
    }

    // phase 2 over the structural columns only
    let mut phase2_cost = vec![BigRational::zero(); total];
    phase2_cost[..n].clone_from_slice(&lp.c);
    let objective = t.optimize(&phase2_cost, n)?;

    let mut x = vec![BigRational::zero(); n];
    for (i, &bi) in t.basis.iter().enumerate() {
        if bi < n {
            x[bi] = t.rows[i][t.n_cols].clone();
        }
    }
    Ok(LpOptimum { x, objective })
}

pub fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_transport() {
        // min x0 + 2 x1 s.t. x0 + x1 = 1 -> x = (1, 0), obj 1
        let lp = StandardLp {
            a: vec![vec![int(1), int(1)]],
            b: vec![int(1)],
            c: vec![int(1), int(2)],
        };
        let opt = solve(&lp).unwrap();
        assert_eq!(opt.objective, int(1));
        assert_eq!(opt.x, vec![int(1), int(0)]);
    }

    #[test]
    fn equality_system() {
        // min x0 + x1 + x2 s.t. x0 + x1 = 2, x1 + x2 = 2
        // optimum: x1 = 2 -> obj 2
        let lp = StandardLp {
            a: vec![vec![int(1), int(1), int(0)], vec![int(0), int(1), int(1)]],
            b: vec![int(2), int(2)],
            c: vec![int(1), int(1), int(1)],
        };
        let opt = solve(&lp).unwrap();
        assert_eq!(opt.objective, int(2));
    }

    #[test]
    fn infeasible_detected() {
        // x0 = 1 and x0 = 2 cannot both hold
        let lp = StandardLp {
            a: vec![vec![int(1)], vec![int(1)]],
            b: vec![int(1), int(2)],
            c: vec![int(1)],
        };
        assert!(matches!(solve(&lp), Err(Error::Infeasible)));
    }

    #[test]
    fn redundant_row_ok() {
        let lp = StandardLp {
            a: vec![vec![int(1), int(1)], vec![int(2), int(2)]],
            b: vec![int(1), int(2)],
            c: vec![int(3), int(1)],
        };
        let opt = solve(&lp).unwrap();
        assert_eq!(opt.objective, int(1));
    }

    #[test]
    fn negative_rhs_handled() {
        // -x0 = -1 -> x0 = 1
        let lp = StandardLp {
            a: vec![vec![int(-1)]],
            b: vec![int(-1)],
            c: vec![int(5)],
        };
        let opt = solve(&lp).unwrap();
        assert_eq!(opt.objective, int(5));
    }
}
