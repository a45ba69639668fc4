//! Dense reference machinery for verifying the operator-splitting solver:
//! a KKT residual checker and an active-set solver that handles the same
//! `l ≤ Ax ≤ u` problem class through exact linear solves.
//!
//! These stay independent of the ADMM iteration so the two routes can be
//! checked against each other.

use nalgebra::{DMatrix, DVector};

use super::admm::QpProblem;
use crate::error::{Error, Result};

/// First-order optimality residuals of a candidate primal/dual pair.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    /// ‖Px + q + Aᵀy‖∞
    pub stationarity: f64,
    /// Worst violation of l ≤ Ax ≤ u.
    pub primal_feasibility: f64,
    /// Worst |yᵢ·slackᵢ| against the bound the sign of yᵢ selects.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(qp: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> KktResiduals {
    let n = qp.num_vars();
    let c = qp.num_constraints();
    let mut px = DVector::zeros(n);
    qp.p.mul_vec(x, &mut px);
    let mut aty = DVector::zeros(n);
    qp.a.tr_mul_vec(y, &mut aty);
    let stationarity = (&px + &qp.q + &aty).amax();

    let mut ax = DVector::zeros(c);
    qp.a.mul_vec(x, &mut ax);
    let mut primal = 0.0_f64;
    let mut compl = 0.0_f64;
    for i in 0..c {
        let below = (qp.l[i] - ax[i]).max(0.0);
        let above = (ax[i] - qp.u[i]).max(0.0);
        primal = primal.max(below).max(above);
        if y[i] > 0.0 && qp.u[i].is_finite() {
            compl = compl.max((y[i] * (ax[i] - qp.u[i])).abs());
        } else if y[i] < 0.0 && qp.l[i].is_finite() {
            compl = compl.max((y[i] * (ax[i] - qp.l[i])).abs());
        }
    }
    KktResiduals {
        stationarity,
        primal_feasibility: primal,
        complementarity: compl,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Lower,
    Upper,
}

/// Exact active-set solve of `min ½xᵀPx + qᵀx, l ≤ Ax ≤ u` for strictly
/// convex dense problems. Rows with `l = u` are held as permanent
/// equalities. Intended as a verification oracle at modest sizes, not as a
/// production path.
pub fn solve_qp_reference(qp: &QpProblem) -> Result<(DVector<f64>, DVector<f64>)> {
    qp.validate()?;
    let n = qp.num_vars();
    let c = qp.num_constraints();
    let p = qp.p.to_dense();
    let a = qp.a.to_dense();

    let mut working: Vec<Option<Side>> = (0..c)
        .map(|i| {
            if qp.l[i] == qp.u[i] {
                Some(Side::Lower)
            } else {
                None
            }
        })
        .collect();

    for _ in 0..200 {
        // Solve with the working rows pinned at their bounds.
        let active: Vec<usize> = (0..c).filter(|&i| working[i].is_some()).collect();
        let na = active.len();
        let mut kkt = DMatrix::zeros(n + na, n + na);
        kkt.view_range_mut(0..n, 0..n).copy_from(&p);
        let mut rhs = DVector::zeros(n + na);
        for i in 0..n {
            rhs[i] = -qp.q[i];
        }
        for (row, &ci) in active.iter().enumerate() {
            for col in 0..n {
                kkt[(n + row, col)] = a[(ci, col)];
                kkt[(col, n + row)] = a[(ci, col)];
            }
            rhs[n + row] = match working[ci].unwrap() {
                Side::Lower => qp.l[ci],
                Side::Upper => qp.u[ci],
            };
        }
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("singular KKT system in reference solver"))?;
        let x = sol.rows(0, n).into_owned();

        // Most violated inactive row joins the working set.
        let ax = &a * &x;
        let mut worst: Option<(usize, Side, f64)> = None;
        for i in 0..c {
            if working[i].is_some() {
                continue;
            }
            let below = qp.l[i] - ax[i];
            let above = ax[i] - qp.u[i];
            if below > 1e-9 && worst.map_or(true, |(_, _, v)| below > v) {
                worst = Some((i, Side::Lower, below));
            }
            if above > 1e-9 && worst.map_or(true, |(_, _, v)| above > v) {
                worst = Some((i, Side::Upper, above));
            }
        }
        if let Some((i, side, _)) = worst {
            working[i] = Some(side);
            continue;
        }

        // Feasible: drop the working row with the most wrong-signed
        // multiplier (free rows only; equalities keep any sign).
        let mut y = DVector::zeros(c);
        let mut drop: Option<(usize, f64)> = None;
        for (row, &ci) in active.iter().enumerate() {
            let nu = sol[n + row];
            y[ci] = nu;
            if qp.l[ci] == qp.u[ci] {
                continue;
            }
            let wrong = match working[ci].unwrap() {
                // Stationarity is Px + q + Aᵀy = 0: upper-active rows need
                // y ≥ 0, lower-active rows y ≤ 0.
                Side::Upper => (-nu).max(0.0),
                Side::Lower => nu.max(0.0),
            };
            if wrong > 1e-9 && drop.map_or(true, |(_, v)| wrong > v) {
                drop = Some((ci, wrong));
            }
        }
        if let Some((ci, _)) = drop {
            working[ci] = None;
            continue;
        }
        return Ok((x, y));
    }
    Err(Error::numerical(
        "reference active-set solver did not settle within its iteration cap",
    ))
}
