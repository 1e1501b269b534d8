//! Dense active-set solver for the small linear programs that arise in the
//! simplex fit.
//!
//! Solves `maximize cᵀx subject to lo_k ≤ a_kᵀx ≤ hi_k` for a handful of
//! variables (the dimension of one simplex facet functional) and up to a few
//! thousand two-sided constraint rows (one per data point), starting from a
//! known feasible point. The feasible region is a bounded polytope whenever
//! the constraint rows affinely span the variable space, which the caller
//! guarantees, so the optimum sits at a vertex.
//!
//! The method is textbook active-set: a crash phase walks from the feasible
//! start to a vertex (adding one linearly independent tight constraint per
//! step), then a pivot phase exchanges active constraints using Bland's
//! smallest-index rule until all Lagrange multipliers are non-negative.
//! Everything is deterministic; ties break toward the lowest constraint id.

use nalgebra::{DMatrix, DVector};

/// Identifies one side of a two-sided constraint row. Ordering (row first,
/// lower side before upper) defines the Bland pivoting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Cid {
    row: usize,
    upper: bool,
}

/// Outcome of [`maximize_two_sided`]. `optimal` is false only when the pivot
/// cap was hit; the returned point is feasible either way and its objective
/// is never below the starting objective.
pub(crate) struct LpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Production callers accept any feasible improvement and so never read
    /// this; the solver's own tests assert it.
    #[allow(dead_code)]
    pub optimal: bool,
}

const FEAS_TOL: f64 = 1e-9;
const DIR_TOL: f64 = 1e-12;
const MULT_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 10_000;

/// One-sided view of constraint `cid`: returns `(g, b)` such that the
/// constraint reads `gᵀx ≤ b`.
fn normal_and_bound(rows: &DMatrix<f64>, lo: &[f64], hi: &[f64], cid: Cid) -> (DVector<f64>, f64) {
    let a = rows.row(cid.row).transpose();
    if cid.upper {
        (a, hi[cid.row])
    } else {
        (-a, -lo[cid.row])
    }
}

fn slack(rows: &DMatrix<f64>, lo: &[f64], hi: &[f64], cid: Cid, x: &DVector<f64>) -> f64 {
    let ax = rows.row(cid.row).transpose().dot(x);
    if cid.upper {
        hi[cid.row] - ax
    } else {
        ax - lo[cid.row]
    }
}

/// Component of `v` orthogonal to the span of `basis` (orthonormal vectors),
/// with one re-orthogonalization pass for stability.
fn project_out(v: &DVector<f64>, basis: &[DVector<f64>]) -> DVector<f64> {
    let mut d = v.clone();
    for _ in 0..2 {
        for q in basis {
            let t = q.dot(&d);
            d.axpy(-t, q, 1.0);
        }
    }
    d
}

/// Smallest positive step from `x` along `d` that hits an inactive
/// constraint. Returns `(t, cid)` of the first blocker; ties prefer the
/// smallest cid. `None` means the ray never leaves the feasible set.
fn blocking_step(
    rows: &DMatrix<f64>,
    lo: &[f64],
    hi: &[f64],
    active: &[Cid],
    x: &DVector<f64>,
    d: &DVector<f64>,
) -> Option<(f64, Cid)> {
    let n = rows.nrows();
    let mut best: Option<(f64, Cid)> = None;
    let ad = rows * d; // one pass: a_kᵀd for every row
    for row in 0..n {
        for upper in [false, true] {
            let cid = Cid { row, upper };
            if active.contains(&cid) {
                continue;
            }
            let gd = if upper { ad[row] } else { -ad[row] };
            if gd <= DIR_TOL {
                continue; // moving away from (or parallel to) this face
            }
            let s = slack(rows, lo, hi, cid, x).max(0.0);
            let t = s / gd;
            let better = match best {
                None => true,
                Some((tb, cb)) => t < tb - 1e-15 || (t <= tb + 1e-15 && cid < cb),
            };
            if better {
                best = Some((t, cid));
            }
        }
    }
    best
}

/// Maximize `cᵀx` over `{x : lo ≤ rows·x ≤ hi}` starting from feasible `x0`.
///
/// Errors on an infeasible start, an unbounded ray (impossible for
/// well-posed callers, so treated as a solver failure), or a numerically
/// singular active set.
pub(crate) fn maximize_two_sided(
    c: &DVector<f64>,
    rows: &DMatrix<f64>,
    lo: &[f64],
    hi: &[f64],
    x0: &DVector<f64>,
) -> Result<LpSolution, String> {
    let m = x0.len();
    let n = rows.nrows();
    assert_eq!(rows.ncols(), m, "constraint row length must match x");
    assert_eq!(lo.len(), n);
    assert_eq!(hi.len(), n);

    // The start must be feasible: every later step preserves feasibility.
    for row in 0..n {
        let ax = rows.row(row).transpose().dot(x0);
        if ax < lo[row] - FEAS_TOL || ax > hi[row] + FEAS_TOL {
            return Err(format!(
                "infeasible start: row {row} value {ax:.6e} outside [{:.6e}, {:.6e}]",
                lo[row], hi[row]
            ));
        }
    }

    let mut x = x0.clone();
    let mut active: Vec<Cid> = Vec::with_capacity(m);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m); // orthonormalized active normals

    // Crash phase: walk to a vertex. Each pass adds exactly one linearly
    // independent constraint, so this loop runs at most m times.
    while active.len() < m {
        let mut d = project_out(c, &basis);
        let improving = d.norm() > DIR_TOL * (1.0 + c.norm());
        if !improving {
            // The objective is already extremal over this face; pick any
            // direction inside the face to keep walking toward a vertex.
            let mut best_norm = 0.0;
            let mut best_dir: Option<DVector<f64>> = None;
            for k in 0..m {
                let e = DVector::from_fn(m, |i, _| if i == k { 1.0 } else { 0.0 });
                let p = project_out(&e, &basis);
                let pn = p.norm();
                if pn > best_norm {
                    best_norm = pn;
                    best_dir = Some(p);
                }
            }
            d = best_dir.filter(|_| best_norm > 1e-10).ok_or_else(|| {
                "active normals numerically span the space before a vertex was reached".to_string()
            })?;
        }
        d /= d.norm();

        let mut step = blocking_step(rows, lo, hi, &active, &x, &d);
        if step.is_none() && !improving {
            // A face direction can point out of the polytope on one side and
            // into a blocker on the other; try the opposite orientation.
            d = -d;
            step = blocking_step(rows, lo, hi, &active, &x, &d);
        }
        let Some((t, cid)) = step else {
            return Err("feasible set is unbounded along the search direction".to_string());
        };
        x.axpy(t, &d, 1.0);
        let (g, _) = normal_and_bound(rows, lo, hi, cid);
        let w = project_out(&g, &basis);
        let wn = w.norm();
        if wn <= 1e-12 * g.norm() {
            // A blocker reached along d satisfies gᵀd > 0 with d ⊥ span, so
            // it is independent of the current normals; reaching this branch
            // means severe cancellation. Give up rather than loop.
            return Err("blocking constraint is numerically dependent".to_string());
        }
        basis.push(w / wn);
        active.push(cid);
        active.sort();
    }

    // Pivot phase: exchange one active constraint at a time (Bland's rule)
    // until the multipliers certify optimality.
    for _ in 0..MAX_PIVOTS {
        let nmat = DMatrix::from_fn(m, m, |i, j| {
            let (g, _) = normal_and_bound(rows, lo, hi, active[i]);
            g[j]
        });
        let lu_t = nmat.transpose().lu();
        let lambda = lu_t
            .solve(c)
            .ok_or_else(|| "singular active set while computing multipliers".to_string())?;

        // Active list is sorted by cid, so the first negative multiplier is
        // Bland's choice.
        let leave = (0..m).find(|&i| lambda[i] < -MULT_TOL);
        let Some(leave) = leave else {
            return Ok(LpSolution {
                objective: c.dot(&x),
                x,
                optimal: true,
            });
        };

        // Move off the leaving face while staying on the others.
        let mut rhs = DVector::zeros(m);
        rhs[leave] = -1.0;
        let lu = nmat.lu();
        let d = lu
            .solve(&rhs)
            .ok_or_else(|| "singular active set while computing edge direction".to_string())?;

        let dropped = active.remove(leave);
        let Some((t, cid)) = blocking_step(rows, lo, hi, &active, &x, &d) else {
            return Err("feasible set is unbounded along a pivot edge".to_string());
        };
        debug_assert_ne!(cid, dropped, "leaving face cannot re-block (gᵀd < 0)");
        x.axpy(t, &d, 1.0);
        active.push(cid);
        active.sort();
    }

    // Pivot cap reached: x is feasible and no worse than the start. Callers
    // treat the step as "no improvement found" rather than an error.
    Ok(LpSolution {
        objective: c.dot(&x),
        x,
        optimal: false,
    })
}
