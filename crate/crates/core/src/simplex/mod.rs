//! Minimum-volume enclosing simplex: fitting, volume, and barycentric
//! decomposition of reduced points into composition coefficients.
//!
//! A simplex with R+1 vertices in R dimensions assigns every point a unique
//! barycentric coordinate vector summing to 1; the fit shrinks the simplex
//! around the data until no single facet functional can be pushed further
//! without some point's coordinate dropping below the enclosure slack `-ε`.
//!
//! The solver parameterizes the simplex by the inverse H of the augmented
//! vertex matrix B = [vertices ᵀ; 1ᵀ]. Row j of H is the affine functional
//! returning barycentric coordinate j, and the simplex volume is
//! 1 / (R! · |det H|), so minimizing volume means maximizing |det H| subject
//! to every functional staying ≥ −ε on the data. Because the rows of H sum
//! to a fixed vector, the last row is eliminated and det H equals the
//! determinant of the R×R linear part A of the free rows. Cycling over free
//! rows, the determinant is linear in the active row (cofactor expansion),
//! so each row update is a pair of signed linear programs over the
//! enclosure constraints. Volume never increases: a row is replaced only
//! when it strictly grows |det A|.

mod linprog;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::subspace::ReducedPoints;
use crate::{CpmError, Result};

/// Settings for [`fit_mves`]. The solver is fully deterministic; `seed` is
/// recorded in artifacts for provenance but consumed by no RNG here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MvesConfig {
    /// Enclosure slack ε: fitted points may have barycentric coordinates as
    /// low as −ε.
    pub slack: f64,
    /// Cap on row-cycling sweeps, applied to each restart separately.
    pub max_iterations: usize,
    /// Relative volume change between sweeps that declares convergence.
    pub volume_tol: f64,
    /// Recorded for provenance; fitting itself draws no random numbers.
    pub seed: u64,
    /// Number of deterministic initializations to optimize from (the best
    /// result wins). Values over the point count are clamped; 0 acts as 1.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_restarts() -> usize {
    16
}

impl Default for MvesConfig {
    fn default() -> Self {
        MvesConfig {
            slack: 1e-6,
            max_iterations: 500,
            volume_tol: 1e-7,
            seed: 0,
            restarts: default_restarts(),
        }
    }
}

/// Diagnostics from one [`fit_mves`] run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// Number of completed sweeps over the facet functionals.
    pub iterations: usize,
    pub final_volume: f64,
    /// Largest enclosure violation over the fit points, after clamping at 0.
    pub max_violation: f64,
    /// Volume after initialization and after each sweep; non-increasing.
    pub volume_history: Vec<f64>,
    /// False when the sweep cap stopped the fit before the volume settled.
    pub converged: bool,
}

/// A fitted enclosing simplex: one vertex per row of `vertices`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Simplex {
    /// (R+1) × R; row j is vertex v_j in reduced coordinates.
    #[serde(with = "crate::matrix_serde")]
    pub vertices: DMatrix<f64>,
    /// |det(edge matrix)| / R! at fit time.
    pub volume: f64,
    /// Enclosure slack the fit was run with.
    pub slack: f64,
    pub fit_report: FitReport,
}

impl Simplex {
    /// Dimension R of the space the simplex lives in.
    pub fn dim(&self) -> usize {
        self.vertices.ncols()
    }

    /// Number of vertices, R+1 for a well-formed simplex.
    pub fn num_vertices(&self) -> usize {
        self.vertices.nrows()
    }
}

/// Barycentric composition coefficients for a set of points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompositionCoefficients {
    /// n × (R+1); row i holds the clipped, renormalized coefficients of
    /// point i.
    #[serde(with = "crate::matrix_serde")]
    pub coeffs: DMatrix<f64>,
    pub utterance_ids: Vec<usize>,
    /// Largest pre-clip negative excursion seen while decomposing, clamped
    /// at 0. Small positive values mean some points sat slightly outside.
    pub max_violation: f64,
}

/// Augmented vertex matrix B: column j is (v_j, 1).
fn augmented(vertices: &DMatrix<f64>) -> DMatrix<f64> {
    let r = vertices.ncols();
    let k = vertices.nrows();
    DMatrix::from_fn(r + 1, k, |i, j| if i < r { vertices[(j, i)] } else { 1.0 })
}

fn ln_factorial(r: usize) -> f64 {
    (2..=r).map(|k| (k as f64).ln()).sum()
}

/// log|det M| via LU, or None when a pivot vanishes. Working in logs keeps
/// high-dimensional volumes (where R! and the determinant overflow f64
/// separately) representable.
fn log_abs_det(m: &DMatrix<f64>) -> Option<f64> {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut s = 0.0;
    for i in 0..u.nrows().min(u.ncols()) {
        let p = u[(i, i)].abs();
        if p == 0.0 {
            return None;
        }
        s += p.ln();
    }
    Some(s)
}

fn volume_of_vertices(vertices: &DMatrix<f64>) -> f64 {
    let r = vertices.ncols();
    if vertices.nrows() != r + 1 || r == 0 {
        return 0.0;
    }
    let edges = DMatrix::from_fn(r, r, |i, j| vertices[(i + 1, j)] - vertices[(0, j)]);
    match log_abs_det(&edges) {
        Some(ld) => (ld - ln_factorial(r)).exp(),
        None => 0.0,
    }
}

/// Volume of the simplex, recomputed from its vertices: |det(edges)| / R!.
pub fn volume(simplex: &Simplex) -> f64 {
    volume_of_vertices(&simplex.vertices)
}

/// Raw barycentric coordinates of `point`: the unique vector `a` with
/// `Σ a_j v_j = point` and `Σ a_j = 1`. Coordinates may be negative for
/// points outside the simplex.
pub fn barycentric(simplex: &Simplex, point: &DVector<f64>) -> Result<DVector<f64>> {
    let r = simplex.dim();
    if point.len() != r {
        return Err(CpmError::DimensionMismatch {
            what: "barycentric point",
            expected: r,
            found: point.len(),
        });
    }
    let lu = augmented(&simplex.vertices).lu();
    solve_barycentric(&lu, point)
}

fn solve_barycentric(
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    point: &DVector<f64>,
) -> Result<DVector<f64>> {
    let r = point.len();
    let mut rhs = DVector::zeros(r + 1);
    rhs.rows_mut(0, r).copy_from(point);
    rhs[r] = 1.0;
    let a = lu.solve(&rhs).ok_or(CpmError::DegenerateSimplex)?;
    if a.iter().all(|v| v.is_finite()) {
        Ok(a)
    } else {
        Err(CpmError::DegenerateSimplex)
    }
}

/// Clip negatives to 0 and renormalize to sum 1. Returns the cleaned
/// coefficients and the pre-clip violation `max(0, −min raw coordinate)`.
pub fn barycentric_clipped(simplex: &Simplex, point: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let raw = barycentric(simplex, point)?;
    Ok(clip_and_renormalize(raw))
}

fn clip_and_renormalize(mut a: DVector<f64>) -> (DVector<f64>, f64) {
    let min = a.min();
    let violation = (-min).max(0.0);
    if violation > 0.0 {
        a.apply(|v| *v = v.max(0.0));
        let sum = a.sum();
        if sum > 0.0 {
            a /= sum;
        }
    }
    (a, violation)
}

/// Clipped barycentric coefficients for every reduced point, plus the worst
/// pre-clip violation seen.
pub fn decompose_all(simplex: &Simplex, points: &ReducedPoints) -> Result<CompositionCoefficients> {
    let r = simplex.dim();
    if points.coords.ncols() != r {
        return Err(CpmError::DimensionMismatch {
            what: "reduced points",
            expected: r,
            found: points.coords.ncols(),
        });
    }
    let n = points.coords.nrows();
    let lu = augmented(&simplex.vertices).lu();
    let mut coeffs = DMatrix::zeros(n, r + 1);
    let mut max_violation = 0.0_f64;
    for i in 0..n {
        let p = points.coords.row(i).transpose();
        let raw = solve_barycentric(&lu, &p)?;
        let (clean, violation) = clip_and_renormalize(raw);
        max_violation = max_violation.max(violation);
        coeffs.row_mut(i).copy_from(&clean.transpose());
    }
    Ok(CompositionCoefficients {
        coeffs,
        utterance_ids: points.utterance_ids.clone(),
        max_violation,
    })
}

/// `max(0, −min raw barycentric coordinate)` over all points: 0 means every
/// point is inside the simplex. Empty point sets report 0; a degenerate
/// simplex reports infinity, since it encloses nothing.
pub fn enclosure_violation(simplex: &Simplex, points: &ReducedPoints) -> f64 {
    let n = points.coords.nrows();
    if n == 0 {
        return 0.0;
    }
    let lu = augmented(&simplex.vertices).lu();
    let mut worst = 0.0_f64;
    for i in 0..n {
        let p = points.coords.row(i).transpose();
        match solve_barycentric(&lu, &p) {
            Ok(a) => worst = worst.max(-a.min()),
            Err(_) => return f64::INFINITY,
        }
    }
    worst.max(0.0)
}

/// Affine rank of the point cloud: the number of singular values of the
/// centered coordinates above the standard noise threshold.
fn affine_rank(coords: &DMatrix<f64>) -> usize {
    let n = coords.nrows();
    let mean = coords.row_mean();
    let mut centered = coords.clone();
    for i in 0..n {
        let mut row = centered.row_mut(i);
        row -= &mean;
    }
    let svd = centered.svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = smax * (n.max(coords.ncols()) as f64) * f64::EPSILON;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Whitened copy of the points: centered and scaled so the sample covariance
/// becomes the identity. Initialization distances measured here are
/// invariant under invertible affine maps of the data, which makes the whole
/// fit affinely equivariant. Falls back to plain centering when the
/// covariance is too ill-conditioned to factor.
fn whitened(coords: &DMatrix<f64>) -> DMatrix<f64> {
    let n = coords.nrows();
    let mean = coords.row_mean();
    let mut centered = coords.clone();
    for i in 0..n {
        let mut row = centered.row_mut(i);
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / ((n.max(2) - 1) as f64);
    if let Some(chol) = nalgebra::Cholesky::new(cov) {
        // z_i = L⁻¹ (x_i − mean), computed row-wise by triangular solve.
        if let Some(zt) = chol.l().solve_lower_triangular(&centered.transpose()) {
            return zt.transpose();
        }
    }
    centered
}

/// Candidate first vertices for the restarts: point indices ordered by
/// whitened distance from the centroid, farthest first, ties toward the
/// lower index.
fn first_vertex_candidates(white: &DMatrix<f64>, restarts: usize) -> Vec<usize> {
    let n = white.nrows();
    let centroid = white.row_mean();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let da = (white.row(a) - &centroid).norm();
        let db = (white.row(b) - &centroid).norm();
        db.partial_cmp(&da)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(restarts.max(1).min(n));
    order
}

/// R+1 affinely independent row indices chosen by farthest-point traversal
/// in whitened space: starting from `first`, repeatedly take the point
/// farthest from the affine span of those chosen so far. Ties break toward
/// the lowest row index, keeping initialization deterministic.
fn traversal_indices(white: &DMatrix<f64>, first: usize) -> Vec<usize> {
    let n = white.nrows();
    let r = white.ncols();
    let mut chosen: Vec<usize> = Vec::with_capacity(r + 1);
    chosen.push(first);

    // Orthonormal directions spanning the affine hull of the chosen points.
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(r);
    let origin = white.row(first).transpose();
    while chosen.len() < r + 1 {
        let mut best = (f64::NEG_INFINITY, 0usize, DVector::zeros(r));
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            let mut d = white.row(i).transpose() - &origin;
            for q in &basis {
                let t = q.dot(&d);
                d.axpy(-t, q, 1.0);
            }
            let dist = d.norm();
            if dist > best.0 {
                best = (dist, i, d);
            }
        }
        let (dist, idx, resid) = best;
        // The caller verified affine rank R, so a strictly off-span point
        // always exists until R+1 are chosen.
        debug_assert!(dist > 0.0, "farthest-point traversal stalled");
        basis.push(resid / dist);
        chosen.push(idx);
    }
    chosen
}

/// Mutable optimizer state: the full functional matrix H, its evaluation at
/// every point, and the shared LP constraint rows.
struct SweepState {
    /// (R+1)×(R+1); row j = (α_j | β_j), the affine functional returning
    /// barycentric coordinate j. Column sums equal the last unit vector.
    h: DMatrix<f64>,
    /// n×(R+1); y[(i, j)] = functional j evaluated at point i.
    y: DMatrix<f64>,
    /// n×(R+1); row i is (p_i | 1), shared by every LP subproblem.
    con_rows: DMatrix<f64>,
    r: usize,
    eps: f64,
}

impl SweepState {
    fn new(h: DMatrix<f64>, points: &ReducedPoints, eps: f64) -> SweepState {
        let n = points.coords.nrows();
        let r = points.coords.ncols();
        let con_rows = DMatrix::from_fn(
            n,
            r + 1,
            |i, j| {
                if j < r {
                    points.coords[(i, j)]
                } else {
                    1.0
                }
            },
        );
        let y = &con_rows * h.transpose();
        SweepState {
            h,
            y,
            con_rows,
            r,
            eps,
        }
    }

    /// Linear parts of all rows except `dependent`: |det H| = |det A| after
    /// eliminating the dependent row, for any choice of it.
    fn free_alpha(&self, dependent: usize) -> DMatrix<f64> {
        let rows: Vec<usize> = (0..=self.r).filter(|&s| s != dependent).collect();
        DMatrix::from_fn(self.r, self.r, |i, j| self.h[(rows[i], j)])
    }

    fn volume(&self, dependent: usize) -> Result<f64> {
        let ld = log_abs_det(&self.free_alpha(dependent)).ok_or(CpmError::DegenerateSimplex)?;
        Ok((-ld - ln_factorial(self.r)).exp())
    }

    /// One pass over the free rows under the given dependent row. A row is
    /// replaced only when it strictly grows |det A|, so the volume after a
    /// sweep never exceeds the volume before it.
    fn sweep(&mut self, dependent: usize) -> Result<()> {
        let r = self.r;
        let n = self.con_rows.nrows();
        let free: Vec<usize> = (0..=r).filter(|&s| s != dependent).collect();
        for (pos, &row) in free.iter().enumerate() {
            // Cofactor direction: det A is linear in the entries of row
            // `row` with gradient det(A)·(A⁻¹ e_pos), the matching column of
            // the inverse. Only the direction matters because both signs are
            // tried, so solve A w = e_pos and normalize.
            let a = self.free_alpha(dependent);
            let mut e = DVector::zeros(r);
            e[pos] = 1.0;
            let w = a.lu().solve(&e).ok_or(CpmError::DegenerateSimplex)?;
            let wn = w.norm();
            if !(wn.is_finite() && wn > 0.0) {
                return Err(CpmError::Solver("cofactor direction degenerated".into()));
            }
            let chat = &w / wn;
            let alpha_row = DVector::from_fn(r, |k, _| self.h[(row, k)]);
            // Along chat, the current row scores ±1/‖w‖ (cofactor expansion
            // of det A by its own row).
            let current = chat.dot(&alpha_row);

            // Bounds per point: −ε ≤ y_i(row), and the dependent row's own
            // enclosure constraint 1 − Σ_{s free} y_i(s) ≥ −ε rearranged as
            // an upper bound on y_i(row).
            let mut hi = vec![0.0; n];
            for (i, h) in hi.iter_mut().enumerate() {
                let mut others = 0.0;
                for &s in &free {
                    if s != row {
                        others += self.y[(i, s)];
                    }
                }
                *h = 1.0 + self.eps - others;
            }
            let lo = vec![-self.eps; n];

            let mut c_full = DVector::zeros(r + 1);
            c_full.rows_mut(0, r).copy_from(&chat);
            let x0 = DVector::from_fn(r + 1, |k, _| self.h[(row, k)]);

            let plus = linprog::maximize_two_sided(&c_full, &self.con_rows, &lo, &hi, &x0)
                .map_err(CpmError::Solver)?;
            let minus = linprog::maximize_two_sided(&(-&c_full), &self.con_rows, &lo, &hi, &x0)
                .map_err(CpmError::Solver)?;

            // The minus problem's objective is the magnitude of the
            // negative-orientation score; take whichever grows |det| more.
            let (best_val, best_x) = if minus.objective > plus.objective {
                (minus.objective, &minus.x)
            } else {
                (plus.objective, &plus.x)
            };
            if best_val > current.abs() * (1.0 + 1e-12) {
                for k in 0..=r {
                    self.h[(row, k)] = best_x[k];
                }
                // The dependent row absorbs the move: rebuild it as the
                // exact complement, which also sheds accumulated drift.
                for k in 0..=r {
                    let mut v = if k == r { 1.0 } else { 0.0 };
                    for &s in &free {
                        v -= self.h[(s, k)];
                    }
                    self.h[(dependent, k)] = v;
                }
                let y_row = &self.con_rows * self.h.row(row).transpose();
                self.y.column_mut(row).copy_from(&y_row);
                let y_dep = &self.con_rows * self.h.row(dependent).transpose();
                self.y.column_mut(dependent).copy_from(&y_dep);
            }
        }
        Ok(())
    }
}

/// Fit the minimum-volume enclosing simplex of the reduced points.
///
/// Requires at least R+1 points that affinely span R dimensions. The result
/// encloses every point within the configured slack and is a local optimum
/// of the row-cycling scheme described at module level; identical inputs and
/// config produce bit-identical simplexes.
pub fn fit_mves(points: &ReducedPoints, config: &MvesConfig) -> Result<Simplex> {
    let n = points.coords.nrows();
    let r = points.coords.ncols();
    if r == 0 {
        return Err(CpmError::InvalidParameter(
            "reduced dimension must be at least 1".into(),
        ));
    }
    if !(config.slack.is_finite() && config.slack > 0.0) {
        return Err(CpmError::InvalidParameter(format!(
            "slack must be positive and finite, got {}",
            config.slack
        )));
    }
    if n < r + 1 || affine_rank(&points.coords) < r {
        return Err(CpmError::DegeneratePoints { r });
    }

    let white = whitened(&points.coords);
    let mut best: Option<Simplex> = None;
    let mut first_err: Option<CpmError> = None;
    for &first in &first_vertex_candidates(&white, config.restarts) {
        let indices = traversal_indices(&white, first);
        match fit_from_vertices(points, &indices, config) {
            Ok(s) => {
                if best.as_ref().is_none_or(|b| s.volume < b.volume) {
                    best = Some(s);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match best {
        Some(s) => Ok(s),
        None => Err(first_err.expect("at least one restart always runs")),
    }
}

/// Optimize from one initial vertex selection: dilate to feasibility, then
/// run rotating row-cycling sweeps until the volume settles.
fn fit_from_vertices(
    points: &ReducedPoints,
    indices: &[usize],
    config: &MvesConfig,
) -> Result<Simplex> {
    let n = points.coords.nrows();
    let r = points.coords.ncols();

    // Stay strictly inside the advertised slack so LU and LP roundoff cannot
    // push the reported violation past it.
    let eps = 0.999 * config.slack;

    // Initial feasible simplex: the chosen vertices, dilated about their
    // centroid until every point's most negative coordinate is within the
    // slack. Dilation acts on barycentric coordinates as an affine map, so
    // only the running minimum needs tracking.
    let init = DMatrix::from_fn(r + 1, r, |row, col| points.coords[(indices[row], col)]);
    let lu = augmented(&init).lu();
    let mut min_coord = f64::INFINITY;
    for i in 0..n {
        let p = points.coords.row(i).transpose();
        let a = solve_barycentric(&lu, &p)?;
        min_coord = min_coord.min(a.min());
    }
    let target = 0.9 * eps;
    let kp1 = (r + 1) as f64;
    let mut scale = 1.0_f64;
    let mut guard = 0usize;
    let mut mu = min_coord;
    while -mu > target {
        let t = 1.0 + (-mu).max(0.0);
        mu = mu / t + (1.0 - 1.0 / t) / kp1;
        scale *= t;
        guard += 1;
        if guard > 200_000 {
            return Err(CpmError::Solver(
                "dilation failed to reach a feasible start".into(),
            ));
        }
    }
    let init_centroid = init.row_mean();
    let mut start = init;
    for j in 0..=r {
        let row = (start.row(j) - &init_centroid) * scale + &init_centroid;
        start.row_mut(j).copy_from(&row);
    }

    // Facet functionals: H = B⁻¹ with rows (α_j | β_j). Rows of H sum to the
    // last unit vector column-wise, so one row is always dependent on the
    // others; the optimizer cycles the free rows and rotates which row plays
    // the dependent role, because a move of row j drags the dependent row
    // along with it and different pairings reach different configurations.
    let h = augmented(&start)
        .lu()
        .try_inverse()
        .ok_or(CpmError::DegenerateSimplex)?;
    let mut state = SweepState::new(h, points, eps);

    let mut volume_history = Vec::with_capacity(config.max_iterations + 1);
    let mut vol = state.volume(r)?;
    volume_history.push(vol);

    let mut iterations = 0usize;
    let mut converged = false;
    'outer: loop {
        let cycle_start = vol;
        // Start with the last row dependent: with the untouched
        // initialization this matches plain row cycling.
        for dep in (0..=r).rev() {
            loop {
                if iterations >= config.max_iterations {
                    break 'outer;
                }
                state.sweep(dep)?;
                iterations += 1;
                let new_vol = state.volume(dep)?;
                volume_history.push(new_vol);
                let settled = (vol - new_vol) <= config.volume_tol * vol;
                vol = new_vol;
                if settled {
                    break;
                }
            }
        }
        if (cycle_start - vol) <= config.volume_tol * cycle_start {
            converged = true;
            break;
        }
    }

    // Invert the functionals back to vertices and normalize the homogeneous
    // coordinate (exactly 1 in exact arithmetic).
    let b = state
        .h
        .lu()
        .try_inverse()
        .ok_or(CpmError::DegenerateSimplex)?;
    let vertices = DMatrix::from_fn(r + 1, r, |j, k| b[(k, j)] / b[(r, j)]);

    let mut simplex = Simplex {
        volume: volume_of_vertices(&vertices),
        vertices,
        slack: config.slack,
        fit_report: FitReport {
            iterations,
            final_volume: 0.0,
            max_violation: 0.0,
            volume_history,
            converged,
        },
    };
    let violation = enclosure_violation(&simplex, points);
    simplex.fit_report.max_violation = violation;
    simplex.fit_report.final_volume = simplex.volume;
    if violation > config.slack {
        return Err(CpmError::EnclosureNotMet {
            violation,
            simplex: Box::new(simplex),
        });
    }
    Ok(simplex)
}
