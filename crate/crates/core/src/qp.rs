//! Dense convex quadratic programming.
//!
//! `qp_solve` handles problems of the form
//!
//! ```text
//!     minimize    ½ zᵀH z + gᵀz
//!     subject to  A_eq z  = b_eq
//!                 A_in z ≤ b_in
//!                 lower ≤ z ≤ upper
//! ```
//!
//! Equality constraints are eliminated once per solve through a column-pivoted
//! Householder factorization (which also yields an infeasibility certificate
//! for inconsistent systems), then the reduced inequality-constrained problem
//! is solved with a Mehrotra predictor-corrector interior-point iteration.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch in {0}")]
    Dimension(&'static str),
    #[error("Hessian is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("Hessian is not positive semidefinite")]
    NotPositiveSemidefinite,
    #[error("non-finite entry in problem data")]
    NonFinite,
}

/// Dense QP data. Zero-row matrices encode "no constraints of this kind".
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    /// Rows mean `in_matrix · z ≤ in_rhs`.
    pub in_matrix: DMatrix<f64>,
    pub in_rhs: DVector<f64>,
    pub lower: Option<DVector<f64>>,
    pub upper: Option<DVector<f64>>,
}

impl QuadraticProgram {
    pub fn unconstrained(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let d = gradient.len();
        Self {
            hessian,
            gradient,
            eq_matrix: DMatrix::zeros(0, d),
            eq_rhs: DVector::zeros(0),
            in_matrix: DMatrix::zeros(0, d),
            in_rhs: DVector::zeros(0),
            lower: None,
            upper: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (z.transpose() * &self.hessian * z)[(0, 0)] + self.gradient.dot(z)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let d = self.dim();
        if self.hessian.nrows() != d || self.hessian.ncols() != d {
            return Err(QpError::Dimension("hessian"));
        }
        if self.eq_matrix.ncols() != d || self.eq_matrix.nrows() != self.eq_rhs.len() {
            return Err(QpError::Dimension("equalities"));
        }
        if self.in_matrix.ncols() != d || self.in_matrix.nrows() != self.in_rhs.len() {
            return Err(QpError::Dimension("inequalities"));
        }
        for b in [&self.lower, &self.upper].into_iter().flatten() {
            if b.len() != d {
                return Err(QpError::Dimension("bounds"));
            }
        }
        let finite = self
            .hessian
            .iter()
            .chain(self.gradient.iter())
            .chain(self.eq_matrix.iter())
            .chain(self.eq_rhs.iter())
            .chain(self.in_matrix.iter())
            .chain(self.in_rhs.iter())
            .all(|x| x.is_finite());
        if !finite {
            return Err(QpError::NonFinite);
        }
        Ok(())
    }

    /// Human-readable dump used by the debug CLI.
    pub fn dump_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let d = self.dim();
        writeln!(
            out,
            "quadratic program: {} variables, {} equalities, {} inequalities",
            d,
            self.eq_matrix.nrows(),
            self.in_matrix.nrows()
        )
        .unwrap();
        let write_matrix = |out: &mut String, name: &str, m: &DMatrix<f64>| {
            writeln!(out, "{name} ({}x{}):", m.nrows(), m.ncols()).unwrap();
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:+.6e}", m[(i, j)])).collect();
                writeln!(out, "  {}", row.join(" ")).unwrap();
            }
        };
        let write_vector = |out: &mut String, name: &str, v: &DVector<f64>| {
            let row: Vec<String> = v.iter().map(|x| format!("{x:+.6e}")).collect();
            writeln!(out, "{name}: [{}]", row.join(" ")).unwrap();
        };
        write_matrix(&mut out, "H", &self.hessian);
        write_vector(&mut out, "g", &self.gradient);
        if self.eq_matrix.nrows() > 0 {
            write_matrix(&mut out, "A_eq", &self.eq_matrix);
            write_vector(&mut out, "b_eq", &self.eq_rhs);
        }
        if self.in_matrix.nrows() > 0 {
            write_matrix(&mut out, "A_in", &self.in_matrix);
            write_vector(&mut out, "b_in", &self.in_rhs);
        }
        if let Some(lo) = &self.lower {
            write_vector(&mut out, "lower", lo);
        }
        if let Some(hi) = &self.upper {
            write_vector(&mut out, "upper", hi);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
    Unbounded,
}

/// Infinity norms of the KKT conditions at the returned point.
#[derive(Debug, Clone, Copy, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_in: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub eq_duals: DVector<f64>,
    pub in_duals: DVector<f64>,
    pub lower_duals: DVector<f64>,
    pub upper_duals: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
}

/// Column-pivoted Householder QR of `A_eqᵀ`, kept as reflectors.
struct EqFactor {
    /// d×r working matrix; `R` on and above the diagonal, reflector tails below.
    qr: DMatrix<f64>,
    betas: Vec<f64>,
    /// Column permutation: factored column j came from input column perm[j].
    perm: Vec<usize>,
    rank: usize,
}

impl EqFactor {
    fn new(at: &DMatrix<f64>) -> Self {
        let d = at.nrows();
        let r = at.ncols();
        let steps = d.min(r);
        let mut qr = at.clone();
        let mut betas = vec![0.0; steps];
        let mut perm: Vec<usize> = (0..r).collect();
        let mut rank = steps;
        let mut threshold = 0.0;
        for j in 0..steps {
            // Pivot: bring the column with the largest remaining norm to j.
            let mut best = j;
            let mut best_norm = 0.0;
            for c in j..r {
                let norm = qr.view((j, c), (d - j, 1)).norm();
                if norm > best_norm {
                    best_norm = norm;
                    best = c;
                }
            }
            if j == 0 {
                threshold = best_norm * 1e-12;
            }
            if best_norm <= threshold || best_norm == 0.0 {
                rank = j;
                break;
            }
            if best != j {
                qr.swap_columns(j, best);
                perm.swap(j, best);
            }
            // Householder reflector zeroing column j below the diagonal.
            let x0 = qr[(j, j)];
            let sigma = best_norm.copysign(if x0 >= 0.0 { 1.0 } else { -1.0 });
            let v0 = x0 + sigma;
            if v0.abs() < f64::MIN_POSITIVE {
                betas[j] = 0.0;
                continue;
            }
            // v = [1, tail/v0]; β = v0 / σ gives H = I − β̂ v vᵀ with β̂ = v0/σ… use
            // the classic normalization β = v0 / sigma scaled form below.
            let beta = v0 / sigma;
            for i in j + 1..d {
                qr[(i, j)] /= v0;
            }
            qr[(j, j)] = -sigma;
            betas[j] = beta;
            // Apply to the remaining columns.
            for c in j + 1..r {
                let mut dot = qr[(j, c)];
                for i in j + 1..d {
                    dot += qr[(i, j)] * qr[(i, c)];
                }
                let scale = beta * dot;
                qr[(j, c)] -= scale;
                for i in j + 1..d {
                    let vij = qr[(i, j)];
                    qr[(i, c)] -= scale * vij;
                }
            }
        }
        Self {
            qr,
            betas,
            perm,
            rank,
        }
    }

    fn dim(&self) -> usize {
        self.qr.nrows()
    }

    /// w ← Qᵀ w (reflectors in forward order).
    fn apply_q_t(&self, w: &mut DVector<f64>) {
        let d = self.dim();
        for j in 0..self.rank {
            let beta = self.betas[j];
            if beta == 0.0 {
                continue;
            }
            let mut dot = w[j];
            for i in j + 1..d {
                dot += self.qr[(i, j)] * w[i];
            }
            let scale = beta * dot;
            w[j] -= scale;
            for i in j + 1..d {
                w[i] -= scale * self.qr[(i, j)];
            }
        }
    }

    /// w ← Q w (reflectors in reverse order).
    fn apply_q(&self, w: &mut DVector<f64>) {
        let d = self.dim();
        for j in (0..self.rank).rev() {
            let beta = self.betas[j];
            if beta == 0.0 {
                continue;
            }
            let mut dot = w[j];
            for i in j + 1..d {
                dot += self.qr[(i, j)] * w[i];
            }
            let scale = beta * dot;
            w[j] -= scale;
            for i in j + 1..d {
                w[i] -= scale * self.qr[(i, j)];
            }
        }
    }

    /// Orthonormal basis of the nullspace of `A_eq` (d×(d−rank)).
    fn nullspace(&self) -> DMatrix<f64> {
        let d = self.dim();
        let dr = d - self.rank;
        let mut z = DMatrix::zeros(d, dr);
        let mut col = DVector::zeros(d);
        for c in 0..dr {
            col.fill(0.0);
            col[self.rank + c] = 1.0;
            self.apply_q(&mut col);
            z.column_mut(c).copy_from(&col);
        }
        z
    }
}

/// Provenance of one folded inequality row.
enum InRow {
    General(usize),
    Lower(usize),
    Upper(usize),
}

struct FoldedInequalities {
    matrix: DMatrix<f64>,
    rhs: DVector<f64>,
    rows: Vec<InRow>,
}

fn fold_inequalities(qp: &QuadraticProgram) -> FoldedInequalities {
    let d = qp.dim();
    let mut rows = Vec::new();
    for i in 0..qp.in_matrix.nrows() {
        rows.push(InRow::General(i));
    }
    if let Some(lo) = &qp.lower {
        for (j, l) in lo.iter().enumerate() {
            if l.is_finite() {
                rows.push(InRow::Lower(j));
            }
        }
    }
    if let Some(hi) = &qp.upper {
        for (j, h) in hi.iter().enumerate() {
            if h.is_finite() {
                rows.push(InRow::Upper(j));
            }
        }
    }
    let m = rows.len();
    let mut matrix = DMatrix::zeros(m, d);
    let mut rhs = DVector::zeros(m);
    for (k, row) in rows.iter().enumerate() {
        match row {
            InRow::General(i) => {
                matrix.row_mut(k).copy_from(&qp.in_matrix.row(*i));
                rhs[k] = qp.in_rhs[*i];
            }
            InRow::Lower(j) => {
                matrix[(k, *j)] = -1.0;
                rhs[k] = -qp.lower.as_ref().unwrap()[*j];
            }
            InRow::Upper(j) => {
                matrix[(k, *j)] = 1.0;
                rhs[k] = qp.upper.as_ref().unwrap()[*j];
            }
        }
    }
    FoldedInequalities { matrix, rhs, rows }
}

struct IpmResult {
    y: DVector<f64>,
    duals: DVector<f64>,
    status: QpStatus,
    iterations: usize,
}

/// Mehrotra predictor-corrector for `min ½yᵀHy + gᵀy s.t. Ay ≤ b`.
fn solve_ipm(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> IpmResult {
    let d = g.len();
    let m = b.len();
    let g_scale = 1.0 + g.amax();
    let b_scale = 1.0 + b.amax();

    // Starting point: lightly regularized unconstrained minimizer.
    let mut reg = 1e-8 * (1.0 + h.diagonal().amax());
    let mut y = loop {
        let shifted = h + DMatrix::from_diagonal(&DVector::from_element(d, reg));
        if let Some(chol) = shifted.cholesky() {
            break chol.solve(&(-g));
        }
        reg *= 100.0;
        if reg > 1e6 {
            break DVector::zeros(d);
        }
    };
    let slack0 = b - a * &y;
    let mut s = slack0.map(|si| si.max(1.0));
    let mut mu = DVector::from_element(m, 1.0);

    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let rd = h * &y + g + a.transpose() * &mu;
        let rp = a * &y + &s - b;
        let gap = s.dot(&mu) / m as f64;
        let obj_scale = 1.0 + (0.5 * (y.transpose() * h * &y)[(0, 0)] + g.dot(&y)).abs();
        if rd.amax() <= tol * g_scale && rp.amax() <= tol * b_scale && gap <= tol * obj_scale {
            return IpmResult {
                y,
                duals: mu,
                status: QpStatus::Optimal,
                iterations,
            };
        }
        if y.amax() > 1e12 * g_scale {
            return IpmResult {
                y,
                duals: mu,
                status: QpStatus::Unbounded,
                iterations,
            };
        }

        // Normal-equations matrix H + Aᵀ diag(μ/s) A, factored once.
        let w: DVector<f64> = mu.zip_map(&s, |mi, si| mi / si);
        let mut mmat = h.clone();
        for k in 0..m {
            let wk = w[k];
            if wk == 0.0 {
                continue;
            }
            let row = a.row(k);
            for i in 0..d {
                let ai = row[i];
                if ai == 0.0 {
                    continue;
                }
                for j in 0..d {
                    mmat[(i, j)] += wk * ai * row[j];
                }
            }
        }
        let mut chol = None;
        let mut mreg = 1e-12 * (1.0 + mmat.diagonal().amax());
        for _ in 0..8 {
            let shifted = &mmat + DMatrix::from_diagonal(&DVector::from_element(d, mreg));
            if let Some(c) = shifted.cholesky() {
                chol = Some(c);
                break;
            }
            mreg *= 100.0;
        }
        let Some(chol) = chol else {
            return IpmResult {
                y,
                duals: mu,
                status: QpStatus::MaxIter,
                iterations,
            };
        };

        let solve_direction = |rc: &DVector<f64>| -> (DVector<f64>, DVector<f64>, DVector<f64>) {
            // dμ = diag(1/s)(rc + μ∘rp) + diag(μ/s) A dy,  ds = −rp − A dy.
            let t: DVector<f64> =
                DVector::from_fn(m, |k, _| (rc[k] + mu[k] * rp[k]) / s[k]);
            let rhs = -(&rd) - a.transpose() * &t;
            let dy = chol.solve(&rhs);
            let ady = a * &dy;
            let ds = -(&rp) - &ady;
            let dmu = DVector::from_fn(m, |k, _| t[k] + w[k] * ady[k]);
            (dy, ds, dmu)
        };

        let max_step = |v: &DVector<f64>, dv: &DVector<f64>| -> f64 {
            let mut alpha: f64 = 1.0;
            for k in 0..m {
                if dv[k] < 0.0 {
                    alpha = alpha.min(-v[k] / dv[k]);
                }
            }
            alpha
        };

        // Affine (predictor) direction.
        let rc_aff: DVector<f64> = DVector::from_fn(m, |k, _| -s[k] * mu[k]);
        let (_dy_aff, ds_aff, dmu_aff) = solve_direction(&rc_aff);
        let alpha_aff = max_step(&s, &ds_aff).min(max_step(&mu, &dmu_aff));
        let gap_aff = (0..m)
            .map(|k| (s[k] + alpha_aff * ds_aff[k]) * (mu[k] + alpha_aff * dmu_aff[k]))
            .sum::<f64>()
            / m as f64;
        let sigma = (gap_aff / gap).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let rc: DVector<f64> = DVector::from_fn(m, |k, _| {
            -s[k] * mu[k] - ds_aff[k] * dmu_aff[k] + sigma * gap
        });
        let (dy, ds, dmu) = solve_direction(&rc);
        let alpha = 0.995 * max_step(&s, &ds).min(max_step(&mu, &dmu));
        let alpha = alpha.min(1.0);

        y += alpha * dy;
        s += alpha * &ds;
        mu += alpha * &dmu;
        for k in 0..m {
            s[k] = s[k].max(1e-300);
            mu[k] = mu[k].max(1e-300);
        }
    }

    IpmResult {
        y,
        duals: mu,
        status: QpStatus::MaxIter,
        iterations,
    }
}

/// Minimal max-violation of `Ay ≤ b`, decided through a strictly feasible
/// auxiliary program. Positive values certify infeasibility.
fn min_max_violation(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> f64 {
    let d = a.ncols();
    let m = a.nrows();
    // Variables (y, t): min ½ε‖y‖² + ½t²  s.t.  Ay − t·1 ≤ b.
    let mut h = DMatrix::zeros(d + 1, d + 1);
    for i in 0..d {
        h[(i, i)] = 1e-8;
    }
    h[(d, d)] = 1.0;
    let mut a_ext = DMatrix::zeros(m, d + 1);
    a_ext.view_mut((0, 0), (m, d)).copy_from(a);
    for k in 0..m {
        a_ext[(k, d)] = -1.0;
    }
    let result = solve_ipm(&h, &DVector::zeros(d + 1), &a_ext, b, tol, 100);
    result.y[d]
}

fn compute_residuals(
    qp: &QuadraticProgram,
    folded: &FoldedInequalities,
    z: &DVector<f64>,
    eq_duals: &DVector<f64>,
    folded_duals: &DVector<f64>,
) -> KktResiduals {
    let mut stationarity = &qp.hessian * z + &qp.gradient;
    if qp.eq_matrix.nrows() > 0 {
        stationarity += qp.eq_matrix.transpose() * eq_duals;
    }
    if folded.matrix.nrows() > 0 {
        stationarity += folded.matrix.transpose() * folded_duals;
    }
    let primal_eq = if qp.eq_matrix.nrows() > 0 {
        (&qp.eq_matrix * z - &qp.eq_rhs).amax()
    } else {
        0.0
    };
    let mut primal_in: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    if folded.matrix.nrows() > 0 {
        let slack = &folded.rhs - &folded.matrix * z;
        for k in 0..slack.len() {
            primal_in = primal_in.max(-slack[k]);
            complementarity = complementarity.max((slack[k] * folded_duals[k]).abs());
        }
    }
    KktResiduals {
        stationarity: stationarity.amax(),
        primal_eq,
        primal_in: primal_in.max(0.0),
        complementarity,
    }
}

/// Solve a dense convex QP.
///
/// `Optimal` certifies KKT residuals below the solver tolerance; `MaxIter`
/// returns the best iterate found; contradictory constraints are reported as
/// `Infeasible` and directions of unbounded descent as `Unbounded`.
pub fn qp_solve(
    qp: &QuadraticProgram,
    tol: f64,
    max_iter: usize,
) -> Result<QpSolution, QpError> {
    qp.validate()?;
    let d = qp.dim();

    // Symmetry within 1e-10, then work on the symmetrized matrix.
    let mut asym: f64 = 0.0;
    for i in 0..d {
        for j in i + 1..d {
            asym = asym.max((qp.hessian[(i, j)] - qp.hessian[(j, i)]).abs());
        }
    }
    let h_scale = 1.0 + qp.hessian.amax();
    if asym > 1e-10 * h_scale.max(1.0) {
        return Err(QpError::NotSymmetric(asym));
    }
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            h[(i, j)] = 0.5 * (qp.hessian[(i, j)] + qp.hessian[(j, i)]);
        }
    }

    // PSD gate: eigenvalues above −1e-9 (relative) are repaired by a diagonal
    // shift, anything lower is rejected as indefinite.
    let psd_shift = 1e-9 * h_scale;
    let shifted_ok = (&h + DMatrix::from_diagonal(&DVector::from_element(d, psd_shift)))
        .cholesky()
        .is_some();
    if !shifted_ok {
        let min_eig = h
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -psd_shift {
            return Err(QpError::NotPositiveSemidefinite);
        }
    }

    let folded = fold_inequalities(qp);
    let n_eq = qp.eq_matrix.nrows();

    // Eliminate the equality constraints.
    let (factor, z_particular, nullspace) = if n_eq > 0 {
        let factor = EqFactor::new(&qp.eq_matrix.transpose());
        let rank = factor.rank;
        // Forward-substitute Rᵀ w = Pᵀ b over the factored rows, then check
        // the dropped rows for consistency.
        let pb = DVector::from_fn(n_eq, |i, _| qp.eq_rhs[factor.perm[i]]);
        let mut w1 = DVector::zeros(rank);
        for i in 0..rank {
            let mut acc = pb[i];
            for j in 0..i {
                acc -= factor.qr[(j, i)] * w1[j];
            }
            w1[i] = acc / factor.qr[(i, i)];
        }
        let feas_tol = 1e-8 * (1.0 + qp.eq_rhs.amax());
        for i in rank..n_eq {
            let mut acc = pb[i];
            for j in 0..rank {
                acc -= factor.qr[(j, i)] * w1[j];
            }
            if acc.abs() > feas_tol {
                return Ok(QpSolution {
                    z: DVector::zeros(d),
                    eq_duals: DVector::zeros(n_eq),
                    in_duals: DVector::zeros(qp.in_matrix.nrows()),
                    lower_duals: DVector::zeros(d),
                    upper_duals: DVector::zeros(d),
                    status: QpStatus::Infeasible,
                    iterations: 0,
                    residuals: KktResiduals::default(),
                });
            }
        }
        let mut zp = DVector::zeros(d);
        zp.rows_mut(0, rank).copy_from(&w1);
        factor.apply_q(&mut zp);
        let ns = factor.nullspace();
        (Some(factor), zp, ns)
    } else {
        (None, DVector::zeros(d), DMatrix::identity(d, d))
    };

    let dr = nullspace.ncols();
    let m_in = folded.matrix.nrows();

    // Reduced data.
    let hz = &h * &nullspace;
    let mut h_red = nullspace.transpose() * &hz;
    // Keep the reduced Hessian numerically symmetric.
    for i in 0..dr {
        for j in i + 1..dr {
            let avg = 0.5 * (h_red[(i, j)] + h_red[(j, i)]);
            h_red[(i, j)] = avg;
            h_red[(j, i)] = avg;
        }
    }
    let g_red = nullspace.transpose() * (&h * &z_particular + &qp.gradient);
    let a_red = if m_in > 0 {
        &folded.matrix * &nullspace
    } else {
        DMatrix::zeros(0, dr)
    };
    let b_red = if m_in > 0 {
        &folded.rhs - &folded.matrix * &z_particular
    } else {
        DVector::zeros(0)
    };

    let mut status;
    let mut iterations = 0;
    let mut y = DVector::zeros(dr);
    let mut folded_duals = DVector::zeros(m_in);

    if dr == 0 {
        // Fully determined by the equalities.
        let viol = if m_in > 0 { (-&b_red).amax().max(0.0) } else { 0.0 };
        status = if viol > 1e-8 * (1.0 + folded.rhs.amax()) {
            QpStatus::Infeasible
        } else {
            QpStatus::Optimal
        };
    } else if m_in == 0 {
        // Pure equality-constrained problem: eigendecompose the reduced
        // Hessian so flat directions with descent certify unboundedness.
        let eig = h_red.clone().symmetric_eigen();
        let scale = 1.0 + eig.eigenvalues.amax();
        let flat_tol = 1e-9 * scale;
        let grad_tol = 1e-7 * (1.0 + g_red.amax());
        status = QpStatus::Optimal;
        for (idx, lambda) in eig.eigenvalues.iter().enumerate() {
            let comp = eig.eigenvectors.column(idx).dot(&g_red);
            if *lambda <= flat_tol {
                if comp.abs() > grad_tol {
                    status = QpStatus::Unbounded;
                    break;
                }
            } else {
                y += eig.eigenvectors.column(idx) * (-comp / lambda);
            }
        }
    } else {
        let result = solve_ipm(&h_red, &g_red, &a_red, &b_red, tol, max_iter);
        y = result.y;
        folded_duals = result.duals;
        status = result.status;
        iterations = result.iterations;
        if status == QpStatus::MaxIter {
            // Distinguish "slow" from "impossible".
            let violation = min_max_violation(&a_red, &b_red, tol);
            if violation > 1e-6 * (1.0 + b_red.amax()) {
                status = QpStatus::Infeasible;
            }
        }
    }

    let z = &z_particular + &nullspace * &y;

    // Recover equality multipliers by least squares through the same factor.
    let mut eq_duals = DVector::zeros(n_eq);
    if let Some(factor) = &factor {
        let mut rhs = -(&h * &z + &qp.gradient);
        if m_in > 0 {
            rhs -= folded.matrix.transpose() * &folded_duals;
        }
        factor.apply_q_t(&mut rhs);
        let rank = factor.rank;
        let mut u = DVector::zeros(n_eq);
        for i in (0..rank).rev() {
            let mut acc = rhs[i];
            for j in i + 1..rank {
                acc -= factor.qr[(i, j)] * u[j];
            }
            u[i] = acc / factor.qr[(i, i)];
        }
        for (j, &p) in factor.perm.iter().enumerate() {
            eq_duals[p] = u[j];
        }
    }

    // Split folded duals back into general rows and bounds.
    let mut in_duals = DVector::zeros(qp.in_matrix.nrows());
    let mut lower_duals = DVector::zeros(d);
    let mut upper_duals = DVector::zeros(d);
    for (k, row) in folded.rows.iter().enumerate() {
        match row {
            InRow::General(i) => in_duals[*i] = folded_duals[k],
            InRow::Lower(j) => lower_duals[*j] = folded_duals[k],
            InRow::Upper(j) => upper_duals[*j] = folded_duals[k],
        }
    }

    let residuals = compute_residuals(qp, &folded, &z, &eq_duals, &folded_duals);
    if status == QpStatus::Optimal {
        let ok = residuals.stationarity <= 10.0 * tol * (1.0 + qp.gradient.amax() + h_scale)
            && residuals.primal_eq <= 1e-7 * (1.0 + qp.eq_rhs.amax())
            && residuals.primal_in <= 10.0 * tol * (1.0 + folded.rhs.amax());
        if !ok {
            status = QpStatus::MaxIter;
        }
    }

    Ok(QpSolution {
        z,
        eq_duals,
        in_duals,
        lower_duals,
        upper_duals,
        status,
        iterations,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn solve(qp: &QuadraticProgram) -> QpSolution {
        qp_solve(qp, 1e-9, 60).unwrap()
    }

    /// Enumerate active sets and pick the best feasible KKT point. Oracle for
    /// small strictly convex problems.
    pub fn active_set_oracle(qp: &QuadraticProgram) -> Option<(DVector<f64>, f64)> {
        let d = qp.dim();
        let n_eq = qp.eq_matrix.nrows();
        let m = qp.in_matrix.nrows();
        let mut best: Option<(DVector<f64>, f64)> = None;
        for mask in 0u32..(1 << m) {
            let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            let na = n_eq + active.len();
            if na > d {
                continue;
            }
            let mut kkt = DMatrix::zeros(d + na, d + na);
            kkt.view_mut((0, 0), (d, d)).copy_from(&qp.hessian);
            let mut rhs = DVector::zeros(d + na);
            rhs.rows_mut(0, d).copy_from(&(-&qp.gradient));
            for (r, i) in (0..n_eq).enumerate() {
                for c in 0..d {
                    kkt[(d + r, c)] = qp.eq_matrix[(i, c)];
                    kkt[(c, d + r)] = qp.eq_matrix[(i, c)];
                }
                rhs[d + r] = qp.eq_rhs[i];
            }
            for (r, &i) in active.iter().enumerate() {
                let r = n_eq + r;
                for c in 0..d {
                    kkt[(d + r, c)] = qp.in_matrix[(i, c)];
                    kkt[(c, d + r)] = qp.in_matrix[(i, c)];
                }
                rhs[d + r] = qp.in_rhs[i];
            }
            let Some(lu) = kkt.lu().solve(&rhs) else {
                continue;
            };
            let z = lu.rows(0, d).into_owned();
            let duals = lu.rows(d + n_eq, active.len()).into_owned();
            if duals.iter().any(|m| *m < -1e-7) {
                continue;
            }
            if m > 0 {
                let slack = &qp.in_rhs - &qp.in_matrix * &z;
                if slack.iter().any(|s| *s < -1e-7) {
                    continue;
                }
            }
            let obj = qp.objective(&z);
            if best.as_ref().map_or(true, |(_, b)| obj < *b) {
                best = Some((z, obj));
            }
        }
        best
    }

    pub fn random_strictly_convex(
        rng: &mut ChaCha8Rng,
        d: usize,
        m: usize,
    ) -> QuadraticProgram {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let hessian = &a * a.transpose() + DMatrix::identity(d, d);
        let gradient = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let in_matrix = DMatrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0));
        // Keep a known interior point feasible so the problem is solvable.
        let z0 = DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));
        let margins = DVector::from_fn(m, |_, _| rng.random_range(0.1..1.5));
        let in_rhs = &in_matrix * &z0 + margins;
        QuadraticProgram {
            hessian,
            gradient,
            eq_matrix: DMatrix::zeros(0, d),
            eq_rhs: DVector::zeros(0),
            in_matrix,
            in_rhs,
            lower: None,
            upper: None,
        }
    }

    #[test]
    fn unconstrained_identity() {
        let c = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let qp = QuadraticProgram::unconstrained(DMatrix::identity(3, 3), -c.clone());
        let sol = solve(&qp);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.z - c).amax() < 1e-8);
    }

    #[test]
    fn active_bound() {
        // min ½z² s.t. z ≥ 1.
        let mut qp = QuadraticProgram::unconstrained(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
        );
        qp.lower = Some(DVector::from_vec(vec![1.0]));
        let sol = solve(&qp);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.z[0] - 1.0).abs() < 1e-7);
        assert!(sol.lower_duals[0] > 0.5);
    }

    #[test]
    fn equality_constrained() {
        // min ½‖z‖² s.t. z₁ + z₂ = 2 → (1, 1).
        let mut qp = QuadraticProgram::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        qp.eq_matrix = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        qp.eq_rhs = DVector::from_vec(vec![2.0]);
        let sol = solve(&qp);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.z[0] - 1.0).abs() < 1e-9);
        assert!((sol.z[1] - 1.0).abs() < 1e-9);
        // Stationarity: z + A_eqᵀλ = 0 → λ = −1.
        assert!((sol.eq_duals[0] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn matches_active_set_oracle_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let d = rng.random_range(2..=8);
            let m = rng.random_range(1..=6);
            let qp = random_strictly_convex(&mut rng, d, m);
            let sol = solve(&qp);
            assert_eq!(sol.status, QpStatus::Optimal);
            let (_, obj) = active_set_oracle(&qp).expect("oracle found optimum");
            let rel = (qp.objective(&sol.z) - obj).abs() / (1.0 + obj.abs());
            assert!(rel < 1e-6, "objective mismatch: {rel}");
        }
    }

    #[test]
    fn scaling_invariance_of_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let qp = random_strictly_convex(&mut rng, 6, 4);
        let sol = solve(&qp);
        let mut scaled = qp.clone();
        scaled.hessian *= 37.5;
        scaled.gradient *= 37.5;
        let sol2 = solve(&scaled);
        assert!((sol.z - sol2.z).amax() < 1e-6);
    }

    #[test]
    fn contradictory_inequalities_are_infeasible() {
        // z ≤ −1 and z ≥ 1.
        let mut qp = QuadraticProgram::unconstrained(DMatrix::identity(1, 1), DVector::zeros(1));
        qp.in_matrix = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        qp.in_rhs = DVector::from_vec(vec![-1.0, -1.0]);
        let sol = solve(&qp);
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn contradictory_equalities_are_infeasible() {
        let mut qp = QuadraticProgram::unconstrained(DMatrix::identity(1, 1), DVector::zeros(1));
        qp.eq_matrix = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        qp.eq_rhs = DVector::from_vec(vec![0.0, 1.0]);
        let sol = solve(&qp);
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn flat_descent_direction_is_unbounded() {
        // min −z, no constraints.
        let qp = QuadraticProgram::unconstrained(
            DMatrix::zeros(1, 1),
            DVector::from_vec(vec![-1.0]),
        );
        let sol = solve(&qp);
        assert_eq!(sol.status, QpStatus::Unbounded);
    }

    #[test]
    fn psd_repair_accepts_tiny_negative_eigenvalues() {
        let mut h = DMatrix::identity(2, 2);
        h[(1, 1)] = -5e-10;
        let qp = QuadraticProgram::unconstrained(h, DVector::zeros(2));
        assert!(qp_solve(&qp, 1e-8, 50).is_ok());

        let mut h = DMatrix::identity(2, 2);
        h[(1, 1)] = -1e-3;
        let qp = QuadraticProgram::unconstrained(h, DVector::zeros(2));
        assert!(matches!(
            qp_solve(&qp, 1e-8, 50),
            Err(QpError::NotPositiveSemidefinite)
        ));
    }

    #[test]
    fn asymmetric_hessian_is_rejected() {
        let mut h = DMatrix::identity(2, 2);
        h[(0, 1)] = 0.5;
        let qp = QuadraticProgram::unconstrained(h, DVector::zeros(2));
        assert!(matches!(qp_solve(&qp, 1e-8, 50), Err(QpError::NotSymmetric(_))));
    }

    #[test]
    fn max_iter_returns_best_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let qp = random_strictly_convex(&mut rng, 6, 5);
        let sol = qp_solve(&qp, 1e-9, 1).unwrap();
        assert_eq!(sol.status, QpStatus::MaxIter);
        assert!(sol.z.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn mixed_equalities_and_bounds() {
        // min ½‖z‖² − z₀ s.t. z₀ + z₁ = 1, z ≤ 0.75.
        let mut qp = QuadraticProgram::unconstrained(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-1.0, 0.0]),
        );
        qp.eq_matrix = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        qp.eq_rhs = DVector::from_vec(vec![1.0]);
        qp.upper = Some(DVector::from_element(2, 0.75));
        let sol = solve(&qp);
        assert_eq!(sol.status, QpStatus::Optimal);
        // The unconstrained-on-the-line optimum (1, 0) gets capped at z₀ = 0.75.
        assert!((sol.z[0] - 0.75).abs() < 1e-6);
        assert!((sol.z[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn dump_text_mentions_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let qp = random_strictly_convex(&mut rng, 3, 2);
        let dump = qp.dump_text();
        assert!(dump.contains("3 variables"));
        assert!(dump.contains("2 inequalities"));
    }
}
