//! Dense convex quadratic programming.
//!
//! ```text
//!     minimize     1/2 x' P x + c' x + constant
//!     subject to   A x  = b
//!                  G x <= h
//! ```
//!
//! Solved by a Mehrotra predictor-corrector primal-dual interior-point method.
//! Equality rows that fix a single variable are substituted out before the
//! iteration starts; the remaining equalities are handled through a Schur
//! complement. After convergence an active-set polish re-solves the KKT system
//! restricted to the identified active constraints, which typically drives all
//! residuals to rounding level. Every solution carries residuals recomputed on
//! the original problem by [`kkt_residuals`].

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::linalg::{axpy, cholesky_in_place, cholesky_solve, dot, norm_inf, DenseMatrix, Lu};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("KKT system is numerically singular")]
    Singular,
    #[error("malformed QP dump at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem<T> {
    /// Symmetric positive semidefinite cost matrix.
    pub p: DenseMatrix<T>,
    pub c: Vec<T>,
    /// Constant added to the objective value (does not affect the optimizer).
    pub constant: T,
    pub a_eq: DenseMatrix<T>,
    pub b_eq: Vec<T>,
    pub g: DenseMatrix<T>,
    pub h: Vec<T>,
}

impl<T: Scalar> QpProblem<T> {
    /// Problem with `n` variables and no constraints.
    pub fn unconstrained(p: DenseMatrix<T>, c: Vec<T>) -> Self {
        let n = c.len();
        Self {
            p,
            c,
            constant: T::zero(),
            a_eq: DenseMatrix::zeros(0, n),
            b_eq: Vec::new(),
            g: DenseMatrix::zeros(0, n),
            h: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        let err = |m: String| Err(QpError::Dimension(m));
        if self.p.rows != n || self.p.cols != n {
            return err(format!("P is {}x{}, expected {n}x{n}", self.p.rows, self.p.cols));
        }
        if self.a_eq.cols != n || self.a_eq.rows != self.b_eq.len() {
            return err(format!("A is {}x{} with {} rhs entries", self.a_eq.rows, self.a_eq.cols, self.b_eq.len()));
        }
        if self.g.cols != n || self.g.rows != self.h.len() {
            return err(format!("G is {}x{} with {} rhs entries", self.g.rows, self.g.cols, self.h.len()));
        }
        Ok(())
    }

    pub fn objective(&self, x: &[T]) -> T {
        let px = self.p.mul_vec(x);
        T::lit(0.5) * dot(x, &px) + dot(&self.c, x) + self.constant
    }

    /// Writes the problem in the plain-text dump format (see [`QpProblem::from_dump`]).
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        out.push_str("# ccc-qp v1\n");
        out.push_str("# minimize 0.5 x'Px + c'x + constant  subject to  A x = b,  G x <= h\n");
        out.push_str("# blocks: header line '<name> <rows> <cols>' then rows, entries space separated, row-major\n");
        let _ = writeln!(out, "n {} meq {} mineq {}", self.num_vars(), self.b_eq.len(), self.h.len());
        let _ = writeln!(out, "constant {}", self.constant);
        let mut block = |name: &str, m: &DenseMatrix<T>| {
            let _ = writeln!(out, "{name} {} {}", m.rows, m.cols);
            for i in 0..m.rows {
                let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        };
        let col = |v: &[T]| DenseMatrix {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        };
        block("P", &self.p);
        block("c", &col(&self.c));
        block("A", &self.a_eq);
        block("b", &col(&self.b_eq));
        block("G", &self.g);
        block("h", &col(&self.h));
        out
    }

    /// Parses the format written by [`QpProblem::to_dump`].
    pub fn from_dump(text: &str) -> Result<Self, QpError>
    where
        T: FromStr,
    {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let perr = |line: usize, msg: &str| QpError::Parse { line, msg: msg.to_string() };
        let num = |line: usize, tok: &str| -> Result<T, QpError> {
            tok.parse::<T>().map_err(|_| perr(line, &format!("bad number '{tok}'")))
        };
        let (ln, _) = lines.next().ok_or_else(|| perr(0, "empty dump"))?;
        let (ln_c, cline) = lines.next().ok_or_else(|| perr(ln, "missing constant"))?;
        let constant = match cline.split_whitespace().collect::<Vec<_>>()[..] {
            ["constant", v] => num(ln_c, v)?,
            _ => return Err(perr(ln_c, "expected 'constant <value>'")),
        };
        let mut read_block = |expect: &str| -> Result<DenseMatrix<T>, QpError> {
            let (hl, header) = lines.next().ok_or_else(|| perr(0, &format!("missing block {expect}")))?;
            let toks: Vec<&str> = header.split_whitespace().collect();
            if toks.len() != 3 || toks[0] != expect {
                return Err(perr(hl, &format!("expected '{expect} <rows> <cols>'")));
            }
            let rows: usize = toks[1].parse().map_err(|_| perr(hl, "bad row count"))?;
            let cols: usize = toks[2].parse().map_err(|_| perr(hl, "bad column count"))?;
            let mut m = DenseMatrix::zeros(rows, cols);
            for i in 0..rows {
                let (rl, row) = lines.next().ok_or_else(|| perr(hl, "truncated block"))?;
                let vals: Vec<&str> = row.split_whitespace().collect();
                if vals.len() != cols {
                    return Err(perr(rl, &format!("expected {cols} entries, found {}", vals.len())));
                }
                for (j, v) in vals.iter().enumerate() {
                    m[(i, j)] = num(rl, v)?;
                }
            }
            Ok(m)
        };
        let p = read_block("P")?;
        let c = read_block("c")?.data;
        let a_eq = read_block("A")?;
        let b_eq = read_block("b")?.data;
        let g = read_block("G")?;
        let h = read_block("h")?.data;
        let qp = Self { p, c, constant, a_eq, b_eq, g, h };
        qp.validate()?;
        Ok(qp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
}

/// Scaled KKT residuals of a primal-dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals<T> {
    pub primal: T,
    pub stationarity: T,
    pub complementarity: T,
    /// Largest negative inequality multiplier (scaled).
    pub dual_sign: T,
}

impl<T: Scalar> KktResiduals<T> {
    pub fn max(&self) -> T {
        self.primal
            .max(self.stationarity)
            .max(self.complementarity)
            .max(self.dual_sign)
    }

    pub fn within(&self, tol: T) -> bool {
        self.max() <= tol
    }
}

/// Recomputes KKT residuals of `(x, y, z)` for `qp` from scratch.
///
/// * primal: worst constraint violation over `1 + max(|h|, |b|)`;
/// * stationarity: `|P x + c + A'y + G'z|` over the largest term magnitude plus one;
/// * complementarity: worst `|z_i (h - G x)_i|` over `1 + max(|z|, |h|)`;
/// * dual sign: worst negative `z_i` over `1 + |z|`.
pub fn kkt_residuals<T: Scalar>(qp: &QpProblem<T>, x: &[T], y: &[T], z: &[T]) -> KktResiduals<T> {
    let one = T::one();
    let gx = qp.g.mul_vec(x);
    let ax = qp.a_eq.mul_vec(x);
    let slack: Vec<T> = qp.h.iter().zip(&gx).map(|(&h, &g)| h - g).collect();
    let viol_in = slack.iter().fold(T::zero(), |m, &s| m.max(-s));
    let viol_eq = ax.iter().zip(&qp.b_eq).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
    let scale_p = one + norm_inf(&qp.h).max(norm_inf(&qp.b_eq));

    let px = qp.p.mul_vec(x);
    let aty = qp.a_eq.tr_mul_vec(y);
    let gtz = qp.g.tr_mul_vec(z);
    let grad: Vec<T> = (0..x.len()).map(|i| px[i] + qp.c[i] + aty[i] + gtz[i]).collect();
    let scale_d = one
        + norm_inf(&px)
            .max(norm_inf(&qp.c))
            .max(norm_inf(&aty))
            .max(norm_inf(&gtz));

    let zmax = norm_inf(z);
    let comp = z.iter().zip(&slack).fold(T::zero(), |m, (&zi, &si)| m.max((zi * si).abs()));
    let neg = z.iter().fold(T::zero(), |m, &zi| m.max(-zi));
    KktResiduals {
        primal: viol_in.max(viol_eq) / scale_p,
        stationarity: norm_inf(&grad) / scale_d,
        complementarity: comp / (one + zmax.max(norm_inf(&qp.h))),
        dual_sign: neg / (one + zmax),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution<T> {
    pub x: Vec<T>,
    pub objective: T,
    /// Multipliers of the equality rows.
    pub y: Vec<T>,
    /// Multipliers of the inequality rows (non-negative).
    pub z: Vec<T>,
    pub status: QpStatus,
    pub iterations: usize,
    pub polished: bool,
    pub residuals: KktResiduals<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings<T> {
    pub max_iter: usize,
    /// Target for the scaled residuals and the complementarity measure.
    pub tol: T,
    /// Static diagonal regularization of the Newton system.
    pub regularization: T,
    pub polish: bool,
}

impl<T: Scalar> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: T::default_tol(),
            regularization: T::epsilon().sqrt() * T::lit(1e-3),
            polish: true,
        }
    }
}

pub fn solve_qp<T: Scalar>(qp: &QpProblem<T>) -> Result<QpSolution<T>, QpError> {
    solve_qp_with(qp, &QpSettings::default(), None)
}

/// Solves `qp`, optionally starting the primal iterate from `warm`.
pub fn solve_qp_with<T: Scalar>(
    qp: &QpProblem<T>,
    settings: &QpSettings<T>,
    warm: Option<&[T]>,
) -> Result<QpSolution<T>, QpError> {
    qp.validate()?;
    if let Some(w) = warm {
        if w.len() != qp.num_vars() {
            return Err(QpError::Dimension(format!("warm start has {} entries", w.len())));
        }
    }
    let red = Reduced::new(qp);
    let warm_free: Option<Vec<T>> = warm.map(|w| red.free.iter().map(|&j| w[j]).collect());
    let mut ipm = Ipm::new(&red.qp, settings);
    ipm.initialize(warm_free.as_deref())?;
    let (mut converged, mut iterations) = ipm.run()?;
    if !converged && warm_free.is_some() {
        // A poor primal guess can stall the iteration; start over cold.
        ipm = Ipm::new(&red.qp, settings);
        ipm.initialize(None)?;
        let (c, it) = ipm.run()?;
        converged = c;
        iterations += it;
    }
    let (mut xf, mut yf, mut zf) = (ipm.x.clone(), ipm.y.clone(), ipm.z.clone());
    let mut polished = false;
    if settings.polish {
        if let Some((xp, yp, zp)) = polish(&red.qp, &ipm, settings) {
            let before = kkt_residuals(&red.qp, &xf, &yf, &zf);
            let after = kkt_residuals(&red.qp, &xp, &yp, &zp);
            if after.max() <= before.max() {
                xf = xp;
                yf = yp;
                zf = zp;
                polished = true;
            }
        }
    }
    let (x, y, z) = red.expand(qp, &xf, &yf, &zf);
    let residuals = kkt_residuals(qp, &x, &y, &z);
    let status = if converged || residuals.within(settings.tol) {
        QpStatus::Optimal
    } else {
        QpStatus::MaxIterations
    };
    Ok(QpSolution {
        objective: qp.objective(&x),
        x,
        y,
        z,
        status,
        iterations,
        polished,
        residuals,
    })
}

/// Problem with singleton equality rows substituted out.
struct Reduced<T> {
    qp: QpProblem<T>,
    free: Vec<usize>,
    fixed: Vec<(usize, T)>,
    /// For each original equality row: `Ok(kept row index)` or `Err(fixed variable)`.
    eq_map: Vec<Result<usize, (usize, T)>>,
}

impl<T: Scalar> Reduced<T> {
    fn new(qp: &QpProblem<T>) -> Self {
        let n = qp.num_vars();
        let mut fixed_val: Vec<Option<T>> = vec![None; n];
        let mut eq_map = Vec::with_capacity(qp.b_eq.len());
        let mut kept_rows = Vec::new();
        for i in 0..qp.a_eq.rows {
            let row = qp.a_eq.row(i);
            let mut nz = row.iter().enumerate().filter(|(_, v)| **v != T::zero());
            match (nz.next(), nz.next()) {
                (Some((j, &a)), None) if fixed_val[j].is_none() => {
                    fixed_val[j] = Some(qp.b_eq[i] / a);
                    eq_map.push(Err((j, a)));
                }
                _ => {
                    eq_map.push(Ok(kept_rows.len()));
                    kept_rows.push(i);
                }
            }
        }
        let free: Vec<usize> = (0..n).filter(|&j| fixed_val[j].is_none()).collect();
        let fixed: Vec<(usize, T)> = (0..n).filter_map(|j| fixed_val[j].map(|v| (j, v))).collect();
        let mut x_fixed = vec![T::zero(); n];
        for &(j, v) in &fixed {
            x_fixed[j] = v;
        }
        let p_xf = qp.p.mul_vec(&x_fixed);
        let c: Vec<T> = free.iter().map(|&j| qp.c[j] + p_xf[j]).collect();
        let constant = qp.constant
            + dot(&qp.c, &x_fixed)
            + T::lit(0.5) * dot(&x_fixed, &p_xf);
        let a_rows = qp.a_eq.select_rows(&kept_rows);
        let a_fx = a_rows.mul_vec(&x_fixed);
        let b_eq = kept_rows.iter().zip(&a_fx).map(|(&i, &v)| qp.b_eq[i] - v).collect();
        let g_fx = qp.g.mul_vec(&x_fixed);
        let h = qp.h.iter().zip(&g_fx).map(|(&h, &v)| h - v).collect();
        let reduced = QpProblem {
            p: qp.p.select_rows(&free).select_cols(&free),
            c,
            constant,
            a_eq: a_rows.select_cols(&free),
            b_eq,
            g: qp.g.select_cols(&free),
            h,
        };
        Self { qp: reduced, free, fixed, eq_map }
    }

    fn expand(&self, qp: &QpProblem<T>, xf: &[T], yf: &[T], z: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let n = qp.num_vars();
        let mut x = vec![T::zero(); n];
        for (k, &j) in self.free.iter().enumerate() {
            x[j] = xf[k];
        }
        for &(j, v) in &self.fixed {
            x[j] = v;
        }
        // Multipliers of substituted rows follow from stationarity in their variable.
        let px = qp.p.mul_vec(&x);
        let mut kept_y = vec![T::zero(); qp.b_eq.len()];
        for (i, m) in self.eq_map.iter().enumerate() {
            if let Ok(k) = m {
                kept_y[i] = yf[*k];
            }
        }
        let aty = qp.a_eq.tr_mul_vec(&kept_y);
        let gtz = qp.g.tr_mul_vec(z);
        let y = self
            .eq_map
            .iter()
            .enumerate()
            .map(|(i, m)| match m {
                Ok(_) => kept_y[i],
                Err((j, a)) => -(px[*j] + qp.c[*j] + aty[*j] + gtz[*j]) / *a,
            })
            .collect();
        (x, y, z.to_vec())
    }
}

/// Contiguous nonzero column runs of each row of a matrix.
struct RowPattern {
    segments: Vec<Vec<(usize, usize)>>,
}

impl RowPattern {
    fn of<T: Scalar>(m: &DenseMatrix<T>) -> Self {
        let segments = (0..m.rows)
            .map(|i| {
                let mut segs = Vec::new();
                let mut start = None;
                for (j, v) in m.row(i).iter().enumerate() {
                    match (start, *v != T::zero()) {
                        (None, true) => start = Some(j),
                        (Some(s), false) => {
                            segs.push((s, j));
                            start = None;
                        }
                        _ => {}
                    }
                }
                if let Some(s) = start {
                    segs.push((s, m.cols));
                }
                segs
            })
            .collect();
        Self { segments }
    }

    fn mul_vec<T: Scalar>(&self, m: &DenseMatrix<T>, x: &[T]) -> Vec<T> {
        (0..m.rows)
            .map(|i| {
                let row = m.row(i);
                self.segments[i]
                    .iter()
                    .map(|&(a, b)| dot(&row[a..b], &x[a..b]))
                    .fold(T::zero(), |acc, v| acc + v)
            })
            .collect()
    }

    fn tr_mul_vec<T: Scalar>(&self, m: &DenseMatrix<T>, y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); m.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == T::zero() {
                continue;
            }
            let row = m.row(i);
            for &(a, b) in &self.segments[i] {
                axpy(yi, &row[a..b], &mut out[a..b]);
            }
        }
        out
    }

    /// Adds `G' diag(w) G` to the lower triangle of `out`.
    fn add_weighted_gram<T: Scalar>(&self, m: &DenseMatrix<T>, w: &[T], out: &mut [T]) {
        let n = m.cols;
        for (r, &wr) in w.iter().enumerate() {
            let row = m.row(r);
            let segs = &self.segments[r];
            for &(a, b) in segs {
                for i in a..b {
                    let wi = wr * row[i];
                    let dst_row = &mut out[i * n..i * n + i + 1];
                    for &(c, d) in segs {
                        if c > i {
                            break;
                        }
                        let hi = d.min(i + 1);
                        axpy(wi, &row[c..hi], &mut dst_row[c..hi]);
                    }
                }
            }
        }
    }
}

struct Ipm<'a, T> {
    qp: &'a QpProblem<T>,
    settings: QpSettings<T>,
    pattern: RowPattern,
    x: Vec<T>,
    y: Vec<T>,
    z: Vec<T>,
    s: Vec<T>,
}

/// Factorized Newton system for one interior-point iteration.
struct Newton<T> {
    n: usize,
    chol: Vec<T>,
    /// Unregularized `P + G' W G` (lower triangle), for refinement.
    mat: Vec<T>,
    /// Cholesky factor of the Schur complement `A M^-1 A'`, and `M^-1 A'` columns.
    schur: Option<(Vec<T>, Vec<Vec<T>>)>,
}

impl<T: Scalar> Newton<T> {
    fn mat_vec(&self, x: &[T]) -> Vec<T> {
        let n = self.n;
        let mut out = vec![T::zero(); n];
        for i in 0..n {
            let row = &self.mat[i * n..i * n + i + 1];
            out[i] = out[i] + dot(&row[..i], &x[..i]) + row[i] * x[i];
            for j in 0..i {
                out[j] = out[j] + row[j] * x[i];
            }
        }
        out
    }

    fn solve_m(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        cholesky_solve(&self.chol, self.n, &mut x);
        // Iterative refinement against the unregularized matrix.
        for _ in 0..3 {
            let mut d: Vec<T> = b.iter().zip(self.mat_vec(&x)).map(|(&bi, mi)| bi - mi).collect();
            cholesky_solve(&self.chol, self.n, &mut d);
            axpy(T::one(), &d, &mut x);
        }
        x
    }
}

impl<'a, T: Scalar> Ipm<'a, T> {
    fn new(qp: &'a QpProblem<T>, settings: &QpSettings<T>) -> Self {
        let m = qp.h.len();
        Self {
            qp,
            settings: *settings,
            pattern: RowPattern::of(&qp.g),
            x: vec![T::zero(); qp.num_vars()],
            y: vec![T::zero(); qp.b_eq.len()],
            z: vec![T::one(); m],
            s: vec![T::one(); m],
        }
    }

    /// Starting point from the regularized least-squares problem
    /// `min 1/2 x'Px + c'x + 1/2 |Gx - h|^2  s.t.  Ax = b`, with slacks and
    /// multipliers shifted into the positive orthant.
    fn initialize(&mut self, warm: Option<&[T]>) -> Result<(), QpError> {
        let qp = self.qp;
        let m = self.s.len();
        let nt = self.factor()?;
        let neg_h: Vec<T> = qp.h.iter().map(|&v| -v).collect();
        let neg_b: Vec<T> = qp.b_eq.iter().map(|&v| -v).collect();
        let (x, y, _, _) = self.direction(&nt, &qp.c, &neg_b, &neg_h, &vec![T::zero(); m]);
        self.x = warm.map_or(x, <[T]>::to_vec);
        self.y = y;
        let gx = self.pattern.mul_vec(&qp.g, &self.x);
        let mut s: Vec<T> = (0..m).map(|i| qp.h[i] - gx[i]).collect();
        let mut z: Vec<T> = s.iter().map(|&v| -v).collect();
        let shift = |v: &mut Vec<T>| {
            let worst = v.iter().fold(T::neg_infinity(), |a, &b| a.max(-b));
            if worst >= T::zero() {
                let d = T::one() + worst;
                v.iter_mut().for_each(|e| *e = *e + d);
            }
        };
        shift(&mut s);
        shift(&mut z);
        self.s = s;
        self.z = z;
        Ok(())
    }

    fn factor(&self) -> Result<Newton<T>, QpError> {
        let qp = self.qp;
        let n = qp.num_vars();
        let mut mat = vec![T::zero(); n * n];
        for i in 0..n {
            mat[i * n..i * n + i + 1].copy_from_slice(&qp.p.row(i)[..=i]);
        }
        let w: Vec<T> = self.z.iter().zip(&self.s).map(|(&z, &s)| z / s).collect();
        self.pattern.add_weighted_gram(&qp.g, &w, &mut mat);
        let diag_scale = (0..n).fold(T::one(), |m, i| m.max(mat[i * n + i].abs()));
        let p_scale = (0..n).fold(T::one(), |m, i| m.max(qp.p[(i, i)].abs()));
        let mut reg = self.settings.regularization * p_scale;
        let chol = loop {
            let mut c = mat.clone();
            for i in 0..n {
                c[i * n + i] = c[i * n + i] + reg;
            }
            match cholesky_in_place(&mut c, n) {
                Ok(()) => break c,
                Err(_) if reg < diag_scale => reg = reg * T::lit(100.0),
                Err(_) => return Err(QpError::Singular),
            }
        };
        let mut newton = Newton { n, chol, mat, schur: None };
        let p_eq = qp.b_eq.len();
        if p_eq > 0 {
            let minv_at: Vec<Vec<T>> = (0..p_eq).map(|k| newton.solve_m(qp.a_eq.row(k))).collect();
            let mut sc = vec![T::zero(); p_eq * p_eq];
            for i in 0..p_eq {
                for j in 0..=i {
                    sc[i * p_eq + j] = dot(qp.a_eq.row(i), &minv_at[j]);
                }
            }
            cholesky_in_place(&mut sc, p_eq).map_err(|_| QpError::Singular)?;
            newton.schur = Some((sc, minv_at));
        }
        Ok(newton)
    }

    /// Solves the Newton system for right-hand sides `(r_d, r_e, r_p, r_c)`.
    fn direction(&self, nt: &Newton<T>, rd: &[T], re: &[T], rp: &[T], rc: &[T]) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
        let qp = self.qp;
        let m = self.s.len();
        let tmp: Vec<T> = (0..m).map(|i| (self.z[i] * rp[i] - rc[i]) / self.s[i]).collect();
        let gt_tmp = self.pattern.tr_mul_vec(&qp.g, &tmp);
        let rhs: Vec<T> = rd.iter().zip(&gt_tmp).map(|(&a, &b)| -a - b).collect();
        let mut dx = nt.solve_m(&rhs);
        let mut dy = Vec::new();
        if let Some((sc, minv_at)) = &nt.schur {
            let p_eq = re.len();
            let mut t: Vec<T> = (0..p_eq).map(|k| dot(qp.a_eq.row(k), &dx) + re[k]).collect();
            cholesky_solve(sc, p_eq, &mut t);
            for (k, &dyk) in t.iter().enumerate() {
                axpy(-dyk, &minv_at[k], &mut dx);
            }
            dy = t;
        }
        let gdx = self.pattern.mul_vec(&qp.g, &dx);
        let ds: Vec<T> = (0..m).map(|i| -rp[i] - gdx[i]).collect();
        let dz: Vec<T> = (0..m).map(|i| self.z[i] / self.s[i] * gdx[i] + tmp[i]).collect();
        (dx, dy, dz, ds)
    }

    fn max_step(v: &[T], dv: &[T]) -> T {
        v.iter()
            .zip(dv)
            .filter(|(_, &d)| d < T::zero())
            .fold(T::one(), |a, (&vi, &di)| a.min(-vi / di))
    }

    /// Returns whether the tolerance was met and the iteration count.
    fn run(&mut self) -> Result<(bool, usize), QpError> {
        let qp = self.qp;
        let n = qp.num_vars();
        let m = self.s.len();
        let one = T::one();
        let tol = self.settings.tol;
        let scale_p = one + norm_inf(&qp.h).max(norm_inf(&qp.b_eq));
        for iter in 0..self.settings.max_iter {
            let px = qp.p.mul_vec(&self.x);
            let gtz = self.pattern.tr_mul_vec(&qp.g, &self.z);
            let aty = qp.a_eq.tr_mul_vec(&self.y);
            let rd: Vec<T> = (0..n).map(|i| px[i] + qp.c[i] + aty[i] + gtz[i]).collect();
            let re: Vec<T> = qp.a_eq.mul_vec(&self.x).iter().zip(&qp.b_eq).map(|(&a, &b)| a - b).collect();
            let gx = self.pattern.mul_vec(&qp.g, &self.x);
            let rp: Vec<T> = (0..m).map(|i| gx[i] + self.s[i] - qp.h[i]).collect();
            let mu = if m > 0 {
                dot(&self.s, &self.z) / T::from_usize_lossy(m)
            } else {
                T::zero()
            };
            let scale_d = one
                + norm_inf(&px)
                    .max(norm_inf(&qp.c))
                    .max(norm_inf(&gtz))
                    .max(norm_inf(&aty));
            let comp = (0..m).fold(T::zero(), |a, i| a.max(self.s[i] * self.z[i]));
            let comp_scale = one + norm_inf(&self.z).max(norm_inf(&qp.h));
            if norm_inf(&rp).max(norm_inf(&re)) / scale_p <= tol
                && norm_inf(&rd) / scale_d <= tol
                && comp / comp_scale <= tol
            {
                return Ok((true, iter));
            }

            let nt = self.factor()?;
            // Affine-scaling predictor.
            let rc_aff: Vec<T> = (0..m).map(|i| self.s[i] * self.z[i]).collect();
            let (_, _, dz_a, ds_a) = self.direction(&nt, &rd, &re, &rp, &rc_aff);
            let alpha_aff = Self::max_step(&self.s, &ds_a).min(Self::max_step(&self.z, &dz_a));
            let mu_aff = if m > 0 {
                (0..m)
                    .map(|i| (self.s[i] + alpha_aff * ds_a[i]) * (self.z[i] + alpha_aff * dz_a[i]))
                    .fold(T::zero(), |a, v| a + v)
                    / T::from_usize_lossy(m)
            } else {
                T::zero()
            };
            let sigma = if mu > T::zero() { (mu_aff / mu).powi(3).min(one) } else { T::zero() };
            // Combined centering-corrector step.
            let rc: Vec<T> = (0..m)
                .map(|i| self.s[i] * self.z[i] + ds_a[i] * dz_a[i] - sigma * mu)
                .collect();
            let (dx, dy, dz, ds) = self.direction(&nt, &rd, &re, &rp, &rc);
            let alpha_max = Self::max_step(&self.s, &ds).min(Self::max_step(&self.z, &dz));
            let alpha = (T::lit(0.99) * alpha_max).min(one);
            axpy(alpha, &dx, &mut self.x);
            axpy(alpha, &dy, &mut self.y);
            axpy(alpha, &dz, &mut self.z);
            axpy(alpha, &ds, &mut self.s);
            // Keep the iterate strictly interior.
            let floor = T::min_positive_value().sqrt();
            for v in self.s.iter_mut().chain(self.z.iter_mut()) {
                if *v < floor {
                    *v = floor;
                }
            }
        }
        Ok((false, self.settings.max_iter))
    }
}

/// Re-solves the KKT system on the constraints the interior-point iterate marks active.
fn polish<T: Scalar>(qp: &QpProblem<T>, ipm: &Ipm<'_, T>, settings: &QpSettings<T>) -> Option<(Vec<T>, Vec<T>, Vec<T>)> {
    let n = qp.num_vars();
    let p_eq = qp.b_eq.len();
    let active: Vec<usize> = (0..ipm.s.len()).filter(|&i| ipm.z[i] > ipm.s[i]).collect();
    let k = n + p_eq + active.len();
    let mut kkt = vec![T::zero(); k * k];
    for i in 0..n {
        kkt[i * k..i * k + n].copy_from_slice(qp.p.row(i));
    }
    let mut put_row = |r: usize, row: &[T]| {
        for (j, &v) in row.iter().enumerate() {
            kkt[r * k + j] = v;
            kkt[j * k + r] = v;
        }
    };
    for e in 0..p_eq {
        put_row(n + e, qp.a_eq.row(e));
    }
    for (a, &i) in active.iter().enumerate() {
        put_row(n + p_eq + a, qp.g.row(i));
    }
    let mut rhs = vec![T::zero(); k];
    for i in 0..n {
        rhs[i] = -qp.c[i];
    }
    rhs[n..n + p_eq].copy_from_slice(&qp.b_eq);
    for (a, &i) in active.iter().enumerate() {
        rhs[n + p_eq + a] = qp.h[i];
    }
    let scale = norm_inf(&kkt).max(T::one());
    let delta = settings.regularization * scale;
    let mut reg = kkt.clone();
    for i in 0..k {
        let sign = if i < n { T::one() } else { -T::one() };
        reg[i * k + i] = reg[i * k + i] + sign * delta;
    }
    let lu = Lu::factor(reg, k).ok()?;
    let mut sol = lu.solve(&rhs);
    for _ in 0..5 {
        let resid: Vec<T> = (0..k).map(|i| rhs[i] - dot(&kkt[i * k..(i + 1) * k], &sol)).collect();
        let d = lu.solve(&resid);
        axpy(T::one(), &d, &mut sol);
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol[..n].to_vec();
    let y = sol[n..n + p_eq].to_vec();
    let mut z = vec![T::zero(); ipm.s.len()];
    for (a, &i) in active.iter().enumerate() {
        z[i] = sol[n + p_eq + a];
    }
    Some((x, y, z))
}
