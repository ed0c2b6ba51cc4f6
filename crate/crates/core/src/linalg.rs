//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{JnirmError, Result};

/// Jitter ladder tried before a Cholesky factorisation is declared failed.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factorisation of a symmetric matrix, escalating a diagonal jitter
/// from 1e-10 to 1e-6 (relative to the mean diagonal) before giving up.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() != m.ncols() {
        return Err(JnirmError::dims(format!(
            "cholesky of non-square {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(JnirmError::NotPositiveDefinite("non-finite entries".into()));
    }
    let sym = symmetrize(m);
    if let Some(ch) = Cholesky::new(sym.clone()) {
        return Ok(ch);
    }
    let n = sym.nrows();
    let scale = (sym.diagonal().iter().map(|x| x.abs()).sum::<f64>() / n.max(1) as f64).max(1.0);
    for jitter in JITTER_LADDER {
        let mut jittered = sym.clone();
        for i in 0..n {
            jittered[(i, i)] += jitter * scale;
        }
        if let Some(ch) = Cholesky::new(jittered) {
            return Ok(ch);
        }
    }
    Err(JnirmError::NotPositiveDefinite(format!(
        "{n}x{n} matrix failed Cholesky after jitter 1e-6"
    )))
}

/// Strict check: Cholesky without jitter succeeds and the matrix is symmetric.
pub fn is_spd(m: &DMatrix<f64>) -> bool {
    if m.nrows() != m.ncols() || m.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let asym = (m - m.transpose()).abs().max();
    let scale = m.abs().max().max(1.0);
    asym <= 1e-9 * scale && Cholesky::new(m.clone()).is_some()
}

pub fn require_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if is_spd(m) {
        Ok(())
    } else {
        Err(JnirmError::NotPositiveDefinite(what.to_string()))
    }
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ch = cholesky_jittered(m)?;
    Ok(symmetrize(&ch.inverse()))
}

pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let ch = cholesky_jittered(m)?;
    Ok(2.0 * ch.l().diagonal().iter().map(|x| x.ln()).sum::<f64>())
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

pub fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(x);
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Sample covariance with divisor `n` (maximum-likelihood form).
pub fn covariance_mle(x: &DMatrix<f64>) -> DMatrix<f64> {
    let centered = center_columns(x);
    centered.transpose() * &centered / x.nrows() as f64
}

/// Thin SVD with singular values sorted in decreasing order.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn sorted_svd(m: &DMatrix<f64>) -> SortedSvd {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap_or(std::cmp::Ordering::Equal));
    let k = order.len();
    let mut su = DMatrix::zeros(u.nrows(), k);
    let mut sv = DMatrix::zeros(vt.ncols(), k);
    let mut ss = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_column(dst, &vt.row(src).transpose());
        ss[dst] = s[src];
    }
    SortedSvd {
        u: su,
        singular_values: ss,
        v: sv,
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = symmetrize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let n = order.len();
    let mut vals = DVector::zeros(n);
    let mut vecs = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vals[dst] = eig.eigenvalues[src];
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Sub-matrix picking the given rows and columns (in the given order).
pub fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(JnirmError::dims(format!(
            "cannot stack {} rows beside {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((0, a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
    Ok(out)
}
