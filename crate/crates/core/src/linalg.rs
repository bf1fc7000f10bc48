//! Householder QR with column pivoting, used for every least-squares solve.
//!
//! The pivoted factorization is rank-revealing: columns are processed in
//! decreasing residual-norm order (norms downdated with a recompute guard),
//! so a relative tolerance on the diagonal of `R` detects rank deficiency.
//! Storage is a flat column-major buffer; design matrices here are tall and
//! narrow, so the reflector applications run over contiguous slices.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::num::Scalar;

/// Relative tolerance on `|r_kk| / |r_00|` below which a column is treated as
/// linearly dependent.
pub(crate) const RANK_REL_TOL: f64 = 1e-10;

pub(crate) struct QrPivot<F> {
    /// Column-major `m x n`: `R` on and above the diagonal, Householder
    /// vectors below (leading 1 implicit).
    data: Vec<F>,
    rows: usize,
    cols: usize,
    tau: Vec<F>,
    perm: Vec<usize>,
    diag: Vec<F>,
    rank: usize,
}

impl<F: Scalar> QrPivot<F> {
    /// Factors a column-major buffer in place.
    pub fn factor(mut data: Vec<F>, rows: usize, cols: usize, rank_rel_tol: F) -> Self {
        assert_eq!(data.len(), rows * cols);
        let m = rows;
        let n = cols;
        let steps = m.min(n);
        let mut tau = vec![F::zero(); steps];
        let mut perm: Vec<usize> = (0..n).collect();
        let mut diag = vec![F::zero(); steps];

        // Running squared column norms with their originals for the
        // downdating guard.
        let mut norms: Vec<F> = (0..n)
            .map(|j| data[j * m..(j + 1) * m].iter().map(|v| *v * *v).sum())
            .collect();
        let mut norms_orig = norms.clone();

        for k in 0..steps {
            let mut best = k;
            for j in (k + 1)..n {
                if norms[j] > norms[best] {
                    best = j;
                }
            }
            if best != k {
                perm.swap(k, best);
                norms.swap(k, best);
                norms_orig.swap(k, best);
                let (lo, hi) = (k.min(best), k.max(best));
                let (head, tail) = data.split_at_mut(hi * m);
                head[lo * m..lo * m + m].swap_with_slice(&mut tail[..m]);
            }

            let col = &mut data[k * m + k..(k + 1) * m];
            let norm2: F = col.iter().map(|v| *v * *v).sum();
            let norm = norm2.sqrt();
            if norm == F::zero() {
                diag[k] = F::zero();
                tau[k] = F::zero();
                continue;
            }
            let x0 = col[0];
            let alpha = if x0 >= F::zero() { -norm } else { norm };
            let v0 = x0 - alpha;
            let t = -v0 / alpha;
            diag[k] = alpha;
            tau[k] = t;
            col[0] = alpha;
            for v in col[1..].iter_mut() {
                *v /= v0;
            }

            // Apply the reflector to the trailing columns and downdate norms.
            for j in (k + 1)..n {
                let (vcol, jcol) = {
                    let (head, tail) = data.split_at_mut(j * m);
                    (&head[k * m + k..k * m + m], &mut tail[k..m])
                };
                let mut dot = jcol[0];
                for (v, x) in vcol[1..].iter().zip(jcol[1..].iter()) {
                    dot += *v * *x;
                }
                let scale = t * dot;
                jcol[0] -= scale;
                for (v, x) in vcol[1..].iter().zip(jcol[1..].iter_mut()) {
                    *x -= scale * *v;
                }

                let r = data[j * m + k];
                norms[j] -= r * r;
                // Downdating loses accuracy once most of the norm is gone.
                if norms[j] < crate::num::real::<F>(1e-4) * norms_orig[j] {
                    let fresh: F =
                        data[j * m + k + 1..(j + 1) * m].iter().map(|v| *v * *v).sum();
                    norms[j] = fresh;
                    norms_orig[j] = fresh;
                }
            }
        }

        let head = diag.first().map(|d| d.abs()).unwrap_or_else(F::zero);
        let cut = head * rank_rel_tol;
        let mut rank = 0;
        for d in &diag {
            if d.abs() > cut && d.abs() > F::zero() {
                rank += 1;
            } else {
                break;
            }
        }

        QrPivot { data, rows: m, cols: n, tau, perm, diag, rank }
    }

    /// Factors an `ndarray` matrix (copied into column-major storage).
    pub fn decompose(a: ArrayView2<F>, rank_rel_tol: F) -> Self {
        let (m, n) = a.dim();
        let mut data = vec![F::zero(); m * n];
        for j in 0..n {
            for i in 0..m {
                data[j * m + i] = a[[i, j]];
            }
        }
        Self::factor(data, m, n, rank_rel_tol)
    }

    pub fn with_default_tol(a: ArrayView2<F>) -> Self {
        Self::decompose(a, crate::num::real(RANK_REL_TOL))
    }

    /// Reclaims the internal buffer for reuse.
    pub fn into_buffer(self) -> Vec<F> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.cols && self.cols <= self.rows
    }

    /// Ratio of the largest to the smallest retained `R` diagonal, a cheap
    /// condition-number surrogate.
    pub fn condition_estimate(&self) -> F {
        if self.rank == 0 {
            return F::infinity();
        }
        let head = self.diag[0].abs();
        let tail = self.diag[self.rank - 1].abs();
        if tail == F::zero() {
            F::infinity()
        } else {
            head / tail
        }
    }

    /// Index (in the original column order) of the first column found to be
    /// linearly dependent, if any.
    pub fn deficient_column(&self) -> Option<usize> {
        if self.is_full_rank() {
            None
        } else {
            Some(self.perm[self.rank.min(self.cols.saturating_sub(1))])
        }
    }

    /// Least-squares solution of `A x = b`. Requires full column rank.
    pub fn solve(&self, b: ArrayView1<F>) -> Option<Array1<F>> {
        if !self.is_full_rank() {
            return None;
        }
        let m = self.rows;
        let n = self.cols;
        let mut y: Vec<F> = b.iter().copied().collect();
        for k in 0..n {
            let t = self.tau[k];
            if t == F::zero() {
                continue;
            }
            let v = &self.data[k * m + k..(k + 1) * m];
            let mut dot = y[k];
            for (vi, yi) in v[1..].iter().zip(y[k + 1..].iter()) {
                dot += *vi * *yi;
            }
            let scale = t * dot;
            y[k] -= scale;
            for (vi, yi) in v[1..].iter().zip(y[k + 1..].iter_mut()) {
                *yi -= scale * *vi;
            }
        }
        let mut x = vec![F::zero(); n];
        for k in (0..n).rev() {
            let mut s = y[k];
            for j in (k + 1)..n {
                s -= self.data[j * m + k] * x[j];
            }
            x[k] = s / self.diag[k];
        }
        let mut out = Array1::zeros(n);
        for (k, &p) in self.perm.iter().enumerate() {
            out[p] = x[k];
        }
        Some(out)
    }
}
