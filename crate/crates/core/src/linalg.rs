//! Dense least squares by Householder QR with column pivoting.
//!
//! Rank-deficient problems are solved through a complete orthogonal
//! decomposition, which yields the minimum-norm minimizer.

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `selfᵀ · v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate().take(self.rows) {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Column-pivoted QR factorization `A P = Q R`, with `Q` kept as Householder
/// reflectors.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    m: usize,
    n: usize,
    // column-major; R in the upper triangle, reflector tails below
    cols: Vec<Vec<f64>>,
    betas: Vec<f64>,
    pivots: Vec<usize>,
    rank: usize,
}

/// Relative threshold on |R_kk| / |R_00| below which a column is treated
/// as linearly dependent.
pub const RANK_TOL: f64 = 1e-10;

impl PivotedQr {
    pub fn new(a: &Matrix) -> Self {
        let (m, n) = (a.rows, a.cols);
        let mut cols: Vec<Vec<f64>> = (0..n)
            .map(|c| (0..m).map(|r| a.get(r, c)).collect())
            .collect();
        let mut pivots: Vec<usize> = (0..n).collect();
        let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();
        let steps = m.min(n);
        let mut betas = Vec::with_capacity(steps);

        for k in 0..steps {
            // recompute trailing norms exactly; matrices here are small
            for j in k..n {
                norms[j] = cols[j][k..].iter().map(|v| v * v).sum();
            }
            let best = (k..n)
                .max_by(|&i, &j| norms[i].total_cmp(&norms[j]).then(j.cmp(&i)))
                .unwrap();
            if best != k {
                cols.swap(k, best);
                pivots.swap(k, best);
                norms.swap(k, best);
            }
            let (beta, alpha) = householder(&mut cols[k][k..]);
            betas.push(beta);
            if beta != 0.0 {
                let (head, tail) = cols.split_at_mut(k + 1);
                let v = &head[k][k..];
                for col in tail.iter_mut() {
                    apply_reflector(v, beta, &mut col[k..]);
                }
            }
            // store R_kk; the reflector's leading 1 is implicit
            cols[k][k] = alpha;
        }

        let r00 = if steps > 0 { cols[0][0].abs() } else { 0.0 };
        let rank = if r00 == 0.0 {
            0
        } else {
            (0..steps)
                .take_while(|&k| cols[k][k].abs() > RANK_TOL * r00)
                .count()
        };

        PivotedQr {
            m,
            n,
            cols,
            betas,
            pivots,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Column permutation: position `k` of the factorization holds original
    /// column `pivots()[k]`.
    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    #[inline]
    fn r(&self, i: usize, j: usize) -> f64 {
        self.cols[j][i]
    }

    /// `Qᵀ b`
    fn qt_mul(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        for (k, &beta) in self.betas.iter().enumerate() {
            if beta == 0.0 {
                continue;
            }
            let mut v = self.cols[k][k..].to_vec();
            v[0] = 1.0;
            apply_reflector(&v, beta, &mut y[k..]);
        }
        y
    }

    /// Minimum-norm least-squares solution of `A x ≈ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.m);
        let r = self.rank;
        let c = self.qt_mul(b);
        let mut y = vec![0.0; self.n];
        if r == 0 {
            return y;
        }
        if r == self.n {
            back_substitute(r, |i, j| self.r(i, j), &c[..r], &mut y);
        } else {
            // W = [R11 R12] is r×n; factor Wᵀ = U S and solve Sᵀ z = c₁, y = U₁ z.
            let wt = Matrix {
                rows: self.n,
                cols: r,
                data: (0..self.n)
                    .flat_map(|j| (0..r).map(move |i| (i, j)))
                    .map(|(i, j)| if i <= j { self.r(i, j) } else { 0.0 })
                    .collect(),
            };
            let inner = HouseholderQr::new(&wt);
            let mut z = vec![0.0; r];
            for i in 0..r {
                let mut s = c[i];
                for (j, zj) in z.iter().enumerate().take(i) {
                    s -= inner.r(j, i) * zj;
                }
                z[i] = s / inner.r(i, i);
            }
            let mut padded = z;
            padded.resize(self.n, 0.0);
            y = inner.q_mul(&padded);
        }
        let mut x = vec![0.0; self.n];
        for (k, &p) in self.pivots.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    /// Diagonal of `(AᵀA)⁻¹` in original column order. Requires full column rank.
    pub fn inverse_gram_diagonal(&self) -> Option<Vec<f64>> {
        if self.rank < self.n {
            return None;
        }
        let n = self.n;
        // R⁻¹ column by column; diag((AᵀA)⁻¹) in pivoted order = row sums of (R⁻¹)².
        let mut rinv = vec![vec![0.0; n]; n];
        for (j, col) in rinv.iter_mut().enumerate() {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            back_substitute(n, |a, b| self.r(a, b), &e, col);
        }
        let mut diag = vec![0.0; n];
        for (k, &p) in self.pivots.iter().enumerate() {
            diag[p] = (0..n).map(|j| rinv[j][k] * rinv[j][k]).sum();
        }
        Some(diag)
    }

    /// For each dependent column (beyond the numerical rank), the original
    /// column indices that participate in the linear dependency.
    pub fn dependencies(&self) -> Vec<Vec<usize>> {
        let r = self.rank;
        (r..self.n)
            .map(|k| {
                let rhs: Vec<f64> = (0..r).map(|i| self.r(i, k)).collect();
                let mut coef = vec![0.0; r];
                back_substitute(r, |a, b| self.r(a, b), &rhs, &mut coef);
                let scale = coef.iter().fold(1.0_f64, |m, c| m.max(c.abs()));
                let mut members: Vec<usize> = coef
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.abs() > 1e-8 * scale)
                    .map(|(i, _)| self.pivots[i])
                    .collect();
                members.push(self.pivots[k]);
                members.sort_unstable();
                members
            })
            .collect()
    }
}

/// Plain Householder QR (no pivoting) of a tall matrix; used for the second
/// stage of the complete orthogonal decomposition.
struct HouseholderQr {
    cols: Vec<Vec<f64>>,
    betas: Vec<f64>,
}

impl HouseholderQr {
    fn new(a: &Matrix) -> Self {
        let (m, n) = (a.rows, a.cols);
        let mut cols: Vec<Vec<f64>> = (0..n)
            .map(|c| (0..m).map(|r| a.get(r, c)).collect())
            .collect();
        let mut betas = Vec::with_capacity(n);
        for k in 0..n.min(m) {
            let (beta, alpha) = householder(&mut cols[k][k..]);
            betas.push(beta);
            if beta != 0.0 {
                let (head, tail) = cols.split_at_mut(k + 1);
                let v = &head[k][k..];
                for col in tail.iter_mut() {
                    apply_reflector(v, beta, &mut col[k..]);
                }
            }
            cols[k][k] = alpha;
        }
        HouseholderQr { cols, betas }
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.cols[j][i]
    }

    /// `Q x`
    fn q_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for (k, &beta) in self.betas.iter().enumerate().rev() {
            if beta == 0.0 {
                continue;
            }
            let mut v = self.cols[k][k..].to_vec();
            v[0] = 1.0;
            apply_reflector(&v, beta, &mut y[k..]);
        }
        y
    }
}

/// Turns `x` into a Householder vector `v` (with implicit `v[0] = 1`) such that
/// `(I − β v vᵀ) x = α e₁`. Returns `(β, α)`; `x[1..]` receives `v[1..]`.
fn householder(x: &mut [f64]) -> (f64, f64) {
    let sigma: f64 = x[1..].iter().map(|v| v * v).sum();
    let x0 = x[0];
    if sigma == 0.0 {
        // already e₁-aligned; identity reflector
        return (0.0, x0);
    }
    let mu = (x0 * x0 + sigma).sqrt();
    let alpha = if x0 <= 0.0 { mu } else { -mu };
    let v0 = x0 - alpha;
    for v in x[1..].iter_mut() {
        *v /= v0;
    }
    x[0] = 1.0;
    let beta = 2.0 * v0 * v0 / (sigma + v0 * v0);
    (beta, alpha)
}

fn apply_reflector(v: &[f64], beta: f64, y: &mut [f64]) {
    // v[0] is treated as 1 regardless of what is stored there
    let mut s = y[0];
    for (vi, yi) in v[1..].iter().zip(&y[1..]) {
        s += vi * yi;
    }
    s *= beta;
    y[0] -= s;
    for (vi, yi) in v[1..].iter().zip(y[1..].iter_mut()) {
        *yi -= s * vi;
    }
}

fn back_substitute(n: usize, r: impl Fn(usize, usize) -> f64, rhs: &[f64], out: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for j in i + 1..n {
            s -= r(i, j) * out[j];
        }
        out[i] = s / r(i, i);
    }
}

/// Minimum-norm least squares with optional ridge penalty
/// `‖A x − b‖² + ridge·‖x‖²`.
pub fn lstsq(a: &Matrix, b: &[f64], ridge: f64) -> Vec<f64> {
    if ridge > 0.0 {
        let n = a.cols;
        let mut aug = Matrix::zeros(a.rows + n, n);
        aug.data[..a.data.len()].copy_from_slice(&a.data);
        let s = ridge.sqrt();
        for j in 0..n {
            aug.set(a.rows + j, j, s);
        }
        let mut rhs = b.to_vec();
        rhs.resize(a.rows + n, 0.0);
        PivotedQr::new(&aug).solve(&rhs)
    } else {
        PivotedQr::new(a).solve(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_system() {
        let a = Matrix::from_rows(&[[2.0, 1.0], [1.0, 3.0]]);
        let x = lstsq(&a, &[3.0, 5.0], 0.0);
        assert!((x[0] - 0.8).abs() < 1e-12);
        assert!((x[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn duplicated_column_gives_minimum_norm() {
        // x1 and x2 identical: minimum-norm splits the weight evenly
        let a = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        let qr = PivotedQr::new(&a);
        assert_eq!(qr.rank(), 1);
        let x = qr.solve(&[2.0, 4.0, 6.0]);
        assert!((x[0] - 1.0).abs() < 1e-12, "{x:?}");
        assert!((x[1] - 1.0).abs() < 1e-12, "{x:?}");
        assert_eq!(qr.dependencies(), vec![vec![0, 1]]);
    }

    #[test]
    fn zero_matrix() {
        let a = Matrix::zeros(3, 2);
        assert_eq!(lstsq(&a, &[1.0, 2.0, 3.0], 0.0), vec![0.0, 0.0]);
    }

    #[test]
    fn ridge_shrinks() {
        let a = Matrix::from_rows(&[[1.0], [1.0]]);
        let x = lstsq(&a, &[1.0, 1.0], 2.0);
        // (2 + 2) x = 2
        assert!((x[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn inverse_gram_matches_closed_form() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]]);
        // AᵀA = [[3,3],[3,5]], inverse diag = [5/6, 3/6]
        let d = PivotedQr::new(&a).inverse_gram_diagonal().unwrap();
        assert!((d[0] - 5.0 / 6.0).abs() < 1e-12);
        assert!((d[1] - 0.5).abs() < 1e-12);
    }
}
