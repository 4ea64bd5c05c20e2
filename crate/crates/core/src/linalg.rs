//! Block-sparse Jacobians and the linear solvers used by Newton's method.

use std::sync::Arc;

use faer::prelude::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use thiserror::Error;

use crate::mesh::{EdgeKind, Mesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearError {
    #[error("singular Jacobian")]
    Singular,
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("matrix pattern is not block tridiagonal")]
    NotTridiagonal,
}

/// Sparsity of a cell-to-cell coupling with dense `nb × nb` blocks.
#[derive(Debug, Clone)]
pub struct BlockPattern {
    nb: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    diag: Vec<usize>,
    /// Per edge id: positions of blocks (K, L) and (L, K); `None` on the boundary.
    edge_blocks: Vec<Option<[usize; 2]>>,
}

impl BlockPattern {
    pub fn from_mesh(mesh: &Mesh, nb: usize) -> BlockPattern {
        let n = mesh.n_cells();
        let mut adj: Vec<Vec<usize>> = (0..n).map(|k| vec![k]).collect();
        for &e in mesh.interior_edges() {
            if let EdgeKind::Interior { k, l } = mesh.edges()[e].kind {
                adj[k].push(l);
                adj[l].push(k);
            }
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        for row in adj.iter_mut() {
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(row);
            row_ptr.push(cols.len());
        }
        let find = |r: usize, c: usize| row_ptr[r] + cols[row_ptr[r]..row_ptr[r + 1]].binary_search(&c).unwrap();
        let diag = (0..n).map(|k| find(k, k)).collect();
        let edge_blocks = mesh
            .edges()
            .iter()
            .map(|e| match e.kind {
                EdgeKind::Interior { k, l } => Some([find(k, l), find(l, k)]),
                EdgeKind::Boundary { .. } => None,
            })
            .collect();
        BlockPattern { nb, row_ptr, cols, diag, edge_blocks }
    }

    pub fn block_size(&self) -> usize {
        self.nb
    }

    pub fn n_block_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_blocks(&self) -> usize {
        self.cols.len()
    }

    pub fn dim(&self) -> usize {
        self.n_block_rows() * self.nb
    }

    pub fn diag(&self, k: usize) -> usize {
        self.diag[k]
    }

    pub fn edge_blocks(&self, edge: usize) -> Option<[usize; 2]> {
        self.edge_blocks[edge]
    }

    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let r = &self.cols[self.row_ptr[row]..self.row_ptr[row + 1]];
        r.binary_search(&col).ok().map(|p| self.row_ptr[row] + p)
    }

    fn is_tridiagonal(&self) -> bool {
        (0..self.n_block_rows()).all(|r| {
            self.cols[self.row_ptr[r]..self.row_ptr[r + 1]].iter().all(|&c| c + 1 >= r && c <= r + 1)
        })
    }
}

/// Block-sparse matrix; each block is stored row-major.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    pattern: Arc<BlockPattern>,
    values: Vec<f64>,
}

impl BlockMatrix {
    pub fn zeros(pattern: Arc<BlockPattern>) -> BlockMatrix {
        let len = pattern.n_blocks() * pattern.nb * pattern.nb;
        BlockMatrix { pattern, values: vec![0.0; len] }
    }

    pub fn pattern(&self) -> &BlockPattern {
        &self.pattern
    }

    pub fn clear(&mut self) {
        self.values.fill(0.0);
    }

    pub fn block(&self, pos: usize) -> &[f64] {
        let s = self.pattern.nb * self.pattern.nb;
        &self.values[pos * s..(pos + 1) * s]
    }

    pub fn block_mut(&mut self, pos: usize) -> &mut [f64] {
        let s = self.pattern.nb * self.pattern.nb;
        &mut self.values[pos * s..(pos + 1) * s]
    }

    /// Scalar entry, zero outside the pattern.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let nb = self.pattern.nb;
        match self.pattern.position(row / nb, col / nb) {
            Some(p) => self.block(p)[(row % nb) * nb + col % nb],
            None => 0.0,
        }
    }

    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        let nb = self.pattern.nb;
        let p = self.pattern.position(row / nb, col / nb).expect("entry outside the block pattern");
        self.block_mut(p)[(row % nb) * nb + col % nb] += v;
    }

    /// Multiplies column `c` by `scale[c]`.
    pub fn scale_columns(&mut self, scale: &[f64]) {
        let nb = self.pattern.nb;
        let pattern = Arc::clone(&self.pattern);
        for r in 0..pattern.n_block_rows() {
            for p in pattern.row_ptr[r]..pattern.row_ptr[r + 1] {
                let c = pattern.cols[p];
                let b = self.block_mut(p);
                for i in 0..nb {
                    for j in 0..nb {
                        b[i * nb + j] *= scale[c * nb + j];
                    }
                }
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let nb = self.pattern.nb;
        let mut y = vec![0.0; self.pattern.dim()];
        for r in 0..self.pattern.n_block_rows() {
            for p in self.pattern.row_ptr[r]..self.pattern.row_ptr[r + 1] {
                let c = self.pattern.cols[p];
                let b = self.block(p);
                for i in 0..nb {
                    y[r * nb + i] += (0..nb).map(|j| b[i * nb + j] * x[c * nb + j]).sum::<f64>();
                }
            }
        }
        y
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.pattern.dim();
        (0..n).map(|r| (0..n).map(|c| self.get(r, c)).collect()).collect()
    }

    fn triplets(&self) -> Vec<Triplet<usize, usize, f64>> {
        let nb = self.pattern.nb;
        let mut t = Vec::with_capacity(self.values.len());
        for r in 0..self.pattern.n_block_rows() {
            for p in self.pattern.row_ptr[r]..self.pattern.row_ptr[r + 1] {
                let c = self.pattern.cols[p];
                let b = self.block(p);
                for i in 0..nb {
                    for j in 0..nb {
                        t.push(Triplet::new(r * nb + i, c * nb + j, b[i * nb + j]));
                    }
                }
            }
        }
        t
    }
}

/// Solves `M X = B` in place for a dense `n × n` matrix and `m` right-hand
/// sides (`B` is `n × m`, row-major), by Gaussian elimination with partial
/// pivoting.
pub fn dense_solve(a: &mut [f64], n: usize, b: &mut [f64], m: usize) -> Result<(), LinearError> {
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(LinearError::Singular);
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
            .unwrap();
        if a[piv * n + col].abs() <= 1e-14 * scale {
            return Err(LinearError::Singular);
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            for j in 0..m {
                b.swap(col * m + j, piv * m + j);
            }
        }
        let d = a[col * n + col];
        for r in (col + 1)..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
            for j in 0..m {
                b[r * m + j] -= f * b[col * m + j];
            }
        }
    }
    for col in (0..n).rev() {
        let d = a[col * n + col];
        for j in 0..m {
            let mut s = b[col * m + j];
            for k in (col + 1)..n {
                s -= a[col * n + k] * b[k * m + j];
            }
            b[col * m + j] = s / d;
        }
    }
    Ok(())
}

/// Block Thomas algorithm for a block-tridiagonal matrix.
pub fn solve_block_tridiagonal(mat: &BlockMatrix, rhs: &[f64]) -> Result<Vec<f64>, LinearError> {
    let p = mat.pattern();
    if !p.is_tridiagonal() {
        return Err(LinearError::NotTridiagonal);
    }
    let nb = p.nb;
    let s = nb * nb;
    let n = p.n_block_rows();
    // c[k] = M_k^{-1} U_k, d[k] = M_k^{-1}(r_k - L_k d[k-1])
    let mut c = vec![0.0; n * s];
    let mut d = vec![0.0; n * nb];
    let mut m = vec![0.0; s];
    let zero = vec![0.0; s];
    for k in 0..n {
        m.copy_from_slice(mat.block(p.diag[k]));
        let lower = if k > 0 { p.position(k, k - 1).map(|q| mat.block(q)) } else { None };
        let upper = if k + 1 < n { p.position(k, k + 1).map(|q| mat.block(q)) } else { None };
        let mut rk = rhs[k * nb..(k + 1) * nb].to_vec();
        if let Some(l) = lower {
            let cprev = &c[(k - 1) * s..k * s];
            let dprev = &d[(k - 1) * nb..k * nb];
            for i in 0..nb {
                for j in 0..nb {
                    m[i * nb + j] -= (0..nb).map(|q| l[i * nb + q] * cprev[q * nb + j]).sum::<f64>();
                }
                rk[i] -= (0..nb).map(|q| l[i * nb + q] * dprev[q]).sum::<f64>();
            }
        }
        // solve M [c_k | d_k] = [U_k | r_k] in one sweep
        let mut b = vec![0.0; nb * (nb + 1)];
        let u = upper.unwrap_or(&zero);
        for i in 0..nb {
            b[i * (nb + 1)..i * (nb + 1) + nb].copy_from_slice(&u[i * nb..(i + 1) * nb]);
            b[i * (nb + 1) + nb] = rk[i];
        }
        dense_solve(&mut m, nb, &mut b, nb + 1)?;
        for i in 0..nb {
            c[k * s + i * nb..k * s + (i + 1) * nb].copy_from_slice(&b[i * (nb + 1)..i * (nb + 1) + nb]);
            d[k * nb + i] = b[i * (nb + 1) + nb];
        }
    }
    let mut x = d;
    for k in (0..n.saturating_sub(1)).rev() {
        for i in 0..nb {
            let corr: f64 = (0..nb).map(|j| c[k * s + i * nb + j] * x[(k + 1) * nb + j]).sum();
            x[k * nb + i] -= corr;
        }
    }
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(LinearError::Singular)
    }
}

/// Sparse LU via faer; the symbolic factorization is computed once per
/// pattern and reused.
#[derive(Default)]
pub struct SparseLu {
    symbolic: Option<SymbolicLu<usize>>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("analyzed", &self.symbolic.is_some()).finish()
    }
}

impl SparseLu {
    pub fn new() -> SparseLu {
        SparseLu::default()
    }

    pub fn solve(&mut self, mat: &BlockMatrix, rhs: &[f64]) -> Result<Vec<f64>, LinearError> {
        let n = mat.pattern().dim();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &mat.triplets())
            .map_err(|e| LinearError::Factorization(format!("{e:?}")))?;
        if self.symbolic.is_none() {
            let sym = SymbolicLu::try_new(a.symbolic()).map_err(|e| LinearError::Factorization(format!("{e:?}")))?;
            self.symbolic = Some(sym);
        }
        let sym = self.symbolic.clone().unwrap();
        let lu = Lu::try_new_with_symbolic(sym, a.as_ref()).map_err(|_| LinearError::Singular)?;
        let b = faer::Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        let x = lu.solve(&b);
        let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(LinearError::Singular)
        }
    }
}

/// Picks the block Thomas solver on chain meshes and sparse LU otherwise.
#[derive(Debug)]
pub enum LinearSolver {
    Tridiagonal,
    Sparse(SparseLu),
}

impl LinearSolver {
    pub fn for_mesh(mesh: &Mesh) -> LinearSolver {
        if mesh.is_chain() {
            LinearSolver::Tridiagonal
        } else {
            LinearSolver::Sparse(SparseLu::new())
        }
    }

    pub fn solve(&mut self, mat: &BlockMatrix, rhs: &[f64]) -> Result<Vec<f64>, LinearError> {
        match self {
            LinearSolver::Tridiagonal => solve_block_tridiagonal(mat, rhs),
            LinearSolver::Sparse(lu) => lu.solve(mat, rhs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_interval_mesh, build_rectangle_mesh};

    fn filled(mesh: &Mesh, nb: usize, seed: u64) -> BlockMatrix {
        let pat = Arc::new(BlockPattern::from_mesh(mesh, nb));
        let mut m = BlockMatrix::zeros(pat);
        let mut x = seed as f64 * 0.37 + 0.1;
        let dim = m.pattern().dim();
        for r in 0..dim {
            for c in 0..dim {
                if m.pattern().position(r / nb, c / nb).is_some() {
                    x = (x * 7.13 + 0.31).fract();
                    m.add(r, c, x - 0.5);
                }
            }
            m.add(r, r, 4.0 * nb as f64);
        }
        m
    }

    fn residual(m: &BlockMatrix, x: &[f64], b: &[f64]) -> f64 {
        m.matvec(x).iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn dense_solve_small() {
        let mut a = vec![0.0, 2.0, 1.0, 1.0];
        let mut b = vec![4.0, 3.0];
        dense_solve(&mut a, 2, &mut b, 1).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-15 && (b[1] - 2.0).abs() < 1e-15);
        let mut s = vec![1.0, 2.0, 2.0, 4.0];
        assert_eq!(dense_solve(&mut s, 2, &mut [1.0, 1.0], 1), Err(LinearError::Singular));
    }

    #[test]
    fn thomas_matches_sparse_lu() {
        let mesh = build_interval_mesh(0.0, 1.0, 40).unwrap();
        for nb in 1..=3 {
            let m = filled(&mesh, nb, nb as u64);
            let b: Vec<f64> = (0..m.pattern().dim()).map(|i| (i as f64).sin()).collect();
            let x1 = solve_block_tridiagonal(&m, &b).unwrap();
            let x2 = SparseLu::new().solve(&m, &b).unwrap();
            assert!(residual(&m, &x1, &b) < 1e-12);
            assert!(x1.iter().zip(&x2).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn sparse_lu_reuses_symbolic() {
        let mesh = build_rectangle_mesh((0.0, 1.0), (0.0, 1.0), 6, 5).unwrap();
        let mut lu = SparseLu::new();
        for seed in 0..3 {
            let m = filled(&mesh, 2, seed);
            let b = vec![1.0; m.pattern().dim()];
            let x = lu.solve(&m, &b).unwrap();
            assert!(residual(&m, &x, &b) < 1e-12);
        }
        let m = filled(&mesh, 2, 0);
        assert_eq!(solve_block_tridiagonal(&m, &[0.0; 60]), Err(LinearError::NotTridiagonal));
    }

    #[test]
    fn column_scaling() {
        let mesh = build_interval_mesh(0.0, 1.0, 3).unwrap();
        let mut m = filled(&mesh, 2, 1);
        let before = m.to_dense();
        let s: Vec<f64> = (0..6).map(|i| i as f64 + 1.0).collect();
        m.scale_columns(&s);
        let after = m.to_dense();
        for r in 0..6 {
            for c in 0..6 {
                assert_eq!(after[r][c], before[r][c] * s[c]);
            }
        }
    }
}
