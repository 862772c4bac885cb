//! Global linear algebra: compressed-row matrices with a fixed symbolic
//! pattern, scatter-add assembly, symmetric Dirichlet elimination and the
//! solvers used by the physics modules (Jacobi-preconditioned CG for
//! symmetric systems, restarted GMRES or a dense LU fallback for the
//! nonsymmetric transport systems).

use std::collections::BTreeSet;

use crate::error::{FemError, Result};
use crate::mesh::Mesh;

/// Compressed-row square matrix. The pattern is built once from the mesh
/// connectivity and reused; values are rezeroed per assembly.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pub dimension: usize,
    pub row_offsets: Vec<usize>,
    pub column_indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
}

impl SparseMatrix {
    /// Builds the zero-valued pattern for `dofs_per_node` unknowns per node:
    /// entry (i, j) exists iff dofs i and j share an element.
    pub fn build_pattern(mesh: &Mesh, dofs_per_node: usize) -> SparseMatrix {
        let n = mesh.n_nodes() * dofs_per_node;
        let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); mesh.n_nodes()];
        for conn in &mesh.elements {
            for &a in conn {
                for &b in conn {
                    adjacency[a].insert(b);
                }
            }
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut column_indices = Vec::new();
        row_offsets.push(0);
        for node in 0..mesh.n_nodes() {
            for c in 0..dofs_per_node {
                let _ = c;
                for &nb in &adjacency[node] {
                    for cc in 0..dofs_per_node {
                        column_indices.push(nb * dofs_per_node + cc);
                    }
                }
                row_offsets.push(column_indices.len());
            }
        }
        let nnz = column_indices.len();
        SparseMatrix {
            dimension: n,
            row_offsets,
            column_indices,
            values: vec![0.0; nnz],
        }
    }

    pub fn nnz(&self) -> usize {
        self.column_indices.len()
    }

    pub fn zero_values(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    fn entry_index(&self, row: usize, col: usize) -> Option<usize> {
        let lo = self.row_offsets[row];
        let hi = self.row_offsets[row + 1];
        self.column_indices[lo..hi]
            .binary_search(&col)
            .ok()
            .map(|k| lo + k)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entry_index(row, col).map_or(0.0, |k| self.values[k])
    }

    /// Accumulates a dense element matrix into the pattern. Missing entries
    /// are a programming bug and fail fast.
    pub fn scatter_add(&mut self, dofs: &[usize], element_matrix: &[Vec<f64>]) -> Result<()> {
        for (a, &i) in dofs.iter().enumerate() {
            for (b, &j) in dofs.iter().enumerate() {
                let v = element_matrix[a][b];
                match self.entry_index(i, j) {
                    Some(k) => self.values[k] += v,
                    None => return Err(FemError::MissingPatternEntry { row: i, col: j }),
                }
            }
        }
        Ok(())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.dimension {
            let mut s = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                s += self.values[k] * x[self.column_indices[k]];
            }
            y[i] = s;
        }
    }

    /// `self + scale * other`, requiring identical patterns.
    pub fn add_scaled(&mut self, other: &SparseMatrix, scale: f64) {
        assert_eq!(self.nnz(), other.nnz(), "pattern mismatch");
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += scale * o;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.dimension]; self.dimension];
        for i in 0..self.dimension {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                d[i][self.column_indices[k]] = self.values[k];
            }
        }
        d
    }

    /// Symmetric elimination of Dirichlet constraints: moves constrained
    /// columns to the right-hand side, zeroes row and column, puts 1 on the
    /// diagonal and the prescribed value in the rhs.
    pub fn apply_dirichlet(&mut self, rhs: &mut [f64], constraints: &[(usize, f64)]) -> Result<()> {
        let n = self.dimension;
        let mut value: Vec<Option<f64>> = vec![None; n];
        for &(dof, v) in constraints {
            if dof >= n {
                return Err(FemError::Config(format!("constrained dof {dof} out of range")));
            }
            match value[dof] {
                Some(existing) if existing != v => {
                    return Err(FemError::ConflictingConstraint {
                        dof,
                        a: existing,
                        b: v,
                    })
                }
                _ => value[dof] = Some(v),
            }
        }
        let constrained: Vec<bool> = value.iter().map(|v| v.is_some()).collect();
        // rhs <- rhs - A[:, d] * v_d for unconstrained rows
        for i in 0..n {
            if constrained[i] {
                continue;
            }
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                let j = self.column_indices[k];
                if let Some(v) = value[j] {
                    rhs[i] -= self.values[k] * v;
                }
            }
        }
        // zero rows and columns, unit diagonal
        for i in 0..n {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                let j = self.column_indices[k];
                if constrained[i] || constrained[j] {
                    self.values[k] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        for (dof, v) in value.iter().enumerate() {
            if let Some(v) = v {
                rhs[dof] = *v;
            }
        }
        Ok(())
    }

    /// Jacobi-preconditioned conjugate gradients for SPD systems.
    pub fn cg_solve(
        &self,
        rhs: &[f64],
        x0: &[f64],
        tol: f64,
        max_iter: usize,
    ) -> Result<(Vec<f64>, SolveReport)> {
        let n = self.dimension;
        let mut diag = vec![0.0; n];
        for i in 0..n {
            diag[i] = self.get(i, i);
            if diag[i] == 0.0 {
                return Err(FemError::Solver(format!("zero diagonal at dof {i}")));
            }
        }
        let mut x = x0.to_vec();
        let mut r = vec![0.0; n];
        self.matvec(&x, &mut r);
        for i in 0..n {
            r[i] = rhs[i] - r[i];
        }
        let b_norm = norm2(rhs).max(f64::MIN_POSITIVE);
        let target = tol * b_norm;
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
        let mut p = z.clone();
        let mut rz: f64 = dot(&r, &z);
        let mut ap = vec![0.0; n];
        let mut iterations = 0;
        let mut res = norm2(&r);
        if res <= target {
            return Ok((
                x,
                SolveReport {
                    iterations: 0,
                    final_residual_norm: res,
                    converged: true,
                },
            ));
        }
        for it in 1..=max_iter {
            self.matvec(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return Err(FemError::Solver(format!(
                    "matrix not positive definite (p.Ap = {pap:.3e})"
                )));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            res = norm2(&r);
            iterations = it;
            if res <= target {
                break;
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let converged = res <= target;
        Ok((
            x,
            SolveReport {
                iterations,
                final_residual_norm: res,
                converged,
            },
        ))
    }

    /// Restarted GMRES with Jacobi preconditioning for the nonsymmetric
    /// drift systems.
    pub fn gmres_solve(
        &self,
        rhs: &[f64],
        x0: &[f64],
        tol: f64,
        max_iter: usize,
        restart: usize,
    ) -> Result<(Vec<f64>, SolveReport)> {
        let n = self.dimension;
        let mut diag = vec![0.0; n];
        for i in 0..n {
            diag[i] = self.get(i, i);
            if diag[i] == 0.0 {
                return Err(FemError::Solver(format!("zero diagonal at dof {i}")));
            }
        }
        let precond = |v: &mut [f64]| {
            for i in 0..n {
                v[i] /= diag[i];
            }
        };
        let b_norm = norm2(rhs).max(f64::MIN_POSITIVE);
        let target = tol * b_norm;
        let mut x = x0.to_vec();
        let mut total_iters = 0;
        let m = restart.max(1);
        let mut tmp = vec![0.0; n];
        loop {
            self.matvec(&x, &mut tmp);
            let mut r: Vec<f64> = (0..n).map(|i| rhs[i] - tmp[i]).collect();
            let true_res = norm2(&r);
            if true_res <= target || total_iters >= max_iter {
                return Ok((
                    x,
                    SolveReport {
                        iterations: total_iters,
                        final_residual_norm: true_res,
                        converged: true_res <= target,
                    },
                ));
            }
            precond(&mut r);
            let beta = norm2(&r);
            let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
            v.push(r.iter().map(|ri| ri / beta).collect());
            let mut h = vec![vec![0.0_f64; m]; m + 1];
            let mut cs = vec![0.0_f64; m];
            let mut sn = vec![0.0_f64; m];
            let mut g = vec![0.0_f64; m + 1];
            g[0] = beta;
            let mut k_used = 0;
            for k in 0..m {
                self.matvec(&v[k], &mut tmp);
                let mut w = tmp.clone();
                precond(&mut w);
                for j in 0..=k {
                    h[j][k] = dot(&w, &v[j]);
                    for i in 0..n {
                        w[i] -= h[j][k] * v[j][i];
                    }
                }
                h[k + 1][k] = norm2(&w);
                if h[k + 1][k] > 1e-300 {
                    v.push(w.iter().map(|wi| wi / h[k + 1][k]).collect());
                }
                // apply accumulated Givens rotations
                for j in 0..k {
                    let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                    h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                    h[j][k] = t;
                }
                let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
                if denom == 0.0 {
                    k_used = k + 1;
                    break;
                }
                cs[k] = h[k][k] / denom;
                sn[k] = h[k + 1][k] / denom;
                h[k][k] = denom;
                h[k + 1][k] = 0.0;
                g[k + 1] = -sn[k] * g[k];
                g[k] *= cs[k];
                total_iters += 1;
                k_used = k + 1;
                // preconditioned residual estimate; exact check happens at restart
                if g[k + 1].abs() <= 0.1 * target || total_iters >= max_iter {
                    break;
                }
            }
            // back substitution of the k_used x k_used triangular system
            let mut y = vec![0.0_f64; k_used];
            for j in (0..k_used).rev() {
                let mut s = g[j];
                for l in j + 1..k_used {
                    s -= h[j][l] * y[l];
                }
                y[j] = s / h[j][j];
            }
            for j in 0..k_used {
                for i in 0..n {
                    x[i] += y[j] * v[j][i];
                }
            }
        }
    }
}

/// LU solve with partial pivoting on a dense matrix; the oracle path and the
/// small-system fallback.
pub fn dense_solve(matrix: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    assert!(matrix.len() == n && matrix.iter().all(|r| r.len() == n));
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut x = rhs.to_vec();
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|l, r| l.1.total_cmp(&r.1))
            .unwrap();
        if pivot < 1e-300 {
            return Err(FemError::Solver(format!(
                "singular matrix (pivot {pivot:.3e} at column {col})"
            )));
        }
        a.swap(col, pivot_row);
        x.swap(col, pivot_row);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                a[r][col] = 0.0;
                for c in col + 1..n {
                    a[r][c] -= f * a[col][c];
                }
                x[r] -= f * x[col];
            }
        }
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for c in r + 1..n {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    Ok(x)
}

/// Solves a possibly nonsymmetric assembled system: dense LU up to
/// `dense_cap` unknowns, restarted GMRES above it.
pub fn solve_nonsymmetric(
    matrix: &SparseMatrix,
    rhs: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
    dense_cap: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    if matrix.dimension <= dense_cap {
        let x = dense_solve(&matrix.to_dense(), rhs)?;
        let mut r = vec![0.0; matrix.dimension];
        matrix.matvec(&x, &mut r);
        let res = (0..matrix.dimension)
            .map(|i| (rhs[i] - r[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok((
            x,
            SolveReport {
                iterations: 0,
                final_residual_norm: res,
                converged: true,
            },
        ))
    } else {
        matrix.gmres_solve(rhs, x0, tol, max_iter, 60)
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
