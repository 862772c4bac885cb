//! Transient heat conduction: consistent capacity matrix, conductivity
//! matrix, source and boundary-flux loads, implicit Euler stepping. The
//! scalar-field assembly kernels here are shared with the transport module.

use serde::{Deserialize, Serialize};

use crate::element::{geometry_at_tagged, interpolate, ShapeTable};
use crate::error::{FemError, Result};
use crate::mesh::{Mesh, NeumannBc, EDGE_NODES};
use crate::sparse::{SolveReport, SparseMatrix};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatMaterial {
    /// Mass density.
    pub rho: f64,
    /// Heat capacity.
    pub c: f64,
    /// Diagonal conductivity.
    pub kx: f64,
    pub ky: f64,
    /// Volumetric source rate.
    #[serde(default)]
    pub q: f64,
}

impl HeatMaterial {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho * self.c > 0.0) {
            return Err(FemError::Material("rho*c must be positive".into()));
        }
        if self.kx < 0.0 || self.ky < 0.0 {
            return Err(FemError::Material("conductivity must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `int coeff N^T N dOmega` over the mesh: the consistent capacity/mass matrix.
pub fn assemble_mass(mesh: &Mesh, coeff: f64) -> Result<SparseMatrix> {
    let table = ShapeTable::quad4();
    let mut matrix = SparseMatrix::build_pattern(mesh, 1);
    let mut k_e = vec![vec![0.0_f64; 4]; 4];
    for e in 0..mesh.n_elements() {
        let coords = mesh.element_coords(e);
        for row in k_e.iter_mut() {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
        for gp in 0..table.points.len() {
            let geom = geometry_at_tagged(table.points[gp], &coords, e)?;
            let n = &table.n_values[gp];
            let scale = coeff * table.weights[gp] * geom.det_j;
            for i in 0..4 {
                for j in 0..4 {
                    k_e[i][j] += scale * n[i] * n[j];
                }
            }
        }
        matrix.scatter_add(&mesh.elements[e], &k_e)?;
    }
    Ok(matrix)
}

/// `int B^T diag(kx, ky) B dOmega`: the conductivity/diffusivity matrix.
pub fn assemble_diffusion(mesh: &Mesh, kx: f64, ky: f64) -> Result<SparseMatrix> {
    let table = ShapeTable::quad4();
    let mut matrix = SparseMatrix::build_pattern(mesh, 1);
    let mut k_e = vec![vec![0.0_f64; 4]; 4];
    for e in 0..mesh.n_elements() {
        let coords = mesh.element_coords(e);
        for row in k_e.iter_mut() {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
        for gp in 0..table.points.len() {
            let geom = geometry_at_tagged(table.points[gp], &coords, e)?;
            let scale = table.weights[gp] * geom.det_j;
            for i in 0..4 {
                for j in 0..4 {
                    k_e[i][j] += scale
                        * (kx * geom.dn_dx[0][i] * geom.dn_dx[0][j]
                            + ky * geom.dn_dx[1][i] * geom.dn_dx[1][j]);
                }
            }
        }
        matrix.scatter_add(&mesh.elements[e], &k_e)?;
    }
    Ok(matrix)
}

/// `int N^T q dOmega` with a nodally interpolated source density.
pub fn assemble_source(mesh: &Mesh, q_nodal: &[f64]) -> Result<Vec<f64>> {
    let table = ShapeTable::quad4();
    let mut load = vec![0.0; mesh.n_nodes()];
    for e in 0..mesh.n_elements() {
        let coords = mesh.element_coords(e);
        let q_e = mesh.gather(e, q_nodal);
        for gp in 0..table.points.len() {
            let geom = geometry_at_tagged(table.points[gp], &coords, e)?;
            let q = interpolate(&q_e, table.points[gp]);
            let scale = table.weights[gp] * geom.det_j * q;
            for i in 0..4 {
                load[mesh.elements[e][i]] += scale * table.n_values[gp][i];
            }
        }
    }
    Ok(load)
}

/// `-int_Gamma N^T (J . n) dGamma` over the listed facet sets, using 2-point
/// Gauss integration along each edge.
pub fn assemble_flux(mesh: &Mesh, neumann: &[NeumannBc]) -> Result<Vec<f64>> {
    let mut load = vec![0.0; mesh.n_nodes()];
    let g = crate::element::GAUSS_P;
    for bc in neumann {
        if bc.flux.len() != 1 {
            return Err(FemError::Config(format!(
                "scalar-field flux on {:?} needs one component, got {}",
                bc.facet_set,
                bc.flux.len()
            )));
        }
        let j_dot_n = bc.flux[0];
        for &[e, edge] in mesh.facet_set(&bc.facet_set)? {
            let conn = mesh.elements[e];
            let [a, b] = EDGE_NODES[edge];
            let (pa, pb) = (mesh.nodes[conn[a]], mesh.nodes[conn[b]]);
            let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
            // 1D Gauss points at s = (1 +- g)/2 along the edge, weight len/2
            for &s in &[0.5 * (1.0 - g), 0.5 * (1.0 + g)] {
                let w = 0.5 * len;
                load[conn[a]] -= w * (1.0 - s) * j_dot_n;
                load[conn[b]] -= w * s * j_dot_n;
            }
        }
    }
    Ok(load)
}

pub fn assemble_capacity(mesh: &Mesh, material: &HeatMaterial) -> Result<SparseMatrix> {
    assemble_mass(mesh, material.rho * material.c)
}

pub fn assemble_conductivity(mesh: &Mesh, material: &HeatMaterial) -> Result<SparseMatrix> {
    assemble_diffusion(mesh, material.kx, material.ky)
}

/// Full right-hand side: boundary flux plus the volumetric source term.
pub fn assemble_heat_load(
    mesh: &Mesh,
    material: &HeatMaterial,
    neumann: &[NeumannBc],
) -> Result<Vec<f64>> {
    let mut load = assemble_flux(mesh, neumann)?;
    if material.q != 0.0 {
        let q_nodal = vec![material.q; mesh.n_nodes()];
        let source = assemble_source(mesh, &q_nodal)?;
        for (l, s) in load.iter_mut().zip(&source) {
            *l += s;
        }
    }
    Ok(load)
}

/// One implicit Euler step: `(M + dt K_D) T_new = dt F + M T_old` with the
/// given Dirichlet constraints; SPD system solved by CG.
pub fn heat_step(
    t_old: &[f64],
    dt: f64,
    capacity: &SparseMatrix,
    conductivity: &SparseMatrix,
    load: &[f64],
    dirichlet: &[(usize, f64)],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    if !(dt > 0.0) {
        return Err(FemError::Config("time step must be positive".into()));
    }
    let mut system = capacity.clone();
    system.add_scaled(conductivity, dt);
    let mut rhs = vec![0.0; capacity.dimension];
    capacity.matvec(t_old, &mut rhs);
    for (r, f) in rhs.iter_mut().zip(load) {
        *r += dt * f;
    }
    system.apply_dirichlet(&mut rhs, dirichlet)?;
    let (solution, report) = system.cg_solve(&rhs, t_old, tol, max_iter)?;
    if !report.converged {
        return Err(FemError::Solver(format!(
            "heat step did not converge in {} iterations (residual {:.3e})",
            report.iterations, report.final_residual_norm
        )));
    }
    Ok((solution, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_grid;

    fn unit_material() -> HeatMaterial {
        HeatMaterial {
            rho: 1.0,
            c: 1.0,
            kx: 1.0,
            ky: 1.0,
            q: 0.0,
        }
    }

    #[test]
    fn capacity_unit_square_analytic() {
        let mesh = generate_grid(1, 1, 1.0, 1.0).unwrap();
        let m = assemble_capacity(&mesh, &unit_material()).unwrap();
        let expect = [
            [4.0, 2.0, 1.0, 2.0],
            [2.0, 4.0, 2.0, 1.0],
            [1.0, 2.0, 4.0, 2.0],
            [2.0, 1.0, 2.0, 4.0],
        ];
        let conn = mesh.elements[0];
        for i in 0..4 {
            for j in 0..4 {
                assert!((m.get(conn[i], conn[j]) - expect[i][j] / 36.0).abs() < 1e-14);
            }
        }
        // total of all entries is rho*c*area
        let total: f64 = m.values.iter().sum();
        assert!((total - 1.0).abs() < 1e-13);
    }

    #[test]
    fn capacity_scales_linearly() {
        let mesh = generate_grid(2, 2, 1.0, 1.0).unwrap();
        let m1 = assemble_capacity(&mesh, &unit_material()).unwrap();
        let mut mat2 = unit_material();
        mat2.rho = 2.0;
        let m2 = assemble_capacity(&mesh, &mat2).unwrap();
        for (a, b) in m1.values.iter().zip(&m2.values) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn conductivity_annihilates_constants() {
        let mesh = generate_grid(4, 3, 2.0, 1.5).unwrap();
        let k = assemble_conductivity(&mesh, &unit_material()).unwrap();
        let ones = vec![1.0; mesh.n_nodes()];
        let mut out = vec![0.0; mesh.n_nodes()];
        k.matvec(&ones, &mut out);
        for v in out {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn conductivity_unit_square_diagonal() {
        let mesh = generate_grid(1, 1, 1.0, 1.0).unwrap();
        let k = assemble_conductivity(&mesh, &unit_material()).unwrap();
        for i in 0..4 {
            assert!((k.get(i, i) - 2.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_conductivity_zero_matrix() {
        let mesh = generate_grid(2, 2, 1.0, 1.0).unwrap();
        let mut mat = unit_material();
        mat.kx = 0.0;
        mat.ky = 0.0;
        let k = assemble_conductivity(&mesh, &mat).unwrap();
        assert!(k.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn source_load_unit_square() {
        let mesh = generate_grid(1, 1, 1.0, 1.0).unwrap();
        let mut mat = unit_material();
        mat.q = 1.0;
        let f = assemble_heat_load(&mesh, &mat, &[]).unwrap();
        for v in f {
            assert!((v - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn edge_flux_load() {
        let mesh = generate_grid(1, 1, 1.0, 1.0).unwrap();
        // inward flux of magnitude q across the right edge: J.n = -q
        let q = 3.0;
        let bc = NeumannBc {
            facet_set: "right".into(),
            flux: vec![-q],
        };
        let f = assemble_flux(&mesh, &[bc]).unwrap();
        // right edge nodes are 1 and 3 in the row-major grid numbering
        assert!((f[1] - q / 2.0).abs() < 1e-14);
        assert!((f[3] - q / 2.0).abs() < 1e-14);
        assert!(f[0].abs() < 1e-14 && f[2].abs() < 1e-14);
    }

    #[test]
    fn all_zero_inputs_zero_load() {
        let mesh = generate_grid(2, 2, 1.0, 1.0).unwrap();
        let f = assemble_heat_load(&mesh, &unit_material(), &[]).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_insulated_state_is_stationary() {
        let mesh = generate_grid(3, 3, 1.0, 1.0).unwrap();
        let mat = unit_material();
        let m = assemble_capacity(&mesh, &mat).unwrap();
        let k = assemble_conductivity(&mesh, &mat).unwrap();
        let load = vec![0.0; mesh.n_nodes()];
        let t0 = vec![5.0; mesh.n_nodes()];
        let (t1, _) = heat_step(&t0, 0.1, &m, &k, &load, &[], 1e-13, 1000).unwrap();
        for v in t1 {
            assert!((v - 5.0).abs() < 1e-10);
        }
    }

    #[test]
    fn large_dt_reaches_steady_linear_profile() {
        let mesh = generate_grid(8, 1, 1.0, 0.2).unwrap();
        let mat = unit_material();
        let m = assemble_capacity(&mesh, &mat).unwrap();
        let k = assemble_conductivity(&mesh, &mat).unwrap();
        let load = vec![0.0; mesh.n_nodes()];
        let t0 = vec![0.0; mesh.n_nodes()];
        let mut dirichlet = Vec::new();
        for &n in mesh.node_set("left").unwrap() {
            dirichlet.push((n, 0.0));
        }
        for &n in mesh.node_set("right").unwrap() {
            dirichlet.push((n, 1.0));
        }
        let (t, _) = heat_step(&t0, 1e12, &m, &k, &load, &dirichlet, 1e-14, 5000).unwrap();
        for (i, node) in mesh.nodes.iter().enumerate() {
            assert!((t[i] - node[0]).abs() < 1e-8, "node {i}: {} vs {}", t[i], node[0]);
        }
    }

    #[test]
    fn insulated_energy_conserved() {
        let mesh = generate_grid(5, 4, 1.0, 1.0).unwrap();
        let mat = unit_material();
        let m = assemble_capacity(&mesh, &mat).unwrap();
        let k = assemble_conductivity(&mesh, &mat).unwrap();
        let load = vec![0.0; mesh.n_nodes()];
        let mut t: Vec<f64> = mesh.nodes.iter().map(|p| p[0] * p[0] + p[1]).collect();
        let mut mt = vec![0.0; mesh.n_nodes()];
        m.matvec(&t, &mut mt);
        let e0: f64 = mt.iter().sum();
        for _ in 0..20 {
            let (t_new, _) = heat_step(&t, 0.01, &m, &k, &load, &[], 1e-13, 2000).unwrap();
            t = t_new;
        }
        m.matvec(&t, &mut mt);
        let e1: f64 = mt.iter().sum();
        assert!(((e1 - e0) / e0).abs() < 1e-10);
    }

    #[test]
    fn dt_must_be_positive() {
        let mesh = generate_grid(1, 1, 1.0, 1.0).unwrap();
        let mat = unit_material();
        let m = assemble_capacity(&mesh, &mat).unwrap();
        let k = assemble_conductivity(&mesh, &mat).unwrap();
        let load = vec![0.0; 4];
        assert!(heat_step(&[0.0; 4], 0.0, &m, &k, &load, &[], 1e-10, 100).is_err());
    }
}
