//! Solute transport with microstructure interactions. Variant A drifts the
//! concentration down gradients of the interface function and phase
//! indicator; variant B uses hydrostatic stress and normalized dislocation
//! density and adds a damage-controlled source/sink toward the equilibrium
//! concentration. Both step with implicit Euler on a nonsymmetric system.

use serde::{Deserialize, Serialize};

use crate::element::{geometry_at_tagged, gradient, interpolate, ShapeTable, N_GAUSS};
use crate::error::{FemError, Result};
use crate::heat::{assemble_diffusion, assemble_mass};
use crate::mesh::Mesh;
use crate::sparse::{solve_nonsymmetric, SolveReport, SparseMatrix};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportMaterial {
    /// Isotropic diffusivity.
    pub d: f64,
    /// Interface interaction energy.
    #[serde(default)]
    pub zeta_intf: f64,
    /// Phase interaction energy.
    #[serde(default)]
    pub zeta_n: f64,
    /// Dislocation interaction energy.
    #[serde(default)]
    pub zeta_rho: f64,
    /// Partial molar volume.
    #[serde(default)]
    pub vh_bar: f64,
    /// Gas constant.
    pub r: f64,
    /// Absolute temperature.
    pub t: f64,
    /// Segregation capacity (storage coefficient of variant B).
    #[serde(default = "one")]
    pub s: f64,
    /// Source/sink strength of the damage term.
    #[serde(default)]
    pub zd: f64,
    /// Boundary concentration entering the equilibrium value.
    #[serde(default = "one")]
    pub cb: f64,
}

fn one() -> f64 {
    1.0
}

impl TransportMaterial {
    pub fn validate(&self) -> Result<()> {
        if self.d < 0.0 {
            return Err(FemError::Material("diffusivity must be nonnegative".into()));
        }
        if !(self.r * self.t > 0.0) {
            return Err(FemError::Material("R*T must be positive".into()));
        }
        if !(self.s > 0.0) {
            return Err(FemError::Material("segregation capacity must be positive".into()));
        }
        Ok(())
    }

    pub fn rt(&self) -> f64 {
        self.r * self.t
    }
}

/// Nodal microstructure and recovered-stress fields consumed by the drift and
/// sink terms. All optional; each assembly names what it needs.
#[derive(Debug, Clone, Default)]
pub struct MicrostructureFields {
    pub g_intf: Option<Vec<f64>>,
    pub phi_n: Option<Vec<f64>>,
    pub sigma_h: Option<Vec<f64>>,
    pub rho_bar: Option<Vec<f64>>,
    pub phi_damage: Option<Vec<f64>>,
}

const BOUND_TOL: f64 = 1e-9;

impl MicrostructureFields {
    /// Checks the bounds of each present field: `g_intf` in [0, 0.25],
    /// indicator-like fields in [0, 1].
    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        let check = |name: &str, values: &Option<Vec<f64>>, lo: f64, hi: f64| -> Result<()> {
            if let Some(v) = values {
                if v.len() != n_nodes {
                    return Err(FemError::Config(format!(
                        "field {name:?}: {} values for {n_nodes} nodes",
                        v.len()
                    )));
                }
                for (i, &x) in v.iter().enumerate() {
                    if x < lo - BOUND_TOL || x > hi + BOUND_TOL {
                        return Err(FemError::Config(format!(
                            "field {name:?}: value {x} at node {i} outside [{lo}, {hi}]"
                        )));
                    }
                }
            }
            Ok(())
        };
        check("g_intf", &self.g_intf, 0.0, 0.25)?;
        check("phi_n", &self.phi_n, 0.0, 1.0)?;
        check("rho_bar", &self.rho_bar, 0.0, 1.0)?;
        check("phi_damage", &self.phi_damage, 0.0, 1.0)?;
        if let Some(v) = &self.sigma_h {
            if v.len() != n_nodes {
                return Err(FemError::Config(format!(
                    "field \"sigma_h\": {} values for {n_nodes} nodes",
                    v.len()
                )));
            }
        }
        Ok(())
    }

    fn require<'a>(&'a self, name: &str) -> Result<&'a [f64]> {
        let field = match name {
            "g_intf" => &self.g_intf,
            "phi_n" => &self.phi_n,
            "sigma_h" => &self.sigma_h,
            "rho_bar" => &self.rho_bar,
            "phi_damage" => &self.phi_damage,
            _ => unreachable!(),
        };
        field
            .as_deref()
            .ok_or_else(|| FemError::Config(format!("missing nodal field {name:?}")))
    }
}

/// Per-node multiphase fractions with a two-set grain assignment.
#[derive(Debug, Clone)]
pub struct PhaseFractions {
    /// `fractions[node][grain]`.
    pub fractions: Vec<Vec<f64>>,
    /// Grain indices belonging to phase set i.
    pub set_i: Vec<usize>,
    /// Grain indices belonging to phase set j.
    pub set_j: Vec<usize>,
}

impl PhaseFractions {
    pub fn validate(&self) -> Result<()> {
        let n_grains = self.fractions.first().map_or(0, |f| f.len());
        for (node, f) in self.fractions.iter().enumerate() {
            let sum: f64 = f.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(FemError::Config(format!(
                    "phase fractions at node {node} sum to {sum}, expected 1"
                )));
            }
            for &x in f {
                if !(-1e-9..=1.0 + 1e-9).contains(&x) {
                    return Err(FemError::Config(format!(
                        "phase fraction {x} at node {node} outside [0, 1]"
                    )));
                }
            }
        }
        for g in 0..n_grains {
            let in_i = self.set_i.contains(&g);
            let in_j = self.set_j.contains(&g);
            if !in_i && !in_j {
                return Err(FemError::Config(format!(
                    "grain {g} not assigned to either phase set"
                )));
            }
        }
        Ok(())
    }
}

/// Double-obstacle interface functions: per node, pairwise fraction products
/// accumulated by set membership over unordered grain pairs.
/// Returns `(g_ii, g_ij, g_jj)`.
pub fn interface_function(
    fractions: &PhaseFractions,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    fractions.validate()?;
    let n = fractions.fractions.len();
    let mut g_ii = vec![0.0; n];
    let mut g_ij = vec![0.0; n];
    let mut g_jj = vec![0.0; n];
    for (node, f) in fractions.fractions.iter().enumerate() {
        for alpha in 0..f.len() {
            for beta in 0..alpha {
                let term = f[alpha] * f[beta];
                let a_in_i = fractions.set_i.contains(&alpha);
                let b_in_i = fractions.set_i.contains(&beta);
                match (a_in_i, b_in_i) {
                    (true, true) => g_ii[node] += term,
                    (false, false) => g_jj[node] += term,
                    _ => g_ij[node] += term,
                }
            }
        }
    }
    Ok((g_ii, g_ij, g_jj))
}

/// Drift interaction matrix `sum_f int B^T D (coef_f/RT) (B field_f) N dOmega`
/// for any number of (coefficient, nodal field) pairs. Nonsymmetric.
fn assemble_interaction(
    mesh: &Mesh,
    material: &TransportMaterial,
    pairs: &[(f64, &[f64])],
) -> Result<SparseMatrix> {
    let table = ShapeTable::quad4();
    let mut matrix = SparseMatrix::build_pattern(mesh, 1);
    let mut k_e = vec![vec![0.0_f64; 4]; 4];
    let rt = material.rt();
    for e in 0..mesh.n_elements() {
        let coords = mesh.element_coords(e);
        for row in k_e.iter_mut() {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
        for gp in 0..table.points.len() {
            let geom = geometry_at_tagged(table.points[gp], &coords, e)?;
            let n = &table.n_values[gp];
            let mut drift = [0.0_f64; 2];
            for &(coef, field) in pairs {
                let nodal = mesh.gather(e, field);
                let grad = gradient(&nodal, &geom);
                let c = material.d * coef / rt;
                drift[0] += c * grad[0];
                drift[1] += c * grad[1];
            }
            let scale = table.weights[gp] * geom.det_j;
            for i in 0..4 {
                let bt_drift = geom.dn_dx[0][i] * drift[0] + geom.dn_dx[1][i] * drift[1];
                for j in 0..4 {
                    k_e[i][j] += scale * bt_drift * n[j];
                }
            }
        }
        matrix.scatter_add(&mesh.elements[e], &k_e)?;
    }
    Ok(matrix)
}

/// Variant A interaction matrix: drift down the interface-function and phase
/// indicator gradients.
pub fn assemble_interaction_a(
    mesh: &Mesh,
    material: &TransportMaterial,
    fields: &MicrostructureFields,
) -> Result<SparseMatrix> {
    let g_intf = fields.require("g_intf")?;
    let phi_n = fields.require("phi_n")?;
    assemble_interaction(
        mesh,
        material,
        &[(material.zeta_intf, g_intf), (material.zeta_n, phi_n)],
    )
}

/// Variant B interaction matrix: drift down the hydrostatic-stress and
/// dislocation-density gradients.
pub fn assemble_interaction_b(
    mesh: &Mesh,
    material: &TransportMaterial,
    fields: &MicrostructureFields,
) -> Result<SparseMatrix> {
    let sigma_h = fields.require("sigma_h")?;
    let rho_bar = fields.require("rho_bar")?;
    assemble_interaction(
        mesh,
        material,
        &[(material.vh_bar, sigma_h), (material.zeta_rho, rho_bar)],
    )
}

/// Damage sink matrix `int N^T N (Z_d/t) phi^2 dOmega`.
pub fn assemble_sink(
    mesh: &Mesh,
    material: &TransportMaterial,
    phi_damage: &[f64],
    t_now: f64,
) -> Result<SparseMatrix> {
    if !(t_now > 0.0) {
        return Err(FemError::Config(
            "sink term needs a positive current time".into(),
        ));
    }
    let table = ShapeTable::quad4();
    let mut matrix = SparseMatrix::build_pattern(mesh, 1);
    let mut k_e = vec![vec![0.0_f64; 4]; 4];
    let strength = material.zd / t_now;
    for e in 0..mesh.n_elements() {
        let coords = mesh.element_coords(e);
        let phi_e = mesh.gather(e, phi_damage);
        for row in k_e.iter_mut() {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
        for gp in 0..table.points.len() {
            let geom = geometry_at_tagged(table.points[gp], &coords, e)?;
            let n = &table.n_values[gp];
            let phi = interpolate(&phi_e, table.points[gp]);
            let scale = table.weights[gp] * geom.det_j * strength * phi * phi;
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

/// Sink source load `int N^T (Z_d/t) phi^2 (N c_eq) dOmega`.
pub fn assemble_sink_source(
    mesh: &Mesh,
    material: &TransportMaterial,
    phi_damage: &[f64],
    c_eq_nodal: &[f64],
    t_now: f64,
) -> Result<Vec<f64>> {
    if !(t_now > 0.0) {
        return Err(FemError::Config(
            "sink term needs a positive current time".into(),
        ));
    }
    let table = ShapeTable::quad4();
    let mut load = vec![0.0; mesh.n_nodes()];
    let strength = material.zd / t_now;
    for e in 0..mesh.n_elements() {
        let coords = mesh.element_coords(e);
        let phi_e = mesh.gather(e, phi_damage);
        let ceq_e = mesh.gather(e, c_eq_nodal);
        for gp in 0..table.points.len() {
            let geom = geometry_at_tagged(table.points[gp], &coords, e)?;
            let phi = interpolate(&phi_e, table.points[gp]);
            let ceq = interpolate(&ceq_e, table.points[gp]);
            let scale = table.weights[gp] * geom.det_j * strength * phi * phi * ceq;
            for i in 0..4 {
                load[mesh.elements[e][i]] += scale * table.n_values[gp][i];
            }
        }
    }
    Ok(load)
}

/// Equilibrium concentration `c_B exp((VH sigma_h + zeta_rho rho_bar) / RT)`.
pub fn equilibrium_concentration(
    material: &TransportMaterial,
    sigma_h: f64,
    rho_bar: f64,
) -> f64 {
    material.cb * ((material.vh_bar * sigma_h + material.zeta_rho * rho_bar) / material.rt()).exp()
}

/// Maps per-Gauss-point values to the nodes by volume averaging over the
/// adjacent elements' integration points.
pub fn recover_nodal(mesh: &Mesh, gauss_values: &[[f64; N_GAUSS]]) -> Result<Vec<f64>> {
    if gauss_values.len() != mesh.n_elements() {
        return Err(FemError::Config(format!(
            "recovery needs {} element entries, got {}",
            mesh.n_elements(),
            gauss_values.len()
        )));
    }
    let table = ShapeTable::quad4();
    let mut weighted = vec![0.0; mesh.n_nodes()];
    let mut weights = vec![0.0; mesh.n_nodes()];
    for e in 0..mesh.n_elements() {
        let coords = mesh.element_coords(e);
        for gp in 0..table.points.len() {
            let geom = geometry_at_tagged(table.points[gp], &coords, e)?;
            let w = table.weights[gp] * geom.det_j;
            for &node in &mesh.elements[e] {
                weighted[node] += w * gauss_values[e][gp];
                weights[node] += w;
            }
        }
    }
    Ok(weighted
        .iter()
        .zip(&weights)
        .map(|(v, w)| v / w)
        .collect())
}

pub struct TransportSystemA {
    pub mass: SparseMatrix,
    pub diffusivity: SparseMatrix,
    pub interaction: SparseMatrix,
}

impl TransportSystemA {
    pub fn assemble(
        mesh: &Mesh,
        material: &TransportMaterial,
        fields: &MicrostructureFields,
    ) -> Result<Self> {
        material.validate()?;
        fields.validate(mesh.n_nodes())?;
        Ok(TransportSystemA {
            mass: assemble_mass(mesh, 1.0)?,
            diffusivity: assemble_diffusion(mesh, material.d, material.d)?,
            interaction: assemble_interaction_a(mesh, material, fields)?,
        })
    }
}

/// One implicit Euler step of variant A:
/// `[M + dt K_D - dt K_I] c_new = dt F + M c_old`.
pub fn transport_step_a(
    c_old: &[f64],
    dt: f64,
    system: &TransportSystemA,
    load: &[f64],
    dirichlet: &[(usize, f64)],
    tol: f64,
    max_iter: usize,
    dense_cap: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    if !(dt > 0.0) {
        return Err(FemError::Config("time step must be positive".into()));
    }
    let mut a = system.mass.clone();
    a.add_scaled(&system.diffusivity, dt);
    a.add_scaled(&system.interaction, -dt);
    let mut rhs = vec![0.0; a.dimension];
    system.mass.matvec(c_old, &mut rhs);
    for (r, f) in rhs.iter_mut().zip(load) {
        *r += dt * f;
    }
    a.apply_dirichlet(&mut rhs, dirichlet)?;
    let (c, report) = solve_nonsymmetric(&a, &rhs, c_old, tol, max_iter, dense_cap)?;
    if !report.converged {
        return Err(FemError::Solver(format!(
            "transport step did not converge (residual {:.3e})",
            report.final_residual_norm
        )));
    }
    Ok((c, report))
}

pub struct TransportSystemB {
    pub mass: SparseMatrix,
    pub diffusivity: SparseMatrix,
    pub interaction: SparseMatrix,
    pub sink: SparseMatrix,
    pub sink_source: Vec<f64>,
}

impl TransportSystemB {
    /// Assembles the variant B operators at the current time. The equilibrium
    /// concentration is evaluated nodewise from `sigma_h` and `rho_bar`.
    pub fn assemble(
        mesh: &Mesh,
        material: &TransportMaterial,
        fields: &MicrostructureFields,
        t_now: f64,
    ) -> Result<Self> {
        material.validate()?;
        fields.validate(mesh.n_nodes())?;
        let sigma_h = fields.require("sigma_h")?;
        let rho_bar = fields.require("rho_bar")?;
        let phi = fields.require("phi_damage")?;
        let c_eq: Vec<f64> = sigma_h
            .iter()
            .zip(rho_bar)
            .map(|(&s, &r)| equilibrium_concentration(material, s, r))
            .collect();
        Ok(TransportSystemB {
            mass: assemble_mass(mesh, material.s)?,
            diffusivity: assemble_diffusion(mesh, material.d, material.d)?,
            interaction: assemble_interaction_b(mesh, material, fields)?,
            sink: assemble_sink(mesh, material, phi, t_now)?,
            sink_source: assemble_sink_source(mesh, material, phi, &c_eq, t_now)?,
        })
    }
}

/// One implicit Euler step of variant B:
/// `[M + dt (K_D - K_I + K_S)] c_new = dt (F + F_sink) + M c_old`.
pub fn transport_step_b(
    c_old: &[f64],
    dt: f64,
    system: &TransportSystemB,
    load: &[f64],
    dirichlet: &[(usize, f64)],
    tol: f64,
    max_iter: usize,
    dense_cap: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    if !(dt > 0.0) {
        return Err(FemError::Config("time step must be positive".into()));
    }
    let mut a = system.mass.clone();
    a.add_scaled(&system.diffusivity, dt);
    a.add_scaled(&system.interaction, -dt);
    a.add_scaled(&system.sink, dt);
    let mut rhs = vec![0.0; a.dimension];
    system.mass.matvec(c_old, &mut rhs);
    for i in 0..rhs.len() {
        rhs[i] += dt * (load[i] + system.sink_source[i]);
    }
    a.apply_dirichlet(&mut rhs, dirichlet)?;
    let (c, report) = solve_nonsymmetric(&a, &rhs, c_old, tol, max_iter, dense_cap)?;
    if !report.converged {
        return Err(FemError::Solver(format!(
            "transport step did not converge (residual {:.3e})",
            report.final_residual_norm
        )));
    }
    Ok((c, report))
}
