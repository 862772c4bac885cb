//! Geometric phase-field fracture: spectral strain split, history-tracked
//! crack driving forces, the semi-implicit phi solve and the staggered
//! mechanics <-> fracture coupling.

use serde::{Deserialize, Serialize};

use crate::element::{geometry_at_tagged, interpolate, ShapeTable, N_GAUSS};
use crate::error::{FemError, Result};
use crate::mechanics::{ElasticModel, MechSolver, StepResult};
use crate::mesh::Mesh;
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrivingForceKind {
    Brittle,
    Elastoplastic,
    ElastoplasticThreshold,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PffMaterial {
    /// Regularization length of the diffuse crack.
    pub ell: f64,
    /// Critical work energy density.
    pub wc: f64,
    /// Post-critical parameter of the threshold variant.
    #[serde(default = "one")]
    pub zeta_pc: f64,
    pub driving_force: DrivingForceKind,
    /// Residual stiffness floor of the degradation function.
    #[serde(default = "default_k_res")]
    pub k_res: f64,
}

fn one() -> f64 {
    1.0
}

fn default_k_res() -> f64 {
    1e-8
}

impl PffMaterial {
    pub fn validate(&self) -> Result<()> {
        if !(self.ell > 0.0) {
            return Err(FemError::Material("length scale must be positive".into()));
        }
        if !(self.wc > 0.0) {
            return Err(FemError::Material(
                "critical work density must be positive".into(),
            ));
        }
        if !(self.zeta_pc > 0.0) {
            return Err(FemError::Material("zeta must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.k_res) {
            return Err(FemError::Material("k_res must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-Gauss history and the nodal order parameter.
#[derive(Debug, Clone)]
pub struct PffState {
    pub history: Vec<[f64; N_GAUSS]>,
    pub psi_plus: Vec<[f64; N_GAUSS]>,
    pub phi: Vec<f64>,
}

impl PffState {
    pub fn new(mesh: &Mesh) -> Self {
        PffState {
            history: vec![[0.0; N_GAUSS]; mesh.n_elements()],
            psi_plus: vec![[0.0; N_GAUSS]; mesh.n_elements()],
            phi: vec![0.0; mesh.n_nodes()],
        }
    }
}

/// Spectral split of the elastic strain (in-plane 2x2 block plus eps_zz as a
/// third principal value; tensor shear component). Returns
/// `(psi_plus, psi_minus, principal_plus, principal_minus)`.
pub fn spectral_split(
    model: &ElasticModel,
    strain: &[f64; 4],
) -> (f64, f64, [f64; 3], [f64; 3]) {
    let [exx, eyy, ezz, exy] = *strain;
    let avg = 0.5 * (exx + eyy);
    let r = (0.25 * (exx - eyy).powi(2) + exy * exy).sqrt();
    let principal = [avg + r, avg - r, ezz];
    let pos = principal.map(|e| e.max(0.0));
    let neg = principal.map(|e| e.min(0.0));
    let tr: f64 = principal.iter().sum();
    let (lambda, mu) = (model.lambda(), model.mu());
    let psi_p = 0.5 * lambda * tr.max(0.0).powi(2) + mu * pos.iter().map(|e| e * e).sum::<f64>();
    let psi_m = 0.5 * lambda * tr.min(0.0).powi(2) + mu * neg.iter().map(|e| e * e).sum::<f64>();
    (psi_p, psi_m, pos, neg)
}

/// Crack driving force from the tensile energy and plastic work densities.
pub fn driving_force(material: &PffMaterial, psi_plus: f64, plastic_work: f64) -> f64 {
    match material.driving_force {
        DrivingForceKind::Brittle => psi_plus / material.wc,
        DrivingForceKind::Elastoplastic => (psi_plus + plastic_work) / material.wc,
        DrivingForceKind::ElastoplasticThreshold => {
            material.zeta_pc * ((psi_plus + plastic_work) / material.wc - 1.0).max(0.0)
        }
    }
}

/// Running-max history update; never decreases.
pub fn update_history(history: &mut [[f64; N_GAUSS]], driving: &[[f64; N_GAUSS]]) {
    for (h, d) in history.iter_mut().zip(driving) {
        for gp in 0..N_GAUSS {
            if d[gp] > h[gp] {
                h[gp] = d[gp];
            }
        }
    }
}

/// Stress degradation `(1 - phi)^2`, floored at `k_res` so the stiffness
/// never vanishes; phi clamped to [0, 1] first.
pub fn degradation(material: &PffMaterial, phi: f64) -> f64 {
    let p = phi.clamp(0.0, 1.0);
    ((1.0 - p) * (1.0 - p)).max(material.k_res)
}

/// Degradation interpolated from nodal phi to the Gauss points.
pub fn gauss_degradation(
    mesh: &Mesh,
    material: &PffMaterial,
    phi: &[f64],
) -> Vec<[f64; N_GAUSS]> {
    let table = ShapeTable::quad4();
    (0..mesh.n_elements())
        .map(|e| {
            let phi_e = mesh.gather(e, phi);
            let mut g = [0.0; N_GAUSS];
            for gp in 0..N_GAUSS {
                g[gp] = degradation(material, interpolate(&phi_e, table.points[gp]));
            }
            g
        })
        .collect()
}

/// The semi-implicit phi system
/// `K_phi = int [(H + 1) N^T N + ell^2 B^T B] dV`, `f_H = int H N^T dV`.
pub fn assemble_phi_system(
    mesh: &Mesh,
    material: &PffMaterial,
    history: &[[f64; N_GAUSS]],
) -> Result<(SparseMatrix, Vec<f64>)> {
    material.validate()?;
    if history.len() != mesh.n_elements() {
        return Err(FemError::Config(format!(
            "phi assembly needs {} element entries, got {}",
            mesh.n_elements(),
            history.len()
        )));
    }
    let table = ShapeTable::quad4();
    let mut matrix = SparseMatrix::build_pattern(mesh, 1);
    let mut load = vec![0.0; mesh.n_nodes()];
    let mut k_e = vec![vec![0.0_f64; 4]; 4];
    let ell2 = material.ell * material.ell;
    for e in 0..mesh.n_elements() {
        let coords = mesh.element_coords(e);
        for row in k_e.iter_mut() {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
        for gp in 0..N_GAUSS {
            let geom = geometry_at_tagged(table.points[gp], &coords, e)?;
            let n = &table.n_values[gp];
            let h = history[e][gp];
            let w = table.weights[gp] * geom.det_j;
            for i in 0..4 {
                for j in 0..4 {
                    k_e[i][j] += w
                        * ((h + 1.0) * n[i] * n[j]
                            + ell2
                                * (geom.dn_dx[0][i] * geom.dn_dx[0][j]
                                    + geom.dn_dx[1][i] * geom.dn_dx[1][j]));
                }
                load[mesh.elements[e][i]] += w * h * n[i];
            }
        }
        matrix.scatter_add(&mesh.elements[e], &k_e)?;
    }
    Ok((matrix, load))
}

/// One linear phi solve. `pins` holds crack-seed nodes held at phi = 1.
pub fn solve_phi(
    mesh: &Mesh,
    material: &PffMaterial,
    history: &[[f64; N_GAUSS]],
    pins: &[usize],
    phi_guess: &[f64],
) -> Result<Vec<f64>> {
    let (mut k, mut rhs) = assemble_phi_system(mesh, material, history)?;
    let constraints: Vec<(usize, f64)> = pins.iter().map(|&n| (n, 1.0)).collect();
    k.apply_dirichlet(&mut rhs, &constraints)?;
    let (phi, report) = k.cg_solve(&rhs, phi_guess, 1e-12, 20_000)?;
    if !report.converged {
        return Err(FemError::Solver(format!(
            "phi solve did not converge (residual {:.3e})",
            report.final_residual_norm
        )));
    }
    Ok(phi)
}

/// Regularized crack surface energy
/// `Gamma_ell = int (1/2 ell)(phi^2 + ell^2 |grad phi|^2) dV` (diagnostic).
pub fn crack_surface(mesh: &Mesh, material: &PffMaterial, phi: &[f64]) -> Result<f64> {
    let table = ShapeTable::quad4();
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let coords = mesh.element_coords(e);
        let phi_e = mesh.gather(e, phi);
        for gp in 0..N_GAUSS {
            let geom = geometry_at_tagged(table.points[gp], &coords, e)?;
            let p = interpolate(&phi_e, table.points[gp]);
            let g = crate::element::gradient(&phi_e, &geom);
            let grad2 = g[0] * g[0] + g[1] * g[1];
            total += table.weights[gp] * geom.det_j / (2.0 * material.ell)
                * (p * p + material.ell * material.ell * grad2);
        }
    }
    Ok(total)
}

/// One staggered increment: mechanics with frozen degradation, then driving
/// force + history, then the phi solve. Returns the mechanics step result.
pub fn staggered_step(
    solver: &mut MechSolver,
    material: &PffMaterial,
    state: &mut PffState,
    pins: &[usize],
) -> Result<StepResult> {
    material.validate()?;
    let mesh = solver.mesh;
    let g_d = gauss_degradation(mesh, material, &state.phi);
    let result = solver.advance(Some(&g_d))?;

    let mut driving = vec![[0.0; N_GAUSS]; mesh.n_elements()];
    for e in 0..mesh.n_elements() {
        for gp in 0..N_GAUSS {
            let mp = &result.states[e][gp];
            let mut e_el = [0.0_f64; 4];
            for k in 0..4 {
                e_el[k] = mp.strain[k] - mp.plastic_strain[k];
            }
            let (psi_p, _, _, _) = spectral_split(&solver.model, &e_el);
            state.psi_plus[e][gp] = psi_p;
            driving[e][gp] = driving_force(material, psi_p, mp.plastic_work);
        }
    }
    update_history(&mut state.history, &driving);
    state.phi = solve_phi(mesh, material, &state.history, pins, &state.phi)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanics::{newton_solve, HardeningLaw, NewtonSettings, PlaneMode};
    use crate::mesh::{generate_grid, DirichletBc, Schedule};
    use crate::sparse::norm2;

    fn pff(ell: f64, wc: f64, kind: DrivingForceKind) -> PffMaterial {
        PffMaterial {
            ell,
            wc,
            zeta_pc: 1.0,
            driving_force: kind,
            k_res: 1e-8,
        }
    }

    fn ps_model(e: f64, nu: f64) -> ElasticModel {
        ElasticModel {
            e,
            nu,
            plane_mode: PlaneMode::PlaneStrain,
        }
    }

    #[test]
    fn spectral_split_cases() {
        let m = ps_model(1.0, 0.25);
        let (lambda, mu) = (m.lambda(), m.mu());
        // eigenvalue sign split for diag(1, -2)
        let (_, _, pos, neg) = spectral_split(&m, &[1.0, -2.0, 0.0, 0.0]);
        assert_eq!(pos, [1.0, 0.0, 0.0]);
        assert_eq!(neg, [0.0, -2.0, 0.0]);
        // pure tension diag(a, 0)
        let a = 0.3;
        let (pp, pm, _, _) = spectral_split(&m, &[a, 0.0, 0.0, 0.0]);
        assert!((pp - (0.5 * lambda * a * a + mu * a * a)).abs() < 1e-14);
        assert!(pm.abs() < 1e-14);
        // pure compression
        let (pp, pm, _, _) = spectral_split(&m, &[-0.1, -0.2, -0.05, 0.0]);
        assert_eq!(pp, 0.0);
        assert!(pm > 0.0);
        // pure shear: eigenvalues +-exy, psi+ = mu exy^2
        let exy = 0.04;
        let (pp, pm, _, _) = spectral_split(&m, &[0.0, 0.0, 0.0, exy]);
        assert!((pp - mu * exy * exy).abs() < 1e-14);
        assert!((pm - mu * exy * exy).abs() < 1e-14);
    }

    #[test]
    fn split_energy_sum_one_signed() {
        // all principal strains positive: psi+ + psi- equals the full energy
        let m = ps_model(2.0, 0.3);
        let (lambda, mu) = (m.lambda(), m.mu());
        let e = [0.3, 0.1, 0.2, 0.05];
        let (pp, pm, pos, _) = spectral_split(&m, &e);
        assert!(pos.iter().all(|&v| v > 0.0));
        let tr = e[0] + e[1] + e[2];
        let full = 0.5 * lambda * tr * tr + mu * pos.iter().map(|v| v * v).sum::<f64>();
        assert!((pp + pm - full).abs() < 1e-12);
    }

    #[test]
    fn driving_force_kinds() {
        let b = pff(1.0, 2.0, DrivingForceKind::Brittle);
        assert!((driving_force(&b, 0.5, 0.0) - 0.25).abs() < 1e-15);
        let ep = pff(1.0, 2.0, DrivingForceKind::Elastoplastic);
        assert!((driving_force(&ep, 0.5, 1.5) - 1.0).abs() < 1e-15);
        let mut th = pff(1.0, 1.0, DrivingForceKind::ElastoplasticThreshold);
        assert_eq!(driving_force(&th, 0.5, 0.3), 0.0);
        th.zeta_pc = 2.0;
        assert!((driving_force(&th, 1.0, 0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn history_running_max() {
        let mut h = vec![[0.0; N_GAUSS]];
        for d in [0.2, 0.5, 0.3] {
            update_history(&mut h, &[[d; N_GAUSS]]);
        }
        assert_eq!(h[0][0], 0.5);
        update_history(&mut h, &[[0.5; N_GAUSS]]);
        assert_eq!(h[0][0], 0.5);
    }

    #[test]
    fn degradation_values() {
        let m = pff(1.0, 1.0, DrivingForceKind::Brittle);
        assert_eq!(degradation(&m, 0.0), 1.0);
        assert_eq!(degradation(&m, 0.5), 0.25);
        assert_eq!(degradation(&m, 1.0), 1e-8);
        // clamping
        assert_eq!(degradation(&m, -0.3), 1.0);
        assert_eq!(degradation(&m, 1.7), 1e-8);
    }

    #[test]
    fn phi_zero_for_zero_history() {
        let mesh = generate_grid(4, 4, 1.0, 1.0).unwrap();
        let m = pff(0.1, 1.0, DrivingForceKind::Brittle);
        let h = vec![[0.0; N_GAUSS]; mesh.n_elements()];
        let phi = solve_phi(&mesh, &m, &h, &[], &vec![0.0; mesh.n_nodes()]).unwrap();
        assert!(norm2(&phi) < 1e-12);
    }

    #[test]
    fn uniform_history_fixed_point() {
        let mesh = generate_grid(5, 3, 1.0, 0.7).unwrap();
        let m = pff(0.2, 1.0, DrivingForceKind::Brittle);
        for h_val in [0.5, 3.0, 1e4] {
            let h = vec![[h_val; N_GAUSS]; mesh.n_elements()];
            let phi = solve_phi(&mesh, &m, &h, &[], &vec![0.0; mesh.n_nodes()]).unwrap();
            let expect = h_val / (1.0 + h_val);
            for &p in &phi {
                assert!((p - expect).abs() < 1e-10, "h = {h_val}: {p} vs {expect}");
                assert!(p < 1.0);
            }
        }
    }

    #[test]
    fn one_dimensional_exponential_profile() {
        // 80x1 bar, ell = 4 element widths, phi pinned to 1 on the center
        // node column; solution decays as exp(-|x - x0| / ell)
        let (nx, lx) = (80, 40.0);
        let mesh = generate_grid(nx, 1, lx, lx / nx as f64).unwrap();
        let h_elem = lx / nx as f64;
        let m = pff(4.0 * h_elem, 1.0, DrivingForceKind::Brittle);
        let x0 = lx / 2.0;
        let pins: Vec<usize> = mesh
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, p)| (p[0] - x0).abs() < 1e-9)
            .map(|(n, _)| n)
            .collect();
        assert_eq!(pins.len(), 2);
        let h = vec![[0.0; N_GAUSS]; mesh.n_elements()];
        let phi = solve_phi(&mesh, &m, &h, &pins, &vec![0.0; mesh.n_nodes()]).unwrap();
        let mut err2 = 0.0;
        let mut ref2 = 0.0;
        for (n, p) in mesh.nodes.iter().enumerate() {
            let exact = (-(p[0] - x0).abs() / m.ell).exp();
            err2 += (phi[n] - exact).powi(2);
            ref2 += exact * exact;
        }
        let rel = (err2 / ref2).sqrt();
        assert!(rel < 0.02, "L2 error {rel}");

        // refining halves the error direction
        let nx2 = 160;
        let mesh2 = generate_grid(nx2, 1, lx, lx / nx2 as f64).unwrap();
        let pins2: Vec<usize> = mesh2
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, p)| (p[0] - x0).abs() < 1e-9)
            .map(|(n, _)| n)
            .collect();
        let h2 = vec![[0.0; N_GAUSS]; mesh2.n_elements()];
        let phi2 = solve_phi(&mesh2, &m, &h2, &pins2, &vec![0.0; mesh2.n_nodes()]).unwrap();
        let mut err2b = 0.0;
        let mut ref2b = 0.0;
        for (n, p) in mesh2.nodes.iter().enumerate() {
            let exact = (-(p[0] - x0).abs() / m.ell).exp();
            err2b += (phi2[n] - exact).powi(2);
            ref2b += exact * exact;
        }
        assert!((err2b / ref2b).sqrt() < rel);
    }

    fn tension_bcs(u_final: f64, n_steps: usize) -> Vec<DirichletBc> {
        vec![
            DirichletBc {
                node_set: "left".into(),
                dof_component: 0,
                schedule: Schedule::constant(0.0),
            },
            DirichletBc {
                node_set: "bottom".into(),
                dof_component: 1,
                schedule: Schedule::constant(0.0),
            },
            DirichletBc {
                node_set: "right".into(),
                dof_component: 0,
                schedule: Schedule::ramp(u_final, n_steps),
            },
        ]
    }

    #[test]
    fn infinite_wc_decouples_to_pure_mechanics() {
        let mesh = generate_grid(2, 2, 1.0, 1.0).unwrap();
        let model = ps_model(200e3, 0.3);
        let law = HardeningLaw::PowerLaw {
            sigma_y0: 200.0,
            k_h: 300.0,
            n_h: 0.5,
            p_reg: 1e-12,
        };
        let bcs = tension_bcs(4e-3, 3);
        let m = pff(0.1, 1e30, DrivingForceKind::Elastoplastic);
        let mut solver = MechSolver::new(
            &mesh,
            model,
            Some(law.clone()),
            &bcs,
            &[],
            NewtonSettings::default(),
        )
        .unwrap();
        let mut state = PffState::new(&mesh);
        let mut staggered = Vec::new();
        for _ in 0..3 {
            staggered.push(staggered_step(&mut solver, &m, &mut state, &[]).unwrap());
        }
        let pure = newton_solve(
            &mesh,
            &model,
            Some(&law),
            &bcs,
            &[],
            3,
            &NewtonSettings::default(),
            None,
        )
        .unwrap();
        for (a, b) in staggered.iter().zip(&pure) {
            for (ua, ub) in a.displacement.iter().zip(&b.displacement) {
                assert!((ua - ub).abs() < 1e-12);
            }
            for (sa, sb) in a.states.iter().zip(&b.states) {
                for (ga, gb) in sa.iter().zip(sb.iter()) {
                    for k in 0..4 {
                        assert!((ga.stress[k] - gb.stress[k]).abs() < 1e-12 * 200e3);
                    }
                }
            }
        }
        assert!(norm2(&state.phi) < 1e-10);
    }

    #[test]
    fn brittle_ramp_monotone_phi_and_history() {
        let mesh = generate_grid(2, 2, 1.0, 1.0).unwrap();
        let model = ps_model(200e3, 0.3);
        // elastic-only mechanics (brittle bypasses the return map)
        let bcs = tension_bcs(2e-2, 5);
        let wc = 0.5 * 200e3 * 1e-4; // reached mid-ramp
        let m = pff(0.25, wc, DrivingForceKind::Brittle);
        let mut solver =
            MechSolver::new(&mesh, model, None, &bcs, &[], NewtonSettings::default()).unwrap();
        let mut state = PffState::new(&mesh);
        let mut phi_max_prev = 0.0;
        let mut h_prev = vec![[0.0; N_GAUSS]; mesh.n_elements()];
        let mut phi_frozen = state.phi.clone();
        for _ in 0..5 {
            phi_frozen = state.phi.clone();
            staggered_step(&mut solver, &m, &mut state, &[]).unwrap();
            let phi_max = state.phi.iter().cloned().fold(0.0, f64::max);
            assert!(phi_max >= phi_max_prev - 1e-12);
            for (h, hp) in state.history.iter().zip(&h_prev) {
                for gp in 0..N_GAUSS {
                    assert!(h[gp] >= hp[gp]);
                }
            }
            // solved phi within monitored bounds
            for &p in &state.phi {
                assert!((-1e-6..=1.0 + 1e-6).contains(&p), "phi = {p}");
            }
            phi_max_prev = phi_max;
            h_prev = state.history.clone();
        }
        assert!(phi_max_prev > 0.05, "damage actually developed");
        // degraded stress is exactly g_d * undegraded, with g_d frozen from
        // the phi field the mechanics stage saw
        let g_d = gauss_degradation(&mesh, &m, &phi_frozen);
        for (e, states) in solver.states.iter().enumerate() {
            for (gp, s) in states.iter().enumerate() {
                for k in 0..4 {
                    assert!(
                        (s.stress[k] - g_d[e][gp] * s.stress_undegraded[k]).abs()
                            <= 1e-12 * s.stress_undegraded[k].abs().max(1.0)
                    );
                }
            }
        }
    }

    #[test]
    fn unloading_keeps_damage() {
        let mesh = generate_grid(2, 2, 1.0, 1.0).unwrap();
        let model = ps_model(200e3, 0.3);
        // ramp up over 4 steps then back down to zero over 4 more
        let schedule = Schedule(vec![(0.0, 0.0), (4.0, 1.6e-2), (8.0, 0.0)]);
        let bcs = vec![
            DirichletBc {
                node_set: "left".into(),
                dof_component: 0,
                schedule: Schedule::constant(0.0),
            },
            DirichletBc {
                node_set: "bottom".into(),
                dof_component: 1,
                schedule: Schedule::constant(0.0),
            },
            DirichletBc {
                node_set: "right".into(),
                dof_component: 0,
                schedule,
            },
        ];
        let wc = 0.5 * 200e3 * 1e-4;
        let m = pff(0.25, wc, DrivingForceKind::Brittle);
        let mut solver =
            MechSolver::new(&mesh, model, None, &bcs, &[], NewtonSettings::default()).unwrap();
        let mut state = PffState::new(&mesh);
        for _ in 0..4 {
            staggered_step(&mut solver, &m, &mut state, &[]).unwrap();
        }
        let phi_peak = state.phi.clone();
        let h_peak = state.history.clone();
        for _ in 0..4 {
            staggered_step(&mut solver, &m, &mut state, &[]).unwrap();
        }
        for (h, hp) in state.history.iter().zip(&h_peak) {
            for gp in 0..N_GAUSS {
                assert!(h[gp] >= hp[gp]);
            }
        }
        for (p, pp) in state.phi.iter().zip(&phi_peak) {
            assert!(p >= &(pp - 1e-9), "phi decreased on unloading: {p} < {pp}");
        }
    }

    #[test]
    fn crack_surface_of_uniform_phi() {
        // Gamma_ell of a uniform phi on area A is A phi^2 / (2 ell)
        let mesh = generate_grid(3, 3, 2.0, 1.0).unwrap();
        let m = pff(0.4, 1.0, DrivingForceKind::Brittle);
        let g = crack_surface(&mesh, &m, &vec![0.6; mesh.n_nodes()]).unwrap();
        assert!((g - 2.0 * 0.36 / 0.8).abs() < 1e-12);
    }
}
