//! Small-strain isotropic elasticity (plane strain/stress) and J2
//! isotropic-hardening plasticity: radial return mapping, continuum
//! elastoplastic tangent and the incremental Newton-Raphson equilibrium
//! solve. Plasticity is plane strain only; plane stress is available for
//! elastic runs.

use serde::{Deserialize, Serialize};

use crate::element::{geometry_at_tagged, ShapeTable, GAUSS_P, N_GAUSS};
use crate::error::{FemError, Result};
use crate::mesh::{DirichletBc, Mesh, NeumannBc, EDGE_NODES};
use crate::sparse::{norm2, SolveReport, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneMode {
    PlaneStrain,
    PlaneStress,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ElasticModel {
    pub e: f64,
    pub nu: f64,
    pub plane_mode: PlaneMode,
}

impl ElasticModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.e > 0.0) {
            return Err(FemError::Material("Young's modulus must be positive".into()));
        }
        if !(self.nu > -1.0 && self.nu < 0.5) {
            return Err(FemError::Material(format!(
                "Poisson ratio {} outside (-1, 0.5)",
                self.nu
            )));
        }
        Ok(())
    }

    /// First Lamé constant.
    pub fn lambda(&self) -> f64 {
        self.e * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))
    }

    /// Shear modulus.
    pub fn mu(&self) -> f64 {
        self.e / (2.0 * (1.0 + self.nu))
    }
}

/// Plane-strain or plane-stress elastic matrix in Voigt order
/// (xx, yy, xy) with engineering shear.
pub fn elastic_matrix(model: &ElasticModel) -> Result<[[f64; 3]; 3]> {
    model.validate()?;
    let (e, nu) = (model.e, model.nu);
    Ok(match model.plane_mode {
        PlaneMode::PlaneStrain => {
            let f = e / ((1.0 + nu) * (1.0 - 2.0 * nu));
            [
                [f * (1.0 - nu), f * nu, 0.0],
                [f * nu, f * (1.0 - nu), 0.0],
                [0.0, 0.0, f * (1.0 - 2.0 * nu) / 2.0],
            ]
        }
        PlaneMode::PlaneStress => {
            let f = e / (1.0 - nu * nu);
            [
                [f, f * nu, 0.0],
                [f * nu, f, 0.0],
                [0.0, 0.0, f * (1.0 - nu) / 2.0],
            ]
        }
    })
}

/// The out-of-plane response from the in-plane stress: sigma_zz for plane
/// strain, epsilon_zz for plane stress.
pub fn out_of_plane(model: &ElasticModel, stress: &[f64; 3]) -> f64 {
    let s = stress[0] + stress[1];
    match model.plane_mode {
        PlaneMode::PlaneStrain => model.nu * s,
        PlaneMode::PlaneStress => -(model.nu / model.e) * s,
    }
}

/// Hydrostatic stress exported to the transport coupling.
pub fn hydrostatic_stress(model: &ElasticModel, stress: &[f64; 3]) -> f64 {
    let s = stress[0] + stress[1];
    match model.plane_mode {
        PlaneMode::PlaneStrain => (1.0 + model.nu) / 3.0 * s,
        PlaneMode::PlaneStress => s / 3.0,
    }
}

/// Von Mises stress from the 4-component storage (xx, yy, zz, xy).
pub fn von_mises(s: &[f64; 4]) -> f64 {
    let [xx, yy, zz, xy] = *s;
    (xx * xx + yy * yy + zz * zz - xx * yy - yy * zz - zz * xx + 3.0 * xy * xy)
        .max(0.0)
        .sqrt()
}

/// Deviatoric part of a 4-component stress; the mean is (1/3)tr.
pub fn deviatoric(s: &[f64; 4]) -> [f64; 4] {
    let mean = (s[0] + s[1] + s[2]) / 3.0;
    [s[0] - mean, s[1] - mean, s[2] - mean, s[3]]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HardeningLaw {
    PowerLaw {
        sigma_y0: f64,
        k_h: f64,
        n_h: f64,
        #[serde(default = "default_p_reg")]
        p_reg: f64,
    },
    Kme {
        sigma_y0: f64,
        alpha_t: f64,
        g_ref: f64,
        b_burgers: f64,
        m_taylor: f64,
        k1: f64,
        k2: f64,
        rho_0: f64,
    },
}

fn default_p_reg() -> f64 {
    1e-12
}

impl HardeningLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            HardeningLaw::PowerLaw {
                sigma_y0,
                k_h,
                n_h,
                p_reg,
            } => {
                if !(sigma_y0 > 0.0) {
                    return Err(FemError::Material("sigma_y0 must be positive".into()));
                }
                if k_h < 0.0 || n_h <= 0.0 || p_reg < 0.0 {
                    return Err(FemError::Material("invalid power-law parameters".into()));
                }
            }
            HardeningLaw::Kme {
                sigma_y0,
                k1,
                k2,
                rho_0,
                ..
            } => {
                if !(sigma_y0 > 0.0) {
                    return Err(FemError::Material("sigma_y0 must be positive".into()));
                }
                if !(k1 > 0.0 && k2 > 0.0) || rho_0 < 0.0 {
                    return Err(FemError::Material("invalid KME parameters".into()));
                }
            }
        }
        Ok(())
    }

    pub fn sigma_y0(&self) -> f64 {
        match *self {
            HardeningLaw::PowerLaw { sigma_y0, .. } | HardeningLaw::Kme { sigma_y0, .. } => {
                sigma_y0
            }
        }
    }

    /// Hardening stress and its slope at accumulated plastic strain `p`.
    pub fn hardening(&self, p: f64) -> (f64, f64) {
        match *self {
            HardeningLaw::PowerLaw {
                k_h, n_h, p_reg, ..
            } => {
                let h = k_h * ((p + p_reg).powf(n_h) - p_reg.powf(n_h));
                let dh = n_h * k_h * (p + p_reg).powf(n_h - 1.0);
                (h, dh)
            }
            HardeningLaw::Kme {
                alpha_t,
                g_ref,
                b_burgers,
                m_taylor,
                k1,
                k2,
                rho_0,
                ..
            } => {
                // Taylor hardening with drho/dp = k1 sqrt(rho) - k2 rho:
                // sqrt(rho)(p) = k1/k2 + (sqrt(rho_0) - k1/k2) exp(-k2 p / 2)
                let sat = k1 / k2;
                let dev = rho_0.sqrt() - sat;
                let u = sat + dev * (-k2 * p / 2.0).exp();
                let scale = alpha_t * m_taylor * g_ref * b_burgers;
                let h = scale * (u - rho_0.sqrt());
                let dh = scale * (-k2 / 2.0) * dev * (-k2 * p / 2.0).exp();
                (h, dh)
            }
        }
    }

    /// Normalized dislocation density rho/rho_sat exported to transport; 0 for
    /// laws that do not track one.
    pub fn rho_bar(&self, p: f64) -> f64 {
        match *self {
            HardeningLaw::PowerLaw { .. } => 0.0,
            HardeningLaw::Kme {
                k1, k2, rho_0, ..
            } => {
                let sat = k1 / k2;
                let u = sat + (rho_0.sqrt() - sat) * (-k2 * p / 2.0).exp();
                (u / sat).powi(2)
            }
        }
    }
}

/// State of one Gauss point. Strain/stress carry the out-of-plane component
/// as index 2 of the 4-vector (xx, yy, zz, xy); strain shears are tensor
/// components, not engineering.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MaterialPointState {
    pub strain: [f64; 4],
    pub plastic_strain: [f64; 4],
    pub p: f64,
    pub stress: [f64; 4],
    /// Undegraded stress, kept for the plastic-work and energy couplings.
    pub stress_undegraded: [f64; 4],
    pub plastic_work: f64,
    /// Plastic multiplier of the last return map; zero on the elastic branch.
    pub last_dp: f64,
}

impl MaterialPointState {
    /// In-plane Voigt stress (xx, yy, xy) for assembly.
    pub fn stress_voigt(&self) -> [f64; 3] {
        [self.stress[0], self.stress[1], self.stress[3]]
    }
}

/// Purely elastic constitutive update, valid in both plane modes; used by
/// elasticity-only and brittle-fracture runs.
pub fn elastic_update(
    model: &ElasticModel,
    state_old: &MaterialPointState,
    strain_new: [f64; 3],
    g_d: f64,
) -> Result<MaterialPointState> {
    let c = elastic_matrix(model)?;
    let mut sv = [0.0_f64; 3];
    for r in 0..3 {
        for k in 0..3 {
            sv[r] += c[r][k] * strain_new[k];
        }
    }
    let mut state = state_old.clone();
    let zz = out_of_plane(model, &sv);
    state.strain = [
        strain_new[0],
        strain_new[1],
        if model.plane_mode == PlaneMode::PlaneStress {
            zz
        } else {
            0.0
        },
        strain_new[2] / 2.0,
    ];
    let szz = if model.plane_mode == PlaneMode::PlaneStrain {
        zz
    } else {
        0.0
    };
    state.stress_undegraded = [sv[0], sv[1], szz, sv[2]];
    state.stress = state.stress_undegraded.map(|s| g_d * s);
    state.last_dp = 0.0;
    Ok(state)
}

/// Radial return mapping for plane-strain J2 plasticity with isotropic
/// hardening. `strain_new` is the in-plane Voigt strain with engineering
/// shear; `g_d` is the stress degradation (1 = undamaged). Returns the new
/// state and the plastic increment.
pub fn return_map(
    model: &ElasticModel,
    law: &HardeningLaw,
    state_old: &MaterialPointState,
    strain_new: [f64; 3],
    g_d: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(MaterialPointState, f64)> {
    if model.plane_mode != PlaneMode::PlaneStrain {
        return Err(FemError::Material(
            "plasticity is implemented for plane strain only".into(),
        ));
    }
    let g = model.mu();
    let lambda = model.lambda();
    let eps = [strain_new[0], strain_new[1], 0.0, strain_new[2] / 2.0];
    let stress_of = |e_el: &[f64; 4]| -> [f64; 4] {
        let tr = e_el[0] + e_el[1] + e_el[2];
        [
            2.0 * g * e_el[0] + lambda * tr,
            2.0 * g * e_el[1] + lambda * tr,
            2.0 * g * e_el[2] + lambda * tr,
            2.0 * g * e_el[3],
        ]
    };

    let mut e_el = [0.0_f64; 4];
    for k in 0..4 {
        e_el[k] = eps[k] - state_old.plastic_strain[k];
    }
    let sig_trial = stress_of(&e_el);
    let eq_trial = von_mises(&sig_trial);
    let (h_old, _) = law.hardening(state_old.p);
    let f_trial = eq_trial - law.sigma_y0() - h_old;

    let mut state = state_old.clone();
    state.strain = eps;
    if f_trial <= tol {
        state.stress_undegraded = sig_trial;
        state.stress = sig_trial.map(|s| g_d * s);
        state.last_dp = 0.0;
        return Ok((state, 0.0));
    }

    // Newton on the undegraded consistency condition
    // f(dp) = eq_trial - 3 G dp - H(p_old + dp) - sigma_y
    let mut dp = 0.0_f64;
    let mut f = f_trial;
    let mut converged = false;
    for _ in 0..max_iter {
        let (_, dh) = law.hardening(state_old.p + dp);
        dp += f / (3.0 * g + dh);
        if dp < 0.0 {
            dp = 0.0;
        }
        let (h, _) = law.hardening(state_old.p + dp);
        f = eq_trial - 3.0 * g * dp - h - law.sigma_y0();
        if f.abs() <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(FemError::Solver(format!(
            "return map did not converge (|f| = {:.3e})",
            f.abs()
        )));
    }

    let dev_trial = deviatoric(&sig_trial);
    let n_dir = dev_trial.map(|d| 1.5 * d / eq_trial);
    for k in 0..4 {
        state.plastic_strain[k] = state_old.plastic_strain[k] + dp * n_dir[k];
        e_el[k] = eps[k] - state.plastic_strain[k];
    }
    let sig_tilde = stress_of(&e_el);
    state.stress_undegraded = sig_tilde;
    state.stress = sig_tilde.map(|s| g_d * s);
    state.p = state_old.p + dp;
    state.last_dp = dp;
    // w_p += sigma_tilde : d eps_p (xy counted twice)
    state.plastic_work += dp
        * (sig_tilde[0] * n_dir[0]
            + sig_tilde[1] * n_dir[1]
            + sig_tilde[2] * n_dir[2]
            + 2.0 * sig_tilde[3] * n_dir[3]);
    Ok((state, dp))
}

/// Continuum elastoplastic tangent (degraded by `g_d`), in-plane Voigt. On
/// the elastic branch this is `g_d * C_e`.
pub fn continuum_tangent(
    model: &ElasticModel,
    law: &HardeningLaw,
    state: &MaterialPointState,
    g_d: f64,
) -> Result<[[f64; 3]; 3]> {
    let mut c = elastic_matrix(model)?;
    if state.last_dp > 0.0 {
        let g = model.mu();
        let (_, dh) = law.hardening(state.p);
        // C_ep = C_e - (C_e:N)(N:C_e)/((2/3)H' + N:C_e:N); for deviatoric N
        // and isotropic C_e this is 4G^2/((2/3)H' + 3G) times n n^T with
        // n = (N_xx, N_yy, N_xy) in the engineering-shear Voigt pairing.
        let eq = von_mises(&state.stress_undegraded);
        if eq > 0.0 {
            let dev = deviatoric(&state.stress_undegraded);
            let n = [1.5 * dev[0] / eq, 1.5 * dev[1] / eq, 1.5 * dev[3] / eq];
            let coef = 4.0 * g * g / (2.0 / 3.0 * dh + 3.0 * g);
            for i in 0..3 {
                for j in 0..3 {
                    c[i][j] -= coef * n[i] * n[j];
                }
            }
        }
    }
    for row in c.iter_mut() {
        for v in row.iter_mut() {
            *v *= g_d;
        }
    }
    Ok(c)
}

/// Tangent stiffness `K = int B^T C B dOmega` from per-Gauss-point tangents.
pub fn assemble_stiffness(
    mesh: &Mesh,
    tangents: &[[[[f64; 3]; 3]; N_GAUSS]],
) -> Result<SparseMatrix> {
    if tangents.len() != mesh.n_elements() {
        return Err(FemError::Config(format!(
            "stiffness assembly needs {} element entries, got {}",
            mesh.n_elements(),
            tangents.len()
        )));
    }
    let table = ShapeTable::quad4();
    let mut matrix = SparseMatrix::build_pattern(mesh, 2);
    let mut k_e = vec![vec![0.0_f64; 8]; 8];
    let mut dofs = [0usize; 8];
    for e in 0..mesh.n_elements() {
        let coords = mesh.element_coords(e);
        for row in k_e.iter_mut() {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
        for gp in 0..N_GAUSS {
            let geom = geometry_at_tagged(table.points[gp], &coords, e)?;
            let c = &tangents[e][gp];
            let b = &geom.b_voigt;
            let w = table.weights[gp] * geom.det_j;
            // CB then B^T (CB)
            let mut cb = [[0.0_f64; 8]; 3];
            for r in 0..3 {
                for k in 0..8 {
                    cb[r][k] = c[r][0] * b[0][k] + c[r][1] * b[1][k] + c[r][2] * b[2][k];
                }
            }
            for i in 0..8 {
                for j in 0..8 {
                    k_e[i][j] += w * (b[0][i] * cb[0][j] + b[1][i] * cb[1][j] + b[2][i] * cb[2][j]);
                }
            }
        }
        for (a, &node) in mesh.elements[e].iter().enumerate() {
            dofs[2 * a] = 2 * node;
            dofs[2 * a + 1] = 2 * node + 1;
        }
        matrix.scatter_add(&dofs, &k_e)?;
    }
    Ok(matrix)
}

/// Internal force `f = int B^T sigma dOmega` from per-Gauss in-plane stresses.
pub fn assemble_internal_force(
    mesh: &Mesh,
    stresses: &[[[f64; 3]; N_GAUSS]],
) -> Result<Vec<f64>> {
    if stresses.len() != mesh.n_elements() {
        return Err(FemError::Config(format!(
            "internal-force assembly needs {} element entries, got {}",
            mesh.n_elements(),
            stresses.len()
        )));
    }
    let table = ShapeTable::quad4();
    let mut f = vec![0.0; 2 * mesh.n_nodes()];
    for e in 0..mesh.n_elements() {
        let coords = mesh.element_coords(e);
        for gp in 0..N_GAUSS {
            let geom = geometry_at_tagged(table.points[gp], &coords, e)?;
            let s = &stresses[e][gp];
            let w = table.weights[gp] * geom.det_j;
            for i in 0..4 {
                let node = mesh.elements[e][i];
                f[2 * node] += w * (geom.b_voigt[0][2 * i] * s[0] + geom.b_voigt[2][2 * i] * s[2]);
                f[2 * node + 1] +=
                    w * (geom.b_voigt[1][2 * i + 1] * s[1] + geom.b_voigt[2][2 * i + 1] * s[2]);
            }
        }
    }
    Ok(f)
}

/// Consistent nodal forces of edge tractions `[tx, ty]` on facet sets.
pub fn assemble_traction(mesh: &Mesh, neumann: &[NeumannBc]) -> Result<Vec<f64>> {
    let mut load = vec![0.0; 2 * mesh.n_nodes()];
    for bc in neumann {
        if bc.flux.len() != 2 {
            return Err(FemError::Config(format!(
                "traction on {:?} needs two components, got {}",
                bc.facet_set,
                bc.flux.len()
            )));
        }
        for &[e, edge] in mesh.facet_set(&bc.facet_set)? {
            let [a, b] = EDGE_NODES[edge];
            let na = mesh.elements[e][a];
            let nb = mesh.elements[e][b];
            let (pa, pb) = (mesh.nodes[na], mesh.nodes[nb]);
            let half_len = 0.5 * ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
            for &xi in &[-GAUSS_P, GAUSS_P] {
                let sh = [0.5 * (1.0 - xi), 0.5 * (1.0 + xi)];
                for (k, &node) in [na, nb].iter().enumerate() {
                    load[2 * node] += half_len * sh[k] * bc.flux[0];
                    load[2 * node + 1] += half_len * sh[k] * bc.flux[1];
                }
            }
        }
    }
    Ok(load)
}

#[derive(Debug, Clone)]
pub struct NewtonSettings {
    pub tol_r: f64,
    pub max_iter: usize,
    pub max_cuts: usize,
    pub yield_tol_rel: f64,
    pub return_map_max_iter: usize,
    pub linear_tol: f64,
    pub linear_max_iter: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            tol_r: 1e-8,
            max_iter: 25,
            max_cuts: 4,
            yield_tol_rel: 1e-8,
            return_map_max_iter: 50,
            linear_tol: 1e-10,
            linear_max_iter: 20_000,
        }
    }
}

/// One load increment's converged outcome.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub displacement: Vec<f64>,
    pub states: Vec<[MaterialPointState; N_GAUSS]>,
    /// `f_int - f_ext`; meaningful at constrained dofs, where it is the
    /// reaction force.
    pub reactions: Vec<f64>,
    pub newton_iterations: usize,
    pub bisections: usize,
}

/// Persistent incremental equilibrium solver; the fracture coupling drives it
/// one increment at a time with a fresh degradation field.
pub struct MechSolver<'a> {
    pub mesh: &'a Mesh,
    pub model: ElasticModel,
    pub law: Option<HardeningLaw>,
    dirichlet: Vec<DirichletBc>,
    traction_unit: Vec<f64>,
    settings: NewtonSettings,
    pub u: Vec<f64>,
    pub states: Vec<[MaterialPointState; N_GAUSS]>,
    step: usize,
}

impl<'a> MechSolver<'a> {
    pub fn new(
        mesh: &'a Mesh,
        model: ElasticModel,
        law: Option<HardeningLaw>,
        dirichlet: &[DirichletBc],
        neumann: &[NeumannBc],
        settings: NewtonSettings,
    ) -> Result<Self> {
        model.validate()?;
        if let Some(l) = &law {
            l.validate()?;
        }
        Ok(MechSolver {
            mesh,
            model,
            law,
            dirichlet: dirichlet.to_vec(),
            traction_unit: assemble_traction(mesh, neumann)?,
            settings,
            u: vec![0.0; 2 * mesh.n_nodes()],
            states: vec![[(); N_GAUSS].map(|_| MaterialPointState::default()); mesh.n_elements()],
            step: 0,
        })
    }

    /// Advances one load increment, bisecting on failure. States commit only
    /// on convergence.
    pub fn advance(&mut self, g_d: Option<&[[f64; N_GAUSS]]>) -> Result<StepResult> {
        self.step += 1;
        let step = self.step;
        let yield_tol = self
            .law
            .as_ref()
            .map_or(0.0, |l| self.settings.yield_tol_rel * l.sigma_y0());
        let mut s_now = (step - 1) as f64;
        let s_target = step as f64;
        let mut cuts = 0usize;
        let mut frac = 1.0_f64;
        let mut step_iters = 0usize;
        let mut committed = None;
        while s_now < s_target - 1e-12 {
            let s_try = (s_now + frac).min(s_target);
            match newton_substep(
                self.mesh,
                &self.model,
                self.law.as_ref(),
                &self.dirichlet,
                &self.traction_unit,
                s_try,
                &self.u,
                &self.states,
                &self.settings,
                yield_tol,
                g_d,
            ) {
                Ok((u_new, states_new, reactions, iters)) => {
                    self.u = u_new;
                    self.states = states_new;
                    step_iters += iters;
                    s_now = s_try;
                    committed = Some(reactions);
                }
                Err(FemError::Solver(detail)) => {
                    cuts += 1;
                    if cuts > self.settings.max_cuts {
                        return Err(FemError::Solver(format!(
                            "step {step} failed after {} bisections: {detail}",
                            cuts - 1
                        )));
                    }
                    frac *= 0.5;
                }
                Err(other) => return Err(other),
            }
        }
        Ok(StepResult {
            displacement: self.u.clone(),
            states: self.states.clone(),
            reactions: committed.expect("at least one substep"),
            newton_iterations: step_iters,
            bisections: cuts,
        })
    }
}

/// Incremental Newton-Raphson equilibrium solve over a Dirichlet/traction
/// schedule. `law = None` runs purely elastic; `g_d` optionally supplies a
/// per-Gauss-point stress degradation (from the fracture coupling).
#[allow(clippy::too_many_arguments)]
pub fn newton_solve(
    mesh: &Mesh,
    model: &ElasticModel,
    law: Option<&HardeningLaw>,
    dirichlet: &[DirichletBc],
    neumann: &[NeumannBc],
    n_steps: usize,
    settings: &NewtonSettings,
    g_d: Option<&[[f64; N_GAUSS]]>,
) -> Result<Vec<StepResult>> {
    let mut solver = MechSolver::new(
        mesh,
        *model,
        law.cloned(),
        dirichlet,
        neumann,
        settings.clone(),
    )?;
    (0..n_steps).map(|_| solver.advance(g_d)).collect()
}

/// A single equilibrium solve at schedule position `s`. Returns the updated
/// displacement, committed states, the residual vector and the iteration
/// count, or a solver error for the bisection logic to catch.
#[allow(clippy::too_many_arguments)]
fn newton_substep(
    mesh: &Mesh,
    model: &ElasticModel,
    law: Option<&HardeningLaw>,
    dirichlet: &[DirichletBc],
    traction_unit: &[f64],
    s: f64,
    u_start: &[f64],
    states_old: &[[MaterialPointState; N_GAUSS]],
    settings: &NewtonSettings,
    yield_tol: f64,
    g_d: Option<&[[f64; N_GAUSS]]>,
) -> Result<(Vec<f64>, Vec<[MaterialPointState; N_GAUSS]>, Vec<f64>, usize)> {
    let table = ShapeTable::quad4();
    let n_dof = traction_unit.len();
    let mut u = u_start.to_vec();
    let mut states = states_old.to_vec();

    // targets at the (possibly fractional) schedule position
    let mut targets: Vec<(usize, f64)> = Vec::new();
    for bc in dirichlet {
        let value = bc.schedule.value_at_f(s);
        for &node in mesh.node_set(&bc.node_set)? {
            targets.push((2 * node + bc.dof_component, value));
        }
    }
    let f_ext: Vec<f64> = traction_unit.iter().map(|t| t * s).collect();

    let mut is_constrained = vec![false; n_dof];
    for &(dof, _) in &targets {
        is_constrained[dof] = true;
    }

    for iter in 1..=settings.max_iter {
        // constitutive update at the current displacement iterate
        let mut tangents = vec![[[[0.0_f64; 3]; 3]; N_GAUSS]; mesh.n_elements()];
        let mut stresses = vec![[[0.0_f64; 3]; N_GAUSS]; mesh.n_elements()];
        for e in 0..mesh.n_elements() {
            let coords = mesh.element_coords(e);
            let conn = mesh.elements[e];
            let mut ue = [0.0_f64; 8];
            for (a, &node) in conn.iter().enumerate() {
                ue[2 * a] = u[2 * node];
                ue[2 * a + 1] = u[2 * node + 1];
            }
            for gp in 0..N_GAUSS {
                let geom = geometry_at_tagged(table.points[gp], &coords, e)?;
                let mut strain = [0.0_f64; 3];
                for r in 0..3 {
                    for k in 0..8 {
                        strain[r] += geom.b_voigt[r][k] * ue[k];
                    }
                }
                let gd = g_d.map_or(1.0, |d| d[e][gp]);
                let state_new = match law {
                    Some(l) => {
                        let (s, _) = return_map(
                            model,
                            l,
                            &states_old[e][gp],
                            strain,
                            gd,
                            yield_tol,
                            settings.return_map_max_iter,
                        )?;
                        tangents[e][gp] = continuum_tangent(model, l, &s, gd)?;
                        s
                    }
                    None => {
                        let s = elastic_update(model, &states_old[e][gp], strain, gd)?;
                        let mut c = elastic_matrix(model)?;
                        for row in c.iter_mut() {
                            for v in row.iter_mut() {
                                *v *= gd;
                            }
                        }
                        tangents[e][gp] = c;
                        s
                    }
                };
                stresses[e][gp] = state_new.stress_voigt();
                states[e][gp] = state_new;
            }
        }
        let f_int = assemble_internal_force(mesh, &stresses)?;
        let mut residual: Vec<f64> = f_ext.iter().zip(&f_int).map(|(e, i)| e - i).collect();
        let reactions: Vec<f64> = f_int.iter().zip(&f_ext).map(|(i, e)| i - e).collect();
        let mut r_free = residual.clone();
        for dof in 0..n_dof {
            if is_constrained[dof] {
                r_free[dof] = 0.0;
            }
        }
        let reference = norm2(&f_ext).max(norm2(&f_int)).max(1e-12);
        // first iteration must still run when displacement targets moved
        let imposed_moved = targets
            .iter()
            .any(|&(dof, v)| (u[dof] - v).abs() > 1e-14 * (1.0 + v.abs()));
        if norm2(&r_free) <= settings.tol_r * reference && !(iter == 1 && imposed_moved) {
            return Ok((u, states, reactions, iter - 1));
        }

        let mut k = assemble_stiffness(mesh, &tangents)?;
        // imposed displacement increments on the first iteration, zero after
        let constraints: Vec<(usize, f64)> = targets
            .iter()
            .map(|&(dof, v)| (dof, if iter == 1 { v - u[dof] } else { 0.0 }))
            .collect();
        k.apply_dirichlet(&mut residual, &constraints)?;
        let (du, report): (Vec<f64>, SolveReport) = k.cg_solve(
            &residual,
            &vec![0.0; n_dof],
            settings.linear_tol,
            settings.linear_max_iter,
        )?;
        if !report.converged {
            return Err(FemError::Solver(format!(
                "linear solve stalled (residual {:.3e})",
                report.final_residual_norm
            )));
        }
        for (ui, di) in u.iter_mut().zip(&du) {
            *ui += di;
        }
    }
    Err(FemError::Solver(format!(
        "no equilibrium within {} Newton iterations",
        settings.max_iter
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_grid, Schedule};

    fn ps_model(e: f64, nu: f64) -> ElasticModel {
        ElasticModel {
            e,
            nu,
            plane_mode: PlaneMode::PlaneStrain,
        }
    }

    fn linear_law(sy: f64, h: f64) -> HardeningLaw {
        // n_h = 1 makes the power law exactly linear: H = h p
        HardeningLaw::PowerLaw {
            sigma_y0: sy,
            k_h: h,
            n_h: 1.0,
            p_reg: 0.0,
        }
    }

    #[test]
    fn elastic_matrix_values() {
        let c = elastic_matrix(&ps_model(1.0, 0.25)).unwrap();
        assert!((c[0][0] - 1.2).abs() < 1e-12);
        assert!((c[0][1] - 0.4).abs() < 1e-12);
        assert!((c[2][2] - 0.4).abs() < 1e-12);
        // nu = 0 decouples both modes
        for mode in [PlaneMode::PlaneStrain, PlaneMode::PlaneStress] {
            let c = elastic_matrix(&ElasticModel {
                e: 2.0,
                nu: 0.0,
                plane_mode: mode,
            })
            .unwrap();
            assert!((c[0][0] - 2.0).abs() < 1e-12);
            assert!(c[0][1].abs() < 1e-15);
            assert!((c[2][2] - 1.0).abs() < 1e-12);
        }
        let c = elastic_matrix(&ElasticModel {
            e: 1.0,
            nu: 0.3,
            plane_mode: PlaneMode::PlaneStress,
        })
        .unwrap();
        assert!((c[0][0] - 1.0 / 0.91).abs() < 1e-12);
    }

    #[test]
    fn lame_constants_consistent() {
        let m = ps_model(210e3, 0.3);
        let (lam, mu) = (m.lambda(), m.mu());
        // invert back to E, nu
        let e = mu * (3.0 * lam + 2.0 * mu) / (lam + mu);
        let nu = lam / (2.0 * (lam + mu));
        assert!((e - 210e3).abs() < 1e-7);
        assert!((nu - 0.3).abs() < 1e-12);
    }

    #[test]
    fn incompressible_plane_strain_rejected() {
        assert!(elastic_matrix(&ps_model(1.0, 0.5)).is_err());
        assert!(elastic_matrix(&ps_model(1.0, 0.4999)).is_ok());
    }

    #[test]
    fn out_of_plane_values() {
        let m = ps_model(1.0, 0.3);
        assert!((out_of_plane(&m, &[1.0, 1.0, 0.3]) - 0.6).abs() < 1e-14);
        assert_eq!(out_of_plane(&m, &[0.0, 0.0, 0.0]), 0.0);
        let m = ElasticModel {
            e: 1.0,
            nu: 0.3,
            plane_mode: PlaneMode::PlaneStress,
        };
        assert!((out_of_plane(&m, &[1.0, 0.0, 0.0]) + 0.3).abs() < 1e-14);
    }

    #[test]
    fn hydrostatic_stress_values() {
        let m = ps_model(1.0, 0.3);
        assert!((hydrostatic_stress(&m, &[1.0, 2.0, 0.0]) - 1.3).abs() < 1e-14);
        let m = ElasticModel {
            e: 1.0,
            nu: 0.3,
            plane_mode: PlaneMode::PlaneStress,
        };
        assert!((hydrostatic_stress(&m, &[1.0, 2.0, 0.0]) - 1.0).abs() < 1e-14);
        assert_eq!(hydrostatic_stress(&m, &[0.0, 0.0, 5.0]), 0.0);
    }

    #[test]
    fn von_mises_values() {
        assert!((von_mises(&[3.0, 0.0, 0.0, 0.0]) - 3.0).abs() < 1e-14);
        assert!((von_mises(&[0.0, 0.0, 0.0, 2.0]) - 2.0 * 3.0_f64.sqrt()).abs() < 1e-14);
        assert!(von_mises(&[5.0, 5.0, 5.0, 0.0]).abs() < 1e-14);
    }

    #[test]
    fn deviatoric_values() {
        let d = deviatoric(&[3.0, 0.0, 0.0, 0.0]);
        assert_eq!(d, [2.0, -1.0, -1.0, 0.0]);
        assert_eq!(deviatoric(&[2.0, 2.0, 2.0, 0.0]), [0.0; 4]);
        assert_eq!(deviatoric(&[0.0, 0.0, 0.0, 1.5]), [0.0, 0.0, 0.0, 1.5]);
        // trace-free for arbitrary input
        let d = deviatoric(&[1.3, -0.7, 2.9, 0.4]);
        assert!((d[0] + d[1] + d[2]).abs() < 1e-14);
    }

    #[test]
    fn hardening_laws() {
        let pl = HardeningLaw::PowerLaw {
            sigma_y0: 100.0,
            k_h: 100.0,
            n_h: 0.5,
            p_reg: 0.0,
        };
        let (h, _) = pl.hardening(0.0);
        assert_eq!(h, 0.0);
        let (h, dh) = pl.hardening(0.04);
        assert!((h - 20.0).abs() < 1e-12);
        assert!((dh - 0.5 * 100.0 * 0.04_f64.powf(-0.5)).abs() < 1e-9);

        let kme = HardeningLaw::Kme {
            sigma_y0: 100.0,
            alpha_t: 0.3,
            g_ref: 80e3,
            b_burgers: 2.5e-4,
            m_taylor: 3.0,
            k1: 1.0e2,
            k2: 10.0,
            rho_0: 1.0,
        };
        let (h0, _) = kme.hardening(0.0);
        assert!(h0.abs() < 1e-10);
        // saturation limit alpha M G b (k1/k2 - sqrt(rho_0))
        let (h_inf, dh_inf) = kme.hardening(1e3);
        let expect = 0.3 * 3.0 * 80e3 * 2.5e-4 * (10.0 - 1.0);
        assert!((h_inf - expect).abs() < 1e-8 * expect);
        assert!(dh_inf.abs() < 1e-6);
        // nondecreasing, finite slope
        let mut prev = -1.0;
        for i in 0..100 {
            let p = i as f64 * 0.01;
            let (h, dh) = kme.hardening(p);
            assert!(h >= prev);
            assert!(dh.is_finite() && dh >= 0.0);
            prev = h;
        }
        // rho_bar runs from rho_0/rho_sat to 1
        assert!((kme.rho_bar(0.0) - 1.0 / 100.0).abs() < 1e-12);
        assert!((kme.rho_bar(1e3) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn elastic_branch_of_return_map() {
        let model = ps_model(200e3, 0.3);
        let law = linear_law(200.0, 1000.0);
        let old = MaterialPointState::default();
        let strain = [1e-4, -0.3e-4, 0.2e-4];
        let (state, dp) = return_map(&model, &law, &old, strain, 1.0, 1e-8, 50).unwrap();
        assert_eq!(dp, 0.0);
        assert_eq!(state.p, 0.0);
        // stress equals C_e strain with sigma_zz = nu (sxx + syy)
        let c = elastic_matrix(&model).unwrap();
        for r in 0..3 {
            let expect: f64 = (0..3).map(|k| c[r][k] * strain[k]).sum();
            let got = state.stress_voigt()[r];
            assert!((got - expect).abs() < 1e-9, "row {r}");
        }
        let szz = out_of_plane(&model, &state.stress_voigt());
        assert!((state.stress[2] - szz).abs() < 1e-9);
    }

    #[test]
    fn linear_hardening_closed_form() {
        let model = ps_model(200e3, 0.3);
        let (sy, h) = (200.0, 2000.0);
        let law = linear_law(sy, h);
        let g = model.mu();
        let old = MaterialPointState::default();
        // strain well past yield
        let strain = [4e-3, -1e-3, 1e-3];
        let (state, dp) = return_map(&model, &law, &old, strain, 1.0, 1e-10, 50).unwrap();
        // independent trial stress
        let lam = model.lambda();
        let tr = strain[0] + strain[1];
        let sig_tr = [
            2.0 * g * strain[0] + lam * tr,
            2.0 * g * strain[1] + lam * tr,
            lam * tr,
            g * strain[2],
        ];
        let eq_tr = von_mises(&sig_tr);
        assert!(eq_tr > sy);
        let dp_expect = (eq_tr - sy) / (3.0 * g + h);
        assert!((dp - dp_expect).abs() < 1e-14 * dp_expect.max(1.0));
        // converged yield consistency
        let eq = von_mises(&state.stress);
        assert!((eq - (sy + h * state.p)).abs() < 1e-6);
        // plastic incompressibility
        let trp = state.plastic_strain[0] + state.plastic_strain[1] + state.plastic_strain[2];
        assert!(trp.abs() < 1e-10);
    }

    #[test]
    fn return_map_matches_bisection_oracle() {
        let model = ps_model(200e3, 0.3);
        let law = HardeningLaw::PowerLaw {
            sigma_y0: 250.0,
            k_h: 600.0,
            n_h: 0.35,
            p_reg: 1e-12,
        };
        let g = model.mu();
        let lam = model.lambda();
        let old = MaterialPointState::default();
        let strain = [6e-3, -2e-3, 3e-3];
        let (state, dp) = return_map(&model, &law, &old, strain, 1.0, 1e-10, 50).unwrap();
        let tr = strain[0] + strain[1];
        let sig_tr = [
            2.0 * g * strain[0] + lam * tr,
            2.0 * g * strain[1] + lam * tr,
            lam * tr,
            g * strain[2],
        ];
        let eq_tr = von_mises(&sig_tr);
        // bisection on f(dp) = eq_tr - 3 G dp - H(dp) - sy
        let f = |dp: f64| eq_tr - 3.0 * g * dp - law.hardening(dp).0 - law.sigma_y0();
        let (mut lo, mut hi) = (0.0, eq_tr / (3.0 * g));
        assert!(f(lo) > 0.0 && f(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let dp_oracle = 0.5 * (lo + hi);
        assert!((dp - dp_oracle).abs() < 1e-10, "{dp} vs {dp_oracle}");
        assert!(state.p > 0.0 && state.plastic_work > 0.0);
    }

    #[test]
    fn return_map_p_nondecreasing_and_f_bounded() {
        let model = ps_model(100e3, 0.25);
        let law = HardeningLaw::PowerLaw {
            sigma_y0: 150.0,
            k_h: 400.0,
            n_h: 0.6,
            p_reg: 1e-12,
        };
        let mut state = MaterialPointState::default();
        let mut p_prev = 0.0;
        for k in 1..=10 {
            let a = k as f64 * 1e-3;
            let strain = [a, -0.4 * a, 0.5 * a];
            let (s, _) = return_map(&model, &law, &state, strain, 1.0, 1e-9, 50).unwrap();
            assert!(s.p >= p_prev);
            let eq = von_mises(&s.stress);
            let (h, _) = law.hardening(s.p);
            assert!(eq <= law.sigma_y0() + h + 1e-6);
            p_prev = s.p;
            state = s;
        }
    }

    #[test]
    fn degraded_return_map_scales_stress() {
        let model = ps_model(200e3, 0.3);
        let law = linear_law(200.0, 1000.0);
        let old = MaterialPointState::default();
        let strain = [4e-3, -1e-3, 1e-3];
        let (full, dp1) = return_map(&model, &law, &old, strain, 1.0, 1e-10, 50).unwrap();
        let (half, dp2) = return_map(&model, &law, &old, strain, 0.5, 1e-10, 50).unwrap();
        // the effective-stress update leaves the plastic flow unchanged and
        // scales the stress by g_d
        assert!((dp1 - dp2).abs() < 1e-14);
        for k in 0..4 {
            assert!((half.stress[k] - 0.5 * full.stress[k]).abs() < 1e-9);
            assert!((half.stress_undegraded[k] - full.stress_undegraded[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn plane_stress_plasticity_rejected() {
        let model = ElasticModel {
            e: 1.0,
            nu: 0.3,
            plane_mode: PlaneMode::PlaneStress,
        };
        let law = linear_law(1.0, 0.0);
        let r = return_map(
            &model,
            &law,
            &MaterialPointState::default(),
            [0.1, 0.0, 0.0],
            1.0,
            1e-8,
            50,
        );
        assert!(r.is_err());
    }

    #[test]
    fn tangent_elastic_branch_and_rank_one_drop() {
        let model = ps_model(200e3, 0.3);
        let law = linear_law(200.0, 0.0); // perfect plasticity
        let state = MaterialPointState::default();
        let c = continuum_tangent(&model, &law, &state, 1.0).unwrap();
        let ce = elastic_matrix(&model).unwrap();
        assert_eq!(c, ce);
        // degraded elastic
        let c = continuum_tangent(&model, &law, &state, 0.25).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((c[i][j] - 0.25 * ce[i][j]).abs() < 1e-9);
            }
        }
        // plastic branch with H' = 0: C_ep = C_e - (4G^2/3G) n n^T
        let (state, dp) = return_map(
            &model,
            &law,
            &MaterialPointState::default(),
            [4e-3, -1e-3, 1e-3],
            1.0,
            1e-10,
            50,
        )
        .unwrap();
        assert!(dp > 0.0);
        let c = continuum_tangent(&model, &law, &state, 1.0).unwrap();
        let g = model.mu();
        let eq = von_mises(&state.stress_undegraded);
        let dev = deviatoric(&state.stress_undegraded);
        let n = [1.5 * dev[0] / eq, 1.5 * dev[1] / eq, 1.5 * dev[3] / eq];
        for i in 0..3 {
            for j in 0..3 {
                let expect = ce[i][j] - 4.0 * g * g / (3.0 * g) * n[i] * n[j];
                assert!((c[i][j] - expect).abs() < 1e-6 * g);
                assert!((c[i][j] - c[j][i]).abs() < 1e-9 * g);
            }
        }
    }

    #[test]
    fn finite_difference_tangent_check() {
        let model = ps_model(200e3, 0.3);
        let law = HardeningLaw::PowerLaw {
            sigma_y0: 200.0,
            k_h: 500.0,
            n_h: 0.4,
            p_reg: 1e-12,
        };
        // commit a plastic state, then probe with a small further increment so
        // the continuum tangent is close to the consistent one
        let strain_a = [5e-3, -1.5e-3, 2e-3];
        let (s0, dp0) =
            return_map(&model, &law, &MaterialPointState::default(), strain_a, 1.0, 1e-12, 50)
                .unwrap();
        assert!(dp0 > 0.0);
        let strain0 = [strain_a[0] + 2e-5, strain_a[1], strain_a[2]];
        let (state, dp) = return_map(&model, &law, &s0, strain0, 1.0, 1e-12, 50).unwrap();
        assert!(dp > 1e-6);
        let c = continuum_tangent(&model, &law, &state, 1.0).unwrap();
        let delta = 1e-7;
        for dir in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.6, -0.8, 0.3]] {
            let strain1 = [
                strain0[0] + delta * dir[0],
                strain0[1] + delta * dir[1],
                strain0[2] + delta * dir[2],
            ];
            let (s1, _) = return_map(&model, &law, &s0, strain1, 1.0, 1e-12, 50).unwrap();
            let fd = [
                (s1.stress_voigt()[0] - state.stress_voigt()[0]) / delta,
                (s1.stress_voigt()[1] - state.stress_voigt()[1]) / delta,
                (s1.stress_voigt()[2] - state.stress_voigt()[2]) / delta,
            ];
            let pred = [
                c[0][0] * dir[0] + c[0][1] * dir[1] + c[0][2] * dir[2],
                c[1][0] * dir[0] + c[1][1] * dir[1] + c[1][2] * dir[2],
                c[2][0] * dir[0] + c[2][1] * dir[1] + c[2][2] * dir[2],
            ];
            let scale = (pred[0].powi(2) + pred[1].powi(2) + pred[2].powi(2)).sqrt();
            for r in 0..3 {
                assert!(
                    (fd[r] - pred[r]).abs() < 0.02 * scale,
                    "dir {dir:?} row {r}: fd {} vs tangent {}",
                    fd[r],
                    pred[r]
                );
            }
        }
        // elastic branch is exact
        let strain_el = [1e-6, 0.0, 0.0];
        let (se, _) =
            return_map(&model, &law, &MaterialPointState::default(), strain_el, 1.0, 1e-12, 50)
                .unwrap();
        let ce = continuum_tangent(&model, &law, &se, 1.0).unwrap();
        let c_exp = elastic_matrix(&model).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((ce[i][j] - c_exp[i][j]).abs() < 1e-10 * model.e);
            }
        }
    }

    #[test]
    fn stiffness_annihilates_rigid_modes() {
        let mesh = generate_grid(1, 1, 1.0, 1.0).unwrap();
        let ce = elastic_matrix(&ps_model(200e3, 0.3)).unwrap();
        let k = assemble_stiffness(&mesh, &vec![[ce; N_GAUSS]]).unwrap();
        let mut out = vec![0.0; 8];
        // translation in x and in y
        for comp in 0..2 {
            let mut u = vec![0.0; 8];
            for n in 0..4 {
                u[2 * n + comp] = 1.0;
            }
            k.matvec(&u, &mut out);
            for v in &out {
                assert!(v.abs() < 1e-12 * 200e3);
            }
        }
        // in-plane rotation u = (-y, x)
        let mut u = vec![0.0; 8];
        for n in 0..4 {
            u[2 * n] = -mesh.nodes[n][1];
            u[2 * n + 1] = mesh.nodes[n][0];
        }
        k.matvec(&u, &mut out);
        for v in &out {
            assert!(v.abs() < 1e-9 * 200e3);
        }
    }

    #[test]
    fn internal_force_uniform_uniaxial() {
        // sigma_xx = s on a unit element: edge nodes carry +- s/2
        let mesh = generate_grid(1, 1, 1.0, 1.0).unwrap();
        let s = 7.0;
        let f = assemble_internal_force(&mesh, &vec![[[s, 0.0, 0.0]; N_GAUSS]]).unwrap();
        for n in 0..4 {
            let x = mesh.nodes[n][0];
            let expect = if x > 0.5 { s / 2.0 } else { -s / 2.0 };
            assert!((f[2 * n] - expect).abs() < 1e-12);
            assert!(f[2 * n + 1].abs() < 1e-12);
        }
        // zero stress, zero force
        let f = assemble_internal_force(&mesh, &vec![[[0.0; 3]; N_GAUSS]]).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn traction_consistent_forces() {
        let mesh = generate_grid(1, 2, 1.0, 2.0).unwrap();
        let bc = NeumannBc {
            facet_set: "right".into(),
            flux: vec![3.0, 0.0],
        };
        let f = assemble_traction(&mesh, &[bc]).unwrap();
        // total force = traction * edge length
        let total: f64 = f.iter().step_by(2).sum();
        assert!((total - 6.0).abs() < 1e-12);
        // interior right-edge node carries twice the corner share
        let right: Vec<usize> = mesh.node_set("right").unwrap().to_vec();
        let mid = right[1];
        assert!((f[2 * mid] - 3.0).abs() < 1e-12);
        assert!(f.iter().skip(1).step_by(2).all(|&v| v == 0.0));
    }

    #[test]
    fn patch_test_constant_strain() {
        // distorted patch under linear boundary displacement reproduces the
        // constant strain state exactly
        let mut mesh = generate_grid(2, 2, 1.0, 1.0).unwrap();
        // move the center node
        let center = 4; // node (1,1) of the 3x3 grid
        mesh.nodes[center] = [0.57, 0.44];
        mesh.validate().unwrap();
        let model = ps_model(100.0, 0.3);
        let law = linear_law(1e9, 0.0); // never yields
        let (exx, eyy, gxy) = (2e-3, -1e-3, 1.5e-3);
        // prescribe u = (exx x + gxy/2 y, eyy y + gxy/2 x) on all boundary nodes
        let mut dirichlet = Vec::new();
        let mut mesh2 = mesh.clone();
        let mut boundary = Vec::new();
        for (n, p) in mesh.nodes.iter().enumerate() {
            if n != center {
                boundary.push(n);
                let ux = exx * p[0] + 0.5 * gxy * p[1];
                let uy = eyy * p[1] + 0.5 * gxy * p[0];
                mesh2.node_sets.insert(format!("n{n}"), vec![n]);
                dirichlet.push(DirichletBc {
                    node_set: format!("n{n}"),
                    dof_component: 0,
                    schedule: Schedule::ramp(ux, 1),
                });
                dirichlet.push(DirichletBc {
                    node_set: format!("n{n}"),
                    dof_component: 1,
                    schedule: Schedule::ramp(uy, 1),
                });
            }
        }
        let results = newton_solve(
            &mesh2,
            &model,
            Some(&law),
            &dirichlet,
            &[],
            1,
            &NewtonSettings {
                linear_tol: 1e-14,
                ..Default::default()
            },
            None,
        )
        .unwrap();
        let last = results.last().unwrap();
        let c = elastic_matrix(&model).unwrap();
        let expect = [
            c[0][0] * exx + c[0][1] * eyy,
            c[1][0] * exx + c[1][1] * eyy,
            c[2][2] * gxy,
        ];
        for states in &last.states {
            for s in states.iter() {
                let sv = s.stress_voigt();
                for r in 0..3 {
                    assert!(
                        (sv[r] - expect[r]).abs() < 1e-10 * 100.0,
                        "{sv:?} vs {expect:?}"
                    );
                }
            }
        }
        // interior node lands on the linear field
        let ux = last.displacement[2 * center];
        let uy = last.displacement[2 * center + 1];
        let p = mesh.nodes[center];
        assert!((ux - (exx * p[0] + 0.5 * gxy * p[1])).abs() < 1e-10);
        assert!((uy - (eyy * p[1] + 0.5 * gxy * p[0])).abs() < 1e-10);
    }

    fn uniaxial_setup(u_final: f64, n_steps: usize) -> Vec<DirichletBc> {
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
    fn elastic_load_converges_in_one_iteration() {
        let mesh = generate_grid(2, 2, 1.0, 1.0).unwrap();
        let model = ps_model(200e3, 0.3);
        let law = linear_law(1e9, 0.0);
        let dirichlet = uniaxial_setup(1e-4, 1);
        let results = newton_solve(
            &mesh,
            &model,
            Some(&law),
            &dirichlet,
            &[],
            1,
            &NewtonSettings::default(),
            None,
        )
        .unwrap();
        assert_eq!(results[0].newton_iterations, 1);
    }

    #[test]
    fn uniaxial_plastic_ramp_matches_scalar_driver() {
        // constrained uniaxial stretch of a single element: eps_xx ramps,
        // eps_yy = 0 via the bc layout below, so the strain state is known a
        // priori and an independent scalar constitutive driver predicts the
        // stress curve
        let mesh = generate_grid(1, 1, 1.0, 1.0).unwrap();
        let model = ps_model(200e3, 0.3);
        let law = HardeningLaw::PowerLaw {
            sigma_y0: 200.0,
            k_h: 300.0,
            n_h: 0.45,
            p_reg: 1e-12,
        };
        let u_final = 8e-3;
        let n_steps = 8;
        let dirichlet = vec![
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
                node_set: "top".into(),
                dof_component: 1,
                schedule: Schedule::constant(0.0),
            },
            DirichletBc {
                node_set: "right".into(),
                dof_component: 0,
                schedule: Schedule::ramp(u_final, n_steps),
            },
        ];
        let results = newton_solve(
            &mesh,
            &model,
            Some(&law),
            &dirichlet,
            &[],
            n_steps,
            &NewtonSettings::default(),
            None,
        )
        .unwrap();

        // independent scalar driver over the same strain path
        let mut oracle = MaterialPointState::default();
        for (step, res) in results.iter().enumerate() {
            let exx = u_final * (step + 1) as f64 / n_steps as f64;
            let (next, _) =
                return_map(&model, &law, &oracle, [exx, 0.0, 0.0], 1.0, 1e-12, 100).unwrap();
            oracle = next;
            for s in res.states[0].iter() {
                let got = s.stress_voigt()[0];
                let want = oracle.stress_voigt()[0];
                assert!(
                    ((got - want) / want).abs() < 1e-3,
                    "step {step}: {got} vs {want}"
                );
            }
            // reaction force on the right edge equals sigma_xx * area
            let right: f64 = mesh
                .node_set("right")
                .unwrap()
                .iter()
                .map(|&n| res.reactions[2 * n])
                .sum();
            assert!(((right - oracle.stress_voigt()[0]) / right).abs() < 1e-3);
        }
        // plasticity actually happened
        assert!(results.last().unwrap().states[0][0].p > 1e-3);
    }

    #[test]
    fn scaling_objectivity() {
        // scaling E, sigma_y, K_h by a factor scales stresses and leaves the
        // strain/p trajectory unchanged
        let mesh = generate_grid(1, 1, 1.0, 1.0).unwrap();
        let dirichlet = vec![
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
                schedule: Schedule::ramp(5e-3, 4),
            },
        ];
        let run = |scale: f64| {
            let model = ps_model(200e3 * scale, 0.3);
            let law = HardeningLaw::PowerLaw {
                sigma_y0: 200.0 * scale,
                k_h: 400.0 * scale,
                n_h: 0.5,
                p_reg: 1e-12,
            };
            newton_solve(
                &mesh,
                &model,
                Some(&law),
                &dirichlet,
                &[],
                4,
                &NewtonSettings::default(),
                None,
            )
            .unwrap()
        };
        let base = run(1.0);
        let scaled = run(7.0);
        for (a, b) in base.iter().zip(&scaled) {
            for (ua, ub) in a.displacement.iter().zip(&b.displacement) {
                assert!((ua - ub).abs() < 1e-10);
            }
            for (sa, sb) in a.states.iter().zip(&b.states) {
                for (ga, gb) in sa.iter().zip(sb.iter()) {
                    assert!((ga.p - gb.p).abs() < 1e-10);
                    for k in 0..4 {
                        assert!((7.0 * ga.stress[k] - gb.stress[k]).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn reaction_balance() {
        // sum of reactions on the pulled edge balances the opposite edge
        let mesh = generate_grid(3, 3, 1.0, 1.0).unwrap();
        let model = ps_model(100e3, 0.3);
        let law = linear_law(150.0, 500.0);
        let dirichlet = uniaxial_setup(4e-3, 2);
        let results = newton_solve(
            &mesh,
            &model,
            Some(&law),
            &dirichlet,
            &[],
            2,
            &NewtonSettings::default(),
            None,
        )
        .unwrap();
        let last = results.last().unwrap();
        let right: f64 = mesh
            .node_set("right")
            .unwrap()
            .iter()
            .map(|&n| last.reactions[2 * n])
            .sum();
        let left: f64 = mesh
            .node_set("left")
            .unwrap()
            .iter()
            .map(|&n| last.reactions[2 * n])
            .sum();
        assert!(right > 0.0);
        assert!(((right + left) / right).abs() < 1e-6);
    }
}
