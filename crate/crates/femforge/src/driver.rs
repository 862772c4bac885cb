//! The batch pipelines behind `run`: per-physics step loops, snapshot and
//! time-series output, and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{load_config, Physics, SimulationConfig};
use crate::element::N_GAUSS;
use crate::error::{FemError, Result};
use crate::fracture::{
    crack_surface, gauss_degradation, staggered_step, DrivingForceKind, PffState,
};
use crate::heat::{assemble_capacity, assemble_conductivity, assemble_heat_load, heat_step};
use crate::mechanics::{
    hydrostatic_stress, von_mises, MaterialPointState, MechSolver, NewtonSettings, StepResult,
};
use crate::mesh::Mesh;
use crate::output::{write_csv, write_vtk, FieldArray};
use crate::transport::{
    recover_nodal, transport_step_a, transport_step_b, MicrostructureFields, TransportSystemA,
    TransportSystemB,
};

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub solver_iterations: usize,
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub newton_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bisections: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub physics: Physics,
    pub n_steps: usize,
    pub steps: Vec<StepRecord>,
    pub outputs: Vec<String>,
    pub wall_ms: u128,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Loads, validates and executes a config file. Returns the manifest, which
/// is also written to `<output dir>/manifest.json`.
pub fn run(config_path: &Path, output_dir: Option<&Path>, quiet: bool) -> Result<RunManifest> {
    let text = fs::read_to_string(config_path).map_err(|source| FemError::Io {
        path: config_path.display().to_string(),
        source,
    })?;
    let config = load_config(config_path)?;
    let base_dir = config_path.parent().unwrap_or(Path::new("."));
    let mesh = config.build_mesh(base_dir)?;
    mesh.validate()?;
    config.validate(&mesh)?;
    let out_dir: PathBuf = output_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| base_dir.join(&config.output.directory));
    fs::create_dir_all(&out_dir).map_err(|source| FemError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let started = Instant::now();
    let mut ctx = RunContext {
        config: &config,
        mesh: &mesh,
        out_dir: &out_dir,
        quiet,
        outputs: Vec::new(),
        steps: Vec::new(),
    };
    match config.physics {
        Physics::Heat => run_heat(&mut ctx)?,
        Physics::TransportA => run_transport_a(&mut ctx)?,
        Physics::TransportB => run_transport_b(&mut ctx)?,
        Physics::Elasticity | Physics::Plasticity => run_mechanics(&mut ctx)?,
        Physics::FractureBrittle | Physics::FractureEp | Physics::FractureEpThreshold => {
            run_fracture(&mut ctx)?
        }
    }

    let manifest = RunManifest {
        config_hash: format!("{:016x}", fnv1a(text.as_bytes())),
        physics: config.physics,
        n_steps: config.stepping.n_steps,
        steps: ctx.steps,
        outputs: ctx.outputs,
        wall_ms: started.elapsed().as_millis(),
    };
    let manifest_path = out_dir.join("manifest.json");
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|source| FemError::Io {
        path: manifest_path.display().to_string(),
        source,
    })?;
    if !quiet {
        println!(
            "completed {} steps in {} ms -> {}",
            manifest.n_steps,
            manifest.wall_ms,
            out_dir.display()
        );
    }
    Ok(manifest)
}

struct RunContext<'a> {
    config: &'a SimulationConfig,
    mesh: &'a Mesh,
    out_dir: &'a Path,
    quiet: bool,
    outputs: Vec<String>,
    steps: Vec<StepRecord>,
}

impl RunContext<'_> {
    fn snapshot(
        &mut self,
        step: usize,
        point_data: &[FieldArray],
        cell_data: &[FieldArray],
    ) -> Result<()> {
        let stride = self.config.output.stride;
        if stride == 0 || step % stride != 0 {
            return Ok(());
        }
        let name = format!("step_{step:04}.vtk");
        write_vtk(&self.out_dir.join(&name), self.mesh, point_data, cell_data)?;
        self.outputs.push(name);
        Ok(())
    }

    fn series(&mut self, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        write_csv(&self.out_dir.join("series.csv"), header, rows)?;
        self.outputs.push("series.csv".into());
        Ok(())
    }

    fn progress(&self, step: usize, detail: &str) {
        if !self.quiet {
            println!("step {step}: {detail}");
        }
    }

    fn probe_nodes(&self) -> Vec<usize> {
        self.config
            .output
            .probe_set
            .as_deref()
            .and_then(|s| self.mesh.node_set(s).ok())
            .map(|s| s.to_vec())
            .unwrap_or_default()
    }
}

fn scalar_stats(v: &[f64]) -> (f64, f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &x in v {
        min = min.min(x);
        max = max.max(x);
        sum += x;
    }
    (min, max, sum / v.len() as f64)
}

fn run_heat(ctx: &mut RunContext) -> Result<()> {
    let config = ctx.config;
    let mesh = ctx.mesh;
    let material = config.heat.as_ref().expect("validated");
    let capacity = assemble_capacity(mesh, material)?;
    let conductivity = assemble_conductivity(mesh, material)?;
    let load = assemble_heat_load(mesh, material, &config.bcs.neumann)?;
    let mut t = vec![config.initial_value; mesh.n_nodes()];
    let dt = config.stepping.dt;
    let probe = ctx.probe_nodes();
    let mut rows = Vec::new();
    for step in 1..=config.stepping.n_steps {
        let mut constraints = Vec::new();
        for bc in &config.bcs.dirichlet {
            constraints.extend(bc.constraints(mesh, 1, step)?);
        }
        let (t_new, report) = heat_step(
            &t,
            dt,
            &capacity,
            &conductivity,
            &load,
            &constraints,
            config.solver.tol,
            config.solver.max_iter,
        )?;
        t = t_new;
        let (min, max, mean) = scalar_stats(&t);
        let mut row = vec![step as f64, step as f64 * dt, min, max, mean];
        if !probe.is_empty() {
            row.push(probe.iter().map(|&n| t[n]).sum::<f64>() / probe.len() as f64);
        }
        rows.push(row);
        ctx.steps.push(StepRecord {
            step,
            solver_iterations: report.iterations,
            residual: report.final_residual_norm,
            newton_iterations: None,
            bisections: None,
        });
        ctx.snapshot(step, &[FieldArray::scalar("temperature", t.clone())], &[])?;
        ctx.progress(step, &format!("cg {} iters", report.iterations));
    }
    let mut header = vec!["step", "time", "t_min", "t_max", "t_mean"];
    if !probe.is_empty() {
        header.push("t_probe");
    }
    ctx.series(&header, &rows)
}

fn microstructure_from_mesh(mesh: &Mesh, names: &[&str]) -> Result<MicrostructureFields> {
    let mut fields = MicrostructureFields::default();
    for &name in names {
        let values = mesh.fields.get(name).cloned().ok_or_else(|| {
            FemError::Config(format!("mesh is missing nodal field {name:?}"))
        })?;
        match name {
            "g_intf" => fields.g_intf = Some(values),
            "phi_n" => fields.phi_n = Some(values),
            "sigma_h" => fields.sigma_h = Some(values),
            "rho_bar" => fields.rho_bar = Some(values),
            "phi_damage" => fields.phi_damage = Some(values),
            _ => unreachable!(),
        }
    }
    fields.validate(mesh.n_nodes())?;
    Ok(fields)
}

fn concentration_row(step: usize, dt: f64, c: &[f64], mass: &crate::sparse::SparseMatrix) -> Vec<f64> {
    let (min, max, mean) = scalar_stats(c);
    let mut mc = vec![0.0; c.len()];
    mass.matvec(c, &mut mc);
    let total: f64 = mc.iter().sum();
    vec![step as f64, step as f64 * dt, min, max, mean, total]
}

const CONC_HEADER: [&str; 6] = ["step", "time", "c_min", "c_max", "c_mean", "c_total"];

fn run_transport_a(ctx: &mut RunContext) -> Result<()> {
    let config = ctx.config;
    let mesh = ctx.mesh;
    let material = config.transport.as_ref().expect("validated");
    let fields = microstructure_from_mesh(mesh, &["g_intf", "phi_n"])?;
    let system = TransportSystemA::assemble(mesh, material, &fields)?;
    let load = crate::heat::assemble_flux(mesh, &config.bcs.neumann)?;
    let mut c = vec![config.initial_value; mesh.n_nodes()];
    let dt = config.stepping.dt;
    let mut rows = Vec::new();
    for step in 1..=config.stepping.n_steps {
        let mut constraints = Vec::new();
        for bc in &config.bcs.dirichlet {
            constraints.extend(bc.constraints(mesh, 1, step)?);
        }
        let (c_new, report) = transport_step_a(
            &c,
            dt,
            &system,
            &load,
            &constraints,
            config.solver.tol,
            config.solver.max_iter,
            config.solver.dense_cap,
        )?;
        c = c_new;
        rows.push(concentration_row(step, dt, &c, &system.mass));
        ctx.steps.push(StepRecord {
            step,
            solver_iterations: report.iterations,
            residual: report.final_residual_norm,
            newton_iterations: None,
            bisections: None,
        });
        ctx.snapshot(step, &[FieldArray::scalar("concentration", c.clone())], &[])?;
        ctx.progress(step, &format!("{} iters", report.iterations));
    }
    ctx.series(&CONC_HEADER, &rows)
}

fn run_transport_b(ctx: &mut RunContext) -> Result<()> {
    let config = ctx.config;
    let mesh = ctx.mesh;
    let material = config.transport.as_ref().expect("validated");
    let fields = microstructure_from_mesh(mesh, &["sigma_h", "rho_bar", "phi_damage"])?;
    let load = crate::heat::assemble_flux(mesh, &config.bcs.neumann)?;
    let mut c = vec![config.initial_value; mesh.n_nodes()];
    let dt = config.stepping.dt;
    let mut rows = Vec::new();
    for step in 1..=config.stepping.n_steps {
        let system = TransportSystemB::assemble(mesh, material, &fields, step as f64 * dt)?;
        let mut constraints = Vec::new();
        for bc in &config.bcs.dirichlet {
            constraints.extend(bc.constraints(mesh, 1, step)?);
        }
        let (c_new, report) = transport_step_b(
            &c,
            dt,
            &system,
            &load,
            &constraints,
            config.solver.tol,
            config.solver.max_iter,
            config.solver.dense_cap,
        )?;
        c = c_new;
        rows.push(concentration_row(step, dt, &c, &system.mass));
        ctx.steps.push(StepRecord {
            step,
            solver_iterations: report.iterations,
            residual: report.final_residual_norm,
            newton_iterations: None,
            bisections: None,
        });
        ctx.snapshot(step, &[FieldArray::scalar("concentration", c.clone())], &[])?;
        ctx.progress(step, &format!("{} iters", report.iterations));
    }
    ctx.series(&CONC_HEADER, &rows)
}

fn newton_settings(config: &SimulationConfig) -> NewtonSettings {
    NewtonSettings {
        tol_r: config.solver.tol_r,
        max_iter: config.solver.newton_max_iter,
        linear_tol: config.solver.tol,
        linear_max_iter: config.solver.max_iter,
        ..Default::default()
    }
}

/// Per-element Gauss averages of the mechanics state, for CELL_DATA export.
fn mechanics_cell_data(
    model: &crate::mechanics::ElasticModel,
    states: &[[MaterialPointState; N_GAUSS]],
) -> Vec<FieldArray> {
    let avg = |f: &dyn Fn(&MaterialPointState) -> f64| -> Vec<f64> {
        states
            .iter()
            .map(|gps| gps.iter().map(|s| f(s)).sum::<f64>() / N_GAUSS as f64)
            .collect()
    };
    vec![
        FieldArray::scalar("von_mises", avg(&|s| von_mises(&s.stress))),
        FieldArray::scalar("eq_plastic_strain", avg(&|s| s.p)),
        FieldArray::scalar(
            "hydrostatic_stress",
            avg(&|s| hydrostatic_stress(model, &s.stress_voigt())),
        ),
    ]
}

fn mechanics_row(
    step: usize,
    result: &StepResult,
    probe: &[usize],
) -> Vec<f64> {
    let u_max = result
        .displacement
        .chunks(2)
        .map(|u| (u[0] * u[0] + u[1] * u[1]).sqrt())
        .fold(0.0, f64::max);
    let rx: f64 = probe.iter().map(|&n| result.reactions[2 * n]).sum();
    let ry: f64 = probe.iter().map(|&n| result.reactions[2 * n + 1]).sum();
    vec![
        step as f64,
        u_max,
        rx,
        ry,
        result.newton_iterations as f64,
    ]
}

const MECH_HEADER: [&str; 5] = ["step", "u_max", "reaction_x", "reaction_y", "newton_iters"];

fn run_mechanics(ctx: &mut RunContext) -> Result<()> {
    let config = ctx.config;
    let mesh = ctx.mesh;
    let block = config.mechanics.as_ref().expect("validated");
    let law = if config.physics == Physics::Plasticity {
        block.hardening.clone()
    } else {
        None
    };
    let mut solver = MechSolver::new(
        mesh,
        block.model,
        law,
        &config.bcs.dirichlet,
        &config.bcs.neumann,
        newton_settings(config),
    )?;
    let probe = ctx.probe_nodes();
    let mut rows = Vec::new();
    for step in 1..=config.stepping.n_steps {
        let result = solver.advance(None)?;
        rows.push(mechanics_row(step, &result, &probe));
        ctx.steps.push(StepRecord {
            step,
            solver_iterations: 0,
            residual: 0.0,
            newton_iterations: Some(result.newton_iterations),
            bisections: Some(result.bisections),
        });
        ctx.snapshot(
            step,
            &[FieldArray::vector2(
                "displacement",
                result.displacement.clone(),
            )],
            &mechanics_cell_data(&block.model, &result.states),
        )?;
        ctx.progress(step, &format!("newton {} iters", result.newton_iterations));
    }
    ctx.series(&MECH_HEADER, &rows)
}

fn run_fracture(ctx: &mut RunContext) -> Result<()> {
    let config = ctx.config;
    let mesh = ctx.mesh;
    let block = config.mechanics.as_ref().expect("validated");
    let fracture = config.fracture.as_ref().expect("validated");
    let mut pff = fracture.material.clone();
    // the physics choice wins over whatever the block says
    pff.driving_force = match config.physics {
        Physics::FractureBrittle => DrivingForceKind::Brittle,
        Physics::FractureEp => DrivingForceKind::Elastoplastic,
        _ => DrivingForceKind::ElastoplasticThreshold,
    };
    let law = if config.physics == Physics::FractureBrittle {
        None
    } else {
        block.hardening.clone()
    };
    let mut solver = MechSolver::new(
        mesh,
        block.model,
        law.clone(),
        &config.bcs.dirichlet,
        &config.bcs.neumann,
        newton_settings(config),
    )?;
    let mut state = PffState::new(mesh);
    let pins: Vec<usize> = fracture
        .crack_seed
        .as_deref()
        .map(|s| mesh.node_set(s).map(|n| n.to_vec()))
        .transpose()?
        .unwrap_or_default();

    let coupled = config.transport.is_some();
    let mut c = vec![config.initial_value; mesh.n_nodes()];
    let dt = config.stepping.dt;
    let transport_load = crate::heat::assemble_flux(mesh, &config.transport_bcs.neumann)?;
    let probe = ctx.probe_nodes();
    let mut rows = Vec::new();
    for step in 1..=config.stepping.n_steps {
        let phi_frozen = state.phi.clone();
        let result = staggered_step(&mut solver, &pff, &mut state, &pins)?;
        let phi_max = state.phi.iter().cloned().fold(0.0, f64::max);
        let gamma = crack_surface(mesh, &pff, &state.phi)?;
        let mut row = mechanics_row(step, &result, &probe);
        row.insert(2, phi_max);
        row.insert(3, gamma);

        if coupled {
            let material = config.transport.as_ref().expect("checked");
            // recover nodal sigma_h and rho_bar from the mechanics state; the
            // degradation seen by the stress choice is configurable
            let g_d = gauss_degradation(mesh, &pff, &phi_frozen);
            let mut sh = vec![[0.0; N_GAUSS]; mesh.n_elements()];
            let mut rb = vec![[0.0; N_GAUSS]; mesh.n_elements()];
            for e in 0..mesh.n_elements() {
                for gp in 0..N_GAUSS {
                    let s = &result.states[e][gp];
                    let sv = if fracture.undegraded_sigma_h {
                        [
                            s.stress_undegraded[0],
                            s.stress_undegraded[1],
                            s.stress_undegraded[3],
                        ]
                    } else {
                        s.stress_voigt()
                    };
                    sh[e][gp] = hydrostatic_stress(&block.model, &sv);
                    rb[e][gp] = law.as_ref().map_or(0.0, |l| l.rho_bar(s.p));
                    let _ = g_d; // stresses already carry the frozen degradation
                }
            }
            let fields = MicrostructureFields {
                sigma_h: Some(recover_nodal(mesh, &sh)?),
                rho_bar: Some(recover_nodal(mesh, &rb)?),
                phi_damage: Some(state.phi.clone()),
                ..Default::default()
            };
            let system = TransportSystemB::assemble(mesh, material, &fields, step as f64 * dt)?;
            let mut constraints = Vec::new();
            for bc in &config.transport_bcs.dirichlet {
                constraints.extend(bc.constraints(mesh, 1, step)?);
            }
            let (c_new, _) = transport_step_b(
                &c,
                dt,
                &system,
                &transport_load,
                &constraints,
                config.solver.tol,
                config.solver.max_iter,
                config.solver.dense_cap,
            )?;
            c = c_new;
            let (_, c_max, c_mean) = scalar_stats(&c);
            row.push(c_max);
            row.push(c_mean);
        }
        rows.push(row);
        ctx.steps.push(StepRecord {
            step,
            solver_iterations: 0,
            residual: 0.0,
            newton_iterations: Some(result.newton_iterations),
            bisections: Some(result.bisections),
        });
        let mut point_data = vec![
            FieldArray::vector2("displacement", result.displacement.clone()),
            FieldArray::scalar("phi", state.phi.clone()),
        ];
        if coupled {
            point_data.push(FieldArray::scalar("concentration", c.clone()));
        }
        let mut cell_data = mechanics_cell_data(&block.model, &result.states);
        cell_data.push(FieldArray::scalar(
            "history",
            state
                .history
                .iter()
                .map(|h| h.iter().sum::<f64>() / N_GAUSS as f64)
                .collect(),
        ));
        ctx.snapshot(step, &point_data, &cell_data)?;
        ctx.progress(step, &format!("phi_max {phi_max:.4}"));
    }
    let mut header = vec![
        "step",
        "u_max",
        "phi_max",
        "crack_surface",
        "reaction_x",
        "reaction_y",
        "newton_iters",
    ];
    if coupled {
        header.push("c_max");
        header.push("c_mean");
    }
    ctx.series(&header, &rows)
}
