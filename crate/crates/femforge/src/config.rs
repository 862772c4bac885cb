//! Run configuration: a single versioned JSON document naming the physics,
//! the mesh, material blocks, boundary conditions, stepping and output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FemError, Result};
use crate::fracture::PffMaterial;
use crate::heat::HeatMaterial;
use crate::mechanics::{ElasticModel, HardeningLaw};
use crate::mesh::{generate_grid, load_mesh, DirichletBc, Mesh, NeumannBc};
use crate::transport::TransportMaterial;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Physics {
    Heat,
    TransportA,
    TransportB,
    Elasticity,
    Plasticity,
    FractureBrittle,
    FractureEp,
    FractureEpThreshold,
}

impl Physics {
    pub fn is_fracture(&self) -> bool {
        matches!(
            self,
            Physics::FractureBrittle | Physics::FractureEp | Physics::FractureEpThreshold
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshSpec {
    Path { path: String },
    Grid { grid: GridSpec },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Bcs {
    #[serde(default)]
    pub dirichlet: Vec<DirichletBc>,
    #[serde(default)]
    pub neumann: Vec<NeumannBc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stepping {
    #[serde(default = "one_f64")]
    pub dt: f64,
    pub n_steps: usize,
}

fn one_f64() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub directory: String,
    /// A VTK snapshot every `stride` steps (0 disables snapshots).
    #[serde(default = "one_usize")]
    pub stride: usize,
    /// Node set whose reactions/values are tracked in the CSV (mechanics and
    /// fracture pipelines).
    #[serde(default)]
    pub probe_set: Option<String>,
}

fn default_dir() -> String {
    "out".into()
}

fn one_usize() -> usize {
    1
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            directory: default_dir(),
            stride: 1,
            probe_set: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSpec {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Newton residual tolerance (mechanics).
    #[serde(default = "default_tol_r")]
    pub tol_r: f64,
    #[serde(default = "default_newton_max_iter")]
    pub newton_max_iter: usize,
    #[serde(default = "default_dense_cap")]
    pub dense_cap: usize,
}

fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    20_000
}
fn default_tol_r() -> f64 {
    1e-8
}
fn default_newton_max_iter() -> usize {
    25
}
fn default_dense_cap() -> usize {
    600
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            tol: default_tol(),
            max_iter: default_max_iter(),
            tol_r: default_tol_r(),
            newton_max_iter: default_newton_max_iter(),
            dense_cap: default_dense_cap(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MechanicsBlock {
    pub model: ElasticModel,
    #[serde(default)]
    pub hardening: Option<HardeningLaw>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FractureBlock {
    #[serde(flatten)]
    pub material: PffMaterial,
    /// Node set held at phi = 1 (pre-seeded crack).
    #[serde(default)]
    pub crack_seed: Option<String>,
    /// Feed the undegraded hydrostatic stress into the equilibrium
    /// concentration instead of the degraded one.
    #[serde(default)]
    pub undegraded_sigma_h: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub schema_version: u32,
    pub physics: Physics,
    pub mesh: MeshSpec,
    #[serde(default)]
    pub heat: Option<HeatMaterial>,
    #[serde(default)]
    pub transport: Option<TransportMaterial>,
    #[serde(default)]
    pub mechanics: Option<MechanicsBlock>,
    #[serde(default)]
    pub fracture: Option<FractureBlock>,
    #[serde(default)]
    pub bcs: Bcs,
    /// Boundary conditions of the concentration field when a fracture run
    /// couples to transport (the main `bcs` block then belongs to mechanics).
    #[serde(default)]
    pub transport_bcs: Bcs,
    pub stepping: Stepping,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    /// Uniform initial value of the primary scalar field (heat/transport).
    #[serde(default)]
    pub initial_value: f64,
}

impl SimulationConfig {
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(FemError::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.stepping.dt > 0.0) {
            return Err(FemError::Config("stepping.dt must be positive".into()));
        }
        match self.physics {
            Physics::Heat => {
                self.heat
                    .as_ref()
                    .ok_or_else(|| FemError::Config("missing \"heat\" material block".into()))?
                    .validate()?;
            }
            Physics::TransportA | Physics::TransportB => {
                self.transport
                    .as_ref()
                    .ok_or_else(|| {
                        FemError::Config("missing \"transport\" material block".into())
                    })?
                    .validate()?;
            }
            Physics::Elasticity => {
                let m = self.mechanics.as_ref().ok_or_else(|| {
                    FemError::Config("missing \"mechanics\" material block".into())
                })?;
                m.model.validate()?;
            }
            Physics::Plasticity => {
                let m = self.mechanics.as_ref().ok_or_else(|| {
                    FemError::Config("missing \"mechanics\" material block".into())
                })?;
                m.model.validate()?;
                m.hardening
                    .as_ref()
                    .ok_or_else(|| {
                        FemError::Config("plasticity requires \"mechanics.hardening\"".into())
                    })?
                    .validate()?;
            }
            Physics::FractureBrittle | Physics::FractureEp | Physics::FractureEpThreshold => {
                let m = self.mechanics.as_ref().ok_or_else(|| {
                    FemError::Config("missing \"mechanics\" material block".into())
                })?;
                m.model.validate()?;
                let f = self.fracture.as_ref().ok_or_else(|| {
                    FemError::Config("missing \"fracture\" material block".into())
                })?;
                f.material.validate()?;
                if self.physics != Physics::FractureBrittle {
                    m.hardening
                        .as_ref()
                        .ok_or_else(|| {
                            FemError::Config(
                                "elastoplastic fracture requires \"mechanics.hardening\"".into(),
                            )
                        })?
                        .validate()?;
                }
                if let Some(seed) = &f.crack_seed {
                    mesh.node_set(seed)?;
                }
            }
        }
        if let Some(t) = &self.transport {
            t.validate()?;
        }
        for bc in self.bcs.dirichlet.iter().chain(&self.transport_bcs.dirichlet) {
            mesh.node_set(&bc.node_set)?;
        }
        for bc in self.bcs.neumann.iter().chain(&self.transport_bcs.neumann) {
            mesh.facet_set(&bc.facet_set)?;
        }
        if let Some(set) = &self.output.probe_set {
            mesh.node_set(set)?;
        }
        Ok(())
    }

    /// Builds the mesh, resolving a relative path against `base_dir`.
    pub fn build_mesh(&self, base_dir: &Path) -> Result<Mesh> {
        match &self.mesh {
            MeshSpec::Path { path } => {
                let p = PathBuf::from(path);
                let resolved = if p.is_absolute() { p } else { base_dir.join(p) };
                load_mesh(resolved)
            }
            MeshSpec::Grid { grid } => generate_grid(grid.nx, grid.ny, grid.lx, grid.ly),
        }
    }
}

pub fn load_config(path: &Path) -> Result<SimulationConfig> {
    let text = fs::read_to_string(path).map_err(|source| FemError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| FemError::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}
