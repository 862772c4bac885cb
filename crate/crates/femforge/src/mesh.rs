//! Discretized geometry: nodes, quad4 connectivity, named node/facet sets,
//! nodal field storage and the JSON mesh format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::element::{geometry_at_tagged, quadrature_2x2};
use crate::error::{FemError, Result};

/// Local edge order: 0:(n0,n1), 1:(n1,n2), 2:(n2,n3), 3:(n3,n0).
pub const EDGE_NODES: [[usize; 2]; 4] = [[0, 1], [1, 2], [2, 3], [3, 0]];

/// An immutable quad4 mesh. Elements are counterclockwise; validity means a
/// positive Jacobian determinant at all four Gauss points of every element.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 4]>,
    #[serde(default)]
    pub node_sets: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub facet_sets: BTreeMap<String, Vec<[usize; 2]>>,
    /// Optional nodal data shipped with the mesh (microstructure fields etc).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, Vec<f64>>,
}

impl Mesh {
    /// Validates connectivity, set indices and element orientation.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        for (e, conn) in self.elements.iter().enumerate() {
            for &i in conn {
                if i >= n {
                    return Err(FemError::Mesh(format!(
                        "element {e}: node index {i} out of range (mesh has {n} nodes)"
                    )));
                }
            }
            let coords = self.element_coords(e);
            for &xi in &quadrature_2x2().points {
                geometry_at_tagged(xi, &coords, e)?;
            }
        }
        for (name, set) in &self.node_sets {
            for &i in set {
                if i >= n {
                    return Err(FemError::Mesh(format!(
                        "node set {name:?}: node index {i} out of range"
                    )));
                }
            }
        }
        for (name, set) in &self.facet_sets {
            for &[e, edge] in set {
                if e >= self.elements.len() {
                    return Err(FemError::Mesh(format!(
                        "facet set {name:?}: element index {e} out of range"
                    )));
                }
                if edge >= 4 {
                    return Err(FemError::Mesh(format!(
                        "facet set {name:?}: local edge index {edge} not in 0..4"
                    )));
                }
            }
        }
        for (name, values) in &self.fields {
            if values.len() != n {
                return Err(FemError::Mesh(format!(
                    "field {name:?}: {} values for {n} nodes",
                    values.len()
                )));
            }
        }
        // every node must belong to at least one element for nodal recovery
        let mut seen = vec![false; n];
        for conn in &self.elements {
            for &i in conn {
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|&s| !s) {
            return Err(FemError::Mesh(format!(
                "node {i} is not referenced by any element"
            )));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_coords(&self, e: usize) -> [[f64; 2]; 4] {
        let c = self.elements[e];
        [
            self.nodes[c[0]],
            self.nodes[c[1]],
            self.nodes[c[2]],
            self.nodes[c[3]],
        ]
    }

    /// Nodal values of element `e` gathered from a scalar field.
    pub fn gather(&self, e: usize, field: &[f64]) -> [f64; 4] {
        let c = self.elements[e];
        [field[c[0]], field[c[1]], field[c[2]], field[c[3]]]
    }

    pub fn node_set(&self, name: &str) -> Result<&[usize]> {
        self.node_sets
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| FemError::Config(format!("unknown node set {name:?}")))
    }

    pub fn facet_set(&self, name: &str) -> Result<&[[usize; 2]]> {
        self.facet_sets
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| FemError::Config(format!("unknown facet set {name:?}")))
    }

    /// Total area via Gauss quadrature of det J.
    pub fn total_area(&self) -> f64 {
        let rule = quadrature_2x2();
        let mut area = 0.0;
        for e in 0..self.n_elements() {
            let coords = self.element_coords(e);
            for (&xi, &w) in rule.points.iter().zip(&rule.weights) {
                let g = geometry_at_tagged(xi, &coords, e).expect("validated mesh");
                area += w * g.det_j;
            }
        }
        area
    }
}

/// Loads and validates a mesh from its JSON format.
pub fn load_mesh<P: AsRef<Path>>(path: P) -> Result<Mesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| FemError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mesh: Mesh = serde_json::from_str(&text).map_err(|e| FemError::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    mesh.validate()?;
    Ok(mesh)
}

/// Writes a mesh as JSON.
pub fn save_mesh<P: AsRef<Path>>(mesh: &Mesh, path: P) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(mesh).expect("mesh serialization");
    std::fs::write(path, text).map_err(|source| FemError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Builds a structured `nx x ny` grid over `[0,lx] x [0,ly]` with node sets
/// "left", "right", "bottom", "top" and matching facet sets.
pub fn generate_grid(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Mesh> {
    if nx < 1 || ny < 1 {
        return Err(FemError::Mesh("grid needs nx, ny >= 1".into()));
    }
    if !(lx > 0.0) || !(ly > 0.0) {
        return Err(FemError::Mesh("grid needs lx, ly > 0".into()));
    }
    let node_id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([lx * i as f64 / nx as f64, ly * j as f64 / ny as f64]);
        }
    }
    let mut elements = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            elements.push([
                node_id(i, j),
                node_id(i + 1, j),
                node_id(i + 1, j + 1),
                node_id(i, j + 1),
            ]);
        }
    }
    let elem_id = |i: usize, j: usize| j * nx + i;
    let mut node_sets = BTreeMap::new();
    node_sets.insert("left".into(), (0..=ny).map(|j| node_id(0, j)).collect());
    node_sets.insert("right".into(), (0..=ny).map(|j| node_id(nx, j)).collect());
    node_sets.insert("bottom".into(), (0..=nx).map(|i| node_id(i, 0)).collect());
    node_sets.insert("top".into(), (0..=nx).map(|i| node_id(i, ny)).collect());
    let mut facet_sets: BTreeMap<String, Vec<[usize; 2]>> = BTreeMap::new();
    facet_sets.insert("left".into(), (0..ny).map(|j| [elem_id(0, j), 3]).collect());
    facet_sets.insert(
        "right".into(),
        (0..ny).map(|j| [elem_id(nx - 1, j), 1]).collect(),
    );
    facet_sets.insert(
        "bottom".into(),
        (0..nx).map(|i| [elem_id(i, 0), 0]).collect(),
    );
    facet_sets.insert(
        "top".into(),
        (0..nx).map(|i| [elem_id(i, ny - 1), 2]).collect(),
    );
    let mesh = Mesh {
        nodes,
        elements,
        node_sets,
        facet_sets,
        fields: BTreeMap::new(),
    };
    mesh.validate()?;
    Ok(mesh)
}

/// A scalar or vector field stored at the mesh nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    pub name: String,
    pub component_count: usize,
    pub values: Vec<f64>,
}

impl NodalField {
    pub fn zeros(name: &str, component_count: usize, n_nodes: usize) -> Self {
        NodalField {
            name: name.into(),
            component_count,
            values: vec![0.0; component_count * n_nodes],
        }
    }

    pub fn scalar(name: &str, values: Vec<f64>) -> Self {
        NodalField {
            name: name.into(),
            component_count: 1,
            values,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.component_count
    }
}

/// A piecewise-linear schedule of a boundary value over step number. Constant
/// extrapolation outside the listed breakpoints.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Schedule(pub Vec<(f64, f64)>);

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Schedule(vec![(0.0, value)])
    }

    /// Linear ramp from 0 at step 0 to `value` at `n_steps`.
    pub fn ramp(value: f64, n_steps: usize) -> Self {
        Schedule(vec![(0.0, 0.0), (n_steps as f64, value)])
    }

    pub fn value_at(&self, step: usize) -> f64 {
        self.value_at_f(step as f64)
    }

    /// Fractional-step lookup, used when an increment is bisected.
    pub fn value_at_f(&self, s: f64) -> f64 {
        let pts = &self.0;
        assert!(!pts.is_empty(), "empty schedule");
        if s <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let (s0, v0) = w[0];
            let (s1, v1) = w[1];
            if s <= s1 {
                if s1 == s0 {
                    return v1;
                }
                return v0 + (v1 - v0) * (s - s0) / (s1 - s0);
            }
        }
        pts[pts.len() - 1].1
    }
}

/// Prescribed value on a node set, per dof component, scheduled over steps.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DirichletBc {
    pub node_set: String,
    #[serde(default)]
    pub dof_component: usize,
    pub schedule: Schedule,
}

impl DirichletBc {
    /// Expands to global (dof, value) pairs at a given step.
    pub fn constraints(
        &self,
        mesh: &Mesh,
        dofs_per_node: usize,
        step: usize,
    ) -> Result<Vec<(usize, f64)>> {
        if self.dof_component >= dofs_per_node {
            return Err(FemError::Config(format!(
                "dirichlet on {:?}: component {} out of range for {} dofs/node",
                self.node_set, self.dof_component, dofs_per_node
            )));
        }
        let value = self.schedule.value_at(step);
        Ok(mesh
            .node_set(&self.node_set)?
            .iter()
            .map(|&n| (n * dofs_per_node + self.dof_component, value))
            .collect())
    }
}

/// Prescribed normal flux (scalar fields) or traction (mechanics) on a facet set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NeumannBc {
    pub facet_set: String,
    /// Outward normal flux `J . n` for scalar fields; `[tx, ty]` traction for
    /// displacement fields.
    pub flux: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square_mesh() -> Mesh {
        Mesh {
            nodes: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            elements: vec![[0, 1, 2, 3]],
            node_sets: BTreeMap::new(),
            facet_sets: BTreeMap::new(),
            fields: BTreeMap::new(),
        }
    }

    #[test]
    fn unit_square_is_valid() {
        let m = unit_square_mesh();
        m.validate().unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.n_elements(), 1);
    }

    #[test]
    fn clockwise_element_fails_validation() {
        let mut m = unit_square_mesh();
        m.elements[0] = [0, 3, 2, 1];
        let err = m.validate().unwrap_err();
        assert!(matches!(err, FemError::DegenerateElement { element: 0, .. }));
    }

    #[test]
    fn out_of_range_connectivity_fails() {
        let mut m = unit_square_mesh();
        m.elements[0] = [0, 1, 2, 7];
        let err = m.validate().unwrap_err();
        assert!(err.to_string().contains("out of range"));
    }

    #[test]
    fn grid_counts() {
        let m = generate_grid(1, 1, 1.0, 1.0).unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.n_elements(), 1);
        let m = generate_grid(2, 1, 2.0, 1.0).unwrap();
        assert_eq!(m.n_nodes(), 6);
        assert_eq!(m.n_elements(), 2);
        let m = generate_grid(10, 10, 1.0, 1.0).unwrap();
        assert_eq!(m.node_sets["left"].len(), 11);
    }

    #[test]
    fn grid_rejects_bad_dimensions() {
        assert!(generate_grid(0, 1, 1.0, 1.0).is_err());
        assert!(generate_grid(1, 1, -1.0, 1.0).is_err());
        assert!(generate_grid(1, 1, 1.0, 0.0).is_err());
    }

    #[test]
    fn grid_area_matches_dimensions() {
        for &(nx, ny, lx, ly) in &[(3usize, 5usize, 2.5, 0.7), (7, 2, 1.0, 1.0)] {
            let m = generate_grid(nx, ny, lx, ly).unwrap();
            let area = m.total_area();
            assert!((area - lx * ly).abs() <= 1e-12 * lx * ly);
        }
    }

    #[test]
    fn mesh_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.json");
        let mut m = generate_grid(3, 2, 1.5, 1.0).unwrap();
        m.fields.insert("g_intf".into(), vec![0.1; m.n_nodes()]);
        save_mesh(&m, &path).unwrap();
        let loaded = load_mesh(&path).unwrap();
        assert_eq!(m, loaded);
    }

    #[test]
    fn schedule_interpolation() {
        let s = Schedule(vec![(0.0, 0.0), (10.0, 5.0)]);
        assert_eq!(s.value_at(0), 0.0);
        assert_eq!(s.value_at(5), 2.5);
        assert_eq!(s.value_at(10), 5.0);
        assert_eq!(s.value_at(20), 5.0);
        let c = Schedule::constant(3.0);
        assert_eq!(c.value_at(0), 3.0);
        assert_eq!(c.value_at(7), 3.0);
    }

    #[test]
    fn dirichlet_expansion() {
        let m = generate_grid(2, 2, 1.0, 1.0).unwrap();
        let bc = DirichletBc {
            node_set: "left".into(),
            dof_component: 1,
            schedule: Schedule::ramp(2.0, 4),
        };
        let cons = bc.constraints(&m, 2, 2).unwrap();
        assert_eq!(cons.len(), 3);
        for &(dof, v) in &cons {
            assert_eq!(dof % 2, 1);
            assert_eq!(v, 1.0);
        }
        assert!(bc.constraints(&m, 1, 2).is_err());
    }
}
