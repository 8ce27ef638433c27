//! Structured spectral-element grid of the PML-truncated half-space.
//!
//! The computational box is a uniform brick grid. The regular domain (RD)
//! occupies `[-Lx/2, Lx/2] x [-Ly/2, Ly/2] x [-D, 0]`; the PML wraps the four
//! lateral faces and the bottom face, and the top face `z = 0` is the free
//! surface. Every element is a 27-node quadratic brick whose nodes are the
//! tensor-product Legendre-Gauss-Lobatto points, so node coordinates form a
//! regular lattice with spacing `h/2`.

use serde::{Deserialize, Serialize};

use crate::error::{FwiError, Result};

/// Sentinel for "no DOF at this node".
pub const NO_DOF: u32 = u32::MAX;

/// Nodes per element (27-node brick).
pub const NODES_PER_ELEMENT: usize = 27;

/// Stress components stored per node: xx, yy, zz, xy, xz, yz.
pub const STRESS_COMPONENTS: usize = 6;

/// `(i, j)` tensor indices of the stored stress components.
pub const STRESS_INDEX: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// Maps a tensor index pair to the stored stress component.
pub const fn stress_component(i: usize, j: usize) -> usize {
    match (i, j) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (0, 1) | (1, 0) => 3,
        (0, 2) | (2, 0) => 4,
        _ => 5,
    }
}

/// Geometry of the truncated box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// RD extent along x, y and depth (m).
    pub rd_extent: [f64; 3],
    /// Uniform element edge length (m).
    pub element_size: f64,
    /// PML thickness on the lateral and bottom faces (m).
    pub pml_thickness: f64,
}

fn integer_ratio(value: f64, unit: f64, what: &str) -> Result<usize> {
    let ratio = value / unit;
    let rounded = ratio.round();
    if (ratio - rounded).abs() > 1e-9 * ratio.abs().max(1.0) {
        return Err(FwiError::InvalidGrid(format!(
            "{what} = {value} m is not a multiple of the element size {unit} m"
        )));
    }
    Ok(rounded as usize)
}

impl GridSpec {
    pub fn new(rd_extent: [f64; 3], element_size: f64, pml_thickness: f64) -> Self {
        Self {
            rd_extent,
            element_size,
            pml_thickness,
        }
    }

    /// Checks the spec invariants. A zero PML is only accepted when
    /// `allow_no_pml` is set (all-regular reference meshes).
    pub fn validate(&self, allow_no_pml: bool) -> Result<()> {
        if !(self.element_size > 0.0) {
            return Err(FwiError::InvalidGrid("element size must be positive".into()));
        }
        for (axis, &l) in self.rd_extent.iter().enumerate() {
            if !(l > 0.0) {
                return Err(FwiError::InvalidGrid(format!(
                    "RD extent along axis {axis} must be positive"
                )));
            }
            integer_ratio(l, self.element_size, "RD extent")?;
        }
        if self.pml_thickness < 0.0 || (!allow_no_pml && self.pml_thickness == 0.0) {
            return Err(FwiError::InvalidGrid(
                "PML thickness must be at least one element".into(),
            ));
        }
        let n = integer_ratio(self.pml_thickness, self.element_size, "PML thickness")?;
        if n == 0 && !allow_no_pml {
            return Err(FwiError::InvalidGrid(
                "PML thickness must be at least one element".into(),
            ));
        }
        Ok(())
    }

    /// RD elements per axis.
    pub fn rd_elements(&self) -> [usize; 3] {
        let h = self.element_size;
        self.rd_extent.map(|l| (l / h).round() as usize)
    }

    /// PML elements across the layer thickness.
    pub fn pml_elements(&self) -> usize {
        (self.pml_thickness / self.element_size).round() as usize
    }

    /// Total elements per axis (x, y, z).
    pub fn element_counts(&self) -> [usize; 3] {
        let [nx, ny, nz] = self.rd_elements();
        let p = self.pml_elements();
        [nx + 2 * p, ny + 2 * p, nz + p]
    }

    /// Node lattice dimensions per axis.
    pub fn node_counts(&self) -> [usize; 3] {
        self.element_counts().map(|n| 2 * n + 1)
    }

    /// Lower corner of the whole box (m).
    pub fn box_min(&self) -> [f64; 3] {
        let l = self.pml_thickness;
        [
            -0.5 * self.rd_extent[0] - l,
            -0.5 * self.rd_extent[1] - l,
            -self.rd_extent[2] - l,
        ]
    }

    /// Upper corner of the whole box (m).
    pub fn box_max(&self) -> [f64; 3] {
        let l = self.pml_thickness;
        [0.5 * self.rd_extent[0] + l, 0.5 * self.rd_extent[1] + l, 0.0]
    }

    /// Lower corner of the RD box (m).
    pub fn rd_min(&self) -> [f64; 3] {
        [-0.5 * self.rd_extent[0], -0.5 * self.rd_extent[1], -self.rd_extent[2]]
    }

    /// Upper corner of the RD box (m).
    pub fn rd_max(&self) -> [f64; 3] {
        [0.5 * self.rd_extent[0], 0.5 * self.rd_extent[1], 0.0]
    }

    /// Same geometry with every length halved per element (`factor` = 2 halves the element size).
    pub fn refined(&self, factor: usize) -> GridSpec {
        GridSpec {
            element_size: self.element_size / factor as f64,
            ..*self
        }
    }

    /// DOF bookkeeping derived from the spec alone, without allocating a mesh.
    pub fn dof_counts(&self, stress_space: StressSpace) -> DofCounts {
        let [nx, ny, nz] = self.node_counts();
        let [ex, ey, ez] = self.element_counts();
        let [rx, ry, rz] = self.rd_elements();
        let p = self.pml_elements();
        let nodes = nx * ny * nz;
        let interior = (nx - 2) * (ny - 2) * (nz - 1);
        let dirichlet_nodes = nodes - interior;
        let rd_nodes = (2 * rx + 1) * (2 * ry + 1) * (2 * rz + 1);
        // RD closure minus the interface (lateral faces and bottom face)
        let rd_open = (2 * rx - 1) * (2 * ry - 1) * (2 * rz);
        let pml_nodes = if p == 0 { 0 } else { nodes - rd_open };
        let pml_elements = ex * ey * ez - rx * ry * rz;
        let displacement_dofs = 3 * (nodes - dirichlet_nodes);
        let stress_dofs = match stress_space {
            StressSpace::Continuous => STRESS_COMPONENTS * pml_nodes,
            StressSpace::ElementLocal => STRESS_COMPONENTS * NODES_PER_ELEMENT * pml_elements,
        };
        DofCounts {
            elements: ex * ey * ez,
            pml_elements,
            nodes,
            dirichlet_nodes,
            rd_nodes,
            pml_nodes,
            displacement_dofs,
            stress_dofs,
            state_dim: displacement_dofs + stress_dofs,
            material_parameters: 2 * rd_nodes,
        }
    }
}

/// Counts reported by `info` and checked against built meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofCounts {
    pub elements: usize,
    pub pml_elements: usize,
    pub nodes: usize,
    pub dirichlet_nodes: usize,
    pub rd_nodes: usize,
    pub pml_nodes: usize,
    pub displacement_dofs: usize,
    pub stress_dofs: usize,
    pub state_dim: usize,
    pub material_parameters: usize,
}

impl DofCounts {
    /// Bytes of one state triple (history, solution, rate) in f64.
    pub fn state_triple_bytes(&self) -> u64 {
        3 * 8 * self.state_dim as u64
    }

    /// Bytes of one RD displacement snapshot.
    pub fn snapshot_bytes(&self) -> u64 {
        3 * 8 * self.rd_nodes as u64
    }
}

/// 1D Lagrange basis on the Legendre-Gauss-Lobatto points.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis1D {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `shape_at_nodes[q][a]` = value of basis `a` at node `q`.
    pub shape_at_nodes: Vec<Vec<f64>>,
    /// `dshape_at_nodes[q][a]` = derivative of basis `a` at node `q`.
    pub dshape_at_nodes: Vec<Vec<f64>>,
}

/// Returns the LGL basis for the requested order; only order 2 is supported.
pub fn lgl_basis(order: usize) -> Result<Basis1D> {
    if order != 2 {
        return Err(FwiError::UnsupportedOrder(order));
    }
    let nodes = vec![-1.0, 0.0, 1.0];
    let weights = vec![1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0];
    let shape_at_nodes = nodes
        .iter()
        .map(|&x| (0..nodes.len()).map(|a| lagrange(&nodes, a, x)).collect())
        .collect();
    let dshape_at_nodes = nodes
        .iter()
        .map(|&x| (0..nodes.len()).map(|a| lagrange_derivative(&nodes, a, x)).collect())
        .collect();
    Ok(Basis1D {
        order,
        nodes,
        weights,
        shape_at_nodes,
        dshape_at_nodes,
    })
}

impl Basis1D {
    /// Basis values at an arbitrary reference coordinate.
    pub fn shape(&self, xi: f64) -> Vec<f64> {
        (0..self.nodes.len()).map(|a| lagrange(&self.nodes, a, xi)).collect()
    }

    /// Basis derivatives at an arbitrary reference coordinate.
    pub fn dshape(&self, xi: f64) -> Vec<f64> {
        (0..self.nodes.len())
            .map(|a| lagrange_derivative(&self.nodes, a, xi))
            .collect()
    }

    /// Quadrature of `f` over [-1, 1].
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Derivative matrix as a fixed-size array, `d[q][a]`.
    pub fn derivative_matrix(&self) -> [[f64; 3]; 3] {
        let mut d = [[0.0; 3]; 3];
        for q in 0..3 {
            for a in 0..3 {
                d[q][a] = self.dshape_at_nodes[q][a];
            }
        }
        d
    }
}

fn lagrange(nodes: &[f64], a: usize, x: f64) -> f64 {
    nodes
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != a)
        .map(|(_, &xm)| (x - xm) / (nodes[a] - xm))
        .product()
}

fn lagrange_derivative(nodes: &[f64], a: usize, x: f64) -> f64 {
    let mut sum = 0.0;
    for (m, &xm) in nodes.iter().enumerate() {
        if m == a {
            continue;
        }
        let mut term = 1.0 / (nodes[a] - xm);
        for (l, &xl) in nodes.iter().enumerate() {
            if l != a && l != m {
                term *= (x - xl) / (nodes[a] - xl);
            }
        }
        sum += term;
    }
    sum
}

/// Region tag of an element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Regular,
    /// PML element; `axes[i]` is true when stretching along axis `i` is active.
    Pml { axes: [bool; 3] },
}

impl Region {
    pub fn is_pml(&self) -> bool {
        matches!(self, Region::Pml { .. })
    }
}

/// How PML stress unknowns are shared between elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressSpace {
    /// One set of 6 components per node of the PML closure (continuous).
    #[default]
    Continuous,
    /// Independent components per element node (discontinuous L2 field).
    ElementLocal,
}

/// Construction switches; the defaults give the production layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshOptions {
    /// Treat every element as regular (reference runs without absorbing layer).
    pub regular_everywhere: bool,
    /// Fix displacements on the outer lateral and bottom faces.
    pub clamp_outer: bool,
    pub stress_space: StressSpace,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self {
            regular_everywhere: false,
            clamp_outer: true,
            stress_space: StressSpace::Continuous,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Element {
    pub nodes: [u32; NODES_PER_ELEMENT],
    pub region: Region,
    /// Element index along each axis.
    pub index: [usize; 3],
}

pub mod node_flags {
    pub const RD: u8 = 1;
    pub const PML: u8 = 2;
    pub const DIRICHLET: u8 = 4;
    pub const FREE_SURFACE: u8 = 8;
    pub const INTERFACE: u8 = 16;
}

/// The assembled grid with region tags and DOF numbering.
#[derive(Debug, Clone)]
pub struct SpectralMesh {
    pub spec: GridSpec,
    pub options: MeshOptions,
    pub basis: Basis1D,
    pub element_counts: [usize; 3],
    pub node_counts: [usize; 3],
    pub coords: Vec<[f64; 3]>,
    pub elements: Vec<Element>,
    pub flags: Vec<u8>,
    /// First displacement DOF of each node, `NO_DOF` for clamped nodes.
    pub displacement_dof: Vec<u32>,
    /// First stress DOF of each element node (PML elements only; `NO_DOF` elsewhere).
    pub element_stress_dof: Vec<[u32; NODES_PER_ELEMENT]>,
    pub n_displacement_dofs: usize,
    pub n_stress_dofs: usize,
    /// RD closure nodes, i.e. the material (control) nodes.
    pub rd_nodes: Vec<u32>,
    /// Position of each node in `rd_nodes`, `NO_DOF` outside the RD closure.
    pub rd_index: Vec<u32>,
}

impl SpectralMesh {
    pub fn state_dim(&self) -> usize {
        self.n_displacement_dofs + self.n_stress_dofs
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn node_id(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.node_counts[0] * (j + self.node_counts[1] * k)
    }

    /// Lattice indices of a node.
    pub fn node_ijk(&self, node: usize) -> [usize; 3] {
        let nx = self.node_counts[0];
        let ny = self.node_counts[1];
        [node % nx, (node / nx) % ny, node / (nx * ny)]
    }

    pub fn has_flag(&self, node: usize, flag: u8) -> bool {
        self.flags[node] & flag != 0
    }

    pub fn is_rd_node(&self, node: usize) -> bool {
        self.has_flag(node, node_flags::RD)
    }

    /// Nodes strictly inside the PML (not on the RD closure).
    pub fn is_pml_interior_node(&self, node: usize) -> bool {
        !self.is_rd_node(node)
    }

    /// `Γ_D^PML`: clamped outer boundary.
    pub fn dirichlet_nodes(&self) -> Vec<u32> {
        self.nodes_with(|m, n| m.has_flag(n, node_flags::DIRICHLET))
    }

    /// `Γ_N^RD`: free surface of the regular domain.
    pub fn free_surface_rd_nodes(&self) -> Vec<u32> {
        self.nodes_with(|m, n| {
            m.has_flag(n, node_flags::FREE_SURFACE) && m.has_flag(n, node_flags::RD)
        })
    }

    /// `Γ_N^PML`: free surface of the PML (interior of the PML surface strip).
    pub fn free_surface_pml_nodes(&self) -> Vec<u32> {
        self.nodes_with(|m, n| {
            m.has_flag(n, node_flags::FREE_SURFACE) && !m.has_flag(n, node_flags::RD)
        })
    }

    /// `Γ^I`: RD–PML interface.
    pub fn interface_nodes(&self) -> Vec<u32> {
        self.nodes_with(|m, n| m.has_flag(n, node_flags::INTERFACE))
    }

    fn nodes_with(&self, pred: impl Fn(&Self, usize) -> bool) -> Vec<u32> {
        (0..self.n_nodes())
            .filter(|&n| pred(self, n))
            .map(|n| n as u32)
            .collect()
    }

    /// Returns the node coincident with `point` within `1e-9 * element_size`.
    pub fn locate_node(&self, point: [f64; 3]) -> Result<usize> {
        let h2 = 0.5 * self.spec.element_size;
        let lo = self.spec.box_min();
        let tol = 1e-9 * self.spec.element_size;
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let s = (point[a] - lo[a]) / h2;
            let r = s.round();
            if (s - r).abs() * h2 > tol || r < 0.0 || r as usize >= self.node_counts[a] {
                return Err(FwiError::NodeNotFound {
                    x: point[0],
                    y: point[1],
                    z: point[2],
                });
            }
            ijk[a] = r as usize;
        }
        Ok(self.node_id(ijk[0], ijk[1], ijk[2]))
    }

    /// Free-surface nodes inside the rectangle `[xmin, xmax] x [ymin, ymax]`.
    /// With `corners_only`, mid-edge and mid-face nodes are skipped.
    pub fn surface_nodes_in_patch(&self, patch: [f64; 4], corners_only: bool) -> Vec<u32> {
        let tol = 1e-9 * self.spec.element_size;
        let k = self.node_counts[2] - 1;
        let mut out = Vec::new();
        for j in 0..self.node_counts[1] {
            for i in 0..self.node_counts[0] {
                if corners_only && (i % 2 == 1 || j % 2 == 1) {
                    continue;
                }
                let n = self.node_id(i, j, k);
                let [x, y, _] = self.coords[n];
                if x >= patch[0] - tol && x <= patch[1] + tol && y >= patch[2] - tol && y <= patch[3] + tol
                {
                    out.push(n as u32);
                }
            }
        }
        out
    }

    /// Free-surface nodes of the whole RD top face.
    pub fn rd_surface_nodes(&self) -> Vec<u32> {
        let lo = self.spec.rd_min();
        let hi = self.spec.rd_max();
        self.surface_nodes_in_patch([lo[0], hi[0], lo[1], hi[1]], false)
    }

    /// State-vector mask of the entries that carry history (PML closure).
    pub fn history_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.state_dim()];
        for n in 0..self.n_nodes() {
            let d = self.displacement_dof[n];
            if d != NO_DOF && self.has_flag(n, node_flags::PML) {
                for c in 0..3 {
                    mask[d as usize + c] = true;
                }
            }
        }
        for m in mask.iter_mut().skip(self.n_displacement_dofs) {
            *m = true;
        }
        mask
    }

    /// Counts of this mesh, comparable to [`GridSpec::dof_counts`].
    pub fn dof_counts(&self) -> DofCounts {
        let pml_elements = self.elements.iter().filter(|e| e.region.is_pml()).count();
        let dirichlet_nodes = self.dirichlet_nodes().len();
        let pml_nodes = (0..self.n_nodes())
            .filter(|&n| self.has_flag(n, node_flags::PML))
            .count();
        DofCounts {
            elements: self.elements.len(),
            pml_elements,
            nodes: self.n_nodes(),
            dirichlet_nodes,
            rd_nodes: self.rd_nodes.len(),
            pml_nodes,
            displacement_dofs: self.n_displacement_dofs,
            stress_dofs: self.n_stress_dofs,
            state_dim: self.state_dim(),
            material_parameters: 2 * self.rd_nodes.len(),
        }
    }
}

/// Builds the production mesh (PML on five faces, clamped outer boundary).
pub fn build_mesh(spec: GridSpec) -> Result<SpectralMesh> {
    build_mesh_with(spec, MeshOptions::default())
}

pub fn build_mesh_with(spec: GridSpec, options: MeshOptions) -> Result<SpectralMesh> {
    spec.validate(options.regular_everywhere)?;
    let basis = lgl_basis(2)?;
    let element_counts = spec.element_counts();
    let node_counts = spec.node_counts();
    let [enx, eny, enz] = element_counts;
    let [nnx, nny, nnz] = node_counts;
    let [rnx, rny, _] = spec.rd_elements();
    let p = spec.pml_elements();
    let h2 = 0.5 * spec.element_size;
    let lo = spec.box_min();

    let n_nodes = nnx * nny * nnz;
    let mut coords = Vec::with_capacity(n_nodes);
    for k in 0..nnz {
        for j in 0..nny {
            for i in 0..nnx {
                coords.push([
                    lo[0] + i as f64 * h2,
                    lo[1] + j as f64 * h2,
                    lo[2] + k as f64 * h2,
                ]);
            }
        }
    }
    // the top row sits exactly on z = 0
    for k in [nnz - 1] {
        for j in 0..nny {
            for i in 0..nnx {
                coords[i + nnx * (j + nny * k)][2] = 0.0;
            }
        }
    }

    // RD closure in lattice indices
    let rd_lo = [2 * p, 2 * p, 2 * p];
    let rd_hi = [2 * (p + rnx), 2 * (p + rny), nnz - 1];
    let regular_everywhere = options.regular_everywhere || p == 0;

    let mut flags = vec![0u8; n_nodes];
    for k in 0..nnz {
        for j in 0..nny {
            for i in 0..nnx {
                let n = i + nnx * (j + nny * k);
                let ijk = [i, j, k];
                let in_rd = (0..3).all(|a| ijk[a] >= rd_lo[a] && ijk[a] <= rd_hi[a]);
                let strictly_rd = (0..2).all(|a| ijk[a] > rd_lo[a] && ijk[a] < rd_hi[a]) && k > rd_lo[2];
                let mut f = 0u8;
                if regular_everywhere {
                    f |= node_flags::RD;
                } else {
                    if in_rd {
                        f |= node_flags::RD;
                    }
                    if !strictly_rd {
                        f |= node_flags::PML;
                    }
                    if in_rd && !strictly_rd {
                        f |= node_flags::INTERFACE;
                    }
                }
                if options.clamp_outer && (i == 0 || i == nnx - 1 || j == 0 || j == nny - 1 || k == 0) {
                    f |= node_flags::DIRICHLET;
                }
                if k == nnz - 1 {
                    f |= node_flags::FREE_SURFACE;
                }
                flags[n] = f;
            }
        }
    }

    let mut elements = Vec::with_capacity(enx * eny * enz);
    for ez in 0..enz {
        for ey in 0..eny {
            for ex in 0..enx {
                let mut nodes = [0u32; NODES_PER_ELEMENT];
                for c in 0..3 {
                    for b in 0..3 {
                        for a in 0..3 {
                            let n = (2 * ex + a) + nnx * ((2 * ey + b) + nny * (2 * ez + c));
                            nodes[a + 3 * b + 9 * c] = n as u32;
                        }
                    }
                }
                let axes = [
                    ex < p || ex >= p + rnx,
                    ey < p || ey >= p + rny,
                    ez < p,
                ];
                let region = if !regular_everywhere && axes.iter().any(|&x| x) {
                    Region::Pml { axes }
                } else {
                    Region::Regular
                };
                elements.push(Element {
                    nodes,
                    region,
                    index: [ex, ey, ez],
                });
            }
        }
    }

    let mut displacement_dof = vec![NO_DOF; n_nodes];
    let mut next = 0u32;
    for n in 0..n_nodes {
        if flags[n] & node_flags::DIRICHLET == 0 {
            displacement_dof[n] = next;
            next += 3;
        }
    }
    let n_displacement_dofs = next as usize;

    let mut element_stress_dof = vec![[NO_DOF; NODES_PER_ELEMENT]; elements.len()];
    let mut next = n_displacement_dofs as u32;
    match options.stress_space {
        StressSpace::Continuous => {
            let mut node_stress = vec![NO_DOF; n_nodes];
            for n in 0..n_nodes {
                if flags[n] & node_flags::PML != 0 {
                    node_stress[n] = next;
                    next += STRESS_COMPONENTS as u32;
                }
            }
            for (e, el) in elements.iter().enumerate() {
                if el.region.is_pml() {
                    for (l, &n) in el.nodes.iter().enumerate() {
                        element_stress_dof[e][l] = node_stress[n as usize];
                    }
                }
            }
        }
        StressSpace::ElementLocal => {
            for (e, el) in elements.iter().enumerate() {
                if el.region.is_pml() {
                    for l in 0..NODES_PER_ELEMENT {
                        element_stress_dof[e][l] = next;
                        next += STRESS_COMPONENTS as u32;
                    }
                }
            }
        }
    }
    let n_stress_dofs = next as usize - n_displacement_dofs;

    let mut rd_nodes = Vec::new();
    let mut rd_index = vec![NO_DOF; n_nodes];
    for n in 0..n_nodes {
        if flags[n] & node_flags::RD != 0 {
            rd_index[n] = rd_nodes.len() as u32;
            rd_nodes.push(n as u32);
        }
    }

    Ok(SpectralMesh {
        spec,
        options,
        basis,
        element_counts,
        node_counts,
        coords,
        elements,
        flags,
        displacement_dof,
        element_stress_dof,
        n_displacement_dofs,
        n_stress_dofs,
        rd_nodes,
        rd_index,
    })
}
