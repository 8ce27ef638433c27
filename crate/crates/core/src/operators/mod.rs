//! Diagonal mass and matrix-free C, K, G (and transposes) on the spectral mesh.

pub(crate) mod kernel;
mod load;

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{FwiError, Result};
use crate::medium::{coefficients_at, MaterialField, StretchProfile};
use crate::specgrid::{Region, SpectralMesh, NO_DOF};

pub use load::{assemble_force, gaussian_pulse, LoadCase, Pulse, PulseReading};

use kernel::{Derivative, Field, PmlElement, RegularElement};

/// Operators that can be applied to a state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    MassInverse,
    C,
    K,
    G,
    CT,
    KT,
    GT,
}

impl Operator {
    pub const ALL: [Operator; 7] = [
        Operator::MassInverse,
        Operator::C,
        Operator::K,
        Operator::G,
        Operator::CT,
        Operator::KT,
        Operator::GT,
    ];
}

/// Assembled diagonal mass and per-element tabulated data.
pub struct OperatorSet {
    mesh: Arc<SpectralMesh>,
    der: Derivative,
    regular: Vec<RegularElement>,
    pml: Vec<PmlElement>,
    /// Element batches without shared nodes: (regular ids, PML ids) per colour.
    colors: Vec<(Vec<u32>, Vec<u32>)>,
    pub mass_diag: Vec<f64>,
    pub inv_mass_diag: Vec<f64>,
    history: Vec<bool>,
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for OperatorSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorSet")
            .field("state_dim", &self.state_dim())
            .field("regular_elements", &self.regular.len())
            .field("pml_elements", &self.pml.len())
            .finish()
    }
}

/// Raw pointer shared across workers of one colour; colours never write the same entry.
#[derive(Clone, Copy)]
struct SharedOut(*mut f64);
unsafe impl Send for SharedOut {}
unsafe impl Sync for SharedOut {}

impl OperatorSet {
    /// Tabulates element data. `materials` must already be extended into the PML.
    pub fn assemble(
        mesh: Arc<SpectralMesh>,
        materials: &MaterialField,
        profile: &StretchProfile,
    ) -> Result<Self> {
        let n = mesh.n_nodes();
        for (name, len) in [
            ("lambda", materials.lambda.len()),
            ("mu", materials.mu.len()),
            ("rho", materials.rho.len()),
        ] {
            if len != n {
                log::error!("material array {name} has {len} entries for {n} nodes");
                return Err(FwiError::DimensionMismatch { expected: n, got: len });
            }
        }
        materials.validate()?;
        profile.validate()?;

        let basis = &mesh.basis;
        let der = Derivative::new(basis.derivative_matrix(), mesh.spec.element_size);
        let jac = (0.5 * mesh.spec.element_size).powi(3);
        let mut wq = [0.0; 27];
        for c in 0..3 {
            for b in 0..3 {
                for a in 0..3 {
                    wq[a + 3 * b + 9 * c] = basis.weights[a] * basis.weights[b] * basis.weights[c] * jac;
                }
            }
        }

        let mut mass_diag = vec![0.0; mesh.state_dim()];
        let mut regular = Vec::new();
        let mut pml = Vec::new();
        let mut color_of = Vec::with_capacity(mesh.elements.len());

        for (e, el) in mesh.elements.iter().enumerate() {
            let mut disp = [NO_DOF; 27];
            for (q, &node) in el.nodes.iter().enumerate() {
                disp[q] = mesh.displacement_dof[node as usize];
            }
            let mut w_lambda = [0.0; 27];
            let mut w_mu = [0.0; 27];
            for (q, &node) in el.nodes.iter().enumerate() {
                w_lambda[q] = wq[q] * materials.lambda[node as usize];
                w_mu[q] = wq[q] * materials.mu[node as usize];
            }
            let [ix, iy, iz] = el.index;
            let color = (ix % 2) + 2 * (iy % 2) + 4 * (iz % 2);
            match el.region {
                Region::Regular => {
                    for (q, &node) in el.nodes.iter().enumerate() {
                        let d = disp[q];
                        if d != NO_DOF {
                            let m = wq[q] * materials.rho[node as usize];
                            for c in 0..3 {
                                mass_diag[d as usize + c] += m;
                            }
                        }
                    }
                    color_of.push((color, false, regular.len() as u32));
                    regular.push(RegularElement { disp, w_lambda, w_mu });
                }
                Region::Pml { .. } => {
                    let stress = mesh.element_stress_dof[e];
                    let mut data = PmlElement {
                        disp,
                        stress,
                        w: wq,
                        w_lambda,
                        w_mu,
                        disp_diag: [[0.0; 27]; 3],
                        stress_diag: [[0.0; 27]; 3],
                        stretch: [[[0.0; 3]; 27]; 3],
                    };
                    for (q, &node) in el.nodes.iter().enumerate() {
                        let node = node as usize;
                        let co = coefficients_at(profile, &mesh.spec, mesh.coords[node]);
                        let rho = materials.rho[node];
                        let w = wq[q];
                        for (o, x) in [co.b, co.c, co.d].into_iter().enumerate() {
                            data.disp_diag[o][q] = w * rho * x;
                            data.stress_diag[o][q] = w * x;
                        }
                        data.stretch[0][q] = co.lambda_e;
                        data.stretch[1][q] = co.lambda_p;
                        data.stretch[2][q] = co.lambda_w;
                        if disp[q] != NO_DOF {
                            for c in 0..3 {
                                mass_diag[disp[q] as usize + c] += w * rho * co.a;
                            }
                        }
                        for c in 0..6 {
                            mass_diag[stress[q] as usize + c] += w * co.a;
                        }
                    }
                    color_of.push((color, true, pml.len() as u32));
                    pml.push(data);
                }
            }
        }

        let mut colors = vec![(Vec::new(), Vec::new()); 8];
        for (color, is_pml, idx) in color_of {
            if is_pml {
                colors[color].1.push(idx);
            } else {
                colors[color].0.push(idx);
            }
        }
        colors.retain(|(r, p)| !r.is_empty() || !p.is_empty());

        let mut inv_mass_diag = Vec::with_capacity(mass_diag.len());
        for (i, &m) in mass_diag.iter().enumerate() {
            if !(m > 0.0) || !m.is_finite() {
                return Err(FwiError::InvalidMaterial(format!(
                    "non-positive mass {m:e} at state index {i}"
                )));
            }
            inv_mass_diag.push(1.0 / m);
        }

        let history = mesh.history_mask();
        Ok(Self {
            mesh,
            history,
            der,
            regular,
            pml,
            colors,
            mass_diag,
            inv_mass_diag,
            pool: None,
        })
    }

    /// Uses `workers` threads for element loops (1 = sequential, the default).
    pub fn with_workers(mut self, workers: usize) -> Result<Self> {
        self.pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| FwiError::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(self)
    }

    pub fn mesh(&self) -> &SpectralMesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<SpectralMesh> {
        &self.mesh
    }

    pub fn state_dim(&self) -> usize {
        self.mass_diag.len()
    }

    /// State entries that carry a history integral (PML closure).
    pub fn history_mask(&self) -> &[bool] {
        &self.history
    }

    pub fn n_displacement_dofs(&self) -> usize {
        self.mesh.n_displacement_dofs
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.state_dim() {
            return Err(FwiError::DimensionMismatch {
                expected: self.state_dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Applies one operator to `v`.
    pub fn apply(&self, op: Operator, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let mut out = vec![0.0; v.len()];
        match op {
            Operator::MassInverse => {
                for ((o, x), m) in out.iter_mut().zip(v).zip(&self.inv_mass_diag) {
                    *o = x * m;
                }
            }
            Operator::C => self.apply_combined([Some((v, 1.0)), None, None], false, &mut out),
            Operator::K => self.apply_combined([None, Some((v, 1.0)), None], false, &mut out),
            Operator::G => self.apply_combined([None, None, Some((v, 1.0))], false, &mut out),
            Operator::CT => self.apply_combined([Some((v, 1.0)), None, None], true, &mut out),
            Operator::KT => self.apply_combined([None, Some((v, 1.0)), None], true, &mut out),
            Operator::GT => self.apply_combined([None, None, Some((v, 1.0))], true, &mut out),
        }
        Ok(out)
    }

    /// `out = M v`.
    pub fn apply_mass(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.mass_diag).map(|(x, m)| x * m).collect()
    }

    /// Overwrites `out` with `s_C C x_C + s_K K x_K + s_G G x_G` (or the transposes).
    /// Each input is `(vector, scale)`; absent inputs contribute nothing.
    pub fn apply_combined(
        &self,
        inputs: [Option<(&[f64], f64)>; 3],
        transpose: bool,
        out: &mut [f64],
    ) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let shared = SharedOut(out.as_mut_ptr());
        for (reg_ids, pml_ids) in &self.colors {
            let run = || {
                let reg = |&i: &u32| unsafe { self.regular_element(i as usize, &inputs, shared) };
                let pm = |&i: &u32| unsafe { self.pml_element(i as usize, &inputs, transpose, shared) };
                if self.pool.is_some() {
                    reg_ids.par_iter().for_each(reg);
                    pml_ids.par_iter().for_each(pm);
                } else {
                    reg_ids.iter().for_each(reg);
                    pml_ids.iter().for_each(pm);
                }
            };
            match &self.pool {
                Some(pool) => pool.install(run),
                None => run(),
            }
        }
    }

    /// # Safety
    /// Elements of one colour share no DOFs, so concurrent calls never alias writes.
    unsafe fn regular_element(&self, e: usize, inputs: &[Option<(&[f64], f64)>; 3], out: SharedOut) {
        // Only K is nonzero in the regular domain, and it is symmetric.
        let Some((x, scale)) = inputs[1] else { return };
        let el = &self.regular[e];
        let mut u = [[0.0; 27]; 3];
        for q in 0..27 {
            let d = el.disp[q];
            if d != NO_DOF {
                for c in 0..3 {
                    u[c][q] = scale * x[d as usize + c];
                }
            }
        }
        let mut r = [[0.0; 27]; 3];
        el.stiffness(&self.der, &u, &mut r);
        for q in 0..27 {
            let d = el.disp[q];
            if d != NO_DOF {
                for c in 0..3 {
                    *out.0.add(d as usize + c) += r[c][q];
                }
            }
        }
    }

    /// # Safety
    /// See [`OperatorSet::regular_element`].
    unsafe fn pml_element(
        &self,
        e: usize,
        inputs: &[Option<(&[f64], f64)>; 3],
        transpose: bool,
        out: SharedOut,
    ) {
        let el = &self.pml[e];
        let mut local: [Option<([Field; 3], [Field; 6])>; 3] = [None, None, None];
        for (o, input) in inputs.iter().enumerate() {
            if let Some((x, scale)) = input {
                let mut u = [[0.0; 27]; 3];
                let mut s = [[0.0; 27]; 6];
                for q in 0..27 {
                    let d = el.disp[q];
                    if d != NO_DOF {
                        for c in 0..3 {
                            u[c][q] = scale * x[d as usize + c];
                        }
                    }
                    let sd = el.stress[q] as usize;
                    for c in 0..6 {
                        s[c][q] = scale * x[sd + c];
                    }
                }
                local[o] = Some((u, s));
            }
        }
        let mut ru = [[0.0; 27]; 3];
        let mut rs = [[0.0; 27]; 6];
        if transpose {
            el.apply_transpose(&self.der, &local, &mut ru, &mut rs);
        } else {
            el.apply(&self.der, &local, &mut ru, &mut rs);
        }
        for q in 0..27 {
            let d = el.disp[q];
            if d != NO_DOF {
                for c in 0..3 {
                    *out.0.add(d as usize + c) += ru[c][q];
                }
            }
            let sd = el.stress[q] as usize;
            for c in 0..6 {
                *out.0.add(sd + c) += rs[c][q];
            }
        }
    }

    /// Strain energy `1/2 u^T K_RD u` of the regular-domain elements.
    pub fn rd_strain_energy(&self, x1: &[f64]) -> f64 {
        let mut total = 0.0;
        for el in &self.regular {
            let mut u = [[0.0; 27]; 3];
            for q in 0..27 {
                let d = el.disp[q];
                if d != NO_DOF {
                    for c in 0..3 {
                        u[c][q] = x1[d as usize + c];
                    }
                }
            }
            let mut r = [[0.0; 27]; 3];
            el.stiffness(&self.der, &u, &mut r);
            for c in 0..3 {
                for q in 0..27 {
                    total += 0.5 * u[c][q] * r[c][q];
                }
            }
        }
        total
    }

    /// Kinetic energy `1/2 int_RD rho |v|^2` by nodal quadrature over regular elements.
    pub fn rd_kinetic_energy(&self, x2: &[f64], materials: &MaterialField) -> f64 {
        let mut total = 0.0;
        for el in self.mesh.elements.iter().filter(|e| !e.region.is_pml()) {
            for (q, &node) in el.nodes.iter().enumerate() {
                let d = self.mesh.displacement_dof[node as usize];
                if d == NO_DOF {
                    continue;
                }
                let w = self.quadrature_weight(q) * materials.rho[node as usize];
                for c in 0..3 {
                    let v = x2[d as usize + c];
                    total += 0.5 * w * v * v;
                }
            }
        }
        total
    }

    fn quadrature_weight(&self, q: usize) -> f64 {
        let w = &self.mesh.basis.weights;
        let jac = (0.5 * self.mesh.spec.element_size).powi(3);
        w[q % 3] * w[(q / 3) % 3] * w[q / 9] * jac
    }

    /// Dense matrix of an operator, column by column (tiny meshes only).
    pub fn dense(&self, op: Operator) -> Result<Vec<Vec<f64>>> {
        let n = self.state_dim();
        let mut cols = Vec::with_capacity(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            cols.push(self.apply(op, &e)?);
            e[j] = 0.0;
        }
        let mut rows = vec![vec![0.0; n]; n];
        for (j, col) in cols.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                rows[i][j] = v;
            }
        }
        Ok(rows)
    }
}

/// Consistent displacement mass `int rho phi_a phi_b` assembled with nodal LGL
/// quadrature, as a dense matrix over displacement DOFs (tiny meshes only).
pub fn consistent_mass_matrix(mesh: &SpectralMesh, materials: &MaterialField) -> Vec<Vec<f64>> {
    let n = mesh.n_displacement_dofs;
    let mut m = vec![vec![0.0; n]; n];
    let basis = &mesh.basis;
    let jac = (0.5 * mesh.spec.element_size).powi(3);
    let phi = |a: usize, q: usize| -> f64 {
        basis.shape_at_nodes[q % 3][a % 3]
            * basis.shape_at_nodes[(q / 3) % 3][(a / 3) % 3]
            * basis.shape_at_nodes[q / 9][a / 9]
    };
    for el in &mesh.elements {
        for q in 0..27 {
            let w = basis.weights[q % 3] * basis.weights[(q / 3) % 3] * basis.weights[q / 9] * jac;
            let rho = materials.rho[el.nodes[q] as usize];
            for a in 0..27 {
                let da = mesh.displacement_dof[el.nodes[a] as usize];
                if da == NO_DOF {
                    continue;
                }
                for b in 0..27 {
                    let db = mesh.displacement_dof[el.nodes[b] as usize];
                    if db == NO_DOF {
                        continue;
                    }
                    let v = w * rho * phi(a, q) * phi(b, q);
                    for c in 0..3 {
                        m[da as usize + c][db as usize + c] += v;
                    }
                }
            }
        }
    }
    m
}

/// Stable time step `cfl * (h/2) / max c_p`.
pub fn estimate_stable_dt(mesh: &SpectralMesh, materials: &MaterialField, cfl: f64) -> Result<f64> {
    let (_, cp) = crate::medium::velocities(materials)?;
    let max_cp = cp.iter().cloned().fold(0.0, f64::max);
    if !(max_cp > 0.0) {
        return Err(FwiError::InvalidMaterial("zero wave speed".into()));
    }
    Ok(cfl * 0.5 * mesh.spec.element_size / max_cp)
}

/// Default Courant number for [`estimate_stable_dt`].
pub const DEFAULT_CFL: f64 = 0.7;
