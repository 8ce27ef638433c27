//! Reduced gradients with respect to nodal λ and μ over the regular domain.
//!
//! Material vectors live on the RD closure nodes, in `mesh.rd_nodes` order.
//! The χ basis is the displacement basis, so every quadrature point is a node
//! and the mass-like matrix `M~` is diagonal.
//!
//! ```text
//! g_mis_lambda = -int_0^T int (div w)(div u)
//! g_mis_mu     = -int_0^T int grad u : (grad w + grad w^T)
//! g            = M~^-1 (R g_reg + g_mis)
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{FwiError, Result};
use crate::forward::{SnapshotStore, TimeRule};
use crate::operators::kernel::{Derivative, Field};
use crate::specgrid::{Region, SpectralMesh, NO_DOF};

/// Regularization functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    /// Tikhonov: `(R/2) int |grad f|^2`.
    #[default]
    Tn,
    /// Total variation: `(R/2) int (|grad f|^2 + eps)^(1/2)`.
    Tv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationSpec {
    pub kind: RegKind,
    /// TV smoothing, unused for TN.
    pub epsilon: f64,
    pub r_lambda: f64,
    pub r_mu: f64,
}

impl Default for RegularizationSpec {
    fn default() -> Self {
        Self {
            kind: RegKind::Tn,
            epsilon: 0.01,
            r_lambda: 0.0,
            r_mu: 0.0,
        }
    }
}

impl RegularizationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kind == RegKind::Tv && !(self.epsilon > 0.0) {
            return Err(FwiError::Config(format!("TV epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.r_lambda >= 0.0) || !(self.r_mu >= 0.0) {
            return Err(FwiError::Config("regularization factors must be non-negative".into()));
        }
        Ok(())
    }
}

/// Gradients on RD material nodes plus the parts they were built from.
#[derive(Debug, Clone, Default)]
pub struct GradientPair {
    pub g_lambda: Vec<f64>,
    pub g_mu: Vec<f64>,
    pub mis_lambda: Vec<f64>,
    pub mis_mu: Vec<f64>,
    pub reg_lambda: Vec<f64>,
    pub reg_mu: Vec<f64>,
}

/// Quadrature data of the RD elements in material-vector numbering.
#[derive(Debug, Clone)]
pub struct MaterialSpace {
    elements: Vec<[u32; 27]>,
    weights: Field,
    der: Derivative,
    mass: Vec<f64>,
    n_nodes: usize,
}

impl MaterialSpace {
    pub fn new(mesh: &SpectralMesh) -> Self {
        let h = mesh.spec.element_size;
        let w1 = &mesh.basis.weights;
        let jac = (h / 2.0).powi(3);
        let mut weights = [0.0; 27];
        for c in 0..3 {
            for b in 0..3 {
                for a in 0..3 {
                    weights[a + 3 * b + 9 * c] = w1[a] * w1[b] * w1[c] * jac;
                }
            }
        }
        let elements: Vec<[u32; 27]> = mesh
            .elements
            .iter()
            .filter(|e| e.region == Region::Regular)
            .map(|e| e.nodes.map(|n| mesh.rd_index[n as usize]))
            .collect();
        debug_assert!(elements.iter().all(|e| e.iter().all(|&i| i != NO_DOF)));
        let mut mass = vec![0.0; mesh.rd_nodes.len()];
        for e in &elements {
            for q in 0..27 {
                mass[e[q] as usize] += weights[q];
            }
        }
        Self {
            elements,
            weights,
            der: Derivative::new(mesh.basis.derivative_matrix(), h),
            mass,
            n_nodes: mesh.rd_nodes.len(),
        }
    }

    /// Number of material nodes.
    pub fn len(&self) -> usize {
        self.n_nodes
    }

    pub fn is_empty(&self) -> bool {
        self.n_nodes == 0
    }

    /// Diagonal of `M~`.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// `int f` over the RD.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.mass).map(|(a, b)| a * b).sum()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_nodes {
            return Err(FwiError::DimensionMismatch {
                expected: self.n_nodes,
                got: v.len(),
            });
        }
        Ok(())
    }

    fn gather(e: &[u32; 27], v: &[f64]) -> Field {
        let mut f = [0.0; 27];
        for q in 0..27 {
            f[q] = v[e[q] as usize];
        }
        f
    }

    fn gather_vector(e: &[u32; 27], frame: &[f64]) -> [Field; 3] {
        let mut u = [[0.0; 27]; 3];
        for q in 0..27 {
            let n = e[q] as usize;
            for c in 0..3 {
                u[c][q] = frame[3 * n + c];
            }
        }
        u
    }

    /// Adds `weight * (-(div w)(div u), -grad u : (grad w + grad w^T))` to the
    /// misfit gradients. `u` and `w` are RD frames laid out as from
    /// [`crate::forward::rd_frame`].
    pub fn accumulate_misfit(
        &self,
        u: &[f64],
        w: &[f64],
        weight: f64,
        g_lambda: &mut [f64],
        g_mu: &mut [f64],
    ) {
        let mut gu = [[[0.0; 27]; 3]; 3];
        let mut gw = [[[0.0; 27]; 3]; 3];
        for e in &self.elements {
            let ue = Self::gather_vector(e, u);
            let we = Self::gather_vector(e, w);
            if we.iter().all(|c| c.iter().all(|&v| v == 0.0)) {
                continue;
            }
            self.der.grad_vector(&ue, &mut gu);
            self.der.grad_vector(&we, &mut gw);
            for q in 0..27 {
                let div_u = gu[0][0][q] + gu[1][1][q] + gu[2][2][q];
                let div_w = gw[0][0][q] + gw[1][1][q] + gw[2][2][q];
                let mut contraction = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        contraction += gu[i][j][q] * (gw[i][j][q] + gw[j][i][q]);
                    }
                }
                let s = weight * self.weights[q];
                let n = e[q] as usize;
                g_lambda[n] -= s * div_w * div_u;
                g_mu[n] -= s * contraction;
            }
        }
    }

    /// Regularization gradient of one field (without the factor R).
    pub fn reg_gradient(&self, f: &[f64], kind: RegKind, epsilon: f64) -> Result<Vec<f64>> {
        self.check_len(f)?;
        let mut g = vec![0.0; self.n_nodes];
        let (mut gx, mut gy, mut gz) = ([0.0; 27], [0.0; 27], [0.0; 27]);
        let shift = f.first().copied().unwrap_or(0.0);
        for e in &self.elements {
            let fe = Self::gather(e, f).map(|v| v - shift);
            self.der.grad(&fe, &mut gx, &mut gy, &mut gz);
            for q in 0..27 {
                let mut s = self.weights[q];
                if kind == RegKind::Tv {
                    s /= (gx[q] * gx[q] + gy[q] * gy[q] + gz[q] * gz[q] + epsilon).sqrt();
                }
                gx[q] *= s;
                gy[q] *= s;
                gz[q] *= s;
            }
            let mut out = [0.0; 27];
            self.der.grad_transpose_add(&gx, &gy, &gz, &mut out);
            for q in 0..27 {
                g[e[q] as usize] += out[q];
            }
        }
        Ok(g)
    }

    /// `int |grad f|^2` (TN) or `int (|grad f|^2 + eps)^(1/2)` (TV), without `R/2`.
    pub fn reg_integral(&self, f: &[f64], kind: RegKind, epsilon: f64) -> Result<f64> {
        self.check_len(f)?;
        let (mut gx, mut gy, mut gz) = ([0.0; 27], [0.0; 27], [0.0; 27]);
        let mut total = 0.0;
        // both functionals ignore constants; removing one keeps a homogeneous
        // field's gradient exactly zero instead of roundoff
        let shift = f.first().copied().unwrap_or(0.0);
        for e in &self.elements {
            let fe = Self::gather(e, f).map(|v| v - shift);
            self.der.grad(&fe, &mut gx, &mut gy, &mut gz);
            for q in 0..27 {
                let s2 = gx[q] * gx[q] + gy[q] * gy[q] + gz[q] * gz[q];
                total += self.weights[q]
                    * match kind {
                        RegKind::Tn => s2,
                        RegKind::Tv => (s2 + epsilon).sqrt(),
                    };
            }
        }
        Ok(total)
    }

    /// Regularization value for both fields.
    pub fn reg_value(&self, lambda: &[f64], mu: &[f64], spec: &RegularizationSpec) -> Result<f64> {
        let mut v = 0.0;
        if spec.r_lambda != 0.0 {
            v += 0.5 * spec.r_lambda * self.reg_integral(lambda, spec.kind, spec.epsilon)?;
        }
        if spec.r_mu != 0.0 {
            v += 0.5 * spec.r_mu * self.reg_integral(mu, spec.kind, spec.epsilon)?;
        }
        Ok(v)
    }

    /// `M~^-1 (R g_reg + g_mis)`.
    pub fn reduced_gradient(&self, g_mis: &[f64], g_reg: &[f64], r: f64) -> Result<Vec<f64>> {
        self.check_len(g_mis)?;
        self.check_len(g_reg)?;
        let mut g = Vec::with_capacity(self.n_nodes);
        for i in 0..self.n_nodes {
            let m = self.mass[i];
            if m == 0.0 {
                return Err(FwiError::SingularMass(i));
            }
            g.push((r * g_reg[i] + g_mis[i]) / m);
        }
        Ok(g)
    }

    /// `direction^T M~ g`.
    pub fn directional_derivative_co(&self, g: &[f64], direction: &[f64]) -> Result<f64> {
        self.check_len(g)?;
        self.check_len(direction)?;
        Ok(direction
            .iter()
            .zip(&self.mass)
            .zip(g)
            .map(|((d, m), g)| d * m * g)
            .sum())
    }

    /// Assembles both reduced gradients from misfit parts and the current fields.
    pub fn gradient_pair(
        &self,
        lambda: &[f64],
        mu: &[f64],
        mis_lambda: Vec<f64>,
        mis_mu: Vec<f64>,
        spec: &RegularizationSpec,
    ) -> Result<GradientPair> {
        let reg_lambda = self.reg_gradient(lambda, spec.kind, spec.epsilon)?;
        let reg_mu = self.reg_gradient(mu, spec.kind, spec.epsilon)?;
        Ok(GradientPair {
            g_lambda: self.reduced_gradient(&mis_lambda, &reg_lambda, spec.r_lambda)?,
            g_mu: self.reduced_gradient(&mis_mu, &reg_mu, spec.r_mu)?,
            mis_lambda,
            mis_mu,
            reg_lambda,
            reg_mu,
        })
    }
}

/// Misfit gradients from two complete, time-aligned RD stores.
pub fn misfit_gradients(
    forward: &mut SnapshotStore,
    adjoint: &mut SnapshotStore,
    space: &MaterialSpace,
    rule: TimeRule,
) -> Result<(Vec<f64>, Vec<f64>)> {
    forward.check_aligned(adjoint)?;
    if forward.n_frames() != forward.expected_frames() || adjoint.n_frames() != adjoint.expected_frames() {
        return Err(FwiError::Config("snapshot stores are incomplete".into()));
    }
    let mut gl = vec![0.0; space.len()];
    let mut gm = vec![0.0; space.len()];
    let weights = forward.quadrature_weights(rule);
    let mut u = vec![0.0; 3 * space.len()];
    let mut w = vec![0.0; 3 * space.len()];
    for (i, &wt) in weights.iter().enumerate() {
        forward.frame_into(i, &mut u)?;
        adjoint.frame_into(i, &mut w)?;
        space.accumulate_misfit(&u, &w, wt, &mut gl, &mut gm);
    }
    Ok((gl, gm))
}

/// Forward difference `(J(m + h d) - J(m)) / h` given `J(m)`.
pub fn directional_derivative_fd(
    mut objective: impl FnMut(&[f64], &[f64]) -> Result<f64>,
    lambda: &[f64],
    mu: &[f64],
    direction: &[f64],
    which: Parameter,
    h: f64,
    base: Option<f64>,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(FwiError::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let target = match which {
        Parameter::Lambda => lambda,
        Parameter::Mu => mu,
    };
    if direction.len() != target.len() {
        return Err(FwiError::DimensionMismatch {
            expected: target.len(),
            got: direction.len(),
        });
    }
    if direction.iter().all(|&d| d == 0.0) {
        return Ok(0.0);
    }
    let j0 = match base {
        Some(j) => j,
        None => objective(lambda, mu)?,
    };
    let perturbed: Vec<f64> = target.iter().zip(direction).map(|(m, d)| m + h * d).collect();
    let j1 = match which {
        Parameter::Lambda => objective(&perturbed, mu)?,
        Parameter::Mu => objective(lambda, &perturbed)?,
    };
    Ok((j1 - j0) / h)
}

/// Which Lamé field a perturbation or freeze applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Lambda,
    Mu,
}

impl std::fmt::Display for Parameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Parameter::Lambda => "lambda",
            Parameter::Mu => "mu",
        })
    }
}

/// One row of a gradient-check table.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub case: String,
    pub f_max: f64,
    pub coords: [f64; 3],
    pub field: Parameter,
    pub d_co: f64,
    /// `(h, d_fd)` per step.
    pub d_fd: Vec<(f64, f64)>,
}

impl GradCheckRow {
    pub fn relative_errors(&self) -> Vec<f64> {
        self.d_fd
            .iter()
            .map(|&(_, fd)| ((self.d_co - fd) / self.d_co).abs())
            .collect()
    }

    pub fn best_relative_error(&self) -> f64 {
        self.relative_errors().into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// CSV table with one row per perturbation and one `d_fd` column per step.
pub fn gradcheck_csv(rows: &[GradCheckRow]) -> String {
    let mut s = String::from("case,f_max,x,y,z,field,d_co");
    if let Some(r) = rows.first() {
        for (h, _) in &r.d_fd {
            let _ = write!(s, ",d_fd(h={h:e})");
        }
    }
    s.push_str(",best_rel_err\n");
    for r in rows {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{:.6e}",
            r.case, r.f_max, r.coords[0], r.coords[1], r.coords[2], r.field, r.d_co
        );
        for (_, fd) in &r.d_fd {
            let _ = write!(s, ",{fd:.6e}");
        }
        let _ = writeln!(s, ",{:.3e}", r.best_relative_error());
    }
    s
}

#[cfg(test)]
mod tests;
