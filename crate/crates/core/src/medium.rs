//! PML stretch functions, derived coefficients and nodal material fields.

use serde::{Deserialize, Serialize};

use crate::error::{FwiError, Result};
use crate::specgrid::{GridSpec, SpectralMesh};

/// Polynomial attenuation profile of the PML.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StretchProfile {
    /// Scaling of the evanescent stretch (dimensionless).
    pub alpha0: f64,
    /// Scaling of the propagating-wave attenuation (1/s).
    pub beta0: f64,
    /// Profile exponent.
    pub exponent: f64,
}

impl Default for StretchProfile {
    fn default() -> Self {
        Self {
            alpha0: 5.0,
            beta0: 400.0,
            exponent: 2.0,
        }
    }
}

impl StretchProfile {
    /// No stretching anywhere; the PML equations collapse to elastodynamics.
    pub fn identity() -> Self {
        Self {
            alpha0: 0.0,
            beta0: 0.0,
            exponent: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha0 < 0.0 || self.beta0 < 0.0 || self.exponent < 1.0 {
            return Err(FwiError::Config(format!(
                "invalid stretch profile: alpha0 = {}, beta0 = {}, m = {}",
                self.alpha0, self.beta0, self.exponent
            )));
        }
        Ok(())
    }
}

/// Normalized PML depth of `point` per axis, 0 at the interface and 1 at the outer face.
pub fn normalized_depth(spec: &GridSpec, point: [f64; 3]) -> [f64; 3] {
    let lo = spec.rd_min();
    let hi = spec.rd_max();
    let l = spec.pml_thickness;
    let mut s = [0.0; 3];
    if l <= 0.0 {
        return s;
    }
    for a in 0..3 {
        let beyond = if point[a] < lo[a] {
            lo[a] - point[a]
        } else if a < 2 && point[a] > hi[a] {
            point[a] - hi[a]
        } else {
            0.0
        };
        s[a] = (beyond / l).clamp(0.0, 1.0);
    }
    s
}

/// Stretch functions `(alpha, beta)` at a point: `alpha_i = 1 + alpha0 s_i^m`, `beta_i = beta0 s_i^m`.
pub fn stretch_functions(
    profile: &StretchProfile,
    spec: &GridSpec,
    point: [f64; 3],
) -> ([f64; 3], [f64; 3]) {
    let s = normalized_depth(spec, point);
    let mut alpha = [1.0; 3];
    let mut beta = [0.0; 3];
    for a in 0..3 {
        if s[a] > 0.0 {
            let p = s[a].powf(profile.exponent);
            alpha[a] = 1.0 + profile.alpha0 * p;
            beta[a] = profile.beta0 * p;
        }
    }
    (alpha, beta)
}

/// Stretch tensors and scalar products at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmlCoefficients {
    pub alpha: [f64; 3],
    pub beta: [f64; 3],
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// Diagonal of the evolutionary stretch tensor.
    pub lambda_e: [f64; 3],
    /// Diagonal of the proportional stretch tensor (1/s).
    pub lambda_p: [f64; 3],
    /// Diagonal of the history stretch tensor (1/s^2).
    pub lambda_w: [f64; 3],
}

pub fn pml_coefficients(alpha: [f64; 3], beta: [f64; 3]) -> PmlCoefficients {
    let [a1, a2, a3] = alpha;
    let [b1, b2, b3] = beta;
    PmlCoefficients {
        alpha,
        beta,
        a: a1 * a2 * a3,
        b: a2 * a3 * b1 + a3 * a1 * b2 + a1 * a2 * b3,
        c: a1 * b2 * b3 + a2 * b3 * b1 + a3 * b1 * b2,
        d: b1 * b2 * b3,
        lambda_e: [a2 * a3, a3 * a1, a1 * a2],
        lambda_p: [a2 * b3 + a3 * b2, a3 * b1 + a1 * b3, a1 * b2 + a2 * b1],
        lambda_w: [b2 * b3, b3 * b1, b1 * b2],
    }
}

/// Coefficients at a point of the mesh.
pub fn coefficients_at(profile: &StretchProfile, spec: &GridSpec, point: [f64; 3]) -> PmlCoefficients {
    let (alpha, beta) = stretch_functions(profile, spec, point);
    pml_coefficients(alpha, beta)
}

/// Nodal Lamé parameters and density (SI units) on every mesh node.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialField {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl MaterialField {
    pub fn homogeneous(n_nodes: usize, lambda: f64, mu: f64, rho: f64) -> Self {
        Self {
            lambda: vec![lambda; n_nodes],
            mu: vec![mu; n_nodes],
            rho: vec![rho; n_nodes],
        }
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.lambda.len();
        if self.mu.len() != n || self.rho.len() != n {
            return Err(FwiError::InvalidMaterial("field lengths differ".into()));
        }
        for i in 0..n {
            let (l, m, r) = (self.lambda[i], self.mu[i], self.rho[i]);
            if !(m > 0.0) || !(l + 2.0 * m > 0.0) || !(r > 0.0) {
                return Err(FwiError::InvalidMaterial(format!(
                    "node {i}: lambda = {l}, mu = {m}, rho = {r}"
                )));
            }
        }
        Ok(())
    }

    /// Copies interface values into the PML interior (see [`extend_into_pml`]).
    pub fn extended(mut self, mesh: &SpectralMesh) -> Self {
        extend_into_pml(&mut self, mesh);
        self
    }
}

/// Assigns every PML-interior node the value of its clamp-to-box projection onto
/// the RD closure. RD values are left untouched.
pub fn extend_into_pml(field: &mut MaterialField, mesh: &SpectralMesh) {
    for values in [&mut field.lambda, &mut field.mu, &mut field.rho] {
        extend_values(values, mesh);
    }
}

/// Same clamp-to-box extension for a single nodal array.
pub fn extend_values(values: &mut [f64], mesh: &SpectralMesh) {
    let p = mesh.spec.pml_elements();
    if p == 0 || mesh.options.regular_everywhere {
        return;
    }
    let [rx, ry, _] = mesh.spec.rd_elements();
    let lo = [2 * p, 2 * p, 2 * p];
    let hi = [2 * (p + rx), 2 * (p + ry), mesh.node_counts[2] - 1];
    for n in 0..mesh.n_nodes() {
        if mesh.is_rd_node(n) {
            continue;
        }
        let ijk = mesh.node_ijk(n);
        let src = mesh.node_id(
            ijk[0].clamp(lo[0], hi[0]),
            ijk[1].clamp(lo[1], hi[1]),
            ijk[2].clamp(lo[2], hi[2]),
        );
        values[n] = values[src];
    }
}

/// Values of a nodal array at the RD material nodes, in `mesh.rd_nodes` order.
pub fn rd_values(values: &[f64], mesh: &SpectralMesh) -> Vec<f64> {
    mesh.rd_nodes.iter().map(|&n| values[n as usize]).collect()
}

/// Writes RD material values into a full nodal array and extends them into the PML.
pub fn scatter_rd_values(rd: &[f64], mesh: &SpectralMesh, values: &mut [f64]) {
    for (&n, &v) in mesh.rd_nodes.iter().zip(rd) {
        values[n as usize] = v;
    }
    extend_values(values, mesh);
}

/// Shear and compressional velocities `c_s = sqrt(mu/rho)`, `c_p = sqrt((lambda+2mu)/rho)`.
pub fn velocities(field: &MaterialField) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut cs = Vec::with_capacity(field.len());
    let mut cp = Vec::with_capacity(field.len());
    for i in 0..field.len() {
        let s = field.mu[i] / field.rho[i];
        let p = (field.lambda[i] + 2.0 * field.mu[i]) / field.rho[i];
        if s < 0.0 || p < 0.0 || !s.is_finite() || !p.is_finite() {
            return Err(FwiError::InvalidMaterial(format!(
                "node {i}: negative or non-finite velocity argument"
            )));
        }
        cs.push(s.sqrt());
        cp.push(p.sqrt());
    }
    Ok((cs, cp))
}

/// Clips values into `[lo, hi]`, returning how many entries were changed.
pub fn clip_values(values: &mut [f64], lo: f64, hi: f64) -> usize {
    let mut clipped = 0;
    for v in values.iter_mut() {
        let c = v.clamp(lo, hi);
        if c != *v {
            clipped += 1;
            *v = c;
        }
    }
    clipped
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specgrid::build_mesh;

    fn spec() -> GridSpec {
        GridSpec::new([4.0, 4.0, 4.0], 1.0, 2.0)
    }

    #[test]
    fn rd_point_has_identity_stretch() {
        let (a, b) = stretch_functions(&StretchProfile::default(), &spec(), [0.5, -1.0, -3.0]);
        assert_eq!(a, [1.0; 3]);
        assert_eq!(b, [0.0; 3]);
    }

    #[test]
    fn half_depth_in_x_face() {
        // RD half width 2, PML 2 thick: x = 3 is halfway
        let (a, b) = stretch_functions(&StretchProfile::default(), &spec(), [3.0, 0.0, -1.0]);
        assert!((a[0] - 2.25).abs() < 1e-14 && a[1] == 1.0 && a[2] == 1.0);
        assert!((b[0] - 100.0).abs() < 1e-12 && b[1] == 0.0 && b[2] == 0.0);
    }

    #[test]
    fn bottom_lateral_edge_full_depth() {
        let (a, b) = stretch_functions(&StretchProfile::default(), &spec(), [4.0, 0.0, -6.0]);
        assert_eq!(a, [6.0, 1.0, 6.0]);
        assert_eq!(b, [400.0, 0.0, 400.0]);
    }

    #[test]
    fn coefficient_products() {
        let c = pml_coefficients([1.0; 3], [0.0; 3]);
        assert_eq!((c.a, c.b, c.c, c.d), (1.0, 0.0, 0.0, 0.0));
        assert_eq!(c.lambda_e, [1.0; 3]);
        assert_eq!(c.lambda_p, [0.0; 3]);
        assert_eq!(c.lambda_w, [0.0; 3]);

        let c = pml_coefficients([2.0, 1.0, 1.0], [3.0, 0.0, 0.0]);
        assert_eq!((c.a, c.b, c.c, c.d), (2.0, 3.0, 0.0, 0.0));
        assert_eq!(c.lambda_e, [1.0, 2.0, 2.0]);
        assert_eq!(c.lambda_p, [0.0, 3.0, 3.0]);
        assert_eq!(c.lambda_w, [0.0; 3]);

        let c = pml_coefficients([1.0; 3], [1.0; 3]);
        assert_eq!((c.a, c.b, c.c, c.d), (1.0, 3.0, 3.0, 1.0));
        assert_eq!(c.lambda_e, [1.0; 3]);
        assert_eq!(c.lambda_p, [2.0; 3]);
        assert_eq!(c.lambda_w, [1.0; 3]);
    }

    #[test]
    fn identity_profile_reduces_everywhere() {
        let sp = spec();
        for p in [[3.9, 3.9, -5.9], [0.0, 0.0, 0.0], [-4.0, 2.0, -6.0]] {
            let c = coefficients_at(&StretchProfile::identity(), &sp, p);
            assert_eq!(c, pml_coefficients([1.0; 3], [0.0; 3]));
        }
    }

    #[test]
    fn monotone_along_outward_normal() {
        let sp = spec();
        let prof = StretchProfile::default();
        let mut last = coefficients_at(&prof, &sp, [2.0, 0.0, -1.0]);
        for i in 1..=20 {
            let x = 2.0 + 2.0 * i as f64 / 20.0;
            let c = coefficients_at(&prof, &sp, [x, 1.0, -4.5]);
            assert!(c.a >= last.a && c.b >= last.b && c.c >= last.c && c.d >= last.d);
            for k in 0..3 {
                assert!(c.lambda_p[k] >= last.lambda_p[k] && c.lambda_w[k] >= last.lambda_w[k]);
            }
            last = c;
        }
    }

    #[test]
    fn extension_of_depth_profile() {
        let mesh = build_mesh(spec()).unwrap();
        let n = mesh.n_nodes();
        let mut f = MaterialField::homogeneous(n, 1.0, 1.0, 1.0);
        for i in 0..n {
            let z = mesh.coords[i][2];
            f.lambda[i] = if mesh.is_rd_node(i) { 10.0 - z } else { -1.0 };
        }
        let rd_before: Vec<f64> = (0..n).filter(|&i| mesh.is_rd_node(i)).map(|i| f.lambda[i]).collect();
        extend_into_pml(&mut f, &mesh);
        for i in 0..n {
            let [x, _, z] = mesh.coords[i];
            if z >= -4.0 {
                assert_eq!(f.lambda[i], 10.0 - z, "lateral node at x = {x}");
            } else {
                assert_eq!(f.lambda[i], 14.0);
            }
        }
        let rd_after: Vec<f64> = (0..n).filter(|&i| mesh.is_rd_node(i)).map(|i| f.lambda[i]).collect();
        assert_eq!(rd_before, rd_after);
        let once = f.clone();
        extend_into_pml(&mut f, &mesh);
        assert_eq!(once, f);
    }

    #[test]
    fn velocity_values() {
        let f = MaterialField::homogeneous(1, 80e6, 80e6, 2000.0);
        let (cs, cp) = velocities(&f).unwrap();
        assert!((cs[0] - 200.0).abs() < 1e-12);
        assert!((cp[0] - 120000f64.sqrt()).abs() < 1e-9);
        let f = MaterialField::homogeneous(1, 0.0, 3.0, 3.0);
        let (cs, cp) = velocities(&f).unwrap();
        assert!((cp[0] - 2f64.sqrt() * cs[0]).abs() < 1e-15);
        let f = MaterialField::homogeneous(1, -10.0, 1.0, 1.0);
        assert!(velocities(&f).is_err());
    }
}
