//! Element kernels on 27-node bricks with sum-factorized derivatives.
//!
//! Local node `a + 3b + 9c` sits at reference coordinates `(xi_a, xi_b, xi_c)`.
//! Every quadrature point coincides with a node, so nodal material values and
//! PML coefficients are used directly at the quadrature points.

pub(crate) type Field = [f64; 27];

/// Scaled 1D derivative matrix `dd[q][a] = phi_a'(xi_q) * 2/h`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Derivative {
    pub dd: [[f64; 3]; 3],
}

impl Derivative {
    pub fn new(d: [[f64; 3]; 3], element_size: f64) -> Self {
        let s = 2.0 / element_size;
        let mut dd = d;
        for row in dd.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        Self { dd }
    }

    /// Physical gradient of a scalar nodal field at the 27 nodes.
    #[inline]
    pub fn grad(&self, f: &Field, gx: &mut Field, gy: &mut Field, gz: &mut Field) {
        let dd = &self.dd;
        for c in 0..3 {
            for b in 0..3 {
                for a in 0..3 {
                    let q = a + 3 * b + 9 * c;
                    gx[q] = dd[a][0] * f[3 * b + 9 * c]
                        + dd[a][1] * f[1 + 3 * b + 9 * c]
                        + dd[a][2] * f[2 + 3 * b + 9 * c];
                    gy[q] = dd[b][0] * f[a + 9 * c]
                        + dd[b][1] * f[a + 3 + 9 * c]
                        + dd[b][2] * f[a + 6 + 9 * c];
                    gz[q] = dd[c][0] * f[a + 3 * b]
                        + dd[c][1] * f[a + 3 * b + 9]
                        + dd[c][2] * f[a + 3 * b + 18];
                }
            }
        }
    }

    /// `out[n] += sum_q (dphi_n/dx(q) fx[q] + dphi_n/dy(q) fy[q] + dphi_n/dz(q) fz[q])`.
    #[inline]
    pub fn grad_transpose_add(&self, fx: &Field, fy: &Field, fz: &Field, out: &mut Field) {
        let dd = &self.dd;
        for k in 0..3 {
            for j in 0..3 {
                for i in 0..3 {
                    let mut acc = 0.0;
                    for a in 0..3 {
                        acc += dd[a][i] * fx[a + 3 * j + 9 * k]
                            + dd[a][j] * fy[i + 3 * a + 9 * k]
                            + dd[a][k] * fz[i + 3 * j + 9 * a];
                    }
                    out[i + 3 * j + 9 * k] += acc;
                }
            }
        }
    }

    /// Gradient of a vector field: `g[i][j] = d u_i / d x_j`.
    #[inline]
    pub fn grad_vector(&self, u: &[Field; 3], g: &mut [[Field; 3]; 3]) {
        for i in 0..3 {
            let [gx, gy, gz] = &mut g[i];
            self.grad(&u[i], gx, gy, gz);
        }
    }
}

/// Regular-domain element: Lamé parameters premultiplied by quadrature weights.
#[derive(Debug, Clone)]
pub(crate) struct RegularElement {
    pub disp: [u32; 27],
    pub w_lambda: Field,
    pub w_mu: Field,
}

/// PML element data. Index 0, 1, 2 of the per-operator arrays select C, K, G.
#[derive(Debug, Clone)]
pub(crate) struct PmlElement {
    pub disp: [u32; 27],
    pub stress: [u32; 27],
    pub w: Field,
    pub w_lambda: Field,
    pub w_mu: Field,
    /// `W rho b`, `W rho c`, `W rho d`.
    pub disp_diag: [Field; 3],
    /// `W b`, `W c`, `W d`.
    pub stress_diag: [Field; 3],
    /// Stretch tensor diagonals `Lambda_e`, `Lambda_p`, `Lambda_w` at each node.
    pub stretch: [[[f64; 3]; 27]; 3],
}

pub(crate) const OFF_DIAG: [(usize, usize, usize); 3] = [(0, 1, 3), (0, 2, 4), (1, 2, 5)];

impl RegularElement {
    /// Adds `K_RD u` to `out`; the regular stiffness is symmetric.
    #[inline]
    pub fn stiffness(&self, der: &Derivative, u: &[Field; 3], out: &mut [Field; 3]) {
        let mut g = [[[0.0; 27]; 3]; 3];
        der.grad_vector(u, &mut g);
        let mut s = [[[0.0; 27]; 3]; 3];
        for q in 0..27 {
            let tr = g[0][0][q] + g[1][1][q] + g[2][2][q];
            let wl = self.w_lambda[q] * tr;
            let wm = self.w_mu[q];
            for i in 0..3 {
                for j in 0..3 {
                    s[i][j][q] = wm * (g[i][j][q] + g[j][i][q]);
                }
                s[i][i][q] += wl;
            }
        }
        for i in 0..3 {
            der.grad_transpose_add(&s[i][0], &s[i][1], &s[i][2], &mut out[i]);
        }
    }
}

impl PmlElement {
    /// Adds `sum_o op_o (u_o, s_o)` for the PML operators `o` in {C, K, G}.
    #[inline]
    pub fn apply(
        &self,
        der: &Derivative,
        inputs: &[Option<([Field; 3], [Field; 6])>; 3],
        out_u: &mut [Field; 3],
        out_s: &mut [Field; 6],
    ) {
        let mut flux = [[[0.0; 27]; 3]; 3];
        let mut g = [[[0.0; 27]; 3]; 3];
        for (o, input) in inputs.iter().enumerate() {
            let Some((u, s)) = input else { continue };
            let lam = &self.stretch[o];
            let dd = &self.disp_diag[o];
            let sd = &self.stress_diag[o];
            for i in 0..3 {
                for q in 0..27 {
                    out_u[i][q] += dd[q] * u[i][q];
                }
            }
            for q in 0..27 {
                let w = self.w[q];
                for i in 0..3 {
                    for j in 0..3 {
                        let c = crate::specgrid::stress_component(i, j);
                        flux[i][j][q] += w * lam[q][j] * s[c][q];
                    }
                }
            }
            der.grad_vector(u, &mut g);
            for q in 0..27 {
                let l = lam[q];
                let wm = self.w_mu[q];
                let vol = self.w_lambda[q] * (l[0] * g[0][0][q] + l[1] * g[1][1][q] + l[2] * g[2][2][q]);
                for i in 0..3 {
                    out_s[i][q] += sd[q] * s[i][q] - (2.0 * wm * l[i] * g[i][i][q] + vol);
                }
                for &(i, j, c) in OFF_DIAG.iter() {
                    out_s[c][q] += sd[q] * s[c][q] - wm * (l[j] * g[i][j][q] + l[i] * g[j][i][q]);
                }
            }
        }
        for i in 0..3 {
            der.grad_transpose_add(&flux[i][0], &flux[i][1], &flux[i][2], &mut out_u[i]);
        }
    }

    /// Transposed counterpart of [`PmlElement::apply`].
    #[inline]
    pub fn apply_transpose(
        &self,
        der: &Derivative,
        inputs: &[Option<([Field; 3], [Field; 6])>; 3],
        out_u: &mut [Field; 3],
        out_s: &mut [Field; 6],
    ) {
        let mut flux = [[[0.0; 27]; 3]; 3];
        let mut g = [[[0.0; 27]; 3]; 3];
        for (o, input) in inputs.iter().enumerate() {
            let Some((v, t)) = input else { continue };
            let lam = &self.stretch[o];
            let dd = &self.disp_diag[o];
            let sd = &self.stress_diag[o];
            for i in 0..3 {
                for q in 0..27 {
                    out_u[i][q] += dd[q] * v[i][q];
                }
            }
            der.grad_vector(v, &mut g);
            for q in 0..27 {
                let l = lam[q];
                let w = self.w[q];
                for i in 0..3 {
                    out_s[i][q] += sd[q] * t[i][q] + w * l[i] * g[i][i][q];
                }
                for &(i, j, c) in OFF_DIAG.iter() {
                    out_s[c][q] += sd[q] * t[c][q] + w * (l[j] * g[i][j][q] + l[i] * g[j][i][q]);
                }
                let wm2 = 2.0 * self.w_mu[q];
                let wl_tr = self.w_lambda[q] * (t[0][q] + t[1][q] + t[2][q]);
                for i in 0..3 {
                    flux[i][i][q] -= wm2 * t[i][q] * l[i] + wl_tr * l[i];
                }
                for &(i, j, c) in OFF_DIAG.iter() {
                    // symmetric half-weights of the stored off-diagonal component
                    let half = 0.5 * t[c][q];
                    flux[i][j][q] -= wm2 * half * l[j];
                    flux[j][i][q] -= wm2 * half * l[i];
                }
            }
        }
        for i in 0..3 {
            der.grad_transpose_add(&flux[i][0], &flux[i][1], &flux[i][2], &mut out_u[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn der() -> Derivative {
        let b = crate::specgrid::lgl_basis(2).unwrap();
        Derivative::new(b.derivative_matrix(), 2.0)
    }

    fn field(f: impl Fn(f64, f64, f64) -> f64) -> Field {
        let xs = [-1.0, 0.0, 1.0];
        let mut out = [0.0; 27];
        for c in 0..3 {
            for b in 0..3 {
                for a in 0..3 {
                    out[a + 3 * b + 9 * c] = f(xs[a], xs[b], xs[c]);
                }
            }
        }
        out
    }

    #[test]
    fn gradient_of_quadratic_is_exact() {
        let d = der();
        let f = field(|x, y, z| x * x + 2.0 * x * y - z * z * y + 3.0 * z);
        let (mut gx, mut gy, mut gz) = ([0.0; 27], [0.0; 27], [0.0; 27]);
        d.grad(&f, &mut gx, &mut gy, &mut gz);
        let ex = field(|x, y, _| 2.0 * x + 2.0 * y);
        let ey = field(|x, _, z| 2.0 * x - z * z);
        let ez = field(|_, y, z| -2.0 * z * y + 3.0);
        for q in 0..27 {
            assert!((gx[q] - ex[q]).abs() < 1e-13);
            assert!((gy[q] - ey[q]).abs() < 1e-13);
            assert!((gz[q] - ez[q]).abs() < 1e-13);
        }
    }

    #[test]
    fn grad_transpose_is_adjoint_of_grad() {
        let d = der();
        let f = field(|x, y, z| (x + 0.3).sin() * (1.0 + y * z) + z);
        let fx = field(|x, y, z| x * y - z);
        let fy = field(|x, y, z| (y - z).cos() + x);
        let fz = field(|x, y, z| x * x * z + y);
        let (mut gx, mut gy, mut gz) = ([0.0; 27], [0.0; 27], [0.0; 27]);
        d.grad(&f, &mut gx, &mut gy, &mut gz);
        let lhs: f64 = (0..27).map(|q| gx[q] * fx[q] + gy[q] * fy[q] + gz[q] * fz[q]).sum();
        let mut out = [0.0; 27];
        d.grad_transpose_add(&fx, &fy, &fz, &mut out);
        let rhs: f64 = (0..27).map(|n| f[n] * out[n]).sum();
        assert!((lhs - rhs).abs() < 1e-13 * lhs.abs().max(1.0));
    }
}
