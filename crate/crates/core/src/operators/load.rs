//! Gaussian pulses and surface traction loads.

use serde::{Deserialize, Serialize};

use crate::error::{FwiError, Result};
use crate::specgrid::{SpectralMesh, NO_DOF};

/// How the spread parameter of a [`Pulse`] enters the exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseReading {
    /// `exp(-(t - mean)^2 / spread)`: spread is a variance (s^2).
    #[default]
    Variance,
    /// `exp(-((t - mean) / spread)^2)`: spread is a width (s).
    Literal,
}

/// Gaussian temporal signature, hard-windowed to `[0, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub name: String,
    /// Centre of the pulse (s).
    pub mean: f64,
    /// Spread; s^2 under the variance reading.
    pub spread: f64,
    /// End of the active duration (s).
    pub t_end: f64,
    /// Nominal maximum frequency (Hz).
    pub f_max: f64,
    #[serde(default)]
    pub reading: PulseReading,
}

impl Pulse {
    pub fn new(name: &str, mean: f64, spread: f64, t_end: f64, f_max: f64) -> Self {
        Self {
            name: name.to_string(),
            mean,
            spread,
            t_end,
            f_max,
            reading: PulseReading::Variance,
        }
    }

    pub fn p20() -> Self {
        Self::new("p20", 0.11, 0.0014, 0.20, 20.0)
    }

    pub fn p30() -> Self {
        Self::new("p30", 0.08, 0.0007, 0.15, 30.0)
    }

    pub fn p40() -> Self {
        Self::new("p40", 0.06, 0.0004, 0.12, 40.0)
    }

    /// One of the tabulated pulses by name.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "p20" => Some(Self::p20()),
            "p30" => Some(Self::p30()),
            "p40" => Some(Self::p40()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spread > 0.0 && self.mean > 0.0 && self.mean < self.t_end) {
            return Err(FwiError::Config(format!(
                "pulse `{}`: need 0 < mean < t_end and spread > 0",
                self.name
            )));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        gaussian_pulse(self, t)
    }
}

pub fn gaussian_pulse(pulse: &Pulse, t: f64) -> f64 {
    if !(0.0..=pulse.t_end).contains(&t) {
        return 0.0;
    }
    let dt = t - pulse.mean;
    match pulse.reading {
        PulseReading::Variance => (-dt * dt / pulse.spread).exp(),
        PulseReading::Literal => (-(dt / pulse.spread).powi(2)).exp(),
    }
}

/// Vertical traction of uniform amplitude on a rectangle of the free surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadCase {
    /// `[xmin, xmax, ymin, ymax]` (m).
    pub patch: [f64; 4],
    /// Traction amplitude along +z (Pa).
    pub amplitude: f64,
    pub pulse: Pulse,
}

impl LoadCase {
    /// Consistent nodal weights `int_patch phi_n dGamma` as `(z dof, weight)` pairs.
    /// Only surface elements lying entirely inside the patch are loaded.
    pub fn nodal_weights(&self, mesh: &SpectralMesh) -> Result<Vec<(usize, f64)>> {
        let [x0, x1, y0, y1] = self.patch;
        let lo = mesh.spec.rd_min();
        let hi = mesh.spec.rd_max();
        let h = mesh.spec.element_size;
        let tol = 1e-9 * h;
        if !(x0 < x1 && y0 < y1) {
            return Err(FwiError::InvalidLoad(format!("empty patch {:?}", self.patch)));
        }
        if x0 < lo[0] - tol || x1 > hi[0] + tol || y0 < lo[1] - tol || y1 > hi[1] + tol {
            return Err(FwiError::InvalidLoad(format!(
                "patch {:?} extends beyond the regular-domain free surface",
                self.patch
            )));
        }
        let top = mesh.element_counts[2] - 1;
        let w = &mesh.basis.weights;
        let area_jac = 0.25 * h * h;
        let mut acc = std::collections::BTreeMap::<usize, f64>::new();
        let mut faces = 0usize;
        for el in mesh.elements.iter().filter(|e| e.index[2] == top) {
            let top_nodes: Vec<_> = (18..27).map(|q| el.nodes[q] as usize).collect();
            let xa = mesh.coords[top_nodes[0]];
            let xb = mesh.coords[top_nodes[8]];
            let inside = xa[0] >= x0 - tol && xb[0] <= x1 + tol && xa[1] >= y0 - tol && xb[1] <= y1 + tol;
            if !inside {
                continue;
            }
            faces += 1;
            for b in 0..3 {
                for a in 0..3 {
                    let node = el.nodes[18 + a + 3 * b] as usize;
                    let d = mesh.displacement_dof[node];
                    if d == NO_DOF {
                        continue;
                    }
                    *acc.entry(d as usize + 2).or_default() += w[a] * w[b] * area_jac;
                }
            }
        }
        if faces == 0 {
            return Err(FwiError::InvalidLoad(format!(
                "patch {:?} covers no complete surface element",
                self.patch
            )));
        }
        Ok(acc.into_iter().collect())
    }
}

/// Nodal force vector of `load` at time `t` over the full state dimension.
pub fn assemble_force(load: &LoadCase, mesh: &SpectralMesh, t: f64) -> Result<Vec<f64>> {
    let mut f = vec![0.0; mesh.state_dim()];
    let scale = load.amplitude * load.pulse.value(t);
    for (dof, w) in load.nodal_weights(mesh)? {
        f[dof] = scale * w;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specgrid::{build_mesh, GridSpec};

    #[test]
    fn pulse_peak_and_window() {
        for p in [Pulse::p20(), Pulse::p30(), Pulse::p40()] {
            assert_eq!(p.value(p.mean), 1.0);
            assert_eq!(p.value(p.t_end + 1e-9), 0.0);
            assert_eq!(p.value(-1e-9), 0.0);
        }
    }

    #[test]
    fn literal_reading_is_narrow() {
        let mut p = Pulse::p20();
        p.reading = PulseReading::Literal;
        assert!(p.value(p.mean + 0.01) < 1e-20);
    }

    fn mesh() -> SpectralMesh {
        build_mesh(GridSpec::new([4.0, 4.0, 2.0], 1.0, 1.0)).unwrap()
    }

    #[test]
    fn total_force_equals_traction_times_area() {
        let m = mesh();
        let load = LoadCase {
            patch: [-1.0, 1.0, -2.0, 1.0],
            amplitude: 1000.0,
            pulse: Pulse::p20(),
        };
        let t = 0.1;
        let f = assemble_force(&load, &m, t).unwrap();
        let total: f64 = f.iter().sum();
        let expect = 1000.0 * load.pulse.value(t) * 6.0;
        assert!((total - expect).abs() <= 1e-10 * expect);
        // only z components
        for (d, v) in f.iter().enumerate() {
            if *v != 0.0 {
                assert_eq!(d % 3, 2);
                assert!(d < m.n_displacement_dofs);
            }
        }
    }

    #[test]
    fn force_is_linear_in_amplitude_and_tiny_at_start() {
        let m = mesh();
        let mut load = LoadCase {
            patch: [-1.0, 1.0, -1.0, 1.0],
            amplitude: 1000.0,
            pulse: Pulse::p20(),
        };
        let f1 = assemble_force(&load, &m, 0.09).unwrap();
        load.amplitude = 2000.0;
        let f2 = assemble_force(&load, &m, 0.09).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            assert_eq!(2.0 * a, *b);
        }
        let f0 = assemble_force(&load, &m, 0.0).unwrap();
        assert!(f0.iter().all(|v| v.abs() < 1e-2 * 1000.0));
    }

    #[test]
    fn patch_outside_surface_is_rejected() {
        let m = mesh();
        let load = LoadCase {
            patch: [-3.0, 1.0, -1.0, 1.0],
            amplitude: 1.0,
            pulse: Pulse::p20(),
        };
        assert!(matches!(assemble_force(&load, &m, 0.1), Err(FwiError::InvalidLoad(_))));
    }
}
