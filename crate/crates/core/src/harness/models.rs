//! Target material models.
//!
//! Paper-scale geometries are written for a 40 x 40 x 45 m regular domain
//! (80 x 80 x 45 m for `three_inclusions`); on other boxes lateral coordinates
//! are scaled by the width ratio and depths by the depth ratio, so layers and
//! inclusions keep their relative placement.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{FwiError, Result};
use crate::medium::{extend_into_pml, MaterialField};
use crate::specgrid::{GridSpec, SpectralMesh};

const MPA: f64 = 1e6;
const REFERENCE_DEPTH: f64 = 45.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum TargetModel {
    /// `80 + 0.45|z| + 35 exp(-(|z| - 22.5)^2 / 150)` MPa for both λ and μ.
    Smooth,
    /// Three horizontal layers of 80, 101.25 and 125 MPa.
    Layered,
    /// Layers plus a 156.8 MPa ellipsoid.
    LayeredInclusion,
    /// Shallower layers plus a spheroid, an ellipsoid and a soft sphere.
    ThreeInclusions,
    /// Constant λ and μ (Pa).
    Homogeneous { lambda: f64, mu: f64 },
    /// Nodal values from a CSV file with columns `x,y,z,lambda,mu,rho`.
    Custom { path: PathBuf },
}

impl TargetModel {
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "smooth" => TargetModel::Smooth,
            "layered" => TargetModel::Layered,
            "layered_inclusion" => TargetModel::LayeredInclusion,
            "three_inclusions" => TargetModel::ThreeInclusions,
            _ => return Err(FwiError::UnknownModel(name.into())),
        })
    }

    fn reference_width(&self) -> f64 {
        match self {
            TargetModel::ThreeInclusions => 80.0,
            _ => 40.0,
        }
    }

    /// Point value `(lambda, mu)` in Pa; `None` for file-based models.
    pub fn evaluate(&self, spec: &GridSpec, point: [f64; 3]) -> Option<(f64, f64)> {
        let w = self.reference_width();
        let x = point[0] * w / spec.rd_extent[0];
        let y = point[1] * w / spec.rd_extent[1];
        let z = point[2] * REFERENCE_DEPTH / spec.rd_extent[2];
        let v = match self {
            TargetModel::Smooth => smooth_profile(z) * MPA,
            TargetModel::Layered => layered(z, -12.0, -27.0),
            TargetModel::LayeredInclusion => {
                let e = ((x - 7.5) / 7.5).powi(2) + (y / 5.0).powi(2) + ((z + 12.0) / 5.5).powi(2);
                if e <= 1.0 {
                    156.8 * MPA
                } else {
                    layered(z, -12.0, -27.0)
                }
            }
            TargetModel::ThreeInclusions => {
                let spheroid = ((x + 20.0) / 3.75).powi(2) + ((y + 20.0) / 20.0).powi(2) + ((z + 8.75) / 3.75).powi(2);
                let ellipsoid = ((x - 20.0) / 15.0).powi(2) + ((y - 20.0) / 7.5).powi(2) + ((z + 30.0) / 5.0).powi(2);
                let sphere = (x - 20.0).powi(2) + (y + 20.0).powi(2) + (z + 35.0).powi(2);
                if sphere <= 6.25 {
                    80.0 * MPA
                } else if spheroid <= 1.0 || ellipsoid <= 1.0 {
                    156.8 * MPA
                } else {
                    layered(z, -15.0, -30.0)
                }
            }
            TargetModel::Homogeneous { lambda, mu } => return Some((*lambda, *mu)),
            TargetModel::Custom { .. } => return None,
        };
        Some((v, v))
    }
}

/// Smooth depth profile in MPa at paper-scale depth `z` (m, negative down).
pub fn smooth_profile(z: f64) -> f64 {
    let d = z.abs();
    80.0 + 0.45 * d + 35.0 * (-(d - 22.5).powi(2) / 150.0).exp()
}

fn layered(z: f64, first: f64, second: f64) -> f64 {
    MPA * if z >= first {
        80.0
    } else if z >= second {
        101.25
    } else {
        125.0
    }
}

/// Nodal λ, μ, ρ of a target model, extended into the PML.
pub fn build_target_model(model: &TargetModel, mesh: &SpectralMesh, rho: f64) -> Result<MaterialField> {
    let n = mesh.n_nodes();
    let mut field = MaterialField::homogeneous(n, 0.0, 0.0, rho);
    if let TargetModel::Custom { path } = model {
        load_custom(path, mesh, &mut field)?;
    } else {
        for node in 0..n {
            let (l, m) = model.evaluate(&mesh.spec, mesh.coords[node]).expect("analytic model");
            field.lambda[node] = l;
            field.mu[node] = m;
        }
    }
    extend_into_pml(&mut field, mesh);
    field.validate()?;
    Ok(field)
}

fn load_custom(path: &std::path::Path, mesh: &SpectralMesh, field: &mut MaterialField) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| FwiError::io(format!("reading {}", path.display()), e))?;
    let mut seen = vec![false; mesh.n_nodes()];
    let parse_err = |line: usize, msg: String| FwiError::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {msg}"),
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with('x')) {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(i + 1, e.to_string()))?;
        if vals.len() != 6 {
            return Err(parse_err(i + 1, format!("expected 6 columns, found {}", vals.len())));
        }
        let node = mesh
            .locate_node([vals[0], vals[1], vals[2]])
            .map_err(|e| parse_err(i + 1, e.to_string()))?;
        field.lambda[node] = vals[3];
        field.mu[node] = vals[4];
        field.rho[node] = vals[5];
        seen[node] = true;
    }
    if let Some(&missing) = mesh.rd_nodes.iter().find(|&&n| !seen[n as usize]) {
        let c = mesh.coords[missing as usize];
        return Err(FwiError::Parse {
            path: path.to_path_buf(),
            message: format!("no value for node at ({}, {}, {})", c[0], c[1], c[2]),
        });
    }
    Ok(())
}
