//! Pointwise comparison of adjoint and finite-difference directional derivatives.

use crate::error::{FwiError, Result};
use crate::gradient::{directional_derivative_fd, GradCheckRow, Parameter};

use super::setup::Setup;

/// One row per configured pulse and point, misfit only (no regularization).
pub fn run_gradcheck(setup: &Setup) -> Result<Vec<GradCheckRow>> {
    let gc = &setup.config.gradcheck;
    if gc.points.is_empty() {
        return Err(FwiError::Config("gradcheck needs at least one point".into()));
    }
    let stages = gc
        .pulses
        .iter()
        .map(|p| Ok((setup.config.pulse(p)?, gc.duration)))
        .collect::<Result<Vec<_>>>()?;
    let data = setup.synthesize(&stages)?;
    let (l0, m0) = setup.initial_guess();
    let problem = &setup.problem;
    let space = problem.space();
    let zero = vec![0.0; space.len()];
    let mut rows = Vec::new();
    for (pulse, duration) in &stages {
        let stage = data.stage(&setup.config, pulse, *duration)?;
        let mut pass = problem.forward(&l0, &m0, &stage, true)?;
        let j0 = pass.misfit;
        let (mis_l, mis_m) = problem.misfit_gradient(&mut pass, &stage)?;
        drop(pass);
        let g_l = space.reduced_gradient(&mis_l, &zero, 0.0)?;
        let g_m = space.reduced_gradient(&mis_m, &zero, 0.0)?;
        for p in &gc.points {
            let coords = [p.x, p.y, p.z];
            let node = setup.mesh.locate_node(coords)?;
            if !setup.mesh.is_rd_node(node) {
                return Err(FwiError::Config(format!("gradcheck point {coords:?} is not in the regular domain")));
            }
            let mut dir = zero.clone();
            dir[setup.mesh.rd_index[node] as usize] = 1.0;
            let g = match p.field {
                Parameter::Lambda => &g_l,
                Parameter::Mu => &g_m,
            };
            let d_co = space.directional_derivative_co(g, &dir)?;
            let mut d_fd = Vec::new();
            for &h in &gc.steps {
                let h = h * gc.scale;
                let fd = directional_derivative_fd(|l, m| problem.misfit(l, m, &stage), &l0, &m0, &dir, p.field, h, Some(j0))?;
                d_fd.push((h, fd));
            }
            let row = GradCheckRow {
                case: pulse.name.clone(),
                f_max: pulse.f_max,
                coords,
                field: p.field,
                d_co,
                d_fd,
            };
            log::info!("{} {} at {:?}: best relative error {:.2e}", row.case, row.field, row.coords, row.best_relative_error());
            rows.push(row);
        }
    }
    Ok(rows)
}
