//! Final-value adjoint problem, integrated backwards in time with RK-4.
//!
//! ```text
//! y0' = P y1
//! y1' = y2
//! y2' = M^-1 (f_adj + C^T y2 - K^T y1 + G^T y0),     y(T) = 0
//! ```
//!
//! The step is the forward RK-4 with `-dt`; the source is evaluated at
//! `t_n`, `t_n - dt/2` and `t_n - dt`.

use crate::error::{FwiError, Result};
use crate::forward::{check_finite, rd_frame, Direction, ForceProvider, Rk4, RunOptions, SnapshotStore, StateTriple, TraceRecord};
use crate::operators::OperatorSet;
use crate::specgrid::{SpectralMesh, NO_DOF};

/// Any time-dependent adjoint load; receiver misfits are the usual one.
pub trait AdjointSource: ForceProvider {}
impl<T: ForceProvider + ?Sized> AdjointSource for T {}

/// Sampled misfit `u - u_m` injected at the receiver displacement DOFs.
#[derive(Debug, Clone)]
pub struct MisfitSource<'a> {
    misfit: &'a TraceRecord,
    dofs: Vec<u32>,
    cubic: bool,
}

impl<'a> MisfitSource<'a> {
    pub fn new(misfit: &'a TraceRecord, mesh: &SpectralMesh) -> Self {
        let dofs = misfit
            .receivers
            .iter()
            .map(|&n| mesh.displacement_dof[n as usize])
            .collect();
        Self { misfit, dofs, cubic: false }
    }

    /// Switches between linear (default) and cubic interpolation between samples.
    pub fn with_cubic(mut self, cubic: bool) -> Self {
        self.cubic = cubic;
        self
    }

    /// Misfit of every receiver at `t`, linearly interpolated between samples.
    pub fn values_at(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let rec = self.misfit;
        let end = rec.duration();
        let tol = 1e-9 * rec.dt;
        if t < -tol || t > end + tol || rec.n_samples == 0 {
            return Err(FwiError::OutsideRecord { t, end });
        }
        let s = (t / rec.dt).clamp(0.0, (rec.n_samples - 1) as f64);
        let lo = s.floor();
        let frac = s - lo;
        let lo = lo as usize;
        if frac < 1e-9 || lo + 1 >= rec.n_samples {
            out.copy_from_slice(rec.sample(lo));
        } else if frac > 1.0 - 1e-9 {
            out.copy_from_slice(rec.sample(lo + 1));
        } else if self.cubic && lo >= 1 && lo + 2 < rec.n_samples {
            // 4-point Lagrange through samples lo-1 .. lo+2
            let x = frac;
            let w = [
                -x * (x - 1.0) * (x - 2.0) / 6.0,
                (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0,
                -(x + 1.0) * x * (x - 2.0) / 2.0,
                (x + 1.0) * x * (x - 1.0) / 6.0,
            ];
            let s = [rec.sample(lo - 1), rec.sample(lo), rec.sample(lo + 1), rec.sample(lo + 2)];
            for i in 0..out.len() {
                out[i] = w[0] * s[0][i] + w[1] * s[1][i] + w[2] * s[2][i] + w[3] * s[3][i];
            }
        } else {
            let (a, b) = (rec.sample(lo), rec.sample(lo + 1));
            for i in 0..out.len() {
                out[i] = (1.0 - frac) * a[i] + frac * b[i];
            }
        }
        Ok(())
    }
}

impl ForceProvider for MisfitSource<'_> {
    fn add_force(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let mut vals = vec![0.0; 3 * self.dofs.len()];
        self.values_at(t, &mut vals)?;
        for (r, &d) in self.dofs.iter().enumerate() {
            if d != NO_DOF {
                for c in 0..3 {
                    out[d as usize + c] += vals[3 * r + c];
                }
            }
        }
        Ok(())
    }
}

/// Pointwise difference `computed - measured` on identical layouts.
pub fn misfit_record(computed: &TraceRecord, measured: &TraceRecord) -> Result<TraceRecord> {
    computed.check_layout(measured)?;
    let mut out = computed.clone();
    for (o, m) in out.data.iter_mut().zip(&measured.data) {
        *o -= m;
    }
    Ok(out)
}

/// Full-length adjoint load vector at `t`.
pub fn adjoint_source(misfit: &TraceRecord, mesh: &SpectralMesh, t: f64) -> Result<Vec<f64>> {
    let mut f = vec![0.0; mesh.state_dim()];
    MisfitSource::new(misfit, mesh).add_force(t, &mut f)?;
    Ok(f)
}

/// One reverse step from `t` to `t - dt` (`dt > 0`).
pub fn step_adjoint_reverse_rk4(
    ops: &OperatorSet,
    state: &mut StateTriple,
    dt: f64,
    source: &dyn ForceProvider,
) -> Result<()> {
    Rk4::new(ops, Direction::Adjoint).step(state, -dt, source)
}

/// Outputs of an adjoint run.
#[derive(Debug)]
pub struct AdjointOutput {
    /// Adjoint displacement over the regular domain at the forward snapshot times.
    pub snapshots: Option<SnapshotStore>,
    /// State at `t = 0`.
    pub final_state: StateTriple,
}

/// Integrates from `T = n_steps * dt` down to 0 and stores strided snapshots.
pub fn run_adjoint(ops: &OperatorSet, source: &dyn ForceProvider, opts: &RunOptions) -> Result<AdjointOutput> {
    let mut store = opts.make_store(ops.mesh())?;
    let mut frame = vec![0.0; 3 * ops.mesh().rd_nodes.len()];
    let out = run_adjoint_with(ops, source, opts, &mut |step, state| {
        if let Some(s) = store.as_mut() {
            if step % s.stride == 0 {
                rd_frame(ops.mesh(), &state.x1, &mut frame);
                s.put(step / s.stride, &frame)?;
            }
        }
        Ok(())
    })?;
    Ok(AdjointOutput {
        snapshots: store,
        final_state: out,
    })
}

/// Reverse sweep calling `observer(step, state)` at `step = n_steps, ..., 0`.
pub fn run_adjoint_with(
    ops: &OperatorSet,
    source: &dyn ForceProvider,
    opts: &RunOptions,
    observer: &mut dyn FnMut(usize, &StateTriple) -> Result<()>,
) -> Result<StateTriple> {
    let n = opts.n_steps;
    let mut state = StateTriple::zeros(ops.state_dim(), n as f64 * opts.dt);
    let mut rk = Rk4::new(ops, Direction::Adjoint);
    observer(n, &state)?;
    for step in (0..n).rev() {
        rk.step(&mut state, -opts.dt, source)?;
        state.t = step as f64 * opts.dt;
        let taken = n - step;
        if taken % 100 == 0 || step == 0 {
            check_finite(&state, taken)?;
        }
        observer(step, &state)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::forward::tests::Scalar;
    use crate::medium::{MaterialField, StretchProfile};
    use crate::specgrid::{build_mesh, GridSpec};

    fn record(values: &[f64], dt: f64) -> TraceRecord {
        TraceRecord {
            receivers: vec![0],
            coords: vec![[0.0; 3]],
            dt,
            n_samples: values.len(),
            data: values.iter().flat_map(|&v| [v, 0.0, 0.0]).collect(),
        }
    }

    #[test]
    fn half_step_is_linear_interpolation() {
        let rec = record(&[0.0, 0.2, 0.4], 0.1);
        let mesh = build_mesh(GridSpec::new([2.0, 2.0, 2.0], 1.0, 1.0)).unwrap();
        let src = MisfitSource::new(&rec, &mesh);
        let mut out = [0.0; 3];
        src.values_at(0.15, &mut out).unwrap();
        assert!((out[0] - 0.3).abs() < 1e-15);
        src.values_at(0.2, &mut out).unwrap();
        assert_eq!(out[0], 0.4);
        assert!(matches!(src.values_at(0.21, &mut out), Err(FwiError::OutsideRecord { .. })));
    }

    #[test]
    fn cubic_half_step_reproduces_cubics() {
        let f = |t: f64| 1.0 - 2.0 * t + 3.0 * t * t - 4.0 * t * t * t;
        let dt = 0.1;
        let rec = record(&(0..6).map(|i| f(i as f64 * dt)).collect::<Vec<_>>(), dt);
        let mesh = build_mesh(GridSpec::new([2.0, 2.0, 2.0], 1.0, 1.0)).unwrap();
        let src = MisfitSource::new(&rec, &mesh).with_cubic(true);
        let mut out = [0.0; 3];
        for t in [0.15, 0.25, 0.35] {
            src.values_at(t, &mut out).unwrap();
            assert!((out[0] - f(t)).abs() < 1e-13, "t = {t}");
        }
        // end intervals fall back to linear
        src.values_at(0.05, &mut out).unwrap();
        assert!((out[0] - 0.5 * (f(0.0) + f(0.1))).abs() < 1e-14);
    }

    #[test]
    fn unit_misfit_hits_one_dof() {
        let mesh = build_mesh(GridSpec::new([2.0, 2.0, 2.0], 1.0, 1.0)).unwrap();
        let node = mesh.locate_node([0.0, 0.0, 0.0]).unwrap();
        let mut rec = record(&[1.0, 1.0], 0.1);
        rec.receivers = vec![node as u32];
        let f = adjoint_source(&rec, &mesh, 0.05).unwrap();
        let d = mesh.displacement_dof[node] as usize;
        for (i, &v) in f.iter().enumerate() {
            assert_eq!(v, if i == d { 1.0 } else { 0.0 });
        }
        let zero = record(&[0.0, 0.0], 0.1);
        assert!(adjoint_source(&zero, &mesh, 0.1).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reverse_step_is_forward_rk4_of_reversed_ode() {
        // y(t) with s = T - t satisfies dY/ds = -F(Y); one reverse step of the
        // adjoint equals forward RK-4 in s on that reversed system.
        let (m, c, k, g) = (2.0, 0.3, 5.0, 0.7);
        let sys = Scalar::new(m, c, k, g);
        let src = |t: f64, out: &mut [f64]| out[0] += (2.0 * t).cos();
        let mut s = StateTriple {
            x0: vec![0.2],
            x1: vec![-0.1],
            x2: vec![0.3],
            t: 1.0,
        };
        let dt = 0.05;
        Rk4::new(&sys, Direction::Adjoint).step(&mut s, -dt, &src).unwrap();
        let mut y = [0.2, -0.1, 0.3];
        crate::forward::rk4_ode_step(&mut y, 0.0, dt, |sv, y, kk| {
            let t = 1.0 - sv;
            kk[0] = -y[1];
            kk[1] = -y[2];
            kk[2] = -(((2.0 * t).cos() + c * y[2] - k * y[1] + g * y[0]) / m);
        });
        assert!((s.x0[0] - y[0]).abs() < 1e-14);
        assert!((s.x1[0] - y[1]).abs() < 1e-14);
        assert!((s.x2[0] - y[2]).abs() < 1e-14);
        assert!((s.t - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_and_doubled_misfit() {
        let mesh = build_mesh(GridSpec::new([2.0, 2.0, 2.0], 1.0, 1.0)).unwrap();
        let mat = MaterialField::homogeneous(mesh.n_nodes(), 80e6, 80e6, 2000.0);
        let ops = OperatorSet::assemble(Arc::new(mesh), &mat, &StretchProfile::default()).unwrap();
        let opts = RunOptions::new(1e-4, 0.003).with_snapshots(10);
        let recv = ops.mesh().rd_surface_nodes();
        let mut rec = TraceRecord::new(ops.mesh(), &recv, 1e-4, opts.n_steps + 1);
        let zero = run_adjoint(&ops, &MisfitSource::new(&rec, ops.mesh()), &opts).unwrap();
        let mut zs = zero.snapshots.unwrap();
        for i in 0..zs.n_frames() {
            assert!(zs.frame(i).unwrap().iter().all(|&v| v == 0.0));
        }
        for (i, v) in rec.data.iter_mut().enumerate() {
            *v = ((i % 7) as f64 - 3.0) * 1e-6;
        }
        let a = run_adjoint(&ops, &MisfitSource::new(&rec, ops.mesh()), &opts).unwrap();
        rec.data.iter_mut().for_each(|v| *v *= 2.0);
        let b = run_adjoint(&ops, &MisfitSource::new(&rec, ops.mesh()), &opts).unwrap();
        let (mut sa, mut sb) = (a.snapshots.unwrap(), b.snapshots.unwrap());
        assert_eq!(sa.n_frames(), sa.expected_frames());
        for i in 0..sa.n_frames() {
            let (fa, fb) = (sa.frame(i).unwrap(), sb.frame(i).unwrap());
            for (x, y) in fa.iter().zip(&fb) {
                assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-30));
            }
        }
        // terminal frame is the zero terminal condition
        assert!(sa.frame(sa.n_frames() - 1).unwrap().iter().all(|&v| v == 0.0));
    }
}
