use std::sync::Arc;

use super::*;
use crate::medium::StretchProfile;
use crate::operators::LoadCase;
use crate::specgrid::{build_mesh, build_mesh_with, GridSpec, MeshOptions, StressSpace};

/// `m x'' + c x' + k x + g int x = f` for one scalar unknown.
pub(crate) struct Scalar {
    pub c: f64,
    pub k: f64,
    pub g: f64,
    mask: [bool; 1],
    inv: [f64; 1],
}

impl Scalar {
    pub fn new(m: f64, c: f64, k: f64, g: f64) -> Self {
        Self {
            c,
            k,
            g,
            mask: [true],
            inv: [1.0 / m],
        }
    }
}

impl SemiDiscreteSystem for Scalar {
    fn dim(&self) -> usize {
        1
    }
    fn history_mask(&self) -> &[bool] {
        &self.mask
    }
    fn inv_mass(&self) -> &[f64] {
        &self.inv
    }
    fn apply_combined(&self, inputs: [Option<(&[f64], f64)>; 3], _transpose: bool, out: &mut [f64]) {
        out[0] = 0.0;
        for (input, coef) in inputs.iter().zip([self.c, self.k, self.g]) {
            if let Some((x, s)) = input {
                out[0] += s * coef * x[0];
            }
        }
    }
}

#[test]
fn scalar_decay_one_step() {
    let mut y = [1.0];
    rk4_ode_step(&mut y, 0.0, 0.1, |_, y, k| k[0] = -y[0]);
    assert!((y[0] - 0.9048375).abs() < 5e-8);
    assert!((y[0] - (-0.1f64).exp()).abs() < 1e-7);
}

#[test]
fn system_step_matches_plain_ode_step() {
    let sys = Scalar::new(2.0, 0.3, 5.0, 0.7);
    let force = |t: f64, out: &mut [f64]| out[0] += (3.0 * t).sin();
    let mut s = StateTriple {
        x0: vec![0.1],
        x1: vec![-0.2],
        x2: vec![0.4],
        t: 0.3,
    };
    let mut y = [0.1, -0.2, 0.4];
    Rk4::new(&sys, Direction::Forward).step(&mut s, 0.05, &force).unwrap();
    rk4_ode_step(&mut y, 0.3, 0.05, |t, y, k| {
        k[0] = y[1];
        k[1] = y[2];
        k[2] = ((3.0 * t).sin() - 0.3 * y[2] - 5.0 * y[1] - 0.7 * y[0]) / 2.0;
    });
    assert!((s.x0[0] - y[0]).abs() < 1e-15);
    assert!((s.x1[0] - y[1]).abs() < 1e-15);
    assert!((s.x2[0] - y[2]).abs() < 1e-15);
    assert!((s.t - 0.35).abs() < 1e-15);
}

#[test]
fn scalar_fourth_order_convergence() {
    let sys = Scalar::new(1.0, 0.5, 40.0, 3.0);
    let force = |t: f64, out: &mut [f64]| out[0] += (-(t - 0.3) * (t - 0.3) / 0.01).exp();
    let run = |dt: f64| {
        let mut s = StateTriple::zeros(1, 0.0);
        let mut rk = Rk4::new(&sys, Direction::Forward);
        let n = steps_for(1.0, dt);
        for i in 1..=n {
            rk.step(&mut s, dt, &force).unwrap();
            s.t = i as f64 * dt;
        }
        s.x1[0]
    };
    let reference = run(0.01 / 16.0);
    let e: Vec<f64> = [0.01, 0.005, 0.0025].iter().map(|&dt| (run(dt) - reference).abs()).collect();
    let p1 = (e[0] / e[1]).log2();
    let p2 = (e[1] / e[2]).log2();
    assert!(p1 > 3.7 && p2 > 3.7, "orders {p1} {p2}");
}

fn small_ops(profile: StretchProfile) -> (OperatorSet, MaterialField) {
    let mesh = build_mesh(GridSpec::new([4.0, 4.0, 2.0], 1.0, 1.0)).unwrap();
    let mat = MaterialField::homogeneous(mesh.n_nodes(), 80e6, 80e6, 2000.0);
    let ops = OperatorSet::assemble(Arc::new(mesh), &mat, &profile).unwrap();
    (ops, mat)
}

fn load(amplitude: f64) -> LoadCase {
    LoadCase {
        patch: [-1.0, 1.0, -1.0, 1.0],
        amplitude,
        pulse: crate::operators::Pulse::new("fast", 0.01, 2e-5, 0.02, 150.0),
    }
}

#[test]
fn zero_force_keeps_zero_state() {
    let (ops, mat) = small_ops(StretchProfile::default());
    let recv = ops.mesh().rd_surface_nodes();
    let out = run_forward(&ops, &mat, &NoForce, &recv, &RunOptions::new(1e-4, 0.005)).unwrap();
    assert!(out.final_state.max_abs() == 0.0);
    assert!(out.traces.data.iter().all(|&x| x == 0.0));
}

#[test]
fn traces_are_linear_in_amplitude() {
    let (ops, mat) = small_ops(StretchProfile::default());
    let recv = ops.mesh().rd_surface_nodes();
    let opts = RunOptions::new(1e-4, 0.01);
    let f1 = SurfaceForce::new(&load(1e3), ops.mesh()).unwrap();
    let f2 = SurfaceForce::new(&load(2e3), ops.mesh()).unwrap();
    let a = run_forward(&ops, &mat, &f1, &recv, &opts).unwrap();
    let b = run_forward(&ops, &mat, &f2, &recv, &opts).unwrap();
    assert_eq!(a.traces.n_samples, opts.n_steps + 1);
    let peak = a.traces.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(peak > 0.0);
    for (x, y) in a.traces.data.iter().zip(&b.traces.data) {
        assert!((2.0 * x - y).abs() <= 1e-14 * peak);
    }
}

#[test]
fn snapshots_cover_both_ends_and_spill_round_trips() {
    let (ops, mat) = small_ops(StretchProfile::default());
    let f = SurfaceForce::new(&load(1e3), ops.mesh()).unwrap();
    let mut opts = RunOptions::new(1e-4, 0.004).with_snapshots(10);
    let mem = run_forward(&ops, &mat, &f, &[], &opts).unwrap();
    let mut mem_store = mem.snapshots.unwrap();
    assert_eq!(mem_store.n_frames(), 5);
    assert!((mem_store.frame_time(4) - 0.004).abs() < 1e-15);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snap.bin");
    opts.snapshot_budget = 0;
    opts.spill_path = Some(path.clone());
    let spilled = run_forward(&ops, &mat, &f, &[], &opts).unwrap();
    drop(spilled);
    let mut reopened = SnapshotStore::open(&path).unwrap();
    reopened.check_aligned(&mem_store).unwrap();
    for i in 0..5 {
        assert_eq!(reopened.frame(i).unwrap(), mem_store.frame(i).unwrap());
    }

    opts.spill_path = None;
    assert!(matches!(
        run_forward(&ops, &mat, &f, &[], &opts),
        Err(FwiError::StorageExhausted { .. })
    ));
    opts.stride = Some(7);
    assert!(run_forward(&ops, &mat, &f, &[], &opts).is_err());
}

#[test]
fn energy_of_rigid_translation() {
    let opts = MeshOptions {
        regular_everywhere: true,
        clamp_outer: false,
        stress_space: StressSpace::Continuous,
    };
    let mesh = build_mesh_with(GridSpec::new([2.0, 1.0, 1.0], 1.0, 0.0), opts).unwrap();
    let mat = MaterialField::homogeneous(mesh.n_nodes(), 3.0, 2.0, 5.0);
    let ops = OperatorSet::assemble(Arc::new(mesh), &mat, &StretchProfile::default()).unwrap();
    let mut s = StateTriple::zeros(ops.state_dim(), 0.0);
    assert_eq!(total_energy(&ops, &s), 0.0);
    for i in (0..ops.n_displacement_dofs()).step_by(3) {
        s.x1[i] = 0.7;
        s.x2[i] = 3.0;
    }
    let e = total_energy(&ops, &s);
    let expect = 0.5 * (5.0 * 2.0) * 9.0;
    assert!((e - expect).abs() < 1e-12 * expect);
    assert!((rd_energy(&ops, &s, &mat) - expect).abs() < 1e-12 * expect);
}

#[test]
fn instability_is_reported() {
    let (ops, mat) = small_ops(StretchProfile::default());
    let f = SurfaceForce::new(&load(1e3), ops.mesh()).unwrap();
    let err = run_forward(&ops, &mat, &f, &[], &RunOptions::new(5e-3, 2.0)).unwrap_err();
    assert!(matches!(err, FwiError::Unstable { .. }), "{err}");
}

#[test]
fn time_weights_integrate_polynomials() {
    let f = |t: f64| 2.0 + t - 3.0 * t * t + t * t * t;
    let exact = |t: f64| 2.0 * t + 0.5 * t * t - t * t * t + 0.25 * t.powi(4);
    for n in [3, 4, 5, 6, 7, 10] {
        let h = 0.7 / (n - 1) as f64;
        let w = time_weights(n, h, TimeRule::Simpson);
        let q: f64 = w.iter().enumerate().map(|(i, w)| w * f(i as f64 * h)).sum();
        assert!((q - exact(0.7)).abs() < 1e-13, "n = {n}");
        let w = time_weights(n, h, TimeRule::Trapezoid);
        assert!((w.iter().sum::<f64>() - 0.7).abs() < 1e-14);
        assert_eq!(w[0], 0.5 * h);
    }
    assert_eq!(time_weights(2, 1.0, TimeRule::Simpson), vec![0.5, 0.5]);
    assert_eq!(time_weights(1, 1.0, TimeRule::Simpson), vec![0.0]);
}
