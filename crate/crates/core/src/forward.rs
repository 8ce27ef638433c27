//! Explicit RK-4 integration of the first-order state system, with receiver
//! traces and regular-domain wavefield snapshots.
//!
//! The state is the triple `(x0, x1, x2)` = (history, solution, rate):
//!
//! ```text
//! x0' = P x1
//! x1' = x2
//! x2' = M^-1 (f - C x2 - K x1 - G x0)
//! ```
//!
//! where `P` keeps only the entries with PML support.

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{FwiError, Result};
use crate::medium::MaterialField;
use crate::operators::{LoadCase, OperatorSet, Pulse};
use crate::specgrid::{SpectralMesh, NO_DOF};
use serde::{Deserialize, Serialize};

/// A linear second-order system `M x'' + C x' + K x + G int x = f` with diagonal `M`.
pub trait SemiDiscreteSystem {
    fn dim(&self) -> usize;
    fn history_mask(&self) -> &[bool];
    fn inv_mass(&self) -> &[f64];
    /// Overwrites `out` with `s_C C x_C + s_K K x_K + s_G G x_G`, or the transposed operators.
    fn apply_combined(&self, inputs: [Option<(&[f64], f64)>; 3], transpose: bool, out: &mut [f64]);
}

impl SemiDiscreteSystem for OperatorSet {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn history_mask(&self) -> &[bool] {
        OperatorSet::history_mask(self)
    }

    fn inv_mass(&self) -> &[f64] {
        &self.inv_mass_diag
    }

    fn apply_combined(&self, inputs: [Option<(&[f64], f64)>; 3], transpose: bool, out: &mut [f64]) {
        OperatorSet::apply_combined(self, inputs, transpose, out)
    }
}

/// Time-dependent right-hand side.
pub trait ForceProvider {
    /// Adds the nodal force at time `t` into `out`.
    fn add_force(&self, t: f64, out: &mut [f64]) -> Result<()>;
}

/// Identically zero load.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoForce;

impl ForceProvider for NoForce {
    fn add_force(&self, _t: f64, _out: &mut [f64]) -> Result<()> {
        Ok(())
    }
}

/// Precomputed surface traction `amplitude * pulse(t) * int phi dGamma`.
#[derive(Debug, Clone)]
pub struct SurfaceForce {
    weights: Vec<(usize, f64)>,
    amplitude: f64,
    pulse: Pulse,
}

impl SurfaceForce {
    pub fn new(load: &LoadCase, mesh: &SpectralMesh) -> Result<Self> {
        load.pulse.validate()?;
        Ok(Self {
            weights: load.nodal_weights(mesh)?,
            amplitude: load.amplitude,
            pulse: load.pulse.clone(),
        })
    }

    pub fn dofs(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights.iter().map(|(d, _)| *d)
    }
}

impl ForceProvider for SurfaceForce {
    fn add_force(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let s = self.amplitude * self.pulse.value(t);
        if s != 0.0 {
            for &(d, w) in &self.weights {
                out[d] += s * w;
            }
        }
        Ok(())
    }
}

impl<F: Fn(f64, &mut [f64])> ForceProvider for F {
    fn add_force(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self(t, out);
        Ok(())
    }
}

/// Which first-order system an integrator advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `x2' = M^-1 (f - C x2 - K x1 - G x0)`.
    Forward,
    /// `y2' = M^-1 (f + C^T y2 - K^T y1 + G^T y0)`, integrated with negative steps.
    Adjoint,
}

/// `(x0, x1, x2)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTriple {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub t: f64,
}

impl StateTriple {
    pub fn zeros(n: usize, t: f64) -> Self {
        Self {
            x0: vec![0.0; n],
            x1: vec![0.0; n],
            x2: vec![0.0; n],
            t,
        }
    }

    pub fn dim(&self) -> usize {
        self.x1.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.x0
            .iter()
            .chain(&self.x1)
            .chain(&self.x2)
            .fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
    }

    pub fn is_finite(&self) -> bool {
        self.max_abs().is_finite()
    }
}

/// Classical four-stage Runge-Kutta integrator with reusable buffers.
pub struct Rk4<'a, S: SemiDiscreteSystem + ?Sized> {
    sys: &'a S,
    direction: Direction,
    k: [Vec<f64>; 3],
    acc: [Vec<f64>; 3],
    tmp: [Vec<f64>; 3],
}

impl<'a, S: SemiDiscreteSystem + ?Sized> Rk4<'a, S> {
    pub fn new(sys: &'a S, direction: Direction) -> Self {
        let n = sys.dim();
        let z = || [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        Self {
            sys,
            direction,
            k: z(),
            acc: z(),
            tmp: z(),
        }
    }

    fn derivative(
        sys: &S,
        direction: Direction,
        x: [&[f64]; 3],
        t: f64,
        force: &dyn ForceProvider,
        k: &mut [Vec<f64>; 3],
    ) -> Result<()> {
        let [x0, x1, x2] = x;
        let [k0, k1, k2] = k;
        for ((o, &v), &m) in k0.iter_mut().zip(x1).zip(sys.history_mask()) {
            *o = if m { v } else { 0.0 };
        }
        k1.copy_from_slice(x2);
        match direction {
            Direction::Forward => {
                sys.apply_combined([Some((x2, -1.0)), Some((x1, -1.0)), Some((x0, -1.0))], false, k2)
            }
            Direction::Adjoint => {
                sys.apply_combined([Some((x2, 1.0)), Some((x1, -1.0)), Some((x0, 1.0))], true, k2)
            }
        }
        force.add_force(t, k2)?;
        for (o, m) in k2.iter_mut().zip(sys.inv_mass()) {
            *o *= m;
        }
        Ok(())
    }

    /// Advances `state` by `dt` (negative for reverse-time integration).
    /// The force is evaluated at `t`, `t + dt/2` and `t + dt`.
    pub fn step(&mut self, state: &mut StateTriple, dt: f64, force: &dyn ForceProvider) -> Result<()> {
        let t0 = state.t;
        let th = t0 + 0.5 * dt;
        let t1 = t0 + dt;
        let sys = self.sys;
        let dir = self.direction;

        Self::derivative(sys, dir, [&state.x0, &state.x1, &state.x2], t0, force, &mut self.k)?;
        for (b, s) in [&state.x0, &state.x1, &state.x2].into_iter().enumerate() {
            let (k, a, tm) = (&self.k[b], &mut self.acc[b], &mut self.tmp[b]);
            for i in 0..s.len() {
                a[i] = k[i];
                tm[i] = s[i] + 0.5 * dt * k[i];
            }
        }
        for (stage_dt, weight, t) in [(0.5 * dt, 2.0, th), (dt, 2.0, th)] {
            Self::derivative(sys, dir, [&self.tmp[0], &self.tmp[1], &self.tmp[2]], t, force, &mut self.k)?;
            for (b, s) in [&state.x0, &state.x1, &state.x2].into_iter().enumerate() {
                let (k, a, tm) = (&self.k[b], &mut self.acc[b], &mut self.tmp[b]);
                for i in 0..s.len() {
                    a[i] += weight * k[i];
                    tm[i] = s[i] + stage_dt * k[i];
                }
            }
        }
        Self::derivative(sys, dir, [&self.tmp[0], &self.tmp[1], &self.tmp[2]], t1, force, &mut self.k)?;
        let c = dt / 6.0;
        for (b, s) in [&mut state.x0, &mut state.x1, &mut state.x2].into_iter().enumerate() {
            let (k, a) = (&self.k[b], &self.acc[b]);
            for i in 0..s.len() {
                s[i] += c * (a[i] + k[i]);
            }
        }
        state.t = t1;
        Ok(())
    }
}

/// One forward RK-4 step of the state problem.
pub fn step_forward_rk4(
    ops: &OperatorSet,
    state: &mut StateTriple,
    dt: f64,
    force: &dyn ForceProvider,
) -> Result<()> {
    Rk4::new(ops, Direction::Forward).step(state, dt, force)
}

/// One RK-4 step of `y' = f(t, y)` for a plain ODE system.
pub fn rk4_ode_step(y: &mut [f64], t: f64, dt: f64, f: impl Fn(f64, &[f64], &mut [f64])) {
    let n = y.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    f(t, y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    f(t + 0.5 * dt, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    f(t + 0.5 * dt, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + dt * k3[i];
    }
    f(t + dt, &tmp, &mut k4);
    for i in 0..n {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Receiver displacement samples, one per step including `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub receivers: Vec<u32>,
    pub coords: Vec<[f64; 3]>,
    pub dt: f64,
    pub n_samples: usize,
    /// `data[(sample * n_receivers + r) * 3 + c]`.
    pub data: Vec<f64>,
}

impl TraceRecord {
    pub fn new(mesh: &SpectralMesh, receivers: &[u32], dt: f64, n_samples: usize) -> Self {
        Self {
            receivers: receivers.to_vec(),
            coords: receivers.iter().map(|&n| mesh.coords[n as usize]).collect(),
            dt,
            n_samples,
            data: vec![0.0; n_samples * receivers.len() * 3],
        }
    }

    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }

    pub fn time(&self, sample: usize) -> f64 {
        sample as f64 * self.dt
    }

    pub fn duration(&self) -> f64 {
        self.time(self.n_samples.saturating_sub(1))
    }

    pub fn get(&self, sample: usize, r: usize) -> [f64; 3] {
        let i = (sample * self.n_receivers() + r) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn sample_mut(&mut self, sample: usize) -> &mut [f64] {
        let w = self.n_receivers() * 3;
        &mut self.data[sample * w..(sample + 1) * w]
    }

    pub fn sample(&self, sample: usize) -> &[f64] {
        let w = self.n_receivers() * 3;
        &self.data[sample * w..(sample + 1) * w]
    }

    /// One component of one receiver over time.
    pub fn component(&self, r: usize, c: usize) -> Vec<f64> {
        (0..self.n_samples).map(|s| self.get(s, r)[c]).collect()
    }

    /// Checks that `other` has the same receivers and time grid.
    pub fn check_layout(&self, other: &TraceRecord) -> Result<()> {
        if self.receivers != other.receivers
            || self.n_samples != other.n_samples
            || (self.dt - other.dt).abs() > 1e-12 * self.dt
        {
            return Err(FwiError::MisalignedStores(format!(
                "trace layouts differ: {} receivers x {} samples (dt {:e}) vs {} x {} (dt {:e})",
                self.n_receivers(),
                self.n_samples,
                self.dt,
                other.n_receivers(),
                other.n_samples,
                other.dt
            )));
        }
        Ok(())
    }

    /// Copies receiver displacements out of a solution vector.
    pub fn record(&mut self, sample: usize, mesh: &SpectralMesh, x1: &[f64]) {
        let dofs: Vec<u32> = self.receivers.iter().map(|&n| mesh.displacement_dof[n as usize]).collect();
        let row = self.sample_mut(sample);
        for (r, d) in dofs.into_iter().enumerate() {
            for c in 0..3 {
                row[3 * r + c] = if d == NO_DOF { 0.0 } else { x1[d as usize + c] };
            }
        }
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"PMLSNAP1";

#[derive(Debug)]
enum Storage {
    Memory(Vec<f64>),
    Spill { path: PathBuf, file: File },
}

/// Regular-domain displacement fields at every `stride`-th step.
///
/// A frame holds 3 values per node of `mesh.rd_nodes`, in that order.
#[derive(Debug)]
pub struct SnapshotStore {
    pub stride: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub frame_len: usize,
    n_frames: usize,
    written: Vec<bool>,
    storage: Storage,
}

impl SnapshotStore {
    pub fn in_memory(frame_len: usize, stride: usize, dt: f64, n_steps: usize) -> Result<Self> {
        check_stride(stride, n_steps)?;
        Ok(Self {
            stride,
            dt,
            n_steps,
            frame_len,
            n_frames: 0,
            written: vec![false; n_steps / stride + 1],
            storage: Storage::Memory(vec![0.0; frame_len * (n_steps / stride + 1)]),
        })
    }

    /// Stores frames in a flat binary file: an 8-byte magic, then little-endian
    /// `frame_len: u64, n_frames: u64, stride: u64, n_steps: u64, dt: f64`, then frames.
    pub fn spill(path: &Path, frame_len: usize, stride: usize, dt: f64, n_steps: usize) -> Result<Self> {
        check_stride(stride, n_steps)?;
        let file = File::options()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .map_err(|e| FwiError::io(format!("creating snapshot file {}", path.display()), e))?;
        let mut store = Self {
            stride,
            dt,
            n_steps,
            frame_len,
            n_frames: 0,
            written: vec![false; n_steps / stride + 1],
            storage: Storage::Spill {
                path: path.to_path_buf(),
                file,
            },
        };
        store.write_header()?;
        Ok(store)
    }

    fn write_header(&mut self) -> Result<()> {
        let header = self.header_bytes();
        if let Storage::Spill { path, file } = &mut self.storage {
            file.seek(SeekFrom::Start(0))
                .and_then(|_| file.write_all(&header))
                .map_err(|e| FwiError::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }

    fn header_bytes(&self) -> Vec<u8> {
        let mut h = SNAPSHOT_MAGIC.to_vec();
        for v in [self.frame_len as u64, self.n_frames as u64, self.stride as u64, self.n_steps as u64] {
            h.extend_from_slice(&v.to_le_bytes());
        }
        h.extend_from_slice(&self.dt.to_le_bytes());
        h
    }

    const HEADER_LEN: u64 = 8 + 5 * 8;

    /// Opens a spill file written by [`SnapshotStore::spill`].
    pub fn open(path: &Path) -> Result<Self> {
        let parse = |m: &str| FwiError::Parse {
            path: path.to_path_buf(),
            message: m.to_string(),
        };
        let mut file = File::options()
            .read(true)
            .write(true)
            .open(path)
            .map_err(|e| FwiError::io(format!("opening snapshot file {}", path.display()), e))?;
        let mut h = [0u8; Self::HEADER_LEN as usize];
        file.read_exact(&mut h).map_err(|_| parse("truncated header"))?;
        if &h[..8] != SNAPSHOT_MAGIC {
            return Err(parse("bad magic"));
        }
        let word = |i: usize| u64::from_le_bytes(h[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let n_frames = word(1) as usize;
        let store = Self {
            frame_len: word(0) as usize,
            n_frames,
            written: (0..word(3) as usize / word(2).max(1) as usize + 1).map(|i| i < n_frames).collect(),
            stride: word(2) as usize,
            n_steps: word(3) as usize,
            dt: f64::from_le_bytes(h[40..48].try_into().unwrap()),
            storage: Storage::Spill {
                path: path.to_path_buf(),
                file,
            },
        };
        Ok(store)
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn expected_frames(&self) -> usize {
        self.n_steps / self.stride + 1
    }

    pub fn frame_time(&self, i: usize) -> f64 {
        (i * self.stride) as f64 * self.dt
    }

    /// Appends the next frame in time order.
    pub fn push(&mut self, frame: &[f64]) -> Result<()> {
        let i = self.written.iter().position(|w| !w).unwrap_or(self.written.len());
        self.put(i, frame)
    }

    /// Writes frame `i` (time `i * stride * dt`); frames may arrive in any order.
    pub fn put(&mut self, i: usize, frame: &[f64]) -> Result<()> {
        if frame.len() != self.frame_len {
            return Err(FwiError::DimensionMismatch {
                expected: self.frame_len,
                got: frame.len(),
            });
        }
        if i >= self.written.len() || self.written[i] {
            return Err(FwiError::MisalignedStores(format!(
                "frame {i} out of range or written twice ({} frames expected)",
                self.written.len()
            )));
        }
        let n = self.frame_len;
        match &mut self.storage {
            Storage::Memory(v) => v[i * n..(i + 1) * n].copy_from_slice(frame),
            Storage::Spill { path, file } => {
                let offset = Self::HEADER_LEN + (i * n * 8) as u64;
                let mut w = BufWriter::new(&mut *file);
                w.seek(SeekFrom::Start(offset))
                    .and_then(|_| {
                        for v in frame {
                            w.write_all(&v.to_le_bytes())?;
                        }
                        w.flush()
                    })
                    .map_err(|e| FwiError::io(format!("writing {}", path.display()), e))?;
            }
        }
        self.written[i] = true;
        self.n_frames += 1;
        if matches!(self.storage, Storage::Spill { .. }) {
            self.write_header()?;
        }
        Ok(())
    }

    /// Copies frame `i` into `out`.
    pub fn frame_into(&mut self, i: usize, out: &mut [f64]) -> Result<()> {
        if !self.written.get(i).copied().unwrap_or(false) {
            return Err(FwiError::MisalignedStores(format!(
                "frame {i} requested but not stored ({} of {} present)",
                self.n_frames,
                self.written.len()
            )));
        }
        let n = self.frame_len;
        match &mut self.storage {
            Storage::Memory(v) => out.copy_from_slice(&v[i * n..(i + 1) * n]),
            Storage::Spill { path, file } => {
                let mut bytes = vec![0u8; n * 8];
                file.seek(SeekFrom::Start(Self::HEADER_LEN + (i * n * 8) as u64))
                    .and_then(|_| file.read_exact(&mut bytes))
                    .map_err(|e| FwiError::io(format!("reading {}", path.display()), e))?;
                for (o, c) in out.iter_mut().zip(bytes.chunks_exact(8)) {
                    *o = f64::from_le_bytes(c.try_into().unwrap());
                }
            }
        }
        Ok(())
    }

    pub fn frame(&mut self, i: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.frame_len];
        self.frame_into(i, &mut out)?;
        Ok(out)
    }

    /// Checks that two stores sample the same times.
    pub fn check_aligned(&self, other: &SnapshotStore) -> Result<()> {
        if self.stride != other.stride
            || self.n_steps != other.n_steps
            || self.frame_len != other.frame_len
            || self.n_frames != other.n_frames
            || (self.dt - other.dt).abs() > 1e-12 * self.dt.abs()
        {
            return Err(FwiError::MisalignedStores(format!(
                "stride {}/{}, steps {}/{}, frames {}/{}",
                self.stride, other.stride, self.n_steps, other.n_steps, self.n_frames, other.n_frames
            )));
        }
        Ok(())
    }

    /// Trapezoid weights over the stored frame times.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        self.quadrature_weights(TimeRule::Trapezoid)
    }

    /// Time-quadrature weights over the stored frame times.
    pub fn quadrature_weights(&self, rule: TimeRule) -> Vec<f64> {
        time_weights(self.expected_frames(), self.stride as f64 * self.dt, rule)
    }
}

/// Quadrature rule for time integrals over uniformly sampled records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeRule {
    /// Second order, with linear interpolation of sampled adjoint sources.
    Trapezoid,
    /// Composite Simpson (a 3/8 panel closes an odd interval count), with
    /// cubic interpolation of sampled adjoint sources.
    #[default]
    Simpson,
}

/// Weights of `rule` for `n` samples spaced `h` apart.
pub fn time_weights(n: usize, h: f64, rule: TimeRule) -> Vec<f64> {
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    let intervals = n - 1;
    if rule == TimeRule::Trapezoid || intervals < 2 {
        for i in 0..intervals {
            w[i] += 0.5 * h;
            w[i + 1] += 0.5 * h;
        }
        return w;
    }
    let simpson_end = if intervals % 2 == 0 { intervals } else { intervals - 3 };
    for i in (0..simpson_end).step_by(2) {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
    }
    if simpson_end < intervals {
        let i = simpson_end;
        w[i] += 3.0 * h / 8.0;
        w[i + 1] += 9.0 * h / 8.0;
        w[i + 2] += 9.0 * h / 8.0;
        w[i + 3] += 3.0 * h / 8.0;
    }
    w
}

fn check_stride(stride: usize, n_steps: usize) -> Result<()> {
    if stride == 0 || n_steps % stride != 0 {
        return Err(FwiError::Config(format!(
            "snapshot stride {stride} must divide the step count {n_steps}"
        )));
    }
    Ok(())
}

/// Gathers the regular-domain displacement frame from a solution vector.
pub fn rd_frame(mesh: &SpectralMesh, x1: &[f64], out: &mut [f64]) {
    for (i, &n) in mesh.rd_nodes.iter().enumerate() {
        let d = mesh.displacement_dof[n as usize];
        for c in 0..3 {
            out[3 * i + c] = if d == NO_DOF { 0.0 } else { x1[d as usize + c] };
        }
    }
}

/// Time grid and storage policy of a run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub dt: f64,
    pub n_steps: usize,
    /// Snapshot stride in steps; `None` disables snapshots.
    pub stride: Option<usize>,
    /// Memory budget for in-memory snapshots (bytes).
    pub snapshot_budget: u64,
    /// Spill snapshots to this file instead of exceeding the budget.
    pub spill_path: Option<PathBuf>,
    /// Record the regular-domain energy at every step.
    pub record_energy: bool,
}

impl RunOptions {
    pub fn new(dt: f64, duration: f64) -> Self {
        Self {
            dt,
            n_steps: steps_for(duration, dt),
            stride: None,
            snapshot_budget: 2 << 30,
            spill_path: None,
            record_energy: false,
        }
    }

    pub fn with_snapshots(mut self, stride: usize) -> Self {
        self.stride = Some(stride);
        self
    }

    pub fn duration(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub(crate) fn make_store(&self, mesh: &SpectralMesh) -> Result<Option<SnapshotStore>> {
        let Some(stride) = self.stride else { return Ok(None) };
        let frame_len = 3 * mesh.rd_nodes.len();
        let frames = (self.n_steps / stride.max(1) + 1) as u64;
        let required = frames * frame_len as u64 * 8;
        if required > self.snapshot_budget {
            return match &self.spill_path {
                Some(p) => SnapshotStore::spill(p, frame_len, stride, self.dt, self.n_steps).map(Some),
                None => Err(FwiError::StorageExhausted {
                    required,
                    budget: self.snapshot_budget,
                }),
            };
        }
        SnapshotStore::in_memory(frame_len, stride, self.dt, self.n_steps).map(Some)
    }
}

/// Number of steps covering `duration`, rounded to the nearest integer.
pub fn steps_for(duration: f64, dt: f64) -> usize {
    (duration / dt).round().max(0.0) as usize
}

/// Outputs of a forward run.
#[derive(Debug)]
pub struct ForwardOutput {
    pub traces: TraceRecord,
    pub snapshots: Option<SnapshotStore>,
    pub final_state: StateTriple,
    /// Regular-domain energy per step, when requested.
    pub rd_energy: Vec<f64>,
}

const CHECK_EVERY: usize = 100;
/// No SI-unit displacement, velocity or stress of a sane run gets near this.
const BLOWUP: f64 = 1e60;

/// Integrates the state problem from rest over `opts.n_steps` steps.
pub fn run_forward(
    ops: &OperatorSet,
    materials: &MaterialField,
    force: &dyn ForceProvider,
    receivers: &[u32],
    opts: &RunOptions,
) -> Result<ForwardOutput> {
    run_forward_with(ops, materials, force, receivers, opts, &mut |_, _| Ok(()))
}

/// As [`run_forward`], calling `observer(step, state)` after every step (and at step 0).
pub fn run_forward_with(
    ops: &OperatorSet,
    materials: &MaterialField,
    force: &dyn ForceProvider,
    receivers: &[u32],
    opts: &RunOptions,
    observer: &mut dyn FnMut(usize, &StateTriple) -> Result<()>,
) -> Result<ForwardOutput> {
    let mesh = ops.mesh();
    let n = ops.state_dim();
    let mut traces = TraceRecord::new(mesh, receivers, opts.dt, opts.n_steps + 1);
    let mut store = opts.make_store(mesh)?;
    let mut frame = vec![0.0; 3 * mesh.rd_nodes.len()];
    let mut energy = Vec::new();
    let mut state = StateTriple::zeros(n, 0.0);
    let mut rk = Rk4::new(ops, Direction::Forward);

    let mut record = |step: usize, state: &StateTriple, store: &mut Option<SnapshotStore>| -> Result<()> {
        traces.record(step, mesh, &state.x1);
        if let Some(s) = store.as_mut() {
            if step % s.stride == 0 {
                rd_frame(mesh, &state.x1, &mut frame);
                s.push(&frame)?;
            }
        }
        if opts.record_energy {
            energy.push(rd_energy(ops, state, materials));
        }
        Ok(())
    };
    record(0, &state, &mut store)?;
    observer(0, &state)?;
    for step in 1..=opts.n_steps {
        rk.step(&mut state, opts.dt, force)?;
        state.t = step as f64 * opts.dt;
        if step % CHECK_EVERY == 0 || step == opts.n_steps {
            check_finite(&state, step)?;
        }
        record(step, &state, &mut store)?;
        observer(step, &state)?;
    }
    Ok(ForwardOutput {
        traces,
        snapshots: store,
        final_state: state,
        rd_energy: energy,
    })
}

pub(crate) fn check_finite(state: &StateTriple, step: usize) -> Result<()> {
    let m = state.max_abs();
    if !m.is_finite() || m > BLOWUP {
        log::error!("instability detected at step {step}, t = {:.6e}", state.t);
        return Err(FwiError::Unstable {
            step,
            time: state.t,
            max_abs: m,
        });
    }
    Ok(())
}

/// `1/2 <M x2, x2>` over displacement DOFs plus the regular-domain strain energy.
pub fn total_energy(ops: &OperatorSet, state: &StateTriple) -> f64 {
    let nd = ops.n_displacement_dofs();
    let kinetic: f64 = state.x2[..nd]
        .iter()
        .zip(&ops.mass_diag[..nd])
        .map(|(v, m)| 0.5 * m * v * v)
        .sum();
    kinetic + ops.rd_strain_energy(&state.x1)
}

/// Kinetic plus strain energy of the regular domain only.
pub fn rd_energy(ops: &OperatorSet, state: &StateTriple, materials: &MaterialField) -> f64 {
    ops.rd_kinetic_energy(&state.x2, materials) + ops.rd_strain_energy(&state.x1)
}

#[cfg(test)]
pub(crate) mod tests;
