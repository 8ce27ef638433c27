//! Objective evaluation: forward solves per load case, trace misfit, and the
//! adjoint sweep that streams the misfit gradients.

use std::path::PathBuf;
use std::sync::Arc;

use crate::adjoint::{misfit_record, run_adjoint_with, MisfitSource};
use crate::error::{FwiError, Result};
use crate::forward::{rd_frame, run_forward, time_weights, RunOptions, SnapshotStore, SurfaceForce, TimeRule, TraceRecord};
use crate::gradient::MaterialSpace;
use crate::medium::{scatter_rd_values, MaterialField, StretchProfile};
use crate::operators::{LoadCase, OperatorSet, Pulse};
use crate::specgrid::SpectralMesh;

/// One load case and the displacements measured for it.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub load: LoadCase,
    pub measured: TraceRecord,
}

/// Everything a stage needs besides the material fields.
#[derive(Debug, Clone)]
pub struct StageData {
    pub pulse: Pulse,
    pub dt: f64,
    pub n_steps: usize,
    pub experiments: Vec<Experiment>,
}

impl StageData {
    pub fn duration(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiments.is_empty() {
            return Err(FwiError::Config(format!("stage `{}` has no load cases", self.pulse.name)));
        }
        for e in &self.experiments {
            let m = &e.measured;
            if m.n_samples != self.n_steps + 1 || (m.dt - self.dt).abs() > 1e-12 * self.dt {
                return Err(FwiError::Config(format!(
                    "measured record has {} samples at dt = {}, stage expects {} at dt = {}",
                    m.n_samples,
                    m.dt,
                    self.n_steps + 1,
                    self.dt
                )));
            }
        }
        Ok(())
    }
}

/// Half the time integral of the squared residual, summed over receivers.
pub fn trace_misfit(residual: &TraceRecord, rule: TimeRule) -> f64 {
    let w = time_weights(residual.n_samples, residual.dt, rule);
    let total: f64 = w
        .iter()
        .enumerate()
        .map(|(s, w)| w * residual.sample(s).iter().map(|v| v * v).sum::<f64>())
        .sum();
    0.5 * total
}

/// Result of the state solves at one material point.
pub struct ForwardPass {
    pub misfit: f64,
    pub traces: Vec<TraceRecord>,
    residuals: Vec<TraceRecord>,
    snapshots: Vec<Option<SnapshotStore>>,
    ops: OperatorSet,
}

impl std::fmt::Debug for ForwardPass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardPass")
            .field("misfit", &self.misfit)
            .field("cases", &self.traces.len())
            .field("snapshots", &self.has_snapshots())
            .finish()
    }
}

impl ForwardPass {
    pub fn has_snapshots(&self) -> bool {
        self.snapshots.iter().all(|s| s.is_some())
    }
}

/// Fixed discretization, density and PML around which λ and μ are varied.
#[derive(Debug, Clone)]
pub struct Problem {
    mesh: Arc<SpectralMesh>,
    space: MaterialSpace,
    rho: Vec<f64>,
    profile: StretchProfile,
    workers: usize,
    stride: usize,
    time_rule: TimeRule,
    snapshot_budget: u64,
    spill_dir: Option<PathBuf>,
}

impl Problem {
    /// `rho` is a full nodal array.
    pub fn new(mesh: Arc<SpectralMesh>, rho: Vec<f64>, profile: StretchProfile) -> Result<Self> {
        if rho.len() != mesh.n_nodes() {
            return Err(FwiError::DimensionMismatch {
                expected: mesh.n_nodes(),
                got: rho.len(),
            });
        }
        profile.validate()?;
        Ok(Self {
            space: MaterialSpace::new(&mesh),
            mesh,
            rho,
            profile,
            workers: 1,
            stride: 1,
            time_rule: TimeRule::default(),
            snapshot_budget: 2 << 30,
            spill_dir: None,
        })
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    /// Snapshot stride used for the gradient time quadrature.
    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    pub fn with_time_rule(mut self, rule: TimeRule) -> Self {
        self.time_rule = rule;
        self
    }

    pub fn time_rule(&self) -> TimeRule {
        self.time_rule
    }

    pub fn with_storage(mut self, budget: u64, spill_dir: Option<PathBuf>) -> Self {
        self.snapshot_budget = budget;
        self.spill_dir = spill_dir;
        self
    }

    pub fn mesh(&self) -> &Arc<SpectralMesh> {
        &self.mesh
    }

    pub fn space(&self) -> &MaterialSpace {
        &self.space
    }

    pub fn profile(&self) -> &StretchProfile {
        &self.profile
    }

    /// Full nodal fields from RD values of λ and μ.
    pub fn materials(&self, lambda: &[f64], mu: &[f64]) -> Result<MaterialField> {
        for v in [lambda, mu] {
            if v.len() != self.space.len() {
                return Err(FwiError::DimensionMismatch {
                    expected: self.space.len(),
                    got: v.len(),
                });
            }
        }
        let n = self.mesh.n_nodes();
        let mut field = MaterialField {
            lambda: vec![0.0; n],
            mu: vec![0.0; n],
            rho: self.rho.clone(),
        };
        scatter_rd_values(lambda, &self.mesh, &mut field.lambda);
        scatter_rd_values(mu, &self.mesh, &mut field.mu);
        field.validate()?;
        Ok(field)
    }

    fn run_options(&self, stage: &StageData, snapshots: bool, case: usize) -> RunOptions {
        let mut opts = RunOptions::new(stage.dt, stage.duration());
        opts.n_steps = stage.n_steps;
        if snapshots {
            opts.stride = Some(self.stride);
            opts.snapshot_budget = self.snapshot_budget;
            opts.spill_path = self.spill_dir.as_ref().map(|d| d.join(format!("forward-{case}.snap")));
        }
        opts
    }

    /// Forward solves for every load case of the stage.
    pub fn forward(&self, lambda: &[f64], mu: &[f64], stage: &StageData, snapshots: bool) -> Result<ForwardPass> {
        let materials = self.materials(lambda, mu)?;
        let ops = OperatorSet::assemble(self.mesh.clone(), &materials, &self.profile)?.with_workers(self.workers)?;
        let mut pass = ForwardPass {
            misfit: 0.0,
            traces: Vec::with_capacity(stage.experiments.len()),
            residuals: Vec::with_capacity(stage.experiments.len()),
            snapshots: Vec::with_capacity(stage.experiments.len()),
            ops,
        };
        for (i, e) in stage.experiments.iter().enumerate() {
            let force = SurfaceForce::new(&e.load, &self.mesh)?;
            let out = run_forward(
                &pass.ops,
                &materials,
                &force,
                &e.measured.receivers,
                &self.run_options(stage, snapshots, i),
            )?;
            let residual = misfit_record(&out.traces, &e.measured)?;
            pass.misfit += trace_misfit(&residual, self.time_rule);
            pass.traces.push(out.traces);
            pass.residuals.push(residual);
            pass.snapshots.push(out.snapshots);
        }
        Ok(pass)
    }

    /// Misfit part of the objective.
    pub fn misfit(&self, lambda: &[f64], mu: &[f64], stage: &StageData) -> Result<f64> {
        Ok(self.forward(lambda, mu, stage, false)?.misfit)
    }

    /// Adjoint sweeps for a pass that kept its snapshots; returns `(g_mis_lambda, g_mis_mu)`.
    pub fn misfit_gradient(&self, pass: &mut ForwardPass, stage: &StageData) -> Result<(Vec<f64>, Vec<f64>)> {
        if !pass.has_snapshots() {
            return Err(FwiError::Config("forward pass was run without snapshots".into()));
        }
        let n = self.space.len();
        let mut gl = vec![0.0; n];
        let mut gm = vec![0.0; n];
        let mut u = vec![0.0; 3 * n];
        let mut w = vec![0.0; 3 * n];
        for (i, residual) in pass.residuals.iter().enumerate() {
            let store = pass.snapshots[i].as_mut().expect("checked above");
            let weights = store.quadrature_weights(self.time_rule);
            let stride = store.stride;
            let source = MisfitSource::new(residual, &self.mesh).with_cubic(self.time_rule == TimeRule::Simpson);
            let opts = self.run_options(stage, false, i);
            run_adjoint_with(&pass.ops, &source, &opts, &mut |step, state| {
                if step % stride == 0 {
                    let idx = step / stride;
                    store.frame_into(idx, &mut u)?;
                    rd_frame(&self.mesh, &state.x1, &mut w);
                    self.space.accumulate_misfit(&u, &w, weights[idx], &mut gl, &mut gm);
                }
                Ok(())
            })?;
        }
        Ok((gl, gm))
    }
}
