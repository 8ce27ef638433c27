//! Everything a run derives from its configuration.

use std::sync::Arc;

use crate::error::Result;
use crate::forward::steps_for;
use crate::inversion::{Problem, StageData};
use crate::medium::{rd_values, MaterialField};
use crate::operators::{estimate_stable_dt, Pulse};
use crate::specgrid::{build_mesh, SpectralMesh};

use super::config::RunConfig;
use super::data::{add_noise, synthesize_data, MeasuredDataSet};
use super::models::build_target_model;

pub struct Setup {
    pub config: RunConfig,
    pub mesh: Arc<SpectralMesh>,
    pub target: MaterialField,
    pub dt: f64,
    pub problem: Problem,
}

impl Setup {
    pub fn new(config: RunConfig) -> Result<Self> {
        let mesh = Arc::new(build_mesh(config.grid)?);
        let target = build_target_model(&config.model.target, &mesh, config.model.rho)?;
        let problem = Problem::new(mesh.clone(), target.rho.clone(), config.pml)?
            .with_workers(config.workers)
            .with_stride(config.storage.stride)
            .with_time_rule(config.time.rule)
            .with_storage(config.storage.snapshot_budget, Some(config.out.clone()));
        let mut setup = Self {
            config,
            mesh,
            target,
            dt: 0.0,
            problem,
        };
        setup.dt = match setup.config.time.dt {
            Some(dt) => dt,
            None => {
                let (l, m) = setup.initial_guess();
                let initial = setup.problem.materials(&l, &m)?;
                let cfl = setup.config.time.cfl;
                estimate_stable_dt(&setup.mesh, &setup.target, cfl)?.min(estimate_stable_dt(&setup.mesh, &initial, cfl)?)
            }
        };
        Ok(setup)
    }

    /// RD values of the target model.
    pub fn target_rd(&self) -> (Vec<f64>, Vec<f64>) {
        (rd_values(&self.target.lambda, &self.mesh), rd_values(&self.target.mu, &self.mesh))
    }

    /// RD values of the initial guess; unset fields copy the target.
    pub fn initial_guess(&self) -> (Vec<f64>, Vec<f64>) {
        let (mut l, mut m) = self.target_rd();
        if let Some(v) = self.config.initial.lambda {
            l.iter_mut().for_each(|x| *x = v);
        }
        if let Some(v) = self.config.initial.mu {
            m.iter_mut().for_each(|x| *x = v);
        }
        (l, m)
    }

    /// Synthesizes (and contaminates) data for `stages`.
    pub fn synthesize(&self, stages: &[(Pulse, f64)]) -> Result<MeasuredDataSet> {
        let c = &self.config;
        let data = synthesize_data(c, &c.model.target, &self.mesh, self.dt, c.data.refine, stages)?;
        add_noise(&data, c.data.noise_percent, c.seed, c.data.noise_norm)
    }

    /// The configured data set: loaded from `data.path` or synthesized.
    pub fn data(&self) -> Result<MeasuredDataSet> {
        let data = match &self.config.data.path {
            Some(dir) => MeasuredDataSet::load(dir)?,
            None => self.synthesize(&self.config.data_stages()?)?,
        };
        data.check_layout(&self.mesh, &self.config.receiver_nodes(&self.mesh)?)?;
        Ok(data)
    }

    /// Stage inputs of the inversion schedule.
    pub fn stages(&self, data: &MeasuredDataSet) -> Result<Vec<StageData>> {
        let Some(inv) = &self.config.inversion else {
            return Ok(Vec::new());
        };
        inv.stages
            .iter()
            .map(|s| data.stage(&self.config, &self.config.pulse(&s.pulse)?, s.duration))
            .collect()
    }

    pub fn n_steps(&self, duration: f64) -> usize {
        steps_for(duration, self.dt)
    }
}
