//! Synthetic measurements: generation on a refined mesh, noise, and storage.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FwiError, Result};
use crate::forward::{run_forward, steps_for, RunOptions, SurfaceForce, TraceRecord};
use crate::inversion::{Experiment, StageData};
use crate::operators::{OperatorSet, Pulse};
use crate::specgrid::{build_mesh, GridSpec, SpectralMesh};

use super::config::RunConfig;
use super::io::{export_traces, import_traces, read_text, write_text};
use super::models::{build_target_model, TargetModel};

/// Amplitude that the noise percentage refers to, per trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseNorm {
    /// Peak absolute value of the trace.
    #[default]
    Peak,
    /// Root mean square of the trace.
    Rms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: TargetModel,
    /// Mesh that generated the traces.
    pub generator_grid: GridSpec,
    /// Step of the generating run.
    pub generator_dt: f64,
    pub refine: usize,
    /// Set when data and inversion share the discretization.
    pub inverse_crime: bool,
    pub noise_percent: f64,
    pub noise_norm: NoiseNorm,
    pub noise_seed: Option<u64>,
}

/// Traces of one pulse and duration, one record per load case.
#[derive(Debug, Clone, PartialEq)]
pub struct DataEntry {
    pub pulse: Pulse,
    pub dt: f64,
    pub n_steps: usize,
    pub traces: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredDataSet {
    pub provenance: Provenance,
    pub entries: Vec<DataEntry>,
}

impl MeasuredDataSet {
    pub fn entry(&self, pulse: &str, n_steps: usize) -> Result<&DataEntry> {
        self.entries
            .iter()
            .find(|e| e.pulse.name == pulse && e.n_steps == n_steps)
            .ok_or_else(|| FwiError::Config(format!("data set has no `{pulse}` record with {n_steps} steps")))
    }

    /// Rejects records whose receivers are not the configured nodes of `mesh`.
    pub fn check_layout(&self, mesh: &SpectralMesh, receivers: &[u32]) -> Result<()> {
        for e in &self.entries {
            for t in &e.traces {
                if t.receivers != receivers {
                    return Err(FwiError::Config(format!(
                        "`{}` data has {} receivers that do not match the {} configured ones",
                        e.pulse.name,
                        t.n_receivers(),
                        receivers.len()
                    )));
                }
                for (&n, c) in t.receivers.iter().zip(&t.coords) {
                    let m = mesh.coords[n as usize];
                    if (0..3).any(|i| (m[i] - c[i]).abs() > 1e-9 * (1.0 + m[i].abs())) {
                        return Err(FwiError::Config(format!("receiver {n} sits at {c:?}, mesh node at {m:?}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Stage input for `pulse` over `duration`, pairing each load case with its record.
    pub fn stage(&self, config: &RunConfig, pulse: &Pulse, duration: f64) -> Result<StageData> {
        let dt = self.entries.first().map(|e| e.dt).unwrap_or(0.0);
        let n_steps = steps_for(duration, dt);
        let entry = self.entry(&pulse.name, n_steps)?;
        let loads = config.load_cases(pulse);
        if loads.len() != entry.traces.len() {
            return Err(FwiError::Config(format!(
                "{} load cases configured, data has {}",
                loads.len(),
                entry.traces.len()
            )));
        }
        Ok(StageData {
            pulse: pulse.clone(),
            dt: entry.dt,
            n_steps,
            experiments: loads
                .into_iter()
                .zip(&entry.traces)
                .map(|(load, t)| Experiment {
                    load,
                    measured: t.clone(),
                })
                .collect(),
        })
    }

    /// Writes `provenance.toml` and one trace CSV per entry and load case.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut index = Index {
            provenance: self.provenance.clone(),
            entries: Vec::new(),
        };
        for (i, e) in self.entries.iter().enumerate() {
            let mut files = Vec::new();
            for (j, t) in e.traces.iter().enumerate() {
                let name = format!("{}-{i}-case{j}.csv", e.pulse.name);
                export_traces(t, &dir.join(&name))?;
                files.push(PathBuf::from(name));
            }
            index.entries.push(IndexEntry {
                pulse: e.pulse.clone(),
                dt: e.dt,
                n_steps: e.n_steps,
                files,
            });
        }
        let text = toml::to_string(&index).map_err(|e| FwiError::Config(e.to_string()))?;
        write_text(&dir.join(INDEX), &text)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX);
        let index: Index = toml::from_str(&read_text(&path)?).map_err(|e| FwiError::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let mut entries = Vec::new();
        for e in index.entries {
            let mut traces = Vec::new();
            for f in &e.files {
                let mut t = import_traces(&dir.join(f))?;
                if t.n_samples != e.n_steps + 1 {
                    return Err(FwiError::Parse {
                        path: dir.join(f),
                        message: format!("{} samples, index says {}", t.n_samples, e.n_steps + 1),
                    });
                }
                t.dt = e.dt;
                traces.push(t);
            }
            entries.push(DataEntry {
                pulse: e.pulse,
                dt: e.dt,
                n_steps: e.n_steps,
                traces,
            });
        }
        Ok(Self {
            provenance: index.provenance,
            entries,
        })
    }
}

const INDEX: &str = "provenance.toml";

#[derive(Serialize, Deserialize)]
struct Index {
    provenance: Provenance,
    entries: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    pulse: Pulse,
    dt: f64,
    n_steps: usize,
    files: Vec<PathBuf>,
}

/// Forward-solves `model` on the mesh refined by `refine` with step `dt / refine`
/// and keeps every `refine`-th sample at the receivers of `mesh`, once per
/// `(pulse, duration)` in `stages`.
pub fn synthesize_data(
    config: &RunConfig,
    model: &TargetModel,
    mesh: &SpectralMesh,
    dt: f64,
    refine: usize,
    stages: &[(Pulse, f64)],
) -> Result<MeasuredDataSet> {
    if !(refine == 1 || refine == 2) {
        return Err(FwiError::Config(format!("refine must be 1 or 2, got {refine}")));
    }
    let fine = Arc::new(build_mesh(mesh.spec.refined(refine))?);
    let target = build_target_model(model, &fine, config.model.rho)?;
    let ops = OperatorSet::assemble(fine.clone(), &target, &config.pml)?.with_workers(config.workers)?;
    let coarse_recv = config.receiver_nodes(mesh)?;
    let fine_recv = coarse_recv
        .iter()
        .map(|&n| {
            let c = mesh.coords[n as usize];
            fine.locate_node(c)
                .map(|f| f as u32)
                .map_err(|_| FwiError::Config(format!("receiver at {c:?} has no coincident node on the refined mesh")))
        })
        .collect::<Result<Vec<u32>>>()?;
    let fine_dt = dt / refine as f64;
    let mut entries = Vec::new();
    for (pulse, duration) in stages.iter().cloned() {
        let n_steps = steps_for(duration, dt);
        let mut opts = RunOptions::new(fine_dt, duration);
        opts.n_steps = n_steps * refine;
        let mut traces = Vec::new();
        for load in config.load_cases(&pulse) {
            let area = |m: &SpectralMesh| -> Result<f64> { Ok(load.nodal_weights(m)?.iter().map(|(_, w)| w).sum()) };
            let (coarse_area, fine_area) = (area(mesh)?, area(&fine)?);
            if (coarse_area - fine_area).abs() > 1e-9 * fine_area {
                return Err(FwiError::InvalidLoad(format!(
                    "patch {:?} loads {coarse_area} m2 of the inversion mesh but {fine_area} m2 of the refined one; \
                     put its edges on element boundaries",
                    load.patch
                )));
            }
            let force = SurfaceForce::new(&load, &fine)?;
            let out = run_forward(&ops, &target, &force, &fine_recv, &opts)?;
            let mut rec = TraceRecord::new(mesh, &coarse_recv, dt, n_steps + 1);
            for s in 0..=n_steps {
                rec.sample_mut(s).copy_from_slice(out.traces.sample(s * refine));
            }
            traces.push(rec);
        }
        log::info!("synthesized `{}` data: {} load cases, {} samples", pulse.name, traces.len(), n_steps + 1);
        entries.push(DataEntry {
            pulse,
            dt,
            n_steps,
            traces,
        });
    }
    Ok(MeasuredDataSet {
        provenance: Provenance {
            model: model.clone(),
            generator_grid: fine.spec,
            generator_dt: fine_dt,
            refine,
            inverse_crime: refine == 1,
            noise_percent: 0.0,
            noise_norm: NoiseNorm::Peak,
            noise_seed: None,
        },
        entries,
    })
}

/// Adds zero-mean Gaussian noise with standard deviation `percent / 100` of each
/// receiver component trace's peak (or RMS) amplitude.
pub fn add_noise(data: &MeasuredDataSet, percent: f64, seed: u64, norm: NoiseNorm) -> Result<MeasuredDataSet> {
    if !(percent >= 0.0) {
        return Err(FwiError::Config(format!("noise percentage must be non-negative, got {percent}")));
    }
    let mut out = data.clone();
    if percent == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for entry in &mut out.entries {
        for rec in &mut entry.traces {
            let nr = rec.n_receivers();
            for r in 0..nr {
                for c in 0..3 {
                    let trace = rec.component(r, c);
                    let scale = match norm {
                        NoiseNorm::Peak => trace.iter().fold(0.0f64, |a, v| a.max(v.abs())),
                        NoiseNorm::Rms => (trace.iter().map(|v| v * v).sum::<f64>() / trace.len() as f64).sqrt(),
                    };
                    let sigma = percent / 100.0 * scale;
                    for s in 0..rec.n_samples {
                        let z = unit.sample(&mut rng);
                        rec.data[(s * nr + r) * 3 + c] += sigma * z;
                    }
                }
            }
        }
    }
    out.provenance.noise_percent = percent;
    out.provenance.noise_norm = norm;
    out.provenance.noise_seed = Some(seed);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::TraceRecord;
    use crate::harness::models::TargetModel;

    fn toy_set(n: usize) -> MeasuredDataSet {
        let mesh = build_mesh(GridSpec::new([2.0, 2.0, 1.0], 1.0, 1.0)).unwrap();
        let recv = mesh.rd_surface_nodes();
        let mut rec = TraceRecord::new(&mesh, &recv[..2], 1e-3, n);
        for (i, v) in rec.data.iter_mut().enumerate() {
            *v = ((i / 6) as f64 * 0.01).sin() * (1.0 + (i % 6) as f64);
        }
        MeasuredDataSet {
            provenance: Provenance {
                model: TargetModel::Smooth,
                generator_grid: mesh.spec,
                generator_dt: 1e-3,
                refine: 1,
                inverse_crime: true,
                noise_percent: 0.0,
                noise_norm: NoiseNorm::Peak,
                noise_seed: None,
            },
            entries: vec![DataEntry {
                pulse: Pulse::p20(),
                dt: 1e-3,
                n_steps: n - 1,
                traces: vec![rec],
            }],
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let d = toy_set(10);
        assert_eq!(add_noise(&d, 0.0, 1, NoiseNorm::Peak).unwrap(), d);
    }

    #[test]
    fn noise_level_and_determinism() {
        let d = toy_set(10_000);
        let a = add_noise(&d, 5.0, 42, NoiseNorm::Peak).unwrap();
        let b = add_noise(&d, 5.0, 42, NoiseNorm::Peak).unwrap();
        assert_eq!(a, b);
        assert_ne!(add_noise(&d, 5.0, 43, NoiseNorm::Peak).unwrap(), a);
        assert_eq!(a.provenance.noise_seed, Some(42));
        let (clean, noisy) = (&d.entries[0].traces[0], &a.entries[0].traces[0]);
        for r in 0..2 {
            for c in 0..3 {
                let x = clean.component(r, c);
                let y = noisy.component(r, c);
                let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let e: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - a).collect();
                let mean = e.iter().sum::<f64>() / e.len() as f64;
                let sd = (e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (e.len() - 1) as f64).sqrt();
                let ratio = sd / (0.05 * peak);
                assert!((0.95..=1.05).contains(&ratio), "ratio {ratio}");
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let d = add_noise(&toy_set(7), 1.0, 3, NoiseNorm::Rms).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(MeasuredDataSet::load(dir.path()).unwrap(), d);
    }
}
