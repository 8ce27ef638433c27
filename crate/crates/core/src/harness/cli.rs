//! Command-line entry point. Exit status 0 on success, 1 for invalid input,
//! 2 when a run fails.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{FwiError, Result};
use crate::forward::{run_forward, RunOptions, SurfaceForce};
use crate::gradient::gradcheck_csv;
use crate::inversion::invert;
use crate::operators::OperatorSet;
use crate::specgrid::StressSpace;

use super::config::RunConfig;
use super::data::{add_noise, MeasuredDataSet};
use super::gradcheck::run_gradcheck;
use super::io::{export_field, export_history, export_traces, write_text};
use super::setup::Setup;

#[derive(Debug, Parser)]
#[command(name = "pmlfwi", version, about = "Elastic full-waveform inversion in PML-truncated half-spaces")]
struct Cli {
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the target model and export traces and material fields.
    Forward,
    /// Generate the measured data set.
    Synthesize,
    /// Add Gaussian noise to a saved data set.
    Noise {
        /// Directory of the clean data set.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        percent: f64,
    },
    /// Run the staged inversion.
    Invert,
    /// Compare adjoint and finite-difference directional derivatives.
    Gradcheck,
    /// Print mesh, unknown and memory counts without building the mesh.
    Info,
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        c.out = o.clone();
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(w) = cli.workers {
        c.workers = w;
    }
    c.validate()
        .map_err(|(key, msg)| FwiError::Config(format!("`{key}`: {msg}")))?;
    Ok(c)
}

fn execute(cli: Cli) -> Result<String> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Info => Ok(info(&config)),
        Command::Forward => forward(Setup::new(config)?),
        Command::Synthesize => {
            let setup = Setup::new(config)?;
            let data = setup.data()?;
            let dir = setup.config.out.join("data");
            data.save(&dir)?;
            Ok(format!("wrote {} data entries to {}\n", data.entries.len(), dir.display()))
        }
        Command::Noise { input, percent } => {
            let data = MeasuredDataSet::load(&input)?;
            let noisy = add_noise(&data, percent, config.seed, config.data.noise_norm)?;
            let dir = config.out.join(format!("data-noise{percent}"));
            noisy.save(&dir)?;
            Ok(format!("wrote {percent}% noisy data to {}\n", dir.display()))
        }
        Command::Invert => inversion(Setup::new(config)?),
        Command::Gradcheck => {
            let setup = Setup::new(config)?;
            let rows = run_gradcheck(&setup)?;
            let csv = gradcheck_csv(&rows);
            write_text(&setup.config.out.join("gradcheck.csv"), &csv)?;
            Ok(csv)
        }
    }
}

fn info(config: &RunConfig) -> String {
    let g = &config.grid;
    let d = g.dof_counts(StressSpace::Continuous);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "regular domain      {} x {} x {} m, element {} m, PML {} m",
        g.rd_extent[0], g.rd_extent[1], g.rd_extent[2], g.element_size, g.pml_thickness
    );
    let e = g.element_counts();
    let _ = writeln!(s, "elements            {} ({} x {} x {}), {} in the PML", d.elements, e[0], e[1], e[2], d.pml_elements);
    let _ = writeln!(s, "nodes               {} ({} regular, {} PML, {} fixed)", d.nodes, d.rd_nodes, d.pml_nodes, d.dirichlet_nodes);
    let _ = writeln!(s, "displacement dofs   {}", d.displacement_dofs);
    let _ = writeln!(s, "stress dofs         {}", d.stress_dofs);
    let _ = writeln!(s, "state unknowns      {}", d.state_dim);
    let _ = writeln!(s, "material parameters {}", d.material_parameters);
    let mib = |b: u64| b as f64 / (1 << 20) as f64;
    let _ = writeln!(s, "state triple        {:.1} MiB", mib(d.state_triple_bytes()));
    let _ = writeln!(s, "snapshot            {:.3} MiB per stored frame", mib(d.snapshot_bytes()));
    if let Some(dt) = config.time.dt {
        let frames = (config.time.duration / dt).round() as u64 / config.storage.stride as u64 + 1;
        let _ = writeln!(
            s,
            "snapshots over T    {:.1} MiB ({frames} frames at dt = {dt} s)",
            mib(frames * d.snapshot_bytes())
        );
    }
    s
}

fn forward(setup: Setup) -> Result<String> {
    let c = &setup.config;
    let out = &c.out;
    let ops = OperatorSet::assemble(setup.mesh.clone(), &setup.target, &c.pml)?.with_workers(c.workers)?;
    let pulse = c.pulse(&c.time.pulse)?;
    let receivers = c.receiver_nodes(&setup.mesh)?;
    let opts = RunOptions::new(setup.dt, c.time.duration);
    let mut report = format!("dt = {:e} s, {} steps\n", setup.dt, opts.n_steps);
    for (j, load) in c.load_cases(&pulse).iter().enumerate() {
        let force = SurfaceForce::new(load, &setup.mesh)?;
        let run = run_forward(&ops, &setup.target, &force, &receivers, &opts)?;
        let path = out.join(format!("traces-{}-case{j}.csv", pulse.name));
        export_traces(&run.traces, &path)?;
        let _ = writeln!(report, "wrote {}", path.display());
    }
    let path = out.join("target.vtk");
    export_field(&setup.target, &setup.mesh, &path)?;
    let _ = writeln!(report, "wrote {}", path.display());
    Ok(report)
}

fn inversion(setup: Setup) -> Result<String> {
    let inv = setup
        .config
        .inversion
        .clone()
        .ok_or_else(|| FwiError::Config("the configuration has no [inversion] section".into()))?;
    let data = setup.data()?;
    let stages = setup.stages(&data)?;
    let (l0, m0) = setup.initial_guess();
    let out: &Path = &setup.config.out;
    let result = invert(&inv, &setup.problem, &stages, &l0, &m0, &mut |_| Ok(()))?;
    export_history(&result.history, &out.join("history.csv"))?;
    let field = setup.problem.materials(&result.lambda, &result.mu)?;
    export_field(&field, &setup.mesh, &out.join("inverted.vtk"))?;
    export_field(&setup.target, &setup.mesh, &out.join("target.vtk"))?;
    let last = result.history.last();
    Ok(format!(
        "{} iterations, stop: {:?}, final J = {:e}\nwrote history.csv, inverted.vtk, target.vtk to {}\n",
        result.history.len(),
        result.stop,
        last.map_or(f64::NAN, |r| r.j_new),
        out.display()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn info_reports_paper_counts() {
        let mut c = RunConfig::default();
        c.grid = crate::specgrid::GridSpec::new([40.0, 40.0, 45.0], 1.25, 6.25);
        let s = info(&c);
        assert!(s.contains("state unknowns      3578136"), "{s}");
        assert!(s.contains("material parameters 616850"), "{s}");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["pmlfwi", "--config", "/no/such/run.toml", "info"]), 1);
        assert_eq!(run(["pmlfwi", "info"]), 0);
        assert_eq!(run(["pmlfwi", "frobnicate"]), 1);
    }
}
