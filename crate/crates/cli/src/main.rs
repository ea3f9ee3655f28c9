//! Command-line driver: configuration in, deterministic result files out.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use svilc_core::chi::ChiContext;
use svilc_core::config::{annotated_example, RunConfig};
use svilc_core::pipeline::{
    self, parse_magnitudes, run_spectrum, solve_basis_states, write_atomic, write_crossings,
    write_currents, write_dipoles, write_patterns, write_spectrum, write_sweep, Workspace,
};
use svilc_core::qubit::{sweep_feed, SpectrumSolver, SweepSpec};
use svilc_core::Error;

#[derive(Parser)]
#[command(
    name = "svilc",
    version,
    about = "Spin-vortex loop-current simulator: mean-field electronic structure, \
             winding-constrained phase optimization, and qubit-level spectra"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file (TOML). Mutually exclusive with --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in configuration: paper-3dcq or desk-1svq.
    #[arg(long, global = true)]
    preset: Option<String>,

    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Skip the mean-field checkpoint (always re-run the SCF stage).
    #[arg(long, global = true)]
    no_checkpoint: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the self-consistent mean-field stage and write a checkpoint.
    Scf(Common),
    /// Enumerate the winding patterns and their parity table.
    Patterns(Common),
    /// Solve current-pattern states and export bond-current tables.
    Chi {
        #[command(flatten)]
        common: Common,
        /// Feed magnitudes, e.g. --feed Jex4=0.02 (repeatable).
        #[arg(long = "feed")]
        feeds: Vec<String>,
        /// Basis state label to solve (e.g. uud); default: all.
        #[arg(long)]
        pattern: Option<String>,
    },
    /// Solve the qubit basis, diagonalize the field coupling, write levels.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long = "feed")]
        feeds: Vec<String>,
    },
    /// Sweep a feed magnitude and track the energy levels.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Override the swept feed name.
        #[arg(long)]
        parameter: Option<String>,
        /// Override the grid as from:to:steps.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Transition dipole matrix between the orthogonalized states.
    Dipoles {
        #[command(flatten)]
        common: Common,
        #[arg(long = "feed")]
        feeds: Vec<String>,
    },
    /// Print an annotated example configuration.
    DumpConfig {
        /// Preset to dump instead of the annotated example.
        #[arg(long)]
        preset: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), None) => RunConfig::from_path(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (Some(path), Some(name)) => {
            // Preset as base, file as override is ambiguous; refuse.
            return Err(Error::Config(format!(
                "pass either --config {} or --preset {name}, not both",
                path.display()
            )));
        }
        (None, None) => {
            return Err(Error::Config(
                "a configuration is required: --config FILE or --preset NAME".into(),
            ))
        }
    };
    if let Some(dir) = &common.out {
        cfg.output.directory = dir.display().to_string();
    }
    Ok(cfg)
}

fn setup_threads(threads: usize) {
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        let n = std::num::NonZeroUsize::new(threads).unwrap();
        faer::set_global_parallelism(if threads == 1 {
            faer::Par::Seq
        } else {
            faer::Par::Rayon(n)
        });
    }
}

fn out_dir(ws: &Workspace) -> PathBuf {
    PathBuf::from(&ws.config.output.directory)
}

fn checkpoint_path(ws: &Workspace, common: &Common) -> Option<PathBuf> {
    if common.no_checkpoint {
        None
    } else {
        Some(out_dir(ws).join("meanfield_checkpoint.bin"))
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Scf(common) => {
            setup_threads(common.threads);
            let ws = Workspace::new(load_config(&common)?)?;
            let mf = ws.solve_meanfield(checkpoint_path(&ws, &common).as_deref())?;
            let summary = format!(
                "{}# windings are staggered ring windings per vortex plaquette\n\
                 converged: {}\niterations: {}\nresidual: {:.3e}\n\
                 band_energy_mev: {:.9}\ntotal_energy_mev: {:.9}\nfermi_degenerate: {}\n",
                ws.header("energies in meV"),
                mf.converged,
                mf.iterations,
                mf.residual,
                mf.band_energy,
                mf.total_energy,
                mf.fermi_degenerate,
            );
            let path = out_dir(&ws).join("scf_summary.txt");
            write_atomic(&path, &summary)?;
            println!("scf: converged={} residual={:.3e} -> {}", mf.converged, mf.residual, path.display());
            Ok(())
        }
        Command::Patterns(common) => {
            setup_threads(common.threads);
            let ws = Workspace::new(load_config(&common)?)?;
            let mf = ws.solve_meanfield(checkpoint_path(&ws, &common).as_deref())?;
            let ctx = ChiContext::new(&ws.graph, &ws.basis, &mf)?;
            let path = out_dir(&ws).join("patterns.csv");
            write_patterns(&ws, &path, &ctx)?;
            println!(
                "patterns: {} vortex faces, {} patterns -> {}",
                ctx.vortex_faces.len(),
                1usize << ctx.vortex_faces.len(),
                path.display()
            );
            Ok(())
        }
        Command::Chi { common, feeds, pattern } => {
            setup_threads(common.threads);
            let ws = Workspace::new(load_config(&common)?)?;
            let mut magnitudes = ws.config.run.feed_magnitudes.clone();
            magnitudes.extend(parse_magnitudes(&feeds)?);
            let mf = ws.solve_meanfield(checkpoint_path(&ws, &common).as_deref())?;
            let (states, labels) = solve_basis_states(&ws, &mf, &magnitudes)?;
            let dir = out_dir(&ws);
            let mut written = 0;
            for (state, label) in states.iter().zip(&labels) {
                if let Some(want) = &pattern {
                    if !want.eq_ignore_ascii_case(&state.pattern.label)
                        && !want.eq_ignore_ascii_case(label)
                    {
                        continue;
                    }
                }
                let path = dir.join(format!("currents_{}.dat", state.pattern.label));
                write_currents(&ws, &path, state)?;
                println!(
                    "chi {}: label={} E={:.6} meV residual={:.2e} -> {}",
                    state.pattern.label,
                    label,
                    state.energy,
                    state.residual,
                    path.display()
                );
                written += 1;
            }
            if written == 0 {
                return Err(Error::Config(format!(
                    "pattern '{}' matched no basis state",
                    pattern.unwrap_or_default()
                )));
            }
            Ok(())
        }
        Command::Spectrum { common, feeds } => {
            setup_threads(common.threads);
            let ws = Workspace::new(load_config(&common)?)?;
            let mut magnitudes = ws.config.run.feed_magnitudes.clone();
            magnitudes.extend(parse_magnitudes(&feeds)?);
            let mf = ws.solve_meanfield(checkpoint_path(&ws, &common).as_deref())?;
            let point = run_spectrum(&ws, &mf, &magnitudes, false)?;
            let path = out_dir(&ws).join("spectrum.csv");
            write_spectrum(&ws, &path, &point, &magnitudes)?;
            for (label, e) in point
                .spectrum
                .state_labels
                .iter()
                .zip(&point.spectrum.total_energies)
            {
                println!("state {label}: {e:.6} meV");
            }
            println!("spectrum -> {}", path.display());
            Ok(())
        }
        Command::Sweep { common, parameter, grid } => {
            setup_threads(common.threads);
            let ws = Workspace::new(load_config(&common)?)?;
            let mut section = ws.config.sweep.clone().ok_or_else(|| {
                Error::Config("no [sweep] section in the configuration and no overrides given".into())
            });
            if let (Err(_), Some(p)) = (&section, &parameter) {
                section = Ok(svilc_core::config::SweepSection {
                    parameter: p.clone(),
                    values: vec![],
                    from: None,
                    to: None,
                    steps: None,
                    fixed: BTreeMap::new(),
                    ratios: BTreeMap::new(),
                    refine_levels: 3,
                });
            }
            let mut section = section?;
            if let Some(p) = parameter {
                section.parameter = p;
            }
            if let Some(g) = grid {
                let parts: Vec<&str> = g.split(':').collect();
                if parts.len() != 3 {
                    return Err(Error::Config(format!("--grid '{g}' is not from:to:steps")));
                }
                section.from = Some(parts[0].parse().map_err(|e| Error::Config(format!("--grid: {e}")))?);
                section.to = Some(parts[1].parse().map_err(|e| Error::Config(format!("--grid: {e}")))?);
                section.steps = Some(parts[2].parse().map_err(|e| Error::Config(format!("--grid: {e}")))?);
                section.values.clear();
            }
            if !ws.config.feeds.contains_key(&section.parameter) {
                return Err(Error::Config(format!(
                    "sweep parameter '{}' is not a declared feed",
                    section.parameter
                )));
            }
            let spec = SweepSpec {
                parameter: section.parameter.clone(),
                grid: section.grid()?,
                fixed: section.fixed.clone(),
                ratios: section.ratios.clone(),
                refine_levels: section.refine_levels,
            };
            let mf = ws.solve_meanfield(checkpoint_path(&ws, &common).as_deref())?;
            let ctx = ChiContext::new(&ws.graph, &ws.basis, &mf)?;
            let mut solver = SpectrumSolver::new(&ctx, &mf, &ws.layout);
            solver.chi_opts = ws.chi_opts;
            let sweep_path = out_dir(&ws).join(format!("sweep_{}.csv", spec.parameter));
            let crossing_path = out_dir(&ws).join(format!("crossings_{}.txt", spec.parameter));
            match sweep_feed(&solver, &spec) {
                Ok(sweep) => {
                    write_sweep(&ws, &sweep_path, &sweep)?;
                    write_crossings(&ws, &crossing_path, &sweep)?;
                    let solved = sweep.energies.iter().filter(|e| e.is_some()).count();
                    println!(
                        "sweep {}: {}/{} points solved, {} crossings -> {}",
                        spec.parameter,
                        solved,
                        sweep.grid.len(),
                        sweep.crossings.len(),
                        sweep_path.display()
                    );
                    Ok(())
                }
                Err(e) => {
                    let p = pipeline::mark_partial(&sweep_path);
                    eprintln!("sweep failed; any partial output moved to {}", p.display());
                    Err(e)
                }
            }
        }
        Command::Dipoles { common, feeds } => {
            setup_threads(common.threads);
            let ws = Workspace::new(load_config(&common)?)?;
            let mut magnitudes = ws.config.run.feed_magnitudes.clone();
            magnitudes.extend(parse_magnitudes(&feeds)?);
            let mf = ws.solve_meanfield(checkpoint_path(&ws, &common).as_deref())?;
            let point = run_spectrum(&ws, &mf, &magnitudes, true)?;
            let dipoles = point.dipoles.as_ref().expect("dipoles requested");
            let path = out_dir(&ws).join("dipoles.csv");
            // Use current-derived words for the row labels.
            let mut named = dipoles.clone();
            named.labels = point
                .spectrum
                .state_labels
                .iter()
                .map(|pattern_label| {
                    let idx = point
                        .states
                        .iter()
                        .position(|s| &s.pattern.label == pattern_label)
                        .unwrap_or(0);
                    point.basis_current_labels[idx].clone()
                })
                .collect();
            write_dipoles(&ws, &path, &named)?;
            println!("dipoles -> {}", path.display());
            Ok(())
        }
        Command::DumpConfig { preset } => {
            let text = match preset {
                Some(name) => RunConfig::preset(&name)?.to_toml(),
                None => annotated_example(),
            };
            print!("{text}");
            Ok(())
        }
    }
}
