use clap::{Args, Parser, Subcommand, ValueEnum};
use mmvlab::cat0::{harmonic_flow, resolvent, ConvexFunctional, FlowSchedule, SolverOptions};
use mmvlab::energy::{EnergyConfig, EnergyForm, HMode};
use mmvlab::io::{
    distance_csv, generator_from_matrix_market, generator_to_matrix_market, map_from_json, map_to_json, read,
    read_space, space_to_json, to_json, weights_from_json, weights_to_json,
};
use mmvlab::metric::{gh_lower, gh_upper, sample_circle, sample_cube, sample_interval, sample_qcube, sample_tree, GhSearch, TreeEdge};
use mmvlab::spectral::eigensolve;
use mmvlab::{Error, Result};
use mmvlab_cli::runner::{run, ExperimentConfig};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

/// Finite metric-measure spaces, approximating energies, resolvents, flows
/// and convergence experiments.
///
/// Exit codes: 0 success, 2 configuration or usage error, 3 solver failure,
/// 4 I/O error. MMVLAB_THREADS caps the worker threads.
#[derive(Parser, Debug)]
#[command(name = "mmvlab", version)]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample spaces.
    #[command(subcommand)]
    Space(SpaceCommand),
    /// Assemble energies.
    #[command(subcommand)]
    Energy(EnergyCommand),
    /// Smallest eigenpairs of an exported generator.
    Spectrum {
        /// Generator matrix in MatrixMarket format.
        #[arg(long)]
        gen: PathBuf,
        /// JSON weight sidecar.
        #[arg(long)]
        weights: PathBuf,
        /// Number of eigenpairs.
        #[arg(long)]
        k: usize,
        /// Write the full spectrum JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Resolvent J_λ u of the approximating energy.
    Resolvent {
        #[command(flatten)]
        energy: EnergyArgs,
        /// Map JSON on the space.
        #[arg(long)]
        map: PathBuf,
        /// Resolvent parameter λ > 0.
        #[arg(long)]
        lambda: f64,
        /// Write the resolvent map JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Proximal flow u_{k+1} = J_{λ_k} u_k.
    Flow {
        #[command(flatten)]
        energy: EnergyArgs,
        /// Initial map JSON.
        #[arg(long)]
        map: PathBuf,
        /// Comma-separated step sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        lambda: Vec<f64>,
        /// Repeat the step list this many times.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        /// Write the (time, energy, residual) CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the terminal map JSON here.
        #[arg(long)]
        terminal: Option<PathBuf>,
    },
    /// Gromov–Hausdorff lower and upper bounds with the witness.
    Gh {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        /// Total hill-climbing sweeps.
        #[arg(long, default_value_t = 200)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a bundled experiment configuration.
    Experiment {
        id: BundledExperiment,
        /// Output directory (overrides the bundled one).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment configuration file.
    Run { config: PathBuf },
}

#[derive(Subcommand, Debug)]
enum SpaceCommand {
    /// Generate a sample space as JSON.
    Gen {
        #[arg(long, value_enum)]
        kind: SpaceKind,
        /// Number of points (circle, interval) or the cube index n (qcube).
        #[arg(long)]
        n: Option<usize>,
        /// Circumference or length.
        #[arg(long)]
        len: Option<f64>,
        /// Points per axis (cube).
        #[arg(long, value_delimiter = ',')]
        points: Vec<usize>,
        /// Side lengths (cube).
        #[arg(long, value_delimiter = ',')]
        sides: Vec<f64>,
        /// Divisions of the unit side (qcube).
        #[arg(long)]
        divisions: Option<usize>,
        /// Legs of a star tree.
        #[arg(long)]
        legs: Option<usize>,
        /// Interior sample points per edge (star).
        #[arg(long)]
        points_per_edge: Option<usize>,
        #[arg(long)]
        label: Option<String>,
        /// Write the space JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the distance matrix as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum EnergyCommand {
    /// Export the generator as <prefix>.mtx and <prefix>.weights.json.
    Assemble {
        #[command(flatten)]
        energy: EnergyArgs,
        #[arg(long)]
        prefix: PathBuf,
    },
}

#[derive(Args, Debug)]
struct EnergyArgs {
    /// Space JSON.
    #[arg(long)]
    space: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long)]
    rho: f64,
    /// Scale h in the kernel.
    #[arg(long, value_enum, default_value_t = HArg::Rho)]
    h: HArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HArg {
    Rho,
    Distance,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SpaceKind {
    Circle,
    Interval,
    Cube,
    Qcube,
    Star,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BundledExperiment {
    SpectralCircle,
    Qcube,
    ResolventCircle,
    FlowTripod,
    PoincareCircle,
    TwoPointSublevel,
    MoscoCircle,
    CoveringSquare,
}

impl BundledExperiment {
    fn text(self) -> &'static str {
        match self {
            Self::SpectralCircle => include_str!("../../../configs/spectral_circle.cfg"),
            Self::Qcube => include_str!("../../../configs/qcube.cfg"),
            Self::ResolventCircle => include_str!("../../../configs/resolvent_circle.cfg"),
            Self::FlowTripod => include_str!("../../../configs/flow_tripod.cfg"),
            Self::PoincareCircle => include_str!("../../../configs/poincare_circle.cfg"),
            Self::TwoPointSublevel => include_str!("../../../configs/two_point_sublevel.cfg"),
            Self::MoscoCircle => include_str!("../../../configs/mosco_circle.cfg"),
            Self::CoveringSquare => include_str!("../../../configs/covering_square.cfg"),
        }
    }
}

fn missing(flag: &str) -> Error {
    Error::InvalidParameter(format!("--{flag} is required for this kind"))
}

fn write_out(path: &Path, contents: &str, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::OutputExists(path.display().to_string()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn energy_form(args: &EnergyArgs) -> Result<EnergyForm> {
    let m = Arc::new(read_space(&args.space)?);
    let h = match args.h {
        HArg::Rho => HMode::ConstantRho,
        HArg::Distance => HMode::PairwiseDistance,
    };
    EnergyForm::assemble(m, EnergyConfig::new(args.p, args.rho).with_h(h))
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("MMVLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::InvalidParameter(format!("MMVLAB_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn execute(cli: Cli) -> Result<String> {
    let force = cli.force;
    let json = cli.json;
    match cli.command {
        Command::Space(SpaceCommand::Gen {
            kind,
            n,
            len,
            points,
            sides,
            divisions,
            legs,
            points_per_edge,
            label,
            out,
            csv,
        }) => {
            let m = match kind {
                SpaceKind::Circle => sample_circle(n.ok_or_else(|| missing("n"))?, len.ok_or_else(|| missing("len"))?)?,
                SpaceKind::Interval => {
                    sample_interval(n.ok_or_else(|| missing("n"))?, len.ok_or_else(|| missing("len"))?)?
                }
                SpaceKind::Cube => sample_cube(&points, &sides)?,
                SpaceKind::Qcube => sample_qcube(n.ok_or_else(|| missing("n"))?, divisions.ok_or_else(|| missing("divisions"))?)?,
                SpaceKind::Star => {
                    let length = len.ok_or_else(|| missing("len"))?;
                    let edges: Vec<TreeEdge> = (1..=legs.ok_or_else(|| missing("legs"))?)
                        .map(|b| TreeEdge { a: 0, b, length })
                        .collect();
                    sample_tree(&edges, points_per_edge.unwrap_or(0))?
                }
            };
            let m = match label {
                Some(l) => m.with_label(l),
                None => m,
            };
            let text = space_to_json(&m);
            if let Some(c) = csv {
                write_out(&c, &distance_csv(&m), force)?;
            }
            match out {
                Some(p) => {
                    write_out(&p, &text, force)?;
                    Ok(if json {
                        to_json(&json!({ "path": p, "n": m.n() }))
                    } else {
                        format!("wrote {} points to {}\n", m.n(), p.display())
                    })
                }
                None => Ok(text),
            }
        }
        Command::Energy(EnergyCommand::Assemble { energy, prefix }) => {
            let form = energy_form(&energy)?;
            let g = form.generator()?;
            let mtx = PathBuf::from(format!("{}.mtx", prefix.display()));
            let wts = PathBuf::from(format!("{}.weights.json", prefix.display()));
            write_out(&mtx, &generator_to_matrix_market(&g), force)?;
            write_out(&wts, &weights_to_json(g.weights()), force)?;
            let summary = json!({
                "n": g.n(),
                "components": form.components(),
                "warnings": form.warnings(),
                "matrix": mtx,
                "weights": wts,
            });
            Ok(if json {
                to_json(&summary)
            } else {
                let mut s = format!(
                    "n = {}, components = {}\nwrote {} and {}\n",
                    g.n(),
                    form.components(),
                    mtx.display(),
                    wts.display()
                );
                for w in form.warnings() {
                    s.push_str(&format!("warning: {w}\n"));
                }
                s
            })
        }
        Command::Spectrum { gen, weights, k, out } => {
            let g = generator_from_matrix_market(&read(&gen)?, weights_from_json(&read(&weights)?)?)?;
            let spec = eigensolve(&g, k)?;
            let text = to_json(&spec);
            if let Some(p) = out {
                write_out(&p, &text, force)?;
            }
            Ok(if json {
                to_json(&json!({
                    "eigenvalues": spec.eigenvalues,
                    "residual": spec.max_residual(&g),
                    "orthonormality_defect": spec.orthonormality_defect(),
                }))
            } else {
                spec.eigenvalues.iter().map(|l| format!("{l:.16e}\n")).collect()
            })
        }
        Command::Resolvent {
            energy,
            map,
            lambda,
            out,
        } => {
            let form = energy_form(&energy)?;
            let u = map_from_json(&read(&map)?, form.domain().clone())?;
            let e = ConvexFunctional::from_form(&form, u.target().clone());
            let (j, stats) = resolvent(&e, &u, lambda, &SolverOptions::default())?;
            let text = map_to_json(&j);
            match out {
                Some(p) => {
                    write_out(&p, &text, force)?;
                    Ok(if json {
                        to_json(&json!({ "path": p, "sweeps": stats.sweeps, "residual": stats.residual }))
                    } else {
                        format!("{} sweeps, residual {:.3e}\n", stats.sweeps, stats.residual)
                    })
                }
                None => Ok(text),
            }
        }
        Command::Flow {
            energy,
            map,
            lambda,
            repeat,
            csv,
            terminal,
        } => {
            let form = energy_form(&energy)?;
            let u = map_from_json(&read(&map)?, form.domain().clone())?;
            let e = ConvexFunctional::from_form(&form, u.target().clone());
            let steps: Vec<f64> = lambda.iter().cycle().take(lambda.len() * repeat).copied().collect();
            let trace = harmonic_flow(&e, &u, &FlowSchedule::Proximal(steps), &SolverOptions::default())?;
            if let Some(p) = &csv {
                write_out(p, &trace.to_csv(), force)?;
            }
            if let Some(p) = &terminal {
                write_out(p, &map_to_json(trace.terminal()), force)?;
            }
            Ok(if json || csv.is_none() {
                to_json(&json!({
                    "steps": trace.times.len() - 1,
                    "initial_energy": trace.energies[0],
                    "terminal_energy": trace.terminal_energy(),
                }))
            } else {
                format!(
                    "{} steps, energy {:.6e} -> {:.6e}\n",
                    trace.times.len() - 1,
                    trace.energies[0],
                    trace.terminal_energy()
                )
            })
        }
        Command::Gh { x, y, budget, seed } => {
            let (x, y) = (read_space(&x)?, read_space(&y)?);
            let (upper, corr) = gh_upper(&x, &y, &GhSearch::with_budget(budget, seed), None)?;
            let lower = gh_lower(&x, &y);
            Ok(if json {
                to_json(&json!({ "lower": lower, "upper": upper, "witness": corr.pairs() }))
            } else {
                format!("lower {lower:.16e}\nupper {upper:.16e}\n")
            })
        }
        Command::Experiment { id, out } => {
            let mut cfg = ExperimentConfig::parse(id.text(), Path::new("."))?;
            cfg.output = out;
            report_run(&cfg, force, json)
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            report_run(&cfg, force, json)
        }
    }
}

fn report_run(cfg: &ExperimentConfig, force: bool, json: bool) -> Result<String> {
    let s = run(cfg, force).inspect_err(|_| eprintln!("experiment {} failed", cfg.id))?;
    Ok(if json {
        s.manifest
    } else {
        let mut t = format!("{} -> {}\n", cfg.id, s.output.display());
        for f in &s.files {
            t.push_str(&format!("  {} {}\n", f.sha256, f.path));
        }
        t
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| execute(cli));
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
