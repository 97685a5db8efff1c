//! Config-driven experiment runs with a hashed manifest.
//!
//! Every run writes its artifacts into the configured output directory and
//! then `manifest.json`, which lists each file with its SHA-256 digest.
//! Artifacts depend only on the config text and its seed.

use crate::config::Config;
use mmvlab::cat0::{harmonic_flow, map_distance, resolvent, ConvexFunctional, FlowSchedule, SolverOptions};
use mmvlab::energy::{
    compactness_witness, poincare_certificate, step_defect_bounds, BMode, CompactnessReport, EnergyConfig, EnergyForm,
    HMode,
};
use mmvlab::io::{certificate_to_json, map_to_json, read_space, slack_csv, to_json};
use mmvlab::mapping::{MappedFunction, MeasureApproximation};
use mmvlab::metric::{
    covering_order, sample_circle, sample_cube, sample_interval, sample_qcube, sample_tree, CoveringMode,
    FiniteMetricMeasureSpace as Space, GhSearch, NetOrder, TreeEdge,
};
use mmvlab::spectral::{
    eigen_convergence_experiment, mosco_resolvent_experiment, qcube_experiment, sublevel_gh_experiment,
    ConvergenceReport, Extrapolation, Probes, SampledMappingSpace,
};
use mmvlab::target::{MetricTree, TargetPoint, TargetSpace, TreePoint};
use mmvlab::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Experiment identifiers accepted in `experiment.id`.
pub const EXPERIMENTS: &[&str] = &[
    "eigen_convergence",
    "qcube",
    "resolvent",
    "flow",
    "poincare",
    "sublevel_two_point",
    "mosco_circle",
    "covering",
];

/// Sample spaces describable in a config.
#[derive(Clone, Debug, PartialEq)]
pub enum SpaceSpec {
    Circle { n: usize, length: f64 },
    Interval { n: usize, length: f64 },
    Cube { points: Vec<usize>, sides: Vec<f64> },
    QCube { n: usize, divisions: usize },
    Star { legs: usize, leg_length: f64, points_per_edge: usize },
    File(PathBuf),
}

impl SpaceSpec {
    pub fn parse(cfg: &Config, section: &str) -> Result<Self> {
        let kind = cfg.string(section, "kind")?;
        let keys: &[&str] = match kind.as_str() {
            "circle" | "interval" => &["kind", "n", "length"],
            "cube" => &["kind", "points", "sides"],
            "qcube" => &["kind", "n", "divisions"],
            "star" => &["kind", "legs", "leg_length", "points_per_edge"],
            "file" => &["kind", "path"],
            _ => {
                return Err(cfg.error(
                    section,
                    "kind",
                    "expected circle, interval, cube, qcube, star or file",
                ))
            }
        };
        cfg.check_keys(section, keys)?;
        Ok(match kind.as_str() {
            "circle" => SpaceSpec::Circle {
                n: cfg.usize(section, "n")?,
                length: cfg.positive(section, "length")?,
            },
            "interval" => SpaceSpec::Interval {
                n: cfg.usize(section, "n")?,
                length: cfg.positive(section, "length")?,
            },
            "cube" => SpaceSpec::Cube {
                points: cfg.usize_list(section, "points")?,
                sides: cfg.f64_list(section, "sides")?,
            },
            "qcube" => SpaceSpec::QCube {
                n: cfg.usize(section, "n")?,
                divisions: cfg.usize(section, "divisions")?,
            },
            "star" => SpaceSpec::Star {
                legs: cfg.usize(section, "legs")?,
                leg_length: cfg.positive(section, "leg_length")?,
                points_per_edge: cfg.usize(section, "points_per_edge")?,
            },
            _ => SpaceSpec::File(cfg.path(section, "path")?),
        })
    }

    pub fn build(&self) -> Result<Space> {
        match self {
            SpaceSpec::Circle { n, length } => sample_circle(*n, *length),
            SpaceSpec::Interval { n, length } => sample_interval(*n, *length),
            SpaceSpec::Cube { points, sides } => sample_cube(points, sides),
            SpaceSpec::QCube { n, divisions } => sample_qcube(*n, *divisions),
            SpaceSpec::Star {
                legs,
                leg_length,
                points_per_edge,
            } => {
                let edges: Vec<TreeEdge> = (1..=*legs)
                    .map(|b| TreeEdge {
                        a: 0,
                        b,
                        length: *leg_length,
                    })
                    .collect();
                sample_tree(&edges, *points_per_edge)
            }
            SpaceSpec::File(p) => read_space(p),
        }
    }

    /// Dimension of the model space, where known.
    fn dim(&self) -> Option<usize> {
        match self {
            SpaceSpec::Circle { .. } | SpaceSpec::Interval { .. } => Some(1),
            SpaceSpec::Cube { points, .. } => Some(points.len()),
            SpaceSpec::QCube { n, .. } => Some(*n),
            _ => None,
        }
    }
}

/// `[energy]`: `p`, `rho`, `h` (`"rho"` or `"distance"`), optional `kappa`.
/// A missing `rho` defaults to `fallback_rho`.
fn parse_energy(cfg: &Config, fallback_rho: Option<f64>) -> Result<EnergyConfig> {
    let s = "energy";
    cfg.check_keys(s, &["p", "rho", "h", "kappa"])?;
    let p = cfg.opt_f64(s, "p")?.unwrap_or(2.0);
    let rho = match (cfg.opt_f64(s, "rho")?, fallback_rho) {
        (Some(r), _) => r,
        (None, Some(r)) => r,
        (None, None) => return Err(cfg.error(s, "rho", "missing")),
    };
    let h = match cfg.opt_string(s, "h")?.as_deref() {
        None | Some("rho") => HMode::ConstantRho,
        Some("distance") => HMode::PairwiseDistance,
        Some(_) => return Err(cfg.error(s, "h", "expected \"rho\" or \"distance\"")),
    };
    let mut e = EnergyConfig::new(p, rho).with_h(h).with_b(BMode::BallVolume);
    if let Some(k) = cfg.opt_f64(s, "kappa")? {
        e.kappa = k;
    }
    e.validate().map_err(|err| cfg.error(s, "rho", err.to_string()))?;
    Ok(e)
}

/// A validated experiment configuration.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub id: String,
    pub seed: u64,
    pub output: PathBuf,
    pub config: Config,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_config(Config::load(path)?)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        Self::from_config(Config::parse(text, base)?)
    }

    fn from_config(config: Config) -> Result<Self> {
        config.check_keys("experiment", &["id", "seed", "output"])?;
        let id = config.string("experiment", "id")?;
        if !EXPERIMENTS.contains(&id.as_str()) {
            return Err(config.error("experiment", "id", format!("unknown experiment; expected one of {EXPERIMENTS:?}")));
        }
        let seed = config.u64("experiment", "seed")?;
        let output = config.path("experiment", "output")?;
        let cfg = Self {
            id,
            seed,
            output,
            config,
        };
        // validate everything before any work starts
        cfg.plan()?;
        Ok(cfg)
    }

    /// Parses the experiment-specific sections.
    fn plan(&self) -> Result<Plan> {
        let c = &self.config;
        let sections = |extra: &[&str]| {
            let mut all = vec!["experiment"];
            all.extend_from_slice(extra);
            c.check_sections(&all)
        };
        Ok(match self.id.as_str() {
            "eigen_convergence" => {
                sections(&["space", "energy", "schedule"])?;
                let s = "schedule";
                c.check_keys(s, &["rho", "k", "extrapolation", "dim", "reference"])?;
                let space = SpaceSpec::parse(c, "space")?;
                let rho = c.f64_list(s, "rho")?;
                if rho.len() < 3 {
                    return Err(c.error(s, "rho", "schedule needs at least 3 points"));
                }
                let energy = parse_energy(c, Some(rho[0]))?;
                let extrapolation = match c.opt_string(s, "extrapolation")?.as_deref() {
                    None | Some("richardson") => Extrapolation::Richardson,
                    Some("none") => Extrapolation::None,
                    Some("moment") => Extrapolation::MomentRichardson {
                        dim: match c.opt_usize(s, "dim")? {
                            Some(d) => d,
                            None => space
                                .dim()
                                .ok_or_else(|| c.error(s, "dim", "required for this space kind"))?,
                        },
                    },
                    Some(_) => return Err(c.error(s, "extrapolation", "expected none, richardson or moment")),
                };
                Plan::Eigen {
                    space,
                    energy,
                    rho,
                    k: c.usize(s, "k")?,
                    extrapolation,
                    reference: c.opt_f64_list(s, "reference")?,
                }
            }
            "qcube" => {
                sections(&["energy", "qcube"])?;
                c.check_keys("qcube", &["n_max", "divisions", "k"])?;
                let n_max = c.usize("qcube", "n_max")?;
                let divisions = c.usize_list("qcube", "divisions")?;
                if divisions.len() != n_max {
                    return Err(c.error("qcube", "divisions", "needs one entry per n up to n_max"));
                }
                Plan::QCube {
                    energy: parse_energy(c, None)?,
                    n_max,
                    divisions,
                    k: c.usize("qcube", "k")?,
                }
            }
            "resolvent" => {
                sections(&["space", "energy", "schedule"])?;
                c.check_keys("schedule", &["lambda", "probes"])?;
                Plan::Resolvent {
                    space: SpaceSpec::parse(c, "space")?,
                    energy: parse_energy(c, None)?,
                    lambdas: positive_list(c, "schedule", "lambda")?,
                    probes: c.usize("schedule", "probes")?,
                }
            }
            "flow" => {
                sections(&["space", "energy", "target", "schedule", "solver"])?;
                c.check_keys("target", &["kind", "legs", "leg_length"])?;
                c.check_keys("schedule", &["lambda", "repeat"])?;
                let target = match c.string("target", "kind")?.as_str() {
                    "real" => TargetSpec::Real,
                    "star" => TargetSpec::Star {
                        legs: c.usize("target", "legs")?,
                        leg_length: c.positive("target", "leg_length")?,
                    },
                    _ => return Err(c.error("target", "kind", "expected real or star")),
                };
                let mut lambdas = positive_list(c, "schedule", "lambda")?;
                let repeat = c.opt_usize("schedule", "repeat")?.unwrap_or(1);
                if repeat == 0 {
                    return Err(c.error("schedule", "repeat", "must be at least 1"));
                }
                lambdas = lambdas.iter().cycle().take(lambdas.len() * repeat).copied().collect();
                Plan::Flow {
                    space: SpaceSpec::parse(c, "space")?,
                    energy: parse_energy(c, None)?,
                    target,
                    lambdas,
                    solver: parse_solver(c)?,
                }
            }
            "poincare" => {
                sections(&["space", "energy", "poincare", "witness"])?;
                c.check_keys("poincare", &["c", "R", "modes", "proof_bound"])?;
                let space = SpaceSpec::parse(c, "space")?;
                let energy = parse_energy(c, None)?;
                let big_r = c.positive("poincare", "R")?;
                let witness = if c.has_section("witness") {
                    c.check_keys("witness", &["n", "radii"])?;
                    if !matches!(space, SpaceSpec::Circle { .. } | SpaceSpec::Interval { .. }) {
                        return Err(c.error("space", "kind", "a witness run needs a circle or interval"));
                    }
                    let radii = c.f64_list("witness", "radii")?;
                    if radii.windows(2).any(|w| w[1] >= w[0]) {
                        return Err(c.error("witness", "radii", "must decrease"));
                    }
                    if radii.iter().any(|&r| !(r > energy.rho && r <= big_r)) {
                        return Err(c.error("witness", "radii", "must lie in (rho, R]"));
                    }
                    Some(WitnessSpec {
                        ns: c.usize_list("witness", "n")?,
                        radii,
                    })
                } else {
                    None
                };
                Plan::Poincare {
                    space,
                    energy,
                    c: c.f64("poincare", "c")?,
                    big_r,
                    modes: c.f64_list("poincare", "modes")?,
                    proof_bound: c.opt_bool("poincare", "proof_bound")?.unwrap_or(true),
                    witness,
                }
            }
            "sublevel_two_point" => {
                sections(&["two_point", "schedule", "gh"])?;
                let s = "two_point";
                c.check_keys(s, &["alpha", "beta", "c", "step", "half_width"])?;
                c.check_keys("schedule", &["delta"])?;
                c.check_keys("gh", &["restarts", "sweeps"])?;
                Plan::Sublevel {
                    alpha: c.positive(s, "alpha")?,
                    beta: c.positive(s, "beta")?,
                    level: c.positive(s, "c")?,
                    step: c.positive(s, "step")?,
                    half_width: c.positive(s, "half_width")?,
                    deltas: positive_list(c, "schedule", "delta")?,
                    restarts: c.opt_usize("gh", "restarts")?.unwrap_or(4),
                    sweeps: c.opt_usize("gh", "sweeps")?.unwrap_or(50),
                }
            }
            "mosco_circle" => {
                sections(&["energy", "mosco", "schedule", "solver"])?;
                c.check_keys("mosco", &["fine", "length", "modes"])?;
                c.check_keys("schedule", &["n", "lambda"])?;
                Plan::Mosco {
                    energy: parse_energy(c, None)?,
                    ns: c.usize_list("schedule", "n")?,
                    fine: c.usize("mosco", "fine")?,
                    length: c.positive("mosco", "length")?,
                    modes: c.f64_list("mosco", "modes")?,
                    lambdas: positive_list(c, "schedule", "lambda")?,
                    solver: parse_solver(c)?,
                }
            }
            "covering" => {
                sections(&["space", "covering"])?;
                c.check_keys("covering", &["c", "r", "mode", "budget"])?;
                let mode = match c.opt_string("covering", "mode")?.as_deref() {
                    None | Some("exhaustive") => CoveringMode::exhaustive(),
                    Some("randomized") => CoveringMode::Randomized {
                        budget: c.usize("covering", "budget")?,
                        seed: self.seed,
                    },
                    Some(_) => return Err(c.error("covering", "mode", "expected exhaustive or randomized")),
                };
                Plan::Covering {
                    space: SpaceSpec::parse(c, "space")?,
                    cs: c.f64_list("covering", "c")?,
                    rs: positive_list(c, "covering", "r")?,
                    mode,
                }
            }
            _ => unreachable!("identifier checked on load"),
        })
    }
}

fn positive_list(c: &Config, section: &str, key: &str) -> Result<Vec<f64>> {
    let v = c.f64_list(section, key)?;
    if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(c.error(section, key, "entries must be positive"));
    }
    Ok(v)
}

fn parse_solver(c: &Config) -> Result<SolverOptions> {
    c.check_keys("solver", &["tol", "max_sweeps"])?;
    let mut o = SolverOptions::default();
    if let Some(t) = c.opt_f64("solver", "tol")? {
        o.tol = t;
    }
    if let Some(m) = c.opt_usize("solver", "max_sweeps")? {
        o.max_sweeps = m;
    }
    Ok(o)
}

#[derive(Clone, Debug)]
enum TargetSpec {
    Real,
    Star { legs: usize, leg_length: f64 },
}

#[derive(Clone, Debug)]
enum Plan {
    Eigen {
        space: SpaceSpec,
        energy: EnergyConfig,
        rho: Vec<f64>,
        k: usize,
        extrapolation: Extrapolation,
        reference: Option<Vec<f64>>,
    },
    QCube {
        energy: EnergyConfig,
        n_max: usize,
        divisions: Vec<usize>,
        k: usize,
    },
    Resolvent {
        space: SpaceSpec,
        energy: EnergyConfig,
        lambdas: Vec<f64>,
        probes: usize,
    },
    Flow {
        space: SpaceSpec,
        energy: EnergyConfig,
        target: TargetSpec,
        lambdas: Vec<f64>,
        solver: SolverOptions,
    },
    Poincare {
        space: SpaceSpec,
        energy: EnergyConfig,
        c: f64,
        big_r: f64,
        modes: Vec<f64>,
        proof_bound: bool,
        witness: Option<WitnessSpec>,
    },
    Sublevel {
        alpha: f64,
        beta: f64,
        level: f64,
        step: f64,
        half_width: f64,
        deltas: Vec<f64>,
        restarts: usize,
        sweeps: usize,
    },
    Mosco {
        energy: EnergyConfig,
        ns: Vec<usize>,
        fine: usize,
        length: f64,
        modes: Vec<f64>,
        lambdas: Vec<f64>,
        solver: SolverOptions,
    },
    Covering {
        space: SpaceSpec,
        cs: Vec<f64>,
        rs: Vec<f64>,
        mode: CoveringMode,
    },
}

/// Step-map witness over refinements of the certified space.
#[derive(Clone, Debug, PartialEq)]
pub struct WitnessSpec {
    pub ns: Vec<usize>,
    pub radii: Vec<f64>,
}

/// A file named relative to the output directory with its contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

/// Manifest line for one produced file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Outcome of [`run`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub output: PathBuf,
    pub files: Vec<ManifestEntry>,
    pub manifest: String,
}

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Computes the artifacts of an experiment without touching the disk.
/// Returns them with the manifest metadata (oracle references,
/// calibration) to record.
pub fn compute(cfg: &ExperimentConfig) -> Result<(Vec<Artifact>, Value)> {
    let plan = cfg.plan()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let report_artifacts = |r: &ConvergenceReport, csv: &str| {
        (
            vec![
                Artifact {
                    name: csv.into(),
                    contents: r.to_csv(),
                },
                Artifact {
                    name: "report.json".into(),
                    contents: to_json(r),
                },
            ],
            json!({ "reference": r.reference, "calibration": r.calibration, "extrapolated": r.extrapolated }),
        )
    };
    Ok(match plan {
        Plan::Eigen {
            space,
            energy,
            rho,
            k,
            extrapolation,
            reference,
        } => {
            let m = Arc::new(space.build()?);
            let r = eigen_convergence_experiment(&[m], &rho, &energy, k, extrapolation, reference.as_deref())?;
            report_artifacts(&r, "eigen_traces.csv")
        }
        Plan::QCube {
            energy,
            n_max,
            divisions,
            k,
        } => {
            let r = qcube_experiment(n_max, &divisions, &energy, k)?;
            report_artifacts(&r, "qcube_traces.csv")
        }
        Plan::Resolvent {
            space,
            energy,
            lambdas,
            probes,
        } => {
            let m = Arc::new(space.build()?);
            let form = EnergyForm::assemble(m.clone(), energy)?;
            let e = ConvexFunctional::from_form(&form, TargetSpace::real());
            let a = form.generator()?.matrix();
            let n = m.n();
            let mut csv = String::from("probe,lambda,defect,sweeps\n");
            for probe in 0..probes {
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let u = MappedFunction::real(m.clone(), &v)?;
                for &l in &lambdas {
                    let (j, stats) = resolvent(&e, &u, l, &SolverOptions::default())?;
                    let lu = (DMatrix::identity(n, n) + &a * l)
                        .lu()
                        .solve(&DVector::from_vec(v.clone()))
                        .ok_or_else(|| Error::InvalidParameter("singular resolvent matrix".into()))?;
                    let dense = MappedFunction::real(m.clone(), lu.as_slice())?;
                    let d = map_distance(&j, &dense)?;
                    let _ = writeln!(csv, "{probe},{l:.16e},{d:.16e},{}", stats.sweeps);
                }
            }
            (
                vec![Artifact {
                    name: "resolvent.csv".into(),
                    contents: csv,
                }],
                json!({ "reference": "dense solve of (I + lambda A) v = u" }),
            )
        }
        Plan::Flow {
            space,
            energy,
            target,
            lambdas,
            solver,
        } => {
            let m = Arc::new(space.build()?);
            let form = EnergyForm::assemble(m.clone(), energy)?;
            let (target, values): (TargetSpace, Vec<TargetPoint>) = match target {
                TargetSpec::Real => (
                    TargetSpace::real(),
                    (0..m.n()).map(|_| rng.random_range(-1.0..1.0).into()).collect(),
                ),
                TargetSpec::Star { legs, leg_length } => (
                    TargetSpace::tree(MetricTree::star(legs, leg_length)?),
                    (0..m.n())
                        .map(|_| {
                            TargetPoint::Tree(TreePoint {
                                edge: rng.random_range(0..legs),
                                offset: rng.random_range(0.0..leg_length),
                            })
                        })
                        .collect(),
                ),
            };
            let e = ConvexFunctional::from_form(&form, target.clone());
            let u0 = MappedFunction::new(m, target, values)?;
            let trace = harmonic_flow(&e, &u0, &FlowSchedule::Proximal(lambdas), &solver)?;
            let summary = json!({
                "initial_energy": trace.energies[0],
                "terminal_energy": trace.terminal_energy(),
                "steps": trace.times.len() - 1,
                "energy_nonincreasing": trace.energy_nonincreasing(1e-12),
            });
            (
                vec![
                    Artifact {
                        name: "flow.csv".into(),
                        contents: trace.to_csv(),
                    },
                    Artifact {
                        name: "terminal.json".into(),
                        contents: map_to_json(trace.terminal()),
                    },
                    Artifact {
                        name: "summary.json".into(),
                        contents: to_json(&summary),
                    },
                ],
                summary,
            )
        }
        Plan::Poincare {
            space,
            energy,
            c,
            big_r,
            modes,
            proof_bound,
            witness,
        } => {
            let m = Arc::new(space.build()?);
            let maps = cosine_probes(&m, &modes)?;
            let form = EnergyForm::assemble(m, energy.clone())?;
            let cert = poincare_certificate(&form, &maps, c, big_r, proof_bound)?;
            let mut summary = json!({
                "C": cert.constant,
                "valid": cert.is_valid(),
                "worst_proof_margin": cert.worst_proof_margin(),
            });
            let mut artifacts = vec![
                Artifact {
                    name: "certificate.json".into(),
                    contents: certificate_to_json(&cert, "slack.csv"),
                },
                Artifact {
                    name: "slack.csv".into(),
                    contents: slack_csv(&cert),
                },
            ];
            if let Some(w) = witness {
                let (csv, meta) = witness_run(&space, &energy, c, big_r, modes[0], &w)?;
                artifacts.push(Artifact {
                    name: "witness.csv".into(),
                    contents: csv,
                });
                summary["witness"] = meta;
            }
            (artifacts, summary)
        }
        Plan::Sublevel {
            alpha,
            beta,
            level,
            step,
            half_width,
            deltas,
            restarts,
            sweeps,
        } => {
            let (seq, limit) = two_point_family(alpha, beta, step, half_width, &deltas)?;
            let search = GhSearch {
                restarts,
                sweeps,
                seed: cfg.seed,
            };
            let r = sublevel_gh_experiment(&seq, &limit, level, &deltas, &search)?;
            let (arts, mut meta) = report_artifacts(&r, "sublevel_traces.csv");
            let bands: Vec<f64> = deltas
                .iter()
                .enumerate()
                .map(|(i, d)| band_half_width(alpha, beta, level * (1.0 + 1.0 / (i + 1) as f64), *d))
                .collect();
            meta["band_half_width"] = json!(bands);
            (arts, meta)
        }
        Plan::Mosco {
            energy,
            ns,
            fine,
            length,
            modes,
            lambdas,
            solver,
        } => {
            let limit_space = Arc::new(sample_circle(fine, length)?);
            let limit_form = EnergyForm::assemble(limit_space.clone(), energy.clone())?;
            let limit = ConvexFunctional::from_form(&limit_form, TargetSpace::real());
            let seq = ns
                .iter()
                .map(|&n| {
                    let mi = Arc::new(sample_circle(n, length)?);
                    let form = EnergyForm::assemble(mi.clone(), energy.clone())?;
                    let phi = MeasureApproximation::nearest(mi, limit_space.clone())?;
                    Ok((ConvexFunctional::from_form(&form, TargetSpace::real()), phi))
                })
                .collect::<Result<Vec<_>>>()?;
            let probes = modes
                .iter()
                .map(|&k| {
                    let v: Vec<f64> = (0..fine)
                        .map(|i| (2.0 * PI * k * i as f64 / fine as f64).sin())
                        .collect();
                    MappedFunction::real(limit_space.clone(), &v)
                })
                .collect::<Result<Vec<_>>>()?;
            let axis: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
            let mut r = mosco_resolvent_experiment(&seq, &limit, &axis, &lambdas, &Probes::Pullback(probes), &solver)?;
            r.axis_name = "n".into();
            report_artifacts(&r, "mosco_traces.csv")
        }
        Plan::Covering { space, cs, rs, mode } => {
            let m = space.build()?;
            let mut csv = String::from("c,r,K\n");
            for &c in &cs {
                for &r in &rs {
                    let k = covering_order(&m, c, r, mode)?;
                    let _ = writeln!(csv, "{c:.16e},{r:.16e},{k}");
                }
            }
            (
                vec![Artifact {
                    name: "covering.csv".into(),
                    contents: csv,
                }],
                Value::Null,
            )
        }
    })
}

/// `cos(2π k x / 2 diam)` along the first embedding coordinate, per mode.
fn cosine_probes(m: &Arc<Space>, modes: &[f64]) -> Result<Vec<MappedFunction>> {
    let emb = m
        .embedding()
        .ok_or_else(|| Error::Unsupported("probe maps need a space with coordinates".into()))?;
    let period = m.diameter() * 2.0;
    modes
        .iter()
        .map(|&k| {
            let v: Vec<f64> = (0..m.n()).map(|i| (2.0 * PI * k * emb.coords(i)[0] / period).cos()).collect();
            MappedFunction::real(m.clone(), &v)
        })
        .collect()
}

/// Step-map witness for one cosine probe on each refinement, with the
/// certificate constant and covering order of every space as bound inputs.
fn witness_run(
    space: &SpaceSpec,
    energy: &EnergyConfig,
    c: f64,
    big_r: f64,
    mode: f64,
    w: &WitnessSpec,
) -> Result<(String, Value)> {
    let maps = w
        .ns
        .iter()
        .map(|&n| {
            let spec = match space {
                SpaceSpec::Circle { length, .. } => SpaceSpec::Circle { n, length: *length },
                SpaceSpec::Interval { length, .. } => SpaceSpec::Interval { n, length: *length },
                _ => return Err(Error::Unsupported("witness runs need a circle or interval".into())),
            };
            Ok(cosine_probes(&Arc::new(spec.build()?), &[mode])?.remove(0))
        })
        .collect::<Result<Vec<_>>>()?;
    let constants = maps
        .iter()
        .map(|u| {
            let form = EnergyForm::assemble(u.domain().clone(), energy.clone())?;
            Ok(poincare_certificate(&form, std::slice::from_ref(u), c, big_r, false)?.constant)
        })
        .collect::<Result<Vec<f64>>>()?;
    let covering = w
        .radii
        .iter()
        .map(|&r| {
            maps.iter()
                .map(|u| covering_order(u.domain(), c, r, CoveringMode::Exhaustive { cap: u.domain().n() }))
                .collect()
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    let rep = compactness_witness(&maps, energy, &w.radii, f64::INFINITY, NetOrder::Index)?;
    let bounds = step_defect_bounds(&rep, &constants, &covering)?;
    let mut csv = String::from("n,r,approx,cauchy,covering,constant,bound\n");
    for (j, &r) in w.radii.iter().enumerate() {
        for (i, &n) in w.ns.iter().enumerate() {
            let cauchy = rep.cauchy.get(j).map(|row| format!("{:.16e}", row[i])).unwrap_or_default();
            let _ = writeln!(
                csv,
                "{n},{r:.16e},{:.16e},{cauchy},{},{:.16e},{:.16e}",
                rep.approx[j][i], covering[j][i], constants[i], bounds[j][i]
            );
        }
    }
    let within = rep.approx.iter().flatten().zip(bounds.iter().flatten()).all(|(a, b)| a <= b);
    let meta = json!({
        "within_bound": within,
        "approx_decays": CompactnessReport::decays_in_radius(&rep.approx, 0.0),
        "cauchy_decays": CompactnessReport::decays_in_radius(&rep.cauchy, 0.0),
        "energies": rep.energies,
    });
    Ok((csv, meta))
}

/// `√(αβ/(α+β)) · √c · δ`: largest distance from the diagonal inside the
/// sublevel band `{(a, b) : (a − b)² ≤ c δ²}` of `√α ℝ × √β ℝ`.
pub fn band_half_width(alpha: f64, beta: f64, c: f64, delta: f64) -> f64 {
    (alpha * beta / (alpha + beta)).sqrt() * c.sqrt() * delta
}

/// The two-point family: `M_i = {a, b}` with weights `(α, β)` and
/// `d(a, b) = δ_i`, `E_i(u) = (u_a − u_b)² / δ_i²`, mapped onto the
/// one-point limit of mass `α + β` with `E ≡ 0`; maps sampled on the grid
/// `{−w, −w + h, …, w}`.
pub fn two_point_family(
    alpha: f64,
    beta: f64,
    step: f64,
    half_width: f64,
    deltas: &[f64],
) -> Result<(Vec<(SampledMappingSpace, MeasureApproximation)>, SampledMappingSpace)> {
    let steps = (2.0 * half_width / step).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| -half_width + i as f64 * step).collect();
    let target = TargetSpace::real();
    let lim = Arc::new(Space::new(vec![vec![0.0]], vec![alpha + beta])?.with_label("point"));
    let limit = SampledMappingSpace {
        functional: ConvexFunctional::zero(lim.clone(), target.clone()),
        samples: grid
            .iter()
            .map(|&t| MappedFunction::real(lim.clone(), &[t]))
            .collect::<Result<_>>()?,
    };
    let seq = deltas
        .iter()
        .map(|&d| {
            let mi = Arc::new(Space::new(vec![vec![0.0, d], vec![d, 0.0]], vec![alpha, beta])?);
            let e = ConvexFunctional::from_couplings(mi.clone(), target.clone(), 2.0, &[(0, 1, 1.0 / (d * d))])?;
            let mut samples = Vec::with_capacity(grid.len() * grid.len());
            for &a in &grid {
                for &b in &grid {
                    samples.push(MappedFunction::real(mi.clone(), &[a, b])?);
                }
            }
            let phi = MeasureApproximation::new(mi, lim.clone(), vec![Some(0), Some(0)])?;
            Ok((SampledMappingSpace { functional: e, samples }, phi))
        })
        .collect::<Result<_>>()?;
    Ok((seq, limit))
}

/// Runs the experiment and writes its artifacts followed by the manifest.
///
/// Refuses to overwrite existing files unless `force` is set.
pub fn run(cfg: &ExperimentConfig, force: bool) -> Result<RunSummary> {
    let (artifacts, meta) = compute(cfg)?;
    let out = &cfg.output;
    let mut targets: Vec<PathBuf> = artifacts.iter().map(|a| out.join(&a.name)).collect();
    targets.push(out.join(MANIFEST));
    if !force {
        if let Some(p) = targets.iter().find(|p| p.exists()) {
            return Err(Error::OutputExists(p.display().to_string()));
        }
    }
    std::fs::create_dir_all(out)?;
    let mut files = Vec::with_capacity(artifacts.len());
    for a in &artifacts {
        std::fs::write(out.join(&a.name), &a.contents)?;
        files.push(ManifestEntry {
            path: a.name.clone(),
            sha256: sha256_hex(a.contents.as_bytes()),
            bytes: a.contents.len(),
        });
    }
    let params = serde_json::to_value(cfg.config.table()).map_err(Error::Json)?;
    let manifest = to_json(&json!({
        "experiment": cfg.id,
        "seed": cfg.seed,
        "config_sha256": sha256_hex(cfg.config.text().as_bytes()),
        "params": params,
        "oracle": meta,
        "files": files,
    }));
    std::fs::write(out.join(MANIFEST), &manifest)?;
    Ok(RunSummary {
        output: out.clone(),
        files,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("/tmp"))
    }

    #[test]
    fn empty_schedule_names_the_field() {
        let text = "[experiment]\nid = \"eigen_convergence\"\nseed = 1\noutput = \"o\"\n\n[space]\nkind = \"circle\"\nn = 32\nlength = 6.28\n\n[energy]\np = 2\n\n[schedule]\nrho = []\nk = 3\n";
        match parse(text).unwrap_err() {
            Error::Config { line, field, .. } => assert_eq!((line, field.as_str()), (15, "schedule.rho")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_experiment_and_keys_are_rejected() {
        let e = parse("[experiment]\nid = \"nope\"\nseed = 1\noutput = \"o\"\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }));
        let text = "[experiment]\nid = \"covering\"\nseed = 1\noutput = \"o\"\n[space]\nkind = \"interval\"\nn = 5\nlength = 1\ncolour = 3\n[covering]\nc = [1]\nr = [0.3]\n";
        match parse(text).unwrap_err() {
            Error::Config { field, line, .. } => assert_eq!((field.as_str(), line), ("space.colour", 9)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn band_width_formula() {
        // (a, b) with a − b = s: distance to the diagonal point minimizing
        // α(a − t)² + β(b − t)² is √(αβ/(α+β))·|s|
        let (a, b) = (2.0f64, 0.5f64);
        let s = 0.3f64;
        let t = (a * s) / (a + b);
        let direct = (a * (s - t).powi(2) + b * t * t).sqrt();
        assert!((band_half_width(a, b, 1.0, s) - direct).abs() < 1e-15);
    }

    #[test]
    fn covering_run_writes_manifest_last_and_refuses_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let text = "[experiment]\nid = \"covering\"\nseed = 1\noutput = \"out\"\n[space]\nkind = \"interval\"\nn = 6\nlength = 1\n[covering]\nc = [1, 2]\nr = [0.3]\n";
        let cfg = ExperimentConfig::parse(text, dir.path()).unwrap();
        let s = run(&cfg, false).unwrap();
        assert_eq!(s.files.len(), 1);
        let csv = std::fs::read_to_string(dir.path().join("out/covering.csv")).unwrap();
        assert_eq!(sha256_hex(csv.as_bytes()), s.files[0].sha256);
        assert!(matches!(run(&cfg, false), Err(Error::OutputExists(_))));
        let again = run(&cfg, true).unwrap();
        assert_eq!(again.manifest, s.manifest);
    }
}
