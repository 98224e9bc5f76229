//! Argument parsing and subcommand dispatch.

use crate::{checks, defaults, scenarios};
use anyhow::{bail, Context};
use bubbleimg::dataio::{read_set, simulate, write_set, Scenario};
use bubbleimg::forward::ShapeFactors;
use bubbleimg::geometry::{load_shape, voxelize, ShapeRef};
use bubbleimg::invert::{imaging_functional, invert, Extraction, FitModel, InvertOptions};
use bubbleimg::media::{FrequencyBand, MinnaertConstant, Regime, ScanGrid};
use bubbleimg::spectrum::{assemble_newtonian, body_resonance, newtonian_eigens};
use bubbleimg::{Vec3, FARFIELD_NORMALIZATION};
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "bubbleimg", version, about = "Bubble-based acoustic imaging")]
struct Cli {
    /// Scenario JSON file or bundled name (homogeneous, phantom, bodywave).
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Noise seed, overriding the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Geometry factors and the leading Newtonian clusters of the bubble shape.
    Spectrum {
        /// Shape reference overriding the scenario bubble (ball, sphere(N), path.off).
        #[arg(long)]
        shape: Option<String>,
        /// Voxel size on the unit shape.
        #[arg(long)]
        h: Option<f64>,
        /// Number of leading eigenvalues.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Synthesize a measurement set into the `--out` directory.
    Scan {
        /// Relative noise level, overriding the scenario.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Reconstruct ρ₀, v and k₀ from a measurement set.
    Invert {
        #[arg(long)]
        data: PathBuf,
        /// Pole model: 1 (Minnaert) or 2 (body wave); default from the data.
        #[arg(long)]
        regime: Option<FitModel>,
        #[arg(long)]
        omega_eval: Option<f64>,
        /// 8pi or 4pi.
        #[arg(long)]
        minnaert_constant: Option<MinnaertConstant>,
        #[arg(long)]
        tau: Option<f64>,
        /// single or smoothed.
        #[arg(long)]
        extraction: Option<Extraction>,
    },
    /// Run the oracle checks and print a pass/fail table.
    Validate {
        /// Comma-separated check ids, e.g. AC1,AC4.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
    /// Forward evaluation at a single scan point.
    Simulate {
        /// Scan point `x,y,z`; defaults to the scan origin.
        #[arg(long, value_parser = parse_point)]
        z: Option<Vec3>,
        /// A single frequency instead of the scenario band.
        #[arg(long)]
        omega: Option<f64>,
    },
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be positive");
            return 2;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn header(hash: &str) {
    eprintln!("scenario {hash}");
    eprintln!("far-field normalization: {FARFIELD_NORMALIZATION}");
}

fn load_scenario(cli: &Cli) -> anyhow::Result<Scenario> {
    let mut sc = scenarios::resolve(cli.scenario.as_deref()).with_context(|| format!("loading scenario {:?}", cli.scenario))?;
    if let Some(seed) = cli.seed {
        sc.noise.seed = seed;
    }
    Ok(sc)
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<i32> {
    match &cli.command {
        Command::Spectrum { shape, h, count } => spectrum(cli, shape.as_deref(), *h, *count),
        Command::Scan { noise } => scan(cli, *noise),
        Command::Invert {
            data,
            regime,
            omega_eval,
            minnaert_constant,
            tau,
            extraction,
        } => {
            let d = defaults::defaults().invert;
            let opts = InvertOptions {
                regime: regime.or(d.regime),
                omega_eval: omega_eval.or(d.omega_eval),
                minnaert_constant: minnaert_constant.unwrap_or(d.minnaert_constant),
                tau: tau.unwrap_or(d.tau),
                extraction: extraction.unwrap_or(d.extraction),
                ..d
            };
            run_invert(cli, data, &opts)
        }
        Command::Validate { only } => validate(cli, only),
        Command::Simulate { z, omega } => single_point(cli, *z, *omega),
    }
}

#[derive(Serialize)]
struct ClusterOut {
    lambda: f64,
    multiplicity: usize,
    moment_sq: f64,
    omega_n0: Option<f64>,
}

#[derive(Serialize)]
struct SpectrumOut {
    shape: String,
    volume: f64,
    area: f64,
    mu_shape: f64,
    h: f64,
    voxels: usize,
    clusters: Vec<ClusterOut>,
}

fn spectrum(cli: &Cli, shape: Option<&str>, h: Option<f64>, count: Option<usize>) -> anyhow::Result<i32> {
    let sc = load_scenario(cli)?;
    header(&sc.hash());
    let shape_ref: ShapeRef = match shape {
        Some(s) => s.parse()?,
        None => sc.bubble.shape.clone(),
    };
    let shape = load_shape(&shape_ref)?;
    let h = h.unwrap_or(sc.options.body_h);
    let factors = ShapeFactors::of(&shape, sc.options.quad_order)?;
    let vox = voxelize(&shape, h)?;
    let disc = assemble_newtonian(&vox)?;
    let clusters = newtonian_eigens(&disc, count.unwrap_or(defaults::defaults().spectrum_count))?;
    let body = sc.bubble.regime == Regime::BodyWave;
    let out = SpectrumOut {
        shape: shape_ref.to_string(),
        volume: factors.volume,
        area: factors.area,
        mu_shape: factors.mu,
        h,
        voxels: vox.len(),
        clusters: clusters
            .iter()
            .map(|c| ClusterOut {
                lambda: c.lambda,
                multiplicity: c.multiplicity(),
                moment_sq: c.moment_sq,
                omega_n0: if body { body_resonance(&sc.bubble, c.lambda).ok() } else { None },
            })
            .collect(),
    };
    emit(cli.out.as_deref(), &serde_json::to_string_pretty(&out)?)?;
    Ok(0)
}

fn scan(cli: &Cli, noise: Option<f64>) -> anyhow::Result<i32> {
    let mut sc = load_scenario(cli)?;
    if let Some(d) = noise {
        sc.noise.delta = d;
    }
    header(&sc.hash());
    let Some(out) = cli.out.as_deref() else {
        bail!("scan needs --out DIR");
    };
    let set = simulate(&sc)?;
    write_set(&set, out)?;
    eprintln!(
        "wrote {} bubbled and {} baseline records to {} ({} samples skipped near poles)",
        set.bubbled.len(),
        set.baseline.len(),
        out.display(),
        set.meta.skipped.len()
    );
    for w in &set.meta.warnings {
        eprintln!("warning: {w}");
    }
    Ok(0)
}

fn run_invert(cli: &Cli, data: &Path, opts: &InvertOptions) -> anyhow::Result<i32> {
    let set = read_set(data).with_context(|| format!("reading {}", data.display()))?;
    header(&set.meta.scenario_hash);
    let r = invert(&set, opts)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("recon.json"));
    fs::write(&out, format!("{}\n", r.to_json()?)).with_context(|| format!("writing {}", out.display()))?;
    let d = &r.diagnostics;
    eprintln!(
        "{} points fitted, {} fallbacks, {} failed; omega_eval = {}; wrote {}",
        d.fitted,
        d.fallbacks,
        d.failed,
        r.omega_eval,
        out.display()
    );
    for w in &d.warnings {
        eprintln!("warning: {w}");
    }
    Ok(0)
}

#[derive(Serialize)]
struct Report<'a> {
    checks: &'a [checks::Check],
    passed: bool,
}

fn validate(cli: &Cli, only: &[String]) -> anyhow::Result<i32> {
    let sc = load_scenario(cli)?;
    header(&sc.hash());
    eprint!("{}", defaults::table());
    let selected: Vec<checks::Check> = if only.is_empty() {
        checks::all()
    } else {
        let mut v = Vec::new();
        for id in only {
            v.push(match id.to_ascii_uppercase().as_str() {
                "AC1" => checks::geometry_factor(),
                "AC2" => checks::minnaert_law(),
                "AC3" => checks::newtonian_spectrum(),
                "AC4" => checks::w_identity(),
                "AC5" => checks::asymptotic_order(),
                "AC6" => checks::layer_identities(),
                "AC7" => checks::end_to_end(),
                "AC8" => checks::body_wave_pathway(),
                other => bail!("unknown check {other:?}"),
            });
        }
        v
    };
    for c in &selected {
        println!("{}", c.line());
    }
    let passed = selected.iter().all(|c| c.pass);
    if let Some(out) = cli.out.as_deref() {
        let report = Report {
            checks: &selected,
            passed,
        };
        fs::write(out, format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    }
    Ok(if passed { 0 } else { 1 })
}

#[derive(Serialize)]
struct SampleOut {
    omega: f64,
    baseline: [f64; 2],
    bubbled: [f64; 2],
    functional: [f64; 2],
}

#[derive(Serialize)]
struct SimulateOut {
    z: Vec3,
    generator: &'static str,
    samples: Vec<SampleOut>,
    skipped: Vec<f64>,
    warnings: Vec<String>,
}

fn parse_point(s: &str) -> Result<Vec3, String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"))).collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected x,y,z, got {} values", v.len()))
}

fn single_point(cli: &Cli, z: Option<Vec3>, omega: Option<f64>) -> anyhow::Result<i32> {
    let mut sc = load_scenario(cli)?;
    let z = z.unwrap_or(sc.scan.origin);
    sc.scan = ScanGrid {
        origin: z,
        spacing: sc.scan.spacing,
        dims: [1, 1, 1],
    };
    if let Some(w) = omega {
        // The band type needs two samples; only the first is reported.
        sc.band = FrequencyBand {
            omega_min: w,
            omega_max: w * (1.0 + 1e-6),
            count: 2,
        };
    }
    header(&sc.hash());
    let set = simulate(&sc)?;
    let series = imaging_functional(&set, z)?;
    let keep = |w: f64| omega.is_none_or(|x| w == x);
    let samples: Vec<SampleOut> = series
        .omegas
        .iter()
        .zip(&series.values)
        .filter(|(w, _)| keep(**w))
        .map(|(&w, i)| {
            let v = set.baseline_at(w).unwrap_or_default();
            let u = set.bubbled.iter().find(|r| r.omega == w).map_or(v, |r| r.u);
            SampleOut {
                omega: w,
                baseline: [v.re, v.im],
                bubbled: [u.re, u.im],
                functional: [i.re, i.im],
            }
        })
        .collect();
    let skipped: Vec<f64> = set.meta.skipped.iter().map(|s| s.omega).filter(|w| keep(*w)).collect();
    let out = SimulateOut {
        z,
        generator: sc.generator.as_str(),
        samples,
        skipped,
        warnings: set.meta.warnings.clone(),
    };
    emit(cli.out.as_deref(), &serde_json::to_string_pretty(&out)?)?;
    Ok(0)
}
