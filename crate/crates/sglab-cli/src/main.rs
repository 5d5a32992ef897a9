//! `sglab` — command-line front end for the simulation laboratory.
//!
//! Subcommands: `sample` (draw a field realization to disk), `render`
//! (equirectangular PPM of excursion sets), `estimate` (planar arm-frequency
//! densities), `giant` (spherical giant-component campaigns), `eu`
//! (local-uniqueness failure sweeps), `coupling` (finite-range coupling-error
//! ladders), `kernel` (covariance tabulation and decay-bound checks).
//!
//! Exit codes: 0 success, 2 usage/validation error, 3 runtime error.
//! Every command is deterministic given its flags and seed; worker count
//! (`--jobs`) never changes outputs, only wall time.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sglab::error::Error;
use sglab::experiments::{
    coupling_ladder, estimate_phi, estimate_theta, eu_sweep, local_scale, run_experiment_with,
    EstimateRecord, ExperimentConfig, DEFAULT_ARM_RADIUS,
};
use sglab::geometry::{build_grid_opts, Connectivity, DEFAULT_MAX_CELLS};
use sglab::io;
use sglab::render::{grid_from_descriptor, render_sphere, Palette, RenderSpec};
use sglab::samplers::{sample_sphere_ensemble, EnsembleSpec, PlanarKind};
use sglab::spectral::{kernel_bound_report, kernel_value, KernelSpec};

/// Environment variable overriding the default output directory.
const OUT_DIR_ENV: &str = "SGLAB_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "sglab-out";
const DEFAULT_WAVES: usize = 256;
const DEFAULT_CELLS_PER_SCALE: f64 = 4.0;
const DEFAULT_EU_DELTA: f64 = 0.01;

// ---------------------------------------------------------------------------
// Error plumbing: usage (exit 2) vs runtime (exit 3)
// ---------------------------------------------------------------------------

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

type CliResult<T> = Result<T, CliError>;

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help/version requests print to stdout and succeed; everything
            // else is a usage error.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    #[cfg(feature = "parallel")]
    if let Some(j) = cli.jobs {
        // Campaign internals schedule replicates on the global pool; sizing
        // it here makes --jobs effective everywhere. Results are
        // byte-identical for any worker count by construction.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global();
    }
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            3
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let jobs = cli.jobs;
    match cli.command {
        Cmd::Sample(a) => cmd_sample(a),
        Cmd::Render(a) => cmd_render(a),
        Cmd::Estimate(a) => cmd_estimate(a),
        Cmd::Giant(a) => cmd_giant(a, jobs),
        Cmd::Eu(a) => cmd_eu(a),
        Cmd::Coupling(a) => cmd_coupling(a),
        Cmd::Kernel(a) => cmd_kernel(a),
    }
}

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "sglab",
    version,
    about = "Gaussian ensembles on the sphere: sampling, excursion-set analysis, \
             Monte Carlo campaigns, rendering",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for replicate-parallel work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw one field realization and write it as binary + JSON sidecar.
    Sample(SampleArgs),
    /// Render a stored sample's excursion sets to a binary PPM image.
    Render(RenderArgs),
    /// Estimate limiting densities (arm frequencies) on planar limit fields.
    Estimate(EstimateArgs),
    /// Giant-component area campaign for a spherical ensemble.
    Giant(GiantArgs),
    /// Local-uniqueness failure frequencies over a cap-radius ladder.
    Eu(EuArgs),
    /// Coupling-error variance along a ladder of finite ranges.
    Coupling(CouplingArgs),
    /// Tabulate a covariance kernel or check its decay bound.
    Kernel(KernelArgs),
}

#[derive(ValueEnum, Clone, Copy, PartialEq)]
enum EnsembleKind {
    /// Homogeneous polynomial ensemble of degree n.
    Kostlan,
    /// Random spherical harmonic of degree ℓ.
    Rsh,
    /// Band-limited superposition over degrees ⌊αℓ⌋..=ℓ.
    Bandlimited,
    /// Monochromatic window ℓ−⌊ℓ^β⌋..=ℓ.
    Mono,
}

#[derive(Args, Clone)]
struct EnsembleArgs {
    /// Ensemble kind.
    #[arg(long, value_enum)]
    ensemble: Option<EnsembleKind>,
    /// Polynomial degree n ≥ 1 (kostlan).
    #[arg(long, allow_negative_numbers = true)]
    n: Option<i64>,
    /// Harmonic degree ℓ ≥ 1 (rsh, bandlimited, mono).
    #[arg(long, allow_negative_numbers = true)]
    ell: Option<i64>,
    /// Lower window edge fraction α ∈ [0,1) (bandlimited).
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Window-width exponent β ∈ (0,1) (mono).
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
}

fn req_degree(v: Option<i64>, flag: &str, kind: &str) -> CliResult<u32> {
    let v = v.ok_or_else(|| usage(format!("{flag} is required for --ensemble {kind}")))?;
    if !(1..=i64::from(u32::MAX)).contains(&v) {
        return Err(usage(format!("{flag} must be a positive integer, got {v}")));
    }
    Ok(v as u32)
}

fn forbid<T>(v: &Option<T>, flag: &str, kind: &str) -> CliResult<()> {
    if v.is_some() {
        return Err(usage(format!("{flag} does not apply to --ensemble {kind}")));
    }
    Ok(())
}

/// Build an ensemble from flags, falling back to a config-file spec when no
/// ensemble flags were given at all.
fn resolve_ensemble(a: &EnsembleArgs, file: Option<EnsembleSpec>) -> CliResult<EnsembleSpec> {
    let Some(kind) = a.ensemble else {
        if a.n.is_some() || a.ell.is_some() || a.alpha.is_some() || a.beta.is_some() {
            return Err(usage(
                "ensemble parameter flags (--n/--ell/--alpha/--beta) require --ensemble",
            ));
        }
        return file.ok_or_else(|| usage("--ensemble is required (flags or config file)"));
    };
    let spec = match kind {
        EnsembleKind::Kostlan => {
            forbid(&a.ell, "--ell", "kostlan")?;
            forbid(&a.alpha, "--alpha", "kostlan")?;
            forbid(&a.beta, "--beta", "kostlan")?;
            EnsembleSpec::Kostlan {
                n: req_degree(a.n, "--n", "kostlan")?,
            }
        }
        EnsembleKind::Rsh => {
            forbid(&a.n, "--n", "rsh")?;
            forbid(&a.alpha, "--alpha", "rsh")?;
            forbid(&a.beta, "--beta", "rsh")?;
            EnsembleSpec::Harmonic {
                l: req_degree(a.ell, "--ell", "rsh")?,
            }
        }
        EnsembleKind::Bandlimited => {
            forbid(&a.n, "--n", "bandlimited")?;
            forbid(&a.beta, "--beta", "bandlimited")?;
            EnsembleSpec::BandLimited {
                l: req_degree(a.ell, "--ell", "bandlimited")?,
                alpha: a
                    .alpha
                    .ok_or_else(|| usage("--alpha is required for --ensemble bandlimited"))?,
            }
        }
        EnsembleKind::Mono => {
            forbid(&a.n, "--n", "mono")?;
            forbid(&a.alpha, "--alpha", "mono")?;
            EnsembleSpec::Mono {
                l: req_degree(a.ell, "--ell", "mono")?,
                beta: a
                    .beta
                    .ok_or_else(|| usage("--beta is required for --ensemble mono"))?,
            }
        }
    };
    if let Some(k) = spec.kernel_spec() {
        k.validate().map_err(|e| usage(e.to_string()))?;
    }
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Shared plumbing: output paths, config files, manifests
// ---------------------------------------------------------------------------

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Explicit path if given, else `default_name` under the output directory
/// (overridable via SGLAB_OUT_DIR).
fn resolve_out(explicit: Option<PathBuf>, default_name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| out_dir().join(default_name))
}

fn load_config<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> CliResult<T> {
    let Some(p) = path else {
        return Ok(T::default());
    };
    let text =
        std::fs::read_to_string(p).map_err(|e| CliError::Runtime(Error::io(p.clone(), e)))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
}

fn call_hash<T: Serialize>(call: &T) -> CliResult<String> {
    Ok(io::hash_hex(&io::canonical_json(call)?))
}

fn manifest_path_for(data: &Path) -> PathBuf {
    let mut os = data.as_os_str().to_os_string();
    os.push(".manifest.json");
    PathBuf::from(os)
}

fn write_records(
    data_path: &Path,
    header: &[String],
    rows: &[Vec<String>],
    config_hash: &str,
    wall: f64,
) -> CliResult<PathBuf> {
    io::write_csv(data_path, header, rows)?;
    let manifest = io::RunManifest {
        config_hash: config_hash.to_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: wall,
        complete: true,
        rows: rows.len(),
        data_path: data_path.display().to_string(),
    };
    let mpath = manifest_path_for(data_path);
    io::write_json(&mpath, &manifest)?;
    Ok(mpath)
}

// Wall time stays out of the data rows (it lives in the manifest) so that
// reruns of one config are byte-identical.
fn estimate_header() -> Vec<String> {
    ["name", "value", "standard_error", "replicates", "seed", "config_hash"]
        .into_iter()
        .map(String::from)
        .collect()
}

fn estimate_row(r: &EstimateRecord) -> Vec<String> {
    vec![
        r.name.clone(),
        io::format_float(r.value),
        io::format_float(r.standard_error),
        r.replicates.to_string(),
        r.seed.to_string(),
        r.config_hash.clone(),
    ]
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

#[derive(ValueEnum, Clone, Copy)]
enum ConnArg {
    Four,
    Eight,
}

impl From<ConnArg> for Connectivity {
    fn from(c: ConnArg) -> Self {
        match c {
            ConnArg::Four => Connectivity::Four,
            ConnArg::Eight => Connectivity::Eight,
        }
    }
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    ensemble: EnsembleArgs,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replicate stream index.
    #[arg(long, default_value_t = 0)]
    stream: u64,
    /// Grid cells per local field scale.
    #[arg(long, default_value_t = DEFAULT_CELLS_PER_SCALE)]
    res: f64,
    /// Cell adjacency on the sphere grid.
    #[arg(long, value_enum, default_value_t = ConnArg::Eight)]
    conn: ConnArg,
    /// Output file (default: a descriptive name under the output directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_sample_name(spec: &EnsembleSpec, seed: u64, stream: u64) -> String {
    match spec {
        EnsembleSpec::Kostlan { n } => format!("kostlan-n{n}-seed{seed}-s{stream}.field"),
        EnsembleSpec::Harmonic { l } => format!("rsh-ell{l}-seed{seed}-s{stream}.field"),
        EnsembleSpec::BandLimited { alpha, l } => {
            format!("bandlimited-ell{l}-alpha{alpha}-seed{seed}-s{stream}.field")
        }
        EnsembleSpec::Mono { beta, l } => {
            format!("mono-ell{l}-beta{beta}-seed{seed}-s{stream}.field")
        }
        _ => format!("sample-seed{seed}-s{stream}.field"),
    }
}

fn cmd_sample(a: SampleArgs) -> CliResult<()> {
    let spec = resolve_ensemble(&a.ensemble, None)?;
    if !(a.res >= 1.0 && a.res.is_finite()) {
        return Err(usage(format!("--res must be a finite value ≥ 1, got {}", a.res)));
    }
    let grid = build_grid_opts(a.res, local_scale(&spec), a.conn.into(), DEFAULT_MAX_CELLS)?;
    let sample = sample_sphere_ensemble(&spec, &grid, a.seed, a.stream)?;
    let out = resolve_out(a.out, &default_sample_name(&spec, a.seed, a.stream));
    let sidecar = io::write_field_sample(&out, &sample)?;
    println!("wrote {}", out.display());
    println!("wrote {}", sidecar.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

#[derive(ValueEnum, Clone, Copy, PartialEq)]
enum PaletteArg {
    /// One level: excursion cells dark, rest light.
    Binary,
    /// Two levels t₁ < t₂: dark / mid / light.
    TwoLevel,
    /// One level: each component its own color.
    Components,
}

#[derive(Args)]
struct RenderArgs {
    /// Stored field-sample binary (sidecar expected at <file>.json).
    #[arg(long)]
    field: PathBuf,
    /// Excursion level; repeat once for a two-level overlay (at most 2).
    #[arg(long = "t", allow_negative_numbers = true)]
    t: Vec<f64>,
    /// Coloring scheme (default: binary for one level, two-level for two).
    #[arg(long, value_enum)]
    palette: Option<PaletteArg>,
    /// Image width in pixels (height is width/2).
    #[arg(long, default_value_t = 512)]
    width: usize,
    /// Outline the largest-area component of the outermost level.
    #[arg(long)]
    outline_giant: bool,
    /// Output image path (default: <sample stem>.ppm under the output dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_render(a: RenderArgs) -> CliResult<()> {
    if a.t.is_empty() {
        return Err(usage("at least one --t level is required"));
    }
    if a.t.len() > 2 {
        return Err(usage(format!("at most 2 levels may be highlighted, got {}", a.t.len())));
    }
    let palette = match (a.palette, a.t.as_slice()) {
        (None | Some(PaletteArg::Binary), &[t]) => Palette::Binary { level: t },
        (None | Some(PaletteArg::TwoLevel), &[lo, hi]) => Palette::TwoLevel { lo, hi },
        (Some(PaletteArg::Components), &[t]) => Palette::Components { level: t },
        (Some(PaletteArg::Binary), _) => {
            return Err(usage("--palette binary takes exactly one --t"))
        }
        (Some(PaletteArg::TwoLevel), _) => {
            return Err(usage("--palette two-level takes exactly two --t, with t₁ < t₂"))
        }
        (Some(PaletteArg::Components), _) => {
            return Err(usage("--palette components takes exactly one --t"))
        }
        (None, _) => unreachable!("level count already validated"),
    };
    let spec = RenderSpec {
        width: a.width,
        palette,
        outline_giant: a.outline_giant,
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let sample = io::read_field_sample(&a.field)?;
    let grid = grid_from_descriptor(&sample.grid_ref)?;
    let ppm = render_sphere(&sample, &grid, &spec)?;
    let default_name = a
        .field
        .file_stem()
        .map(|s| format!("{}.ppm", s.to_string_lossy()))
        .unwrap_or_else(|| "render.ppm".to_string());
    let out = resolve_out(a.out, &default_name);
    io::write_bytes(&out, &ppm)?;
    println!("wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

#[derive(ValueEnum, Clone, Copy, PartialEq)]
enum FieldArg {
    /// Bargmann–Fock planar limit field (product-ensemble limit).
    Bf,
    /// Annular plane-wave field with parameter α (α = 1: monochromatic).
    Band,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EstimateFile {
    field: Option<String>,
    alpha: Option<f64>,
    t: Option<f64>,
    #[serde(rename = "R")]
    r: Option<f64>,
    #[serde(rename = "M")]
    m: Option<usize>,
    seed: Option<u64>,
    window: Option<f64>,
    waves: Option<usize>,
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Planar limit field.
    #[arg(long, value_enum)]
    field: Option<FieldArg>,
    /// Spectral parameter α ∈ (0,1] for --field band.
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Excursion level t.
    #[arg(long = "t", allow_negative_numbers = true)]
    t: Option<f64>,
    /// Arm radius R in wavelengths.
    #[arg(long = "R")]
    r: Option<f64>,
    /// Replicates.
    #[arg(long = "M")]
    m: Option<usize>,
    /// Master seed (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Observation window side (default 2R+2).
    #[arg(long)]
    window: Option<f64>,
    /// Plane waves per synthesis (default 256).
    #[arg(long)]
    waves: Option<usize>,
    /// Also write the window-bounded and corrected rows.
    #[arg(long)]
    full: bool,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved config hash and exit without running.
    #[arg(long)]
    dry_run: bool,
}

/// Mirror of the campaign's internal call record; hashing this gives the
/// same config hash that the produced rows carry.
#[derive(Serialize)]
struct ArmCallMirror {
    estimator: String,
    kind: PlanarKind,
    level: f64,
    arm_radius: f64,
    window: f64,
    waves: usize,
    replicates: usize,
    seed: u64,
}

fn cmd_estimate(a: EstimateArgs) -> CliResult<()> {
    let file: EstimateFile = load_config(&a.config)?;
    let field = match (a.field, file.field.as_deref()) {
        (Some(f), _) => f,
        (None, Some("bf")) => FieldArg::Bf,
        (None, Some("band")) => FieldArg::Band,
        (None, Some(other)) => {
            return Err(usage(format!("config field must be \"bf\" or \"band\", got \"{other}\"")))
        }
        (None, None) => return Err(usage("--field bf|band is required")),
    };
    let level = a
        .t
        .or(file.t)
        .ok_or_else(|| usage("--t (excursion level) is required"))?;
    if !level.is_finite() {
        return Err(usage(format!("--t must be finite, got {level}")));
    }
    let arm_radius = a.r.or(file.r).unwrap_or(DEFAULT_ARM_RADIUS);
    if !(arm_radius > 0.0 && arm_radius.is_finite()) {
        return Err(usage(format!("--R must be positive and finite, got {arm_radius}")));
    }
    let m = a
        .m
        .or(file.m)
        .ok_or_else(|| usage("--M (replicates) is required"))?;
    if m == 0 {
        return Err(usage("--M must be ≥ 1"));
    }
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let window = a
        .window
        .or(file.window)
        .unwrap_or(2.0 * arm_radius + 2.0);
    if window < 2.0 * arm_radius + 2.0 {
        return Err(usage(format!(
            "--window must be at least 2R+2 = {}, got {window}",
            2.0 * arm_radius + 2.0
        )));
    }
    let waves = a.waves.or(file.waves).unwrap_or(DEFAULT_WAVES);
    if waves == 0 {
        return Err(usage("--waves must be ≥ 1"));
    }
    let (estimator, kind, alpha) = match field {
        FieldArg::Bf => {
            if a.alpha.or(file.alpha).is_some() {
                return Err(usage("--alpha applies only to --field band"));
            }
            ("theta", PlanarKind::BargmannFock, None)
        }
        FieldArg::Band => {
            let alpha = a
                .alpha
                .or(file.alpha)
                .ok_or_else(|| usage("--alpha is required for --field band"))?;
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(usage(format!("--alpha must lie in (0,1], got {alpha}")));
            }
            ("phi", PlanarKind::PlaneWave { alpha }, Some(alpha))
        }
    };
    let hash = call_hash(&ArmCallMirror {
        estimator: estimator.to_string(),
        kind,
        level,
        arm_radius,
        window,
        waves,
        replicates: m,
        seed,
    })?;
    if a.dry_run {
        println!("{hash}");
        return Ok(());
    }
    let out = resolve_out(
        a.out.or(file.out),
        &format!("estimate-{estimator}-{}.csv", &hash[..12]),
    );
    let est = match alpha {
        None => estimate_theta(level, arm_radius, window, waves, m, seed)?,
        Some(alpha) => estimate_phi(alpha, level, arm_radius, window, waves, m, seed)?,
    };
    let mut rows = vec![estimate_row(&est.arm)];
    if a.full {
        rows.push(estimate_row(&est.bounded));
        let p = est.corrected;
        rows.push(estimate_row(&EstimateRecord {
            name: format!("{estimator}_corrected[t={level},R={arm_radius}]"),
            value: p,
            standard_error: (p * (1.0 - p) / m as f64).sqrt(),
            replicates: m,
            seed,
            config_hash: est.arm.config_hash.clone(),
            wall_time_seconds: est.arm.wall_time_seconds,
        }));
    }
    let wall = est.arm.wall_time_seconds;
    let mpath = write_records(&out, &estimate_header(), &rows, &hash, wall)?;
    for row in &rows {
        println!("{} = {} ± {} (M={m})", row[0], row[1], row[2]);
    }
    println!("wrote {}", out.display());
    println!("wrote {}", mpath.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// giant
// ---------------------------------------------------------------------------

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CampaignFile {
    name: Option<String>,
    ensemble: Option<EnsembleSpec>,
    levels: Option<Vec<f64>>,
    replicates: Option<usize>,
    cells_per_scale: Option<f64>,
    seed: Option<u64>,
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GiantArgs {
    /// JSON config file (experiment-config schema); flags override fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    ensemble: EnsembleArgs,
    /// Excursion level; repeatable.
    #[arg(long = "t", allow_negative_numbers = true)]
    t: Vec<f64>,
    /// Replicates per level.
    #[arg(long = "M")]
    m: Option<usize>,
    /// Grid cells per local field scale (default 4).
    #[arg(long)]
    res: Option<f64>,
    /// Master seed (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Campaign name recorded in every row (default "giant").
    #[arg(long)]
    name: Option<String>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved config hash and exit without running.
    #[arg(long)]
    dry_run: bool,
}

fn cmd_giant(a: GiantArgs, jobs: Option<usize>) -> CliResult<()> {
    let file: CampaignFile = load_config(&a.config)?;
    let ensemble = resolve_ensemble(&a.ensemble, file.ensemble)?;
    let levels = if a.t.is_empty() {
        file.levels.unwrap_or_default()
    } else {
        a.t.clone()
    };
    if levels.is_empty() {
        return Err(usage("at least one --t level is required"));
    }
    let replicates = a
        .m
        .or(file.replicates)
        .ok_or_else(|| usage("--M (replicates) is required"))?;
    let mut config = ExperimentConfig {
        name: a.name.or(file.name).unwrap_or_else(|| "giant".to_string()),
        ensemble,
        levels,
        replicates,
        cells_per_scale: a
            .res
            .or(file.cells_per_scale)
            .unwrap_or(DEFAULT_CELLS_PER_SCALE),
        seed: a.seed.or(file.seed).unwrap_or(0),
        events: Vec::new(),
        output: None,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    // Default filename from the identity of the experiment (hash with the
    // output location masked out), then the recorded hash covers everything.
    let base_hash = config.hash()?;
    config.output = Some(resolve_out(
        a.out.or(file.output),
        &format!("giant-{}.csv", &base_hash[..12]),
    ));
    let hash = config.hash()?;
    if a.dry_run {
        println!("{hash}");
        return Ok(());
    }
    let output = run_experiment_with(&config, jobs)?;
    // Per-level summary block. Columns: name, level, replicate,
    // area_fraction, diameter_fraction, coincident, config_hash.
    for &t in &config.levels {
        let key = io::format_float(t);
        let mut areas = Vec::new();
        let mut diams = Vec::new();
        let mut coincident = 0usize;
        for row in output.rows.iter().filter(|r| r[1] == key) {
            areas.push(row[3].parse::<f64>().map_err(|_| {
                Error::Serialize(format!("unparseable area fraction {:?}", row[3]))
            })?);
            diams.push(row[4].parse::<f64>().map_err(|_| {
                Error::Serialize(format!("unparseable diameter fraction {:?}", row[4]))
            })?);
            coincident += usize::from(row[5] == "1");
        }
        let n = areas.len().max(1) as f64;
        let mean = areas.iter().sum::<f64>() / n;
        let var = areas.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let mean_d = diams.iter().sum::<f64>() / n;
        println!(
            "level {t}: mean area fraction {:.6} (se {:.6}), mean diameter-giant {:.6}, \
             coincidence {:.4}, M={}",
            mean,
            (var / n).sqrt(),
            mean_d,
            coincident as f64 / n,
            areas.len()
        );
    }
    println!("wrote {}", output.data_path.display());
    println!("wrote {}", output.manifest_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eu
// ---------------------------------------------------------------------------

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct EuFile {
    ensemble: Option<EnsembleSpec>,
    t: Option<f64>,
    radius: Option<Vec<f64>>,
    delta: Option<f64>,
    #[serde(rename = "M")]
    m: Option<usize>,
    res: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EuArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    ensemble: EnsembleArgs,
    /// Excursion level t.
    #[arg(long = "t", allow_negative_numbers = true)]
    t: Option<f64>,
    /// Cap radius; repeat for a strictly increasing ladder.
    #[arg(long)]
    radius: Vec<f64>,
    /// Small-component diameter fraction δ (default 0.01).
    #[arg(long)]
    delta: Option<f64>,
    /// Replicates.
    #[arg(long = "M")]
    m: Option<usize>,
    /// Grid cells per local field scale (default 4).
    #[arg(long)]
    res: Option<f64>,
    /// Master seed (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved config hash and exit without running.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Serialize)]
struct EuCall {
    ensemble: EnsembleSpec,
    level: f64,
    ladder: Vec<f64>,
    delta: f64,
    replicates: usize,
    cells_per_scale: f64,
    seed: u64,
}

fn cmd_eu(a: EuArgs) -> CliResult<()> {
    let file: EuFile = load_config(&a.config)?;
    let ensemble = resolve_ensemble(&a.ensemble, file.ensemble)?;
    let level = a
        .t
        .or(file.t)
        .ok_or_else(|| usage("--t (excursion level) is required"))?;
    let ladder = if a.radius.is_empty() {
        file.radius.unwrap_or_default()
    } else {
        a.radius.clone()
    };
    if ladder.is_empty() {
        return Err(usage("at least one --radius is required"));
    }
    let delta = a.delta.or(file.delta).unwrap_or(DEFAULT_EU_DELTA);
    let m = a
        .m
        .or(file.m)
        .ok_or_else(|| usage("--M (replicates) is required"))?;
    let call = EuCall {
        ensemble: ensemble.clone(),
        level,
        ladder: ladder.clone(),
        delta,
        replicates: m,
        cells_per_scale: a.res.or(file.res).unwrap_or(DEFAULT_CELLS_PER_SCALE),
        seed: a.seed.or(file.seed).unwrap_or(0),
    };
    let hash = call_hash(&call)?;
    if a.dry_run {
        println!("{hash}");
        return Ok(());
    }
    let out = resolve_out(a.out.or(file.out), &format!("eu-{}.csv", &hash[..12]));
    let start = std::time::Instant::now();
    let sweep = eu_sweep(
        &ensemble,
        level,
        &ladder,
        delta,
        m,
        call.cells_per_scale,
        call.seed,
    )?;
    let header: Vec<String> = [
        "name", "level", "delta", "range", "failures", "frequency", "standard_error",
        "replicates", "config_hash",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    let rows: Vec<Vec<String>> = sweep
        .entries
        .iter()
        .map(|e| {
            vec![
                "eu".to_string(),
                io::format_float(sweep.level),
                io::format_float(sweep.delta),
                io::format_float(e.range),
                e.failures.to_string(),
                io::format_float(e.frequency),
                io::format_float(e.standard_error),
                sweep.replicates.to_string(),
                hash.clone(),
            ]
        })
        .collect();
    let mpath = write_records(&out, &header, &rows, &hash, start.elapsed().as_secs_f64())?;
    for e in &sweep.entries {
        println!(
            "r = {}: {} failures / {} (frequency {:.6} ± {:.6})",
            e.range, e.failures, sweep.replicates, e.frequency, e.standard_error
        );
    }
    match sweep.log_slope {
        Some(s) => println!("log-frequency slope in r: {s:.6}"),
        None => println!("log-frequency slope in r: n/a (fewer than two positive frequencies)"),
    }
    println!("wrote {}", out.display());
    println!("wrote {}", mpath.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// coupling
// ---------------------------------------------------------------------------

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CouplingFile {
    ensemble: Option<EnsembleSpec>,
    range: Option<Vec<f64>>,
    #[serde(rename = "M")]
    m: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CouplingArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    ensemble: EnsembleArgs,
    /// Coupling range; repeat for a strictly increasing ladder.
    #[arg(long)]
    range: Vec<f64>,
    /// Replicates.
    #[arg(long = "M")]
    m: Option<usize>,
    /// Master seed (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved config hash and exit without running.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Serialize)]
struct CouplingCall {
    ensemble: EnsembleSpec,
    ladder: Vec<f64>,
    replicates: usize,
    seed: u64,
}

fn cmd_coupling(a: CouplingArgs) -> CliResult<()> {
    let file: CouplingFile = load_config(&a.config)?;
    let ensemble = resolve_ensemble(&a.ensemble, file.ensemble)?;
    let ladder = if a.range.is_empty() {
        file.range.unwrap_or_default()
    } else {
        a.range.clone()
    };
    if ladder.is_empty() {
        return Err(usage("at least one --range is required"));
    }
    let m = a
        .m
        .or(file.m)
        .ok_or_else(|| usage("--M (replicates) is required"))?;
    let call = CouplingCall {
        ensemble: ensemble.clone(),
        ladder: ladder.clone(),
        replicates: m,
        seed: a.seed.or(file.seed).unwrap_or(0),
    };
    let hash = call_hash(&call)?;
    if a.dry_run {
        println!("{hash}");
        return Ok(());
    }
    let out = resolve_out(a.out.or(file.out), &format!("coupling-{}.csv", &hash[..12]));
    let start = std::time::Instant::now();
    let result = coupling_ladder(&ensemble, &ladder, m, call.seed)?;
    let header: Vec<String> = [
        "name", "range", "exact_variance", "empirical_variance", "standard_error",
        "replicates", "config_hash",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    let rows: Vec<Vec<String>> = result
        .entries
        .iter()
        .map(|e| {
            vec![
                "coupling".to_string(),
                io::format_float(e.range),
                e.exact_variance.map(io::format_float).unwrap_or_default(),
                io::format_float(e.empirical_variance),
                io::format_float(e.standard_error),
                result.replicates.to_string(),
                hash.clone(),
            ]
        })
        .collect();
    let mpath = write_records(&out, &header, &rows, &hash, start.elapsed().as_secs_f64())?;
    for e in &result.entries {
        match e.exact_variance {
            Some(v) => println!(
                "r = {}: Var(f − f_r) exact {:.3e}, empirical {:.3e} ± {:.3e}",
                e.range, v, e.empirical_variance, e.standard_error
            ),
            None => println!(
                "r = {}: Var(f − f_r) empirical {:.3e} ± {:.3e}",
                e.range, e.empirical_variance, e.standard_error
            ),
        }
    }
    println!("wrote {}", out.display());
    println!("wrote {}", mpath.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// kernel
// ---------------------------------------------------------------------------

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct KernelFile {
    ensemble: Option<EnsembleSpec>,
    points: Option<usize>,
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KernelArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    ensemble: EnsembleArgs,
    /// Evaluation points on the angle grid.
    #[arg(long)]
    points: Option<usize>,
    /// Check the covariance decay bound over (0, π/2] instead of tabulating.
    #[arg(long)]
    check_bounds: bool,
    /// Output CSV path (tabulation mode).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved config hash and exit without running.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Serialize)]
struct KernelCall {
    spec: KernelSpec,
    points: usize,
    check_bounds: bool,
}

fn cmd_kernel(a: KernelArgs) -> CliResult<()> {
    let file: KernelFile = load_config(&a.config)?;
    let ensemble = resolve_ensemble(&a.ensemble, file.ensemble)?;
    let spec = ensemble
        .kernel_spec()
        .ok_or_else(|| usage("kernel requires a spherical ensemble"))?;
    let points = a.points.or(file.points).unwrap_or(200);
    if points < 2 {
        return Err(usage(format!("--points must be ≥ 2, got {points}")));
    }
    let hash = call_hash(&KernelCall {
        spec,
        points,
        check_bounds: a.check_bounds,
    })?;
    if a.dry_run {
        println!("{hash}");
        return Ok(());
    }
    if a.check_bounds {
        let grid: Vec<f64> = (1..=points)
            .map(|i| i as f64 / points as f64 * std::f64::consts::FRAC_PI_2)
            .collect();
        match kernel_bound_report(&spec, &grid) {
            Ok(report) => {
                let detail = match (report.worst_ratio, report.empirical_constant) {
                    (Some(r), _) => format!("worst |kernel|/bound = {r:.6}"),
                    (_, Some(c)) => format!("empirical decay constant = {c:.6}"),
                    _ => "no statistic".to_string(),
                };
                println!("kernel bound check: PASS ({detail}, {} points)", report.n_points);
                Ok(())
            }
            Err(e) => {
                println!("kernel bound check: FAIL");
                Err(CliError::Runtime(e))
            }
        }
    } else {
        let out = resolve_out(a.out.or(file.out), &format!("kernel-{}.csv", &hash[..12]));
        let header: Vec<String> = ["theta", "value"].into_iter().map(String::from).collect();
        let mut rows = Vec::with_capacity(points);
        for i in 1..=points {
            let theta = i as f64 / points as f64 * std::f64::consts::PI;
            let v = kernel_value(&spec, theta)?;
            rows.push(vec![io::format_float(theta), io::format_float(v)]);
        }
        let mpath = write_records(&out, &header, &rows, &hash, 0.0)?;
        println!("wrote {}", out.display());
        println!("wrote {}", mpath.display());
        Ok(())
    }
}
