//! Monte Carlo campaigns: limiting-density estimation on planar limit
//! fields, giant-area concentration on the sphere, local-uniqueness sweeps,
//! coupling-error ladders, and reproducible persisted runs.
//!
//! Seed discipline: a master seed plus the replicate counter as the stream
//! index. Level sweeps reuse the replicate streams (one field per replicate,
//! all levels evaluated on it), which makes per-replicate quantities exactly
//! monotone-coupled across levels. Replicates are the unit of parallelism;
//! results are collected in replicate order, so outputs are byte-identical
//! regardless of worker count.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excursion::{
    event_occurs, excursion_mask, giant, label_components, EventKind, EventSpec, GiantCriterion,
    GridHandle,
};
use crate::exec::run_replicates;
use crate::finite_range::{
    kostlan_coupled, kostlan_truncation_variance, truncate_zonal, zonal_truncated_pair,
    OrthantPatch, DEFAULT_ORTHANT_MARGIN,
};
use crate::geometry::{build_grid, Connectivity, SphereGrid, SpherePoint, DEFAULT_MAX_CELLS};
use crate::io::{self, RunManifest};
use crate::samplers::{
    sample_planar, sample_sphere_ensemble, EnsembleSpec, PlanarGrid, PlanarKind,
};
use crate::spectral::ZonalCoefficients;

/// Planar grids resolve the unit wavelength with this many cells.
pub const PLANAR_CELLS_PER_UNIT: f64 = 8.0;
/// Minimum grid resolution policy: cells per local field scale.
pub const MIN_CELLS_PER_SCALE: f64 = 4.0;
/// Default arm radius (in wavelengths) for limiting-density estimation.
pub const DEFAULT_ARM_RADIUS: f64 = 10.0;
/// Deviation thresholds reported by the giant-area summary.
pub const DEVIATION_LADDER: [f64; 5] = [0.2, 0.1, 0.05, 0.02, 0.01];

/// Fixed probe point for uniqueness sweeps (away from both poles).
pub fn eu_probe_point() -> SpherePoint {
    SpherePoint::from_colat_lon(1.2, 0.7)
}

// ---------------------------------------------------------------------------
// Configuration and records
// ---------------------------------------------------------------------------

/// A declarative experiment: ensemble, levels, replicate count, resolution
/// policy, seed, optional event specs, and where to persist rows. Its
/// canonical JSON hash is recorded with every output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub ensemble: EnsembleSpec,
    pub levels: Vec<f64>,
    pub replicates: usize,
    /// Grid cells per local field scale (≥ 4).
    pub cells_per_scale: f64,
    pub seed: u64,
    /// Events to evaluate per level; empty means a giant-area campaign.
    #[serde(default)]
    pub events: Vec<EventSpec>,
    /// Data file path; required by [`run_experiment`], ignored by dry runs.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Domain("replicate count must be ≥ 1".into()));
        }
        if self.levels.is_empty() {
            return Err(Error::EmptyInput("config has no levels".into()));
        }
        if let Some(&bad) = self.levels.iter().find(|l| !l.is_finite()) {
            return Err(Error::Domain(format!("level {bad} is not finite")));
        }
        if !(self.cells_per_scale >= MIN_CELLS_PER_SCALE) {
            return Err(Error::Resolution(format!(
                "resolution policy of {} cells per scale is below the minimum {}",
                self.cells_per_scale, MIN_CELLS_PER_SCALE
            )));
        }
        for spec in &self.events {
            spec.validate()?;
        }
        Ok(())
    }

    /// Hash of the canonical serialized form.
    pub fn hash(&self) -> Result<String> {
        Ok(io::hash_hex(&io::canonical_json(self)?))
    }
}

/// One named scalar estimate with its Monte Carlo uncertainty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub name: String,
    pub value: f64,
    /// √(p̂(1−p̂)/M) for event frequencies.
    pub standard_error: f64,
    pub replicates: usize,
    pub seed: u64,
    pub config_hash: String,
    pub wall_time_seconds: f64,
}

fn frequency_record(
    name: String,
    hits: usize,
    m: usize,
    seed: u64,
    config_hash: String,
    wall_time_seconds: f64,
) -> EstimateRecord {
    let p = hits as f64 / m as f64;
    EstimateRecord {
        name,
        value: p,
        standard_error: (p * (1.0 - p) / m as f64).sqrt(),
        replicates: m,
        seed,
        config_hash,
        wall_time_seconds,
    }
}

/// Local field scale of an ensemble: the wavelength-type length over which
/// its covariance varies (1/√n for the degree-n product ensemble, π/ℓ for
/// degree-ℓ harmonics, the unit wavelength for planar limit fields).
pub fn local_scale(spec: &EnsembleSpec) -> f64 {
    match spec {
        EnsembleSpec::Kostlan { n } => ((*n).max(1) as f64).sqrt().recip(),
        EnsembleSpec::Harmonic { l }
        | EnsembleSpec::BandLimited { l, .. }
        | EnsembleSpec::Mono { l, .. } => std::f64::consts::PI / (*l).max(1) as f64,
        EnsembleSpec::Isotropic { coeffs } => {
            std::f64::consts::PI / coeffs.len().saturating_sub(1).max(1) as f64
        }
        EnsembleSpec::Localized { base, .. } => local_scale(base),
        EnsembleSpec::BargmannFock { .. } | EnsembleSpec::PlaneWave { .. } => 1.0,
    }
}

// ---------------------------------------------------------------------------
// Limiting densities on planar limit fields
// ---------------------------------------------------------------------------

/// Arm-frequency estimates on a planar limit field: the raw arm frequency
/// (the finite-radius proxy for the unbounded-component density) and the
/// bounded-arm frequency (arms whose component stays inside the window),
/// whose difference is the sharper proxy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmEstimates {
    pub arm: EstimateRecord,
    pub bounded: EstimateRecord,
    /// `arm.value − bounded.value`: frequency of arms that also leave the
    /// observation window.
    pub corrected: f64,
}

#[derive(Serialize)]
struct ArmCall<'a> {
    estimator: &'a str,
    kind: PlanarKind,
    level: f64,
    arm_radius: f64,
    window: f64,
    waves: usize,
    replicates: usize,
    seed: u64,
}

fn planar_grid_for_window(window: f64) -> Result<PlanarGrid> {
    let n = (window * PLANAR_CELLS_PER_UNIT).ceil() as usize;
    PlanarGrid::new(window, n.max(8))
}

fn estimate_arm_frequencies(
    estimator: &str,
    kind: PlanarKind,
    level: f64,
    arm_radius: f64,
    window: f64,
    waves: usize,
    m: usize,
    seed: u64,
) -> Result<ArmEstimates> {
    if m == 0 {
        return Err(Error::Domain("replicate count must be ≥ 1".into()));
    }
    if !(arm_radius > 0.0) || !window.is_finite() {
        return Err(Error::Domain(format!(
            "arm radius {arm_radius} and window {window} must be positive and finite"
        )));
    }
    if window < 2.0 * arm_radius + 2.0 {
        return Err(Error::Domain(format!(
            "window {window} must be at least 2·R + 2 = {} for arm radius {arm_radius}",
            2.0 * arm_radius + 2.0
        )));
    }
    let grid = planar_grid_for_window(window)?;
    let call = ArmCall {
        estimator,
        kind,
        level,
        arm_radius,
        window,
        waves,
        replicates: m,
        seed,
    };
    let config_hash = io::hash_hex(&io::canonical_json(&call)?);
    let arm_spec = EventSpec::arm(arm_radius, level);
    let bounded_spec = EventSpec {
        kind: EventKind::TruncatedArm {
            radius: arm_radius,
            window,
        },
        level,
    };
    let start = Instant::now();
    let outcomes = run_replicates(m, None, |rep| {
        let sample = sample_planar(kind, &grid, waves, seed, rep as u64)?;
        let arm = event_occurs(&sample, GridHandle::Planar(&grid), &arm_spec)?;
        let bounded = if arm {
            event_occurs(&sample, GridHandle::Planar(&grid), &bounded_spec)?
        } else {
            false
        };
        Ok::<(bool, bool), Error>((arm, bounded))
    });
    let mut arm_hits = 0usize;
    let mut bounded_hits = 0usize;
    for outcome in outcomes {
        let (arm, bounded) = outcome?;
        arm_hits += usize::from(arm);
        bounded_hits += usize::from(bounded);
    }
    let wall = start.elapsed().as_secs_f64();
    let arm = frequency_record(
        format!("{estimator}[t={level},R={arm_radius}]"),
        arm_hits,
        m,
        seed,
        config_hash.clone(),
        wall,
    );
    let bounded = frequency_record(
        format!("{estimator}_bounded[t={level},R={arm_radius}]"),
        bounded_hits,
        m,
        seed,
        config_hash,
        wall,
    );
    let corrected = arm.value - bounded.value;
    Ok(ArmEstimates {
        arm,
        bounded,
        corrected,
    })
}

/// Density proxy for the unbounded-component probability of the isotropic
/// Gaussian limit field: the frequency of an arm of radius `arm_radius` from
/// the origin in the sub-level set at `level`, over `m` independent
/// wave-superposition samples on a window of side `window` (≥ 2R + 2).
pub fn estimate_theta(
    level: f64,
    arm_radius: f64,
    window: f64,
    waves: usize,
    m: usize,
    seed: u64,
) -> Result<ArmEstimates> {
    estimate_arm_frequencies(
        "theta",
        PlanarKind::BargmannFock,
        level,
        arm_radius,
        window,
        waves,
        m,
        seed,
    )
}

/// As [`estimate_theta`], on the band-limited planar limit kernel with
/// window parameter `alpha` (α = 1 is the monochromatic wave kernel).
pub fn estimate_phi(
    alpha: f64,
    level: f64,
    arm_radius: f64,
    window: f64,
    waves: usize,
    m: usize,
    seed: u64,
) -> Result<ArmEstimates> {
    estimate_arm_frequencies(
        "phi",
        PlanarKind::PlaneWave { alpha },
        level,
        arm_radius,
        window,
        waves,
        m,
        seed,
    )
}

// ---------------------------------------------------------------------------
// Giant-area concentration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GiantAreaReplicate {
    pub replicate: usize,
    /// Area of the largest-area component over the sphere area.
    pub area_fraction: f64,
    /// Area of the largest-diameter component over the sphere area.
    pub diameter_fraction: f64,
    /// Whether the two selections picked the same component.
    pub coincident: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviationEntry {
    pub epsilon: f64,
    /// Frequency of |area_fraction − mean| ≥ ε.
    pub frequency: f64,
    /// True when the frequency is below 5/M and thus not measurable by
    /// naive Monte Carlo at this replicate count.
    pub censored: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GiantAreaSummary {
    pub level: f64,
    pub replicates: Vec<GiantAreaReplicate>,
    /// Mean and sample variance of the area fraction.
    pub mean: f64,
    pub variance: f64,
    pub mean_diametric: f64,
    pub coincidence_fraction: f64,
    pub deviation_ladder: Vec<DeviationEntry>,
}

/// Giant-component area statistics for a spherical ensemble at one level:
/// per-replicate area fractions of the area-giant and the diameter-giant,
/// their coincidence rate, and empirical deviation frequencies for a ladder
/// of ε. An empty excursion set contributes zero fractions and counts as
/// coincident.
pub fn giant_area_experiment(
    spec: &EnsembleSpec,
    level: f64,
    m: usize,
    cells_per_scale: f64,
    seed: u64,
) -> Result<GiantAreaSummary> {
    if m == 0 {
        return Err(Error::Domain("replicate count must be ≥ 1".into()));
    }
    if !(cells_per_scale >= MIN_CELLS_PER_SCALE) {
        return Err(Error::Resolution(format!(
            "resolution policy of {cells_per_scale} cells per scale is below the minimum {MIN_CELLS_PER_SCALE}"
        )));
    }
    let grid = build_grid(cells_per_scale, local_scale(spec))?;
    let sphere_area = grid.total_area();
    let rows = run_replicates(m, None, |rep| {
        let sample = sample_sphere_ensemble(spec, &grid, seed, rep as u64)?;
        let mask = excursion_mask(&sample, level);
        let labeling = label_components(&mask, &grid)?;
        if labeling.components.is_empty() {
            return Ok::<GiantAreaReplicate, Error>(GiantAreaReplicate {
                replicate: rep,
                area_fraction: 0.0,
                diameter_fraction: 0.0,
                coincident: true,
            });
        }
        let va = giant(&labeling, &grid, GiantCriterion::Area)?;
        let vd = giant(&labeling, &grid, GiantCriterion::Diameter)?;
        Ok(GiantAreaReplicate {
            replicate: rep,
            area_fraction: va.area / sphere_area,
            diameter_fraction: vd.area / sphere_area,
            coincident: va.representative == vd.representative,
        })
    });
    let mut replicates = Vec::with_capacity(m);
    for row in rows {
        replicates.push(row?);
    }
    let mean = replicates.iter().map(|r| r.area_fraction).sum::<f64>() / m as f64;
    let variance = if m > 1 {
        replicates
            .iter()
            .map(|r| (r.area_fraction - mean).powi(2))
            .sum::<f64>()
            / (m - 1) as f64
    } else {
        0.0
    };
    let mean_diametric = replicates.iter().map(|r| r.diameter_fraction).sum::<f64>() / m as f64;
    let coincidence_fraction =
        replicates.iter().filter(|r| r.coincident).count() as f64 / m as f64;
    let floor = 5.0 / m as f64;
    let deviation_ladder = DEVIATION_LADDER
        .iter()
        .map(|&epsilon| {
            let frequency = replicates
                .iter()
                .filter(|r| (r.area_fraction - mean).abs() >= epsilon)
                .count() as f64
                / m as f64;
            DeviationEntry {
                epsilon,
                frequency,
                censored: frequency < floor,
            }
        })
        .collect();
    Ok(GiantAreaSummary {
        level,
        replicates,
        mean,
        variance,
        mean_diametric,
        coincidence_fraction,
        deviation_ladder,
    })
}

// ---------------------------------------------------------------------------
// Local-uniqueness sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EuSweepEntry {
    pub range: f64,
    pub failures: usize,
    /// Empirical failure frequency ê at this scale.
    pub frequency: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EuSweep {
    pub level: f64,
    pub delta: f64,
    pub replicates: usize,
    pub entries: Vec<EuSweepEntry>,
    /// Least-squares slope of log ê against r over entries with ê > 0;
    /// absent when fewer than two entries have positive frequency.
    pub log_slope: Option<f64>,
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Failure frequency of the local existence–uniqueness event over a ladder
/// of scales, with one field synthesis per replicate shared across the whole
/// ladder (paired comparison). Errors if the frequencies increase with the
/// scale beyond 3 pooled standard errors (larger scales must be at least as
/// reliable), and reports the least-squares slope of log ê against r.
pub fn eu_sweep(
    spec: &EnsembleSpec,
    level: f64,
    ladder: &[f64],
    delta: f64,
    m: usize,
    cells_per_scale: f64,
    seed: u64,
) -> Result<EuSweep> {
    if ladder.is_empty() {
        return Err(Error::EmptyInput("empty scale ladder".into()));
    }
    if !ladder.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Domain("scale ladder must be strictly increasing".into()));
    }
    if m == 0 {
        return Err(Error::Domain("replicate count must be ≥ 1".into()));
    }
    let center = eu_probe_point();
    for &r in ladder {
        EventSpec::eu(center, r, delta, level).validate()?;
    }
    // One grid serves the whole ladder: the smallest scale dictates the
    // resolution (≥ 4 cells across δ·r), the ensemble dictates a floor.
    let r_min = ladder[0];
    let n_lat_eu =
        (4.0 * std::f64::consts::PI / (delta * r_min)).ceil() as usize;
    let n_lat_field = (std::f64::consts::PI * cells_per_scale / local_scale(spec)).ceil() as usize;
    let n_lat = n_lat_eu.max(n_lat_field).max(4);
    let grid = SphereGrid::with_rows(n_lat, Connectivity::Eight, DEFAULT_MAX_CELLS)?;

    let outcomes = run_replicates(m, None, |rep| {
        let sample = sample_sphere_ensemble(spec, &grid, seed, rep as u64)?;
        let mut failures = Vec::with_capacity(ladder.len());
        for &r in ladder {
            let ok = crate::excursion::eu_event(&sample, &grid, &center, r, delta, level)?;
            failures.push(!ok);
        }
        Ok::<Vec<bool>, Error>(failures)
    });
    let mut counts = vec![0usize; ladder.len()];
    for outcome in outcomes {
        for (i, failed) in outcome?.into_iter().enumerate() {
            counts[i] += usize::from(failed);
        }
    }
    let entries: Vec<EuSweepEntry> = ladder
        .iter()
        .zip(&counts)
        .map(|(&range, &failures)| {
            let frequency = failures as f64 / m as f64;
            EuSweepEntry {
                range,
                failures,
                frequency,
                standard_error: (frequency * (1.0 - frequency) / m as f64).sqrt(),
            }
        })
        .collect();
    for pair in entries.windows(2) {
        let pooled = (pair[0].standard_error.powi(2) + pair[1].standard_error.powi(2)).sqrt();
        if pair[1].frequency > pair[0].frequency + 3.0 * pooled {
            return Err(Error::Consistency(format!(
                "uniqueness failure frequency increased with the scale: ê({}) = {} vs ê({}) = {} \
                 (3·pooled SE = {})",
                pair[0].range,
                pair[0].frequency,
                pair[1].range,
                pair[1].frequency,
                3.0 * pooled
            )));
        }
    }
    let positive: Vec<(f64, f64)> = entries
        .iter()
        .filter(|e| e.frequency > 0.0)
        .map(|e| (e.range, e.frequency.ln()))
        .collect();
    let log_slope = if positive.len() >= 2 {
        let xs: Vec<f64> = positive.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = positive.iter().map(|p| p.1).collect();
        Some(least_squares_slope(&xs, &ys))
    } else {
        None
    };
    Ok(EuSweep {
        level,
        delta,
        replicates: m,
        entries,
        log_slope,
    })
}

// ---------------------------------------------------------------------------
// Coupling-error ladders
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingLadderEntry {
    pub range: f64,
    /// Analytic Var(f − f⁽ʳ⁾) where available (site-averaged for the
    /// product ensemble, exact spectral value for zonal truncations).
    pub exact_variance: Option<f64>,
    /// Pooled empirical mean square of the coupled difference field.
    pub empirical_variance: f64,
    /// Standard error of the empirical value across replicates.
    pub standard_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingLadder {
    pub replicates: usize,
    pub entries: Vec<CouplingLadderEntry>,
}

/// Coupling error along a ladder of ranges: for each r, the variance of the
/// difference between a field and its range-r approximation, exact where the
/// ensemble admits it and empirical from matched-seed coupled pairs. Errors
/// if the error fails to decrease along the ladder (strictly, for the exact
/// values; beyond 2 pooled SE for the empirical ones).
pub fn coupling_ladder(
    spec: &EnsembleSpec,
    ladder: &[f64],
    m: usize,
    seed: u64,
) -> Result<CouplingLadder> {
    if ladder.is_empty() {
        return Err(Error::EmptyInput("empty range ladder".into()));
    }
    if !ladder.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Domain("range ladder must be strictly increasing".into()));
    }
    if m == 0 {
        return Err(Error::Domain("replicate count must be ≥ 1".into()));
    }
    let entries: Vec<CouplingLadderEntry> = match spec {
        EnsembleSpec::Kostlan { n } => {
            let patch = OrthantPatch::lattice(5, DEFAULT_ORTHANT_MARGIN)?;
            ladder
                .iter()
                .map(|&range| {
                    let exact = kostlan_truncation_variance(*n, range, patch.points())?;
                    let exact_mean = exact.iter().sum::<f64>() / exact.len() as f64;
                    let per_rep = run_replicates(m, None, |rep| {
                        let pair = kostlan_coupled(*n, range, &patch, seed, rep as u64)?;
                        let diffs = pair.difference_values();
                        Ok::<f64, Error>(
                            diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64,
                        )
                    });
                    finish_entry(range, Some(exact_mean), per_rep, m)
                })
                .collect::<Result<_>>()?
        }
        _ => {
            let kernel = spec.kernel_spec().ok_or_else(|| {
                Error::Domain(
                    "coupling ladders need a product or zonal spectral ensemble".into(),
                )
            })?;
            let coeffs = ZonalCoefficients::from_kernel_spec(&kernel)?;
            let grid = SphereGrid::with_rows(48, Connectivity::Eight, DEFAULT_MAX_CELLS)?;
            ladder
                .iter()
                .map(|&range| {
                    let exact = truncate_zonal(&coeffs, range)?.difference_variance();
                    let per_rep = run_replicates(m, None, |rep| {
                        let pair = zonal_truncated_pair(&coeffs, range, &grid, seed, rep as u64)?;
                        let diffs = pair.difference_values();
                        Ok::<f64, Error>(
                            diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64,
                        )
                    });
                    finish_entry(range, Some(exact), per_rep, m)
                })
                .collect::<Result<_>>()?
        }
    };
    for pair in entries.windows(2) {
        if let (Some(a), Some(b)) = (pair[0].exact_variance, pair[1].exact_variance) {
            // Strict decrease while meaningful error remains; once the error
            // is negligible (≤ 1e-12) ties and float dust are allowed.
            if b > a || (b == a && a > 1e-12) {
                return Err(Error::Consistency(format!(
                    "exact coupling error failed to decrease: Var({}) = {a} vs Var({}) = {b}",
                    pair[0].range, pair[1].range
                )));
            }
        }
        let pooled =
            (pair[0].standard_error.powi(2) + pair[1].standard_error.powi(2)).sqrt();
        if pair[1].empirical_variance > pair[0].empirical_variance + 2.0 * pooled {
            return Err(Error::Consistency(format!(
                "empirical coupling error increased along the ladder at r = {}",
                pair[1].range
            )));
        }
    }
    Ok(CouplingLadder {
        replicates: m,
        entries,
    })
}

fn finish_entry(
    range: f64,
    exact: Option<f64>,
    per_rep: Vec<Result<f64>>,
    m: usize,
) -> Result<CouplingLadderEntry> {
    let mut means = Vec::with_capacity(m);
    for r in per_rep {
        means.push(r?);
    }
    let mean = means.iter().sum::<f64>() / m as f64;
    let se = if m > 1 {
        (means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ((m - 1) as f64 * m as f64))
            .sqrt()
    } else {
        0.0
    };
    Ok(CouplingLadderEntry {
        range,
        exact_variance: exact,
        empirical_variance: mean,
        standard_error: se,
    })
}

// ---------------------------------------------------------------------------
// Persisted runs
// ---------------------------------------------------------------------------

/// In-memory result of a persisted run: the CSV header and rows exactly as
/// written, plus the finalized manifest.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config_hash: String,
    pub data_path: PathBuf,
    pub manifest_path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub manifest: RunManifest,
}

/// Compact label for an event in CSV rows.
pub fn event_label(kind: &EventKind) -> String {
    match kind {
        EventKind::AnnulusCross { half_side } => format!("ann_cross[r={half_side}]"),
        EventKind::Arm { radius } => format!("arm[r={radius}]"),
        EventKind::TruncatedArm { radius, window } => {
            format!("trunc_arm[r={radius},w={window}]")
        }
        EventKind::Eu { radius, delta, .. } => format!("eu[r={radius},delta={delta}]"),
    }
}

enum CampaignGrid {
    Sphere(SphereGrid),
    Planar(PlanarGrid),
}

fn is_planar_ensemble(spec: &EnsembleSpec) -> bool {
    matches!(
        spec,
        EnsembleSpec::BargmannFock { .. } | EnsembleSpec::PlaneWave { .. }
    )
}

fn build_campaign_grid(config: &ExperimentConfig) -> Result<CampaignGrid> {
    if is_planar_ensemble(&config.ensemble) {
        if config.events.is_empty() {
            return Err(Error::Domain(
                "giant-area campaigns need a spherical ensemble; planar configs must list events"
                    .into(),
            ));
        }
        let spacing = 1.0 / config.cells_per_scale;
        let mut side: f64 = 4.0;
        for spec in &config.events {
            let need = match spec.kind {
                EventKind::AnnulusCross { half_side } => 4.0 * half_side + 4.0 * spacing + 0.5,
                EventKind::Arm { radius } => 2.0 * radius + 4.0 * spacing + 0.5,
                EventKind::TruncatedArm { window, .. } => window,
                EventKind::Eu { .. } => {
                    return Err(Error::Domain(
                        "the uniqueness event needs a spherical ensemble".into(),
                    ))
                }
            };
            side = side.max(need);
        }
        let n = (side * config.cells_per_scale).ceil() as usize;
        Ok(CampaignGrid::Planar(PlanarGrid::new(side, n.max(8))?))
    } else {
        let scale = local_scale(&config.ensemble);
        let mut n_lat =
            (std::f64::consts::PI * config.cells_per_scale / scale).ceil() as usize;
        for spec in &config.events {
            match spec.kind {
                EventKind::Eu { radius, delta, .. } => {
                    let need =
                        (4.0 * std::f64::consts::PI / (delta * radius)).ceil() as usize;
                    n_lat = n_lat.max(need);
                }
                _ => {
                    return Err(Error::Domain(
                        "crossing and arm events need a planar ensemble".into(),
                    ))
                }
            }
        }
        Ok(CampaignGrid::Sphere(SphereGrid::with_rows(
            n_lat.max(4),
            Connectivity::Eight,
            DEFAULT_MAX_CELLS,
        )?))
    }
}

/// Run a configured campaign with an explicit worker count and persist the
/// rows. Giant-area campaigns (no events) write one row per (level,
/// replicate) with both giant-area fractions; event campaigns write one row
/// per (level, event, replicate) with the indicator. Levels from the config
/// override the level stored in each event spec. The manifest is written
/// with `complete = false` before the data and finalized afterwards. Output
/// bytes are independent of `jobs`.
pub fn run_experiment_with(config: &ExperimentConfig, jobs: Option<usize>) -> Result<RunOutput> {
    config.validate()?;
    let config_hash = config.hash()?;
    let data_path = config
        .output
        .clone()
        .ok_or_else(|| Error::Domain("config has no output path".into()))?;
    let manifest_path = {
        let mut os = data_path.as_os_str().to_os_string();
        os.push(".manifest.json");
        PathBuf::from(os)
    };
    let start = Instant::now();
    let mut manifest = RunManifest {
        config_hash: config_hash.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: 0.0,
        complete: false,
        rows: 0,
        data_path: data_path.display().to_string(),
    };
    io::write_json(&manifest_path, &manifest)?;

    let grid = build_campaign_grid(config)?;
    let m = config.replicates;
    let (header, rows) = match &grid {
        CampaignGrid::Sphere(g) if config.events.is_empty() => {
            let sphere_area = g.total_area();
            let per_rep = run_replicates(m, jobs, |rep| {
                let sample = sample_sphere_ensemble(&config.ensemble, g, config.seed, rep as u64)?;
                let mut out = Vec::with_capacity(config.levels.len());
                for &t in &config.levels {
                    let mask = excursion_mask(&sample, t);
                    let labeling = label_components(&mask, g)?;
                    out.push(if labeling.components.is_empty() {
                        (0.0, 0.0, true)
                    } else {
                        let va = giant(&labeling, g, GiantCriterion::Area)?;
                        let vd = giant(&labeling, g, GiantCriterion::Diameter)?;
                        (
                            va.area / sphere_area,
                            vd.area / sphere_area,
                            va.representative == vd.representative,
                        )
                    });
                }
                Ok::<Vec<(f64, f64, bool)>, Error>(out)
            });
            let mut results = Vec::with_capacity(m);
            for r in per_rep {
                results.push(r?);
            }
            let header = vec![
                "name".to_string(),
                "level".to_string(),
                "replicate".to_string(),
                "area_fraction".to_string(),
                "diameter_fraction".to_string(),
                "coincident".to_string(),
                "config_hash".to_string(),
            ];
            let mut rows = Vec::with_capacity(config.levels.len() * m);
            for (li, &t) in config.levels.iter().enumerate() {
                for (rep, res) in results.iter().enumerate() {
                    let (fa, fd, co) = res[li];
                    rows.push(vec![
                        config.name.clone(),
                        io::format_float(t),
                        rep.to_string(),
                        io::format_float(fa),
                        io::format_float(fd),
                        u8::from(co).to_string(),
                        config_hash.clone(),
                    ]);
                }
            }
            (header, rows)
        }
        _ => {
            let per_rep = run_replicates(m, jobs, |rep| {
                let (sample, handle) = match &grid {
                    CampaignGrid::Sphere(g) => (
                        sample_sphere_ensemble(&config.ensemble, g, config.seed, rep as u64)?,
                        GridHandle::Sphere(g),
                    ),
                    CampaignGrid::Planar(g) => {
                        let waves = match config.ensemble {
                            EnsembleSpec::BargmannFock { waves }
                            | EnsembleSpec::PlaneWave { waves, .. } => waves,
                            _ => unreachable!("planar campaign grid implies a planar ensemble"),
                        };
                        let kind = match config.ensemble {
                            EnsembleSpec::BargmannFock { .. } => PlanarKind::BargmannFock,
                            EnsembleSpec::PlaneWave { alpha, .. } => {
                                PlanarKind::PlaneWave { alpha }
                            }
                            _ => unreachable!(),
                        };
                        (
                            sample_planar(kind, g, waves, config.seed, rep as u64)?,
                            GridHandle::Planar(g),
                        )
                    }
                };
                let mut out = Vec::with_capacity(config.levels.len() * config.events.len());
                for &t in &config.levels {
                    for event in &config.events {
                        let spec = EventSpec {
                            kind: event.kind,
                            level: t,
                        };
                        out.push(event_occurs(&sample, handle, &spec)?);
                    }
                }
                Ok::<Vec<bool>, Error>(out)
            });
            let mut results = Vec::with_capacity(m);
            for r in per_rep {
                results.push(r?);
            }
            let header = vec![
                "name".to_string(),
                "level".to_string(),
                "replicate".to_string(),
                "event".to_string(),
                "occurred".to_string(),
                "config_hash".to_string(),
            ];
            let mut rows = Vec::new();
            for (li, &t) in config.levels.iter().enumerate() {
                for (ei, event) in config.events.iter().enumerate() {
                    for (rep, res) in results.iter().enumerate() {
                        let occurred = res[li * config.events.len() + ei];
                        rows.push(vec![
                            config.name.clone(),
                            io::format_float(t),
                            rep.to_string(),
                            event_label(&event.kind),
                            u8::from(occurred).to_string(),
                            config_hash.clone(),
                        ]);
                    }
                }
            }
            (header, rows)
        }
    };

    io::write_csv(&data_path, &header, &rows)?;
    manifest.rows = rows.len();
    manifest.complete = true;
    manifest.wall_time_seconds = start.elapsed().as_secs_f64();
    io::write_json(&manifest_path, &manifest)?;
    Ok(RunOutput {
        config_hash,
        data_path,
        manifest_path,
        header,
        rows,
        manifest,
    })
}

/// [`run_experiment_with`] on the default worker pool.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    run_experiment_with(config, None)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
