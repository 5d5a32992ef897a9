//! Finite-range coupled approximations of spherical Gaussian fields.
//!
//! Two constructions share the Gaussian coefficients of a field with a
//! localized (r-range dependent) companion so the pair can be compared
//! pathwise:
//!
//! * [`kostlan_coupled`] multiplies each homogeneous basis function by a
//!   bump that kills it at distance ≥ r/2 from its localization point on
//!   the positive orthant, so the truncated field has exactly zero
//!   covariance at separations ≥ r.
//! * [`zonal_truncated_pair`] multiplies the zonal square root q of an
//!   isotropic covariance by the same bump in the angular variable and
//!   re-expands it, giving a companion whose covariance vanishes
//!   (numerically below 1e−8) beyond r by the self-convolution support
//!   rule.

use crate::error::{Error, Result};
use crate::geometry::{sph_dist, SphereGrid, SpherePoint, SphericalCap};
use crate::numeric::{gauss_legendre, Kahan};
use crate::rng::replicate_rng;
use crate::samplers::{
    kostlan_exponents, kostlan_weights, EnsembleSpec, FieldSample, KostlanDraw,
    SphericalHarmonicDraw, HARMONIC_DEGREE_CAP,
};
use crate::spectral::{multiplicity_weight, LegendreSeq, ZonalCoefficients};
use rand::Rng;
use serde::{Deserialize, Serialize};

const PI: f64 = std::f64::consts::PI;

/// Componentwise lower bound defining the default compact subset of the
/// open positive orthant used by the localized homogeneous construction.
pub const DEFAULT_ORTHANT_MARGIN: f64 = 0.05;

/// Maximum slope of [`bump_eval`]: the cubic smoothstep ramp over
/// [1/4, 1/2] peaks at 1.5/0.25 = 6 at the ramp midpoint. Diagnostic
/// arithmetic that needs a Lipschitz constant for the profile uses this.
pub const BUMP_MAX_SLOPE: f64 = 6.0;

/// Fixed C¹ cutoff profile: 0 on [0, 1/4], 1 on [1/2, ∞), cubic
/// smoothstep in between, monotone nondecreasing with maximum slope
/// [`BUMP_MAX_SLOPE`]. Negative arguments are treated as 0.
pub fn bump_eval(x: f64) -> f64 {
    let u = ((x - 0.25) / 0.25).clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

// ---------------------------------------------------------------------------
// Localization points and orthant patches
// ---------------------------------------------------------------------------

/// The unit vector v = (√(j₁/n), √(j₂/n), √(j₃/n)) attached to the
/// exponent triple J of a degree-n monomial; the basis function
/// √(n choose J)·x^J concentrates in an O(n^{−1/2}) cap around it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationPoint {
    pub j: [u32; 3],
    pub v: SpherePoint,
}

/// Localization points for all degree-n exponents, in the draw order of
/// [`kostlan_exponents`].
pub fn localization_points(n: u32) -> Vec<LocalizationPoint> {
    kostlan_exponents(n)
        .into_iter()
        .map(|j| {
            let nf = n as f64;
            let v = SpherePoint::new([
                (j[0] as f64 / nf).sqrt(),
                (j[1] as f64 / nf).sqrt(),
                (j[2] as f64 / nf).sqrt(),
            ])
            .expect("simplex square roots form a unit vector");
            LocalizationPoint { j, v }
        })
        .collect()
}

/// A finite set of evaluation sites inside the compact orthant subset
/// U(m) = {x ∈ S² : xᵢ ≥ m for all i}; construction fails if any site
/// violates the margin.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthantPatch {
    points: Vec<SpherePoint>,
    margin: f64,
}

impl OrthantPatch {
    pub fn new(points: Vec<SpherePoint>, margin: f64) -> Result<Self> {
        if !(margin > 0.0) || margin >= (1.0f64 / 3.0).sqrt() {
            return Err(Error::Domain(format!(
                "orthant margin must lie in (0, 1/√3), got {margin}"
            )));
        }
        if points.is_empty() {
            return Err(Error::EmptyInput("orthant patch needs at least one site".into()));
        }
        for (i, p) in points.iter().enumerate() {
            let c = p.coords();
            if c.iter().any(|&x| x < margin) {
                return Err(Error::Domain(format!(
                    "site {i} at {c:?} leaves the orthant subset with margin {margin}"
                )));
            }
        }
        Ok(OrthantPatch { points, margin })
    }

    /// Deterministic per_side×per_side latitude/longitude lattice inside
    /// the default-margin-compatible block θ, φ ∈ [0.3, 1.2].
    pub fn lattice(per_side: usize, margin: f64) -> Result<Self> {
        if per_side == 0 {
            return Err(Error::EmptyInput("lattice needs at least one site per side".into()));
        }
        let lo = 0.3;
        let hi = 1.2;
        let step = (hi - lo) / per_side as f64;
        let mut points = Vec::with_capacity(per_side * per_side);
        for i in 0..per_side {
            for k in 0..per_side {
                let theta = lo + (i as f64 + 0.5) * step;
                let phi = lo + (k as f64 + 0.5) * step;
                points.push(SpherePoint::from_colat_lon(theta, phi));
            }
        }
        OrthantPatch::new(points, margin)
    }

    pub fn points(&self) -> &[SpherePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn descriptor(&self) -> String {
        format!("orthant_patch:count={},margin={}", self.points.len(), self.margin)
    }
}

// ---------------------------------------------------------------------------
// Coupled pairs
// ---------------------------------------------------------------------------

/// A field and its finite-range companion built from the same Gaussian
/// coefficient vector on the same evaluation sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledPair {
    pub full: FieldSample,
    pub truncated: FieldSample,
    pub range: f64,
}

impl CoupledPair {
    pub fn shared_seed(&self) -> (u64, u64) {
        (self.full.seed, self.full.stream)
    }

    /// Pointwise difference full − truncated.
    pub fn difference_values(&self) -> Vec<f64> {
        self.full
            .values
            .iter()
            .zip(&self.truncated.values)
            .map(|(a, b)| a - b)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Localized homogeneous (Kostlan) coupling
// ---------------------------------------------------------------------------

fn localized_weights_at(
    x: &SpherePoint,
    base: &[f64],
    points: &[LocalizationPoint],
    range: f64,
) -> Vec<f64> {
    base.iter()
        .zip(points)
        .map(|(&w, lp)| w * (1.0 - bump_eval(sph_dist(x, &lp.v) / range)))
        .collect()
}

/// Couple the degree-n homogeneous field with its r-localized companion on
/// an orthant patch. The companion multiplies each basis function by
/// 1 − φ(d(x, v_J)/r), so basis J is supported in the cap of radius r/2
/// around v_J and the companion's covariance vanishes exactly at
/// separations ≥ r. Requires r ≥ n^{−1/2} (the basis concentration scale).
pub fn kostlan_coupled(
    n: u32,
    range: f64,
    patch: &OrthantPatch,
    seed: u64,
    stream: u64,
) -> Result<CoupledPair> {
    if !(range >= (n as f64).powf(-0.5)) {
        return Err(Error::Domain(format!(
            "range {range} below the basis concentration scale n^(-1/2) = {}",
            (n as f64).powf(-0.5)
        )));
    }
    let mut rng = replicate_rng(seed, stream);
    let draw = KostlanDraw::draw(n, &mut rng)?;
    let base = kostlan_weights(n);
    let points = localization_points(n);
    let full_values: Vec<f64> = patch.points().iter().map(|p| draw.value_at(p)).collect();
    let truncated_values: Vec<f64> = patch
        .points()
        .iter()
        .map(|p| draw.value_weighted(p, &localized_weights_at(p, &base, &points, range)))
        .collect();
    let spec = EnsembleSpec::Kostlan { n };
    Ok(CoupledPair {
        full: FieldSample {
            grid_ref: patch.descriptor(),
            values: full_values,
            coeffs: draw.coefficients().to_vec(),
            spec: spec.clone(),
            seed,
            stream,
        },
        truncated: FieldSample {
            grid_ref: patch.descriptor(),
            values: truncated_values,
            coeffs: draw.coefficients().to_vec(),
            spec: EnsembleSpec::Localized {
                base: Box::new(spec),
                range,
            },
            seed,
            stream,
        },
        range,
    })
}

/// Exact per-site variance of the coupling difference f − f^{(r)}:
/// Σ_J b_J(x)²·φ(d(x, v_J)/r)², a deterministic function of the site.
pub fn kostlan_truncation_variance(n: u32, range: f64, sites: &[SpherePoint]) -> Result<Vec<f64>> {
    if sites.is_empty() {
        return Err(Error::EmptyInput("no sites".into()));
    }
    let base = kostlan_weights(n);
    let points = localization_points(n);
    let exps = kostlan_exponents(n);
    Ok(sites
        .iter()
        .map(|x| {
            let [x0, x1, x2] = x.coords();
            let nn = n as usize;
            let mut p0 = vec![1.0; nn + 1];
            let mut p1 = vec![1.0; nn + 1];
            let mut p2 = vec![1.0; nn + 1];
            for k in 1..=nn {
                p0[k] = p0[k - 1] * x0;
                p1[k] = p1[k - 1] * x1;
                p2[k] = p2[k - 1] * x2;
            }
            let mut acc = Kahan::new();
            for ((j, &w), lp) in exps.iter().zip(&base).zip(&points) {
                let b = w * p0[j[0] as usize] * p1[j[1] as usize] * p2[j[2] as usize];
                let phi = bump_eval(sph_dist(x, &lp.v) / range);
                acc.add((b * phi) * (b * phi));
            }
            acc.total()
        })
        .collect())
}

/// Result of the exhaustive support-disjointness audit of the localized
/// homogeneous companion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportAudit {
    pub n: u32,
    pub range: f64,
    /// Site pairs at separation ≥ r that were checked.
    pub pairs_checked: usize,
    /// Pairs sharing a basis function with nonzero localized support at
    /// both sites (must be 0).
    pub shared_support_violations: usize,
    /// Largest |Σ_J b^{(r)}_J(x)·b^{(r)}_J(y)| over the checked pairs
    /// (must be exactly 0 — every term carries a hard zero factor).
    pub max_abs_covariance: f64,
}

/// Exhaustively verify that no localized basis function is supported at
/// two sites separated by ≥ r, and that the companion covariance over such
/// pairs is exactly zero.
pub fn kostlan_support_audit(n: u32, range: f64, patch: &OrthantPatch) -> Result<SupportAudit> {
    let base = kostlan_weights(n);
    let points = localization_points(n);
    let sites = patch.points();
    let mut pairs_checked = 0usize;
    let mut violations = 0usize;
    let mut max_abs_cov = 0.0f64;
    for (i, x) in sites.iter().enumerate() {
        let wx = localized_weights_at(x, &base, &points, range);
        for y in sites.iter().skip(i + 1) {
            if sph_dist(x, y) < range {
                continue;
            }
            pairs_checked += 1;
            let wy = localized_weights_at(y, &base, &points, range);
            if wx.iter().zip(&wy).any(|(&a, &b)| a != 0.0 && b != 0.0) {
                violations += 1;
            }
            let [x0, x1, x2] = x.coords();
            let [y0, y1, y2] = y.coords();
            let mut cov = Kahan::new();
            for (j, (&a, &b)) in kostlan_exponents(n).iter().zip(wx.iter().zip(&wy)) {
                // b^{(r)}_J(x)·b^{(r)}_J(y); zero weights make the product
                // an exact 0.0.
                let bx = a * x0.powi(j[0] as i32) * x1.powi(j[1] as i32) * x2.powi(j[2] as i32);
                let by = b * y0.powi(j[0] as i32) * y1.powi(j[1] as i32) * y2.powi(j[2] as i32);
                cov.add(bx * by);
            }
            max_abs_cov = max_abs_cov.max(cov.total().abs());
        }
    }
    if pairs_checked == 0 {
        return Err(Error::Domain(
            "no site pair at separation ≥ r; audit is vacuous".into(),
        ));
    }
    Ok(SupportAudit {
        n,
        range,
        pairs_checked,
        shared_support_violations: violations,
        max_abs_covariance: max_abs_cov,
    })
}

// ---------------------------------------------------------------------------
// Basis localization diagnostics
// ---------------------------------------------------------------------------

/// Summary of how tightly the homogeneous basis concentrates around its
/// localization points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub n: u32,
    pub sites: usize,
    /// Smallest b_J(x) seen (positivity holds iff > 0 on the orthant).
    pub min_value: f64,
    pub max_value: f64,
    /// Least-squares fit of log b + ½·log n against −n·d²: amplitude C and
    /// rate c in b ≈ C·n^{−1/2}·exp(−c·n·d(x, v_J)²).
    pub fitted_amplitude: f64,
    pub fitted_rate: f64,
    /// Mean of log b over distance bins of width 0.125 on d ∈ [0, 1);
    /// monotone nonincreasing when the basis localizes.
    pub bin_mean_log: Vec<f64>,
}

/// Evaluate every degree-n basis function at `x_samples` uniform sites of
/// the margin-m orthant subset and fit the concentration profile.
/// Positivity violations (impossible on the orthant) are reported as
/// errors. Requires n ≤ 256 (exhaustive enumeration).
pub fn basis_localization_report(
    n: u32,
    margin: f64,
    x_samples: usize,
    seed: u64,
) -> Result<LocalizationReport> {
    if n < 1 || n > 256 {
        return Err(Error::Budget(format!(
            "exhaustive localization audit supports 1 ≤ n ≤ 256, got {n}"
        )));
    }
    if x_samples == 0 {
        return Err(Error::EmptyInput("need at least one evaluation site".into()));
    }
    let mut rng = replicate_rng(seed, 0);
    let mut sites = Vec::with_capacity(x_samples);
    while sites.len() < x_samples {
        let v: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm < 1e-6 {
            continue;
        }
        let p = SpherePoint::new([v[0] / norm, v[1] / norm, v[2] / norm])?;
        if p.coords().iter().all(|&c| c >= margin) {
            sites.push(p);
        }
    }
    let weights = kostlan_weights(n);
    let exps = kostlan_exponents(n);
    let points = localization_points(n);
    let mut min_value = f64::INFINITY;
    let mut max_value = f64::NEG_INFINITY;
    // Design: log b + 0.5 log n = log C − c·(n d²).
    let (mut s_w, mut s_x, mut s_y, mut s_xx, mut s_xy) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    const BINS: usize = 8;
    let bin_width = 1.0 / BINS as f64;
    let mut bin_sum = [0.0f64; BINS];
    let mut bin_count = [0usize; BINS];
    for x in &sites {
        let [x0, x1, x2] = x.coords();
        let nn = n as usize;
        let mut p0 = vec![1.0; nn + 1];
        let mut p1 = vec![1.0; nn + 1];
        let mut p2 = vec![1.0; nn + 1];
        for k in 1..=nn {
            p0[k] = p0[k - 1] * x0;
            p1[k] = p1[k - 1] * x1;
            p2[k] = p2[k - 1] * x2;
        }
        for ((j, &w), lp) in exps.iter().zip(&weights).zip(&points) {
            let b = w * p0[j[0] as usize] * p1[j[1] as usize] * p2[j[2] as usize];
            if b <= 0.0 {
                return Err(Error::BoundViolation {
                    what: format!("basis positivity failed at J = {:?}", j),
                    ratio: b,
                });
            }
            min_value = min_value.min(b);
            max_value = max_value.max(b);
            let d = sph_dist(x, &lp.v);
            if b > 1e-280 {
                let lx = n as f64 * d * d;
                let ly = b.ln() + 0.5 * (n as f64).ln();
                s_w += 1.0;
                s_x += lx;
                s_y += ly;
                s_xx += lx * lx;
                s_xy += lx * ly;
            }
            if d < 1.0 {
                let bin = (d / bin_width) as usize;
                bin_sum[bin] += b.max(1e-300).ln();
                bin_count[bin] += 1;
            }
        }
    }
    let det = s_w * s_xx - s_x * s_x;
    if det.abs() < 1e-12 {
        return Err(Error::Consistency("degenerate least-squares system".into()));
    }
    let intercept = (s_y * s_xx - s_x * s_xy) / det;
    let slope = (s_w * s_xy - s_x * s_y) / det;
    let bin_mean_log = bin_sum
        .iter()
        .zip(&bin_count)
        .filter(|(_, &c)| c > 0)
        .map(|(&s, &c)| s / c as f64)
        .collect();
    Ok(LocalizationReport {
        n,
        sites: sites.len(),
        min_value,
        max_value,
        fitted_amplitude: intercept.exp(),
        fitted_rate: -slope,
        bin_mean_log,
    })
}

// ---------------------------------------------------------------------------
// Zonal truncation (general isotropic fields)
// ---------------------------------------------------------------------------

/// Expand a zonal function f(θ) in the basis √N_ℓ·P_ℓ(cos θ) up to
/// `degree`, by Gauss–Legendre quadrature in cos θ with 4·degree+8 nodes.
pub fn expand_zonal<F: Fn(f64) -> f64>(f: F, degree: u32) -> Result<ZonalCoefficients> {
    if degree > HARMONIC_DEGREE_CAP {
        return Err(Error::Budget(format!(
            "expansion degree {degree} beyond the recurrence guard {HARMONIC_DEGREE_CAP}"
        )));
    }
    let l_max = degree as usize;
    let (nodes, weights) = gauss_legendre(4 * l_max + 8);
    let mut acc = vec![Kahan::new(); l_max + 1];
    for (&t, &w) in nodes.iter().zip(&weights) {
        let fv = f(t.clamp(-1.0, 1.0).acos());
        let mut seq = LegendreSeq::new(t);
        for a in acc.iter_mut() {
            a.add(w * fv * seq.next_value());
        }
    }
    let c: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(l, a)| {
            // γ_ℓ = (2ℓ+1)/2·∫f·P_ℓ; c_ℓ = γ_ℓ/√N_ℓ.
            (l as f64 + 0.5) * a.total() / multiplicity_weight(l as u32).sqrt()
        })
        .collect();
    ZonalCoefficients::new(c)
}

/// Evaluate q(θ) = Σ_ℓ c_ℓ·√N_ℓ·P_ℓ(cos θ), the zonal square root whose
/// self-convolution is the covariance Σ c_ℓ²·P_ℓ(cos θ).
pub fn zonal_sqrt_value(coeffs: &ZonalCoefficients, theta: f64) -> f64 {
    let mut seq = LegendreSeq::new(theta.cos());
    let mut acc = Kahan::new();
    for (l, &cl) in coeffs.as_slice().iter().enumerate() {
        let p = seq.next_value();
        if cl != 0.0 {
            acc.add(cl * multiplicity_weight(l as u32).sqrt() * p);
        }
    }
    acc.total()
}

/// The spectral side of a zonal finite-range truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonalTruncation {
    pub original: ZonalCoefficients,
    pub truncated: ZonalCoefficients,
    pub range: f64,
    pub expansion_degree: u32,
    /// Sup-norm drift of re-expanding the synthesized truncation
    /// (projection idempotence; quadrature-accuracy guard at 1e−8).
    pub roundtrip_error: f64,
    /// max |K̃(θ)| over a 200-point grid of θ ∈ (r, π]; the localized
    /// covariance must vanish beyond r (self-convolution support).
    pub covariance_tail: f64,
}

impl ZonalTruncation {
    /// Var(f − f^{(r)}) = Σ_ℓ (c_ℓ − c̃_ℓ)², exactly, from the spectra.
    pub fn difference_variance(&self) -> f64 {
        let a = self.original.as_slice();
        let b = self.truncated.as_slice();
        let mut acc = Kahan::new();
        for l in 0..a.len().max(b.len()) {
            let d = a.get(l).copied().unwrap_or(0.0) - b.get(l).copied().unwrap_or(0.0);
            acc.add(d * d);
        }
        acc.total()
    }
}

fn zonal_expansion_degree(input_degree: u32, range: f64) -> u32 {
    (8 * input_degree.max(1)).max((96.0 / range).ceil() as u32)
}

/// Truncate the zonal square root of an isotropic covariance at range r:
/// q^{(r)}(θ) = q(θ)·(1 − φ(θ/r)), re-expanded to c̃ by quadrature. The
/// result is validated: projection idempotence ≤ 1e−8 (else a resolution
/// error) and |K̃| ≤ 1e−8 beyond r (else a bound violation). Requires
/// r ∈ (0, π/2] large enough that the expansion degree stays within the
/// recurrence guard.
pub fn truncate_zonal(coeffs: &ZonalCoefficients, range: f64) -> Result<ZonalTruncation> {
    if !(range > 0.0 && range <= PI / 2.0) {
        return Err(Error::Domain(format!(
            "truncation range must lie in (0, π/2], got {range}"
        )));
    }
    let input_degree = coeffs.max_degree().unwrap_or(0);
    let degree = zonal_expansion_degree(input_degree, range);
    if degree > HARMONIC_DEGREE_CAP {
        return Err(Error::Budget(format!(
            "range {range} needs expansion degree {degree}, beyond the guard {HARMONIC_DEGREE_CAP}"
        )));
    }
    let truncated = expand_zonal(
        |theta| zonal_sqrt_value(coeffs, theta) * (1.0 - bump_eval(theta / range)),
        degree,
    )?;
    // Projection idempotence: re-expanding the synthesized projection must
    // reproduce it (the quadrature is exact on polynomials of this degree).
    let again = expand_zonal(|theta| zonal_sqrt_value(&truncated, theta), degree)?;
    let roundtrip_error = truncated
        .as_slice()
        .iter()
        .zip(again.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if roundtrip_error > 1e-8 {
        return Err(Error::Resolution(format!(
            "zonal re-expansion drifts by {roundtrip_error:.3e} > 1e-8; quadrature under-resolved"
        )));
    }
    let mut covariance_tail = 0.0f64;
    for k in 0..200 {
        let theta = range + (PI - range) * (k as f64 + 0.5) / 200.0;
        covariance_tail = covariance_tail.max(truncated.covariance(theta)?.abs());
    }
    if covariance_tail > 1e-8 {
        return Err(Error::BoundViolation {
            what: format!(
                "localized covariance reaches {covariance_tail:.3e} beyond range {range}"
            ),
            ratio: covariance_tail / 1e-8,
        });
    }
    Ok(ZonalTruncation {
        original: coeffs.clone(),
        truncated,
        range,
        expansion_degree: degree,
        roundtrip_error,
        covariance_tail,
    })
}

/// Couple an isotropic field with its zonal finite-range companion on a
/// grid. Both fields are synthesized from one Gaussian draw allocated on
/// all degrees up to the expansion degree, so the coefficient vectors (and
/// the draws shared across a matched-seed range ladder) coincide.
pub fn zonal_truncated_pair(
    coeffs: &ZonalCoefficients,
    range: f64,
    grid: &SphereGrid,
    seed: u64,
    stream: u64,
) -> Result<CoupledPair> {
    let truncation = truncate_zonal(coeffs, range)?;
    let degree = truncation.expansion_degree as usize;
    // Contiguous support 0..=degree: draws are prefix-consistent across
    // range ladders (a smaller range only extends the degree).
    let union = ZonalCoefficients::new(vec![1.0; degree + 1])?;
    let mut rng = replicate_rng(seed, stream);
    let draw = SphericalHarmonicDraw::draw(&union, &mut rng)?;
    let mut padded = coeffs.as_slice().to_vec();
    padded.resize(degree + 1, 0.0);
    let full_spectrum = ZonalCoefficients::new(padded)?;
    let full_values = draw.synthesize_with(&full_spectrum, grid)?;
    let truncated_values = draw.synthesize_with(&truncation.truncated, grid)?;
    let spec = EnsembleSpec::Isotropic {
        coeffs: coeffs.as_slice().to_vec(),
    };
    Ok(CoupledPair {
        full: FieldSample {
            grid_ref: grid.descriptor(),
            values: full_values,
            coeffs: draw.coefficients().to_vec(),
            spec: spec.clone(),
            seed,
            stream,
        },
        truncated: FieldSample {
            grid_ref: grid.descriptor(),
            values: truncated_values,
            coeffs: draw.coefficients().to_vec(),
            spec: EnsembleSpec::Localized {
                base: Box::new(spec),
                range,
            },
            seed,
            stream,
        },
        range,
    })
}

// ---------------------------------------------------------------------------
// Sup statistics of the coupling error
// ---------------------------------------------------------------------------

/// Empirical distribution of the cap-sup of |f − f^{(r)}| over replicate
/// coupled pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingSupReport {
    pub replicates: usize,
    /// Mean over replicates of the sup over all caps.
    pub mean_sup: f64,
    pub max_sup: f64,
    /// Mean sup per cap, in cap order.
    pub per_cap_mean: Vec<f64>,
    /// Geometric threshold ladder descending from max_sup to mean_sup/2
    /// in 8 equal ratio steps (the sup of a Gaussian field concentrates,
    /// so a fixed-ratio ladder would miss the informative band).
    pub thresholds: Vec<f64>,
    /// Fraction of replicates whose sup exceeds each threshold.
    pub exceedance: Vec<f64>,
}

/// Compute sup-of-difference statistics for replicate pairs evaluated at
/// common `sites`; each cap must contain at least one site.
pub fn coupling_sup_stats(
    pairs: &[CoupledPair],
    sites: &[SpherePoint],
    caps: &[SphericalCap],
) -> Result<CouplingSupReport> {
    if pairs.is_empty() || caps.is_empty() {
        return Err(Error::EmptyInput("need at least one pair and one cap".into()));
    }
    let membership: Vec<Vec<usize>> = caps
        .iter()
        .map(|cap| {
            (0..sites.len())
                .filter(|&i| cap.contains(&sites[i]))
                .collect::<Vec<_>>()
        })
        .collect();
    for (k, m) in membership.iter().enumerate() {
        if m.is_empty() {
            return Err(Error::Domain(format!("cap {k} contains no evaluation site")));
        }
    }
    let mut sups = Vec::with_capacity(pairs.len());
    let mut per_cap_sum = vec![0.0f64; caps.len()];
    for pair in pairs {
        if pair.full.values.len() != sites.len() {
            return Err(Error::Consistency(format!(
                "pair has {} values but {} sites were given",
                pair.full.values.len(),
                sites.len()
            )));
        }
        let diff = pair.difference_values();
        let mut overall: f64 = 0.0;
        for (k, m) in membership.iter().enumerate() {
            let cap_sup = m.iter().map(|&i| diff[i].abs()).fold(0.0f64, f64::max);
            per_cap_sum[k] += cap_sup;
            overall = overall.max(cap_sup);
        }
        sups.push(overall);
    }
    let m = pairs.len() as f64;
    let max_sup = sups.iter().copied().fold(0.0f64, f64::max);
    let mean_sup = sups.iter().sum::<f64>() / m;
    let (thresholds, exceedance) = if max_sup > 0.0 {
        let lo = (0.5 * mean_sup).min(0.9 * max_sup);
        let ratio = (lo / max_sup).powf(1.0 / 8.0);
        let t: Vec<f64> = (1..=8).map(|j| max_sup * ratio.powi(j)).collect();
        let e = t
            .iter()
            .map(|&tj| sups.iter().filter(|&&s| s > tj).count() as f64 / m)
            .collect();
        (t, e)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(CouplingSupReport {
        replicates: pairs.len(),
        mean_sup,
        max_sup,
        per_cap_mean: per_cap_sum.iter().map(|s| s / m).collect(),
        thresholds,
        exceedance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::run_replicates;
    use crate::geometry::{Connectivity, DEFAULT_MAX_CELLS};
    use crate::spectral::KernelSpec;
    use approx::assert_relative_eq;

    #[test]
    fn bump_profile_and_slope() {
        assert_eq!(bump_eval(0.0), 0.0);
        assert_eq!(bump_eval(0.2), 0.0);
        assert_eq!(bump_eval(0.25), 0.0);
        assert_eq!(bump_eval(0.5), 1.0);
        assert_eq!(bump_eval(0.6), 1.0);
        assert_eq!(bump_eval(-1.0), 0.0);
        let mid = bump_eval(0.375);
        assert!(mid > 0.0 && mid < 1.0);
        assert_relative_eq!(mid, 0.5, epsilon = 1e-15);
        // Dense monotonicity and slope bound over the ramp.
        let mut max_slope: f64 = 0.0;
        let mut prev = bump_eval(0.25);
        let h = 2.5e-5;
        let mut x = 0.25;
        while x < 0.5 {
            let next = bump_eval(x + h);
            assert!(next >= prev, "profile must be nondecreasing");
            max_slope = max_slope.max((next - prev) / h);
            prev = next;
            x += h;
        }
        assert!(max_slope <= BUMP_MAX_SLOPE + 1e-6, "max slope {max_slope}");
        assert!(max_slope > 5.9, "cubic ramp peaks at 6, measured {max_slope}");
    }

    #[test]
    fn localization_points_geometry() {
        for n in [1u32, 16] {
            let pts = localization_points(n);
            assert_eq!(pts.len(), kostlan_coefficient_count(n));
            for lp in &pts {
                assert_eq!(lp.j[0] + lp.j[1] + lp.j[2], n);
                let c = lp.v.coords();
                assert_relative_eq!(
                    c[0] * c[0] + c[1] * c[1] + c[2] * c[2],
                    1.0,
                    epsilon = 1e-12
                );
                assert_relative_eq!(c[0] * c[0], lp.j[0] as f64 / n as f64, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn orthant_patch_validation() {
        let good = OrthantPatch::lattice(5, DEFAULT_ORTHANT_MARGIN).unwrap();
        assert_eq!(good.len(), 25);
        for p in good.points() {
            assert!(p.coords().iter().all(|&c| c >= DEFAULT_ORTHANT_MARGIN));
        }
        let outside = vec![SpherePoint::north_pole()]; // x = y = 0 < margin
        assert!(OrthantPatch::new(outside, DEFAULT_ORTHANT_MARGIN).is_err());
        assert!(OrthantPatch::new(vec![], DEFAULT_ORTHANT_MARGIN).is_err());
        assert!(OrthantPatch::lattice(3, 0.9).is_err());
    }

    #[test]
    fn kostlan_coupled_trivial_when_range_huge() {
        // With r = 4π every bump argument is below 1/4 (orthant diameter is
        // π/2), so the localization never bites and the pair coincides
        // bit-for-bit.
        let patch = OrthantPatch::lattice(5, DEFAULT_ORTHANT_MARGIN).unwrap();
        let pair = kostlan_coupled(16, 4.0 * PI, &patch, 42, 0).unwrap();
        assert_eq!(pair.full.values, pair.truncated.values);
        assert_eq!(pair.full.coeffs, pair.truncated.coeffs);
        assert!(pair.difference_values().iter().all(|&d| d == 0.0));
        assert_eq!(pair.shared_seed(), (42, 0));
    }

    #[test]
    fn kostlan_coupled_rejects_small_range() {
        let patch = OrthantPatch::lattice(3, DEFAULT_ORTHANT_MARGIN).unwrap();
        assert!(kostlan_coupled(64, 0.1, &patch, 0, 0).is_err()); // 0.1 < 1/8
    }

    #[test]
    fn truncation_variance_monotone_and_matches_monte_carlo() {
        let n = 64u32;
        let patch = OrthantPatch::lattice(7, DEFAULT_ORTHANT_MARGIN).unwrap();
        let var_lo = kostlan_truncation_variance(n, 0.5, patch.points()).unwrap();
        let var_hi = kostlan_truncation_variance(n, 1.0, patch.points()).unwrap();
        for (lo, hi) in var_lo.iter().zip(&var_hi) {
            assert!(hi <= lo, "variance must shrink as the range grows: {hi} > {lo}");
        }
        assert!(var_hi.iter().sum::<f64>() < var_lo.iter().sum::<f64>());

        // Monte Carlo cross-check of the exact formula at one site.
        let site = patch.points()[0];
        let exact = kostlan_truncation_variance(n, 0.5, &[site]).unwrap()[0];
        let m = 400usize;
        let sq: Vec<f64> = run_replicates(m, None, |k| {
            let p = kostlan_coupled(n, 0.5, &OrthantPatch::new(vec![site], 0.05).unwrap(), 7, k as u64)
                .unwrap();
            let d = p.difference_values()[0];
            d * d
        });
        let mean = sq.iter().sum::<f64>() / m as f64;
        // SE of a variance estimate ≈ var·√(2/m).
        let se = exact * (2.0 / m as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 5.0 * se,
            "MC {mean:.5} vs exact {exact:.5} (se {se:.5})"
        );
    }

    #[test]
    fn support_audit_exact_zero_covariance() {
        let patch = OrthantPatch::lattice(6, DEFAULT_ORTHANT_MARGIN).unwrap();
        let audit = kostlan_support_audit(32, 0.5, &patch).unwrap();
        assert!(audit.pairs_checked > 50, "checked {}", audit.pairs_checked);
        assert_eq!(audit.shared_support_violations, 0);
        assert_eq!(audit.max_abs_covariance, 0.0);
    }

    #[test]
    fn localization_report_decay_and_count() {
        let report = basis_localization_report(16, DEFAULT_ORTHANT_MARGIN, 70, 5).unwrap();
        assert_eq!(report.sites, 70);
        assert!(report.min_value > 0.0, "positivity on the orthant");
        assert!(report.fitted_rate > 0.0, "decay rate must be positive");
        for w in report.bin_mean_log.windows(2) {
            assert!(w[1] <= w[0], "bin means must decay: {:?}", report.bin_mean_log);
        }

        // Count of localization points near a central site: frozen exact
        // value, and the quadratic-in-(r·n) envelope.
        let x = SpherePoint::new([1.0, 1.0, 1.0]).unwrap();
        let n = 16u32;
        let r = 0.3f64;
        let count = localization_points(n)
            .iter()
            .filter(|lp| sph_dist(&x, &lp.v) <= r)
            .count();
        assert_eq!(count, 51);
        let envelope = 4.0 * r * r * (n as f64) * (n as f64);
        assert!((count as f64) <= envelope, "{count} > {envelope}");
        assert!(basis_localization_report(300, 0.05, 10, 0).is_err());
    }

    #[test]
    fn basis_positive_on_random_pairs() {
        // 10⁴ random (J, x) pairs: positivity is exact on the orthant.
        let n = 64u32;
        let weights = kostlan_weights(n);
        let exps = kostlan_exponents(n);
        let mut rng = replicate_rng(0xB051, 0);
        for _ in 0..10_000 {
            let idx = rng.random_range(0..exps.len());
            let v: [f64; 3] = [
                0.05 + 0.9 * rng.random::<f64>(),
                0.05 + 0.9 * rng.random::<f64>(),
                0.05 + 0.9 * rng.random::<f64>(),
            ];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            let x = [v[0] / norm, v[1] / norm, v[2] / norm];
            let j = exps[idx];
            let b = weights[idx]
                * x[0].powi(j[0] as i32)
                * x[1].powi(j[1] as i32)
                * x[2].powi(j[2] as i32);
            assert!(b >= 0.0);
        }
    }

    #[test]
    fn zonal_truncation_meets_support_and_accuracy_guards() {
        let spec = KernelSpec::BandLimited { alpha: 0.5, l: 64 };
        let coeffs = ZonalCoefficients::from_kernel_spec(&spec).unwrap();
        let t = truncate_zonal(&coeffs, 0.25).unwrap();
        assert_eq!(t.expansion_degree, 512);
        assert!(t.roundtrip_error <= 1e-8, "roundtrip {:.3e}", t.roundtrip_error);
        assert!(t.covariance_tail <= 1e-8, "tail {:.3e}", t.covariance_tail);
        // Independently computed difference variance for this spectrum and
        // range (spectral Parseval value).
        assert_relative_eq!(t.difference_variance(), 0.189938, max_relative = 1e-3);
    }

    #[test]
    fn zonal_variance_ladder_monotone_with_expected_shape() {
        let spec = KernelSpec::BandLimited { alpha: 0.5, l: 64 };
        let coeffs = ZonalCoefficients::from_kernel_spec(&spec).unwrap();
        let mut last = f64::INFINITY;
        for r in [0.125f64, 0.25, 0.5] {
            let t = truncate_zonal(&coeffs, r).unwrap();
            let var = t.difference_variance();
            assert!(var < last, "variance must decrease along the range ladder");
            let ratio = var * 64.0 * r; // against the ℓ^{-1}·r^{-1} shape
            assert!(
                (2.0..5.0).contains(&ratio),
                "shape constant {ratio:.3} escaped its window at r = {r}"
            );
            last = var;
        }
    }

    #[test]
    fn zonal_toy_supported_inside_quarter_range() {
        // q built from a profile supported in θ ≤ r/4 (up to projection
        // tail): truncation at range r is a near no-op.
        let r = PI / 2.0;
        let coeffs = expand_zonal(|theta| 1.0 - bump_eval(theta / (r / 2.0)), 64).unwrap();
        let t = truncate_zonal(&coeffs, r).unwrap();
        assert!(
            t.difference_variance() < 1e-6,
            "variance {:.3e}",
            t.difference_variance()
        );
        assert!(t.covariance_tail < 1e-10);
    }

    #[test]
    fn zonal_pair_shares_coefficients_and_seeds() {
        let grid = SphereGrid::with_rows(12, Connectivity::Eight, DEFAULT_MAX_CELLS).unwrap();
        let spec = KernelSpec::BandLimited { alpha: 0.5, l: 16 };
        let coeffs = ZonalCoefficients::from_kernel_spec(&spec).unwrap();
        let pair = zonal_truncated_pair(&coeffs, 0.75, &grid, 31, 4).unwrap();
        assert_eq!(pair.full.coeffs, pair.truncated.coeffs);
        assert_eq!(pair.shared_seed(), (31, 4));
        assert!(pair.difference_values().iter().any(|&d| d.abs() > 1e-6));
        // Mean-square difference over the grid should sit near the spectral
        // variance (loose sanity factor: one realization, area-weighted
        // cells ignored).
        let t = truncate_zonal(&coeffs, 0.75).unwrap();
        let var = t.difference_variance();
        let ms = pair
            .difference_values()
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            / pair.full.values.len() as f64;
        assert!(ms < 30.0 * var && ms > var / 30.0, "ms {ms:.4} vs var {var:.4}");

        // Zero spectrum: both members vanish identically.
        let zero = ZonalCoefficients::new(vec![0.0; 8]).unwrap();
        let zpair = zonal_truncated_pair(&zero, 0.75, &grid, 0, 0).unwrap();
        assert!(zpair.full.values.iter().all(|&v| v == 0.0));
        assert!(zpair.truncated.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn truncated_spec_serialization_roundtrip() {
        let spec = EnsembleSpec::Localized {
            base: Box::new(EnsembleSpec::Kostlan { n: 64 }),
            range: 0.25,
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("localized"));
        let back: EnsembleSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn sup_stats_trivial_and_monotone() {
        let patch = OrthantPatch::lattice(7, DEFAULT_ORTHANT_MARGIN).unwrap();
        let sites = patch.points().to_vec();
        let caps = vec![
            SphericalCap::new(SpherePoint::new([1.0, 1.0, 1.0]).unwrap(), 0.35),
            SphericalCap::new(SpherePoint::new([1.0, 0.8, 1.3]).unwrap(), 0.3),
        ];

        // Identical pair: sup ≡ 0, no threshold ladder.
        let trivial: Vec<CoupledPair> = (0..10)
            .map(|k| kostlan_coupled(16, 4.0 * PI, &patch, 9, k).unwrap())
            .collect();
        let rep = coupling_sup_stats(&trivial, &sites, &caps).unwrap();
        assert_eq!(rep.mean_sup, 0.0);
        assert!(rep.thresholds.is_empty());

        // Matched seeds, n = 64: larger range ⇒ smaller mean sup.
        let m = 200usize;
        let pairs_of = |r: f64| -> Vec<CoupledPair> {
            run_replicates(m, None, |k| kostlan_coupled(64, r, &patch, 17, k as u64).unwrap())
        };
        let rep_lo = coupling_sup_stats(&pairs_of(1.0 / 8.0), &sites, &caps).unwrap();
        let rep_hi = coupling_sup_stats(&pairs_of(2.0 / 8.0), &sites, &caps).unwrap();
        assert!(
            rep_hi.mean_sup < rep_lo.mean_sup,
            "sup must shrink with range: {} vs {}",
            rep_hi.mean_sup,
            rep_lo.mean_sup
        );
        assert_eq!(rep_lo.replicates, m);
        assert_eq!(rep_lo.per_cap_mean.len(), caps.len());

        // Exceedance decays super-exponentially along the geometric ladder:
        // the log-frequency drop per unit threshold steepens with t.
        let rep = rep_lo;
        let mut rates = Vec::new();
        for j in 0..rep.thresholds.len() - 1 {
            let (f_hi, f_lo) = (rep.exceedance[j], rep.exceedance[j + 1]);
            if f_hi > 0.0 && f_lo > 0.0 && f_hi < 1.0 && f_lo < 1.0 && f_hi != f_lo {
                let dt = rep.thresholds[j] - rep.thresholds[j + 1];
                rates.push(((f_lo.ln() - f_hi.ln()) / dt, rep.thresholds[j]));
            }
        }
        assert!(rates.len() >= 2, "degenerate ladder: {:?}", rep.exceedance);
        let steepest_high_t = rates.first().unwrap().0;
        let shallowest_low_t = rates.last().unwrap().0;
        assert!(
            steepest_high_t > shallowest_low_t,
            "decay must steepen with t: {steepest_high_t:.3} vs {shallowest_low_t:.3}"
        );

        // Cap with no site inside is rejected.
        let bad = vec![SphericalCap::new(SpherePoint::north_pole(), 0.05)];
        assert!(coupling_sup_stats(&trivial, &sites, &bad).is_err());
    }
}
