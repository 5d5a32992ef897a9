//! Gaussian field samplers: spherical ensembles on iso-latitude grids and
//! planar limit fields on square lattices.
//!
//! Every sampler is a pure function of (specification, grid, seed, stream):
//! the RNG is a counter-based stream from [`crate::rng::replicate_rng`], so
//! replicate `k` of an experiment reads stream `k` and results do not
//! depend on scheduling or worker count. The Gaussian coefficient vector
//! actually drawn is kept in the sample, because the finite-range coupled
//! constructions must reuse the same coefficients under different weights.

use crate::error::{Error, Result};
use crate::geometry::{SphereGrid, SpherePoint};
use crate::numeric::{bessel_j0, bessel_j1, ln_factorial};
use crate::rng::replicate_rng;
use crate::spectral::{multiplicity_weight, KernelSpec, ZonalCoefficients};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

const PI: f64 = std::f64::consts::PI;
const TAU: f64 = std::f64::consts::TAU;

/// Largest homogeneous-polynomial degree sampled by default; the
/// coefficient vector has (n+1)(n+2)/2 entries and this cap keeps it under
/// ~135k.
pub const KOSTLAN_DEGREE_CAP: u32 = 512;
/// Guard for the associated-Legendre recurrences; beyond this degree the
/// sectoral seed underflows over most of the sphere and requests are
/// rejected rather than silently degraded.
pub const HARMONIC_DEGREE_CAP: u32 = 1500;
/// Minimum wave count for planar sampling; the K-wave superposition has
/// exact covariance for every K but only ~K^{−1/2}-approximate
/// Gaussianity.
pub const MIN_WAVE_COUNT: usize = 64;
/// Default planar wave count.
pub const DEFAULT_WAVE_COUNT: usize = 1024;

// ---------------------------------------------------------------------------
// Specifications and samples
// ---------------------------------------------------------------------------

/// What ensemble a sample was drawn from, carried in records and sidecars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ensemble", rename_all = "snake_case")]
pub enum EnsembleSpec {
    /// Homogeneous polynomial of degree n with multinomial weights.
    Kostlan { n: u32 },
    /// Single-degree random spherical harmonic.
    Harmonic { l: u32 },
    /// Band-limited superposition over degrees ⌊αℓ⌋..=ℓ.
    BandLimited { alpha: f64, l: u32 },
    /// Monochromatic window ℓ−⌊ℓ^β⌋..=ℓ.
    Mono { beta: f64, l: u32 },
    /// Isotropic field with an explicit zonal spectrum c_{ℓ′} by degree.
    Isotropic { coeffs: Vec<f64> },
    /// Planar Bargmann–Fock field (Gaussian spectral measure).
    BargmannFock { waves: usize },
    /// Planar random wave with spectral measure uniform on the annulus
    /// B_1 \ B_α (α = 1: the unit circle).
    PlaneWave { alpha: f64, waves: usize },
    /// Finite-range localized companion of another ensemble (built by the
    /// coupling constructors, not sampled directly).
    Localized { base: Box<EnsembleSpec>, range: f64 },
}

impl EnsembleSpec {
    /// The covariance-kernel spec of the spherical kinds.
    pub fn kernel_spec(&self) -> Option<KernelSpec> {
        match *self {
            EnsembleSpec::Kostlan { n } => Some(KernelSpec::Kostlan { n }),
            EnsembleSpec::Harmonic { l } => Some(KernelSpec::Legendre { l }),
            EnsembleSpec::BandLimited { alpha, l } => Some(KernelSpec::BandLimited { alpha, l }),
            EnsembleSpec::Mono { beta, l } => Some(KernelSpec::Mono { beta, l }),
            _ => None,
        }
    }
}

/// One realization of a field on a grid, with full provenance: re-sampling
/// with the same (spec, grid, seed, stream) reproduces it bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    /// Identity of the grid the values live on.
    pub grid_ref: String,
    /// One value per grid cell (spherical: row-major by latitude row;
    /// planar: row-major by y index).
    pub values: Vec<f64>,
    /// The generating random coefficients, in draw order. Spherical:
    /// Gaussian coefficients; planar: flattened (ξ_x, ξ_y, φ) wave triples.
    pub coeffs: Vec<f64>,
    pub spec: EnsembleSpec,
    pub seed: u64,
    pub stream: u64,
}

// ---------------------------------------------------------------------------
// Normalized associated Legendre functions
// ---------------------------------------------------------------------------

/// Fully normalized associated Legendre function
/// P̄_{ℓm}(cos θ) = √((2ℓ+1)(ℓ−m)!/(4π(ℓ+m)!))·P_{ℓm}(cos θ),
/// without the Condon–Shortley phase. With this normalization the real
/// orthonormal harmonics are Y_{ℓ0} = P̄_{ℓ0} and
/// Y^{c,s}_{ℓm} = √2·P̄_{ℓm}·{cos,sin}(mφ), and the addition formula reads
/// P̄_{ℓ0}² + 2·Σ_{m≥1} P̄_{ℓm}² = (2ℓ+1)/(4π) at every point.
pub fn normalized_legendre(l: u32, m: u32, theta: f64) -> Result<f64> {
    if m > l {
        return Err(Error::Domain(format!("order m = {m} exceeds degree ℓ = {l}")));
    }
    if l > HARMONIC_DEGREE_CAP {
        return Err(Error::Domain(format!(
            "degree ℓ = {l} beyond the recurrence guard {HARMONIC_DEGREE_CAP}"
        )));
    }
    let (s, x) = theta.sin_cos();
    let mut pmm = (4.0 * PI).recip().sqrt();
    for k in 1..=m {
        pmm *= ((2.0 * k as f64 + 1.0) / (2.0 * k as f64)).sqrt() * s;
    }
    if l == m {
        return Ok(pmm);
    }
    let mut prev = pmm;
    let mut cur = (2.0 * m as f64 + 3.0).sqrt() * x * pmm;
    for ll in (m + 2)..=l {
        let lf = ll as f64;
        let mf = m as f64;
        let a = ((2.0 * lf - 1.0) * (2.0 * lf + 1.0) / ((lf - mf) * (lf + mf))).sqrt();
        let b = ((2.0 * lf + 1.0) * (lf + mf - 1.0) * (lf - mf - 1.0)
            / ((2.0 * lf - 3.0) * (lf + mf) * (lf - mf)))
            .sqrt();
        let next = a * x * cur - b * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

// ---------------------------------------------------------------------------
// Isotropic spherical fields (harmonic synthesis)
// ---------------------------------------------------------------------------

/// One draw of the Gaussian coefficients of an isotropic spherical field
/// f = Σ_{ℓ′} (c_{ℓ′}/√N_{ℓ′}) Σ_m a_{ℓ′m} Y_{ℓ′m}, N_ℓ = (2ℓ+1)/4π.
///
/// Coefficients are drawn (and stored) only for degrees with c_{ℓ′} ≠ 0, in
/// ascending degree order, 2ℓ′+1 standard Gaussians per degree in the fixed
/// order a_0, a^c_1, a^s_1, …, a^c_ℓ′, a^s_ℓ′. A draw can be re-evaluated
/// under a different spectrum whose support is contained in the draw's
/// support — this is what the finite-range couplings use to share
/// coefficients between a field and its approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalHarmonicDraw {
    spectrum: ZonalCoefficients,
    coeffs: Vec<f64>,
    /// Per-degree offset into `coeffs`; `usize::MAX` marks absent degrees.
    offsets: Vec<usize>,
}

impl SphericalHarmonicDraw {
    pub fn draw(spectrum: &ZonalCoefficients, rng: &mut ChaCha8Rng) -> Result<Self> {
        let l_max = spectrum.max_degree().unwrap_or(0);
        if l_max > HARMONIC_DEGREE_CAP {
            return Err(Error::Budget(format!(
                "harmonic degree {l_max} beyond the recurrence guard {HARMONIC_DEGREE_CAP}"
            )));
        }
        let c = spectrum.as_slice();
        let mut coeffs = Vec::new();
        let mut offsets = vec![usize::MAX; c.len()];
        for (l, &cl) in c.iter().enumerate() {
            if cl != 0.0 {
                offsets[l] = coeffs.len();
                for _ in 0..(2 * l + 1) {
                    coeffs.push(rng.sample(StandardNormal));
                }
            }
        }
        Ok(SphericalHarmonicDraw {
            spectrum: spectrum.clone(),
            coeffs,
            offsets,
        })
    }

    /// Rebuild a draw from stored coefficients (test hook and persistence).
    pub fn from_coefficients(spectrum: &ZonalCoefficients, coeffs: Vec<f64>) -> Result<Self> {
        let c = spectrum.as_slice();
        let mut offsets = vec![usize::MAX; c.len()];
        let mut need = 0usize;
        for (l, &cl) in c.iter().enumerate() {
            if cl != 0.0 {
                offsets[l] = need;
                need += 2 * l + 1;
            }
        }
        if coeffs.len() != need {
            return Err(Error::Consistency(format!(
                "coefficient vector has {} entries, spectrum support needs {need}",
                coeffs.len()
            )));
        }
        Ok(SphericalHarmonicDraw {
            spectrum: spectrum.clone(),
            coeffs,
            offsets,
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn spectrum(&self) -> &ZonalCoefficients {
        &self.spectrum
    }

    fn check_support(&self, spectrum: &ZonalCoefficients) -> Result<()> {
        for (l, &cl) in spectrum.as_slice().iter().enumerate() {
            if cl != 0.0 && self.offsets.get(l).copied().unwrap_or(usize::MAX) == usize::MAX {
                return Err(Error::Consistency(format!(
                    "spectrum needs degree {l} but the draw has no coefficients there"
                )));
            }
        }
        Ok(())
    }

    /// Evaluate the draw under its own spectrum.
    pub fn value_at(&self, p: &SpherePoint) -> f64 {
        self.value_with(&self.spectrum, p)
            .expect("own spectrum is always supported")
    }

    /// Evaluate under an alternative spectrum sharing this draw's
    /// coefficients (support must be contained in the draw's).
    pub fn value_with(&self, spectrum: &ZonalCoefficients, p: &SpherePoint) -> Result<f64> {
        self.check_support(spectrum)?;
        let theta = p.colatitude();
        let phi = p.longitude();
        let c = spectrum.as_slice();
        let l_max = match c.iter().rposition(|&v| v != 0.0) {
            Some(l) => l,
            None => return Ok(0.0),
        };
        let (s, x) = theta.sin_cos();
        let (sin_phi, cos_phi) = phi.sin_cos();
        let mut total = 0.0;
        let mut pmm = (4.0 * PI).recip().sqrt();
        // cos(mφ), sin(mφ) by incremental rotation.
        let mut cm = 1.0;
        let mut sm = 0.0;
        for m in 0..=l_max {
            if m > 0 {
                let mf = m as f64;
                pmm *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s;
                let (c2, s2) = (cm * cos_phi - sm * sin_phi, sm * cos_phi + cm * sin_phi);
                cm = c2;
                sm = s2;
            }
            let mut row_sum = 0.0;
            let mut prev = 0.0;
            let mut cur = pmm;
            for l in m..=l_max {
                if l > m {
                    let lf = l as f64;
                    let mf = m as f64;
                    let next = if l == m + 1 {
                        (2.0 * mf + 3.0).sqrt() * x * cur
                    } else {
                        let a = ((2.0 * lf - 1.0) * (2.0 * lf + 1.0)
                            / ((lf - mf) * (lf + mf)))
                            .sqrt();
                        let b = ((2.0 * lf + 1.0) * (lf + mf - 1.0) * (lf - mf - 1.0)
                            / ((2.0 * lf - 3.0) * (lf + mf) * (lf - mf)))
                            .sqrt();
                        a * x * cur - b * prev
                    };
                    prev = cur;
                    cur = next;
                }
                let cl = c[l];
                if cl == 0.0 {
                    continue;
                }
                let base = self.offsets[l];
                let w = cl / multiplicity_weight(l as u32).sqrt();
                if m == 0 {
                    row_sum += w * self.coeffs[base] * cur;
                } else if m <= l {
                    let ac = self.coeffs[base + 2 * m - 1];
                    let as_ = self.coeffs[base + 2 * m];
                    row_sum += w * std::f64::consts::SQRT_2 * cur * (ac * cm + as_ * sm);
                }
            }
            total += row_sum;
        }
        Ok(total)
    }

    /// Synthesize on a grid under an alternative spectrum. Row-major cell
    /// order; per latitude row the Legendre columns are computed once and
    /// combined across longitudes with an incremental cos/sin recurrence,
    /// for O(rows·ℓ² + cells·ℓ) total work.
    pub fn synthesize_with(
        &self,
        spectrum: &ZonalCoefficients,
        grid: &SphereGrid,
    ) -> Result<Vec<f64>> {
        self.check_support(spectrum)?;
        let c = spectrum.as_slice();
        let l_max = match c.iter().rposition(|&v| v != 0.0) {
            Some(l) => l,
            None => return Ok(vec![0.0; grid.n_cells()]),
        };
        let n_lat = grid.n_lat();
        let n_lon = grid.n_lon();
        let mut values = vec![0.0; grid.n_cells()];
        let mut amp_c = vec![0.0; l_max + 1];
        let mut amp_s = vec![0.0; l_max + 1];
        for row in 0..n_lat {
            let theta = grid.cell_center(grid.cell_index(row, 0)).colatitude();
            let (s, x) = theta.sin_cos();
            amp_c.iter_mut().for_each(|v| *v = 0.0);
            amp_s.iter_mut().for_each(|v| *v = 0.0);
            let mut pmm = (4.0 * PI).recip().sqrt();
            for m in 0..=l_max {
                if m > 0 {
                    let mf = m as f64;
                    pmm *= ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s;
                }
                let mut prev = 0.0;
                let mut cur = pmm;
                for l in m..=l_max {
                    if l > m {
                        let lf = l as f64;
                        let mf = m as f64;
                        let next = if l == m + 1 {
                            (2.0 * mf + 3.0).sqrt() * x * cur
                        } else {
                            let a = ((2.0 * lf - 1.0) * (2.0 * lf + 1.0)
                                / ((lf - mf) * (lf + mf)))
                                .sqrt();
                            let b = ((2.0 * lf + 1.0) * (lf + mf - 1.0) * (lf - mf - 1.0)
                                / ((2.0 * lf - 3.0) * (lf + mf) * (lf - mf)))
                                .sqrt();
                            a * x * cur - b * prev
                        };
                        prev = cur;
                        cur = next;
                    }
                    let cl = c[l];
                    if cl == 0.0 {
                        continue;
                    }
                    let base = self.offsets[l];
                    let w = cl / multiplicity_weight(l as u32).sqrt();
                    if m == 0 {
                        amp_c[0] += w * self.coeffs[base] * cur;
                    } else if m <= l {
                        let f = w * std::f64::consts::SQRT_2 * cur;
                        amp_c[m] += f * self.coeffs[base + 2 * m - 1];
                        amp_s[m] += f * self.coeffs[base + 2 * m];
                    }
                }
            }
            for col in 0..n_lon {
                let cell = grid.cell_index(row, col);
                let phi = grid.cell_center(cell).longitude();
                let (sin_phi, cos_phi) = phi.sin_cos();
                let mut cm = 1.0;
                let mut sm = 0.0;
                let mut v = amp_c[0];
                for m in 1..=l_max {
                    let (c2, s2) = (cm * cos_phi - sm * sin_phi, sm * cos_phi + cm * sin_phi);
                    cm = c2;
                    sm = s2;
                    v += amp_c[m] * cm + amp_s[m] * sm;
                }
                values[cell] = v;
            }
        }
        Ok(values)
    }

    pub fn synthesize(&self, grid: &SphereGrid) -> Vec<f64> {
        self.synthesize_with(&self.spectrum, grid)
            .expect("own spectrum is always supported")
    }
}

// ---------------------------------------------------------------------------
// Kostlan (homogeneous polynomial) fields
// ---------------------------------------------------------------------------

/// Number of degree-n monomials in three variables: (n+1)(n+2)/2.
pub fn kostlan_coefficient_count(n: u32) -> usize {
    ((n as usize + 1) * (n as usize + 2)) / 2
}

/// Exponent triples (j₁, j₂, j₃) with j₁+j₂+j₃ = n, in lexicographic order
/// by (j₁, j₂). This order is the draw order of the Gaussian coefficients.
pub fn kostlan_exponents(n: u32) -> Vec<[u32; 3]> {
    let mut out = Vec::with_capacity(kostlan_coefficient_count(n));
    for j1 in 0..=n {
        for j2 in 0..=(n - j1) {
            out.push([j1, j2, n - j1 - j2]);
        }
    }
    out
}

/// Square-root multinomial weights √(n choose J) in [`kostlan_exponents`]
/// order, computed in log space.
pub fn kostlan_weights(n: u32) -> Vec<f64> {
    let ln_n = ln_factorial(n as u64);
    kostlan_exponents(n)
        .iter()
        .map(|j| {
            let ln_b = ln_n
                - ln_factorial(j[0] as u64)
                - ln_factorial(j[1] as u64)
                - ln_factorial(j[2] as u64);
            (0.5 * ln_b).exp()
        })
        .collect()
}

/// One draw of the degree-n homogeneous ensemble
/// f(x) = Σ_{|J|=n} √(n choose J)·a_J·x^J with i.i.d. standard Gaussian
/// a_J; pointwise variance is exactly 1 on the unit sphere by the
/// multinomial theorem.
#[derive(Debug, Clone, PartialEq)]
pub struct KostlanDraw {
    n: u32,
    coeffs: Vec<f64>,
    weights: Vec<f64>,
}

impl KostlanDraw {
    pub fn draw(n: u32, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::validate_degree(n)?;
        let count = kostlan_coefficient_count(n);
        let coeffs = (0..count).map(|_| rng.sample(StandardNormal)).collect();
        Ok(KostlanDraw {
            n,
            coeffs,
            weights: kostlan_weights(n),
        })
    }

    /// Rebuild from stored coefficients (test hook and persistence).
    pub fn from_coefficients(n: u32, coeffs: Vec<f64>) -> Result<Self> {
        Self::validate_degree(n)?;
        if coeffs.len() != kostlan_coefficient_count(n) {
            return Err(Error::Consistency(format!(
                "degree {n} needs {} coefficients, got {}",
                kostlan_coefficient_count(n),
                coeffs.len()
            )));
        }
        Ok(KostlanDraw {
            n,
            coeffs,
            weights: kostlan_weights(n),
        })
    }

    fn validate_degree(n: u32) -> Result<()> {
        if n < 1 {
            return Err(Error::Domain("homogeneous degree n must be ≥ 1".into()));
        }
        if n > KOSTLAN_DEGREE_CAP {
            return Err(Error::Budget(format!(
                "degree {n} exceeds the coefficient budget cap {KOSTLAN_DEGREE_CAP}"
            )));
        }
        Ok(())
    }

    pub fn degree(&self) -> u32 {
        self.n
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Evaluate with the standard weights.
    pub fn value_at(&self, p: &SpherePoint) -> f64 {
        self.value_weighted(p, &self.weights)
    }

    /// Evaluate with caller-supplied per-monomial weights (the finite-range
    /// localized approximations reweight the same coefficients).
    pub fn value_weighted(&self, p: &SpherePoint, weights: &[f64]) -> f64 {
        let [x0, x1, x2] = p.coords();
        let n = self.n as usize;
        let mut p0 = vec![1.0; n + 1];
        let mut p1 = vec![1.0; n + 1];
        let mut p2 = vec![1.0; n + 1];
        for k in 1..=n {
            p0[k] = p0[k - 1] * x0;
            p1[k] = p1[k - 1] * x1;
            p2[k] = p2[k - 1] * x2;
        }
        let mut acc = 0.0;
        let mut idx = 0usize;
        for j1 in 0..=n {
            for j2 in 0..=(n - j1) {
                let j3 = n - j1 - j2;
                acc += weights[idx] * self.coeffs[idx] * p0[j1] * p1[j2] * p2[j3];
                idx += 1;
            }
        }
        acc
    }

    pub fn synthesize(&self, grid: &SphereGrid) -> Vec<f64> {
        (0..grid.n_cells())
            .map(|c| self.value_at(&grid.cell_center(c)))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Planar limit fields
// ---------------------------------------------------------------------------

/// Origin-centered square lattice of n×n evaluation points covering
/// [−L/2, L/2]², row-major by the y index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarGrid {
    side_length: f64,
    n: usize,
}

impl PlanarGrid {
    pub fn new(side_length: f64, n: usize) -> Result<Self> {
        if !(side_length > 0.0) || !side_length.is_finite() {
            return Err(Error::Domain(format!(
                "planar grid side length must be positive, got {side_length}"
            )));
        }
        if n == 0 {
            return Err(Error::Domain("planar grid needs at least one cell per side".into()));
        }
        Ok(PlanarGrid { side_length, n })
    }

    pub fn side_length(&self) -> f64 {
        self.side_length
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.side_length / self.n as f64
    }

    pub fn n_cells(&self) -> usize {
        self.n * self.n
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.n + ix
    }

    /// Center of cell (ix, iy).
    pub fn point(&self, ix: usize, iy: usize) -> [f64; 2] {
        let h = self.spacing();
        [
            -0.5 * self.side_length + (ix as f64 + 0.5) * h,
            -0.5 * self.side_length + (iy as f64 + 0.5) * h,
        ]
    }

    pub fn descriptor(&self) -> String {
        format!("planar:side={},n={}", self.side_length, self.n)
    }
}

/// Spectral measure of a planar field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanarKind {
    /// Standard bivariate Gaussian spectral measure; kernel e^{−‖d‖²/2}.
    BargmannFock,
    /// Uniform measure on the annulus B₁ \ B_α (α = 1 degenerates to the
    /// unit circle); kernel 2(J₁(d) − αJ₁(αd))/((1−α²)d), or J₀(d) at α=1.
    PlaneWave { alpha: f64 },
}

impl PlanarKind {
    pub fn validate(&self) -> Result<()> {
        if let PlanarKind::PlaneWave { alpha } = *self {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Domain(format!(
                    "plane-wave α must lie in [0,1], got {alpha}"
                )));
            }
        }
        Ok(())
    }
}

/// Exact covariance kernel of `kind` at point separation `dist`.
pub fn planar_kernel(kind: PlanarKind, dist: f64) -> f64 {
    let d = dist.abs();
    match kind {
        PlanarKind::BargmannFock => (-0.5 * d * d).exp(),
        PlanarKind::PlaneWave { alpha } => {
            if (alpha - 1.0).abs() < 1e-14 {
                bessel_j0(d)
            } else if d < 1e-12 {
                1.0
            } else {
                2.0 / ((1.0 - alpha * alpha) * d) * (bessel_j1(d) - alpha * bessel_j1(alpha * d))
            }
        }
    }
}

/// A K-wave superposition h(x) = √(2/K) Σ cos(⟨ξ_k, x⟩ + φ_k) with φ_k
/// uniform and ξ_k drawn from the field's spectral measure. Its covariance
/// equals the target kernel exactly for every K; Gaussianity is approximate
/// with error O(K^{−1/2}).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveSuperposition {
    frequencies: Vec<[f64; 2]>,
    phases: Vec<f64>,
}

impl WaveSuperposition {
    pub fn sample(kind: PlanarKind, waves: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        kind.validate()?;
        if waves < MIN_WAVE_COUNT {
            return Err(Error::Domain(format!(
                "wave count {waves} below the minimum {MIN_WAVE_COUNT}"
            )));
        }
        let mut frequencies = Vec::with_capacity(waves);
        let mut phases = Vec::with_capacity(waves);
        for _ in 0..waves {
            let xi = match kind {
                PlanarKind::BargmannFock => {
                    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
                }
                PlanarKind::PlaneWave { alpha } => {
                    let r = if (alpha - 1.0).abs() < 1e-14 {
                        1.0
                    } else {
                        // Area-uniform on the annulus: density ∝ r on [α,1].
                        (alpha * alpha + (1.0 - alpha * alpha) * rng.random::<f64>()).sqrt()
                    };
                    let ang = TAU * rng.random::<f64>();
                    [r * ang.cos(), r * ang.sin()]
                }
            };
            frequencies.push(xi);
            phases.push(TAU * rng.random::<f64>());
        }
        Ok(WaveSuperposition { frequencies, phases })
    }

    /// Assemble from explicit waves (test hook; no minimum count).
    pub fn from_parts(frequencies: Vec<[f64; 2]>, phases: Vec<f64>) -> Result<Self> {
        if frequencies.is_empty() || frequencies.len() != phases.len() {
            return Err(Error::Consistency(
                "need equally many frequencies and phases, at least one wave".into(),
            ));
        }
        Ok(WaveSuperposition { frequencies, phases })
    }

    pub fn wave_count(&self) -> usize {
        self.frequencies.len()
    }

    pub fn value_at(&self, p: [f64; 2]) -> f64 {
        let norm = (2.0 / self.wave_count() as f64).sqrt();
        let mut acc = 0.0;
        for (xi, ph) in self.frequencies.iter().zip(&self.phases) {
            acc += (xi[0] * p[0] + xi[1] * p[1] + ph).cos();
        }
        norm * acc
    }

    pub fn synthesize(&self, grid: &PlanarGrid) -> Vec<f64> {
        let mut values = vec![0.0; grid.n_cells()];
        for iy in 0..grid.n() {
            for ix in 0..grid.n() {
                values[grid.index(ix, iy)] = self.value_at(grid.point(ix, iy));
            }
        }
        values
    }

    fn flat_coeffs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.wave_count());
        for (xi, ph) in self.frequencies.iter().zip(&self.phases) {
            out.push(xi[0]);
            out.push(xi[1]);
            out.push(*ph);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Top-level sampling operations
// ---------------------------------------------------------------------------

/// Draw the degree-n homogeneous ensemble on a grid.
pub fn sample_kostlan(n: u32, grid: &SphereGrid, seed: u64, stream: u64) -> Result<FieldSample> {
    let mut rng = replicate_rng(seed, stream);
    let draw = KostlanDraw::draw(n, &mut rng)?;
    Ok(FieldSample {
        grid_ref: grid.descriptor(),
        values: draw.synthesize(grid),
        coeffs: draw.coefficients().to_vec(),
        spec: EnsembleSpec::Kostlan { n },
        seed,
        stream,
    })
}

/// Draw the single-degree random spherical harmonic T_ℓ on a grid.
pub fn sample_rsh(l: u32, grid: &SphereGrid, seed: u64, stream: u64) -> Result<FieldSample> {
    let spike = ZonalCoefficients::from_kernel_spec(&KernelSpec::Legendre { l })?;
    let mut rng = replicate_rng(seed, stream);
    let draw = SphericalHarmonicDraw::draw(&spike, &mut rng)?;
    Ok(FieldSample {
        grid_ref: grid.descriptor(),
        values: draw.synthesize(grid),
        coeffs: draw.coefficients().to_vec(),
        spec: EnsembleSpec::Harmonic { l },
        seed,
        stream,
    })
}

/// Draw a band-limited or monochromatic ensemble (or a single-degree
/// window, via the Legendre spec) on a grid.
pub fn sample_bandlimited(
    spec: &KernelSpec,
    grid: &SphereGrid,
    seed: u64,
    stream: u64,
) -> Result<FieldSample> {
    let ensemble = match *spec {
        KernelSpec::Legendre { l } => EnsembleSpec::Harmonic { l },
        KernelSpec::BandLimited { alpha, l } => EnsembleSpec::BandLimited { alpha, l },
        KernelSpec::Mono { beta, l } => EnsembleSpec::Mono { beta, l },
        KernelSpec::Kostlan { .. } => {
            return Err(Error::Domain(
                "the homogeneous ensemble is not a windowed superposition; use sample_kostlan"
                    .into(),
            ))
        }
    };
    let zonal = ZonalCoefficients::from_kernel_spec(spec)?;
    let mut rng = replicate_rng(seed, stream);
    let draw = SphericalHarmonicDraw::draw(&zonal, &mut rng)?;
    Ok(FieldSample {
        grid_ref: grid.descriptor(),
        values: draw.synthesize(grid),
        coeffs: draw.coefficients().to_vec(),
        spec: ensemble,
        seed,
        stream,
    })
}

/// Draw an isotropic field with an explicit zonal spectrum on a grid.
pub fn sample_isotropic(
    spectrum: &ZonalCoefficients,
    grid: &SphereGrid,
    seed: u64,
    stream: u64,
) -> Result<FieldSample> {
    let mut rng = replicate_rng(seed, stream);
    let draw = SphericalHarmonicDraw::draw(spectrum, &mut rng)?;
    Ok(FieldSample {
        grid_ref: grid.descriptor(),
        values: draw.synthesize(grid),
        coeffs: draw.coefficients().to_vec(),
        spec: EnsembleSpec::Isotropic {
            coeffs: spectrum.as_slice().to_vec(),
        },
        seed,
        stream,
    })
}

/// Draw a planar limit field as a K-wave superposition on a planar grid.
pub fn sample_planar(
    kind: PlanarKind,
    grid: &PlanarGrid,
    waves: usize,
    seed: u64,
    stream: u64,
) -> Result<FieldSample> {
    let mut rng = replicate_rng(seed, stream);
    let sup = WaveSuperposition::sample(kind, waves, &mut rng)?;
    let spec = match kind {
        PlanarKind::BargmannFock => EnsembleSpec::BargmannFock { waves },
        PlanarKind::PlaneWave { alpha } => EnsembleSpec::PlaneWave { alpha, waves },
    };
    Ok(FieldSample {
        grid_ref: grid.descriptor(),
        values: sup.synthesize(grid),
        coeffs: sup.flat_coeffs(),
        spec,
        seed,
        stream,
    })
}

/// Dispatch a spherical ensemble spec to its sampler.
pub fn sample_sphere_ensemble(
    spec: &EnsembleSpec,
    grid: &SphereGrid,
    seed: u64,
    stream: u64,
) -> Result<FieldSample> {
    match spec {
        EnsembleSpec::Kostlan { n } => sample_kostlan(*n, grid, seed, stream),
        EnsembleSpec::Harmonic { l } => sample_rsh(*l, grid, seed, stream),
        EnsembleSpec::BandLimited { .. } | EnsembleSpec::Mono { .. } => {
            let kspec = spec.kernel_spec().expect("windowed kinds have kernels");
            sample_bandlimited(&kspec, grid, seed, stream)
        }
        EnsembleSpec::Isotropic { coeffs } => {
            let zonal = ZonalCoefficients::new(coeffs.clone())?;
            sample_isotropic(&zonal, grid, seed, stream)
        }
        EnsembleSpec::BargmannFock { .. } | EnsembleSpec::PlaneWave { .. } => Err(Error::Domain(
            "planar ensembles live on planar grids; use sample_planar".into(),
        )),
        EnsembleSpec::Localized { .. } => Err(Error::Domain(
            "localized companions are built by the coupling constructors".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::run_replicates;
    use crate::geometry::{Connectivity, DEFAULT_MAX_CELLS};
    use crate::spectral::{bandlimited_kernel, kernel_value, kostlan_kernel};
    use approx::assert_relative_eq;

    fn small_grid() -> SphereGrid {
        SphereGrid::with_rows(8, Connectivity::Eight, DEFAULT_MAX_CELLS).unwrap()
    }

    fn rand_unit(rng: &mut ChaCha8Rng) -> SpherePoint {
        loop {
            let v = [
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            ];
            if let Ok(p) = SpherePoint::new(v) {
                return p;
            }
        }
    }

    /// Monte Carlo product-moment estimate with its standard error.
    fn mc_mean_se(samples: &[f64]) -> (f64, f64) {
        let m = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / m;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
        (mean, (var / m).sqrt())
    }

    #[test]
    fn normalized_legendre_oracles() {
        // Independent high-precision values (spherical-harmonic
        // normalization, no Condon–Shortley phase).
        assert_relative_eq!(
            normalized_legendre(2, 1, 0.7).unwrap(),
            0.380653808085260085348534198941,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            normalized_legendre(3, 2, 0.7).unwrap(),
            0.324400748475795903635400394121,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            normalized_legendre(10, 10, 1.1).unwrap(),
            0.171510881504052698662866304566,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            normalized_legendre(40, 17, 0.9).unwrap(),
            0.320982477817500901162330119466,
            max_relative = 1e-13
        );
        // Closed forms for the lowest degrees.
        assert_relative_eq!(
            normalized_legendre(0, 0, 1.234).unwrap(),
            (4.0 * PI).recip().sqrt(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            normalized_legendre(1, 0, 0.8).unwrap(),
            (3.0 / (4.0 * PI)).sqrt() * 0.8f64.cos(),
            max_relative = 1e-14
        );
        assert!(normalized_legendre(3, 4, 0.5).is_err());
    }

    #[test]
    fn addition_formula_l40() {
        let l = 40u32;
        let mut rng = replicate_rng(0xADD, 0);
        for _ in 0..100 {
            let theta = PI * rng.random::<f64>();
            let mut sum = normalized_legendre(l, 0, theta).unwrap().powi(2);
            for m in 1..=l {
                sum += 2.0 * normalized_legendre(l, m, theta).unwrap().powi(2);
            }
            assert_relative_eq!(
                4.0 * PI / (2.0 * l as f64 + 1.0) * sum,
                1.0,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn kostlan_variance_identity() {
        // Multinomial theorem: Σ_J (n choose J)·x^{2J} = (Σ x_i²)^n = 1 on
        // the unit sphere.
        let mut rng = replicate_rng(0x1057, 0);
        for n in [1u32, 8, 64] {
            let weights = kostlan_weights(n);
            let exps = kostlan_exponents(n);
            for _ in 0..20 {
                let p = rand_unit(&mut rng);
                let [x0, x1, x2] = p.coords();
                let total: f64 = exps
                    .iter()
                    .zip(&weights)
                    .map(|(j, w)| {
                        w * w
                            * x0.powi(j[0] as i32).powi(2)
                            * x1.powi(j[1] as i32).powi(2)
                            * x2.powi(j[2] as i32).powi(2)
                    })
                    .sum();
                assert_relative_eq!(total, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn kostlan_zero_hook_and_reproducibility() {
        let grid = small_grid();
        let zero = KostlanDraw::from_coefficients(4, vec![0.0; kostlan_coefficient_count(4)])
            .unwrap();
        assert!(zero.synthesize(&grid).iter().all(|&v| v == 0.0));

        let a = sample_kostlan(8, &grid, 11, 0).unwrap();
        let b = sample_kostlan(8, &grid, 11, 0).unwrap();
        assert_eq!(a, b);
        let c = sample_kostlan(8, &grid, 11, 1).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn kostlan_covariance_monte_carlo() {
        let x = SpherePoint::north_pole();
        let y = SpherePoint::from_colat_lon(0.2, 0.0);
        for (n, target) in [(1u32, 0.2f64.cos()), (64, kostlan_kernel(64, 0.2).unwrap())] {
            let prods: Vec<f64> = run_replicates(10_000, None, |k| {
                let mut rng = replicate_rng(0xC0, k as u64);
                let d = KostlanDraw::draw(n, &mut rng).unwrap();
                d.value_at(&x) * d.value_at(&y)
            });
            let (mean, se) = mc_mean_se(&prods);
            assert!(
                (mean - target).abs() <= 4.0 * se,
                "n={n}: mean {mean:.4} target {target:.4} se {se:.5}"
            );
        }
    }

    #[test]
    fn rsh_l0_constant_field() {
        let grid = small_grid();
        let s = sample_rsh(0, &grid, 3, 0).unwrap();
        assert_eq!(s.coeffs.len(), 1);
        for &v in &s.values {
            assert_relative_eq!(v, s.coeffs[0], max_relative = 1e-12);
        }
    }

    #[test]
    fn rsh_covariance_and_variance_monte_carlo() {
        let x = SpherePoint::from_colat_lon(0.9, 0.3);
        let y = SpherePoint::from_colat_lon(1.4, 0.9);
        let theta = crate::geometry::sph_dist(&x, &y);
        let spike = ZonalCoefficients::from_kernel_spec(&KernelSpec::Legendre { l: 1 }).unwrap();
        let prods: Vec<[f64; 2]> = run_replicates(8000, None, |k| {
            let mut rng = replicate_rng(0x51, k as u64);
            let d = SphericalHarmonicDraw::draw(&spike, &mut rng).unwrap();
            let vx = d.value_at(&x);
            [vx * d.value_at(&y), vx * vx]
        });
        let cov: Vec<f64> = prods.iter().map(|p| p[0]).collect();
        let var: Vec<f64> = prods.iter().map(|p| p[1]).collect();
        let (mean, se) = mc_mean_se(&cov);
        assert!(
            (mean - theta.cos()).abs() <= 4.0 * se,
            "cov {mean:.4} vs cos θ {:.4} (se {se:.5})",
            theta.cos()
        );
        let (vmean, vse) = mc_mean_se(&var);
        assert!((vmean - 1.0).abs() <= 4.0 * vse, "var {vmean:.4} se {vse:.5}");
    }

    #[test]
    fn isotropic_spike_equals_rsh_exactly() {
        let grid = small_grid();
        let spike = ZonalCoefficients::from_kernel_spec(&KernelSpec::Legendre { l: 5 }).unwrap();
        let a = sample_rsh(5, &grid, 77, 2).unwrap();
        let b = sample_isotropic(&spike, &grid, 77, 2).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.coeffs, b.coeffs);
    }

    #[test]
    fn isotropic_two_term_covariance() {
        // c₀ = c₁ = 1/√2 ⇒ K(θ) = (1 + cos θ)/2.
        let zonal =
            ZonalCoefficients::new(vec![0.5f64.sqrt(), 0.5f64.sqrt()]).unwrap();
        let x = SpherePoint::north_pole();
        let y = SpherePoint::from_colat_lon(1.1, 0.0);
        let target = 0.5 * (1.0 + 1.1f64.cos());
        let prods: Vec<f64> = run_replicates(8000, None, |k| {
            let mut rng = replicate_rng(0x2222, k as u64);
            let d = SphericalHarmonicDraw::draw(&zonal, &mut rng).unwrap();
            d.value_at(&x) * d.value_at(&y)
        });
        let (mean, se) = mc_mean_se(&prods);
        assert!((mean - target).abs() <= 4.0 * se, "mean {mean:.4} target {target:.4}");

        // All-zero spectrum: identically zero field.
        let zero = ZonalCoefficients::new(vec![0.0; 4]).unwrap();
        let grid = small_grid();
        let s = sample_isotropic(&zero, &grid, 1, 0).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        assert!(s.coeffs.is_empty());
    }

    #[test]
    fn bandlimited_covariance_monte_carlo() {
        let spec = KernelSpec::BandLimited { alpha: 0.0, l: 8 };
        let zonal = ZonalCoefficients::from_kernel_spec(&spec).unwrap();
        let x = SpherePoint::north_pole();
        let y = SpherePoint::from_colat_lon(0.5, 0.0);
        let target = bandlimited_kernel(&spec, 0.5).unwrap();
        let prods: Vec<f64> = run_replicates(8000, None, |k| {
            let mut rng = replicate_rng(0xB1, k as u64);
            let d = SphericalHarmonicDraw::draw(&zonal, &mut rng).unwrap();
            d.value_at(&x) * d.value_at(&y)
        });
        let (mean, se) = mc_mean_se(&prods);
        assert!((mean - target).abs() <= 4.0 * se, "mean {mean:.4} target {target:.4}");
    }

    #[test]
    fn mono_window_and_variance() {
        let spec = KernelSpec::Mono { beta: 0.5, l: 100 };
        assert_eq!(spec.degree_window(), (90, 100));
        let zonal = ZonalCoefficients::from_kernel_spec(&spec).unwrap();
        assert_relative_eq!(zonal.total_power(), 1.0, epsilon = 1e-12);
        let x = SpherePoint::from_colat_lon(1.2, 2.0);
        let sq: Vec<f64> = run_replicates(1500, None, |k| {
            let mut rng = replicate_rng(0x3033, k as u64);
            let d = SphericalHarmonicDraw::draw(&zonal, &mut rng).unwrap();
            let v = d.value_at(&x);
            v * v
        });
        let (mean, se) = mc_mean_se(&sq);
        assert!((mean - 1.0).abs() <= 4.0 * se, "var {mean:.4} se {se:.5}");
    }

    #[test]
    fn isotropy_two_pair_families() {
        // Same separation θ along a meridian and along the equator; the
        // covariance estimates must agree (law depends on distance only).
        let theta = 0.4f64;
        let spec = KernelSpec::Legendre { l: 16 };
        let zonal = ZonalCoefficients::from_kernel_spec(&spec).unwrap();
        let a1 = SpherePoint::from_colat_lon(PI / 2.0 - theta / 2.0, 1.0);
        let a2 = SpherePoint::from_colat_lon(PI / 2.0 + theta / 2.0, 1.0);
        let b1 = SpherePoint::from_colat_lon(PI / 2.0, 2.0);
        let b2 = SpherePoint::from_colat_lon(PI / 2.0, 2.0 + theta);
        assert_relative_eq!(crate::geometry::sph_dist(&a1, &a2), theta, epsilon = 1e-12);
        assert_relative_eq!(crate::geometry::sph_dist(&b1, &b2), theta, epsilon = 1e-12);
        let prods: Vec<[f64; 2]> = run_replicates(6000, None, |k| {
            let mut rng = replicate_rng(0x150, k as u64);
            let d = SphericalHarmonicDraw::draw(&zonal, &mut rng).unwrap();
            [d.value_at(&a1) * d.value_at(&a2), d.value_at(&b1) * d.value_at(&b2)]
        });
        let fam_a: Vec<f64> = prods.iter().map(|p| p[0]).collect();
        let fam_b: Vec<f64> = prods.iter().map(|p| p[1]).collect();
        let (ma, sa) = mc_mean_se(&fam_a);
        let (mb, sb) = mc_mean_se(&fam_b);
        let se = (sa * sa + sb * sb).sqrt();
        assert!((ma - mb).abs() <= 5.0 * se, "Δ = {:.4}, 5·se = {:.4}", ma - mb, 5.0 * se);
        // Both match the kernel value too.
        let target = kernel_value(&spec, theta).unwrap();
        assert!((ma - target).abs() <= 4.0 * sa);
    }

    #[test]
    fn planar_kernel_oracles() {
        assert_relative_eq!(
            planar_kernel(PlanarKind::PlaneWave { alpha: 0.5 }, 1.0),
            0.850443618419990860713879775062,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            planar_kernel(PlanarKind::PlaneWave { alpha: 0.5 }, 2.5),
            0.257901303791289391441150781469,
            max_relative = 1e-12
        );
        // First zero of J₀.
        assert!(
            planar_kernel(PlanarKind::PlaneWave { alpha: 1.0 }, 2.404825557695772768621631879326)
                .abs()
                < 1e-12
        );
        assert_relative_eq!(
            planar_kernel(PlanarKind::BargmannFock, 1.0),
            (-0.5f64).exp(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            planar_kernel(PlanarKind::PlaneWave { alpha: 0.3 }, 1e-15),
            1.0,
            max_relative = 1e-9
        );
    }

    #[test]
    fn planar_covariance_monte_carlo() {
        let x = [0.3, -0.2];
        for (kind, sep, target) in [
            (PlanarKind::BargmannFock, 1.0, (-0.5f64).exp()),
            (PlanarKind::PlaneWave { alpha: 1.0 }, 2.404825557695772768621631879326, 0.0),
        ] {
            let y = [x[0] + sep, x[1]];
            let prods: Vec<f64> = run_replicates(6000, None, |k| {
                let mut rng = replicate_rng(0xBF, k as u64);
                let w = WaveSuperposition::sample(kind, 256, &mut rng).unwrap();
                w.value_at(x) * w.value_at(y)
            });
            let (mean, se) = mc_mean_se(&prods);
            assert!(
                (mean - target).abs() <= 4.0 * se,
                "{kind:?}: mean {mean:.4} target {target:.4} se {se:.5}"
            );
        }
    }

    #[test]
    fn planar_single_wave_hook() {
        let xi = [0.7, -1.1];
        let w = WaveSuperposition::from_parts(vec![xi], vec![PI / 2.0]).unwrap();
        for p in [[0.0, 0.0], [1.0, 2.0], [-0.4, 0.3]] {
            let arg = xi[0] * p[0] + xi[1] * p[1];
            assert_relative_eq!(
                w.value_at(p),
                -std::f64::consts::SQRT_2 * arg.sin(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn field_sample_reproducibility_across_workers() {
        let grid = small_grid();
        let task = |k: usize| sample_rsh(6, &grid, 99, k as u64).unwrap().values;
        let one = run_replicates(6, Some(1), task);
        let eight = run_replicates(6, Some(8), task);
        assert_eq!(one, eight);

        let pgrid = PlanarGrid::new(4.0, 8).unwrap();
        let ptask = |k: usize| {
            sample_planar(PlanarKind::BargmannFock, &pgrid, 64, 5, k as u64)
                .unwrap()
                .values
        };
        assert_eq!(run_replicates(4, Some(1), ptask), run_replicates(4, Some(8), ptask));
    }

    #[test]
    fn synthesize_matches_pointwise_evaluation() {
        let grid = small_grid();
        let spec = KernelSpec::BandLimited { alpha: 0.4, l: 10 };
        let zonal = ZonalCoefficients::from_kernel_spec(&spec).unwrap();
        let mut rng = replicate_rng(0xAB, 0);
        let draw = SphericalHarmonicDraw::draw(&zonal, &mut rng).unwrap();
        let values = draw.synthesize(&grid);
        for cell in (0..grid.n_cells()).step_by(11) {
            let p = grid.cell_center(cell);
            assert_relative_eq!(values[cell], draw.value_at(&p), epsilon = 1e-10);
        }
    }

    #[test]
    fn sampler_domain_errors() {
        let grid = small_grid();
        assert!(sample_kostlan(0, &grid, 0, 0).is_err());
        assert!(sample_kostlan(KOSTLAN_DEGREE_CAP + 1, &grid, 0, 0).is_err());
        assert!(sample_rsh(HARMONIC_DEGREE_CAP + 1, &grid, 0, 0).is_err());
        let pgrid = PlanarGrid::new(4.0, 8).unwrap();
        assert!(sample_planar(PlanarKind::BargmannFock, &pgrid, 32, 0, 0).is_err());
        assert!(
            sample_planar(PlanarKind::PlaneWave { alpha: 1.5 }, &pgrid, 128, 0, 0).is_err()
        );
        assert!(PlanarGrid::new(-1.0, 8).is_err());
        assert!(PlanarGrid::new(1.0, 0).is_err());
    }
}
