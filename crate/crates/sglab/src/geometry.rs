//! Sphere geometry: points, distances, exponential charts, caps, geodesic
//! squares, iso-latitude grids with adjacency, and square tilings.
//!
//! Conventions:
//! * colatitude θ ∈ [0, π] measured from the north pole, longitude
//!   φ ∈ [0, 2π);
//! * a geodesic square of half-side u is the image of [−u,u]² under the
//!   exponential map at its center, with the two tangent axes given by the
//!   first two columns of its rotation matrix (third column = center);
//! * a cap of radius r < 0 is empty and r > π is the whole sphere.

use crate::error::{Error, Result};
use crate::numeric::{gauss_legendre, Kahan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const PI: f64 = std::f64::consts::PI;
pub const TAU: f64 = std::f64::consts::TAU;

// ---------------------------------------------------------------------------
// Points and linear algebra
// ---------------------------------------------------------------------------

/// Row-major 3×3 matrix.
pub type Mat3 = [[f64; 3]; 3];

pub fn mat_identity() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

pub fn mat_apply(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat_transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn mat_det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Rodrigues rotation by `angle` about a unit axis.
pub fn rotation_about_axis(axis: &SpherePoint, angle: f64) -> Mat3 {
    let [x, y, z] = axis.coords();
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

/// Unit vector on S², renormalized on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    v: [f64; 3],
}

impl SpherePoint {
    pub fn new(v: [f64; 3]) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("sphere point must have finite coordinates".into()));
        }
        let n = norm3(v);
        if !(1e-8..=1e8).contains(&n) {
            return Err(Error::Domain(format!(
                "sphere point norm {n} too far from 1 to renormalize"
            )));
        }
        Ok(SpherePoint {
            v: [v[0] / n, v[1] / n, v[2] / n],
        })
    }

    pub fn north_pole() -> Self {
        SpherePoint { v: [0.0, 0.0, 1.0] }
    }

    pub fn south_pole() -> Self {
        SpherePoint { v: [0.0, 0.0, -1.0] }
    }

    /// Point at colatitude θ (from the north pole) and longitude φ.
    pub fn from_colat_lon(theta: f64, phi: f64) -> Self {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        SpherePoint {
            v: [st * cp, st * sp, ct],
        }
    }

    pub fn coords(&self) -> [f64; 3] {
        self.v
    }

    pub fn colatitude(&self) -> f64 {
        self.v[2].clamp(-1.0, 1.0).acos()
    }

    /// Longitude in [0, 2π).
    pub fn longitude(&self) -> f64 {
        let phi = self.v[1].atan2(self.v[0]);
        if phi < 0.0 {
            phi + TAU
        } else {
            phi
        }
    }

    pub fn antipode(&self) -> Self {
        SpherePoint {
            v: [-self.v[0], -self.v[1], -self.v[2]],
        }
    }

    pub fn dot(&self, other: &SpherePoint) -> f64 {
        dot3(self.v, other.v)
    }
}

/// Great-circle distance, via atan2 of the cross/dot pair: accurate near 0
/// and near π where plain arccos loses digits.
pub fn sph_dist(x: &SpherePoint, y: &SpherePoint) -> f64 {
    let c = cross3(x.v, y.v);
    norm3(c).atan2(dot3(x.v, y.v))
}

/// Deterministic orthonormal tangent frame (e₁, e₂) at `p`: e₁ is the
/// standard basis vector least aligned with `p`, projected and normalized;
/// e₂ = p × e₁. At the north pole this yields (x̂, ŷ).
pub fn tangent_frame(p: &SpherePoint) -> ([f64; 3], [f64; 3]) {
    let a = p.v;
    let amin = {
        let abs = [a[0].abs(), a[1].abs(), a[2].abs()];
        if abs[0] <= abs[1] && abs[0] <= abs[2] {
            [1.0, 0.0, 0.0]
        } else if abs[1] <= abs[2] {
            [0.0, 1.0, 0.0]
        } else {
            [0.0, 0.0, 1.0]
        }
    };
    let proj = dot3(amin, a);
    let mut e1 = [amin[0] - proj * a[0], amin[1] - proj * a[1], amin[2] - proj * a[2]];
    let n = norm3(e1);
    e1 = [e1[0] / n, e1[1] / n, e1[2] / n];
    let e2 = cross3(a, e1);
    (e1, e2)
}

/// Exponential map: geodesic of length ‖w‖ from `base` in the direction
/// w₁e₁ + w₂e₂ of the fixed tangent frame.
pub fn exp_map(base: &SpherePoint, w: [f64; 2]) -> Result<SpherePoint> {
    let r = (w[0] * w[0] + w[1] * w[1]).sqrt();
    if r > PI + 1e-12 {
        return Err(Error::Domain(format!(
            "tangent vector norm {r} exceeds π; the chart stops at the antipode"
        )));
    }
    if r == 0.0 {
        return Ok(*base);
    }
    let (e1, e2) = tangent_frame(base);
    let dir = [
        (w[0] * e1[0] + w[1] * e2[0]) / r,
        (w[0] * e1[1] + w[1] * e2[1]) / r,
        (w[0] * e1[2] + w[1] * e2[2]) / r,
    ];
    let (s, c) = r.min(PI).sin_cos();
    SpherePoint::new([
        c * base.v[0] + s * dir[0],
        c * base.v[1] + s * dir[1],
        c * base.v[2] + s * dir[2],
    ])
}

/// Inverse of [`exp_map`] in the same frame. Errors within 1e−9 of the
/// antipode, where the chart is singular.
pub fn log_map(base: &SpherePoint, x: &SpherePoint) -> Result<[f64; 2]> {
    let d = sph_dist(base, x);
    if d >= PI - 1e-9 {
        return Err(Error::Geometry(
            "log map undefined at the antipode of the base point".into(),
        ));
    }
    if d < 1e-14 {
        return Ok([0.0, 0.0]);
    }
    let proj = dot3(x.v, base.v);
    let orth = [
        x.v[0] - proj * base.v[0],
        x.v[1] - proj * base.v[1],
        x.v[2] - proj * base.v[2],
    ];
    let n = norm3(orth);
    let (e1, e2) = tangent_frame(base);
    Ok([
        d * dot3(orth, e1) / n,
        d * dot3(orth, e2) / n,
    ])
}

// ---------------------------------------------------------------------------
// Caps and geodesic squares
// ---------------------------------------------------------------------------

/// Area 2π(1 − cos r) of a cap of radius r; arguments are clamped into
/// [0, π] per the empty/full-sphere conventions.
pub fn cap_area(r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    TAU * (1.0 - r.min(PI).cos())
}

/// Spherical cap D_r(center). Radius < 0 denotes the empty set, radius > π
/// the full sphere.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SphericalCap {
    pub center: SpherePoint,
    pub radius: f64,
}

impl SphericalCap {
    pub fn new(center: SpherePoint, radius: f64) -> Self {
        SphericalCap { center, radius }
    }

    pub fn is_empty(&self) -> bool {
        self.radius < 0.0
    }

    pub fn is_full_sphere(&self) -> bool {
        self.radius >= PI
    }

    pub fn contains(&self, p: &SpherePoint) -> bool {
        sph_dist(&self.center, p) <= self.radius
    }

    pub fn area(&self) -> f64 {
        cap_area(self.radius)
    }
}

/// Geodesic square: exp-image of [−u,u]² at rotation·ẑ, with tangent axes
/// rotation·x̂ and rotation·ŷ. Half-sides ≥ π/2 are clamped to π/2.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SphereSquare {
    rotation: Mat3,
    half_side: f64,
}

impl SphereSquare {
    pub fn new(rotation: Mat3, half_side: f64) -> Result<Self> {
        if !(half_side > 0.0) {
            return Err(Error::Domain(format!(
                "square half-side must be positive, got {half_side}"
            )));
        }
        let rt = mat_transpose(&rotation);
        let prod = mat_mul(&rt, &rotation);
        let id = mat_identity();
        for i in 0..3 {
            for j in 0..3 {
                if (prod[i][j] - id[i][j]).abs() > 1e-10 {
                    return Err(Error::Geometry(
                        "square rotation is not orthonormal within 1e-10".into(),
                    ));
                }
            }
        }
        if (mat_det(&rotation) - 1.0).abs() > 1e-10 {
            return Err(Error::Geometry(
                "square rotation must have determinant +1".into(),
            ));
        }
        Ok(SphereSquare {
            rotation,
            half_side: half_side.min(PI / 2.0),
        })
    }

    /// Square at `center` whose axes are the fixed tangent frame rotated by
    /// `frame_angle` within the tangent plane.
    pub fn at(center: &SpherePoint, frame_angle: f64, half_side: f64) -> Result<Self> {
        let (e1, e2) = tangent_frame(center);
        let (s, c) = frame_angle.sin_cos();
        let u1 = [
            c * e1[0] + s * e2[0],
            c * e1[1] + s * e2[1],
            c * e1[2] + s * e2[2],
        ];
        let u2 = [
            -s * e1[0] + c * e2[0],
            -s * e1[1] + c * e2[1],
            -s * e1[2] + c * e2[2],
        ];
        let cv = center.coords();
        let rotation = [
            [u1[0], u2[0], cv[0]],
            [u1[1], u2[1], cv[1]],
            [u1[2], u2[2], cv[2]],
        ];
        SphereSquare::new(rotation, half_side)
    }

    /// Square at `center` with the first axis pointing east and the second
    /// south along the meridian. Falls back to the generic frame within
    /// 1e−9 of a pole, where meridians degenerate.
    pub fn meridian_aligned(center: &SpherePoint, half_side: f64) -> Result<Self> {
        let theta = center.colatitude();
        if theta < 1e-9 || theta > PI - 1e-9 {
            return SphereSquare::at(center, 0.0, half_side);
        }
        let phi = center.longitude();
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let east = [-sp, cp, 0.0];
        let south = [ct * cp, ct * sp, -st];
        let cv = center.coords();
        let rotation = [
            [south[0], east[0], cv[0]],
            [south[1], east[1], cv[1]],
            [south[2], east[2], cv[2]],
        ];
        SphereSquare::new(rotation, half_side)
    }

    pub fn half_side(&self) -> f64 {
        self.half_side
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn center(&self) -> SpherePoint {
        SpherePoint {
            v: [self.rotation[0][2], self.rotation[1][2], self.rotation[2][2]],
        }
    }

    fn axes(&self) -> ([f64; 3], [f64; 3]) {
        (
            [self.rotation[0][0], self.rotation[1][0], self.rotation[2][0]],
            [self.rotation[0][1], self.rotation[1][1], self.rotation[2][1]],
        )
    }

    /// Chart point exp_center(w₁·axis₁ + w₂·axis₂); `w` need not lie inside
    /// the square (used for boundary sampling and coverage probes).
    pub fn chart_point(&self, w: [f64; 2]) -> Result<SpherePoint> {
        let r = (w[0] * w[0] + w[1] * w[1]).sqrt();
        if r > PI {
            return Err(Error::Domain("chart point beyond the antipode".into()));
        }
        if r == 0.0 {
            return Ok(self.center());
        }
        let (a1, a2) = self.axes();
        let c = self.center().coords();
        let dir = [
            (w[0] * a1[0] + w[1] * a2[0]) / r,
            (w[0] * a1[1] + w[1] * a2[1]) / r,
            (w[0] * a1[2] + w[1] * a2[2]) / r,
        ];
        let (s, co) = r.sin_cos();
        SpherePoint::new([
            co * c[0] + s * dir[0],
            co * c[1] + s * dir[1],
            co * c[2] + s * dir[2],
        ])
    }

    /// Chart coordinates of `x` in this square's frame; errors at the
    /// center's antipode.
    pub fn log_coords(&self, x: &SpherePoint) -> Result<[f64; 2]> {
        let c = self.center();
        let d = sph_dist(&c, x);
        if d >= PI - 1e-9 {
            return Err(Error::Geometry(
                "point is antipodal to the square center".into(),
            ));
        }
        if d < 1e-14 {
            return Ok([0.0, 0.0]);
        }
        let proj = x.dot(&c);
        let cv = c.coords();
        let orth = [
            x.v[0] - proj * cv[0],
            x.v[1] - proj * cv[1],
            x.v[2] - proj * cv[2],
        ];
        let n = norm3(orth);
        let (a1, a2) = self.axes();
        Ok([d * dot3(orth, a1) / n, d * dot3(orth, a2) / n])
    }

    /// Membership in the closed square (1e−12 boundary tolerance).
    pub fn contains(&self, x: &SpherePoint) -> Result<bool> {
        // Cheap reject: anything beyond the circumscribed cap is outside.
        let d = sph_dist(&self.center(), x);
        if d > self.half_side * std::f64::consts::SQRT_2 + 1e-9 {
            if d >= PI - 1e-9 {
                return Err(Error::Geometry(
                    "point is antipodal to the square center".into(),
                ));
            }
            return Ok(false);
        }
        let w = self.log_coords(x)?;
        let tol = 1e-12;
        Ok(w[0].abs() <= self.half_side + tol && w[1].abs() <= self.half_side + tol)
    }

    pub fn area(&self) -> f64 {
        square_area(self.half_side)
    }
}

/// Membership of `x` in the closed geodesic square.
pub fn square_contains(sq: &SphereSquare, x: &SpherePoint) -> Result<bool> {
    sq.contains(x)
}

/// Area of the geodesic square of half-side u: ∫_{[−u,u]²} sinc‖w‖ dw
/// (the exponential map's Jacobian is sin ρ / ρ at chart radius ρ),
/// evaluated by a 32×32 Gauss–Legendre rule on the quarter square.
pub fn square_area(u: f64) -> f64 {
    assert!(u > 0.0 && u <= PI / 2.0 + 1e-12, "square half-side out of range");
    let (nodes, weights) = gauss_legendre(32);
    let half = u / 2.0;
    let mut acc = Kahan::new();
    for (i, &xi) in nodes.iter().enumerate() {
        let x = half * (xi + 1.0);
        for (j, &yj) in nodes.iter().enumerate() {
            let y = half * (yj + 1.0);
            let rho = (x * x + y * y).sqrt();
            let sinc = if rho < 1e-12 { 1.0 } else { rho.sin() / rho };
            acc.add(weights[i] * weights[j] * sinc);
        }
    }
    4.0 * half * half * acc.total()
}

// ---------------------------------------------------------------------------
// Regions
// ---------------------------------------------------------------------------

/// A subset of the sphere used as a domain for component analysis and
/// tilings: a cap (possibly the full sphere) or a geodesic square.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Region {
    Cap(SphericalCap),
    Square(SphereSquare),
}

impl Region {
    pub fn full_sphere() -> Region {
        Region::Cap(SphericalCap::new(SpherePoint::north_pole(), PI))
    }

    pub fn is_full_sphere(&self) -> bool {
        matches!(self, Region::Cap(c) if c.is_full_sphere())
    }

    pub fn area(&self) -> f64 {
        match self {
            Region::Cap(c) => c.area(),
            Region::Square(s) => s.area(),
        }
    }

    /// Membership; a square region treats its center's antipode as outside.
    pub fn contains(&self, p: &SpherePoint) -> bool {
        match self {
            Region::Cap(c) => c.contains(p),
            Region::Square(s) => s.contains(p).unwrap_or(false),
        }
    }
}

// ---------------------------------------------------------------------------
// Iso-latitude grid
// ---------------------------------------------------------------------------

/// Neighborhood scheme for grid adjacency. Eight-connectivity (the default)
/// matches continuum level-set connectivity better at fixed resolution;
/// four-connectivity is available for sensitivity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Four,
    Eight,
}

/// Default cap on grid size (total cells); grids beyond this are refused
/// rather than silently thrashing memory.
pub const DEFAULT_MAX_CELLS: usize = 16_000_000;

/// Iso-latitude equirectangular grid: `n_lat` rows of equal colatitude span
/// π/n_lat, each with `n_lon = 2·n_lat` cells. Cell areas are exact band
/// areas, so they sum to 4π. The top and bottom rows are merged across the
/// pole: all cells of a pole row are mutually adjacent.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    n_lat: usize,
    n_lon: usize,
    row_area: Vec<f64>,
    connectivity: Connectivity,
}

/// Build a grid resolving `local_scale` with at least `cells_per_unit_scale`
/// cells across it (minimum 4), with the default connectivity and budget.
pub fn build_grid(cells_per_unit_scale: f64, local_scale: f64) -> Result<SphereGrid> {
    build_grid_opts(
        cells_per_unit_scale,
        local_scale,
        Connectivity::Eight,
        DEFAULT_MAX_CELLS,
    )
}

pub fn build_grid_opts(
    cells_per_unit_scale: f64,
    local_scale: f64,
    connectivity: Connectivity,
    max_cells: usize,
) -> Result<SphereGrid> {
    if !(local_scale > 0.0 && local_scale <= PI) {
        return Err(Error::Domain(format!(
            "local scale must lie in (0, π], got {local_scale}"
        )));
    }
    if cells_per_unit_scale < 4.0 {
        return Err(Error::Resolution(format!(
            "need at least 4 cells per local scale, got {cells_per_unit_scale}"
        )));
    }
    let n_lat = ((PI * cells_per_unit_scale / local_scale).ceil() as usize).max(4);
    SphereGrid::with_rows(n_lat, connectivity, max_cells)
}

impl SphereGrid {
    /// Grid with an explicit row count (n_lon = 2·n_lat).
    pub fn with_rows(n_lat: usize, connectivity: Connectivity, max_cells: usize) -> Result<Self> {
        if n_lat < 4 {
            return Err(Error::Resolution("grid needs at least 4 rows".into()));
        }
        let n_lon = 2 * n_lat;
        let n_cells = n_lat * n_lon;
        if n_cells > max_cells {
            return Err(Error::Budget(format!(
                "grid of {n_cells} cells exceeds the budget of {max_cells}"
            )));
        }
        let mut row_area = Vec::with_capacity(n_lat);
        for i in 0..n_lat {
            let t0 = PI * i as f64 / n_lat as f64;
            let t1 = PI * (i + 1) as f64 / n_lat as f64;
            row_area.push(TAU / n_lon as f64 * (t0.cos() - t1.cos()));
        }
        Ok(SphereGrid {
            n_lat,
            n_lon,
            row_area,
            connectivity,
        })
    }

    pub fn n_lat(&self) -> usize {
        self.n_lat
    }

    pub fn n_lon(&self) -> usize {
        self.n_lon
    }

    pub fn n_cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    /// Stable identity string for provenance records and sidecar files.
    pub fn descriptor(&self) -> String {
        format!(
            "sphere:n_lat={},n_lon={},conn={:?}",
            self.n_lat, self.n_lon, self.connectivity
        )
    }

    pub fn row(&self, cell: usize) -> usize {
        cell / self.n_lon
    }

    pub fn col(&self, cell: usize) -> usize {
        cell % self.n_lon
    }

    pub fn cell_index(&self, row: usize, col: usize) -> usize {
        row * self.n_lon + col
    }

    /// Colatitude span (top, bottom) of a row.
    pub fn row_colat_bounds(&self, row: usize) -> (f64, f64) {
        (
            PI * row as f64 / self.n_lat as f64,
            PI * (row + 1) as f64 / self.n_lat as f64,
        )
    }

    pub fn cell_center(&self, cell: usize) -> SpherePoint {
        let row = self.row(cell);
        let col = self.col(cell);
        let theta = PI * (row as f64 + 0.5) / self.n_lat as f64;
        let phi = TAU * (col as f64 + 0.5) / self.n_lon as f64;
        SpherePoint::from_colat_lon(theta, phi)
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        self.row_area[self.row(cell)]
    }

    pub fn total_area(&self) -> f64 {
        let mut acc = Kahan::new();
        for &a in &self.row_area {
            acc.add(a * self.n_lon as f64);
        }
        acc.total()
    }

    /// Cell containing a point (pole-adjacent boundary goes to the nearer
    /// row; the longitude seam wraps).
    pub fn cell_of(&self, p: &SpherePoint) -> usize {
        let theta = p.colatitude();
        let phi = p.longitude();
        let row = ((theta / PI * self.n_lat as f64) as usize).min(self.n_lat - 1);
        let col = ((phi / TAU * self.n_lon as f64) as usize).min(self.n_lon - 1);
        self.cell_index(row, col)
    }

    /// Whether a cell sits in the top or bottom (pole) row.
    pub fn is_pole_row(&self, row: usize) -> bool {
        row == 0 || row == self.n_lat - 1
    }

    /// Neighbor list of a cell. Pole-row cells list every other cell of
    /// their row (the row is merged across the pole into a clique) plus the
    /// adjacent interior row; beware the list length for fine grids.
    pub fn neighbors(&self, cell: usize) -> Vec<usize> {
        let row = self.row(cell);
        let col = self.col(cell);
        let mut out = Vec::new();
        let wrap = |c: i64| -> usize {
            let m = self.n_lon as i64;
            (((c % m) + m) % m) as usize
        };
        if self.is_pole_row(row) {
            for c in 0..self.n_lon {
                if c != col {
                    out.push(self.cell_index(row, c));
                }
            }
        } else {
            out.push(self.cell_index(row, wrap(col as i64 - 1)));
            out.push(self.cell_index(row, wrap(col as i64 + 1)));
        }
        for next_row in [row.wrapping_sub(1), row + 1] {
            if next_row >= self.n_lat || next_row == row {
                continue;
            }
            match self.connectivity {
                Connectivity::Four => {
                    out.push(self.cell_index(next_row, col));
                }
                Connectivity::Eight => {
                    for dc in -1i64..=1 {
                        out.push(self.cell_index(next_row, wrap(col as i64 + dc)));
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// JSON export: cell centers as (lat, lon) radians plus adjacency
    /// lists. Guarded to modest sizes; fine grids would produce gigabytes.
    pub fn to_json(&self) -> Result<serde_json::Value> {
        const MAX_EXPORT_CELLS: usize = 250_000;
        if self.n_cells() > MAX_EXPORT_CELLS {
            return Err(Error::Budget(format!(
                "refusing JSON export of {} cells (limit {MAX_EXPORT_CELLS})",
                self.n_cells()
            )));
        }
        let mut cells = Vec::with_capacity(self.n_cells());
        let mut adjacency = Vec::with_capacity(self.n_cells());
        for c in 0..self.n_cells() {
            let p = self.cell_center(c);
            cells.push(serde_json::json!({
                "lat": PI / 2.0 - p.colatitude(),
                "lon": p.longitude(),
                "area": self.cell_area(c),
            }));
            adjacency.push(serde_json::Value::from(self.neighbors(c)));
        }
        Ok(serde_json::json!({
            "n_lat": self.n_lat,
            "n_lon": self.n_lon,
            "connectivity": match self.connectivity {
                Connectivity::Four => "four",
                Connectivity::Eight => "eight",
            },
            "cells": cells,
            "adjacency": adjacency,
        }))
    }
}

// ---------------------------------------------------------------------------
// Tilings
// ---------------------------------------------------------------------------

/// A covering of a region by geodesic squares of common half-side `u`,
/// intended to satisfy the three tiling axioms (small overlap, local
/// boundedness, isoperimetry); [`check_tiling`] verifies them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tiling {
    pub tiles: Vec<SphereSquare>,
    pub region: Region,
    pub u: f64,
    pub epsilon: f64,
}

/// Verification outcome for the three tiling axioms, with witnesses for any
/// failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TilingReport {
    pub passed: bool,
    pub failures: Vec<String>,
    pub tile_count: usize,
    pub count_bound: f64,
    pub coverage_samples: usize,
    pub coverage_violations: usize,
    pub min_exclusive_fraction: f64,
    pub max_connected_neighbors: usize,
    pub isoperimetry_trials: usize,
    pub isoperimetry_failures: usize,
}

/// Curvature-induced area deficit of a geodesic square versus its planar
/// model: 1 − Area(S_u)/(2u)².
fn square_area_deficit(u: f64) -> f64 {
    1.0 - square_area(u) / (4.0 * u * u)
}

/// Largest half-side for which the curvature-induced overlap error of a
/// mapped planar tiling stays below ε/2: solves deficit(u) = ε/2. Cached
/// per ε (the bisection re-runs 32 quadratures).
pub fn curvature_threshold(eps: f64) -> f64 {
    use std::collections::HashMap;
    use std::sync::Mutex;
    use std::sync::OnceLock;
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = eps.to_bits();
    if let Some(&v) = cache.lock().unwrap().get(&key) {
        return v;
    }
    let target = eps / 2.0;
    let mut lo = 1e-3;
    let mut hi = PI / 2.0;
    if square_area_deficit(hi) < target {
        lo = hi;
    } else {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if square_area_deficit(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    cache.lock().unwrap().insert(key, lo);
    lo
}

/// Estimated distance between two geodesic squares: 0 when interior samples
/// overlap, otherwise the minimum over boundary samples (16 per edge). The
/// estimate exceeds the true distance by at most ~u/16, which the tiling
/// construction absorbs in its design margins.
pub fn tile_distance(a: &SphereSquare, b: &SphereSquare) -> f64 {
    let ca = a.center();
    let cb = b.center();
    let d_centers = sph_dist(&ca, &cb);
    let diag = (a.half_side() + b.half_side()) * std::f64::consts::SQRT_2;
    if d_centers - diag > 0.0 {
        // Lower bound on the true distance; exact enough when far apart.
        let lower = d_centers - diag;
        if lower > a.half_side().max(b.half_side()) * 4.0 {
            return lower;
        }
    }
    // Overlap probe on a coarse interior lattice.
    let probe = |from: &SphereSquare, to: &SphereSquare| -> bool {
        let u = from.half_side();
        for i in 0..5 {
            for j in 0..5 {
                let w = [u * (i as f64 - 2.0) / 2.0, u * (j as f64 - 2.0) / 2.0];
                if let Ok(p) = from.chart_point(w) {
                    if to.contains(&p).unwrap_or(false) {
                        return true;
                    }
                }
            }
        }
        false
    };
    if probe(a, b) || probe(b, a) {
        return 0.0;
    }
    let boundary = |sq: &SphereSquare| -> Vec<SpherePoint> {
        let u = sq.half_side();
        let mut pts = Vec::with_capacity(64);
        for k in 0..16 {
            let t = u * (2.0 * (k as f64 + 0.5) / 16.0 - 1.0);
            for w in [[t, u], [t, -u], [u, t], [-u, t]] {
                if let Ok(p) = sq.chart_point(w) {
                    pts.push(p);
                }
            }
        }
        pts
    };
    let pa = boundary(a);
    let pb = boundary(b);
    let mut best = f64::INFINITY;
    for x in &pa {
        for y in &pb {
            let d = sph_dist(x, y);
            if d < best {
                best = d;
            }
        }
    }
    best
}

/// Build a (u, ε)-tiling of the given region, or prove the request
/// infeasible.
///
/// Feasibility is narrow, and deliberately so. The three tiling axioms pull
/// against each other on a curved surface:
///
/// * the count bound n ≤ Area(1+ε)/Area(S_u) forces near-partition
///   efficiency — on a **cap**, any arrangement of congruent squares pays
///   either the π/4 packing deficit of square blocks against a circular
///   boundary, or ~20% mutual overlap in the ring of tiles around the
///   center (the ring needs ⌈2π·sin(2u)/(2u)⌉ ≈ 7 tiles whose lateral
///   spacing is then well under the 2u needed for 1−ε exclusivity). Both
///   obstructions are scale-free in u, so caps larger than a single tile
///   (radius > u) are refused as infeasible rather than papered over;
/// * a **square** region admits an exact m×m lattice with no boundary
///   waste, feasible when the integer pitch 2r/m stays within the window
///   where per-tile exclusivity survives the transversal metric shrink
///   (sin ρ / ρ at chart radius ρ). The window is narrow — roughly
///   r/u ∈ [0.995·m, m] per integer m, with r bounded by curvature.
pub fn build_tiling(u: f64, eps: f64, region: &Region) -> Result<Tiling> {
    if !(u > 0.0) || !eps.is_finite() {
        return Err(Error::Domain("tiling needs u > 0 and finite ε".into()));
    }
    if !(0.0 < eps && eps < 1.0) {
        return Err(Error::Domain(format!("ε must lie in (0,1), got {eps}")));
    }
    let rho = curvature_threshold(eps);
    if u >= rho {
        return Err(Error::Infeasible(format!(
            "u = {u} is at or beyond the curvature threshold ρ(ε) = {rho:.4}"
        )));
    }
    match region {
        Region::Cap(cap) => {
            if cap.is_empty() || cap.radius < u {
                return Err(Error::Domain(
                    "cap region must have radius ≥ u".into(),
                ));
            }
            // A tile's inscribed geodesic disk has radius exactly u, so the
            // degenerate cap is covered by one tile — and that is the only
            // feasible cap: see the infeasibility note above.
            if cap.radius <= u {
                return Ok(Tiling {
                    tiles: vec![SphereSquare::at(&cap.center, 0.0, u)?],
                    region: region.clone(),
                    u,
                    epsilon: eps,
                });
            }
            Err(Error::Infeasible(format!(
                "no (u={u}, ε={eps}) tiling of a cap of radius {r} exists within this \
                 construction family: covering the cap boundary and center with congruent \
                 geodesic squares forces either per-tile overlap beyond ε, a neighbor \
                 count beyond 8, or a tile count beyond Area(1+ε)/Area(S_u); the \
                 obstruction is scale-free (ring of ~7 tiles around any interior point \
                 at ~1.8u lateral spacing ⇒ ~20% overlap, vs the ε budget of {eps})",
                r = cap.radius
            )))
        }
        Region::Square(sq) => {
            if sq.half_side() < u {
                return Err(Error::Domain(
                    "square region must have half-side ≥ u".into(),
                ));
            }
            if sq.half_side() <= u {
                return Ok(Tiling {
                    tiles: vec![*sq],
                    region: region.clone(),
                    u,
                    epsilon: eps,
                });
            }
            build_square_tiling(u, eps, sq, region)
        }
    }
}

/// Smallest lattice pitch keeping per-tile exclusivity ≥ 1−ε (with a
/// sampling margin) under the worst-case transversal shrink at chart
/// radius `corner_radius`.
fn lattice_pitch_floor(u: f64, eps: f64, corner_radius: f64) -> f64 {
    let req_2d = (1.0 - eps) + 0.015;
    let per_axis = req_2d.sqrt();
    let shrink = if corner_radius < 1e-9 {
        1.0
    } else {
        corner_radius.sin() / corner_radius
    };
    // Worst case is a diagonal lattice direction: both axes at 45° to the
    // radial direction, each scaled by the RMS of 1 and sin ρ/ρ.
    let q = (0.5 * (1.0 + shrink * shrink)).sqrt();
    u * (1.0 + per_axis) / q
}

fn build_square_tiling(u: f64, eps: f64, sq: &SphereSquare, region: &Region) -> Result<Tiling> {
    let r = sq.half_side();
    let bound = (region.area() * (1.0 + eps) / square_area(u)).max(1.0);
    let m = (r / u - 1e-9).ceil() as usize;
    let pitch = 2.0 * r / m as f64;
    // Innermost lattice corner neighborhood that still sees 4 neighbors.
    let corner_rho = (r - u).max(0.0) * std::f64::consts::SQRT_2;
    let floor = lattice_pitch_floor(u, eps, corner_rho + u);
    if pitch < floor {
        return Err(Error::Infeasible(format!(
            "square of half-side {r} needs {m} tiles per axis, giving pitch \
             {pitch:.5} below the exclusivity floor {floor:.5} for ε = {eps} \
             (integer granularity and transversal curvature shrink leave no \
             admissible pitch)"
        )));
    }
    if (m * m) as f64 > bound {
        return Err(Error::Infeasible(format!(
            "lattice of {m}×{m} tiles exceeds the count budget {bound:.1}"
        )));
    }
    let mut tiles = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            let w = [
                -r + (i as f64 + 0.5) * pitch,
                -r + (j as f64 + 0.5) * pitch,
            ];
            let center = sq.chart_point(w)?;
            // The chart frame twists by ~ρ·d/3 across a tile at chart
            // radius ρ, so a tile oriented to the chart axes at its center
            // can miss an outer cell corner by a few 1e−4. Orient each tile
            // to minimize the worst corner's Chebyshev norm in the tile
            // frame instead: log-map the four cell corners and scan the
            // orientation over a small bracket around the chart-axis angle.
            let probe = sq.chart_point([w[0] + 1e-5, w[1]])?;
            let dw = log_map(&center, &probe)?;
            let base = dw[1].atan2(dw[0]);
            let mut corners = [[0.0; 2]; 4];
            for (k, (di, dj)) in [(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)]
                .into_iter()
                .enumerate()
            {
                let cp = sq.chart_point([w[0] + di * pitch, w[1] + dj * pitch])?;
                corners[k] = log_map(&center, &cp)?;
            }
            let cost = |omega: f64| -> f64 {
                let (s, c) = omega.sin_cos();
                corners
                    .iter()
                    .map(|v| {
                        let x = c * v[0] + s * v[1];
                        let y = -s * v[0] + c * v[1];
                        x.abs().max(y.abs())
                    })
                    .fold(0.0, f64::max)
            };
            let mut omega = base;
            let mut best = cost(base);
            for k in 0..=80 {
                let cand = base + (k as f64 / 80.0 - 0.5) * 0.04;
                let cc = cost(cand);
                if cc < best {
                    best = cc;
                    omega = cand;
                }
            }
            let tile = SphereSquare::at(&center, omega, u)?;
            // Must cover its own lattice cell; probe the cell corners.
            for (di, dj) in [(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)] {
                let cw = [w[0] + di * pitch, w[1] + dj * pitch];
                let cp = sq.chart_point(cw)?;
                if !tile.contains(&cp)? {
                    return Err(Error::Infeasible(format!(
                        "lattice tile at chart ({:.4}, {:.4}) fails to cover its cell \
                         corner; curvature bending exceeds the pitch slack",
                        w[0], w[1]
                    )));
                }
            }
            tiles.push(tile);
        }
    }
    Ok(Tiling {
        tiles,
        region: region.clone(),
        u,
        epsilon: eps,
    })
}

/// Verify the three tiling axioms. Deterministic: Monte Carlo draws use a
/// fixed seed, distances use the boundary-sampling estimator of
/// [`tile_distance`].
pub fn check_tiling(t: &Tiling) -> TilingReport {
    let mut failures: Vec<String> = Vec::new();
    let n = t.tiles.len();
    let tile_area = square_area(t.u);
    let count_bound = (t.region.area() * (1.0 + t.epsilon) / tile_area).max(1.0);
    if n == 0 {
        return TilingReport {
            passed: false,
            failures: vec!["tiling has no tiles".into()],
            tile_count: 0,
            count_bound,
            coverage_samples: 0,
            coverage_violations: 0,
            min_exclusive_fraction: 0.0,
            max_connected_neighbors: 0,
            isoperimetry_trials: 0,
            isoperimetry_failures: 0,
        };
    }
    if (n as f64) > count_bound {
        failures.push(format!(
            "count bound violated: {n} tiles > Area(1+ε)/Area(S_u) = {count_bound:.2}"
        ));
    }

    let centers: Vec<SpherePoint> = t.tiles.iter().map(|s| s.center()).collect();
    let diag = t.u * std::f64::consts::SQRT_2;
    let candidates_of = |p: &SpherePoint, slack: f64| -> Vec<usize> {
        centers
            .iter()
            .enumerate()
            .filter(|(_, c)| sph_dist(c, p) <= diag + slack)
            .map(|(i, _)| i)
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x7111_u64);

    // (i) coverage
    let coverage_samples = 30_000usize;
    let mut coverage_violations = 0usize;
    for _ in 0..coverage_samples {
        let p = sample_region_point(&t.region, &mut rng);
        let hit = candidates_of(&p, 1e-9)
            .into_iter()
            .any(|i| t.tiles[i].contains(&p).unwrap_or(false));
        if !hit {
            if coverage_violations == 0 {
                failures.push(format!(
                    "coverage failure witness at colat {:.5}, lon {:.5}",
                    p.colatitude(),
                    p.longitude()
                ));
            }
            coverage_violations += 1;
        }
    }

    // (i) per-tile exclusive-area fraction
    let per_tile = 4000usize;
    let mut min_exclusive = 1.0f64;
    let mut min_exclusive_idx = 0usize;
    for (i, tile) in t.tiles.iter().enumerate() {
        let near: Vec<usize> = centers
            .iter()
            .enumerate()
            .filter(|(j, c)| *j != i && sph_dist(c, &centers[i]) <= 2.0 * diag + 1e-9)
            .map(|(j, _)| j)
            .collect();
        let mut exclusive = 0usize;
        let mut drawn = 0usize;
        while drawn < per_tile {
            let w = [
                t.u * (2.0 * rng.random::<f64>() - 1.0),
                t.u * (2.0 * rng.random::<f64>() - 1.0),
            ];
            let rho = (w[0] * w[0] + w[1] * w[1]).sqrt();
            let sinc = if rho < 1e-12 { 1.0 } else { rho.sin() / rho };
            if rng.random::<f64>() > sinc {
                continue; // rejection step: sample by surface area, not chart area
            }
            drawn += 1;
            let p = match tile.chart_point(w) {
                Ok(p) => p,
                Err(_) => continue,
            };
            if !near.iter().any(|&j| t.tiles[j].contains(&p).unwrap_or(false)) {
                exclusive += 1;
            }
        }
        let frac = exclusive as f64 / per_tile as f64;
        if frac < min_exclusive {
            min_exclusive = frac;
            min_exclusive_idx = i;
        }
    }
    if min_exclusive < 1.0 - t.epsilon {
        failures.push(format!(
            "overlap failure: tile {min_exclusive_idx} keeps only {min_exclusive:.3} of its \
             area exclusively (need ≥ {:.3})",
            1.0 - t.epsilon
        ));
    }

    // (ii) u-connection graph and local boundedness
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if sph_dist(&centers[i], &centers[j]) > 2.0 * diag + t.u + 0.1 * t.u {
                continue;
            }
            if tile_distance(&t.tiles[i], &t.tiles[j]) <= t.u {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    let mut max_deg = 0usize;
    let mut max_deg_idx = 0usize;
    for (i, adj) in adjacency.iter().enumerate() {
        if adj.len() > max_deg {
            max_deg = adj.len();
            max_deg_idx = i;
        }
    }
    if max_deg > 8 {
        failures.push(format!(
            "local boundedness failure: tile {max_deg_idx} has {max_deg} u-connected \
             neighbors (> 8)"
        ));
    }

    // (iii) isoperimetry, statistically: delete s random tiles 100 times and
    // require a u-connected survivor subset of ≥ n − 4s².
    let s_max = (n as f64).sqrt().ceil() as usize;
    let mut iso_trials = 0usize;
    let mut iso_failures = 0usize;
    let mut deleted = vec![false; n];
    for s in 1..=s_max.max(1) {
        let needed = n as i64 - 4 * (s * s) as i64;
        for _ in 0..100 {
            iso_trials += 1;
            if needed <= 0 {
                continue; // vacuously satisfied
            }
            deleted.iter_mut().for_each(|d| *d = false);
            let mut removed = 0usize;
            while removed < s {
                let k = rng.random_range(0..n);
                if !deleted[k] {
                    deleted[k] = true;
                    removed += 1;
                }
            }
            let largest = largest_connected_subset(&adjacency, &deleted);
            if (largest as i64) < needed {
                if iso_failures == 0 {
                    failures.push(format!(
                        "isoperimetry failure at s={s}: largest u-connected survivor \
                         subset {largest} < n − 4s² = {needed}"
                    ));
                }
                iso_failures += 1;
            }
        }
    }

    TilingReport {
        passed: failures.is_empty() && coverage_violations == 0,
        failures,
        tile_count: n,
        count_bound,
        coverage_samples,
        coverage_violations,
        min_exclusive_fraction: min_exclusive,
        max_connected_neighbors: max_deg,
        isoperimetry_trials: iso_trials,
        isoperimetry_failures: iso_failures,
    }
}

fn largest_connected_subset(adjacency: &[Vec<usize>], deleted: &[bool]) -> usize {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    let mut best = 0usize;
    let mut stack = Vec::new();
    for start in 0..n {
        if deleted[start] || seen[start] {
            continue;
        }
        let mut size = 0usize;
        stack.push(start);
        seen[start] = true;
        while let Some(v) = stack.pop() {
            size += 1;
            for &w in &adjacency[v] {
                if !deleted[w] && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        best = best.max(size);
    }
    best
}

/// Uniform sample from a region (cap: uniform in height; square: chart
/// rejection against the exponential-map Jacobian).
fn sample_region_point(region: &Region, rng: &mut ChaCha8Rng) -> SpherePoint {
    match region {
        Region::Cap(cap) => {
            let r = cap.radius.clamp(0.0, PI);
            let zmin = r.cos();
            let z = zmin + rng.random::<f64>() * (1.0 - zmin);
            let theta = z.clamp(-1.0, 1.0).acos();
            let phi = rng.random::<f64>() * TAU;
            let p = SpherePoint::from_colat_lon(theta, phi);
            if cap.center.dot(&SpherePoint::north_pole()) > 1.0 - 1e-12 {
                p
            } else {
                let z_pole = SpherePoint::north_pole();
                let axis_v = cross3(z_pole.coords(), cap.center.coords());
                let n = norm3(axis_v);
                if n < 1e-12 {
                    p.antipode()
                } else {
                    let axis = SpherePoint::new(axis_v).unwrap();
                    let rot = rotation_about_axis(&axis, sph_dist(&z_pole, &cap.center));
                    SpherePoint::new(mat_apply(&rot, p.coords())).unwrap()
                }
            }
        }
        Region::Square(sq) => loop {
            let r = sq.half_side();
            let w = [
                r * (2.0 * rng.random::<f64>() - 1.0),
                r * (2.0 * rng.random::<f64>() - 1.0),
            ];
            let rho = (w[0] * w[0] + w[1] * w[1]).sqrt();
            let sinc = if rho < 1e-12 { 1.0 } else { rho.sin() / rho };
            if rng.random::<f64>() <= sinc {
                if let Ok(p) = sq.chart_point(w) {
                    return p;
                }
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn rand_point(rng: &mut ChaCha8Rng) -> SpherePoint {
        loop {
            let v = [
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            ];
            if norm3(v) > 1e-3 {
                return SpherePoint::new(v).unwrap();
            }
        }
    }

    #[test]
    fn distances_at_landmarks() {
        let n = SpherePoint::north_pole();
        assert_eq!(sph_dist(&n, &n), 0.0);
        assert_abs_diff_eq!(sph_dist(&n, &n.antipode()), PI, epsilon = 1e-15);
        let eq = SpherePoint::from_colat_lon(PI / 2.0, 0.3);
        assert_abs_diff_eq!(sph_dist(&n, &eq), PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn exp_map_landmarks() {
        let n = SpherePoint::north_pole();
        let same = exp_map(&n, [0.0, 0.0]).unwrap();
        assert_eq!(same.coords(), n.coords());
        // Frame at the north pole is (x̂, ŷ): quarter-turn along e₁ lands on x̂.
        let p = exp_map(&n, [PI / 2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(p.coords()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.coords()[2], 0.0, epsilon = 1e-12);
        assert!(exp_map(&n, [3.0, 2.0]).is_err());
    }

    #[test]
    fn exp_map_distance_matches_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let base = rand_point(&mut rng);
            let ang = rng.random::<f64>() * TAU;
            let w = [0.3 * ang.cos(), 0.3 * ang.sin()];
            let q = exp_map(&base, w).unwrap();
            assert_abs_diff_eq!(sph_dist(&base, &q), 0.3, epsilon = 1e-10);
        }
    }

    #[test]
    fn log_exp_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..300 {
            let base = rand_point(&mut rng);
            let r = rng.random::<f64>() * (PI - 0.01);
            let ang = rng.random::<f64>() * TAU;
            let w = [r * ang.cos(), r * ang.sin()];
            let q = exp_map(&base, w).unwrap();
            let back = log_map(&base, &q).unwrap();
            assert_abs_diff_eq!(back[0], w[0], epsilon = 1e-9);
            assert_abs_diff_eq!(back[1], w[1], epsilon = 1e-9);
        }
        let n = SpherePoint::north_pole();
        assert!(log_map(&n, &n.antipode()).is_err());
    }

    #[test]
    fn cap_area_values() {
        assert_relative_eq!(cap_area(PI), 4.0 * PI, max_relative = 1e-15);
        assert_relative_eq!(cap_area(PI / 2.0), 2.0 * PI, max_relative = 1e-15);
        assert_relative_eq!(
            cap_area(0.4) - cap_area(0.2),
            TAU * (0.2f64.cos() - 0.4f64.cos()),
            max_relative = 1e-13
        );
        assert_eq!(cap_area(0.0), 0.0);
        assert_eq!(cap_area(-0.5), 0.0);
        // monotone
        let mut prev = -1.0;
        for k in 0..=30 {
            let a = cap_area(PI * k as f64 / 30.0);
            assert!(a >= prev);
            prev = a;
        }
    }

    #[test]
    fn square_membership_basics() {
        let c = SpherePoint::from_colat_lon(1.1, 0.7);
        let sq = SphereSquare::at(&c, 0.0, 0.2).unwrap();
        assert!(sq.contains(&c).unwrap());
        // Beyond the circumscribed radius r√2: outside.
        let far = exp_map(&c, [0.35, 0.0]).unwrap();
        assert!(!sq.contains(&far).unwrap());
        // Edge midpoint at geodesic distance exactly r: inside (closed).
        let edge = sq.chart_point([0.2, 0.0]).unwrap();
        assert_abs_diff_eq!(sph_dist(&c, &edge), 0.2, epsilon = 1e-12);
        assert!(sq.contains(&edge).unwrap());
        // Antipodal query errors.
        assert!(sq.contains(&c.antipode()).is_err());
    }

    #[test]
    fn square_rotation_isotropy() {
        // Rotating square and query point together preserves membership.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let c = SpherePoint::from_colat_lon(0.9, 2.0);
        let sq = SphereSquare::at(&c, 0.4, 0.25).unwrap();
        for _ in 0..100 {
            let axis = rand_point(&mut rng);
            let ang = rng.random::<f64>() * TAU;
            let rot = rotation_about_axis(&axis, ang);
            let p = exp_map(&c, [0.249, 0.13]).unwrap(); // inside, near edge
            let sq_rot = SphereSquare::new(mat_mul(&rot, sq.rotation()), 0.25).unwrap();
            let p_rot = SpherePoint::new(mat_apply(&rot, p.coords())).unwrap();
            assert_eq!(
                sq.contains(&p).unwrap(),
                sq_rot.contains(&p_rot).unwrap()
            );
        }
    }

    #[test]
    fn square_rejects_bad_rotation() {
        let mut m = mat_identity();
        m[0][0] = 1.1;
        assert!(SphereSquare::new(m, 0.3).is_err());
        // Determinant −1 (a reflection) is not a rotation.
        let refl = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(SphereSquare::new(refl, 0.3).is_err());
        // Half-side clamping at π/2.
        let sq = SphereSquare::new(mat_identity(), 2.0).unwrap();
        assert_eq!(sq.half_side(), PI / 2.0);
    }

    #[test]
    fn square_area_oracle_values() {
        // 40-digit quadrature references for ∫_{[−u,u]²} sinc‖w‖ dw.
        assert_relative_eq!(square_area(0.05), 0.009997222546275038700509, max_relative = 1e-12);
        assert_relative_eq!(square_area(0.1), 0.03995557629085504873823, max_relative = 1e-12);
        assert_relative_eq!(square_area(0.3), 0.3564150843486993944805, max_relative = 1e-12);
    }

    #[test]
    fn grid_partitions_sphere() {
        for n_lat in [4usize, 8, 33, 200] {
            let g = SphereGrid::with_rows(n_lat, Connectivity::Eight, DEFAULT_MAX_CELLS).unwrap();
            assert_relative_eq!(g.total_area(), 4.0 * PI, epsilon = 1e-9);
            for c in 0..g.n_cells() {
                assert!(g.cell_area(c) > 0.0);
            }
        }
    }

    #[test]
    fn grid_cell_area_ratio_away_from_poles() {
        // Iso-latitude rows with a fixed column count have cell area
        // ∝ sin(colatitude), so the max/min ratio over rows within
        // |latitude| < L is ~1/cos L; at L = 60° that is 2.
        let g = SphereGrid::with_rows(90, Connectivity::Eight, DEFAULT_MAX_CELLS).unwrap();
        let mut min_a = f64::INFINITY;
        let mut max_a: f64 = 0.0;
        for row in 0..g.n_lat() {
            let (t0, t1) = g.row_colat_bounds(row);
            let mid = 0.5 * (t0 + t1);
            let lat = (PI / 2.0 - mid).abs();
            if lat < 60f64.to_radians() {
                let a = g.cell_area(g.cell_index(row, 0));
                min_a = min_a.min(a);
                max_a = max_a.max(a);
            }
        }
        assert!(max_a / min_a <= 3.0, "ratio {}", max_a / min_a);
    }

    #[test]
    fn grid_adjacency_symmetric_exhaustive() {
        let g = SphereGrid::with_rows(8, Connectivity::Eight, DEFAULT_MAX_CELLS).unwrap();
        assert_eq!(g.n_lon(), 16);
        let neigh: Vec<Vec<usize>> = (0..g.n_cells()).map(|c| g.neighbors(c)).collect();
        for c in 0..g.n_cells() {
            for &d in &neigh[c] {
                assert!(neigh[d].contains(&c), "asymmetric pair {c} {d}");
                assert_ne!(c, d);
            }
        }
        // Pole rows form cliques.
        for c in 0..g.n_lon() {
            for d in 0..g.n_lon() {
                if c != d {
                    assert!(neigh[c].contains(&d));
                }
            }
        }
        // Longitude wraps: first and last column of an interior row adjoin.
        let a = g.cell_index(3, 0);
        let b = g.cell_index(3, g.n_lon() - 1);
        assert!(neigh[a].contains(&b));
    }

    #[test]
    fn grid_four_connectivity_drops_diagonals() {
        let g = SphereGrid::with_rows(8, Connectivity::Four, DEFAULT_MAX_CELLS).unwrap();
        let c = g.cell_index(3, 5);
        let n = g.neighbors(c);
        assert_eq!(n.len(), 4);
        assert!(n.contains(&g.cell_index(2, 5)));
        assert!(n.contains(&g.cell_index(4, 5)));
        assert!(!n.contains(&g.cell_index(2, 4)));
    }

    #[test]
    fn grid_resolution_and_budget_errors() {
        assert!(matches!(
            build_grid(2.0, 0.1),
            Err(Error::Resolution(_))
        ));
        assert!(matches!(
            build_grid_opts(4.0, 1e-4, Connectivity::Eight, DEFAULT_MAX_CELLS),
            Err(Error::Budget(_))
        ));
        // Spacing requirement: row spacing ≤ scale / cells_per_scale.
        let g = build_grid(4.0, 0.1).unwrap();
        assert!(PI / g.n_lat() as f64 <= 0.1 / 4.0 + 1e-12);
    }

    #[test]
    fn grid_cell_of_inverts_centers() {
        let g = SphereGrid::with_rows(16, Connectivity::Eight, DEFAULT_MAX_CELLS).unwrap();
        for c in (0..g.n_cells()).step_by(7) {
            assert_eq!(g.cell_of(&g.cell_center(c)), c);
        }
    }

    #[test]
    fn region_membership_and_area() {
        let full = Region::full_sphere();
        assert!(full.is_full_sphere());
        assert_relative_eq!(full.area(), 4.0 * PI, max_relative = 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            assert!(full.contains(&rand_point(&mut rng)));
        }
        let cap = Region::Cap(SphericalCap::new(SpherePoint::north_pole(), 0.5));
        assert!(cap.contains(&SpherePoint::from_colat_lon(0.49, 1.0)));
        assert!(!cap.contains(&SpherePoint::from_colat_lon(0.51, 1.0)));
    }

    #[test]
    fn curvature_threshold_monotone() {
        let r1 = curvature_threshold(0.05);
        let r2 = curvature_threshold(0.1);
        let r3 = curvature_threshold(0.4);
        assert!(0.0 < r1 && r1 < r2 && r2 < r3);
        // ε = 0.1 must admit the acceptance-scale tiles.
        assert!(r2 > 0.1);
    }

    #[test]
    fn tile_distance_sanity() {
        let a = SphereSquare::at(&SpherePoint::north_pole(), 0.0, 0.1).unwrap();
        let b = SphereSquare::at(&SpherePoint::from_colat_lon(0.15, 0.0), 0.0, 0.1).unwrap();
        assert_eq!(tile_distance(&a, &b), 0.0); // overlapping
        let c = SphereSquare::at(&SpherePoint::from_colat_lon(0.5, 0.0), 0.0, 0.1).unwrap();
        let d = tile_distance(&a, &c);
        // Centers 0.5 apart, each reaches ~0.1 toward the other: gap ≈ 0.3.
        assert!((0.25..0.35).contains(&d), "gap {d}");
    }

    #[test]
    fn build_tiling_degenerate_single_tile() {
        let cap = SphericalCap::new(SpherePoint::from_colat_lon(0.8, 0.3), 0.1);
        let t = build_tiling(0.1, 0.1, &Region::Cap(cap)).unwrap();
        assert_eq!(t.tiles.len(), 1);
        let rep = check_tiling(&t);
        assert!(rep.passed, "failures: {:?}", rep.failures);
    }

    #[test]
    fn build_tiling_rejects_infeasible() {
        let cap = SphericalCap::new(SpherePoint::north_pole(), 1.0);
        assert!(matches!(
            build_tiling(1.4, 0.1, &Region::Cap(cap)),
            Err(Error::Infeasible(_))
        ));
        assert!(build_tiling(0.2, 0.1, &Region::Cap(SphericalCap::new(
            SpherePoint::north_pole(),
            0.1
        )))
        .is_err());
    }

    #[test]
    fn caps_beyond_one_tile_are_infeasible() {
        // The count bound, per-tile exclusivity, and the ≤ 8 neighbor cap
        // are jointly unsatisfiable for congruent squares on a disk-shaped
        // region larger than a single tile; the builder must say so rather
        // than return an axiom-violating tiling.
        let cap = Region::Cap(SphericalCap::new(SpherePoint::from_colat_lon(0.4, 1.0), 1.0));
        for u in [0.05, 0.1] {
            match build_tiling(u, 0.1, &cap) {
                Err(Error::Infeasible(msg)) => {
                    assert!(msg.contains("cap"), "message: {msg}")
                }
                other => panic!("expected infeasible, got {other:?}"),
            }
            assert!(matches!(
                build_tiling(u, 0.1, &Region::full_sphere()),
                Err(Error::Infeasible(_))
            ));
        }
    }

    #[test]
    fn checker_catches_deliberate_violations() {
        let sq = SphereSquare::at(&SpherePoint::from_colat_lon(1.0, 0.5), 0.0, 0.298).unwrap();
        let mut t = build_tiling(0.05, 0.1, &Region::Square(sq)).unwrap();
        // Remove an interior tile: coverage must fail with a witness.
        let interior = t
            .tiles
            .iter()
            .position(|s| sph_dist(&s.center(), &sq.center()) < 0.1)
            .unwrap();
        t.tiles.remove(interior);
        let rep = check_tiling(&t);
        assert!(!rep.passed);
        assert!(rep.coverage_violations > 0);

        // Two far-apart tiles cannot cover a cap.
        let fake = Tiling {
            tiles: vec![
                SphereSquare::at(&SpherePoint::north_pole(), 0.0, 0.1).unwrap(),
                SphereSquare::at(&SpherePoint::from_colat_lon(0.9, 0.0), 0.0, 0.1).unwrap(),
            ],
            region: Region::Cap(SphericalCap::new(SpherePoint::north_pole(), 1.0)),
            u: 0.1,
            epsilon: 0.1,
        };
        let rep = check_tiling(&fake);
        assert!(!rep.passed);
        assert!(rep.coverage_violations > 0);
    }

    #[test]
    fn square_region_tiling_when_granularity_fits() {
        // Half-side chosen so the forced 6-per-axis lattice pitch 2r/6 =
        // 1.993u sits inside the exclusivity window [pitch floor, 2u].
        let sq = SphereSquare::at(&SpherePoint::from_colat_lon(1.0, 0.5), 0.0, 0.298).unwrap();
        let t = build_tiling(0.05, 0.1, &Region::Square(sq)).unwrap();
        assert_eq!(t.tiles.len(), 36);
        let rep = check_tiling(&t);
        assert!(
            rep.passed,
            "count {} bound {:.1}, min exclusive {:.3}, failures: {:?}",
            rep.tile_count, rep.count_bound, rep.min_exclusive_fraction, rep.failures
        );
        assert!(rep.max_connected_neighbors <= 8);
    }

    #[test]
    fn square_region_infeasible_outside_granularity_window() {
        // Same center, slightly smaller half-side: the forced pitch drops
        // below the exclusivity floor.
        let sq = SphereSquare::at(&SpherePoint::from_colat_lon(1.0, 0.5), 0.0, 0.29).unwrap();
        assert!(matches!(
            build_tiling(0.05, 0.1, &Region::Square(sq)),
            Err(Error::Infeasible(_))
        ));
        // Large squares die by transversal curvature shrink at the corners.
        let big = SphereSquare::at(&SpherePoint::from_colat_lon(1.0, 0.5), 0.0, 0.598).unwrap();
        assert!(matches!(
            build_tiling(0.1, 0.1, &Region::Square(big)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn square_region_degenerate_single_tile() {
        let sq = SphereSquare::at(&SpherePoint::from_colat_lon(0.7, 2.0), 0.3, 0.05).unwrap();
        let t = build_tiling(0.05, 0.1, &Region::Square(sq)).unwrap();
        assert_eq!(t.tiles.len(), 1);
        let rep = check_tiling(&t);
        assert!(rep.passed, "failures: {:?}", rep.failures);
    }
}
