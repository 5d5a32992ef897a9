//! Excursion sets and their component structure: masks, connected-component
//! labeling on spherical and planar grids, giant-component selection by area
//! or diameter, and the connection events used by the Monte Carlo campaigns
//! (annulus crossings, arms, truncated arms, and the local
//! existence–uniqueness event over a family of caps and squares).
//!
//! Conventions fixed here:
//! - The excursion set at level `t` is the sub-level set `{x : f(x) ≤ t}`.
//! - Component representatives are the smallest member cell index, which the
//!   union–find guarantees by always rooting sets at their minimum element;
//!   labels are assigned in ascending representative order. This makes every
//!   labeling byte-deterministic and lets ties break without randomness.
//! - Planar events are evaluated with 8-connectivity.

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Connectivity, SphereGrid, SpherePoint, SphereSquare};
use crate::samplers::{FieldSample, PlanarGrid};

/// Largest component size accepted for exact O(k²) diameter computation.
pub const EXACT_DIAMETER_CELL_CAP: usize = 20_000;
/// Boundary subsample size used by approximate diameters.
pub const DIAMETER_SUBSAMPLE_TARGET: usize = 2_000;
/// Minimum number of grid cells the uniqueness scale δ·r must span.
pub const EU_MIN_CELLS_ACROSS_SCALE: f64 = 4.0;
/// Upper bound for the uniqueness tolerance δ.
pub const EU_MAX_DELTA: f64 = 0.01;

// ---------------------------------------------------------------------------
// Excursion masks
// ---------------------------------------------------------------------------

/// Boolean sub-level mask of a sampled field: `inside[c]` is true when the
/// value in cell `c` is ≤ the level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExcursionMask {
    /// Identity of the grid the mask lives on.
    pub grid_ref: String,
    pub level: f64,
    pub inside: Vec<bool>,
}

/// Sub-level mask `{f ≤ level}` of a sampled field (spherical or planar).
pub fn excursion_mask(sample: &FieldSample, level: f64) -> ExcursionMask {
    ExcursionMask {
        grid_ref: sample.grid_ref.clone(),
        level,
        inside: sample.values.iter().map(|&v| v <= level).collect(),
    }
}

impl ExcursionMask {
    pub fn count_inside(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    /// True when every inside cell of `self` is also inside `other`
    /// (masks of the same sample at increasing levels nest this way).
    pub fn is_subset_of(&self, other: &ExcursionMask) -> bool {
        self.grid_ref == other.grid_ref
            && self.inside.len() == other.inside.len()
            && self
                .inside
                .iter()
                .zip(&other.inside)
                .all(|(&a, &b)| !a || b)
    }
}

fn check_mask(mask: &ExcursionMask, descriptor: &str, n_cells: usize) -> Result<()> {
    if mask.grid_ref != descriptor {
        return Err(Error::Consistency(format!(
            "mask belongs to grid '{}' but was labeled on '{}'",
            mask.grid_ref, descriptor
        )));
    }
    if mask.inside.len() != n_cells {
        return Err(Error::Consistency(format!(
            "mask has {} cells, grid has {}",
            mask.inside.len(),
            n_cells
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Union–find with deterministic minimum-index roots
// ---------------------------------------------------------------------------

const UF_ABSENT: u32 = u32::MAX;

/// Union–find over cell indices in which the root of every set is its
/// smallest active element; combined with ascending scans this yields
/// deterministic representatives and label order. Path compression keeps
/// finds effectively constant-time.
struct MinUnionFind {
    parent: Vec<u32>,
}

impl MinUnionFind {
    fn new(n: usize) -> Self {
        MinUnionFind {
            parent: vec![UF_ABSENT; n],
        }
    }

    #[inline]
    fn activate(&mut self, i: u32) {
        self.parent[i as usize] = i;
    }

    #[inline]
    fn find(&mut self, start: u32) -> u32 {
        let mut root = start;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut i = start;
        while self.parent[i as usize] != root {
            let next = self.parent[i as usize];
            self.parent[i as usize] = root;
            i = next;
        }
        root
    }

    #[inline]
    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return;
        }
        if ra < rb {
            self.parent[rb as usize] = ra;
        } else {
            self.parent[ra as usize] = rb;
        }
    }
}

// ---------------------------------------------------------------------------
// Component labeling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComponentInfo {
    pub id: u32,
    /// Smallest cell index of the component.
    pub representative: usize,
    pub cell_count: usize,
    /// Sum of the member cell areas.
    pub area: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentLabeling {
    pub grid_ref: String,
    pub level: f64,
    /// One entry per grid cell: `Some(id)` inside, `None` outside.
    pub labels: Vec<Option<u32>>,
    /// Components sorted by representative; `components[i].id == i`.
    pub components: Vec<ComponentInfo>,
}

impl ComponentLabeling {
    pub fn component_cells(&self, id: u32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| if l == Some(id) { Some(i) } else { None })
            .collect()
    }
}

/// Connected components of a mask on a spherical grid, under the grid's own
/// adjacency (pole rows are cliques through the pole). Equivalent to a BFS
/// over `SphereGrid::neighbors`, but via union–find with path compression.
pub fn label_components(mask: &ExcursionMask, grid: &SphereGrid) -> Result<ComponentLabeling> {
    check_mask(mask, &grid.descriptor(), grid.n_cells())?;
    let n_lat = grid.n_lat();
    let n_lon = grid.n_lon();
    let inside = &mask.inside;
    let mut uf = MinUnionFind::new(grid.n_cells());
    for (i, &b) in inside.iter().enumerate() {
        if b {
            uf.activate(i as u32);
        }
    }

    // Pole rows: every pair of inside cells in the row is adjacent (the row
    // closes up through the pole), so anchor them all to the first one.
    for row in [0, n_lat - 1] {
        let base = row * n_lon;
        let mut anchor: Option<u32> = None;
        for col in 0..n_lon {
            if inside[base + col] {
                let c = (base + col) as u32;
                match anchor {
                    None => anchor = Some(c),
                    Some(a) => uf.union(a, c),
                }
            }
        }
    }

    // Same-row edges in interior rows (wrapping in longitude).
    for row in 1..n_lat.saturating_sub(1) {
        let base = row * n_lon;
        for col in 0..n_lon {
            if !inside[base + col] {
                continue;
            }
            let right = base + (col + 1) % n_lon;
            if inside[right] {
                uf.union((base + col) as u32, right as u32);
            }
        }
    }

    // Downward edges between adjacent rows.
    for row in 0..n_lat - 1 {
        let base = row * n_lon;
        let below = base + n_lon;
        for col in 0..n_lon {
            if !inside[base + col] {
                continue;
            }
            let c = (base + col) as u32;
            match grid.connectivity() {
                Connectivity::Four => {
                    if inside[below + col] {
                        uf.union(c, (below + col) as u32);
                    }
                }
                Connectivity::Eight => {
                    for dc in [n_lon - 1, 0, 1] {
                        let d = below + (col + dc) % n_lon;
                        if inside[d] {
                            uf.union(c, d as u32);
                        }
                    }
                }
            }
        }
    }

    Ok(finalize_labeling(mask, uf, |cell| grid.cell_area(cell)))
}

/// Connected components of a mask on a planar grid (no wraparound);
/// cell areas are the flat cell measure `spacing²`.
pub fn label_components_planar(
    mask: &ExcursionMask,
    grid: &PlanarGrid,
    connectivity: Connectivity,
) -> Result<ComponentLabeling> {
    check_mask(mask, &grid.descriptor(), grid.n_cells())?;
    let n = grid.n();
    let inside = &mask.inside;
    let mut uf = MinUnionFind::new(grid.n_cells());
    for (i, &b) in inside.iter().enumerate() {
        if b {
            uf.activate(i as u32);
        }
    }
    for iy in 0..n {
        let base = iy * n;
        for ix in 0..n {
            if !inside[base + ix] {
                continue;
            }
            let c = (base + ix) as u32;
            if ix + 1 < n && inside[base + ix + 1] {
                uf.union(c, c + 1);
            }
            if iy + 1 < n {
                let below = base + n;
                match connectivity {
                    Connectivity::Four => {
                        if inside[below + ix] {
                            uf.union(c, (below + ix) as u32);
                        }
                    }
                    Connectivity::Eight => {
                        let lo = ix.saturating_sub(1);
                        let hi = (ix + 1).min(n - 1);
                        for jx in lo..=hi {
                            if inside[below + jx] {
                                uf.union(c, (below + jx) as u32);
                            }
                        }
                    }
                }
            }
        }
    }
    let area = grid.spacing() * grid.spacing();
    Ok(finalize_labeling(mask, uf, |_| area))
}

fn finalize_labeling(
    mask: &ExcursionMask,
    mut uf: MinUnionFind,
    cell_area: impl Fn(usize) -> f64,
) -> ComponentLabeling {
    let n = mask.inside.len();
    let mut labels = vec![None; n];
    let mut components: Vec<ComponentInfo> = Vec::new();
    for i in 0..n {
        if !mask.inside[i] {
            continue;
        }
        let root = uf.find(i as u32);
        // Ascending scan + minimum roots: the first member of each set we
        // meet is its root, so ids ascend with representatives.
        let id = if root == i as u32 {
            let id = components.len() as u32;
            components.push(ComponentInfo {
                id,
                representative: i,
                cell_count: 0,
                area: 0.0,
            });
            id
        } else {
            labels[root as usize].expect("root precedes members in the scan")
        };
        let info = &mut components[id as usize];
        info.cell_count += 1;
        info.area += cell_area(i);
        labels[i] = Some(id);
    }
    ComponentLabeling {
        grid_ref: mask.grid_ref.clone(),
        level: mask.level,
        labels,
        components,
    }
}

// ---------------------------------------------------------------------------
// Diameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiameterMode {
    /// All-pairs geodesic maximum; refused beyond [`EXACT_DIAMETER_CELL_CAP`].
    Exact,
    /// Boundary cells thinned to ≤ [`DIAMETER_SUBSAMPLE_TARGET`], then
    /// all-pairs on the subsample. Never exceeds the exact diameter.
    Subsampled,
}

#[inline]
fn chord_sq(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn chord_to_geodesic(chord: f64) -> f64 {
    2.0 * (0.5 * chord).clamp(-1.0, 1.0).asin()
}

fn max_chord_sq(points: &[[f64; 3]]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let c = chord_sq(*a, *b);
            if c > best {
                best = c;
            }
        }
    }
    best
}

fn thin_to_target<T: Copy>(cells: &[T], target: usize) -> Vec<T> {
    if cells.len() <= target {
        return cells.to_vec();
    }
    let step = cells.len().div_ceil(target);
    cells.iter().step_by(step).copied().collect()
}

/// Geodesic diameter of a set of grid cells, measured between cell centers.
/// A single cell has diameter 0. In `Subsampled` mode the pairwise maximum
/// runs over boundary cells (cells with a neighbor outside the set), thinned
/// by index; a set with no boundary (the full sphere) falls back to a
/// thinning of all its cells.
pub fn component_diameter(cells: &[usize], grid: &SphereGrid, mode: DiameterMode) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::EmptyInput(
            "cannot measure the diameter of an empty cell set".into(),
        ));
    }
    let n_cells = grid.n_cells();
    if let Some(&bad) = cells.iter().find(|&&c| c >= n_cells) {
        return Err(Error::Domain(format!(
            "cell index {bad} out of range for a grid of {n_cells} cells"
        )));
    }
    let pool: Vec<usize> = match mode {
        DiameterMode::Exact => {
            if cells.len() > EXACT_DIAMETER_CELL_CAP {
                return Err(Error::Budget(format!(
                    "exact diameter over {} cells exceeds the {}-cell cap; use Subsampled",
                    cells.len(),
                    EXACT_DIAMETER_CELL_CAP
                )));
            }
            cells.to_vec()
        }
        DiameterMode::Subsampled => {
            let member: HashSet<usize> = cells.iter().copied().collect();
            let boundary: Vec<usize> = cells
                .iter()
                .copied()
                .filter(|&c| grid.neighbors(c).iter().any(|nb| !member.contains(nb)))
                .collect();
            let basis = if boundary.is_empty() { cells } else { &boundary[..] };
            thin_to_target(basis, DIAMETER_SUBSAMPLE_TARGET)
        }
    };
    let coords: Vec<[f64; 3]> = pool.iter().map(|&c| grid.cell_center(c).coords()).collect();
    Ok(chord_to_geodesic(max_chord_sq(&coords).sqrt()))
}

// ---------------------------------------------------------------------------
// Giant component
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GiantCriterion {
    /// Largest total cell area.
    Area,
    /// Largest geodesic diameter (subsampled).
    Diameter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GiantComponent {
    pub id: u32,
    pub representative: usize,
    pub cell_count: usize,
    pub area: f64,
    /// Subsampled geodesic diameter of the winning component.
    pub diameter: f64,
}

/// Whether `cell` has any grid neighbor carrying a label other than
/// `Some(id)`; mirrors `SphereGrid::neighbors` without allocating.
fn is_boundary_cell(labels: &[Option<u32>], grid: &SphereGrid, cell: usize, id: u32) -> bool {
    let n_lat = grid.n_lat();
    let n_lon = grid.n_lon();
    let row = cell / n_lon;
    let col = cell % n_lon;
    let differs = |c2: usize| labels[c2] != Some(id);
    if row == 0 || row == n_lat - 1 {
        let base = row * n_lon;
        for c2 in base..base + n_lon {
            if c2 != cell && differs(c2) {
                return true;
            }
        }
        let adj = if row == 0 { 1 } else { row - 2 + 1 };
        let base2 = adj * n_lon;
        match grid.connectivity() {
            Connectivity::Four => differs(base2 + col),
            Connectivity::Eight => [n_lon - 1, 0, 1]
                .iter()
                .any(|&dc| differs(base2 + (col + dc) % n_lon)),
        }
    } else {
        let base = row * n_lon;
        if differs(base + (col + 1) % n_lon) || differs(base + (col + n_lon - 1) % n_lon) {
            return true;
        }
        for adj in [row - 1, row + 1] {
            let base2 = adj * n_lon;
            let hit = match grid.connectivity() {
                Connectivity::Four => differs(base2 + col),
                Connectivity::Eight => [n_lon - 1, 0, 1]
                    .iter()
                    .any(|&dc| differs(base2 + (col + dc) % n_lon)),
            };
            if hit {
                return true;
            }
        }
        false
    }
}

/// Subsampled diameters for every component of a labeling in one pass.
fn all_component_diameters(labeling: &ComponentLabeling, grid: &SphereGrid) -> Vec<f64> {
    let k = labeling.components.len();
    let mut boundary: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (cell, lab) in labeling.labels.iter().enumerate() {
        let Some(id) = *lab else { continue };
        if is_boundary_cell(&labeling.labels, grid, cell, id) {
            boundary[id as usize].push(cell);
        }
    }
    (0..k)
        .map(|slot| {
            let pool: Vec<usize> = if boundary[slot].is_empty() {
                // No boundary at all: the component covers the whole grid.
                thin_to_target(
                    &labeling.component_cells(slot as u32),
                    DIAMETER_SUBSAMPLE_TARGET,
                )
            } else {
                thin_to_target(&boundary[slot], DIAMETER_SUBSAMPLE_TARGET)
            };
            let coords: Vec<[f64; 3]> =
                pool.iter().map(|&c| grid.cell_center(c).coords()).collect();
            chord_to_geodesic(max_chord_sq(&coords).sqrt())
        })
        .collect()
}

/// The giant component of a labeling: largest by area or by (subsampled)
/// diameter, ties broken toward the smallest representative. Errors on an
/// empty labeling: an empty excursion set has no giant.
pub fn giant(
    labeling: &ComponentLabeling,
    grid: &SphereGrid,
    by: GiantCriterion,
) -> Result<GiantComponent> {
    if labeling.components.is_empty() {
        return Err(Error::EmptyInput(
            "the excursion set is empty; no giant component exists".into(),
        ));
    }
    if labeling.grid_ref != grid.descriptor() || labeling.labels.len() != grid.n_cells() {
        return Err(Error::Consistency(format!(
            "labeling belongs to grid '{}', not '{}'",
            labeling.grid_ref,
            grid.descriptor()
        )));
    }
    match by {
        GiantCriterion::Area => {
            // Components are ordered by representative, so a strict `>`
            // breaks area ties toward the smallest representative.
            let mut best = &labeling.components[0];
            for c in &labeling.components[1..] {
                if c.area > best.area {
                    best = c;
                }
            }
            let diameter = all_component_diameters(labeling, grid)[best.id as usize];
            Ok(GiantComponent {
                id: best.id,
                representative: best.representative,
                cell_count: best.cell_count,
                area: best.area,
                diameter,
            })
        }
        GiantCriterion::Diameter => {
            let diameters = all_component_diameters(labeling, grid);
            let mut best = 0usize;
            for (i, &d) in diameters.iter().enumerate() {
                if d > diameters[best] {
                    best = i;
                }
            }
            let info = &labeling.components[best];
            Ok(GiantComponent {
                id: info.id,
                representative: info.representative,
                cell_count: info.cell_count,
                area: info.area,
                diameter: diameters[best],
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

/// Connection events on excursion sets. Planar events use cell centers and
/// 8-connectivity; squares are sup-norm boxes centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    /// One component joins the closed square of half-side `half_side` to the
    /// complement of the open square of twice that half-side.
    AnnulusCross { half_side: f64 },
    /// The component of the origin's cell reaches Euclidean distance
    /// ≥ `radius` from the origin.
    Arm { radius: f64 },
    /// Arm whose component additionally stays strictly inside the centered
    /// window square of side `window`.
    TruncatedArm { radius: f64, window: f64 },
    /// Local existence–uniqueness near `center` at scale `radius` with
    /// tolerance `delta` (spherical grids only); see [`eu_event`].
    Eu {
        center: SpherePoint,
        radius: f64,
        delta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub kind: EventKind,
    pub level: f64,
}

impl EventSpec {
    pub fn ann_cross(half_side: f64, level: f64) -> Self {
        EventSpec {
            kind: EventKind::AnnulusCross { half_side },
            level,
        }
    }

    pub fn arm(radius: f64, level: f64) -> Self {
        EventSpec {
            kind: EventKind::Arm { radius },
            level,
        }
    }

    /// Truncated arm with the default window of eight arm radii.
    pub fn trunc_arm(radius: f64, level: f64) -> Self {
        EventSpec {
            kind: EventKind::TruncatedArm {
                radius,
                window: 8.0 * radius,
            },
            level,
        }
    }

    pub fn eu(center: SpherePoint, radius: f64, delta: f64, level: f64) -> Self {
        EventSpec {
            kind: EventKind::Eu {
                center,
                radius,
                delta,
            },
            level,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.level.is_finite() {
            return Err(Error::Domain(format!(
                "event level must be finite, got {}",
                self.level
            )));
        }
        match self.kind {
            EventKind::AnnulusCross { half_side } => {
                if !(half_side > 0.0) || !half_side.is_finite() {
                    return Err(Error::Domain(format!(
                        "crossing half-side must be positive and finite, got {half_side}"
                    )));
                }
            }
            EventKind::Arm { radius } => {
                if !(radius > 0.0) || !radius.is_finite() {
                    return Err(Error::Domain(format!(
                        "arm radius must be positive and finite, got {radius}"
                    )));
                }
            }
            EventKind::TruncatedArm { radius, window } => {
                if !(radius > 0.0) || !radius.is_finite() {
                    return Err(Error::Domain(format!(
                        "arm radius must be positive and finite, got {radius}"
                    )));
                }
                if !(window > 2.0 * radius) || !window.is_finite() {
                    return Err(Error::Domain(format!(
                        "truncation window {window} must exceed twice the arm radius {radius}"
                    )));
                }
            }
            EventKind::Eu { radius, delta, .. } => {
                if !(radius > 0.0) || !radius.is_finite() || radius > PI {
                    return Err(Error::Domain(format!(
                        "uniqueness radius must lie in (0, π], got {radius}"
                    )));
                }
                if !(delta > 0.0 && delta <= EU_MAX_DELTA) {
                    return Err(Error::Domain(format!(
                        "uniqueness tolerance δ must lie in (0, {EU_MAX_DELTA}], got {delta}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Grid dispatch for [`event_occurs`].
#[derive(Debug, Clone, Copy)]
pub enum GridHandle<'a> {
    Sphere(&'a SphereGrid),
    Planar(&'a PlanarGrid),
}

/// Evaluate a connection event on a sampled field. Crossing and arm events
/// require a planar grid; the uniqueness event requires a spherical grid.
pub fn event_occurs(sample: &FieldSample, grid: GridHandle<'_>, spec: &EventSpec) -> Result<bool> {
    spec.validate()?;
    match (&spec.kind, grid) {
        (
            EventKind::Eu {
                center,
                radius,
                delta,
            },
            GridHandle::Sphere(g),
        ) => eu_event(sample, g, center, *radius, *delta, spec.level),
        (EventKind::Eu { .. }, GridHandle::Planar(_)) => Err(Error::Domain(
            "the uniqueness event is defined on spherical grids".into(),
        )),
        (_, GridHandle::Planar(g)) => planar_event(sample, g, spec),
        (_, GridHandle::Sphere(_)) => Err(Error::Domain(
            "crossing and arm events are defined on planar grids".into(),
        )),
    }
}

fn planar_event(sample: &FieldSample, grid: &PlanarGrid, spec: &EventSpec) -> Result<bool> {
    if sample.grid_ref != grid.descriptor() {
        return Err(Error::Consistency(format!(
            "sample belongs to grid '{}', not '{}'",
            sample.grid_ref,
            grid.descriptor()
        )));
    }
    let h = grid.spacing();
    let n = grid.n();
    // Outermost cell-center coordinate along either axis.
    let half_extent = 0.5 * (grid.side_length() - h);
    let mask = excursion_mask(sample, spec.level);
    match spec.kind {
        EventKind::AnnulusCross { half_side: r } => {
            if r < 2.0 * h {
                return Err(Error::Resolution(format!(
                    "crossing half-side {r} spans fewer than 2 cells (spacing {h})"
                )));
            }
            if half_extent < 2.0 * r {
                return Err(Error::Domain(format!(
                    "grid side {} cannot reach the outer square of half-side {}",
                    grid.side_length(),
                    2.0 * r
                )));
            }
            let labeling = label_components_planar(&mask, grid, Connectivity::Eight)?;
            let k = labeling.components.len();
            let mut inner = vec![false; k];
            let mut outer = vec![false; k];
            for iy in 0..n {
                for ix in 0..n {
                    let Some(id) = labeling.labels[grid.index(ix, iy)] else {
                        continue;
                    };
                    let [x, y] = grid.point(ix, iy);
                    let sup = x.abs().max(y.abs());
                    if sup <= r {
                        inner[id as usize] = true;
                    }
                    if sup >= 2.0 * r {
                        outer[id as usize] = true;
                    }
                }
            }
            Ok(inner.iter().zip(&outer).any(|(&a, &b)| a && b))
        }
        EventKind::Arm { radius } => {
            check_arm_geometry(radius, h, half_extent)?;
            Ok(arm_component(&mask, grid, radius)?.is_some())
        }
        EventKind::TruncatedArm { radius, window } => {
            check_arm_geometry(radius, h, half_extent)?;
            if window > grid.side_length() + 1e-12 {
                return Err(Error::Domain(format!(
                    "truncation window {window} exceeds the grid side {}",
                    grid.side_length()
                )));
            }
            let Some((labeling, id)) = arm_component(&mask, grid, radius)? else {
                return Ok(false);
            };
            // The component must stay strictly inside the window: any member
            // cell whose outer edge reaches the window boundary disqualifies.
            let limit = 0.5 * window - 0.5 * h - 1e-12;
            for iy in 0..n {
                for ix in 0..n {
                    if labeling.labels[grid.index(ix, iy)] == Some(id) {
                        let [x, y] = grid.point(ix, iy);
                        if x.abs().max(y.abs()) >= limit {
                            return Ok(false);
                        }
                    }
                }
            }
            Ok(true)
        }
        EventKind::Eu { .. } => unreachable!("dispatched by event_occurs"),
    }
}

fn check_arm_geometry(radius: f64, spacing: f64, half_extent: f64) -> Result<()> {
    if radius < 2.0 * spacing {
        return Err(Error::Resolution(format!(
            "arm radius {radius} spans fewer than 2 cells (spacing {spacing})"
        )));
    }
    if half_extent < radius {
        return Err(Error::Domain(format!(
            "grid half-extent {half_extent} cannot reach arm radius {radius}"
        )));
    }
    Ok(())
}

/// The labeled component of the cell containing the origin, if it is inside
/// the mask and reaches Euclidean distance ≥ `radius`.
fn arm_component(
    mask: &ExcursionMask,
    grid: &PlanarGrid,
    radius: f64,
) -> Result<Option<(ComponentLabeling, u32)>> {
    let n = grid.n();
    let origin = grid.index(n / 2, n / 2);
    if !mask.inside[origin] {
        return Ok(None);
    }
    let labeling = label_components_planar(mask, grid, Connectivity::Eight)?;
    let id = labeling.labels[origin].expect("origin cell is inside the mask");
    let r_sq = radius * radius;
    for iy in 0..n {
        for ix in 0..n {
            if labeling.labels[grid.index(ix, iy)] == Some(id) {
                let [x, y] = grid.point(ix, iy);
                if x * x + y * y >= r_sq {
                    return Ok(Some((labeling, id)));
                }
            }
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Local existence–uniqueness event
// ---------------------------------------------------------------------------

/// Fixed finite family probed by the uniqueness event at (center x, scale r):
/// 13 cap centers (x, a ring of 6 at distance r/2, a staggered ring of 6 at
/// distance r) × cap radii {r, 3r/2, 2r} = 39 caps, plus 8 geodesic squares
/// at x (rotations {0, π/8, π/4, 3π/8} × half-sides {r, 2r}); every region is
/// contained in the cap of radius 3r around x.
const EU_RING_BEARINGS: usize = 6;
const EU_CAP_RADII: [f64; 3] = [1.0, 1.5, 2.0];
const EU_SQUARE_ROTATIONS: [f64; 4] = [0.0, PI / 8.0, PI / 4.0, 3.0 * PI / 8.0];
const EU_SQUARE_HALF_SIDES: [f64; 2] = [1.0, 2.0];

struct CapRegion {
    theta: f64,
    phi: f64,
    cos_theta: f64,
    sin_theta: f64,
    radius: f64,
    cos_radius: f64,
}

struct SquareRegion {
    center: [f64; 3],
    axis1: [f64; 3],
    axis2: [f64; 3],
    half_side: f64,
    theta: f64,
    phi: f64,
    cos_theta: f64,
    sin_theta: f64,
    circum: f64,
    cos_circum: f64,
}

enum EuRegion {
    Cap(CapRegion),
    Square(SquareRegion),
}

fn eu_region_family(center: &SpherePoint, radius: f64) -> Result<Vec<EuRegion>> {
    let mut cap_centers = vec![*center];
    for (ring, dist) in [0.5 * radius, radius].into_iter().enumerate() {
        for k in 0..EU_RING_BEARINGS {
            let bearing =
                TAU * k as f64 / EU_RING_BEARINGS as f64 + ring as f64 * PI / EU_RING_BEARINGS as f64;
            cap_centers.push(crate::geometry::exp_map(
                center,
                [dist * bearing.cos(), dist * bearing.sin()],
            )?);
        }
    }
    let mut regions = Vec::with_capacity(
        cap_centers.len() * EU_CAP_RADII.len()
            + EU_SQUARE_ROTATIONS.len() * EU_SQUARE_HALF_SIDES.len(),
    );
    for c in &cap_centers {
        let theta = c.colatitude();
        let phi = c.longitude();
        for mult in EU_CAP_RADII {
            let rho = mult * radius;
            regions.push(EuRegion::Cap(CapRegion {
                theta,
                phi,
                cos_theta: theta.cos(),
                sin_theta: theta.sin(),
                radius: rho,
                cos_radius: if rho >= PI { -2.0 } else { rho.cos() },
            }));
        }
    }
    for rot in EU_SQUARE_ROTATIONS {
        for half in EU_SQUARE_HALF_SIDES {
            let sq = SphereSquare::at(center, rot, half * radius)?;
            let rotm = sq.rotation();
            let c = sq.center();
            let theta = c.colatitude();
            let circum = (std::f64::consts::SQRT_2 * sq.half_side()).min(PI);
            regions.push(EuRegion::Square(SquareRegion {
                center: c.coords(),
                axis1: [rotm[0][0], rotm[1][0], rotm[2][0]],
                axis2: [rotm[0][1], rotm[1][1], rotm[2][1]],
                half_side: sq.half_side(),
                theta,
                phi: c.longitude(),
                cos_theta: theta.cos(),
                sin_theta: theta.sin(),
                circum,
                cos_circum: if circum >= PI { -2.0 } else { circum.cos() },
            }));
        }
    }
    Ok(regions)
}

/// Longitude half-width of the slice of a cap cut by the row at colatitude
/// (sin_t, cos_t): `None` if the row misses the cap, `Some(π)` if the whole
/// row is inside.
#[inline]
fn cap_row_half_width(
    cos_rho: f64,
    sin_tc: f64,
    cos_tc: f64,
    sin_t: f64,
    cos_t: f64,
) -> Option<f64> {
    let denom = sin_t * sin_tc;
    let num = cos_rho - cos_t * cos_tc;
    if denom.abs() < 1e-14 {
        return if num <= 0.0 { Some(PI) } else { None };
    }
    let c = num / denom;
    if c <= -1.0 {
        Some(PI)
    } else if c > 1.0 {
        None
    } else {
        Some(c.acos())
    }
}

/// Scratch state for evaluating the uniqueness event: the sub-level mask,
/// a reusable union–find, and per-region member stamps, plus cached row and
/// column trigonometry so cell centers cost four multiplications.
struct EuContext<'a> {
    grid: &'a SphereGrid,
    inside: Vec<bool>,
    uf: MinUnionFind,
    member_epoch: Vec<u32>,
    epoch: u32,
    members: Vec<u32>,
    slot_of: Vec<u32>,
    slot_epoch: Vec<u32>,
    row_cs: Vec<(f64, f64)>,
    col_cs: Vec<(f64, f64)>,
}

struct CompAcc {
    root: u32,
    count: u32,
    min: [f64; 3],
    max: [f64; 3],
}

impl<'a> EuContext<'a> {
    fn new(grid: &'a SphereGrid, sample: &FieldSample, level: f64) -> Self {
        let n_lat = grid.n_lat();
        let n_lon = grid.n_lon();
        let row_cs = (0..n_lat)
            .map(|r| {
                let theta = PI * (r as f64 + 0.5) / n_lat as f64;
                theta.sin_cos()
            })
            .collect();
        let col_cs = (0..n_lon)
            .map(|c| {
                let phi = TAU * (c as f64 + 0.5) / n_lon as f64;
                phi.sin_cos()
            })
            .collect();
        let n = grid.n_cells();
        EuContext {
            grid,
            inside: sample.values.iter().map(|&v| v <= level).collect(),
            uf: MinUnionFind::new(n),
            member_epoch: vec![0; n],
            epoch: 0,
            members: Vec::new(),
            slot_of: vec![0; n],
            slot_epoch: vec![0; n],
            row_cs,
            col_cs,
        }
    }

    #[inline]
    fn cell_coords(&self, row: usize, col: usize) -> [f64; 3] {
        let (st, ct) = self.row_cs[row];
        let (sp, cp) = self.col_cs[col];
        [st * cp, st * sp, ct]
    }

    fn row_range(&self, theta_lo: f64, theta_hi: f64) -> (usize, usize) {
        let n_lat = self.grid.n_lat() as i64;
        let scale = n_lat as f64 / PI;
        let lo = ((theta_lo * scale).floor() as i64 - 2).max(0) as usize;
        let hi = ((theta_hi * scale).ceil() as i64 + 2).min(n_lat - 1) as usize;
        (lo, hi)
    }

    #[inline]
    fn stamp(&mut self, cell: usize) {
        self.member_epoch[cell] = self.epoch;
        self.members.push(cell as u32);
    }

    /// Stamp the cells of `row` whose center longitude lies within
    /// `half_width` (wrapped) of `phi0`.
    fn stamp_row_window(&mut self, row: usize, phi0: f64, half_width: f64) {
        let n_lon = self.grid.n_lon();
        let base = row * n_lon;
        if half_width >= PI - 1e-15 {
            for col in 0..n_lon {
                self.stamp(base + col);
            }
            return;
        }
        let scale = n_lon as f64 / TAU;
        let lo = (phi0 - half_width) * scale - 0.5;
        let hi = (phi0 + half_width) * scale - 0.5;
        let first = lo.ceil() as i64;
        let last = hi.floor() as i64;
        if last < first {
            return;
        }
        if (last - first + 1) as usize >= n_lon {
            for col in 0..n_lon {
                self.stamp(base + col);
            }
            return;
        }
        let m = n_lon as i64;
        for k in first..=last {
            let col = (((k % m) + m) % m) as usize;
            self.stamp(base + col);
        }
    }

    fn collect_members(&mut self, region: &EuRegion) {
        self.epoch += 1;
        self.members.clear();
        match region {
            EuRegion::Cap(cap) => {
                if cap.radius >= PI {
                    for row in 0..self.grid.n_lat() {
                        self.stamp_row_window(row, 0.0, PI);
                    }
                    return;
                }
                let (lo, hi) = self.row_range(cap.theta - cap.radius, cap.theta + cap.radius);
                for row in lo..=hi {
                    let (st, ct) = self.row_cs[row];
                    if let Some(w) =
                        cap_row_half_width(cap.cos_radius, cap.sin_theta, cap.cos_theta, st, ct)
                    {
                        self.stamp_row_window(row, cap.phi, w);
                    }
                }
            }
            EuRegion::Square(sq) => {
                let (lo, hi) = self.row_range(sq.theta - sq.circum, sq.theta + sq.circum);
                let tol = sq.half_side + 1e-12;
                for row in lo..=hi {
                    let (st, ct) = self.row_cs[row];
                    let Some(w) =
                        cap_row_half_width(sq.cos_circum, sq.sin_theta, sq.cos_theta, st, ct)
                    else {
                        continue;
                    };
                    // Walk the circumscribed-cap window and test the exact
                    // square membership per cell: |log coords| ≤ half-side.
                    let n_lon = self.grid.n_lon();
                    let base = row * n_lon;
                    let scale = n_lon as f64 / TAU;
                    let (first, last) = if w >= PI - 1e-15 {
                        (0i64, n_lon as i64 - 1)
                    } else {
                        let lo_f = (sq.phi - w) * scale - 0.5;
                        let hi_f = (sq.phi + w) * scale - 0.5;
                        (lo_f.ceil() as i64, hi_f.floor() as i64)
                    };
                    if last < first {
                        continue;
                    }
                    let m = n_lon as i64;
                    let span = ((last - first + 1) as usize).min(n_lon);
                    for k in first..first + span as i64 {
                        let col = (((k % m) + m) % m) as usize;
                        let p = self.cell_coords(row, col);
                        let t = (p[0] * sq.center[0] + p[1] * sq.center[1] + p[2] * sq.center[2])
                            .clamp(-1.0, 1.0);
                        let d = t.acos();
                        let inside_sq = if d < 1e-12 {
                            true
                        } else if d >= PI - 1e-9 {
                            false
                        } else {
                            let ratio = d / d.sin();
                            let w1 = p[0] * sq.axis1[0] + p[1] * sq.axis1[1] + p[2] * sq.axis1[2];
                            let w2 = p[0] * sq.axis2[0] + p[1] * sq.axis2[1] + p[2] * sq.axis2[2];
                            w1.abs() * ratio <= tol && w2.abs() * ratio <= tol
                        };
                        if inside_sq {
                            self.stamp(base + col);
                        }
                    }
                }
            }
        }
    }

    /// Existence and uniqueness within one region: the excursion set there
    /// must be nonempty, and every component other than the diametric giant
    /// must have geodesic diameter < `scale`. Component diameters are
    /// bracketed by coordinate-spread bounds, with an exact pairwise check
    /// only when the bracket straddles the threshold.
    fn region_ok(&mut self, region: &EuRegion, scale: f64) -> Result<bool> {
        self.collect_members(region);
        let n_lon = self.grid.n_lon();
        let n_lat = self.grid.n_lat();

        // Union pass over inside member cells.
        let mut pole_anchor: [Option<u32>; 2] = [None, None];
        let conn = self.grid.connectivity();
        for idx in 0..self.members.len() {
            let c = self.members[idx];
            if !self.inside[c as usize] {
                continue;
            }
            self.uf.activate(c);
        }
        for idx in 0..self.members.len() {
            let c = self.members[idx];
            let cu = c as usize;
            if !self.inside[cu] {
                continue;
            }
            let row = cu / n_lon;
            let col = cu % n_lon;
            if row == 0 || row == n_lat - 1 {
                let slot = usize::from(row != 0);
                match pole_anchor[slot] {
                    None => pole_anchor[slot] = Some(c),
                    Some(a) => self.uf.union(a, c),
                }
            } else {
                let right = row * n_lon + (col + 1) % n_lon;
                if self.member_epoch[right] == self.epoch && self.inside[right] {
                    self.uf.union(c, right as u32);
                }
            }
            if row + 1 < n_lat {
                let below = (row + 1) * n_lon;
                match conn {
                    Connectivity::Four => {
                        let d = below + col;
                        if self.member_epoch[d] == self.epoch && self.inside[d] {
                            self.uf.union(c, d as u32);
                        }
                    }
                    Connectivity::Eight => {
                        for dc in [n_lon - 1, 0, 1] {
                            let d = below + (col + dc) % n_lon;
                            if self.member_epoch[d] == self.epoch && self.inside[d] {
                                self.uf.union(c, d as u32);
                            }
                        }
                    }
                }
            }
        }

        // Component extraction with per-axis coordinate spreads.
        let mut accs: Vec<CompAcc> = Vec::new();
        for idx in 0..self.members.len() {
            let c = self.members[idx];
            let cu = c as usize;
            if !self.inside[cu] {
                continue;
            }
            let root = self.uf.find(c);
            let ru = root as usize;
            let slot = if self.slot_epoch[ru] == self.epoch {
                self.slot_of[ru] as usize
            } else {
                self.slot_epoch[ru] = self.epoch;
                self.slot_of[ru] = accs.len() as u32;
                accs.push(CompAcc {
                    root,
                    count: 0,
                    min: [f64::INFINITY; 3],
                    max: [f64::NEG_INFINITY; 3],
                });
                accs.len() - 1
            };
            let p = self.cell_coords(cu / n_lon, cu % n_lon);
            let acc = &mut accs[slot];
            acc.count += 1;
            for a in 0..3 {
                if p[a] < acc.min[a] {
                    acc.min[a] = p[a];
                }
                if p[a] > acc.max[a] {
                    acc.max[a] = p[a];
                }
            }
        }

        let verdict = if accs.is_empty() {
            // Existence fails: the region carries no excursion cells.
            false
        } else {
            // Chordal threshold equivalent to geodesic `scale`.
            let chord_thresh = 2.0 * (0.5 * scale).sin();
            let lb_chord = |a: &CompAcc| -> f64 {
                let mut best = 0.0f64;
                for i in 0..3 {
                    let s = a.max[i] - a.min[i];
                    if s > best {
                        best = s;
                    }
                }
                best
            };
            let ub_chord = |a: &CompAcc| -> f64 {
                let dx = a.max[0] - a.min[0];
                let dy = a.max[1] - a.min[1];
                let dz = a.max[2] - a.min[2];
                (dx * dx + dy * dy + dz * dz).sqrt()
            };
            // Diametric giant: largest spread lower bound, ties toward the
            // smallest representative root.
            let mut giant_slot = 0usize;
            let mut giant_lb = f64::NEG_INFINITY;
            for (i, a) in accs.iter().enumerate() {
                let lb = lb_chord(a);
                if lb > giant_lb || (lb == giant_lb && a.root < accs[giant_slot].root) {
                    giant_lb = lb;
                    giant_slot = i;
                }
            }
            let mut ok = true;
            let mut ambiguous: Vec<usize> = Vec::new();
            for (i, a) in accs.iter().enumerate() {
                if i == giant_slot {
                    continue;
                }
                if ub_chord(a) < chord_thresh {
                    continue;
                }
                if lb_chord(a) >= chord_thresh {
                    ok = false;
                    break;
                }
                ambiguous.push(i);
            }
            if ok && !ambiguous.is_empty() {
                // Exact pairwise check for components whose spread bracket
                // straddles the threshold; these are O(spread²) cells each.
                let mut wanted = vec![false; accs.len()];
                for &i in &ambiguous {
                    wanted[i] = true;
                }
                let mut points: Vec<Vec<[f64; 3]>> = vec![Vec::new(); accs.len()];
                for idx in 0..self.members.len() {
                    let c = self.members[idx];
                    let cu = c as usize;
                    if !self.inside[cu] {
                        continue;
                    }
                    let slot = self.slot_of[self.uf.find(c) as usize] as usize;
                    if wanted[slot] {
                        points[slot].push(self.cell_coords(cu / n_lon, cu % n_lon));
                    }
                }
                let thresh_sq = chord_thresh * chord_thresh;
                'outer: for &i in &ambiguous {
                    let pts = &points[i];
                    for (a, pa) in pts.iter().enumerate() {
                        for pb in &pts[a + 1..] {
                            if chord_sq(*pa, *pb) >= thresh_sq {
                                ok = false;
                                break 'outer;
                            }
                        }
                    }
                }
            }
            ok
        };

        // Deactivate the union–find entries touched by this region.
        for idx in 0..self.members.len() {
            let c = self.members[idx];
            self.uf.parent[c as usize] = UF_ABSENT;
        }
        Ok(verdict)
    }
}

/// Local existence–uniqueness of the giant at `center` and scale `radius`:
/// over the fixed family of 39 caps and 8 squares (see [`eu_region_family`]),
/// each region's excursion set must be nonempty and all its components other
/// than the diametric giant must have geodesic diameter < `delta·radius`.
/// Requires the grid to resolve the uniqueness scale with ≥ 4 cells.
pub fn eu_event(
    sample: &FieldSample,
    grid: &SphereGrid,
    center: &SpherePoint,
    radius: f64,
    delta: f64,
    level: f64,
) -> Result<bool> {
    EventSpec::eu(*center, radius, delta, level).validate()?;
    if sample.grid_ref != grid.descriptor() {
        return Err(Error::Consistency(format!(
            "sample belongs to grid '{}', not '{}'",
            sample.grid_ref,
            grid.descriptor()
        )));
    }
    if sample.values.len() != grid.n_cells() {
        return Err(Error::Consistency(format!(
            "sample has {} values, grid has {} cells",
            sample.values.len(),
            grid.n_cells()
        )));
    }
    let spacing = PI / grid.n_lat() as f64;
    let scale = delta * radius;
    if scale < EU_MIN_CELLS_ACROSS_SCALE * spacing {
        return Err(Error::Resolution(format!(
            "uniqueness scale δ·r = {scale:.6} spans fewer than {EU_MIN_CELLS_ACROSS_SCALE} \
             cells (grid spacing {spacing:.6}); refine the grid"
        )));
    }
    let regions = eu_region_family(center, radius)?;
    let mut ctx = EuContext::new(grid, sample, level);
    for region in &regions {
        if !ctx.region_ok(region, scale)? {
            return Ok(false);
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
