//! Static equirectangular renders of spherical excursion sets as binary
//! portable pixmaps (PPM, type P6). Renders are pure functions of the sample
//! and the render spec: identical inputs give byte-identical images, and
//! nothing on disk is ever modified by rendering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excursion::{excursion_mask, giant, label_components, GiantCriterion};
use crate::geometry::{Connectivity, SphereGrid, SpherePoint, DEFAULT_MAX_CELLS};
use crate::samplers::FieldSample;

/// Minimum image width in pixels; the height is always `width / 2`.
pub const MIN_RENDER_WIDTH: usize = 64;

/// Background tone for cells outside every highlighted level.
pub const COLOR_LIGHT: [u8; 3] = [240, 240, 240];
/// Deep tone for the innermost excursion set.
pub const COLOR_DARK: [u8; 3] = [30, 90, 45];
/// Intermediate tone for the band between two levels.
pub const COLOR_MID: [u8; 3] = [140, 195, 150];
/// Giant-component outline.
pub const COLOR_OUTLINE: [u8; 3] = [200, 40, 40];

/// How cells are colored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "palette", rename_all = "snake_case")]
pub enum Palette {
    /// Excursion cells dark, the rest light.
    Binary { level: f64 },
    /// Cells at or below `lo` dark, cells in (lo, hi] mid, rest light.
    /// Requires `lo < hi`.
    TwoLevel { lo: f64, hi: f64 },
    /// Each connected component of the excursion set gets its own color.
    Components { level: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    /// Image width in pixels (≥ 64); the equirectangular height is width/2.
    pub width: usize,
    pub palette: Palette,
    /// Outline the largest-area component of the (outermost) level.
    pub outline_giant: bool,
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < MIN_RENDER_WIDTH {
            return Err(Error::Domain(format!(
                "render width {} below the minimum {MIN_RENDER_WIDTH}",
                self.width
            )));
        }
        match self.palette {
            Palette::Binary { level } | Palette::Components { level } => {
                if !level.is_finite() {
                    return Err(Error::Domain(format!(
                        "render level must be finite, got {level}"
                    )));
                }
            }
            Palette::TwoLevel { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
                    return Err(Error::Domain(format!(
                        "two-level palette requires finite lo < hi, got ({lo}, {hi})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The level whose component structure drives component coloring and
    /// the giant outline: the outermost highlighted level.
    fn structure_level(&self) -> f64 {
        match self.palette {
            Palette::Binary { level } | Palette::Components { level } => level,
            Palette::TwoLevel { hi, .. } => hi,
        }
    }
}

/// Rebuild a spherical grid from the descriptor string a sample carries
/// (`sphere:n_lat=…,n_lon=…,conn=…`).
pub fn grid_from_descriptor(descriptor: &str) -> Result<SphereGrid> {
    let body = descriptor.strip_prefix("sphere:").ok_or_else(|| {
        Error::Domain(format!(
            "rendering supports spherical samples; got grid '{descriptor}'"
        ))
    })?;
    let mut n_lat: Option<usize> = None;
    let mut conn: Option<Connectivity> = None;
    for part in body.split(',') {
        match part.split_once('=') {
            Some(("n_lat", v)) => {
                n_lat = Some(v.parse().map_err(|_| {
                    Error::Serialize(format!("bad n_lat in grid descriptor '{descriptor}'"))
                })?)
            }
            Some(("conn", v)) => {
                conn = Some(match v {
                    "Four" => Connectivity::Four,
                    "Eight" => Connectivity::Eight,
                    other => {
                        return Err(Error::Serialize(format!(
                            "unknown connectivity '{other}' in grid descriptor"
                        )))
                    }
                })
            }
            Some(("n_lon", _)) => {}
            _ => {
                return Err(Error::Serialize(format!(
                    "malformed grid descriptor '{descriptor}'"
                )))
            }
        }
    }
    let n_lat = n_lat
        .ok_or_else(|| Error::Serialize(format!("grid descriptor '{descriptor}' lacks n_lat")))?;
    let conn = conn
        .ok_or_else(|| Error::Serialize(format!("grid descriptor '{descriptor}' lacks conn")))?;
    let grid = SphereGrid::with_rows(n_lat, conn, DEFAULT_MAX_CELLS)?;
    if grid.descriptor() != descriptor {
        return Err(Error::Consistency(format!(
            "rebuilt grid '{}' does not match descriptor '{descriptor}'",
            grid.descriptor()
        )));
    }
    Ok(grid)
}

/// Deterministic distinguishable color for component `id` (golden-angle hue
/// walk through a saturated wheel).
fn component_color(id: u32) -> [u8; 3] {
    let hue = (id as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let sector = hue as usize % 6;
    let frac = hue.fract();
    let (hi, lo) = (220.0f64, 70.0f64);
    let up = lo + (hi - lo) * frac;
    let down = hi - (hi - lo) * frac;
    let (r, g, b) = match sector {
        0 => (hi, up, lo),
        1 => (down, hi, lo),
        2 => (lo, hi, up),
        3 => (lo, down, hi),
        4 => (up, lo, hi),
        _ => (hi, lo, down),
    };
    [r as u8, g as u8, b as u8]
}

/// Render a spherical sample to binary PPM bytes (header `P6`, width,
/// height = width/2, 255, then RGB triples row-major from the north pole).
/// Each pixel takes the color of the grid cell under its center.
pub fn render_sphere(
    sample: &FieldSample,
    grid: &SphereGrid,
    spec: &RenderSpec,
) -> Result<Vec<u8>> {
    spec.validate()?;
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
    let width = spec.width;
    let height = width / 2;

    // Component structure is needed for component coloring and the outline.
    let needs_labels = spec.outline_giant || matches!(spec.palette, Palette::Components { .. });
    let (labels, giant_id) = if needs_labels {
        let mask = excursion_mask(sample, spec.structure_level());
        let labeling = label_components(&mask, grid)?;
        let giant_id = if spec.outline_giant && !labeling.components.is_empty() {
            Some(giant(&labeling, grid, GiantCriterion::Area)?.id)
        } else {
            None
        };
        (Some(labeling.labels), giant_id)
    } else {
        (None, None)
    };

    // Map each pixel to its cell once; pixel centers at half offsets.
    let mut cell_of_pixel = vec![0usize; width * height];
    for py in 0..height {
        let theta = std::f64::consts::PI * (py as f64 + 0.5) / height as f64;
        for px in 0..width {
            let phi = std::f64::consts::TAU * (px as f64 + 0.5) / width as f64;
            cell_of_pixel[py * width + px] =
                grid.cell_of(&SpherePoint::from_colat_lon(theta, phi));
        }
    }

    let base_color = |cell: usize| -> [u8; 3] {
        let v = sample.values[cell];
        match spec.palette {
            Palette::Binary { level } => {
                if v <= level {
                    COLOR_DARK
                } else {
                    COLOR_LIGHT
                }
            }
            Palette::TwoLevel { lo, hi } => {
                if v <= lo {
                    COLOR_DARK
                } else if v <= hi {
                    COLOR_MID
                } else {
                    COLOR_LIGHT
                }
            }
            Palette::Components { .. } => match labels.as_ref().expect("labels computed")[cell] {
                Some(id) => component_color(id),
                None => COLOR_LIGHT,
            },
        }
    };

    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.reserve(3 * width * height);
    for py in 0..height {
        for px in 0..width {
            let cell = cell_of_pixel[py * width + px];
            let mut color = base_color(cell);
            if let (Some(labels), Some(gid)) = (labels.as_ref(), giant_id) {
                // Outline: a giant pixel bordering (in image space) a pixel
                // of any other component or the background.
                if labels[cell] == Some(gid) {
                    let mut boundary = false;
                    // Longitude wraps; latitude clamps at the poles.
                    let neighbors = [
                        ((px + width - 1) % width, py),
                        ((px + 1) % width, py),
                        (px, py.saturating_sub(1)),
                        (px, (py + 1).min(height - 1)),
                    ];
                    for (nx, ny) in neighbors {
                        if labels[cell_of_pixel[ny * width + nx]] != Some(gid) {
                            boundary = true;
                            break;
                        }
                    }
                    if boundary {
                        color = COLOR_OUTLINE;
                    }
                }
            }
            bytes.extend_from_slice(&color);
        }
    }
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::sample_rsh;

    fn pixel_colors(ppm: &[u8], width: usize) -> Vec<[u8; 3]> {
        let header = format!("P6\n{width} {} \n255\n", width / 2);
        // Header length varies with digits; find the third newline instead.
        let mut newlines = 0;
        let mut start = 0;
        for (i, &b) in ppm.iter().enumerate() {
            if b == b'\n' {
                newlines += 1;
                if newlines == 3 {
                    start = i + 1;
                    break;
                }
            }
        }
        assert!(newlines == 3, "malformed header in {header:?}");
        ppm[start..]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect()
    }

    #[test]
    fn ppm_shape_and_determinism() {
        let grid = grid_from_descriptor("sphere:n_lat=40,n_lon=80,conn=Eight").unwrap();
        let sample = sample_rsh(12, &grid, 5, 0).unwrap();
        let spec = RenderSpec {
            width: 128,
            palette: Palette::TwoLevel { lo: -0.1, hi: 0.1 },
            outline_giant: false,
        };
        let ppm = render_sphere(&sample, &grid, &spec).unwrap();
        assert!(ppm.starts_with(b"P6\n128 64\n255\n"));
        assert_eq!(ppm.len(), b"P6\n128 64\n255\n".len() + 3 * 128 * 64);
        let again = render_sphere(&sample, &grid, &spec).unwrap();
        assert_eq!(ppm, again);

        // All three tones present on a near-critical pair of levels, and
        // nothing else.
        let pixels = pixel_colors(&ppm, 128);
        for c in [COLOR_DARK, COLOR_MID, COLOR_LIGHT] {
            assert!(pixels.contains(&c), "missing tone {c:?}");
        }
        assert!(pixels
            .iter()
            .all(|c| [COLOR_DARK, COLOR_MID, COLOR_LIGHT].contains(c)));
    }

    #[test]
    fn degenerate_levels_and_full_mask() {
        let grid = grid_from_descriptor("sphere:n_lat=32,n_lon=64,conn=Eight").unwrap();
        let sample = sample_rsh(8, &grid, 9, 0).unwrap();
        let min = sample.values.iter().cloned().fold(f64::MAX, f64::min);
        let max = sample.values.iter().cloned().fold(f64::MIN, f64::max);

        // Level below the minimum: uniform light background.
        let spec = RenderSpec {
            width: 64,
            palette: Palette::Binary { level: min - 1.0 },
            outline_giant: false,
        };
        let ppm = render_sphere(&sample, &grid, &spec).unwrap();
        assert!(pixel_colors(&ppm, 64).iter().all(|&c| c == COLOR_LIGHT));

        // Component coloring on a full mask: exactly one color.
        let spec = RenderSpec {
            width: 64,
            palette: Palette::Components { level: max + 1.0 },
            outline_giant: false,
        };
        let ppm = render_sphere(&sample, &grid, &spec).unwrap();
        let colors = pixel_colors(&ppm, 64);
        assert!(colors.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(colors[0], COLOR_LIGHT);
    }

    #[test]
    fn giant_outline_marks_boundary_pixels() {
        let grid = grid_from_descriptor("sphere:n_lat=64,n_lon=128,conn=Eight").unwrap();
        let sample = sample_rsh(16, &grid, 21, 0).unwrap();
        let with = RenderSpec {
            width: 192,
            palette: Palette::Binary { level: 0.0 },
            outline_giant: true,
        };
        let without = RenderSpec {
            outline_giant: false,
            ..with
        };
        let marked = pixel_colors(&render_sphere(&sample, &grid, &with).unwrap(), 192);
        let plain = pixel_colors(&render_sphere(&sample, &grid, &without).unwrap(), 192);
        let n_outline = marked.iter().filter(|&&c| c == COLOR_OUTLINE).count();
        assert!(n_outline > 0, "no outline pixels drawn");
        assert!(plain.iter().all(|&c| c != COLOR_OUTLINE));
        // The outline only replaces dark (inside-giant) pixels.
        for (m, p) in marked.iter().zip(&plain) {
            if *m == COLOR_OUTLINE {
                assert_eq!(*p, COLOR_DARK);
            } else {
                assert_eq!(m, p);
            }
        }
    }

    #[test]
    fn spec_and_descriptor_validation() {
        let bad_width = RenderSpec {
            width: 32,
            palette: Palette::Binary { level: 0.0 },
            outline_giant: false,
        };
        assert!(matches!(bad_width.validate(), Err(Error::Domain(_))));
        let bad_levels = RenderSpec {
            width: 64,
            palette: Palette::TwoLevel { lo: 0.1, hi: 0.1 },
            outline_giant: false,
        };
        assert!(matches!(bad_levels.validate(), Err(Error::Domain(_))));
        let swapped = RenderSpec {
            width: 64,
            palette: Palette::TwoLevel { lo: 0.5, hi: -0.5 },
            outline_giant: false,
        };
        assert!(matches!(swapped.validate(), Err(Error::Domain(_))));

        assert!(grid_from_descriptor("planar:side=8,n=64").is_err());
        assert!(grid_from_descriptor("sphere:n_lat=oops,n_lon=2,conn=Eight").is_err());
        assert!(grid_from_descriptor("sphere:n_lat=32,n_lon=64").is_err());
        let grid = grid_from_descriptor("sphere:n_lat=32,n_lon=64,conn=Four").unwrap();
        assert_eq!(grid.n_lat(), 32);
        assert_eq!(grid.connectivity(), Connectivity::Four);
    }
}
