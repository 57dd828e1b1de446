//! Deterministic SVG heatmaps and quiver plots of grid results.

use std::fmt::Write;

use crate::directional::GridCellStats;
use crate::Vec2;

const CELL: f64 = 24.0;
const LEFT: f64 = 64.0;
const TOP: f64 = 48.0;
const BAR_GAP: f64 = 24.0;
const BAR_WIDTH: f64 = 16.0;
const RIGHT: f64 = 110.0;
const BOTTOM: f64 = 52.0;

/// Viridis control points.
const PALETTE: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapQuantity {
    Bias,
    SigmaMajor,
    SigmaMinor,
    MeanError,
}

impl HeatmapQuantity {
    pub const ALL: [HeatmapQuantity; 4] = [
        HeatmapQuantity::Bias,
        HeatmapQuantity::SigmaMajor,
        HeatmapQuantity::SigmaMinor,
        HeatmapQuantity::MeanError,
    ];

    pub fn file_stem(&self) -> &'static str {
        match self {
            HeatmapQuantity::Bias => "bias_heatmap",
            HeatmapQuantity::SigmaMajor => "sigma_major_heatmap",
            HeatmapQuantity::SigmaMinor => "sigma_minor_heatmap",
            HeatmapQuantity::MeanError => "mean_error_heatmap",
        }
    }

    fn title(&self) -> &'static str {
        match self {
            HeatmapQuantity::Bias => "Bias",
            HeatmapQuantity::SigmaMajor => "Standard deviation along major axis",
            HeatmapQuantity::SigmaMinor => "Standard deviation along minor axis",
            HeatmapQuantity::MeanError => "Mean sample error",
        }
    }

    fn value(&self, c: &GridCellStats) -> Option<f64> {
        if !c.valid {
            return None;
        }
        let e = c.estimate.as_ref()?;
        match self {
            HeatmapQuantity::Bias => Some(e.bias_angle_deg),
            HeatmapQuantity::SigmaMajor => Some(e.sigma_major_deg),
            HeatmapQuantity::SigmaMinor => Some(e.sigma_minor_deg),
            HeatmapQuantity::MeanError => c.mean_sample_error_deg,
        }
    }

    fn overlay(&self, c: &GridCellStats) -> Option<Vec2> {
        let e = c.estimate.as_ref().filter(|_| c.valid)?;
        match self {
            HeatmapQuantity::SigmaMajor => Some(e.image.major_direction),
            HeatmapQuantity::SigmaMinor => Some(e.image.minor_direction),
            _ => None,
        }
    }
}

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (PALETTE.len() - 1) as f64;
    let i = (t.floor() as usize).min(PALETTE.len() - 2);
    let f = t - i as f64;
    let (a, b) = (PALETTE[i], PALETTE[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(a.0, b.0),
        mix(a.1, b.1),
        mix(a.2, b.2)
    )
}

/// Sorted distinct lattice coordinates.
fn axis_values(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

struct Layout {
    az: Vec<f64>,
    el: Vec<f64>,
}

impl Layout {
    fn new(cells: &[GridCellStats]) -> Self {
        Self {
            az: axis_values(cells.iter().map(|c| c.azimuth_deg)),
            el: axis_values(cells.iter().map(|c| c.elevation_deg)),
        }
    }

    fn plot_width(&self) -> f64 {
        self.az.len() as f64 * CELL
    }

    fn plot_height(&self) -> f64 {
        self.el.len() as f64 * CELL
    }

    /// Top-left corner of the cell; higher elevations are drawn higher up.
    fn corner(&self, c: &GridCellStats) -> (f64, f64) {
        let i = self
            .az
            .iter()
            .position(|&a| a == c.azimuth_deg)
            .unwrap_or(0);
        let j = self
            .el
            .iter()
            .position(|&e| e == c.elevation_deg)
            .unwrap_or(0);
        (
            LEFT + i as f64 * CELL,
            TOP + (self.el.len() - 1 - j) as f64 * CELL,
        )
    }

    fn header(&self, out: &mut String, title: &str) {
        let w = LEFT + self.plot_width() + RIGHT;
        let h = TOP + self.plot_height() + BOTTOM;
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="11">"#
        );
        out.push_str(concat!(
            r#"<defs><pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse" patternTransform="rotate(45)">"#,
            r##"<rect width="6" height="6" fill="#e6e6e6"/><line x1="0" y1="0" x2="0" y2="6" stroke="#999999" stroke-width="2"/></pattern>"##,
            r##"<marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="5" markerHeight="5" orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="#000000"/></marker></defs>"##,
            "\n"
        ));
        let _ = writeln!(
            out,
            r#"<rect width="100%" height="100%" fill="white"/><text x="{LEFT}" y="20" font-size="14">{title}</text>"#
        );
    }

    fn axes(&self, out: &mut String) {
        let bottom = TOP + self.plot_height();
        for (i, a) in self.az.iter().enumerate() {
            if i == 0 || i + 1 == self.az.len() || *a == 0.0 {
                let x = LEFT + (i as f64 + 0.5) * CELL;
                let _ = writeln!(
                    out,
                    r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{a}</text>"#,
                    bottom + 14.0
                );
            }
        }
        for (j, e) in self.el.iter().enumerate() {
            if j == 0 || j + 1 == self.el.len() || *e == 0.0 {
                let y = TOP + (self.el.len() - 1 - j) as f64 * CELL + 0.5 * CELL + 4.0;
                let _ = writeln!(
                    out,
                    r#"<text x="{:.1}" y="{y:.1}" text-anchor="end">{e}</text>"#,
                    LEFT - 6.0
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">azimuth (deg)</text>"#,
            LEFT + 0.5 * self.plot_width(),
            bottom + 32.0
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">elevation (deg)</text>"#,
            TOP + 0.5 * self.plot_height(),
            TOP + 0.5 * self.plot_height()
        );
    }

    fn invalid_cell(&self, out: &mut String, c: &GridCellStats) {
        let (x, y) = self.corner(c);
        let reason = c.reason.map_or("invalid", |r| r.as_str());
        let _ = writeln!(
            out,
            r#"<rect class="cell" data-az="{}" data-el="{}" data-valid="false" data-reason="{reason}" x="{x:.1}" y="{y:.1}" width="{CELL}" height="{CELL}" fill="url(#hatch)"/>"#,
            c.azimuth_deg, c.elevation_deg
        );
    }
}

fn line_segment(out: &mut String, cx: f64, cy: f64, dir: Vec2, half: f64, extra: &str) {
    let _ = writeln!(
        out,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000000" stroke-width="1.2"{extra}/>"##,
        cx - dir.x * half,
        cy - dir.y * half,
        cx + dir.x * half,
        cy + dir.y * half
    );
}

/// Heatmap of one per-cell quantity. Invalid cells are hatched; the color
/// scale spans the valid cells and its limits are printed next to the bar.
/// Sigma maps carry the projected axis direction of each cell as a line.
pub fn render_heatmap(cells: &[GridCellStats], quantity: HeatmapQuantity) -> String {
    let layout = Layout::new(cells);
    let mut out = String::new();
    layout.header(&mut out, quantity.title());

    let values: Vec<f64> = cells.iter().filter_map(|c| quantity.value(c)).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    for c in cells {
        match quantity.value(c) {
            Some(v) => {
                let (x, y) = layout.corner(c);
                let _ = writeln!(
                    out,
                    r#"<rect class="cell" data-az="{}" data-el="{}" data-valid="true" data-value="{v}" x="{x:.1}" y="{y:.1}" width="{CELL}" height="{CELL}" fill="{}"/>"#,
                    c.azimuth_deg,
                    c.elevation_deg,
                    color((v - lo) / span)
                );
                if let Some(dir) = quantity.overlay(c) {
                    line_segment(
                        &mut out,
                        x + 0.5 * CELL,
                        y + 0.5 * CELL,
                        dir,
                        0.4 * CELL,
                        r#" class="axis""#,
                    );
                }
            }
            None => layout.invalid_cell(&mut out, c),
        }
    }
    layout.axes(&mut out);

    // Color bar.
    let bx = LEFT + layout.plot_width() + BAR_GAP;
    let steps = 32;
    let h = layout.plot_height() / steps as f64;
    for k in 0..steps {
        let t = 1.0 - (k as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{bx:.1}" y="{:.2}" width="{BAR_WIDTH}" height="{:.2}" fill="{}"/>"#,
            TOP + k as f64 * h,
            h + 0.05,
            color(t)
        );
    }
    let tx = bx + BAR_WIDTH + 4.0;
    if values.is_empty() {
        let _ = writeln!(
            out,
            r#"<text x="{tx:.1}" y="{:.1}">no valid cells</text>"#,
            TOP + 10.0
        );
    } else {
        let _ = writeln!(
            out,
            r#"<text class="scale-max" x="{tx:.1}" y="{:.1}">max {hi:.3} deg</text>"#,
            TOP + 10.0
        );
        let _ = writeln!(
            out,
            r#"<text class="scale-min" x="{tx:.1}" y="{:.1}">min {lo:.3} deg</text>"#,
            TOP + layout.plot_height()
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Quiver plot of the bias direction in image space; arrow length is
/// proportional to the bias angle, the longest arrow spanning most of a cell.
pub fn render_quiver(cells: &[GridCellStats]) -> String {
    let layout = Layout::new(cells);
    let mut out = String::new();
    layout.header(&mut out, "Bias direction");
    let max_bias = cells
        .iter()
        .filter(|c| c.valid)
        .filter_map(|c| c.estimate.as_ref().map(|e| e.bias_angle_deg))
        .fold(0.0f64, f64::max);
    for c in cells {
        let (x, y) = layout.corner(c);
        let est = c.estimate.as_ref().filter(|_| c.valid);
        let Some(e) = est else {
            layout.invalid_cell(&mut out, c);
            continue;
        };
        let _ = writeln!(
            out,
            r##"<rect class="cell" data-az="{}" data-el="{}" data-valid="true" data-value="{}" x="{x:.1}" y="{y:.1}" width="{CELL}" height="{CELL}" fill="#ffffff" stroke="#dddddd" stroke-width="0.5"/>"##,
            c.azimuth_deg, c.elevation_deg, e.bias_angle_deg
        );
        if let (Some(dir), true) = (e.image.bias_direction, max_bias > 0.0) {
            let len = 0.9 * CELL * e.bias_angle_deg / max_bias;
            let (cx, cy) = (x + 0.5 * CELL, y + 0.5 * CELL);
            let _ = writeln!(
                out,
                r##"<line class="arrow" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#000000" stroke-width="1.2" marker-end="url(#arrow)"/>"##,
                cx - 0.5 * len * dir.x,
                cy - 0.5 * len * dir.y,
                cx + 0.5 * len * dir.x,
                cy + 0.5 * len * dir.y
            );
        }
    }
    layout.axes(&mut out);
    let _ = writeln!(
        out,
        r#"<text class="scale-max" x="{:.1}" y="{:.1}">longest arrow {max_bias:.3} deg</text>"#,
        LEFT + layout.plot_width() + 8.0,
        TOP + 10.0
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_endpoints() {
        assert_eq!(color(0.0), "#440154");
        assert_eq!(color(1.0), "#fde725");
        assert_eq!(color(2.0), "#fde725");
    }
}
