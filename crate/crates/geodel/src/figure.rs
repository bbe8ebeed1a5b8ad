//! Deterministic SVG cross-sections: discrete Voronoi regions of a
//! coordinate-plane slice under the perturbed metric, with the in-slice
//! samples and the two circumcentres marked.
//!
//! Pixel labels are certified, not eyeballed: each pixel takes the sample
//! whose straight-line upper bound undercuts every rival's tube lower
//! bound, and the few pixels where the bounds overlap get exact adaptive
//! solves. Rendering the same net twice yields byte-identical SVG.

use crate::chart::{
    canonicalize, flat_torus_distance, nearest_offset, nearest_straight_upper, tube_lower_bound,
    ChartPoint, MetricField,
};
use crate::geodesic::distance_adaptive_lift;
use crate::sampling::{CellGrid, PointSet};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::str::FromStr;
use thiserror::Error;

/// Slice grid resolution of the stock figures.
pub const SLICE_RESOLUTION: usize = 512;

/// Relative tolerance of the exact solves that settle bound-overlap pixels.
const EXACT_TOL: f64 = 1e-8;

/// Golden-angle hue increment, degrees; consecutive indices land far apart
/// on the colour wheel.
const HUE_STEP: f64 = 137.50776405003785;

#[derive(Debug, Error)]
pub enum FigureError {
    #[error("unknown plane `{0}`; expected xz, xy, or yz")]
    UnknownPlane(String),
    #[error("figure needs a non-empty net")]
    EmptyNet,
    #[error("slice resolution must be at least 2, got {0}")]
    BadResolution(usize),
}

/// Coordinate plane through the chart origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    Xz,
    Xy,
    Yz,
}

impl Plane {
    pub fn name(self) -> &'static str {
        match self {
            Plane::Xz => "xz",
            Plane::Xy => "xy",
            Plane::Yz => "yz",
        }
    }

    /// (horizontal, vertical) chart-coordinate indices; the remaining axis
    /// is fixed at zero.
    fn axes(self) -> (usize, usize) {
        match self {
            Plane::Xz => (0, 2),
            Plane::Xy => (0, 1),
            Plane::Yz => (1, 2),
        }
    }

    fn fixed_axis(self) -> usize {
        match self {
            Plane::Xz => 1,
            Plane::Xy => 2,
            Plane::Yz => 0,
        }
    }
}

impl FromStr for Plane {
    type Err = FigureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xz" => Ok(Plane::Xz),
            "xy" => Ok(Plane::Xy),
            "yz" => Ok(Plane::Yz),
            other => Err(FigureError::UnknownPlane(other.to_string())),
        }
    }
}

/// Renders the stock-resolution slice. See [`render_slice_at`].
pub fn render_slice(
    field: &MetricField,
    net: &PointSet,
    centres: &[ChartPoint],
    plane: Plane,
) -> Result<String, FigureError> {
    render_slice_at(field, net, centres, plane, SLICE_RESOLUTION)
}

/// Renders one coordinate-plane slice as SVG 1.1: an `resolution`-squared
/// grid of nearest-sample labels (geodesic, certified via the straight-line
/// bound ladder), plus dot markers for samples lying in the slice and cross
/// markers for the circumcentres projected onto it.
pub fn render_slice_at(
    field: &MetricField,
    net: &PointSet,
    centres: &[ChartPoint],
    plane: Plane,
    resolution: usize,
) -> Result<String, FigureError> {
    if net.points.is_empty() {
        return Err(FigureError::EmptyNet);
    }
    if resolution < 2 {
        return Err(FigureError::BadResolution(resolution));
    }
    let labeller = Labeller::new(field, &net.points, net.epsilon);
    let period = field.chart().period();
    let pixel = period / resolution as f64;
    let half = 0.5 * period;
    let (h_axis, v_axis) = plane.axes();

    // one label per pixel, rows top to bottom, vertical coordinate
    // decreasing downward as in a mathematical plot
    let rows: Vec<Vec<u32>> = (0..resolution)
        .into_par_iter()
        .map(|row| {
            let v = half - (row as f64 + 0.5) * pixel;
            (0..resolution)
                .map(|col| {
                    let h = -half + (col as f64 + 0.5) * pixel;
                    let mut coords = [0.0_f64; 3];
                    coords[h_axis] = h;
                    coords[v_axis] = v;
                    labeller.label(&ChartPoint::from(coords))
                })
                .collect()
        })
        .collect();

    let mut svg = String::with_capacity(1 << 20);
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         width=\"{resolution}\" height=\"{resolution}\" \
         viewBox=\"0 0 {resolution} {resolution}\">"
    );

    // Voronoi regions as run-length rows of unit-height rectangles
    for (row, labels) in rows.iter().enumerate() {
        let mut col = 0;
        while col < resolution {
            let label = labels[col];
            let mut run = 1;
            while col + run < resolution && labels[col + run] == label {
                run += 1;
            }
            let _ = writeln!(
                svg,
                "<rect x=\"{col}\" y=\"{row}\" width=\"{run}\" height=\"1\" fill=\"{}\"/>",
                region_colour(label)
            );
            col += run;
        }
    }

    let to_pixel = |p: &ChartPoint| {
        let q = canonicalize(field.chart(), *p);
        let coords = [q.x, q.y, q.z];
        (
            (coords[h_axis] + half) / pixel,
            (half - coords[v_axis]) / pixel,
        )
    };

    // samples lying in the slice, drawn as dots; the four fixed vertices of
    // the defect simplex get the larger ring
    for (idx, p) in net.points.iter().enumerate() {
        let q = canonicalize(field.chart(), *p);
        let offset = [q.x, q.y, q.z][plane.fixed_axis()];
        if offset.abs() > 0.5 * pixel {
            continue;
        }
        let (px, py) = to_pixel(p);
        if net.fixed_indices.contains(&idx) {
            let _ = writeln!(
                svg,
                "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"4\" fill=\"#ffffff\" \
                 stroke=\"#000000\" stroke-width=\"1.5\"/>"
            );
        } else {
            let _ = writeln!(
                svg,
                "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"1.8\" fill=\"#000000\"/>"
            );
        }
    }

    // circumcentres as crosses, projected along the fixed axis when the
    // plane misses them
    for centre in centres {
        let (px, py) = to_pixel(centre);
        let _ = writeln!(
            svg,
            "<path d=\"M {x0:.2} {py:.2} L {x1:.2} {py:.2} M {px:.2} {y0:.2} L {px:.2} {y1:.2}\" \
             stroke=\"#ffffff\" stroke-width=\"3.5\" fill=\"none\"/>",
            x0 = px - 6.0,
            x1 = px + 6.0,
            y0 = py - 6.0,
            y1 = py + 6.0,
        );
        let _ = writeln!(
            svg,
            "<path d=\"M {x0:.2} {py:.2} L {x1:.2} {py:.2} M {px:.2} {y0:.2} L {px:.2} {y1:.2}\" \
             stroke=\"#000000\" stroke-width=\"1.5\" fill=\"none\"/>",
            x0 = px - 6.0,
            x1 = px + 6.0,
            y0 = py - 6.0,
            y1 = py + 6.0,
        );
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Certified nearest-sample queries against a fixed net.
struct Labeller<'a> {
    field: &'a MetricField,
    points: &'a [ChartPoint],
    grid: CellGrid,
}

impl<'a> Labeller<'a> {
    fn new(field: &'a MetricField, points: &'a [ChartPoint], epsilon: f64) -> Self {
        // Cells of two covering radii: the flat-nearest candidates and every
        // rival whose flat length undercuts the winner's straight-line upper
        // bound (at most stretch * 1.3 epsilon for a covering net) all land
        // in the 27-cell block.
        let mut grid = CellGrid::new(field.chart().period(), 2.0 * epsilon);
        for (idx, p) in points.iter().enumerate() {
            grid.insert(idx as u32, p);
        }
        Self {
            field,
            points,
            grid,
        }
    }

    fn point(&self, idx: u32) -> &ChartPoint {
        &self.points[idx as usize]
    }

    /// Index of the geodesically nearest sample; exact ties go to the
    /// lowest index.
    fn label(&self, q: &ChartPoint) -> u32 {
        let chart = self.field.chart();
        let mut cands = self.grid.neighbours(q);
        if cands.is_empty() {
            cands = (0..self.points.len() as u32).collect();
        }
        cands.sort_unstable();
        cands.dedup();

        let flats: Vec<f64> = cands
            .iter()
            .map(|&i| flat_torus_distance(chart, q, self.point(i)))
            .collect();
        let start = (0..cands.len())
            .min_by(|&a, &b| flats[a].total_cmp(&flats[b]))
            .expect("candidate set is never empty");

        // winner = smallest straight-line upper bound; candidates whose flat
        // length already exceeds the current bound cannot be nearer
        let mut uppers: Vec<Option<f64>> = vec![None; cands.len()];
        let mut winner = start;
        let mut winner_upper = nearest_straight_upper(self.field, q, self.point(cands[start]));
        uppers[start] = Some(winner_upper);
        for k in 0..cands.len() {
            if k == start || flats[k] >= winner_upper {
                continue;
            }
            let upper = nearest_straight_upper(self.field, q, self.point(cands[k]));
            uppers[k] = Some(upper);
            if upper < winner_upper {
                winner = k;
                winner_upper = upper;
            }
        }

        // certified decision: a rival is dangerous only if its tube lower
        // bound dips under the winner's upper bound
        let mut contested: Vec<u32> = Vec::new();
        for k in 0..cands.len() {
            if k == winner || flats[k] >= winner_upper {
                continue;
            }
            let upper = uppers[k].expect("bound computed in the winner scan");
            if tube_lower_bound(self.field, q, self.point(cands[k]), upper) < winner_upper {
                contested.push(cands[k]);
            }
        }
        if contested.is_empty() {
            return cands[winner];
        }

        contested.push(cands[winner]);
        contested.sort_unstable();
        let mut best = contested[0];
        let mut best_d = self.exact(q, best);
        for &idx in &contested[1..] {
            let d = self.exact(q, idx);
            if d < best_d {
                best = idx;
                best_d = d;
            }
        }
        best
    }

    fn exact(&self, q: &ChartPoint, idx: u32) -> f64 {
        let v = nearest_offset(self.field.chart(), q, self.point(idx));
        distance_adaptive_lift(self.field, q, v, EXACT_TOL)
    }
}

/// Fill colour of a sample's region: evenly spread golden-angle hues.
fn region_colour(idx: u32) -> String {
    let hue = (idx as f64 * HUE_STEP) % 360.0;
    hsl_hex(hue, 0.52, 0.66)
}

/// HSL to `#rrggbb` for hue in degrees, saturation and lightness in [0, 1].
fn hsl_hex(h: f64, s: f64, l: f64) -> String {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - 0.5 * c;
    let byte = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", byte(r1), byte(g1), byte(b1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{generate_net_constrained, NetConstraints};

    fn tiny_net(amplitude: f64) -> (MetricField, PointSet) {
        let field = MetricField::standard(2.0, amplitude).unwrap();
        let net = generate_net_constrained(&field, 0.45, 7, &NetConstraints::none()).unwrap();
        (field, net)
    }

    #[test]
    fn plane_names_round_trip() {
        for plane in [Plane::Xz, Plane::Xy, Plane::Yz] {
            assert_eq!(plane.name().parse::<Plane>().unwrap(), plane);
        }
        assert!(matches!(
            "qq".parse::<Plane>(),
            Err(FigureError::UnknownPlane(_))
        ));
    }

    #[test]
    fn hsl_conversion_hits_the_anchors() {
        assert_eq!(hsl_hex(0.0, 1.0, 0.5), "#ff0000");
        assert_eq!(hsl_hex(120.0, 1.0, 0.5), "#00ff00");
        assert_eq!(hsl_hex(240.0, 1.0, 0.5), "#0000ff");
        assert_eq!(hsl_hex(0.0, 0.0, 1.0), "#ffffff");
    }

    #[test]
    fn slice_render_is_byte_stable_and_covers_every_pixel() {
        let (field, net) = tiny_net(0.2);
        let centres = [ChartPoint::new(0.0, 0.05, 0.0)];
        let a = render_slice_at(&field, &net, &centres, Plane::Xz, 24).unwrap();
        let b = render_slice_at(&field, &net, &centres, Plane::Xz, 24).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg xmlns"));
        assert!(a.trim_end().ends_with("</svg>"));
        // unit-height runs must tile each of the 24 rows completely
        for row in 0..24 {
            let covered: usize = a
                .lines()
                .filter(|l| l.contains(&format!("y=\"{row}\"")) && l.starts_with("<rect"))
                .map(|l| {
                    let tail = l.split("width=\"").nth(1).unwrap();
                    tail.split('"').next().unwrap().parse::<usize>().unwrap()
                })
                .sum();
            assert_eq!(covered, 24, "row {row} not fully tiled");
        }
    }

    #[test]
    fn flat_labels_agree_with_brute_force_flat_nearest() {
        // with amplitude zero the geodesic order equals the flat order, so
        // the certified labeller must reproduce exhaustive flat search
        let (field, net) = tiny_net(0.0);
        let labeller = Labeller::new(&field, &net.points, net.epsilon);
        let chart = field.chart();
        for (qi, qj) in [(3, 5), (11, 2), (7, 17), (0, 23)] {
            let q = ChartPoint::new(
                -1.0 + 2.0 * (qi as f64 + 0.37) / 24.0,
                0.0,
                -1.0 + 2.0 * (qj as f64 + 0.61) / 24.0,
            );
            let got = labeller.label(&q);
            let want = (0..net.points.len() as u32)
                .min_by(|&a, &b| {
                    flat_torus_distance(chart, &q, &net.points[a as usize])
                        .total_cmp(&flat_torus_distance(chart, &q, &net.points[b as usize]))
                })
                .unwrap();
            assert_eq!(got, want);
        }
    }
}
