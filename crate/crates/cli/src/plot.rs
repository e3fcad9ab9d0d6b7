//! Minimal self-contained SVG output: log-log convergence plots with a
//! reference-slope guide line, and 2D mesh wireframes.

use std::fmt::Write as _;

use tempered_dg::mesh::Mesh;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-3 && v.abs() < 1e4 {
        format!("{v:.4}")
    } else {
        format!("{v:.2e}")
    }
}

/// Log-log plot of the given series. `ref_slope` adds a dashed guide line
/// with that slope in log-log coordinates, anchored at the first point of
/// the first series (e.g. -2.0 for a second-order reference).
pub fn loglog_svg(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[Series],
    ref_slope: Option<f64>,
) -> String {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|&(x, y)| x > 0.0 && y > 0.0)
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>",
        WIDTH / 2.0,
        title
    );
    if pts.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        let (lx, ly) = (x.log10(), y.log10());
        x0 = x0.min(lx);
        x1 = x1.max(lx);
        y0 = y0.min(ly);
        y1 = y1.max(ly);
    }
    // widen degenerate ranges so a single point still plots
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05;
    let (xs, ys) = ((x1 - x0) * pad, (y1 - y0) * pad);
    let (x0, x1, y0, y1) = (x0 - xs, x1 + xs, y0 - ys, y1 + ys);
    let px = |x: f64| MARGIN + (x.log10() - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y.log10() - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    // axes with decade tick labels
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" \
         stroke=\"black\"/>",
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for d in (x0.ceil() as i64)..=(x1.floor() as i64) {
        let x = px(10f64.powi(d as i32));
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"#ccc\"/>\
             <text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">1e{d}</text>",
            MARGIN,
            HEIGHT - MARGIN,
            HEIGHT - MARGIN + 18.0
        );
    }
    for d in (y0.ceil() as i64)..=(y1.floor() as i64) {
        let y = py(10f64.powi(d as i32));
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#ccc\"/>\
             <text x=\"{}\" y=\"{y:.1}\" text-anchor=\"end\" font-size=\"12\">1e{d}</text>",
            MARGIN,
            WIDTH - MARGIN,
            MARGIN - 6.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 12.0,
        xlabel
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\" \
         transform=\"rotate(-90 16 {})\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        ylabel
    );

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|&&(x, y)| x > 0.0 && y > 0.0)
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        if path.is_empty() {
            continue;
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            path.join(" ")
        );
        for &(x, y) in s.points.iter().filter(|&&(x, y)| x > 0.0 && y > 0.0) {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>",
                px(x),
                py(y)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>",
            WIDTH - MARGIN - 150.0,
            MARGIN + 18.0 + 16.0 * i as f64,
            s.label
        );
    }

    if let (Some(slope), Some(&(ax, ay))) = (
        ref_slope,
        series.first().and_then(|s| s.points.first()),
    ) {
        if ax > 0.0 && ay > 0.0 {
            // dashed guide through the anchor, spanning the x range
            let (gx0, gx1) = (10f64.powf(x0 + xs), 10f64.powf(x1 - xs));
            let gy = |x: f64| ay * (x / ax).powf(slope);
            let _ = writeln!(
                svg,
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#888\" \
                 stroke-dasharray=\"6,4\"/>",
                px(gx0),
                py(gy(gx0)),
                px(gx1),
                py(gy(gx1))
            );
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#888\">slope {}</text>",
                WIDTH - MARGIN - 150.0,
                MARGIN + 18.0 + 16.0 * series.len() as f64,
                fmt_num(slope)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Wireframe of the alive elements; 1D meshes render as a row of cells.
pub fn mesh_svg(mesh: &Mesh) -> String {
    let (xr, yr) = mesh.bounds();
    let (yl, yh) = if mesh.dim() == 1 {
        (0.0, (xr[1] - xr[0]) * 0.1)
    } else {
        (yr[0], yr[1])
    };
    let sx = (WIDTH - 2.0 * MARGIN) / (xr[1] - xr[0]);
    let sy = (HEIGHT - 2.0 * MARGIN) / (yh - yl).max(1e-300);
    let s = sx.min(sy);
    let px = |x: f64| MARGIN + (x - xr[0]) * s;
    let py = |y: f64| HEIGHT - MARGIN - (y - yl) * s;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    for e in mesh.alive_elements() {
        let vs = mesh.elem_coords(e);
        let path: Vec<String> = vs
            .iter()
            .map(|v| {
                let y = if mesh.dim() == 1 { (yl + yh) / 2.0 } else { v[1] };
                format!("{:.2},{:.2}", px(v[0]), py(y))
            })
            .collect();
        if mesh.dim() == 1 {
            let _ = writeln!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\"/>\
                 <circle cx=\"{}\" cy=\"{}\" r=\"2\" fill=\"#1f77b4\"/>",
                path.join(" "),
                px(vs[0][0]),
                py((yl + yh) / 2.0)
            );
        } else {
            let _ = writeln!(
                svg,
                "<polygon points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"0.6\"/>",
                path.join(" ")
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_plot_is_well_formed() {
        let s = [Series {
            label: "L2 error".into(),
            points: vec![(32.0, 1e-2), (128.0, 2.5e-3), (512.0, 6e-4)],
        }];
        let svg = loglog_svg("convergence", "K", "error", &s, Some(-2.0));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("slope"));
    }

    #[test]
    fn mesh_plot_draws_all_elements() {
        let mesh = Mesh::structured_rect([0.0, 2.0], [0.0, 2.0], 4, 4).unwrap();
        let svg = mesh_svg(&mesh);
        assert_eq!(svg.matches("<polygon").count(), mesh.num_alive());
    }

    #[test]
    fn empty_series_do_not_panic() {
        let svg = loglog_svg("t", "x", "y", &[], Some(-2.0));
        assert!(svg.contains("</svg>"));
    }
}
