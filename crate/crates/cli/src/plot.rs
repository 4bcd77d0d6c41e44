//! Static SVG of a reachtube projected onto two state coordinates.

use std::fmt::Write;

use veripc_core::polyhedron::{BoxSet, Polyhedron};
use veripc_core::reach::Reachtube;

use crate::CliError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const TICKS: usize = 5;

pub struct PlotScene<'a> {
    pub tube: &'a Reachtube,
    pub initial: Option<&'a BoxSet>,
    pub unsafe_sets: &'a [Polyhedron],
    pub caption: Option<String>,
}

/// Parses `i,j` (0-based).
pub fn parse_dims(text: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || CliError::BadDims(format!("expected `i,j`, got `{text}`"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let i = parts[0].parse().map_err(|_| bad())?;
    let j = parts[1].parse().map_err(|_| bad())?;
    Ok((i, j))
}

struct View {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl View {
    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        let sx = (WIDTH - 2.0 * MARGIN) / (self.hi[0] - self.lo[0]);
        let sy = (HEIGHT - 2.0 * MARGIN) / (self.hi[1] - self.lo[1]);
        (MARGIN + (p[0] - self.lo[0]) * sx, HEIGHT - MARGIN - (p[1] - self.lo[1]) * sy)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Blue at t = 0 to red at t = Tv.
fn time_color(frac: f64) -> String {
    let f = frac.clamp(0.0, 1.0);
    let r = (40.0 + 200.0 * f).round() as u8;
    let b = (220.0 - 180.0 * f).round() as u8;
    format!("#{r:02x}50{b:02x}")
}

fn view_of(scene: &PlotScene, i: usize, j: usize) -> View {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let boxes = scene.tube.segments.iter().map(|s| &s.enclosure).chain(scene.initial);
    for b in boxes {
        for (k, d) in [i, j].into_iter().enumerate() {
            lo[k] = lo[k].min(b.lo()[d]);
            hi[k] = hi[k].max(b.hi()[d]);
        }
    }
    if !lo[0].is_finite() {
        return View { lo: [-1.0, -1.0], hi: [1.0, 1.0] };
    }
    for k in 0..2 {
        let span = (hi[k] - lo[k]).max(1e-9 * (1.0 + lo[k].abs()));
        lo[k] -= 0.1 * span;
        hi[k] += 0.1 * span;
    }
    View { lo, hi }
}

/// Vertices of `p ∩ view` projected onto `(i, j)`, in counterclockwise order.
fn unsafe_polygon(p: &Polyhedron, i: usize, j: usize, view: &View) -> Option<Vec<[f64; 2]>> {
    let n = p.dim();
    let mut lo = BoxSet::world(n).lo().clone();
    let mut hi = BoxSet::world(n).hi().clone();
    lo[i] = view.lo[0];
    hi[i] = view.hi[0];
    lo[j] = view.lo[1];
    hi[j] = view.hi[1];
    let clip = Polyhedron::from_box(&BoxSet::new(lo, hi).ok()?);
    let flat = p.intersect_raw(&clip).ok()?.project(&[i, j]).ok()?;
    let mut pts: Vec<[f64; 2]> = flat.vertices().ok()?.iter().map(|v| [v[0], v[1]]).collect();
    if pts.len() < 2 {
        return None;
    }
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64;
    pts.sort_by(|a, b| (a[1] - cy).atan2(a[0] - cx).total_cmp(&(b[1] - cy).atan2(b[0] - cx)));
    Some(pts)
}

pub fn render_svg(scene: &PlotScene, (i, j): (usize, usize)) -> Result<String, CliError> {
    let dim = scene
        .tube
        .segments
        .first()
        .map(|s| s.enclosure.dim())
        .or(scene.initial.map(BoxSet::dim))
        .or(scene.unsafe_sets.first().map(Polyhedron::dim));
    if i == j {
        return Err(CliError::BadDims(format!("dimensions must differ, got {i},{j}")));
    }
    match dim {
        Some(n) if i >= n || j >= n => {
            return Err(CliError::BadDims(format!("{i},{j} out of range for a {n}-dimensional tube")))
        }
        _ => {}
    }
    let view = view_of(scene, i, j);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    let tv = if scene.tube.tv > 0.0 { scene.tube.tv } else { 1.0 };
    for seg in &scene.tube.segments {
        let (x0, y1) = view.px([seg.enclosure.lo()[i], seg.enclosure.lo()[j]]);
        let (x1, y0) = view.px([seg.enclosure.hi()[i], seg.enclosure.hi()[j]]);
        let _ = writeln!(
            s,
            r#"<rect class="segment" x="{x0:.3}" y="{y0:.3}" width="{:.3}" height="{:.3}" fill="{}" fill-opacity="0.35" data-t0="{}" data-mode="{}"/>"#,
            (x1 - x0).max(0.0),
            (y1 - y0).max(0.0),
            time_color(seg.t0 / tv),
            seg.t0,
            seg.mode
        );
    }
    for p in scene.unsafe_sets {
        if let Some(poly) = unsafe_polygon(p, i, j, &view) {
            let pts: Vec<String> = poly
                .iter()
                .map(|&q| {
                    let (x, y) = view.px(q);
                    format!("{x:.3},{y:.3}")
                })
                .collect();
            let _ = writeln!(
                s,
                r##"<polygon class="unsafe" points="{}" fill="#d62728" fill-opacity="0.15" stroke="#d62728" stroke-width="1.5"/>"##,
                pts.join(" ")
            );
        }
    }
    if let Some(b) = scene.initial {
        let (x0, y1) = view.px([b.lo()[i], b.lo()[j]]);
        let (x1, y0) = view.px([b.hi()[i], b.hi()[j]]);
        let _ = writeln!(
            s,
            r#"<rect class="initial" x="{x0:.3}" y="{y0:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="black" stroke-width="1.5"/>"#,
            (x1 - x0).max(0.0),
            (y1 - y0).max(0.0)
        );
    }

    // axes and ticks
    let (ax0, ay0) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{ax0} {ay0} H{} M{ax0} {ay0} V{MARGIN}" stroke="black" fill="none"/>"#,
        WIDTH - MARGIN
    );
    for k in 0..=TICKS {
        let f = k as f64 / TICKS as f64;
        let vx = view.lo[0] + f * (view.hi[0] - view.lo[0]);
        let vy = view.lo[1] + f * (view.hi[1] - view.lo[1]);
        let (px, _) = view.px([vx, view.lo[1]]);
        let (_, py) = view.px([view.lo[0], vy]);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.3}" y1="{ay0}" x2="{px:.3}" y2="{}" stroke="black"/><text x="{px:.3}" y="{}" text-anchor="middle">{}</text>"#,
            ay0 + 5.0,
            ay0 + 18.0,
            tick(vx)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{ax0}" y1="{py:.3}" x2="{}" y2="{py:.3}" stroke="black"/><text x="{}" y="{:.3}" text-anchor="end">{}</text>"#,
            ax0 - 5.0,
            ax0 - 8.0,
            py + 4.0,
            tick(vy)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">x{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0,
        i + 1
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">x{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        j + 1
    );
    let caption = match (&scene.caption, scene.tube.segments.is_empty()) {
        (Some(c), _) => Some(c.clone()),
        (None, true) => Some("no reachtube".to_string()),
        (None, false) => None,
    };
    if let Some(c) = caption {
        let _ = writeln!(s, r#"<text class="caption" x="{MARGIN}" y="30">{}</text>"#, escape(&c));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn tick(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}
