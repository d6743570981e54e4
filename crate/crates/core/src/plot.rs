//! Minimal SVG line plots of result CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::table::RawTable;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Which columns to draw.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    /// One polyline per distinct combination of these columns.
    pub group: Vec<String>,
    pub log_y: bool,
    pub title: Option<String>,
}

impl PlotSpec {
    pub fn new(x: &str, y: &str) -> Self {
        PlotSpec {
            x: x.into(),
            y: y.into(),
            group: Vec::new(),
            log_y: false,
            title: None,
        }
    }

    fn grouped(mut self, cols: &[&str], log_y: bool) -> Self {
        self.group = cols.iter().map(|s| s.to_string()).collect();
        self.log_y = log_y;
        self
    }

    /// Default layout for the known result schemas, or the first two
    /// columns of a two-column file.
    pub fn infer(columns: &[String]) -> Option<Self> {
        let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
        let spec = match cols.as_slice() {
            ["Q", "K", "snr_db", "mse"] => PlotSpec::new("Q", "mse").grouped(&["K", "snr_db"], true),
            ["mode", "n_users", "snr_db", "capacity_bps_hz", "igi_power"] => {
                PlotSpec::new("snr_db", "capacity_bps_hz").grouped(&["mode", "n_users"], false)
            }
            ["precoder", "D", "v", "power"] => PlotSpec::new("v", "power").grouped(&["precoder", "D"], true),
            ["scheme", "D", "gamma_q", "gamma_o", "loss"] => PlotSpec::new("D", "loss").grouped(&["scheme"], false),
            ["mode", "m_v", "m_h", "snr_db", "capacity_bps_hz"] => {
                PlotSpec::new("snr_db", "capacity_bps_hz").grouped(&["mode"], false)
            }
            ["q", "index", "eigenvalue"] => PlotSpec::new("index", "eigenvalue").grouped(&["q"], true),
            [x, y] => PlotSpec::new(x, y),
            _ => return None,
        };
        Some(spec)
    }
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn collect_series(raw: &RawTable, spec: &PlotSpec) -> std::result::Result<Series, String> {
    let xs = raw.numeric_column(&spec.x)?;
    let ys = raw.numeric_column(&spec.y)?;
    let groups: Vec<Vec<String>> = spec
        .group
        .iter()
        .map(|g| raw.text_column(g))
        .collect::<std::result::Result<_, _>>()?;
    let mut series: Series = BTreeMap::new();
    for i in 0..xs.len() {
        if spec.log_y && ys[i] <= 0.0 {
            continue;
        }
        let label = spec
            .group
            .iter()
            .zip(&groups)
            .map(|(name, col)| format!("{name}={}", col[i]))
            .collect::<Vec<_>>()
            .join(", ");
        series.entry(label).or_default().push((xs[i], ys[i]));
    }
    Ok(series)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// SVG document for the series selected by `spec`.
pub fn render_svg(raw: &RawTable, spec: &PlotSpec) -> std::result::Result<String, String> {
    let series = collect_series(raw, spec)?;
    let points: Vec<(f64, f64)> = series.values().flatten().copied().collect();
    if points.is_empty() {
        return Err("no data to plot".into());
    }
    let fy = |y: f64| if spec.log_y { y.log10() } else { y };
    let (mut x0, mut x1) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (mut y0, mut y1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(fy(p.1)), a.1.max(fy(p.1))));
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + ph - (fy(y) - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(t) = &spec.title {
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(t));
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (gx, gy) = (LEFT + f * pw, TOP + ph - f * ph);
        let ylab = if spec.log_y { format!("1e{yv:.1}") } else { tick_label(yv) };
        let _ = writeln!(
            s,
            r##"<line x1="{gx}" y1="{TOP}" x2="{gx}" y2="{}" stroke="#ddd"/><text x="{gx}" y="{}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{gy}" x2="{}" y2="{gy}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{ylab}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            gy + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 18.0,
        escape(&spec.x)
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&spec.y)
    );
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        if !label.is_empty() {
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                lx + 20.0,
                lx + 26.0,
                ly + 4.0,
                escape(label)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Renders `csv` to an SVG file. Nothing is written on error.
pub fn render_plot(csv: &Path, spec: Option<&PlotSpec>, out: &Path) -> Result<()> {
    let raw = crate::experiment::load_result(csv)?;
    let schema_err = |reason: String| Error::Schema {
        path: csv.to_path_buf(),
        reason,
    };
    let spec = match spec {
        Some(s) => s.clone(),
        None => PlotSpec::infer(&raw.columns)
            .ok_or_else(|| schema_err("unknown layout; pass the x and y columns explicitly".into()))?,
    };
    let svg = render_svg(&raw, &spec).map_err(schema_err)?;
    fs::write(out, svg).map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_columns_give_one_polyline() {
        let raw = RawTable::parse("x,y\n0,1\n1,2\n2,0.5\n").unwrap();
        let spec = PlotSpec::infer(&raw.columns).unwrap();
        let svg = render_svg(&raw, &spec).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn groups_get_polylines_and_legend() {
        let raw = RawTable::parse(
            "mode,n_users,snr_db,capacity_bps_hz,igi_power\nproposed,4,0,1,0\nproposed,4,10,2,0\ndft,4,0,0.9,0\ndft,4,10,1.8,0\n",
        )
        .unwrap();
        let spec = PlotSpec::infer(&raw.columns).unwrap();
        let svg = render_svg(&raw, &spec).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("mode=dft, n_users=4"));
    }

    #[test]
    fn empty_data_is_an_error_and_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("r.csv");
        fs::write(&csv, "x,y\n").unwrap();
        let out = dir.path().join("r.svg");
        assert!(render_plot(&csv, None, &out).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("r.csv");
        fs::write(&csv, "a,b\n1,2\n").unwrap();
        let out = dir.path().join("r.svg");
        let spec = PlotSpec::new("a", "c");
        assert!(matches!(render_plot(&csv, Some(&spec), &out), Err(Error::Schema { .. })));
    }
}
