//! CSV and SVG writers for the reproduction runs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Significant digits used for every number in the CSV files.
pub const SIG_DIGITS: usize = 12;

/// Formats `v` like C's `%.{sig}g`.
pub fn format_sig(v: f64, sig: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.*e}", sig - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= sig as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One grid point of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub policy: &'static str,
    pub abs_ln_alpha: f64,
    pub alpha: f64,
    pub beta_star: f64,
    pub n_runs: u64,
    pub add_mean: f64,
    pub add_stderr: f64,
    pub pfa_mean: f64,
    pub pfa_stderr: f64,
    pub ecb_mean: f64,
    pub ecb_stderr: f64,
    pub add_upper: f64,
    pub add_relaxed: f64,
    pub converse_two_term: f64,
    pub first_order: f64,
    pub innocent_add: f64,
    pub seed: u64,
    pub cap_hits: u64,
}

const HEADER: [&str; 18] = [
    "policy",
    "|ln_alpha|",
    "alpha",
    "beta_star",
    "n_runs",
    "add_mean",
    "add_stderr",
    "pfa_mean",
    "pfa_stderr",
    "ecb_mean",
    "ecb_stderr",
    "add_upper",
    "add_relaxed",
    "converse_two_term",
    "first_order",
    "innocent_add",
    "seed",
    "cap_hits",
];

const NORMALIZED: [&str; 5] = [
    "add_mean_over_abs_ln_alpha",
    "add_upper_over_abs_ln_alpha",
    "converse_two_term_over_abs_ln_alpha",
    "first_order_over_abs_ln_alpha",
    "innocent_add_over_abs_ln_alpha",
];

impl Row {
    fn fields(&self) -> Vec<String> {
        let g = |v: f64| format_sig(v, SIG_DIGITS);
        vec![
            self.policy.to_string(),
            g(self.abs_ln_alpha),
            g(self.alpha),
            g(self.beta_star),
            self.n_runs.to_string(),
            g(self.add_mean),
            g(self.add_stderr),
            g(self.pfa_mean),
            g(self.pfa_stderr),
            g(self.ecb_mean),
            g(self.ecb_stderr),
            g(self.add_upper),
            g(self.add_relaxed),
            g(self.converse_two_term),
            g(self.first_order),
            g(self.innocent_add),
            self.seed.to_string(),
            self.cap_hits.to_string(),
        ]
    }

    fn normalized(&self) -> Vec<String> {
        let l = self.abs_ln_alpha;
        [self.add_mean, self.add_upper, self.converse_two_term, self.first_order, self.innocent_add]
            .iter()
            .map(|v| format_sig(v / l, SIG_DIGITS))
            .collect()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn write_csv(path: &Path, rows: &[Row], normalized: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<&str> = HEADER.to_vec();
    if normalized {
        header.extend(NORMALIZED);
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut f = r.fields();
        if normalized {
            f.extend(r.normalized());
        }
        w.write_record(&f).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `fig1.csv`: absolute delays.
pub fn write_fig1(path: &Path, rows: &[Row]) -> Result<()> {
    write_csv(path, rows, false)
}

/// `fig2.csv`: the same rows plus delays divided by `|ln alpha|`.
pub fn write_fig2(path: &Path, rows: &[Row]) -> Result<()> {
    write_csv(path, rows, true)
}

/// A named polyline.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"];

/// Renders a self-contained line chart.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (720.0, 480.0);
    let (left, right, top, bottom) = (70.0, 190.0, 40.0, 60.0);
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let fx = x0 + (x1 - x0) * i as f64 / 5.0;
        let fy = y0 + (y1 - y0) * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{0:.1}" y1="{1}" x2="{0:.1}" y2="{2}" stroke="#ddd"/><text x="{0:.1}" y="{3}" text-anchor="middle">{4}</text>"##,
            sx(fx),
            top,
            top + ph,
            top + ph + 16.0,
            format_sig(fx, 3)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{1}" y1="{0:.1}" x2="{2}" y2="{0:.1}" stroke="#ddd"/><text x="{3}" y="{0:.1}" text-anchor="end" dy="4">{4}</text>"##,
            sy(fy),
            left,
            left + pw,
            left - 6.0,
            format_sig(fy, 3)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 18.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.8"{dash} points="{}"/>"#,
            path.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="1.8"{dash}/><text x="{}" y="{ly}" dy="4">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
