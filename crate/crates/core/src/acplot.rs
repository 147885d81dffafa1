//! Assignment-control plot data (propensity vs prognostic score per unit)
//! and a static SVG scatter with dotted lines joining matched units.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::fmt_f64;
use crate::error::{Error, Result};
use crate::matched::Matching;

#[derive(Debug, Clone, PartialEq)]
pub struct AcRow {
    /// 0-based unit index (written 1-based).
    pub unit: usize,
    pub phi: f64,
    pub psi: f64,
    pub t: u8,
    /// 1-based matched-set id, if the unit is matched.
    pub set_id: Option<usize>,
    pub pilot: bool,
}

pub const AC_HEADER: &str = "unit_id,phi,psi,t,set_id,pilot_flag";

/// One row per unit with its scores, arm, matched set and pilot membership.
pub fn ac_rows(t: &[u8], phi: &[f64], psi: &[f64], matching: Option<&Matching>, pilot: &[usize]) -> Result<Vec<AcRow>> {
    let n = t.len();
    if phi.len() != n || psi.len() != n {
        return Err(Error::Dimension(format!("{n} units but {} phi and {} psi values", phi.len(), psi.len())));
    }
    let mut set_of = vec![None; n];
    if let Some(m) = matching {
        for (s, set) in m.sets.iter().enumerate() {
            for u in set.units() {
                *set_of.get_mut(u).ok_or_else(|| Error::Dimension(format!("matched unit {} out of range", u + 1)))? =
                    Some(s + 1);
            }
        }
    }
    let mut is_pilot = vec![false; n];
    for &p in pilot {
        *is_pilot.get_mut(p).ok_or_else(|| Error::Dimension(format!("pilot unit {} out of range", p + 1)))? = true;
    }
    Ok((0..n)
        .map(|i| AcRow { unit: i, phi: phi[i], psi: psi[i], t: t[i], set_id: set_of[i], pilot: is_pilot[i] })
        .collect())
}

pub fn ac_csv_string(rows: &[AcRow]) -> String {
    let mut out = String::from(AC_HEADER);
    out.push('\n');
    for r in rows {
        let set = r.set_id.map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{},{}", r.unit + 1, fmt_f64(r.phi), fmt_f64(r.psi), r.t, set, u8::from(r.pilot));
    }
    out
}

/// CSV text of [`ac_rows`].
pub fn emit_ac_data(t: &[u8], phi: &[f64], psi: &[f64], matching: Option<&Matching>, pilot: &[usize]) -> Result<String> {
    Ok(ac_csv_string(&ac_rows(t, phi, psi, matching, pilot)?))
}

pub fn parse_ac_csv(text: &str) -> Result<Vec<AcRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let want: Vec<&str> = AC_HEADER.split(',').collect();
    for w in &want {
        if !header.iter().any(|h| h == w) {
            return Err(Error::MissingColumn((*w).to_string()));
        }
    }
    let col = |name: &str| header.iter().position(|h| h == name).expect("checked above");
    let idx: Vec<usize> = want.iter().map(|w| col(w)).collect();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line + 1;
        let cell = |c: usize| rec.get(idx[c]).unwrap_or("");
        let bad = |c: usize| Error::Cell { row, column: want[c].to_string(), value: cell(c).to_string() };
        let num = |c: usize| -> Result<f64> {
            cell(c).parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(c))
        };
        let unit: usize = cell(0).parse().ok().filter(|&u| u >= 1).ok_or_else(|| bad(0))?;
        let t = match cell(3) {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad(3)),
        };
        let set_id = match cell(4) {
            "" => None,
            s => Some(s.parse::<usize>().ok().filter(|&v| v >= 1).ok_or_else(|| bad(4))?),
        };
        let pilot = match cell(5) {
            "0" => false,
            "1" => true,
            _ => return Err(bad(5)),
        };
        rows.push(AcRow { unit: unit - 1, phi: num(1)?, psi: num(2)?, t, set_id, pilot });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgOptions {
    pub width: f64,
    pub height: f64,
    pub title: Option<String>,
}

impl Default for SvgOptions {
    fn default() -> Self {
        SvgOptions { width: 640.0, height: 480.0, title: None }
    }
}

/// Treated–control pairs to join: every treated unit of a set to every
/// control of the same set, as indices into `rows`.
pub fn segments(rows: &[AcRow]) -> Vec<(usize, usize)> {
    let mut sets: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        if let Some(s) = r.set_id {
            let e = sets.entry(s).or_default();
            if r.t == 1 {
                e.0.push(i);
            } else {
                e.1.push(i);
            }
        }
    }
    sets.values().flat_map(|(ts, cs)| ts.iter().flat_map(move |&t| cs.iter().map(move |&c| (t, c)))).collect()
}

fn extent(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let span = hi - lo;
    if span == 0.0 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo - 0.05 * span, hi + 0.05 * span)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG scatter of phi (horizontal) against psi (vertical). Output bytes
/// depend only on the rows and options.
pub fn render_svg(rows: &[AcRow], opts: &SvgOptions) -> String {
    let (w, h) = (opts.width, opts.height);
    let (left, right, top, bottom) = (56.0, 16.0, if opts.title.is_some() { 32.0 } else { 16.0 }, 44.0);
    let (x0, x1) = extent(rows.iter().map(|r| r.phi));
    let (y0, y1) = extent(rows.iter().map(|r| r.psi));
    let px = |v: f64| left + (v - x0) / (x1 - x0) * (w - left - right);
    let py = |v: f64| h - bottom - (v - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" viewBox="0 0 {w} {h}" width="{w}" height="{h}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    if let Some(title) = &opts.title {
        let _ = writeln!(s, r#"<text x="{:.3}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    }
    let _ = writeln!(s, r#"<g class="axes" stroke="black" stroke-width="1">"#);
    let _ = writeln!(s, r#"<line x1="{left:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}"/>"#, h - bottom, w - right, h - bottom);
    let _ = writeln!(s, r#"<line x1="{left:.3}" y1="{top:.3}" x2="{left:.3}" y2="{:.3}"/>"#, h - bottom);
    s.push_str("</g>\n");
    let _ = writeln!(s, r#"<g class="ticks" font-size="10">"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (vx, vy) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{vx:.2}</text>"#, px(vx), h - bottom + 14.0);
        let _ = writeln!(s, r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{vy:.2}</text>"#, left - 4.0, py(vy) + 3.0);
    }
    s.push_str("</g>\n");
    let _ = writeln!(s, r#"<text class="xlabel" x="{:.3}" y="{:.3}" text-anchor="middle" font-size="12">phi</text>"#, (left + w - right) / 2.0, h - 8.0);
    let _ = writeln!(
        s,
        r#"<text class="ylabel" x="14" y="{:.3}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {:.3})">psi</text>"#,
        (top + h - bottom) / 2.0,
        (top + h - bottom) / 2.0
    );
    let _ = writeln!(s, r#"<g class="matches" stroke="gray" stroke-width="0.8" stroke-dasharray="2,2">"#);
    for (a, b) in segments(rows) {
        let (ra, rb) = (&rows[a], &rows[b]);
        let _ = writeln!(s, r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}"/>"#, px(ra.phi), py(ra.psi), px(rb.phi), py(rb.psi));
    }
    s.push_str("</g>\n");
    let _ = writeln!(s, r#"<g class="points" stroke-width="0.8">"#);
    // Controls first so treated points stay visible on top.
    for arm in [0u8, 1] {
        for r in rows.iter().filter(|r| r.t == arm) {
            let (class, style) = match (r.t, r.pilot) {
                (1, _) => ("treated", r##"fill="#d62728" stroke="#7f1010""##),
                (_, true) => ("pilot", r##"fill="none" stroke="#1f77b4""##),
                _ => ("control", r##"fill="#1f77b4" stroke="#0b3a5e" fill-opacity="0.6""##),
            };
            let _ = writeln!(s, r#"<circle class="{class}" cx="{:.3}" cy="{:.3}" r="2.5" {style}/>"#, px(r.phi), py(r.psi));
        }
    }
    s.push_str("</g>\n</svg>\n");
    s
}

/// Reads an AC CSV file and writes its SVG rendering.
pub fn render_svg_file(csv_path: impl AsRef<Path>, out_path: impl AsRef<Path>, opts: &SvgOptions) -> Result<()> {
    let text = std::fs::read_to_string(csv_path)?;
    let rows = parse_ac_csv(&text)?;
    std::fs::write(out_path, render_svg(&rows, opts))?;
    Ok(())
}
