use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::compare::ResultRow;
use super::gridsearch::LambdaCurve;
use super::svg::{escape, Svg};
use crate::error::{Error, Result};
use crate::strategies::mean;

/// A rendered figure and the exact values it shows. Every plotted point is
/// a `circle` whose `data-series`, `data-x` and `data-y` attributes repeat
/// the corresponding CSV fields verbatim.
#[derive(Clone, Debug, PartialEq)]
pub struct Plot {
    pub name: String,
    pub svg: String,
    pub csv: String,
}

impl Plot {
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        for (ext, body) in [("svg", &self.svg), ("csv", &self.csv)] {
            let p = out_dir.join(format!("{}.{ext}", self.name));
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

struct Series {
    name: String,
    /// (x label, value, highlighted)
    points: Vec<(String, f64, bool)>,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Line chart over shared categorical x positions.
fn line_chart(title: &str, x_title: &str, categories: &[String], series: &[Series]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 70.0, 170.0, 40.0, 60.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let values: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).filter(|v| v.is_finite()).collect();
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.1).max(0.02);
    let (lo, hi) = (lo - pad, hi + pad);
    let xpos = |i: usize| {
        if categories.len() == 1 {
            left + plot_w / 2.0
        } else {
            left + plot_w * i as f64 / (categories.len() - 1) as f64
        }
    };
    let ypos = |v: f64| top + plot_h * (1.0 - (v - lo) / (hi - lo));
    let mut svg = Svg::new(w, h);
    svg.text(w / 2.0 - right / 2.0 + left / 2.0, top - 15.0, "middle", 14.0, title);
    svg.push(&format!(
        r#"<line class="axis" x1="{left}" y1="{y0:.1}" x2="{x1:.1}" y2="{y0:.1}" stroke="black"/>"#,
        y0 = top + plot_h,
        x1 = left + plot_w
    ));
    svg.push(&format!(
        r#"<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{y0:.1}" stroke="black"/>"#,
        y0 = top + plot_h
    ));
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        svg.text(left - 8.0, ypos(v) + 4.0, "end", 10.0, &format!("{v:.3}"));
    }
    for (i, c) in categories.iter().enumerate() {
        svg.text(xpos(i), top + plot_h + 18.0, "middle", 10.0, c);
    }
    svg.text(left + plot_w / 2.0, h - 15.0, "middle", 12.0, x_title);
    svg.push(&format!(
        r#"<text x="18" y="{y:.1}" transform="rotate(-90 18 {y:.1})" text-anchor="middle" font-size="12" font-family="sans-serif">surface Dice</text>"#,
        y = top + plot_h / 2.0
    ));
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<(f64, f64, &(String, f64, bool))> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|p| {
                let i = categories.iter().position(|c| *c == p.0).expect("category of every point");
                (xpos(i), ypos(p.1), p)
            })
            .collect();
        let pts: Vec<String> = coords.iter().map(|(x, y, _)| format!("{x:.2},{y:.2}")).collect();
        svg.push(&format!(
            r#"<polyline class="series" data-series="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            escape(&s.name),
            pts.join(" ")
        ));
        for (x, y, p) in &coords {
            let (class, r) = if p.2 { ("point optimum", 7.0) } else { ("point", 3.5) };
            svg.push(&format!(
                r#"<circle class="{class}" data-series="{}" data-x="{}" data-y="{}" cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{color}"/>"#,
                escape(&s.name),
                escape(&p.0),
                p.1
            ));
        }
        let ly = top + 14.0 + 18.0 * k as f64;
        svg.push(&format!(
            r#"<line class="legend" x1="{a:.1}" y1="{ly:.1}" x2="{b:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            a = left + plot_w + 15.0,
            b = left + plot_w + 35.0
        ));
        svg.text(left + plot_w + 40.0, ly + 4.0, "start", 11.0, &s.name);
    }
    svg.finish()
}

/// Scarcity labels ordered numerically with `full` last.
fn order_scarcity(labels: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut v: Vec<String> = labels.into_iter().collect();
    v.sort_by_key(|s| (s.parse::<usize>().unwrap_or(usize::MAX), s.clone()));
    v.dedup();
    v
}

/// Mean surface Dice against the number of annotated target samples, one
/// line per strategy. `strategies` restricts the lines; a filter matching
/// nothing is an error.
pub fn render_scarcity_curves(rows: &[ResultRow], strategies: Option<&[String]>) -> Result<Plot> {
    let mut available: Vec<String> = Vec::new();
    for r in rows {
        if !available.contains(&r.strategy) {
            available.push(r.strategy.clone());
        }
    }
    let chosen: Vec<String> = match strategies {
        Some(f) => available.iter().filter(|s| f.contains(s)).cloned().collect(),
        None => available.clone(),
    };
    if chosen.is_empty() {
        return Err(Error::Config(format!(
            "no results match the strategy filter; available strategies: {}",
            available.join(", ")
        )));
    }
    let categories = order_scarcity(rows.iter().map(|r| r.scarcity.clone()));
    let mut csv = String::from("strategy,scarcity,mean_surface_dice,n_runs\n");
    let mut series = Vec::new();
    for s in &chosen {
        let mut by: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in rows.iter().filter(|r| &r.strategy == s) {
            let i = categories.iter().position(|c| *c == r.scarcity).expect("known scarcity");
            by.entry(i).or_default().push(r.mean_surface_dice);
        }
        let mut points = Vec::new();
        for (i, v) in by {
            let m = mean(&v);
            let _ = writeln!(csv, "{s},{},{m},{}", categories[i], v.len());
            points.push((categories[i].clone(), m, false));
        }
        series.push(Series { name: s.clone(), points });
    }
    Ok(Plot {
        name: "scarcity_curves".into(),
        svg: line_chart("surface Dice against annotated target samples", "annotated target samples", &categories, &series),
        csv,
    })
}

/// Validation score against lambda, one line per scarcity level, with the
/// best lambda drawn as an enlarged `point optimum`.
pub fn render_lambda_curves(curves: &[LambdaCurve]) -> Result<Plot> {
    if curves.is_empty() {
        return Err(Error::Config("no lambda curves to plot".into()));
    }
    let mut categories: Vec<String> = Vec::new();
    let mut lambdas: Vec<f64> = curves.iter().flat_map(|c| c.lambdas.iter().copied()).collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    for l in lambdas {
        categories.push(l.to_string());
    }
    let mut csv = String::from("scarcity,lambda,mean_surface_dice,is_best\n");
    let mut series = Vec::new();
    for c in curves {
        let mut points = Vec::new();
        for (&l, &s) in c.lambdas.iter().zip(&c.scores) {
            let best = l == c.best_lambda;
            let _ = writeln!(csv, "{},{l},{s},{best}", c.scarcity);
            points.push((l.to_string(), s, best));
        }
        series.push(Series {
            name: format!("{} samples", c.scarcity),
            points,
        });
    }
    Ok(Plot {
        name: "lambda_curves".into(),
        svg: line_chart("validation surface Dice against lambda", "lambda", &categories, &series),
        csv,
    })
}
