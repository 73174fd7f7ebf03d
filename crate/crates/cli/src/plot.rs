//! Static plot generation: one SVG line chart per metric with standard-error
//! bars, one series per scheme, plus a canonical plot-data table for diffing.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub sweep_value: f64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Default)]
pub struct PlotData {
    /// `metric -> scheme -> points sorted by sweep value`.
    pub metrics: BTreeMap<String, BTreeMap<String, Vec<PlotPoint>>>,
    pub sweep_var: String,
}

pub fn read_results(csv_text: &str) -> Result<PlotData> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = reader.headers().context("results csv has no header")?.clone();
    let expect = risfair_core::experiment::CSV_HEADER.split(',').collect::<Vec<_>>();
    let got: Vec<&str> = headers.iter().collect();
    if got != expect {
        bail!("unexpected csv header {:?}", got.join(","));
    }
    let mut data = PlotData::default();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.context("malformed csv record")?;
        let field = |i: usize| -> Result<&str> {
            record.get(i).with_context(|| format!("missing column {i}"))
        };
        let sweep_var = field(1)?.to_string();
        let sweep_value: f64 = field(2)?.parse().context("sweep_value not a number")?;
        let scheme = field(3)?.to_string();
        let metric = field(4)?.to_string();
        let mean: f64 = field(5)?.parse().context("mean not a number")?;
        let stderr: f64 = field(6)?.parse().context("stderr not a number")?;
        data.sweep_var = sweep_var;
        data.metrics
            .entry(metric)
            .or_default()
            .entry(scheme)
            .or_default()
            .push(PlotPoint { sweep_value, mean, stderr });
        rows += 1;
    }
    if rows == 0 {
        bail!("no data rows in results csv");
    }
    for series in data.metrics.values_mut() {
        for points in series.values_mut() {
            points.sort_by(|a, b| a.sweep_value.total_cmp(&b.sweep_value));
        }
    }
    Ok(data)
}

/// Canonical table of exactly the aggregates that were plotted.
pub fn plot_data_table(data: &PlotData) -> String {
    let mut out = String::from("metric,scheme,sweep_value,mean,stderr\n");
    for (metric, series) in &data.metrics {
        for (scheme, points) in series {
            for p in points {
                out.push_str(&format!(
                    "{metric},{scheme},{:.9e},{:.9e},{:.9e}\n",
                    p.sweep_value, p.mean, p.stderr
                ));
            }
        }
    }
    out
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 70.0;
const MR: f64 = 150.0;
const MT: f64 = 30.0;
const MB: f64 = 50.0;

/// Render one metric as an SVG line chart with error bars.
pub fn render_svg(metric: &str, sweep_var: &str, series: &BTreeMap<String, Vec<PlotPoint>>) -> String {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for points in series.values() {
        for p in points {
            xs.push(p.sweep_value);
            ys.push(p.mean - p.stderr);
            ys.push(p.mean + p.stderr);
        }
    }
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let sx = |v: f64| ML + (v - x0) / (x1 - x0) * (W - ML - MR);
    let sy = |v: f64| H - MB - (v - y0) / (y1 - y0) * (H - MT - MB);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{} vs {}</text>\n",
        ML + (W - ML - MR) / 2.0,
        metric,
        sweep_var
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB,
        H - MB
    ));
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.3}</text>\n",
            sx(fx),
            H - MB + 18.0,
            fx
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>\n",
            ML - 6.0,
            sy(fy) + 4.0,
            fy
        ));
        svg.push_str(&format!(
            "<line x1=\"{ML}\" y1=\"{0:.1}\" x2=\"{1}\" y2=\"{0:.1}\" stroke=\"#dddddd\"/>\n",
            sy(fy),
            W - MR
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        ML + (W - ML - MR) / 2.0,
        H - 12.0,
        sweep_var
    ));

    for (si, (scheme, points)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let path: Vec<String> = points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.sweep_value), sy(p.mean)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        for p in points {
            let (px, py) = (sx(p.sweep_value), sy(p.mean));
            svg.push_str(&format!(
                "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"{color}\"/>\n"
            ));
            if p.stderr > 0.0 {
                let (ylo, yhi) = (sy(p.mean - p.stderr), sy(p.mean + p.stderr));
                svg.push_str(&format!(
                    "<line x1=\"{px:.2}\" y1=\"{ylo:.2}\" x2=\"{px:.2}\" y2=\"{yhi:.2}\" \
                     stroke=\"{color}\"/>\n\
                     <line x1=\"{:.2}\" y1=\"{ylo:.2}\" x2=\"{:.2}\" y2=\"{ylo:.2}\" \
                     stroke=\"{color}\"/>\n\
                     <line x1=\"{:.2}\" y1=\"{yhi:.2}\" x2=\"{:.2}\" y2=\"{yhi:.2}\" \
                     stroke=\"{color}\"/>\n",
                    px - 3.0,
                    px + 3.0,
                    px - 3.0,
                    px + 3.0
                ));
            }
        }
        let ly = MT + 16.0 * si as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly:.1}\" x2=\"{}\" y2=\"{ly:.1}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n<text x=\"{}\" y=\"{:.1}\">{scheme}</text>\n",
            W - MR + 10.0,
            W - MR + 34.0,
            W - MR + 40.0,
            ly + 4.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn span(values: &[f64]) -> (f64, f64) {
    let mut lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-300 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}
