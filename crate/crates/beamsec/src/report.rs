//! CSV and SVG rendering of sweep results: per-case rate curves over epsilon
//! with genie and overhead reference lines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{BeamsecError, Result};
use crate::experiments::{Case, SweepResult, SweepRow};

/// Fixed-width float formatting keeps re-runs byte-identical.
fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_sweep_csv<W: Write>(mut out: W, result: &SweepResult) -> Result<()> {
    writeln!(
        out,
        "scenario,case,epsilon,seed_count,mean_rate,rate_std,mse,genie_rate,overhead_rate"
    )?;
    for r in &result.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.case.label(),
            fmt(r.epsilon),
            r.seed_count,
            fmt(r.mean_rate),
            fmt(r.rate_std),
            fmt(r.mse),
            fmt(r.genie_rate),
            fmt(r.overhead_rate)
        )?;
    }
    Ok(())
}

pub fn write_mse_csv<W: Write>(mut out: W, result: &SweepResult) -> Result<()> {
    writeln!(out, "scenario,case,epsilon,mse_mean,mse_std")?;
    for r in &result.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.scenario,
            r.case.label(),
            fmt(r.epsilon),
            fmt(r.mse),
            fmt(r.mse_std)
        )?;
    }
    Ok(())
}

const PLOT_W: f64 = 720.0;
const PLOT_H: f64 = 480.0;
const MARGIN: f64 = 60.0;

fn case_color(case: Case) -> &'static str {
    match case {
        Case::Undefended => "#1f77b4",
        Case::UndefendedAttacked => "#d62728",
        Case::DefendedAttacked => "#2ca02c",
    }
}

/// Render one scenario's rate-vs-epsilon plot as SVG, with the acceptable
/// band between the overhead and genie reference lines shaded.
fn render_svg(scenario: &str, rows: &[&SweepRow]) -> String {
    let eps_max = rows.iter().map(|r| r.epsilon).fold(0.0f64, f64::max).max(1e-9);
    let genie = rows[0].genie_rate;
    let overhead = rows[0].overhead_rate;
    let rate_min = rows
        .iter()
        .map(|r| r.mean_rate)
        .chain([overhead])
        .fold(f64::INFINITY, f64::min);
    let rate_max = rows.iter().map(|r| r.mean_rate).chain([genie]).fold(0.0f64, f64::max);
    let pad = (rate_max - rate_min).max(1e-9) * 0.1;
    let (lo, hi) = (rate_min - pad, rate_max + pad);

    let sx = |e: f64| MARGIN + e / eps_max * (PLOT_W - 2.0 * MARGIN);
    let sy = |r: f64| PLOT_H - MARGIN - (r - lo) / (hi - lo) * (PLOT_H - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
         viewBox=\"0 0 {PLOT_W} {PLOT_H}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{} — achievable rate vs epsilon</text>\n",
        PLOT_W / 2.0, scenario
    ));
    // acceptable band between overhead and genie
    svg.push_str(&format!(
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#2ca02c\" fill-opacity=\"0.12\"/>\n",
        sx(0.0),
        sy(genie),
        sx(eps_max) - sx(0.0),
        (sy(overhead) - sy(genie)).abs()
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b:.2}\" x2=\"{r:.2}\" y2=\"{b:.2}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b:.2}\" stroke=\"black\"/>\n\
         <text x=\"{cx:.1}\" y=\"{lbl:.1}\" text-anchor=\"middle\" font-size=\"12\">epsilon</text>\n\
         <text x=\"16\" y=\"{cy:.1}\" font-size=\"12\" transform=\"rotate(-90 16 {cy:.1})\" text-anchor=\"middle\">rate (bits/s/Hz)</text>\n",
        m = MARGIN,
        t = MARGIN,
        b = PLOT_H - MARGIN,
        r = PLOT_W - MARGIN,
        cx = PLOT_W / 2.0,
        lbl = PLOT_H - 16.0,
        cy = PLOT_H / 2.0,
    ));
    // reference lines
    for (value, label, dash) in [(genie, "genie", "6,3"), (overhead, "overhead", "2,3")] {
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"gray\" stroke-dasharray=\"{dash}\"/>\n\
             <text x=\"{:.2}\" y=\"{ty:.2}\" font-size=\"11\" fill=\"gray\">{label}</text>\n",
            sx(0.0),
            sx(eps_max),
            sx(eps_max) - 64.0,
            y = sy(value),
            ty = sy(value) - 4.0,
        ));
    }
    // per-case series
    for case in Case::ALL {
        let series: Vec<&&SweepRow> = rows.iter().filter(|r| r.case == case).collect();
        if series.is_empty() {
            continue;
        }
        let points: Vec<String> = series
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.epsilon), sy(r.mean_rate)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            points.join(" "),
            case_color(case)
        ));
    }
    // legend
    let mut ly = MARGIN + 10.0;
    for case in Case::ALL {
        if !rows.iter().any(|r| r.case == case) {
            continue;
        }
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{ly:.1}\" x2=\"{x2:.1}\" y2=\"{ly:.1}\" stroke=\"{}\" stroke-width=\"2\"/>\n\
             <text x=\"{tx:.1}\" y=\"{ty:.1}\" font-size=\"11\">{}</text>\n",
            case_color(case),
            case.label(),
            x = MARGIN + 10.0,
            x2 = MARGIN + 34.0,
            tx = MARGIN + 40.0,
            ty = ly + 4.0,
        ));
        ly += 16.0;
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write `sweep.csv`, `mse.csv` and one SVG plot per scenario into `out_dir`.
/// Returns the created file paths.
pub fn emit_report(result: &SweepResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if result.rows.is_empty() {
        return Err(BeamsecError::InvalidParameter("empty sweep result".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();

    let sweep_path = out_dir.join("sweep.csv");
    write_sweep_csv(fs::File::create(&sweep_path)?, result)?;
    files.push(sweep_path);

    let mse_path = out_dir.join("mse.csv");
    write_mse_csv(fs::File::create(&mse_path)?, result)?;
    files.push(mse_path);

    let mut scenarios: Vec<&str> = result.rows.iter().map(|r| r.scenario.as_str()).collect();
    scenarios.dedup();
    scenarios.sort_unstable();
    scenarios.dedup();
    for scenario in scenarios {
        let rows: Vec<&SweepRow> =
            result.rows.iter().filter(|r| r.scenario == scenario).collect();
        let svg = render_svg(scenario, &rows);
        let path = out_dir.join(format!("rates_{scenario}.svg"));
        fs::write(&path, svg)?;
        files.push(path);
    }
    Ok(files)
}
