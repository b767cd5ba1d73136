//! `report`: SVG line plots and a one-page pass/fail summary of a run
//! directory (and its `scatter` outputs, when present).

use std::fmt::Write as _;
use std::path::Path;

use plotters::prelude::*;

use crate::error::CliError;
use crate::format::Csv;
use crate::manifest::RunManifest;
use crate::output::OutputDir;
use crate::run::{CONFIG_NAME, DIAGNOSTICS_CSV, Q_PROFILES_CSV};
use crate::scatter::{CONVERGENCE_CSV, SUMMARY_CSV, WEAK_CSV};

pub const SUMMARY_TXT: &str = "summary.txt";
pub const SCATTER_DIR: &str = "scatter";

const TIME_TOL: f64 = 1e-9;

type Series = (String, Vec<(f64, f64)>);

/// Render a line plot to an SVG string; non-finite points are dropped.
pub fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<String, String> {
    let pts = || {
        series
            .iter()
            .flat_map(|s| s.1.iter())
            .filter(|p| p.0.is_finite() && p.1.is_finite())
    };
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in pts() {
        x0 = x0.min(p.0);
        x1 = x1.max(p.0);
        y0 = y0.min(p.1);
        y1 = y1.max(p.1);
    }
    if !x0.is_finite() {
        return Err("no finite points".into());
    }
    let pad = |a: f64, b: f64| {
        if b > a {
            (b - a) * 0.05
        } else {
            a.abs().max(1.0) * 0.05
        }
    };
    let (px, py) = (pad(x0, x1), pad(y0, y1));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| e.to_string())?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(80)
            .build_cartesian_2d((x0 - px)..(x1 + px), (y0 - py)..(y1 + py))
            .map_err(|e| e.to_string())?;
        chart
            .configure_mesh()
            .x_desc(x_label)
            .y_desc(y_label)
            .draw()
            .map_err(|e| e.to_string())?;
        for (k, (name, data)) in series.iter().enumerate() {
            let color = Palette99::pick(k).to_rgba();
            let data: Vec<(f64, f64)> = data
                .iter()
                .copied()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .collect();
            chart
                .draw_series(LineSeries::new(data, color.stroke_width(2)))
                .map_err(|e| e.to_string())?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        }
        if series.len() > 1 {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(|e| e.to_string())?;
        }
        root.present().map_err(|e| e.to_string())?;
    }
    Ok(svg)
}

fn load_csv(path: &Path) -> Option<Csv> {
    Csv::parse(&std::fs::read_to_string(path).ok()?)
}

fn column_pairs(csv: &Csv, x: &str, y: &str, f: impl Fn(f64) -> f64) -> Option<Vec<(f64, f64)>> {
    let xs = csv.numbers(x)?;
    let ys = csv.numbers(y)?;
    Some(xs.into_iter().zip(ys).map(|(a, b)| (a, f(b))).collect())
}

fn metric(csv: &Csv, name: &str) -> Option<f64> {
    let v = csv.column("value")?;
    let m = csv.column("metric")?;
    csv.rows.iter().find(|r| r[m] == name)?.get(v)?.parse().ok()
}

fn value_at(csv: &Csv, col: &str, t: f64) -> Option<f64> {
    let ts = csv.numbers("t")?;
    let vs = csv.numbers(col)?;
    ts.iter()
        .position(|s| (s - t).abs() < TIME_TOL)
        .map(|i| vs[i])
        .filter(|v| v.is_finite())
}

/// `||Q(t+1) - Q(t)||_inf` from the stored profiles, for every `t` with both.
fn q_successive(q: &Csv) -> Vec<(f64, f64)> {
    let (Some(ts), Some(vs)) = (q.numbers("t"), q.numbers("q")) else {
        return Vec::new();
    };
    let mut profiles: Vec<(f64, Vec<f64>)> = Vec::new();
    for (t, v) in ts.into_iter().zip(vs) {
        match profiles.last_mut() {
            Some((lt, p)) if (*lt - t).abs() < TIME_TOL => p.push(v),
            _ => profiles.push((t, vec![v])),
        }
    }
    let mut out = Vec::new();
    for a in &profiles {
        if let Some(b) = profiles.iter().find(|b| (b.0 - a.0 - 1.0).abs() < TIME_TOL) {
            let d =
                a.1.iter()
                    .zip(&b.1)
                    .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            out.push((a.0, d));
        }
    }
    out
}

/// Q profile cut along the `u1` axis through the node row nearest `u2 = 0`.
fn q_cuts(q: &Csv) -> Vec<Series> {
    let (Some(ts), Some(u1), Some(u2), Some(vs)) = (
        q.numbers("t"),
        q.numbers("u1"),
        q.numbers("u2"),
        q.numbers("q"),
    ) else {
        return Vec::new();
    };
    let row = u2
        .iter()
        .copied()
        .fold(f64::INFINITY, |m, v| if v.abs() < m.abs() { v } else { m });
    let mut out: Vec<Series> = Vec::new();
    for i in 0..ts.len() {
        if (u2[i] - row).abs() > TIME_TOL {
            continue;
        }
        let name = format!("t = {}", ts[i]);
        match out.last_mut() {
            Some((n, p)) if *n == name => p.push((u1[i], vs[i])),
            _ => out.push((name, vec![(u1[i], vs[i])])),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Skip,
}

impl Verdict {
    fn of(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        }
    }
}

/// Ratios `d[i+1] / d[i]` of the values at consecutive times in `[lo, hi]`.
fn ratios(d: &[(f64, f64)], lo: f64, hi: f64) -> Vec<f64> {
    let w: Vec<f64> = d
        .iter()
        .filter(|(t, _)| *t >= lo - TIME_TOL && *t <= hi + TIME_TOL)
        .map(|p| p.1)
        .collect();
    w.windows(2).map(|p| p[1] / p[0]).collect()
}

struct Inputs {
    diag: Option<Csv>,
    q: Option<Csv>,
    conv: Option<Csv>,
    summary: Option<Csv>,
    weak: Option<Csv>,
    manifest: Option<RunManifest>,
}

fn criteria(inp: &Inputs) -> Vec<(String, Verdict, String)> {
    let mut out = Vec::new();
    let mut push = |name: &str, v: Verdict, detail: String| out.push((name.to_string(), v, detail));
    let none = || (Verdict::Skip, "inputs missing".to_string());
    push(
        "1 exact linear reduction",
        Verdict::Skip,
        "measured by the acceptance suite, not from a run directory".into(),
    );
    push(
        "2 Poisson oracle equivalence",
        Verdict::Skip,
        "measured by the oracle command and the acceptance suite".into(),
    );

    let (v, d) = inp
        .diag
        .as_ref()
        .and_then(|c| {
            let col = c.column("mass")?;
            let bitwise = c.rows.iter().all(|r| r[col] == c.rows[0][col]);
            let drift = c.numbers("hamiltonian_rel_drift")?.into_iter().fold(0.0f64, |m, x| m.max(x.abs()));
            Some((
                Verdict::of(bitwise && drift < 1e-2),
                format!("mass bitwise constant: {bitwise}; max |H(t)-H(0)|/|H(0)| = {drift:.3e} (< 1e-2)"),
            ))
        })
        .unwrap_or_else(none);
    push("3 conservation", v, d);

    let (v, d) = inp
        .diag
        .as_ref()
        .and_then(|c| {
            let s = c.numbers("sup_e2t_rho")?;
            let s0 = *s.first()?;
            let worst = s.iter().fold(1.0f64, |m, &x| m.max(x / s0).max(s0 / x));
            Some((
                Verdict::of(worst <= 2.0),
                format!("max factor from t=0 value: {worst:.4} (<= 2)"),
            ))
        })
        .unwrap_or_else(none);
    push("4 density decay", v, d);

    let (v, d) = inp
        .q
        .as_ref()
        .map(|q| {
            let r = ratios(&q_successive(q), 4.0, 7.0);
            if r.len() < 3 {
                (Verdict::Skip, "profiles at t = 4..8 needed".into())
            } else {
                (
                    Verdict::of(r.iter().all(|&x| x <= 0.6)),
                    format!("ratios {r:.3?} (<= 0.6)"),
                )
            }
        })
        .unwrap_or_else(none);
    push("5 stable-average convergence", v, d);

    let (v, d) = inp
        .conv
        .as_ref()
        .and_then(|c| {
            let (f5, f7) = (
                value_at(c, "force_distance", 5.0)?,
                value_at(c, "force_distance", 7.0)?,
            );
            Some((
                Verdict::of(f5 >= 2.0 * f7),
                format!("t=5: {f5:.3e}, t=7: {f7:.3e}, factor {:.3} (>= 2)", f5 / f7),
            ))
        })
        .unwrap_or_else(none);
    push("6 force-profile convergence", v, d);

    let (v, d) = match (&inp.conv, &inp.summary) {
        (Some(c), Some(s)) => {
            let d: Vec<(f64, f64)> =
                column_pairs(c, "t", "corrected_sup_diff", |x| x).unwrap_or_default();
            let r = ratios(&d, 5.0, 7.0);
            let (cs, rs) = (metric(s, "control_slope"), metric(s, "converged_slope"));
            match (r.len() >= 2, cs, rs) {
                (true, Some(cs), Some(rs)) => (
                    Verdict::of(r.iter().all(|&x| x <= 0.6) && cs >= 5.0 * rs),
                    format!("ratios {r:.3?} (<= 0.6); control slope {cs:.3e} vs converged {rs:.3e} (>= 5x)"),
                ),
                _ => (Verdict::Skip, "coordinates at t = 4..7 needed".into()),
            }
        }
        _ => none(),
    };
    push("7 modified scattering", v, d);

    let (v, d) = inp
        .diag
        .as_ref()
        .and_then(|c| {
            let sf = c.numbers("sup_sf")?;
            let uf = c.numbers("uf_ratio")?;
            let (sf0, uf0) = (*sf.first()?, *uf.first()?);
            let sfm = sf.iter().copied().fold(0.0, f64::max);
            let ufm = uf.iter().copied().fold(0.0, f64::max);
            Some((
                Verdict::of(sfm <= 10.0 * sf0 && ufm <= 10.0 * uf0),
                format!(
                    "sup Sf / t=0: {:.3}; sup Uf/(1+t) / t=0: {:.3} (<= 10)",
                    sfm / sf0,
                    ufm / uf0
                ),
            ))
        })
        .unwrap_or_else(none);
    push("8 derivative bounds", v, d);

    let (v, d) = inp
        .weak
        .as_ref()
        .and_then(|w| {
            let r = w.numbers("rel_err")?;
            if r.len() < 2 {
                return None;
            }
            Some((
                Verdict::of(r.iter().all(|&x| x < 0.05)),
                format!("relative errors {r:.4?} (< 0.05)"),
            ))
        })
        .unwrap_or_else(none);
    push("9 weak convergence", v, d);

    let (v, d) = inp
        .summary
        .as_ref()
        .and_then(|s| {
            let (m, h) = (
                metric(s, "mass_rel_err")?,
                metric(s, "hamiltonian_rel_err")?,
            );
            Some((
                Verdict::of(m < 0.01 && h < 0.05),
                format!("mass {m:.3e} (< 1e-2); energy {h:.3e} (< 5e-2)"),
            ))
        })
        .unwrap_or_else(none);
    push("10 scattering conservation", v, d);

    let (v, d) = match &inp.manifest {
        Some(m) if m.end_time > 0.0 => {
            let secs = m.end_time - m.start_time;
            (
                Verdict::of(secs <= 900.0),
                format!("run wall time {secs:.0} s (<= 900 s)"),
            )
        }
        Some(_) => (
            Verdict::Skip,
            "wall time not recorded (reproducible run)".into(),
        ),
        None => none(),
    };
    push("11 runtime", v, d);
    out
}

pub fn cmd_report(run_dir: &Path, out: &Path, reproducible: bool) -> Result<(), CliError> {
    let scatter = run_dir.join(SCATTER_DIR);
    let inp = Inputs {
        diag: load_csv(&run_dir.join(DIAGNOSTICS_CSV)),
        q: load_csv(&run_dir.join(Q_PROFILES_CSV)),
        conv: load_csv(&scatter.join(CONVERGENCE_CSV)),
        summary: load_csv(&scatter.join(SUMMARY_CSV)),
        weak: load_csv(&scatter.join(WEAK_CSV)),
        manifest: RunManifest::read(run_dir).ok(),
    };
    let config = std::fs::read_to_string(run_dir.join(CONFIG_NAME)).unwrap_or_default();
    let manifest = RunManifest::new("report", config, reproducible);
    let mut dir = OutputDir::create(out, manifest, reproducible)?;

    let mut plots: Vec<(&str, Option<(String, &str, &str, Vec<Series>)>)> = Vec::new();
    let diag_plot = |y: &[(&str, &str)], f: fn(f64) -> f64| {
        inp.diag.as_ref().and_then(|c| {
            let s: Option<Vec<Series>> = y
                .iter()
                .map(|(col, name)| column_pairs(c, "t", col, f).map(|p| (name.to_string(), p)))
                .collect();
            s.filter(|s| s.iter().any(|x| !x.1.is_empty()))
        })
    };
    plots.push((
        "density_decay.svg",
        diag_plot(&[("sup_e2t_rho", "sup e^{2t} rho")], f64::log10)
            .map(|s| ("Density decay".into(), "t", "log10 sup e^{2t} rho", s)),
    ));
    let mass_energy = inp.diag.as_ref().and_then(|c| {
        let m = c.numbers("mass")?;
        let m0 = *m.first()?;
        let t = c.numbers("t")?;
        let mass: Vec<(f64, f64)> = t.iter().zip(&m).map(|(t, m)| (*t, m / m0 - 1.0)).collect();
        let h = column_pairs(c, "t", "hamiltonian_rel_drift", |x| x)?;
        Some(vec![
            ("(H(t) - H(0)) / |H(0)|".into(), h),
            ("mass(t) / mass(0) - 1".into(), mass),
        ])
    });
    plots.push((
        "energy_mass.svg",
        mass_energy.map(|s| ("Energy and mass".into(), "t", "relative change", s)),
    ));
    plots.push((
        "q_profiles.svg",
        inp.q
            .as_ref()
            .map(q_cuts)
            .filter(|s| !s.is_empty())
            .map(|s| ("Stable-average profiles, u2 = 0".into(), "u1", "Q", s)),
    ));
    let conv = inp.conv.as_ref().and_then(|c| {
        let a = column_pairs(c, "t", "corrected_sup_diff", f64::log10)?;
        let b = column_pairs(c, "t", "control_sup_diff", f64::log10)?;
        Some(vec![
            ("corrected".into(), a),
            ("uncorrected control".into(), b),
        ])
    });
    plots.push((
        "scattering_convergence.svg",
        conv.map(|s| {
            (
                "Scattering-coordinate convergence".into(),
                "t",
                "log10 sup difference",
                s,
            )
        }),
    ));
    let deriv = inp.diag.as_ref().and_then(|c| {
        let sf = c.numbers("sup_sf")?;
        let uf = c.numbers("uf_ratio")?;
        let t = c.numbers("t")?;
        let (sf0, uf0) = (*sf.first()?, *uf.first()?);
        Some(vec![
            (
                "sup|Sf| / t=0".into(),
                t.iter().zip(&sf).map(|(t, v)| (*t, v / sf0)).collect(),
            ),
            (
                "sup|Uf|/(1+t) / t=0".into(),
                t.iter().zip(&uf).map(|(t, v)| (*t, v / uf0)).collect(),
            ),
        ])
    });
    plots.push((
        "derivative_bounds.svg",
        deriv.map(|s| ("Derivative bounds".into(), "t", "ratio to t = 0", s)),
    ));

    let mut text = String::new();
    let _ = writeln!(text, "vpsaddle report for {}", run_dir.display());
    let _ = writeln!(text);
    let _ = writeln!(text, "plots:");
    let mut drawn = 0;
    for (name, plot) in plots {
        match plot {
            Some((title, xl, yl, series)) => match line_plot(&title, xl, yl, &series) {
                Ok(svg) => {
                    dir.write(name, svg.as_bytes())?;
                    let _ = writeln!(text, "  {name}");
                    drawn += 1;
                }
                Err(e) => dir.warn(format!("{name} skipped: {e}")),
            },
            None => {
                let _ = writeln!(text, "  {name}: skipped, series missing");
            }
        }
    }
    if drawn == 0 {
        let _ = writeln!(text, "  nothing to plot");
    }
    let _ = writeln!(text);
    let _ = writeln!(text, "acceptance criteria:");
    for (name, v, detail) in criteria(&inp) {
        let _ = writeln!(text, "  {} {name}: {detail}", v.label());
    }
    dir.write(SUMMARY_TXT, text.as_bytes())?;
    dir.finish("ok")
}
