//! `scatter`: asymptotic profile, scattering coordinates and the scattering
//! state from the snapshots of a completed run.

use std::path::{Path, PathBuf};

use vpsaddle::diagnostics::{fit_rate, FitModel, StableAverage, TestFunction};
use vpsaddle::scattering::{
    asymptotic_conservation_check, coord_sup_difference, dirac_prediction, estimate_q_inf,
    max_s_slope, reconstruct_f_inf, scattering_coords_of, solve_asymptotic_poisson,
    AsymptoticField, ScatteringCoords, EXTRACTION_LAG,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::format::{fmt_num, Csv, GridSnapshot, ParticleSnapshot};
use crate::manifest::RunManifest;
use crate::output::OutputDir;
use crate::run::{q_hat_path, CONFIG_NAME, DIAGNOSTICS_CSV, FORCE_PROFILES_CSV};

/// Snapshots needed: at least this many sample times, all at or after
/// [`MIN_SCATTER_TIME`].
pub const MIN_SNAPSHOTS: usize = 3;
pub const MIN_SCATTER_TIME: f64 = 3.0;

pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const SUMMARY_CSV: &str = "scatter_summary.csv";
pub const WEAK_CSV: &str = "weak_dirac.csv";
pub const COORDS_CSV: &str = "particle_coords.csv";

const TIME_TOL: f64 = 1e-9;

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Csv, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Csv::parse(&text).ok_or_else(|| {
        CliError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, "ragged or empty CSV"),
        )
    })
}

/// Particle snapshot files of a run, sorted by time.
fn particle_snapshots(run_dir: &Path) -> Result<Vec<(f64, PathBuf)>, CliError> {
    let dir = run_dir.join("particles");
    let mut out = Vec::new();
    let Ok(entries) = std::fs::read_dir(&dir) else {
        return Ok(out);
    };
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
        if path.extension().is_some_and(|e| e == "vpp") {
            let mut f = std::fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
            let mut head = [0u8; 20];
            std::io::Read::read_exact(&mut f, &mut head).map_err(|e| CliError::io(&path, e))?;
            if &head[..4] == crate::format::PARTICLE_MAGIC {
                let t = f64::from_le_bytes(head[12..20].try_into().expect("8 bytes"));
                out.push((t, path));
            }
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

fn test_center(f: &TestFunction) -> [f64; 2] {
    match *f {
        TestFunction::GaussianBump { u_center, .. } | TestFunction::CosineBump { u_center, .. } => {
            u_center
        }
    }
}

/// `sup |force_profile(t) - grad phi_asymp|` over the stored profile nodes.
fn force_distances(csv: &Csv, field: &AsymptoticField) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    let cols = ["t", "u1", "u2", "e1", "e2"].map(|c| csv.column(c));
    let [Some(ct), Some(c1), Some(c2), Some(ce1), Some(ce2)] = cols else {
        return out;
    };
    for row in &csv.rows {
        let num = |c: usize| row[c].parse::<f64>().ok();
        let (Some(t), Some(u1), Some(u2)) = (num(ct), num(c1), num(c2)) else {
            continue;
        };
        let (Some(e1), Some(e2)) = (num(ce1), num(ce2)) else {
            continue;
        };
        let Some(g) = field.grad_at([u1, u2]) else {
            continue;
        };
        let d = (e1 - g[0]).hypot(e2 - g[1]);
        match out.last_mut() {
            Some((lt, m)) if (*lt - t).abs() < TIME_TOL => *m = m.max(d),
            _ => out.push((t, d)),
        }
    }
    out
}

pub fn cmd_scatter(run_dir: &Path, out: &Path, reproducible: bool) -> Result<(), CliError> {
    let cfg_path = run_dir.join(CONFIG_NAME);
    if !cfg_path.exists() {
        return Err(CliError::MissingInputs(format!(
            "{} not found; not a run directory",
            cfg_path.display()
        )));
    }
    let cfg = RunConfig::load(&cfg_path)?;
    let sim = &cfg.sim;
    let diag_path = run_dir.join(DIAGNOSTICS_CSV);
    if !diag_path.exists() {
        return Err(CliError::MissingInputs(format!(
            "{} not found",
            diag_path.display()
        )));
    }
    let diag = read_csv(&diag_path)?;

    let snaps: Vec<(f64, PathBuf)> = particle_snapshots(run_dir)?
        .into_iter()
        .filter(|(t, _)| *t >= MIN_SCATTER_TIME - TIME_TOL)
        .collect();
    if snaps.len() < MIN_SNAPSHOTS {
        let have: Vec<String> = snaps.iter().map(|(t, _)| t.to_string()).collect();
        let want: Vec<String> = (0..MIN_SNAPSHOTS)
            .map(|k| (MIN_SCATTER_TIME + k as f64).to_string())
            .collect();
        return Err(CliError::MissingInputs(format!(
            "particle snapshots at {MIN_SNAPSHOTS} or more sample times >= {MIN_SCATTER_TIME} are required, found [{}]; \
             rerun with e.g. time.sample_times including {} and scatter.snapshot_from <= {MIN_SCATTER_TIME}",
            have.join(", "),
            want.join(", ")
        )));
    }
    let t2 = cfg.scatter.t2.unwrap_or(snaps.last().expect("nonempty").0);
    let t1 = cfg.scatter.t1.unwrap_or(t2 - EXTRACTION_LAG);
    let window: Vec<f64> = sim
        .sample_times
        .iter()
        .copied()
        .filter(|&t| t >= t1 - TIME_TOL && t <= t2 + TIME_TOL)
        .collect();
    let mut stable = Vec::new();
    let mut missing = Vec::new();
    for &t in &window {
        let p = run_dir.join(q_hat_path(t));
        if p.exists() {
            let snap =
                GridSnapshot::read_from(&read_file(&p)?[..]).map_err(|e| CliError::io(&p, e))?;
            stable.push((
                snap.time,
                StableAverage {
                    q: snap.to_scalar(),
                    outside_mass: 0.0,
                },
            ));
        } else {
            missing.push(t.to_string());
        }
    }
    if !missing.is_empty() || !window.iter().any(|t| (t - t1).abs() < TIME_TOL) {
        missing.push(t1.to_string());
        missing.dedup();
        return Err(CliError::MissingInputs(format!(
            "stable-average snapshots required at t = {}",
            missing.join(", ")
        )));
    }

    let manifest = RunManifest::new("scatter", cfg.serialize(), reproducible);
    let mut dir = OutputDir::create(out, manifest, reproducible)?;
    let result = scatter_outputs(&cfg, &diag, run_dir, &snaps, &stable, (t1, t2), &mut dir);
    match &result {
        Ok(()) => dir.finish("ok")?,
        Err(e) => dir.finish(&format!("failed: {e}"))?,
    }
    result
}

fn scatter_outputs(
    cfg: &RunConfig,
    diag: &Csv,
    run_dir: &Path,
    snaps: &[(f64, PathBuf)],
    stable: &[(f64, StableAverage)],
    (t1, t2): (f64, f64),
    dir: &mut OutputDir,
) -> Result<(), CliError> {
    let sim = &cfg.sim;
    let coupled = sim.coupling && sim.epsilon > 0.0;
    let mu_eff = if coupled { sim.mu } else { 0.0 };
    let q = estimate_q_inf(stable, t1, t2)?;
    if let Some(w) = &q.warning {
        dir.warn(w.clone());
    }
    let field = solve_asymptotic_poisson(&q.q_inf)?;
    dir.write("q_inf.vph", &GridSnapshot::scalar(&q.q_inf, t2).to_bytes())?;
    dir.write(
        "phi_asymp.vph",
        &GridSnapshot::scalar(&field.phi, t2).to_bytes(),
    )?;
    dir.write(
        "grad_phi_asymp.vph",
        &GridSnapshot::vector(&field.grad, t2).to_bytes(),
    )?;

    let mut corrected: Vec<ScatteringCoords> = Vec::new();
    let mut control: Vec<ScatteringCoords> = Vec::new();
    let mut coords_csv = Csv::new(&["t", "particle", "s_inf_1", "s_inf_2", "u_inf_1", "u_inf_2"]);
    let mut last_particles = None;
    for (t, path) in snaps.iter().filter(|(t, _)| *t <= t2 + TIME_TOL) {
        let snap = ParticleSnapshot::read_from(std::io::BufReader::new(
            std::fs::File::open(path).map_err(|e| CliError::io(path, e))?,
        ))
        .map_err(|e| CliError::io(path, e))?;
        let parts = snap.to_particles();
        let c = scattering_coords_of(*t, mu_eff, &parts, &field, true);
        let stride = parts.len().div_ceil(cfg.scatter.tracked).max(1);
        for (i, co) in c.coords.iter().enumerate().step_by(stride) {
            let cells = match co {
                Some(co) => [co.s_inf[0], co.s_inf[1], co.u_inf[0], co.u_inf[1]]
                    .map(fmt_num)
                    .to_vec(),
                None => vec![String::new(); 4],
            };
            let mut row = vec![fmt_num(*t), i.to_string()];
            row.extend(cells);
            coords_csv.push(row);
        }
        control.push(scattering_coords_of(*t, mu_eff, &parts, &field, false));
        corrected.push(c);
        last_particles = Some(parts);
    }
    dir.write(COORDS_CSV, coords_csv.render().as_bytes())?;

    let forces = match std::fs::read_to_string(run_dir.join(FORCE_PROFILES_CSV)) {
        Ok(text) => Csv::parse(&text)
            .map(|c| force_distances(&c, &field))
            .unwrap_or_default(),
        Err(_) => {
            dir.warn("force_profiles.csv missing; force distances skipped");
            Vec::new()
        }
    };
    let mut conv = Csv::new(&[
        "t",
        "corrected_sup_diff",
        "control_sup_diff",
        "resolved_fraction",
        "force_distance",
    ]);
    let mut diffs = (Vec::new(), Vec::new());
    for (k, c) in corrected.iter().enumerate() {
        let (d, dc) = if k == 0 {
            (String::new(), String::new())
        } else {
            let d = coord_sup_difference(&corrected[k - 1], c);
            diffs.0.push(c.t);
            diffs.1.push(d);
            (
                fmt_num(d),
                fmt_num(coord_sup_difference(&control[k - 1], &control[k])),
            )
        };
        let fd = forces
            .iter()
            .find(|(t, _)| (t - c.t).abs() < TIME_TOL)
            .map_or(String::new(), |(_, f)| fmt_num(*f));
        conv.push(vec![
            fmt_num(c.t),
            d,
            dc,
            fmt_num(c.resolved_fraction()),
            fd,
        ]);
    }
    dir.write(CONVERGENCE_CSV, conv.render().as_bytes())?;

    let last = corrected.last().expect("at least three snapshots");
    let f_inf = reconstruct_f_inf(last, sim.sigma_s, sim.sigma_u)?;
    dir.write(
        "f_inf_u_marginal.vph",
        &GridSnapshot::scalar(&f_inf.marginal, t2).to_bytes(),
    )?;
    dir.write(
        "f_inf_s_marginal.vph",
        &GridSnapshot::scalar(&f_inf.s_marginal(), t2).to_bytes(),
    )?;
    let mut grid_csv = Csv::new(&["s1", "s2", "u1", "u2", "density", "value_avg", "weight"]);
    for k in 0..f_inf.grid.len() {
        let z = f_inf.grid.node(k);
        let va = f_inf.value_avg[k].map_or(String::new(), fmt_num);
        grid_csv.push(vec![
            fmt_num(z[0]),
            fmt_num(z[1]),
            fmt_num(z[2]),
            fmt_num(z[3]),
            fmt_num(f_inf.density[k]),
            va,
            fmt_num(f_inf.counts[k]),
        ]);
    }
    dir.write("f_inf_grid.csv", grid_csv.render().as_bytes())?;

    let times = diag.numbers("t").unwrap_or_default();
    let row0 = times
        .iter()
        .position(|t| t.abs() < TIME_TOL)
        .unwrap_or_else(|| {
            dir.warn("no t = 0 diagnostics row; conservation measured against the first row");
            0
        });
    let mass_0 = diag
        .numbers("mass")
        .and_then(|v| v.get(row0).copied())
        .unwrap_or(f64::NAN);
    let h_0 = diag
        .numbers("hamiltonian")
        .and_then(|v| v.get(row0).copied())
        .unwrap_or(f64::NAN);
    let cons = asymptotic_conservation_check(&f_inf, &field, sim.mu, mass_0, h_0, sim.epsilon);

    let mut weak = Csv::new(&["t", "test_function", "weak", "dirac", "rel_err"]);
    let last_row = times.len().checked_sub(1);
    for tf in TestFunction::registry() {
        let w = last_row.and_then(|r| diag.numbers(&format!("weak_{}", tf.name())).map(|v| v[r]));
        let d = dirac_prediction(&f_inf, &tf, test_center(&tf), sim.sigma_u);
        let (Some(w), Some(d)) = (w, d) else {
            dir.warn(format!(
                "weak functional or Dirac prediction unavailable for {}",
                tf.name()
            ));
            continue;
        };
        let rel = if d != 0.0 {
            (w - d).abs() / d.abs()
        } else {
            (w - d).abs()
        };
        let t = times[last_row.expect("row")];
        weak.push(vec![
            fmt_num(t),
            tf.name().into(),
            fmt_num(w),
            fmt_num(d),
            fmt_num(rel),
        ]);
    }
    dir.write(WEAK_CSV, weak.render().as_bytes())?;

    let rate = fit_rate(&diffs.0, &diffs.1, FitModel::ExpOnly).ok();
    let control_slope = max_s_slope(&control).unwrap_or(f64::NAN);
    let converged_slope = max_s_slope(&corrected).unwrap_or(f64::NAN);
    let mut summary = Csv::new(&["metric", "value"]);
    let mut put = |k: &str, v: f64| summary.push(vec![k.to_string(), fmt_num(v)]);
    put("t1", t1);
    put("t2", t2);
    put("q_inf_error", q.error);
    put("coord_rate", rate.as_ref().map_or(f64::NAN, |r| r.lambda));
    put("control_slope", control_slope);
    put("converged_slope", converged_slope);
    put("resolved_fraction", f_inf.resolved_fraction);
    put("estimator_disagreement", f_inf.estimator_disagreement(1.0));
    put("mass_inf", cons.mass_inf);
    put("mass_0", cons.mass_0);
    put("mass_rel_err", cons.mass_rel_err);
    put("hamiltonian_inf", cons.hamiltonian_inf);
    put("hamiltonian_0", cons.hamiltonian_0);
    put("hamiltonian_rel_err", cons.hamiltonian_rel_err);
    put("particles", last_particles.map_or(0, |p| p.len()) as f64);
    dir.write(SUMMARY_CSV, summary.render().as_bytes())?;
    Ok(())
}
