//! `run`: simulate to `t_final`, writing diagnostics and snapshots at every
//! sample time.

use std::path::Path;

use vpsaddle::diagnostics::{particle_sup, DiagnosticsSeries};
use vpsaddle::integrator::{initialize, SimState};
use vpsaddle::sampling::realized_count;
use vpsaddle::scattering::StableAverageRecorder;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::format::{fmt_num, Csv, GridSnapshot, ParticleSnapshot};
use crate::manifest::{RegridRecord, RunManifest};
use crate::output::OutputDir;

pub const CONFIG_NAME: &str = "config.cfg";
pub const DIAGNOSTICS_CSV: &str = "diagnostics.csv";
pub const Q_PROFILES_CSV: &str = "q_profiles.csv";
pub const FORCE_PROFILES_CSV: &str = "force_profiles.csv";

pub const DIAGNOSTICS_COLUMNS: &[&str] = &[
    "t",
    "mass",
    "kinetic",
    "potential",
    "hamiltonian",
    "hamiltonian_rel_drift",
    "sup_e2t_rho",
    "sup_sf",
    "sup_uf",
    "uf_ratio",
    "singular_tangents",
    "drift_ratio",
    "q_captured_mass",
    "q_outside_mass",
    "weak_gaussian_bump",
    "weak_cosine_bump",
];

/// File name stem for a sample time, e.g. `t00004.000`.
pub fn time_tag(t: f64) -> String {
    format!("t{t:09.3}")
}

pub fn rho_path(t: f64) -> String {
    format!("rho/rho_{}.vph", time_tag(t))
}

pub fn q_hat_path(t: f64) -> String {
    format!("q_hat/q_hat_{}.vph", time_tag(t))
}

pub fn particles_path(t: f64) -> String {
    format!("particles/particles_{}.vpp", time_tag(t))
}

/// `sup |drift| / (eps (1 + t))`; zero without amplitude.
fn drift_ratio(state: &SimState<f64>, eps: f64) -> f64 {
    if eps == 0.0 {
        return 0.0;
    }
    particle_sup(state, |p| p.drift[0].hypot(p.drift[1])) / (eps * (1.0 + state.t))
}

fn diagnostics_csv(series: &DiagnosticsSeries, drift: &[f64]) -> Csv {
    let mut csv = Csv::new(DIAGNOSTICS_COLUMNS);
    let h0 = series.hamiltonian.first().map_or(0.0, |h| h.total);
    for i in 0..series.times.len() {
        let h = &series.hamiltonian[i];
        let d = &series.deriv[i];
        let q = &series.q_profiles[i];
        let rel = if h0 != 0.0 {
            (h.total - h0) / h0.abs()
        } else {
            0.0
        };
        let mut row = vec![
            series.times[i],
            series.mass[i],
            h.kinetic,
            h.potential,
            h.total,
            rel,
            series.sup_e2t_rho[i],
            d.sup_sf,
            d.sup_uf,
            d.uf_ratio,
            d.flagged as f64,
            drift[i],
            q.captured_mass(),
            q.outside_mass,
        ];
        row.extend(&series.weak_functionals[i]);
        csv.push_nums(&row);
    }
    csv
}

fn q_profiles_csv(series: &DiagnosticsSeries) -> Csv {
    let mut csv = Csv::new(&["t", "u1", "u2", "q"]);
    for (t, q) in series.times.iter().zip(&series.q_profiles) {
        let spec = q.q.spec;
        for j in 0..spec.n {
            for i in 0..spec.n {
                let p = spec.node(i, j);
                csv.push_nums(&[*t, p[0], p[1], q.q.at(i, j)]);
            }
        }
    }
    csv
}

fn force_profiles_csv(series: &DiagnosticsSeries) -> Csv {
    let mut csv = Csv::new(&["t", "u1", "u2", "e1", "e2"]);
    let Some(spec) = series.profile_grid else {
        return csv;
    };
    for (t, prof) in series.times.iter().zip(&series.force_profiles) {
        for (k, e) in prof.iter().enumerate() {
            let p = spec.node(k % spec.n, k / spec.n);
            let (e1, e2) = e.map_or((String::new(), String::new()), |e| {
                (fmt_num(e[0]), fmt_num(e[1]))
            });
            csv.push(vec![fmt_num(*t), fmt_num(p[0]), fmt_num(p[1]), e1, e2]);
        }
    }
    csv
}

/// Run `cfg`, writing into `out`. On a numerical failure the outputs gathered
/// so far and a manifest naming the cause are still written.
pub fn cmd_run(cfg: &RunConfig, out: &Path, reproducible: bool) -> Result<(), CliError> {
    let manifest = RunManifest::new("run", cfg.serialize(), reproducible);
    let mut dir = OutputDir::create(out, manifest, reproducible)?;
    dir.write(CONFIG_NAME, cfg.serialize().as_bytes())?;
    let sim = &cfg.sim;
    let realized = realized_count(sim.n_particles);
    if realized != sim.n_particles {
        dir.warn(format!(
            "particles.n = {} rounded to {realized}",
            sim.n_particles
        ));
    }

    let mut series = DiagnosticsSeries::new(sim.sigma_u);
    let mut recorder = StableAverageRecorder::default();
    let mut drift = Vec::new();
    let mut pending: Vec<(String, Vec<u8>)> = Vec::new();
    let result = initialize::<f64>(sim).and_then(|mut state| {
        let res = state.run_samples(&sim.sample_times, |s| {
            let t = s.time_f64();
            series.record(s);
            drift.push(drift_ratio(s, sim.epsilon));
            recorder.record(s);
            let rho = vpsaddle::grid::ScalarField2D {
                spec: s.field.physical_spec(),
                values: s.field.rho.values.clone(),
            };
            pending.push((rho_path(t), GridSnapshot::scalar(&rho, t).to_bytes()));
            let q = &recorder.snapshots.last().expect("just recorded").1;
            pending.push((q_hat_path(t), GridSnapshot::scalar(&q.q, t).to_bytes()));
            if t >= cfg.scatter.snapshot_from - 1e-9 {
                let mut buf = Vec::new();
                ParticleSnapshot::of(t, &s.ensemble.particles)
                    .write_to(&mut buf)
                    .expect("write to Vec");
                pending.push((particles_path(t), buf));
            }
            Ok(())
        });
        dir.manifest.regrids = state
            .regrids
            .iter()
            .map(|r| RegridRecord {
                step: r.step,
                t: r.t,
                old_h: r.old_h,
                new_h: r.new_h,
                new_origin: r.new_origin,
            })
            .collect();
        res
    });

    for (rel, bytes) in pending {
        dir.write(&rel, &bytes)?;
    }
    dir.write(
        DIAGNOSTICS_CSV,
        diagnostics_csv(&series, &drift).render().as_bytes(),
    )?;
    dir.write(Q_PROFILES_CSV, q_profiles_csv(&series).render().as_bytes())?;
    dir.write(
        FORCE_PROFILES_CSV,
        force_profiles_csv(&series).render().as_bytes(),
    )?;
    match result {
        Ok(()) => dir.finish("ok"),
        Err(e) => {
            dir.finish(&format!("failed: {e}"))?;
            Err(CliError::Numerical(e))
        }
    }
}
