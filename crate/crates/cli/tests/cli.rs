use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use sha2::{Digest, Sha256};
use tempfile::TempDir;
use vpsaddle_cli::config::ConfigError;
use vpsaddle_cli::format::{fmt_num, Csv, GridSnapshot, ParticleRecord, ParticleSnapshot};
use vpsaddle_cli::manifest::RunManifest;
use vpsaddle_cli::{oracle, report, run, scatter, CliError, RunConfig};

const BIN: &str = env!("CARGO_BIN_EXE_vpsaddle");

/// Small reference-like run; lines of `extra` replace base lines with the same key.
fn small(extra: &str) -> RunConfig {
    let base = [
        "particles.n = 8192",
        "grid.n = 64",
        "time.dt = 5e-2",
        "time.t_final = 8",
        "time.sample_times = 0,1,2,3,4,5,6,7,8",
    ];
    let key = |l: &str| l.split('=').next().unwrap().trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let mut text: Vec<&str> = base
        .into_iter()
        .filter(|l| !overridden.contains(&key(l)))
        .collect();
    text.extend(extra.lines());
    RunConfig::parse(&text.join("\n")).unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn csv(p: &Path) -> Csv {
    Csv::parse(&String::from_utf8(read(p)).unwrap()).unwrap()
}

fn run_small(extra: &str) -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    run::cmd_run(&small(extra), &out, true).unwrap();
    (tmp, out)
}

fn files_under(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(
                    p.strip_prefix(root)
                        .unwrap()
                        .to_string_lossy()
                        .replace('\\', "/"),
                );
            }
        }
    }
    out.sort();
    out
}

// configuration

#[test]
fn config_errors_name_the_line_and_field() {
    let cases = [
        ("grid.n = 64\nno equals sign\n", "line 2"),
        (
            "grid.n = 64\n\nfoo.bar = 1\n",
            "line 3: unknown key `foo.bar`",
        ),
        (
            "grid.n = 64\ngrid.n = 128\n",
            "line 2: `grid.n` already set on line 1",
        ),
        ("# c\ntime.dt = fast\n", "line 2: time.dt: not a number"),
        ("grid.n = 100\n", "line 1: grid.n: must be a power of two"),
        ("physics.mu = 0.5\n", "line 1: physics.mu"),
        ("time.t_final = 2\n", "time.sample_times"),
    ];
    for (text, want) in cases {
        let err = RunConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains(want), "{text:?}: {err}");
    }
}

#[test]
fn config_accepts_comments_and_whitespace() {
    let cfg = RunConfig::parse(
        "  # header\n\n   grid.n=128   \nphysics.coupling = off\nscatter.t2 = auto\n",
    )
    .unwrap();
    assert_eq!(cfg.sim.grid_n, 128);
    assert!(!cfg.sim.coupling);
    assert_eq!(cfg.scatter.t2, None);
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        prop::bool::ANY,
        0.0f64..1.0,
        0.1f64..10.0,
        0.1f64..10.0,
        1usize..1_000_000,
        4u32..12,
        1e-4f64..1.0,
        (1.0f64..20.0, prop::collection::vec(0.0f64..1.0, 0..6)),
        (
            prop::bool::ANY,
            0u64..1000,
            6u32..12,
            prop::option::of(2.0f64..4.0),
            1usize..5000,
        ),
    )
        .prop_map(
            |(neg, eps, ss, su, n, log_n, dt, (tf, mut fr), (coupled, seed, m, t1, tracked))| {
                let mut c = RunConfig::default();
                c.sim.mu = if neg { -1.0 } else { 1.0 };
                c.sim.epsilon = eps;
                c.sim.sigma_s = ss;
                c.sim.sigma_u = su;
                c.sim.n_particles = n;
                c.sim.grid_n = 1 << log_n;
                c.sim.dt = dt;
                c.sim.t_final = tf;
                fr.sort_by(f64::total_cmp);
                fr.dedup();
                c.sim.sample_times = fr.iter().map(|f| f * tf).collect();
                c.sim.coupling = coupled;
                c.sim.seed = seed;
                c.sim.norm_m = m;
                c.scatter.t1 = t1;
                c.scatter.t2 = t1.map(|t| t + 1.5);
                c.scatter.tracked = tracked;
                c
            },
        )
}

proptest! {
    #[test]
    fn config_round_trip_is_a_fixed_point(cfg in arb_config()) {
        let text = cfg.serialize();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.serialize(), text);
    }

    #[test]
    fn grid_snapshot_round_trips(n in 1u32..6, comps in 1u32..3, seed in any::<u64>()) {
        let len = (comps * n * n) as usize;
        let values: Vec<f64> = (0..len).map(|k| (seed.wrapping_mul(k as u64 + 1) as f64).sin()).collect();
        let s = GridSnapshot { n, origin: [-1.5, 2.25], h: 0.125, time: 3.0, components: comps, values };
        prop_assert_eq!(GridSnapshot::read_from(&s.to_bytes()[..]).unwrap(), s);
    }

    #[test]
    fn csv_numbers_round_trip_exactly(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(fmt_num(x).parse::<f64>().unwrap(), x);
    }
}

// formats

#[test]
fn grid_snapshot_layout_is_bit_exact() {
    let s = GridSnapshot {
        n: 2,
        origin: [-1.0, 0.5],
        h: 0.25,
        time: 4.0,
        components: 2,
        values: (0..8).map(f64::from).collect(),
    };
    let mut want = b"VPH1".to_vec();
    want.extend(2u32.to_le_bytes());
    for x in [-1.0f64, 0.5, 0.25, 4.0] {
        want.extend(x.to_le_bytes());
    }
    want.extend(2u32.to_le_bytes());
    for k in 0..8 {
        want.extend((k as f64).to_le_bytes());
    }
    assert_eq!(s.to_bytes(), want);
    assert_eq!(want.len(), 4 + 4 + 32 + 4 + 64);
}

#[test]
fn particle_snapshot_round_trips() {
    let s = ParticleSnapshot {
        time: 5.0,
        particles: (0..7)
            .map(|k| {
                let k = k as f64;
                ParticleRecord {
                    s: [k, -k],
                    u: [0.5 * k, 1e-300],
                    w: 1.0 / (k + 1.0),
                    f0_val: k * k,
                }
            })
            .collect(),
    };
    let mut buf = Vec::new();
    s.write_to(&mut buf).unwrap();
    assert_eq!(&buf[..4], b"VPP1");
    assert_eq!(buf.len(), 4 + 8 + 8 + 7 * 48);
    assert_eq!(ParticleSnapshot::read_from(&buf[..]).unwrap(), s);
    assert!(GridSnapshot::read_from(&buf[..]).is_err());
}

// run

#[test]
fn zero_amplitude_run_has_zero_density_columns() {
    let (_tmp, out) = run_small("physics.epsilon = 0\n");
    let d = csv(&out.join(run::DIAGNOSTICS_CSV));
    assert_eq!(d.header, run::DIAGNOSTICS_COLUMNS);
    assert_eq!(d.rows.len(), 9);
    for col in [
        "mass",
        "sup_e2t_rho",
        "q_captured_mass",
        "weak_gaussian_bump",
        "weak_cosine_bump",
        "hamiltonian",
    ] {
        assert!(d.numbers(col).unwrap().iter().all(|&x| x == 0.0), "{col}");
    }
    assert_eq!(
        d.numbers("t").unwrap(),
        (0..=8).map(f64::from).collect::<Vec<_>>()
    );
}

#[test]
fn reproducible_reruns_are_byte_identical() {
    let cfg = small("time.t_final = 4\ntime.sample_times = 0,2,4\n");
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run::cmd_run(&cfg, &a, true).unwrap();
    run::cmd_run(&cfg, &b, true).unwrap();
    let files = files_under(&a);
    assert_eq!(files, files_under(&b));
    for f in &files {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
}

#[test]
fn manifest_lists_every_output_with_its_digest() {
    let (_tmp, out) = run_small("time.t_final = 4\ntime.sample_times = 0,2,3,4\n");
    let m = RunManifest::read(&out).unwrap();
    assert_eq!(m.status, "ok");
    assert_eq!(m.schema_version, vpsaddle_cli::manifest::SCHEMA_VERSION);
    assert_eq!((m.start_time, m.end_time), (0.0, 0.0));
    assert_eq!(
        RunConfig::parse(&m.config).unwrap(),
        RunConfig::parse(&String::from_utf8(read(&out.join(run::CONFIG_NAME))).unwrap()).unwrap()
    );
    let listed: Vec<String> = m.outputs.iter().map(|o| o.path.clone()).collect();
    let on_disk: Vec<String> = files_under(&out)
        .into_iter()
        .filter(|f| f != "manifest.json")
        .collect();
    assert_eq!(listed, on_disk);
    for o in &m.outputs {
        let bytes = read(&out.join(&o.path));
        assert_eq!(o.bytes, bytes.len() as u64);
        assert_eq!(o.sha256, hex::encode(Sha256::digest(&bytes)), "{}", o.path);
    }
    assert!(on_disk.contains(&"particles/particles_t00003.000.vpp".to_string()));
    assert!(!on_disk.iter().any(|f| f.contains("particles_t00002")));
}

#[test]
fn run_csvs_have_fixed_schemas() {
    let (_tmp, out) = run_small("time.t_final = 1\ntime.sample_times = 0,1\n");
    assert_eq!(
        csv(&out.join(run::Q_PROFILES_CSV)).header,
        ["t", "u1", "u2", "q"]
    );
    assert_eq!(
        csv(&out.join(run::FORCE_PROFILES_CSV)).header,
        ["t", "u1", "u2", "e1", "e2"]
    );
    let text = String::from_utf8(read(&out.join(run::DIAGNOSTICS_CSV))).unwrap();
    let row = text.lines().nth(1).unwrap();
    let digits = |c: &str| {
        c.trim_start_matches('-')
            .split('e')
            .next()
            .unwrap()
            .replace('.', "")
            .len()
    };
    assert!(row.split(',').all(|c| digits(c) == 17), "{row}");
    let rho = GridSnapshot::read_from(&read(&out.join(run::rho_path(1.0)))[..]).unwrap();
    assert_eq!((rho.n, rho.components, rho.time), (64, 1, 1.0));
}

#[test]
fn numerical_failure_keeps_partial_outputs() {
    let cfg = small("grid.mode = bbox\ngrid.max_extent = 40\n");
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let err = run::cmd_run(&cfg, &out, true).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    let m = RunManifest::read(&out).unwrap();
    assert!(m.status.starts_with("failed: "), "{}", m.status);
    let d = csv(&out.join(run::DIAGNOSTICS_CSV));
    assert!(!d.rows.is_empty() && d.rows.len() < 9);
}

// oracle

#[test]
fn oracle_refuses_large_ensembles() {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig::parse("particles.n = 2016\n").unwrap();
    let err = oracle::cmd_oracle(&cfg, tmp.path(), true).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("capped at 2000"));
}

#[test]
fn oracle_zero_density_gives_zero_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig::parse(
        "physics.epsilon = 0\nparticles.n = 256\ngrid.n = 64\ntime.dt = 5e-2\ntime.t_final = 1\ntime.sample_times = 0,1\n",
    )
    .unwrap();
    let s = oracle::cmd_oracle(&cfg, tmp.path(), true).unwrap();
    assert_eq!((s.force_rms_rel, s.radial_max_rel), (0.0, 0.0));
    // uncoupled trajectories follow the linear flow in both integrators
    assert!(s.trajectory_max_rel < 1e-8, "{}", s.trajectory_max_rel);
}

#[test]
fn oracle_matches_direct_sum_and_enclosed_mass_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = RunConfig::parse(
        "particles.n = 496\ngrid.n = 256\ntime.dt = 1e-2\ntime.t_final = 1\ntime.sample_times = 0,0.5,1\n",
    )
    .unwrap();
    let s = oracle::cmd_oracle(&cfg, tmp.path(), true).unwrap();
    assert!(s.force_rms_rel < 1e-3, "force {}", s.force_rms_rel);
    assert!(s.radial_max_rel < 1e-3, "radial {}", s.radial_max_rel);
    assert!(
        s.trajectory_max_rel < 2e-2,
        "trajectory {}",
        s.trajectory_max_rel
    );
    for f in [
        "force.csv",
        "radial_gaussian.csv",
        "trajectory.csv",
        "oracle_summary.csv",
    ] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

// scatter

#[test]
fn scatter_lists_required_times_when_snapshots_are_missing() {
    let (_tmp, out) = run_small("time.t_final = 4\ntime.sample_times = 0,2,4\n");
    let err = scatter::cmd_scatter(&out, &out.join("scatter"), true).unwrap_err();
    assert!(matches!(err, CliError::MissingInputs(_)));
    assert_eq!(err.exit_code(), 4);
    let msg = err.to_string();
    assert!(
        msg.contains("found [4]") && msg.contains("3, 4, 5"),
        "{msg}"
    );
}

#[test]
fn linear_run_has_constant_scattering_coordinates() {
    let (_tmp, out) = run_small("physics.coupling = false\nscatter.tracked = 200\n");
    scatter::cmd_scatter(&out, &out.join("scatter"), true).unwrap();
    let c = csv(&out.join("scatter").join(scatter::COORDS_CSV));
    let ids = c.numbers("particle").unwrap();
    let tracked: Vec<f64> = ids.iter().copied().filter(|&i| i == ids[0]).collect();
    assert_eq!(tracked.len(), 6);
    for col in ["s_inf_1", "s_inf_2", "u_inf_1", "u_inf_2"] {
        let v = c.numbers(col).unwrap();
        let per_t = v.len() / 6;
        for k in 0..per_t {
            for t in 1..6 {
                let (a, b) = (v[k], v[t * per_t + k]);
                assert!(
                    (a - b).abs() <= 1e-12 * a.abs().max(1e-3),
                    "{col} particle {k}: {a} vs {b}"
                );
            }
        }
    }
}

fn metric(c: &Csv, name: &str) -> f64 {
    let row = c.rows.iter().find(|r| r[0] == name).unwrap();
    row[1].parse().unwrap()
}

#[test]
fn nonlinear_scatter_converges_geometrically_and_control_drifts() {
    for mu in ["1", "-1"] {
        let (_tmp, out) = run_small(&format!("physics.mu = {mu}\n"));
        let sc = out.join("scatter");
        scatter::cmd_scatter(&out, &sc, true).unwrap();
        let conv = csv(&sc.join(scatter::CONVERGENCE_CSV));
        let d = conv.numbers("corrected_sup_diff").unwrap();
        // rows are t = 3..8; differences exist from t = 4
        for k in 2..d.len() {
            assert!(d[k] <= 0.6 * d[k - 1], "mu={mu}: diffs {d:?}");
        }
        let s = csv(&sc.join(scatter::SUMMARY_CSV));
        assert!(
            metric(&s, "control_slope") >= 5.0 * metric(&s, "converged_slope"),
            "mu={mu}"
        );
        assert!(metric(&s, "mass_rel_err") < 1e-2);
        let f = conv.numbers("force_distance").unwrap();
        assert!(f[4] * 2.0 <= f[2], "mu={mu}: force distances {f:?}");
        for name in [
            "q_inf.vph",
            "phi_asymp.vph",
            "grad_phi_asymp.vph",
            "f_inf_u_marginal.vph",
            "f_inf_grid.csv",
        ] {
            assert!(sc.join(name).exists(), "{name}");
        }
        let g = GridSnapshot::read_from(&read(&sc.join("grad_phi_asymp.vph"))[..]).unwrap();
        assert_eq!(g.components, 2);
    }
}

// report

#[test]
fn report_of_empty_directory_lists_nothing_to_plot() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("report");
    report::cmd_report(tmp.path(), &out, true).unwrap();
    let text = String::from_utf8(read(&out.join(report::SUMMARY_TXT))).unwrap();
    assert!(text.contains("nothing to plot"), "{text}");
    assert!(!files_under(&out).iter().any(|f| f.ends_with(".svg")));
}

#[test]
fn report_of_full_run_is_deterministic() {
    let (_tmp, out) = run_small("");
    scatter::cmd_scatter(&out, &out.join("scatter"), true).unwrap();
    let (a, b) = (out.join("report_a"), out.join("report_b"));
    report::cmd_report(&out, &a, true).unwrap();
    report::cmd_report(&out, &b, true).unwrap();
    let files = files_under(&a);
    assert_eq!(
        files.iter().filter(|f| f.ends_with(".svg")).count(),
        5,
        "{files:?}"
    );
    for f in &files {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    let text = String::from_utf8(read(&a.join(report::SUMMARY_TXT))).unwrap();
    assert_eq!(
        text.lines()
            .filter(|l| l.trim_start().starts_with(['P', 'F', 'S']))
            .count(),
        11,
        "{text}"
    );
    assert!(text.contains("PASS 7 modified scattering"), "{text}");
}

// binary

fn bin(args: &[&str], env_root: Option<&Path>) -> std::process::Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("VPSADDLE_OUT");
    if let Some(r) = env_root {
        cmd.env("VPSADDLE_OUT", r);
    }
    cmd.output().unwrap()
}

#[test]
fn exit_codes_follow_the_documented_contract() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.cfg");
    std::fs::write(&bad, "grid.n = 64\ngrid.n = 64\n").unwrap();
    let o = bin(&["run", bad.to_str().unwrap()], Some(tmp.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let o = bin(&["scatter", tmp.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(4));

    let good = tmp.path().join("tiny.cfg");
    std::fs::write(&good, "particles.n = 1024\ngrid.n = 32\ntime.dt = 0.1\ntime.t_final = 1\ntime.sample_times = 0,1\n").unwrap();
    let o = bin(
        &[
            "run",
            good.to_str().unwrap(),
            "--reproducible",
            "--threads",
            "2",
        ],
        Some(tmp.path()),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    // the environment variable sets the default output root
    assert!(tmp.path().join("tiny").join("manifest.json").exists());
}

#[test]
fn config_error_from_file_carries_path_context() {
    let err = RunConfig::load(Path::new("/nonexistent/x.cfg")).unwrap_err();
    assert!(matches!(err, ConfigError::Read { .. }));
}
