use ode_solvers::{Dop853, SVector, System};
use vpsaddle::ensemble::{Particle, ParticleEnsemble};
use vpsaddle::integrator::{initialize, SimState};
use vpsaddle::phase::{conserved_weights_hyper, det4, linear_flow, to_hyperbolic};
use vpsaddle::{GridMode, SimConfig};

fn small(eps: f64, mu: f64, n: usize, grid: usize, dt: f64, t_final: f64) -> SimConfig {
    SimConfig {
        mu,
        epsilon: eps,
        n_particles: n,
        grid_n: grid,
        dt,
        t_final,
        sample_times: vec![t_final],
        ..SimConfig::default()
    }
}

#[test]
fn coupling_off_reproduces_linear_flow() {
    let mut cfg = small(1e-2, 1.0, 4096, 64, 1e-2, 10.0);
    cfg.coupling = false;
    let mut st = initialize::<f64>(&cfg).unwrap();
    st.advance_to(10.0).unwrap();
    assert!((st.time_f64() - 10.0).abs() < 1e-12);
    for p in &st.ensemble.particles {
        let (x0, v0) = p.initial_xv();
        let (xl, vl) = linear_flow(x0, v0, 10.0);
        let (x, v) = (p.x(), p.v());
        let norm = (xl[0].powi(2) + xl[1].powi(2) + vl[0].powi(2) + vl[1].powi(2)).sqrt();
        let err = ((x[0] - xl[0]).powi(2)
            + (x[1] - xl[1]).powi(2)
            + (v[0] - vl[0]).powi(2)
            + (v[1] - vl[1]).powi(2))
        .sqrt();
        assert!(err <= 1e-9 * norm, "{err:e} vs {norm:e}");
        let w0 = conserved_weights_hyper(0.0, to_hyperbolic(x0, v0)).unwrap();
        let w = conserved_weights_hyper(10.0, p.hyper()).unwrap();
        for k in 0..2 {
            assert!((w.z_plus[k] - w0.z_plus[k]).abs() <= 1e-10 * w0.z_plus[k].abs().max(1e-300));
            assert!(
                (w.z_minus[k] - w0.z_minus[k]).abs() <= 1e-10 * w0.z_minus[k].abs().max(1e-300)
            );
        }
        assert_eq!(p.drift, [0.0, 0.0]);
        assert_eq!(p.tangent, vpsaddle::ensemble::identity4());
    }
}

#[test]
fn coupling_off_is_independent_of_dt_and_mass_is_constant() {
    let mut cfg = small(1e-2, 1.0, 1024, 32, 1e-2, 2.0);
    cfg.coupling = false;
    let mut a = initialize::<f64>(&cfg).unwrap();
    cfg.dt = 2.5e-2;
    let mut b = initialize::<f64>(&cfg).unwrap();
    let m0 = a.total_weight();
    a.advance_to(2.0).unwrap();
    b.advance_to(2.0).unwrap();
    assert_eq!(a.total_weight().to_bits(), m0.to_bits());
    for (p, q) in a.ensemble.particles.iter().zip(&b.ensemble.particles) {
        for k in 0..2 {
            assert!((p.u[k] - q.u[k]).abs() <= 1e-12 * p.u[k].abs().max(1.0));
            assert!((p.s[k] - q.s[k]).abs() <= 1e-12 * p.s[k].abs().max(1e-3));
        }
    }
}

#[test]
fn tangent_determinant_and_drift_consistency() {
    let cfg = small(1e-2, 1.0, 8192, 64, 1e-2, 8.0);
    let mut st = initialize::<f64>(&cfg).unwrap();
    let m0 = st.total_weight();
    for t in 1..=8 {
        st.advance_to(t as f64).unwrap();
        let tt = st.time_f64();
        let et = tt.exp();
        for p in &st.ensemble.particles {
            let d = det4(&p.tangent);
            assert!((d - 1.0).abs() < 1e-6, "det {d} at t={tt}");
            for k in 0..2 {
                let direct = 2.0 * (et * p.s[k] - p.s0[k]);
                assert!(
                    (p.drift[k] - direct).abs() < 1e-6,
                    "drift mismatch at t={tt}"
                );
            }
        }
        assert_eq!(st.total_weight().to_bits(), m0.to_bits());
    }
}

/// Massless probes trace the characteristic flow of the field without changing it.
fn with_probes(cfg: &SimConfig, base: ([f64; 2], [f64; 2]), delta: f64) -> ParticleEnsemble<f64> {
    let mut ens = vpsaddle::sampling::sample_initial::<f64>(cfg);
    let (x, v) = base;
    let mut add = |x: [f64; 2], v: [f64; 2]| {
        let h = to_hyperbolic(x, v);
        ens.particles
            .push(Particle::new(h.s, h.u, 0.0, 0.0, [0.0; 4]));
    };
    add(x, v);
    for dir in 0..4 {
        let (mut xp, mut vp) = (x, v);
        if dir < 2 {
            xp[dir] += delta;
        } else {
            vp[dir - 2] += delta;
        }
        add(xp, vp);
    }
    ens
}

#[test]
fn tangent_matches_finite_difference_jacobian() {
    for mu in [1.0, -1.0] {
        let cfg = small(1e-2, mu, 160_000, 256, 1e-2, 4.0);
        let delta = 1e-6;
        let ens = with_probes(&cfg, ([0.7, -0.4], [0.3, 0.9]), delta);
        let n = ens.len();
        let mut st = SimState::new(&cfg, ens).unwrap();
        st.advance_to(4.0).unwrap();
        let ps = &st.ensemble.particles;
        let base = &ps[n - 5];
        let j = base.jacobian_xv(4.0);
        let b = [base.x()[0], base.x()[1], base.v()[0], base.v()[1]];
        for col in 0..4 {
            let q = &ps[n - 4 + col];
            let pq = [q.x()[0], q.x()[1], q.v()[0], q.v()[1]];
            let fd: Vec<f64> = (0..4).map(|r| (pq[r] - b[r]) / delta).collect();
            let num: f64 = (0..4)
                .map(|r| (fd[r] - j[r][col]).powi(2))
                .sum::<f64>()
                .sqrt();
            let den: f64 = (0..4).map(|r| j[r][col].powi(2)).sum::<f64>().sqrt();
            assert!(num < 1e-3 * den, "mu={mu} column {col}: {num:e} vs {den:e}");
        }
    }
}

fn max_drift_ratio(eps: f64, mu: f64) -> f64 {
    let mut cfg = small(eps, mu, 8192, 64, 1e-2, 8.0);
    cfg.sample_times = (0..=8).map(f64::from).collect();
    let mut st = initialize::<f64>(&cfg).unwrap();
    let mut worst: f64 = 0.0;
    let times = cfg.sample_times.clone();
    st.run_samples(&times, |s| {
        let t = s.time_f64();
        for p in &s.ensemble.particles {
            worst = worst.max(p.drift[0].hypot(p.drift[1]) / (eps * (1.0 + t)));
        }
        Ok(())
    })
    .unwrap();
    worst
}

fn check_drift_bound(mu: f64) {
    let big = max_drift_ratio(1e-2, mu);
    let tiny = max_drift_ratio(1e-3, mu);
    assert!(big <= 10.0 && tiny <= 10.0, "mu={mu}: {big} {tiny}");
    assert!(
        tiny <= big * 1.01,
        "mu={mu}: constant grew as eps shrank: {big} -> {tiny}"
    );
}

#[test]
fn drift_accumulator_bound_attractive() {
    check_drift_bound(1.0);
}

#[test]
fn drift_accumulator_bound_repulsive() {
    check_drift_bound(-1.0);
}

struct TwoBody {
    mu: f64,
    w: f64,
}

impl System<f64, SVector<f64, 8>> for TwoBody {
    fn system(&self, _t: f64, y: &SVector<f64, 8>, dy: &mut SVector<f64, 8>) {
        let d = [y[0] - y[2], y[1] - y[3]];
        let r2 = d[0] * d[0] + d[1] * d[1];
        let g = self.w / (std::f64::consts::TAU * r2);
        // y = (x1, x2, v1, v2) with x1, x2 the two particles' positions
        dy[0] = y[4];
        dy[1] = y[5];
        dy[2] = y[6];
        dy[3] = y[7];
        dy[4] = y[0] - self.mu * g * d[0];
        dy[5] = y[1] - self.mu * g * d[1];
        dy[6] = y[2] + self.mu * g * d[0];
        dy[7] = y[3] + self.mu * g * d[1];
    }
}

fn two_body_pic(mu: f64, t_end: f64, x: [[f64; 2]; 2], v: [[f64; 2]; 2], w: f64) -> [[f64; 2]; 2] {
    let cfg = small(1e-2, mu, 16, 64, 1e-3, t_end);
    let ens = ParticleEnsemble::from_xv(&[(x[0], v[0], w), (x[1], v[1], w)]);
    let mut st = SimState::new(&cfg, ens).unwrap();
    st.advance_to(t_end).unwrap();
    [st.ensemble.particles[0].x(), st.ensemble.particles[1].x()]
}

fn two_body_ode(mu: f64, t_end: f64, x: [[f64; 2]; 2], v: [[f64; 2]; 2], w: f64) -> [[f64; 2]; 2] {
    let y0 = SVector::<f64, 8>::from_column_slice(&[
        x[0][0], x[0][1], x[1][0], x[1][1], v[0][0], v[0][1], v[1][0], v[1][1],
    ]);
    let mut solver = Dop853::new(TwoBody { mu, w }, 0.0, t_end, 1e-2, y0, 1e-12, 1e-12);
    solver.integrate().unwrap();
    let y = solver.y_out().last().unwrap();
    [[y[0], y[1]], [y[2], y[3]]]
}

#[test]
fn coupling_sign_bends_two_body_trajectories_like_the_ode_reference() {
    let x = [[-0.5, -0.1], [0.5, 0.1]];
    let v = [[-0.3, 0.1], [0.3, -0.1]];
    let (w, t_end) = (0.5, 2.0);
    let lin: Vec<[f64; 2]> = (0..2).map(|i| linear_flow(x[i], v[i], t_end).0).collect();
    let sep = |p: &[[f64; 2]]| (p[0][0] - p[1][0]).hypot(p[0][1] - p[1][1]);
    let lin_sep = sep(&lin);
    let mut bends = Vec::new();
    for mu in [1.0, -1.0] {
        let pic = two_body_pic(mu, t_end, x, v, w);
        let ode = two_body_ode(mu, t_end, x, v, w);
        let bend_pic = sep(&pic) - lin_sep;
        let bend_ode = sep(&ode) - lin_sep;
        assert!(
            bend_ode.abs() > 1e-3,
            "reference correction too small: {bend_ode:e}"
        );
        assert!(
            (bend_pic - bend_ode).abs() < 2e-2 * bend_ode.abs(),
            "mu={mu}: grid {bend_pic:e} vs ode {bend_ode:e}"
        );
        bends.push(bend_ode);
    }
    assert!(
        bends[0] < 0.0 && bends[1] > 0.0,
        "attraction must shrink the separation: {bends:?}"
    );
}

#[test]
fn bbox_grid_regrid_count_is_bounded() {
    let mut cfg = small(1e-2, 1.0, 4096, 64, 1e-2, 8.0);
    cfg.grid_mode = GridMode::Bbox;
    let mut st = initialize::<f64>(&cfg).unwrap();
    let m0 = st.total_weight();
    st.advance_to(8.0).unwrap();
    let limit = (8.0 / 1.2f64.ln()).ceil() as usize;
    assert!(!st.regrids.is_empty());
    assert!(st.regrids.len() <= limit, "{} regrids", st.regrids.len());
    assert!((st.field.rho.integral() - m0).abs() <= 1e-12 * m0);
}

#[test]
fn regrid_limit_is_reported() {
    let mut cfg = small(1e-2, 1.0, 1024, 32, 1e-2, 8.0);
    cfg.grid_mode = GridMode::Bbox;
    cfg.max_extent = 200.0;
    let mut st = initialize::<f64>(&cfg).unwrap();
    let err = st.advance_to(8.0).unwrap_err();
    assert!(
        matches!(err, vpsaddle::Error::RegridLimit { .. }),
        "{err:?}"
    );
}
