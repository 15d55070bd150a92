use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use suspension_core::orientation::OrientationLaw;
use suspension_core::particles::{build_config, cubic_lattice, ParticleConfiguration};
use suspension_core::reflections::{mor_solve, MorStatus, ReflectionProblem};
use suspension_core::stats::{loglog_slope, spearman};
use suspension_core::stokes::l_n_app_eval;
use suspension_core::{Orientation, ResistanceParams, Vec3};

fn sources(n: usize, seed: u64) -> (Vec<Orientation>, Vec<Vec3>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi: Vec<Orientation> = (0..n).map(|_| OrientationLaw::Uniform.sample(&mut rng)).collect();
    let t: Vec<Vec3> = (0..n).map(|_| OrientationLaw::Uniform.sample(&mut rng).into_vec()).collect();
    (xi, t)
}

fn lattice(n_side: usize, r: f64) -> ParticleConfiguration {
    build_config(cubic_lattice(n_side, 0.5), r, 0.5).unwrap()
}

#[test]
fn two_sphere_contraction_scales_with_cubed_separation() {
    let r = 0.08;
    let (xi, t) = sources(2, 4);
    let ds: Vec<f64> = [5.0, 10.0, 20.0, 40.0].iter().map(|k| k * r).collect();
    let ratios: Vec<f64> = ds
        .iter()
        .map(|d| {
            let c = build_config(vec![Vec3::zeros(), Vec3::new(0.6, 0.8, 0.0) * *d], r, 0.5).unwrap();
            let p = ReflectionProblem::new(&c, &xi, &t, &ResistanceParams::anisotropic()).unwrap();
            p.reflect_once(&p.initial_state()).last_ratio().unwrap()
        })
        .collect();
    let slope = loglog_slope(&ds, &ratios);
    assert!((slope + 3.0).abs() <= 0.2, "slope {slope}");
}

#[test]
fn dilute_lattice_contracts_and_bounds_the_correction() {
    // φ_n log n = 0.01 at n = 64
    let r = (0.01 / (64.0 * 64f64.ln())).cbrt();
    let c = lattice(4, r);
    assert!((c.diagnostics.phi_n_log_n - 0.01).abs() < 1e-12);
    let (xi, t) = sources(64, 9);
    let p = ReflectionProblem::new(&c, &xi, &t, &ResistanceParams::anisotropic()).unwrap();
    let rep = mor_solve(&p, 1e-12, 30).unwrap();
    assert_eq!(rep.status, MorStatus::Converged);
    let rho = rep.rho.unwrap();
    assert!(rho <= 0.1, "rho {rho}");
    assert!(rep.state.history.windows(2).all(|w| w[1] < w[0]));

    let first = p.reflect_once(&p.initial_state());
    for probe in [Vec3::new(0.01, 0.02, 0.03), Vec3::new(0.3, -0.2, 0.1), Vec3::new(0.9, 0.9, 0.9)] {
        let app = l_n_app_eval(&c, &xi, &t, &ResistanceParams::anisotropic(), &probe).unwrap();
        let corr = p.corrected_field(&rep.state, &probe).unwrap() - app;
        let one = p.corrected_field(&first, &probe).unwrap() - app;
        assert!(corr.norm() <= one.norm() / (1.0 - rho) * (1.0 + 1e-9));
        assert!((corr - one).norm() <= rho / (1.0 - rho) * one.norm() * (1.0 + 1e-9));
    }
}

#[test]
fn contraction_ranks_with_dilution_parameter() {
    let mut x = Vec::new();
    let mut y = Vec::new();
    // twelve log-spaced values of φ_n log n in [0.003, 0.1], cycling through n
    for m in 0..12 {
        let k = [2usize, 3, 4, 5][m % 4];
        let n = k * k * k;
        let target = 0.003 * (0.1f64 / 0.003).powf(m as f64 / 11.0);
        let r = (target / (n as f64 * (n as f64).ln())).cbrt();
        let c = lattice(k, r);
        let (xi, t) = sources(n, 31 + m as u64);
        let p = ReflectionProblem::new(&c, &xi, &t, &ResistanceParams::anisotropic()).unwrap();
        let rep = mor_solve(&p, 1e-10, 6).unwrap();
        x.push(c.diagnostics.phi_n_log_n);
        y.push(rep.rho.unwrap());
    }
    assert_eq!(x.len(), 12);
    let s = spearman(&x, &y);
    assert!(s > 0.9, "spearman {s}: {x:?} {y:?}");
}

#[test]
fn dense_configuration_is_flagged() {
    let r = (1.5 / (64.0 * 64f64.ln())).cbrt();
    let c = ParticleConfiguration::unchecked(cubic_lattice(4, 0.5), r);
    assert!(c.diagnostics.phi_n_log_n > 1.0);
    assert!(!c.diagnostics.warnings.is_empty());
    let (xi, t) = sources(64, 2);
    let p = ReflectionProblem::new(&c, &xi, &t, &ResistanceParams::anisotropic()).unwrap();
    let rep = mor_solve(&p, 1e-10, 20).unwrap();
    assert!(rep.diverging());
    assert!(rep.rho.unwrap() >= 1.0);
}

#[test]
fn checked_builder_rejects_the_dense_lattice() {
    let r = (1.5 / (64.0 * 64f64.ln())).cbrt();
    let err = build_config(cubic_lattice(4, 0.5), r, 0.5).unwrap_err();
    assert!(err.is_assumption());
}
