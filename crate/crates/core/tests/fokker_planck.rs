use nalgebra::Rotation3;
use suspension_core::exec::ExecMode;
use suspension_core::fokker_planck::{density_field, stress_moment, FieldMode, FokkerPlanck, KERNEL_TOL};
use suspension_core::orientation::{OrientationLaw, TorqueField};
use suspension_core::quadrature::gauss_legendre;
use suspension_core::sphere::{SphereGrid, SphericalDensity};
use suspension_core::stokes::Grid3;
use suspension_core::Vec3;

/// `∫_{-1}^{1} g(z) e^{βz} dz / ∫ e^{βz} dz` by Gauss–Legendre.
fn von_mises_average(beta: f64, g: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_legendre(64);
    let num: f64 = x.iter().zip(&w).map(|(z, wz)| wz * g(*z) * (beta * z).exp()).sum();
    let den: f64 = x.iter().zip(&w).map(|(z, wz)| wz * (beta * z).exp()).sum();
    num / den
}

/// Relative L² error against the closed-form density `e^{βz}/Z`,
/// `Z = 4π sinh β / β`, measured on a fine grid.
fn vmf_relative_error(f: &SphericalDensity, beta: f64) -> f64 {
    let z = 4.0 * std::f64::consts::PI * beta.sinh() / beta;
    let fine = SphereGrid::with_nodes(2, 60, 120);
    let num = fine.integrate(|p| (f.eval(p) - (beta * p.z).exp() / z).powi(2));
    let den = fine.integrate(|p| ((beta * p.z).exp() / z).powi(2));
    (num / den).sqrt()
}

#[test]
fn mass_is_conserved_over_long_evolution() {
    let fp = FokkerPlanck::new(8).unwrap();
    let law = OrientationLaw::Cap { axis: [1.0, 0.0, 1.0], half_angle: 0.4 };
    let f0 = SphericalDensity::zonal(8, &law.axis(), 1.0, |l| law.legendre_moment(l));
    let h = TorqueField::TimeVarying { coefficients: vec![[1.0, 0.0, 2.0], [0.0, -0.3, 0.0]] };
    let dt = FokkerPlanck::default_dt(&h, 10.0);
    let out = fp.evolve(&f0, &h, &[1.0, 5.0, 10.0], dt).unwrap();
    for f in &out {
        assert!((f.coeffs[0] - f0.coeffs[0]).abs() <= 1e-10);
    }
}

#[test]
fn low_modes_decay_with_laplace_beltrami_eigenvalues() {
    let fp = FokkerPlanck::new(12).unwrap();
    let law = OrientationLaw::Cap { axis: [0.0, 0.0, 1.0], half_angle: 0.2 };
    let f0 = SphericalDensity::zonal(12, &Vec3::new(0.3, 0.1, 1.0).normalize(), 1.0, |l| law.legendre_moment(l));
    let times = [0.1, 0.5, 1.0];
    let out = fp.evolve(&f0, &TorqueField::Zero, &times, 1e-3).unwrap();
    for (t, f) in times.iter().zip(&out) {
        for l in 1..=2usize {
            let rate = (-((l * (l + 1)) as f64) * t).exp();
            for (a, a0) in f.degree(l).iter().zip(f0.degree(l)) {
                assert!((a - a0 * rate).abs() <= 1e-8, "l={l} t={t}");
            }
        }
    }
}

#[test]
fn relaxes_to_von_mises_under_constant_drift() {
    let beta = 2.0;
    let fp = FokkerPlanck::new(16).unwrap();
    let f0 = SphericalDensity::uniform(16, 1.0);
    let h = TorqueField::constant(Vec3::new(0.0, 0.0, beta));
    // the midpoint scheme's fixed point is O(dt²) away from the kernel
    let out = fp.evolve(&f0, &h, &[10.0], 5e-4).unwrap();
    let err = vmf_relative_error(&out[0], beta);
    assert!(err <= 1e-6, "relative L2 error {err:e}");
}

#[test]
fn stationary_solution_is_von_mises() {
    let beta = 2.0;
    let fp = FokkerPlanck::new(16).unwrap();
    let rep = fp.stationary_solve(&TorqueField::constant(Vec3::new(0.0, 0.0, beta)), 1.0).unwrap();
    assert!(vmf_relative_error(&rep.density, beta) <= 1e-6);
    assert!(rep.spectral_gap > 10.0 * KERNEL_TOL);
    assert!(rep.sign_ratio > 0.0);

    let ez2 = von_mises_average(beta, |z| z * z);
    assert!((ez2 - 0.462_685_3).abs() < 1e-7);
    let s33 = stress_moment(&rep.density, 1.0).to_matrix()[(2, 2)];
    assert!((s33 - (1.0 - 3.0 * ez2)).abs() <= 1e-6);
}

#[test]
fn stationary_solution_is_rotation_equivariant() {
    let fp = FokkerPlanck::new(12).unwrap();
    let b = Vec3::new(0.5, -1.0, 1.5);
    let r = Rotation3::from_scaled_axis(Vec3::new(0.3, 1.2, -0.7));
    let f = fp.stationary_solve(&TorqueField::constant(b), 1.0).unwrap().density;
    let g = fp.stationary_solve(&TorqueField::constant(r * b), 1.0).unwrap().density;
    for p in [Vec3::new(0.1, 0.2, 0.9), Vec3::new(-0.7, 0.3, 0.1), Vec3::new(0.0, -1.0, 0.2)] {
        let p = p.normalize();
        assert!((g.eval(&(r * p)) - f.eval(&p)).abs() <= 1e-10);
    }
}

#[test]
fn spectral_tail_decays_with_degree() {
    let h = TorqueField::constant(Vec3::new(1.0, 0.0, 2.5));
    let sols: Vec<SphericalDensity> =
        [6, 12, 24].iter().map(|&l| FokkerPlanck::new(l).unwrap().stationary_solve(&h, 1.0).unwrap().density).collect();
    let d1 = sols[0].l2_distance(&sols[1]);
    let d2 = sols[1].l2_distance(&sols[2]);
    assert!(d2 < d1, "{d2:e} vs {d1:e}");
}

#[test]
fn evolved_density_matches_stationary_after_relaxation() {
    let fp = FokkerPlanck::new(10).unwrap();
    let h = TorqueField::constant(Vec3::new(1.0, 1.0, 0.0));
    let grid = Grid3::centered_cube(0.5, 2);
    let law = OrientationLaw::Delta { axis: [0.0, 0.0, 1.0] };
    let f0: Vec<SphericalDensity> = (0..grid.len())
        .map(|i| SphericalDensity::zonal(10, &law.axis(), 1.0 + 0.1 * i as f64, |l| law.legendre_moment(l)))
        .collect();
    let inst = density_field(&fp, &grid, &f0, &h, FieldMode::Instationary { t: 10.0 }, 1.0, ExecMode::Parallel).unwrap();
    let stat = density_field(&fp, &grid, &f0, &h, FieldMode::Stationary, 1.0, ExecMode::Parallel).unwrap();
    for (a, b) in inst.densities.iter().zip(&stat.densities) {
        assert!(a.l2_distance(b) <= 1e-6);
    }
    // stationary mode keeps only the mass of each node
    let unif: Vec<SphericalDensity> = f0.iter().map(|f| SphericalDensity::uniform(10, f.mass())).collect();
    let stat2 = density_field(&fp, &grid, &unif, &h, FieldMode::Stationary, 1.0, ExecMode::Sequential).unwrap();
    for (a, b) in stat.densities.iter().zip(&stat2.densities) {
        assert!(a.l2_distance(b) < 1e-12);
    }
}

#[test]
fn delta_stress_is_point_mass_value() {
    let law = OrientationLaw::Delta { axis: [0.0, 0.0, 1.0] };
    let f = SphericalDensity::zonal(8, &Vec3::z(), 1.0, |l| law.legendre_moment(l));
    let s = stress_moment(&f, 0.7).to_matrix();
    let want = nalgebra::Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -2.0)) * 0.7;
    assert!((s - want).norm() < 1e-13);
}
