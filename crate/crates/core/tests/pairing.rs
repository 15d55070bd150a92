use suspension_core::exec::{mix_seed, ExecMode};
use suspension_core::orientation::{
    brownian_increments, integrate_path, particle_rng, simulate_ensemble, simulate_path, OrientationLaw, ParticlePath,
    PathEnsemble, Scaling, Scheme, SdeParams, TorqueField,
};
use suspension_core::pairing::{
    expectation_identity_check, ito_sum, phi_particle, phi_realizations, psi_functional, psi_particle,
    reference_second_moments, strain_torque_vector, stratonovich_sum, theta_functional, trapezoid, ExpectationSetup,
    InitialLaw, RealizationSpec, SpatialLaw,
};
use suspension_core::particles::cubic_lattice;
use suspension_core::stats::{loglog_slope, Summary};
use suspension_core::tensor::{ResistanceParams, SymTraceless3, Vec3};
use suspension_core::testfn::{Bump, DivFreeField, ScalarTestFunction, SphereHarmonic, SpatialTestFunction, TimeWindow};

fn setup(params: ResistanceParams, initial: OrientationLaw, n: usize) -> ExpectationSetup {
    ExpectationSetup {
        n,
        initial,
        sde: SdeParams::deborah_one(1e-3, 0.5, 21),
        h: TorqueField::Zero,
        params,
        a: SymTraceless3([0.4, -0.1, 0.2, 0.0, -0.3]),
        b: Vec3::new(0.3, -0.5, 1.0),
        window: TimeWindow::One,
        l_max: 16,
        time_nodes: 24,
    }
}

#[test]
fn expectation_identity_vanishes_for_spheres() {
    let rep = expectation_identity_check(&setup(ResistanceParams::sphere(), OrientationLaw::Uniform, 4000), ExecMode::Parallel)
        .unwrap();
    assert_eq!(rep.strain_prediction, 0.0);
    assert_eq!(rep.strain.mean, 0.0);
    assert!(rep.torque_z.abs() <= 3.0, "{rep:?}");
}

#[test]
fn expectation_identity_uniform_law_has_zero_mean() {
    let rep =
        expectation_identity_check(&setup(ResistanceParams::anisotropic(), OrientationLaw::Uniform, 4000), ExecMode::Parallel)
            .unwrap();
    assert!(rep.strain_prediction.abs() < 1e-12);
    assert!(rep.strain_z.abs() <= 3.0 && rep.torque_z.abs() <= 3.0, "{rep:?}");
}

#[test]
fn expectation_identity_anisotropic_cap() {
    let mut s = setup(ResistanceParams::anisotropic(), OrientationLaw::Cap { axis: [0.0, 0.0, 1.0], half_angle: 0.2 }, 8000);
    s.window = TimeWindow::SinSquared { t_end: 0.5 };
    s.h = TorqueField::constant(Vec3::new(0.5, 0.0, 1.0));
    let rep = expectation_identity_check(&s, ExecMode::Parallel).unwrap();
    assert!(rep.strain_prediction.abs() > 5.0 * rep.strain.stderr, "signal too weak: {rep:?}");
    assert!(rep.strain_z.abs() <= 3.0 && rep.torque_z.abs() <= 3.0, "{rep:?}");
}

#[test]
fn reference_moments_follow_degree_two_decay() {
    // with h = 0, E[3ξ₃² − 1](t) = e^{−6t} E[3ξ₃² − 1](0)
    let law = OrientationLaw::Cap { axis: [0.0, 0.0, 1.0], half_angle: 0.3 };
    let times = [0.05, 0.2, 0.5];
    let m = reference_second_moments(&law, &TorqueField::Zero, Scaling::DeborahOne, 16, &times).unwrap();
    let q0 = 3.0 * law.second_moment()[(2, 2)] - 1.0;
    for (t, m2) in times.iter().zip(&m) {
        assert!((3.0 * m2[(2, 2)] - 1.0 - q0 * (-6.0 * t).exp()).abs() < 1e-8);
    }
    // the fast scaling is the same curve at time t/φ
    let fast = reference_second_moments(&law, &TorqueField::Zero, Scaling::SmallDeborah { phi_n: 0.1 }, 16, &[0.02]).unwrap();
    let slow = reference_second_moments(&law, &TorqueField::Zero, Scaling::DeborahOne, 16, &[0.2]).unwrap();
    assert!((fast[0] - slow[0]).norm() < 1e-10);
}

#[test]
fn stratonovich_sum_of_constant_is_increment_total() {
    let mut rng = particle_rng(5, 0);
    let db = brownian_increments(&mut rng, 100, 0.01);
    let c = Vec3::new(0.2, -1.0, 0.5);
    let total: Vec3 = db.iter().sum();
    assert!((stratonovich_sum(&vec![c; 101], &db).unwrap() - c.dot(&total)).abs() < 1e-13);
}

#[test]
fn stratonovich_refinement_converges_for_brownian_power() {
    // coarse grids are built by summing increments of one fine path
    let fine = 1 << 12;
    let t_end = 1.0;
    let mut errs = Vec::new();
    let levels = [4usize, 16, 64];
    let mut rng = particle_rng(17, 3);
    let paths: Vec<Vec<Vec3>> = (0..200).map(|_| brownian_increments(&mut rng, fine, t_end / fine as f64)).collect();
    for &c in &levels {
        let mut err = 0.0;
        for db_f in &paths {
            let db: Vec<Vec3> = db_f.chunks(c).map(|ch| ch.iter().sum()).collect();
            let mut b = vec![Vec3::zeros()];
            for d in &db {
                b.push(b.last().unwrap() + d);
            }
            // g = (B₁³, 0, 0): ∫ B₁³ ∘ dB₁ = B₁(T)⁴/4
            let g: Vec<Vec3> = b.iter().map(|v| Vec3::new(v.x.powi(3), 0.0, 0.0)).collect();
            let bt = b.last().unwrap().x;
            err += (stratonovich_sum(&g, &db).unwrap() - bt.powi(4) / 4.0).abs();
        }
        errs.push(err / paths.len() as f64);
    }
    let dts: Vec<f64> = levels.iter().map(|&c| c as f64 * t_end / fine as f64).collect();
    let order = loglog_slope(&dts, &errs);
    assert!(order >= 0.9, "observed order {order}, errors {errs:?}");
}

#[test]
fn ito_isometry_holds_for_adapted_integrand() {
    let p = ResistanceParams::anisotropic();
    let a = SymTraceless3([0.5, -0.2, 0.3, 0.1, 0.0]).to_matrix();
    let sde = SdeParams::deborah_one(2e-3, 0.5, 33);
    let law = OrientationLaw::Cap { axis: [1.0, 0.0, 0.0], half_angle: 0.6 };
    let h = TorqueField::constant(Vec3::new(0.0, 1.0, 0.0));
    let ens = simulate_ensemble(6000, &law, &sde, &h, ExecMode::Parallel).unwrap();
    let d: Vec<f64> = ens
        .paths
        .iter()
        .map(|path| {
            let g: Vec<Vec3> = path.states.iter().map(|xi| strain_torque_vector(xi, &p, &a)).collect();
            let i = ito_sum(&g, &path.increments).unwrap();
            let q: Vec<f64> = g[..g.len() - 1].iter().map(|v| v.norm_squared()).collect();
            i * i - q.iter().sum::<f64>() * sde.dt
        })
        .collect();
    let s = Summary::of(&d);
    assert!(s.mean.abs() <= 5.0 * s.stderr, "{s:?}");
}

#[test]
fn stratonovich_minus_ito_is_trace_correction() {
    // for g = c ξ × Aξ with A traceless, ½ tr(∇g σ) = (3c/√2) ξ·Aξ · (noise factor)
    let p = ResistanceParams::anisotropic();
    let a = SymTraceless3([0.5, -0.2, 0.3, 0.1, 0.0]).to_matrix();
    let law = OrientationLaw::Uniform;
    let h = TorqueField::constant(Vec3::new(1.0, 0.0, 0.0));
    let mut errs = Vec::new();
    for dt in [4e-3, 1e-3] {
        let sde = SdeParams { dt, t_end: 0.5, scaling: Scaling::SmallDeborah { phi_n: 0.5 }, scheme: Scheme::HeunStratonovich, seed: 9 };
        let c = sde.scaling.noise_factor();
        let ens = simulate_ensemble(400, &law, &sde, &h, ExecMode::Parallel).unwrap();
        let mut e = 0.0;
        for path in &ens.paths {
            let g: Vec<Vec3> = path.states.iter().map(|xi| strain_torque_vector(xi, &p, &a)).collect();
            let diff = stratonovich_sum(&g, &path.increments).unwrap() - ito_sum(&g, &path.increments).unwrap();
            let corr: Vec<f64> =
                path.states.iter().map(|xi| 3.0 * c / 2f64.sqrt() * xi.vec().dot(&(a * xi.vec()))).collect();
            e += (diff - trapezoid(&corr, dt)).abs();
        }
        errs.push(e / ens.n() as f64);
    }
    assert!(errs[1] < errs[0] && errs[1] < 0.05, "{errs:?}");
}

fn lattice_centers(k: usize) -> Vec<Vec3> {
    cubic_lattice(k, 0.5)
}

fn field() -> DivFreeField {
    DivFreeField::new(Bump::new(Vec3::zeros(), 0.45, 6), Vec3::new(0.0, 0.6, 0.8), TimeWindow::SinSquared { t_end: 0.5 })
}

#[test]
fn stokes_functional_is_centered_for_spheres() {
    let centers = lattice_centers(4);
    let spec = RealizationSpec {
        centers: &centers,
        initial: OrientationLaw::Uniform,
        sde: SdeParams::deborah_one(5e-3, 0.5, 4),
        h: TorqueField::Zero,
    };
    let r = phi_realizations(&spec, 300, &ResistanceParams::sphere(), &field(), ExecMode::Parallel).unwrap();
    assert!(r.summary.mean.abs() <= 3.0 * r.summary.stderr, "{:?}", r.summary);
}

#[test]
fn stokes_functional_is_centered_for_anisotropic_law() {
    let centers = lattice_centers(4);
    let spec = RealizationSpec {
        centers: &centers,
        initial: OrientationLaw::Cap { axis: [0.0, 0.0, 1.0], half_angle: 0.3 },
        sde: SdeParams::deborah_one(5e-3, 0.5, 8),
        h: TorqueField::constant(Vec3::new(1.0, 0.0, 0.0)),
    };
    let r = phi_realizations(&spec, 400, &ResistanceParams::anisotropic(), &field(), ExecMode::Parallel).unwrap();
    assert!(r.summary.mean.abs() <= 3.0 * r.summary.stderr, "{:?}", r.summary);
}

#[test]
fn stokes_functional_stochastic_part_vanishes_off_support() {
    let sde = SdeParams::deborah_one(1e-2, 0.5, 1);
    let path = simulate_path(0, &OrientationLaw::Uniform, &sde, &TorqueField::Zero).unwrap();
    let t = phi_particle(&path, sde.dt, &Vec3::new(2.0, 0.0, 0.0), &ResistanceParams::anisotropic(), &field(), sde.scaling)
        .unwrap();
    assert_eq!(t.stochastic, 0.0);
    assert_eq!(t.value, 0.0);
}

fn ensemble_from_increments(initial: &[Vec3], incs: &[Vec<Vec3>], dt: f64, h: &TorqueField) -> PathEnsemble {
    let paths = initial
        .iter()
        .zip(incs)
        .map(|(x0, db)| {
            let states = integrate_path(
                suspension_core::Orientation::new(*x0).unwrap(),
                db,
                dt,
                h,
                Scaling::DeborahOne,
                Scheme::HeunStratonovich,
            )
            .unwrap();
            ParticlePath { states, increments: db.clone() }
        })
        .collect();
    let sde = SdeParams::deborah_one(dt, dt * incs[0].len() as f64, 0);
    PathEnsemble { times: sde.times(), paths, sde, h: h.clone(), initial: OrientationLaw::Uniform }
}

#[test]
fn psi_with_spatial_test_function_only_is_initial_mismatch() {
    let sde = SdeParams::deborah_one(1e-2, 0.3, 6);
    let law = OrientationLaw::VonMises { axis: [0.0, 1.0, 0.0], kappa: 1.5 };
    let ens = simulate_ensemble(50, &law, &sde, &TorqueField::constant(Vec3::z()), ExecMode::Sequential).unwrap();
    let mut rng = particle_rng(77, 0);
    let spatial = SpatialLaw::UniformBox { half_width: 1.0 };
    let centers = spatial.sample(50, &mut rng).unwrap();
    let bump = Bump::new(Vec3::new(0.1, 0.0, 0.0), 0.8, 4);
    let psi = ScalarTestFunction { window: TimeWindow::One, bump: Some(bump), harmonic: SphereHarmonic::Constant { c: 1.0 } };
    let f0 = InitialLaw { spatial: spatial.clone(), orientation: law };
    let v = psi_functional(&ens, &centers, &f0, &psi, ExecMode::Parallel).unwrap();
    let empirical: f64 = centers.iter().map(|x| bump.value(x)).sum::<f64>() / 50.0;
    let want = spatial.bump_expectation(&bump).unwrap() - empirical;
    assert!((v.direct - want).abs() < 1e-14 && (v.identity - want).abs() < 1e-14);
}

#[test]
fn psi_forms_converge_under_refinement() {
    let fine = 1 << 10;
    let t_end = 0.5;
    let n = 64;
    let h = TorqueField::constant(Vec3::new(1.0, 0.5, 0.0));
    let psi = ScalarTestFunction {
        window: TimeWindow::Decay { rate: 0.5 },
        bump: None,
        harmonic: SphereHarmonic::Quadratic { q: SymTraceless3([0.3, 0.2, 0.4, -0.1, 0.2]) },
    };
    let x0: Vec<Vec3> = (0..n).map(|i| OrientationLaw::Uniform.sample(&mut particle_rng(3, i)).into_vec()).collect();
    let incs: Vec<Vec<Vec3>> =
        (0..n).map(|i| brownian_increments(&mut particle_rng(4, i), fine, t_end / fine as f64)).collect();
    let levels = [16usize, 4, 1];
    let mut errs = Vec::new();
    let mut dts = Vec::new();
    for &c in &levels {
        let coarse: Vec<Vec<Vec3>> = incs.iter().map(|db| db.chunks(c).map(|ch| ch.iter().sum()).collect()).collect();
        let dt = c as f64 * t_end / fine as f64;
        let ens = ensemble_from_increments(&x0, &coarse, dt, &h);
        let rms: f64 = ens
            .paths
            .iter()
            .map(|p| {
                let (d, i) = psi_particle(p, dt, &Vec3::zeros(), &psi, &h, Scaling::DeborahOne);
                (d - i).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        errs.push(rms.sqrt());
        dts.push(dt);
    }
    let order = loglog_slope(&dts, &errs);
    assert!(order >= 0.5, "order {order}, errors {errs:?}");
}

#[test]
fn psi_is_centered_for_uniform_law_without_drift() {
    let spatial = SpatialLaw::UniformBox { half_width: 1.0 };
    let f0 = InitialLaw { spatial: spatial.clone(), orientation: OrientationLaw::Uniform };
    let psi = ScalarTestFunction {
        window: TimeWindow::SinSquared { t_end: 0.4 },
        bump: Some(Bump::new(Vec3::zeros(), 0.9, 4)),
        harmonic: SphereHarmonic::Quadratic { q: SymTraceless3([1.0, -0.5, 0.0, 0.0, 0.0]) },
    };
    let values: Vec<f64> = (0..200u64)
        .map(|r| {
            let sde = SdeParams::deborah_one(1e-2, 0.4, mix_seed(12, r));
            let ens = simulate_ensemble(32, &OrientationLaw::Uniform, &sde, &TorqueField::Zero, ExecMode::Sequential).unwrap();
            let centers = spatial.sample(32, &mut particle_rng(sde.seed, 1 << 20)).unwrap();
            psi_functional(&ens, &centers, &f0, &psi, ExecMode::Sequential).unwrap().identity
        })
        .collect();
    let s = Summary::of(&values);
    assert!(s.mean.abs() <= 3.0 * s.stderr, "{s:?}");
}

#[test]
fn theta_decays_at_monte_carlo_rate() {
    let spatial = SpatialLaw::UniformBox { half_width: 1.0 };
    let theta = SpatialTestFunction { window: TimeWindow::SinSquared { t_end: 1.0 }, bump: Bump::new(Vec3::zeros(), 0.9, 4) };
    let ns = [16usize, 64, 256, 1024];
    let rms: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let v: Vec<f64> = (0..300u64)
                .map(|r| {
                    let centers = spatial.sample(n, &mut particle_rng(mix_seed(n as u64, r), 0)).unwrap();
                    theta_functional(&centers, &spatial, &theta, 1.0).unwrap().powi(2)
                })
                .collect();
            (v.iter().sum::<f64>() / v.len() as f64).sqrt()
        })
        .collect();
    let ns_f: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let slope = loglog_slope(&ns_f, &rms);
    assert!((slope + 0.5).abs() <= 0.2, "slope {slope}, {rms:?}");
}

#[test]
fn theta_without_overlap_is_reference_mass() {
    let spatial = SpatialLaw::UniformBox { half_width: 2.0 };
    let bump = Bump::new(Vec3::new(1.0, 1.0, 1.0), 0.5, 4);
    let theta = SpatialTestFunction { window: TimeWindow::One, bump };
    let centers = vec![Vec3::new(-1.0, -1.0, -1.0); 5];
    let v = theta_functional(&centers, &spatial, &theta, 2.0).unwrap();
    assert!((v - 2.0 * bump.integral() / 64.0).abs() < 1e-15);
}
