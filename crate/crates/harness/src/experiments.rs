//! End-to-end experiments behind the CLI subcommands. Each writes CSV tables
//! into its run directory and returns a JSON summary.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use suspension_core::exec::{map_indexed, mix_seed, pairwise_sum, ExecMode};
use suspension_core::fokker_planck::{stress_moment, FokkerPlanck};
use suspension_core::orientation::{
    simulate_ensemble, simulate_path, OrientationLaw, Scaling, SdeParams, TorqueField,
};
use suspension_core::pairing::{
    bump_quadrature, expectation_identity_check, phi_particle, psi_particle, reference_second_moments,
    stochastic_pairing_factor, strain_torque_vector, theta_functional, ExpectationSetup, InitialLaw, SpatialLaw,
};
use suspension_core::particles::{build_config, jittered_lattice, ParticleConfiguration};
use suspension_core::sphere::{SphereGrid, SphericalDensity};
use suspension_core::stats::{loglog_slope, second_moment, Summary};
use suspension_core::stokes::{velocity_from_stress, Grid3, StressField};
use suspension_core::{Mat3, Orientation, ResistanceParams, SymTraceless3, Vec3};

use crate::config::{CenterSpec, Mode, RunConfig};
use crate::error::{HarnessError, Result};
use crate::run::{RunDir, RunManifest};
use crate::wasserstein::{wasserstein1, Atom};

/// Summary returned by every experiment; also written as `report.json`.
pub type Report = serde_json::Value;

/// Outcome of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub manifest: RunManifest,
    pub dir: PathBuf,
}

/// Run the experiment selected by `config.mode`, writing into
/// `out_root/<run-id>/`. The manifest is written on success and on failure.
pub fn run(config: &RunConfig, out_root: &Path, mode: ExecMode) -> Result<RunOutcome> {
    config.validate()?;
    let mut dir = RunDir::create(out_root, config)?;
    let report = match config.mode {
        Mode::Simulate => simulate(config, &mut dir, mode),
        Mode::FokkerPlanck => fokker_planck(config, &mut dir),
        Mode::VerifyIdentities => verify(config, &mut dir, mode),
        Mode::SweepDe1 => sweep_de1(config, &mut dir, mode),
        Mode::SweepSmallDe => sweep_small_de(config, &mut dir, mode),
        Mode::CompareFields => compare_fields(config, &mut dir, mode),
        Mode::KernelsSelftest => kernels_selftest(config, &mut dir),
    };
    let path = dir.path.clone();
    match report {
        Ok(report) => {
            dir.write_json("report.json", &report)?;
            let manifest = dir.finish()?;
            Ok(RunOutcome { report, manifest, dir: path })
        }
        Err(e) => {
            dir.note(format!("failed: {e}"));
            dir.finish()?;
            Err(e)
        }
    }
}

/// Particle centres for `n` particles according to the configuration.
pub fn centers_for(config: &RunConfig, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, n as u64));
    match &config.centers {
        CenterSpec::JitteredLattice { jitter } => Ok(jittered_lattice(n, *jitter, &mut rng)),
        CenterSpec::Sampled { law } => Ok(law.sample(n, &mut rng)?),
        CenterSpec::File { path } => {
            let pts = load_centers(path)?;
            if pts.len() < n {
                return Err(HarnessError::Config(format!("{} holds {} centres, need {n}", path.display(), pts.len())));
            }
            Ok(pts.into_iter().take(n).collect())
        }
    }
}

/// Parse `x y z` rows (commas or whitespace); `#` starts a comment.
pub fn load_centers(path: &Path) -> Result<Vec<Vec3>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| HarnessError::Config(format!("{}:{}: {e}", path.display(), k + 1)))?;
        if v.len() != 3 {
            return Err(HarnessError::Config(format!("{}:{}: expected 3 coordinates", path.display(), k + 1)));
        }
        out.push(Vec3::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

/// Particle configuration with radius `r = (φ_n/n)^{1/3}`. Lattice and file
/// centres must satisfy the separation assumptions; sampled centres only
/// record diagnostics.
pub fn configuration(config: &RunConfig, centers: Vec<Vec3>, phi_n: f64) -> Result<ParticleConfiguration> {
    let r = (phi_n / centers.len() as f64).cbrt();
    match config.centers {
        CenterSpec::Sampled { .. } => Ok(ParticleConfiguration::unchecked(centers, r)),
        _ => Ok(build_config(centers, r, config.c_sep)?),
    }
}

fn initial_density(law: &OrientationLaw, l_max: usize) -> SphericalDensity {
    SphericalDensity::zonal(l_max, &law.axis(), 1.0, |l| law.legendre_moment(l))
}

/// Fokker-Planck densities at `times`, in the time units of `scaling`.
pub fn fp_densities(
    fp: &FokkerPlanck,
    initial: &OrientationLaw,
    h: &TorqueField,
    scaling: Scaling,
    times: &[f64],
) -> Result<Vec<SphericalDensity>> {
    let a = scaling.drift_factor();
    let hs = if a == 1.0 { h.clone() } else { h.time_scaled(1.0 / a) };
    let scaled: Vec<f64> = times.iter().map(|t| a * t).collect();
    let s_end = scaled.iter().cloned().fold(1e-12, f64::max);
    Ok(fp.evolve(&initial_density(initial, fp.l_max), &hs, &scaled, FokkerPlanck::default_dt(&hs, s_end))?)
}

fn sym_components(m: &Mat3) -> [f64; 6] {
    [m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(0, 1)], m[(0, 2)], m[(1, 2)]]
}

// ---------------------------------------------------------------- simulate

#[derive(Serialize)]
struct SimulateRow {
    n: usize,
    steps: usize,
    max_norm_defect: f64,
    mean_x: f64,
    mean_y: f64,
    mean_z: f64,
    second_zz: f64,
    phi_n_log_n: f64,
    d_min_n13: f64,
    seed: u64,
}

fn simulate(config: &RunConfig, dir: &mut RunDir, mode: ExecMode) -> Result<Report> {
    let mut rows = Vec::new();
    for &n in &config.particle_counts {
        let pc = configuration(config, centers_for(config, n, config.seed)?, config.volume_fraction)?;
        dir.record_diagnostics(pc.diagnostics.clone());
        let sde = config.sde.with_seed(config.seed);
        let ens = simulate_ensemble(n, &config.initial, &sde, &config.h, mode)?;
        let sub = format!("paths_n{n}");
        ens.write_to(&dir.path.join(&sub))?;
        dir.register(&sub);
        let last: Vec<Vec3> = ens.paths.iter().map(|p| *p.states.last().unwrap().vec()).collect();
        let mean = |f: &dyn Fn(&Vec3) -> f64| pairwise_sum(&last.iter().map(f).collect::<Vec<_>>()) / n as f64;
        rows.push(SimulateRow {
            n,
            steps: ens.steps(),
            max_norm_defect: ens.max_norm_defect(),
            mean_x: mean(&|v| v.x),
            mean_y: mean(&|v| v.y),
            mean_z: mean(&|v| v.z),
            second_zz: mean(&|v| v.z * v.z),
            phi_n_log_n: pc.diagnostics.phi_n_log_n,
            d_min_n13: pc.diagnostics.d_min_n13,
            seed: config.seed,
        });
    }
    dir.write_csv("summary.csv", &rows)?;
    Ok(json!({ "mode": "simulate", "runs": rows.len() }))
}

// ----------------------------------------------------------- fokker-planck

#[derive(Serialize)]
struct MomentRow {
    t: f64,
    mass: f64,
    m1_x: f64,
    m1_y: f64,
    m1_z: f64,
    m2_xx: f64,
    m2_yy: f64,
    m2_zz: f64,
    m2_xy: f64,
    m2_xz: f64,
    m2_yz: f64,
    sigma_xx: f64,
    sigma_yy: f64,
    sigma_zz: f64,
    sigma_xy: f64,
    sigma_xz: f64,
    sigma_yz: f64,
}

fn moment_row(t: f64, f: &SphericalDensity, gamma_e: f64) -> MomentRow {
    let m1 = f.first_moment();
    let m2 = sym_components(&f.second_moment());
    let s = sym_components(&stress_moment(f, gamma_e).to_matrix());
    MomentRow {
        t,
        mass: f.mass(),
        m1_x: m1.x,
        m1_y: m1.y,
        m1_z: m1.z,
        m2_xx: m2[0],
        m2_yy: m2[1],
        m2_zz: m2[2],
        m2_xy: m2[3],
        m2_xz: m2[4],
        m2_yz: m2[5],
        sigma_xx: s[0],
        sigma_yy: s[1],
        sigma_zz: s[2],
        sigma_xy: s[3],
        sigma_xz: s[4],
        sigma_yz: s[5],
    }
}

#[derive(Serialize)]
struct CoefficientRow {
    l: usize,
    m: i64,
    value: f64,
}

fn fokker_planck(config: &RunConfig, dir: &mut RunDir) -> Result<Report> {
    let params = config.params.resolve()?;
    let fp = FokkerPlanck::new(config.fp.l_max)?;
    let t_end = config.sde.t_end;
    let times: Vec<f64> = (1..=20).map(|k| t_end * k as f64 / 20.0).collect();
    let dens = fp_densities(&fp, &config.initial, &config.h, config.sde.scaling, &times)?;
    let mut rows = vec![moment_row(0.0, &initial_density(&config.initial, fp.l_max), params.gamma_e)];
    rows.extend(times.iter().zip(&dens).map(|(t, f)| moment_row(*t, f, params.gamma_e)));
    dir.write_csv("moments.csv", &rows)?;
    let last = dens.last().expect("nonempty times");
    let coeffs: Vec<CoefficientRow> = suspension_core::sphere::sh_degrees(fp.l_max)
        .into_iter()
        .zip(&last.coeffs)
        .map(|((l, m), v)| CoefficientRow { l, m, value: *v })
        .collect();
    dir.write_csv("coefficients.csv", &coeffs)?;
    let mut report = json!({ "mode": "fokker_planck", "l_max": fp.l_max, "t_end": t_end, "final_mass": last.mass() });
    if config.h.is_time_independent() {
        let st = fp.stationary_solve(&config.h, 1.0)?;
        dir.write_csv("stationary_moments.csv", &[moment_row(f64::INFINITY, &st.density, params.gamma_e)])?;
        report["stationary"] = json!({
            "kernel_residual": st.kernel_residual,
            "smallest_eigenvalue": st.smallest_eigenvalue,
            "spectral_gap": st.spectral_gap,
            "sign_ratio": st.sign_ratio,
        });
    }
    Ok(report)
}

// ------------------------------------------------------------------ verify

#[derive(Serialize)]
struct CheckRow {
    check: String,
    estimate: f64,
    reference: f64,
    stderr: f64,
    z: f64,
    pass: bool,
    seed: u64,
}

fn verify(config: &RunConfig, dir: &mut RunDir, mode: ExecMode) -> Result<Report> {
    let params = config.params.resolve()?;
    let id = &config.identity;
    let setup = ExpectationSetup {
        n: id.samples,
        initial: config.initial,
        sde: config.sde.with_seed(config.seed),
        h: config.h.clone(),
        params,
        a: id.a,
        b: Vec3::from(id.b),
        window: id.window,
        l_max: config.fp.l_max,
        time_nodes: config.fp.time_nodes,
    };
    let rep = expectation_identity_check(&setup, mode)?;
    let mut rows = vec![
        CheckRow {
            check: "strain_expectation".into(),
            estimate: rep.strain.mean,
            reference: rep.strain_prediction,
            stderr: rep.strain.stderr,
            z: if rep.strain.stderr > 0.0 { rep.strain_z } else { 0.0 },
            pass: rep.strain.stderr == 0.0 && rep.strain.mean == rep.strain_prediction || rep.strain_z.abs() <= 3.0,
            seed: config.seed,
        },
        CheckRow {
            check: "torque_expectation".into(),
            estimate: rep.torque.mean,
            reference: 0.0,
            stderr: rep.torque.stderr,
            z: rep.torque_z,
            pass: rep.torque_z.abs() <= 3.0,
            seed: config.seed,
        },
    ];

    // Itô isometry for the strain-torque integrand on a stored ensemble
    let n = config.particle_counts[0];
    let sde = config.sde.with_seed(mix_seed(config.seed, 1));
    dir.record_seed(sde.seed);
    let ens = simulate_ensemble(n.max(2), &config.initial, &sde, &config.h, mode)?;
    let am = id.a.to_matrix();
    let d: Vec<f64> = ens
        .paths
        .iter()
        .map(|p| {
            let g: Vec<Vec3> = p.states.iter().map(|xi| strain_torque_vector(xi, &params, &am)).collect();
            let ito = suspension_core::pairing::ito_sum(&g, &p.increments).expect("aligned");
            let q: Vec<f64> = g[..g.len() - 1].iter().map(|v| v.norm_squared()).collect();
            ito * ito - pairwise_sum(&q) * sde.dt
        })
        .collect();
    let s = Summary::of(&d);
    let z = if s.stderr > 0.0 { s.mean / s.stderr } else { 0.0 };
    rows.push(CheckRow {
        check: "ito_isometry".into(),
        estimate: s.mean,
        reference: 0.0,
        stderr: s.stderr,
        z,
        pass: z.abs() <= 5.0,
        seed: config.seed,
    });

    // the two evaluations of the transport functional on the same paths
    let centers = centers_for(config, ens.n(), config.seed)?;
    let f0 = InitialLaw { spatial: config.spatial.clone(), orientation: config.initial };
    let psi = &config.test_functions.psi;
    let parts: Vec<(f64, f64)> = ens
        .paths
        .iter()
        .zip(&centers)
        .map(|(p, x)| psi_particle(p, sde.dt, x, psi, &config.h, sde.scaling))
        .collect();
    let diff: Vec<f64> = parts.iter().map(|(a, b)| a - b).collect();
    let ds = Summary::of(&diff);
    let base = f0.pair_at_zero(psi)?;
    rows.push(CheckRow {
        check: "psi_direct_minus_identity".into(),
        estimate: ds.mean,
        reference: 0.0,
        stderr: ds.stderr,
        z: if ds.stderr > 0.0 { ds.mean / ds.stderr } else { 0.0 },
        pass: ds.mean.abs() <= 3.0 * ds.stderr + 1e-12,
        seed: config.seed,
    });
    dir.write_csv("identities.csv", &rows)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    let report = json!({
        "mode": "verify",
        "checks": rows.len(),
        "failed": failed,
        "strain_z": rep.strain_z,
        "torque_z": rep.torque_z,
        "psi_base": base,
    });
    if failed > 0 {
        dir.write_json("report.json", &report)?;
        return Err(HarnessError::ChecksFailed { failed, total: rows.len() });
    }
    Ok(report)
}

// --------------------------------------------------------------- sweep-de1

/// Per-realization values of the functionals at one `n`.
#[derive(Debug, Clone, Copy)]
struct Realization {
    phi: f64,
    stress_part: f64,
    psi_direct: f64,
    psi_identity: f64,
}

#[derive(Serialize)]
struct SweepRow {
    n: usize,
    realizations: usize,
    status: String,
    phi_mean: f64,
    phi_stderr: f64,
    phi_z: f64,
    phi_sq_mean: f64,
    phi_sq_stderr: f64,
    stress_part_max_abs: f64,
    psi_identity_mean: f64,
    psi_identity_stderr: f64,
    psi_direct_mean: f64,
    psi_discrepancy_max: f64,
    phi_n_log_n: f64,
    d_min_n13: f64,
    max_abs_x: f64,
    seed: u64,
}

#[derive(Serialize)]
struct W1Row {
    n: usize,
    t: f64,
    seed: u64,
    atoms: usize,
    w1: f64,
    method: String,
}

#[derive(Serialize)]
struct FitRow {
    quantity: String,
    slope: f64,
    target: f64,
    tolerance: f64,
    pass: bool,
}

fn realizations_at(
    config: &RunConfig,
    params: &ResistanceParams,
    centers: &[Vec3],
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<Realization>> {
    let n = centers.len();
    let tf = &config.test_functions;
    let f0 = InitialLaw { spatial: config.spatial.clone(), orientation: config.initial };
    let base = f0.pair_at_zero(&tf.psi)?;
    map_indexed(mode, config.realizations, |r| -> Result<Realization> {
        let sde = config.sde.with_seed(mix_seed(seed, r as u64));
        let factor = stochastic_pairing_factor(params, sde.scaling);
        let mut phi = Vec::with_capacity(n);
        let mut stress = Vec::with_capacity(n);
        let mut pd = Vec::with_capacity(n);
        let mut pi = Vec::with_capacity(n);
        for (i, x) in centers.iter().enumerate() {
            let path = simulate_path(i, &config.initial, &sde, &config.h)?;
            let t = phi_particle(&path, sde.dt, x, params, &tf.phi, sde.scaling)?;
            phi.push(t.value);
            stress.push(factor * t.stress);
            let (d, id) = psi_particle(&path, sde.dt, x, &tf.psi, &config.h, sde.scaling);
            pd.push(d);
            pi.push(id);
        }
        let nf = n as f64;
        Ok(Realization {
            phi: pairwise_sum(&phi) / nf,
            stress_part: pairwise_sum(&stress) / nf,
            psi_direct: base + pairwise_sum(&pd) / nf,
            psi_identity: base + pairwise_sum(&pi) / nf,
        })
    })
    .into_iter()
    .collect()
}

/// Draw `m` orientations from a spherical density by rejection.
fn sample_density(f: &SphericalDensity, m: usize, rng: &mut ChaCha8Rng) -> Vec<Orientation> {
    let grid = SphereGrid::with_nodes(f.l_max, 2 * f.l_max + 8, 4 * f.l_max + 16);
    let (_, hi) = f.grid_extrema(&grid);
    let bound = 1.05 * hi.max(1e-12);
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let xi = OrientationLaw::Uniform.sample(rng);
        if rand::Rng::random::<f64>(rng) * bound < f.eval(xi.vec()).max(0.0) {
            out.push(xi);
        }
    }
    out
}

fn w1_at(
    config: &RunConfig,
    fp: &FokkerPlanck,
    centers: &[Vec3],
    mode: ExecMode,
) -> Result<Vec<W1Row>> {
    let times = &config.w1.checkpoints;
    if times.is_empty() {
        return Ok(vec![]);
    }
    let k = centers.len().min(config.w1.max_atoms);
    let dens = fp_densities(fp, &config.initial, &config.h, config.sde.scaling, times)?;
    let mut rows = Vec::new();
    for s in 0..config.w1.seeds {
        let seed = mix_seed(config.seed, 10_000 + s as u64);
        let sde = config.sde.with_seed(seed);
        let paths = map_indexed(mode, k, |i| simulate_path(i, &config.initial, &sde, &config.h))
            .into_iter()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, centers.len() as u64));
        for (t, f) in times.iter().zip(&dens) {
            let idx = ((t / sde.dt).round() as usize).min(sde.steps());
            let empirical: Vec<Atom> =
                paths.iter().zip(centers).map(|(p, x)| Atom::new(*x, p.states[idx], 1.0 / k as f64)).collect();
            let m = config.w1.reference_atoms;
            let xs = config.spatial.sample(m, &mut rng)?;
            let xis = sample_density(f, m, &mut rng);
            let reference: Vec<Atom> = xs.iter().zip(xis).map(|(x, xi)| Atom::new(*x, xi, 1.0 / m as f64)).collect();
            let w = wasserstein1(&empirical, &reference, config.w1.epsilon)?;
            rows.push(W1Row {
                n: centers.len(),
                t: *t,
                seed,
                atoms: k,
                w1: w.value,
                method: format!("{:?}", w.method).to_lowercase(),
            });
        }
    }
    Ok(rows)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn sweep_de1(config: &RunConfig, dir: &mut RunDir, mode: ExecMode) -> Result<Report> {
    if !matches!(config.sde.scaling, Scaling::DeborahOne) {
        return Err(HarnessError::Config("sweep_de1 needs sde.scaling = deborah_one".into()));
    }
    let params = config.params.resolve()?;
    let fp = FokkerPlanck::new(config.fp.l_max)?;
    let mut rows = Vec::new();
    let mut w1_rows = Vec::new();
    let mut first_error = None;
    for &n in &config.particle_counts {
        let seed = mix_seed(config.seed, n as u64);
        dir.record_seed(seed);
        let outcome = (|| -> Result<(SweepRow, Vec<W1Row>)> {
            let pc = configuration(config, centers_for(config, n, config.seed)?, config.volume_fraction)?;
            dir.record_diagnostics(pc.diagnostics.clone());
            let reals = realizations_at(config, &params, &pc.centers, seed, mode)?;
            let phi: Vec<f64> = reals.iter().map(|r| r.phi).collect();
            let ps = Summary::of(&phi);
            let sq = second_moment(&phi);
            let psi: Vec<f64> = reals.iter().map(|r| r.psi_identity).collect();
            let psis = Summary::of(&psi);
            let psid = Summary::of(&reals.iter().map(|r| r.psi_direct).collect::<Vec<_>>());
            let row = SweepRow {
                n,
                realizations: reals.len(),
                status: "ok".into(),
                phi_mean: ps.mean,
                phi_stderr: ps.stderr,
                phi_z: if ps.stderr > 0.0 { ps.mean / ps.stderr } else { 0.0 },
                phi_sq_mean: sq.mean,
                phi_sq_stderr: sq.stderr,
                stress_part_max_abs: reals.iter().map(|r| r.stress_part.abs()).fold(0.0, f64::max),
                psi_identity_mean: psis.mean,
                psi_identity_stderr: psis.stderr,
                psi_direct_mean: psid.mean,
                psi_discrepancy_max: reals.iter().map(|r| (r.psi_direct - r.psi_identity).abs()).fold(0.0, f64::max),
                phi_n_log_n: pc.diagnostics.phi_n_log_n,
                d_min_n13: pc.diagnostics.d_min_n13,
                max_abs_x: pc.diagnostics.max_abs_x,
                seed,
            };
            let w1 = w1_at(config, &fp, &pc.centers, mode)?;
            Ok((row, w1))
        })();
        match outcome {
            Ok((row, w1)) => {
                rows.push(row);
                w1_rows.extend(w1);
            }
            Err(e) => {
                log::error!("sweep_de1: n = {n} failed: {e}");
                rows.push(SweepRow {
                    n,
                    realizations: 0,
                    status: format!("error: {e}"),
                    phi_mean: f64::NAN,
                    phi_stderr: f64::NAN,
                    phi_z: f64::NAN,
                    phi_sq_mean: f64::NAN,
                    phi_sq_stderr: f64::NAN,
                    stress_part_max_abs: f64::NAN,
                    psi_identity_mean: f64::NAN,
                    psi_identity_stderr: f64::NAN,
                    psi_direct_mean: f64::NAN,
                    psi_discrepancy_max: f64::NAN,
                    phi_n_log_n: f64::NAN,
                    d_min_n13: f64::NAN,
                    max_abs_x: f64::NAN,
                    seed,
                });
                first_error.get_or_insert(e);
            }
        }
    }
    dir.write_csv("sweep.csv", &rows)?;
    if !w1_rows.is_empty() {
        dir.write_csv("w1.csv", &w1_rows)?;
    }

    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.status == "ok").collect();
    let mut fits = Vec::new();
    let mut report = json!({ "mode": "sweep_de1", "rows": rows.len() });
    if ok.len() >= 2 {
        let ns: Vec<f64> = ok.iter().map(|r| r.n as f64).collect();
        let sq: Vec<f64> = ok.iter().map(|r| r.phi_sq_mean).collect();
        if sq.iter().all(|v| *v > 0.0) {
            let slope = loglog_slope(&ns, &sq);
            fits.push(FitRow { quantity: "phi_second_moment".into(), slope, target: -1.0, tolerance: 0.2, pass: (slope + 1.0).abs() <= 0.2 });
            report["phi_second_moment_slope"] = json!(slope);
        }
        let centered = ok.iter().all(|r| r.phi_mean.abs() <= 3.0 * r.phi_stderr);
        report["phi_centered_all_n"] = json!(centered);
    }
    if !w1_rows.is_empty() {
        // median over seeds at the last checkpoint, per n
        let t_last = *config.w1.checkpoints.last().expect("nonempty");
        let mut med = Vec::new();
        for r in &ok {
            let v: Vec<f64> = w1_rows.iter().filter(|w| w.n == r.n && w.t == t_last).map(|w| w.w1).collect();
            if !v.is_empty() {
                med.push((r.n as f64, median(v)));
            }
        }
        let decreasing = med.windows(2).all(|w| w[1].1 < w[0].1);
        report["w1_median_last"] = json!(med);
        report["w1_strictly_decreasing"] = json!(decreasing);
        if med.len() >= 2 {
            let slope = loglog_slope(&med.iter().map(|m| m.0).collect::<Vec<_>>(), &med.iter().map(|m| m.1).collect::<Vec<_>>());
            fits.push(FitRow { quantity: "w1_median".into(), slope, target: f64::NAN, tolerance: f64::NAN, pass: decreasing });
        }
    }
    dir.write_csv("fits.csv", &fits)?;
    if let Some(e) = first_error {
        dir.write_json("report.json", &report)?;
        return Err(e);
    }
    Ok(report)
}

// ----------------------------------------------------------- sweep-small-de

#[derive(Serialize)]
struct SmallDeRow {
    phi_n: f64,
    n: usize,
    particles: usize,
    dt: f64,
    t_end: f64,
    average_from: f64,
    mean_xi3: f64,
    mean_xi3_stderr: f64,
    stationary_xi3: f64,
    z_xi3: f64,
    mean_xi3_sq: f64,
    mean_xi3_sq_stderr: f64,
    stationary_xi3_sq: f64,
    z_xi3_sq: f64,
    max_moment_z: f64,
    layer_rate_times_phi: f64,
    predicted_rate_times_phi: f64,
    theta_mean: f64,
    theta_stderr: f64,
    phi_n_log_n: f64,
    d_min_n13: f64,
    seed: u64,
}

#[derive(Serialize)]
struct LayerRow {
    phi_n: f64,
    t: f64,
    mean_xi3: f64,
    stationary_xi3: f64,
}

/// Per-particle time averages over the averaging window: `ξ` and `ξ⊗ξ`
/// (upper triangle), plus the running sum of `ξ₃` at each grid time.
struct SmallDeStats {
    averages: Vec<[f64; 9]>,
    series: Vec<f64>,
}

fn small_de_statistics(config: &RunConfig, sde: &SdeParams, k0: usize, mode: ExecMode) -> Result<SmallDeStats> {
    const CHUNK: usize = 64;
    let p = config.small_de.particles;
    let chunks = p.div_ceil(CHUNK);
    let steps = sde.steps();
    let parts = map_indexed(mode, chunks, |c| -> Result<(Vec<[f64; 9]>, Vec<f64>)> {
        let mut avgs = Vec::new();
        let mut series = vec![0.0; steps + 1];
        for i in c * CHUNK..((c + 1) * CHUNK).min(p) {
            let path = simulate_path(i, &config.initial, sde, &config.h)?;
            let mut acc = [0.0; 9];
            for (k, xi) in path.states.iter().enumerate() {
                let v = xi.vec();
                series[k] += v.z;
                if k >= k0 {
                    let vals = [v.x, v.y, v.z, v.x * v.x, v.y * v.y, v.z * v.z, v.x * v.y, v.x * v.z, v.y * v.z];
                    for (a, b) in acc.iter_mut().zip(vals) {
                        *a += b;
                    }
                }
            }
            let cnt = (steps + 1 - k0) as f64;
            avgs.push(acc.map(|a| a / cnt));
        }
        Ok((avgs, series))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut averages = Vec::with_capacity(p);
    let mut series = vec![0.0; steps + 1];
    for (a, s) in parts {
        averages.extend(a);
        for (x, y) in series.iter_mut().zip(s) {
            *x += y;
        }
    }
    series.iter_mut().for_each(|x| *x /= p as f64);
    Ok(SmallDeStats { averages, series })
}

fn sweep_small_de(config: &RunConfig, dir: &mut RunDir, mode: ExecMode) -> Result<Report> {
    let fp = FokkerPlanck::new(config.fp.l_max)?;
    if !config.h.is_time_independent() {
        return Err(HarnessError::Config("sweep_small_de needs a time-independent h".into()));
    }
    let st = fp.stationary_solve(&config.h, 1.0)?;
    let m1 = st.density.first_moment();
    let m2 = st.density.second_moment();
    let stationary = [m1.x, m1.y, m1.z, m2[(0, 0)], m2[(1, 1)], m2[(2, 2)], m2[(0, 1)], m2[(0, 2)], m2[(1, 2)]];
    let sd = &config.small_de;
    let n = config.particle_counts[0];
    let mut rows = Vec::new();
    let mut layer = Vec::new();
    for (idx, &phi_n) in sd.phi_n.iter().enumerate() {
        let pc = configuration(config, centers_for(config, n, config.seed)?, phi_n)?;
        dir.record_diagnostics(pc.diagnostics.clone());
        let seed = mix_seed(config.seed, 500 + idx as u64);
        dir.record_seed(seed);
        let sde = SdeParams {
            dt: sd.diffusive_dt * phi_n,
            t_end: sd.diffusive_t_end * phi_n,
            scaling: Scaling::SmallDeborah { phi_n },
            scheme: config.sde.scheme,
            seed,
        };
        sde.validate()?;
        let k0 = ((sd.average_from / sd.diffusive_dt).round() as usize).min(sde.steps());
        let stats = small_de_statistics(config, &sde, k0, mode)?;
        let comp: Vec<Summary> =
            (0..9).map(|c| Summary::of(&stats.averages.iter().map(|a| a[c]).collect::<Vec<_>>())).collect();
        let zs: Vec<f64> = comp.iter().zip(&stationary).map(|(s, v)| s.z_against(*v)).collect();

        // initial layer: fit log|E ξ₃(t) − stationary| while well above the noise floor
        let floor = 10.0 * comp[2].std / (sd.particles as f64).sqrt();
        let mut tt = Vec::new();
        let mut ll = Vec::new();
        for (k, m) in stats.series.iter().enumerate() {
            let d = (m - m1.z).abs();
            if k > 0 && d > floor {
                tt.push(k as f64 * sde.dt);
                ll.push(d.ln());
            } else if k > 0 {
                break;
            }
        }
        let rate = if tt.len() >= 3 { -suspension_core::stats::linear_fit(&tt, &ll).1 } else { f64::NAN };
        let stride = (sde.steps() / 200).max(1);
        for k in (0..=sde.steps()).step_by(stride) {
            layer.push(LayerRow { phi_n, t: k as f64 * sde.dt, mean_xi3: stats.series[k], stationary_xi3: m1.z });
        }

        // Θ over independently sampled initial positions
        let theta_vals: Vec<f64> = (0..config.realizations)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, r as u64));
                let xs = config.spatial.sample(n, &mut rng)?;
                Ok(theta_functional(&xs, &config.spatial, &config.test_functions.theta, sde.t_end)?)
            })
            .collect::<Result<_>>()?;
        let th = Summary::of(&theta_vals);

        rows.push(SmallDeRow {
            phi_n,
            n,
            particles: sd.particles,
            dt: sde.dt,
            t_end: sde.t_end,
            average_from: sd.average_from * phi_n,
            mean_xi3: comp[2].mean,
            mean_xi3_stderr: comp[2].stderr,
            stationary_xi3: m1.z,
            z_xi3: zs[2],
            mean_xi3_sq: comp[5].mean,
            mean_xi3_sq_stderr: comp[5].stderr,
            stationary_xi3_sq: m2[(2, 2)],
            z_xi3_sq: zs[5],
            max_moment_z: zs.iter().map(|z| z.abs()).fold(0.0, f64::max),
            layer_rate_times_phi: rate * phi_n,
            predicted_rate_times_phi: st.spectral_gap,
            theta_mean: th.mean,
            theta_stderr: th.stderr,
            phi_n_log_n: pc.diagnostics.phi_n_log_n,
            d_min_n13: pc.diagnostics.d_min_n13,
            seed,
        });
    }
    dir.write_csv("small_de.csv", &rows)?;
    dir.write_csv("initial_layer.csv", &layer)?;
    dir.note("initial layer: no layer width is asserted; the relaxation rate is reported against the stationary spectral gap");
    let pass = rows.iter().all(|r| r.z_xi3.abs() <= 3.0 && r.z_xi3_sq.abs() <= 3.0);
    Ok(json!({
        "mode": "sweep_small_de",
        "stationary_xi3": m1.z,
        "stationary_xi3_sq": m2[(2, 2)],
        "moments_within_3_sigma": pass,
        "rows": rows.len(),
    }))
}

// ----------------------------------------------------------- compare-fields

/// Result of the three-way comparison of the Stokes pairing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldComparison {
    pub n: usize,
    pub realizations: usize,
    /// Monte Carlo mean of `⟨φ_n⁻¹ u_app, Δφ⟩`.
    pub monte_carlo: f64,
    pub monte_carlo_stderr: f64,
    /// `γ_E ⟨f, (Id − 3ξ⊗ξ):∇φ⟩` with `f` from the Fokker-Planck solver.
    pub fokker_planck: f64,
    /// Quadrature error estimate of the Fokker-Planck pairing (half-node rule).
    pub fokker_planck_error: f64,
    /// `⟨velocity_from_stress(σ_f), Δφ⟩`, Richardson-extrapolated from
    /// grid spacings `h` and `2h`.
    pub velocity: f64,
    pub velocity_fine: f64,
    pub velocity_coarse: f64,
    pub z_mc_vs_fp: f64,
    pub velocity_rel_diff: f64,
}

/// `∫ ρ(x) Dφ(x) dx` by tensor Gauss–Legendre on the support cube of `φ`.
fn density_strain(spatial: &SpatialLaw, phi: &suspension_core::testfn::DivFreeField, nodes: usize) -> Result<Mat3> {
    let q = bump_quadrature(&phi.bump, nodes);
    let mut acc = Mat3::zeros();
    for (x, w) in q {
        let rho = spatial
            .density(&x)
            .ok_or_else(|| HarnessError::Config("field comparison needs a spatial law with a density".into()))?;
        if rho != 0.0 {
            acc += phi.jet(&x).strain().to_matrix() * (w * rho);
        }
    }
    Ok(acc)
}

/// Time-integrated limit stress `∫ w(t) σ_f(t) dt`.
fn integrated_stress(config: &RunConfig, params: &ResistanceParams, fp: &FokkerPlanck) -> Result<SymTraceless3> {
    let w = config.test_functions.phi.window;
    let t_end = config.sde.t_end;
    if let Scaling::SmallDeborah { .. } = config.sde.scaling {
        let st = fp.stationary_solve(&config.h, 1.0)?;
        return Ok(stress_moment(&st.density, params.gamma_e) * w.integral(t_end));
    }
    let (tn, tw) = suspension_core::quadrature::gauss_legendre_on(config.fp.time_nodes, 0.0, t_end);
    let m2 = reference_second_moments(&config.initial, &config.h, config.sde.scaling, fp.l_max, &tn)?;
    let mut acc = Mat3::zeros();
    for ((t, wt), m) in tn.iter().zip(&tw).zip(&m2) {
        acc += (Mat3::identity() - m * 3.0) * (params.gamma_e * wt * w.value(*t));
    }
    Ok(SymTraceless3::from_matrix(&acc))
}

/// Grid of spacing `h` centred on `c` and covering the cube `c ± half`.
fn cube_grid(c: &Vec3, half: f64, h: f64) -> Grid3 {
    let k = ((2.0 * half) / h).ceil() as usize + 1;
    let start = c - Vec3::repeat(0.5 * (k - 1) as f64 * h);
    Grid3 { origin: start.into(), spacing: h, dims: [k; 3] }
}

/// `⟨u_σ, Δφ⟩` for `σ(y) = ρ(y) Σ`, with `u_σ` from the stress quadrature
/// and the outer integral by the midpoint rule on a grid staggered by
/// half a cell, so no probe meets a stress node.
pub fn velocity_pairing(
    spatial: &SpatialLaw,
    sigma: &SymTraceless3,
    phi: &suspension_core::testfn::DivFreeField,
    h: f64,
    mode: ExecMode,
) -> Result<f64> {
    let (rc, rr) = match spatial {
        SpatialLaw::BumpDensity { bump } => (Vec3::from(bump.center), bump.radius),
        SpatialLaw::UniformBox { half_width } => (Vec3::zeros(), *half_width),
        SpatialLaw::Atoms { .. } => {
            return Err(HarnessError::Config("field comparison needs a spatial law with a density".into()))
        }
    };
    let sgrid = cube_grid(&rc, rr, h);
    let field = StressField::from_fn(sgrid.clone(), |y| *sigma * spatial.density(y).unwrap_or(0.0))?;
    // probe grid on the cell centres of the stress grid, covering supp φ
    let o = Vec3::from(sgrid.origin);
    let low = Vec3::from(phi.bump.center) - Vec3::repeat(phi.bump.radius);
    let start = o + ((low - o) / h).map(|v| v.floor()) * h + Vec3::repeat(0.5 * h);
    let kp = ((2.0 * phi.bump.radius) / h).ceil() as usize + 1;
    let pgrid = Grid3 { origin: start.into(), spacing: h, dims: [kp; 3] };
    let probes: Vec<Vec3> = pgrid.nodes().into_iter().filter(|p| phi.jet(p).laplacian != Vec3::zeros()).collect();
    let u = velocity_from_stress(&field, &probes, mode)?;
    let terms: Vec<f64> = probes.iter().zip(&u.values).map(|(p, uv)| uv.dot(&phi.jet(p).laplacian)).collect();
    Ok(pairwise_sum(&terms) * h.powi(3))
}

/// Three-way comparison of the Stokes pairing at `n` particles.
pub fn field_comparison(config: &RunConfig, n: usize, mode: ExecMode) -> Result<FieldComparison> {
    let params = config.params.resolve()?;
    let fp = FokkerPlanck::new(config.fp.l_max)?;
    let phi = &config.test_functions.phi;
    let sigma = integrated_stress(config, &params, &fp)?;
    let nodes = config.grid.quadrature_nodes;
    let fp_pair = sigma.contract(&density_strain(&config.spatial, phi, nodes)?);
    let fp_half = sigma.contract(&density_strain(&config.spatial, phi, nodes / 2)?);
    let h = config.grid.spacing;
    let velocity_fine = velocity_pairing(&config.spatial, &sigma, phi, h, mode)?;
    let velocity_coarse = velocity_pairing(&config.spatial, &sigma, phi, 2.0 * h, mode)?;
    // the midpoint quadrature error is O(h²)
    let velocity = (4.0 * velocity_fine - velocity_coarse) / 3.0;

    let seed = mix_seed(config.seed, 77);
    let values = map_indexed(mode, config.realizations, |r| -> Result<f64> {
        let sde = config.sde.with_seed(mix_seed(seed, r as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(sde.seed, u64::MAX));
        let xs = config.spatial.sample(n, &mut rng)?;
        let mut acc = Vec::with_capacity(n);
        for (i, x) in xs.iter().enumerate() {
            let path = simulate_path(i, &config.initial, &sde, &config.h)?;
            acc.push(phi_particle(&path, sde.dt, x, &params, phi, sde.scaling)?.stochastic);
        }
        Ok(stochastic_pairing_factor(&params, sde.scaling) * pairwise_sum(&acc) / n as f64)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let s = Summary::of(&values);
    let fp_err = (fp_pair - fp_half).abs();
    let combined = (s.stderr * s.stderr + fp_err * fp_err).sqrt();
    Ok(FieldComparison {
        n,
        realizations: config.realizations,
        monte_carlo: s.mean,
        monte_carlo_stderr: s.stderr,
        fokker_planck: fp_pair,
        fokker_planck_error: fp_err,
        velocity,
        velocity_fine,
        velocity_coarse,
        z_mc_vs_fp: if combined > 0.0 { (s.mean - fp_pair) / combined } else { 0.0 },
        velocity_rel_diff: if fp_pair != 0.0 { (velocity - fp_pair).abs() / fp_pair.abs() } else { velocity.abs() },
    })
}

fn compare_fields(config: &RunConfig, dir: &mut RunDir, mode: ExecMode) -> Result<Report> {
    let n = *config.particle_counts.last().expect("validated nonempty");
    let cmp = field_comparison(config, n, mode)?;
    #[derive(Serialize)]
    struct Verdict {
        pass_mc: bool,
        pass_velocity: bool,
        seed: u64,
    }
    let zero = config.params.resolve()?.gamma_e == 0.0;
    let pass_mc = cmp.z_mc_vs_fp.abs() <= 3.0;
    let pass_velocity = if zero { cmp.velocity.abs() < 1e-12 } else { cmp.velocity_rel_diff <= 0.02 };
    dir.write_csv("compare_fields.csv", &[(cmp, Verdict { pass_mc, pass_velocity, seed: config.seed })])?;
    Ok(json!({ "mode": "compare_fields", "comparison": cmp, "pass_mc": pass_mc, "pass_velocity": pass_velocity }))
}

// --------------------------------------------------------- kernels-selftest

#[derive(Serialize)]
struct SelftestRow {
    check: String,
    max_error: f64,
    tolerance: f64,
    pass: bool,
}

/// Tensor-algebra and kernel identities on random inputs.
pub fn kernel_checks(seed: u64, samples: usize) -> Vec<(String, f64, f64)> {
    use rand::Rng;
    use suspension_core::stokes::{oseen, rotlet_field, stresslet_field};
    use suspension_core::tensor::{r2, r2_inv, r2_sqrt, stresslet_coupling};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let (mut e_sqrt, mut e_inv, mut e_s) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let xi = OrientationLaw::Uniform.sample(&mut rng);
        let p = ResistanceParams::new(
            rng.random_range(0.2..3.0),
            rng.random_range(0.2..3.0),
            rng.random_range(0.2..3.0),
            rng.random_range(0.2..3.0),
            rng.random_range(-2.0..2.0),
        )
        .expect("positive");
        let s = r2_sqrt(&xi, &p);
        e_sqrt = e_sqrt.max((s * s - r2(&xi, &p)).norm() / r2(&xi, &p).norm());
        e_inv = e_inv.max((r2_inv(&xi, &p) * r2(&xi, &p) - Mat3::identity()).norm());
        // torque → stresslet: closed form vs sym((R₂⁻¹T × ξ) ⊗ ξ) γ_E, the assembled mobility route
        let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let omega = r2_inv(&xi, &p) * t;
        let v = omega.cross(xi.vec()) * p.gamma_e;
        let assembled = SymTraceless3::from_matrix(&(v * xi.vec().transpose()));
        let closed = stresslet_coupling(&xi, &p, &xi.project_tangent(&t));
        e_s = e_s.max((assembled - closed).norm());
    }
    out.push(("r2_sqrt_squared".to_string(), e_sqrt, 1e-12));
    out.push(("r2_inv_times_r2".to_string(), e_inv, 1e-12));
    out.push(("stresslet_closed_form".to_string(), e_s, 1e-12));

    let (mut e_rot, mut e_str) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let x = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        if x.norm() < 0.1 {
            continue;
        }
        let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let want = t.cross(&x) / (8.0 * std::f64::consts::PI * x.norm().powi(3));
        e_rot = e_rot.max((rotlet_field(&t, &x).expect("x != 0") - want).norm());
        // stresslet against a finite-difference contraction of the Oseen tensor
        let s = SymTraceless3([
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]);
        let sm = s.to_matrix();
        let eps = 1e-5 * x.norm();
        let mut fd = Vec3::zeros();
        for b in 0..3 {
            let mut e = Vec3::zeros();
            e[b] = eps;
            let d = (oseen(&(x + e)).expect("x != 0") - oseen(&(x - e)).expect("x != 0")) / (2.0 * eps);
            for a in 0..3 {
                for c in 0..3 {
                    fd[a] += sm[(c, b)] * d[(a, c)];
                }
            }
        }
        let exact = stresslet_field(&s, &x).expect("x != 0");
        e_str = e_str.max((exact - fd).norm() / exact.norm().max(1e-300));
    }
    out.push(("rotlet_identity".to_string(), e_rot, 1e-10));
    out.push(("stresslet_vs_fd_contraction".to_string(), e_str, 1e-6));

    // far-field decay slopes along a fixed direction
    let dir = Vec3::new(0.3, -0.5, 0.8).normalize();
    let rs = [4.0, 8.0, 16.0, 32.0];
    let t = Vec3::new(0.2, 0.9, -0.4);
    let s = SymTraceless3([0.4, -0.2, 0.3, 0.1, -0.5]);
    let rot: Vec<f64> = rs.iter().map(|r| rotlet_field(&t, &(dir * *r)).expect("r > 0").norm()).collect();
    let st: Vec<f64> = rs.iter().map(|r| stresslet_field(&s, &(dir * *r)).expect("r > 0").norm()).collect();
    out.push(("rotlet_decay_slope".to_string(), (loglog_slope(&rs, &rot) + 2.0).abs(), 0.02));
    out.push(("stresslet_decay_slope".to_string(), (loglog_slope(&rs, &st) + 2.0).abs(), 0.02));
    out
}

fn kernels_selftest(config: &RunConfig, dir: &mut RunDir) -> Result<Report> {
    let rows: Vec<SelftestRow> = kernel_checks(config.seed, 1000)
        .into_iter()
        .map(|(check, max_error, tolerance)| SelftestRow { pass: max_error <= tolerance, check, max_error, tolerance })
        .collect();
    dir.write_csv("selftest.csv", &rows)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(HarnessError::ChecksFailed { failed, total: rows.len() });
    }
    Ok(json!({ "mode": "kernels_selftest", "checks": rows.len(), "failed": 0 }))
}
