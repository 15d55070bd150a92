use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use suspension_core::orientation::OrientationLaw;
use suspension_core::{Orientation, Vec3};
use suspension_harness::wasserstein::{wasserstein1, wasserstein1_entropic, wasserstein1_exact, Atom, W1Method};

fn uniform_atoms(n: usize, seed: u64) -> Vec<Atom> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            Atom::new(x, OrientationLaw::Uniform.sample(&mut rng), 1.0 / n as f64)
        })
        .collect()
}

#[test]
fn entropic_matches_exact_within_two_percent() {
    let a = uniform_atoms(100, 1);
    let b = uniform_atoms(100, 2);
    let exact = wasserstein1_exact(&a, &b).unwrap();
    let entropic = wasserstein1_entropic(&a, &b, 1e-3).unwrap();
    assert!((entropic - exact).abs() <= 0.02 * exact, "{entropic} vs {exact}");
}

#[test]
fn exact_agrees_with_assignment_by_enumeration() {
    // equal weights: the optimum is a permutation
    let a = uniform_atoms(6, 5);
    let b = uniform_atoms(6, 6);
    let mut perm: Vec<usize> = (0..6).collect();
    let mut best = f64::INFINITY;
    permutations(&mut perm, 0, &mut |p| {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| (a[i].x - b[j].x).norm() + a[i].xi.geodesic(&b[j].xi)).sum();
        best = best.min(c / 6.0);
    });
    assert!((wasserstein1_exact(&a, &b).unwrap() - best).abs() < 1e-12);
}

fn permutations(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permutations(v, k + 1, f);
        v.swap(k, i);
    }
}

#[test]
fn exact_is_a_metric_on_samples() {
    let a = uniform_atoms(40, 11);
    let b = uniform_atoms(30, 12);
    let c = uniform_atoms(50, 13);
    let ab = wasserstein1_exact(&a, &b).unwrap();
    let ba = wasserstein1_exact(&b, &a).unwrap();
    let bc = wasserstein1_exact(&b, &c).unwrap();
    let ac = wasserstein1_exact(&a, &c).unwrap();
    assert!((ab - ba).abs() < 1e-10);
    assert!(ac <= ab + bc + 1e-10);
    assert!(wasserstein1_exact(&a, &a).unwrap().abs() < 1e-12);
}

#[test]
fn translation_moves_mass_by_the_shift() {
    let a = uniform_atoms(20, 3);
    let shift = Vec3::new(0.0, 0.0, 5.0);
    let b: Vec<Atom> = a.iter().map(|t| Atom::new(t.x + shift, t.xi, t.weight)).collect();
    assert!((wasserstein1_exact(&a, &b).unwrap() - 5.0).abs() < 1e-10);
}

#[test]
fn dispatcher_uses_exact_for_small_sets() {
    let a = uniform_atoms(10, 7);
    let b = [Atom::new(Vec3::zeros(), Orientation::e3(), 1.0)];
    let r = wasserstein1(&a, &b, 1e-3).unwrap();
    assert_eq!(r.method, W1Method::Exact);
    assert!(r.epsilon.is_none());
}
