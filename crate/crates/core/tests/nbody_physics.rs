use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use steerkit::groups::{sample, GroupElement, Quat};
use steerkit::nbody::{zero_motion_mse, Dataset, SpringSystem, Trajectory};
use steerkit::GroupId;

fn max_diff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rotate(g: &GroupElement<f64>, xs: &[[f64; 3]]) -> Vec<[f64; 3]> {
    xs.iter().map(|&x| g.act(x)).collect()
}

/// Worst mismatch between simulating a transformed state and transforming
/// the simulated state, over ten random initial states.
fn resim_error(system: &SpringSystem, g: &GroupElement<f64>, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let t = system.random_trajectory(&mut rng).unwrap();
        let (p, _) = system.simulate(&rotate(g, &t.pos0), &rotate(g, &t.vel0), &t.ell).unwrap();
        worst = worst.max(max_diff(&p, &rotate(g, &t.pos1)));
    }
    worst
}

#[test]
fn energy_is_conserved_without_plane_strings() {
    let system = SpringSystem::with_stiffness(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let t = system.random_trajectory(&mut rng).unwrap();
        let (p, v) = system.simulate(&t.pos0, &t.vel0, &t.ell).unwrap();
        let e0 = system.energy(&t.pos0, &t.vel0, &t.ell);
        let e1 = system.energy(&p, &v, &t.ell);
        assert!((e1 - e0).abs() / e0 < 1e-4, "drift {}", (e1 - e0).abs() / e0);
    }
}

#[test]
fn momentum_is_conserved_without_plane_strings() {
    let system = SpringSystem::with_stiffness(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let t = system.random_trajectory(&mut rng).unwrap();
    let (_, v) = system.simulate(&t.pos0, &t.vel0, &t.ell).unwrap();
    for c in 0..3 {
        let before: f64 = t.vel0.iter().map(|x| x[c]).sum();
        let after: f64 = v.iter().map(|x| x[c]).sum();
        assert!((before - after).abs() < 1e-9);
    }
}

#[test]
fn plane_oscillator_matches_closed_form() {
    for kappa in [1.0, 10.0, 1000.0] {
        let system = SpringSystem { n_particles: 1, ..SpringSystem::with_stiffness(kappa) };
        let (z0, v0, ell) = (0.3, -0.7, 1.1);
        let (p, _) = system.simulate(&[[0.2, -0.4, z0]], &[[0.0, 0.0, v0]], &[ell]).unwrap();
        let w = f64::sqrt(kappa);
        let t = system.dt * system.n_steps as f64;
        let want = ell + (z0 - ell) * (w * t).cos() + v0 / w * (w * t).sin();
        assert!((p[0][2] - want).abs() < 1e-4, "kappa {kappa}: {} vs {want}", p[0][2]);
        assert_eq!([p[0][0], p[0][1]], [0.2, -0.4]);
    }
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let system = SpringSystem::with_stiffness(5.0);
    let pos = vec![[0.0, 0.0, 0.7]; 5];
    let ell = vec![0.7; 5];
    let (p, _) = system.simulate(&pos, &vec![[0.0; 3]; 5], &ell).unwrap();
    assert!(max_diff(&p, &pos) < 1e-10);
}

#[test]
fn forces_at_rest() {
    let system = SpringSystem::with_stiffness(0.0);
    let f = system.forces(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]], &[1.0, 1.0]);
    assert_eq!(f, vec![[0.0; 3]; 2]);
    let system = SpringSystem { n_particles: 1, ..SpringSystem::with_stiffness(3.0) };
    assert_eq!(system.forces(&[[0.5, 0.5, 1.2]], &[1.2]), vec![[0.0; 3]]);
}

#[test]
fn free_system_is_o3_symmetric() {
    let system = SpringSystem::with_stiffness(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let g = sample::<f64, _>(GroupId::O3, &mut rng);
        assert!(resim_error(&system, &g, 3) < 1e-6);
    }
}

#[test]
fn plane_strings_leave_only_azimuthal_symmetry() {
    let system = SpringSystem::with_stiffness(1000.0);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..5 {
        let g = sample::<f64, _>(GroupId::So2, &mut rng);
        assert!(resim_error(&system, &g, 4) < 1e-6);
    }
    let tilt = GroupElement::<f64>::rotation(Quat::from_axis_angle([1.0, 0.0, 0.0], 0.9));
    assert!(resim_error(&system, &tilt, 4) > 1e-2);
}

#[test]
fn dataset_generation_is_deterministic_and_round_trips() {
    let system = SpringSystem::with_stiffness(10.0);
    let a = Dataset::generate(&system, 4, 2, 2, 9).unwrap();
    let b = Dataset::generate(&system, 4, 2, 2, 9).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    a.write(dir.path()).unwrap();
    let first = std::fs::read(dir.path().join("train.jsonl")).unwrap();
    b.write(dir.path()).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join("train.jsonl")).unwrap());
    assert_eq!(Dataset::read(dir.path()).unwrap(), a);
}

#[test]
fn zero_motion_error_is_mean_squared_displacement() {
    let t = Trajectory { pos0: vec![[0.0; 3], [1.0, 1.0, 1.0]], vel0: vec![[0.0; 3]; 2], ell: vec![1.0; 2], pos1: vec![[1.0, 0.0, 0.0], [1.0, 1.0, 3.0]] };
    assert!((zero_motion_mse(&[t]) - 5.0 / 6.0).abs() < 1e-15);
}
