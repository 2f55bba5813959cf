use onetfwi_core::fwi::{invert, misfit, misfit_and_gradient, trajectory_csv, FwiConfig, FwiProblem, StopReason};
use onetfwi_core::geometry::{AcquisitionGeometry, Grid2D, VelocityField};
use onetfwi_core::wave::{simulate_all_shots, RickerSource, SimulationConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_grid() -> Grid2D {
    Grid2D::square(12, 10.0).unwrap()
}

fn tiny_geometry(sources: Vec<f64>) -> AcquisitionGeometry {
    AcquisitionGeometry::new(sources, (0..12).map(|i| i as f64 * 10.0).collect(), 1e-3, 150).unwrap()
}

fn random_field(rng: &mut ChaCha8Rng, grid: Grid2D, lo: f32, hi: f32) -> VelocityField {
    VelocityField::new(grid, (0..grid.len()).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn problem(truth: &VelocityField, geo: &AcquisitionGeometry) -> FwiProblem {
    let source = RickerSource::new(25.0).with_amplitude(100.0);
    let simulation = SimulationConfig::default();
    let observed = simulate_all_shots(truth, geo, &source, &simulation).unwrap();
    FwiProblem { observed, source, simulation }
}

fn shifted(field: &VelocityField, dir: &[f64], h: f64) -> VelocityField {
    let v = field.values().iter().zip(dir).map(|(&c, &d)| (c as f64 + h * d) as f32).collect();
    VelocityField::new(*field.grid(), v).unwrap()
}

#[test]
fn adjoint_gradient_matches_directional_derivative() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_field(&mut rng, tiny_grid(), 2000.0, 3000.0);
        let model = random_field(&mut rng, tiny_grid(), 2200.0, 2800.0);
        let p = problem(&truth, &tiny_geometry(vec![30.0, 80.0]));
        let dir: Vec<f64> = (0..144).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, g) = misfit_and_gradient(&model, &p).unwrap();
        let analytic: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let h = 2.0;
        let fd = (misfit(&shifted(&model, &dir, h), &p).unwrap() - misfit(&shifted(&model, &dir, -h), &p).unwrap()) / (2.0 * h);
        let rel = (analytic - fd).abs() / fd.abs();
        assert!(rel < 1e-2, "seed {seed}: adjoint {analytic} vs fd {fd} (rel {rel})");
    }
}

#[test]
fn truth_gives_zero_misfit_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth = random_field(&mut rng, tiny_grid(), 2000.0, 3000.0);
    let p = problem(&truth, &tiny_geometry(vec![30.0, 80.0]));
    let (j, g) = misfit_and_gradient(&truth, &p).unwrap();
    assert_eq!(j, 0.0);
    assert!(g.iter().all(|v| *v == 0.0));
    let state = invert(&truth, &p, &FwiConfig::default(), Some(&truth)).unwrap();
    assert_eq!(state.iteration, 0);
    assert_eq!(state.stop, StopReason::ZeroGradient);
    assert_eq!(state.model, truth);
}

#[test]
fn gradient_is_additive_over_shots_and_misfit_ignores_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = random_field(&mut rng, tiny_grid(), 2000.0, 3000.0);
    let model = VelocityField::constant(tiny_grid(), 2500.0).unwrap();
    let both = problem(&truth, &tiny_geometry(vec![30.0, 80.0]));
    let a = problem(&truth, &tiny_geometry(vec![30.0]));
    let b = problem(&truth, &tiny_geometry(vec![80.0]));
    let swapped = problem(&truth, &tiny_geometry(vec![80.0, 30.0]));
    let (jab, gab) = misfit_and_gradient(&model, &both).unwrap();
    let (ja, ga) = misfit_and_gradient(&model, &a).unwrap();
    let (jb, gb) = misfit_and_gradient(&model, &b).unwrap();
    assert!((jab - ja - jb).abs() <= 1e-12 * jab);
    for k in 0..gab.len() {
        assert!((gab[k] - ga[k] - gb[k]).abs() <= 1e-9 * gab.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    assert!((misfit(&model, &swapped).unwrap() - jab).abs() <= 1e-12 * jab);
}

#[test]
fn doubling_residuals_quadruples_misfit() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let truth = random_field(&mut rng, tiny_grid(), 2000.0, 3000.0);
    let model = VelocityField::constant(tiny_grid(), 2500.0).unwrap();
    let p = problem(&truth, &tiny_geometry(vec![50.0]));
    let (sim, _) = onetfwi_core::wave::simulate_scalar(&model, p.observed.geometry(), &p.source.at(50.0, 0.0), &p.simulation, None).unwrap();
    // observed' = sim - 2 (sim - observed)
    let doubled: Vec<f32> = sim.data().iter().zip(p.observed.data()).map(|(s, o)| s - 2.0 * (s - o)).collect();
    let p2 = FwiProblem { observed: onetfwi_core::geometry::ShotGatherSet::new(p.observed.geometry().clone(), doubled).unwrap(), ..p.clone() };
    let ratio = misfit(&model, &p2).unwrap() / misfit(&model, &p).unwrap();
    assert!((ratio - 4.0).abs() < 1e-4, "{ratio}");
}

#[test]
fn homogeneous_start_on_two_layers_descends_within_bounds() {
    let grid = Grid2D::square(30, 10.0).unwrap();
    let truth = VelocityField::new(grid, (0..grid.len()).map(|i| if i / 30 < 14 { 2500.0 } else { 3200.0 }).collect()).unwrap();
    let geo = AcquisitionGeometry::new(vec![70.0, 220.0], (0..30).map(|i| i as f64 * 10.0).collect(), 1e-3, 300).unwrap();
    let p = problem(&truth, &geo);
    let start = VelocityField::constant(grid, 3000.0).unwrap();
    let config = FwiConfig { max_iters: 6, ..FwiConfig::default() };
    let state = invert(&start, &p, &config, Some(&truth)).unwrap();
    assert!(state.iteration >= 5, "only {} accepted steps ({:?})", state.iteration, state.stop);
    for w in state.misfit_history.windows(2) {
        assert!(w[1] < w[0]);
    }
    assert!(state.model.values().iter().all(|v| (1500.0..=4500.0).contains(v)));
    let csv = trajectory_csv(&state.records);
    assert!(csv.starts_with("iter,misfit,rel_l2_vs_truth,step_size\n0,"));
    assert_eq!(csv.lines().count(), state.records.len() + 1);
}

#[test]
fn clamp_is_idempotent_on_feasible_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = random_field(&mut rng, tiny_grid(), 1500.0, 4500.0);
    assert_eq!(m.clamped(1500.0, 4500.0), m);
}
