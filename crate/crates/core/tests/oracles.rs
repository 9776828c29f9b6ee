//! Independent oracles: radial shooting for the Dirichlet eigenvalue,
//! convergence order of the time scheme, and the duality identity with a
//! localized source.

use singular_heat::evolution::{duality_residual, ThetaStepper};
use singular_heat::operators::{assemble_diffusion, assemble_l, assemble_potential, PotentialSpec};
use singular_heat::rng::SeededRng;
use singular_heat::spectral::{grid_eigenpair, radial_shooting_eigenvalue};
use singular_heat::{Coefficient, CoefficientSpec, DomainShape, Grid, OmegaSpec, RegionMasks, ScalarField, TimeGrid, Trajectory};

fn unit_grid(m: usize, shape: DomainShape) -> (Grid, Coefficient) {
    let g = Grid::build(1.0, m, shape).unwrap();
    let c = Coefficient::build(&g, CoefficientSpec::Constant(1.0)).unwrap();
    (g, c)
}

#[test]
fn ball_eigenvalue_matches_radial_shooting() {
    let oracle = radial_shooting_eigenvalue(0.0, 1.0).unwrap();
    assert!((oracle - std::f64::consts::PI.powi(2)).abs() < 1e-6);
    let mut errors = Vec::new();
    for m in [16, 32] {
        let (g, c) = unit_grid(m, DomainShape::Ball);
        let lambda0 = grid_eigenpair(&g, &assemble_diffusion(&g, &c).unwrap()).unwrap().lambda0;
        errors.push((lambda0 - oracle).abs() / oracle);
    }
    assert!(errors[1] < 0.02, "{errors:?}");
    assert!(errors[1] < errors[0], "{errors:?}");
}

#[test]
fn subcritical_potential_lowers_the_eigenvalue_like_the_oracle() {
    let mu = 0.1;
    let oracle = radial_shooting_eigenvalue(mu, 1.0).unwrap();
    assert!(oracle < std::f64::consts::PI.powi(2));
    let (g, c) = unit_grid(24, DomainShape::Ball);
    let l = assemble_l(
        &assemble_diffusion(&g, &c).unwrap(),
        &assemble_potential(&g, &PotentialSpec::exact(mu)).unwrap(),
    )
    .unwrap();
    let lambda0 = grid_eigenpair(&g, &l).unwrap().lambda0;
    assert!((lambda0 - oracle).abs() / oracle < 0.05, "{lambda0} vs {oracle}");
}

/// Terminal error of the scheme on a discrete eigenvector, where the exact
/// semi-discrete solution is `exp(-lambda t) phi`.
fn terminal_error(theta: f64, steps: usize) -> f64 {
    let (g, c) = unit_grid(8, DomainShape::Box);
    let a = assemble_diffusion(&g, &c).unwrap();
    let eig = grid_eigenpair(&g, &a).unwrap();
    let tg = TimeGrid::new(0.5, steps, theta).unwrap();
    let stepper = ThetaStepper::new(&a, tg).unwrap();
    let u = stepper.forward(&eig.phi0, None, &vec![true; g.len()]).unwrap();
    let exact = eig.phi0.scaled((-eig.lambda0 * 0.5).exp());
    let diff = ScalarField::new(u.terminal().values().iter().zip(exact.values()).map(|(a, b)| a - b).collect());
    g.l2_norm(&diff) / g.l2_norm(&exact)
}

#[test]
fn crank_nicolson_is_second_order_and_backward_euler_first() {
    let cn = [terminal_error(0.5, 10), terminal_error(0.5, 20)];
    let be = [terminal_error(1.0, 10), terminal_error(1.0, 20)];
    let cn_ratio = cn[0] / cn[1];
    let be_ratio = be[0] / be[1];
    assert!((cn_ratio - 4.0).abs() < 0.4, "{cn:?}");
    assert!((be_ratio - 2.0).abs() < 0.3, "{be:?}");
}

#[test]
fn duality_identity_with_localized_source() {
    let (g, c) = unit_grid(12, DomainShape::Ball);
    let l = assemble_l(
        &assemble_diffusion(&g, &c).unwrap(),
        &assemble_potential(&g, &PotentialSpec::exact(0.1)).unwrap(),
    )
    .unwrap();
    let masks = RegionMasks::build(&g, OmegaSpec::default_annulus(), 0.2).unwrap();
    let mut rng = SeededRng::new(11);
    for theta in [0.5, 1.0] {
        let tg = TimeGrid::new(0.3, 12, theta).unwrap();
        let stepper = ThetaStepper::new(&l, tg).unwrap();
        let frames: Vec<ScalarField> = (0..=tg.steps).map(|_| rng.noise(g.len()).masked(&masks.omega)).collect();
        let f = Trajectory::from_frames(tg, frames).unwrap();
        let u = stepper.forward(&rng.noise(g.len()), Some(&f), &masks.omega).unwrap();
        let y = stepper.adjoint(&rng.noise(g.len())).unwrap();
        let res = duality_residual(&g, &stepper, &u, Some(&f), &y);
        assert!(res < 1e-9, "theta = {theta}: {res}");
    }
}
