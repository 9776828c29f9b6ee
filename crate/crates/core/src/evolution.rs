//! Implicit theta-scheme time stepping for `u_t + L u = f 1_omega` and the
//! backward adjoint problem, built so that forward and adjoint steps are
//! exact discrete transposes of each other.
//!
//! One forward step reads
//!
//! ```text
//! (I + theta dt L) u^{k+1} = (I - (1 - theta) dt L) u^k + dt F^k,
//! F^k = theta f^k + (1 - theta) f^{k+1}.
//! ```
//!
//! With this source weighting `P^{-1} y^{k+1} = theta y^k + (1 - theta) y^{k+1}`
//! for any adjoint trajectory `y`, which gives the discrete duality identity
//! exactly and makes the HUM Gram operator symmetric for both admissible
//! `theta`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{dot, ScalarField};
use crate::grid::Grid;
use crate::report::{fmt_f64, Table};
use crate::solver::{conjugate_gradient, CgError, CgSettings};
use crate::sparse::Csr;

/// Relative residual of each inner step solve.
pub const INNER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
    pub theta: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize, theta: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon T = {horizon} must be positive")));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("at least one time step is required".into()));
        }
        if theta != 0.5 && theta != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "theta = {theta}; only 0.5 (trapezoidal) and 1 (backward Euler) are supported"
            )));
        }
        Ok(TimeGrid { horizon, steps, theta })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        // exact at both ends
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        TimeGrid::new(horizon, self.steps, self.theta)
    }
}

/// Nodal values at every time level `t_0 = 0, ..., t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub time_grid: TimeGrid,
    pub frames: Vec<ScalarField>,
}

impl Trajectory {
    pub fn zeros(time_grid: TimeGrid, len: usize) -> Self {
        Trajectory {
            time_grid,
            frames: vec![ScalarField::zeros(len); time_grid.steps + 1],
        }
    }

    pub fn from_frames(time_grid: TimeGrid, frames: Vec<ScalarField>) -> Result<Self> {
        if frames.len() != time_grid.steps + 1 {
            return Err(Error::DimensionMismatch {
                expected: time_grid.steps + 1,
                got: frames.len(),
            });
        }
        let n = frames[0].len();
        if let Some(bad) = frames.iter().find(|f| f.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.len(),
            });
        }
        Ok(Trajectory { time_grid, frames })
    }

    pub fn dim(&self) -> usize {
        self.frames[0].len()
    }

    pub fn initial(&self) -> &ScalarField {
        &self.frames[0]
    }

    pub fn terminal(&self) -> &ScalarField {
        self.frames.last().expect("trajectory has at least one frame")
    }

    pub fn reversed(&self) -> Trajectory {
        let mut frames = self.frames.clone();
        frames.reverse();
        Trajectory {
            time_grid: self.time_grid,
            frames,
        }
    }

    pub fn scaled(&self, a: f64) -> Trajectory {
        Trajectory {
            time_grid: self.time_grid,
            frames: self.frames.iter().map(|f| f.scaled(a)).collect(),
        }
    }

    pub fn l2_norms(&self, grid: &Grid) -> Vec<f64> {
        self.frames.iter().map(|f| grid.l2_norm(f)).collect()
    }

    /// `int_0^T |u(t)|^2_{L^2(mask)} dt` by the trapezoidal rule.
    pub fn space_time_sq(&self, grid: &Grid, mask: Option<&[bool]>) -> f64 {
        let vals: Vec<f64> = self
            .frames
            .iter()
            .map(|f| match mask {
                Some(m) => grid.l2_norm_on(f, m).powi(2),
                None => grid.l2_norm(f).powi(2),
            })
            .collect();
        trapezoid(&vals, self.time_grid.dt())
    }

    /// Norm time series with columns `step, time, l2_norm, h1_norm`.
    pub fn norms_table(&self, grid: &Grid) -> Table {
        let mut t = Table::new(&["step", "time", "l2_norm", "h1_norm"]);
        for (k, f) in self.frames.iter().enumerate() {
            t.push(vec![
                k.to_string(),
                fmt_f64(self.time_grid.time(k)),
                fmt_f64(grid.l2_norm(f)),
                fmt_f64(grid.h1_norm(f)),
            ]);
        }
        t
    }

    pub fn write_norms_csv(&self, grid: &Grid, path: &Path) -> Result<()> {
        self.norms_table(grid).write_path(path)
    }
}

pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (0.5 * values[0] + values[1..n - 1].iter().sum::<f64>() + 0.5 * values[n - 1]),
    }
}

/// The two step matrices of the theta-scheme for a fixed operator and
/// time grid, plus the inner solver settings.
#[derive(Debug, Clone)]
pub struct ThetaStepper {
    time_grid: TimeGrid,
    implicit: Csr,
    explicit: Csr,
    inv_diag: Vec<f64>,
    settings: CgSettings,
}

impl ThetaStepper {
    pub fn new(l: &Csr, time_grid: TimeGrid) -> Result<Self> {
        let n = l.dim();
        let dt = time_grid.dt();
        let theta = time_grid.theta;
        let id = Csr::identity(n);
        let implicit = id.combine(1.0, l, theta * dt)?;
        let explicit = id.combine(1.0, l, -(1.0 - theta) * dt)?;
        let inv_diag = implicit
            .diagonal()
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        let cap = (10.0 * (n as f64).sqrt()).ceil() as usize;
        let mut settings = CgSettings::new(INNER_TOL, cap.max(50));
        settings.stall_window = Some(cap.max(50));
        Ok(ThetaStepper {
            time_grid,
            implicit,
            explicit,
            inv_diag,
            settings,
        })
    }

    pub fn time_grid(&self) -> TimeGrid {
        self.time_grid
    }

    pub fn dim(&self) -> usize {
        self.implicit.dim()
    }

    /// `(I + theta dt L)`.
    pub fn implicit_matrix(&self) -> &Csr {
        &self.implicit
    }

    /// `(I - (1 - theta) dt L)`.
    pub fn explicit_matrix(&self) -> &Csr {
        &self.explicit
    }

    /// Solves `(I + theta dt L) x = b`, warm-started from `x`.
    pub fn solve_implicit(&self, b: &[f64], x: &mut [f64], step: usize) -> Result<()> {
        let a = &self.implicit;
        let outcome = conjugate_gradient(
            |v, out| {
                a.apply(v, out);
                Ok(())
            },
            Some(&self.inv_diag),
            b,
            x,
            self.settings,
        );
        match outcome {
            Ok(_) => Ok(()),
            Err(CgError::Apply(e)) => Err(e),
            Err(e) => Err(Error::InnerSolveDivergence {
                step,
                detail: e.to_string(),
            }),
        }
    }

    /// Advances `u^k` to `u^{k+1}` with the collocated source `F^k`.
    pub fn step(&self, u: &[f64], forcing: Option<&[f64]>, step: usize) -> Result<Vec<f64>> {
        let mut rhs = self.explicit.mul(u);
        if let Some(f) = forcing {
            let dt = self.time_grid.dt();
            rhs.iter_mut().zip(f).for_each(|(r, fi)| *r += dt * fi);
        }
        let mut next = u.to_vec();
        self.solve_implicit(&rhs, &mut next, step)?;
        Ok(next)
    }

    /// Time-collocated source of step `k`: `theta f^k + (1 - theta) f^{k+1}`.
    pub fn collocate(&self, source: &Trajectory, k: usize) -> Vec<f64> {
        let th = self.time_grid.theta;
        source.frames[k]
            .values()
            .iter()
            .zip(source.frames[k + 1].values())
            .map(|(a, b)| th * a + (1.0 - th) * b)
            .collect()
    }

    /// Forward solve from `u0`. A source must vanish outside `omega` at every
    /// time level.
    pub fn forward(&self, u0: &ScalarField, source: Option<&Trajectory>, omega: &[bool]) -> Result<Trajectory> {
        let n = self.dim();
        check_len(n, u0.len())?;
        check_len(n, omega.len())?;
        if let Some(src) = source {
            check_source(src, omega, self.time_grid)?;
        }
        let mut frames = Vec::with_capacity(self.time_grid.steps + 1);
        frames.push(u0.clone());
        for k in 0..self.time_grid.steps {
            let forcing = source.map(|s| self.collocate(s, k));
            let next = self.step(frames[k].values(), forcing.as_deref(), k)?;
            frames.push(ScalarField::new(next));
        }
        Ok(Trajectory {
            time_grid: self.time_grid,
            frames,
        })
    }

    /// Backward solve of `-y_t + L y = 0`, `y(T) = yT`. By `t -> T - t` this
    /// is a forward solve with the same (symmetric) operator, stored in
    /// physical time order.
    pub fn adjoint(&self, y_terminal: &ScalarField) -> Result<Trajectory> {
        let n = self.dim();
        check_len(n, y_terminal.len())?;
        let mut frames = Vec::with_capacity(self.time_grid.steps + 1);
        frames.push(y_terminal.clone());
        for k in 0..self.time_grid.steps {
            let next = self.step(frames[k].values(), None, k)?;
            frames.push(ScalarField::new(next));
        }
        frames.reverse();
        Ok(Trajectory {
            time_grid: self.time_grid,
            frames,
        })
    }

    /// Adjoint frames combined as `theta y^k + (1 - theta) y^{k+1}`, the
    /// quantity paired with `F^k` in the duality identity.
    pub fn adjoint_weighted(&self, y: &Trajectory, k: usize) -> Vec<f64> {
        self.collocate(y, k)
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

fn check_source(src: &Trajectory, omega: &[bool], tg: TimeGrid) -> Result<()> {
    if src.frames.len() != tg.steps + 1 {
        return Err(Error::DimensionMismatch {
            expected: tg.steps + 1,
            got: src.frames.len(),
        });
    }
    for (k, f) in src.frames.iter().enumerate() {
        check_len(omega.len(), f.len())?;
        if let Some(node) = f.values().iter().zip(omega).position(|(v, &w)| !w && *v != 0.0) {
            return Err(Error::SourceOutsideOmega { step: k, node });
        }
    }
    Ok(())
}

pub fn solve_forward(
    l: &Csr,
    u0: &ScalarField,
    source: Option<&Trajectory>,
    omega: &[bool],
    time_grid: TimeGrid,
) -> Result<Trajectory> {
    ThetaStepper::new(l, time_grid)?.forward(u0, source, omega)
}

pub fn solve_adjoint(l: &Csr, y_terminal: &ScalarField, time_grid: TimeGrid) -> Result<Trajectory> {
    ThetaStepper::new(l, time_grid)?.adjoint(y_terminal)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityReport {
    /// `min_k (|y^{k+1}| - |y^k|)`; nonnegative for a monotone trajectory.
    pub min_increment: f64,
    /// Largest decrease relative to the largest norm (0 when monotone).
    pub max_violation: f64,
    pub worst_step: Option<usize>,
}

impl MonotonicityReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}

/// Checks that `|y(t_k)|_{L^2}` does not decrease with `k` along an adjoint
/// trajectory.
pub fn check_monotonicity(grid: &Grid, traj: &Trajectory) -> MonotonicityReport {
    let norms = traj.l2_norms(grid);
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let mut min_increment = f64::INFINITY;
    let mut worst_step = None;
    for k in 0..norms.len().saturating_sub(1) {
        let inc = norms[k + 1] - norms[k];
        if inc < min_increment {
            min_increment = inc;
            worst_step = Some(k);
        }
    }
    if !min_increment.is_finite() {
        min_increment = 0.0;
    }
    let max_violation = if scale > 0.0 { (-min_increment).max(0.0) / scale } else { 0.0 };
    MonotonicityReport {
        min_increment,
        max_violation,
        worst_step: if max_violation > 0.0 { worst_step } else { None },
    }
}

/// Relative defect of
/// `<u(T), y(T)> - <u(0), y(0)> = sum_k dt <F^k, theta y^k + (1 - theta) y^{k+1}>`
/// for a forward trajectory `u` with source `f` and an adjoint trajectory `y`.
pub fn duality_residual(
    grid: &Grid,
    stepper: &ThetaStepper,
    u: &Trajectory,
    source: Option<&Trajectory>,
    y: &Trajectory,
) -> f64 {
    let h3 = grid.cell_volume();
    let lhs = h3 * (dot(u.terminal().values(), y.terminal().values()) - dot(u.initial().values(), y.initial().values()));
    let dt = stepper.time_grid().dt();
    let mut rhs = 0.0;
    let mut scale = 0.0;
    if let Some(f) = source {
        for k in 0..stepper.time_grid().steps {
            let fk = stepper.collocate(f, k);
            let yk = stepper.adjoint_weighted(y, k);
            rhs += dt * h3 * dot(&fk, &yk);
            scale += dt * h3 * dot(&fk, &fk).sqrt() * dot(&yk, &yk).sqrt();
        }
    }
    let h3n = |a: &ScalarField| (h3 * dot(a.values(), a.values())).sqrt();
    scale += h3n(u.terminal()) * h3n(y.terminal()) + h3n(u.initial()) * h3n(y.initial());
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Coefficient, CoefficientSpec, DomainShape, OmegaSpec, RegionMasks};
    use crate::operators::{assemble_diffusion, assemble_l, assemble_potential, PotentialSpec};
    use crate::rng::SeededRng;
    use crate::spectral::grid_eigenpair;

    fn setup(m: usize, mu: f64) -> (Grid, Csr) {
        let g = Grid::build(1.0, m, DomainShape::Ball).unwrap();
        let c = Coefficient::build(&g, CoefficientSpec::Constant(1.0)).unwrap();
        let a = assemble_diffusion(&g, &c).unwrap();
        let v = assemble_potential(&g, &PotentialSpec::exact(mu)).unwrap();
        (g.clone(), assemble_l(&a, &v).unwrap())
    }

    #[test]
    fn time_grid_validation() {
        assert!(TimeGrid::new(1.0, 10, 0.5).is_ok());
        assert!(TimeGrid::new(1.0, 10, 0.7).is_err());
        assert!(TimeGrid::new(0.0, 10, 1.0).is_err());
        assert!(TimeGrid::new(1.0, 0, 1.0).is_err());
        let tg = TimeGrid::new(1.0, 3, 1.0).unwrap();
        assert_eq!(tg.time(3), 1.0);
    }

    #[test]
    fn zero_data_zero_trajectory() {
        let (g, l) = setup(8, 0.1);
        let tg = TimeGrid::new(0.5, 5, 0.5).unwrap();
        let omega = vec![true; g.len()];
        let u = solve_forward(&l, &ScalarField::zeros(g.len()), None, &omega, tg).unwrap();
        assert!(u.frames.iter().all(|f| f.is_zero()));
        let y = solve_adjoint(&l, &ScalarField::zeros(g.len()), tg).unwrap();
        assert!(y.frames.iter().all(|f| f.is_zero()));
    }

    #[test]
    fn source_outside_omega_rejected() {
        let (g, l) = setup(12, 0.0);
        let masks = RegionMasks::build(&g, OmegaSpec::default_ball(), 0.1).unwrap();
        let tg = TimeGrid::new(0.1, 2, 0.5).unwrap();
        let mut src = Trajectory::zeros(tg, g.len());
        let outside = masks.omega.iter().position(|&w| !w).unwrap();
        src.frames[1][outside] = 1.0;
        let err = solve_forward(&l, &ScalarField::zeros(g.len()), Some(&src), &masks.omega, tg).unwrap_err();
        assert_eq!(err, Error::SourceOutsideOmega { step: 1, node: outside });
    }

    #[test]
    fn eigenmode_decay() {
        let (g, l) = setup(12, 0.0);
        let eig = grid_eigenpair(&g, &l).unwrap();
        let tg = TimeGrid::new(0.2, 40, 0.5).unwrap();
        let u = solve_forward(&l, &eig.phi0, None, &vec![true; g.len()], tg).unwrap();
        let got = g.l2_norm(u.terminal());
        let z = 0.5 * eig.lambda0 * tg.dt();
        let discrete = ((1.0 - z) / (1.0 + z)).powi(40);
        assert!((got / discrete - 1.0).abs() < 1e-7, "{got} vs {discrete}");
        let continuum = (-eig.lambda0 * 0.2).exp();
        assert!((got / continuum - 1.0).abs() < 1e-3);
    }

    #[test]
    fn adjoint_is_reversed_forward() {
        let (g, l) = setup(8, 0.1);
        let tg = TimeGrid::new(0.3, 6, 1.0).unwrap();
        let v = SeededRng::new(1).smooth_field(&g, 3);
        let fwd = solve_forward(&l, &v, None, &vec![true; g.len()], tg).unwrap();
        let adj = solve_adjoint(&l, &v, tg).unwrap();
        assert_eq!(adj.reversed(), fwd);
    }

    #[test]
    fn duality_identity_both_thetas() {
        let (g, l) = setup(12, 0.1);
        let masks = RegionMasks::build(&g, OmegaSpec::default_annulus(), 0.2).unwrap();
        let mut rng = SeededRng::new(11);
        for theta in [0.5, 1.0] {
            let tg = TimeGrid::new(0.2, 10, theta).unwrap();
            let st = ThetaStepper::new(&l, tg).unwrap();
            let u0 = rng.smooth_field(&g, 3);
            let frames = (0..=tg.steps).map(|_| rng.noise(g.len()).masked(&masks.omega)).collect();
            let f = Trajectory::from_frames(tg, frames).unwrap();
            let u = st.forward(&u0, Some(&f), &masks.omega).unwrap();
            let y = st.adjoint(&rng.smooth_field(&g, 3)).unwrap();
            let r = duality_residual(&g, &st, &u, Some(&f), &y);
            assert!(r < 1e-9, "theta {theta}: {r}");
        }
    }

    #[test]
    fn adjoint_norm_monotone() {
        let (g, l) = setup(12, 0.2);
        let tg = TimeGrid::new(0.5, 20, 0.5).unwrap();
        let y = solve_adjoint(&l, &SeededRng::new(5).noise(g.len()), tg).unwrap();
        let rep = check_monotonicity(&g, &y);
        assert!(rep.min_increment > 0.0);
        assert!(rep.passes(1e-10));
        let zero = Trajectory::zeros(tg, g.len());
        assert_eq!(check_monotonicity(&g, &zero).max_violation, 0.0);
    }

    #[test]
    fn detects_decrease() {
        let g = Grid::build(1.0, 8, DomainShape::Box).unwrap();
        let tg = TimeGrid::new(1.0, 2, 1.0).unwrap();
        let one = ScalarField::new(vec![1.0; g.len()]);
        let t = Trajectory::from_frames(tg, vec![one.clone(), one.scaled(0.5), one.clone()]).unwrap();
        let rep = check_monotonicity(&g, &t);
        assert_eq!(rep.worst_step, Some(0));
        assert!((rep.max_violation - 0.5).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_rule() {
        assert_eq!(trapezoid(&[1.0, 1.0, 1.0], 0.5), 1.0);
        assert_eq!(trapezoid(&[2.0], 0.5), 0.0);
    }

    #[test]
    fn norms_csv_columns() {
        let g = Grid::build(1.0, 8, DomainShape::Box).unwrap();
        let tg = TimeGrid::new(1.0, 1, 1.0).unwrap();
        let t = Trajectory::zeros(tg, g.len());
        let s = t.norms_table(&g).to_string_lossy();
        assert!(s.starts_with("step,time,l2_norm,h1_norm\n0,"));
        assert_eq!(s.lines().count(), 3);
    }
}
