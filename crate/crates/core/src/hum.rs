//! Null control by the Hilbert Uniqueness Method, the control cost
//! functional `J`, and the cutoff stabilizer for control regions that
//! contain the singularity.

use crate::error::{Error, Result};
use crate::evolution::{duality_residual, trapezoid, ThetaStepper, TimeGrid, Trajectory};
use crate::field::{dot, norm2, ScalarField};
use crate::grid::{norm, Coefficient, Grid, OmegaSpec, RegionMasks};
use crate::operators::{assemble_diffusion, assemble_l, assemble_potential, Cutoff, PotentialSpec};
use crate::solver::{conjugate_gradient, CgError, CgSettings};
use crate::sparse::Csr;

/// `Lambda yT = u(T)`, where `y` solves the adjoint problem from `yT` and
/// `u` the forward problem from zero with control `f = y 1_omega`.
#[derive(Debug, Clone)]
pub struct Gram {
    stepper: ThetaStepper,
    omega: Vec<bool>,
    cell_volume: f64,
}

impl Gram {
    pub fn new(grid: &Grid, l: &Csr, masks: &RegionMasks, time_grid: TimeGrid) -> Result<Self> {
        if l.dim() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: l.dim(),
            });
        }
        Ok(Gram {
            stepper: ThetaStepper::new(l, time_grid)?,
            omega: masks.omega.clone(),
            cell_volume: grid.cell_volume(),
        })
    }

    pub fn stepper(&self) -> &ThetaStepper {
        &self.stepper
    }

    pub fn omega(&self) -> &[bool] {
        &self.omega
    }

    /// Control generated by an adjoint trajectory.
    pub fn control_from(&self, y: &Trajectory) -> Trajectory {
        Trajectory {
            time_grid: y.time_grid,
            frames: y.frames.iter().map(|f| f.masked(&self.omega)).collect(),
        }
    }

    pub fn apply(&self, y_terminal: &ScalarField) -> Result<ScalarField> {
        let y = self.stepper.adjoint(y_terminal)?;
        let f = self.control_from(&y);
        let zero = ScalarField::zeros(y_terminal.len());
        let u = self.stepper.forward(&zero, Some(&f), &self.omega)?;
        Ok(u.terminal().clone())
    }

    /// `<Lambda yT, yT>` computed from the adjoint trajectory alone:
    /// `sum_k dt |1_omega (theta y^k + (1 - theta) y^{k+1})|^2`.
    pub fn observed_energy(&self, y: &Trajectory) -> f64 {
        let dt = self.stepper.time_grid().dt();
        (0..self.stepper.time_grid().steps)
            .map(|k| {
                let yk = self.stepper.adjoint_weighted(y, k);
                let s: f64 = yk.iter().zip(&self.omega).filter(|(_, &w)| w).map(|(v, _)| v * v).sum();
                dt * self.cell_volume * s
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumSettings {
    pub delta_pen: f64,
    pub cg_tol: f64,
    pub max_iter: usize,
    /// Run even when `mu` is outside the controllability range; the result
    /// is then flagged.
    pub allow_out_of_range: bool,
}

impl Default for HumSettings {
    fn default() -> Self {
        HumSettings {
            delta_pen: 1e-6,
            cg_tol: 1e-8,
            max_iter: 2000,
            allow_out_of_range: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumResult {
    pub y_terminal: ScalarField,
    pub control: Trajectory,
    pub state: Trajectory,
    pub u0_norm: f64,
    pub terminal_norm: f64,
    /// `|f|_{L^2(omega x (0, T))}`.
    pub cost: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub delta_pen: f64,
    pub j_value: f64,
    pub duality_residual: f64,
    /// Largest `|f|` at nodes outside `omega` (zero by construction).
    pub support_leak: f64,
    pub in_range: bool,
}

/// Checks `0 <= mu < (p1^2 / p2) mu*`.
pub fn check_controllable_mu(coeff: &Coefficient, mu: f64) -> Result<()> {
    let limit = coeff.controllability_limit();
    if mu >= 0.0 && mu < limit {
        Ok(())
    } else {
        Err(Error::MuOutOfRange {
            mu,
            reason: format!("null controllability requires 0 <= mu < p1^2/p2 mu* = {limit}"),
        })
    }
}

/// Everything that defines a null-control problem except the initial state.
#[derive(Debug, Clone, Copy)]
pub struct ControlProblem<'a> {
    pub grid: &'a Grid,
    pub l: &'a Csr,
    pub masks: &'a RegionMasks,
    pub time_grid: TimeGrid,
    pub coeff: &'a Coefficient,
    pub mu: f64,
}

/// Penalized HUM: solves `(Lambda + delta I) yT = -u_free(T)` by conjugate
/// gradient in the plain `L^2` inner product and returns the control
/// `f = y 1_omega` with the controlled trajectory.
pub fn synthesize_control(problem: &ControlProblem, u0: &ScalarField, settings: HumSettings) -> Result<HumResult> {
    let ControlProblem {
        grid,
        l,
        masks,
        time_grid,
        coeff,
        mu,
    } = *problem;
    let in_range = check_controllable_mu(coeff, mu).is_ok();
    if !in_range && !settings.allow_out_of_range {
        check_controllable_mu(coeff, mu)?;
    }
    if !(settings.delta_pen >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta_pen = {} must be >= 0", settings.delta_pen)));
    }
    let gram = Gram::new(grid, l, masks, time_grid)?;
    let n = grid.len();
    if u0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: u0.len() });
    }
    let free = gram.stepper.forward(u0, None, &gram.omega)?;
    let rhs: Vec<f64> = free.terminal().values().iter().map(|v| -v).collect();

    let mut y_terminal = vec![0.0; n];
    let mut cg = CgSettings::new(settings.cg_tol, settings.max_iter);
    cg.stall_window = Some(200);
    let delta = settings.delta_pen;
    let report = conjugate_gradient(
        |v, out| {
            let lv = gram.apply(&ScalarField::new(v.to_vec()))?;
            for ((o, a), b) in out.iter_mut().zip(lv.values()).zip(v) {
                *o = a + delta * b;
            }
            Ok(())
        },
        None,
        &rhs,
        &mut y_terminal,
        cg,
    );
    let (iterations, residual) = match report {
        Ok(r) => (r.iterations, r.relative_residual),
        Err(CgError::Apply(e)) => return Err(e),
        Err(CgError::Stalled {
            iterations,
            relative_residual,
        })
        | Err(CgError::MaxIterations {
            iterations,
            relative_residual,
        }) => {
            return Err(Error::CgStall {
                iterations,
                residual: relative_residual,
            })
        }
        Err(CgError::Indefinite { iteration, curvature }) => {
            return Err(Error::CgStall {
                iterations: iteration,
                residual: curvature,
            })
        }
    };

    let y_terminal = ScalarField::new(y_terminal);
    let y = gram.stepper.adjoint(&y_terminal)?;
    let control = gram.control_from(&y);
    let state = gram.stepper.forward(u0, Some(&control), &gram.omega)?;
    let duality = duality_residual(grid, &gram.stepper, &state, Some(&control), &y);
    let support_leak = control
        .frames
        .iter()
        .flat_map(|f| f.values().iter().zip(&gram.omega).filter(|(_, &w)| !w).map(|(v, _)| v.abs()))
        .fold(0.0, f64::max);
    Ok(HumResult {
        u0_norm: grid.l2_norm(u0),
        terminal_norm: grid.l2_norm(state.terminal()),
        cost: control.space_time_sq(grid, None).sqrt(),
        cg_iterations: iterations,
        cg_residual: residual,
        delta_pen: delta,
        j_value: evaluate_j(grid, &state, &control, ControlNorm::L2)?,
        duality_residual: duality,
        support_leak,
        in_range,
        y_terminal,
        control,
        state,
    })
}

/// Norm used for the control in `J`.
#[derive(Debug, Clone, Copy)]
pub enum ControlNorm<'a> {
    L2,
    /// `|f|_{H^{-1}}^2 = <A^{-1} f, f>` with `A` the Dirichlet Laplacian.
    HMinusOne(&'a Csr),
}

/// `J = 1/2 int |u|^2 dx dt + 1/2 int |f(t)|^2 dt` with trapezoidal time
/// quadrature and the nodal rule in space.
pub fn evaluate_j(grid: &Grid, u: &Trajectory, f: &Trajectory, control_norm: ControlNorm) -> Result<f64> {
    if u.frames.len() != f.frames.len() || u.dim() != f.dim() || u.dim() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: u.frames.len() * grid.len(),
            got: f.frames.len() * f.dim(),
        });
    }
    let dt = u.time_grid.dt();
    let state = 0.5 * u.space_time_sq(grid, None);
    let control = match control_norm {
        ControlNorm::L2 => 0.5 * f.space_time_sq(grid, None),
        ControlNorm::HMinusOne(a) => {
            let inv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
            let mut vals = Vec::with_capacity(f.frames.len());
            for frame in &f.frames {
                let mut x = vec![0.0; grid.len()];
                conjugate_gradient(
                    |v, out| {
                        a.apply(v, out);
                        Ok(())
                    },
                    Some(&inv),
                    frame.values(),
                    &mut x,
                    CgSettings::new(1e-12, 20 * grid.len()),
                )
                .map_err(|e| Error::InnerSolveDivergence {
                    step: vals.len(),
                    detail: e.to_string(),
                })?;
                vals.push(grid.cell_volume() * dot(&x, frame.values()));
            }
            0.5 * trapezoid(&vals, dt)
        }
    };
    Ok(state + control)
}

/// Smooth cutoff for the stabilizer: plateau radius chosen so the support
/// stays `2h` inside a ball control region around the origin.
pub fn stabilizer_cutoff(spec: &OmegaSpec, h: f64) -> Result<Cutoff> {
    match *spec {
        OmegaSpec::Ball { center, radius } => {
            let reach = radius - norm(&center) - 2.0 * h;
            if reach <= 0.0 {
                Err(Error::OriginOutsideOmega)
            } else {
                Ok(Cutoff { radius: reach })
            }
        }
        OmegaSpec::Annulus { .. } => Err(Error::OriginOutsideOmega),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizerResult {
    pub state: Trajectory,
    pub control: Trajectory,
    pub j_value: f64,
    pub cutoff: Cutoff,
    /// Largest relative residual of the full singular scheme, over steps.
    pub max_residual: f64,
    pub support_leak: f64,
    pub max_norm: f64,
    pub u0_norm: f64,
}

/// Moves the singular term near the origin into the control: solves the
/// system with potential `(1 - chi) mu / |x|^2` and returns
/// `f = -chi mu u / |x|^2`, which makes `(u, f)` a solution of the full
/// singular system with control supported in `omega`.
pub fn cutoff_stabilizer(
    grid: &Grid,
    coeff: &Coefficient,
    mu: f64,
    omega_spec: OmegaSpec,
    u0: &ScalarField,
    time_grid: TimeGrid,
) -> Result<StabilizerResult> {
    let masks = RegionMasks::around_origin(grid, omega_spec)?;
    let cutoff = stabilizer_cutoff(&omega_spec, grid.h())?;
    let diffusion = assemble_diffusion(grid, coeff)?;
    let modified = assemble_l(&diffusion, &assemble_potential(grid, &PotentialSpec::with_cutoff(mu, cutoff))?)?;
    let full = assemble_l(&diffusion, &assemble_potential(grid, &PotentialSpec::exact(mu))?)?;

    let stepper = ThetaStepper::new(&modified, time_grid)?;
    let state = stepper.forward(u0, None, &masks.omega)?;

    let moved: Vec<f64> = grid
        .points()
        .iter()
        .map(|x| cutoff.eval(x) * PotentialSpec::exact(mu).singular_part(x))
        .collect();
    let source_of = |u: &ScalarField| -> ScalarField {
        ScalarField::new(u.values().iter().zip(&moved).map(|(v, w)| -w * v).collect())
    };
    // pick the nodal control whose collocation reproduces the moved term
    let steps = time_grid.steps;
    let frames: Vec<ScalarField> = if time_grid.theta == 0.5 {
        state.frames.iter().map(source_of).collect()
    } else {
        (0..=steps).map(|k| source_of(&state.frames[(k + 1).min(steps)])).collect()
    };
    let control = Trajectory::from_frames(time_grid, frames)?;

    let full_stepper = ThetaStepper::new(&full, time_grid)?;
    let dt = time_grid.dt();
    let mut max_residual: f64 = 0.0;
    for k in 0..steps {
        let lhs = full_stepper.implicit_matrix().mul(state.frames[k + 1].values());
        let rhs = full_stepper.explicit_matrix().mul(state.frames[k].values());
        let fk = full_stepper.collocate(&control, k);
        let res: Vec<f64> = lhs.iter().zip(&rhs).zip(&fk).map(|((a, b), f)| a - b - dt * f).collect();
        let scale = norm2(&lhs).max(norm2(&rhs)).max(f64::MIN_POSITIVE);
        max_residual = max_residual.max(norm2(&res) / scale);
    }
    let support_leak = control
        .frames
        .iter()
        .flat_map(|f| f.values().iter().zip(&masks.omega).filter(|(_, &w)| !w).map(|(v, _)| v.abs()))
        .fold(0.0, f64::max);
    let max_norm = state.l2_norms(grid).into_iter().fold(0.0, f64::max);
    Ok(StabilizerResult {
        j_value: evaluate_j(grid, &state, &control, ControlNorm::L2)?,
        u0_norm: grid.l2_norm(u0),
        state,
        control,
        cutoff,
        max_residual,
        support_leak,
        max_norm,
    })
}
