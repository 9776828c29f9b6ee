//! Run configuration: flat `key = value` text with dotted section prefixes.
//!
//! ```text
//! # comment
//! grid.L = 1.0
//! [hum]            # optional header; keys below get the `hum.` prefix
//! horizons = 0.5, 1, 2
//! ```
//!
//! Derived quantities (mu*, p1/p2/p3, admissible r, lambda_min, s0, k0) are
//! never read from the file; they are recomputed from these inputs.

use std::path::{Path, PathBuf};

use singular_heat::carleman::PsiMode;
use singular_heat::grid::{DomainShape, OmegaSpec};
use singular_heat::CoefficientSpec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}: line {line}: {message}")]
    Syntax { origin: String, line: usize, message: String },
    #[error("{origin}: line {line}: field `{key}`: {message}")]
    Field {
        origin: String,
        line: usize,
        key: String,
        message: String,
    },
    #[error("override `{text}`: {message}")]
    Override { text: String, message: String },
    #[error("{origin}: no settings found (empty configuration)")]
    Empty { origin: String },
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Shape of the control region `omega` for a subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmegaKind {
    Ball,
    Annulus,
}

/// How `r` (radius of the singular ball) is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RChoice {
    /// Largest admissible value allowed by the coefficient bounds and the
    /// geometry of `omega`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientKind {
    Constant,
    RadialBump,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSection {
    pub half_width: f64,
    pub m: usize,
    pub shape: DomainShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSection {
    pub kind: CoefficientKind,
    pub value: f64,
    pub amplitude: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSection {
    pub ball_center: [f64; 3],
    pub ball_radius: f64,
    pub annulus_inner: f64,
    pub annulus_outer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSection {
    pub horizon: f64,
    pub steps: usize,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardySection {
    pub m_list: Vec<usize>,
    pub gamma: f64,
    pub l: f64,
    pub target: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSection {
    pub m: usize,
    /// `mu = mu_factor * p2 * mu*` unless `mu` is set.
    pub mu_factor: f64,
    pub eps_list: Vec<f64>,
    pub tau: f64,
    /// Control run at `control_factor * mu*`.
    pub control_factor: f64,
    /// Extra run at `discrete_factor` times the discrete Hardy constant of
    /// the same grid; `0` disables it.
    pub discrete_factor: f64,
    pub ratio: f64,
    pub omega: OmegaKind,
    pub r: RChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveSection {
    /// Each `mu = factor * p1 * mu*` unless `mu` is set.
    pub mu_factors: Vec<f64>,
    pub samples: usize,
    pub tolerance: f64,
    pub duality_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanSection {
    pub m_list: Vec<usize>,
    /// `mu = mu_factor * (p1^2/p2) * mu*` unless `mu` is set.
    pub mu_factor: f64,
    pub psi: PsiMode,
    pub omega: OmegaKind,
    pub r: RChoice,
    pub gamma: f64,
    /// `None`: twice the validated minimum.
    pub lambda: Option<f64>,
    /// Multiples of the automatically chosen `s0`.
    pub s_factors: Vec<f64>,
    pub sigma_limit: f64,
    pub trajectories: usize,
    pub fd_samples: usize,
    pub fd_steps: Vec<f64>,
    pub fd_tolerance: f64,
    pub spread: f64,
    pub observability_trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumSection {
    /// Grid resolution; `None` uses `grid.m`.
    pub m: Option<usize>,
    pub coefficient: CoefficientKind,
    /// `mu = mu_factor * (p1^2/p2) * mu*` unless `mu` is set.
    pub mu_factor: f64,
    pub horizons: Vec<f64>,
    pub delta_pen: f64,
    pub cg_tol: f64,
    pub max_iter: usize,
    pub target: f64,
    pub gram_pairs: usize,
    pub gram_tolerance: f64,
    pub duality_tolerance: f64,
    pub omega: OmegaKind,
    pub r: RChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizeSection {
    /// `mu = mu_factor * p2 * mu*` unless `mu` is set.
    pub mu_factor: f64,
    /// Radius of the control ball centred at the origin.
    pub radius: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSection,
    pub coefficient: CoefficientSection,
    /// Absolute `mu`; overrides every per-section factor when set.
    pub mu: Option<f64>,
    pub masks: MaskSection,
    pub time: TimeSection,
    pub hardy: HardySection,
    pub spectrum: SpectrumSection,
    pub solve: SolveSection,
    pub carleman: CarlemanSection,
    pub hum: HumSection,
    pub stabilize: StabilizeSection,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Write wall times into CSV columns (breaks byte-identical reruns).
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridSection {
                half_width: 1.0,
                m: 24,
                shape: DomainShape::Ball,
            },
            coefficient: CoefficientSection {
                kind: CoefficientKind::Constant,
                value: 1.0,
                amplitude: 0.5,
                width: 0.5,
            },
            mu: None,
            masks: MaskSection {
                ball_center: [0.6, 0.0, 0.0],
                ball_radius: 0.15,
                annulus_inner: 0.55,
                annulus_outer: 0.75,
            },
            time: TimeSection {
                horizon: 1.0,
                steps: 100,
                theta: 0.5,
            },
            hardy: HardySection {
                m_list: vec![16, 24, 32],
                gamma: 1.0,
                l: 1.0,
                target: 0.25,
                tolerance: 0.15,
            },
            spectrum: SpectrumSection {
                m: 48,
                mu_factor: 1.5,
                eps_list: vec![0.2, 0.1, 0.05],
                tau: 0.3,
                control_factor: 0.8,
                discrete_factor: 3.0,
                ratio: 2.0,
                omega: OmegaKind::Ball,
                r: RChoice::Fixed(0.2),
            },
            solve: SolveSection {
                mu_factors: vec![0.0, 0.5, 0.9],
                samples: 20,
                tolerance: 1e-10,
                duality_tolerance: 1e-8,
            },
            carleman: CarlemanSection {
                m_list: vec![16, 24],
                mu_factor: 0.0,
                psi: PsiMode::Radial,
                omega: OmegaKind::Annulus,
                r: RChoice::Fixed(0.25),
                gamma: 1.0,
                lambda: None,
                s_factors: vec![1.0, 2.0, 4.0],
                sigma_limit: 600.0,
                trajectories: 5,
                fd_samples: 100,
                fd_steps: vec![1e-2, 1e-3],
                fd_tolerance: 1e-4,
                spread: 3.0,
                observability_trials: 0,
            },
            hum: HumSection {
                m: None,
                coefficient: CoefficientKind::RadialBump,
                mu_factor: 0.5,
                horizons: vec![0.5, 1.0, 2.0],
                delta_pen: 1e-6,
                cg_tol: 1e-10,
                max_iter: 2000,
                target: 1e-2,
                gram_pairs: 20,
                gram_tolerance: 1e-8,
                duality_tolerance: 1e-8,
                omega: OmegaKind::Ball,
                r: RChoice::Auto,
            },
            stabilize: StabilizeSection {
                mu_factor: 2.0,
                radius: 0.6,
                tolerance: 1e-8,
            },
            seed: 1,
            output_dir: PathBuf::from("out"),
            timing: false,
        }
    }
}

fn parse_f64(v: &str) -> Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("`{v}` is not finite"))
    }
}

fn parse_usize(v: &str) -> Result<usize, String> {
    v.parse().map_err(|_| format!("`{v}` is not a nonnegative integer"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn parse_list<T>(v: &str, item: fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    let items: Vec<T> = v.split(',').map(|s| item(s.trim())).collect::<Result<_, _>>()?;
    if items.is_empty() {
        Err("empty list".into())
    } else {
        Ok(items)
    }
}

fn parse_omega(v: &str) -> Result<OmegaKind, String> {
    match v {
        "ball" => Ok(OmegaKind::Ball),
        "annulus" => Ok(OmegaKind::Annulus),
        _ => Err(format!("`{v}` is not one of ball, annulus")),
    }
}

fn parse_r(v: &str) -> Result<RChoice, String> {
    if v == "auto" {
        Ok(RChoice::Auto)
    } else {
        parse_f64(v).map(RChoice::Fixed)
    }
}

fn parse_coefficient(v: &str) -> Result<CoefficientKind, String> {
    match v {
        "constant" => Ok(CoefficientKind::Constant),
        "radial_bump" => Ok(CoefficientKind::RadialBump),
        _ => Err(format!("`{v}` is not one of constant, radial_bump")),
    }
}

fn parse_point(v: &str) -> Result<[f64; 3], String> {
    let xs = parse_list(v, parse_f64)?;
    xs.try_into().map_err(|_| "expected three comma-separated coordinates".to_string())
}

impl RunConfig {
    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "grid.L" => self.grid.half_width = parse_f64(v)?,
            "grid.m" => self.grid.m = parse_usize(v)?,
            "grid.shape" => {
                self.grid.shape = DomainShape::parse(v).ok_or_else(|| format!("`{v}` is not one of ball, box"))?
            }
            "coefficient.kind" => self.coefficient.kind = parse_coefficient(v)?,
            "coefficient.value" => self.coefficient.value = parse_f64(v)?,
            "coefficient.amplitude" => self.coefficient.amplitude = parse_f64(v)?,
            "coefficient.width" => self.coefficient.width = parse_f64(v)?,
            "mu" => self.mu = if v == "auto" { None } else { Some(parse_f64(v)?) },
            "masks.ball_center" => self.masks.ball_center = parse_point(v)?,
            "masks.ball_radius" => self.masks.ball_radius = parse_f64(v)?,
            "masks.annulus_inner" => self.masks.annulus_inner = parse_f64(v)?,
            "masks.annulus_outer" => self.masks.annulus_outer = parse_f64(v)?,
            "time.T" => self.time.horizon = parse_f64(v)?,
            "time.N" => self.time.steps = parse_usize(v)?,
            "time.theta" => self.time.theta = parse_f64(v)?,
            "hardy.m_list" => self.hardy.m_list = parse_list(v, parse_usize)?,
            "hardy.gamma" => self.hardy.gamma = parse_f64(v)?,
            "hardy.l" => self.hardy.l = parse_f64(v)?,
            "hardy.target" => self.hardy.target = parse_f64(v)?,
            "hardy.tolerance" => self.hardy.tolerance = parse_f64(v)?,
            "spectrum.m" => self.spectrum.m = parse_usize(v)?,
            "spectrum.mu_factor" => self.spectrum.mu_factor = parse_f64(v)?,
            "spectrum.eps_list" | "epsilon" => self.spectrum.eps_list = parse_list(v, parse_f64)?,
            "spectrum.tau" => self.spectrum.tau = parse_f64(v)?,
            "spectrum.control_factor" => self.spectrum.control_factor = parse_f64(v)?,
            "spectrum.discrete_factor" => self.spectrum.discrete_factor = parse_f64(v)?,
            "spectrum.ratio" => self.spectrum.ratio = parse_f64(v)?,
            "spectrum.omega" => self.spectrum.omega = parse_omega(v)?,
            "spectrum.r" => self.spectrum.r = parse_r(v)?,
            "solve.mu_factors" => self.solve.mu_factors = parse_list(v, parse_f64)?,
            "solve.samples" => self.solve.samples = parse_usize(v)?,
            "solve.tolerance" => self.solve.tolerance = parse_f64(v)?,
            "solve.duality_tolerance" => self.solve.duality_tolerance = parse_f64(v)?,
            "carleman.m_list" => self.carleman.m_list = parse_list(v, parse_usize)?,
            "carleman.mu_factor" => self.carleman.mu_factor = parse_f64(v)?,
            "carleman.psi" => {
                self.carleman.psi = PsiMode::parse(v).ok_or_else(|| format!("`{v}` is not one of radial, blended"))?
            }
            "carleman.omega" => self.carleman.omega = parse_omega(v)?,
            "carleman.r" => self.carleman.r = parse_r(v)?,
            "carleman.gamma" => self.carleman.gamma = parse_f64(v)?,
            "carleman.lambda" => self.carleman.lambda = if v == "auto" { None } else { Some(parse_f64(v)?) },
            "carleman.s_factors" => self.carleman.s_factors = parse_list(v, parse_f64)?,
            "carleman.sigma_limit" => self.carleman.sigma_limit = parse_f64(v)?,
            "carleman.trajectories" => self.carleman.trajectories = parse_usize(v)?,
            "carleman.fd_samples" => self.carleman.fd_samples = parse_usize(v)?,
            "carleman.fd_steps" => self.carleman.fd_steps = parse_list(v, parse_f64)?,
            "carleman.fd_tolerance" => self.carleman.fd_tolerance = parse_f64(v)?,
            "carleman.spread" => self.carleman.spread = parse_f64(v)?,
            "carleman.observability_trials" => self.carleman.observability_trials = parse_usize(v)?,
            "hum.m" => self.hum.m = if v == "auto" { None } else { Some(parse_usize(v)?) },
            "hum.coefficient" => self.hum.coefficient = parse_coefficient(v)?,
            "hum.mu_factor" => self.hum.mu_factor = parse_f64(v)?,
            "hum.horizons" => self.hum.horizons = parse_list(v, parse_f64)?,
            "hum.delta_pen" => self.hum.delta_pen = parse_f64(v)?,
            "hum.cg_tol" => self.hum.cg_tol = parse_f64(v)?,
            "hum.max_iter" => self.hum.max_iter = parse_usize(v)?,
            "hum.target" => self.hum.target = parse_f64(v)?,
            "hum.gram_pairs" => self.hum.gram_pairs = parse_usize(v)?,
            "hum.gram_tolerance" => self.hum.gram_tolerance = parse_f64(v)?,
            "hum.duality_tolerance" => self.hum.duality_tolerance = parse_f64(v)?,
            "hum.omega" => self.hum.omega = parse_omega(v)?,
            "hum.r" => self.hum.r = parse_r(v)?,
            "stabilize.mu_factor" => self.stabilize.mu_factor = parse_f64(v)?,
            "stabilize.radius" => self.stabilize.radius = parse_f64(v)?,
            "stabilize.tolerance" => self.stabilize.tolerance = parse_f64(v)?,
            "seed" => self.seed = v.parse().map_err(|_| format!("`{v}` is not an unsigned 64-bit integer"))?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "timing" => self.timing = parse_bool(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Parses configuration text; `origin` names the source in diagnostics.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let mut settings = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    origin: origin.into(),
                    line,
                    message: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                origin: origin.into(),
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    origin: origin.into(),
                    line,
                    message: "missing key".into(),
                });
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            cfg.set(&full, value).map_err(|message| ConfigError::Field {
                origin: origin.into(),
                line,
                key: full.clone(),
                message,
            })?;
            settings += 1;
        }
        if settings == 0 {
            return Err(ConfigError::Empty { origin: origin.into() });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies a `key=value` override given on the command line.
    pub fn apply_override(&mut self, text: &str) -> Result<(), ConfigError> {
        let (key, value) = text.split_once('=').ok_or_else(|| ConfigError::Override {
            text: text.into(),
            message: "expected key=value".into(),
        })?;
        self.set(key.trim(), value).map_err(|message| ConfigError::Override {
            text: text.into(),
            message,
        })?;
        self.validate()
    }

    /// Cross-field checks that do not need a grid.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.grid.half_width > 0.0) {
            return bad(format!("grid.L = {} must be positive", self.grid.half_width));
        }
        let all_m = self
            .hardy
            .m_list
            .iter()
            .chain(&self.carleman.m_list)
            .chain([&self.grid.m, &self.spectrum.m])
            .chain(self.hum.m.as_ref());
        for &m in all_m {
            if m < 8 || m % 2 != 0 {
                return bad(format!("grid resolution m = {m} must be even and >= 8"));
            }
        }
        if !(self.time.horizon > 0.0) || self.time.steps == 0 {
            return bad("time.T must be positive and time.N at least 1".into());
        }
        if self.time.theta != 0.5 && self.time.theta != 1.0 {
            return bad(format!("time.theta = {} must be 0.5 or 1", self.time.theta));
        }
        if self.hum.horizons.iter().any(|t| !(*t > 0.0)) {
            return bad("hum.horizons must be positive".into());
        }
        if self.spectrum.eps_list.iter().any(|e| !(*e > 0.0)) {
            return bad("spectrum.eps_list must be positive".into());
        }
        if self.carleman.s_factors.iter().any(|s| !(*s > 0.0)) || self.carleman.fd_steps.iter().any(|s| !(*s > 0.0)) {
            return bad("carleman.s_factors and carleman.fd_steps must be positive".into());
        }
        if matches!(self.mu, Some(mu) if mu < 0.0) {
            return bad("mu must be nonnegative".into());
        }
        if !(self.stabilize.radius > 0.0) {
            return bad("stabilize.radius must be positive".into());
        }
        Ok(())
    }

    pub fn coefficient_spec(&self, kind: CoefficientKind) -> CoefficientSpec {
        match kind {
            CoefficientKind::Constant => CoefficientSpec::Constant(self.coefficient.value),
            CoefficientKind::RadialBump => CoefficientSpec::RadialBump {
                amplitude: self.coefficient.amplitude,
                width: self.coefficient.width,
            },
        }
    }

    pub fn omega_spec(&self, kind: OmegaKind) -> OmegaSpec {
        match kind {
            OmegaKind::Ball => OmegaSpec::Ball {
                center: self.masks.ball_center,
                radius: self.masks.ball_radius,
            },
            OmegaKind::Annulus => OmegaSpec::Annulus {
                inner: self.masks.annulus_inner,
                outer: self.masks.annulus_outer,
            },
        }
    }

    /// Every setting as `key = value` lines, in a fixed order, for reports.
    pub fn render(&self) -> String {
        let list = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let ulist = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_else(|| "auto".into());
        let r = |x: RChoice| match x {
            RChoice::Auto => "auto".to_string(),
            RChoice::Fixed(v) => v.to_string(),
        };
        let om = |k: OmegaKind| if k == OmegaKind::Ball { "ball" } else { "annulus" };
        let co = |k: CoefficientKind| if k == CoefficientKind::Constant { "constant" } else { "radial_bump" };
        let c = &self.masks.ball_center;
        let lines = [
            format!("grid.L = {}", self.grid.half_width),
            format!("grid.m = {}", self.grid.m),
            format!("grid.shape = {}", self.grid.shape.name()),
            format!("coefficient.kind = {}", co(self.coefficient.kind)),
            format!("coefficient.value = {}", self.coefficient.value),
            format!("coefficient.amplitude = {}", self.coefficient.amplitude),
            format!("coefficient.width = {}", self.coefficient.width),
            format!("mu = {}", opt(self.mu)),
            format!("masks.ball_center = {}, {}, {}", c[0], c[1], c[2]),
            format!("masks.ball_radius = {}", self.masks.ball_radius),
            format!("masks.annulus_inner = {}", self.masks.annulus_inner),
            format!("masks.annulus_outer = {}", self.masks.annulus_outer),
            format!("time.T = {}", self.time.horizon),
            format!("time.N = {}", self.time.steps),
            format!("time.theta = {}", self.time.theta),
            format!("hardy.m_list = {}", ulist(&self.hardy.m_list)),
            format!("hardy.gamma = {}", self.hardy.gamma),
            format!("hardy.l = {}", self.hardy.l),
            format!("hardy.target = {}", self.hardy.target),
            format!("hardy.tolerance = {}", self.hardy.tolerance),
            format!("spectrum.m = {}", self.spectrum.m),
            format!("spectrum.mu_factor = {}", self.spectrum.mu_factor),
            format!("spectrum.eps_list = {}", list(&self.spectrum.eps_list)),
            format!("spectrum.tau = {}", self.spectrum.tau),
            format!("spectrum.control_factor = {}", self.spectrum.control_factor),
            format!("spectrum.discrete_factor = {}", self.spectrum.discrete_factor),
            format!("spectrum.ratio = {}", self.spectrum.ratio),
            format!("spectrum.omega = {}", om(self.spectrum.omega)),
            format!("spectrum.r = {}", r(self.spectrum.r)),
            format!("solve.mu_factors = {}", list(&self.solve.mu_factors)),
            format!("solve.samples = {}", self.solve.samples),
            format!("solve.tolerance = {}", self.solve.tolerance),
            format!("solve.duality_tolerance = {}", self.solve.duality_tolerance),
            format!("carleman.m_list = {}", ulist(&self.carleman.m_list)),
            format!("carleman.mu_factor = {}", self.carleman.mu_factor),
            format!("carleman.psi = {}", self.carleman.psi.name()),
            format!("carleman.omega = {}", om(self.carleman.omega)),
            format!("carleman.r = {}", r(self.carleman.r)),
            format!("carleman.gamma = {}", self.carleman.gamma),
            format!("carleman.lambda = {}", opt(self.carleman.lambda)),
            format!("carleman.s_factors = {}", list(&self.carleman.s_factors)),
            format!("carleman.sigma_limit = {}", self.carleman.sigma_limit),
            format!("carleman.trajectories = {}", self.carleman.trajectories),
            format!("carleman.fd_samples = {}", self.carleman.fd_samples),
            format!("carleman.fd_steps = {}", list(&self.carleman.fd_steps)),
            format!("carleman.fd_tolerance = {}", self.carleman.fd_tolerance),
            format!("carleman.spread = {}", self.carleman.spread),
            format!("carleman.observability_trials = {}", self.carleman.observability_trials),
            format!("hum.m = {}", self.hum.m.map(|m| m.to_string()).unwrap_or_else(|| "auto".into())),
            format!("hum.coefficient = {}", co(self.hum.coefficient)),
            format!("hum.mu_factor = {}", self.hum.mu_factor),
            format!("hum.horizons = {}", list(&self.hum.horizons)),
            format!("hum.delta_pen = {}", self.hum.delta_pen),
            format!("hum.cg_tol = {}", self.hum.cg_tol),
            format!("hum.max_iter = {}", self.hum.max_iter),
            format!("hum.target = {}", self.hum.target),
            format!("hum.gram_pairs = {}", self.hum.gram_pairs),
            format!("hum.gram_tolerance = {}", self.hum.gram_tolerance),
            format!("hum.duality_tolerance = {}", self.hum.duality_tolerance),
            format!("hum.omega = {}", om(self.hum.omega)),
            format!("hum.r = {}", r(self.hum.r)),
            format!("stabilize.mu_factor = {}", self.stabilize.mu_factor),
            format!("stabilize.radius = {}", self.stabilize.radius),
            format!("stabilize.tolerance = {}", self.stabilize.tolerance),
            format!("seed = {}", self.seed),
        ];
        lines.join("\n")
    }
}
