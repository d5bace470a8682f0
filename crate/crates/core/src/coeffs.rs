//! Problem data: rod coefficients, point mass, horizon and solver settings,
//! together with the TOML configuration format they are read from.
//!
//! ```toml
//! mass = 1.0
//! bc = "dirichlet"          # or "neumann"
//! horizon = 1.0
//! n_modes = 8
//!
//! [rods.left]
//! rho = "1 + x^2"           # expression in x
//! sigma = 1.0               # plain number
//! q = 0.0
//!
//! [rods.right]
//! rho = { x = [0.0, ...], y = [1.0, ...] }   # sampled table, >= 64 points
//! sigma = "exp(x)"
//! q = "0.5"
//!
//! [tolerances]              # optional, every key has a default
//! ode_rtol = 1e-11
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ParseError};
use crate::quad::{adaptive_simpson, QuadError};
use crate::spline::{CubicSpline, SplineError};

/// Number of samples per rod used to validate positivity.
pub const VALIDATION_SAMPLES: usize = 1001;
/// Minimum table length for sampled coefficients.
pub const MIN_TABLE_POINTS: usize = 64;
const SMALL_POTENTIAL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{field}: bad expression: {source}")]
    Expr {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("{field}: bad table: {source}")]
    Table {
        field: String,
        #[source]
        source: SplineError,
    },
    #[error("{field}: table must have at least {MIN_TABLE_POINTS} points and span [{a}, {b}] ({reason})")]
    TableRange {
        field: String,
        a: f64,
        b: f64,
        reason: String,
    },
    #[error("{field}: non-positive coefficient: value {value} at x = {x}")]
    NonPositive { field: String, x: f64, value: f64 },
    #[error("{field}: non-finite value at x = {x}")]
    NonFinite { field: String, x: f64 },
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("travel time quadrature failed: {0}")]
    Quadrature(#[from] QuadError),
}

impl ConfigError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

/// Which boundary input acts at `x = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcVariant {
    /// `v(1, t) = h(t)`
    Dirichlet,
    /// `v_x(1, t) = h(t)`
    Neumann,
}

impl fmt::Display for BcVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BcVariant::Dirichlet => write!(f, "dirichlet"),
            BcVariant::Neumann => write!(f, "neumann"),
        }
    }
}

impl std::str::FromStr for BcVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" => Ok(BcVariant::Dirichlet),
            "neumann" => Ok(BcVariant::Neumann),
            other => Err(format!("unknown boundary variant '{other}'")),
        }
    }
}

/// How a coefficient is written in the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Number(f64),
    Expr(String),
    Table(TableSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone)]
enum ProfileKind {
    Const(f64),
    Expr { f: Expr, df: Expr, d2f: Expr },
    Table(CubicSpline),
}

/// One scalar coefficient function on a rod.
#[derive(Debug, Clone)]
pub struct Profile {
    spec: ProfileSpec,
    kind: ProfileKind,
}

impl PartialEq for Profile {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl Profile {
    pub fn constant(c: f64) -> Self {
        Profile {
            spec: ProfileSpec::Number(c),
            kind: ProfileKind::Const(c),
        }
    }

    pub fn expr(src: &str) -> Result<Self, ParseError> {
        Self::from_expr_spec(src)
    }

    fn from_expr_spec(src: &str) -> Result<Self, ParseError> {
        let f = Expr::parse(src)?;
        let kind = match f.constant_value() {
            Some(c) => ProfileKind::Const(c),
            None => {
                let df = f.derivative();
                let d2f = df.derivative();
                ProfileKind::Expr { f, df, d2f }
            }
        };
        Ok(Profile {
            spec: ProfileSpec::Expr(src.to_string()),
            kind,
        })
    }

    pub fn table(x: Vec<f64>, y: Vec<f64>) -> Result<Self, SplineError> {
        let spline = CubicSpline::natural(&x, &y)?;
        Ok(Profile {
            spec: ProfileSpec::Table(TableSpec { x, y }),
            kind: ProfileKind::Table(spline),
        })
    }

    fn from_spec(spec: &ProfileSpec, field: &str, interval: (f64, f64)) -> Result<Self, ConfigError> {
        match spec {
            ProfileSpec::Number(c) => Ok(Profile::constant(*c)),
            ProfileSpec::Expr(src) => Profile::from_expr_spec(src).map_err(|source| ConfigError::Expr {
                field: field.to_string(),
                source,
            }),
            ProfileSpec::Table(t) => {
                let (a, b) = interval;
                let n = t.x.len();
                let range_err = |reason: &str| ConfigError::TableRange {
                    field: field.to_string(),
                    a,
                    b,
                    reason: reason.to_string(),
                };
                if n < MIN_TABLE_POINTS {
                    return Err(range_err(&format!("got {n} points")));
                }
                if (t.x[0] - a).abs() > 1e-12 || (t.x[n - 1] - b).abs() > 1e-12 {
                    return Err(range_err(&format!("got [{}, {}]", t.x[0], t.x[n - 1])));
                }
                Profile::table(t.x.clone(), t.y.clone()).map_err(|source| ConfigError::Table {
                    field: field.to_string(),
                    source,
                })
            }
        }
    }

    pub fn spec(&self) -> &ProfileSpec {
        &self.spec
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, ProfileKind::Const(_))
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            ProfileKind::Const(c) => *c,
            ProfileKind::Expr { f, .. } => f.eval(x),
            ProfileKind::Table(s) => s.eval(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match &self.kind {
            ProfileKind::Const(_) => 0.0,
            ProfileKind::Expr { df, .. } => df.eval(x),
            ProfileKind::Table(s) => s.eval3(x).1,
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match &self.kind {
            ProfileKind::Const(_) => 0.0,
            ProfileKind::Expr { d2f, .. } => d2f.eval(x),
            ProfileKind::Table(s) => s.eval3(x).2,
        }
    }
}

/// Which rod.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn interval(self) -> (f64, f64) {
        match self {
            Side::Left => (-1.0, 0.0),
            Side::Right => (0.0, 1.0),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// Density, conductivity and potential of one rod.
#[derive(Debug, Clone, PartialEq)]
pub struct Rod {
    pub rho: Profile,
    pub sigma: Profile,
    pub q: Profile,
}

impl Rod {
    pub fn new(rho: Profile, sigma: Profile, q: Profile) -> Self {
        Rod { rho, sigma, q }
    }

    pub fn constant(rho: f64, sigma: f64, q: f64) -> Self {
        Rod::new(Profile::constant(rho), Profile::constant(sigma), Profile::constant(q))
    }

    /// Convenience constructor from three expressions.
    pub fn from_exprs(rho: &str, sigma: &str, q: &str) -> Result<Self, ParseError> {
        Ok(Rod::new(Profile::expr(rho)?, Profile::expr(sigma)?, Profile::expr(q)?))
    }

    /// `(rho, sigma, q)` at `x`.
    #[inline]
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        (self.rho.eval(x), self.sigma.eval(x), self.q.eval(x))
    }

    pub fn is_constant(&self) -> bool {
        self.rho.is_constant() && self.sigma.is_constant() && self.q.is_constant()
    }
}

/// Coefficients of both rods plus the point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub left: Rod,
    pub right: Rod,
    pub mass: f64,
}

impl CoefficientSet {
    /// Builds and validates a coefficient set. Returns the set together with
    /// any non-fatal warnings.
    pub fn new(left: Rod, right: Rod, mass: f64) -> Result<(Self, Vec<String>), ConfigError> {
        let set = CoefficientSet { left, right, mass };
        let warnings = set.validate()?;
        Ok((set, warnings))
    }

    /// Constant coefficients on both rods, no validation warnings expected.
    pub fn uniform(rho: f64, sigma: f64, q: f64, mass: f64) -> Self {
        CoefficientSet {
            left: Rod::constant(rho, sigma, q),
            right: Rod::constant(rho, sigma, q),
            mass,
        }
    }

    pub fn rod(&self, side: Side) -> &Rod {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    /// Same rods with a different point mass (used for the `M = 0` reference
    /// problem, which bypasses validation on purpose).
    pub fn with_mass(&self, mass: f64) -> Self {
        CoefficientSet {
            left: self.left.clone(),
            right: self.right.clone(),
            mass,
        }
    }

    /// Dense-sampling validation of positivity and finiteness.
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        let mut warnings = Vec::new();
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(ConfigError::NonPositive {
                field: "mass".into(),
                x: 0.0,
                value: self.mass,
            });
        }
        for side in [Side::Left, Side::Right] {
            let rod = self.rod(side);
            let (a, b) = side.interval();
            let mut min_q = f64::INFINITY;
            for i in 0..VALIDATION_SAMPLES {
                let x = a + (b - a) * i as f64 / (VALIDATION_SAMPLES - 1) as f64;
                for (name, p) in [("rho", &rod.rho), ("sigma", &rod.sigma), ("q", &rod.q)] {
                    let field = format!("rods.{}.{}", side.name(), name);
                    let v = p.eval(x);
                    let d = p.derivative(x);
                    let d2 = p.second_derivative(x);
                    if !(v.is_finite() && d.is_finite() && d2.is_finite()) {
                        return Err(ConfigError::NonFinite { field, x });
                    }
                    let ok = if name == "q" { v >= 0.0 } else { v > 0.0 };
                    if !ok {
                        return Err(ConfigError::NonPositive { field, x, value: v });
                    }
                    if name == "q" {
                        min_q = min_q.min(v);
                    }
                }
            }
            if min_q < SMALL_POTENTIAL {
                warnings.push(format!(
                    "rods.{}.q: minimum potential {min_q:e} is below {SMALL_POTENTIAL:e}; accepted as q >= 0",
                    side.name()
                ));
            }
        }
        Ok(warnings)
    }
}

/// Travel times `gamma_i = integral of sqrt(rho_i / sigma_i)` over each rod.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TravelTimes {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl TravelTimes {
    pub fn total(&self) -> f64 {
        self.gamma1 + self.gamma2
    }
}

pub const TRAVEL_TIME_TOL: f64 = 1e-10;

pub fn travel_times(c: &CoefficientSet) -> Result<TravelTimes, QuadError> {
    let gamma1 = partial_travel_time(&c.left, -1.0, 0.0)?;
    let gamma2 = partial_travel_time(&c.right, 0.0, 1.0)?;
    Ok(TravelTimes { gamma1, gamma2 })
}

/// Partial travel time `integral_{from}^{to} sqrt(rho/sigma)` along one rod.
pub fn partial_travel_time(rod: &Rod, from: f64, to: f64) -> Result<f64, QuadError> {
    if from == to {
        return Ok(0.0);
    }
    adaptive_simpson(
        |x| (rod.rho.eval(x) / rod.sigma.eval(x)).sqrt(),
        from,
        to,
        TRAVEL_TIME_TOL,
    )
}

/// Numerical settings shared by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub ode_rtol: f64,
    pub ode_atol: f64,
    /// Relative tolerance for eigenvalue refinement.
    pub root_rtol: f64,
    /// Two auxiliary eigenvalues closer than `coincidence * (1 + mu)` coincide.
    pub coincidence: f64,
    /// Below this absolute pole separation eigenfunctions are assembled
    /// from the flux form.
    pub near_coincidence: f64,
    pub gram_condition_max: f64,
    /// Grid points per rod for sampled traces and eigenfunctions (odd).
    pub grid_points: usize,
    /// Relative moment residual tolerance.
    pub moment_residual: f64,
    /// Samples of the control signal on `[0, T]`.
    pub time_points: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            ode_rtol: 1e-11,
            ode_atol: 1e-11,
            root_rtol: 1e-12,
            coincidence: 1e-7,
            near_coincidence: 1e-4,
            gram_condition_max: 1e14,
            grid_points: 2049,
            moment_residual: 1e-7,
            time_points: 16385,
        }
    }
}

impl Tolerances {
    fn validate(&self) -> Result<(), ConfigError> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::invalid(&format!("tolerances.{name}"), format!("must be positive, got {v}")))
            }
        };
        pos("ode_rtol", self.ode_rtol)?;
        pos("ode_atol", self.ode_atol)?;
        pos("root_rtol", self.root_rtol)?;
        pos("coincidence", self.coincidence)?;
        pos("near_coincidence", self.near_coincidence)?;
        pos("gram_condition_max", self.gram_condition_max)?;
        pos("moment_residual", self.moment_residual)?;
        if self.grid_points < 65 || self.grid_points.is_multiple_of(2) {
            return Err(ConfigError::invalid(
                "tolerances.grid_points",
                format!("must be odd and >= 65, got {}", self.grid_points),
            ));
        }
        if self.time_points < 1001 || self.time_points.is_multiple_of(2) {
            return Err(ConfigError::invalid(
                "tolerances.time_points",
                format!("must be odd and >= 1001, got {}", self.time_points),
            ));
        }
        Ok(())
    }
}

/// A fully validated problem description.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub coefficients: CoefficientSet,
    pub bc: BcVariant,
    pub horizon: f64,
    pub n_modes: usize,
    pub tolerances: Tolerances,
    pub travel: TravelTimes,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRod {
    rho: ProfileSpec,
    sigma: ProfileSpec,
    q: ProfileSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRods {
    left: RawRod,
    right: RawRod,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mass: f64,
    bc: BcVariant,
    horizon: f64,
    n_modes: usize,
    #[serde(default)]
    tolerances: Tolerances,
    rods: RawRods,
}

impl ProblemConfig {
    pub fn new(
        coefficients: CoefficientSet,
        bc: BcVariant,
        horizon: f64,
        n_modes: usize,
        tolerances: Tolerances,
    ) -> Result<Self, ConfigError> {
        let warnings = coefficients.validate()?;
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ConfigError::invalid("horizon", format!("must be positive, got {horizon}")));
        }
        if n_modes == 0 {
            return Err(ConfigError::invalid("n_modes", "must be at least 1"));
        }
        tolerances.validate()?;
        let travel = travel_times(&coefficients)?;
        Ok(ProblemConfig {
            coefficients,
            bc,
            horizon,
            n_modes,
            tolerances,
            travel,
            warnings,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let rod = |r: &RawRod, side: Side| -> Result<Rod, ConfigError> {
            let iv = side.interval();
            let f = |name: &str| format!("rods.{}.{}", side.name(), name);
            Ok(Rod::new(
                Profile::from_spec(&r.rho, &f("rho"), iv)?,
                Profile::from_spec(&r.sigma, &f("sigma"), iv)?,
                Profile::from_spec(&r.q, &f("q"), iv)?,
            ))
        };
        let coefficients = CoefficientSet {
            left: rod(&raw.rods.left, Side::Left)?,
            right: rod(&raw.rods.right, Side::Right)?,
            mass: raw.mass,
        };
        ProblemConfig::new(coefficients, raw.bc, raw.horizon, raw.n_modes, raw.tolerances)
    }

    pub fn to_toml_string(&self) -> String {
        let rod = |r: &Rod| RawRod {
            rho: r.rho.spec().clone(),
            sigma: r.sigma.spec().clone(),
            q: r.q.spec().clone(),
        };
        let raw = RawConfig {
            mass: self.coefficients.mass,
            bc: self.bc,
            horizon: self.horizon,
            n_modes: self.n_modes,
            tolerances: self.tolerances,
            rods: RawRods {
                left: rod(&self.coefficients.left),
                right: rod(&self.coefficients.right),
            },
        };
        toml::to_string(&raw).expect("config serializes")
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ProblemConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ProblemConfig::from_toml_str(&text)
}

pub fn save_config(cfg: &ProblemConfig, path: impl AsRef<Path>) -> Result<(), ConfigError> {
    let path = path.as_ref();
    std::fs::write(path, cfg.to_toml_string()).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}
