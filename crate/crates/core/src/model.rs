//! Stochastic discrete-time systems and the stormwater retention pond benchmark.
//!
//! A [`SystemModel`] bundles a finite control set, a finite disturbance
//! distribution and a transition function `x' = f(x, u, w)`. Transitions are
//! clamped into the model's state bounds, so downstream grid code never sees
//! a state outside the mesh.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Tolerance on the probability simplex.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Finite distribution of the disturbance `w_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceDistribution {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl DisturbanceDistribution {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDistribution("no outcomes".into()));
        }
        if values.len() != probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} values but {} probabilities",
                values.len(),
                probs.len()
            )));
        }
        if values.iter().chain(probs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDistribution("non-finite entry".into()));
        }
        if let Some(p) = probs.iter().find(|p| **p < 0.0 || **p > 1.0) {
            return Err(Error::InvalidDistribution(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidDistribution(
                "values must be strictly increasing".into(),
            ));
        }
        Ok(Self { values, probs })
    }

    /// Point mass at `value`.
    pub fn deterministic(value: f64) -> Self {
        Self {
            values: vec![value],
            probs: vec![1.0],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| v * p)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| p * (v - mu) * (v - mu))
            .sum()
    }

    /// Index of the outcome selected by a uniform draw `u ∈ [0, 1)`.
    pub fn sample_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (j, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // u landed in the rounding slack above the last cumulative sum
        self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }
}

/// Signed characterization of the constraint set `K = {x : x < bound}`:
/// `g(x) < 0` exactly on `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceFunction {
    /// `g(x) = x - c_max`.
    LinearOffset { c_max: f64 },
    /// `g(x) = 1{x ∉ K} - 1/2`.
    Indicator { constraint_upper: f64 },
}

impl SurfaceFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SurfaceFunction::LinearOffset { c_max } => x - c_max,
            SurfaceFunction::Indicator { constraint_upper } => {
                if x < constraint_upper {
                    -0.5
                } else {
                    0.5
                }
            }
        }
    }

    pub fn in_constraint_set(&self, x: f64) -> bool {
        x < self.constraint_upper()
    }

    pub fn constraint_upper(&self) -> f64 {
        match *self {
            SurfaceFunction::LinearOffset { c_max } => c_max,
            SurfaceFunction::Indicator { constraint_upper } => constraint_upper,
        }
    }
}

/// `g(x)` for the given surface function.
pub fn surface_g(sf: &SurfaceFunction, x: f64) -> f64 {
    sf.eval(x)
}

/// Physical parameters of the retention pond. Units are feet and seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PondParams {
    /// Pond surface area, ft².
    pub surface_area: f64,
    /// Outlet radius, ft.
    pub outlet_radius: f64,
    /// Discharge coefficient.
    pub discharge_coeff: f64,
    /// Outlet elevation, ft.
    pub outlet_elev: f64,
    /// Gravitational acceleration, ft/s².
    pub gravity: f64,
    /// Time step, s.
    pub dt: f64,
    pub horizon: usize,
    /// Water level ceiling applied after every step, ft.
    pub state_max: f64,
}

impl PondParams {
    pub const fn pond_v1() -> Self {
        Self {
            surface_area: 28_292.0,
            outlet_radius: 1.0 / 3.0,
            discharge_coeff: 0.61,
            outlet_elev: 1.0,
            gravity: 32.2,
            dt: 300.0,
            horizon: 48,
            state_max: 6.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("surface_area", self.surface_area),
            ("outlet_radius", self.outlet_radius),
            ("discharge_coeff", self.discharge_coeff),
            ("outlet_elev", self.outlet_elev),
            ("gravity", self.gravity),
            ("dt", self.dt),
            ("state_max", self.state_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return domain(format!("pond parameter {name} must be positive, got {v}"));
            }
        }
        if self.horizon < 1 {
            return domain("pond horizon must be at least 1");
        }
        if self.state_max <= self.outlet_elev {
            return domain("state_max must exceed the outlet elevation");
        }
        Ok(())
    }
}

/// Outlet discharge `q_p(x, u)` in ft³/s.
pub fn pond_outflow(params: &PondParams, x: f64, u: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return domain(format!("water level must be nonnegative, got {x}"));
    }
    if x < params.outlet_elev {
        return Ok(0.0);
    }
    let r = params.outlet_radius;
    let head = 2.0 * params.gravity * (x - params.outlet_elev);
    Ok(params.discharge_coeff * std::f64::consts::PI * r * r * u * head.sqrt())
}

/// One pond step, clamped at `state_max`.
pub fn pond_step(params: &PondParams, x: f64, u: f64, w: f64) -> Result<f64> {
    let q = pond_outflow(params, x, u)?;
    let next = x + params.dt / params.surface_area * (w - q);
    Ok(next.min(params.state_max))
}

/// Runoff distribution fitted to the design-storm moments.
pub fn pond_v1_distribution() -> DisturbanceDistribution {
    DisturbanceDistribution::new(
        vec![
            8.57, 9.47, 10.37, 11.26, 12.16, 13.06, 13.95, 14.85, 15.75, 16.65,
        ],
        vec![
            0.0236, 1e-4, 1e-4, 0.5249, 0.3272, 1e-4, 1e-4, 1e-4, 1e-4, 0.1237,
        ],
    )
    .expect("built-in distribution is valid")
}

pub type TransitionFn = dyn Fn(f64, f64, f64) -> f64 + Send + Sync;

/// Finite-horizon stochastic system `x_{k+1} = f(x_k, u_k, w_k)`.
#[derive(Clone)]
pub struct SystemModel {
    pub name: String,
    controls: Vec<f64>,
    disturbance: DisturbanceDistribution,
    transition: Arc<TransitionFn>,
    state_bounds: (f64, f64),
    horizon: usize,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("controls", &self.controls)
            .field("disturbance", &self.disturbance)
            .field("state_bounds", &self.state_bounds)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl SystemModel {
    pub fn new(
        name: impl Into<String>,
        controls: Vec<f64>,
        disturbance: DisturbanceDistribution,
        state_bounds: (f64, f64),
        horizon: usize,
        transition: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if controls.is_empty() {
            return domain("control set is empty");
        }
        let (lo, hi) = state_bounds;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return domain(format!("invalid state bounds [{lo}, {hi}]"));
        }
        Ok(Self {
            name: name.into(),
            controls,
            disturbance,
            transition: Arc::new(transition),
            state_bounds,
            horizon,
        })
    }

    /// Pond model from explicit parameters and runoff distribution.
    ///
    /// The valve-open control is listed first, so control ties resolve to the
    /// open valve under smallest-index tie-breaking.
    pub fn pond(params: PondParams, disturbance: DisturbanceDistribution) -> Result<Self> {
        params.validate()?;
        Self::new(
            "pond",
            vec![1.0, 0.0],
            disturbance,
            (0.0, params.state_max),
            params.horizon,
            move |x, u, w| {
                let q = pond_outflow(&params, x.max(0.0), u).unwrap_or(0.0);
                x + params.dt / params.surface_area * (w - q)
            },
        )
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn disturbance(&self) -> &DisturbanceDistribution {
        &self.disturbance
    }

    pub fn state_bounds(&self) -> (f64, f64) {
        self.state_bounds
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.state_bounds.0, self.state_bounds.1)
    }

    /// Clamped transition.
    pub fn step(&self, x: f64, u: f64, w: f64) -> f64 {
        self.clamp((self.transition)(x, u, w))
    }

    /// Successor states and probabilities for each disturbance outcome.
    pub fn successors(&self, x: f64, u: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.disturbance
            .values
            .iter()
            .zip(&self.disturbance.probs)
            .map(move |(&w, &p)| (self.step(x, u, w), p))
    }
}

/// The built-in `pond-v1` preset.
pub fn load_pond_benchmark() -> SystemModel {
    SystemModel::pond(PondParams::pond_v1(), pond_v1_distribution())
        .expect("built-in pond parameters are valid")
}
