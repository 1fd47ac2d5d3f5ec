//! Execution-problem description and cost model.
//!
//! The state of an order execution is the pair `X_t = (p_t, q_t)` where
//! `p_t` is the side-signed price slippage against the benchmark (in
//! fractions of the arrival price) and `q_t` is the fraction of the order
//! still outstanding. Over a bucket `[t, t+dt)` the scheduler picks a
//! participation rate `u_t = x_t / v_t` and pays
//!
//! ```text
//! stage cost   {a_t eta_t u^2 + a_t (p_t + s_t) u + beta_t q_t^2} dt
//! terminal     beta_T q_T^2
//! ```
//!
//! while the slippage evolves as
//!
//! ```text
//! p' = (1 - kappa_t dt) p + mu_t x_t dt + alpha_t dt + sigma_t z
//! q' = q - a_t u dt,            a_t = v_t / q0
//! ```
//!
//! Everything downstream (LQR recursion, MPC assembly, simulator) is built
//! on the types and the three evaluation routines in this module.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Completion tolerance used when the terminal penalty is hard:
/// `|q_T| <= COMPLETION_TOL` counts as a completed order.
pub const COMPLETION_TOL: f64 = 1e-6;

/// Order side. Only the simulator cares: slippage is side-signed, so all
/// scheduler math is side-agnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

/// Terminal inventory penalty `beta_T`. `Hard` stands for the limit
/// `beta_T -> +inf`, i.e. the completion constraint `q_T = 0`; each
/// scheduler realizes it in its own exact way (the LQR recursion seeds the
/// forced final trade, MPC adds an equality row).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminalPenalty {
    Smooth(f64),
    Hard,
}

impl TerminalPenalty {
    pub fn is_hard(&self) -> bool {
        matches!(self, TerminalPenalty::Hard)
    }

    /// Finite value, if any.
    pub fn smooth(&self) -> Option<f64> {
        match self {
            TerminalPenalty::Smooth(b) => Some(*b),
            TerminalPenalty::Hard => None,
        }
    }
}

impl Serialize for TerminalPenalty {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self {
            TerminalPenalty::Smooth(b) => ser.serialize_f64(*b),
            TerminalPenalty::Hard => ser.serialize_str("hard"),
        }
    }
}

impl<'de> Deserialize<'de> for TerminalPenalty {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(b) => Ok(TerminalPenalty::Smooth(b)),
            Raw::Text(s) if s.eq_ignore_ascii_case("hard") => Ok(TerminalPenalty::Hard),
            Raw::Text(s) => Err(D::Error::custom(format!(
                "beta_T must be a number or \"hard\", got {s:?}"
            ))),
        }
    }
}

/// Per-bucket market and impact parameters plus global order data.
///
/// All array fields have length `n`. Serialized field names are stable and
/// part of the JSON interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    /// Number of trading buckets.
    pub n: usize,
    /// Bucket length (time units).
    pub dt: f64,
    /// Initial shares to execute.
    pub q0: f64,
    pub side: Side,
    /// Expected market volume rate per bucket (shares / time).
    pub v: Vec<f64>,
    /// Temporary impact (slippage per unit participation rate).
    pub eta: Vec<f64>,
    /// Permanent impact (slippage per executed share).
    pub mu: Vec<f64>,
    /// Half-spread (slippage).
    pub s: Vec<f64>,
    /// Per-bucket slippage volatility.
    pub sigma: Vec<f64>,
    /// Mean-reversion signal used by the optimizer (1 / time).
    pub kappa: Vec<f64>,
    /// Trend signal (slippage / time).
    pub alpha: Vec<f64>,
    /// Urgency (inventory) penalty.
    pub beta: Vec<f64>,
    /// Terminal penalty; `"hard"` encodes the completion constraint.
    #[serde(rename = "beta_T")]
    pub beta_t: TerminalPenalty,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SpecError {
    #[error("bucket count n must be positive")]
    EmptyHorizon,
    #[error("bucket length dt must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("initial shares q0 must be positive, got {0}")]
    NonPositiveShares(f64),
    #[error("field {field} has length {got}, expected n = {expected}")]
    LengthMismatch {
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("market volume must be positive at bucket {index}, got {value}")]
    NonPositiveVolume { index: usize, value: f64 },
    #[error("kappa*dt = {product} >= 1 at bucket {index}; transition factor would be nonpositive")]
    KappaDtTooLarge { index: usize, product: f64 },
    #[error("{field} must be nonnegative at bucket {index}, got {value}")]
    NegativeParameter {
        field: &'static str,
        index: usize,
        value: f64,
    },
}

impl MarketSpec {
    /// Spec with every per-bucket parameter constant in time.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        n: usize,
        dt: f64,
        q0: f64,
        v: f64,
        eta: f64,
        mu: f64,
        s: f64,
        sigma: f64,
        kappa: f64,
        alpha: f64,
        beta: f64,
        beta_t: TerminalPenalty,
    ) -> Self {
        MarketSpec {
            n,
            dt,
            q0,
            side: Side::Buy,
            v: vec![v; n],
            eta: vec![eta; n],
            mu: vec![mu; n],
            s: vec![s; n],
            sigma: vec![sigma; n],
            kappa: vec![kappa; n],
            alpha: vec![alpha; n],
            beta: vec![beta; n],
            beta_t,
        }
    }

    /// Default desk-scale scenario: one trading day split into 102
    /// five-minute buckets, flat volumes, 10% average participation, mild
    /// urgency, hard completion, and a moderate mean-reversion signal.
    /// These magnitudes are repo conventions, not market estimates.
    pub fn default_desk() -> Self {
        let n = 102;
        MarketSpec::uniform(
            n,
            1.0 / n as f64,     // T = 1 trading day
            2.0e5,              // shares
            2.0e6,              // shares / day, flat
            1.0e-2,             // eta: 10 bps paid at u = 0.1
            2.5e-9,             // mu: ~5 bps permanent over the full order
            2.5e-4,             // s: 2.5 bps half-spread
            0.02 / (n as f64).sqrt(), // 2% daily vol split across buckets
            20.0,               // kappa: 1/day
            0.0,
            2.0e-2,             // mild urgency
            TerminalPenalty::Hard,
        )
    }

    /// Horizon `T = n * dt`.
    pub fn horizon(&self) -> f64 {
        self.n as f64 * self.dt
    }

    /// Scaling quantity `a_t = v_t / q0`.
    pub fn a(&self, t: usize) -> f64 {
        self.v[t] / self.q0
    }

    /// Impact vector `w_t = (q0 * mu_t, -1)`.
    pub fn impact_vector(&self, t: usize) -> nalgebra::Vector2<f64> {
        nalgebra::Vector2::new(self.q0 * self.mu[t], -1.0)
    }

    /// Total expected market volume rate summed over buckets,
    /// `M = sum_t v_t`.
    pub fn total_volume_rate(&self) -> f64 {
        self.v.iter().sum()
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.n == 0 {
            return Err(SpecError::EmptyHorizon);
        }
        if !(self.dt > 0.0) {
            return Err(SpecError::NonPositiveDt(self.dt));
        }
        if !(self.q0 > 0.0) {
            return Err(SpecError::NonPositiveShares(self.q0));
        }
        let arrays: [(&'static str, &Vec<f64>); 8] = [
            ("v", &self.v),
            ("eta", &self.eta),
            ("mu", &self.mu),
            ("s", &self.s),
            ("sigma", &self.sigma),
            ("kappa", &self.kappa),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
        ];
        for (field, arr) in arrays {
            if arr.len() != self.n {
                return Err(SpecError::LengthMismatch {
                    field,
                    got: arr.len(),
                    expected: self.n,
                });
            }
        }
        for (i, &v) in self.v.iter().enumerate() {
            if !(v > 0.0) {
                return Err(SpecError::NonPositiveVolume { index: i, value: v });
            }
        }
        for (i, &k) in self.kappa.iter().enumerate() {
            if k * self.dt >= 1.0 {
                return Err(SpecError::KappaDtTooLarge {
                    index: i,
                    product: k * self.dt,
                });
            }
        }
        for (field, arr) in [
            ("eta", &self.eta),
            ("mu", &self.mu),
            ("s", &self.s),
            ("sigma", &self.sigma),
            ("beta", &self.beta),
        ] {
            if let Some((i, &x)) = arr.iter().enumerate().find(|(_, x)| **x < 0.0) {
                return Err(SpecError::NegativeParameter {
                    field,
                    index: i,
                    value: x,
                });
            }
        }
        if let TerminalPenalty::Smooth(b) = self.beta_t {
            if b < 0.0 {
                return Err(SpecError::NegativeParameter {
                    field: "beta_T",
                    index: 0,
                    value: b,
                });
            }
        }
        Ok(())
    }

    /// Stage cost `{a eta u^2 + a (p + s) u + beta q^2} dt` at the state's
    /// bucket.
    pub fn stage_cost(&self, state: &ExecState, u: f64) -> f64 {
        let t = state.step;
        let a = self.a(t);
        (a * self.eta[t] * u * u + a * (state.p + self.s[t]) * u + self.beta[t] * state.q * state.q)
            * self.dt
    }

    /// Terminal cost `beta_T q_T^2`. Hard completion returns 0 inside the
    /// completion tolerance and `+inf` outside it.
    pub fn terminal_cost(&self, q_terminal: f64) -> f64 {
        self.terminal_cost_with_tol(q_terminal, COMPLETION_TOL)
    }

    pub fn terminal_cost_with_tol(&self, q_terminal: f64, tol: f64) -> f64 {
        match self.beta_t {
            TerminalPenalty::Smooth(b) => b * q_terminal * q_terminal,
            TerminalPenalty::Hard => {
                if q_terminal.abs() <= tol {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// One step of the slippage/inventory dynamics with a standard-normal
    /// draw `z`. `z` is scaled by the per-bucket volatility, so passing
    /// `z = 0` gives the certainty-equivalent transition.
    pub fn step_state(&self, state: &ExecState, u: f64, z: f64) -> ExecState {
        let t = state.step;
        let x = u * self.v[t];
        ExecState {
            step: t + 1,
            p: (1.0 - self.kappa[t] * self.dt) * state.p
                + self.mu[t] * x * self.dt
                + self.alpha[t] * self.dt
                + self.sigma[t] * z,
            q: state.q - self.a(t) * u * self.dt,
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Execution state: bucket index, slippage and outstanding fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecState {
    /// Bucket index; clock time is `step * dt`.
    pub step: usize,
    /// Price slippage `p_t`.
    pub p: f64,
    /// Outstanding fraction `q_t`.
    pub q: f64,
}

impl ExecState {
    pub fn initial(p: f64) -> Self {
        ExecState { step: 0, p, q: 1.0 }
    }

    pub fn time(&self, dt: f64) -> f64 {
        self.step as f64 * dt
    }
}

/// One executed bucket of a simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub p: f64,
    pub q: f64,
    /// Participation rate applied over `[t, t+dt)`.
    pub u: f64,
    /// Executed volume rate `x = u v`.
    pub x: f64,
    pub stage_cost: f64,
    /// Present only for runs with a dark-pool leg.
    pub dark: Option<DarkFill>,
}

/// Dark-pool columns of a trace record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkFill {
    /// Shares pending in the dark pool during the bucket.
    pub y_posted: f64,
    pub filled: bool,
    /// Shares actually executed in the dark pool this bucket.
    pub qty: f64,
}

/// Full record of one simulated execution.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub records: Vec<TraceRecord>,
    /// Outstanding fraction after the last bucket.
    pub q_terminal: f64,
    pub terminal_cost: f64,
    pub total_cost: f64,
    /// Arrival-relative normalized price path (one entry per bucket edge),
    /// kept for diagnostics such as the VWAP recursion check.
    pub arrival_slippage: Vec<f64>,
}

impl ExecutionTrace {
    /// Fraction executed on the lit market, `sum_t a_t u_t dt`.
    pub fn lit_executed_fraction(&self, spec: &MarketSpec) -> f64 {
        self.records
            .iter()
            .enumerate()
            .map(|(t, r)| spec.a(t) * r.u * spec.dt)
            .sum()
    }

    /// Fraction executed in the dark pool, in units of the order size.
    pub fn dark_executed_fraction(&self, spec: &MarketSpec) -> f64 {
        self.records
            .iter()
            .filter_map(|r| r.dark.as_ref())
            .map(|d| d.qty / spec.q0)
            .sum()
    }

    pub fn has_dark_leg(&self) -> bool {
        self.records.iter().any(|r| r.dark.is_some())
    }

    /// CSV dump: `t,p,q,u,x,stage_cost[,y_posted,dark_filled,dark_qty]`.
    pub fn to_csv(&self) -> String {
        let dark = self.has_dark_leg();
        let mut out = String::from("t,p,q,u,x,stage_cost");
        if dark {
            out.push_str(",y_posted,dark_filled,dark_qty");
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                r.t, r.p, r.q, r.u, r.x, r.stage_cost
            ));
            if dark {
                let d = r.dark.unwrap_or(DarkFill {
                    y_posted: 0.0,
                    filled: false,
                    qty: 0.0,
                });
                out.push_str(&format!(
                    ",{},{},{}",
                    d.y_posted,
                    if d.filled { 1 } else { 0 },
                    d.qty
                ));
            }
            out.push('\n');
        }
        out
    }
}
