//! Backward LQR recursion for the unconstrained scheduling problem.
//!
//! The value function is quadratic, `H(t, X) = X' P_t X + b_t' X + e_t`,
//! and the optimal participation rate is affine, `u*_t = k_t' X_t + f_t`.
//! All coefficients are computed once, backward from the terminal
//! condition `P_T = diag(0, beta_T)`:
//!
//! ```text
//! g_t = eta_t + a_t w' P_{t+dt} w dt
//! k_t = -(1/g_t) [(I - kappa_t dt J) P_{t+dt}' w + e1/2]
//! f_t = -([b_{t+dt}' + 2 alpha_t dt e1' P_{t+dt}] w + s_t) / (2 g_t)
//! ```
//!
//! with `J = diag(1, 0)`, `w = (q0 mu_t, -1)`, followed by the update of
//! `P`, `b`, `e`. Only `e_t` depends on the volatility, which is why the
//! same gains solve the certainty-equivalent problem.
//!
//! A hard completion constraint is the limit `beta_T -> +inf`. The limit
//! is taken exactly: the final bucket has no freedom (`u = q / (a dt)`),
//! which seeds `P_{T-dt} = [[0, 1/2], [1/2, eta/(a dt) + beta dt]]`,
//! `b_{T-dt} = (0, s)`, `e_{T-dt} = 0`, and the finite recursion continues
//! from there. This keeps the Almgren-Chriss reduction exact: with
//! `kappa = mu = s = alpha = 0` the price gain is identically zero and the
//! trading curve is deterministic.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

use crate::market::{ExecState, MarketSpec, TerminalPenalty, COMPLETION_TOL};

/// Precomputed affine-policy coefficients and value-function pieces.
///
/// `p`, `b`, `e` have `n + 1` entries (one per bucket edge, including the
/// horizon); `k`, `f`, `g` have `n` entries (one per bucket).
#[derive(Debug, Clone)]
pub struct LqrPolicy {
    pub n: usize,
    pub dt: f64,
    pub p: Vec<Matrix2<f64>>,
    pub b: Vec<Vector2<f64>>,
    pub e: Vec<f64>,
    pub k: Vec<Vector2<f64>>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    hard: bool,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LqrError {
    #[error("degenerate quadratic coefficient g = {value} at bucket {index}; impact parameters make the stage problem ill-posed")]
    DegenerateGain { index: usize, value: f64 },
}

const IDENTITY_PRICE: Matrix2<f64> = Matrix2::new(1.0, 0.0, 0.0, 0.0); // J

/// Runs the backward scheme and returns the full policy.
pub fn build_policy(spec: &MarketSpec) -> Result<LqrPolicy, LqrError> {
    let n = spec.n;
    let dt = spec.dt;
    let hard = spec.beta_t.is_hard();
    let eta_max = spec.eta.iter().cloned().fold(0.0_f64, f64::max);
    let g_floor = 1e-12 * eta_max;

    let mut p = vec![Matrix2::zeros(); n + 1];
    let mut b = vec![Vector2::zeros(); n + 1];
    let mut e = vec![0.0; n + 1];
    let mut k = vec![Vector2::zeros(); n];
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];

    let mut start = n; // first bucket handled by the generic recursion + 1
    match spec.beta_t {
        TerminalPenalty::Smooth(beta_t) => {
            p[n] = Matrix2::new(0.0, 0.0, 0.0, beta_t);
        }
        TerminalPenalty::Hard => {
            p[n] = Matrix2::new(0.0, 0.0, 0.0, f64::INFINITY);
            // Forced final trade u = q / (a dt): plug it into the stage
            // cost to seed the finite part of the recursion.
            let t = n - 1;
            let a = spec.a(t);
            k[t] = Vector2::new(0.0, 1.0 / (a * dt));
            f[t] = 0.0;
            g[t] = f64::INFINITY;
            p[t] = Matrix2::new(
                0.0,
                0.5,
                0.5,
                spec.eta[t] / (a * dt) + spec.beta[t] * dt,
            );
            b[t] = Vector2::new(0.0, spec.s[t]);
            e[t] = 0.0;
            start = n - 1;
        }
    }

    let e1 = Vector2::new(1.0, 0.0);
    for t in (0..start).rev() {
        let a = spec.a(t);
        let w = spec.impact_vector(t);
        let kap = spec.kappa[t];
        let alpha = spec.alpha[t];
        let sigma = spec.sigma[t];
        let decay = Matrix2::identity() - IDENTITY_PRICE * (kap * dt); // I - kappa dt J
        let p_next = p[t + 1];
        let b_next = b[t + 1];

        let gt = spec.eta[t] + a * (w.transpose() * p_next * w)[(0, 0)] * dt;
        if gt <= g_floor {
            return Err(LqrError::DegenerateGain {
                index: t,
                value: gt,
            });
        }
        let kt = -(decay * p_next.transpose() * w + e1 * 0.5) / gt;
        let lin = ((b_next.transpose() + 2.0 * alpha * dt * (e1.transpose() * p_next)) * w)
            [(0, 0)]
            + spec.s[t];
        let ft = -lin / (2.0 * gt);

        k[t] = kt;
        f[t] = ft;
        g[t] = gt;
        p[t] = p_next - kap * dt * (IDENTITY_PRICE * p_next + p_next * IDENTITY_PRICE)
            + kap * kap * dt * dt * (IDENTITY_PRICE * p_next * IDENTITY_PRICE)
            + (Matrix2::new(0.0, 0.0, 0.0, spec.beta[t]) - a * gt * kt * kt.transpose()) * dt;
        b[t] = b_next
            - (2.0 * a * gt * ft * kt + kap * (IDENTITY_PRICE * b_next)
                - 2.0 * alpha * (decay * p_next * e1))
                * dt;
        e[t] = e[t + 1]
            + (sigma * sigma + alpha * alpha * dt * dt) * (e1.transpose() * p_next * e1)[(0, 0)]
            + (alpha * b_next[0] - a * gt * ft * ft) * dt;
    }

    Ok(LqrPolicy {
        n,
        dt,
        p,
        b,
        e,
        k,
        f,
        g,
        hard,
    })
}

/// Affine rate `u*_t = k_t'(p, q) + f_t`. No clamping.
pub fn policy_rate(policy: &LqrPolicy, state: &ExecState) -> f64 {
    assert!(
        state.step < policy.n,
        "bucket {} outside the policy horizon {}",
        state.step,
        policy.n
    );
    let k = policy.k[state.step];
    k[0] * state.p + k[1] * state.q + policy.f[state.step]
}

/// Value function `H(t, X) = X' P_t X + b_t' X + e_t`.
///
/// At the horizon with hard completion this is the exact limit: zero
/// inside the completion tolerance, `+inf` outside.
pub fn value_at(policy: &LqrPolicy, state: &ExecState) -> f64 {
    assert!(state.step <= policy.n, "bucket outside the horizon");
    if policy.hard && state.step == policy.n {
        return if state.q.abs() <= COMPLETION_TOL {
            0.0
        } else {
            f64::INFINITY
        };
    }
    let x = Vector2::new(state.p, state.q);
    let t = state.step;
    (x.transpose() * policy.p[t] * x)[(0, 0)] + policy.b[t].dot(&x) + policy.e[t]
}

impl LqrPolicy {
    /// Policy dump with one row per bucket:
    /// `t,k_p,k_q,f,g,P11,P12,P22,b1,b2,e`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,k_p,k_q,f,g,P11,P12,P22,b1,b2,e\n");
        for t in 0..self.n {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                t as f64 * self.dt,
                self.k[t][0],
                self.k[t][1],
                self.f[t],
                self.g[t],
                self.p[t][(0, 0)],
                self.p[t][(0, 1)],
                self.p[t][(1, 1)],
                self.b[t][0],
                self.b[t][1],
                self.e[t],
            ));
        }
        out
    }

    pub fn is_hard(&self) -> bool {
        self.hard
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn simple_spec(beta_t: TerminalPenalty) -> MarketSpec {
        MarketSpec::uniform(1, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, beta_t)
    }

    #[test]
    fn single_bucket_matches_scalar_argmin() {
        // One bucket, eta=1, a=1: the Bellman problem is
        //   min_u a eta u^2 + a (p+s) u + B (q - a u dt)^2
        // whose minimizer is u* = (2 B q - (p+s)) / (2 (eta + a B dt)).
        let b_t = 3.0;
        let spec = simple_spec(TerminalPenalty::Smooth(b_t));
        let policy = build_policy(&spec).unwrap();
        let state = ExecState {
            step: 0,
            p: 0.2,
            q: 1.0,
        };
        let expected = (2.0 * b_t * 1.0 - 0.2) / (2.0 * (1.0 + b_t));
        assert_relative_eq!(policy_rate(&policy, &state), expected, max_relative = 1e-14);
        assert_relative_eq!(policy_rate(&policy, &state), 0.725, max_relative = 1e-14);

        // Against a brute-force scan of the same objective.
        let objective = |u: f64| {
            spec.stage_cost(&state, u) + spec.terminal_cost(spec.step_state(&state, u, 0.0).q)
        };
        let grid_best = (0..40_001)
            .map(|i| -2.0 + i as f64 * 1e-4)
            .min_by(|x, y| objective(*x).total_cmp(&objective(*y)))
            .unwrap();
        assert_relative_eq!(policy_rate(&policy, &state), grid_best, epsilon = 1e-4);
    }

    #[test]
    fn terminal_conditions() {
        for beta_t in [0.0, 2.5, 17.0] {
            let spec = MarketSpec::uniform(
                3,
                0.5,
                2.0,
                4.0,
                0.3,
                0.05,
                0.01,
                0.1,
                0.4,
                0.02,
                0.6,
                TerminalPenalty::Smooth(beta_t),
            );
            let policy = build_policy(&spec).unwrap();
            assert_eq!(
                policy.p[3],
                Matrix2::new(0.0, 0.0, 0.0, beta_t),
                "P_T must be diag(0, beta_T)"
            );
            assert_eq!(policy.b[3], Vector2::zeros());
            assert_eq!(policy.e[3], 0.0);
        }
    }

    #[test]
    fn almgren_chriss_reduction_zero_price_gain() {
        // kappa = 0, s = 0, alpha = 0, mu = 0 with hard completion: the
        // rate depends on q only.
        let spec = MarketSpec::uniform(
            20,
            0.05,
            1.0,
            1.0,
            0.7,
            0.0,
            0.0,
            0.4,
            0.0,
            0.0,
            1.3,
            TerminalPenalty::Hard,
        );
        let policy = build_policy(&spec).unwrap();
        for t in 0..20 {
            assert_eq!(policy.k[t][0], 0.0, "price gain at bucket {t}");
            assert_eq!(policy.f[t], 0.0);
        }
    }

    #[test]
    fn gains_do_not_depend_on_sigma() {
        let mut spec = MarketSpec::default_desk();
        let base = build_policy(&spec).unwrap();
        for x in spec.sigma.iter_mut() {
            *x *= 2.0;
        }
        let doubled = build_policy(&spec).unwrap();
        for t in 0..spec.n {
            assert_eq!(base.k[t][0].to_bits(), doubled.k[t][0].to_bits());
            assert_eq!(base.k[t][1].to_bits(), doubled.k[t][1].to_bits());
            assert_eq!(base.f[t].to_bits(), doubled.f[t].to_bits());
        }
        // e is where volatility enters.
        assert_ne!(doubled.e[0].to_bits(), base.e[0].to_bits());
    }

    #[test]
    fn symmetry_of_p() {
        let spec = MarketSpec::uniform(
            60,
            1.0 / 60.0,
            3.0,
            5.0,
            0.02,
            0.004,
            1e-3,
            2e-3,
            4.0,
            0.01,
            0.05,
            TerminalPenalty::Smooth(50.0),
        );
        let policy = build_policy(&spec).unwrap();
        for t in 0..=60 {
            let asym = (policy.p[t] - policy.p[t].transpose()).abs().max();
            assert!(asym <= 1e-12, "asymmetry {asym} at bucket {t}");
        }
    }

    #[test]
    fn aggressive_in_the_money_on_default_desk() {
        let spec = MarketSpec::default_desk();
        let policy = build_policy(&spec).unwrap();
        for t in 0..spec.n - 1 {
            assert!(
                policy.k[t][0] < 0.0,
                "price gain {} not negative at bucket {t}",
                policy.k[t][0]
            );
        }
        // Forced completion in the last bucket: no price reaction left.
        assert_eq!(policy.k[spec.n - 1][0], 0.0);
    }

    #[test]
    fn policy_rate_values() {
        let spec = simple_spec(TerminalPenalty::Smooth(1.0));
        let mut policy = build_policy(&spec).unwrap();
        policy.k[0] = Vector2::new(0.0, 0.0);
        policy.f[0] = 0.3;
        let st = ExecState {
            step: 0,
            p: 9.0,
            q: 0.1,
        };
        assert_eq!(policy_rate(&policy, &st), 0.3);

        policy.k[0] = Vector2::new(-2.0, 0.5);
        policy.f[0] = 0.0;
        let st = ExecState {
            step: 0,
            p: 0.01,
            q: 0.8,
        };
        assert_relative_eq!(policy_rate(&policy, &st), 0.38, max_relative = 1e-15);

        // Negative output is legal: the policy is unconstrained.
        policy.k[0] = Vector2::new(-2.0, 0.0);
        let st = ExecState {
            step: 0,
            p: 1.0,
            q: 0.5,
        };
        assert!(policy_rate(&policy, &st) < 0.0);
    }

    #[test]
    fn value_at_terminal_and_centre() {
        let spec = MarketSpec::uniform(
            2,
            0.5,
            1.0,
            1.0,
            0.4,
            0.0,
            0.0,
            0.3,
            0.5,
            0.0,
            0.2,
            TerminalPenalty::Smooth(7.0),
        );
        let policy = build_policy(&spec).unwrap();
        // At the horizon H(T, X) = beta_T q^2 for any p.
        for p in [-0.4, 0.0, 2.0] {
            let st = ExecState {
                step: 2,
                p,
                q: 0.6,
            };
            assert_relative_eq!(value_at(&policy, &st), 7.0 * 0.36, max_relative = 1e-14);
        }
        // At X = 0 the value is the constant e_t.
        let st = ExecState {
            step: 0,
            p: 0.0,
            q: 0.0,
        };
        assert_relative_eq!(value_at(&policy, &st), policy.e[0], max_relative = 1e-14);
    }

    #[test]
    fn dynamic_programming_consistency_sigma_zero() {
        let mut spec = MarketSpec::uniform(
            12,
            0.1,
            2.0,
            6.0,
            0.05,
            0.002,
            1e-3,
            0.0,
            1.5,
            0.03,
            0.4,
            TerminalPenalty::Smooth(9.0),
        );
        spec.validate().unwrap();
        let policy = build_policy(&spec).unwrap();
        let states = [
            (0, 0.01, 1.0),
            (3, -0.04, 0.7),
            (7, 0.09, 0.35),
            (11, -0.02, 0.05),
        ];
        for (step, p, q) in states {
            let st = ExecState { step, p, q };
            let u = policy_rate(&policy, &st);
            let next = spec.step_state(&st, u, 0.0);
            let rhs = spec.stage_cost(&st, u) + value_at(&policy, &next);
            assert_relative_eq!(value_at(&policy, &st), rhs, max_relative = 1e-10);
        }
    }

    #[test]
    fn bellman_optimality_on_perturbations() {
        let spec = MarketSpec::uniform(
            8,
            0.125,
            1.0,
            3.0,
            0.08,
            0.01,
            5e-4,
            0.0,
            2.0,
            0.0,
            0.3,
            TerminalPenalty::Smooth(5.0),
        );
        let policy = build_policy(&spec).unwrap();
        let mut lcg = 123456789u64;
        let mut unif = || {
            lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (lcg >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..40 {
            let step = (unif() * 8.0) as usize;
            let st = ExecState {
                step,
                p: 0.2 * (unif() - 0.5),
                q: unif(),
            };
            let u_star = policy_rate(&policy, &st);
            let best = spec.stage_cost(&st, u_star)
                + value_at(&policy, &spec.step_state(&st, u_star, 0.0));
            for _ in 0..200 {
                let u = u_star + 4.0 * (unif() - 0.5);
                if (u - u_star).abs() < 1e-9 {
                    continue;
                }
                let val =
                    spec.stage_cost(&st, u) + value_at(&policy, &spec.step_state(&st, u, 0.0));
                assert!(
                    val >= best - 1e-12,
                    "perturbation {u} beat the optimum: {val} < {best}"
                );
            }
        }
    }

    #[test]
    fn hard_completion_forces_final_trade() {
        let spec = MarketSpec::uniform(
            5,
            0.2,
            2.0,
            4.0,
            0.1,
            0.01,
            1e-3,
            0.0,
            1.0,
            0.0,
            0.5,
            TerminalPenalty::Hard,
        );
        let policy = build_policy(&spec).unwrap();
        let st = ExecState {
            step: 4,
            p: 0.07,
            q: 0.3,
        };
        let u = policy_rate(&policy, &st);
        let q_t = spec.step_state(&st, u, 0.0).q;
        assert!(q_t.abs() < 1e-15, "q_T = {q_t}");
        assert_eq!(policy.g[4], f64::INFINITY);
    }

    #[test]
    fn degenerate_gain_detected() {
        // Large negative-definite continuation makes g vanish: force it
        // with an absurd permanent impact and zero temporary impact.
        let spec = MarketSpec::uniform(
            2,
            1.0,
            1.0,
            1.0,
            0.0,
            10.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            TerminalPenalty::Smooth(0.0),
        );
        match build_policy(&spec) {
            Err(LqrError::DegenerateGain { .. }) => {}
            other => panic!("expected DegenerateGain, got {other:?}"),
        }
    }
}
