//! Post-hoc checks of ADMM trajectories: sufficient decrease of the
//! augmented Lagrangian, the dual/primal step link, a bounded ratio of
//! stationarity to step length, and a Q-linear rate fit of the distance to
//! the limit.

use serde::Serialize;

use crate::consensus::{ConsensusResult, Trajectory};
use crate::error::{shape, Result};
use crate::objectives::{constants_for, ConsensusObjective, ObjectiveConstants};
use crate::operators::{range_spectrum, OperatorSpectrum};

/// Allowed violation `abs + rel · |L_c^k|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Slack {
    pub abs: f64,
    pub rel: f64,
}

impl Slack {
    /// Plain monotonicity.
    pub const MONOTONE: Slack = Slack {
        abs: 1e-8,
        rel: 0.0,
    };
    /// Full decrease inequality, loose enough for inexact inner solves.
    pub const DECREASE: Slack = Slack {
        abs: 1e-7,
        rel: 1e-7,
    };

    pub fn at(&self, l: f64) -> f64 {
        self.abs + self.rel * l.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecreaseMode {
    /// Right-hand side built from the problem constants.
    Full,
    /// Constants unavailable; right-hand side is zero.
    Monotone,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecreaseStep {
    /// Iteration index `k` of the pair `(k, k+1)`.
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecreaseCheck {
    pub mode: DecreaseMode,
    pub steps: Vec<DecreaseStep>,
}

impl DecreaseCheck {
    /// Fraction of passing steps; 1 when there is nothing to check.
    pub fn pass_rate(&self) -> f64 {
        if self.steps.is_empty() {
            return 1.0;
        }
        self.steps.iter().filter(|s| s.pass).count() as f64 / self.steps.len() as f64
    }

    pub fn all_pass(&self) -> bool {
        self.steps.iter().all(|s| s.pass)
    }

    pub fn worst(&self) -> Option<&DecreaseStep> {
        self.steps
            .iter()
            .min_by(|a, b| (a.lhs - a.rhs).total_cmp(&(b.lhs - b.rhs)))
    }
}

/// Per-view coefficient `c/(2M_i²) − λ_i² L_i² / (c μ_i²)` of `‖Δp_i‖²` and
/// the coefficient `(cV − σ_G)/2` of `‖Δq‖²`.
pub fn decrease_coefficients(
    constants: &ObjectiveConstants,
    spectra: &[OperatorSpectrum],
    c: f64,
) -> Result<(Vec<f64>, f64)> {
    if spectra.len() != constants.num_views {
        return Err(shape(format!(
            "{} spectra for {} views",
            spectra.len(),
            constants.num_views
        )));
    }
    let per_view = spectra
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let m = constants.lipschitz[i];
            let l = constants.smoothness[i];
            c / (2.0 * m * m) - (s.lambda_a * l).powi(2) / (c * s.mu_aat * s.mu_aat)
        })
        .collect();
    let q = (c * constants.num_views as f64 - constants.sigma_g) / 2.0;
    Ok((per_view, q))
}

/// Checks `L_c^k − L_c^{k+1} ≥ rhs − slack` for every `k ≥ 1` (the first
/// iteration leaves the arbitrary initial point and is skipped). Without
/// constants the right-hand side is zero, i.e. plain monotonicity.
pub fn check_sufficient_decrease(
    trajectory: &Trajectory,
    bound: Option<(&ObjectiveConstants, &[OperatorSpectrum])>,
    c: f64,
    slack: Slack,
) -> Result<DecreaseCheck> {
    let coeffs = bound
        .map(|(k, s)| decrease_coefficients(k, s, c))
        .transpose()?;
    let ls = trajectory.lagrangians();
    let mut steps = Vec::new();
    for k in 1..ls.len().saturating_sub(1) {
        let lhs = ls[k] - ls[k + 1];
        let rhs = match &coeffs {
            Some((pv, qc)) => {
                let r = &trajectory.records[k];
                pv.iter().zip(&r.dp).map(|(a, d)| a * d * d).sum::<f64>() + qc * r.dq * r.dq
            }
            None => 0.0,
        };
        steps.push(DecreaseStep {
            k,
            lhs,
            rhs,
            pass: lhs >= rhs - slack.at(ls[k]),
        });
    }
    Ok(DecreaseCheck {
        mode: if coeffs.is_some() {
            DecreaseMode::Full
        } else {
            DecreaseMode::Monotone
        },
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualLinkCheck {
    /// Largest projected residual of the first-order condition of `F_i`.
    pub max_residual: f64,
    /// Per-view bound `λ_i L_i / μ_i` on `‖Δν_i‖ / ‖Δp_i‖`.
    pub ratio_bound: Vec<f64>,
    pub max_ratio: Vec<f64>,
    /// Iterations where some view exceeded its ratio bound.
    pub violations: usize,
    pub checked: usize,
}

impl DualLinkCheck {
    pub fn ratio_holds(&self) -> bool {
        self.violations == 0
    }
}

/// Dual-link residuals and the dual/primal step ratio. Steps with
/// `‖Δp_i‖` below `min_step` are skipped in the ratio test since the ratio
/// is then dominated by inner-solve noise.
pub fn check_dual_link(
    trajectory: &Trajectory,
    constants: &ObjectiveConstants,
    spectra: &[OperatorSpectrum],
    min_step: f64,
) -> Result<DualLinkCheck> {
    if spectra.len() != constants.num_views {
        return Err(shape(format!(
            "{} spectra for {} views",
            spectra.len(),
            constants.num_views
        )));
    }
    let bound: Vec<f64> = spectra
        .iter()
        .enumerate()
        .map(|(i, s)| s.lambda_a * constants.smoothness[i] / s.mu_aat)
        .collect();
    let mut max_ratio = vec![0.0_f64; bound.len()];
    let mut max_residual = 0.0_f64;
    let mut violations = 0;
    let mut checked = 0;
    for r in &trajectory.records {
        max_residual = r.dual_link.iter().copied().fold(max_residual, f64::max);
        let mut bad = false;
        let mut any = false;
        for i in 0..bound.len() {
            if r.dp[i] <= min_step {
                continue;
            }
            any = true;
            let ratio = r.dnu[i] / r.dp[i];
            max_ratio[i] = max_ratio[i].max(ratio);
            bad |= ratio > bound[i] * (1.0 + 1e-9);
        }
        checked += usize::from(any);
        violations += usize::from(bad);
    }
    Ok(DualLinkCheck {
        max_residual,
        ratio_bound: bound,
        max_ratio,
        violations,
        checked,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RateEstimate {
    Fit {
        q: f64,
        r2: f64,
        /// Iteration range `[start, end)` used for the fit.
        start: usize,
        end: usize,
    },
    Inconclusive {
        reason: String,
    },
}

impl RateEstimate {
    pub fn q(&self) -> Option<f64> {
        match self {
            RateEstimate::Fit { q, .. } => Some(*q),
            RateEstimate::Inconclusive { .. } => None,
        }
    }

    pub fn r2(&self) -> Option<f64> {
        match self {
            RateEstimate::Fit { r2, .. } => Some(*r2),
            RateEstimate::Inconclusive { .. } => None,
        }
    }

    /// `Q ∈ (0, 1)` with `R² ≥ min_r2`.
    pub fn is_linear(&self, min_r2: f64) -> bool {
        matches!(self, RateEstimate::Fit { q, r2, .. } if *q > 0.0 && *q < 1.0 && *r2 >= min_r2)
    }
}

/// Minimum number of points in a rate fit.
pub const MIN_RATE_POINTS: usize = 10;

/// Fits `ln d_k ≈ a + k ln Q` over the tail of `distances` (distance of
/// iterate `k` to the final one). The last 3 points are dropped because
/// they are too close to the proxy limit; points at or below `10 · eps`
/// are dropped as round-off; the fit uses the latter half of what remains.
pub fn estimate_rate(distances: &[f64]) -> RateEstimate {
    let usable = distances.len().saturating_sub(3);
    let floor = 10.0 * f64::EPSILON;
    let mut end = usable;
    // Trailing points lost in round-off.
    while end > 0 && !(distances[end - 1] > floor) {
        end -= 1;
    }
    let start_all = distances[..end]
        .iter()
        .rposition(|&d| !(d > floor))
        .map_or(0, |i| i + 1);
    let start = start_all + (end - start_all) / 2;
    if end - start < MIN_RATE_POINTS {
        return RateEstimate::Inconclusive {
            reason: format!("only {} usable tail points", end.saturating_sub(start)),
        };
    }
    let xs: Vec<f64> = (start..end).map(|k| k as f64).collect();
    let ys: Vec<f64> = distances[start..end].iter().map(|d| d.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    if syy <= f64::EPSILON * n || slope >= 0.0 {
        return RateEstimate::Inconclusive {
            reason: format!("no contraction in the tail (slope {slope:e})"),
        };
    }
    let r2 = (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0);
    RateEstimate::Fit {
        q: slope.exp(),
        r2,
        start,
        end,
    }
}

/// Sup over the run of a stationarity measure of `L_c` divided by the step
/// length. The measure combines the projected primal residuals after the
/// dual step with the constraint residuals `‖Δν_i‖ / c`; `q` is exactly
/// optimal after its own update. Steps shorter than `min_step` are skipped.
pub fn gradient_ratio(traj: &Trajectory, c: f64, min_step: f64) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    traj.records
        .iter()
        .filter_map(|r| {
            let step = (sq(&r.dp) + r.dq * r.dq + sq(&r.dnu)).sqrt();
            (step > min_step).then(|| (sq(&r.dual_link) + sq(&r.dnu) / (c * c)).sqrt() / step)
        })
        .fold(0.0, f64::max)
}

/// Per-run summary written to diagnostics outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticSummary {
    pub monotone_pass_rate: f64,
    /// Latest iteration whose `L_c` increase exceeded the monotone slack.
    pub last_monotone_violation: Option<usize>,
    pub lemma3_pass_rate: f64,
    pub dual_link_max_residual: f64,
    pub dual_ratio_violations: usize,
    #[serde(rename = "Q")]
    pub q: Option<f64>,
    #[serde(rename = "R2")]
    pub r2: Option<f64>,
    /// Range-restricted penalty bound the run is compared against.
    pub penalty_bound: f64,
    /// Largest `‖∇L_c^k‖ / ‖w^k − w^{k−1}‖` seen; logged, not asserted.
    pub gradient_ratio_max: f64,
    pub rate: RateEstimate,
}

impl DiagnosticSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }
}

/// Runs every check on a finished consensus run.
pub fn diagnose(
    objective: &ConsensusObjective,
    result: &ConsensusResult,
    c: f64,
    eps: f64,
) -> Result<DiagnosticSummary> {
    let constants = constants_for(objective, eps)?;
    let spectra = objective
        .operators()
        .iter()
        .map(range_spectrum)
        .collect::<Result<Vec<_>>>()?;
    let traj = &result.trajectory;
    let monotone = check_sufficient_decrease(traj, None, c, Slack::MONOTONE)?;
    let full = check_sufficient_decrease(traj, Some((&constants, &spectra)), c, Slack::DECREASE)?;
    let link = check_dual_link(traj, &constants, &spectra, 1e-12)?;
    let rate = if result.converged {
        estimate_rate(&traj.distance_to_limit)
    } else {
        RateEstimate::Inconclusive {
            reason: "run did not converge".into(),
        }
    };
    Ok(DiagnosticSummary {
        monotone_pass_rate: monotone.pass_rate(),
        last_monotone_violation: monotone.steps.iter().filter(|s| !s.pass).map(|s| s.k).max(),
        lemma3_pass_rate: full.pass_rate(),
        dual_link_max_residual: link.max_residual,
        dual_ratio_violations: link.violations,
        q: rate.q(),
        r2: rate.r2(),
        penalty_bound: crate::objectives::penalty_lower_bound_on_range(&constants, &spectra)?,
        gradient_ratio_max: gradient_ratio(traj, c, 1e-12),
        rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::IterationRecord;

    fn record(l: f64) -> IterationRecord {
        IterationRecord {
            lagrangian: l,
            tv: vec![0.0],
            dp: vec![0.0],
            dq: 0.0,
            dnu: vec![0.0],
            dual_link: vec![0.0],
            inner_steps: 0,
            inner_incomplete: false,
        }
    }

    fn trajectory(ls: &[f64]) -> Trajectory {
        Trajectory {
            initial_lagrangian: ls[0],
            records: ls[1..].iter().map(|&l| record(l)).collect(),
            distance_to_final: vec![0.0; ls.len()],
            distance_to_limit: vec![0.0; ls.len()],
            tail_ratio: None,
        }
    }

    #[test]
    fn gradient_ratio_skips_null_steps() {
        let mut t = trajectory(&[0.0, 0.0, 0.0]);
        t.records[0].dp = vec![2.0];
        t.records[0].dual_link = vec![1.0];
        t.records[0].dnu = vec![0.0];
        assert_eq!(gradient_ratio(&t, 64.0, 1e-12), 0.5);
        t.records[0].dnu = vec![64.0];
        let expected = (1.0f64 + 1.0).sqrt() / (4.0f64 + 64.0 * 64.0).sqrt();
        assert!((gradient_ratio(&t, 64.0, 1e-12) - expected).abs() < 1e-15);
    }

    #[test]
    fn geometric_sequence_rate() {
        let d: Vec<f64> = (0..40).map(|k| 0.5_f64.powi(k)).collect();
        let r = estimate_rate(&d);
        assert!((r.q().unwrap() - 0.5).abs() < 1e-12);
        assert!((r.r2().unwrap() - 1.0).abs() < 1e-12);
        assert!(r.is_linear(0.9));
    }

    #[test]
    fn constant_sequence_is_inconclusive() {
        assert!(matches!(
            estimate_rate(&[1.0; 50]),
            RateEstimate::Inconclusive { .. }
        ));
    }

    #[test]
    fn short_sequence_is_inconclusive() {
        let d: Vec<f64> = (0..12).map(|k| 0.5_f64.powi(k)).collect();
        assert!(matches!(
            estimate_rate(&d),
            RateEstimate::Inconclusive { .. }
        ));
    }

    #[test]
    fn round_off_tail_is_dropped() {
        let mut d: Vec<f64> = (0..40).map(|k| 0.7_f64.powi(k)).collect();
        d.extend([1e-17, 0.0, 0.0, 0.0, 0.0]);
        let r = estimate_rate(&d);
        assert!((r.q().unwrap() - 0.7).abs() < 1e-10);
    }

    #[test]
    fn stationary_trajectory_passes() {
        let t = trajectory(&[3.0, 1.0, 1.0, 1.0, 1.0]);
        let c = check_sufficient_decrease(&t, None, 64.0, Slack::MONOTONE).unwrap();
        assert_eq!(c.mode, DecreaseMode::Monotone);
        assert_eq!(c.steps.len(), 3);
        assert!(c.all_pass());
    }

    #[test]
    fn increase_is_caught_but_first_step_is_skipped() {
        let t = trajectory(&[0.0, 1.0, 0.5, 0.6, 0.4]);
        let c = check_sufficient_decrease(&t, None, 64.0, Slack::MONOTONE).unwrap();
        assert_eq!(c.steps.len(), 3);
        assert!(!c.steps[1].pass);
        assert!((c.pass_rate() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.worst().unwrap().k, 2);
    }

    #[test]
    fn slack_scales_with_magnitude() {
        assert_eq!(Slack::MONOTONE.at(1e6), 1e-8);
        assert!((Slack::DECREASE.at(10.0) - 1.1e-6).abs() < 1e-18);
    }
}
