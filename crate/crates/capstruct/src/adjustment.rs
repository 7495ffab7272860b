//! Partial-adjustment estimation with macroeconomic-state dummies: engine
//! dispatch, adjustment speeds, target-equation recovery, and the hypothesis
//! tests on the multiplicative dummies.
//!
//! The estimating equation regresses the debt ratio on its own lag, lagged
//! firm and macro covariates, the recession dummy, and each regressor's
//! interaction with the dummy. The lag coefficient is `delta`; the speed of
//! adjustment is `1 - delta` in the growth state and `1 - (delta + delta_c)`
//! in the recession state. Dividing the remaining coefficients by the speed
//! recovers the target-equation parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ColumnRole, DesignMatrix};
use crate::mean_panel::{self, WaldResult};
use crate::numerics::{Matrix, RandomSource};
use crate::panel_quantreg::{self, PanelQrOptions};

/// Estimation engine for one adjustment fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Engine {
    MeanFe,
    PanelQr {
        tau: f64,
        lambda: f64,
        /// Bootstrap replicates behind the coefficient covariance.
        bootstrap: usize,
    },
}

impl Engine {
    pub fn label(&self) -> String {
        match self {
            Engine::MeanFe => "mean_fe".to_string(),
            Engine::PanelQr { tau, .. } => format!("panel_qr(tau={tau})"),
        }
    }
}

/// Named coefficient block. Keeps `beta`/`beta_c` (and `gamma`/`gamma_c`)
/// name-aligned.
pub type NamedCoefficients = Vec<(String, f64)>;

/// Covariance with its coefficient-name index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedCovariance {
    pub names: Vec<String>,
    pub matrix: Matrix,
}

/// Estimates of the state-dummy model mapped into the model's layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeCoefficients {
    pub source: Engine,
    /// Grand constant (mean engine) or the mean firm intercept (quantile
    /// engine).
    pub a: f64,
    /// Coefficient on the bare recession dummy.
    pub a_c: f64,
    /// Coefficient on the lagged debt ratio.
    pub delta: f64,
    /// Interaction of the lagged debt ratio with the dummy.
    pub delta_c: f64,
    pub beta: NamedCoefficients,
    pub beta_c: NamedCoefficients,
    pub gamma: NamedCoefficients,
    pub gamma_c: NamedCoefficients,
    /// Covariance over every slope coefficient (when the engine provides one).
    pub covariance: Option<NamedCovariance>,
}

impl RegimeCoefficients {
    fn named(&self, name: &str) -> Option<f64> {
        if name == "lag_dr" {
            return Some(self.delta);
        }
        if name == "lag_dr:c" {
            return Some(self.delta_c);
        }
        if name == "c" {
            return Some(self.a_c);
        }
        self.beta
            .iter()
            .chain(&self.beta_c)
            .chain(&self.gamma)
            .chain(&self.gamma_c)
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

/// Adjustment speeds per state: `1 - delta` (growth), `1 - delta - delta_c`
/// (recession).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimates {
    pub good: f64,
    pub bad: f64,
}

/// Target-equation parameters, recovered by rescaling the estimated
/// coefficients by the state's adjustment speed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetModelParams {
    pub a_star: f64,
    pub beta_star: NamedCoefficients,
    pub gamma_star: NamedCoefficients,
}

/// Wald tests on the multiplicative dummies: the lag interaction, each
/// per-coefficient interaction, and the two grouped blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateDummyTests {
    pub delta_c: WaldResult,
    pub beta_c: Vec<(String, WaldResult)>,
    pub gamma_c: Vec<(String, WaldResult)>,
    /// Joint test of every firm-factor interaction.
    pub firm_block: Option<WaldResult>,
    /// Joint test of every macro-factor interaction.
    pub macro_block: Option<WaldResult>,
}

/// Speed floor below which the target-equation inversion is refused.
pub const SPEED_GUARD: f64 = 0.05;

/// Which state a target recovery refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum State {
    Good,
    Bad,
}

fn role_of(design: &DesignMatrix, name: &str) -> Option<ColumnRole> {
    design.column(name).map(|c| c.role)
}

/// Fits the state-dummy model with the requested engine and maps the named
/// coefficients into the model layout. Requires a design built with state
/// dummies and observations in both states.
pub fn fit_adjustment(
    design: &DesignMatrix,
    engine: &Engine,
    rng: &RandomSource,
) -> Result<RegimeCoefficients> {
    if !design.includes_state_dummies() {
        return Err(Error::InvalidConfig {
            message: "adjustment fits need a design built with state dummies".to_string(),
        });
    }
    if !design.has_state_variation() {
        return Err(Error::SingleState {
            context: "the sample needs at least one recession year and one growth year".to_string(),
        });
    }

    let (names, coefs, covariance, a) = match engine {
        Engine::MeanFe => {
            let fit = mean_panel::fit_fixed_effects(design)?;
            let cov = NamedCovariance {
                names: fit.names.clone(),
                matrix: fit.covariance.clone(),
            };
            (
                fit.names.clone(),
                fit.coefficients.clone(),
                Some(cov),
                fit.intercept.unwrap_or(0.0),
            )
        }
        Engine::PanelQr {
            tau,
            lambda,
            bootstrap,
        } => {
            let opts = PanelQrOptions {
                lambda: *lambda,
                bootstrap: *bootstrap,
                ..PanelQrOptions::default()
            };
            let fit = panel_quantreg::fit_panel_quantile(design, *tau, &opts, rng)?;
            let cov = fit.covariance.as_ref().map(|m| NamedCovariance {
                names: fit.slope_names.clone(),
                matrix: m.clone(),
            });
            let mean_alpha = fit.intercepts.iter().sum::<f64>() / fit.intercepts.len() as f64;
            (fit.slope_names.clone(), fit.slopes.clone(), cov, mean_alpha)
        }
    };

    let coefficient = |name: &str| -> Option<f64> {
        names.iter().position(|n| n == name).map(|i| coefs[i])
    };
    let delta = coefficient("lag_dr").ok_or_else(|| Error::UnknownCoefficient {
        name: "lag_dr".to_string(),
    })?;
    let delta_c = coefficient("lag_dr:c").ok_or_else(|| Error::UnknownCoefficient {
        name: "lag_dr:c".to_string(),
    })?;
    let a_c = coefficient("c").unwrap_or(0.0);

    let mut beta = Vec::new();
    let mut beta_c = Vec::new();
    let mut gamma = Vec::new();
    let mut gamma_c = Vec::new();
    for (name, value) in names.iter().zip(&coefs) {
        match role_of(design, name) {
            Some(ColumnRole::FirmFactor) => beta.push((name.clone(), *value)),
            Some(ColumnRole::MacroFactor) => gamma.push((name.clone(), *value)),
            Some(ColumnRole::FirmInteraction) => beta_c.push((name.clone(), *value)),
            Some(ColumnRole::MacroInteraction) => gamma_c.push((name.clone(), *value)),
            _ => {}
        }
    }
    // Interaction blocks mirror their parents even if the estimator dropped
    // a column (a dropped parent drops the interaction from the report too).
    beta.retain(|(n, _)| beta_c.iter().any(|(m, _)| m == &format!("{n}:c")));
    gamma.retain(|(n, _)| gamma_c.iter().any(|(m, _)| m == &format!("{n}:c")));
    beta_c.retain(|(n, _)| beta.iter().any(|(m, _)| format!("{m}:c") == *n));
    gamma_c.retain(|(n, _)| gamma.iter().any(|(m, _)| format!("{m}:c") == *n));

    Ok(RegimeCoefficients {
        source: engine.clone(),
        a,
        a_c,
        delta,
        delta_c,
        beta,
        beta_c,
        gamma,
        gamma_c,
        covariance,
    })
}

/// `speed_good = 1 - delta`, `speed_bad = 1 - (delta + delta_c)`.
pub fn adjustment_speeds(rc: &RegimeCoefficients) -> SpeedEstimates {
    SpeedEstimates {
        good: 1.0 - rc.delta,
        bad: 1.0 - (rc.delta + rc.delta_c),
    }
}

/// Divides the state's coefficients by its speed to recover the target
/// equation. Refused when the speed is at or below the guard.
pub fn recover_targets(rc: &RegimeCoefficients, state: State) -> Result<TargetModelParams> {
    let speeds = adjustment_speeds(rc);
    let speed = match state {
        State::Good => speeds.good,
        State::Bad => speeds.bad,
    };
    if speed <= SPEED_GUARD {
        return Err(Error::SpeedTooSmall {
            speed,
            guard: SPEED_GUARD,
        });
    }
    let combine = |base: &NamedCoefficients, inter: &NamedCoefficients| -> NamedCoefficients {
        base.iter()
            .map(|(name, v)| {
                let shift = match state {
                    State::Good => 0.0,
                    State::Bad => inter
                        .iter()
                        .find(|(m, _)| m == &format!("{name}:c"))
                        .map(|(_, w)| *w)
                        .unwrap_or(0.0),
                };
                (name.clone(), (v + shift) / speed)
            })
            .collect()
    };
    let a_state = match state {
        State::Good => rc.a,
        State::Bad => rc.a + rc.a_c,
    };
    Ok(TargetModelParams {
        a_star: a_state / speed,
        beta_star: combine(&rc.beta, &rc.beta_c),
        gamma_star: combine(&rc.gamma, &rc.gamma_c),
    })
}

/// Wald tests on the multiplicative dummies: individual tests for the lag
/// interaction and each interaction coefficient, plus grouped firm-block and
/// macro-block tests. Needs the fit's covariance.
pub fn test_state_dummies(rc: &RegimeCoefficients) -> Result<StateDummyTests> {
    let cov = rc.covariance.as_ref().ok_or_else(|| Error::MissingCovariance {
        context: format!(
            "state-dummy tests need a coefficient covariance (engine {})",
            rc.source.label()
        ),
    })?;
    let coefs: Vec<f64> = cov
        .names
        .iter()
        .map(|n| {
            rc.named(n).ok_or_else(|| Error::UnknownCoefficient {
                name: n.clone(),
            })
        })
        .collect::<Result<_>>()?;

    let test = |subset: &[&str]| -> Result<WaldResult> {
        mean_panel::wald_quadratic(&cov.names, &coefs, &cov.matrix, subset)
    };

    let delta_c = test(&["lag_dr:c"])?;
    let mut beta_c = Vec::new();
    for (name, _) in &rc.beta_c {
        beta_c.push((name.clone(), test(&[name.as_str()])?));
    }
    let mut gamma_c = Vec::new();
    for (name, _) in &rc.gamma_c {
        gamma_c.push((name.clone(), test(&[name.as_str()])?));
    }
    let firm_block = if rc.beta_c.is_empty() {
        None
    } else {
        let names: Vec<&str> = rc.beta_c.iter().map(|(n, _)| n.as_str()).collect();
        Some(test(&names)?)
    };
    let macro_block = if rc.gamma_c.is_empty() {
        None
    } else {
        let names: Vec<&str> = rc.gamma_c.iter().map(|(n, _)| n.as_str()).collect();
        Some(test(&names)?)
    };
    Ok(StateDummyTests {
        delta_c,
        beta_c,
        gamma_c,
        firm_block,
        macro_block,
    })
}

/// One engine's results inside an adjustment report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdjustmentCell {
    pub engine: Engine,
    pub outcome: CellOutcome,
}

/// Fit outcome for one report cell; estimation failures are recorded, not
/// propagated, so one bad quantile does not sink the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Fitted(Box<FittedCell>),
    Failed { error: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedCell {
    pub coefficients: RegimeCoefficients,
    pub speeds: SpeedEstimates,
    /// Absent when the state's speed is at or below the inversion guard.
    pub targets_good: Option<TargetModelParams>,
    pub targets_bad: Option<TargetModelParams>,
    /// Absent when the engine supplies no covariance.
    pub tests: Option<StateDummyTests>,
}

/// Per-leverage-form estimation summary: one cell per engine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdjustmentReport {
    pub leverage: crate::features::LeverageForm,
    pub tau_grid: Vec<f64>,
    pub cells: Vec<AdjustmentCell>,
    pub notes: Vec<String>,
}

/// Standing advisory attached to every adjustment report.
pub const LAGGED_FE_BIAS_NOTE: &str = "fixed-effects estimation with a lagged dependent variable carries O(1/T) small-sample bias; estimates are reported without correction";

/// Note attached whenever a quantile cell carries bootstrap-based tests.
pub const QR_BOOTSTRAP_SE_NOTE: &str =
    "quantile-engine covariances come from a pairs bootstrap over firms";

fn fit_cell(design: &DesignMatrix, engine: &Engine, rng: &RandomSource) -> CellOutcome {
    match fit_adjustment(design, engine, rng) {
        Err(e) => CellOutcome::Failed {
            error: e.to_string(),
        },
        Ok(coefficients) => {
            let speeds = adjustment_speeds(&coefficients);
            let targets_good = recover_targets(&coefficients, State::Good).ok();
            let targets_bad = recover_targets(&coefficients, State::Bad).ok();
            let tests = if coefficients.covariance.is_some() {
                test_state_dummies(&coefficients).ok()
            } else {
                None
            };
            CellOutcome::Fitted(Box::new(FittedCell {
                coefficients,
                speeds,
                targets_good,
                targets_bad,
                tests,
            }))
        }
    }
}

/// Runs every engine on the same design and assembles the report. Cells are
/// independent (each gets a child seed by position) and may run
/// concurrently; output order follows `engines`.
pub fn build_adjustment_report(
    design: &DesignMatrix,
    engines: &[Engine],
    rng: &RandomSource,
) -> AdjustmentReport {
    let cells = crate::exec::map_indexed(engines.len(), |i| AdjustmentCell {
        engine: engines[i].clone(),
        outcome: fit_cell(design, &engines[i], &rng.child(i as u64)),
    });
    let tau_grid: Vec<f64> = engines
        .iter()
        .filter_map(|e| match e {
            Engine::PanelQr { tau, .. } => Some(*tau),
            Engine::MeanFe => None,
        })
        .collect();
    let mut notes = vec![LAGGED_FE_BIAS_NOTE.to_string()];
    if engines
        .iter()
        .any(|e| matches!(e, Engine::PanelQr { bootstrap, .. } if *bootstrap > 0))
    {
        notes.push(QR_BOOTSTRAP_SE_NOTE.to_string());
    }
    AdjustmentReport {
        leverage: design.leverage(),
        tau_grid,
        cells,
        notes,
    }
}
