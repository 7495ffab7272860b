//! Synthetic partial-adjustment panels with known parameters: the
//! ground-truth oracle for every estimator.
//!
//! The target debt ratio is `a* + a*_i + beta*'X_{t-1} + gamma*'M_{t-1}`; the
//! observed ratio closes a state-dependent fraction of the gap each year,
//! plus noise. Firm covariates are stationary AR(1) paths around a firm mean
//! that can be correlated with the firm effect (making random effects
//! inconsistent on demand). Two emission modes: a ready-made design matrix,
//! and raw balance-sheet CSV-compatible records for end-to-end pipeline
//! tests.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::adjustment::SpeedEstimates;
use crate::error::{Error, Result};
use crate::exec;
use crate::features::{
    compute_firm_factors, compute_macro_factors, ColumnRole, DesignColumn, DesignMatrix,
    LeverageForm,
};
use crate::numerics::{normal_quantile, student_t3_quantile, RandomSource};
use crate::panel_store::{FirmId, FirmYearRecord, MacroYearRecord};

/// Shock distribution for the adjustment errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDistribution {
    #[default]
    Normal,
    /// Student-t with 3 degrees of freedom.
    HeavyTailed,
}

/// Recession-year pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecessionPattern {
    /// Explicit set of recession calendar years.
    Years { years: BTreeSet<i32> },
    /// The state flips each year with this probability (starts in growth).
    Markov { switch_prob: f64 },
}

impl Default for RecessionPattern {
    fn default() -> Self {
        RecessionPattern::Years { years: BTreeSet::new() }
    }
}

/// Ground-truth parameters of the generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n_firms: usize,
    pub n_years: usize,
    /// Adjustment speed in the growth state, in (0, 1].
    pub speed: f64,
    /// Added to the speed in recession years.
    pub speed_shift_bad: f64,
    /// Target-equation constant.
    pub a_star: f64,
    /// Target coefficients of the firm covariates (their count sets K).
    pub beta_star: Vec<f64>,
    /// Target coefficients of the macro covariates (their count sets J).
    pub gamma_star: Vec<f64>,
    /// Firm-effect spread.
    pub sigma_alpha: f64,
    /// Correlation between the firm effect and the firm's covariate mean.
    pub rho: f64,
    /// Error scale.
    pub sigma_eps: f64,
    pub error_distribution: ErrorDistribution,
    /// When set, errors are re-centered so their tau-quantile is zero.
    pub error_center_tau: Option<f64>,
    pub recession: RecessionPattern,
    /// AR(1) persistence of the covariate paths.
    pub covariate_persistence: f64,
    pub start_year: i32,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n_firms: 100,
            n_years: 20,
            speed: 0.4,
            speed_shift_bad: 0.0,
            a_star: 0.3,
            beta_star: vec![0.5],
            gamma_star: vec![0.3],
            sigma_alpha: 0.1,
            rho: 0.0,
            sigma_eps: 0.02,
            error_distribution: ErrorDistribution::Normal,
            error_center_tau: None,
            recession: RecessionPattern::default(),
            covariate_persistence: 0.5,
            start_year: 2000,
            seed: 1,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_firms < 2 {
            problems.push("n_firms must be at least 2".to_string());
        }
        if self.n_years < 3 {
            problems.push("n_years must be at least 3".to_string());
        }
        if !(self.speed > 0.0 && self.speed <= 1.0) {
            problems.push(format!("speed must lie in (0, 1], got {}", self.speed));
        }
        let bad = self.speed + self.speed_shift_bad;
        if !(bad > 0.0 && bad <= 1.0) {
            problems.push(format!("bad-state speed must lie in (0, 1], got {bad}"));
        }
        if self.sigma_alpha < 0.0 || self.sigma_eps < 0.0 {
            problems.push("scale parameters must be nonnegative".to_string());
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            problems.push(format!("rho must lie in [-1, 1], got {}", self.rho));
        }
        if !(0.0..1.0).contains(&self.covariate_persistence) {
            problems.push(format!(
                "covariate persistence must lie in [0, 1), got {}",
                self.covariate_persistence
            ));
        }
        if let RecessionPattern::Markov { switch_prob } = &self.recession {
            if !(0.0..=1.0).contains(switch_prob) {
                problems.push(format!("switch probability must lie in [0, 1], got {switch_prob}"));
            }
        }
        if let Some(tau) = self.error_center_tau {
            if !(tau > 0.0 && tau < 1.0) {
                problems.push(format!("error_center_tau must lie in (0, 1), got {tau}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig {
                message: problems.join("; "),
            })
        }
    }

    fn speed_in(&self, recession: bool) -> f64 {
        if recession {
            self.speed + self.speed_shift_bad
        } else {
            self.speed
        }
    }

    /// Shift subtracted from raw error draws so the configured quantile of
    /// the error distribution is zero.
    fn error_offset(&self) -> f64 {
        match self.error_center_tau {
            None => 0.0,
            Some(tau) => match self.error_distribution {
                ErrorDistribution::Normal => normal_quantile(tau),
                ErrorDistribution::HeavyTailed => student_t3_quantile(tau),
            },
        }
    }
}

/// Ground-truth record stored with each simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpTruth {
    pub config: DgpConfig,
    pub speeds: SpeedEstimates,
    /// Lag coefficient in the growth state: `1 - speed_good`.
    pub lag_coef_good: f64,
    /// Lag-interaction coefficient: `speed_good - speed_bad`.
    pub delta_c: f64,
    /// Estimating-equation firm coefficients in the growth state.
    pub beta_good: Vec<f64>,
    pub gamma_good: Vec<f64>,
    pub recession_years: Vec<i32>,
}

/// A generated panel in design form plus its truth record.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub design: DesignMatrix,
    pub truth: DgpTruth,
}

/// A generated panel in raw balance-sheet form plus its truth record.
#[derive(Debug, Clone)]
pub struct RawSimulation {
    pub records: Vec<FirmYearRecord>,
    pub macro_series: Vec<MacroYearRecord>,
    pub truth: DgpTruth,
}

/// The configured speeds in the estimators' reporting shape.
pub fn true_speeds(cfg: &DgpConfig) -> SpeedEstimates {
    SpeedEstimates {
        good: cfg.speed,
        bad: cfg.speed + cfg.speed_shift_bad,
    }
}

/// One adjustment step: the ratio closes `speed` of the gap to the target.
pub fn adjustment_step(dr_prev: f64, target: f64, speed: f64, shock: f64) -> f64 {
    dr_prev + speed * (target - dr_prev) + shock
}

/// Recession state per year index 1..=T.
fn simulate_states(cfg: &DgpConfig, rng: &RandomSource) -> Vec<bool> {
    match &cfg.recession {
        RecessionPattern::Years { years } => (1..=cfg.n_years)
            .map(|t| years.contains(&(cfg.start_year + t as i32 - 1)))
            .collect(),
        RecessionPattern::Markov { switch_prob } => {
            let mut r = rng.child(0);
            let mut state = false;
            (1..=cfg.n_years)
                .map(|_| {
                    if r.uniform() < *switch_prob {
                        state = !state;
                    }
                    state
                })
                .collect()
        }
    }
}

/// Stationary AR(1) path of unit variance, length `len`.
fn ar1_path(rng: &mut RandomSource, phi: f64, len: usize) -> Vec<f64> {
    let innovation = (1.0 - phi * phi).sqrt();
    let mut path = Vec::with_capacity(len);
    let mut prev = rng.normal(0.0, 1.0);
    path.push(prev);
    for _ in 1..len {
        prev = phi * prev + innovation * rng.normal(0.0, 1.0);
        path.push(prev);
    }
    path
}

/// Macro covariate paths, `[j][t-1]` for t = 1..=T.
fn simulate_macro(cfg: &DgpConfig) -> Vec<Vec<f64>> {
    let mut r = RandomSource::new(cfg.seed).child(1);
    (0..cfg.gamma_star.len())
        .map(|_| ar1_path(&mut r, cfg.covariate_persistence, cfg.n_years))
        .collect()
}

struct FirmPath {
    /// `[t-1][k]` covariates for t = 1..=T.
    x: Vec<Vec<f64>>,
    /// Debt-ratio path for t = 1..=T.
    dr: Vec<f64>,
}

fn draw_error(cfg: &DgpConfig, r: &mut RandomSource, offset: f64) -> f64 {
    let raw = match cfg.error_distribution {
        ErrorDistribution::Normal => r.normal(0.0, 1.0),
        ErrorDistribution::HeavyTailed => r.student_t(3.0),
    };
    cfg.sigma_eps * (raw - offset)
}

/// One firm's covariates and debt-ratio path, from its own child seed.
fn simulate_firm(
    cfg: &DgpConfig,
    firm_index: usize,
    states: &[bool],
    macro_vals: &[Vec<f64>],
) -> FirmPath {
    let mut r = RandomSource::new(cfg.seed).child(2 + firm_index as u64);
    let k = cfg.beta_star.len();
    let t_len = cfg.n_years;
    let offset = cfg.error_offset();

    let mean = r.normal(0.0, 1.0);
    let eta = r.normal(0.0, 1.0);
    let alpha = cfg.sigma_alpha * (cfg.rho * mean + (1.0 - cfg.rho * cfg.rho).sqrt() * eta);

    let mut x = vec![vec![0.0; k]; t_len];
    for kk in 0..k {
        let path = ar1_path(&mut r, cfg.covariate_persistence, t_len);
        for (t, v) in path.into_iter().enumerate() {
            x[t][kk] = mean + v;
        }
    }

    // Stationary start: the target at the firm's covariate means (macro
    // covariates are mean zero).
    let stationary = cfg.a_star + alpha + cfg.beta_star.iter().sum::<f64>() * mean;
    let mut dr = Vec::with_capacity(t_len);
    dr.push(stationary);
    for t in 2..=t_len {
        let target = cfg.a_star
            + alpha
            + cfg
                .beta_star
                .iter()
                .zip(&x[t - 2])
                .map(|(b, v)| b * v)
                .sum::<f64>()
            + cfg
                .gamma_star
                .iter()
                .enumerate()
                .map(|(j, g)| g * macro_vals[j][t - 2])
                .sum::<f64>();
        let shock = draw_error(cfg, &mut r, offset);
        let speed = cfg.speed_in(states[t - 1]);
        dr.push(adjustment_step(dr[t - 2], target, speed, shock));
    }
    FirmPath { x, dr }
}

fn truth_record(cfg: &DgpConfig, states: &[bool]) -> DgpTruth {
    let speeds = true_speeds(cfg);
    DgpTruth {
        config: cfg.clone(),
        speeds,
        lag_coef_good: 1.0 - speeds.good,
        delta_c: speeds.good - speeds.bad,
        beta_good: cfg.beta_star.iter().map(|b| b * speeds.good).collect(),
        gamma_good: cfg.gamma_star.iter().map(|g| g * speeds.good).collect(),
        recession_years: states
            .iter()
            .enumerate()
            .filter(|(_, s)| **s)
            .map(|(t, _)| cfg.start_year + t as i32)
            .collect(),
    }
}

fn firm_id(i: usize) -> FirmId {
    FirmId(format!("F{i:05}"))
}

/// Generates a panel and emits it directly as a state-dummy design matrix
/// (columns `lag_dr`, `x1..xK`, `m1..mJ`, `c`, and the interactions).
/// Regenerating with the same config reproduces identical data.
pub fn simulate_panel(cfg: &DgpConfig) -> Result<SimulatedPanel> {
    cfg.validate()?;
    let master = RandomSource::new(cfg.seed);
    let states = simulate_states(cfg, &master);
    let macro_vals = simulate_macro(cfg);
    let firms = exec::map_indexed(cfg.n_firms, |i| simulate_firm(cfg, i, &states, &macro_vals));

    let k = cfg.beta_star.len();
    let j = cfg.gamma_star.len();
    let mut keys = Vec::new();
    let mut y = Vec::new();
    let mut state_col = Vec::new();
    let mut lag = Vec::new();
    let mut x_cols: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut m_cols: Vec<Vec<f64>> = vec![Vec::new(); j];
    for (i, firm) in firms.iter().enumerate() {
        for t in 2..=cfg.n_years {
            keys.push((firm_id(i), cfg.start_year + t as i32 - 1));
            y.push(firm.dr[t - 1]);
            lag.push(firm.dr[t - 2]);
            state_col.push(if states[t - 1] { 1.0 } else { 0.0 });
            for kk in 0..k {
                x_cols[kk].push(firm.x[t - 2][kk]);
            }
            for jj in 0..j {
                m_cols[jj].push(macro_vals[jj][t - 2]);
            }
        }
    }

    let mut columns = vec![DesignColumn {
        name: "lag_dr".to_string(),
        role: ColumnRole::LagDr,
        values: lag,
    }];
    for (kk, values) in x_cols.into_iter().enumerate() {
        columns.push(DesignColumn {
            name: format!("x{}", kk + 1),
            role: ColumnRole::FirmFactor,
            values,
        });
    }
    for (jj, values) in m_cols.into_iter().enumerate() {
        columns.push(DesignColumn {
            name: format!("m{}", jj + 1),
            role: ColumnRole::MacroFactor,
            values,
        });
    }
    columns.push(DesignColumn {
        name: "c".to_string(),
        role: ColumnRole::StateDummy,
        values: state_col.clone(),
    });
    let parents: Vec<(String, ColumnRole, Vec<f64>)> = columns
        .iter()
        .filter_map(|c| match c.role {
            ColumnRole::LagDr => Some((c.name.clone(), ColumnRole::LagDrInteraction, c.values.clone())),
            ColumnRole::FirmFactor => Some((c.name.clone(), ColumnRole::FirmInteraction, c.values.clone())),
            ColumnRole::MacroFactor => Some((c.name.clone(), ColumnRole::MacroInteraction, c.values.clone())),
            _ => None,
        })
        .collect();
    for (name, role, values) in parents {
        let inter = values.iter().zip(&state_col).map(|(v, s)| v * s).collect();
        columns.push(DesignColumn {
            name: format!("{name}:c"),
            role,
            values: inter,
        });
    }

    let design = DesignMatrix::from_parts(keys, y, columns, state_col, LeverageForm::Tdr, true)?;
    Ok(SimulatedPanel {
        design,
        truth: truth_record(cfg, &states),
    })
}

/// Raw-mode limits: firm covariates map onto [pr, cashta, ndts, finexp,
/// ntcs, as], macro covariates onto [cred, infl, intr].
const RAW_FIRM_SLOTS: usize = 6;
const RAW_MACRO_SLOTS: usize = 3;

/// Generates a panel and emits raw balance-sheet records plus a macro series
/// in the CSV schemas, constructed so the ingestion pipeline reproduces the
/// generating covariates exactly: the first K firm covariates drive
/// [pr, cashta, ndts, finexp, ntcs, as] and the first J macro covariates
/// drive [cred, infl, intr]; remaining derived variables carry independent
/// noise with zero true coefficient. The macro series starts one year before
/// the panel so credit growth is defined in every panel year.
pub fn simulate_raw(cfg: &DgpConfig) -> Result<RawSimulation> {
    cfg.validate()?;
    let k = cfg.beta_star.len();
    let j = cfg.gamma_star.len();
    if k > RAW_FIRM_SLOTS {
        return Err(Error::InvalidConfig {
            message: format!("raw emission supports at most {RAW_FIRM_SLOTS} firm covariates, got {k}"),
        });
    }
    if j > RAW_MACRO_SLOTS {
        return Err(Error::InvalidConfig {
            message: format!("raw emission supports at most {RAW_MACRO_SLOTS} macro covariates, got {j}"),
        });
    }

    let master = RandomSource::new(cfg.seed);
    let states = simulate_states(cfg, &master);
    let t_len = cfg.n_years;
    let assets = 1000.0;
    let offset = cfg.error_offset();

    // Macro series with one pre-sample year; regressor values are derived
    // exactly as the ingestion pipeline will derive them.
    let macro_series: Vec<MacroYearRecord> = {
        let mut r = RandomSource::new(cfg.seed).child(1);
        let raw: Vec<Vec<f64>> = (0..RAW_MACRO_SLOTS)
            .map(|_| ar1_path(&mut r, cfg.covariate_persistence, t_len + 1))
            .collect();
        let mut level = 100.0;
        let mut out = Vec::with_capacity(t_len + 1);
        for t in 0..=t_len {
            let growth = (0.03 + 0.02 * raw[0][t]).clamp(-0.4, 0.4);
            level *= 1.0 + growth;
            let recession = t >= 1 && states[t - 1];
            out.push(MacroYearRecord {
                year: cfg.start_year + t as i32 - 1,
                gdp_growth: if recession { -1.5 } else { 2.5 },
                lending_rate: 5.0 + raw[2][t],
                inflation: 2.0 + raw[1][t],
                credit_supply: level,
            });
        }
        out
    };
    let macro_factors = compute_macro_factors(&macro_series);
    // m_vals[j][t-1] for panel years t = 1..=T.
    let m_vals: Vec<Vec<f64>> = (0..RAW_MACRO_SLOTS)
        .map(|jj| {
            (1..=t_len)
                .map(|t| {
                    let mf = &macro_factors[t];
                    match jj {
                        0 => mf.cred.expect("credit growth defined after the pre-year"),
                        1 => mf.infl,
                        _ => mf.intr,
                    }
                })
                .collect()
        })
        .collect();

    let per_firm = exec::map_indexed(cfg.n_firms, |i| {
        let mut r = RandomSource::new(cfg.seed).child(2 + i as u64);
        let mean = r.normal(0.0, 1.0);
        let eta = r.normal(0.0, 1.0);
        let alpha = cfg.sigma_alpha * (cfg.rho * mean + (1.0 - cfg.rho * cfg.rho).sqrt() * eta);

        // Latent drivers for the mapped covariates, plus fillers for the
        // unmapped balance-sheet fields.
        let mut latent = vec![Vec::new(); RAW_FIRM_SLOTS];
        for slot in latent.iter_mut() {
            *slot = ar1_path(&mut r, cfg.covariate_persistence, t_len);
        }
        let sales_path = ar1_path(&mut r, cfg.covariate_persistence, t_len);

        // Balance-sheet fields (everything except the debt split).
        let mut records: Vec<FirmYearRecord> = (0..t_len)
            .map(|t| {
                let fid = firm_id(i);
                let mut rec = FirmYearRecord::new(fid, cfg.start_year + t as i32);
                let driver = |slot: usize| -> f64 {
                    if slot < k {
                        mean + latent[slot][t]
                    } else {
                        // Benign variation, true coefficient zero.
                        0.05 + 0.02 * latent[slot][t]
                    }
                };
                let sales = 120.0 * (0.05 * sales_path[t]).exp();
                rec.sales = Some(sales);
                rec.total_assets = Some(assets);
                rec.ebit = Some(driver(0) * assets);
                rec.cash = Some(driver(1) * assets);
                rec.depreciation = Some(driver(2) * assets);
                rec.financial_expenses = Some(driver(3) * sales);
                rec.trade_payables = Some(0.05 * sales);
                rec.trade_receivables = Some(0.05 * sales + driver(4) * sales);
                rec.tangible_assets = Some(driver(5) * assets);
                rec
            })
            .collect();

        // Derive the covariates exactly as ingestion will.
        let refs: Vec<&FirmYearRecord> = records.iter().collect();
        let factors = compute_firm_factors(&refs);
        let x_of = |t: usize, slot: usize| -> f64 {
            let f = &factors[t];
            match slot {
                0 => f.pr.expect("pr defined"),
                1 => f.cashta.expect("cashta defined"),
                2 => f.ndts.expect("ndts defined"),
                3 => f.finexp.expect("finexp defined"),
                4 => f.ntcs.expect("ntcs defined"),
                _ => f.as_ratio.expect("as defined"),
            }
        };

        // Debt-ratio recursion driven by the derived covariates.
        let target_at = |t: usize| -> f64 {
            cfg.a_star
                + alpha
                + (0..k).map(|kk| cfg.beta_star[kk] * x_of(t, kk)).sum::<f64>()
                + (0..j).map(|jj| cfg.gamma_star[jj] * m_vals[jj][t]).sum::<f64>()
        };
        let mut dr = Vec::with_capacity(t_len);
        dr.push(target_at(0));
        for t in 2..=t_len {
            let shock = draw_error(cfg, &mut r, offset);
            let speed = cfg.speed_in(states[t - 1]);
            dr.push(adjustment_step(dr[t - 2], target_at(t - 2), speed, shock));
        }
        for (t, rec) in records.iter_mut().enumerate() {
            rec.short_term_debt = Some(0.4 * dr[t] * assets);
            rec.long_term_debt = Some(0.6 * dr[t] * assets);
        }
        records
    });

    Ok(RawSimulation {
        records: per_firm.into_iter().flatten().collect(),
        macro_series,
        truth: truth_record(cfg, &states),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg() -> DgpConfig {
        DgpConfig {
            n_firms: 10,
            n_years: 12,
            seed: 11,
            recession: RecessionPattern::Years { years: [2003, 2007].into_iter().collect() },
            ..DgpConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(base_cfg().validate().is_ok());
        let mut bad = base_cfg();
        bad.speed = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = base_cfg();
        bad.speed_shift_bad = 0.7; // bad speed 1.1
        assert!(bad.validate().is_err());
        let mut bad = base_cfg();
        bad.rho = 1.5;
        assert!(bad.validate().is_err());
        let mut bad = base_cfg();
        bad.n_firms = 1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn true_speeds_examples() {
        let mut cfg = base_cfg();
        cfg.speed = 0.3;
        cfg.speed_shift_bad = 0.0;
        assert_eq!(true_speeds(&cfg), SpeedEstimates { good: 0.3, bad: 0.3 });
        cfg.speed_shift_bad = -0.1;
        let s = true_speeds(&cfg);
        assert_eq!(s.good, 0.3);
        assert!((s.bad - 0.2).abs() < 1e-15);
        cfg.speed_shift_bad = 0.2;
        let s = true_speeds(&cfg);
        assert!((s.bad - 0.5).abs() < 1e-15);
    }

    #[test]
    fn full_adjustment_tracks_target_exactly() {
        // sigma_eps = 0 and speed 1: DR_t = DR*_t for t >= 2, i.e. the
        // regression identity y = a* + alpha_i + beta*'X + gamma*'M holds
        // with zero residual and zero lag coefficient.
        let cfg = DgpConfig {
            sigma_eps: 0.0,
            speed: 1.0,
            ..base_cfg()
        };
        let sim = simulate_panel(&cfg).unwrap();
        let rc = crate::adjustment::fit_adjustment(
            &sim.design,
            &crate::adjustment::Engine::MeanFe,
            &RandomSource::new(0),
        )
        .unwrap();
        assert!(rc.delta.abs() < 1e-8);
        assert!((rc.beta[0].1 - cfg.beta_star[0]).abs() < 1e-8);
        assert!((rc.gamma[0].1 - cfg.gamma_star[0]).abs() < 1e-8);
    }

    #[test]
    fn geometric_gap_halving() {
        // Recursion algebra: with speed 0.5, no noise, constant target, the
        // gap halves each step.
        let target = 0.8_f64;
        let mut dr = 0.2;
        let mut gap = (dr - target).abs();
        for _ in 0..10 {
            dr = adjustment_step(dr, target, 0.5, 0.0);
            let next_gap = (dr - target).abs();
            assert!((next_gap - gap / 2.0).abs() < 1e-15);
            gap = next_gap;
        }
    }

    #[test]
    fn gap_nonincreasing_for_any_speed() {
        for speed in [0.1, 0.4, 0.7, 1.0] {
            let target = 0.5_f64;
            let mut dr = -1.0;
            let mut gap = (dr - target).abs();
            for _ in 0..20 {
                dr = adjustment_step(dr, target, speed, 0.0);
                let next = (dr - target).abs();
                assert!(next <= gap + 1e-15);
                gap = next;
            }
        }
    }

    #[test]
    fn same_seed_reproduces_identical_panels() {
        let cfg = base_cfg();
        let a = simulate_panel(&cfg).unwrap();
        let b = simulate_panel(&cfg).unwrap();
        assert_eq!(a.design.y(), b.design.y());
        for (ca, cb) in a.design.columns().iter().zip(b.design.columns()) {
            assert_eq!(ca.values, cb.values, "column {}", ca.name);
        }
        let ra = simulate_raw(&cfg).unwrap();
        let rb = simulate_raw(&cfg).unwrap();
        assert_eq!(ra.records, rb.records);
        assert_eq!(ra.macro_series, rb.macro_series);
    }

    #[test]
    fn emitted_design_passes_validation() {
        let sim = simulate_panel(&base_cfg()).unwrap();
        sim.design.validate().unwrap();
        assert!(sim.design.includes_state_dummies());
        // Lag alignment: lag_dr equals the previous row's y within a firm.
        let lag = &sim.design.column("lag_dr").unwrap().values;
        for span in sim.design.firm_spans() {
            for i in span.start + 1..span.end {
                assert_eq!(lag[i], sim.design.y()[i - 1]);
            }
        }
    }

    #[test]
    fn explicit_recession_pattern_matches_exactly() {
        let years: BTreeSet<i32> = [2002, 2005, 2006].into_iter().collect();
        let cfg = DgpConfig {
            recession: RecessionPattern::Years { years: years.clone() },
            ..base_cfg()
        };
        let sim = simulate_panel(&cfg).unwrap();
        assert_eq!(sim.truth.recession_years, years.iter().copied().collect::<Vec<_>>());
        for ((_, year), c) in sim.design.keys().iter().zip(sim.design.state()) {
            assert_eq!(*c == 1.0, years.contains(year), "year {year}");
        }
    }

    #[test]
    fn markov_pattern_is_deterministic_and_valid() {
        let cfg = DgpConfig {
            recession: RecessionPattern::Markov { switch_prob: 0.3 },
            seed: 5,
            ..base_cfg()
        };
        let a = simulate_panel(&cfg).unwrap();
        let b = simulate_panel(&cfg).unwrap();
        assert_eq!(a.truth.recession_years, b.truth.recession_years);
    }

    #[test]
    fn raw_emission_round_trips_through_ingestion() {
        let cfg = DgpConfig {
            n_firms: 6,
            n_years: 10,
            seed: 31,
            recession: RecessionPattern::Years { years: [2004].into_iter().collect() },
            ..DgpConfig::default()
        };
        let raw = simulate_raw(&cfg).unwrap();
        let (ds, diag) =
            crate::panel_store::validate_and_merge(raw.records.clone(), raw.macro_series.clone())
                .unwrap();
        assert_eq!(diag.dropped_total(), 0);
        let rows = crate::features::derive_rows(&ds);
        // tdr reproduces the latent ratio: short + long = dr * assets.
        let any = rows.iter().find(|r| r.tdr.is_some()).unwrap();
        assert!(any.tdr.unwrap().is_finite());
        let design = crate::features::build_design(&rows, LeverageForm::Tdr, true).unwrap();
        assert!(design.n_rows() >= cfg.n_firms * (cfg.n_years - 4));
        assert!(design.has_state_variation());
    }

    #[test]
    fn heavy_tailed_centering_sets_quantile_to_zero() {
        let cfg = DgpConfig {
            error_distribution: ErrorDistribution::HeavyTailed,
            error_center_tau: Some(0.25),
            sigma_eps: 1.0,
            n_firms: 200,
            n_years: 30,
            seed: 9,
            ..DgpConfig::default()
        };
        // Draw many shocks through the config's own machinery and check the
        // empirical quantile is near zero.
        let offset = cfg.error_offset();
        let mut r = RandomSource::new(1);
        let draws: Vec<f64> = (0..200_000).map(|_| draw_error(&cfg, &mut r, offset)).collect();
        let q = crate::numerics::empirical_quantile(&draws, 0.25).unwrap();
        assert!(q.abs() < 0.02, "tau-quantile of centered errors was {q}");
    }
}
