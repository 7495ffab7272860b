//! Derived leverage ratios, firm-specific and macroeconomic regressors, the
//! recession dummy, and the lagged design matrix with state interactions.
//!
//! Variable definitions:
//!
//! - `stdr` = short-term debt / total assets, `ltdr` = long-term debt / total
//!   assets, `tdr` = `stdr + ltdr` (same denominator, so the identity is exact).
//! - `as_ratio` = tangible assets / total assets.
//! - `size` = ln(sales), missing when sales <= 0.
//! - `gr` = annual sales growth, defined only when the firm has the previous
//!   calendar year.
//! - `pr` = EBIT / total assets; `ndts` = depreciation / total assets.
//! - `risk` = sample standard deviation (divisor n-1) of EBIT over the three
//!   consecutive years ending at t; undefined otherwise.
//! - `ntcs` = (receivables - payables) / sales; `cashta` = cash / assets;
//!   `finexp` = financial expenses / sales.
//! - `cred` = annual growth of the credit-supply index (missing in the series'
//!   first year); `infl`, `intr` pass through the inflation and lending-rate
//!   columns.
//! - `c` = 1 in years with strictly negative GDP growth, else 0.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exec;
use crate::numerics::empirical_quantile;
use crate::panel_store::{FirmId, FirmYearRecord, MacroYearRecord, PanelDataset};

/// Which leverage ratio is being modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeverageForm {
    Tdr,
    Ltdr,
    Stdr,
}

impl LeverageForm {
    pub fn name(&self) -> &'static str {
        match self {
            LeverageForm::Tdr => "tdr",
            LeverageForm::Ltdr => "ltdr",
            LeverageForm::Stdr => "stdr",
        }
    }

    pub const ALL: [LeverageForm; 3] = [LeverageForm::Tdr, LeverageForm::Ltdr, LeverageForm::Stdr];
}

impl std::str::FromStr for LeverageForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tdr" => Ok(LeverageForm::Tdr),
            "ltdr" => Ok(LeverageForm::Ltdr),
            "stdr" => Ok(LeverageForm::Stdr),
            other => Err(Error::InvalidConfig {
                message: format!("unknown leverage form `{other}` (expected tdr|ltdr|stdr)"),
            }),
        }
    }
}

/// One firm-year of derived variables. Undefined values are missing, never
/// sentinel numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedRow {
    pub firm_id: FirmId,
    pub year: i32,
    pub tdr: Option<f64>,
    pub ltdr: Option<f64>,
    pub stdr: Option<f64>,
    pub as_ratio: Option<f64>,
    pub size: Option<f64>,
    pub gr: Option<f64>,
    pub pr: Option<f64>,
    pub ndts: Option<f64>,
    pub risk: Option<f64>,
    pub ntcs: Option<f64>,
    pub cashta: Option<f64>,
    pub finexp: Option<f64>,
    pub cred: Option<f64>,
    pub infl: Option<f64>,
    pub intr: Option<f64>,
    /// Recession dummy for the row's year.
    pub c: u8,
}

impl DerivedRow {
    pub fn leverage(&self, form: LeverageForm) -> Option<f64> {
        match form {
            LeverageForm::Tdr => self.tdr,
            LeverageForm::Ltdr => self.ltdr,
            LeverageForm::Stdr => self.stdr,
        }
    }
}

/// Firm-factor names in canonical column order.
pub const FIRM_FACTORS: [&str; 9] =
    ["as", "size", "gr", "pr", "ndts", "risk", "ntcs", "cashta", "finexp"];

/// Macro-factor names in canonical column order.
pub const MACRO_FACTORS: [&str; 3] = ["cred", "infl", "intr"];

/// Leverage ratios for one record, as `(tdr, ltdr, stdr)`. Missing when a
/// debt field is absent or assets are not strictly positive.
pub fn compute_leverage_ratios(rec: &FirmYearRecord) -> (Option<f64>, Option<f64>, Option<f64>) {
    let assets = match rec.total_assets {
        Some(a) if a > 0.0 => a,
        _ => return (None, None, None),
    };
    match (rec.short_term_debt, rec.long_term_debt) {
        (Some(st), Some(lt)) => {
            let stdr = st / assets;
            let ltdr = lt / assets;
            (Some(stdr + ltdr), Some(ltdr), Some(stdr))
        }
        _ => (None, None, None),
    }
}

/// Per-year firm factors for one firm's history (sorted by year).
#[derive(Debug, Clone, PartialEq)]
pub struct FirmFactors {
    pub year: i32,
    pub as_ratio: Option<f64>,
    pub size: Option<f64>,
    pub gr: Option<f64>,
    pub pr: Option<f64>,
    pub ndts: Option<f64>,
    pub risk: Option<f64>,
    pub ntcs: Option<f64>,
    pub cashta: Option<f64>,
    pub finexp: Option<f64>,
}

fn ratio(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    match (num, den) {
        (Some(n), Some(d)) if d != 0.0 => Some(n / d),
        _ => None,
    }
}

/// Computes the firm-specific factors for an ordered history. Values whose
/// windows are unavailable are left missing.
pub fn compute_firm_factors(history: &[&FirmYearRecord]) -> Vec<FirmFactors> {
    debug_assert!(history.windows(2).all(|w| w[0].year < w[1].year));
    let by_year: BTreeMap<i32, usize> =
        history.iter().enumerate().map(|(i, r)| (r.year, i)).collect();
    history
        .iter()
        .map(|rec| {
            let size = rec.sales.filter(|&s| s > 0.0).map(f64::ln);
            let gr = by_year.get(&(rec.year - 1)).and_then(|&prev_idx| {
                let prev = history[prev_idx];
                match (rec.sales, prev.sales) {
                    (Some(cur), Some(base)) if base != 0.0 => Some((cur - base) / base),
                    _ => None,
                }
            });
            let risk = {
                let window: Option<Vec<f64>> = (0..3)
                    .map(|k| {
                        by_year
                            .get(&(rec.year - k))
                            .and_then(|&i| history[i].ebit)
                    })
                    .collect();
                window.map(|vals| {
                    let mean = vals.iter().sum::<f64>() / 3.0;
                    let ss = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
                    (ss / 2.0).sqrt()
                })
            };
            let ntcs = match (rec.trade_receivables, rec.trade_payables, rec.sales) {
                (Some(recv), Some(pay), Some(s)) if s != 0.0 => Some((recv - pay) / s),
                _ => None,
            };
            FirmFactors {
                year: rec.year,
                as_ratio: ratio(rec.tangible_assets, rec.total_assets),
                size,
                gr,
                pr: ratio(rec.ebit, rec.total_assets),
                ndts: ratio(rec.depreciation, rec.total_assets),
                risk,
                ntcs,
                cashta: ratio(rec.cash, rec.total_assets),
                finexp: ratio(rec.financial_expenses, rec.sales),
            }
        })
        .collect()
}

/// Per-year macro factors.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroFactors {
    pub year: i32,
    /// Credit growth; missing in the series' first year.
    pub cred: Option<f64>,
    pub infl: f64,
    pub intr: f64,
}

/// Computes macro factors from a contiguous series sorted by year.
pub fn compute_macro_factors(series: &[MacroYearRecord]) -> Vec<MacroFactors> {
    debug_assert!(series.windows(2).all(|w| w[1].year == w[0].year + 1));
    series
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let cred = if i == 0 {
                None
            } else {
                let prev = series[i - 1].credit_supply;
                if prev != 0.0 {
                    Some((rec.credit_supply - prev) / prev)
                } else {
                    None
                }
            };
            MacroFactors {
                year: rec.year,
                cred,
                infl: rec.inflation,
                intr: rec.lending_rate,
            }
        })
        .collect()
}

/// Recession indicator: 1 iff GDP growth is strictly negative.
pub fn regime_indicator(gdp_growth: f64) -> u8 {
    if gdp_growth < 0.0 {
        1
    } else {
        0
    }
}

/// Derives one row per firm-year of the merged dataset. Per-firm work is
/// independent; output ordering follows the dataset's (firm, year) order.
pub fn derive_rows(dataset: &PanelDataset) -> Vec<DerivedRow> {
    let macro_factors = compute_macro_factors(dataset.macro_series());
    let macro_by_year: BTreeMap<i32, &MacroFactors> =
        macro_factors.iter().map(|m| (m.year, m)).collect();
    let regime_by_year: BTreeMap<i32, u8> = dataset
        .macro_series()
        .iter()
        .map(|m| (m.year, regime_indicator(m.gdp_growth)))
        .collect();

    let firms: Vec<&FirmId> = dataset.firms().collect();
    let per_firm = exec::map_slice(&firms, |firm| {
        let history = dataset.firm_history(firm);
        let factors = compute_firm_factors(&history);
        history
            .iter()
            .zip(factors)
            .map(|(rec, f)| {
                let (tdr, ltdr, stdr) = compute_leverage_ratios(rec);
                let m = macro_by_year
                    .get(&rec.year)
                    .expect("merged records lie inside the macro range");
                DerivedRow {
                    firm_id: rec.firm_id.clone(),
                    year: rec.year,
                    tdr,
                    ltdr,
                    stdr,
                    as_ratio: f.as_ratio,
                    size: f.size,
                    gr: f.gr,
                    pr: f.pr,
                    ndts: f.ndts,
                    risk: f.risk,
                    ntcs: f.ntcs,
                    cashta: f.cashta,
                    finexp: f.finexp,
                    cred: m.cred,
                    infl: Some(m.infl),
                    intr: Some(m.intr),
                    c: regime_by_year[&rec.year],
                }
            })
            .collect::<Vec<_>>()
    });
    per_firm.into_iter().flatten().collect()
}

/// Columns subject to the optional winsorization (firm-level ratios only).
const WINSORIZE_COLUMNS: [&str; 12] = [
    "tdr", "ltdr", "stdr", "as", "size", "gr", "pr", "ndts", "risk", "ntcs", "cashta", "finexp",
];

fn column_mut<'a>(row: &'a mut DerivedRow, name: &str) -> &'a mut Option<f64> {
    match name {
        "tdr" => &mut row.tdr,
        "ltdr" => &mut row.ltdr,
        "stdr" => &mut row.stdr,
        "as" => &mut row.as_ratio,
        "size" => &mut row.size,
        "gr" => &mut row.gr,
        "pr" => &mut row.pr,
        "ndts" => &mut row.ndts,
        "risk" => &mut row.risk,
        "ntcs" => &mut row.ntcs,
        "cashta" => &mut row.cashta,
        "finexp" => &mut row.finexp,
        other => panic!("not a winsorizable column: {other}"),
    }
}

/// Symmetric winsorization: clamps each firm-level column to its empirical
/// [p, 1-p] quantiles. `p` must lie in (0, 0.5).
pub fn winsorize(rows: &mut [DerivedRow], p: f64) -> Result<()> {
    if !(p > 0.0 && p < 0.5) {
        return Err(Error::InvalidConfig {
            message: format!("winsorization percentile must lie in (0, 0.5), got {p}"),
        });
    }
    for name in WINSORIZE_COLUMNS {
        let values: Vec<f64> = rows
            .iter_mut()
            .filter_map(|r| *column_mut(r, name))
            .collect();
        if values.is_empty() {
            continue;
        }
        let lo = empirical_quantile(&values, p)?;
        let hi = empirical_quantile(&values, 1.0 - p)?;
        for row in rows.iter_mut() {
            let slot = column_mut(row, name);
            if let Some(v) = *slot {
                *slot = Some(v.clamp(lo, hi));
            }
        }
    }
    Ok(())
}

/// Role a design column plays in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    LagDr,
    FirmFactor,
    MacroFactor,
    StateDummy,
    LagDrInteraction,
    FirmInteraction,
    MacroInteraction,
}

impl ColumnRole {
    pub fn is_interaction(&self) -> bool {
        matches!(
            self,
            ColumnRole::LagDrInteraction | ColumnRole::FirmInteraction | ColumnRole::MacroInteraction
        )
    }
}

/// One named regressor column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignColumn {
    pub name: String,
    pub role: ColumnRole,
    pub values: Vec<f64>,
}

/// Lagged regression design: one row per (firm, t) with a complete set of
/// lagged covariates, rows grouped by firm with years ascending.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    keys: Vec<(FirmId, i32)>,
    firm_of_row: Vec<usize>,
    firms: Vec<FirmId>,
    y: Vec<f64>,
    columns: Vec<DesignColumn>,
    state: Vec<f64>,
    leverage: LeverageForm,
    includes_state_dummies: bool,
}

impl DesignMatrix {
    /// Assembles and validates a design from parts. `keys` must be grouped by
    /// firm with years strictly increasing inside each group; interaction
    /// columns must be exact products of their parents with the state column.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        keys: Vec<(FirmId, i32)>,
        y: Vec<f64>,
        columns: Vec<DesignColumn>,
        state: Vec<f64>,
        leverage: LeverageForm,
        includes_state_dummies: bool,
    ) -> Result<Self> {
        let n = keys.len();
        if y.len() != n || state.len() != n || columns.iter().any(|c| c.values.len() != n) {
            return Err(Error::InvalidConfig {
                message: "design parts have inconsistent lengths".to_string(),
            });
        }
        let mut firms: Vec<FirmId> = Vec::new();
        let mut firm_of_row = Vec::with_capacity(n);
        for (firm, _) in &keys {
            match firms.last() {
                Some(last) if last == firm => {}
                _ => {
                    if firms.contains(firm) {
                        return Err(Error::InvalidConfig {
                            message: format!("rows of firm {firm} are not contiguous"),
                        });
                    }
                    firms.push(firm.clone());
                }
            }
            firm_of_row.push(firms.len() - 1);
        }
        let design = DesignMatrix {
            keys,
            firm_of_row,
            firms,
            y,
            columns,
            state,
            leverage,
            includes_state_dummies,
        };
        design.validate()?;
        Ok(design)
    }

    /// Checks the structural invariants: years strictly increasing per firm,
    /// finite values, interaction columns exactly equal to parent * state.
    pub fn validate(&self) -> Result<()> {
        for span in self.firm_spans() {
            let years: Vec<i32> = self.keys[span.clone()].iter().map(|k| k.1).collect();
            if !years.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::InvalidConfig {
                    message: format!(
                        "years not strictly increasing for firm {}",
                        self.keys[span.start].0
                    ),
                });
            }
        }
        let finite = self.y.iter().all(|v| v.is_finite())
            && self.state.iter().all(|v| v.is_finite())
            && self
                .columns
                .iter()
                .all(|c| c.values.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidConfig {
                message: "design contains non-finite values".to_string(),
            });
        }
        if self.state.iter().any(|&s| s != 0.0 && s != 1.0) {
            return Err(Error::InvalidConfig {
                message: "state column must be 0/1".to_string(),
            });
        }
        for col in &self.columns {
            if col.role.is_interaction() {
                let parent_name = col
                    .name
                    .strip_suffix(":c")
                    .ok_or_else(|| Error::InvalidConfig {
                        message: format!("interaction column `{}` must be named parent:c", col.name),
                    })?;
                let parent_values: &[f64] = if parent_name == "lag_dr" {
                    &self
                        .columns
                        .iter()
                        .find(|c| c.name == "lag_dr")
                        .ok_or_else(|| Error::InvalidConfig {
                            message: "interaction without lag_dr parent".to_string(),
                        })?
                        .values
                } else {
                    &self
                        .columns
                        .iter()
                        .find(|c| c.name == parent_name)
                        .ok_or_else(|| Error::InvalidConfig {
                            message: format!("interaction without parent `{parent_name}`"),
                        })?
                        .values
                };
                for i in 0..self.n_rows() {
                    if col.values[i] != parent_values[i] * self.state[i] {
                        return Err(Error::InvalidConfig {
                            message: format!(
                                "interaction `{}` is not the exact product of its parents at row {i}",
                                col.name
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_firms(&self) -> usize {
        self.firms.len()
    }

    pub fn keys(&self) -> &[(FirmId, i32)] {
        &self.keys
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn columns(&self) -> &[DesignColumn] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&DesignColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn firms(&self) -> &[FirmId] {
        &self.firms
    }

    pub fn firm_of_row(&self) -> &[usize] {
        &self.firm_of_row
    }

    pub fn leverage(&self) -> LeverageForm {
        self.leverage
    }

    pub fn includes_state_dummies(&self) -> bool {
        self.includes_state_dummies
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Contiguous row ranges per firm, in firm order.
    pub fn firm_spans(&self) -> Vec<std::ops::Range<usize>> {
        let mut spans = Vec::with_capacity(self.firms.len());
        let mut start = 0;
        for f in 0..self.firms.len() {
            let mut end = start;
            while end < self.firm_of_row.len() && self.firm_of_row[end] == f {
                end += 1;
            }
            spans.push(start..end);
            start = end;
        }
        spans
    }

    /// Row-major copy of the regressor block.
    pub fn to_row_major(&self) -> Vec<f64> {
        let (n, p) = (self.n_rows(), self.n_cols());
        let mut out = vec![0.0; n * p];
        for (j, col) in self.columns.iter().enumerate() {
            for i in 0..n {
                out[i * p + j] = col.values[i];
            }
        }
        out
    }

    /// Both recession and growth years present?
    pub fn has_state_variation(&self) -> bool {
        self.state.iter().any(|&s| s == 1.0) && self.state.iter().any(|&s| s == 0.0)
    }
}

fn factor_value(row: &DerivedRow, name: &str) -> Option<f64> {
    match name {
        "as" => row.as_ratio,
        "size" => row.size,
        "gr" => row.gr,
        "pr" => row.pr,
        "ndts" => row.ndts,
        "risk" => row.risk,
        "ntcs" => row.ntcs,
        "cashta" => row.cashta,
        "finexp" => row.finexp,
        "cred" => row.cred,
        "infl" => row.infl,
        "intr" => row.intr,
        other => panic!("unknown factor {other}"),
    }
}

/// Builds the partial-adjustment design for one leverage form: one row per
/// (firm, t) such that (firm, t-1) exists and every required column is
/// non-missing (listwise deletion). Interaction columns (and the bare state
/// column) appear only when `include_state_dummies` is set.
pub fn build_design(
    rows: &[DerivedRow],
    leverage: LeverageForm,
    include_state_dummies: bool,
) -> Result<DesignMatrix> {
    let mut sorted: Vec<&DerivedRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (&a.firm_id, a.year).cmp(&(&b.firm_id, b.year)));
    let index: BTreeMap<(&FirmId, i32), &DerivedRow> =
        sorted.iter().map(|r| ((&r.firm_id, r.year), *r)).collect();

    let mut keys = Vec::new();
    let mut y = Vec::new();
    let mut state = Vec::new();
    let mut lag_dr = Vec::new();
    let mut factor_cols: Vec<Vec<f64>> = vec![Vec::new(); FIRM_FACTORS.len() + MACRO_FACTORS.len()];

    'rows: for row in &sorted {
        let Some(prev) = index.get(&(&row.firm_id, row.year - 1)) else {
            continue;
        };
        let Some(y_t) = row.leverage(leverage) else {
            continue;
        };
        let Some(dr_lag) = prev.leverage(leverage) else {
            continue;
        };
        let mut lagged = Vec::with_capacity(factor_cols.len());
        for name in FIRM_FACTORS.iter().chain(MACRO_FACTORS.iter()) {
            match factor_value(prev, name) {
                Some(v) => lagged.push(v),
                None => continue 'rows,
            }
        }
        keys.push((row.firm_id.clone(), row.year));
        y.push(y_t);
        state.push(row.c as f64);
        lag_dr.push(dr_lag);
        for (slot, v) in factor_cols.iter_mut().zip(lagged) {
            slot.push(v);
        }
    }

    let mut columns = Vec::new();
    columns.push(DesignColumn {
        name: "lag_dr".to_string(),
        role: ColumnRole::LagDr,
        values: lag_dr,
    });
    for (k, name) in FIRM_FACTORS.iter().enumerate() {
        columns.push(DesignColumn {
            name: name.to_string(),
            role: ColumnRole::FirmFactor,
            values: factor_cols[k].clone(),
        });
    }
    for (j, name) in MACRO_FACTORS.iter().enumerate() {
        columns.push(DesignColumn {
            name: name.to_string(),
            role: ColumnRole::MacroFactor,
            values: factor_cols[FIRM_FACTORS.len() + j].clone(),
        });
    }
    if include_state_dummies {
        columns.push(DesignColumn {
            name: "c".to_string(),
            role: ColumnRole::StateDummy,
            values: state.clone(),
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
            let inter: Vec<f64> = values.iter().zip(&state).map(|(v, s)| v * s).collect();
            columns.push(DesignColumn {
                name: format!("{name}:c"),
                role,
                values: inter,
            });
        }
    }

    let n = keys.len();
    let p = columns.len();
    if n < p + 2 {
        return Err(Error::UnderIdentified { rows: n, cols: p });
    }
    DesignMatrix::from_parts(keys, y, columns, state, leverage, include_state_dummies)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel_store::{validate_and_merge, MacroYearRecord};

    fn record(firm: &str, year: i32) -> FirmYearRecord {
        let mut r = FirmYearRecord::new(FirmId::from(firm), year);
        r.sales = Some(100.0);
        r.total_assets = Some(200.0);
        r.short_term_debt = Some(10.0);
        r.long_term_debt = Some(30.0);
        r.ebit = Some(20.0);
        r.depreciation = Some(5.0);
        r.cash = Some(8.0);
        r.financial_expenses = Some(2.0);
        r.trade_receivables = Some(10.0);
        r.trade_payables = Some(4.0);
        r.tangible_assets = Some(60.0);
        r
    }

    fn macro_year(year: i32, gdp: f64) -> MacroYearRecord {
        MacroYearRecord {
            year,
            gdp_growth: gdp,
            lending_rate: 5.0,
            inflation: 2.0,
            credit_supply: 100.0 + (year - 1998) as f64,
        }
    }

    #[test]
    fn leverage_ratio_examples() {
        let mut r = record("A", 2001);
        r.short_term_debt = Some(10.0);
        r.long_term_debt = Some(30.0);
        r.total_assets = Some(200.0);
        let (tdr, ltdr, stdr) = compute_leverage_ratios(&r);
        assert_eq!((tdr, ltdr, stdr), (Some(0.20), Some(0.15), Some(0.05)));

        r.short_term_debt = Some(0.0);
        r.long_term_debt = Some(0.0);
        assert_eq!(compute_leverage_ratios(&r), (Some(0.0), Some(0.0), Some(0.0)));

        // Ratios above 1 are permitted.
        r.total_assets = Some(100.0);
        r.short_term_debt = Some(150.0);
        r.long_term_debt = Some(0.0);
        let (tdr, _, _) = compute_leverage_ratios(&r);
        assert_eq!(tdr, Some(1.5));
    }

    #[test]
    fn missing_debt_field_marks_ratios_missing() {
        let mut r = record("A", 2001);
        r.long_term_debt = None;
        assert_eq!(compute_leverage_ratios(&r), (None, None, None));
    }

    #[test]
    fn firm_factor_examples() {
        let mut r1 = record("A", 2000);
        r1.sales = Some(100.0);
        let mut r2 = record("A", 2001);
        r2.sales = Some(110.0);
        let r3 = record("A", 2002);
        let history = vec![&r1, &r2, &r3];
        let f = compute_firm_factors(&history);

        assert!((f[0].size.unwrap() - 100.0_f64.ln()).abs() < 1e-12);
        assert!((100.0_f64.ln() - 4.605170).abs() < 1e-6);
        assert_eq!(f[0].gr, None); // no prior year
        assert!((f[1].gr.unwrap() - 0.10).abs() < 1e-12);
        // EBIT constant at 20 over three consecutive years: risk exactly 0.
        assert_eq!(f[0].risk, None);
        assert_eq!(f[1].risk, None);
        assert_eq!(f[2].risk, Some(0.0));
        // receivables 10, payables 4, sales 100.
        assert!((f[0].ntcs.unwrap() - 0.06).abs() < 1e-12);
    }

    #[test]
    fn risk_requires_three_consecutive_years() {
        let r1 = record("A", 2000);
        let r2 = record("A", 2002); // gap at 2001
        let r3 = record("A", 2003);
        let history = vec![&r1, &r2, &r3];
        let f = compute_firm_factors(&history);
        assert!(f.iter().all(|x| x.risk.is_none()));
        // gr across the gap stays missing too.
        assert_eq!(f[1].gr, None);
        assert!(f[2].gr.is_some());
    }

    #[test]
    fn macro_factor_examples() {
        let series = vec![
            MacroYearRecord { year: 2000, gdp_growth: 2.0, lending_rate: 5.0, inflation: 2.0, credit_supply: 100.0 },
            MacroYearRecord { year: 2001, gdp_growth: 2.0, lending_rate: 5.5, inflation: 2.5, credit_supply: 110.0 },
            MacroYearRecord { year: 2002, gdp_growth: 2.0, lending_rate: 6.0, inflation: 3.0, credit_supply: 110.0 },
        ];
        let f = compute_macro_factors(&series);
        assert_eq!(f[0].cred, None);
        assert!((f[1].cred.unwrap() - 0.10).abs() < 1e-12);
        assert_eq!(f[2].cred, Some(0.0));
        assert_eq!(f[1].infl, 2.5);
        assert_eq!(f[2].intr, 6.0);
    }

    #[test]
    fn regime_indicator_examples() {
        assert_eq!(regime_indicator(-1.0), 1);
        assert_eq!(regime_indicator(2.0), 0);
        assert_eq!(regime_indicator(0.0), 0);
    }

    /// Windowing trace on a tiny fixture: a firm observed 1999-2002 with all
    /// fields present contributes exactly one usable design row, at 2002.
    /// Row t needs every lagged factor at t-1; risk(t-1) needs years
    /// {t-3, t-2, t-1} and gr(t-1) needs t-2, so the earliest usable t is
    /// first_year + 3.
    #[test]
    fn design_windowing_first_usable_year() {
        let mut records = Vec::new();
        for firm in 0..20 {
            for year in 1999..=2002 {
                let mut r = record(&format!("F{firm:02}"), year);
                // Vary fields so no column is constant.
                let bump = (year - 1999) as f64 + firm as f64 / 10.0;
                r.sales = Some(100.0 + bump);
                r.ebit = Some(20.0 + bump * bump);
                r.short_term_debt = Some(10.0 + bump);
                records.push(r);
            }
        }
        let macro_series: Vec<MacroYearRecord> =
            (1999..=2002).map(|y| macro_year(y, if y == 2001 { -1.0 } else { 2.0 })).collect();
        let (ds, _) = validate_and_merge(records, macro_series).unwrap();
        let rows = derive_rows(&ds);
        let design = build_design(&rows, LeverageForm::Tdr, false).unwrap();
        assert_eq!(design.n_rows(), 20);
        assert!(design.keys().iter().all(|k| k.1 == 2002));
    }

    #[test]
    fn design_requires_consecutive_years() {
        // Years {2000, 2002} only: no consecutive pair, so no usable rows
        // regardless of factor availability.
        let mut records = Vec::new();
        for firm in ["A", "B"] {
            for year in [2000, 2002] {
                records.push(record(firm, year));
            }
        }
        let macro_series: Vec<MacroYearRecord> = (2000..=2002).map(|y| macro_year(y, 2.0)).collect();
        let (ds, _) = validate_and_merge(records, macro_series).unwrap();
        let rows = derive_rows(&ds);
        assert!(matches!(
            build_design(&rows, LeverageForm::Tdr, false),
            Err(Error::UnderIdentified { rows: 0, .. })
        ));
    }

    fn fixture_design(include_state: bool) -> DesignMatrix {
        let mut records = Vec::new();
        for firm in 0..8 {
            for year in 1998..=2004 {
                let mut r = record(&format!("F{firm}"), year);
                let t = (year - 1998) as f64;
                let fid = firm as f64;
                r.sales = Some(100.0 + 3.0 * t + fid);
                r.ebit = Some(15.0 + (t * 1.7 + fid).sin() * 5.0);
                r.short_term_debt = Some(10.0 + t + fid * 0.5);
                r.long_term_debt = Some(30.0 - t + fid * 0.25);
                r.cash = Some(5.0 + (t + fid).cos());
                records.push(r);
            }
        }
        let macro_series: Vec<MacroYearRecord> = (1998..=2004)
            .map(|y| macro_year(y, if y % 3 == 0 { -0.5 } else { 2.0 }))
            .collect();
        let (ds, _) = validate_and_merge(records, macro_series).unwrap();
        let rows = derive_rows(&ds);
        build_design(&rows, LeverageForm::Tdr, include_state).unwrap()
    }

    #[test]
    fn interactions_are_exact_products() {
        let design = fixture_design(true);
        assert!(design.includes_state_dummies());
        design.validate().unwrap();
        let c = design.column("c").unwrap();
        let lag = design.column("lag_dr").unwrap();
        let inter = design.column("lag_dr:c").unwrap();
        for i in 0..design.n_rows() {
            assert_eq!(inter.values[i], lag.values[i] * c.values[i]);
            if c.values[i] == 0.0 {
                assert_eq!(inter.values[i], 0.0);
            }
        }
        // With x = 0.5 and c = 1 the interaction cell is 0.5.
        assert_eq!(0.5 * 1.0, 0.5);
    }

    #[test]
    fn lag_dr_matches_previous_rows_y() {
        let design = fixture_design(false);
        let index: BTreeMap<(&FirmId, i32), usize> = design
            .keys()
            .iter()
            .enumerate()
            .map(|(i, (f, y))| ((f, *y), i))
            .collect();
        let lag = design.column("lag_dr").unwrap();
        let mut checked = 0;
        for (i, (firm, year)) in design.keys().iter().enumerate() {
            if let Some(&j) = index.get(&(firm, year - 1)) {
                assert_eq!(lag.values[i], design.y()[j]);
                checked += 1;
            }
        }
        assert!(checked > 0, "fixture must contain overlapping rows");
    }

    #[test]
    fn tdr_identity_exact_on_all_rows() {
        let design = fixture_design(false);
        // tdr - (ltdr + stdr) == 0 to machine precision, by construction.
        let mut r = record("A", 2001);
        for (st, lt, assets) in [(10.0, 30.0, 200.0), (0.37, 1.21, 7.3), (5.0, 0.0, 3.0)] {
            r.short_term_debt = Some(st);
            r.long_term_debt = Some(lt);
            r.total_assets = Some(assets);
            let (tdr, ltdr, stdr) = compute_leverage_ratios(&r);
            assert_eq!(tdr.unwrap() - (ltdr.unwrap() + stdr.unwrap()), 0.0);
        }
        assert!(design.n_rows() > 0);
    }

    #[test]
    fn currency_scaling_invariance() {
        let base = record("A", 2001);
        for k in [0.5, 2.0, 977.25] {
            let mut scaled = base.clone();
            for field in [
                &mut scaled.sales,
                &mut scaled.total_assets,
                &mut scaled.short_term_debt,
                &mut scaled.long_term_debt,
                &mut scaled.ebit,
                &mut scaled.depreciation,
                &mut scaled.cash,
                &mut scaled.financial_expenses,
                &mut scaled.trade_receivables,
                &mut scaled.trade_payables,
                &mut scaled.tangible_assets,
            ] {
                *field = field.map(|v| v * k);
            }
            let (t0, l0, s0) = compute_leverage_ratios(&base);
            let (t1, l1, s1) = compute_leverage_ratios(&scaled);
            assert!((t0.unwrap() - t1.unwrap()).abs() < 1e-12);
            assert!((l0.unwrap() - l1.unwrap()).abs() < 1e-12);
            assert!((s0.unwrap() - s1.unwrap()).abs() < 1e-12);

            let fb = compute_firm_factors(&[&base]);
            let fs = compute_firm_factors(&[&scaled]);
            let getters: [(fn(&FirmFactors) -> Option<f64>, &str); 6] = [
                (|f| f.pr, "pr"),
                (|f| f.ndts, "ndts"),
                (|f| f.cashta, "cashta"),
                (|f| f.as_ratio, "as"),
                (|f| f.ntcs, "ntcs"),
                (|f| f.finexp, "finexp"),
            ];
            for (get, name) in getters {
                let (a, b) = (get(&fb[0]).unwrap(), get(&fs[0]).unwrap());
                assert!((a - b).abs() < 1e-12, "{name} changed under scaling");
            }
            // size shifts by ln(k) exactly.
            assert!(
                (fs[0].size.unwrap() - fb[0].size.unwrap() - k.ln()).abs() < 1e-12,
                "size must shift by ln(k)"
            );
        }
    }

    #[test]
    fn risk_scales_with_currency() {
        let mut h = Vec::new();
        for (year, ebit) in [(2000, 10.0), (2001, 14.0), (2002, 21.0)] {
            let mut r = record("A", year);
            r.ebit = Some(ebit);
            h.push(r);
        }
        let refs: Vec<&FirmYearRecord> = h.iter().collect();
        let base_risk = compute_firm_factors(&refs)[2].risk.unwrap();
        let k = 3.5;
        let mut hs = h.clone();
        for r in &mut hs {
            r.ebit = r.ebit.map(|v| v * k);
        }
        let refs: Vec<&FirmYearRecord> = hs.iter().collect();
        let scaled_risk = compute_firm_factors(&refs)[2].risk.unwrap();
        assert!((scaled_risk - k * base_risk).abs() < 1e-9);
    }

    #[test]
    fn winsorize_clamps_tails() {
        let mut rows: Vec<DerivedRow> = Vec::new();
        for i in 0..100 {
            let mut r = DerivedRow {
                firm_id: FirmId::from("A"),
                year: 2000 + i,
                tdr: Some(i as f64),
                ltdr: None,
                stdr: None,
                as_ratio: None,
                size: None,
                gr: None,
                pr: None,
                ndts: None,
                risk: None,
                ntcs: None,
                cashta: None,
                finexp: None,
                cred: None,
                infl: None,
                intr: None,
                c: 0,
            };
            if i == 99 {
                r.tdr = Some(1e9); // extreme outlier
            }
            rows.push(r);
        }
        winsorize(&mut rows, 0.05).unwrap();
        let max = rows.iter().filter_map(|r| r.tdr).fold(f64::MIN, f64::max);
        assert!(max < 100.0);
        assert!(winsorize(&mut rows, 0.7).is_err());
    }
}
