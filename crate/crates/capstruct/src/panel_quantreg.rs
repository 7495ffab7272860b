//! Fixed-effects panel quantile regression over a grid of quantiles, with
//! optional L1 penalization of the firm intercepts.
//!
//! The joint minimization over slopes and per-firm intercepts
//!
//! ```text
//!   min sum_i sum_t rho_tau(y_it - a_i - x_it'b - z_it'g) + lambda * sum_i |a_i|
//! ```
//!
//! is one sparse LP: the firm-intercept columns are unit-sparse, and the
//! penalty enters as one pseudo-observation per firm (response 0, weight
//! `2 * lambda`, tau 1/2, loading only on that firm's intercept). `lambda = 0`
//! is the unpenalized model. There is no global intercept.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::features::{ColumnRole, DesignMatrix};
use crate::ipm::{self, IpmInput, IpmOptions, StructuredDesign};
use crate::numerics::{check_loss, Matrix, RandomSource};
use crate::panel_store::FirmId;
use crate::quantreg::{bootstrap_replicates, replicate_covariance};

/// Controls for one panel quantile fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelQrOptions {
    /// Intercept penalty weight; 0 disables the penalty.
    pub lambda: f64,
    /// Bootstrap replicates for the slope covariance; 0 skips the bootstrap.
    pub bootstrap: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PanelQrOptions {
    fn default() -> Self {
        PanelQrOptions {
            lambda: 0.0,
            bootstrap: 0,
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

/// A fitted fixed-effects panel quantile regression.
#[derive(Debug, Clone)]
pub struct PanelQrFit {
    pub tau: f64,
    pub lambda: f64,
    /// Slope names in design order.
    pub slope_names: Vec<String>,
    pub slope_roles: Vec<ColumnRole>,
    pub slopes: Vec<f64>,
    /// Firms kept in the fit, aligned with `intercepts`.
    pub firm_ids: Vec<FirmId>,
    pub intercepts: Vec<f64>,
    /// Total check loss plus `lambda * sum |intercept|`.
    pub objective: f64,
    pub iterations: usize,
    /// Bootstrap covariance of the slopes (present when bootstrap > 0).
    pub covariance: Option<Matrix>,
    /// Firms dropped because they contribute a single usable row.
    pub dropped_firms: Vec<FirmId>,
}

impl PanelQrFit {
    pub fn slope(&self, name: &str) -> Option<f64> {
        self.slope_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.slopes[i])
    }

    /// Firm-covariate coefficients beta(tau).
    pub fn beta(&self) -> Vec<(String, f64)> {
        self.by_role(ColumnRole::FirmFactor)
    }

    /// Macro-covariate coefficients gamma(tau).
    pub fn gamma(&self) -> Vec<(String, f64)> {
        self.by_role(ColumnRole::MacroFactor)
    }

    fn by_role(&self, role: ColumnRole) -> Vec<(String, f64)> {
        self.slope_names
            .iter()
            .zip(&self.slope_roles)
            .zip(&self.slopes)
            .filter(|((_, r), _)| **r == role)
            .map(|((n, _), v)| (n.clone(), *v))
            .collect()
    }

    fn intercept_of(&self, firm: &FirmId) -> Option<f64> {
        self.firm_ids
            .iter()
            .position(|f| f == firm)
            .map(|i| self.intercepts[i])
    }
}

/// Rows-and-columns view of a design restricted to multi-row firms.
struct PanelProblem {
    slope_names: Vec<String>,
    slope_roles: Vec<ColumnRole>,
    /// Row-major `n x p` slopes of the kept rows.
    slopes: Vec<f64>,
    y: Vec<f64>,
    firm_of_row: Vec<usize>,
    firm_ids: Vec<FirmId>,
    dropped_firms: Vec<FirmId>,
}

impl PanelProblem {
    fn from_design(design: &DesignMatrix) -> Result<PanelProblem> {
        let spans = design.firm_spans();
        let mut keep_firm = vec![true; spans.len()];
        let mut dropped_firms = Vec::new();
        for (f, span) in spans.iter().enumerate() {
            if span.len() < 2 {
                keep_firm[f] = false;
                dropped_firms.push(design.firms()[f].clone());
            }
        }
        let slope_names = design.column_names();
        let slope_roles: Vec<ColumnRole> = design.columns().iter().map(|c| c.role).collect();
        let p = slope_names.len();
        let mut slopes = Vec::new();
        let mut y = Vec::new();
        let mut firm_of_row = Vec::new();
        let mut firm_ids = Vec::new();
        let row_major = design.to_row_major();
        for (f, span) in spans.iter().enumerate() {
            if !keep_firm[f] {
                continue;
            }
            let new_f = firm_ids.len();
            firm_ids.push(design.firms()[f].clone());
            for i in span.clone() {
                slopes.extend_from_slice(&row_major[i * p..(i + 1) * p]);
                y.push(design.y()[i]);
                firm_of_row.push(new_f);
            }
        }
        if firm_ids.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(PanelProblem {
            slope_names,
            slope_roles,
            slopes,
            y,
            firm_of_row,
            firm_ids,
            dropped_firms,
        })
    }

    fn n_rows(&self) -> usize {
        self.y.len()
    }

    fn n_firms(&self) -> usize {
        self.firm_ids.len()
    }

    /// Within-demeaned rank check on the slope columns: a column collinear
    /// with the others plus the firm intercepts has no residual variation.
    fn dependent_slopes(&self) -> Vec<String> {
        let p = self.slope_names.len();
        let n = self.n_rows();
        let g = self.n_firms();
        // Demean by firm.
        let mut demeaned = vec![0.0; n * p];
        let mut counts = vec![0.0; g];
        let mut means = vec![0.0; g * p];
        for i in 0..n {
            let f = self.firm_of_row[i];
            counts[f] += 1.0;
            for j in 0..p {
                means[f * p + j] += self.slopes[i * p + j];
            }
        }
        for f in 0..g {
            for j in 0..p {
                means[f * p + j] /= counts[f];
            }
        }
        for i in 0..n {
            let f = self.firm_of_row[i];
            for j in 0..p {
                demeaned[i * p + j] = self.slopes[i * p + j] - means[f * p + j];
            }
        }
        crate::numerics::dependent_columns(&Matrix::from_row_major(n, p, demeaned))
            .into_iter()
            .map(|j| self.slope_names[j].clone())
            .collect()
    }

    /// Assembles the LP rows: real observations plus one penalty pseudo-row
    /// per firm when `lambda > 0`.
    fn ipm_parts(&self, tau: f64, lambda: f64) -> (StructuredDesign, Vec<f64>, Vec<f64>, Vec<f64>) {
        let p = self.slope_names.len();
        let n = self.n_rows();
        let g = self.n_firms();
        let mut slopes = self.slopes.clone();
        let mut firm_of_row = self.firm_of_row.clone();
        let mut response = self.y.clone();
        let mut weight = vec![1.0; n];
        let mut taus = vec![tau; n];
        if lambda > 0.0 {
            for f in 0..g {
                slopes.extend(std::iter::repeat_n(0.0, p));
                firm_of_row.push(f);
                response.push(0.0);
                // rho_{1/2}(u) = |u|/2, so weight 2*lambda yields lambda*|a_f|.
                weight.push(2.0 * lambda);
                taus.push(0.5);
            }
        }
        (
            StructuredDesign::with_firms(p, slopes, firm_of_row, g),
            response,
            weight,
            taus,
        )
    }

    fn solve(&self, tau: f64, opts: &PanelQrOptions) -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let (design, response, weight, taus) = self.ipm_parts(tau, opts.lambda);
        let input = IpmInput {
            design: &design,
            response: &response,
            weight: &weight,
            tau: &taus,
        };
        let sol = ipm::solve(
            &input,
            &IpmOptions {
                tol: opts.tol,
                max_iter: opts.max_iter,
            },
        )?;
        Ok((sol.slopes, sol.firm_intercepts, sol.iterations))
    }

    fn objective(&self, tau: f64, lambda: f64, slopes: &[f64], intercepts: &[f64]) -> f64 {
        let p = self.slope_names.len();
        let mut obj = 0.0;
        for i in 0..self.n_rows() {
            let mut fit = intercepts[self.firm_of_row[i]];
            for j in 0..p {
                fit += self.slopes[i * p + j] * slopes[j];
            }
            obj += check_loss(tau, self.y[i] - fit);
        }
        obj + lambda * intercepts.iter().map(|a| a.abs()).sum::<f64>()
    }

    /// Bootstrap replicate: resample firms with replacement; each draw gets
    /// its own intercept column in the replicate problem.
    fn resample_firms(&self, rng: &mut RandomSource) -> PanelProblem {
        let p = self.slope_names.len();
        let g = self.n_firms();
        let spans = {
            let mut spans: Vec<(usize, usize)> = Vec::with_capacity(g);
            let mut start = 0;
            for f in 0..g {
                let mut end = start;
                while end < self.firm_of_row.len() && self.firm_of_row[end] == f {
                    end += 1;
                }
                spans.push((start, end));
                start = end;
            }
            spans
        };
        let mut slopes = Vec::new();
        let mut y = Vec::new();
        let mut firm_of_row = Vec::new();
        let mut firm_ids = Vec::new();
        for draw in 0..g {
            let f = rng.index(g);
            let (start, end) = spans[f];
            firm_ids.push(FirmId(format!("boot{draw}")));
            for i in start..end {
                slopes.extend_from_slice(&self.slopes[i * p..(i + 1) * p]);
                y.push(self.y[i]);
                firm_of_row.push(draw);
            }
        }
        PanelProblem {
            slope_names: self.slope_names.clone(),
            slope_roles: self.slope_roles.clone(),
            slopes,
            y,
            firm_of_row,
            firm_ids,
            dropped_firms: Vec::new(),
        }
    }
}

/// Fits the fixed-effects panel quantile regression at one `tau`.
///
/// Firms with a single usable row are dropped (their effect and residual are
/// jointly unidentified). The slope covariance, when requested, comes from a
/// bootstrap over firms with child seeds derived from `rng`'s seed, so the
/// whole fit is deterministic.
pub fn fit_panel_quantile(
    design: &DesignMatrix,
    tau: f64,
    opts: &PanelQrOptions,
    rng: &RandomSource,
) -> Result<PanelQrFit> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidTau { tau });
    }
    if opts.lambda < 0.0 {
        return Err(Error::InvalidConfig {
            message: format!("penalty weight must be nonnegative, got {}", opts.lambda),
        });
    }
    let problem = PanelProblem::from_design(design)?;
    let p = problem.slope_names.len();
    if problem.n_rows() < p + problem.n_firms() {
        return Err(Error::UnderIdentified {
            rows: problem.n_rows(),
            cols: p + problem.n_firms(),
        });
    }
    let dependent = problem.dependent_slopes();
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }

    let (slopes, intercepts, iterations) = problem.solve(tau, opts)?;
    let objective = problem.objective(tau, opts.lambda, &slopes, &intercepts);

    let covariance = if opts.bootstrap > 0 {
        let reps = bootstrap_replicates(opts.bootstrap, rng, |child| {
            let replicate = problem.resample_firms(child);
            if replicate.dependent_slopes().is_empty() {
                replicate.solve(tau, opts).ok().map(|(s, _, _)| s)
            } else {
                None
            }
        })?;
        Some(replicate_covariance(&reps).covariance)
    } else {
        None
    };

    Ok(PanelQrFit {
        tau,
        lambda: opts.lambda,
        slope_names: problem.slope_names.clone(),
        slope_roles: problem.slope_roles.clone(),
        slopes,
        firm_ids: problem.firm_ids.clone(),
        intercepts,
        objective,
        iterations,
        covariance,
        dropped_firms: problem.dropped_firms.clone(),
    })
}

/// One cell of a tau-grid estimation.
#[derive(Debug, Clone)]
pub struct TauCell {
    pub tau: f64,
    pub outcome: Result<PanelQrFit>,
}

/// The default decile grid 0.1 ... 0.9.
pub fn decile_grid() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

/// Independent fits over an increasing tau grid. Per-tau failures are
/// recorded without aborting the remaining quantiles; fits for different
/// taus run concurrently and the output is ordered by tau.
pub fn fit_tau_grid(
    design: &DesignMatrix,
    taus: &[f64],
    opts: &PanelQrOptions,
    rng: &RandomSource,
) -> Result<Vec<TauCell>> {
    if taus.is_empty() {
        return Err(Error::EmptyInput {
            context: "tau grid".to_string(),
        });
    }
    if !taus.windows(2).all(|w| w[0] < w[1]) || taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::InvalidConfig {
            message: "tau grid must be strictly increasing inside (0, 1)".to_string(),
        });
    }
    Ok(exec::map_indexed(taus.len(), |k| {
        let child = rng.child(k as u64);
        TauCell {
            tau: taus[k],
            outcome: fit_panel_quantile(design, taus[k], opts, &child),
        }
    }))
}

/// Conditional-quantile prediction `a_i(tau) + x'beta(tau) + z'gamma(tau)`
/// for a firm present in the fit. `x` and `z` follow the fit's firm-factor
/// and macro-factor column order.
pub fn predict_conditional_quantile(
    fit: &PanelQrFit,
    firm: &FirmId,
    x: &[f64],
    z: &[f64],
) -> Result<f64> {
    let alpha = fit.intercept_of(firm).ok_or_else(|| Error::UnknownFirm {
        firm_id: firm.to_string(),
    })?;
    let beta = fit.beta();
    let gamma = fit.gamma();
    if x.len() != beta.len() || z.len() != gamma.len() {
        return Err(Error::InvalidConfig {
            message: format!(
                "covariate lengths ({}, {}) do not match the fit ({}, {})",
                x.len(),
                z.len(),
                beta.len(),
                gamma.len()
            ),
        });
    }
    let xb: f64 = x.iter().zip(&beta).map(|(v, (_, b))| v * b).sum();
    let zg: f64 = z.iter().zip(&gamma).map(|(v, (_, g))| v * g).sum();
    Ok(alpha + xb + zg)
}
