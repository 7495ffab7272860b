//! Conditional-mean panel estimators (pooled, fixed effects, random effects),
//! the Hausman specification test, and Wald tests on coefficient subsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::DesignMatrix;
use crate::numerics::{chi_square_sf, matrix_rank, pseudo_inverse, symmetric_inverse, Matrix};

/// Estimator family behind a `MeanFit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanEstimator {
    Pooled,
    FixedEffects,
    RandomEffects,
}

/// Covariance estimator choice for the within estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    /// Homoskedastic `sigma^2 (X'X)^{-1}`.
    #[default]
    Conventional,
    /// Liang-Zeger sandwich clustered by firm.
    ClusteredByFirm,
}

/// A fitted conditional-mean panel regression.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanFit {
    pub kind: MeanEstimator,
    /// Coefficient names, aligned with `coefficients` and `covariance`.
    /// Pooled and random-effects fits carry a leading "const".
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub covariance: Matrix,
    pub residual_variance: f64,
    /// Grand constant (fixed-effects fits only; pooled/RE report "const").
    pub intercept: Option<f64>,
    /// Demeaned per-firm effects, summing to zero (fixed-effects fits only);
    /// `intercept + effect` reproduces the firm-level mean offset.
    pub firm_effects: Option<Vec<(String, f64)>>,
    pub n: usize,
    pub p: usize,
    pub n_firms: usize,
    /// Regressors dropped because they are constant within every firm.
    pub dropped_columns: Vec<String>,
}

impl MeanFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }
}

/// Hausman contrast of fixed- and random-effects estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HausmanResult {
    pub statistic: f64,
    /// Rank of the covariance difference.
    pub df: usize,
    pub p_value: f64,
    /// Coefficients entering the contrast.
    pub common: Vec<String>,
}

/// A Wald test outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

fn column_matrix(design: &DesignMatrix, names: &[String]) -> Matrix {
    let cols: Vec<Vec<f64>> = names
        .iter()
        .map(|n| design.column(n).expect("known column").values.clone())
        .collect();
    Matrix::from_columns(&cols)
}

/// Names dependent columns in an intercept-augmented regressor matrix
/// (column 0 is the constant).
fn check_full_rank(x: &Matrix, names: &[String]) -> Result<()> {
    let dependent = crate::numerics::dependent_columns(x);
    if dependent.is_empty() {
        return Ok(());
    }
    Err(Error::RankDeficient {
        columns: dependent
            .into_iter()
            .map(|j| {
                if j == 0 {
                    "const".to_string()
                } else {
                    names[j - 1].clone()
                }
            })
            .collect(),
    })
}

/// Solves the normal equations `(X'X) b = X'y` and returns
/// `(b, (X'X)^{-1}, rss)`.
fn normal_solve(x: &Matrix, y: &[f64]) -> Result<(Vec<f64>, Matrix, f64)> {
    let p = x.cols();
    let mut xtx = Matrix::zeros(p, p);
    let mut xty = vec![0.0; p];
    for i in 0..x.rows() {
        let row = x.row(i);
        for a in 0..p {
            xty[a] += row[a] * y[i];
            for b in a..p {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let xtx_inv = match xtx.to_na().cholesky() {
        Some(chol) => Matrix::from_na(&chol.inverse()),
        None => {
            return Err(Error::DegenerateFit {
                message: "normal matrix is singular after transformation".to_string(),
            })
        }
    };
    let beta = xtx_inv.matvec(&xty);
    let mut rss = 0.0;
    for i in 0..x.rows() {
        let fit: f64 = x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
        let r = y[i] - fit;
        rss += r * r;
    }
    Ok((beta, xtx_inv, rss))
}

struct WithinData {
    /// Demeaned regressors for the kept columns.
    x: Matrix,
    y: Vec<f64>,
    kept: Vec<String>,
    dropped: Vec<String>,
    firm_means_x: Vec<Vec<f64>>,
    firm_means_y: Vec<f64>,
}

/// Demeans y and the regressors by firm, dropping columns with no within
/// variation in any firm.
fn within_transform(design: &DesignMatrix) -> Result<WithinData> {
    let spans = design.firm_spans();
    for span in &spans {
        if span.len() < 2 {
            return Err(Error::DegenerateFit {
                message: format!(
                    "firm {} contributes fewer than 2 rows; no within variation",
                    design.firms()[design.firm_of_row()[span.start]]
                ),
            });
        }
    }
    let n = design.n_rows();
    let g = spans.len();
    let names = design.column_names();
    let all = column_matrix(design, &names);
    let p_all = all.cols();

    let mut firm_means_x = vec![vec![0.0; p_all]; g];
    let mut firm_means_y = vec![0.0; g];
    for (f, span) in spans.iter().enumerate() {
        let t = span.len() as f64;
        for i in span.clone() {
            firm_means_y[f] += design.y()[i];
            for j in 0..p_all {
                firm_means_x[f][j] += all[(i, j)];
            }
        }
        firm_means_y[f] /= t;
        for j in 0..p_all {
            firm_means_x[f][j] /= t;
        }
    }

    // Maximum within-firm deviation per column decides droppability.
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..p_all {
        let mut max_dev = 0.0_f64;
        let mut scale = 1.0_f64;
        for (f, span) in spans.iter().enumerate() {
            for i in span.clone() {
                max_dev = max_dev.max((all[(i, j)] - firm_means_x[f][j]).abs());
                scale = scale.max(all[(i, j)].abs());
            }
        }
        if max_dev <= 1e-9 * scale {
            dropped.push(names[j].clone());
        } else {
            keep.push(j);
        }
    }
    if keep.is_empty() {
        return Err(Error::UnderIdentified { rows: n, cols: 0 });
    }
    if n < keep.len() + g + 1 {
        return Err(Error::UnderIdentified {
            rows: n,
            cols: keep.len() + g,
        });
    }

    let mut x = Matrix::zeros(n, keep.len());
    let mut y = vec![0.0; n];
    for (f, span) in spans.iter().enumerate() {
        for i in span.clone() {
            y[i] = design.y()[i] - firm_means_y[f];
            for (jj, &j) in keep.iter().enumerate() {
                x[(i, jj)] = all[(i, j)] - firm_means_x[f][j];
            }
        }
    }
    let dependent = crate::numerics::dependent_columns(&x);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient {
            columns: dependent.into_iter().map(|j| names[keep[j]].clone()).collect(),
        });
    }
    Ok(WithinData {
        x,
        y,
        kept: keep.iter().map(|&j| names[j].clone()).collect(),
        dropped,
        firm_means_x: firm_means_x
            .into_iter()
            .map(|m| keep.iter().map(|&j| m[j]).collect())
            .collect(),
        firm_means_y,
    })
}

/// Liang-Zeger clustered covariance with the usual small-sample correction.
fn clustered_covariance(
    x: &Matrix,
    residuals: &[f64],
    xtx_inv: &Matrix,
    spans: &[std::ops::Range<usize>],
) -> Matrix {
    let p = x.cols();
    let n = x.rows() as f64;
    let g = spans.len() as f64;
    let mut meat = Matrix::zeros(p, p);
    for span in spans {
        let mut score = vec![0.0; p];
        for i in span.clone() {
            for j in 0..p {
                score[j] += x[(i, j)] * residuals[i];
            }
        }
        for a in 0..p {
            for b in 0..p {
                meat[(a, b)] += score[a] * score[b];
            }
        }
    }
    let correction = if g > 1.0 && n > p as f64 {
        (g / (g - 1.0)) * ((n - 1.0) / (n - p as f64))
    } else {
        1.0
    };
    let mut cov = xtx_inv.matmul(&meat).matmul(xtx_inv);
    for v in 0..p {
        for w in 0..p {
            cov[(v, w)] *= correction;
        }
    }
    cov
}

/// Within (demeaned) estimator with conventional covariance.
pub fn fit_fixed_effects(design: &DesignMatrix) -> Result<MeanFit> {
    fit_fixed_effects_opts(design, CovarianceKind::Conventional)
}

/// Within estimator with a choice of covariance. Coefficients equal
/// firm-dummy least squares; per-firm effects are reported demeaned with the
/// grand constant separate.
pub fn fit_fixed_effects_opts(design: &DesignMatrix, cov_kind: CovarianceKind) -> Result<MeanFit> {
    let wd = within_transform(design)?;
    let n = design.n_rows();
    let g = design.n_firms();
    let p = wd.kept.len();
    let (beta, xtx_inv, rss) = normal_solve(&wd.x, &wd.y)?;

    let dof = n as f64 - p as f64 - g as f64;
    if dof <= 0.0 {
        return Err(Error::UnderIdentified { rows: n, cols: p + g });
    }
    let sigma2 = rss / dof;
    let covariance = match cov_kind {
        CovarianceKind::Conventional => {
            let mut cov = xtx_inv.clone();
            for a in 0..p {
                for b in 0..p {
                    cov[(a, b)] *= sigma2;
                }
            }
            cov
        }
        CovarianceKind::ClusteredByFirm => {
            let residuals: Vec<f64> = (0..n)
                .map(|i| {
                    let fit: f64 = wd.x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
                    wd.y[i] - fit
                })
                .collect();
            clustered_covariance(&wd.x, &residuals, &xtx_inv, &design.firm_spans())
        }
    };

    // Firm-level offsets: mean(y_f) - mean(x_f)'beta, split into a grand
    // constant and zero-sum effects.
    let raw_effects: Vec<f64> = (0..g)
        .map(|f| {
            wd.firm_means_y[f]
                - wd.firm_means_x[f]
                    .iter()
                    .zip(&beta)
                    .map(|(m, b)| m * b)
                    .sum::<f64>()
        })
        .collect();
    let grand = raw_effects.iter().sum::<f64>() / g as f64;
    let firm_effects = design
        .firms()
        .iter()
        .zip(&raw_effects)
        .map(|(id, e)| (id.to_string(), e - grand))
        .collect();

    Ok(MeanFit {
        kind: MeanEstimator::FixedEffects,
        names: wd.kept,
        coefficients: beta,
        covariance,
        residual_variance: sigma2,
        intercept: Some(grand),
        firm_effects: Some(firm_effects),
        n,
        p,
        n_firms: g,
        dropped_columns: wd.dropped,
    })
}

/// Pooled least squares with an intercept.
pub fn fit_pooled(design: &DesignMatrix) -> Result<MeanFit> {
    let n = design.n_rows();
    let names = design.column_names();
    let p_all = names.len();
    if n < p_all + 2 {
        return Err(Error::UnderIdentified { rows: n, cols: p_all });
    }
    let base = column_matrix(design, &names);
    let mut x = Matrix::zeros(n, p_all + 1);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 0..p_all {
            x[(i, j + 1)] = base[(i, j)];
        }
    }
    check_full_rank(&x, &names)?;
    let (beta, xtx_inv, rss) = normal_solve(&x, design.y())?;
    let dof = n as f64 - (p_all + 1) as f64;
    let sigma2 = rss / dof;
    let mut cov = xtx_inv;
    for a in 0..=p_all {
        for b in 0..=p_all {
            cov[(a, b)] *= sigma2;
        }
    }
    let mut all_names = vec!["const".to_string()];
    all_names.extend(names);
    Ok(MeanFit {
        kind: MeanEstimator::Pooled,
        names: all_names,
        coefficients: beta,
        covariance: cov,
        residual_variance: sigma2,
        intercept: None,
        firm_effects: None,
        n,
        p: p_all + 1,
        n_firms: design.n_firms(),
        dropped_columns: Vec::new(),
    })
}

/// Swamy-Arora feasible GLS random effects. The idiosyncratic variance comes
/// from the within regression, the effect variance from the between
/// regression (floored at zero, with the harmonic-mean panel length as the
/// unbalancedness correction); each firm is quasi-demeaned by
/// `theta_i = 1 - sqrt(s2_eps / (s2_eps + T_i * s2_alpha))`.
pub fn fit_random_effects(design: &DesignMatrix) -> Result<MeanFit> {
    let wd = within_transform(design)?;
    let n = design.n_rows();
    let g = design.n_firms();
    let p = wd.kept.len();
    let spans = design.firm_spans();

    let (_, _, rss_within) = normal_solve(&wd.x, &wd.y)?;
    let dof_within = n as f64 - p as f64 - g as f64;
    if dof_within <= 0.0 {
        return Err(Error::UnderIdentified { rows: n, cols: p + g });
    }
    let s2_eps = rss_within / dof_within;
    if s2_eps <= 0.0 {
        return Err(Error::DegenerateFit {
            message: "idiosyncratic variance is not positive".to_string(),
        });
    }

    // Between regression on firm means (with intercept).
    let s2_alpha = if g > p + 1 {
        let mut xb = Matrix::zeros(g, p + 1);
        let mut yb = vec![0.0; g];
        for f in 0..g {
            xb[(f, 0)] = 1.0;
            for j in 0..p {
                xb[(f, j + 1)] = wd.firm_means_x[f][j];
            }
            yb[f] = wd.firm_means_y[f];
        }
        match normal_solve(&xb, &yb) {
            Ok((_, _, rss_between)) => {
                let s2_between = rss_between / (g - p - 1) as f64;
                let t_harmonic = g as f64 / spans.iter().map(|s| 1.0 / s.len() as f64).sum::<f64>();
                (s2_between - s2_eps / t_harmonic).max(0.0)
            }
            Err(_) => 0.0,
        }
    } else {
        0.0
    };

    // Quasi-demeaned regression, intercept included.
    let names = design.column_names();
    let base = column_matrix(design, &names);
    let mut x = Matrix::zeros(n, names.len() + 1);
    let mut y = vec![0.0; n];
    for span in &spans {
        let t_i = span.len() as f64;
        let theta = 1.0 - (s2_eps / (s2_eps + t_i * s2_alpha)).sqrt();
        let mut mean_all = vec![0.0; names.len()];
        let mut mean_y = 0.0;
        for i in span.clone() {
            mean_y += design.y()[i];
            for j in 0..names.len() {
                mean_all[j] += base[(i, j)];
            }
        }
        mean_y /= t_i;
        for m in mean_all.iter_mut() {
            *m /= t_i;
        }
        for i in span.clone() {
            x[(i, 0)] = 1.0 - theta;
            for j in 0..names.len() {
                x[(i, j + 1)] = base[(i, j)] - theta * mean_all[j];
            }
            y[i] = design.y()[i] - theta * mean_y;
        }
    }
    check_full_rank(&x, &names)?;
    let (beta, xtx_inv, _) = normal_solve(&x, &y)?;
    let mut cov = xtx_inv;
    for a in 0..=names.len() {
        for b in 0..=names.len() {
            cov[(a, b)] *= s2_eps;
        }
    }
    let mut all_names = vec!["const".to_string()];
    all_names.extend(names);
    Ok(MeanFit {
        kind: MeanEstimator::RandomEffects,
        names: all_names,
        coefficients: beta,
        covariance: cov,
        residual_variance: s2_eps,
        intercept: None,
        firm_effects: None,
        n,
        p: design.n_cols() + 1,
        n_firms: g,
        dropped_columns: Vec::new(),
    })
}

/// Quadratic-form Wald machinery shared by `MeanFit` and the quantile
/// engines: `W = b_S' inv(V_S) b_S` with a pseudo-inverse fallback and
/// rank-adjusted degrees of freedom.
pub fn wald_quadratic(
    names: &[String],
    coefficients: &[f64],
    covariance: &Matrix,
    subset: &[&str],
) -> Result<WaldResult> {
    if subset.is_empty() {
        return Err(Error::InvalidConfig {
            message: "Wald test needs a nonempty coefficient subset".to_string(),
        });
    }
    let mut idx = Vec::with_capacity(subset.len());
    for want in subset {
        let pos = names
            .iter()
            .position(|n| n == want)
            .ok_or_else(|| Error::UnknownCoefficient {
                name: want.to_string(),
            })?;
        idx.push(pos);
    }
    let k = idx.len();
    let b: Vec<f64> = idx.iter().map(|&i| coefficients[i]).collect();
    let mut v = Matrix::zeros(k, k);
    for (a, &ia) in idx.iter().enumerate() {
        for (c, &ic) in idx.iter().enumerate() {
            v[(a, c)] = covariance[(ia, ic)];
        }
    }
    let rank = matrix_rank(&v, 1e-10);
    let vinv = if rank == k {
        symmetric_inverse(&v)
    } else {
        pseudo_inverse(&v)
    };
    let w = {
        let tmp = vinv.matvec(&b);
        b.iter().zip(&tmp).map(|(a, c)| a * c).sum::<f64>().max(0.0)
    };
    let p_value = if rank == 0 { 1.0 } else { chi_square_sf(w, rank)? };
    Ok(WaldResult {
        statistic: w,
        df: rank,
        p_value,
    })
}

/// Wald test that the named coefficients of `fit` are jointly zero.
pub fn wald_test(fit: &MeanFit, subset: &[&str]) -> Result<WaldResult> {
    wald_quadratic(&fit.names, &fit.coefficients, &fit.covariance, subset)
}

/// Hausman contrast on the slope coefficients both estimators identify:
/// `H = d' pinv(V_fe - V_re) d`, df = rank of the covariance difference at
/// tolerance 1e-10, statistic clamped to be nonnegative.
pub fn hausman_test(fe: &MeanFit, re: &MeanFit) -> Result<HausmanResult> {
    let common: Vec<String> = fe
        .names
        .iter()
        .filter(|n| n.as_str() != "const" && re.names.contains(n))
        .cloned()
        .collect();
    if common.is_empty() {
        return Err(Error::InvalidConfig {
            message: "no common regressors between the two fits".to_string(),
        });
    }
    let k = common.len();
    let fe_idx: Vec<usize> = common
        .iter()
        .map(|n| fe.names.iter().position(|m| m == n).expect("common name"))
        .collect();
    let re_idx: Vec<usize> = common
        .iter()
        .map(|n| re.names.iter().position(|m| m == n).expect("common name"))
        .collect();
    let d: Vec<f64> = (0..k)
        .map(|j| fe.coefficients[fe_idx[j]] - re.coefficients[re_idx[j]])
        .collect();
    let mut vdiff = Matrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            vdiff[(a, b)] =
                fe.covariance[(fe_idx[a], fe_idx[b])] - re.covariance[(re_idx[a], re_idx[b])];
        }
    }
    let df = matrix_rank(&vdiff, 1e-10);
    let pinv = pseudo_inverse(&vdiff);
    let statistic = {
        let tmp = pinv.matvec(&d);
        d.iter().zip(&tmp).map(|(a, b)| a * b).sum::<f64>().max(0.0)
    };
    let p_value = if df == 0 {
        1.0
    } else {
        chi_square_sf(statistic, df)?
    };
    Ok(HausmanResult {
        statistic,
        df,
        p_value,
        common,
    })
}
