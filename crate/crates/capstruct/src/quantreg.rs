//! Cross-sectional quantile regression: check-loss minimization via the
//! interior-point core, LP optimality certification, a brute-force oracle for
//! small instances, and pairs-bootstrap covariance.

use crate::error::{Error, Result};
use crate::exec;
use crate::ipm::{self, IpmInput, IpmOptions, StructuredDesign};
use crate::numerics::{check_loss, dependent_columns, Matrix, RandomSource};

/// Solver controls.
#[derive(Debug, Clone, Copy)]
pub struct QrOptions {
    /// Duality-gap tolerance, relative to `1 + |objective|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QrOptions {
    fn default() -> Self {
        QrOptions {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// A fitted quantile regression.
#[derive(Debug, Clone)]
pub struct QrFit {
    pub tau: f64,
    pub coefficients: Vec<f64>,
    /// Total check loss at the returned coefficients.
    pub objective: f64,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    /// Residuals strictly below `-tol`.
    pub negative_count: usize,
    /// Residuals within `tol` of zero.
    pub zero_count: usize,
    /// Scale used for the residual-sign tolerance: `max(1, max|y|)`.
    pub y_scale: f64,
}

/// Outcome of the LP optimality count check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certification {
    pub negative_count: usize,
    pub zero_count: usize,
    pub passed: bool,
}

fn y_scale(y: &[f64]) -> f64 {
    y.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()))
}

fn residual_counts(residuals: &[f64], tol: f64) -> (usize, usize) {
    let negative = residuals.iter().filter(|&&r| r < -tol).count();
    let zero = residuals.iter().filter(|&&r| r.abs() <= tol).count();
    (negative, zero)
}

/// Gaussian elimination with partial pivoting for small square systems.
/// Returns `None` when the system is numerically singular.
fn solve_square(a: &mut [f64], rhs: &mut [f64], n: usize) -> Option<Vec<f64>> {
    let scale = a.iter().fold(1e-300_f64, |acc, v| acc.max(v.abs()));
    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if a[r * n + col].abs() > a[pivot * n + col].abs() {
                pivot = r;
            }
        }
        if a[pivot * n + col].abs() <= 1e-12 * scale {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            rhs.swap(col, pivot);
        }
        let d = a[col * n + col];
        for r in (col + 1)..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut out = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = rhs[i];
        for k in (i + 1)..n {
            v -= a[i * n + k] * out[k];
        }
        out[i] = v / a[i * n + i];
    }
    Some(out)
}

fn objective_at(x: &Matrix, y: &[f64], tau: f64, beta: &[f64]) -> f64 {
    (0..x.rows())
        .map(|i| {
            let fit: f64 = x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
            check_loss(tau, y[i] - fit)
        })
        .sum()
}

/// After the interior-point solve, tries to land on an exact LP vertex: the
/// `p` rows with the smallest residual magnitude are interpolated and the
/// vertex is kept only when it does not worsen the objective. Degenerate
/// optima (where no vertex is cleanly identified) keep the interior iterate.
fn vertex_snap(x: &Matrix, y: &[f64], tau: f64, ipm_beta: &[f64], ipm_obj: f64) -> Option<(Vec<f64>, f64)> {
    let (n, p) = (x.rows(), x.cols());
    let mut order: Vec<usize> = (0..n).collect();
    let resid: Vec<f64> = (0..n)
        .map(|i| {
            let fit: f64 = x.row(i).iter().zip(ipm_beta).map(|(a, b)| a * b).sum();
            y[i] - fit
        })
        .collect();
    order.sort_by(|&a, &b| resid[a].abs().total_cmp(&resid[b].abs()).then(a.cmp(&b)));
    let chosen = &order[..p];
    let mut sys = Vec::with_capacity(p * p);
    let mut rhs = Vec::with_capacity(p);
    for &i in chosen {
        sys.extend_from_slice(x.row(i));
        rhs.push(y[i]);
    }
    let beta = solve_square(&mut sys, &mut rhs, p)?;
    if beta.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let obj = objective_at(x, y, tau, &beta);
    if obj <= ipm_obj + 1e-12 * (1.0 + ipm_obj.abs()) {
        Some((beta, obj))
    } else {
        None
    }
}

/// Fits the `tau`-th quantile regression of `y` on `X` with default options.
pub fn fit_quantile(x: &Matrix, y: &[f64], tau: f64) -> Result<QrFit> {
    fit_quantile_opts(x, y, tau, &QrOptions::default())
}

/// Fits with explicit solver controls. Deterministic given inputs.
pub fn fit_quantile_opts(x: &Matrix, y: &[f64], tau: f64, opts: &QrOptions) -> Result<QrFit> {
    let (n, p) = (x.rows(), x.cols());
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidTau { tau });
    }
    if n < p {
        return Err(Error::UnderIdentified { rows: n, cols: p });
    }
    if x.data().iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig {
            message: "design and response must be finite".to_string(),
        });
    }
    let dependent = dependent_columns(x);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient {
            columns: dependent.iter().map(|j| format!("col{j}")).collect(),
        });
    }

    let design = StructuredDesign::plain(n, p, x.data().to_vec());
    let input = IpmInput {
        design: &design,
        response: y,
        weight: &vec![1.0; n],
        tau: &vec![tau; n],
    };
    let sol = ipm::solve(
        &input,
        &IpmOptions {
            tol: opts.tol,
            max_iter: opts.max_iter,
        },
    )?;

    let coefficients = match vertex_snap(x, y, tau, &sol.slopes, sol.objective) {
        Some((beta, _)) => beta,
        None => sol.slopes.clone(),
    };
    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            let fit: f64 = x.row(i).iter().zip(&coefficients).map(|(a, b)| a * b).sum();
            y[i] - fit
        })
        .collect();
    // Recomputed from the returned coefficients so the stored objective and
    // residuals always agree exactly.
    let objective = (0..n).map(|i| check_loss(tau, residuals[i])).sum::<f64>();
    let scale = y_scale(y);
    let (negative_count, zero_count) = residual_counts(&residuals, 1e-7 * scale);
    Ok(QrFit {
        tau,
        coefficients,
        objective,
        residuals,
        iterations: sol.iterations,
        negative_count,
        zero_count,
        y_scale: scale,
    })
}

/// LP optimality counting condition: with `N- = #{r < -tol}` and
/// `N0 = #{|r| <= tol}`, an optimal fit satisfies `N- <= n*tau <= N- + N0`.
pub fn certify_optimality(fit: &QrFit, n: usize, tau: f64) -> Certification {
    let tol = 1e-7 * fit.y_scale;
    let (negative_count, zero_count) = residual_counts(&fit.residuals, tol);
    let target = n as f64 * tau;
    let passed =
        negative_count as f64 <= target && target <= (negative_count + zero_count) as f64;
    Certification {
        negative_count,
        zero_count,
        passed,
    }
}

/// Brute-force reference optimum: enumerates every size-`p` observation
/// subset with an invertible sub-matrix, solves the exact interpolation, and
/// returns the best objective and one optimal coefficient vector. Guarded to
/// `n <= 14`, `p <= 3`.
pub fn brute_force_qr(x: &Matrix, y: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
    let (n, p) = (x.rows(), x.cols());
    if n > 14 || p > 3 {
        return Err(Error::InvalidConfig {
            message: format!("brute_force_qr guard exceeded (n = {n} <= 14, p = {p} <= 3)"),
        });
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidTau { tau });
    }
    let mut subset: Vec<usize> = (0..p).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        let mut sys = Vec::with_capacity(p * p);
        let mut rhs = Vec::with_capacity(p);
        for &i in &subset {
            sys.extend_from_slice(x.row(i));
            rhs.push(y[i]);
        }
        if let Some(beta) = solve_square(&mut sys, &mut rhs, p) {
            if beta.iter().all(|v| v.is_finite()) {
                let obj = objective_at(x, y, tau, &beta);
                match &best {
                    Some((b, _)) if *b <= obj => {}
                    _ => best = Some((obj, beta)),
                }
            }
        }
        // Next lexicographic combination.
        let mut k = p;
        loop {
            if k == 0 {
                return best.ok_or_else(|| Error::DegenerateFit {
                    message: "all observation subsets are singular".to_string(),
                });
            }
            k -= 1;
            if subset[k] != k + n - p {
                subset[k] += 1;
                for j in (k + 1)..p {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Bootstrap covariance output.
#[derive(Debug, Clone)]
pub struct BootstrapCovariance {
    pub covariance: Matrix,
    pub standard_errors: Vec<f64>,
    pub replicates: usize,
}

fn distinct_labels(ids: &[usize]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = Vec::new();
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for (row, &id) in ids.iter().enumerate() {
        if !groups.contains_key(&id) {
            order.push(id);
        }
        groups.entry(id).or_default().push(row);
    }
    order.into_iter().map(|id| groups[&id].clone()).collect()
}

/// Covariance of replicate coefficient vectors around their mean (divisor
/// `B - 1`).
pub(crate) fn replicate_covariance(reps: &[Vec<f64>]) -> BootstrapCovariance {
    let b = reps.len();
    let p = reps[0].len();
    let mut mean = vec![0.0; p];
    for rep in reps {
        for (m, v) in mean.iter_mut().zip(rep) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= b as f64;
    }
    let mut cov = Matrix::zeros(p, p);
    for rep in reps {
        for a in 0..p {
            let da = rep[a] - mean[a];
            for c in 0..p {
                cov[(a, c)] += da * (rep[c] - mean[c]);
            }
        }
    }
    for v in 0..p {
        for w in 0..p {
            cov[(v, w)] /= (b - 1) as f64;
        }
    }
    let standard_errors = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    BootstrapCovariance {
        covariance: cov,
        standard_errors,
        replicates: b,
    }
}

/// Runs a deterministic batch of bootstrap attempts: attempt `k` always uses
/// the child seed `(seed, k)`, successes are kept in attempt order, and
/// failed refits are replaced by later attempts up to a `10 * b` budget.
/// Results are therefore identical for any degree of parallelism.
pub(crate) fn bootstrap_replicates<F>(b: usize, rng: &RandomSource, fit_one: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut RandomSource) -> Option<Vec<f64>> + Sync + Send,
{
    if b < 2 {
        return Err(Error::InvalidConfig {
            message: format!("bootstrap needs at least 2 replicates, got {b}"),
        });
    }
    let budget = 10 * b;
    let mut reps: Vec<Vec<f64>> = Vec::with_capacity(b);
    let mut attempts = 0;
    while reps.len() < b {
        if attempts >= budget {
            return Err(Error::BootstrapExhausted {
                attempts,
                wanted: b,
            });
        }
        let chunk = (b - reps.len()).min(budget - attempts);
        let outcomes = exec::map_indexed(chunk, |k| {
            let mut child = rng.child((attempts + k) as u64);
            fit_one(&mut child)
        });
        attempts += chunk;
        for outcome in outcomes.into_iter().flatten() {
            if reps.len() < b {
                reps.push(outcome);
            }
        }
    }
    Ok(reps)
}

/// Pairs bootstrap: resamples rows (or whole clusters when ids are given)
/// with replacement and refits each replicate. Deterministic under a fixed
/// seed; replicate `r` uses the child seed `(seed, r)`.
pub fn bootstrap_covariance(
    x: &Matrix,
    y: &[f64],
    tau: f64,
    b: usize,
    rng: &RandomSource,
    cluster_ids: Option<&[usize]>,
) -> Result<BootstrapCovariance> {
    let n = x.rows();
    let p = x.cols();
    let clusters = cluster_ids.map(distinct_labels);
    let reps = bootstrap_replicates(b, rng, |child| {
        let rows: Vec<usize> = match &clusters {
            None => (0..n).map(|_| child.index(n)).collect(),
            Some(groups) => {
                let g = groups.len();
                let mut rows = Vec::new();
                for _ in 0..g {
                    rows.extend_from_slice(&groups[child.index(g)]);
                }
                rows
            }
        };
        let mut xr = Matrix::zeros(rows.len(), p);
        let mut yr = Vec::with_capacity(rows.len());
        for (dst, &src) in rows.iter().enumerate() {
            for j in 0..p {
                xr[(dst, j)] = x[(src, j)];
            }
            yr.push(y[src]);
        }
        fit_quantile(&xr, &yr, tau).ok().map(|f| f.coefficients)
    })?;
    Ok(replicate_covariance(&reps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept_only(n: usize) -> Matrix {
        Matrix::from_columns(&[vec![1.0; n]])
    }

    #[test]
    fn median_fit_is_exact_sample_median() {
        let x = intercept_only(3);
        let fit = fit_quantile(&x, &[1.0, 2.0, 9.0], 0.5).unwrap();
        // Vertex polish lands exactly on the middle order statistic.
        assert_eq!(fit.coefficients[0], 2.0);
        assert!((fit.objective - 4.0).abs() < 1e-9);
    }

    #[test]
    fn two_point_interpolation() {
        let x = Matrix::from_columns(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
        for tau in [0.2, 0.5, 0.8] {
            let fit = fit_quantile(&x, &[1.0, 3.0], tau).unwrap();
            assert!((fit.coefficients[0] - 1.0).abs() < 1e-9);
            assert!((fit.coefficients[1] - 2.0).abs() < 1e-9);
            assert!(fit.objective < 1e-9);
        }
    }

    #[test]
    fn degenerate_quartile_objective() {
        // Loss at beta = 1 is 0.25*(1+2+3) = 1.5 and at beta = 2 it is
        // 0.75*1 + 0.25*(1+2) = 1.5: a flat optimal interval.
        let x = intercept_only(4);
        let fit = fit_quantile(&x, &[1.0, 2.0, 3.0, 4.0], 0.25).unwrap();
        assert!((fit.objective - 1.5).abs() < 1e-7);
        assert!(fit.coefficients[0] >= 1.0 - 1e-6 && fit.coefficients[0] <= 2.0 + 1e-6);
    }

    #[test]
    fn rejects_bad_tau_and_shapes() {
        let x = intercept_only(3);
        assert!(matches!(
            fit_quantile(&x, &[1.0, 2.0, 3.0], 0.0),
            Err(Error::InvalidTau { .. })
        ));
        let wide = Matrix::from_columns(&[vec![1.0], vec![2.0]]);
        assert!(matches!(
            fit_quantile(&wide, &[1.0], 0.5),
            Err(Error::UnderIdentified { .. })
        ));
    }

    #[test]
    fn rank_deficiency_names_dependent_columns() {
        let x = Matrix::from_columns(&[
            vec![1.0, 1.0, 1.0, 1.0],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![2.0, 4.0, 6.0, 8.0],
        ]);
        match fit_quantile(&x, &[1.0, 2.0, 3.0, 4.0], 0.5) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["col2"]),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn certify_median_of_three() {
        let x = intercept_only(3);
        let fit = fit_quantile(&x, &[1.0, 2.0, 9.0], 0.5).unwrap();
        let cert = certify_optimality(&fit, 3, 0.5);
        assert_eq!(cert.negative_count, 1);
        assert_eq!(cert.zero_count, 1);
        assert!(cert.passed);
    }

    #[test]
    fn certify_fails_on_perturbed_fit() {
        // Shift the median fit up by 0.5: residuals (-1.5, -0.5, 6.5), so
        // N- = 2 > n*tau = 1.5 and the count condition fails.
        let x = intercept_only(3);
        let mut fit = fit_quantile(&x, &[1.0, 2.0, 9.0], 0.5).unwrap();
        fit.coefficients[0] += 0.5;
        fit.residuals = vec![1.0 - 2.5, 2.0 - 2.5, 9.0 - 2.5];
        let cert = certify_optimality(&fit, 3, 0.5);
        assert!(!cert.passed);
        assert_eq!(cert.negative_count, 2);
    }

    #[test]
    fn certify_exact_interpolation_any_tau() {
        let x = Matrix::from_columns(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
        for tau in [0.1, 0.5, 0.9] {
            let fit = fit_quantile(&x, &[1.0, 3.0], tau).unwrap();
            let cert = certify_optimality(&fit, 2, tau);
            assert_eq!(cert.negative_count, 0);
            assert_eq!(cert.zero_count, 2);
            assert!(cert.passed);
        }
    }

    #[test]
    fn brute_force_examples() {
        let x = intercept_only(3);
        let (obj, beta) = brute_force_qr(&x, &[1.0, 2.0, 9.0], 0.5).unwrap();
        assert!((obj - 4.0).abs() < 1e-12);
        assert_eq!(beta, vec![2.0]);

        let x4 = intercept_only(4);
        let (obj, _) = brute_force_qr(&x4, &[1.0, 2.0, 3.0, 4.0], 0.25).unwrap();
        assert!((obj - 1.5).abs() < 1e-12);
    }

    #[test]
    fn brute_force_guard() {
        let x = intercept_only(15);
        let y = vec![0.0; 15];
        assert!(brute_force_qr(&x, &y, 0.5).is_err());
    }

    #[test]
    fn fit_matches_brute_force_on_random_instances() {
        for seed in 0..25u64 {
            let mut rng = RandomSource::new(900 + seed);
            let n = 6 + (seed as usize % 7);
            let p = 1 + (seed as usize % 2);
            let mut cols = vec![vec![1.0; n]];
            if p == 2 {
                cols.push((0..n).map(|_| rng.normal(0.0, 1.0)).collect());
            }
            let x = Matrix::from_columns(&cols);
            let y: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 2.0)).collect();
            let tau = [0.1, 0.25, 0.5, 0.75, 0.9][seed as usize % 5];
            let fit = fit_quantile(&x, &y, tau).unwrap();
            let (oracle_obj, _) = brute_force_qr(&x, &y, tau).unwrap();
            assert!(
                (fit.objective - oracle_obj).abs() < 1e-7,
                "seed {seed}: fit {} vs oracle {oracle_obj}",
                fit.objective
            );
            assert!(certify_optimality(&fit, n, tau).passed, "seed {seed} failed certification");
        }
    }

    #[test]
    fn intercept_only_fit_is_an_empirical_quantile() {
        let mut rng = RandomSource::new(42);
        let y: Vec<f64> = (0..31).map(|_| rng.normal(1.0, 3.0)).collect();
        for tau in [0.2, 0.5, 0.8] {
            let fit = fit_quantile(&intercept_only(y.len()), &y, tau).unwrap();
            let q = crate::numerics::empirical_quantile(&y, tau).unwrap();
            let loss_at_q: f64 = y.iter().map(|v| check_loss(tau, v - q)).sum();
            assert!((fit.objective - loss_at_q).abs() < 1e-8);
        }
    }

    #[test]
    fn affine_equivariance() {
        let mut rng = RandomSource::new(7);
        let n = 40;
        let x = Matrix::from_columns(&[
            vec![1.0; n],
            (0..n).map(|_| rng.normal(0.0, 1.0)).collect(),
            (0..n).map(|_| rng.normal(0.0, 1.0)).collect(),
        ]);
        let y: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
        let a = 2.5;
        let shift = [0.7, -1.3, 0.4];
        let y2: Vec<f64> = (0..n)
            .map(|i| {
                let xc: f64 = x.row(i).iter().zip(&shift).map(|(v, c)| v * c).sum();
                a * y[i] + xc
            })
            .collect();
        for tau in [0.25, 0.5, 0.75] {
            let f1 = fit_quantile(&x, &y, tau).unwrap();
            let f2 = fit_quantile(&x, &y2, tau).unwrap();
            for j in 0..3 {
                let want = a * f1.coefficients[j] + shift[j];
                assert!(
                    (f2.coefficients[j] - want).abs() < 1e-6,
                    "tau {tau} col {j}: {} vs {want}",
                    f2.coefficients[j]
                );
            }
        }
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let mut rng = RandomSource::new(5);
        let n = 60;
        let x = Matrix::from_columns(&[vec![1.0; n], (0..n).map(|_| rng.normal(0.0, 1.0)).collect()]);
        let y: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * x[(i, 1)] + rng.normal(0.0, 0.3)).collect();
        let src = RandomSource::new(99);
        let a = bootstrap_covariance(&x, &y, 0.5, 50, &src, None).unwrap();
        let b = bootstrap_covariance(&x, &y, 0.5, 50, &src, None).unwrap();
        assert_eq!(a.standard_errors, b.standard_errors);
        assert_eq!(a.replicates, 50);
    }

    #[test]
    fn bootstrap_zero_noise_zero_se() {
        let n = 30;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / 7.0).collect();
        let x = Matrix::from_columns(&[vec![1.0; n], xs.clone()]);
        let y: Vec<f64> = xs.iter().map(|v| 2.0 + 3.0 * v).collect();
        let src = RandomSource::new(4);
        let cov = bootstrap_covariance(&x, &y, 0.5, 40, &src, None).unwrap();
        assert!(cov.standard_errors.iter().all(|&se| se < 1e-10), "{:?}", cov.standard_errors);
    }

    #[test]
    fn bootstrap_location_model_se_matches_theory() {
        // y = 5 + eps with eps standard normal: the asymptotic SE of the
        // sample median is 1.2533/sqrt(n) ~ 0.0627 at n = 400.
        let mut rng = RandomSource::new(2024);
        let n = 400;
        let y: Vec<f64> = (0..n).map(|_| 5.0 + rng.normal(0.0, 1.0)).collect();
        let src = RandomSource::new(77);
        let cov = bootstrap_covariance(&intercept_only(n), &y, 0.5, 200, &src, None).unwrap();
        let se = cov.standard_errors[0];
        assert!((0.04..=0.09).contains(&se), "intercept SE {se}");
    }

    #[test]
    fn bootstrap_requires_two_replicates() {
        let src = RandomSource::new(1);
        let x = intercept_only(5);
        assert!(bootstrap_covariance(&x, &[1.0, 2.0, 3.0, 4.0, 5.0], 0.5, 1, &src, None).is_err());
    }

    #[test]
    fn bootstrap_redraws_failed_replicates() {
        // A sparse dummy column makes some resamples rank deficient; those
        // replicates are redrawn and the requested count is still reached.
        let n = 8;
        let mut dummy = vec![0.0; n];
        dummy[0] = 1.0;
        dummy[1] = 1.0;
        let x = Matrix::from_columns(&[vec![1.0; n], dummy.clone()]);
        let y: Vec<f64> = (0..n).map(|i| 1.0 + dummy[i] * 0.5 + i as f64 * 0.01).collect();
        let src = RandomSource::new(12);
        let cov = bootstrap_covariance(&x, &y, 0.5, 30, &src, None).unwrap();
        assert_eq!(cov.replicates, 30);
        assert!(cov.standard_errors.iter().all(|se| se.is_finite()));
    }

    #[test]
    fn bootstrap_exhausts_budget_on_unfittable_designs() {
        // Duplicated columns make every replicate rank deficient.
        let n = 6;
        let col: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let x = Matrix::from_columns(&[col.clone(), col.clone()]);
        let y = vec![0.0; n];
        let src = RandomSource::new(2);
        assert!(matches!(
            bootstrap_covariance(&x, &y, 0.5, 3, &src, None),
            Err(Error::BootstrapExhausted { .. })
        ));
    }

    #[test]
    fn cluster_bootstrap_resamples_whole_clusters() {
        let n = 40;
        let mut rng = RandomSource::new(10);
        let x = Matrix::from_columns(&[vec![1.0; n], (0..n).map(|_| rng.normal(0.0, 1.0)).collect()]);
        let y: Vec<f64> = (0..n).map(|i| 0.3 * x[(i, 1)] + rng.normal(0.0, 0.2)).collect();
        let ids: Vec<usize> = (0..n).map(|i| i / 4).collect();
        let src = RandomSource::new(3);
        let cov = bootstrap_covariance(&x, &y, 0.5, 30, &src, Some(&ids)).unwrap();
        assert_eq!(cov.covariance.rows(), 2);
        assert!(cov.standard_errors.iter().all(|se| se.is_finite()));
    }
}
