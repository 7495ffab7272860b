//! Primal-dual interior-point solver for weighted check-loss minimization.
//!
//! Minimizing `sum_i w_i * rho_{tau_i}(y_i - d_i'theta)` is a linear program.
//! Working with its bounded dual
//!
//! ```text
//!   max y'a   subject to  D'a = D'xi,  0 <= a <= w,   xi_i = w_i (1 - tau_i)
//! ```
//!
//! a Mehrotra predictor-corrector iteration needs one weighted normal-equation
//! solve `D' Q D` per step. The regression coefficients are the negated
//! multipliers of the equality constraints, and `obj(theta) - y'(a - xi)` is a
//! valid duality gap, which is the stopping criterion.
//!
//! Designs may carry a block of per-firm intercept columns. Those columns are
//! unit-sparse (one nonzero per row), so `D' Q D` has a diagonal firm-firm
//! block and the solve reduces to a Schur complement on the dense slope
//! columns: cost per iteration stays linear in the number of firms.
//!
//! The iteration itself is deterministic: no randomized pivoting, fixed
//! reduction order.

use crate::error::{Error, Result};
use crate::numerics::check_loss;

/// Dense slope columns plus an optional unit-sparse firm-intercept block.
#[derive(Debug, Clone)]
pub(crate) struct StructuredDesign {
    /// Number of dense slope columns.
    pub n_slopes: usize,
    /// Row-major `m x n_slopes` slope entries.
    pub slopes: Vec<f64>,
    /// Firm index per row, or `None` for a plain cross-sectional design.
    pub firm_of_row: Option<Vec<usize>>,
    /// Number of firm-intercept columns (0 without a firm block).
    pub n_firms: usize,
}

impl StructuredDesign {
    pub fn plain(n_rows: usize, n_slopes: usize, slopes: Vec<f64>) -> Self {
        assert_eq!(slopes.len(), n_rows * n_slopes);
        StructuredDesign {
            n_slopes,
            slopes,
            firm_of_row: None,
            n_firms: 0,
        }
    }

    pub fn with_firms(n_slopes: usize, slopes: Vec<f64>, firm_of_row: Vec<usize>, n_firms: usize) -> Self {
        assert_eq!(slopes.len(), firm_of_row.len() * n_slopes);
        StructuredDesign {
            n_slopes,
            slopes,
            firm_of_row: Some(firm_of_row),
            n_firms,
        }
    }

    pub fn n_rows(&self) -> usize {
        if self.n_slopes == 0 {
            self.firm_of_row.as_ref().map_or(0, |f| f.len())
        } else {
            self.slopes.len() / self.n_slopes
        }
    }

    fn slope_row(&self, i: usize) -> &[f64] {
        &self.slopes[i * self.n_slopes..(i + 1) * self.n_slopes]
    }

    /// `out[i] = d_i' theta` with `theta = (slopes, firms)`.
    fn apply(&self, theta_s: &[f64], theta_f: &[f64], out: &mut [f64]) {
        for i in 0..self.n_rows() {
            let mut acc = 0.0;
            for (x, b) in self.slope_row(i).iter().zip(theta_s) {
                acc += x * b;
            }
            if let Some(firms) = &self.firm_of_row {
                acc += theta_f[firms[i]];
            }
            out[i] = acc;
        }
    }

    /// `out_s = Xs' v`, `out_f[g] = sum of v over rows of firm g`.
    fn apply_transpose(&self, v: &[f64], out_s: &mut [f64], out_f: &mut [f64]) {
        out_s.fill(0.0);
        out_f.fill(0.0);
        for i in 0..self.n_rows() {
            let vi = v[i];
            if vi != 0.0 {
                for (o, x) in out_s.iter_mut().zip(self.slope_row(i)) {
                    *o += x * vi;
                }
            }
            if let Some(firms) = &self.firm_of_row {
                out_f[firms[i]] += vi;
            }
        }
    }
}

/// Cholesky with a ridge retry for nearly singular normal matrices.
struct SymFactor {
    n: usize,
    l: Vec<f64>,
}

impl SymFactor {
    fn factor(mut a: Vec<f64>, n: usize) -> Option<SymFactor> {
        let base: Vec<f64> = a.clone();
        let trace: f64 = (0..n).map(|i| base[i * n + i]).sum();
        for attempt in 0..8 {
            if attempt > 0 {
                let ridge =
                    (trace / n.max(1) as f64).abs().max(1e-30) * 1e-12 * 10f64.powi(attempt);
                a.copy_from_slice(&base);
                for i in 0..n {
                    a[i * n + i] += ridge;
                }
            }
            if Self::try_factor(&mut a, n) {
                return Some(SymFactor { n, l: a });
            }
            a.copy_from_slice(&base);
        }
        None
    }

    fn try_factor(a: &mut [f64], n: usize) -> bool {
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= a[j * n + k] * a[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return false;
            }
            let dj = d.sqrt();
            a[j * n + j] = dj;
            for i in (j + 1)..n {
                let mut v = a[i * n + j];
                for k in 0..j {
                    v -= a[i * n + k] * a[j * n + k];
                }
                a[i * n + j] = v / dj;
            }
        }
        true
    }

    fn solve(&self, rhs: &mut [f64]) {
        let (n, l) = (self.n, &self.l);
        for i in 0..n {
            let mut v = rhs[i];
            for k in 0..i {
                v -= l[i * n + k] * rhs[k];
            }
            rhs[i] = v / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = rhs[i];
            for k in (i + 1)..n {
                v -= l[k * n + i] * rhs[k];
            }
            rhs[i] = v / l[i * n + i];
        }
    }
}

/// Factored weighted normal matrix `D' Q D`, either dense or in Schur form
/// over the firm block.
enum NormalFactor {
    Dense(SymFactor),
    Schur {
        schur: SymFactor,
        /// `Xs' Q F`, column per firm (p x g, column-major).
        cross: Vec<f64>,
        /// Diagonal of the firm block.
        firm_diag: Vec<f64>,
    },
}

impl NormalFactor {
    fn build(design: &StructuredDesign, q: &[f64]) -> Result<NormalFactor> {
        let p = design.n_slopes;
        let m = design.n_rows();
        let mut mss = vec![0.0; p * p];
        for i in 0..m {
            let qi = q[i];
            if qi == 0.0 {
                continue;
            }
            let row = design.slope_row(i);
            for a in 0..p {
                let qa = qi * row[a];
                for b in a..p {
                    mss[a * p + b] += qa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                mss[a * p + b] = mss[b * p + a];
            }
        }
        match &design.firm_of_row {
            None => {
                let f = SymFactor::factor(mss, p).ok_or_else(|| Error::DegenerateFit {
                    message: "normal matrix is singular".to_string(),
                })?;
                Ok(NormalFactor::Dense(f))
            }
            Some(firms) => {
                let g = design.n_firms;
                let mut cross = vec![0.0; p * g];
                let mut firm_diag = vec![0.0; g];
                for i in 0..m {
                    let qi = q[i];
                    let fi = firms[i];
                    firm_diag[fi] += qi;
                    let row = design.slope_row(i);
                    for a in 0..p {
                        cross[fi * p + a] += qi * row[a];
                    }
                }
                // Guard against a firm whose weights have collapsed entirely.
                for d in firm_diag.iter_mut() {
                    if *d < 1e-300 {
                        *d = 1e-300;
                    }
                }
                let mut schur = mss;
                for f in 0..g {
                    let inv_d = 1.0 / firm_diag[f];
                    let col = &cross[f * p..(f + 1) * p];
                    for a in 0..p {
                        let ca = col[a] * inv_d;
                        for b in 0..p {
                            schur[a * p + b] -= ca * col[b];
                        }
                    }
                }
                let f = SymFactor::factor(schur, p).ok_or_else(|| Error::DegenerateFit {
                    message: "Schur complement is singular".to_string(),
                })?;
                Ok(NormalFactor::Schur {
                    schur: f,
                    cross,
                    firm_diag,
                })
            }
        }
    }

    /// Solves `(D' Q D) out = rhs` with `rhs = (rhs_s, rhs_f)`.
    fn solve(&self, rhs_s: &mut [f64], rhs_f: &mut [f64]) {
        match self {
            NormalFactor::Dense(f) => f.solve(rhs_s),
            NormalFactor::Schur {
                schur,
                cross,
                firm_diag,
            } => {
                let p = rhs_s.len();
                let g = rhs_f.len();
                for f in 0..g {
                    let scaled = rhs_f[f] / firm_diag[f];
                    let col = &cross[f * p..(f + 1) * p];
                    for a in 0..p {
                        rhs_s[a] -= col[a] * scaled;
                    }
                }
                schur.solve(rhs_s);
                for f in 0..g {
                    let col = &cross[f * p..(f + 1) * p];
                    let mut dot = 0.0;
                    for a in 0..p {
                        dot += col[a] * rhs_s[a];
                    }
                    rhs_f[f] = (rhs_f[f] - dot) / firm_diag[f];
                }
            }
        }
    }
}

pub(crate) struct IpmInput<'a> {
    pub design: &'a StructuredDesign,
    pub response: &'a [f64],
    pub weight: &'a [f64],
    pub tau: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct IpmSolution {
    pub slopes: Vec<f64>,
    pub firm_intercepts: Vec<f64>,
    pub iterations: usize,
    pub objective: f64,
}

fn weighted_objective(input: &IpmInput, fitted: &[f64]) -> f64 {
    let mut obj = 0.0;
    for i in 0..input.response.len() {
        obj += input.weight[i] * check_loss(input.tau[i], input.response[i] - fitted[i]);
    }
    obj
}

/// Largest step in [0, 1] keeping `v + alpha * dv` strictly positive.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut alpha = 1.0_f64;
    for (vi, di) in v.iter().zip(dv) {
        if *di < 0.0 {
            alpha = alpha.min(-vi / di);
        }
    }
    alpha
}

pub(crate) fn solve(input: &IpmInput, opts: &IpmOptions) -> Result<IpmSolution> {
    let design = input.design;
    let m = design.n_rows();
    let p = design.n_slopes;
    let g = design.n_firms;
    assert_eq!(input.response.len(), m);
    assert_eq!(input.weight.len(), m);
    assert_eq!(input.tau.len(), m);

    // Box LP data: min c'x s.t. D'x = D'xi, 0 <= x <= u.
    let u: Vec<f64> = input.weight.to_vec();
    let xi: Vec<f64> = (0..m).map(|i| input.weight[i] * (1.0 - input.tau[i])).collect();
    let c: Vec<f64> = input.response.iter().map(|y| -y).collect();

    let mut b_s = vec![0.0; p];
    let mut b_f = vec![0.0; g];
    design.apply_transpose(&xi, &mut b_s, &mut b_f);
    let b_scale = b_s
        .iter()
        .chain(b_f.iter())
        .fold(1.0_f64, |acc, v| acc.max(v.abs()));

    // Interior start: x = xi, s = u - xi; multipliers from the least-squares
    // fit of the responses on the design.
    let mut x = xi.clone();
    let mut s: Vec<f64> = u.iter().zip(&xi).map(|(ui, xii)| ui - xii).collect();

    let ones = vec![1.0; m];
    let ls = NormalFactor::build(design, &ones)?;
    let mut y_s = vec![0.0; p];
    let mut y_f = vec![0.0; g];
    design.apply_transpose(&c, &mut y_s, &mut y_f);
    ls.solve(&mut y_s, &mut y_f);

    let mut fitted = vec![0.0; m];
    design.apply(&y_s, &y_f, &mut fitted); // D y_lp
    let r_dual: Vec<f64> = (0..m).map(|i| c[i] - fitted[i]).collect();
    let eps0 = {
        let mean_abs = r_dual.iter().map(|v| v.abs()).sum::<f64>() / m as f64;
        (0.1 * mean_abs).max(1e-4)
    };
    let mut z: Vec<f64> = r_dual.iter().map(|r| r.max(0.0) + eps0).collect();
    let mut w: Vec<f64> = r_dual.iter().map(|r| (-r).max(0.0) + eps0).collect();

    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut gap = f64::INFINITY;

    for iter in 0..opts.max_iter {
        // Current coefficients and duality gap. theta = -y_lp.
        let theta_s: Vec<f64> = y_s.iter().map(|v| -v).collect();
        let theta_f: Vec<f64> = y_f.iter().map(|v| -v).collect();
        design.apply(&theta_s, &theta_f, &mut fitted);
        let primal = weighted_objective(input, &fitted);
        let dual: f64 = (0..m).map(|i| input.response[i] * (x[i] - xi[i])).sum();
        gap = primal - dual;

        let mut rb_s = vec![0.0; p];
        let mut rb_f = vec![0.0; g];
        design.apply_transpose(&x, &mut rb_s, &mut rb_f);
        for (r, b) in rb_s.iter_mut().zip(&b_s) {
            *r = b - *r;
        }
        for (r, b) in rb_f.iter_mut().zip(&b_f) {
            *r = b - *r;
        }
        let rb_norm = rb_s
            .iter()
            .chain(rb_f.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()));

        if gap.abs() <= opts.tol * (1.0 + primal.abs()) && rb_norm <= 1e-8 * b_scale {
            return Ok(IpmSolution {
                slopes: theta_s,
                firm_intercepts: theta_f,
                iterations: iter,
                objective: primal,
            });
        }
        match &best {
            Some((bg, _, _)) if *bg <= gap.abs() => {}
            _ => best = Some((gap.abs(), theta_s.clone(), theta_f.clone())),
        }

        // r_u and r_c stay numerically tiny but are carried for robustness.
        let r_u: Vec<f64> = (0..m).map(|i| u[i] - x[i] - s[i]).collect();
        // fitted currently holds D theta = -D y_lp.
        let r_c: Vec<f64> = (0..m).map(|i| c[i] + fitted[i] - z[i] + w[i]).collect();

        let q: Vec<f64> = (0..m)
            .map(|i| {
                let e = z[i] / x[i] + w[i] / s[i];
                (1.0 / e).clamp(1e-14, 1e14)
            })
            .collect();
        let factor = NormalFactor::build(design, &q)?;

        let mu = ((0..m).map(|i| x[i] * z[i] + s[i] * w[i]).sum::<f64>()) / (2.0 * m as f64);

        // One Newton solve for a given pair of complementarity targets.
        let solve_direction = |factor: &NormalFactor,
                               t_x: &dyn Fn(usize) -> f64,
                               t_s: &dyn Fn(usize) -> f64|
         -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            let rr: Vec<f64> = (0..m)
                .map(|i| r_c[i] - t_x(i) / x[i] + z[i] + t_s(i) / s[i] - w[i] - (w[i] / s[i]) * r_u[i])
                .collect();
            let mut rhs_s = rb_s.clone();
            let mut rhs_f = rb_f.clone();
            let qr: Vec<f64> = (0..m).map(|i| q[i] * rr[i]).collect();
            let mut tmp_s = vec![0.0; p];
            let mut tmp_f = vec![0.0; g];
            design.apply_transpose(&qr, &mut tmp_s, &mut tmp_f);
            for (r, t) in rhs_s.iter_mut().zip(&tmp_s) {
                *r += t;
            }
            for (r, t) in rhs_f.iter_mut().zip(&tmp_f) {
                *r += t;
            }
            factor.solve(&mut rhs_s, &mut rhs_f);
            let (dy_s, dy_f) = (rhs_s, rhs_f);

            let mut d_apply = vec![0.0; m];
            design.apply(&dy_s, &dy_f, &mut d_apply);
            let dx: Vec<f64> = (0..m).map(|i| q[i] * (d_apply[i] - rr[i])).collect();
            let ds: Vec<f64> = (0..m).map(|i| r_u[i] - dx[i]).collect();
            let dz: Vec<f64> = (0..m).map(|i| t_x(i) / x[i] - z[i] - (z[i] / x[i]) * dx[i]).collect();
            let dw: Vec<f64> = (0..m).map(|i| t_s(i) / s[i] - w[i] - (w[i] / s[i]) * ds[i]).collect();
            (dy_s.iter().chain(dy_f.iter()).copied().collect(), dx, ds, dz, dw)
        };

        // Affine predictor.
        let zero_x = |_: usize| 0.0;
        let zero_s = |_: usize| 0.0;
        let (_, dx_a, ds_a, dz_a, dw_a) = solve_direction(&factor, &zero_x, &zero_s);
        let ap_aff = max_step(&x, &dx_a).min(max_step(&s, &ds_a));
        let ad_aff = max_step(&z, &dz_a).min(max_step(&w, &dw_a));
        let mu_aff = (0..m)
            .map(|i| {
                (x[i] + ap_aff * dx_a[i]) * (z[i] + ad_aff * dz_a[i])
                    + (s[i] + ap_aff * ds_a[i]) * (w[i] + ad_aff * dw_a[i])
            })
            .sum::<f64>()
            / (2.0 * m as f64);
        let sigma = if mu > 0.0 {
            ((mu_aff / mu).powi(3)).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // Corrector with Mehrotra's second-order terms.
        let t_x = |i: usize| sigma * mu - dx_a[i] * dz_a[i];
        let t_s = |i: usize| sigma * mu - ds_a[i] * dw_a[i];
        let (dy, dx, ds, dz, dw) = solve_direction(&factor, &t_x, &t_s);

        let eta = 0.9995;
        let ap = (eta * max_step(&x, &dx).min(max_step(&s, &ds))).min(1.0);
        let ad = (eta * max_step(&z, &dz).min(max_step(&w, &dw))).min(1.0);

        for i in 0..m {
            x[i] += ap * dx[i];
            s[i] += ap * ds[i];
            z[i] += ad * dz[i];
            w[i] += ad * dw[i];
        }
        for (yv, d) in y_s.iter_mut().chain(y_f.iter_mut()).zip(dy) {
            *yv += ad * d;
        }
    }

    let (best_gap, bs, bf) = best.unwrap_or((gap, vec![0.0; p], vec![0.0; g]));
    let mut coefs = bs;
    coefs.extend(bf);
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        gap: best_gap,
        best: coefs,
    })
}
