//! Damped least squares (Levenberg-Marquardt) with a central-difference
//! Jacobian and softplus bounds for non-negative parameters.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Free,
    /// `p = scale · softplus(u) ≥ 0`.
    NonNegative,
    /// `p = lo + (hi − lo) · sigmoid(u)`.
    Interval(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: f64,
    /// Typical magnitude; sets the internal variable's unit.
    pub scale: f64,
    pub bound: Bound,
    pub fixed: bool,
}

impl Param {
    pub fn free(name: &str, value: f64, scale: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            scale: positive_scale(scale, value),
            bound: Bound::Free,
            fixed: false,
        }
    }

    pub fn non_negative(name: &str, value: f64, scale: f64) -> Self {
        Self {
            name: name.to_string(),
            value: value.max(0.0),
            scale: positive_scale(scale, value),
            bound: Bound::NonNegative,
            fixed: false,
        }
    }

    pub fn bounded(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_string(),
            value: value.clamp(lo, hi),
            scale: hi - lo,
            bound: Bound::Interval(lo, hi),
            fixed: false,
        }
    }

    pub fn fixed(mut self) -> Self {
        self.fixed = true;
        self
    }

    fn to_internal(&self, p: f64) -> f64 {
        match self.bound {
            Bound::Free => p / self.scale,
            Bound::NonNegative => {
                let x = (p / self.scale).max(1e-9);
                // Inverse softplus, stable for large x.
                x + (-(-x).exp_m1()).ln()
            }
            Bound::Interval(lo, hi) => {
                let x = ((p - lo) / (hi - lo)).clamp(1e-9, 1.0 - 1e-9);
                (x / (1.0 - x)).ln()
            }
        }
    }

    fn to_external(&self, u: f64) -> f64 {
        match self.bound {
            Bound::Free => self.scale * u,
            Bound::NonNegative => self.scale * softplus(u),
            Bound::Interval(lo, hi) => lo + (hi - lo) * sigmoid(u),
        }
    }

    /// `dp/du`.
    fn derivative(&self, u: f64) -> f64 {
        match self.bound {
            Bound::Free => self.scale,
            Bound::NonNegative => self.scale * sigmoid(u),
            Bound::Interval(lo, hi) => {
                let s = sigmoid(u);
                (hi - lo) * s * (1.0 - s)
            }
        }
    }
}

fn positive_scale(scale: f64, value: f64) -> f64 {
    if scale.is_finite() && scale > 0.0 {
        scale
    } else if value.is_finite() && value != 0.0 {
        value.abs()
    } else {
        1.0
    }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else {
        u.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative decrease of χ² falls below this.
    pub ftol: f64,
    /// Stop when the relative step in internal variables falls below this.
    pub xtol: f64,
    pub relative_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            ftol: 1e-10,
            xtol: 1e-10,
            relative_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    /// Every parameter, fixed ones included, in input order.
    pub values: Vec<f64>,
    /// Raw covariance `(JᵀJ)⁻¹` of the free parameters in natural units.
    pub covariance: DMatrix<f64>,
    pub free: Vec<usize>,
    pub chi2: f64,
    pub n_points: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimises `Σ r_i²` where `residuals(p)` returns weighted residuals.
pub fn least_squares<F>(params: &[Param], residuals: F, opts: &LmOptions) -> Result<LmOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let free: Vec<usize> = (0..params.len()).filter(|&i| !params[i].fixed).collect();
    let k = free.len();
    let external = |u: &[f64]| -> Vec<f64> {
        let mut p: Vec<f64> = params.iter().map(|q| q.value).collect();
        for (j, &i) in free.iter().enumerate() {
            p[i] = params[i].to_external(u[j]);
        }
        p
    };
    let eval = |u: &[f64]| -> Result<(Vec<f64>, f64)> {
        let r = residuals(&external(u))?;
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonConvergence("non-finite residual".into()));
        }
        let c = r.iter().map(|x| x * x).sum();
        Ok((r, c))
    };

    let mut u: Vec<f64> = free.iter().map(|&i| params[i].to_internal(params[i].value)).collect();
    let (mut r, mut chi2) = eval(&u)?;
    let n = r.len();
    if k == 0 {
        return Ok(LmOutcome {
            values: external(&u),
            covariance: DMatrix::zeros(0, 0),
            free,
            chi2,
            n_points: n,
            iterations: 0,
            converged: true,
        });
    }

    let jacobian = |u: &[f64]| -> Result<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(n, k);
        for j in 0..k {
            let h = opts.relative_step * u[j].abs().max(1.0);
            let mut up = u.to_vec();
            let mut dn = u.to_vec();
            up[j] += h;
            dn[j] -= h;
            let rp = residuals(&external(&up))?;
            let rm = residuals(&external(&dn))?;
            for i in 0..n {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        Ok(jac)
    };

    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = jacobian(&u)?;
    while iterations < opts.max_iterations {
        iterations += 1;
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() <= 1e-14 * chi2.max(1e-300) {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for j in 0..k {
                damped[(j, j)] += lambda * a[(j, j)].max(1e-12);
            }
            let step = match damped.clone().cholesky() {
                Some(c) => c.solve(&(-&g)),
                None => match damped.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                },
            };
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            match eval(&trial) {
                Ok((rt, ct)) if ct <= chi2 => {
                    let rel_f = (chi2 - ct) / chi2.max(1e-300);
                    let rel_x = step
                        .iter()
                        .zip(&u)
                        .map(|(d, x)| d.abs() / x.abs().max(1.0))
                        .fold(0.0, f64::max);
                    u = trial;
                    r = rt;
                    chi2 = ct;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    if rel_f < opts.ftol || rel_x < opts.xtol {
                        converged = true;
                    }
                    break;
                }
                _ => lambda *= 4.0,
            }
        }
        if !accepted {
            // No downhill step at any damping: a (numerical) minimum.
            converged = true;
            break;
        }
        jac = jacobian(&u)?;
        if converged {
            break;
        }
    }

    let jt = jac.transpose();
    let a = &jt * &jac;
    let cov_u = match a.clone().try_inverse() {
        Some(inv) if inv.iter().all(|x| x.is_finite()) => inv,
        _ => a
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::NonConvergence(format!("singular normal matrix: {e}")))?,
    };
    let d: Vec<f64> = free
        .iter()
        .zip(&u)
        .map(|(&i, &x)| params[i].derivative(x))
        .collect();
    let cov = DMatrix::from_fn(k, k, |i, j| d[i] * cov_u[(i, j)] * d[j]);
    Ok(LmOutcome {
        values: external(&u),
        covariance: cov,
        free,
        chi2,
        n_points: n,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_exactly() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|t| 3.0 * (-1.7 * t).exp()).collect();
        let params = [Param::free("a", 1.0, 1.0), Param::non_negative("k", 0.5, 1.0)];
        let out = least_squares(
            &params,
            |p| Ok(x.iter().zip(&y).map(|(t, v)| p[0] * (-p[1] * t).exp() - v).collect()),
            &LmOptions::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.values[0] - 3.0).abs() < 1e-8);
        assert!((out.values[1] - 1.7).abs() < 1e-8);
        assert!(out.chi2 < 1e-16);
    }

    #[test]
    fn fixed_parameters_stay_put() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let params = [Param::free("a", 2.0, 1.0).fixed(), Param::free("b", 0.0, 1.0)];
        let out = least_squares(
            &params,
            |p| Ok(x.iter().map(|t| p[0] * t + p[1] - (2.5 * t + 1.0)).collect()),
            &LmOptions::default(),
        )
        .unwrap();
        assert_eq!(out.values[0], 2.0);
        assert_eq!(out.free, vec![1]);
        assert_eq!(out.covariance.nrows(), 1);
    }

    #[test]
    fn linear_covariance_matches_closed_form() {
        // Straight line with unit errors: Var(b) = Σx²/Δ, Var(a) = n/Δ.
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let y = [0.1, 1.2, 1.9, 3.2, 3.9, 5.1, 6.0, 6.8];
        let params = [Param::free("a", 1.0, 1.0), Param::free("b", 0.0, 1.0)];
        let out = least_squares(
            &params,
            |p| Ok(x.iter().zip(&y).map(|(t, v)| p[0] * t + p[1] - v).collect()),
            &LmOptions::default(),
        )
        .unwrap();
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sxx: f64 = x.iter().map(|t| t * t).sum();
        let delta = n * sxx - sx * sx;
        assert!((out.covariance[(0, 0)] - n / delta).abs() < 1e-6);
        assert!((out.covariance[(1, 1)] - sxx / delta).abs() < 1e-6);
    }

    #[test]
    fn non_negative_bound_holds() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let params = [Param::non_negative("k", 1.0, 1.0)];
        let out = least_squares(
            &params,
            |p| Ok(x.iter().map(|t| p[0] * t + 0.5 * t).collect()),
            &LmOptions::default(),
        )
        .unwrap();
        assert!(out.values[0] >= 0.0 && out.values[0] < 1e-3);
    }

    #[test]
    fn interval_bound_holds_and_recovers_interior_optimum() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let line = |a: f64| x.iter().map(|t| a * t).collect::<Vec<_>>();
        let target = line(0.7);
        let fit = |hi: f64| {
            least_squares(
                &[Param::bounded("a", 0.5, 0.0, hi)],
                |p| Ok(line(p[0]).iter().zip(&target).map(|(m, y)| m - y).collect()),
                &LmOptions::default(),
            )
            .unwrap()
        };
        assert!((fit(1.0).values[0] - 0.7).abs() < 1e-6);
        let capped = fit(0.6).values[0];
        assert!(capped <= 0.6 && capped > 0.59);
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let params = [Param::free("a", 1.0, 1.0), Param::non_negative("k", 0.01, 1.0)];
        let opts = LmOptions {
            max_iterations: 1,
            ..Default::default()
        };
        let out = least_squares(
            &params,
            |p| Ok(x.iter().map(|t| p[0] * (-p[1] * t).exp() - 3.0 * (-1.7 * t).exp()).collect()),
            &opts,
        )
        .unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
    }
}
