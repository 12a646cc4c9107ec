//! ARIMA(p,d,q) baseline: conditional-sum-of-squares estimation, AIC order
//! selection over a small grid, and h-step forecasting.
//!
//! Estimation differences the series d times, then minimizes the
//! conditional SSE of `e_t = w_t - c - sum(phi_i w_{t-i}) - sum(theta_j
//! e_{t-j})` with pre-sample residuals fixed at zero, using a
//! derivative-free simplex search (AR coefficients warm-started by
//! Yule-Walker when q = 0). Parameter points whose AR polynomial has roots
//! inside the unit circle are rejected during the search.

use thiserror::Error;

const MAX_ORDER: usize = 2;
const MIN_EXTRA_OBS: usize = 20;
const MAX_ITERATIONS: usize = 500;
const REL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ArimaError {
    #[error("series too short: have {have}, need {need}")]
    TooShort { have: usize, need: usize },
    #[error("non-finite value in series")]
    NonFinite,
    #[error("order out of range: ({p},{d},{q}) exceeds {MAX_ORDER}")]
    BadOrder { p: usize, d: usize, q: usize },
    #[error("every candidate order failed to fit")]
    AllFitsFailed,
}

/// Model order (p autoregressive lags, d differences, q moving-average
/// lags), each in 0..=2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub fn new(p: usize, d: usize, q: usize) -> Result<Self, ArimaError> {
        if p > MAX_ORDER || d > MAX_ORDER || q > MAX_ORDER {
            return Err(ArimaError::BadOrder { p, d, q });
        }
        Ok(Self { p, d, q })
    }
}

/// A fitted model: coefficients, fit statistics, and convergence status.
#[derive(Debug, Clone, PartialEq)]
pub struct ArimaFit {
    pub order: ArimaOrder,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub intercept: f64,
    pub sigma2: f64,
    pub sse: f64,
    pub aic: f64,
    pub n_obs: usize,
    pub converged: bool,
}

/// The default selection grid: every (p,d,q) in {0,1,2}^3.
pub fn default_grid() -> Vec<ArimaOrder> {
    let mut grid = Vec::with_capacity(27);
    for p in 0..=MAX_ORDER {
        for d in 0..=MAX_ORDER {
            for q in 0..=MAX_ORDER {
                grid.push(ArimaOrder { p, d, q });
            }
        }
    }
    grid
}

/// Apply the backward difference d times.
pub fn difference(values: &[f64], d: usize) -> Vec<f64> {
    let mut w = values.to_vec();
    for _ in 0..d {
        w = w.windows(2).map(|x| x[1] - x[0]).collect();
    }
    w
}

fn is_stationary(phi: &[f64]) -> bool {
    match phi.len() {
        0 => true,
        1 => phi[0].abs() < 1.0,
        2 => phi[1] + phi[0] < 1.0 && phi[1] - phi[0] < 1.0 && phi[1].abs() < 1.0,
        _ => false,
    }
}

// MA roots inside the unit circle make the truncated residual recursion
// understate innovations, so the search must reject them just like
// explosive AR roots. The region mirrors the AR one under theta -> -phi.
fn is_invertible(theta: &[f64]) -> bool {
    match theta.len() {
        0 => true,
        1 => theta[0].abs() < 1.0,
        2 => theta[0] + theta[1] > -1.0 && theta[0] - theta[1] < 1.0 && theta[1].abs() < 1.0,
        _ => false,
    }
}

/// Conditional residuals of the ARMA recursion; entries before
/// `max(p, q)` stay zero (the conditioning convention).
fn residuals(w: &[f64], p: usize, q: usize, intercept: f64, phi: &[f64], theta: &[f64]) -> Vec<f64> {
    let k = p.max(q);
    let mut e = vec![0.0; w.len()];
    for t in k..w.len() {
        let mut pred = intercept;
        for (i, ph) in phi.iter().enumerate() {
            pred += ph * w[t - 1 - i];
        }
        for (j, th) in theta.iter().enumerate() {
            if t > j && t - 1 - j >= k {
                pred += th * e[t - 1 - j];
            }
        }
        e[t] = w[t] - pred;
    }
    e
}

fn css_objective(w: &[f64], p: usize, q: usize, params: &[f64]) -> f64 {
    let phi = &params[1..1 + p];
    if !is_stationary(phi) {
        return f64::INFINITY;
    }
    let theta = &params[1 + p..1 + p + q];
    if !is_invertible(theta) {
        return f64::INFINITY;
    }
    let e = residuals(w, p, q, params[0], phi, theta);
    let k = p.max(q);
    let sse: f64 = e[k..].iter().map(|x| x * x).sum();
    if sse.is_finite() {
        sse
    } else {
        f64::INFINITY
    }
}

/// Yule-Walker AR estimates from sample autocorrelations (p <= 2).
fn yule_walker(w: &[f64], p: usize) -> Vec<f64> {
    let n = w.len();
    let mean = w.iter().sum::<f64>() / n as f64;
    let c0: f64 = w.iter().map(|x| (x - mean) * (x - mean)).sum();
    if c0 <= 0.0 {
        return vec![0.0; p];
    }
    let r = |k: usize| -> f64 {
        let mut s = 0.0;
        for t in k..n {
            s += (w[t] - mean) * (w[t - k] - mean);
        }
        s / c0
    };
    let est = match p {
        1 => vec![r(1)],
        2 => {
            let (r1, r2) = (r(1), r(2));
            let den = 1.0 - r1 * r1;
            if den.abs() < 1e-12 {
                vec![0.0, 0.0]
            } else {
                vec![r1 * (1.0 - r2) / den, (r2 - r1 * r1) / den]
            }
        }
        _ => vec![0.0; p],
    };
    if is_stationary(&est) {
        est
    } else {
        vec![0.0; p]
    }
}

/// Nelder-Mead simplex minimization. Returns (best point, best value,
/// converged flag).
fn nelder_mead<F>(f: F, start: &[f64], steps: &[f64]) -> (Vec<f64>, f64, bool)
where
    F: Fn(&[f64]) -> f64,
{
    let dim = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..dim {
        let mut x = start.to_vec();
        x[i] += steps[i];
        let fx = f(&x);
        simplex.push((x, fx));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;

    for _ in 0..MAX_ITERATIONS {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        if worst.is_finite() && (worst - best).abs() <= REL_TOLERANCE * best.abs().max(1e-30) {
            converged = true;
            break;
        }

        // Centroid of all but the worst point.
        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / dim as f64;
            }
        }

        let at = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let reflected = at(alpha);
        let f_ref = f(&reflected);
        if f_ref < simplex[0].1 {
            let expanded = at(gamma);
            let f_exp = f(&expanded);
            simplex[dim] = if f_exp < f_ref {
                (expanded, f_exp)
            } else {
                (reflected, f_ref)
            };
            continue;
        }
        if f_ref < simplex[dim - 1].1 {
            simplex[dim] = (reflected, f_ref);
            continue;
        }
        let contracted = at(-rho);
        let f_con = f(&contracted);
        if f_con < simplex[dim].1 {
            simplex[dim] = (contracted, f_con);
            continue;
        }
        // Shrink toward the best point.
        let best_point = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            for (xi, bi) in entry.0.iter_mut().zip(&best_point) {
                *xi = bi + sigma * (*xi - bi);
            }
            entry.1 = f(&entry.0);
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, fx) = simplex.swap_remove(0);
    (x, fx, converged)
}

/// Fit one order by conditional sum of squares.
pub fn fit_css(values: &[f64], order: ArimaOrder) -> Result<ArimaFit, ArimaError> {
    let ArimaOrder { p, d, q } = order;
    if p > MAX_ORDER || d > MAX_ORDER || q > MAX_ORDER {
        return Err(ArimaError::BadOrder { p, d, q });
    }
    let need = MIN_EXTRA_OBS + p + d + q;
    if values.len() < need {
        return Err(ArimaError::TooShort {
            have: values.len(),
            need,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ArimaError::NonFinite);
    }

    let w = difference(values, d);
    let k = p.max(q);
    let n_obs = w.len() - k;

    let phi0 = if q == 0 && p > 0 {
        yule_walker(&w, p)
    } else {
        vec![0.0; p]
    };
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let sd = (w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w.len() as f64).sqrt();
    let c0 = mean * (1.0 - phi0.iter().sum::<f64>());

    let mut start = Vec::with_capacity(1 + p + q);
    start.push(c0);
    start.extend_from_slice(&phi0);
    start.resize(1 + p + q, 0.0);

    let mut steps = Vec::with_capacity(1 + p + q);
    steps.push((0.1 * (sd + c0.abs())).max(1e-3));
    steps.resize(1 + p + q, 0.1);

    let objective = |params: &[f64]| css_objective(&w, p, q, params);
    let (params, sse, converged) = nelder_mead(objective, &start, &steps);

    let intercept = params[0];
    let phi = params[1..1 + p].to_vec();
    let theta = params[1 + p..1 + p + q].to_vec();
    let sse = sse.max(0.0);
    let sigma2 = (sse / n_obs as f64).max(f64::MIN_POSITIVE);
    let aic = n_obs as f64 * (sse.max(1e-300) / n_obs as f64).ln() + 2.0 * (p + q + 1) as f64;

    Ok(ArimaFit {
        order,
        phi,
        theta,
        intercept,
        sigma2,
        sse,
        aic,
        n_obs,
        converged,
    })
}

/// Fit every grid order and return the minimal-AIC fit; ties break toward
/// smaller p+q, then smaller d.
pub fn select_order(values: &[f64], grid: &[ArimaOrder]) -> Result<ArimaFit, ArimaError> {
    let mut best: Option<ArimaFit> = None;
    for &order in grid {
        let Ok(fit) = fit_css(values, order) else {
            continue;
        };
        if !fit.aic.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                let candidate = (fit.aic, fit.order.p + fit.order.q, fit.order.d);
                let incumbent = (b.aic, b.order.p + b.order.q, b.order.d);
                candidate
                    .partial_cmp(&incumbent)
                    .map(|o| o == std::cmp::Ordering::Less)
                    .unwrap_or(false)
            }
        };
        if better {
            best = Some(fit);
        }
    }
    best.ok_or(ArimaError::AllFitsFailed)
}

/// Forecast h steps ahead from a fit and the series it was fitted on.
///
/// The ARMA recursion runs on the differenced series with future shocks set
/// to zero (known residuals feed the lagged MA terms); the result is then
/// integrated back d times to the original level.
pub fn forecast(fit: &ArimaFit, values: &[f64], h: usize) -> Vec<f64> {
    let ArimaOrder { p, d, q } = fit.order;
    let w = difference(values, d);
    let n = w.len();
    let e = residuals(&w, p, q, fit.intercept, &fit.phi, &fit.theta);

    let mut w_ext = w.clone();
    for t in n..n + h {
        let mut pred = fit.intercept;
        for (i, ph) in fit.phi.iter().enumerate() {
            pred += ph * w_ext[t - 1 - i];
        }
        for (j, th) in fit.theta.iter().enumerate() {
            let idx = t as i64 - 1 - j as i64;
            if idx >= 0 && (idx as usize) < n {
                pred += th * e[idx as usize];
            }
            // Future shocks are zero.
        }
        w_ext.push(pred);
    }

    // Integrate back: keep the running last value of each difference level.
    let mut lasts = Vec::with_capacity(d);
    let mut level = values.to_vec();
    for _ in 0..d {
        lasts.push(*level.last().expect("non-empty by fit precondition"));
        level = difference(&level, 1);
    }

    let mut out = Vec::with_capacity(h);
    for &wf in &w_ext[n..] {
        let mut v = wf;
        for last in lasts.iter_mut().rev() {
            v += *last;
            *last = v;
        }
        out.push(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn order(p: usize, d: usize, q: usize) -> ArimaOrder {
        ArimaOrder::new(p, d, q).unwrap()
    }

    fn simulate_ar1(phi: f64, sigma: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; n + 50];
        for t in 1..x.len() {
            let shock: f64 =
                rng.gen_range(-1.0..1.0) + rng.gen_range(-1.0..1.0) + rng.gen_range(-1.0..1.0);
            x[t] = phi * x[t - 1] + sigma * shock;
        }
        x.split_off(50)
    }

    #[test]
    fn mean_model_recovers_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..200).map(|_| 5.0 + rng.gen_range(-1.0..1.0)).collect();
        let fit = fit_css(&x, order(0, 0, 0)).unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let sse: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
        assert!((fit.intercept - mean).abs() < 1e-6);
        assert!((fit.sse - sse).abs() < 1e-6 * sse);
        assert!(fit.converged);
    }

    #[test]
    fn ar1_coefficient_recovered_within_tolerance() {
        let x = simulate_ar1(0.7, 1.0, 500, 42);
        let fit = fit_css(&x, order(1, 0, 0)).unwrap();
        assert!(
            (fit.phi[0] - 0.7).abs() < 0.1,
            "phi estimate {} too far from 0.7",
            fit.phi[0]
        );

        // Yule-Walker oracle: for AR(1), phi-hat equals the lag-1
        // autocorrelation.
        let yw = yule_walker(&x, 1)[0];
        assert!((fit.phi[0] - yw).abs() < 0.05);
    }

    #[test]
    fn differenced_ramp_is_a_perfect_fit() {
        let ramp: Vec<f64> = (1..=120).map(|i| i as f64).collect();
        let fit = fit_css(&ramp, order(0, 1, 0)).unwrap();
        assert!((fit.intercept - 1.0).abs() < 1e-8);
        assert!(fit.sse < 1e-10);
    }

    #[test]
    fn white_noise_selects_the_mean_model() {
        // Monte Carlo in normalized-price scale (sigma well below 1).
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut wins = 0;
        let grid = default_grid();
        for _ in 0..50 {
            let x: Vec<f64> = (0..300).map(|_| 0.5 + 0.05 * rng.gen_range(-1.0..1.0)).collect();
            let fit = select_order(&x, &grid).unwrap();
            if fit.order == order(0, 0, 0) {
                wins += 1;
            }
        }
        assert!(wins >= 45, "(0,0,0) selected only {wins}/50 times");
    }

    #[test]
    fn ramp_forces_differencing() {
        let ramp: Vec<f64> = (1..=150).map(|i| i as f64).collect();
        let fit = select_order(&ramp, &default_grid()).unwrap();
        assert!(fit.order.d >= 1, "selected {:?}", fit.order);
    }

    #[test]
    fn singleton_grid_returns_that_fit() {
        let x = simulate_ar1(0.5, 1.0, 200, 8);
        let fit = select_order(&x, &[order(2, 0, 1)]).unwrap();
        assert_eq!(fit.order, order(2, 0, 1));
    }

    #[test]
    fn mean_model_forecast_repeats_intercept() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..100).map(|_| 2.0 + rng.gen_range(-0.5..0.5)).collect();
        let fit = fit_css(&x, order(0, 0, 0)).unwrap();
        let f = forecast(&fit, &x, 4);
        for v in f {
            assert!((v - fit.intercept).abs() < 1e-12);
        }
    }

    #[test]
    fn drift_model_continues_the_ramp() {
        let ramp: Vec<f64> = (0..120).map(|i| 3.0 + 0.25 * i as f64).collect();
        let fit = fit_css(&ramp, order(0, 1, 0)).unwrap();
        let f = forecast(&fit, &ramp, 3);
        for (k, v) in f.iter().enumerate() {
            let expected = 3.0 + 0.25 * (119 + 1 + k) as f64;
            assert!((v - expected).abs() < 1e-6, "step {k}: {v} vs {expected}");
        }
    }

    #[test]
    fn ar1_forecast_decays_geometrically() {
        // Construct the fit directly: phi = 0.5, zero intercept.
        let fit = ArimaFit {
            order: order(1, 0, 0),
            phi: vec![0.5],
            theta: vec![],
            intercept: 0.0,
            sigma2: 1.0,
            sse: 1.0,
            aic: 0.0,
            n_obs: 10,
            converged: true,
        };
        let values = vec![0.2, -0.1, 0.3, 1.0];
        let f = forecast(&fit, &values, 3);
        assert_eq!(f, vec![0.5, 0.25, 0.125]);
    }

    #[test]
    fn stationary_forecast_reverts_to_the_mean() {
        let x = simulate_ar1(0.7, 1.0, 500, 17);
        let fit = fit_css(&x, order(1, 0, 0)).unwrap();
        let f = forecast(&fit, &x, 200);
        let long_run = fit.intercept / (1.0 - fit.phi.iter().sum::<f64>());
        assert!((f[199] - long_run).abs() < 1e-6);
    }

    #[test]
    fn differencing_inverts_exactly_on_integer_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for d in 1..=2usize {
            let x: Vec<f64> = (0..80).map(|_| rng.gen_range(-1000..1000) as f64).collect();
            let w = difference(&x, d);

            // Rebuild with the same integrate-forward walk the forecaster
            // uses, seeded from the original initial values.
            let mut rebuilt = x[..d].to_vec();
            match d {
                1 => {
                    for (i, dv) in w.iter().enumerate() {
                        rebuilt.push(x[i] + dv);
                        assert_eq!(rebuilt[i + 1], x[i + 1]);
                    }
                }
                2 => {
                    let dx = difference(&x, 1);
                    for (i, ddv) in w.iter().enumerate() {
                        let next_dx = dx[i] + ddv;
                        assert_eq!(next_dx, dx[i + 1]);
                        rebuilt.push(rebuilt[i + 1] + next_dx);
                        assert_eq!(rebuilt[i + 2], x[i + 2]);
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn extra_parameter_never_raises_sse() {
        let x = simulate_ar1(0.4, 1.0, 300, 33);
        let base = fit_css(&x, order(0, 0, 0)).unwrap();
        let richer = fit_css(&x, order(1, 0, 0)).unwrap();
        assert!(richer.sse <= base.sse + 1e-12);
    }

    #[test]
    fn rejects_short_and_nonfinite_input() {
        assert!(matches!(
            fit_css(&[1.0; 10], order(1, 0, 0)),
            Err(ArimaError::TooShort { .. })
        ));
        let mut x = vec![1.0; 60];
        x[30] = f64::NAN;
        assert!(matches!(
            fit_css(&x, order(1, 0, 0)),
            Err(ArimaError::NonFinite)
        ));
    }
}
