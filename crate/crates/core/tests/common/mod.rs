//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod toy;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use flexenv_core::model::{NoiseSpec, StateSpaceModel};
use flexenv_core::uncertainty::WeatherErrorModel;

/// Cholesky-like square root via eigen decomposition, written separately from the library.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

fn gauss(rng: &mut ChaCha8Rng, half: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(half.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    half * z
}

/// Monte Carlo of output deviations by stepping the noisy model and the AR(1)
/// weather error forward in time.
///
/// `gains[k-1]` (if given) adds the power adjustment `M_k r~_{k-1}` with
/// `r~ = [d~; e~]`, where `e~` is the model error. Returns sample covariances of
/// `y~_k` for each requested `k`.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_output_covariance(
    model: &StateSpaceModel,
    noise: &NoiseSpec,
    wem: &WeatherErrorModel,
    horizon: usize,
    gains: Option<&[DMatrix<f64>]>,
    ks: &[usize],
    samples: usize,
    seed: u64,
) -> Vec<DMatrix<f64>> {
    let (nx, ny, nd, np) = (model.nx(), model.ny(), model.nd(), model.np());
    let w_half = sqrt_psd(&noise.sigma_w);
    let v_half = sqrt_psd(&noise.sigma_v);
    let d_half = sqrt_psd(&wem.sigma_d);
    let d0_half = sqrt_psd(&wem.sigma_d0);
    let kmax = *ks.iter().max().unwrap();
    assert!(kmax <= horizon + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums: Vec<DMatrix<f64>> = ks.iter().map(|_| DMatrix::zeros(ny, ny)).collect();
    for _ in 0..samples {
        let mut x = DVector::zeros(nx);
        let mut model_err = DVector::zeros(nx);
        let mut d = gauss(&mut rng, &d0_half);
        let mut r_prev = DVector::zeros(nd + ny);
        for k in 0..=kmax {
            if k > 0 {
                d = &wem.phi * &d + gauss(&mut rng, &d_half);
            }
            let p = match gains {
                Some(m) if k >= 1 && k <= horizon => &m[k - 1] * &r_prev,
                _ => DVector::zeros(np),
            };
            let v = gauss(&mut rng, &v_half);
            let y = &model.c * &x + &model.d_d * &d + &model.d_p * &p + &v;
            let e = &model.c * &model_err + &v;
            if let Some(pos) = ks.iter().position(|&kk| kk == k) {
                sums[pos] += &y * y.transpose();
            }
            let w = gauss(&mut rng, &w_half);
            x = &model.a * &x + &model.b_d * &d + &model.b_p * &p + &w;
            model_err = &model.a * &model_err + &w;
            r_prev = DVector::from_iterator(nd + ny, d.iter().chain(e.iter()).copied());
        }
    }
    sums.into_iter().map(|s| s / samples as f64).collect()
}

/// Bisection on the normal CDF, computed with an independent erf series.
pub fn quantile_by_bisection(p: f64) -> f64 {
    let cdf = |x: f64| 0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2));
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// erf via its Maclaurin series (small |x|) or continued fraction for erfc (large |x|).
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x < 3.0 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= -x * x / n;
            let add = term / (2.0 * n + 1.0);
            sum += add;
            if add.abs() <= 1e-18 * sum.abs() || n > 200.0 {
                break;
            }
        }
        return 2.0 / std::f64::consts::PI.sqrt() * sum;
    }
    // Lentz continued fraction for erfc
    let mut f = x;
    let tiny = 1e-300;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..200 {
        let a = n as f64 / 2.0;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        f *= c * d;
    }
    let erfc = (-x * x).exp() / (f * std::f64::consts::PI.sqrt());
    1.0 - erfc
}

/// Shares of sampled days on which each room is above `t_max` and below `t_min`
/// at each step, when `powers` (one row per step) is applied open loop from
/// `x0`. The weather error follows its AR(1) model from a draw of `Sigma_d0`.
#[allow(clippy::too_many_arguments)]
pub fn open_loop_violation_share(
    model: &StateSpaceModel,
    noise: &NoiseSpec,
    wem: &WeatherErrorModel,
    x0: &DVector<f64>,
    weather: &DMatrix<f64>,
    powers: &DMatrix<f64>,
    band: (&DVector<f64>, &DVector<f64>),
    samples: usize,
    seed: u64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let w_half = sqrt_psd(&noise.sigma_w);
    let v_half = sqrt_psd(&noise.sigma_v);
    let d_half = sqrt_psd(&wem.sigma_d);
    let d0_half = sqrt_psd(&wem.sigma_d0);
    let steps = powers.nrows().min(weather.nrows());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut above = DMatrix::zeros(steps, model.ny());
    let mut below = DMatrix::zeros(steps, model.ny());
    for _ in 0..samples {
        let mut x = x0.clone();
        let mut d_err = gauss(&mut rng, &d0_half);
        for k in 0..steps {
            if k > 0 {
                d_err = &wem.phi * &d_err + gauss(&mut rng, &d_half);
            }
            let d = weather.row(k).transpose() + &d_err;
            let p = powers.row(k).transpose();
            let y = &model.c * &x + &model.d_d * &d + &model.d_p * &p + gauss(&mut rng, &v_half);
            for j in 0..model.ny() {
                if y[j] > band.1[j] {
                    above[(k, j)] += 1.0;
                }
                if y[j] < band.0[j] {
                    below[(k, j)] += 1.0;
                }
            }
            x = &model.a * &x + &model.b_d * &d + &model.b_p * &p + gauss(&mut rng, &w_half);
        }
    }
    (above / samples as f64, below / samples as f64)
}
