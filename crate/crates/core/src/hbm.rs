//! Conditionally Gaussian hierarchical model and its IAS MAP iteration.
//!
//! The prior on `x` is zero-mean Gaussian with diagonal covariance `diag(theta)`
//! and each variance `theta_i` carries a gamma or inverse-gamma hyperprior.
//! IAS alternates the exact minimizers of the negative log posterior in `x`
//! (a weighted minimum-norm solve) and in `theta` (closed form per entry).

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HyperpriorFamily {
    /// Gamma hyperprior (`G`).
    Gamma,
    /// Inverse gamma hyperprior (`IG`).
    InverseGamma,
}

impl HyperpriorFamily {
    pub fn short_name(self) -> &'static str {
        match self {
            HyperpriorFamily::Gamma => "G",
            HyperpriorFamily::InverseGamma => "IG",
        }
    }

    pub fn from_short_name(s: &str) -> Option<Self> {
        match s {
            "G" | "g" | "gamma" => Some(HyperpriorFamily::Gamma),
            "IG" | "ig" | "inverse-gamma" => Some(HyperpriorFamily::InverseGamma),
            _ => None,
        }
    }
}

/// Hyperprior family with shape `beta` and scale `theta0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperpriorConfig {
    family: HyperpriorFamily,
    beta: f64,
    theta0: f64,
}

impl HyperpriorConfig {
    /// Smallest admissible inverse-gamma shape.
    pub const MIN_IG_BETA: f64 = 1.5;

    pub fn new(family: HyperpriorFamily, beta: f64, theta0: f64) -> Result<Self> {
        if !(theta0 > 0.0 && theta0.is_finite()) {
            return Err(Error::param(format!("theta0 must be positive, got {theta0}")));
        }
        let ok = match family {
            HyperpriorFamily::InverseGamma => beta >= Self::MIN_IG_BETA && beta.is_finite(),
            HyperpriorFamily::Gamma => beta > 0.0 && beta.is_finite(),
        };
        if !ok {
            return Err(Error::param(format!(
                "beta = {beta} is not admissible for the {} hyperprior",
                family.short_name()
            )));
        }
        Ok(Self { family, beta, theta0 })
    }

    pub fn inverse_gamma(beta: f64, theta0: f64) -> Result<Self> {
        Self::new(HyperpriorFamily::InverseGamma, beta, theta0)
    }

    pub fn gamma(beta: f64, theta0: f64) -> Result<Self> {
        Self::new(HyperpriorFamily::Gamma, beta, theta0)
    }

    pub fn family(&self) -> HyperpriorFamily {
        self.family
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    /// `beta - 3/2`, used by the gamma update.
    pub fn eta(&self) -> f64 {
        self.beta - 1.5
    }

    /// `beta + 3/2`, used by the inverse-gamma update.
    pub fn kappa(&self) -> f64 {
        self.beta + 1.5
    }

    /// Variance minimizing the objective for one unknown with value `x`.
    pub fn optimal_variance(&self, x: f64) -> f64 {
        let t0 = self.theta0;
        match self.family {
            HyperpriorFamily::Gamma => {
                let eta = self.eta();
                let theta = 0.5 * t0 * (eta + (eta * eta + 2.0 * x * x / t0).sqrt());
                // x = 0 with beta <= 3/2 sends the minimizer to the boundary.
                theta.max(f64::MIN_POSITIVE)
            }
            HyperpriorFamily::InverseGamma => (t0 + 0.5 * x * x) / self.kappa(),
        }
    }

    /// Negative log hyperprior density of one variance, constants dropped.
    fn neg_log_density(&self, theta: f64) -> f64 {
        match self.family {
            HyperpriorFamily::Gamma => (1.0 - self.beta) * theta.ln() + theta / self.theta0,
            HyperpriorFamily::InverseGamma => (self.beta + 1.0) * theta.ln() + self.theta0 / theta,
        }
    }
}

/// Snapshot of an IAS run.
#[derive(Debug, Clone, PartialEq)]
pub struct IasState {
    pub x: DVector<f64>,
    pub theta: DVector<f64>,
    pub iteration: usize,
    pub sigma: f64,
    /// Objective at the starting pair and after every sweep.
    pub objective_history: Vec<f64>,
}

impl IasState {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().expect("history is never empty")
    }
}

/// Negative log posterior `-log p(x, theta | y)` up to an additive constant.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Objective(pub f64);

impl Objective {
    pub fn value(self) -> f64 {
        self.0
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("sigma must be positive, got {sigma}")))
    }
}

fn check_theta(theta: &DVector<f64>) -> Result<()> {
    match theta.iter().position(|t| !(*t > 0.0 && t.is_finite())) {
        None => Ok(()),
        Some(i) => Err(Error::param(format!("theta[{i}] = {} is not positive", theta[i]))),
    }
}

fn check_dims(gain: &DMatrix<f64>, y: &DVector<f64>, n: usize) -> Result<()> {
    if gain.nrows() != y.len() {
        return Err(Error::param(format!(
            "data has length {}, gain matrix has {} rows",
            y.len(),
            gain.nrows()
        )));
    }
    if gain.ncols() != n {
        return Err(Error::param(format!(
            "vector has length {n}, gain matrix has {} columns",
            gain.ncols()
        )));
    }
    Ok(())
}

/// `x = D L^T (L D L^T + sigma^2 I)^-1 y` with `D = diag(|theta|)`.
///
/// Works with the `m x m` system since the sensor count is far below the
/// number of unknowns.
pub fn ias_x_update(
    gain: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &DVector<f64>,
    sigma: f64,
) -> Result<DVector<f64>> {
    check_sigma(sigma)?;
    check_theta(theta)?;
    check_dims(gain, y, theta.len())?;

    let mut scaled = gain.clone();
    for (mut col, t) in scaled.column_iter_mut().zip(theta.iter()) {
        col *= t.abs().sqrt();
    }
    let mut system = &scaled * scaled.transpose();
    for i in 0..system.nrows() {
        system[(i, i)] += sigma * sigma;
    }
    let chol = Cholesky::new(system)
        .ok_or_else(|| Error::Numerical("L D L^T + sigma^2 I is not positive definite".into()))?;
    let w = chol.solve(y);
    let mut x = gain.tr_mul(&w);
    x.component_mul_assign(&theta.map(f64::abs));
    Ok(x)
}

/// Elementwise closed-form variance update.
pub fn ias_theta_update(x: &DVector<f64>, hp: &HyperpriorConfig) -> DVector<f64> {
    x.map(|xi| hp.optimal_variance(xi))
}

/// Negative log posterior:
/// `|Lx - y|^2 / (2 sigma^2) + sum_i [x_i^2 / (2 theta_i) + ln(theta_i)/2 + h(theta_i)]`
/// where `h` is `(beta+1) ln(theta) + theta0/theta` for IG and
/// `(1-beta) ln(theta) + theta/theta0` for G.
pub fn objective(
    x: &DVector<f64>,
    theta: &DVector<f64>,
    gain: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma: f64,
    hp: &HyperpriorConfig,
) -> Result<Objective> {
    check_sigma(sigma)?;
    check_theta(theta)?;
    check_dims(gain, y, x.len())?;
    if theta.len() != x.len() {
        return Err(Error::param("x and theta differ in length"));
    }
    let residual = gain * x - y;
    let misfit = residual.norm_squared() / (2.0 * sigma * sigma);
    let prior: f64 = x
        .iter()
        .zip(theta.iter())
        .map(|(&xi, &ti)| xi * xi / (2.0 * ti) + 0.5 * ti.ln() + hp.neg_log_density(ti))
        .sum();
    Ok(Objective(misfit + prior))
}

/// IAS MAP estimate with `n_iter` sweeps.
///
/// Without an initial guess (or with an all-zero one) every variance starts at
/// `theta0`; otherwise the starting variances are the `theta` update applied to
/// `x_init`, which is how a guess enters the alternating scheme.
pub fn ias_map(
    gain: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma: f64,
    hp: &HyperpriorConfig,
    n_iter: usize,
    x_init: Option<&DVector<f64>>,
) -> Result<IasState> {
    if n_iter == 0 {
        return Err(Error::param("n_iter must be at least 1"));
    }
    check_sigma(sigma)?;
    let n = gain.ncols();
    let (mut x, mut theta) = match x_init {
        Some(x0) if x0.len() != n => {
            return Err(Error::param(format!(
                "initial guess has length {}, expected {n}",
                x0.len()
            )))
        }
        Some(x0) if x0.iter().any(|v| *v != 0.0) => (x0.clone(), ias_theta_update(x0, hp)),
        _ => (DVector::zeros(n), DVector::from_element(n, hp.theta0())),
    };
    check_dims(gain, y, n)?;

    let mut history = Vec::with_capacity(n_iter + 1);
    history.push(objective(&x, &theta, gain, y, sigma, hp)?.value());
    for _ in 0..n_iter {
        x = ias_x_update(gain, y, &theta, sigma)?;
        theta = ias_theta_update(&x, hp);
        history.push(objective(&x, &theta, gain, y, sigma, hp)?.value());
    }
    Ok(IasState {
        x,
        theta,
        iteration: n_iter,
        sigma,
        objective_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_system(rng: &mut ChaCha8Rng, m: usize, n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let l = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        (l, y)
    }

    /// (L^T L / sigma^2 + D^-1)^-1 L^T y / sigma^2, solved in the n x n space.
    fn normal_equations(l: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>, sigma: f64) -> DVector<f64> {
        let s2 = sigma * sigma;
        let mut a = l.transpose() * l / s2;
        for i in 0..theta.len() {
            a[(i, i)] += 1.0 / theta[i];
        }
        let rhs = l.transpose() * y / s2;
        a.lu().solve(&rhs).unwrap()
    }

    #[test]
    fn derived_constants() {
        let ig = HyperpriorConfig::inverse_gamma(1.5, 1e-10).unwrap();
        assert_eq!(ig.kappa(), 3.0);
        let g = HyperpriorConfig::gamma(2.0, 1.0).unwrap();
        assert_eq!(g.eta(), 0.5);
    }

    #[test]
    fn invalid_hyperpriors_rejected() {
        assert!(HyperpriorConfig::inverse_gamma(1.4, 1.0).is_err());
        assert!(HyperpriorConfig::inverse_gamma(1.5, 0.0).is_err());
        assert!(HyperpriorConfig::gamma(0.0, 1.0).is_err());
        assert!(HyperpriorConfig::gamma(0.5, 1.0).is_ok());
    }

    #[test]
    fn zero_data_gives_zero_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (l, _) = random_system(&mut rng, 4, 9);
        let x = ias_x_update(&l, &DVector::zeros(4), &DVector::from_element(9, 0.3), 0.1).unwrap();
        assert_eq!(x, DVector::zeros(9));
    }

    #[test]
    fn scalar_x_update() {
        let l = DMatrix::from_element(1, 1, 1.0);
        let x = ias_x_update(&l, &DVector::from_element(1, 2.0), &DVector::from_element(1, 1.0), 1.0).unwrap();
        assert!((x[0] - 1.0).abs() <= 2.0 * f64::EPSILON);
    }

    #[test]
    fn x_update_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (l, y) = random_system(&mut rng, 5, 12);
        let theta = DVector::from_fn(12, |_, _| rng.random_range(0.1..2.0));
        let x = ias_x_update(&l, &y, &theta, 0.3).unwrap();
        let oracle = normal_equations(&l, &y, &theta, 0.3);
        assert!((&x - &oracle).norm() <= 1e-8 * oracle.norm());
    }

    #[test]
    fn rejects_bad_sigma_and_theta() {
        let l = DMatrix::from_element(1, 2, 1.0);
        let y = DVector::from_element(1, 1.0);
        assert!(ias_x_update(&l, &y, &DVector::from_element(2, 1.0), 0.0).is_err());
        assert!(ias_x_update(&l, &y, &DVector::from_vec(vec![1.0, -1.0]), 1.0).is_err());
        assert!(objective(&DVector::zeros(2), &DVector::from_vec(vec![1.0, 0.0]), &l, &y, 1.0,
            &HyperpriorConfig::inverse_gamma(1.5, 1.0).unwrap()).is_err());
    }

    #[test]
    fn theta_update_hand_values() {
        let ig = HyperpriorConfig::inverse_gamma(1.5, 1e-10).unwrap();
        assert_eq!(ias_theta_update(&DVector::zeros(1), &ig)[0], 1e-10 / 3.0);
        let ig = HyperpriorConfig::inverse_gamma(1.5, 1.0).unwrap();
        assert_eq!(ias_theta_update(&DVector::from_element(1, 1.0), &ig)[0], 0.5);
        let g = HyperpriorConfig::gamma(1.5, 2.0).unwrap();
        assert_eq!(ias_theta_update(&DVector::from_element(1, 1.0), &g)[0], 1.0);
    }

    #[test]
    fn scalar_hand_recursion() {
        let l = DMatrix::from_element(1, 1, 1.0);
        let y = DVector::from_element(1, 2.0);
        let hp = HyperpriorConfig::inverse_gamma(1.5, 1.0).unwrap();
        let one = ias_map(&l, &y, 1.0, &hp, 1, None).unwrap();
        assert!((one.x[0] - 1.0).abs() <= 2.0 * f64::EPSILON);
        assert!((one.theta[0] - 0.5).abs() <= 2.0 * f64::EPSILON);
        let two = ias_map(&l, &y, 1.0, &hp, 2, None).unwrap();
        assert!((two.x[0] - 2.0 / 3.0).abs() <= 2.0 * f64::EPSILON);
        assert_eq!(two.objective_history.len(), 3);
    }

    #[test]
    fn single_step_is_tikhonov() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(m, n) in &[(5, 12), (20, 60), (50, 150)] {
            let (l, y) = random_system(&mut rng, m, n);
            let (sigma, theta0) = (0.2, 0.5);
            let hp = HyperpriorConfig::inverse_gamma(1.5, theta0).unwrap();
            let state = ias_map(&l, &y, sigma, &hp, 1, None).unwrap();
            // argmin |Lx - y|^2 + lambda |x|^2 with lambda = sigma^2 / theta0
            let lambda = sigma * sigma / theta0;
            let mut a = l.transpose() * &l;
            for i in 0..n {
                a[(i, i)] += lambda;
            }
            let oracle = a.cholesky().unwrap().solve(&(l.transpose() * &y));
            assert!((&state.x - &oracle).norm() <= 1e-8 * oracle.norm(), "{m}x{n}");
        }
    }

    #[test]
    fn zero_state_objective_is_prior_only() {
        let l = DMatrix::from_element(2, 3, 1.0);
        let hp = HyperpriorConfig::inverse_gamma(2.0, 0.5).unwrap();
        let theta = DVector::from_element(3, 0.5);
        let v = objective(&DVector::zeros(3), &theta, &l, &DVector::zeros(2), 1.0, &hp).unwrap();
        let per = 0.5 * 0.5f64.ln() + 3.0 * 0.5f64.ln() + 1.0;
        assert!((v.value() - 3.0 * per).abs() < 1e-14);
    }

    #[test]
    fn gamma_zero_signal_stays_positive() {
        let g = HyperpriorConfig::gamma(1.5, 1e-10).unwrap();
        assert!(ias_theta_update(&DVector::zeros(3), &g).iter().all(|t| *t > 0.0));
    }

    fn descent_holds(seed: u64, family: HyperpriorFamily) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(2..12);
        let n = rng.random_range(m..40);
        let (l, y) = random_system(&mut rng, m, n);
        let beta = rng.random_range(1.5..3.0);
        let theta0 = 10f64.powf(rng.random_range(-4.0..0.0));
        let hp = HyperpriorConfig::new(family, beta, theta0).unwrap();
        let sigma = rng.random_range(0.01..0.5);
        let init = if rng.random_bool(0.5) {
            Some(DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
        } else {
            None
        };
        let state = ias_map(&l, &y, sigma, &hp, 8, init.as_ref()).unwrap();
        for w in state.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs(), "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn sweeps_never_increase_objective() {
        for seed in 0..100 {
            descent_holds(seed, HyperpriorFamily::InverseGamma);
            descent_holds(seed + 1000, HyperpriorFamily::Gamma);
        }
    }

    proptest! {
        #[test]
        fn theta_update_is_stationary(
            x in -5.0f64..5.0,
            beta in 1.5f64..4.0,
            log_t0 in -6.0f64..1.0,
            ig in any::<bool>(),
        ) {
            let family = if ig { HyperpriorFamily::InverseGamma } else { HyperpriorFamily::Gamma };
            let hp = HyperpriorConfig::new(family, beta, 10f64.powf(log_t0)).unwrap();
            let l = DMatrix::from_element(1, 1, 1.0);
            let y = DVector::from_element(1, 0.3);
            let xv = DVector::from_element(1, x);
            let t = ias_theta_update(&xv, &hp);
            prop_assert!(t[0] >= hp.theta0() / hp.kappa() || !ig);
            prop_assert!(t[0] > 0.0);
            let f = |theta: f64| objective(&xv, &DVector::from_element(1, theta), &l, &y, 1.0, &hp).unwrap().value();
            let at = f(t[0]);
            prop_assume!(t[0] > 1e-300);
            prop_assert!(f(t[0] * 1.1) > at);
            prop_assert!(f(t[0] * 0.9) > at);
        }
    }
}
