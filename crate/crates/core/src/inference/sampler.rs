use nalgebra::{DMatrix, DVector};
use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::InferenceError;

/// Unnormalized log density over a flat parameter vector.
pub trait Target: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, theta: &[f64]) -> f64;
}

/// Wraps a closure as a [`Target`].
pub struct FnTarget<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnTarget<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnTarget { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Target for FnTarget<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        (self.f)(theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub n_iter: usize,
    pub burn_in: usize,
    /// Acceptance rate the per-coordinate adaptation steers towards.
    pub target_accept: f64,
    /// Iterations per adaptation batch.
    pub batch: usize,
    pub initial_scale: f64,
    /// Adds a joint Gaussian move whose covariance is learned in the second
    /// half of burn-in (only when the target has more than one dimension).
    #[serde(default = "default_joint")]
    pub joint: bool,
}

fn default_joint() -> bool {
    true
}

/// Acceptance rate the joint-move adaptation steers towards.
pub const JOINT_TARGET_ACCEPT: f64 = 0.234;

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            n_iter: 76_000,
            burn_in: 26_000,
            target_accept: 0.44,
            batch: 50,
            initial_scale: 0.1,
            joint: true,
        }
    }
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.burn_in >= self.n_iter {
            return Err(InferenceError::Settings(format!(
                "burn-in {} must be smaller than the iteration count {}",
                self.burn_in, self.n_iter
            )));
        }
        if self.batch == 0 || !(self.initial_scale > 0.0) {
            return Err(InferenceError::Settings(
                "batch size and initial scale must be positive".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(InferenceError::Settings(format!(
                "target acceptance {} outside (0, 1)",
                self.target_accept
            )));
        }
        Ok(())
    }
}

/// One Markov chain; only post-burn-in iterations are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub seed: u64,
    pub burn_in: usize,
    pub n_iter: usize,
    /// Post-burn-in draws, one row per iteration.
    pub draws: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    /// Post-burn-in acceptance rate per coordinate.
    pub acceptance: Vec<f64>,
    pub scales_at_burn_in: Vec<f64>,
    pub final_scales: Vec<f64>,
    /// Post-burn-in acceptance rate of the joint move, when it was used.
    pub joint_acceptance: Option<f64>,
    /// Joint-move scale and Cholesky factor (row-major) at the end of burn-in and at the end.
    pub joint_at_burn_in: Option<(f64, Vec<f64>)>,
    pub joint_final: Option<(f64, Vec<f64>)>,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[k]).collect()
    }
}

/// Running mean and scatter matrix of visited states.
struct Moments {
    n: f64,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Moments {
            n: 0.0,
            mean: DVector::zeros(dim),
            scatter: DMatrix::zeros(dim, dim),
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        let x = DVector::from_column_slice(x);
        let delta = &x - &self.mean;
        self.mean += &delta / self.n;
        let delta2 = &x - &self.mean;
        self.scatter += &delta * delta2.transpose();
    }

    /// Lower Cholesky factor of the sample covariance with a small ridge.
    fn cholesky(&self) -> Option<DMatrix<f64>> {
        if self.n < 2.0 {
            return None;
        }
        let mut cov = &self.scatter / (self.n - 1.0);
        let dim = cov.nrows();
        for i in 0..dim {
            cov[(i, i)] += 1e-10 + 1e-6 * cov[(i, i)].abs();
        }
        cov.cholesky().map(|c| c.l())
    }
}

/// Adaptive random-walk Metropolis.
///
/// Every iteration updates each coordinate in turn with a Gaussian step.
/// During burn-in each coordinate's log proposal scale moves by
/// `min(0.05, 1/sqrt(b))` after batch `b`, up when the batch acceptance is
/// above target and down otherwise. With `joint` enabled, the second half of
/// burn-in also estimates the covariance of the visited states, and from
/// then on each iteration ends with one joint Gaussian move using that
/// covariance, its scale adapted the same way toward 0.234. All adaptation
/// stops at the end of burn-in.
pub fn run_sampler<T: Target + ?Sized>(
    target: &T,
    init: &[f64],
    settings: &SamplerSettings,
    seed: u64,
) -> Result<Chain, InferenceError> {
    settings.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(InferenceError::Init(format!(
            "initial vector has {} entries, target has {dim}",
            init.len()
        )));
    }
    let mut cur = init.to_vec();
    let mut lp = target.log_density(&cur);
    if !lp.is_finite() {
        return Err(InferenceError::Init(format!(
            "log density {lp} at the initial point"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_scale = vec![settings.initial_scale.ln(); dim];
    let mut batch_accept = vec![0usize; dim];
    let mut post_accept = vec![0usize; dim];
    let mut n_batches = 0usize;
    let kept = settings.n_iter - settings.burn_in;
    let mut draws = Vec::with_capacity(kept);
    let mut trace = Vec::with_capacity(kept);
    let mut scales_at_burn_in = Vec::new();

    let use_joint = settings.joint && dim > 1;
    let learn_from = settings.burn_in / 2;
    let mut moments = Moments::new(dim);
    let mut chol: Option<DMatrix<f64>> = None;
    let mut joint_log_scale = (2.38 / (dim as f64).sqrt()).ln();
    let mut joint_batch_accept = 0usize;
    let mut joint_batch_tries = 0usize;
    let mut joint_post_accept = 0usize;
    let mut joint_at_burn_in = None;
    let mut noise = vec![0.0; dim];
    let mut prop = vec![0.0; dim];

    for it in 0..settings.n_iter {
        let in_burn_in = it < settings.burn_in;
        for k in 0..dim {
            let step: f64 = rng.sample(StandardNormal);
            let old = cur[k];
            cur[k] = old + log_scale[k].exp() * step;
            let lp_new = target.log_density(&cur);
            let u: f64 = rng.sample(Open01);
            if lp_new.is_finite() && u.ln() < lp_new - lp {
                lp = lp_new;
                if in_burn_in {
                    batch_accept[k] += 1;
                } else {
                    post_accept[k] += 1;
                }
            } else {
                cur[k] = old;
            }
        }

        if let Some(l) = &chol {
            for v in noise.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let scale = joint_log_scale.exp();
            for i in 0..dim {
                let mut s = 0.0;
                for j in 0..=i {
                    s += l[(i, j)] * noise[j];
                }
                prop[i] = cur[i] + scale * s;
            }
            let lp_new = target.log_density(&prop);
            let u: f64 = rng.sample(Open01);
            let accepted = lp_new.is_finite() && u.ln() < lp_new - lp;
            if accepted {
                cur.copy_from_slice(&prop);
                lp = lp_new;
            }
            if in_burn_in {
                joint_batch_tries += 1;
                joint_batch_accept += accepted as usize;
            } else {
                joint_post_accept += accepted as usize;
            }
        }

        if in_burn_in {
            if use_joint && it >= learn_from {
                moments.push(&cur);
            }
            if (it + 1) % settings.batch == 0 {
                n_batches += 1;
                let delta = (1.0 / (n_batches as f64).sqrt()).min(0.05);
                for k in 0..dim {
                    let rate = batch_accept[k] as f64 / settings.batch as f64;
                    log_scale[k] += if rate > settings.target_accept { delta } else { -delta };
                    batch_accept[k] = 0;
                }
                if joint_batch_tries > 0 {
                    let rate = joint_batch_accept as f64 / joint_batch_tries as f64;
                    joint_log_scale += if rate > JOINT_TARGET_ACCEPT { delta } else { -delta };
                    joint_batch_accept = 0;
                    joint_batch_tries = 0;
                }
                if use_joint && moments.n >= (2 * dim + 20) as f64 {
                    if let Some(l) = moments.cholesky() {
                        chol = Some(l);
                    }
                }
            }
            if it + 1 == settings.burn_in {
                scales_at_burn_in = log_scale.iter().map(|s| s.exp()).collect();
                joint_at_burn_in = chol
                    .as_ref()
                    .map(|l| (joint_log_scale.exp(), row_major(l)));
            }
        } else {
            draws.push(cur.clone());
            trace.push(lp);
        }
    }
    if settings.burn_in == 0 {
        scales_at_burn_in = log_scale.iter().map(|s| s.exp()).collect();
    }

    Ok(Chain {
        seed,
        burn_in: settings.burn_in,
        n_iter: settings.n_iter,
        draws,
        log_posterior: trace,
        acceptance: post_accept.iter().map(|&a| a as f64 / kept as f64).collect(),
        scales_at_burn_in,
        final_scales: log_scale.iter().map(|s| s.exp()).collect(),
        joint_acceptance: joint_at_burn_in
            .as_ref()
            .map(|_| joint_post_accept as f64 / kept as f64),
        joint_at_burn_in,
        joint_final: chol.as_ref().map(|l| (joint_log_scale.exp(), row_major(l))),
    })
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}
