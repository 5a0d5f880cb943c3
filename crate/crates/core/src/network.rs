//! Fast timescale: the network turns the augmented state into unit inputs
//! through its feedback matrix, and integrates them into unit activity.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::plant::AugmentedState;
use crate::scalar::Real;
use crate::seed::{self, Stream};

/// Linear feedback `u = W omega` with `W = [W_psi | W_nu | W_x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T: Real> {
    w: DMatrix<T>,
    m: usize,
}

impl<T: Real> Policy<T> {
    pub fn new(w: DMatrix<T>, m: usize) -> Result<Self> {
        let n = w.nrows();
        if w.ncols() != 2 * m + n {
            return Err(Error::dims(
                "policy",
                format!("{n}x{}", 2 * m + n),
                format!("{}x{}", w.nrows(), w.ncols()),
            ));
        }
        Ok(Self { w, m })
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            w: DMatrix::zeros(n, 2 * m + n),
            m,
        }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.w
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.w
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn w_psi(&self) -> DMatrixView<'_, T> {
        self.w.columns(0, self.m)
    }

    pub fn w_nu(&self) -> DMatrixView<'_, T> {
        self.w.columns(self.m, self.m)
    }

    pub fn w_x(&self) -> DMatrixView<'_, T> {
        self.w.columns(2 * self.m, self.n())
    }

    /// Frobenius distance to another policy.
    pub fn distance(&self, other: &Policy<T>) -> T {
        (&self.w - &other.w).norm()
    }
}

/// Isotropic Gaussian exploration `eps ~ N(0, sigma_y^2 I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplorationConfig<T> {
    pub variance: T,
}

impl<T: Real> ExplorationConfig<T> {
    pub fn new(variance: T) -> Result<Self> {
        if !(variance >= T::zero()) {
            return Err(Error::InvalidParameter {
                name: "sigma_y2",
                reason: format!("exploration variance must be non-negative, got {variance:?}"),
            });
        }
        Ok(Self { variance })
    }
}

/// Gaussian noise source owned by one episode.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    /// Exploration stream for episode `episode` of the run seeded by `seed`.
    pub fn for_episode(seed: u64, episode: usize) -> Self {
        Self {
            rng: seed::rng(seed, Stream::Exploration, episode as u64),
        }
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    /// `len` independent standard normal draws scaled by `std`.
    pub fn gaussian<T: Real>(&mut self, len: usize, std: T) -> DVector<T> {
        DVector::from_fn(len, |_, _| {
            let z: f64 = self.rng.sample(StandardNormal);
            T::lit(z) * std
        })
    }
}

/// Noise-free network input `W omega`.
pub fn act<T: Real>(policy: &Policy<T>, omega: &AugmentedState<T>) -> Result<DVector<T>> {
    if omega.m() != policy.m || omega.n() != policy.n() {
        return Err(Error::dims("policy input", policy.w.ncols(), omega.as_vector().len()));
    }
    Ok(&policy.w * omega.as_vector())
}

/// Exploratory input `W omega + eps`; always consumes exactly `n` draws.
pub fn act_explore<T: Real>(
    policy: &Policy<T>,
    omega: &AugmentedState<T>,
    cfg: &ExplorationConfig<T>,
    noise: &mut NoiseStream,
) -> Result<DVector<T>> {
    let u = act(policy, omega)?;
    Ok(u + noise.gaussian(policy.n(), cfg.variance.sqrt()))
}

/// Integrator update of unit activity, `x + dt u`.
pub fn advance_network<T: Real>(x: &DVector<T>, u: &DVector<T>, dt: T) -> DVector<T> {
    x + u * dt
}
