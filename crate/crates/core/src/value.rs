//! Quadratic state-action values: features, the least-squares evaluation of
//! a policy from one episode of data, and greedy improvement.
//!
//! With `z = [omega; u]` the value of a linear policy is `Q(z) = z' H z`, so
//! `Q = theta' (z kron z)` with `theta = vec(H)`. Each transition gives one
//! linear equation in `theta`,
//!
//! ```text
//! c_t = theta' (phi(z_t) - gamma phi(z'_t)),   z'_t = [omega_{t+1}; W omega_{t+1}]
//! ```
//!
//! and one episode of such equations is solved in the minimum-norm
//! least-squares sense.

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, min_norm_lstsq};
use crate::network::Policy;
use crate::plant::{AugmentedState, AugmentedSystem};
use crate::scalar::Real;

/// Parameterization used by the least-squares evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureBasis {
    /// All `(n'+n)^2` Kronecker features.
    ///
    /// The features of `z kron z` repeat every off-diagonal product twice, so
    /// the regression rows live in the symmetric subspace. The pseudo-inverse
    /// is computed in an orthonormal basis of that subspace, which gives
    /// exactly the minimum-norm solution of the full Kronecker system.
    #[default]
    Kronecker,
    /// Only the `(n'+n)(n'+n+1)/2` distinct monomials `z_i z_j`, `i <= j`.
    Symmetric,
}

/// One recorded transition `(omega_t, u_t, c_t, omega_{t+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T: Real> {
    pub omega: DVector<T>,
    pub u: DVector<T>,
    pub cost: T,
    pub omega_next: DVector<T>,
}

/// Data set of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeData<T: Real> {
    records: Vec<Transition<T>>,
    m: usize,
    n: usize,
}

impl<T: Real> EpisodeData<T> {
    pub fn new(records: Vec<Transition<T>>, m: usize, n: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidParameter {
                name: "T",
                reason: "an episode needs at least one transition".into(),
            });
        }
        let np = 2 * m + n;
        for r in &records {
            if r.omega.len() != np || r.omega_next.len() != np {
                return Err(Error::dims("episode state", np, r.omega.len().max(r.omega_next.len())));
            }
            if r.u.len() != n {
                return Err(Error::dims("episode input", n, r.u.len()));
            }
        }
        Ok(Self { records, m, n })
    }

    pub fn records(&self) -> &[Transition<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Sum of the stage costs.
    pub fn total_cost(&self) -> T {
        self.records.iter().fold(T::zero(), |acc, r| acc + r.cost)
    }
}

/// Estimated `H` together with the regression diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimate<T: Real> {
    theta: DVector<T>,
    h: DMatrix<T>,
    n: usize,
    residual: T,
    rank: usize,
}

impl<T: Real> ValueEstimate<T> {
    /// Unpacks `theta` (row-major `vec`) and symmetrizes.
    pub fn from_theta(theta: DVector<T>, n_prime: usize, n: usize) -> Result<Self> {
        let dim = n_prime + n;
        if theta.len() != dim * dim {
            return Err(Error::dims("theta", dim * dim, theta.len()));
        }
        let h = linalg::symmetrize(&unpack(&theta, dim));
        Ok(Self {
            theta,
            h,
            n,
            residual: T::zero(),
            rank: 0,
        })
    }

    /// Wraps a known `H`; `theta` becomes `vec` of its symmetric part.
    pub fn from_h(h: DMatrix<T>, n: usize) -> Result<Self> {
        if !h.is_square() || h.nrows() <= n {
            return Err(Error::dims(
                "H",
                format!("square with more than {n} rows"),
                format!("{}x{}", h.nrows(), h.ncols()),
            ));
        }
        let h = linalg::symmetrize(&h);
        Ok(Self {
            theta: pack(&h),
            h,
            n,
            residual: T::zero(),
            rank: 0,
        })
    }

    fn with_diagnostics(mut self, residual: T, rank: usize) -> Self {
        self.residual = residual;
        self.rank = rank;
        self
    }

    pub fn theta(&self) -> &DVector<T> {
        &self.theta
    }

    pub fn h(&self) -> &DMatrix<T> {
        &self.h
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_prime(&self) -> usize {
        self.h.nrows() - self.n
    }

    /// Regression residual `|Phi theta - c|`; zero for estimates not fitted to data.
    pub fn residual(&self) -> T {
        self.residual
    }

    /// Numerical rank of the regression; zero for estimates not fitted to data.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn h11(&self) -> DMatrixView<'_, T> {
        let np = self.n_prime();
        self.h.view((0, 0), (np, np))
    }

    pub fn h12(&self) -> DMatrixView<'_, T> {
        let np = self.n_prime();
        self.h.view((0, np), (np, self.n))
    }

    pub fn h21(&self) -> DMatrixView<'_, T> {
        let np = self.n_prime();
        self.h.view((np, 0), (self.n, np))
    }

    pub fn h22(&self) -> DMatrixView<'_, T> {
        let np = self.n_prime();
        self.h.view((np, np), (self.n, self.n))
    }

    /// `[omega; u]' H [omega; u]`.
    pub fn q_value(&self, omega: &DVector<T>, u: &DVector<T>) -> T {
        let z = stack(omega, u);
        z.dot(&(&self.h * &z))
    }
}

/// Row-major `vec`: entry `(i, j)` goes to `i * dim + j`.
pub fn pack<T: Real>(h: &DMatrix<T>) -> DVector<T> {
    DVector::from_iterator(
        h.len(),
        h.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()),
    )
}

/// Inverse of [`pack`], without symmetrization.
pub fn unpack<T: Real>(theta: &DVector<T>, dim: usize) -> DMatrix<T> {
    DMatrix::from_row_slice(dim, dim, theta.as_slice())
}

fn stack<T: Real>(omega: &DVector<T>, u: &DVector<T>) -> DVector<T> {
    DVector::from_iterator(omega.len() + u.len(), omega.iter().chain(u.iter()).copied())
}

/// `z kron z` for `z = [omega; u]`.
pub fn feature_phi<T: Real>(omega: &AugmentedState<T>, u: &DVector<T>) -> Result<DVector<T>> {
    if u.len() != omega.n() {
        return Err(Error::dims("feature input", omega.n(), u.len()));
    }
    Ok(kron_self(&stack(omega.as_vector(), u)))
}

fn kron_self<T: Real>(z: &DVector<T>) -> DVector<T> {
    let d = z.len();
    DVector::from_fn(d * d, |k, _| z[k / d] * z[k % d])
}

/// Regression row of one transition: `phi(z_t) - gamma phi(z'_t)` where the
/// successor action is the evaluated policy's, `W omega_{t+1}`.
pub fn regression_feature<T: Real>(record: &Transition<T>, w_eval: &Policy<T>, gamma: T) -> Result<DVector<T>> {
    check_gamma(gamma)?;
    check_record(record, w_eval)?;
    let next = stack(&record.omega_next, &(w_eval.matrix() * &record.omega_next));
    Ok(kron_self(&stack(&record.omega, &record.u)) - kron_self(&next) * gamma)
}

fn check_gamma<T: Real>(gamma: T) -> Result<()> {
    if !(gamma >= T::zero() && gamma <= T::one()) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            reason: format!("discount must lie in [0, 1], got {gamma:?}"),
        });
    }
    Ok(())
}

fn check_record<T: Real>(record: &Transition<T>, w_eval: &Policy<T>) -> Result<()> {
    let np = w_eval.matrix().ncols();
    if record.omega.len() != np || record.omega_next.len() != np {
        return Err(Error::dims("transition state", np, record.omega.len()));
    }
    if record.u.len() != w_eval.n() {
        return Err(Error::dims("transition input", w_eval.n(), record.u.len()));
    }
    Ok(())
}

/// Number of distinct quadratic monomials in `dim` variables.
pub fn symmetric_parameter_count(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Least-squares evaluation of `w_eval` from one episode.
///
/// Fails with [`Error::RankDeficient`] unless the data determines every
/// coefficient of the quadratic form, which needs at least
/// `(n'+n)(n'+n+1)/2` sufficiently exciting transitions.
pub fn estimate_theta<T: Real>(
    data: &EpisodeData<T>,
    w_eval: &Policy<T>,
    gamma: T,
    basis: FeatureBasis,
) -> Result<ValueEstimate<T>> {
    check_gamma(gamma)?;
    if w_eval.n() != data.n || w_eval.m() != data.m {
        return Err(Error::dims(
            "evaluated policy",
            format!("{}x{}", data.n, 2 * data.m + data.n),
            format!("{}x{}", w_eval.n(), w_eval.matrix().ncols()),
        ));
    }
    let n = data.n;
    let np = 2 * data.m + n;
    let dim = np + n;
    let params = symmetric_parameter_count(dim);
    let off_weight = match basis {
        FeatureBasis::Kronecker => T::lit(std::f64::consts::SQRT_2),
        FeatureBasis::Symmetric => T::one(),
    };

    let rows = data.len();
    let mut phi = DMatrix::<T>::zeros(rows, params);
    let mut costs = DVector::<T>::zeros(rows);
    for (t, rec) in data.records.iter().enumerate() {
        let z = stack(&rec.omega, &rec.u);
        let zn = stack(&rec.omega_next, &(w_eval.matrix() * &rec.omega_next));
        let mut col = 0;
        for i in 0..dim {
            phi[(t, col)] = z[i] * z[i] - gamma * zn[i] * zn[i];
            col += 1;
            for j in i + 1..dim {
                phi[(t, col)] = off_weight * (z[i] * z[j] - gamma * zn[i] * zn[j]);
                col += 1;
            }
        }
        costs[t] = rec.cost;
    }

    let ls = min_norm_lstsq(&phi, &costs);
    if ls.rank < params {
        return Err(Error::RankDeficient {
            rank: ls.rank,
            required: params,
            samples: rows,
        });
    }

    // Coefficient of z_i z_j (i < j) is 2 H_ij; Kronecker coordinates carry a
    // 1/sqrt(2) normalization on top of that.
    let off_scale = match basis {
        FeatureBasis::Kronecker => T::one() / off_weight,
        FeatureBasis::Symmetric => T::lit(0.5),
    };
    let mut h = DMatrix::<T>::zeros(dim, dim);
    let mut col = 0;
    for i in 0..dim {
        h[(i, i)] = ls.solution[col];
        col += 1;
        for j in i + 1..dim {
            let v = ls.solution[col] * off_scale;
            h[(i, j)] = v;
            h[(j, i)] = v;
            col += 1;
        }
    }
    Ok(ValueEstimate::from_theta(pack(&h), np, n)?.with_diagnostics(ls.residual, ls.rank))
}

/// Greedy policy of an estimate, `W = -H22^{-1} H21`.
///
/// Refuses when `H22` is singular or its condition number exceeds `ceiling`.
pub fn improve_policy<T: Real>(estimate: &ValueEstimate<T>, ceiling: T) -> Result<Policy<T>> {
    let h22 = estimate.h22().into_owned();
    let condition = linalg::condition_number(&h22);
    if !(condition <= ceiling) {
        return Err(Error::IllConditioned {
            condition: condition.as_f64(),
            ceiling: ceiling.as_f64(),
        });
    }
    let h21 = estimate.h21().into_owned();
    let solved = h22.lu().solve(&h21).ok_or(Error::IllConditioned {
        condition: f64::INFINITY,
        ceiling: ceiling.as_f64(),
    })?;
    let m = (estimate.n_prime() - estimate.n) / 2;
    Policy::new(-solved, m)
}

/// Exact `H` for a known system and value matrix `P`:
/// `[[Q + g A'PA, g A'PB], [g B'PA, R + g B'PB]]`.
pub fn h_from_value<T: Real>(system: &AugmentedSystem<T>, p: &DMatrix<T>, gamma: T) -> DMatrix<T> {
    let (a, b) = (system.a(), system.b());
    let np = system.n_prime();
    let n = system.n();
    let pa = p * a;
    let pb = p * b;
    let mut h = DMatrix::zeros(np + n, np + n);
    h.view_mut((0, 0), (np, np))
        .copy_from(&(system.q() + a.transpose() * &pa * gamma));
    let cross = a.transpose() * &pb * gamma;
    h.view_mut((0, np), (np, n)).copy_from(&cross);
    h.view_mut((np, 0), (n, np)).copy_from(&cross.transpose());
    h.view_mut((np, np), (n, n))
        .copy_from(&(system.r() + b.transpose() * &pb * gamma));
    h
}
