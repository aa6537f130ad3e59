//! Hyperparameters of the standard and degree-corrected stochastic block
//! models, and the edge-connection kernel both share.
//!
//! The affinity entries are interpreted as Poisson rates internally; in the
//! sparse regime (entries of order 1/N) this is equivalent to the Bernoulli
//! reading up to O(1/N) corrections. The kernel is clamped at 1 only where a
//! probability interpretation is required.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid hyperparameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Standard,
    DegreeCorrected,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Standard => write!(f, "standard"),
            ModelKind::DegreeCorrected => write!(f, "degree-corrected"),
        }
    }
}

/// Model parameters (q, gamma, omega, theta) for SBM or DC-SBM.
///
/// `theta` is stored per vertex even for the standard model (all ones) so all
/// downstream code is kind-agnostic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hyperparams {
    pub q: usize,
    /// Cluster-fraction probability vector, length q.
    pub gamma: Vec<f64>,
    /// Symmetric q x q affinity matrix, row-major.
    pub omega: Vec<f64>,
    /// Per-vertex degree-correction weights; empty means all ones.
    #[serde(default, skip_serializing_if = "theta_is_trivial")]
    pub theta: Vec<f64>,
    pub kind: ModelKind,
}

fn theta_is_trivial(theta: &Vec<f64>) -> bool {
    theta.iter().all(|&t| t == 1.0)
}

impl Hyperparams {
    /// Standard-model parameters with all-ones theta.
    pub fn standard(q: usize, gamma: Vec<f64>, omega: Vec<f64>) -> Hyperparams {
        Hyperparams {
            q,
            gamma,
            omega,
            theta: Vec::new(),
            kind: ModelKind::Standard,
        }
    }

    pub fn omega_at(&self, s: usize, t: usize) -> f64 {
        self.omega[s * self.q + t]
    }

    pub fn theta_at(&self, i: usize) -> f64 {
        if self.theta.is_empty() {
            1.0
        } else {
            self.theta[i]
        }
    }

    /// Materializes theta as a length-n vector of ones if absent.
    pub fn ensure_theta(&mut self, n: usize) {
        if self.theta.is_empty() {
            self.theta = vec![1.0; n];
        }
    }

    /// Connection rate for the pair (i, j) in clusters (s, t):
    /// `omega[s][t]` for the standard model, `theta_i * omega[s][t] * theta_j`
    /// for the degree-corrected one. Not clamped; see [`Hyperparams::kernel`].
    #[inline]
    pub fn kernel_rate(&self, i: usize, j: usize, s: usize, t: usize) -> f64 {
        match self.kind {
            ModelKind::Standard => self.omega_at(s, t),
            ModelKind::DegreeCorrected => self.theta_at(i) * self.omega_at(s, t) * self.theta_at(j),
        }
    }

    /// Connection probability, clamped to [0, 1]. Returns the value and
    /// whether clamping occurred.
    #[inline]
    pub fn kernel(&self, i: usize, j: usize, s: usize, t: usize) -> (f64, bool) {
        let r = self.kernel_rate(i, j, s, t);
        if r > 1.0 {
            (1.0, true)
        } else {
            (r, false)
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), ModelError> {
        if self.q == 0 {
            return Err(ModelError::Invalid("q must be >= 1".into()));
        }
        if self.gamma.len() != self.q || self.omega.len() != self.q * self.q {
            return Err(ModelError::Invalid("gamma/omega dimensions disagree with q".into()));
        }
        let gsum: f64 = self.gamma.iter().sum();
        if (gsum - 1.0).abs() > 1e-8 || self.gamma.iter().any(|&g| g < 0.0) {
            return Err(ModelError::Invalid("gamma must be a probability vector".into()));
        }
        for s in 0..self.q {
            for t in 0..self.q {
                let w = self.omega_at(s, t);
                if w < 0.0 || (self.kind == ModelKind::Standard && w > 1.0) {
                    return Err(ModelError::Invalid(format!("omega[{s}][{t}] = {w} out of range")));
                }
                if (w - self.omega_at(t, s)).abs() > 1e-12 * (1.0 + w.abs()) {
                    return Err(ModelError::Invalid("omega must be symmetric".into()));
                }
            }
        }
        if !self.theta.is_empty() {
            if self.theta.len() != n {
                return Err(ModelError::Invalid("theta length disagrees with vertex count".into()));
            }
            if self.theta.iter().any(|&t| t < 0.0 || !t.is_finite()) {
                return Err(ModelError::Invalid("theta must be nonnegative and finite".into()));
            }
            if self.kind == ModelKind::Standard && self.theta.iter().any(|&t| t != 1.0) {
                return Err(ModelError::Invalid("standard model requires theta = 1".into()));
            }
        }
        Ok(())
    }

    /// Expected mean degree `N * gamma' omega gamma` under the planted model.
    pub fn expected_mean_degree(&self, n: usize) -> f64 {
        let mut acc = 0.0;
        for s in 0..self.q {
            for t in 0..self.q {
                acc += self.gamma[s] * self.omega_at(s, t) * self.gamma[t];
            }
        }
        n as f64 * acc
    }
}

/// Equal-size planted-partition parameters: `omega_in` on the diagonal and
/// `omega_out = eps * omega_in` elsewhere, scaled so the expected mean degree
/// is `c`, i.e. `omega_in = q c / (N (1 + (q - 1) eps))`.
pub fn planted_partition(q: usize, c: f64, eps: f64, n: usize) -> Hyperparams {
    assert!(q >= 1 && c > 0.0 && (0.0..=1.0).contains(&eps));
    let omega_in = q as f64 * c / (n as f64 * (1.0 + (q as f64 - 1.0) * eps));
    let omega_out = eps * omega_in;
    let mut omega = vec![omega_out; q * q];
    for s in 0..q {
        omega[s * q + s] = omega_in;
    }
    Hyperparams::standard(q, vec![1.0 / q as f64; q], omega)
}
