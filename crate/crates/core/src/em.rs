//! Hyperparameter learning by EM: the E-step runs belief propagation, the
//! M-step applies the closed-form gamma/omega (and theta) updates. Fits are
//! attempted from three initialization strategies with restarts, and the
//! fixed point with minimum Bethe free energy wins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bp::{self, BpOptions, BpState, InitMode};
use crate::graph::Graph;
use crate::model::{Hyperparams, ModelKind};
use crate::spectral;

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Bp(#[from] bp::BpError),
}

/// Knobs for BP and the EM loop. All fields have defaults; config files may
/// set any subset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// BP convergence tolerance (max message change).
    pub tol: f64,
    pub max_sweeps: usize,
    pub damping: f64,
    /// Damping retried automatically on non-convergence.
    pub damping_retry: f64,
    /// EM stop threshold on the per-vertex free-energy change.
    pub em_tol: f64,
    pub max_em_iters: usize,
    /// Restarts per initialization strategy.
    pub restarts: usize,
    /// Diagonal (or polarized-element) ratio r for the synthetic inits.
    pub assortative_ratio: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tol: 1e-6,
            max_sweeps: 500,
            damping: 0.0,
            damping_retry: 0.3,
            em_tol: 1e-6,
            max_em_iters: 100,
            restarts: 3,
            assortative_ratio: 10.0,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn bp_options(&self) -> BpOptions {
        BpOptions {
            tol: self.tol,
            max_sweeps: self.max_sweeps,
            damping: self.damping,
            damping_retry: if self.damping_retry > self.damping {
                Some(self.damping_retry)
            } else {
                None
            },
            ..BpOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    Spectral,
    Assortative,
    Polarized,
}

pub const INIT_STRATEGIES: [InitStrategy; 3] = [
    InitStrategy::Spectral,
    InitStrategy::Assortative,
    InitStrategy::Polarized,
];

impl std::fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitStrategy::Spectral => write!(f, "spectral"),
            InitStrategy::Assortative => write!(f, "assortative"),
            InitStrategy::Polarized => write!(f, "polarized"),
        }
    }
}

/// A converged (or best-effort) fixed point for one q.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub hyperparams: Hyperparams,
    pub state: BpState,
    pub free_energy: f64,
    pub init_used: InitStrategy,
    pub restart_used: usize,
    pub em_iters: usize,
    /// Bethe free energy after each E-step; the last entry is `free_energy`.
    pub fe_trace: Vec<f64>,
    /// Argmax of the marginal per vertex, ties to the lowest label.
    pub hard_labels: Vec<usize>,
    pub warnings: Vec<String>,
}

/// `gamma_s = (1/N) sum_i psi^i_s`.
pub fn update_gamma(state: &BpState) -> Vec<f64> {
    let q = state.q;
    let n = state.marginals.len() / q;
    let mut gamma = vec![0.0; q];
    for i in 0..n {
        for s in 0..q {
            gamma[s] += state.marginals[i * q + s];
        }
    }
    for gs in gamma.iter_mut() {
        *gs /= n as f64;
    }
    gamma
}

/// The affinity update. `h.gamma` must already hold the updated cluster
/// fractions; `h.omega`/`h.theta` are the values of the preceding E-step.
/// Satisfies `sum_{st} N^2 gamma_s omega_st gamma_t = 2L` up to roundoff.
/// Rows for empty clusters (gamma = 0) are zeroed; their indices are
/// returned as warnings.
pub fn update_omega(state: &BpState, h: &Hyperparams, g: &Graph) -> (Vec<f64>, Vec<usize>) {
    let q = state.q;
    let n = g.n() as f64;
    let mut mass = vec![0.0; q * q];
    for id in 0..g.m() {
        let (i, j) = g.edge_endpoints(id);
        let e = g.half_edge(i, j).expect("edge exists");
        let rev = g.reverse(e);
        let mi = &state.messages[e * q..(e + 1) * q];
        let mj = &state.messages[rev * q..(rev + 1) * q];
        let z = state.log_z_edge[id].exp();
        for s in 0..q {
            for t in 0..q {
                let p = mi[s] * h.kernel_rate(i, j, s, t) * mj[t] / z;
                mass[s * q + t] += p;
                mass[t * q + s] += p;
            }
        }
    }
    let mut degenerate = Vec::new();
    for s in 0..q {
        if h.gamma[s] <= 0.0 {
            degenerate.push(s);
        }
    }
    let mut omega = vec![0.0; q * q];
    for s in 0..q {
        for t in 0..q {
            if h.gamma[s] > 0.0 && h.gamma[t] > 0.0 {
                omega[s * q + t] = mass[s * q + t] / (n * n * h.gamma[s] * h.gamma[t]);
            }
        }
    }
    // Symmetrize exactly against roundoff.
    for s in 0..q {
        for t in (s + 1)..q {
            let avg = 0.5 * (omega[s * q + t] + omega[t * q + s]);
            omega[s * q + t] = avg;
            omega[t * q + s] = avg;
        }
    }
    (omega, degenerate)
}

/// Degree-correction update `theta_i = d_i / d_sigma` with
/// `d_sigma = (1/n_sigma) sum_{i in sigma} d_i`. The per-cluster sums then
/// equal the cluster sizes exactly. Empty clusters keep their previous
/// theta; their indices are returned.
pub fn update_theta(
    g: &Graph,
    hard_labels: &[usize],
    q: usize,
    prev: &[f64],
) -> (Vec<f64>, Vec<usize>) {
    let mut count = vec![0usize; q];
    let mut deg_sum = vec![0.0f64; q];
    for (i, &l) in hard_labels.iter().enumerate() {
        count[l] += 1;
        deg_sum[l] += g.degree(i) as f64;
    }
    let mut empty = Vec::new();
    let mut mean_deg = vec![0.0; q];
    for s in 0..q {
        if count[s] == 0 || deg_sum[s] == 0.0 {
            empty.push(s);
        } else {
            mean_deg[s] = deg_sum[s] / count[s] as f64;
        }
    }
    let mut theta: Vec<f64> = prev.to_vec();
    if theta.is_empty() {
        theta = vec![1.0; g.n()];
    }
    for (i, &l) in hard_labels.iter().enumerate() {
        if !empty.contains(&l) {
            theta[i] = g.degree(i) as f64 / mean_deg[l];
        }
    }
    (theta, empty)
}

/// Counts labels and inter-block edges into (gamma, omega) estimates.
/// Diagonal edge counts are doubled, so `omega_st = m_st / (n_s n_t)` and
/// q = 1 gives `omega = 2L/N^2`.
pub fn params_from_labels(g: &Graph, labels: &[usize], q: usize) -> Hyperparams {
    let n = g.n();
    let mut counts = vec![0usize; q];
    for &l in labels {
        counts[l] += 1;
    }
    let gamma: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let mut m = vec![0.0f64; q * q];
    for (i, j) in g.edges() {
        let (s, t) = (labels[i], labels[j]);
        m[s * q + t] += 1.0;
        m[t * q + s] += 1.0;
    }
    let mut omega = vec![0.0; q * q];
    for s in 0..q {
        for t in 0..q {
            if counts[s] > 0 && counts[t] > 0 {
                omega[s * q + t] = (m[s * q + t] / (counts[s] as f64 * counts[t] as f64)).min(1.0);
            }
        }
    }
    Hyperparams::standard(q, gamma, omega)
}

/// Spectral initialization: q smallest eigenvectors of the normalized
/// Laplacian, row-normalized, clustered by k-means. Returns the labels and
/// the counted (gamma, omega).
pub fn spectral_init(
    g: &Graph,
    q: usize,
    seed: u64,
) -> Result<(Vec<usize>, Hyperparams), spectral::SpectralError> {
    let (mut embedding, _) = spectral::smallest_laplacian_eigenvectors(g, q, seed)?;
    spectral::row_normalize(&mut embedding, q);
    let labels = spectral::kmeans(&embedding, q, q, seed, 10, 100);
    let h = params_from_labels(g, &labels, q);
    Ok((labels, h))
}

/// Equal-size assortative parameters: diagonal `r` times the off-diagonal,
/// scaled so the expected mean degree matches the graph.
pub fn assortative_init(g: &Graph, q: usize, r: f64) -> Hyperparams {
    let c = g.mean_degree();
    let n = g.n() as f64;
    let omega_out = q as f64 * c / (n * (r + q as f64 - 1.0));
    let omega_in = r * omega_out;
    let mut omega = vec![omega_out; q * q];
    for s in 0..q {
        omega[s * q + s] = omega_in;
    }
    Hyperparams::standard(q, vec![1.0 / q as f64; q], omega)
}

/// Equal-size parameters with one uniformly chosen (unordered) affinity
/// element boosted by `r`, scaled to the graph's mean degree.
pub fn polarized_init(g: &Graph, q: usize, r: f64, seed: u64) -> Hyperparams {
    use rand::Rng;
    use rand::SeedableRng;
    let c = g.mean_degree();
    let n = g.n() as f64;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    // Unordered pair (s, t), s <= t, uniform over q(q+1)/2 elements.
    let total = q * (q + 1) / 2;
    let mut pick = rng.gen_range(0..total);
    let (mut s_big, mut t_big) = (0, 0);
    'outer: for s in 0..q {
        for t in s..q {
            if pick == 0 {
                s_big = s;
                t_big = t;
                break 'outer;
            }
            pick -= 1;
        }
    }
    let mult = if s_big == t_big { 1.0 } else { 2.0 };
    let q2 = (q * q) as f64;
    let base = c * q2 / (n * (q2 + (r - 1.0) * mult));
    let mut omega = vec![base; q * q];
    omega[s_big * q + t_big] = r * base;
    omega[t_big * q + s_big] = r * base;
    Hyperparams::standard(q, vec![1.0 / q as f64; q], omega)
}

fn candidate_seed(base: u64, q: usize, strategy: usize, restart: usize) -> u64 {
    // FNV-style mix so every candidate draws an independent stream.
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ base;
    for v in [q as u64, strategy as u64, restart as u64] {
        h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

fn em_candidate(
    g: &Graph,
    q: usize,
    kind: ModelKind,
    cfg: &FitConfig,
    strategy: InitStrategy,
    restart: usize,
) -> Result<FitResult, FitError> {
    let n = g.n();
    let strategy_idx = INIT_STRATEGIES.iter().position(|&s| s == strategy).unwrap();
    let seed = candidate_seed(cfg.seed, q, strategy_idx, restart);
    let mut warnings = Vec::new();

    let (mut h, mut state) = match strategy {
        InitStrategy::Spectral => match spectral_init(g, q, seed) {
            Ok((labels, params)) => {
                let state = bp::init_messages(g, q, InitMode::FromAssignment(&labels), seed);
                (params, state)
            }
            Err(err) => {
                warnings.push(format!("spectral init failed ({err}); fell back to assortative"));
                let params = assortative_init(g, q, cfg.assortative_ratio);
                let state = bp::init_messages(g, q, InitMode::UniformPerturbed, seed);
                (params, state)
            }
        },
        InitStrategy::Assortative => {
            let params = assortative_init(g, q, cfg.assortative_ratio);
            let state = bp::init_messages(g, q, InitMode::UniformPerturbed, seed);
            (params, state)
        }
        InitStrategy::Polarized => {
            let params = polarized_init(g, q, cfg.assortative_ratio, seed);
            let state = bp::init_messages(g, q, InitMode::UniformPerturbed, seed);
            (params, state)
        }
    };
    if kind == ModelKind::DegreeCorrected {
        h.kind = ModelKind::DegreeCorrected;
        let scale = n as f64 / (2.0 * g.m() as f64);
        h.theta = g.degrees().iter().map(|&d| d as f64 * scale).collect();
    } else {
        h.ensure_theta(n);
    }

    let opts = cfg.bp_options();
    let mut fe_trace = Vec::new();
    let mut prev_f = f64::INFINITY;
    for iter in 0..cfg.max_em_iters.max(1) {
        state = bp::run_bp(g, &h, state, &opts)?;
        let f = bp::bethe_free_energy(&state, &h, g);
        fe_trace.push(f);
        if (prev_f - f).abs() < cfg.em_tol {
            break;
        }
        prev_f = f;
        if iter + 1 >= cfg.max_em_iters {
            break;
        }
        h.gamma = update_gamma(&state);
        let (omega, degenerate) = update_omega(&state, &h, g);
        for s in degenerate {
            warnings.push(format!("cluster {s} became empty during EM"));
        }
        h.omega = omega;
        if kind == ModelKind::DegreeCorrected {
            let labels = state.hard_labels();
            let (theta, empty) = update_theta(g, &labels, q, &h.theta);
            for s in empty {
                warnings.push(format!("theta update skipped empty cluster {s}"));
            }
            h.theta = theta;
        }
    }
    let free_energy = *fe_trace.last().expect("at least one EM iteration");
    let hard_labels = state.hard_labels();
    Ok(FitResult {
        hyperparams: h,
        free_energy,
        init_used: strategy,
        restart_used: restart,
        em_iters: fe_trace.len(),
        fe_trace,
        hard_labels,
        warnings,
        state,
    })
}

/// Fits the model at a fixed q: every init strategy times `cfg.restarts`
/// candidates, EM to a fixed point each, minimum Bethe free energy wins
/// (ties to the lowest strategy index, then the lowest restart index).
/// If no candidate's BP converged the best unconverged result is returned,
/// flagged through `state.converged`.
pub fn fit(g: &Graph, q: usize, kind: ModelKind, cfg: &FitConfig) -> Result<FitResult, FitError> {
    assert!(q >= 1);
    let mut jobs = Vec::new();
    for (si, &strategy) in INIT_STRATEGIES.iter().enumerate() {
        for restart in 0..cfg.restarts.max(1) {
            jobs.push((si, strategy, restart));
        }
    }
    let candidates: Vec<Result<FitResult, FitError>> = jobs
        .par_iter()
        .map(|&(_, strategy, restart)| em_candidate(g, q, kind, cfg, strategy, restart))
        .collect();
    let mut best: Option<FitResult> = None;
    for cand in candidates {
        let cand = cand?;
        let better = match &best {
            None => true,
            Some(b) => cand.free_energy < b.free_energy,
        };
        if better {
            best = Some(cand);
        }
    }
    let mut result = best.expect("at least one candidate");
    if !result.state.converged {
        result
            .warnings
            .push("no candidate reached BP convergence; best unconverged fixed point returned".into());
    }
    Ok(result)
}
