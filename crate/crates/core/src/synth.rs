//! Benchmark-graph generators with known ground truth, plus the two
//! brute-force oracles the test suite is built on: exhaustive enumeration of
//! the posterior, and literal edge-deletion leave-one-out prediction.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use thiserror::Error;

use crate::bp::{self, BpState, InitMode};
use crate::em::FitConfig;
use crate::graph::{Graph, GraphError};
use crate::model::{Hyperparams, ModelKind};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Bp(#[from] bp::BpError),
}

/// A generated graph together with the assignment and parameters that
/// produced it.
#[derive(Debug, Clone)]
pub struct PlantedGraph {
    pub graph: Graph,
    pub labels: Vec<usize>,
    pub hyperparams: Hyperparams,
    pub seed: u64,
}

impl PlantedGraph {
    /// Writes the planted labels as `vertex<TAB>label` lines.
    pub fn write_labels(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for (i, &l) in self.labels.iter().enumerate() {
            out.push_str(&format!("{i}\t{l}\n"));
        }
        std::fs::write(path, out)
    }
}

fn sample_labels(gamma: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut l = gamma.len() - 1;
        for (s, &g) in gamma.iter().enumerate() {
            acc += g;
            if u < acc {
                l = s;
                break;
            }
        }
        labels.push(l);
    }
    labels
}

/// Block-pair binomial edge sampling; O(L) rather than O(N^2) for sparse
/// affinities.
fn sample_block_edges(
    blocks: &[Vec<usize>],
    h: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let q = h.q;
    let mut edges = Vec::new();
    for s in 0..q {
        for t in s..q {
            let p = h.omega_at(s, t).clamp(0.0, 1.0);
            if p <= 0.0 {
                continue;
            }
            let (ns, nt) = (blocks[s].len() as u64, blocks[t].len() as u64);
            let pairs = if s == t { ns * (ns.saturating_sub(1)) / 2 } else { ns * nt };
            if pairs == 0 {
                continue;
            }
            let count = if p >= 1.0 {
                pairs
            } else {
                Binomial::new(pairs, p).expect("valid binomial").sample(rng)
            };
            if count * 2 >= pairs {
                // Dense block: enumerate pairs and keep a Bernoulli-matched
                // random subset of the requested size.
                let mut all: Vec<(usize, usize)> = Vec::with_capacity(pairs as usize);
                if s == t {
                    for a in 0..blocks[s].len() {
                        for b in (a + 1)..blocks[s].len() {
                            all.push((blocks[s][a], blocks[s][b]));
                        }
                    }
                } else {
                    for &u in &blocks[s] {
                        for &v in &blocks[t] {
                            all.push((u.min(v), u.max(v)));
                        }
                    }
                }
                for k in 0..count as usize {
                    let pick = rng.gen_range(k..all.len());
                    all.swap(k, pick);
                }
                edges.extend_from_slice(&all[..count as usize]);
            } else {
                let mut chosen: HashSet<(usize, usize)> = HashSet::with_capacity(count as usize);
                while (chosen.len() as u64) < count {
                    let (u, v) = if s == t {
                        let a = rng.gen_range(0..blocks[s].len());
                        let b = rng.gen_range(0..blocks[s].len());
                        if a == b {
                            continue;
                        }
                        (blocks[s][a], blocks[s][b])
                    } else {
                        (
                            blocks[s][rng.gen_range(0..blocks[s].len())],
                            blocks[t][rng.gen_range(0..blocks[t].len())],
                        )
                    };
                    chosen.insert((u.min(v), u.max(v)));
                }
                edges.extend(chosen);
            }
        }
    }
    edges.sort_unstable();
    edges
}

/// Samples a standard-SBM graph: labels iid from gamma, each pair present
/// with probability `omega[s][t]`. Deterministic given the seed.
pub fn sample_sbm(h: &Hyperparams, n: usize, seed: u64) -> Result<PlantedGraph, SynthError> {
    assert_eq!(h.kind, ModelKind::Standard);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = sample_labels(&h.gamma, n, &mut rng);
    let mut blocks = vec![Vec::new(); h.q];
    for (i, &l) in labels.iter().enumerate() {
        blocks[l].push(i);
    }
    let edges = sample_block_edges(&blocks, h, &mut rng);
    let (graph, _) = Graph::from_edges(n, &edges)?;
    Ok(PlantedGraph {
        graph,
        labels,
        hyperparams: h.clone(),
        seed,
    })
}

/// Degree-correction weight distribution for [`sample_dcsbm`].
#[derive(Debug, Clone)]
pub enum ThetaLaw<'a> {
    /// Truncated power law on the integer support {1, ..., d_max} with
    /// exponent tau (tau = -2 in the benchmark), sampled by inverse CDF.
    PowerLaw { tau: f64, d_max: usize },
    /// Per-vertex weights given directly (before cluster normalization).
    Explicit(&'a [f64]),
}

/// Samples a degree-corrected graph: theta drawn from the given law and
/// normalized to `sum_{i in s} theta_i = n_s` per cluster, then each pair is
/// present with probability `min(1, theta_i omega theta_j)`. With all-ones
/// theta this takes the exact same RNG path as [`sample_sbm`].
pub fn sample_dcsbm(
    h: &Hyperparams,
    n: usize,
    law: ThetaLaw,
    seed: u64,
) -> Result<PlantedGraph, SynthError> {
    assert_eq!(h.kind, ModelKind::DegreeCorrected);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = sample_labels(&h.gamma, n, &mut rng);
    let mut blocks = vec![Vec::new(); h.q];
    for (i, &l) in labels.iter().enumerate() {
        blocks[l].push(i);
    }
    let mut theta: Vec<f64> = match law {
        ThetaLaw::Explicit(t) => {
            assert_eq!(t.len(), n);
            t.to_vec()
        }
        ThetaLaw::PowerLaw { tau, d_max } => {
            assert!(d_max >= 1);
            let weights: Vec<f64> = (1..=d_max).map(|k| (k as f64).powf(tau)).collect();
            let total: f64 = weights.iter().sum();
            let mut cdf = Vec::with_capacity(d_max);
            let mut acc = 0.0;
            for w in &weights {
                acc += w / total;
                cdf.push(acc);
            }
            (0..n)
                .map(|_| {
                    let u: f64 = rng.gen();
                    let k = cdf.partition_point(|&c| c < u);
                    (k.min(d_max - 1) + 1) as f64
                })
                .collect()
        }
    };
    for block in &blocks {
        let sum: f64 = block.iter().map(|&i| theta[i]).sum();
        if sum > 0.0 {
            let scale = block.len() as f64 / sum;
            for &i in block {
                theta[i] *= scale;
            }
        }
    }
    let mut full = h.clone();
    full.theta = theta;
    let trivial = full.theta.iter().all(|&t| t == 1.0);
    let edges = if trivial {
        sample_block_edges(&blocks, &full, &mut rng)
    } else {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let (p, _) = full.kernel(i, j, labels[i], labels[j]);
                if p > 0.0 && rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        edges
    };
    let (graph, _) = Graph::from_edges(n, &edges)?;
    Ok(PlantedGraph {
        graph,
        labels,
        hyperparams: full,
        seed,
    })
}

/// Exact posterior over assignments by exhaustive enumeration.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    pub q: usize,
    /// N x q single-site marginals.
    pub marginals: Vec<f64>,
    /// L x q^2 pairwise marginals per undirected edge (source label major,
    /// using the lower endpoint as source).
    pub edge_marginals: Vec<f64>,
    /// log sum over assignments of the model weight.
    pub log_partition: f64,
}

/// Enumerates all q^N assignments. With `field = None` the weight is the
/// full generative likelihood (Bernoulli for the standard model, Poisson for
/// the degree-corrected one), with every non-edge factor included. With
/// `field = Some(h)` the weight is the field-conditioned model BP actually
/// solves — non-edges replaced by the unary factor `exp(-theta_i h[s])` and
/// edges carrying the rate kernel — which is what BP is exact against on
/// trees.
pub fn exact_posterior(g: &Graph, h: &Hyperparams, field: Option<&[f64]>) -> ExactPosterior {
    let q = h.q;
    let n = g.n();
    let states = (q as f64).powi(n as i32);
    assert!(states <= (1u64 << 24) as f64, "q^N too large to enumerate");
    let log_gamma: Vec<f64> = h.gamma.iter().map(|&x| x.ln()).collect();

    let log_weight = |sigma: &[usize]| -> f64 {
        let mut lw = 0.0;
        for (i, &s) in sigma.iter().enumerate() {
            lw += log_gamma[s];
            if let Some(hf) = field {
                lw -= h.theta_at(i) * hf[s];
            }
        }
        match field {
            Some(_) => {
                for (i, j) in g.edges() {
                    lw += h.kernel_rate(i, j, sigma[i], sigma[j]).ln();
                }
            }
            None => match h.kind {
                ModelKind::Standard => {
                    for i in 0..n {
                        for j in (i + 1)..n {
                            let (p, _) = h.kernel(i, j, sigma[i], sigma[j]);
                            if g.has_edge(i, j) {
                                lw += p.ln();
                            } else {
                                lw += (1.0 - p).ln();
                            }
                        }
                    }
                }
                ModelKind::DegreeCorrected => {
                    for i in 0..n {
                        for j in (i + 1)..n {
                            let r = h.kernel_rate(i, j, sigma[i], sigma[j]);
                            lw -= r;
                            if g.has_edge(i, j) {
                                lw += r.ln();
                            }
                        }
                    }
                }
            },
        }
        lw
    };

    let for_each_assignment = |mut visit: Box<dyn FnMut(&[usize], f64) + '_>| {
        let mut sigma = vec![0usize; n];
        loop {
            visit(&sigma, log_weight(&sigma));
            let mut pos = 0;
            loop {
                if pos == n {
                    return;
                }
                sigma[pos] += 1;
                if sigma[pos] < q {
                    break;
                }
                sigma[pos] = 0;
                pos += 1;
            }
        }
    };

    // Two passes: find the max log-weight, then accumulate shifted
    // exponentials so huge N or extreme parameters cannot overflow.
    let mut max_lw = f64::NEG_INFINITY;
    for_each_assignment(Box::new(|_, lw| {
        if lw > max_lw {
            max_lw = lw;
        }
    }));
    let mut z = 0.0f64;
    let mut marginals = vec![0.0; n * q];
    let mut edge_marginals = vec![0.0; g.m() * q * q];
    for_each_assignment(Box::new(|sigma, lw| {
        let w = (lw - max_lw).exp();
        z += w;
        for (i, &s) in sigma.iter().enumerate() {
            marginals[i * q + s] += w;
        }
        for id in 0..g.m() {
            let (i, j) = g.edge_endpoints(id);
            edge_marginals[id * q * q + sigma[i] * q + sigma[j]] += w;
        }
    }));
    for v in marginals.iter_mut() {
        *v /= z;
    }
    for v in edge_marginals.iter_mut() {
        *v /= z;
    }
    ExactPosterior {
        q,
        marginals,
        edge_marginals,
        log_partition: max_lw + z.ln(),
    }
}

/// Literal leave-one-out prediction for edge (i, j): delete the edge, rerun
/// BP to convergence at fixed hyperparameters, and evaluate the predictive
/// rate `sum_{st} psi'^i_s kappa_st psi'^j_t` from the deleted-graph
/// marginals. When `cavity` is the converged full-graph state, the
/// deleted-graph run is warm-started from its messages with the external
/// field held at the full-graph value — the cavity interpretation, which
/// keeps the rerun in the same fixed-point basin and is exact on trees.
/// With `None` the rerun starts fresh and tracks its own field.
pub fn brute_force_loocv(
    g: &Graph,
    h: &Hyperparams,
    edge: (usize, usize),
    cfg: &FitConfig,
    cavity: Option<&BpState>,
) -> Result<f64, SynthError> {
    let (i, j) = edge;
    assert!(g.has_edge(i, j), "edge ({i}, {j}) not present");
    let remaining: Vec<(usize, usize)> = g
        .edges()
        .filter(|&(a, b)| !(a == i.min(j) && b == i.max(j)))
        .collect();
    let (deleted, _) = Graph::from_edges(g.n(), &remaining)?;
    let mut opts = cfg.bp_options();
    opts.frozen_field = cavity.map(|c| c.field.clone());
    let mut init = bp::init_messages(&deleted, h.q, InitMode::UniformPerturbed, cfg.seed);
    if let Some(full) = cavity {
        for e in 0..deleted.num_half_edges() {
            let (src, dst) = (deleted.src(e), deleted.dst(e));
            let orig = g.half_edge(src, dst).expect("edge survives deletion");
            init.messages[e * h.q..(e + 1) * h.q].copy_from_slice(full.message(orig));
        }
    }
    let state = bp::run_bp(&deleted, h, init, &opts)?;
    let mut p = 0.0;
    for s in 0..h.q {
        for t in 0..h.q {
            p += state.marginal(i)[s] * h.kernel_rate(i, j, s, t) * state.marginal(j)[t];
        }
    }
    Ok(p)
}

/// Fraction of vertices on which the two assignments agree, maximized over
/// all permutations of the q labels.
pub fn overlap(a: &[usize], b: &[usize], q: usize) -> f64 {
    assert_eq!(a.len(), b.len());
    assert!(q <= 10, "permutation search is factorial in q");
    let mut confusion = vec![0usize; q * q];
    for (&x, &y) in a.iter().zip(b) {
        confusion[x * q + y] += 1;
    }
    let mut perm: Vec<usize> = (0..q).collect();
    let mut best = 0usize;
    permute(&mut perm, 0, &mut |p| {
        let agree: usize = (0..q).map(|s| confusion[s * q + p[s]]).sum();
        if agree > best {
            best = agree;
        }
    });
    best as f64 / a.len() as f64
}

fn permute(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, visit);
        perm.swap(k, i);
    }
}
