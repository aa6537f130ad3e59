//! Model-assessment objectives computed from a converged fit: the Bethe free
//! energy plus the four prediction/training errors and their KL-gap
//! decomposition, the q-sweep table, and one-standard-error selection.
//!
//! All four errors report only the per-edge sums; the constant non-edge term
//! and O(1/N) corrections are dropped throughout. Absolute values therefore
//! differ from a naive cross-entropy by a constant, but model selection only
//! compares differences across q, where the constant cancels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bp::BpState;
use crate::em::{self, FitConfig, FitError};
use crate::graph::Graph;
use crate::model::{Hyperparams, ModelKind};

/// One row of the q-sweep table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssessmentRow {
    pub q: usize,
    pub f_bethe: f64,
    pub e_bayes: f64,
    pub se_bayes: f64,
    pub e_gibbs: f64,
    pub se_gibbs: f64,
    pub e_map: f64,
    pub se_map: f64,
    pub e_training: f64,
    pub se_training: f64,
    pub kl_gap_gibbs: f64,
    pub kl_gap_training: f64,
    pub converged: bool,
    pub init_used: String,
}

/// Per-edge contributions behind an [`AssessmentRow`]; means of these
/// vectors are the row's error fields.
#[derive(Debug, Clone)]
pub struct EdgeErrorTerms {
    pub bayes: Vec<f64>,
    pub gibbs: Vec<f64>,
    pub map: Vec<f64>,
    pub training: Vec<f64>,
    /// How many kernel evaluations hit the log floor.
    pub clamped: usize,
}

/// Floor applied inside log kappa when a learned affinity entry is exactly
/// zero but message mass still lands on it.
fn log_floor(n: usize) -> f64 {
    1e-12 / n as f64
}

fn log_kernel(h: &Hyperparams, floor: f64, i: usize, j: usize, s: usize, t: usize) -> (f64, bool) {
    let r = h.kernel_rate(i, j, s, t);
    if r < floor {
        (floor.ln(), true)
    } else {
        (r.ln(), false)
    }
}

struct EdgeView<'a> {
    i: usize,
    j: usize,
    msg_ij: &'a [f64],
    msg_ji: &'a [f64],
    log_z: f64,
}

fn edge_view<'a>(state: &'a BpState, g: &Graph, id: usize) -> EdgeView<'a> {
    let (i, j) = g.edge_endpoints(id);
    let e = g.half_edge(i, j).expect("edge exists");
    EdgeView {
        i,
        j,
        msg_ij: state.message(e),
        msg_ji: state.message(g.reverse(e)),
        log_z: state.log_z_edge[id],
    }
}

/// Bayes prediction error: per-edge term `-log Z^{ij}`.
pub fn e_bayes(state: &BpState, g: &Graph) -> (f64, Vec<f64>) {
    let terms: Vec<f64> = (0..g.m()).map(|id| -state.log_z_edge[id]).collect();
    (mean(&terms), terms)
}

/// Gibbs prediction error: cross-entropy of log kappa under the cavity pair
/// distribution `psi^{i->j} x psi^{j->i}`.
pub fn e_gibbs(state: &BpState, h: &Hyperparams, g: &Graph) -> (f64, Vec<f64>, usize) {
    cross_entropy_error(state, h, g, PairDistribution::Cavity)
}

/// Gibbs error with each cavity message replaced by a point mass at its
/// argmax (ties to the lowest label).
pub fn e_map(state: &BpState, h: &Hyperparams, g: &Graph) -> (f64, Vec<f64>, usize) {
    cross_entropy_error(state, h, g, PairDistribution::Map)
}

/// Training error: same cross-entropy under the full (edge-included) pair
/// posterior `psi kappa psi / Z^{ij}`.
pub fn e_training(state: &BpState, h: &Hyperparams, g: &Graph) -> (f64, Vec<f64>, usize) {
    cross_entropy_error(state, h, g, PairDistribution::Full)
}

#[derive(Clone, Copy, PartialEq)]
enum PairDistribution {
    Cavity,
    Full,
    Map,
}

fn cross_entropy_error(
    state: &BpState,
    h: &Hyperparams,
    g: &Graph,
    dist: PairDistribution,
) -> (f64, Vec<f64>, usize) {
    let q = state.q;
    let floor = log_floor(g.n());
    let mut clamped = 0usize;
    let mut terms = Vec::with_capacity(g.m());
    for id in 0..g.m() {
        let ev = edge_view(state, g, id);
        let mut term = 0.0;
        match dist {
            PairDistribution::Map => {
                let s = crate::bp::argmax(ev.msg_ij);
                let t = crate::bp::argmax(ev.msg_ji);
                let (lk, cl) = log_kernel(h, floor, ev.i, ev.j, s, t);
                clamped += cl as usize;
                term = -lk;
            }
            PairDistribution::Cavity => {
                for s in 0..q {
                    for t in 0..q {
                        let p = ev.msg_ij[s] * ev.msg_ji[t];
                        if p > 0.0 {
                            let (lk, cl) = log_kernel(h, floor, ev.i, ev.j, s, t);
                            clamped += cl as usize;
                            term -= p * lk;
                        }
                    }
                }
            }
            PairDistribution::Full => {
                let z = ev.log_z.exp();
                for s in 0..q {
                    for t in 0..q {
                        let rate = h.kernel_rate(ev.i, ev.j, s, t);
                        let p = ev.msg_ij[s] * rate * ev.msg_ji[t] / z;
                        if p > 0.0 {
                            let (lk, cl) = log_kernel(h, floor, ev.i, ev.j, s, t);
                            clamped += cl as usize;
                            term -= p * lk;
                        }
                    }
                }
            }
        }
        terms.push(term);
    }
    (mean(&terms), terms, clamped)
}

/// Mean KL(p_cav || p_full) and KL(p_full || p_cav) over edges, where
/// p_cav = psi x psi and p_full = psi kappa psi / Z^{ij}. Terms with zero
/// mass contribute zero.
pub fn kl_gaps(state: &BpState, h: &Hyperparams, g: &Graph) -> (f64, f64) {
    let q = state.q;
    let floor = log_floor(g.n());
    let (mut gap_gibbs, mut gap_training) = (0.0, 0.0);
    for id in 0..g.m() {
        let ev = edge_view(state, g, id);
        let z = ev.log_z.exp();
        for s in 0..q {
            for t in 0..q {
                let (lk, _) = log_kernel(h, floor, ev.i, ev.j, s, t);
                let p_cav = ev.msg_ij[s] * ev.msg_ji[t];
                // log(p_cav / p_full) = log Z - log kappa.
                if p_cav > 0.0 {
                    gap_gibbs += p_cav * (ev.log_z - lk);
                }
                let p_full = ev.msg_ij[s] * h.kernel_rate(ev.i, ev.j, s, t) * ev.msg_ji[t] / z;
                if p_full > 0.0 {
                    gap_training += p_full * (lk - ev.log_z);
                }
            }
        }
    }
    let l = g.m() as f64;
    (gap_gibbs / l, gap_training / l)
}

/// KL divergence of two distributions before and after coarse-graining by a
/// partition of the support. Returns (fine, coarse); fine >= coarse by
/// information monotonicity.
pub fn kl_refinement_check(p: &[f64], q_dist: &[f64], partition: &[Vec<usize>]) -> (f64, f64) {
    let mut seen = vec![false; p.len()];
    for part in partition {
        for &idx in part {
            assert!(!seen[idx], "partition reuses index {idx}");
            seen[idx] = true;
        }
    }
    assert!(seen.iter().all(|&s| s), "partition must cover the support");
    let kl = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| if x > 0.0 { x * (x / y).ln() } else { 0.0 })
            .sum()
    };
    let fine = kl(p, q_dist);
    let coarse_p: Vec<f64> = partition.iter().map(|part| part.iter().map(|&i| p[i]).sum()).collect();
    let coarse_q: Vec<f64> = partition.iter().map(|part| part.iter().map(|&i| q_dist[i]).sum()).collect();
    let coarse = kl(&coarse_p, &coarse_q);
    (fine, coarse)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Standard error of the mean of the per-edge terms: sample standard
/// deviation over sqrt(L).
pub fn standard_error(terms: &[f64]) -> f64 {
    let l = terms.len();
    if l < 2 {
        return 0.0;
    }
    let m = mean(terms);
    let var = terms.iter().map(|&t| (t - m).powi(2)).sum::<f64>() / (l as f64 - 1.0);
    (var / l as f64).sqrt()
}

/// Per-edge error vectors for a fit.
pub fn edge_error_terms(state: &BpState, h: &Hyperparams, g: &Graph) -> EdgeErrorTerms {
    let (_, bayes) = e_bayes(state, g);
    let (_, gibbs, c1) = e_gibbs(state, h, g);
    let (_, map, c2) = e_map(state, h, g);
    let (_, training, c3) = e_training(state, h, g);
    EdgeErrorTerms {
        bayes,
        gibbs,
        map,
        training,
        clamped: c1 + c2 + c3,
    }
}

/// Assembles the assessment row for a finished fit.
pub fn assess_fit(fit: &em::FitResult, g: &Graph) -> AssessmentRow {
    let state = &fit.state;
    let h = &fit.hyperparams;
    let terms = edge_error_terms(state, h, g);
    let (gap_gibbs, gap_training) = kl_gaps(state, h, g);
    AssessmentRow {
        q: h.q,
        f_bethe: fit.free_energy,
        e_bayes: mean(&terms.bayes),
        se_bayes: standard_error(&terms.bayes),
        e_gibbs: mean(&terms.gibbs),
        se_gibbs: standard_error(&terms.gibbs),
        e_map: mean(&terms.map),
        se_map: standard_error(&terms.map),
        e_training: mean(&terms.training),
        se_training: standard_error(&terms.training),
        kl_gap_gibbs: gap_gibbs,
        kl_gap_training: gap_training,
        converged: state.converged,
        init_used: fit.init_used.to_string(),
    }
}

/// Full sweep result: the table plus the free-energy trace of the winning
/// candidate at each q.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<AssessmentRow>,
    pub fe_traces: Vec<Vec<f64>>,
}

/// Fits and assesses every q in the inclusive range; rows ordered by q.
pub fn sweep(
    g: &Graph,
    q_range: std::ops::RangeInclusive<usize>,
    kind: ModelKind,
    cfg: &FitConfig,
) -> Result<SweepReport, FitError> {
    let qs: Vec<usize> = q_range.collect();
    let fits: Vec<Result<em::FitResult, FitError>> =
        qs.par_iter().map(|&q| em::fit(g, q, kind, cfg)).collect();
    let mut rows = Vec::with_capacity(qs.len());
    let mut fe_traces = Vec::with_capacity(qs.len());
    for fit in fits {
        let fit = fit?;
        rows.push(assess_fit(&fit, g));
        fe_traces.push(fit.fe_trace);
    }
    Ok(SweepReport { rows, fe_traces })
}

/// Which objective drives model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    Gibbs,
    Bayes,
    Training,
    Map,
    /// Free energy; selection uses zero standard error (no per-edge spread
    /// is defined for it), so this is a plain argmin.
    Bethe,
}

impl Default for Criterion {
    fn default() -> Self {
        Criterion::Gibbs
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Criterion::Gibbs => "gibbs",
            Criterion::Bayes => "bayes",
            Criterion::Training => "training",
            Criterion::Map => "map",
            Criterion::Bethe => "bethe",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Criterion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gibbs" => Ok(Criterion::Gibbs),
            "bayes" => Ok(Criterion::Bayes),
            "training" => Ok(Criterion::Training),
            "map" => Ok(Criterion::Map),
            "bethe" => Ok(Criterion::Bethe),
            other => Err(format!("unknown criterion '{other}'")),
        }
    }
}

fn criterion_value(row: &AssessmentRow, criterion: Criterion) -> (f64, f64) {
    match criterion {
        Criterion::Gibbs => (row.e_gibbs, row.se_gibbs),
        Criterion::Bayes => (row.e_bayes, row.se_bayes),
        Criterion::Training => (row.e_training, row.se_training),
        Criterion::Map => (row.e_map, row.se_map),
        Criterion::Bethe => (row.f_bethe, 0.0),
    }
}

/// One-standard-error rule: with q* the argmin of the chosen error (ties to
/// the smallest q), returns the smallest q whose error is within one
/// standard error of the minimum.
pub fn one_se_select(rows: &[AssessmentRow], criterion: Criterion) -> usize {
    assert!(!rows.is_empty());
    let mut best = 0;
    for (idx, row) in rows.iter().enumerate() {
        if criterion_value(row, criterion).0 < criterion_value(&rows[best], criterion).0 {
            best = idx;
        }
    }
    let (best_err, best_se) = criterion_value(&rows[best], criterion);
    let cutoff = best_err + best_se;
    for row in rows {
        if criterion_value(row, criterion).0 <= cutoff {
            return row.q;
        }
    }
    rows[best].q
}

const CSV_HEADER: &str = "q,f_bethe,e_bayes,se_bayes,e_gibbs,se_gibbs,e_map,se_map,e_training,se_training,kl_gap_gibbs,kl_gap_training,converged,init_used";

/// Renders the sweep table in the fixed CSV schema. Output is byte-stable
/// for identical inputs.
pub fn rows_to_csv(rows: &[AssessmentRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.q,
            fmt_f(r.f_bethe),
            fmt_f(r.e_bayes),
            fmt_f(r.se_bayes),
            fmt_f(r.e_gibbs),
            fmt_f(r.se_gibbs),
            fmt_f(r.e_map),
            fmt_f(r.se_map),
            fmt_f(r.e_training),
            fmt_f(r.se_training),
            fmt_f(r.kl_gap_gibbs),
            fmt_f(r.kl_gap_training),
            r.converged,
            r.init_used,
        ));
    }
    out
}

fn fmt_f(v: f64) -> String {
    format!("{v:.12e}")
}
