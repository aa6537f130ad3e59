//! Belief propagation for a fixed set of hyperparameters on a sparse graph.
//!
//! Messages live on directed half-edges. The update for the cavity message
//! from `i` to `j` is
//!
//! ```text
//! psi[i->j](s) ∝ gamma(s) * exp(-theta_i * h(s))
//!               * prod over k in ∂i\j of sum_t psi[k->i](t) * theta_k * omega(t,s) * theta_i
//! ```
//!
//! computed in log-space with max-subtraction before exponentiation. The
//! external field `h` aggregates the non-edge contribution and is maintained
//! incrementally, with a full recompute every few sweeps to cancel drift.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::model::Hyperparams;

/// Sweeps between full field/marginal recomputes.
const FIELD_REFRESH_PERIOD: usize = 10;

#[derive(Debug, Error)]
pub enum BpError {
    #[error("message normalization underflowed to zero on half-edge {src} -> {dst}")]
    Underflow { src: usize, dst: usize },
}

/// How initial messages are seeded.
#[derive(Debug, Clone)]
pub enum InitMode<'a> {
    /// Each entry `(1/q)(1 + u)`, `u` uniform in [-0.05, 0.05], renormalized.
    UniformPerturbed,
    /// Mass 0.9 on the given label, the remainder split over the other labels.
    FromAssignment(&'a [usize]),
}

/// Update schedule for [`run_bp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Seeded random vertex order; each vertex's outgoing messages are
    /// updated in place before moving on.
    Asynchronous,
    /// Jacobi sweep reading a frozen snapshot of the previous iteration.
    Synchronous,
}

#[derive(Debug, Clone)]
pub struct BpOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub damping: f64,
    /// Damping to retry with (from the same initial state) on non-convergence.
    pub damping_retry: Option<f64>,
    pub schedule: Schedule,
    /// Hold the external field fixed at this value instead of tracking it.
    /// Used by the leave-one-out oracle, which evaluates the cavity model of
    /// the full graph on an edge-deleted graph.
    pub frozen_field: Option<Vec<f64>>,
}

impl Default for BpOptions {
    fn default() -> Self {
        BpOptions {
            tol: 1e-6,
            max_sweeps: 500,
            damping: 0.0,
            damping_retry: Some(0.3),
            schedule: Schedule::Asynchronous,
            frozen_field: None,
        }
    }
}

/// All cavity messages, full marginals, the external field, and the
/// per-vertex/per-edge partition terms (stored as logs; the raw values
/// underflow for large graphs).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BpState {
    pub q: usize,
    /// 2L x q row-major; row `e` is the message along half-edge `e`.
    pub messages: Vec<f64>,
    /// N x q row-major full marginals.
    pub marginals: Vec<f64>,
    /// Length-q external field.
    pub field: Vec<f64>,
    /// log Z^i per vertex.
    pub log_z_vertex: Vec<f64>,
    /// log Z^{ij} per undirected edge.
    pub log_z_edge: Vec<f64>,
    /// log Z^{i->j} per half-edge.
    pub log_z_cavity: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    pub residual: f64,
    /// Seed for the per-sweep visit order.
    pub order_seed: u64,
}

impl BpState {
    pub fn message(&self, e: usize) -> &[f64] {
        &self.messages[e * self.q..(e + 1) * self.q]
    }

    pub fn marginal(&self, i: usize) -> &[f64] {
        &self.marginals[i * self.q..(i + 1) * self.q]
    }

    /// Argmax label per vertex, ties to the lowest index.
    pub fn hard_labels(&self) -> Vec<usize> {
        let n = self.marginals.len() / self.q;
        (0..n).map(|i| argmax(self.marginal(i))).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable state")
    }

    pub fn from_json(s: &str) -> Result<BpState, serde_json::Error> {
        serde_json::from_str(s)
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (idx, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = idx;
        }
    }
    best
}

/// Seeds a fresh state. The field is zeroed; [`run_bp`] recomputes it from
/// the marginals before the first sweep.
pub fn init_messages(g: &Graph, q: usize, mode: InitMode, seed: u64) -> BpState {
    assert!(q >= 1);
    let n = g.n();
    let he = g.num_half_edges();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fill_row = |row: &mut [f64], rng: &mut ChaCha8Rng, label: Option<usize>| {
        match label {
            Some(l) if q > 1 => {
                let rest = 0.1 / (q as f64 - 1.0);
                for v in row.iter_mut() {
                    *v = rest;
                }
                row[l] = 0.9;
            }
            _ => {
                if q == 1 {
                    row[0] = 1.0;
                    return;
                }
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    let u: f64 = rng.gen_range(-0.05..0.05);
                    *v = (1.0 + u) / q as f64;
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
    };
    let mut messages = vec![0.0; he * q];
    for e in 0..he {
        let label = match &mode {
            InitMode::UniformPerturbed => None,
            InitMode::FromAssignment(labels) => Some(labels[g.src(e)]),
        };
        fill_row(&mut messages[e * q..(e + 1) * q], &mut rng, label);
    }
    let mut marginals = vec![0.0; n * q];
    for i in 0..n {
        let label = match &mode {
            InitMode::UniformPerturbed => None,
            InitMode::FromAssignment(labels) => Some(labels[i]),
        };
        fill_row(&mut marginals[i * q..(i + 1) * q], &mut rng, label);
    }
    BpState {
        q,
        messages,
        marginals,
        field: vec![0.0; q],
        log_z_vertex: vec![0.0; n],
        log_z_edge: vec![0.0; g.m()],
        log_z_cavity: vec![0.0; he],
        converged: false,
        sweeps: 0,
        residual: f64::INFINITY,
        order_seed: seed,
    }
}

/// log of `sum_t msg[t] * theta_k * omega[t][s] * theta_i`, for all s.
/// `out` has length q.
///
/// Zero factors (a degenerate affinity entry meeting a hard message) are
/// floored at the smallest positive double instead of -inf, so the cavity
/// subtraction `total - log_a` stays finite instead of producing NaN.
fn log_incoming_factor(h: &Hyperparams, msg: &[f64], theta_i: f64, theta_k: f64, out: &mut [f64]) {
    let q = h.q;
    let scale = theta_i * theta_k;
    let floor = f64::MIN_POSITIVE.ln();
    for s in 0..q {
        let mut acc = 0.0;
        for t in 0..q {
            acc += msg[t] * h.omega[t * q + s];
        }
        let v = scale * acc;
        out[s] = if v > 0.0 { v.ln().max(floor) } else { floor };
    }
}

/// Scratch buffers reused across updates.
struct Workspace {
    /// d_i x q per-neighbor log factors for the vertex being updated.
    log_a: Vec<f64>,
    /// Length-q log-sum over all neighbors.
    total: Vec<f64>,
    row: Vec<f64>,
}

impl Workspace {
    fn new(q: usize) -> Workspace {
        Workspace {
            log_a: Vec::new(),
            total: vec![0.0; q],
            row: vec![0.0; q],
        }
    }
}

/// Recomputes the field from the marginals: `h[s] = sum_k theta_k sum_t psi^k[t] omega[t][s]`.
fn field_from_marginals(g: &Graph, h: &Hyperparams, marginals: &[f64], field: &mut [f64]) {
    let q = h.q;
    field.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..g.n() {
        let theta = h.theta_at(k);
        let row = &marginals[k * q..(k + 1) * q];
        for t in 0..q {
            let w = theta * row[t];
            for s in 0..q {
                field[s] += w * h.omega[t * q + s];
            }
        }
    }
}

/// Normalizes `exp(log_row - max)` into `row`; returns log of the sum
/// (i.e. the log normalization constant), or None on underflow.
fn normalize_from_log(log_row: &[f64], row: &mut [f64]) -> Option<f64> {
    let mx = log_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return None;
    }
    let mut sum = 0.0;
    for (r, &l) in row.iter_mut().zip(log_row) {
        *r = (l - mx).exp();
        sum += *r;
    }
    if sum <= 0.0 || !sum.is_finite() {
        return None;
    }
    for r in row.iter_mut() {
        *r /= sum;
    }
    Some(mx + sum.ln())
}

/// Updates all outgoing messages of vertex `i` from the current incoming
/// messages, then refreshes its marginal and (unless frozen) the field.
/// Returns the max L-infinity message change.
fn update_vertex(
    state: &mut BpState,
    h: &Hyperparams,
    g: &Graph,
    i: usize,
    damping: f64,
    track_field: bool,
    ws: &mut Workspace,
) -> Result<f64, BpError> {
    let q = state.q;
    let d = g.degree(i);
    let theta_i = h.theta_at(i);
    ws.log_a.resize(d * q, 0.0);
    for s in 0..q {
        ws.total[s] = h.gamma[s].ln() - theta_i * state.field[s];
    }
    for (idx, e) in g.out_edges(i).enumerate() {
        let k = g.dst(e);
        let rev = g.reverse(e);
        let msg = &state.messages[rev * q..(rev + 1) * q];
        log_incoming_factor(h, msg, theta_i, h.theta_at(k), &mut ws.log_a[idx * q..(idx + 1) * q]);
        for s in 0..q {
            ws.total[s] += ws.log_a[idx * q + s];
        }
    }
    let mut max_residual = 0.0f64;
    let mut log_row = vec![0.0; q];
    for (idx, e) in g.out_edges(i).enumerate() {
        for s in 0..q {
            log_row[s] = ws.total[s] - ws.log_a[idx * q + s];
        }
        if normalize_from_log(&log_row, &mut ws.row).is_none() {
            return Err(BpError::Underflow {
                src: i,
                dst: g.dst(e),
            });
        }
        let old = &mut state.messages[e * q..(e + 1) * q];
        if damping > 0.0 {
            let mut sum = 0.0;
            for s in 0..q {
                ws.row[s] = (1.0 - damping) * ws.row[s] + damping * old[s];
                sum += ws.row[s];
            }
            for s in 0..q {
                ws.row[s] /= sum;
            }
        }
        for s in 0..q {
            let delta = (ws.row[s] - old[s]).abs();
            if delta > max_residual {
                max_residual = delta;
            }
            old[s] = ws.row[s];
        }
    }
    // Marginal of i from the full product over neighbors.
    if normalize_from_log(&ws.total, &mut ws.row).is_none() {
        return Err(BpError::Underflow { src: i, dst: i });
    }
    let marg = &mut state.marginals[i * q..(i + 1) * q];
    if track_field {
        for s in 0..q {
            let delta = ws.row[s] - marg[s];
            if delta != 0.0 {
                let w = theta_i * delta;
                for t in 0..q {
                    state.field[t] += w * h.omega[s * q + t];
                }
            }
        }
    }
    marg.copy_from_slice(&ws.row);
    Ok(max_residual)
}

/// Updates the message on a single half-edge `e = (i -> j)` and refreshes the
/// source marginal and field. Returns the L-infinity change of the row.
pub fn update_message(
    state: &mut BpState,
    h: &Hyperparams,
    g: &Graph,
    e: usize,
) -> Result<f64, BpError> {
    let q = state.q;
    let i = g.src(e);
    let theta_i = h.theta_at(i);
    let mut total = vec![0.0; q];
    let mut log_a_e = vec![0.0; q];
    let mut fac = vec![0.0; q];
    for s in 0..q {
        total[s] = h.gamma[s].ln() - theta_i * state.field[s];
    }
    for e2 in g.out_edges(i) {
        let k = g.dst(e2);
        let rev = g.reverse(e2);
        let msg = &state.messages[rev * q..(rev + 1) * q];
        log_incoming_factor(h, msg, theta_i, h.theta_at(k), &mut fac);
        for s in 0..q {
            total[s] += fac[s];
        }
        if e2 == e {
            log_a_e.copy_from_slice(&fac);
        }
    }
    let log_row: Vec<f64> = (0..q).map(|s| total[s] - log_a_e[s]).collect();
    let mut row = vec![0.0; q];
    if normalize_from_log(&log_row, &mut row).is_none() {
        return Err(BpError::Underflow { src: i, dst: g.dst(e) });
    }
    let mut residual = 0.0f64;
    {
        let old = &mut state.messages[e * q..(e + 1) * q];
        for s in 0..q {
            residual = residual.max((row[s] - old[s]).abs());
            old[s] = row[s];
        }
    }
    let mut marg_row = vec![0.0; q];
    if normalize_from_log(&total, &mut marg_row).is_none() {
        return Err(BpError::Underflow { src: i, dst: i });
    }
    let track_field = true;
    let marg = &mut state.marginals[i * q..(i + 1) * q];
    if track_field {
        for s in 0..q {
            let delta = marg_row[s] - marg[s];
            let w = theta_i * delta;
            for t in 0..q {
                state.field[t] += w * h.omega[s * q + t];
            }
        }
    }
    marg.copy_from_slice(&marg_row);
    Ok(residual)
}

/// Recomputes marginals from the messages (at the current field), then the
/// field from the marginals. Cancels incremental drift.
fn full_refresh(state: &mut BpState, h: &Hyperparams, g: &Graph, track_field: bool) -> Result<(), BpError> {
    let q = state.q;
    let mut total = vec![0.0; q];
    let mut fac = vec![0.0; q];
    let mut row = vec![0.0; q];
    for i in 0..g.n() {
        let theta_i = h.theta_at(i);
        for s in 0..q {
            total[s] = h.gamma[s].ln() - theta_i * state.field[s];
        }
        for e in g.out_edges(i) {
            let k = g.dst(e);
            let rev = g.reverse(e);
            let msg = &state.messages[rev * q..(rev + 1) * q];
            log_incoming_factor(h, msg, theta_i, h.theta_at(k), &mut fac);
            for s in 0..q {
                total[s] += fac[s];
            }
        }
        if normalize_from_log(&total, &mut row).is_none() {
            return Err(BpError::Underflow { src: i, dst: i });
        }
        state.marginals[i * q..(i + 1) * q].copy_from_slice(&row);
    }
    if track_field {
        let mut field = std::mem::take(&mut state.field);
        field_from_marginals(g, h, &state.marginals, &mut field);
        state.field = field;
    }
    Ok(())
}

/// One full pass over all half-edges; returns the max message change.
///
/// Asynchronous schedule: vertices are visited in a seeded random order and
/// each vertex's outgoing half-edges are updated in sequence, so this is a
/// source-grouped asynchronous sweep. Synchronous schedule: all messages are
/// recomputed from a frozen snapshot.
pub fn sweep(
    state: &mut BpState,
    h: &Hyperparams,
    g: &Graph,
    damping: f64,
    order: &mut impl Rng,
) -> Result<f64, BpError> {
    sweep_inner(state, h, g, damping, order, Schedule::Asynchronous, true)
}

fn sweep_inner(
    state: &mut BpState,
    h: &Hyperparams,
    g: &Graph,
    damping: f64,
    order: &mut impl Rng,
    schedule: Schedule,
    track_field: bool,
) -> Result<f64, BpError> {
    let q = state.q;
    let mut max_residual = 0.0f64;
    match schedule {
        Schedule::Asynchronous => {
            let mut ws = Workspace::new(q);
            let mut visit: Vec<usize> = (0..g.n()).collect();
            visit.shuffle(order);
            for &i in &visit {
                let r = update_vertex(state, h, g, i, damping, track_field, &mut ws)?;
                max_residual = max_residual.max(r);
            }
        }
        Schedule::Synchronous => {
            let snapshot = state.messages.clone();
            let mut log_row = vec![0.0; q];
            let mut row = vec![0.0; q];
            let mut fac = vec![0.0; q];
            let mut total = vec![0.0; q];
            let mut log_a = Vec::new();
            for i in 0..g.n() {
                let theta_i = h.theta_at(i);
                let d = g.degree(i);
                log_a.resize(d * q, 0.0);
                for s in 0..q {
                    total[s] = h.gamma[s].ln() - theta_i * state.field[s];
                }
                for (idx, e) in g.out_edges(i).enumerate() {
                    let k = g.dst(e);
                    let rev = g.reverse(e);
                    let msg = &snapshot[rev * q..(rev + 1) * q];
                    log_incoming_factor(h, msg, theta_i, h.theta_at(k), &mut fac);
                    log_a[idx * q..(idx + 1) * q].copy_from_slice(&fac);
                    for s in 0..q {
                        total[s] += fac[s];
                    }
                }
                for (idx, e) in g.out_edges(i).enumerate() {
                    for s in 0..q {
                        log_row[s] = total[s] - log_a[idx * q + s];
                    }
                    if normalize_from_log(&log_row, &mut row).is_none() {
                        return Err(BpError::Underflow { src: i, dst: g.dst(e) });
                    }
                    let old = &mut state.messages[e * q..(e + 1) * q];
                    let mut sum = 0.0;
                    for s in 0..q {
                        row[s] = (1.0 - damping) * row[s] + damping * old[s];
                        sum += row[s];
                    }
                    for s in 0..q {
                        row[s] /= sum;
                        max_residual = max_residual.max((row[s] - old[s]).abs());
                        old[s] = row[s];
                    }
                }
            }
            // Recompute marginals and field from the new messages. The field
            // enters every unary factor at once, so its Jacobi lag can drive
            // a global period-2 oscillation; damping its update with the same
            // coefficient as the messages suppresses that mode.
            let old_field = state.field.clone();
            full_refresh(state, h, g, track_field)?;
            if damping > 0.0 && track_field {
                for (f, o) in state.field.iter_mut().zip(&old_field) {
                    *f = (1.0 - damping) * *f + damping * o;
                }
            }
        }
    }
    state.sweeps += 1;
    state.residual = max_residual;
    Ok(max_residual)
}

/// Fills the partition terms `log Z^i`, `log Z^{ij}`, `log Z^{i->j}` from the
/// current messages and field.
pub fn compute_partition_terms(state: &mut BpState, h: &Hyperparams, g: &Graph) -> Result<(), BpError> {
    let q = state.q;
    let mut total = vec![0.0; q];
    let mut fac = vec![0.0; q];
    let mut log_a = Vec::new();
    for i in 0..g.n() {
        let theta_i = h.theta_at(i);
        let d = g.degree(i);
        log_a.resize(d * q, 0.0);
        for s in 0..q {
            total[s] = h.gamma[s].ln() - theta_i * state.field[s];
        }
        for (idx, e) in g.out_edges(i).enumerate() {
            let k = g.dst(e);
            let rev = g.reverse(e);
            let msg = &state.messages[rev * q..(rev + 1) * q];
            log_incoming_factor(h, msg, theta_i, h.theta_at(k), &mut fac);
            log_a[idx * q..(idx + 1) * q].copy_from_slice(&fac);
            for s in 0..q {
                total[s] += fac[s];
            }
        }
        state.log_z_vertex[i] = log_sum_exp(&total);
        for (idx, e) in g.out_edges(i).enumerate() {
            let cav: Vec<f64> = (0..q).map(|s| total[s] - log_a[idx * q + s]).collect();
            state.log_z_cavity[e] = log_sum_exp(&cav);
        }
    }
    for id in 0..g.m() {
        let (i, j) = g.edge_endpoints(id);
        let e = g.half_edge(i, j).expect("edge exists");
        let rev = g.reverse(e);
        let mi = &state.messages[e * q..(e + 1) * q];
        let mj = &state.messages[rev * q..(rev + 1) * q];
        let mut z = 0.0;
        for s in 0..q {
            for t in 0..q {
                z += mi[s] * h.kernel_rate(i, j, s, t) * mj[t];
            }
        }
        if z <= 0.0 || !z.is_finite() {
            return Err(BpError::Underflow { src: i, dst: j });
        }
        state.log_z_edge[id] = z.ln();
    }
    Ok(())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return f64::NEG_INFINITY;
    }
    mx + v.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln()
}

/// Iterates sweeps until the max message change drops below `opts.tol` or
/// `opts.max_sweeps` is exhausted, then fills the partition terms.
/// Non-convergence is reported through the `converged` flag, not an error.
pub fn run_bp(
    g: &Graph,
    h: &Hyperparams,
    init: BpState,
    opts: &BpOptions,
) -> Result<BpState, BpError> {
    let retry_init = match opts.damping_retry {
        Some(d) if d > opts.damping => Some(init.clone()),
        _ => None,
    };
    let mut state = run_bp_once(g, h, init, opts, opts.damping)?;
    if !state.converged {
        if let (Some(saved), Some(d)) = (retry_init, opts.damping_retry) {
            let retried = run_bp_once(g, h, saved, opts, d)?;
            if retried.converged || retried.residual < state.residual {
                state = retried;
            }
        }
    }
    Ok(state)
}

fn run_bp_once(
    g: &Graph,
    h: &Hyperparams,
    mut state: BpState,
    opts: &BpOptions,
    damping: f64,
) -> Result<BpState, BpError> {
    assert!(opts.tol > 0.0);
    let track_field = opts.frozen_field.is_none();
    if let Some(f) = &opts.frozen_field {
        state.field.copy_from_slice(f);
    } else {
        let mut field = std::mem::take(&mut state.field);
        field_from_marginals(g, h, &state.marginals, &mut field);
        state.field = field;
    }
    state.converged = false;
    for pass in 0..opts.max_sweeps {
        let mut order = ChaCha8Rng::seed_from_u64(
            state.order_seed ^ (state.sweeps as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let r = sweep_inner(&mut state, h, g, damping, &mut order, opts.schedule, track_field)?;
        if track_field
            && opts.schedule == Schedule::Asynchronous
            && (pass + 1) % FIELD_REFRESH_PERIOD == 0
        {
            full_refresh(&mut state, h, g, true)?;
        }
        if r < opts.tol {
            state.converged = true;
            break;
        }
    }
    // Settle marginals and field against the final messages before reading
    // off the partition terms.
    if opts.schedule == Schedule::Asynchronous {
        full_refresh(&mut state, h, g, track_field)?;
        full_refresh(&mut state, h, g, track_field)?;
    }
    compute_partition_terms(&mut state, h, g)?;
    Ok(state)
}

/// Bethe free energy per vertex:
/// `-(1/N) sum_i log Z^i + (1/N) sum_E log Z^{ij} - c/2 - (c/2) log N`.
///
/// The `-(c/2) log N` shift follows the extensivity convention of the BP
/// community-detection literature. For the degree-corrected model the
/// non-edge term evaluates to the same `-c/2` constant at the theta
/// normalization `sum_{i in s} theta_i = n_s`.
pub fn bethe_free_energy(state: &BpState, _h: &Hyperparams, g: &Graph) -> f64 {
    let n = g.n() as f64;
    let c = g.mean_degree();
    let vertex_term: f64 = state.log_z_vertex.iter().sum();
    let edge_term: f64 = state.log_z_edge.iter().sum();
    -vertex_term / n + edge_term / n - c / 2.0 - (c / 2.0) * n.ln()
}

/// `sum_i log Z^i - sum_E log Z^{ij}`: the Bethe estimate of the log
/// partition function of the field-conditioned model, exact on trees.
pub fn bethe_log_partition(state: &BpState) -> f64 {
    state.log_z_vertex.iter().sum::<f64>() - state.log_z_edge.iter().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_edge_list;
    use crate::model::{planted_partition, Hyperparams};
    use approx::assert_relative_eq;

    fn path3() -> Graph {
        parse_edge_list("0 1\n1 2").unwrap().0
    }

    #[test]
    fn q1_everything_is_one() {
        let g = path3();
        let state = init_messages(&g, 1, InitMode::UniformPerturbed, 7);
        assert!(state.messages.iter().all(|&m| m == 1.0));
        let h = Hyperparams::standard(1, vec![1.0], vec![0.5]);
        let out = run_bp(&g, &h, state, &BpOptions::default()).unwrap();
        assert!(out.converged);
        assert!(out.marginals.iter().all(|&m| m == 1.0));
        assert_eq!(out.residual, 0.0);
    }

    #[test]
    fn init_is_deterministic() {
        let g = path3();
        let a = init_messages(&g, 3, InitMode::UniformPerturbed, 42);
        let b = init_messages(&g, 3, InitMode::UniformPerturbed, 42);
        assert_eq!(a.messages, b.messages);
        assert_eq!(a.marginals, b.marginals);
        let c = init_messages(&g, 3, InitMode::UniformPerturbed, 43);
        assert_ne!(a.messages, c.messages);
    }

    #[test]
    fn from_assignment_rows() {
        let g = path3();
        let labels = [0usize, 0, 1];
        let state = init_messages(&g, 2, InitMode::FromAssignment(&labels), 0);
        for i in 0..3 {
            let expect = if labels[i] == 0 { [0.9, 0.1] } else { [0.1, 0.9] };
            assert_eq!(state.marginal(i), &expect);
        }
        for e in 0..g.num_half_edges() {
            let l = labels[g.src(e)];
            assert_eq!(state.message(e)[l], 0.9);
        }
    }

    #[test]
    fn simplex_preserved_by_sweeps() {
        let g = parse_edge_list("0 1\n1 2\n2 0\n2 3\n3 4").unwrap().0;
        let h = planted_partition(3, 2.0, 0.3, 5);
        let state = init_messages(&g, 3, InitMode::UniformPerturbed, 1);
        let out = run_bp(&g, &h, state, &BpOptions::default()).unwrap();
        for e in 0..g.num_half_edges() {
            let row = out.message(e);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        for i in 0..g.n() {
            assert_relative_eq!(out.marginal(i).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn leaf_cavity_is_prior_times_field() {
        // Vertex 0 is a leaf; its message toward 1 has an empty product.
        let g = path3();
        let h = planted_partition(2, 1.5, 0.4, 3);
        let mut state = init_messages(&g, 2, InitMode::UniformPerturbed, 3);
        state.field = vec![0.3, 0.7];
        // The update refreshes the field afterwards; the message itself is
        // computed against the field as it stood beforehand.
        let field_before = state.field.clone();
        let e = g.half_edge(0, 1).unwrap();
        update_message(&mut state, &h, &g, e).unwrap();
        let expect_unnorm: Vec<f64> = (0..2)
            .map(|s| h.gamma[s] * (-field_before[s]).exp())
            .collect();
        let z: f64 = expect_unnorm.iter().sum();
        for s in 0..2 {
            assert_relative_eq!(state.message(e)[s], expect_unnorm[s] / z, epsilon = 1e-14);
        }
    }

    #[test]
    fn fixed_point_is_idempotent() {
        let g = parse_edge_list("0 1\n1 2\n2 0\n2 3").unwrap().0;
        let h = planted_partition(2, 2.0, 0.2, 4);
        let init = init_messages(&g, 2, InitMode::UniformPerturbed, 9);
        let opts = BpOptions {
            tol: 1e-14,
            max_sweeps: 5000,
            ..BpOptions::default()
        };
        let state = run_bp(&g, &h, init, &opts).unwrap();
        assert!(state.converged);
        let mut again = state.clone();
        let mut order = ChaCha8Rng::seed_from_u64(0);
        let r = sweep(&mut again, &h, &g, 0.0, &mut order).unwrap();
        assert!(r < 1e-12, "residual {r}");
    }

    #[test]
    fn sweeps_are_deterministic() {
        let g = parse_edge_list("0 1\n1 2\n2 0\n2 3").unwrap().0;
        let h = planted_partition(2, 2.0, 0.2, 4);
        let opts = BpOptions::default();
        let a = run_bp(&g, &h, init_messages(&g, 2, InitMode::UniformPerturbed, 5), &opts).unwrap();
        let b = run_bp(&g, &h, init_messages(&g, 2, InitMode::UniformPerturbed, 5), &opts).unwrap();
        assert_eq!(a.messages, b.messages);
        assert_eq!(a.sweeps, b.sweeps);
    }

    #[test]
    fn cavity_edge_vertex_identity() {
        // Z^{i->j} * Z^{ij} = Z^i at a tight fixed point.
        let g = parse_edge_list("0 1\n1 2\n2 0\n2 3\n3 4\n4 0").unwrap().0;
        let h = planted_partition(2, 2.4, 0.3, 5);
        let opts = BpOptions {
            tol: 1e-12,
            max_sweeps: 5000,
            ..BpOptions::default()
        };
        let state = run_bp(&g, &h, init_messages(&g, 2, InitMode::UniformPerturbed, 2), &opts).unwrap();
        assert!(state.converged);
        for e in 0..g.num_half_edges() {
            let lhs = state.log_z_cavity[e] + state.log_z_edge[g.edge_id(e)];
            let rhs = state.log_z_vertex[g.src(e)];
            assert_relative_eq!(lhs, rhs, epsilon = 1e-8);
        }
    }

    #[test]
    fn field_matches_definition_after_run() {
        let g = parse_edge_list("0 1\n1 2\n2 0\n2 3").unwrap().0;
        let h = planted_partition(2, 2.0, 0.5, 4);
        let state = run_bp(
            &g,
            &h,
            init_messages(&g, 2, InitMode::UniformPerturbed, 11),
            &BpOptions::default(),
        )
        .unwrap();
        let mut expect = vec![0.0; 2];
        field_from_marginals(&g, &h, &state.marginals, &mut expect);
        for s in 0..2 {
            assert_relative_eq!(state.field[s], expect[s], epsilon = 1e-10);
        }
    }

    #[test]
    fn q1_bethe_closed_form() {
        // With omega = 2L/N^2 all Z factor and
        // f = c/2 * (1 - ln c) with c = 2L/N.
        let g = parse_edge_list("0 1\n1 2\n2 3\n3 0\n0 2").unwrap().0;
        let n = g.n() as f64;
        let w = 2.0 * g.m() as f64 / (n * n);
        let h = Hyperparams::standard(1, vec![1.0], vec![w]);
        let state = run_bp(&g, &h, init_messages(&g, 1, InitMode::UniformPerturbed, 0), &BpOptions::default()).unwrap();
        let f = bethe_free_energy(&state, &h, &g);
        let c = g.mean_degree();
        assert_relative_eq!(f, (c / 2.0) * (1.0 - c.ln()), epsilon = 1e-10);
    }

    #[test]
    fn label_permutation_equivariance() {
        let g = parse_edge_list("0 1\n1 2\n2 0\n2 3\n3 4").unwrap().0;
        let q = 3;
        let h = planted_partition(q, 2.0, 0.2, 5);
        // Permute labels (0,1,2) -> (2,0,1) in gamma, omega, and the init.
        let perm = [2usize, 0, 1];
        let mut gamma_p = vec![0.0; q];
        let mut omega_p = vec![0.0; q * q];
        for s in 0..q {
            gamma_p[perm[s]] = h.gamma[s];
            for t in 0..q {
                omega_p[perm[s] * q + perm[t]] = h.omega[s * q + t];
            }
        }
        let hp = Hyperparams::standard(q, gamma_p, omega_p);
        let labels = [0usize, 1, 2, 0, 1];
        let labels_p: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let opts = BpOptions {
            tol: 1e-12,
            max_sweeps: 2000,
            ..BpOptions::default()
        };
        let a = run_bp(&g, &h, init_messages(&g, q, InitMode::FromAssignment(&labels), 1), &opts).unwrap();
        let b = run_bp(&g, &hp, init_messages(&g, q, InitMode::FromAssignment(&labels_p), 1), &opts).unwrap();
        for i in 0..g.n() {
            for s in 0..q {
                assert_relative_eq!(a.marginal(i)[s], b.marginal(i)[perm[s]], epsilon = 1e-9);
            }
        }
        assert_relative_eq!(
            bethe_free_energy(&a, &h, &g),
            bethe_free_energy(&b, &hp, &g),
            epsilon = 1e-9
        );
    }

    #[test]
    fn dc_with_unit_theta_reduces_to_standard() {
        let g = parse_edge_list("0 1\n1 2\n2 0\n2 3\n3 4").unwrap().0;
        let h = planted_partition(2, 2.0, 0.2, 5);
        let mut hdc = h.clone();
        hdc.kind = crate::model::ModelKind::DegreeCorrected;
        hdc.theta = vec![1.0; 5];
        let opts = BpOptions::default();
        let a = run_bp(&g, &h, init_messages(&g, 2, InitMode::UniformPerturbed, 4), &opts).unwrap();
        let b = run_bp(&g, &hdc, init_messages(&g, 2, InitMode::UniformPerturbed, 4), &opts).unwrap();
        for (x, y) in a.messages.iter().zip(&b.messages) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        assert_relative_eq!(
            bethe_free_energy(&a, &h, &g),
            bethe_free_energy(&b, &hdc, &g),
            epsilon = 1e-12
        );
    }

    #[test]
    fn synchronous_schedule_converges_too() {
        let g = parse_edge_list("0 1\n1 2\n2 0\n2 3\n3 4").unwrap().0;
        let h = planted_partition(2, 2.0, 0.2, 5);
        let opts = BpOptions {
            schedule: Schedule::Synchronous,
            damping: 0.5,
            max_sweeps: 2000,
            tol: 1e-10,
            ..BpOptions::default()
        };
        let a = run_bp(&g, &h, init_messages(&g, 2, InitMode::UniformPerturbed, 8), &opts).unwrap();
        assert!(a.converged);
        let b = run_bp(&g, &h, init_messages(&g, 2, InitMode::UniformPerturbed, 8), &BpOptions { tol: 1e-10, ..BpOptions::default() }).unwrap();
        for i in 0..g.n() {
            for s in 0..2 {
                assert_relative_eq!(a.marginal(i)[s], b.marginal(i)[s], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = path3();
        let h = planted_partition(2, 1.5, 0.5, 3);
        let state = run_bp(&g, &h, init_messages(&g, 2, InitMode::UniformPerturbed, 1), &BpOptions::default()).unwrap();
        let json = state.to_json();
        let back = BpState::from_json(&json).unwrap();
        assert_eq!(state.messages, back.messages);
        assert_eq!(state.converged, back.converged);
    }
}
