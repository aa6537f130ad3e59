//! Acceptance gate: one test per criterion, each printing a single
//! `criterion N (...): PASS|FAIL` line before asserting.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use blockcv::assess::{self, Criterion};
use blockcv::bp::{self, BpOptions, InitMode};
use blockcv::em::{self, FitConfig};
use blockcv::graph::Graph;
use blockcv::model::{planted_partition, Hyperparams, ModelKind};
use blockcv::synth::{self, ThetaLaw};

fn report(idx: usize, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("criterion {idx} ({name}): {verdict}{}", if detail.is_empty() {
        String::new()
    } else {
        format!(" — {detail}")
    });
    assert!(ok, "criterion {idx} ({name}) failed: {detail}");
}

/// Sweep configuration used by the two big planted-recovery criteria. One
/// restart per strategy keeps the runtime within the stated budget; the
/// spectral candidate does the heavy lifting on these graphs.
fn sweep_config(seed: u64) -> FitConfig {
    FitConfig {
        restarts: 1,
        max_em_iters: 60,
        seed,
        ..FitConfig::default()
    }
}

fn check_saturation(rows: &[assess::AssessmentRow], l_per_n: f64) -> Result<(), String> {
    let val = |r: &assess::AssessmentRow| [r.f_bethe, r.e_bayes, r.e_gibbs, r.e_training];
    let names = ["f_bethe", "e_bayes", "e_gibbs", "e_training"];
    for w in rows.windows(2).take(3) {
        let (a, b) = (val(&w[0]), val(&w[1]));
        for k in 0..4 {
            if !(b[k] < a[k]) {
                return Err(format!(
                    "{} did not strictly decrease from q={} ({}) to q={} ({})",
                    names[k], w[0].q, a[k], w[1].q, b[k]
                ));
            }
        }
    }
    let base = &rows[3];
    assert_eq!(base.q, 4);
    // The free energy is per vertex while the errors are per edge; its
    // fluctuation scale is the per-edge one multiplied by L/N.
    let ses = [base.se_bayes * l_per_n, base.se_bayes, base.se_gibbs, base.se_training];
    let b = val(base);
    for row in &rows[4..] {
        let v = val(row);
        for k in 0..4 {
            if (v[k] - b[k]).abs() > ses[k] {
                return Err(format!(
                    "{} at q={} ({}) drifted more than one SE ({}) from its q=4 value ({})",
                    names[k], row.q, v[k], ses[k], b[k]
                ));
            }
        }
    }
    Ok(())
}

#[test]
fn criterion_1_planted_q_recovery_sbm() {
    let n = 10_000;
    let h = planted_partition(4, 6.0, 0.1, n);
    let planted = synth::sample_sbm(&h, n, 71).unwrap();
    let g = &planted.graph;
    let cfg = sweep_config(5);
    let sweep = assess::sweep(g, 1..=8, ModelKind::Standard, &cfg).unwrap();
    let l_per_n = g.m() as f64 / g.n() as f64;
    let saturation = check_saturation(&sweep.rows, l_per_n);
    let selected = assess::one_se_select(&sweep.rows, Criterion::Gibbs);
    let ok = saturation.is_ok() && selected == 4;
    report(
        1,
        "planted-q recovery, standard SBM",
        ok,
        &format!(
            "selected q={selected}{}",
            saturation.err().map(|e| format!("; {e}")).unwrap_or_default()
        ),
    );
}

#[test]
fn criterion_2_planted_q_recovery_dcsbm() {
    let n = 10_000;
    let mut h = planted_partition(4, 9.58, 0.1, n);
    h.kind = ModelKind::DegreeCorrected;
    let planted = synth::sample_dcsbm(&h, n, ThetaLaw::PowerLaw { tau: -2.0, d_max: 100 }, 72).unwrap();
    let g = &planted.graph;
    let cfg = sweep_config(6);
    let sweep = assess::sweep(g, 1..=8, ModelKind::DegreeCorrected, &cfg).unwrap();
    let l_per_n = g.m() as f64 / g.n() as f64;
    let saturation = check_saturation(&sweep.rows, l_per_n);
    let selected = assess::one_se_select(&sweep.rows, Criterion::Gibbs);
    let ok = saturation.is_ok() && selected == 4;
    report(
        2,
        "planted-q recovery, degree-corrected SBM",
        ok,
        &format!(
            "selected q={selected}{}",
            saturation.err().map(|e| format!("; {e}")).unwrap_or_default()
        ),
    );
}

#[test]
fn criterion_3_error_ordering_and_kl_identities() {
    let mut checked = 0usize;
    let mut failures = Vec::new();
    let mut seed = 0u64;
    'outer: for &n in &[40usize, 60, 80] {
        for &q in &[2usize, 3, 4] {
            for &eps in &[0.2, 0.4, 0.6] {
                for rep in 0..5u64 {
                    seed += 1;
                    let c = 3.0 + (rep as f64) * 0.5;
                    let h = planted_partition(q, c, eps, n);
                    let planted = synth::sample_sbm(&h, n, seed).unwrap();
                    let g = &planted.graph;
                    if g.m() == 0 {
                        continue;
                    }
                    let init = bp::init_messages(g, q, InitMode::UniformPerturbed, seed);
                    let state = bp::run_bp(g, &h, init, &BpOptions::default()).unwrap();
                    if !state.converged {
                        continue;
                    }
                    let (eb, _) = assess::e_bayes(&state, g);
                    let (eg, _, _) = assess::e_gibbs(&state, &h, g);
                    let (et, _, _) = assess::e_training(&state, &h, g);
                    let (gap_g, gap_t) = assess::kl_gaps(&state, &h, g);
                    if !(et <= eb + 1e-10 && eb <= eg + 1e-10) {
                        failures.push(format!("ordering broke at seed {seed}: {et} {eb} {eg}"));
                    }
                    if (eb - (eg - gap_g)).abs() > 1e-8 || (eb - (et + gap_t)).abs() > 1e-8 {
                        failures.push(format!("KL identity broke at seed {seed}"));
                    }
                    checked += 1;
                    if checked >= 140 && !failures.is_empty() {
                        break 'outer;
                    }
                }
            }
        }
    }
    let ok = checked >= 100 && failures.is_empty();
    report(
        3,
        "error ordering and KL decomposition",
        ok,
        &format!("{checked} converged fits checked{}", failures.first().map(|f| format!("; {f}")).unwrap_or_default()),
    );
}

fn random_tree(n: usize, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for i in 1..n {
        edges.push((rng.gen_range(0..i), i));
    }
    Graph::from_edges(n, &edges).unwrap().0
}

fn random_hyperparams(q: usize, rng: &mut ChaCha8Rng) -> Hyperparams {
    let mut gamma: Vec<f64> = (0..q).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = gamma.iter().sum();
    gamma.iter_mut().for_each(|g| *g /= total);
    let mut omega = vec![0.0; q * q];
    for s in 0..q {
        for t in s..q {
            let w = rng.gen_range(0.05..0.6);
            omega[s * q + t] = w;
            omega[t * q + s] = w;
        }
    }
    Hyperparams::standard(q, gamma, omega)
}

#[test]
fn criterion_4_tree_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_marginal = 0.0f64;
    let mut worst_partition = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(2..=12);
        let q = rng.gen_range(1..=3);
        let g = random_tree(n, &mut rng);
        let h = random_hyperparams(q, &mut rng);
        let opts = BpOptions {
            tol: 1e-13,
            max_sweeps: 5000,
            ..BpOptions::default()
        };
        let seed = rng.gen();
        let state = bp::run_bp(&g, &h, bp::init_messages(&g, q, InitMode::UniformPerturbed, seed), &opts).unwrap();
        assert!(state.converged, "BP failed to converge on a tree");
        // The oracle enumerates the same field-conditioned model BP solves,
        // with the converged field as the non-edge surrogate.
        let post = synth::exact_posterior(&g, &h, Some(&state.field));
        for i in 0..n {
            for s in 0..q {
                worst_marginal = worst_marginal.max((state.marginal(i)[s] - post.marginals[i * q + s]).abs());
            }
        }
        worst_partition = worst_partition.max((bp::bethe_log_partition(&state) - post.log_partition).abs());
    }
    let ok = worst_marginal <= 1e-8 && worst_partition <= 1e-8;
    report(
        4,
        "tree exactness vs enumeration",
        ok,
        &format!("max marginal dev {worst_marginal:.2e}, max log-partition dev {worst_partition:.2e}"),
    );
}

#[test]
fn criterion_5_loocv_cavity_equivalence() {
    let mut cfg = FitConfig {
        tol: 1e-12,
        max_sweeps: 5000,
        ..FitConfig::default()
    };
    let opts = BpOptions {
        tol: 1e-12,
        max_sweeps: 5000,
        ..BpOptions::default()
    };
    // 20 sparse loopy graphs at N = 50, c about 4.
    let mut worst_loopy = 0.0f64;
    for seed in 0..20u64 {
        let q = 2 + (seed % 2) as usize;
        let h = planted_partition(q, 4.0, 0.5, 50);
        let planted = synth::sample_sbm(&h, 50, 100 + seed).unwrap();
        let g = &planted.graph;
        cfg.seed = seed;
        let state = bp::run_bp(g, &h, bp::init_messages(g, q, InitMode::UniformPerturbed, seed), &opts).unwrap();
        assert!(state.converged);
        for id in 0..g.m() {
            let (i, j) = g.edge_endpoints(id);
            let p = synth::brute_force_loocv(g, &h, (i, j), &cfg, Some(&state)).unwrap();
            worst_loopy = worst_loopy.max((-state.log_z_edge[id] - -p.ln()).abs());
        }
    }
    // Trees: exact equivalence.
    let mut worst_tree = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for seed in 0..5u64 {
        let g = random_tree(30, &mut rng);
        let q = 2;
        let h = planted_partition(q, 2.0, 0.3, 30);
        cfg.seed = 1000 + seed;
        let state = bp::run_bp(&g, &h, bp::init_messages(&g, q, InitMode::UniformPerturbed, seed), &opts).unwrap();
        for id in 0..g.m() {
            let (i, j) = g.edge_endpoints(id);
            let p = synth::brute_force_loocv(&g, &h, (i, j), &cfg, Some(&state)).unwrap();
            worst_tree = worst_tree.max((-state.log_z_edge[id] - -p.ln()).abs());
        }
    }
    let ok = worst_loopy <= 1e-3 && worst_tree <= 1e-8;
    report(
        5,
        "LOOCV equals cavity prediction",
        ok,
        &format!("max dev loopy {worst_loopy:.2e}, trees {worst_tree:.2e}"),
    );
}

#[test]
fn criterion_6_q1_closed_forms() {
    let h = planted_partition(2, 5.0, 0.3, 300);
    let planted = synth::sample_sbm(&h, 300, 42).unwrap();
    let g = &planted.graph;
    let n = g.n() as f64;
    let w = 2.0 * g.m() as f64 / (n * n);
    let h1 = Hyperparams::standard(1, vec![1.0], vec![w]);
    let state = bp::run_bp(g, &h1, bp::init_messages(g, 1, InitMode::UniformPerturbed, 0), &BpOptions::default()).unwrap();
    let expect = -w.ln();
    let (eb, _) = assess::e_bayes(&state, g);
    let (eg, _, _) = assess::e_gibbs(&state, &h1, g);
    let (em_, _, _) = assess::e_map(&state, &h1, g);
    let (et, _, _) = assess::e_training(&state, &h1, g);
    let (gap_g, gap_t) = assess::kl_gaps(&state, &h1, g);
    let worst = [eb, eg, em_, et]
        .iter()
        .map(|v| (v - expect).abs())
        .fold(0.0, f64::max);
    let ok = worst <= 1e-12 && gap_g == 0.0 && gap_t == 0.0;
    report(
        6,
        "q=1 closed forms",
        ok,
        &format!("max error dev {worst:.2e}, gaps ({gap_g}, {gap_t})"),
    );
}

#[test]
fn criterion_7_unit_theta_reduction() {
    let h = planted_partition(3, 5.0, 0.2, 400);
    let planted = synth::sample_sbm(&h, 400, 17).unwrap();
    let g = &planted.graph;
    let mut hdc = h.clone();
    hdc.kind = ModelKind::DegreeCorrected;
    hdc.theta = vec![1.0; g.n()];
    let opts = BpOptions::default();
    let a = bp::run_bp(g, &h, bp::init_messages(g, 3, InitMode::UniformPerturbed, 9), &opts).unwrap();
    let b = bp::run_bp(g, &hdc, bp::init_messages(g, 3, InitMode::UniformPerturbed, 9), &opts).unwrap();
    let row = |state: &bp::BpState, hh: &Hyperparams| -> Vec<f64> {
        let (eb, tb) = assess::e_bayes(state, g);
        let (eg, tg, _) = assess::e_gibbs(state, hh, g);
        let (em_, tm, _) = assess::e_map(state, hh, g);
        let (et, tt, _) = assess::e_training(state, hh, g);
        let (gg, gt) = assess::kl_gaps(state, hh, g);
        vec![
            bp::bethe_free_energy(state, hh, g),
            eb,
            assess::standard_error(&tb),
            eg,
            assess::standard_error(&tg),
            em_,
            assess::standard_error(&tm),
            et,
            assess::standard_error(&tt),
            gg,
            gt,
        ]
    };
    let ra = row(&a, &h);
    let rb = row(&b, &hdc);
    // The M-step shared by both pipelines must agree as well.
    let ga = em::update_gamma(&a);
    let gb = em::update_gamma(&b);
    let (oa, _) = em::update_omega(&a, &h, g);
    let (ob, _) = em::update_omega(&b, &hdc, g);
    let mut worst = 0.0f64;
    for (x, y) in ra.iter().zip(&rb).chain(ga.iter().zip(&gb)).chain(oa.iter().zip(&ob)) {
        worst = worst.max((x - y).abs());
    }
    let ok = worst <= 1e-10;
    report(7, "theta=1 reduction to standard model", ok, &format!("max dev {worst:.2e}"));
}

#[test]
fn criterion_8_m_step_conservation() {
    let h = planted_partition(3, 5.0, 0.2, 500);
    let planted = synth::sample_sbm(&h, 500, 29).unwrap();
    let g = &planted.graph;
    let two_l = 2.0 * g.m() as f64;
    let n = g.n() as f64;
    let mut worst_gamma = 0.0f64;
    let mut worst_mass = 0.0f64;
    let mut worst_theta = 0.0f64;
    for kind in [ModelKind::Standard, ModelKind::DegreeCorrected] {
        let mut hh = h.clone();
        hh.kind = kind;
        hh.ensure_theta(g.n());
        let mut state = bp::init_messages(g, 3, InitMode::UniformPerturbed, 3);
        for _ in 0..8 {
            state = bp::run_bp(g, &hh, state, &BpOptions::default()).unwrap();
            hh.gamma = em::update_gamma(&state);
            worst_gamma = worst_gamma.max((hh.gamma.iter().sum::<f64>() - 1.0).abs());
            let (omega, _) = em::update_omega(&state, &hh, g);
            hh.omega = omega;
            let mut mass = 0.0;
            for s in 0..3 {
                for t in 0..3 {
                    mass += n * n * hh.gamma[s] * hh.omega[s * 3 + t] * hh.gamma[t];
                }
            }
            worst_mass = worst_mass.max((mass - two_l).abs() / two_l);
            if kind == ModelKind::DegreeCorrected {
                let labels = state.hard_labels();
                let (theta, empty) = em::update_theta(g, &labels, 3, &hh.theta);
                hh.theta = theta;
                let mut sums = vec![0.0f64; 3];
                let mut counts = vec![0.0f64; 3];
                for (i, &l) in labels.iter().enumerate() {
                    sums[l] += hh.theta[i];
                    counts[l] += 1.0;
                }
                for s in 0..3 {
                    if counts[s] > 0.0 && !empty.contains(&s) {
                        worst_theta = worst_theta.max((sums[s] - counts[s]).abs() / counts[s]);
                    }
                }
            }
        }
    }
    let ok = worst_gamma <= 1e-10 && worst_mass <= 1e-10 && worst_theta <= 1e-12;
    report(
        8,
        "M-step conservation laws",
        ok,
        &format!("|sum gamma - 1| {worst_gamma:.2e}, edge-mass rel {worst_mass:.2e}, theta rel {worst_theta:.2e}"),
    );
}

#[test]
fn criterion_9_information_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let size = rng.gen_range(2..=12);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let mut v: Vec<f64> = (0..size).map(|_| rng.gen::<f64>() + 1e-6).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        };
        let p = draw(&mut rng);
        let q = draw(&mut rng);
        // Random partition: shuffle indices, cut at random points.
        let mut idx: Vec<usize> = (0..size).collect();
        for i in (1..size).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        let parts = rng.gen_range(1..=size);
        let mut partition: Vec<Vec<usize>> = vec![Vec::new(); parts];
        for (pos, &i) in idx.iter().enumerate() {
            partition[pos % parts].push(i);
        }
        let (fine, coarse) = assess::kl_refinement_check(&p, &q, &partition);
        worst = worst.max(coarse - fine);
    }
    let ok = worst <= 1e-12;
    report(9, "information monotonicity of KL", ok, &format!("max coarse-fine excess {worst:.2e}"));
}

#[test]
fn criterion_10_one_se_rule_political_books_shape() {
    let mk = |q: usize, e: f64, se: f64| assess::AssessmentRow {
        q,
        f_bethe: e,
        e_bayes: e,
        se_bayes: se,
        e_gibbs: e,
        se_gibbs: se,
        e_map: e,
        se_map: se,
        e_training: e,
        se_training: se,
        kl_gap_gibbs: 0.0,
        kl_gap_training: 0.0,
        converged: true,
        init_used: "spectral".into(),
    };
    // Shaped like the political-books curve: the minimum sits at q=7 but
    // q=5 is already within one standard error of it.
    let rows: Vec<_> = [
        (1, 5.30, 0.010),
        (2, 5.10, 0.010),
        (3, 5.00, 0.012),
        (4, 4.93, 0.012),
        (5, 4.905, 0.013),
        (6, 4.902, 0.013),
        (7, 4.900, 0.013),
        (8, 4.910, 0.014),
    ]
    .iter()
    .map(|&(q, e, se)| mk(q, e, se))
    .collect();
    let selected = assess::one_se_select(&rows, Criterion::Gibbs);
    let ok = selected == 5;
    report(10, "one-standard-error rule", ok, &format!("selected q={selected}"));
}
