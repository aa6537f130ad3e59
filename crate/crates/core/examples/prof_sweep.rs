use std::time::Instant;

use blockcv::em::{self, FitConfig};
use blockcv::model::{planted_partition, ModelKind};
use blockcv::synth;

fn main() {
    let n = 10_000;
    let h = planted_partition(4, 6.0, 0.1, n);
    let planted = synth::sample_sbm(&h, n, 71).unwrap();
    let g = &planted.graph;
    let cfg = FitConfig {
        restarts: 1,
        max_em_iters: 60,
        seed: 5,
        ..FitConfig::default()
    };
    for q in [1usize, 2, 4, 6, 8] {
        let t = Instant::now();
        let fit = em::fit(g, q, ModelKind::Standard, &cfg).unwrap();
        println!(
            "q={q} {:6.1}s em_iters={} bp_sweeps_last={} converged={} init={:?} f={:.6} warnings={:?}",
            t.elapsed().as_secs_f64(),
            fit.em_iters,
            fit.state.sweeps,
            fit.state.converged,
            fit.init_used,
            fit.free_energy,
            fit.warnings,
        );
    }
}
