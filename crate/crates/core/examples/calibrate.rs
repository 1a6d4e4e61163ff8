use flowten::metrics::{auc, normalize_scores, LabeledScores};
use flowten::scenario::{gen_topology, sample_scenario, SynthParams};
use flowten::training::*;
use flowten::unrolled::*;
use std::time::Instant;

fn desk_params() -> SynthParams {
    SynthParams {
        n_nodes: 8, n_edges: 16, t1: 10, t2: 5, p_obs: 0.9, r_gt: 5,
        s_min: 0.5, s_max: 1.5, a_ano: 0.75, p_ano: 0.02, sigma_noise_sq: 0.04,
    }
}

fn main() {
    let p = desk_params();
    let scenarios: Vec<_> = (0..50u64)
        .map(|i| {
            let g = gen_topology(p.n_nodes, p.n_edges, i ^ 0x70D0).unwrap();
            sample_scenario(&g, &p, i).unwrap()
        })
        .collect();
    println!("flows per scenario: {}", scenarios[0].graph.n_flows());
    println!("mean anomalies: {:.1}", scenarios.iter().map(|s| s.anomaly_count()).sum::<usize>() as f64 / 50.0);

    for rank in [16usize, 50] {
        let mut m = ModelParams::new(4, true, false).unwrap();
        m.rank = Some(rank);
        let obs = scenarios[0].observation();
        let t0 = Instant::now();
        let n = 20;
        for s in 0..n {
            let _ = forward(&obs, &m, s as u64).unwrap();
        }
        println!("rank {rank}: forward {:.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
    }

    // Untrained AUC (zero-map adaptive model, rank 16).
    let mut m = ModelParams::new(4, true, false).unwrap();
    m.rank = Some(16);
    let val = &scenarios[40..];
    let auc_of = |params: &ModelParams, set: &[flowten::scenario::Scenario]| -> f64 {
        let mut total = 0.0;
        for (i, s) in set.iter().enumerate() {
            let st = forward(&s.observation(), params, item_seed(0xEA11 ^ 1, i)).unwrap();
            let sc = normalize_scores(&st.a);
            total += auc(&LabeledScores::from_tensor(&sc, &s.truth_mask()).unwrap()).unwrap();
        }
        total / set.len() as f64
    };
    let t0 = Instant::now();
    let untrained = auc_of(&m, val);
    println!("untrained val AUC: {untrained:.4}  ({:.2} s)", t0.elapsed().as_secs_f64());

    // Short training probe: 60 steps, batch 5, K_sub 8.
    let mut cfg = TrainConfig::scaled(60, 5, 8, 1);
    cfg.beta = BetaSchedule { beta0: 10.0, i0: 12, beta1: 100.0, i1: 36 };
    cfg.eval_every = 20;
    let t0 = Instant::now();
    let out = train(&scenarios[..40], Some(val), &m, &cfg).unwrap();
    println!("60-step train: {:.1} s", t0.elapsed().as_secs_f64());
    for row in out.history.iter().filter(|r| r.val_auc.is_some()) {
        println!("  step {} loss {:.4} val {:.4}", row.step, row.loss, row.val_auc.unwrap());
    }
}
