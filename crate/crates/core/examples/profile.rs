use flowten::scenario::{gen_topology, sample_scenario, SynthParams};
use flowten::solvers::*;
use flowten::tensor::cpd_reconstruct;
use flowten::unrolled::*;
use std::time::Instant;

fn main() {
    let p = SynthParams {
        n_nodes: 8, n_edges: 16, t1: 10, t2: 5, p_obs: 0.9, r_gt: 5,
        s_min: 0.5, s_max: 1.5, a_ano: 0.75, p_ano: 0.02, sigma_noise_sq: 0.04,
    };
    let g = gen_topology(8, 16, 0x70D0).unwrap();
    let scn = sample_scenario(&g, &p, 0).unwrap();
    let obs = scn.observation();
    let rank = 16;
    let n = 200;

    let t0 = Instant::now();
    for s in 0..n { let _ = init_state(&obs, rank, s).unwrap(); }
    println!("init_state: {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    let init = init_state(&obs, rank, 0).unwrap();
    let x = cpd_reconstruct(&init.factors);
    let t0 = Instant::now();
    for _ in 0..n { let _ = embed_w(&obs, &x).unwrap(); }
    println!("embed_w: {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    let t0 = Instant::now();
    for _ in 0..n { let _ = embed_m(&obs, &x, &init.a).unwrap(); }
    println!("embed_m: {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    let reg = RegParams::scalar(1.0, 1.0, 1.0, &obs).unwrap();
    let t0 = Instant::now();
    for _ in 0..n {
        let _ = tbsca_ad(&obs, &reg, 1, init.clone()).unwrap();
    }
    println!("td iteration (incl clone): {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    let t0 = Instant::now();
    for _ in 0..n {
        let _ = tbsca_ad_aug(&obs, &reg, 2, init.clone(), true).unwrap();
    }
    println!("td+aug iteration: {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    let t0 = Instant::now();
    for _ in 0..n {
        let _ = factor_update_td(flowten::tensor::Mode::One, &obs, &init.factors, &init.a, &reg).unwrap();
    }
    println!("factor_td P: {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
    let t0 = Instant::now();
    for _ in 0..n {
        let _ = factor_update_td(flowten::tensor::Mode::Two, &obs, &init.factors, &init.a, &reg).unwrap();
    }
    println!("factor_td Q1: {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
    let t0 = Instant::now();
    for _ in 0..n {
        let _ = factor_update_aug(flowten::tensor::Mode::Two, &x, &init.factors, &reg).unwrap();
    }
    println!("factor_aug Q1: {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
    let t0 = Instant::now();
    for _ in 0..n {
        let _ = anomaly_direction(&obs, &x, &init.a, &reg).unwrap();
    }
    println!("anomaly_direction: {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
    let t0 = Instant::now();
    for _ in 0..n {
        let _ = step_size(&obs, &x, &init.a, &init.a, &reg).unwrap();
    }
    println!("step_size: {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);
}
