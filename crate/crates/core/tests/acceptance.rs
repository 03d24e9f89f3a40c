//! End-to-end acceptance checks, run as a plain binary so every verdict is printed:
//! one `criterion N ... PASS|FAIL` line each, non-zero exit if any fails.

mod common;

use std::time::{Duration, Instant};

use common::{domain, max_fd_err, numeric};
use lft::checkpoint::{read_checkpoint, write_checkpoint, model_from_checkpoint};
use lft::config::config_to_text;
use lft::encoder::{encode, Mode};
use lft::ft::{ft_param_count, init_ft_params, sample_modulation, FtParams};
use lft::harness::evaluate;
use lft::heads::HeadKind;
use lft::model::ModelState;
use lft::task::{generate_synthetic_domain, sample_episode, ClassPool, Domain, SyntheticDomainSpec};
use lft::train::{inner_update, lft_train_step, pseudo_unseen_loss, train_loop, OptimizerKind, TrainConfig, TrainMode};
use lft::{Graph, ParamStore, RngStream, Tensor};

const SOFTPLUS_0_3: f64 = 0.854355244468527112;
const SOFTPLUS_0_5: f64 = 0.974076984180106681;

fn report(n: u32, name: &str, pass: bool, elapsed: Duration, detail: String) -> bool {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n} {name}: {verdict} [{:.2}s] {detail}", elapsed.as_secs_f64());
    pass
}

fn criterion_1_search_space_size() -> bool {
    let t = Instant::now();
    let count = ft_param_count(&[64, 128, 256, 512]);
    let el = t.elapsed();
    report(1, "search space size", count == 1920 && el < Duration::from_millis(1), el, format!("count {count}"))
}

fn with_jittered_ft(model: ModelState, rng: &mut RngStream) -> ModelState {
    let ft = model.ft.clone().unwrap();
    let layers = ft
        .layers
        .into_iter()
        .map(|mut l| {
            for t in [&mut l.theta_gamma, &mut l.theta_beta] {
                let v = t.data().iter().map(|x| x + rng.uniform_range(-0.5, 0.5)).collect();
                *t = Tensor::new(t.shape(), v).unwrap();
            }
            l
        })
        .collect();
    model.with_ft(Some(FtParams { layers }))
}

fn criterion_2_first_order_gradients() -> bool {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let d = domain(seed, 1, 8, 10, 1.0);
        for head in [HeadKind::Proto, HeadKind::Matching, HeadKind::Relation] {
            let cfg = TrainConfig {
                mode: TrainMode::Ft,
                head,
                master_seed: seed,
                encoder_widths: vec![12, 8],
                ..Default::default()
            };
            let model = with_jittered_ft(cfg.init_model(16).unwrap(), &mut RngStream::new(seed + 50));
            let ep = sample_episode(&d, ClassPool::All, 3, 2, 3, &mut RngStream::new(seed)).unwrap();
            let enc_cfg = model.encoder_config().clone();
            let pinned = RngStream::new(seed + 9);
            let loss = |g: &Graph, p: &ParamStore| {
                let m = ModelState::from_store(&enc_cfg, head, p)?;
                m.episode_loss(g, &ep, Mode::Train, true, &mut pinned.clone())
            };
            let params = model.to_store();
            let a = common::analytic(&params, loss);
            let n = numeric(&params, 1e-5, loss);
            worst = worst.max(max_fd_err(&a, &n));
        }
    }
    let el = t.elapsed();
    report(2, "first-order gradients", worst < 1e-5 && el < Duration::from_secs(30), el, format!("max rel err {worst:.3e}"))
}

fn criterion_3_meta_gradient() -> bool {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let cfg = TrainConfig {
            alpha: 0.1,
            mode: TrainMode::Lft,
            n_way: 2,
            n_shot: 2,
            n_query: 4,
            master_seed: seed,
            encoder_widths: vec![16, 8],
            ..Default::default()
        };
        let model = with_jittered_ft(cfg.init_model(16).unwrap(), &mut RngStream::new(seed + 70));
        let mut erng = RngStream::new(seed + 3);
        let ps = sample_episode(&domain(seed, 1, 6, 10, 1.0), ClassPool::All, 2, 2, 4, &mut erng).unwrap();
        let pu = sample_episode(&domain(seed, 2, 6, 10, 1.0), ClassPool::All, 2, 2, 4, &mut erng).unwrap();
        let pinned = RngStream::new(seed + 11);
        let step = lft_train_step(&model, &ps, &pu, &cfg, &mut pinned.clone()).unwrap();

        let mut theta = ParamStore::new();
        model.ft.as_ref().unwrap().register(&mut theta).unwrap();
        let mut grad = ParamStore::new();
        step.meta_grad.register(&mut grad).unwrap();
        let objective = |p: &ParamStore| -> lft::Result<f64> {
            let m = model.with_ft(FtParams::from_store(p)?);
            let g = Graph::new();
            let upd = inner_update(&g, &m.attach(&g), &ps, true, cfg.alpha, false, &mut pinned.clone())?;
            let reg: f64 = p.iter().flat_map(|(_, t)| t.data().iter().map(|v| v * v)).sum();
            Ok(pseudo_unseen_loss(&g, &upd.model, &pu)?.item() + cfg.ft_reg_weight * reg)
        };
        let fd = lft::finite_difference_grad(objective, &theta, 1e-4).unwrap();
        worst = worst.max(max_fd_err(&grad, &fd));
    }
    let el = t.elapsed();
    report(3, "meta-gradient", worst < 1e-4 && el < Duration::from_secs(60), el, format!("max rel err {worst:.3e}"))
}

fn criterion_4_ft_distribution() -> bool {
    const M: usize = 200_000;
    let t = Instant::now();
    let g = Graph::new();
    let m = sample_modulation(&g, &Tensor::full(&[M], 0.3), &Tensor::full(&[M], 0.5), &mut RngStream::new(4)).unwrap();
    let stats = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    };
    let (gm, gs) = stats(m.gamma.data());
    let (bm, bs) = stats(m.beta.data());
    let root = (M as f64).sqrt();
    let pass = (gs / SOFTPLUS_0_3 - 1.0).abs() < 0.01
        && (bs / SOFTPLUS_0_5 - 1.0).abs() < 0.01
        && (gm - 1.0).abs() < 4.0 * SOFTPLUS_0_3 / root
        && bm.abs() < 4.0 * SOFTPLUS_0_5 / root;
    let el = t.elapsed();
    report(
        4,
        "ft distribution",
        pass && el < Duration::from_secs(5),
        el,
        format!("gamma mean {gm:.5} std {gs:.5}, beta mean {bm:.5} std {bs:.5}"),
    )
}

fn criterion_5_chance_level() -> bool {
    let t = Instant::now();
    // relation head: the only head whose similarity function is itself untrained
    let cfg = TrainConfig {
        mode: TrainMode::Baseline,
        head: HeadKind::Relation,
        master_seed: 5,
        ..Default::default()
    };
    let model = cfg.init_model(16).unwrap();
    let d = domain(5, 1, 20, 50, 1.0);
    let acc = evaluate(&model, &d, 5, 5, 1000, 5).unwrap().mean;
    let mut rng = RngStream::new(6);
    let g = Graph::new();
    let loss = (0..100)
        .map(|_| {
            let ep = sample_episode(&d, ClassPool::All, 5, 5, 16, &mut rng).unwrap();
            pseudo_unseen_loss(&g, &model, &ep).unwrap().item()
        })
        .sum::<f64>()
        / 100.0;
    let pass = (0.15..=0.25).contains(&acc) && (loss - 5f64.ln()).abs() < 0.3;
    let el = t.elapsed();
    report(5, "chance level", pass && el < Duration::from_secs(60), el, format!("accuracy {acc:.4}, loss {loss:.4}"))
}

const WARPS: [f64; 5] = [0.6, 0.9, 1.2, 1.5, 1.8];

fn warped_domains(master: u64) -> Vec<Domain> {
    WARPS
        .iter()
        .enumerate()
        .map(|(i, &warp)| {
            generate_synthetic_domain(&SyntheticDomainSpec {
                name: format!("w{i}"),
                master_seed: master,
                domain_seed: 100 + i as u64,
                warp,
                ..Default::default()
            })
            .unwrap()
        })
        .collect()
}

fn protocol_cfg(mode: TrainMode, seed: u64, iterations: usize) -> TrainConfig {
    TrainConfig {
        mode,
        iterations,
        alpha: 0.001,
        optimizer: OptimizerKind::Adam,
        master_seed: seed,
        ..Default::default()
    }
}

fn criterion_6_cross_domain_ordering() -> bool {
    let t = Instant::now();
    let modes = [TrainMode::Baseline, TrainMode::Ft, TrainMode::Lft];
    let mut means = [0.0; 3];
    let mut slowest = Duration::ZERO;
    for seed in 0..5u64 {
        let domains = warped_domains(seed);
        let held = seed as usize % domains.len();
        let seen: Vec<Domain> = domains.iter().enumerate().filter(|&(i, _)| i != held).map(|(_, d)| d.clone()).collect();
        let mut row = Vec::new();
        for (k, mode) in modes.into_iter().enumerate() {
            let start = Instant::now();
            let cfg = protocol_cfg(mode, seed, 2000);
            let out = train_loop(&cfg, &seen, cfg.init_model(16).unwrap(), None).unwrap();
            let acc = evaluate(&out.model, &domains[held], 5, 5, 1000, 500 + seed).unwrap().mean;
            slowest = slowest.max(start.elapsed());
            means[k] += acc / 5.0;
            row.push(format!("{mode} {acc:.4}"));
        }
        println!("  seed {seed} held-out w{held}: {}", row.join(", "));
    }
    let [base, ft, lft] = means;
    let pass = lft >= ft && ft >= base && lft - base >= 0.02 && slowest < Duration::from_secs(15 * 60);
    report(
        6,
        "cross-domain ordering",
        pass,
        t.elapsed(),
        format!("baseline {base:.4}, ft {ft:.4}, lft {lft:.4}, lft-baseline {:+.2} points", 100.0 * (lft - base)),
    )
}

fn criterion_7_determinism_and_persistence() -> bool {
    let t = Instant::now();
    let seen = vec![domain(7, 1, 20, 50, 1.0), domain(7, 2, 20, 50, 1.0)];
    let cfg = TrainConfig {
        mode: TrainMode::Lft,
        iterations: 100,
        alpha: 0.05,
        master_seed: 7,
        encoder_widths: vec![32, 32],
        ..Default::default()
    };
    let text = config_to_text(&cfg);
    let bytes = |m: &ModelState| {
        let mut b = Vec::new();
        write_checkpoint(&m.to_store(), &text, &mut b).unwrap();
        b
    };
    let a = train_loop(&cfg, &seen, cfg.init_model(16).unwrap(), None).unwrap().model;
    let b = train_loop(&cfg, &seen, cfg.init_model(16).unwrap(), None).unwrap().model;
    let (ba, bb) = (bytes(&a), bytes(&b));
    let identical_runs = ba == bb;
    let (store, cfg_text) = read_checkpoint(&ba[..]).unwrap();
    let reloaded = model_from_checkpoint(&store, &cfg_text).unwrap();
    let round_trip = reloaded.to_store().bit_eq(&a.to_store()) && cfg_text == text;
    let target = domain(7, 3, 20, 50, 1.0);
    let same_eval = evaluate(&a, &target, 5, 5, 200, 1).unwrap() == evaluate(&reloaded, &target, 5, 5, 200, 1).unwrap();
    let el = t.elapsed();
    report(
        7,
        "determinism and persistence",
        identical_runs && round_trip && same_eval && el < Duration::from_secs(60),
        el,
        format!("identical runs {identical_runs}, round trip {round_trip}, reload eval {same_eval}"),
    )
}

fn criterion_8_eval_ignores_ft() -> bool {
    let t = Instant::now();
    let cfg = TrainConfig {
        mode: TrainMode::Lft,
        iterations: 20,
        alpha: 0.05,
        master_seed: 8,
        encoder_widths: vec![32, 32],
        ..Default::default()
    };
    let seen = vec![domain(8, 1, 20, 50, 1.0), domain(8, 2, 20, 50, 1.0)];
    let model = train_loop(&cfg, &seen, cfg.init_model(16).unwrap(), None).unwrap().model;
    let target = domain(8, 3, 20, 50, 1.0);
    let base = evaluate(&model, &target, 5, 5, 200, 3).unwrap();
    let mut ok = true;
    for (i, (tg, tb)) in [(5.0, 5.0), (-20.0, 3.0), (0.0, -7.0)].into_iter().enumerate() {
        let mut perturbed = with_jittered_ft(model.with_ft(Some(init_ft_params(&[32, 32], tg, tb).unwrap())), &mut RngStream::new(i as u64));
        ok &= evaluate(&perturbed, &target, 5, 5, 200, 3).unwrap() == base;
        perturbed.ft = None;
        ok &= evaluate(&perturbed, &target, 5, 5, 200, 3).unwrap() == base;
    }
    let g = Graph::new();
    let batch = Tensor::new(&[10, 16], (0..10).flat_map(|i| target.sample(0, i).to_vec()).collect()).unwrap();
    let e1 = encode(&g, &model.encoder, model.ft.as_ref(), &batch, Mode::Eval, &mut RngStream::new(1)).unwrap();
    let e2 = encode(&g, &model.encoder, None, &batch, Mode::Eval, &mut RngStream::new(999)).unwrap();
    ok &= e1.bit_eq(&e2);
    let el = t.elapsed();
    report(8, "eval ignores ft", ok && el < Duration::from_secs(10), el, format!("all outputs identical {ok}"))
}

fn criterion_9_variable_ways() -> bool {
    let t = Instant::now();
    let ways = [2usize, 5, 10];
    let mut means = [0.0; 3];
    for seed in 0..3u64 {
        let domains = warped_domains(seed);
        let held = seed as usize % domains.len();
        let seen: Vec<Domain> = domains.iter().enumerate().filter(|&(i, _)| i != held).map(|(_, d)| d.clone()).collect();
        let cfg = protocol_cfg(TrainMode::Lft, seed, 500);
        let model = train_loop(&cfg, &seen, cfg.init_model(16).unwrap(), None).unwrap().model;
        for (k, &w) in ways.iter().enumerate() {
            means[k] += evaluate(&model, &domains[held], w, 5, 1000, 900 + seed).unwrap().mean / 3.0;
        }
    }
    let pass = means[0] > means[1] && means[1] > means[2];
    let el = t.elapsed();
    report(
        9,
        "variable test ways",
        pass && el < Duration::from_secs(300),
        el,
        format!("2-way {:.4}, 5-way {:.4}, 10-way {:.4}", means[0], means[1], means[2]),
    )
}

fn main() {
    let criteria: [fn() -> bool; 9] = [
        criterion_1_search_space_size,
        criterion_2_first_order_gradients,
        criterion_3_meta_gradient,
        criterion_4_ft_distribution,
        criterion_5_chance_level,
        criterion_6_cross_domain_ordering,
        criterion_7_determinism_and_persistence,
        criterion_8_eval_ignores_ft,
        criterion_9_variable_ways,
    ];
    let failed = criteria
        .iter()
        .enumerate()
        .filter(|(i, run)| {
            let ok = std::panic::catch_unwind(|| run()).unwrap_or(false);
            if !ok {
                eprintln!("criterion {} did not pass", i + 1);
            }
            !ok
        })
        .count();
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
