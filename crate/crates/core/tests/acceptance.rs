//! Acceptance gates. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. `ACCEPTANCE_ONLY=1,4` runs a subset.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use mav_transfer::dan::{self, BankMemory, DanConfig};
use mav_transfer::harness::{self, ExperimentConfig, PolicyKind, Report};
use mav_transfer::kernel_mmd::{self as mmd, KernelBank, SampleSet};
use mav_transfer::net::{self, LayerSpec, Network, Role};
use mav_transfer::rng;
use mav_transfer::sim::{self, DomainConfig, DroneState, ExpertConfig, WorldParams};
use mav_transfer::toy::{toy_architecture, toy_config, SignFlipProblem};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---- independent oracles ----

fn k(bank: &KernelBank, x: &[f64], y: &[f64]) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    bank.bandwidths()
        .iter()
        .zip(bank.weights())
        .map(|(s, w)| w * (-d2 / (2.0 * s * s)).exp())
        .sum()
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn brute_biased(s: &[Vec<f64>], t: &[Vec<f64>], bank: &KernelBank) -> f64 {
    let (m, n) = (s.len() as f64, t.len() as f64);
    let mut ss = 0.0;
    for a in s {
        for b in s {
            ss += k(bank, a, b);
        }
    }
    let mut tt = 0.0;
    for a in t {
        for b in t {
            tt += k(bank, a, b);
        }
    }
    let mut st = 0.0;
    for a in s {
        for b in t {
            st += k(bank, a, b);
        }
    }
    ss / (m * m) + tt / (n * n) - 2.0 * st / (m * n)
}

fn brute_unbiased(s: &[Vec<f64>], t: &[Vec<f64>], bank: &KernelBank) -> f64 {
    let (m, n) = (s.len(), t.len());
    let mut ss = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                ss += k(bank, &s[i], &s[j]);
            }
        }
    }
    let mut tt = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                tt += k(bank, &t[i], &t[j]);
            }
        }
    }
    let mut st = 0.0;
    for a in s {
        for b in t {
            st += k(bank, a, b);
        }
    }
    let (m, n) = (m as f64, n as f64);
    ss / (m * (m - 1.0)) + tt / (n * (n - 1.0)) - 2.0 * st / (m * n)
}

fn brute_linear(s: &[Vec<f64>], t: &[Vec<f64>], bank: &KernelBank) -> f64 {
    let half = s.len().min(t.len()) / 2;
    let mut h = 0.0;
    for i in 0..half {
        let (x, xp, y, yp) = (&s[2 * i], &s[2 * i + 1], &t[2 * i], &t[2 * i + 1]);
        h += k(bank, x, xp) + k(bank, y, yp) - k(bank, x, yp) - k(bank, xp, y);
    }
    h / half as f64
}

fn gaussian(r: &mut impl Rng, n: usize, d: usize, shift: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || {
        let z: f64 = StandardNormal.sample(r);
        z + shift
    })
}

fn random_bank(r: &mut impl Rng) -> KernelBank {
    let m = r.random_range(1..=5);
    let mut bw: Vec<f64> = (0..m).map(|_| r.random_range(0.3..3.0)).collect();
    bw.sort_by(f64::total_cmp);
    let raw: Vec<f64> = (0..m).map(|_| r.random_range(0.1..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    KernelBank::new(bw, raw.iter().map(|w| w / sum).collect()).unwrap()
}

fn criterion_1() -> Outcome {
    let mut r = rng::seeded(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = r.random_range(1..=5);
        let (ns, nt) = (r.random_range(2..=20), r.random_range(2..=20));
        let s = gaussian(&mut r, ns, d, 0.0);
        let shift = r.random_range(-1.0..1.0);
        let t = gaussian(&mut r, nt, d, shift);
        let bank = random_bank(&mut r);
        let (xs, xt) = (SampleSet::new(s.clone()).unwrap(), SampleSet::new(t.clone()).unwrap());
        let (rs, rt) = (rows(&s), rows(&t));
        worst = worst
            .max((mmd::mmd2_biased(&xs, &xt, &bank).unwrap() - brute_biased(&rs, &rt, &bank).max(0.0)).abs())
            .max((mmd::mmd2_unbiased(&xs, &xt, &bank).unwrap() - brute_unbiased(&rs, &rt, &bank)).abs())
            .max((mmd::mmd2_linear(&xs, &xt, &bank).unwrap() - brute_linear(&rs, &rt, &bank)).abs());
    }
    let mut self_zero = true;
    for _ in 0..20 {
        let x = SampleSet::new(gaussian(&mut r, 15, 4, 0.0)).unwrap();
        self_zero &= mmd::mmd2_biased(&x, &x, &random_bank(&mut r)).unwrap() == 0.0;
    }
    outcome(worst <= 1e-12 && self_zero, format!("max |err| {worst:.2e}; biased(X,X) == 0: {self_zero}"))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn criterion_2() -> Outcome {
    let mut r = rng::seeded(2);
    let h = 1e-5;
    let mut worst_mmd: f64 = 0.0;
    for _ in 0..20 {
        let d = r.random_range(1..=4);
        let (ns, nt) = (r.random_range(3..=8), r.random_range(3..=8));
        let s = gaussian(&mut r, ns, d, 0.0);
        let t = gaussian(&mut r, nt, d, 0.5);
        let bank = random_bank(&mut r);
        let g = mmd::mmd2_biased_grad(&SampleSet::new(s.clone()).unwrap(), &SampleSet::new(t.clone()).unwrap(), &bank).unwrap();
        let f = |s: &Array2<f64>, t: &Array2<f64>| brute_biased(&rows(s), &rows(t), &bank);
        for (side, analytic) in [(0, &g.source), (1, &g.target)] {
            let base = if side == 0 { &s } else { &t };
            for idx in ndarray::indices(base.dim()) {
                let (mut p, mut m) = (base.clone(), base.clone());
                p[idx] += h;
                m[idx] -= h;
                let num = if side == 0 { (f(&p, &t) - f(&m, &t)) / (2.0 * h) } else { (f(&s, &p) - f(&s, &m)) / (2.0 * h) };
                worst_mmd = worst_mmd.max(rel_err(analytic[idx], num));
            }
        }
    }

    let mut worst_net: f64 = 0.0;
    for inst in 0..20u64 {
        let len = 12;
        let l1 = net::LayerKind::conv_out_len(len, 3, 2);
        let specs = vec![
            LayerSpec::conv1d(1, 3, 3, 2, len, Role::Finetune),
            LayerSpec::relu(),
            LayerSpec::dense(3 * l1, 6, Role::Adapt),
            LayerSpec::relu(),
            LayerSpec::dense(6, 4, Role::Adapt),
            LayerSpec::softmax(),
        ];
        let model = net::init_network(&specs, 100 + inst).unwrap();
        let x = gaussian(&mut r, 5, len, 0.0);
        let y: Vec<usize> = (0..5).map(|_| r.random_range(0..4)).collect();
        let loss = |n: &Network| net::cross_entropy(net::forward(n, x.view()).unwrap().output().view(), &y).unwrap();
        let trace = net::forward(&model, x.view()).unwrap();
        let og = net::cross_entropy_grad(trace.output().view(), &y).unwrap();
        let grads = net::backward(&model, &trace, og.view(), &[]).unwrap();
        for (li, g) in grads.layers.iter().enumerate() {
            let Some(g) = g else { continue };
            for (which, shape) in [(0, g.weight.dim()), (1, (1, g.bias.len()))] {
                for idx in ndarray::indices(shape) {
                    let bump = |delta: f64| {
                        let mut n = model.clone();
                        let p = n.params_mut()[li].as_mut().unwrap();
                        if which == 0 {
                            p.weight[idx] += delta;
                        } else {
                            p.bias[idx.1] += delta;
                        }
                        loss(&n)
                    };
                    let num = (bump(h) - bump(-h)) / (2.0 * h);
                    let ana = if which == 0 { g.weight[idx] } else { g.bias[idx.1] };
                    worst_net = worst_net.max(rel_err(ana, num));
                }
            }
        }
    }
    outcome(
        worst_mmd < 1e-4 && worst_net < 1e-4,
        format!("max rel err: MMD² grad {worst_mmd:.2e}, network backward {worst_net:.2e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut r = rng::seeded(3);
    let test = |r: &mut rand_chacha::ChaCha8Rng, n: usize, shift: f64, seed: u64| {
        let xs = SampleSet::new(gaussian(r, n, 5, 0.0)).unwrap();
        let xt = SampleSet::new(gaussian(r, n, 5, shift)).unwrap();
        let bank = mmd::default_bank(&xs.pooled(&xt).unwrap()).unwrap();
        mmd::permutation_test(&xs, &xt, &bank, 199, seed).unwrap()
    };
    let null_rejections = (0..200).filter(|&i| test(&mut r, 50, 0.0, i) <= 0.05).count();
    let rate = null_rejections as f64 / 200.0;
    let power = (0..100).filter(|&i| test(&mut r, 100, 0.5, 1000 + i) <= 0.05).count() as f64 / 100.0;
    outcome(
        (0.01..=0.10).contains(&rate) && power >= 0.8,
        format!("null rejection {rate:.3} (n=50/side, 200 trials); power {power:.2} (n=100/side, +0.5σ per coordinate, 100 trials)"),
    )
}

fn criterion_4() -> Outcome {
    let p = SignFlipProblem::default();
    let (src, tgt) = (p.source(200, 1), p.target(200, 2));
    let init = net::init_network(&toy_architecture(), 4).unwrap();
    let cfg = toy_config(0.0, 300, 5);
    let (a, hist) = dan::train_dan(&init, &src, tgt.inputs.view(), &cfg).unwrap();
    let (b, losses) = dan::train_supervised(&init, &src, &cfg).unwrap();
    let bitwise = a == b && hist.records.iter().zip(&losses).all(|(r, l)| r.ce.to_bits() == l.to_bits());

    let reg = toy_config(1.0, 0, 5);
    let mut mem = BankMemory::default();
    let same = dan::dan_loss(&a, src.inputs.view(), &src.labels, src.inputs.view(), &reg, &mut mem).unwrap();
    let zero_reg = same.mmd.iter().all(|(_, v)| *v == 0.0);

    let mut worst: f64 = 0.0;
    for lambda in [0.0, 0.1, 0.3, 1.0, 3.0] {
        let c = DanConfig { lambda, ..reg.clone() };
        let l = dan::dan_loss(&a, src.inputs.view(), &src.labels, tgt.inputs.view(), &c, &mut BankMemory::default()).unwrap();
        let ce = net::cross_entropy(net::forward(&a, src.inputs.view()).unwrap().output().view(), &src.labels).unwrap();
        worst = worst.max((l.total - (l.ce + lambda * l.mmd_total())).abs()).max((l.ce - ce).abs());
    }
    outcome(
        bitwise && zero_reg && worst <= 1e-9,
        format!("λ=0 trajectory bitwise equal: {bitwise}; identical-domain regularizer zero: {zero_reg}; additivity err {worst:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let p = SignFlipProblem::default();
    let seeds = 0..5u64;
    let grid = [0.0, 0.1, 0.3, 1.0];
    let mut acc = [0.0; 4];
    for seed in seeds.clone() {
        let (src, tgt, test) = (p.source(400, 10 + seed), p.target(400, 20 + seed), p.target(1000, 30 + seed));
        let init = net::init_network(&toy_architecture(), seed).unwrap();
        for (i, &lambda) in grid.iter().enumerate() {
            let (n, _) = dan::train_dan(&init, &src, tgt.inputs.view(), &toy_config(lambda, 2000, seed)).unwrap();
            acc[i] += dan::accuracy(&n, &test).unwrap() / seeds.clone().count() as f64;
        }
    }
    let (best, best_acc) = (1..4).map(|i| (grid[i], acc[i])).fold((0.0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
    let gain = 100.0 * (best_acc - acc[0]);
    outcome(
        gain >= 10.0,
        format!("mean target accuracy over 5 seeds: λ=0 {:.3}, best λ={best} {best_acc:.3}; gain {gain:.1} points", acc[0]),
    )
}

fn criterion_6() -> Outcome {
    let quiet = {
        let mut c = DomainConfig::default();
        c.sensor.noise_std = 0.0;
        c.appearance.clutter_rate = 0.0;
        c.dynamics.wind_std = 0.0;
        c
    };
    let expert = ExpertConfig::default();
    let mut worst: f64 = 0.0;
    let mut chain = true;
    for seed in 0..10 {
        let w = sim::generate_world(&WorldParams { length: 60.0, ..WorldParams::default() }, seed).unwrap();
        let m = w.mirrored();
        let (mut a, mut b) = (DroneState::start(), DroneState::start());
        for tick in 0..500u64 {
            let ts = sim::tick_seed(seed, tick);
            let sa = sim::render_scan(&w, &a, &quiet, ts);
            let mut sb = sim::render_scan(&m, &b, &quiet, ts);
            sb.reverse();
            chain &= sa == sb;
            let (ca, cb) = (
                sim::expert_policy(&w, &a, &expert, &quiet.dynamics),
                sim::expert_policy(&m, &b, &expert, &quiet.dynamics),
            );
            worst = worst.max((ca + cb).abs());
            a = sim::step(&a, ca, &quiet.dynamics, ts);
            b = sim::step(&b, cb, &quiet.dynamics, ts);
            worst = worst.max((a.x + b.x).abs()).max((a.v_lat + b.v_lat).abs());
            chain &= sim::check_collision(&w, &a, 0.25) == sim::check_collision(&m, &b, 0.25);
        }
    }
    let mirror_ok = chain && worst <= 1e-12;

    let dom = DomainConfig::default();
    let w = sim::generate_world(&WorldParams::default(), 77).unwrap();
    let fly = || {
        let mut p = sim::RandomPolicy::new(1.0, 5);
        sim::run_episode(&mut p, &w, &dom, 200.0, 9)
    };
    let reproducible = fly() == fly();

    let params = WorldParams { length: 400.0, ..WorldParams::default() };
    let env = mav_transfer::imitation::Env {
        domain: dom.clone(),
        world: params,
        label_space: mav_transfer::imitation::LabelSpace::Fine { bins: 9 },
        tag: "low".into(),
    };
    let expert_rows = harness::evaluate_with(&env, 50, 66, 400.0, |world, seed| {
        sim::fly(world, &dom, 400.0, seed, |v| sim::expert_policy(v.world, v.state, &expert, &dom.dynamics))
    })
    .unwrap();
    let random_rows = harness::evaluate(&env, 50, 66, 400.0, harness::random_policy(1.0)).unwrap();
    let mean = |r: &[harness::EpisodeRow]| r.iter().map(|e| e.distance_flown).sum::<f64>() / r.len() as f64;
    let (e, rnd) = (mean(&expert_rows), mean(&random_rows));
    outcome(
        mirror_ok && reproducible && e >= 5.0 * rnd,
        format!(
            "mirror chain exact: {mirror_ok} (max |err| {worst:.1e}); bitwise reproducible: {reproducible}; expert {e:.1} m vs random {rnd:.1} m over 50 paired 400 m worlds ({:.1}×)",
            e / rnd
        ),
    )
}

fn config(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/configs").join(format!("{name}.toml"))
}

fn run_cli(cfg: &Path, out: &Path) -> Result<Report, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_mav-transfer"))
        .args(["experiment", "run", "--config"])
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("experiment run exited with {status}"));
    }
    Report::load(&out.join("report.json")).map_err(|e| e.to_string())
}

fn margin(r: &Report) -> (f64, f64) {
    let d = |k| r.card(k).unwrap().mean_distance;
    let c = r.comparison(PolicyKind::DanAdapted, PolicyKind::SourceOnly).unwrap();
    (d(PolicyKind::DanAdapted) - d(PolicyKind::SourceOnly), c.p_value)
}

fn cards(r: &Report) -> String {
    PolicyKind::ALL
        .iter()
        .map(|&k| format!("{} {:.1} m", k.name(), r.card(k).unwrap().mean_distance))
        .collect::<Vec<_>>()
        .join(", ")
}

fn criterion_7(run: &Result<Report, String>, elapsed: Duration) -> Outcome {
    let r = match run {
        Ok(r) => r,
        Err(e) => return outcome(false, e.clone()),
    };
    let (m, p) = margin(r);
    let c = r.comparison(PolicyKind::DanAdapted, PolicyKind::SourceOnly).unwrap();
    outcome(
        m > 0.0 && p < 0.05 && elapsed < Duration::from_secs(20 * 60),
        format!(
            "{}; λ={}; margin {m:+.1} m, wins/losses/ties {}/{}/{}, sign-test p {p:.2e}; {:.0} s",
            cards(r),
            r.lambda,
            c.wins,
            c.losses,
            c.ties,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_8(dir: &Path) -> Outcome {
    let run = |name: &str| -> Result<Report, String> {
        let cfg = ExperimentConfig::load(&config(name)).map_err(|e| e.to_string())?;
        let out = dir.join(name);
        std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
        harness::run_experiment(&cfg, &out).map_err(|e| e.to_string())
    };
    let (w, e) = match (run("weather"), run("environment")) {
        (Ok(w), Ok(e)) => (w, e),
        (a, b) => return outcome(false, format!("{:?} {:?}", a.err(), b.err())),
    };
    let ((mw, pw), (me, pe)) = (margin(&w), margin(&e));
    outcome(
        mw >= 0.0 && pw < 0.05,
        format!(
            "weather margin {mw:+.1} m (p {pw:.3}) [{}]; environment margin {me:+.1} m (p {pe:.3}) [{}]; environment < weather: {}",
            cards(&w),
            cards(&e),
            me < mw
        ),
    )
}

fn criterion_9(a: &Path, b: &Path, runs_ok: bool) -> Outcome {
    if !runs_ok {
        return outcome(false, "an experiment run failed".into());
    }
    let mut differing = Vec::new();
    let mut compared = 0;
    for f in ["episodes.csv", "summary.csv", "validation.csv", "dan_history.csv"] {
        compared += 1;
        if std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok() {
            differing.push(f);
        }
    }
    outcome(
        differing.is_empty(),
        format!("{compared} CSV files compared across two `experiment run` invocations; differing: {differing:?}"),
    )
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let budgets = [(1, 5), (2, 30), (3, 120), (5, 60), (6, 120)];
    let mut failed = Vec::new();
    let mut report = |n: u32, name: &str, o: Outcome, t: Duration| {
        let budget = budgets.iter().find(|b| b.0 == n).map(|b| Duration::from_secs(b.1));
        let in_time = budget.is_none_or(|b| t < b);
        let pass = o.pass && in_time;
        println!(
            "criterion {n} {name}: {} ({}; {:.1} s{})",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            t.as_secs_f64(),
            if in_time { "" } else { ", over budget" }
        );
        if !pass {
            failed.push(n);
        }
    };
    let timed = |f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        (o, t.elapsed())
    };
    let simple: [(u32, &str, fn() -> Outcome); 6] = [
        (1, "MMD oracle equivalence", criterion_1),
        (2, "gradient fidelity", criterion_2),
        (3, "two-sample calibration and power", criterion_3),
        (4, "joint-objective reductions", criterion_4),
        (5, "controlled-shift adaptation (toy)", criterion_5),
        (6, "simulator properties", criterion_6),
    ];
    for (n, name, f) in simple {
        if wanted(n) {
            let (o, t) = timed(&f);
            report(n, name, o, t);
        }
    }
    if wanted(7) || wanted(8) || wanted(9) {
        let dir = tempfile::tempdir().expect("temp dir");
        if wanted(7) || wanted(9) {
            let t = Instant::now();
            let first = run_cli(&config("sanity_gamma"), &dir.path().join("sanity_a"));
            let elapsed = t.elapsed();
            if wanted(7) {
                report(7, "end-to-end transfer (sanity_gamma)", criterion_7(&first, elapsed), elapsed);
            }
            if wanted(9) {
                let t = Instant::now();
                let second = run_cli(&config("sanity_gamma"), &dir.path().join("sanity_b"));
                let o = criterion_9(&dir.path().join("sanity_a"), &dir.path().join("sanity_b"), first.is_ok() && second.is_ok());
                report(9, "reproducibility", o, t.elapsed());
            }
        }
        if wanted(8) {
            let (o, t) = timed(&|| criterion_8(dir.path()));
            report(8, "rank pattern (weather vs environment)", o, t);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: {} criterion(s) failed: {failed:?}", failed.len());
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
