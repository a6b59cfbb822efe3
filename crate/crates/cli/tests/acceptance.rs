//! End-to-end acceptance checks. Prints one `[PASS]`/`[FAIL]` line per
//! criterion and exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use txpack::sampler::{AcceptanceWindow, DEFAULT_KPRIME_RATIO, DEFAULT_MAX_ATTEMPTS};
use txpack::simulator::{build_strategy, greedy_block, trial_rng};
use txpack::solver::IDENTITY_TOL;
use txpack::verifier::indicator;
use txpack::{
    base_fee, brute_force_check, compute_phat_real, expected_utility, rejection_sample_block,
    run_experiment, sample_block, simulate_round, solve_equilibrium, verify_equilibrium,
    Experiment, FeeMode, GameParams, Mempool, SegmentLayout, SizeMode, StrategyKind, Transaction,
};

type Criterion = (&'static str, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Fastest of `reps` runs, so one-off scheduler noise does not count.
fn fastest<T>(reps: usize, mut f: impl FnMut() -> T) -> (T, Duration) {
    let mut best = Duration::MAX;
    let mut last = None;
    for _ in 0..reps {
        let start = Instant::now();
        let value = f();
        best = best.min(start.elapsed());
        last = Some(value);
    }
    (last.expect("reps > 0"), best)
}

fn table2() -> Mempool {
    Mempool::from_prices(&[
        1.0,
        1f64.exp(),
        (-1.0f64 / 12.0).exp(),
        (5.0f64 / 12.0).exp(),
        1.0,
        1.0,
        (-3.0f64).exp(),
    ])
    .unwrap()
}

fn table2_params() -> GameParams {
    GameParams::new(3.0, 1.0).unwrap()
}

fn max_abs_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn ac1_table2() -> Outcome {
    let m = table2();
    let params = table2_params();
    let (eq, t) = fastest(5, || {
        solve_equilibrium(&m, &params, SizeMode::Fixed).unwrap()
    });
    let phat = [
        2.0 / 3.0,
        5.0 / 3.0,
        7.0 / 12.0,
        13.0 / 12.0,
        2.0 / 3.0,
        2.0 / 3.0,
        -7.0 / 3.0,
    ];
    let p = [1.0 / 3.0, 1.0, 0.25, 0.75, 1.0 / 3.0, 1.0 / 3.0, 0.0];
    let err = max_abs_err(eq.raw.values(), &phat)
        .max(max_abs_err(&eq.profile.values, &p))
        .max((eq.profile.xhat - 1.0 / 3.0).abs());
    Outcome::new(
        err <= 1e-9 && t < Duration::from_millis(1),
        format!("max error {err:.1e}, {:.3} ms", ms(t)),
    )
}

fn ac2_table1() -> Outcome {
    let m = table2();
    let eq = solve_equilibrium(&m, &table2_params(), SizeMode::Fixed).unwrap();
    let ((layout, block), t) = fastest(5, || {
        let layout = SegmentLayout::new(&m, &eq.profile.values, 3).unwrap();
        let block = sample_block(&m, &layout, 0.37).unwrap();
        (layout, block)
    });
    let intervals = [
        Some((0.0, 1.0 / 3.0)),
        Some((1.0 / 3.0, 4.0 / 3.0)),
        Some((4.0 / 3.0, 19.0 / 12.0)),
        Some((19.0 / 12.0, 7.0 / 3.0)),
        Some((7.0 / 3.0, 8.0 / 3.0)),
        Some((8.0 / 3.0, 3.0)),
        None,
    ];
    let mut err = 0.0f64;
    let mut shape_ok = true;
    for (pos, want) in intervals.iter().enumerate() {
        match (layout.segment_at(pos), want) {
            (Some(s), Some((a, b))) => err = err.max((s.start - a).abs()).max((s.end - b).abs()),
            (None, None) => {}
            _ => shape_ok = false,
        }
    }
    let pass = shape_ok && err <= 1e-12 && block.txids == [2, 3, 5] && t < Duration::from_millis(1);
    Outcome::new(
        pass,
        format!(
            "interval error {err:.1e}, r=0.37 -> {:?}, {:.3} ms",
            block.txids,
            ms(t)
        ),
    )
}

fn ac3_nash() -> Outcome {
    let m = table2();
    let params = table2_params();
    let start = Instant::now();
    let eq = solve_equilibrium(&m, &params, SizeMode::Fixed).unwrap();
    let w_target = (-1.0f64 / 3.0).exp();
    let given =
        verify_equilibrium(&eq.profile.values, Some(eq.profile.w), &m, &params, 1e-9).unwrap();
    let inferred = verify_equilibrium(&eq.profile.values, None, &m, &params, 1e-9).unwrap();
    let brute = brute_force_check(&m, &params, &eq.profile.values, 1e-8).unwrap();

    let greedy = indicator(&m, &greedy_block(&m, 3.0).txids).unwrap();
    let greedy_verify = verify_equilibrium(&greedy, None, &m, &params, 1e-9).unwrap();
    let greedy_brute = brute_force_check(&m, &params, &greedy, 1e-8).unwrap();
    let t = start.elapsed();

    let w_err = (given.w - w_target)
        .abs()
        .max((inferred.w - w_target).abs());
    let solver_ok = given.passes && inferred.passes && brute.passes && w_err <= 1e-9;
    let greedy_ok = !greedy_verify.passes
        && !greedy_brute.passes
        && greedy_verify
            .witness
            .as_ref()
            .is_some_and(|w| w.utility_gain > 0.0)
        && greedy_brute
            .witness
            .as_ref()
            .is_some_and(|w| w.utility_gain > 0.0);
    let witness = greedy_brute.witness.map(|w| w.txids).unwrap_or_default();
    Outcome::new(
        solver_ok && greedy_ok && t < Duration::from_millis(10),
        format!(
            "w error {w_err:.1e}, greedy deviation {witness:?}, {:.3} ms",
            ms(t)
        ),
    )
}

fn ac4_random_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC4);
    let start = Instant::now();
    let mut failures = Vec::new();
    for i in 0..100 {
        let k = rng.random_range(1..=4usize);
        let n = rng.random_range(2..=10usize);
        let lambda = [0.5, 1.0, 2.0][rng.random_range(0..3)];
        let prices: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-3.0..=3.0f64).exp())
            .collect();
        let m = Mempool::from_prices(&prices).unwrap();
        let params = GameParams::new(k as f64, lambda).unwrap();
        let eq = solve_equilibrium(&m, &params, SizeMode::Fixed).unwrap();
        let verdict = brute_force_check(&m, &params, &eq.profile.values, 1e-8).unwrap();
        if !verdict.passes {
            failures.push(i);
        }
    }
    let t = start.elapsed();
    Outcome::new(
        failures.is_empty() && t < Duration::from_secs(5),
        format!("failing instances {failures:?}, {:.1} ms", ms(t)),
    )
}

fn ac5_exclusivity() -> Outcome {
    let m = table2();
    let rounds = 100_000u64;
    // (λ, tx id, expected marginal)
    let settings = [
        (0.5, 2, 1.0),
        (1.0, 4, 0.75),
        (2.0, 7, 0.0),
        (2.0, 1, 7.0 / 18.0),
    ];
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, &(lambda, id, p_expected)) in settings.iter().enumerate() {
        let params = GameParams::new(3.0, lambda).unwrap();
        let eq = solve_equilibrium(&m, &params, SizeMode::Fixed).unwrap();
        let p = eq.profile.get(&m, id).unwrap();
        let strategy = build_strategy(
            StrategyKind::Equilibrium,
            &m,
            &params,
            SizeMode::Fixed,
            None,
        )
        .unwrap();
        let mut absent = 0u64;
        for t in 0..rounds {
            let mut rng = trial_rng(0xAC5 + i as u64, t);
            let out = simulate_round(&m, &strategy, &params, &mut rng).unwrap();
            if !out.blocks.iter().any(|b| b.txids.contains(&id)) {
                absent += 1;
            }
        }
        let q = (-lambda * p).exp();
        let freq = absent as f64 / rounds as f64;
        let se = (q * (1.0 - q) / rounds as f64).sqrt();
        let ok = (p - p_expected).abs() < 1e-9 && (freq - q).abs() <= 4.0 * se;
        pass &= ok;
        let z = if se > 0.0 { (freq - q) / se } else { 0.0 };
        parts.push(format!(
            "λ={lambda} p={p:.4}: {freq:.4} vs {q:.4} (z={z:+.2})"
        ));
    }
    let t = start.elapsed();
    Outcome::new(
        pass && t < Duration::from_secs(30),
        format!("{}; {:.1} s", parts.join("; "), t.as_secs_f64()),
    )
}

fn ac6_utility_separation() -> Outcome {
    let m = table2();
    let params = table2_params();
    let eq = solve_equilibrium(&m, &params, SizeMode::Fixed).unwrap();
    let greedy = indicator(&m, &greedy_block(&m, 3.0).txids).unwrap();
    let eq_closed = expected_utility(&eq.profile.values, &eq.profile.values, &m, &params)
        .unwrap()
        .value;
    let greedy_closed = expected_utility(&greedy, &greedy, &m, &params)
        .unwrap()
        .value;

    let start = Instant::now();
    let experiment = Experiment {
        params,
        mode: SizeMode::Fixed,
        kprime: None,
        trials: 100_000,
        seed: 0xAC6,
        strategies: vec![StrategyKind::Equilibrium, StrategyKind::Greedy],
        jobs: 1,
    };
    let reports = run_experiment(&m, &experiment).unwrap();
    let t = start.elapsed();
    let (e, g) = (&reports[0], &reports[1]);
    let z_eq = (e.mean_exclusive_revenue - eq_closed) / e.stderr_exclusive_revenue;
    let z_greedy = (g.mean_exclusive_revenue - greedy_closed) / g.stderr_exclusive_revenue;
    let combined = e.stderr_exclusive_revenue.hypot(g.stderr_exclusive_revenue);
    let separation = (e.mean_exclusive_revenue - g.mean_exclusive_revenue) / combined;
    Outcome::new(
        z_eq.abs() <= 4.0
            && z_greedy.abs() <= 4.0
            && separation >= 10.0
            && (eq_closed - 2.4331).abs() < 1e-4
            && t < Duration::from_secs(60),
        format!(
            "equilibrium {:.4} vs {eq_closed:.4} (z={z_eq:+.2}), greedy {:.4} vs {greedy_closed:.4} \
             (z={z_greedy:+.2}), separation {separation:.1} SE, {:.1} s",
            e.mean_exclusive_revenue,
            g.mean_exclusive_revenue,
            t.as_secs_f64()
        ),
    )
}

fn ac7_fees() -> Outcome {
    let m = table2();
    let params = table2_params();
    let eq = solve_equilibrium(&m, &params, SizeMode::Fixed).unwrap();
    let (fees, t) = fastest(5, || base_fee(&m, &params, FeeMode::XhatAware).unwrap());
    let err = (fees.v_low - (-1.0f64 / 3.0).exp())
        .abs()
        .max((fees.v_high - (2.0f64 / 3.0).exp()).abs());
    let misclassified: Vec<u64> = m
        .transactions()
        .iter()
        .zip(&eq.profile.values)
        .filter(|(tx, &p)| {
            let v = tx.gas_price;
            let tol = 1e-9;
            if v < fees.v_low - tol {
                p != 0.0
            } else if v > fees.v_high + tol {
                p != 1.0
            } else if v > fees.v_low + tol && v < fees.v_high - tol {
                !(p > 0.0 && p < 1.0)
            } else {
                false
            }
        })
        .map(|(tx, _)| tx.id)
        .collect();
    Outcome::new(
        err <= 1e-9 && misclassified.is_empty() && t < Duration::from_millis(1),
        format!(
            "bound error {err:.1e}, misclassified {misclassified:?}, {:.3} ms",
            ms(t)
        ),
    )
}

fn random_mempool(n: usize, rng: &mut ChaCha8Rng) -> Mempool {
    Mempool::from_prices(
        &(0..n)
            .map(|_| rng.random_range(-3.0..=3.0f64).exp())
            .collect::<Vec<_>>(),
    )
    .unwrap()
}

fn ac8_scaling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC8);
    let mut fits = Vec::new();
    let mut big = Duration::ZERO;
    for (n, reps) in [(10_000usize, 31), (100_000, 11), (1_000_000, 5)] {
        let m = random_mempool(n, &mut rng);
        let params = GameParams::new((n / 10) as f64, 1.0).unwrap();
        let (_, t) = fastest(reps, || {
            solve_equilibrium(&m, &params, SizeMode::Fixed).unwrap()
        });
        let nf = n as f64;
        fits.push((n, t, t.as_secs_f64() / (nf * nf.ln())));
        big = t;
    }
    let cs: Vec<f64> = fits.iter().map(|f| f.2).collect();
    let spread =
        cs.iter().cloned().fold(0.0, f64::max) / cs.iter().cloned().fold(f64::MAX, f64::min);
    let parts: Vec<String> = fits
        .iter()
        .map(|(n, t, c)| format!("n={n}: {:.1} ms (c={:.2e})", ms(*t), c))
        .collect();
    Outcome::new(
        big < Duration::from_secs(5) && spread <= 2.0,
        format!("{}; c spread {spread:.2}x", parts.join(", ")),
    )
}

/// Exact inclusion marginals of independent draws conditioned on the window.
fn conditioned_marginals(sizes: &[f64], probs: &[f64], window: AcceptanceWindow) -> Vec<f64> {
    let n = sizes.len();
    let mut mass = 0.0;
    let mut marg = vec![0.0; n];
    for mask in 0u32..(1 << n) {
        let mut weight = 1.0;
        let mut used = 0.0;
        for i in 0..n {
            if mask >> i & 1 == 1 {
                weight *= probs[i];
                used += sizes[i];
            } else {
                weight *= 1.0 - probs[i];
            }
        }
        if weight > 0.0 && window.contains(used) {
            mass += weight;
            for (i, m) in marg.iter_mut().enumerate() {
                if mask >> i & 1 == 1 {
                    *m += weight;
                }
            }
        }
    }
    marg.iter().map(|m| m / mass).collect()
}

fn ac9_variable_size() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC9);
    let start = Instant::now();

    let mut worst_budget = 0.0f64;
    let mut worst_constant = 0.0f64;
    let mut overflow = 0usize;
    for i in 0..100u64 {
        let n = rng.random_range(2..=50usize);
        let txs: Vec<Transaction> = (0..n as u64)
            .map(|id| {
                let price = rng.random_range(-3.0..=3.0f64).exp();
                let size = rng.random_range(0.1f64.ln()..=10f64.ln()).exp();
                Transaction::new(id, price, size)
            })
            .collect();
        let m = Mempool::new(txs).unwrap();
        let lambda = [0.5, 1.0, 2.0][rng.random_range(0..3)];
        let k = rng.random_range(0.1..0.9) * m.total_size();
        let params = GameParams::new(k, lambda).unwrap();
        let raw = compute_phat_real(&m, &params).unwrap();
        let budget: f64 = m
            .transactions()
            .iter()
            .zip(raw.values())
            .map(|(tx, p)| tx.size * p)
            .sum();
        worst_budget = worst_budget.max((budget - k).abs() / k.max(1.0));
        let c = raw.constant();
        for (tx, p) in m.transactions().iter().zip(raw.values()) {
            let value = tx.gas_price * (-lambda * p).exp();
            worst_constant = worst_constant.max((value - c).abs() / c);
        }

        let kprime = DEFAULT_KPRIME_RATIO * k;
        let eq = solve_equilibrium(
            &m,
            &GameParams::new(kprime, lambda).unwrap(),
            SizeMode::Variable,
        )
        .unwrap();
        let window = AcceptanceWindow::around(kprime, k);
        let mut draw_rng = trial_rng(0xAC9, i);
        for _ in 0..100 {
            match rejection_sample_block(
                &m,
                &eq.profile.values,
                window,
                DEFAULT_MAX_ATTEMPTS,
                &mut draw_rng,
            ) {
                Ok(draw) if draw.block.used_capacity <= k => {}
                Ok(_) => overflow += 1,
                // An exhausted budget returns no block, so capacity holds.
                Err(_) => {}
            }
        }
    }

    // 20-transaction oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC9 ^ 20);
    let txs: Vec<Transaction> = (1..=20)
        .map(|id| {
            Transaction::new(
                id,
                rng.random_range(-1.0..=1.0f64).exp(),
                0.5 + rng.random::<f64>(),
            )
        })
        .collect();
    let m = Mempool::new(txs).unwrap();
    let k = 0.5 * m.total_size();
    let kprime = DEFAULT_KPRIME_RATIO * k;
    let eq = solve_equilibrium(
        &m,
        &GameParams::new(kprime, 0.3).unwrap(),
        SizeMode::Variable,
    )
    .unwrap();
    let window = AcceptanceWindow::around(kprime, k);
    let oracle = conditioned_marginals(&m.sizes(), &eq.profile.values, window);
    let draws = 100_000u64;
    let mut counts = vec![0u64; m.len()];
    for _ in 0..draws {
        let draw = rejection_sample_block(
            &m,
            &eq.profile.values,
            window,
            DEFAULT_MAX_ATTEMPTS,
            &mut rng,
        )
        .unwrap();
        if draw.block.used_capacity > k {
            overflow += 1;
        }
        for id in draw.block.txids {
            counts[m.position(id).unwrap()] += 1;
        }
    }
    let mut worst_z = 0.0f64;
    for (c, q) in counts.iter().zip(&oracle) {
        let freq = *c as f64 / draws as f64;
        let se = (q * (1.0 - q) / draws as f64).sqrt();
        let z = if se > 0.0 {
            (freq - q).abs() / se
        } else if freq == *q {
            0.0
        } else {
            f64::INFINITY
        };
        worst_z = worst_z.max(z);
    }
    let t = start.elapsed();
    Outcome::new(
        worst_budget <= IDENTITY_TOL
            && worst_constant <= IDENTITY_TOL
            && overflow == 0
            && worst_z <= 3.0,
        format!(
            "budget error {worst_budget:.1e}, constant error {worst_constant:.1e}, \
             over-capacity blocks {overflow}, oracle max |z| {worst_z:.2}, {:.1} s",
            t.as_secs_f64()
        ),
    )
}

fn ac10_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_txpack");
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let t2 = fixtures.join("table2.json").display().to_string();
    let t1 = fixtures.join("table1.json").display().to_string();
    let base = |cmd: &'static str, path: &str| -> Vec<String> {
        [cmd, "--mempool", path, "--k", "3", "--lambda", "1"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    };
    let with = |mut v: Vec<String>, extra: &[&str]| {
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let invocations = vec![
        with(base("equilibrium", &t2), &["--with-strategy"]),
        with(base("sample", &t1), &["--r", "0.37"]),
        with(base("sample", &t2), &["--seed", "17"]),
        with(base("sample", &t2), &["--mode", "variable", "--seed", "17"]),
        with(base("basefee", &t2), &["--fee-mode", "paper"]),
        with(base("basefee", &t2), &["--fee-mode", "xhat"]),
        base("verify", &t2),
        with(base("verify", &t2), &["--brute-force"]),
        with(
            base("simulate", &t2),
            &[
                "--trials",
                "2000",
                "--seed",
                "17",
                "--strategies",
                "equilibrium,greedy,uniform-random-k",
                "--jobs",
                "4",
            ],
        ),
    ];
    let mut differing = Vec::new();
    for args in &invocations {
        let run = || {
            let out = Command::new(bin)
                .args(args)
                .env_remove("TXPACK_SEED")
                .output()
                .unwrap();
            (out.status.code(), out.stdout)
        };
        let first = run();
        let identical = first.0 == Some(0) && !first.1.is_empty() && (0..2).all(|_| run() == first);
        if !identical {
            differing.push(args[0].clone());
        }
    }
    Outcome::new(
        differing.is_empty(),
        format!(
            "{} invocations x3, non-identical: {differing:?}",
            invocations.len()
        ),
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; only a
    // `--list` request needs handling.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [Criterion; 10] = [
        ("AC1", "seven-tx reference equilibrium", ac1_table2),
        ("AC2", "segment layout and r = 0.37 probe", ac2_table1),
        ("AC3", "Nash verification and greedy witness", ac3_nash),
        ("AC4", "randomized brute-force oracle", ac4_random_oracle),
        ("AC5", "exclusivity law exp(-λp)", ac5_exclusivity),
        (
            "AC6",
            "utility separation vs greedy",
            ac6_utility_separation,
        ),
        ("AC7", "base-fee bounds and classification", ac7_fees),
        ("AC8", "n log n scaling up to 10^6", ac8_scaling),
        (
            "AC9",
            "variable-size identities and sampler",
            ac9_variable_size,
        ),
        ("AC10", "byte-identical CLI output", ac10_determinism),
    ];
    let mut failed = Vec::new();
    for (tag, name, check) in criteria {
        let outcome = check();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!("[{status}] {tag} {name}: {}", outcome.detail);
        if !outcome.pass {
            failed.push(tag);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}
