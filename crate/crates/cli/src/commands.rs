use std::fs::File;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use txpack::sampler::{DEFAULT_KPRIME_RATIO, DEFAULT_MAX_ATTEMPTS};
use txpack::simulator::REPORT_SCHEMA_VERSION;
use txpack::{
    base_fee, brute_force_check, corresponding_strategy, rejection_sample_block, run_experiment,
    sample_block, solve_equilibrium, verify_equilibrium, AcceptanceWindow, Error, Experiment,
    ExperimentConfig, ExperimentReport, GameParams, Mempool, MixedStrategy, Result, SegmentLayout,
    SizeMode,
};

use crate::output::emit;
use crate::{Command, GameArgs};

fn load_mempool(path: &Path) -> Result<Mempool> {
    if path == Path::new("-") {
        Mempool::from_json_reader(io::stdin().lock())
    } else {
        Mempool::from_json_reader(BufReader::new(File::open(path)?))
    }
}

struct Game {
    mempool: Mempool,
    params: GameParams,
    mode: SizeMode,
}

impl GameArgs {
    fn load(&self) -> Result<Game> {
        let params = GameParams::new(self.k, self.lambda)?;
        let mode = self.mode.into();
        if mode == SizeMode::Fixed {
            params.slots()?;
        }
        Ok(Game {
            mempool: load_mempool(&self.mempool)?,
            params,
            mode,
        })
    }
}

#[derive(Serialize)]
struct MarginalEntry {
    id: u64,
    phat: f64,
    p: f64,
}

#[derive(Serialize)]
struct EquilibriumOutput {
    mode: SizeMode,
    k: f64,
    lambda: f64,
    xhat: f64,
    w: f64,
    packaged_everything: bool,
    marginals: Vec<MarginalEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy: Option<MixedStrategy>,
}

#[derive(Deserialize)]
struct ProfileEntry {
    id: u64,
    p: f64,
}

#[derive(Deserialize)]
struct ProfileInput {
    marginals: Vec<ProfileEntry>,
    #[serde(default)]
    w: Option<f64>,
}

/// Reads a profile in the `equilibrium` output format and aligns it with
/// the mempool.
fn load_profile(path: &Path, mempool: &Mempool) -> Result<(Vec<f64>, Option<f64>)> {
    let input: ProfileInput = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let mut values = vec![None; mempool.len()];
    for entry in input.marginals {
        let pos = mempool
            .position(entry.id)
            .ok_or(Error::UnknownTx(entry.id))?;
        if !(0.0..=1.0).contains(&entry.p) {
            return Err(Error::InvalidParams(format!(
                "profile marginal of tx {} is {}, outside [0, 1]",
                entry.id, entry.p
            )));
        }
        values[pos] = Some(entry.p);
    }
    let values = values
        .into_iter()
        .zip(mempool.ids())
        .map(|(p, id)| {
            p.ok_or_else(|| Error::InvalidParams(format!("profile has no marginal for tx {id}")))
        })
        .collect::<Result<_>>()?;
    Ok((values, input.w))
}

fn equilibrium(game: &GameArgs, with_strategy: bool, out: Option<&Path>) -> Result<()> {
    let Game {
        mempool,
        params,
        mode,
    } = game.load()?;
    let eq = solve_equilibrium(&mempool, &params, mode)?;
    let strategy = if with_strategy {
        if mode != SizeMode::Fixed {
            return Err(Error::NotFixedSize(
                "fixed mode for an explicit mixed strategy".into(),
            ));
        }
        let slots = params.slots()?.min(mempool.len());
        Some(corresponding_strategy(&mempool, &eq.profile.values, slots)?)
    } else {
        None
    };
    let marginals = mempool
        .ids()
        .zip(eq.raw.values())
        .zip(&eq.profile.values)
        .map(|((id, &phat), &p)| MarginalEntry { id, phat, p })
        .collect();
    emit(
        &EquilibriumOutput {
            mode,
            k: params.k,
            lambda: params.lambda,
            xhat: eq.profile.xhat,
            w: eq.profile.w,
            packaged_everything: eq.packaged_everything,
            marginals,
            strategy,
        },
        out,
    )
}

fn sample(
    game: &GameArgs,
    r: Option<f64>,
    seed: Option<u64>,
    kprime: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    if r.is_none() && seed.is_none() {
        return Err(Error::InvalidParams(
            "sample needs --r or --seed (or TXPACK_SEED)".into(),
        ));
    }
    if let Some(r) = r {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidParams(format!(
                "--r must lie in [0, 1), got {r}"
            )));
        }
    }
    let Game {
        mempool,
        params,
        mode,
    } = game.load()?;
    let block = match mode {
        SizeMode::Fixed => {
            let eq = solve_equilibrium(&mempool, &params, mode)?;
            let slots = params.slots()?.min(mempool.len());
            let layout = SegmentLayout::new(&mempool, &eq.profile.values, slots)?;
            let r = match (r, seed) {
                (Some(r), _) => r,
                (None, Some(seed)) => ChaCha8Rng::seed_from_u64(seed).random(),
                (None, None) => unreachable!("checked above"),
            };
            sample_block(&mempool, &layout, r)?
        }
        SizeMode::Variable => {
            let Some(seed) = seed else {
                return Err(Error::InvalidParams(
                    "variable mode samples by rejection and needs --seed".into(),
                ));
            };
            let kprime = kprime.unwrap_or(DEFAULT_KPRIME_RATIO * params.k);
            if !(kprime > 0.0 && kprime <= params.k) {
                return Err(Error::InvalidParams(format!(
                    "--kprime must lie in (0, k], got {kprime}"
                )));
            }
            let target = GameParams::new(kprime, params.lambda)?;
            let eq = solve_equilibrium(&mempool, &target, mode)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rejection_sample_block(
                &mempool,
                &eq.profile.values,
                AcceptanceWindow::around(kprime, params.k),
                DEFAULT_MAX_ATTEMPTS,
                &mut rng,
            )?
            .block
        }
    };
    emit(&block, out)
}

fn basefee(game: &GameArgs, fee_mode: txpack::FeeMode, out: Option<&Path>) -> Result<()> {
    let Game {
        mempool, params, ..
    } = game.load()?;
    emit(&base_fee(&mempool, &params, fee_mode)?, out)
}

fn verify(
    game: &GameArgs,
    profile: Option<&Path>,
    brute_force: bool,
    tol: f64,
    out: Option<&Path>,
) -> Result<()> {
    let Game {
        mempool,
        params,
        mode,
    } = game.load()?;
    let (values, w) = match profile {
        Some(path) => load_profile(path, &mempool)?,
        None => {
            let eq = solve_equilibrium(&mempool, &params, mode)?;
            (eq.profile.values, Some(eq.profile.w))
        }
    };
    let verdict = if brute_force {
        brute_force_check(&mempool, &params, &values, tol)?
    } else {
        verify_equilibrium(&values, w, &mempool, &params, tol)?
    };
    emit(&verdict, out)
}

#[derive(Serialize)]
struct SimulationOutput {
    schema_version: u32,
    reports: Vec<ExperimentReport>,
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    config: Option<&Path>,
    mempool: Option<PathBuf>,
    k: Option<f64>,
    lambda: Option<f64>,
    mode: SizeMode,
    kprime: Option<f64>,
    trials: Option<u64>,
    seed: Option<u64>,
    strategies: Vec<String>,
    jobs: usize,
    out: Option<&Path>,
) -> Result<()> {
    let (config, base_dir) = match config {
        Some(path) => {
            let cfg: ExperimentConfig = serde_json::from_reader(BufReader::new(File::open(path)?))?;
            (cfg, path.parent().map(Path::to_path_buf))
        }
        None => {
            let missing = |flag: &str| Error::InvalidParams(format!("simulate needs --{flag}"));
            (
                ExperimentConfig {
                    mempool: mempool.ok_or_else(|| missing("mempool"))?,
                    lambda: lambda.ok_or_else(|| missing("lambda"))?,
                    k: k.ok_or_else(|| missing("k"))?,
                    trials: trials.ok_or_else(|| missing("trials"))?,
                    seed: seed.ok_or_else(|| missing("seed (or TXPACK_SEED)"))?,
                    strategies,
                    mode,
                    kprime,
                },
                None,
            )
        }
    };
    let mut experiment = Experiment::from_config(&config)?;
    experiment.jobs = jobs;
    if experiment.mode == SizeMode::Fixed {
        experiment.params.slots()?;
    }
    if experiment.trials == 0 {
        return Err(Error::ZeroTrials);
    }
    // Relative mempool paths in a config file resolve against its directory.
    let mempool_path = match base_dir {
        Some(dir) if config.mempool.is_relative() => dir.join(&config.mempool),
        _ => config.mempool.clone(),
    };
    let mempool = load_mempool(&mempool_path)?;
    let reports = run_experiment(&mempool, &experiment)?;
    emit(
        &SimulationOutput {
            schema_version: REPORT_SCHEMA_VERSION,
            reports,
        },
        out,
    )
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Equilibrium {
            game,
            with_strategy,
            out,
        } => equilibrium(&game, with_strategy, out.out.as_deref()),
        Command::Sample {
            game,
            r,
            seed,
            kprime,
            out,
        } => sample(&game, r, seed, kprime, out.out.as_deref()),
        Command::Basefee {
            game,
            fee_mode,
            out,
        } => basefee(&game, fee_mode.into(), out.out.as_deref()),
        Command::Verify {
            game,
            profile,
            brute_force,
            tol,
            out,
        } => verify(
            &game,
            profile.as_deref(),
            brute_force,
            tol,
            out.out.as_deref(),
        ),
        Command::Simulate {
            config,
            mempool,
            k,
            lambda,
            mode,
            kprime,
            trials,
            seed,
            strategies,
            jobs,
            out,
        } => simulate(
            config.as_deref(),
            mempool,
            k,
            lambda,
            mode.into(),
            kprime,
            trials,
            seed,
            strategies,
            jobs,
            out.out.as_deref(),
        ),
    }
}
