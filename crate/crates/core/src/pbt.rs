//! Population orchestration: parallel interval training, ranking,
//! exploit/explore with optimizer-aware transfer.

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::envs::{EnvKind, Environment};
use crate::error::{ensure, Error, Result};
use crate::optim::{perturb, HyperBounds, HyperparamSet, InitRanges, OptimizerKind};
use crate::td3::{evaluate, ReplayBuffer, Td3Agent, Td3Params, Transition};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "POPFORGE_THREADS";

/// Worker count: `POPFORGE_THREADS` if set and positive, else all cores.
pub fn thread_limit() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Fraction of an interval's environment steps that trigger an update,
/// as `(numerator, denominator)`.
pub fn gradient_fraction(kind: OptimizerKind, step_adjusted: bool) -> (u64, u64) {
    match (step_adjusted, kind) {
        (false, _) | (true, OptimizerKind::Adam) => (1, 1),
        (true, OptimizerKind::DiagGgn) => (1, 2),
        (true, OptimizerKind::Kfac) => (3, 10),
    }
}

/// Gradient steps per interval of `interval_env_steps` environment steps.
pub fn gradient_schedule(
    kind: OptimizerKind,
    step_adjusted: bool,
    interval_env_steps: usize,
) -> usize {
    let (num, den) = gradient_fraction(kind, step_adjusted);
    (interval_env_steps as u64 * num / den) as usize
}

/// Integer accumulator spreading `num/den` updates per environment step
/// evenly over an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateSchedule {
    num: u64,
    den: u64,
    acc: u64,
}

impl UpdateSchedule {
    pub fn new(kind: OptimizerKind, step_adjusted: bool) -> Self {
        let (num, den) = gradient_fraction(kind, step_adjusted);
        Self { num, den, acc: 0 }
    }

    /// Advances one environment step; true when an update fires.
    pub fn tick(&mut self) -> bool {
        self.acc += self.num;
        if self.acc >= self.den {
            self.acc -= self.den;
            true
        } else {
            false
        }
    }
}

/// How members get their first hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum HyperInit {
    Sampled(InitRanges),
    /// Same values for every member.
    Fixed(HyperparamSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationConfig {
    pub env: EnvKind,
    /// Member kinds in id order, e.g. `[(Adam, 6), (Kfac, 2)]`.
    pub composition: Vec<(OptimizerKind, usize)>,
    pub perturbation_interval: usize,
    pub intervals: usize,
    pub exploit_top_fraction: f64,
    pub exploit_bottom_fraction: f64,
    pub step_adjusted: bool,
    pub seed: u64,
    /// Uniform-random-action steps before the first interval, not counted
    /// towards any interval.
    pub warmup_steps: usize,
    pub eval_steps: usize,
    pub td3: Td3Params,
    pub init: HyperInit,
    pub bounds: HyperBounds,
    /// Worker cap; `None` defers to [`thread_limit`].
    pub threads: Option<usize>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Pendulum,
            composition: vec![(OptimizerKind::Adam, 8)],
            perturbation_interval: 10_000,
            intervals: 20,
            exploit_top_fraction: 0.2,
            exploit_bottom_fraction: 0.2,
            step_adjusted: false,
            seed: 0,
            warmup_steps: 1_000,
            eval_steps: 20_000,
            td3: Td3Params::default(),
            init: HyperInit::Sampled(InitRanges::default()),
            bounds: HyperBounds::default(),
            threads: None,
        }
    }
}

impl PopulationConfig {
    pub fn size(&self) -> usize {
        self.composition.iter().map(|&(_, c)| c).sum()
    }

    /// Kinds in id order.
    pub fn kinds(&self) -> Vec<OptimizerKind> {
        self.composition
            .iter()
            .flat_map(|&(k, c)| std::iter::repeat_n(k, c))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        let n = self.size();
        if n == 0 {
            return fail("population is empty".into());
        }
        if self.perturbation_interval == 0 {
            return fail("perturbation_interval must be > 0".into());
        }
        for (name, f) in [
            ("exploit_top_fraction", self.exploit_top_fraction),
            ("exploit_bottom_fraction", self.exploit_bottom_fraction),
        ] {
            if !(f > 0.0 && f <= 0.5) {
                return fail(format!("{name} must lie in (0, 0.5], got {f}"));
            }
        }
        if n >= 2
            && exploit_count(n, self.exploit_top_fraction)
                + exploit_count(n, self.exploit_bottom_fraction)
                > n
        {
            return fail(format!("top and bottom quantiles overlap for N = {n}"));
        }
        if self.eval_steps == 0 {
            return fail("eval_steps must be > 0".into());
        }
        Ok(())
    }
}

/// `max(1, round(fraction · n))`.
pub fn exploit_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMode {
    SameOptimizer,
    CrossOptimizer,
}

impl TransferMode {
    pub fn between(src: OptimizerKind, dst: OptimizerKind) -> Self {
        if src == dst {
            TransferMode::SameOptimizer
        } else {
            TransferMode::CrossOptimizer
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransferMode::SameOptimizer => "same",
            TransferMode::CrossOptimizer => "cross",
        }
    }
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transfer {
    pub src: usize,
    pub dst: usize,
    pub mode: TransferMode,
}

/// Transfers ordered by destination id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TransferPlan {
    pub transfers: Vec<Transfer>,
}

/// Ids by descending fitness; ties go to the lower id, NaN counts as `-inf`.
pub fn rank(fitness: &[f64]) -> Vec<usize> {
    let key = |i: usize| {
        if fitness[i].is_nan() {
            f64::NEG_INFINITY
        } else {
            fitness[i]
        }
    };
    let mut ids: Vec<usize> = (0..fitness.len()).collect();
    ids.sort_by(|&a, &b| key(b).partial_cmp(&key(a)).expect("NaN mapped away"));
    ids
}

/// Bottom-quantile members each draw a source uniformly from the top
/// quantile. Draws are made in ascending destination id.
pub fn plan_exploit(
    fitness: &[f64],
    kinds: &[OptimizerKind],
    top_fraction: f64,
    bottom_fraction: f64,
    rng: &mut impl RngCore,
) -> TransferPlan {
    let n = fitness.len();
    assert_eq!(kinds.len(), n);
    if n < 2 {
        return TransferPlan::default();
    }
    let order = rank(fitness);
    let k_top = exploit_count(n, top_fraction).min(n / 2);
    let k_bot = exploit_count(n, bottom_fraction).min(n - k_top);
    let top = &order[..k_top];
    let mut bottom = order[n - k_bot..].to_vec();
    bottom.sort_unstable();
    let transfers = bottom
        .into_iter()
        .map(|dst| {
            let src = *top.choose(rng).expect("top quantile non-empty");
            Transfer {
                src,
                dst,
                mode: TransferMode::between(kinds[src], kinds[dst]),
            }
        })
        .collect();
    TransferPlan { transfers }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LineageEvent {
    Created {
        hyper: HyperparamSet,
    },
    Received {
        src: usize,
        mode: TransferMode,
        before: HyperparamSet,
        after: HyperparamSet,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineageRecord {
    pub interval: usize,
    pub event: LineageEvent,
}

pub struct PopulationMember {
    pub id: usize,
    pub agent: Td3Agent,
    pub replay: ReplayBuffer,
    pub env: Box<dyn Environment>,
    pub rng: ChaCha8Rng,
    /// Mean return of the episodes completed in the last interval, or `-inf`.
    pub fitness: f64,
    pub lineage: Vec<LineageRecord>,
    obs: Vec<f64>,
}

impl Clone for PopulationMember {
    fn clone(&self) -> Self {
        Self {
            id: self.id,
            agent: self.agent.clone(),
            replay: self.replay.clone(),
            env: self.env.boxed_clone(),
            rng: self.rng.clone(),
            fitness: self.fitness,
            lineage: self.lineage.clone(),
            obs: self.obs.clone(),
        }
    }
}

impl fmt::Debug for PopulationMember {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PopulationMember")
            .field("id", &self.id)
            .field("kind", &self.agent.kind())
            .field("hyper", &self.agent.hyper)
            .field("fitness", &self.fitness)
            .field("replay_len", &self.replay.len())
            .finish()
    }
}

impl PopulationMember {
    /// Builds a member with its own random stream `(seed, 1 + id)`, from
    /// which the network initialization and environment seeds are drawn.
    pub fn new(
        id: usize,
        kind: OptimizerKind,
        hyper: HyperparamSet,
        env: Box<dyn Environment>,
        params: Td3Params,
        bounds: &HyperBounds,
        seed: u64,
    ) -> Result<Self> {
        hyper.validate(kind, bounds)?;
        let mut rng = member_rng(seed, id);
        let agent_seed = rng.next_u64();
        let env_seed = rng.next_u64();
        let capacity = params.replay_capacity;
        let agent = Td3Agent::new(kind, hyper.clone(), params, env.spec(), agent_seed)?;
        let (od, ad) = agent.dims();
        let mut env = env;
        env.reseed(env_seed);
        let obs = env.reset();
        Ok(Self {
            id,
            agent,
            replay: ReplayBuffer::new(capacity, od, ad),
            env,
            rng,
            fitness: f64::NEG_INFINITY,
            lineage: vec![LineageRecord {
                interval: 0,
                event: LineageEvent::Created { hyper },
            }],
            obs,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.agent.kind()
    }

    fn record(&mut self, obs: Vec<f64>, action: Vec<f64>) -> Option<f64> {
        let out = self.env.step(&action);
        self.replay.push(&Transition {
            obs,
            action,
            reward: out.reward,
            next_obs: out.obs.clone(),
            done: out.terminated,
        });
        if out.done() {
            let ret = self.env.episode_return();
            self.obs = self.env.reset();
            Some(ret)
        } else {
            self.obs = out.obs;
            None
        }
    }

    /// Uniform random actions, stored in replay; no updates.
    pub fn warmup(&mut self, steps: usize) {
        for _ in 0..steps {
            let action = self.agent.random_action(&mut self.rng);
            let obs = std::mem::take(&mut self.obs);
            self.record(obs, action);
        }
    }

    /// Runs `env_steps` exploring steps, updating per `schedule`. Sets and
    /// returns the fitness.
    pub fn run_interval(
        &mut self,
        env_steps: usize,
        mut schedule: UpdateSchedule,
    ) -> Result<IntervalStats> {
        let mut returns = Vec::new();
        let mut grad_steps = 0;
        let skipped_before = self.agent.skipped_steps;
        for _ in 0..env_steps {
            let obs = std::mem::take(&mut self.obs);
            let action = self.agent.select_action(&obs, true, &mut self.rng)?;
            if let Some(ret) = self.record(obs, action) {
                returns.push(ret);
            }
            if schedule.tick() && self.replay.len() >= self.agent.hyper.batch_size {
                self.agent.update(&self.replay, &mut self.rng)?;
                grad_steps += 1;
            }
        }
        self.fitness = if returns.is_empty() {
            f64::NEG_INFINITY
        } else {
            returns.iter().sum::<f64>() / returns.len() as f64
        };
        Ok(IntervalStats {
            fitness: self.fitness,
            episodes: returns.len(),
            grad_steps,
            skipped_steps: self.agent.skipped_steps - skipped_before,
        })
    }

    /// Starts a fresh episode in the member's training environment.
    pub fn restart_episode(&mut self) {
        self.obs = self.env.reset();
    }
}

fn member_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + id as u64);
    rng
}

/// The orchestrator's stream for exploit and perturbation draws.
pub fn orchestrator_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalStats {
    pub fitness: f64,
    pub episodes: usize,
    pub grad_steps: usize,
    pub skipped_steps: u64,
}

/// Exploit/explore from `src` into `dst`.
///
/// Same-optimizer transfers copy weights, replay and hyperparameters;
/// cross-optimizer transfers copy weights and replay only. The destination's
/// resulting hyperparameters are then perturbed, its optimizer state reset,
/// and a new training episode started.
pub fn transfer(
    src: &PopulationMember,
    dst: &mut PopulationMember,
    mode: TransferMode,
    interval: usize,
    bounds: &HyperBounds,
    rng: &mut impl RngCore,
) -> Result<()> {
    ensure!(
        src.id != dst.id,
        "member {} cannot transfer into itself",
        src.id
    );
    ensure!(
        mode == TransferMode::between(src.kind(), dst.kind()),
        "{mode} transfer between {} and {}",
        src.kind(),
        dst.kind()
    );
    let before = dst.agent.hyper.clone();
    dst.agent.copy_weights_from(&src.agent);
    dst.replay.clone_from(&src.replay);
    let base = match mode {
        TransferMode::SameOptimizer => src.agent.hyper.clone(),
        TransferMode::CrossOptimizer => before.clone(),
    };
    let after = perturb(&base, dst.kind(), bounds, rng);
    dst.agent.hyper = after.clone();
    dst.agent.reset_optimizers();
    dst.restart_episode();
    dst.lineage.push(LineageRecord {
        interval,
        event: LineageEvent::Received {
            src: src.id,
            mode,
            before,
            after,
        },
    });
    Ok(())
}

/// Applies a plan in order. Sources are read before any destination is
/// written, so the plan must not reuse a destination as a source.
pub fn apply_plan(
    members: &mut [PopulationMember],
    plan: &TransferPlan,
    interval: usize,
    bounds: &HyperBounds,
    rng: &mut impl RngCore,
) -> Result<()> {
    for t in &plan.transfers {
        ensure!(
            !plan.transfers.iter().any(|o| o.dst == t.src),
            "member {} is both a source and a destination",
            t.src
        );
    }
    for t in &plan.transfers {
        let src = members[t.src].clone();
        transfer(&src, &mut members[t.dst], t.mode, interval, bounds, rng)?;
    }
    Ok(())
}

/// One row per member per interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRow {
    pub interval: usize,
    pub id: usize,
    pub kind: OptimizerKind,
    pub fitness: f64,
    pub episodes: usize,
    pub grad_steps: usize,
    pub skipped_steps: u64,
    /// Hyperparameters used during the interval.
    pub hyper: HyperparamSet,
    /// Transfer received at the end of the interval.
    pub received: Option<(usize, TransferMode)>,
}

/// Passed to the barrier observer after ranking and exploit.
pub struct BarrierView<'a> {
    pub interval: usize,
    pub rows: &'a [IntervalRow],
    /// Members after training, before the transfer in `plan` was applied.
    pub members: &'a [PopulationMember],
    pub plan: &'a TransferPlan,
    pub is_final: bool,
}

#[derive(Debug, Clone)]
pub struct PbtRun {
    pub members: Vec<PopulationMember>,
    pub history: Vec<IntervalRow>,
    pub plans: Vec<TransferPlan>,
    /// Top-ranked member after the final interval.
    pub best_id: usize,
    /// Deterministic-policy return of the best member.
    pub final_eval: f64,
}

pub fn build_population(config: &PopulationConfig) -> Result<Vec<PopulationMember>> {
    config.validate()?;
    let mut init_rng = {
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        r.set_stream(u64::MAX);
        r
    };
    config
        .kinds()
        .into_iter()
        .enumerate()
        .map(|(id, kind)| {
            let hyper = match &config.init {
                HyperInit::Sampled(ranges) => ranges.sample(kind, &mut init_rng),
                HyperInit::Fixed(h) => h.clone(),
            };
            PopulationMember::new(
                id,
                kind,
                hyper,
                config.env.make(0),
                config.td3.clone(),
                &config.bounds,
                config.seed,
            )
        })
        .collect()
}

/// Full PBT loop. `observer` runs single-threaded at every barrier; an
/// error it returns aborts the run.
pub fn run_pbt(
    config: &PopulationConfig,
    observer: impl FnMut(&BarrierView<'_>) -> Result<()>,
) -> Result<PbtRun> {
    let members = build_population(config)?;
    run_members(config, members, observer)
}

/// [`run_pbt`] over prebuilt members; `config.env` and `config.composition`
/// are ignored in favour of the members' own environments and kinds.
pub fn run_members(
    config: &PopulationConfig,
    mut members: Vec<PopulationMember>,
    mut observer: impl FnMut(&BarrierView<'_>) -> Result<()>,
) -> Result<PbtRun> {
    ensure!(!members.is_empty(), "population is empty");
    ensure!(
        members.iter().enumerate().all(|(i, m)| m.id == i),
        "member ids must be 0..N in order"
    );
    let threads = config.threads.unwrap_or_else(thread_limit).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let mut orch = orchestrator_rng(config.seed);
    let kinds: Vec<OptimizerKind> = members.iter().map(|m| m.kind()).collect();
    let mut history = Vec::new();
    let mut plans = Vec::new();

    let warmup = config.warmup_steps;
    pool.install(|| {
        members.par_iter_mut().for_each(|m| m.warmup(warmup));
    });

    for interval in 0..config.intervals {
        let steps = config.perturbation_interval;
        let adjusted = config.step_adjusted;
        let results: Vec<std::result::Result<Result<IntervalStats>, String>> = pool.install(|| {
            members
                .par_iter_mut()
                .map(|m| {
                    let schedule = UpdateSchedule::new(m.kind(), adjusted);
                    catch_unwind(AssertUnwindSafe(|| m.run_interval(steps, schedule)))
                        .map_err(panic_message)
                })
                .collect()
        });
        let mut rows = Vec::with_capacity(members.len());
        for (m, res) in members.iter().zip(results) {
            let stats = match res {
                Ok(Ok(s)) => s,
                Ok(Err(e)) => return Err(e),
                Err(message) => {
                    return Err(Error::WorkerPanic {
                        member: m.id,
                        interval,
                        message,
                    })
                }
            };
            rows.push(IntervalRow {
                interval,
                id: m.id,
                kind: m.kind(),
                fitness: stats.fitness,
                episodes: stats.episodes,
                grad_steps: stats.grad_steps,
                skipped_steps: stats.skipped_steps,
                hyper: m.agent.hyper.clone(),
                received: None,
            });
        }
        let is_final = interval + 1 == config.intervals;
        let plan = if is_final {
            TransferPlan::default()
        } else {
            let fitness: Vec<f64> = members.iter().map(|m| m.fitness).collect();
            plan_exploit(
                &fitness,
                &kinds,
                config.exploit_top_fraction,
                config.exploit_bottom_fraction,
                &mut orch,
            )
        };
        for t in &plan.transfers {
            rows[t.dst].received = Some((t.src, t.mode));
        }
        observer(&BarrierView {
            interval,
            rows: &rows,
            members: &members,
            plan: &plan,
            is_final,
        })?;
        apply_plan(&mut members, &plan, interval, &config.bounds, &mut orch)?;
        history.extend(rows);
        plans.push(plan);
    }

    let fitness: Vec<f64> = members.iter().map(|m| m.fitness).collect();
    let best_id = rank(&fitness)[0];
    let mut eval_env = members[best_id].env.boxed_clone();
    eval_env.reseed({
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        r.set_stream(u64::MAX - 1);
        r.next_u64()
    });
    let final_eval = evaluate(
        &members[best_id].agent,
        eval_env.as_mut(),
        config.eval_steps,
    )?;
    Ok(PbtRun {
        members,
        history,
        plans,
        best_id,
        final_eval,
    })
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&[3.0, 1.0, 2.0]), vec![0, 2, 1]);
        assert_eq!(rank(&[2.0, 2.0]), vec![0, 1]);
        assert_eq!(rank(&[f64::NEG_INFINITY, -1e9, 5.0]), vec![2, 1, 0]);
        assert_eq!(rank(&[f64::NAN, 0.0]), vec![1, 0]);
    }

    #[test]
    fn exploit_counts() {
        assert_eq!(exploit_count(8, 0.2), 2);
        assert_eq!(exploit_count(4, 0.2), 1);
        assert_eq!(exploit_count(2, 0.2), 1);
        assert_eq!(exploit_count(16, 0.2), 3);
    }

    #[test]
    fn two_members_transfer_deterministically() {
        let mut rng = orchestrator_rng(0);
        let kinds = [OptimizerKind::Adam, OptimizerKind::Kfac];
        let plan = plan_exploit(&[1.0, 5.0], &kinds, 0.2, 0.2, &mut rng);
        assert_eq!(
            plan.transfers,
            vec![Transfer {
                src: 1,
                dst: 0,
                mode: TransferMode::CrossOptimizer
            }]
        );
    }

    #[test]
    fn schedule_totals() {
        for (kind, expected) in [
            (OptimizerKind::Adam, 10_000),
            (OptimizerKind::DiagGgn, 5_000),
            (OptimizerKind::Kfac, 3_000),
        ] {
            assert_eq!(gradient_schedule(kind, true, 10_000), expected);
            assert_eq!(gradient_schedule(kind, false, 10_000), 10_000);
            let mut s = UpdateSchedule::new(kind, true);
            assert_eq!((0..10_000).filter(|_| s.tick()).count(), expected);
        }
    }

    #[test]
    fn kfac_schedule_is_evenly_spread() {
        let mut s = UpdateSchedule::new(OptimizerKind::Kfac, true);
        let fired: Vec<bool> = (0..10).map(|_| s.tick()).collect();
        assert_eq!(fired.iter().filter(|&&f| f).count(), 3);
        // never two updates in consecutive steps at a 0.3 rate
        assert!(fired.windows(2).all(|w| !(w[0] && w[1])));
    }
}
