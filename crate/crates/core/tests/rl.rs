mod oracle;

use popforge::checkpoint::{self, sha256_hex};
use popforge::envs::{ConstantReward, EnvKind, EnvSpec, Environment, PointMass, StepOutcome};
use popforge::linalg::Matrix;
use popforge::optim::{HyperBounds, NetOptimizer};
use popforge::pbt::{
    apply_plan, run_members, run_pbt, HyperInit, LineageEvent, PopulationConfig, PopulationMember,
    Transfer, TransferMode, TransferPlan, UpdateSchedule,
};
use popforge::td3::{evaluate_policy, ReplayBuffer, Td3Agent, Td3Params, Transition};
use popforge::{Error, HyperparamSet, OptimizerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_td3() -> Td3Params {
    Td3Params {
        hidden: vec![8],
        replay_capacity: 5_000,
        ..Td3Params::default()
    }
}

fn hyper(kind: OptimizerKind, lr: f64) -> HyperparamSet {
    let damping = match kind {
        OptimizerKind::Adam => None,
        OptimizerKind::DiagGgn => Some(0.1),
        OptimizerKind::Kfac => Some(2.0),
    };
    HyperparamSet {
        lr_actor: lr,
        lr_critic: lr,
        batch_size: 64,
        damping,
    }
}

fn member(id: usize, kind: OptimizerKind, lr: f64, env: Box<dyn Environment>) -> PopulationMember {
    PopulationMember::new(
        id,
        kind,
        hyper(kind, lr),
        env,
        small_td3(),
        &HyperBounds::default(),
        9,
    )
    .unwrap()
}

#[test]
fn critic_converges_to_geometric_fixed_point() {
    let env = ConstantReward::new(1.0, usize::MAX);
    let params = Td3Params {
        hidden: vec![16, 16],
        gamma: 0.5,
        replay_capacity: 1000,
        ..Td3Params::default()
    };
    let h = HyperparamSet {
        lr_actor: 1e-3,
        lr_critic: 3e-3,
        batch_size: 64,
        damping: None,
    };
    let mut agent = Td3Agent::new(OptimizerKind::Adam, h, params, env.spec(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut buf = ReplayBuffer::new(1000, 1, 1);
    for _ in 0..1000 {
        buf.push(&Transition {
            obs: vec![1.0],
            action: vec![rng.gen_range(-1.0..1.0)],
            reward: 1.0,
            next_obs: vec![1.0],
            done: false,
        });
    }
    for _ in 0..2000 {
        agent.update(&buf, &mut rng).unwrap();
    }
    for a in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let q = agent
            .critic1
            .forward(&Matrix::new(1, 2, vec![1.0, a]).unwrap())
            .unwrap()[(0, 0)];
        assert!((q - 2.0).abs() <= 0.1, "Q(1, {a}) = {q}");
    }
}

#[test]
fn lqr_policy_evaluates_to_riccati_value() {
    let (a, b) = PointMass::dynamics();
    let q = [[PointMass::Q_POS, 0.0], [0.0, PointMass::Q_VEL]];
    let (p, k) = oracle::riccati(a, b, q, PointMass::R_ACT, 1.0);
    // the library's solver agrees with the oracle
    let lib = popforge::envs::lqr::solve_pointmass(1.0);
    for i in 0..2 {
        assert!((lib.k[i] - k[i]).abs() < 1e-8);
    }
    let x0 = 0.1;
    let mut env = PointMass::with_fixed_start(x0, 0.0);
    let ret = evaluate_policy(&mut env, 200, |s| Ok(vec![-(k[0] * s[0] + k[1] * s[1])])).unwrap();
    let value = -p[0][0] * x0 * x0;
    assert!(
        ((ret - value) / value).abs() < 0.05,
        "return {ret} vs value {value}"
    );
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(20, 1, 1);
    for k in 0..20 {
        buf.push(&Transition {
            obs: vec![k as f64],
            action: vec![0.0],
            reward: 0.0,
            next_obs: vec![0.0],
            done: false,
        });
    }
    let draws = 20_000;
    let mut counts = [0usize; 20];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in buf.sample_indices(draws, &mut rng) {
        counts[i] += 1;
    }
    let p = 1.0 / 20.0;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!(
            (c as f64 - mean).abs() <= 3.0 * sigma,
            "count {c}, mean {mean}, sigma {sigma}"
        );
    }
}

fn filled(id: usize, kind: OptimizerKind, lr: f64) -> PopulationMember {
    let mut m = member(id, kind, lr, EnvKind::Pendulum.make(0));
    m.warmup(150);
    m.run_interval(100, UpdateSchedule::new(kind, false))
        .unwrap();
    m
}

fn probe_states() -> Matrix<f64> {
    Matrix::from_rows(&[
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, -2.0],
        vec![-0.6, 0.8, 3.0],
    ])
    .unwrap()
}

#[test]
fn same_optimizer_transfer_copies_everything_then_perturbs() {
    let src = filled(0, OptimizerKind::Adam, 1e-3);
    let mut dst = filled(1, OptimizerKind::Adam, 5e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    popforge::pbt::transfer(
        &src,
        &mut dst,
        TransferMode::SameOptimizer,
        0,
        &HyperBounds::default(),
        &mut rng,
    )
    .unwrap();
    assert_eq!(dst.agent.networks(), src.agent.networks());
    assert_eq!(dst.replay, src.replay);
    assert_eq!(
        dst.agent.policy(&probe_states()).unwrap(),
        src.agent.policy(&probe_states()).unwrap()
    );
    for (got, base) in [
        (dst.agent.hyper.lr_actor, 1e-3),
        (dst.agent.hyper.lr_critic, 1e-3),
    ] {
        let r = got / base;
        assert!(
            (r - 0.8).abs() < 1e-12 || (r - 1.2).abs() < 1e-12,
            "ratio {r}"
        );
    }
    assert!(matches!(&dst.agent.opt_actor, NetOptimizer::Adam(s) if s.t == 0));
    assert!(matches!(
        dst.lineage.last().unwrap().event,
        LineageEvent::Received {
            src: 0,
            mode: TransferMode::SameOptimizer,
            ..
        }
    ));
}

#[test]
fn cross_optimizer_transfer_keeps_own_hyperparameters() {
    let src = filled(0, OptimizerKind::Adam, 1e-3);
    let mut dst = filled(1, OptimizerKind::Kfac, 5e-2);
    dst.agent.hyper.damping = Some(1.1);
    let before = dst.agent.hyper.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    popforge::pbt::transfer(
        &src,
        &mut dst,
        TransferMode::CrossOptimizer,
        3,
        &HyperBounds::default(),
        &mut rng,
    )
    .unwrap();
    assert_eq!(dst.kind(), OptimizerKind::Kfac);
    assert_eq!(dst.agent.networks(), src.agent.networks());
    assert_eq!(dst.replay, src.replay);
    let r = dst.agent.hyper.lr_actor / before.lr_actor;
    assert!((r - 0.8).abs() < 1e-12 || (r - 1.2).abs() < 1e-12);
    let d = dst.agent.hyper.damping.unwrap();
    assert!(d == 1.0 || (d - 1.1 * 1.2).abs() < 1e-12, "damping {d}");
    assert!(matches!(&dst.agent.opt_critic1, NetOptimizer::Kfac(s) if s.blocks.is_none()));
    // mode must agree with kinds
    let err = popforge::pbt::transfer(
        &src,
        &mut dst,
        TransferMode::SameOptimizer,
        3,
        &HyperBounds::default(),
        &mut rng,
    );
    assert!(err.is_err());
}

#[test]
fn plans_conserve_composition() {
    let mut members: Vec<PopulationMember> = [
        OptimizerKind::Adam,
        OptimizerKind::Kfac,
        OptimizerKind::DiagGgn,
        OptimizerKind::Adam,
    ]
    .into_iter()
    .enumerate()
    .map(|(i, k)| filled(i, k, if k == OptimizerKind::Adam { 1e-3 } else { 1e-2 }))
    .collect();
    let kinds_before: Vec<_> = members.iter().map(|m| m.kind()).collect();
    let plan = TransferPlan {
        transfers: vec![
            Transfer {
                src: 1,
                dst: 0,
                mode: TransferMode::CrossOptimizer,
            },
            Transfer {
                src: 1,
                dst: 3,
                mode: TransferMode::CrossOptimizer,
            },
        ],
    };
    apply_plan(
        &mut members,
        &plan,
        0,
        &HyperBounds::default(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert_eq!(
        members.iter().map(|m| m.kind()).collect::<Vec<_>>(),
        kinds_before
    );
    assert_eq!(members[0].agent.networks(), members[1].agent.networks());
    let chained = TransferPlan {
        transfers: vec![
            Transfer {
                src: 0,
                dst: 3,
                mode: TransferMode::SameOptimizer,
            },
            Transfer {
                src: 1,
                dst: 0,
                mode: TransferMode::CrossOptimizer,
            },
        ],
    };
    assert!(apply_plan(
        &mut members,
        &chained,
        1,
        &HyperBounds::default(),
        &mut ChaCha8Rng::seed_from_u64(0)
    )
    .is_err());
}

#[test]
fn fitness_on_constant_reward_is_the_episode_return() {
    let mut m = member(
        0,
        OptimizerKind::Adam,
        1e-3,
        Box::new(ConstantReward::new(1.0, 50)),
    );
    m.warmup(64);
    // the warm-up left a partial episode of 14 steps; it completes inside the interval
    let stats = m
        .run_interval(236, UpdateSchedule::new(OptimizerKind::Adam, false))
        .unwrap();
    assert_eq!(stats.fitness, 50.0);
    assert_eq!(stats.episodes, 5);
    let short = m
        .run_interval(10, UpdateSchedule::new(OptimizerKind::Adam, false))
        .unwrap();
    assert_eq!(short.fitness, f64::NEG_INFINITY);
}

fn tiny_config(
    composition: Vec<(OptimizerKind, usize)>,
    intervals: usize,
    seed: u64,
) -> PopulationConfig {
    PopulationConfig {
        env: EnvKind::Pendulum,
        composition,
        perturbation_interval: 200,
        intervals,
        warmup_steps: 100,
        eval_steps: 200,
        seed,
        td3: small_td3(),
        init: HyperInit::Sampled(popforge::optim::InitRanges {
            batch_choices: vec![64],
            ..Default::default()
        }),
        threads: Some(1),
        ..PopulationConfig::default()
    }
}

#[test]
fn single_interval_budget_never_exploits() {
    let run = run_pbt(&tiny_config(vec![(OptimizerKind::Adam, 4)], 1, 0), |_| {
        Ok(())
    })
    .unwrap();
    assert_eq!(run.plans, vec![TransferPlan::default()]);
    assert!(run.members.iter().all(|m| m.lineage.len() == 1));
    assert_eq!(run.history.len(), 4);
}

#[test]
fn mixed_population_records_transfers() {
    let cfg = tiny_config(
        vec![(OptimizerKind::Adam, 6), (OptimizerKind::Kfac, 2)],
        5,
        0,
    );
    let run = run_pbt(&cfg, |_| Ok(())).unwrap();
    let transfers: usize = run
        .members
        .iter()
        .map(|m| {
            m.lineage
                .iter()
                .filter(|r| matches!(r.event, LineageEvent::Received { .. }))
                .count()
        })
        .sum();
    assert!(transfers >= 1);
    assert_eq!(
        transfers,
        run.plans.iter().map(|p| p.transfers.len()).sum::<usize>()
    );
    // rows ordered by (interval, id)
    let keys: Vec<(usize, usize)> = run.history.iter().map(|r| (r.interval, r.id)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    let kinds: Vec<_> = run.members.iter().map(|m| m.kind()).collect();
    assert_eq!(
        kinds.iter().filter(|&&k| k == OptimizerKind::Kfac).count(),
        2
    );
}

#[test]
fn seeded_runs_repeat_exactly_under_any_thread_count() {
    let hashes = |threads: usize| {
        let mut cfg = tiny_config(
            vec![
                (OptimizerKind::Adam, 2),
                (OptimizerKind::DiagGgn, 1),
                (OptimizerKind::Kfac, 1),
            ],
            3,
            7,
        );
        cfg.threads = Some(threads);
        let run = run_pbt(&cfg, |_| Ok(())).unwrap();
        let h: Vec<String> = run
            .members
            .iter()
            .map(|m| sha256_hex(&checkpoint::encode(&m.agent, &m.replay)))
            .collect();
        (
            h,
            run.plans,
            run.history
                .iter()
                .map(|r| r.fitness.to_bits())
                .collect::<Vec<_>>(),
            run.final_eval.to_bits(),
        )
    };
    let a = hashes(1);
    assert_eq!(a, hashes(1));
    assert_eq!(a, hashes(3));
}

#[test]
fn checkpoints_round_trip_real_members() {
    let m = filled(0, OptimizerKind::Kfac, 1e-2);
    let bytes = checkpoint::encode(&m.agent, &m.replay);
    let (agent, replay) = checkpoint::decode(&bytes, &m.agent, 5_000).unwrap();
    assert_eq!(agent.networks(), m.agent.networks());
    assert_eq!(replay.len(), m.replay.len());
    assert_eq!(
        sha256_hex(&checkpoint::encode(&agent, &replay)),
        sha256_hex(&bytes)
    );
}

#[derive(Clone)]
struct Exploding {
    spec: EnvSpec,
    steps: usize,
}

impl Environment for Exploding {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }
    fn reseed(&mut self, _seed: u64) {}
    fn reset(&mut self) -> Vec<f64> {
        vec![0.0]
    }
    fn step(&mut self, _action: &[f64]) -> StepOutcome {
        self.steps += 1;
        if self.steps > 120 {
            panic!("simulator diverged");
        }
        StepOutcome {
            obs: vec![0.0],
            reward: 0.0,
            terminated: false,
            truncated: self.steps.is_multiple_of(10),
        }
    }
    fn observation(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn steps_taken(&self) -> usize {
        self.steps
    }
    fn episode_return(&self) -> f64 {
        0.0
    }
    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

#[test]
fn worker_panic_aborts_with_member_and_interval() {
    let spec = EnvSpec {
        name: "exploding",
        obs_dim: 1,
        action_dim: 1,
        action_bound: 1.0,
        episode_limit: 10,
    };
    let members = vec![
        member(
            0,
            OptimizerKind::Adam,
            1e-3,
            Box::new(ConstantReward::new(0.0, 10)),
        ),
        member(
            1,
            OptimizerKind::Adam,
            1e-3,
            Box::new(Exploding { spec, steps: 0 }),
        ),
    ];
    let mut cfg = tiny_config(vec![(OptimizerKind::Adam, 2)], 3, 0);
    cfg.warmup_steps = 64;
    cfg.perturbation_interval = 50;
    let mut barriers = 0;
    let err = run_members(&cfg, members, |_| {
        barriers += 1;
        Ok(())
    })
    .unwrap_err();
    assert_eq!(barriers, 1);
    match err {
        Error::WorkerPanic {
            member,
            interval,
            message,
        } => {
            assert_eq!((member, interval), (1, 1));
            assert!(message.contains("diverged"));
        }
        other => panic!("unexpected error {other}"),
    }
}
