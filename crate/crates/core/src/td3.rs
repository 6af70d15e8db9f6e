//! TD3 agent: twin critics, delayed policy updates, target policy smoothing.
//!
//! All six networks of an agent are trained with the agent's single
//! [`OptimizerKind`].

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::envs::{EnvSpec, Environment};
use crate::error::{ensure, Error, Result};
use crate::linalg::Matrix;
use crate::loss::LossKind;
use crate::net::{Activation, NetworkParams};
use crate::optim::{HyperparamSet, NetOptimizer, Objective, OptimizerKind};

type Net = NetworkParams<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Terminal (not time-limit) flag; stops bootstrapping.
    pub done: bool,
}

/// Fixed-capacity ring buffer of transitions stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    dones: Vec<bool>,
    cursor: usize,
    len: usize,
}

/// A sampled minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Matrix<f64>,
    pub actions: Matrix<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Matrix<f64>,
    pub dones: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            obs_dim,
            act_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
            cursor: 0,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.obs_dim, self.act_dim)
    }

    pub fn push(&mut self, t: &Transition) {
        assert_eq!(t.obs.len(), self.obs_dim, "transition obs dim");
        assert_eq!(t.next_obs.len(), self.obs_dim, "transition next_obs dim");
        assert_eq!(t.action.len(), self.act_dim, "transition action dim");
        if self.len < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.dones.push(t.done);
            self.len += 1;
        } else {
            let i = self.cursor;
            self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(&t.obs);
            self.actions[i * self.act_dim..(i + 1) * self.act_dim].copy_from_slice(&t.action);
            self.rewards[i] = t.reward;
            self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(&t.next_obs);
            self.dones[i] = t.done;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Transition at storage slot `i`.
    pub fn get(&self, i: usize) -> Transition {
        assert!(i < self.len);
        Transition {
            obs: self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].to_vec(),
            action: self.actions[i * self.act_dim..(i + 1) * self.act_dim].to_vec(),
            reward: self.rewards[i],
            next_obs: self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim].to_vec(),
            done: self.dones[i],
        }
    }

    /// Transitions from oldest to newest.
    pub fn iter_chronological(&self) -> impl Iterator<Item = Transition> + '_ {
        let start = if self.len < self.capacity {
            0
        } else {
            self.cursor
        };
        (0..self.len).map(move |k| self.get((start + k) % self.len))
    }

    /// Uniform sampling with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        (0..batch).map(|_| rng.gen_range(0..self.len)).collect()
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let n = idx.len();
        let (od, ad) = (self.obs_dim, self.act_dim);
        let mut obs = Vec::with_capacity(n * od);
        let mut actions = Vec::with_capacity(n * ad);
        let mut next_obs = Vec::with_capacity(n * od);
        for &i in idx {
            obs.extend_from_slice(&self.obs[i * od..(i + 1) * od]);
            actions.extend_from_slice(&self.actions[i * ad..(i + 1) * ad]);
            next_obs.extend_from_slice(&self.next_obs[i * od..(i + 1) * od]);
        }
        Batch {
            obs: Matrix::new(n, od, obs).expect("sized"),
            actions: Matrix::new(n, ad, actions).expect("sized"),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            next_obs: Matrix::new(n, od, next_obs).expect("sized"),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        ensure!(
            self.len >= batch && batch > 0,
            "cannot sample {batch} transitions from a buffer of {}",
            self.len
        );
        Ok(self.gather(&self.sample_indices(batch, rng)))
    }
}

/// Fixed TD3 settings that PBT does not tune.
#[derive(Debug, Clone, PartialEq)]
pub struct Td3Params {
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    /// Target policy smoothing noise, as a fraction of the action bound.
    pub target_noise: f64,
    pub noise_clip: f64,
    /// Behaviour-policy noise, as a fraction of the action bound.
    pub exploration_noise: f64,
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub kfac_decay: f64,
    pub replay_capacity: usize,
}

impl Default for Td3Params {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.2,
            noise_clip: 0.5,
            exploration_noise: 0.1,
            hidden: vec![64, 64],
            hidden_activation: Activation::Tanh,
            kfac_decay: 0.95,
            replay_capacity: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub critic1_loss: Option<f64>,
    pub critic2_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub actor_updated: bool,
    /// Optimizer steps that were skipped, with the network that failed.
    pub skipped: Vec<(&'static str, Error)>,
}

#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub actor: Net,
    pub critic1: Net,
    pub critic2: Net,
    pub actor_target: Net,
    pub critic1_target: Net,
    pub critic2_target: Net,
    pub opt_actor: NetOptimizer<f64>,
    pub opt_critic1: NetOptimizer<f64>,
    pub opt_critic2: NetOptimizer<f64>,
    kind: OptimizerKind,
    pub hyper: HyperparamSet,
    pub params: Td3Params,
    obs_dim: usize,
    act_dim: usize,
    action_bound: f64,
    /// Total gradient updates performed (including skipped ones).
    pub grad_steps: u64,
    pub skipped_steps: u64,
}

impl Td3Agent {
    /// Actor `obs → hidden → act` (tanh output scaled by the action bound);
    /// critics `[obs | act] → hidden → 1`. Each network gets its own
    /// initialization drawn from `seed`.
    pub fn new(
        kind: OptimizerKind,
        hyper: HyperparamSet,
        params: Td3Params,
        env: &EnvSpec,
        seed: u64,
    ) -> Result<Self> {
        ensure!(params.policy_delay > 0, "policy_delay must be positive");
        ensure!((0.0..=1.0).contains(&params.tau), "tau must lie in [0, 1]");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (od, ad) = (env.obs_dim, env.action_dim);
        let dims = |i: usize, o: usize| {
            let mut d = vec![i];
            d.extend_from_slice(&params.hidden);
            d.push(o);
            d
        };
        let act = params.hidden_activation;
        let actor = Net::init(&dims(od, ad), act, Activation::Tanh, &mut rng)?;
        let critic1 = Net::init(&dims(od + ad, 1), act, Activation::Identity, &mut rng)?;
        let critic2 = Net::init(&dims(od + ad, 1), act, Activation::Identity, &mut rng)?;
        let decay = params.kfac_decay;
        Ok(Self {
            opt_actor: NetOptimizer::fresh(kind, &actor, decay),
            opt_critic1: NetOptimizer::fresh(kind, &critic1, decay),
            opt_critic2: NetOptimizer::fresh(kind, &critic2, decay),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            kind,
            hyper,
            params,
            obs_dim: od,
            act_dim: ad,
            action_bound: env.action_bound,
            grad_steps: 0,
            skipped_steps: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn action_bound(&self) -> f64 {
        self.action_bound
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.obs_dim, self.act_dim)
    }

    /// Networks in checkpoint order: actor, critic1, critic2, then targets.
    pub fn networks(&self) -> [&Net; 6] {
        [
            &self.actor,
            &self.critic1,
            &self.critic2,
            &self.actor_target,
            &self.critic1_target,
            &self.critic2_target,
        ]
    }

    pub fn networks_mut(&mut self) -> [&mut Net; 6] {
        [
            &mut self.actor,
            &mut self.critic1,
            &mut self.critic2,
            &mut self.actor_target,
            &mut self.critic1_target,
            &mut self.critic2_target,
        ]
    }

    /// Copies all six networks from `other`.
    pub fn copy_weights_from(&mut self, other: &Td3Agent) {
        for (dst, src) in self.networks_mut().into_iter().zip(other.networks()) {
            dst.clone_from(src);
        }
    }

    /// Discards Adam moments and K-FAC statistics.
    pub fn reset_optimizers(&mut self) {
        let decay = self.params.kfac_decay;
        self.opt_actor = NetOptimizer::fresh(self.kind, &self.actor, decay);
        self.opt_critic1 = NetOptimizer::fresh(self.kind, &self.critic1, decay);
        self.opt_critic2 = NetOptimizer::fresh(self.kind, &self.critic2, decay);
    }

    /// Deterministic policy for a batch of observations.
    pub fn policy(&self, obs: &Matrix<f64>) -> Result<Matrix<f64>> {
        let mut out = self.actor.forward(obs)?;
        out.scale(self.action_bound);
        Ok(out)
    }

    /// `clip(actor(s) + 1[explore] N(0, σ), bounds)`.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        explore: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let input = Matrix::new(1, obs.len(), obs.to_vec())?;
        let mut a = self.policy(&input)?.into_vec();
        let bound = self.action_bound;
        if explore {
            let sigma = self.params.exploration_noise * bound;
            for x in &mut a {
                let n: f64 = rng.sample(StandardNormal);
                *x += sigma * n;
            }
        }
        a.iter_mut().for_each(|x| *x = x.clamp(-bound, bound));
        Ok(a)
    }

    pub fn random_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let b = self.action_bound;
        (0..self.act_dim).map(|_| rng.gen_range(-b..=b)).collect()
    }

    /// Smoothed target `y = r + γ (1 - done) min(Q1', Q2')(s', ã')`.
    pub fn compute_targets<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Vec<f64>> {
        let bound = self.action_bound;
        let mut next_a = self.actor_target.forward(&batch.next_obs)?;
        next_a.scale(bound);
        let sigma = self.params.target_noise * bound;
        let clip = self.params.noise_clip * bound;
        for a in next_a.as_mut_slice() {
            let n: f64 = rng.sample(StandardNormal);
            *a = (*a + (sigma * n).clamp(-clip, clip)).clamp(-bound, bound);
        }
        let input = batch.next_obs.hcat(&next_a);
        let q1 = self.critic1_target.forward(&input)?;
        let q2 = self.critic2_target.forward(&input)?;
        Ok((0..batch.rewards.len())
            .map(|i| {
                let not_done = if batch.dones[i] { 0.0 } else { 1.0 };
                batch.rewards[i] + self.params.gamma * not_done * q1[(i, 0)].min(q2[(i, 0)])
            })
            .collect())
    }

    /// One TD3 gradient update from a replay sample.
    ///
    /// A Cholesky failure in any optimizer step skips that step (the network
    /// keeps its parameters) and is reported in the record; the step counter
    /// still advances.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut R,
    ) -> Result<UpdateRecord> {
        let batch = buffer.sample(self.hyper.batch_size, rng)?;
        let y = self.compute_targets(&batch, rng)?;
        let targets = Matrix::new(y.len(), 1, y)?;
        let sa = batch.obs.hcat(&batch.actions);
        let lr_c = self.hyper.lr_critic;
        let damping = self.hyper.damping_or_zero();
        let mut skipped = Vec::new();
        let objective = Objective::Regression {
            targets: &targets,
            loss: LossKind::Mse,
        };

        let critic1_loss = skip_on_cholesky(
            self.opt_critic1
                .step(&mut self.critic1, &sa, objective, lr_c, damping),
            "critic1",
            &mut skipped,
        )?
        .flatten();
        let critic2_loss = skip_on_cholesky(
            self.opt_critic2
                .step(&mut self.critic2, &sa, objective, lr_c, damping),
            "critic2",
            &mut skipped,
        )?
        .flatten();

        self.grad_steps += 1;
        let mut actor_loss = None;
        let actor_updated = self.grad_steps.is_multiple_of(self.params.policy_delay);
        if actor_updated {
            let (loss, cotangent) = self.actor_objective(&batch.obs)?;
            actor_loss = Some(loss);
            skip_on_cholesky(
                self.opt_actor.step(
                    &mut self.actor,
                    &batch.obs,
                    Objective::OutputGradient(&cotangent),
                    self.hyper.lr_actor,
                    damping,
                ),
                "actor",
                &mut skipped,
            )?;
            let tau = self.params.tau;
            self.actor_target.polyak_from(&self.actor, tau);
            self.critic1_target.polyak_from(&self.critic1, tau);
            self.critic2_target.polyak_from(&self.critic2, tau);
        }
        self.skipped_steps += skipped.len() as u64;
        Ok(UpdateRecord {
            critic1_loss,
            critic2_loss,
            actor_loss,
            actor_updated,
            skipped,
        })
    }

    /// Actor loss `-mean Q1(s, π(s))` and its per-sample cotangent with
    /// respect to the actor's (unscaled) output.
    pub fn actor_objective(&self, obs: &Matrix<f64>) -> Result<(f64, Matrix<f64>)> {
        let bound = self.action_bound;
        let actions = self.policy(obs)?;
        let sa = obs.hcat(&actions);
        let cache = self.critic1.forward_cached(&sa)?;
        let n = obs.rows();
        let loss = -cache.output.as_slice().iter().sum::<f64>() / n as f64;
        let neg_ones = Matrix::from_fn(n, 1, |_, _| -1.0);
        let (_, input_grad) = self.critic1.preactivation_grads(&cache, &neg_ones)?;
        let mut cot = input_grad.col_range(self.obs_dim, self.obs_dim + self.act_dim);
        cot.scale(bound);
        Ok((loss, cot))
    }
}

fn skip_on_cholesky<T>(
    res: Result<T>,
    which: &'static str,
    skipped: &mut Vec<(&'static str, Error)>,
) -> Result<Option<T>> {
    match res {
        Ok(v) => Ok(Some(v)),
        Err(e @ Error::CholeskyFailure { .. }) => {
            log::warn!("{which} optimizer step skipped: {e}");
            skipped.push((which, e));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Mean return of the deterministic policy over the episodes completed in
/// `eval_steps` environment steps; a trailing partial episode is dropped.
/// Returns `-inf` when no episode completes.
pub fn evaluate(agent: &Td3Agent, env: &mut dyn Environment, eval_steps: usize) -> Result<f64> {
    evaluate_policy(env, eval_steps, |obs| {
        let input = Matrix::new(1, obs.len(), obs.to_vec())?;
        Ok(agent.policy(&input)?.into_vec())
    })
}

/// [`evaluate`] for an arbitrary policy closure.
pub fn evaluate_policy(
    env: &mut dyn Environment,
    eval_steps: usize,
    mut policy: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<f64> {
    let mut obs = env.reset();
    let mut total = 0.0;
    let mut episodes = 0usize;
    for _ in 0..eval_steps {
        let action = policy(&obs)?;
        let out = env.step(&action);
        if out.done() {
            total += env.episode_return();
            episodes += 1;
            obs = env.reset();
        } else {
            obs = out.obs;
        }
    }
    Ok(if episodes == 0 {
        f64::NEG_INFINITY
    } else {
        total / episodes as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ConstantReward, PointMass};

    fn hyper() -> HyperparamSet {
        HyperparamSet {
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            batch_size: 8,
            damping: None,
        }
    }

    fn small_params() -> Td3Params {
        Td3Params {
            hidden: vec![8, 8],
            replay_capacity: 1000,
            ..Td3Params::default()
        }
    }

    fn agent(seed: u64) -> Td3Agent {
        let env = PointMass::new(0);
        Td3Agent::new(
            OptimizerKind::Adam,
            hyper(),
            small_params(),
            env.spec(),
            seed,
        )
        .unwrap()
    }

    fn filled_buffer(n: usize, seed: u64) -> ReplayBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf = ReplayBuffer::new(1000, 2, 1);
        for _ in 0..n {
            buf.push(&Transition {
                obs: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                action: vec![rng.gen_range(-1.0..1.0)],
                reward: rng.gen_range(-1.0..0.0),
                next_obs: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                done: false,
            });
        }
        buf
    }

    #[test]
    fn targets_start_equal_and_critics_differ() {
        let a = agent(1);
        assert_eq!(a.actor, a.actor_target);
        assert_eq!(a.critic1, a.critic1_target);
        assert_ne!(a.critic1, a.critic2);
    }

    #[test]
    fn greedy_action_is_deterministic_and_clipped() {
        let a = agent(2);
        let mut r1 = ChaCha8Rng::seed_from_u64(0);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        let s = [0.4, -0.2];
        assert_eq!(
            a.select_action(&s, false, &mut r1).unwrap(),
            a.select_action(&s, false, &mut r2).unwrap()
        );
        let mut r3 = ChaCha8Rng::seed_from_u64(7);
        let mut r4 = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(
            a.select_action(&s, true, &mut r3).unwrap(),
            a.select_action(&s, true, &mut r4).unwrap()
        );
    }

    #[test]
    fn exploration_noise_is_clipped_at_bound() {
        let mut a = agent(3);
        // saturate the actor at +1 by a huge output bias
        let mut flat = a.actor.flatten();
        let n = flat.len();
        flat[n - 1] = 50.0;
        a.actor.set_flat(&flat).unwrap();
        a.params.exploration_noise = 5.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let act = a.select_action(&[0.0, 0.0], true, &mut rng).unwrap();
            assert!(act[0] <= 1.0 && act[0] >= -1.0);
        }
    }

    #[test]
    fn zero_discount_targets_equal_rewards() {
        let mut a = agent(4);
        a.params.gamma = 0.0;
        let buf = filled_buffer(20, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = buf.sample(8, &mut rng).unwrap();
        assert_eq!(a.compute_targets(&batch, &mut rng).unwrap(), batch.rewards);
    }

    #[test]
    fn twin_minimum_never_exceeds_either_critic() {
        let a = agent(5);
        let buf = filled_buffer(50, 1);
        let batch = buf.sample(16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let y = a
            .compute_targets(&batch, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        // replay the same noise to get the individual critic estimates
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut next_a = a.actor_target.forward(&batch.next_obs).unwrap();
        for x in next_a.as_mut_slice() {
            let n: f64 = rng.sample(StandardNormal);
            *x = (*x + (0.2 * n).clamp(-0.5, 0.5)).clamp(-1.0, 1.0);
        }
        let input = batch.next_obs.hcat(&next_a);
        let q1 = a.critic1_target.forward(&input).unwrap();
        let q2 = a.critic2_target.forward(&input).unwrap();
        for i in 0..16 {
            let t1 = batch.rewards[i] + 0.99 * q1[(i, 0)];
            let t2 = batch.rewards[i] + 0.99 * q2[(i, 0)];
            assert!(y[i] <= t1 + 1e-12 && y[i] <= t2 + 1e-12);
        }
    }

    #[test]
    fn full_polyak_copies_mains() {
        let mut a = agent(6);
        a.params.tau = 1.0;
        a.params.policy_delay = 1;
        let buf = filled_buffer(50, 2);
        a.update(&buf, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(a.actor, a.actor_target);
        assert_eq!(a.critic1, a.critic1_target);
        assert_eq!(a.critic2, a.critic2_target);
    }

    #[test]
    fn actor_changes_only_on_delayed_steps() {
        let mut a = agent(7);
        let buf = filled_buffer(100, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..6 {
            let before = a.actor.clone();
            let rec = a.update(&buf, &mut rng).unwrap();
            assert_eq!(rec.actor_updated, a.grad_steps.is_multiple_of(2));
            assert_eq!(a.actor != before, rec.actor_updated);
        }
    }

    #[test]
    fn polyak_contracts_geometrically() {
        let a = agent(8);
        let main = agent(9).actor;
        let mut target = a.actor.clone();
        let dist = |x: &Net, y: &Net| {
            x.flatten()
                .iter()
                .zip(y.flatten())
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let mut prev = dist(&target, &main);
        for _ in 0..10 {
            target.polyak_from(&main, 0.1);
            let d = dist(&target, &main);
            assert!((d - 0.9 * prev).abs() < 1e-12 * prev.max(1.0));
            prev = d;
        }
    }

    #[test]
    fn replay_ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(3, 1, 1);
        for k in 0..5 {
            buf.push(&Transition {
                obs: vec![k as f64],
                action: vec![0.0],
                reward: k as f64,
                next_obs: vec![0.0],
                done: false,
            });
        }
        assert_eq!(buf.len(), 3);
        let order: Vec<f64> = buf.iter_chronological().map(|t| t.reward).collect();
        assert_eq!(order, vec![2.0, 3.0, 4.0]);
        assert!(buf.sample(4, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn evaluation_returns() {
        let mut zero = ConstantReward::new(0.0, 200);
        let mut one = ConstantReward::new(1.0, 200);
        let env_agent =
            Td3Agent::new(OptimizerKind::Adam, hyper(), small_params(), one.spec(), 0).unwrap();
        assert_eq!(evaluate(&env_agent, &mut zero, 1000).unwrap(), 0.0);
        assert_eq!(evaluate(&env_agent, &mut one, 1000).unwrap(), 200.0);
        // partial trailing episode discarded
        assert_eq!(evaluate(&env_agent, &mut one, 1100).unwrap(), 200.0);
        assert_eq!(
            evaluate(&env_agent, &mut one, 100).unwrap(),
            f64::NEG_INFINITY
        );
    }
}
