//! Deterministic, seedable continuous-control environments and the LQR
//! solution that serves as the point-mass yardstick.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Actions live in `[-action_bound, action_bound]` per dimension.
    pub action_bound: f64,
    pub episode_limit: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// True terminal state (bootstrapping stops). None of the bundled
    /// environments terminate early.
    pub terminated: bool,
    /// Episode limit reached.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Restarts the environment's random stream.
    fn reseed(&mut self, seed: u64);

    /// Starts a new episode and returns the first observation.
    fn reset(&mut self) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> StepOutcome;

    fn observation(&self) -> Vec<f64>;

    fn steps_taken(&self) -> usize;

    fn episode_return(&self) -> f64;

    fn boxed_clone(&self) -> Box<dyn Environment>;
}

/// `reset` after reseeding: a deterministic function of `seed`.
pub fn reset_with_seed(env: &mut dyn Environment, seed: u64) -> Vec<f64> {
    env.reseed(seed);
    env.reset()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvKind {
    PointMass,
    Pendulum,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointMass => "point_mass",
            EnvKind::Pendulum => "pendulum",
        }
    }

    pub fn make(self, seed: u64) -> Box<dyn Environment> {
        match self {
            EnvKind::PointMass => Box::new(PointMass::new(seed)),
            EnvKind::Pendulum => Box::new(Pendulum::new(seed)),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pointmass" | "point_mass" | "point-mass" => Ok(EnvKind::PointMass),
            "pendulum" => Ok(EnvKind::Pendulum),
            other => Err(Error::InvalidConfig(format!(
                "unknown environment {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Start {
    Uniform { x: f64, v: f64 },
    Fixed { x: f64, v: f64 },
}

/// 1-D double integrator with quadratic cost.
///
/// Semi-implicit Euler with `dt = 0.1`: `v' = v + a dt`, `x' = x + v' dt`.
/// The reward `-(x² + 0.1 v² + 0.01 a²)` is evaluated on the pre-step state.
#[derive(Debug, Clone)]
pub struct PointMass {
    spec: EnvSpec,
    x: f64,
    v: f64,
    start: Start,
    steps: usize,
    ret: f64,
    rng: ChaCha8Rng,
}

impl PointMass {
    pub const DT: f64 = 0.1;
    pub const Q_POS: f64 = 1.0;
    pub const Q_VEL: f64 = 0.1;
    pub const R_ACT: f64 = 0.01;

    /// Episodes start at `x ~ U[-1, 1]`, `v ~ U[-0.5, 0.5]`.
    pub fn new(seed: u64) -> Self {
        Self::build(seed, Start::Uniform { x: 1.0, v: 0.5 })
    }

    /// Every episode starts from the same state.
    pub fn with_fixed_start(x: f64, v: f64) -> Self {
        Self::build(0, Start::Fixed { x, v })
    }

    fn build(seed: u64, start: Start) -> Self {
        let mut env = Self {
            spec: EnvSpec {
                name: "point_mass",
                obs_dim: 2,
                action_dim: 1,
                action_bound: 1.0,
                episode_limit: 200,
            },
            x: 0.0,
            v: 0.0,
            start,
            steps: 0,
            ret: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset();
        env
    }

    pub fn state(&self) -> (f64, f64) {
        (self.x, self.v)
    }

    pub fn set_state(&mut self, x: f64, v: f64) {
        self.x = x;
        self.v = v;
    }

    pub fn reward(x: f64, v: f64, a: f64) -> f64 {
        -(Self::Q_POS * x * x + Self::Q_VEL * v * v + Self::R_ACT * a * a)
    }

    /// Linear dynamics `s' = A s + B a`.
    pub fn dynamics() -> ([[f64; 2]; 2], [f64; 2]) {
        let dt = Self::DT;
        ([[1.0, dt], [0.0, 1.0]], [dt * dt, dt])
    }
}

impl Environment for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn reset(&mut self) -> Vec<f64> {
        let (x, v) = match self.start {
            Start::Uniform { x, v } => (self.rng.gen_range(-x..=x), self.rng.gen_range(-v..=v)),
            Start::Fixed { x, v } => (x, v),
        };
        self.x = x;
        self.v = v;
        self.steps = 0;
        self.ret = 0.0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> StepOutcome {
        let a = action[0].clamp(-1.0, 1.0);
        let reward = Self::reward(self.x, self.v, a);
        self.v += a * Self::DT;
        self.x += self.v * Self::DT;
        self.steps += 1;
        self.ret += reward;
        StepOutcome {
            obs: self.observation(),
            reward,
            terminated: false,
            truncated: self.steps >= self.spec.episode_limit,
        }
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.x, self.v]
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }

    fn episode_return(&self) -> f64 {
        self.ret
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

/// Maps an angle to `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t == -PI {
        PI
    } else {
        t
    }
}

/// Torque-limited pendulum swing-up; `θ = 0` is upright.
///
/// Observation is `(cos θ, sin θ, θ̇)`.
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    steps: usize,
    ret: f64,
    rng: ChaCha8Rng,
}

impl Pendulum {
    pub const G: f64 = 10.0;
    pub const M: f64 = 1.0;
    pub const L: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;

    pub fn new(seed: u64) -> Self {
        let mut env = Self {
            spec: EnvSpec {
                name: "pendulum",
                obs_dim: 3,
                action_dim: 1,
                action_bound: Self::MAX_TORQUE,
                episode_limit: 200,
            },
            theta: 0.0,
            theta_dot: 0.0,
            steps: 0,
            ret: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset();
        env
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }

    pub fn reward(theta: f64, theta_dot: f64, torque: f64) -> f64 {
        let th = wrap_angle(theta);
        -(th * th + 0.1 * theta_dot * theta_dot + 0.001 * torque * torque)
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn reset(&mut self) -> Vec<f64> {
        self.theta = self.rng.gen_range(-PI..=PI);
        self.theta_dot = self.rng.gen_range(-1.0..=1.0);
        self.steps = 0;
        self.ret = 0.0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> StepOutcome {
        let u = action[0].clamp(-Self::MAX_TORQUE, Self::MAX_TORQUE);
        let reward = Self::reward(self.theta, self.theta_dot, u);
        let accel = 3.0 * Self::G / (2.0 * Self::L) * self.theta.sin()
            + 3.0 / (Self::M * Self::L * Self::L) * u;
        self.theta_dot =
            (self.theta_dot + accel * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta += self.theta_dot * Self::DT;
        self.steps += 1;
        self.ret += reward;
        StepOutcome {
            obs: self.observation(),
            reward,
            terminated: false,
            truncated: self.steps >= self.spec.episode_limit,
        }
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }

    fn episode_return(&self) -> f64 {
        self.ret
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

/// Fixed-length episodes paying the same reward every step; the observation
/// is constant. Useful as an analytic fixture.
#[derive(Debug, Clone)]
pub struct ConstantReward {
    spec: EnvSpec,
    reward: f64,
    steps: usize,
    ret: f64,
}

impl ConstantReward {
    pub fn new(reward: f64, episode_limit: usize) -> Self {
        Self {
            spec: EnvSpec {
                name: "constant",
                obs_dim: 1,
                action_dim: 1,
                action_bound: 1.0,
                episode_limit,
            },
            reward,
            steps: 0,
            ret: 0.0,
        }
    }
}

impl Environment for ConstantReward {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reseed(&mut self, _seed: u64) {}

    fn reset(&mut self) -> Vec<f64> {
        self.steps = 0;
        self.ret = 0.0;
        self.observation()
    }

    fn step(&mut self, _action: &[f64]) -> StepOutcome {
        self.steps += 1;
        self.ret += self.reward;
        StepOutcome {
            obs: self.observation(),
            reward: self.reward,
            terminated: false,
            truncated: self.steps >= self.spec.episode_limit,
        }
    }

    fn observation(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }

    fn episode_return(&self) -> f64 {
        self.ret
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

/// Discrete-time LQR for the point mass.
pub mod lqr {
    use super::PointMass;

    /// Cost-to-go matrix `P` and feedback gain `K` (`a = -K s`).
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct LqrSolution {
        pub p: [[f64; 2]; 2],
        pub k: [f64; 2],
    }

    impl LqrSolution {
        pub fn action(&self, s: &[f64]) -> f64 {
            -(self.k[0] * s[0] + self.k[1] * s[1])
        }

        /// Optimal (discounted) return `-sᵀ P s` from state `s`.
        pub fn value(&self, s: [f64; 2]) -> f64 {
            let p = &self.p;
            -(s[0] * (p[0][0] * s[0] + p[0][1] * s[1]) + s[1] * (p[1][0] * s[0] + p[1][1] * s[1]))
        }
    }

    /// Iterates `P ← Q + γAᵀPA − γ²AᵀPB (R + γBᵀPB)⁻¹ BᵀPA` to convergence.
    pub fn solve_pointmass(gamma: f64) -> LqrSolution {
        let (a, b) = PointMass::dynamics();
        let q = [[PointMass::Q_POS, 0.0], [0.0, PointMass::Q_VEL]];
        let r = PointMass::R_ACT;
        let mut p = q;
        let mut k = [0.0; 2];
        for _ in 0..100_000 {
            // pa = P A, pb = P B
            let pa = mat_mul(&p, &a);
            let pb = [
                p[0][0] * b[0] + p[0][1] * b[1],
                p[1][0] * b[0] + p[1][1] * b[1],
            ];
            let s = r + gamma * (b[0] * pb[0] + b[1] * pb[1]);
            let bpa = [
                b[0] * pa[0][0] + b[1] * pa[1][0],
                b[0] * pa[0][1] + b[1] * pa[1][1],
            ];
            k = [gamma * bpa[0] / s, gamma * bpa[1] / s];
            let apa = mat_mul(&transpose(&a), &pa);
            let apb = [
                a[0][0] * pb[0] + a[1][0] * pb[1],
                a[0][1] * pb[0] + a[1][1] * pb[1],
            ];
            let mut next = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    next[i][j] = q[i][j] + gamma * apa[i][j] - gamma * apb[i] * k[j];
                }
            }
            let diff = (0..2)
                .flat_map(|i| (0..2).map(move |j| (i, j)))
                .map(|(i, j)| (next[i][j] - p[i][j]).abs())
                .fold(0.0, f64::max);
            p = next;
            if diff < 1e-14 {
                break;
            }
        }
        LqrSolution { p, k }
    }

    fn mat_mul(x: &[[f64; 2]; 2], y: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
            }
        }
        out
    }

    fn transpose(x: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
        [[x[0][0], x[1][0]], [x[0][1], x[1][1]]]
    }
}
