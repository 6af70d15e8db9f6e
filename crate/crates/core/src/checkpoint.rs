//! Binary checkpoint of one population member.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! "PBTC" | version u32 | kind u8
//! lr_actor f64 | lr_critic f64 | batch_size f64 | damping f64 (0 if none)
//! 6 × (count u64 | count × f64)      actor, critic1, critic2, then targets
//! replay_len u64 | replay_len × (s, a, r, s', done) as f64
//! ```
//!
//! Replay records are written oldest first.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::{HyperparamSet, OptimizerKind};
use crate::td3::{ReplayBuffer, Td3Agent, Transition};

pub const MAGIC: &[u8; 4] = b"PBTC";
pub const VERSION: u32 = 1;

pub fn encode(agent: &Td3Agent, replay: &ReplayBuffer) -> Vec<u8> {
    let (od, ad) = replay.dims();
    let record = 2 * od + ad + 2;
    let nets: usize = agent.networks().iter().map(|n| n.num_params()).sum();
    let mut out = Vec::with_capacity(64 + 8 * (nets + 6 + replay.len() * record));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(agent.kind().tag());
    let h = &agent.hyper;
    for x in [
        h.lr_actor,
        h.lr_critic,
        h.batch_size as f64,
        h.damping_or_zero(),
    ] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for net in agent.networks() {
        let flat = net.flatten();
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        flat.iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    }
    out.extend_from_slice(&(replay.len() as u64).to_le_bytes());
    for t in replay.iter_chronological() {
        let done = if t.done { 1.0f64 } else { 0.0 };
        t.obs
            .iter()
            .chain(&t.action)
            .chain(std::iter::once(&t.reward))
            .chain(&t.next_obs)
            .chain(std::iter::once(&done))
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Restores weights, hyperparameters and replay into clones of `template`,
/// which supplies network shapes, fixed TD3 settings and replay capacity.
/// Optimizer state is fresh.
pub fn decode(
    bytes: &[u8],
    template: &Td3Agent,
    replay_capacity: usize,
) -> Result<(Td3Agent, ReplayBuffer)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let tag = r.take(1)?[0];
    let kind = OptimizerKind::from_tag(tag)
        .ok_or_else(|| Error::Checkpoint(format!("unknown optimizer tag {tag}")))?;
    if kind != template.kind() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds a {kind} agent, template is {}",
            template.kind()
        )));
    }
    let lr_actor = r.f64()?;
    let lr_critic = r.f64()?;
    let batch_size = r.f64()? as usize;
    let damping = r.f64()?;
    let mut agent = template.clone();
    agent.hyper = HyperparamSet {
        lr_actor,
        lr_critic,
        batch_size,
        damping: kind.is_second_order().then_some(damping),
    };
    for net in agent.networks_mut() {
        let n = r.u64()? as usize;
        if n != net.num_params() {
            return Err(Error::Checkpoint(format!(
                "network has {} parameters, checkpoint {n}",
                net.num_params()
            )));
        }
        net.set_flat(&r.f64s(n)?)?;
    }
    agent.reset_optimizers();
    let (od, ad) = agent.dims();
    let len = r.u64()? as usize;
    let mut replay = ReplayBuffer::new(replay_capacity, od, ad);
    for _ in 0..len {
        let obs = r.f64s(od)?;
        let action = r.f64s(ad)?;
        let reward = r.f64()?;
        let next_obs = r.f64s(od)?;
        let done = r.f64()? != 0.0;
        replay.push(&Transition {
            obs,
            action,
            reward,
            next_obs,
            done,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((agent, replay))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
