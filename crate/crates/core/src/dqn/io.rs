//! Binary model files.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic `RLYDQN\0\0` | 8 bytes |
//! | version | u32 |
//! | layer count + 1, then each dim | u32 each |
//! | gamma, tau, learning rate, beta1, beta2, adam epsilon | f64 |
//! | epsilon start, epsilon end, reward scale, event fraction | f64 |
//! | batch size, buffer capacity, warmup, epsilon decay episodes, event capacity | u32 |
//! | double DQN flag | u8 |
//! | online parameters | f64, per layer: weights row-major then biases |
//! | target parameters | same |
//! | Adam step | u64 |
//! | Adam first and second moments | f64 each |

use std::fs;
use std::path::Path;

use super::{Adam, AgentHyperparams, DqnAgent, Mlp};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"RLYDQN\0\0";
pub const MODEL_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Decode {
                offset: self.pos,
                msg: format!("truncated: need {n} more bytes"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn agent_to_bytes(agent: &DqnAgent) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MODEL_MAGIC);
    w.0.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let dims = agent.online.dims();
    w.u32(dims.len());
    for d in dims {
        w.u32(*d);
    }
    let hp = &agent.hp;
    for v in [
        hp.gamma,
        hp.tau,
        agent.adam.learning_rate,
        agent.adam.beta1,
        agent.adam.beta2,
        agent.adam.epsilon,
        hp.epsilon_start,
        hp.epsilon_end,
        hp.reward_scale,
        hp.event_fraction,
    ] {
        w.f64(v);
    }
    for v in [
        hp.batch_size,
        hp.buffer_capacity,
        hp.warmup,
        hp.epsilon_decay_episodes,
        hp.event_capacity,
    ] {
        w.u32(v);
    }
    w.0.push(u8::from(hp.double_dqn));
    w.f64s(agent.online.params());
    w.f64s(agent.target.params());
    w.0.extend_from_slice(&agent.adam.step.to_le_bytes());
    w.f64s(&agent.adam.m);
    w.f64s(&agent.adam.v);
    w.0
}

pub fn agent_from_bytes(bytes: &[u8]) -> Result<DqnAgent> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MODEL_MAGIC {
        return Err(Error::Model("not a model file (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != MODEL_VERSION {
        return Err(Error::Model(format!(
            "model file version {version} is incompatible with version {MODEL_VERSION}"
        )));
    }
    let n_dims = r.u32()?;
    if !(2..=16).contains(&n_dims) {
        return Err(Error::Decode {
            offset: r.pos - 4,
            msg: format!("implausible layer count {n_dims}"),
        });
    }
    let dims = (0..n_dims).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let f = (0..10).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let u = (0..5).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let double_dqn = match r.take(1)?[0] {
        0 => false,
        1 => true,
        b => {
            return Err(Error::Decode {
                offset: r.pos - 1,
                msg: format!("bad flag byte {b}"),
            })
        }
    };
    let n_params = Mlp::zeros(&dims)?.params().len();
    let online = Mlp::from_params(&dims, r.f64s(n_params)?)?;
    let target = Mlp::from_params(&dims, r.f64s(n_params)?)?;
    let step = r.u64()?;
    let m = r.f64s(n_params)?;
    let v = r.f64s(n_params)?;
    if r.pos != bytes.len() {
        return Err(Error::Decode {
            offset: r.pos,
            msg: "trailing bytes".into(),
        });
    }
    let hp = AgentHyperparams {
        hidden: dims[1..dims.len() - 1].to_vec(),
        learning_rate: f[2],
        gamma: f[0],
        batch_size: u[0],
        tau: f[1],
        double_dqn,
        buffer_capacity: u[1],
        warmup: u[2],
        epsilon_start: f[6],
        epsilon_end: f[7],
        epsilon_decay_episodes: u[3],
        reward_scale: f[8],
        event_fraction: f[9],
        event_capacity: u[4],
    };
    hp.validate()
        .map_err(|e| Error::Model(format!("stored hyperparameters invalid: {e}")))?;
    let adam = Adam {
        learning_rate: f[2],
        beta1: f[3],
        beta2: f[4],
        epsilon: f[5],
        step,
        m,
        v,
    };
    Ok(DqnAgent {
        online,
        target,
        adam,
        hp,
    })
}

pub fn save_agent(agent: &DqnAgent, path: &Path) -> Result<()> {
    fs::write(path, agent_to_bytes(agent))?;
    Ok(())
}

pub fn load_agent(path: &Path) -> Result<DqnAgent> {
    agent_from_bytes(&fs::read(path)?)
}
