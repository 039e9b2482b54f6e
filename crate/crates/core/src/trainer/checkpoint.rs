//! Versioned little-endian checkpoints.
//!
//! Layout: magic `EVCK`, `u32` version, `u64` iteration, the Gaussians
//! (14 `f64` each), an optional network, the Adam state of every group,
//! densification accumulators, the epoch view order and the RNG position.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{Optimizers, Scene, TrainState};
use crate::ade::AdeNetwork;
use crate::error::{Error, Result};
use crate::geometry::{Gaussian, GaussianCloud, Quat};
use crate::optim::Adam;

const MAGIC: &[u8; 4] = b"EVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f64(*x);
        }
    }
    fn adam(&mut self, a: &Adam) {
        self.f64(a.lr);
        self.u64(a.t);
        self.f64s(&a.m);
        self.f64s(&a.v);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Data(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, item_size: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(item_size) > self.bytes.len() - self.pos {
            return Err(Error::Data(format!("checkpoint length field {n} exceeds the file")));
        }
        Ok(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn adam(&mut self) -> Result<Adam> {
        let lr = self.f64()?;
        let t = self.u64()?;
        let m = self.f64s()?;
        let v = self.f64s()?;
        if m.len() != v.len() {
            return Err(Error::Data("optimizer moments differ in length".into()));
        }
        Ok(Adam { lr, m, v, t })
    }
}

pub fn encode_checkpoint(scene: &Scene, state: &TrainState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u64(state.iteration);
    w.u64(scene.cloud.len() as u64);
    for g in &scene.cloud.gaussians {
        g.position.iter().for_each(|v| w.f64(*v));
        g.rotation.to_array().iter().for_each(|v| w.f64(*v));
        g.log_scale.iter().for_each(|v| w.f64(*v));
        w.f64(g.opacity_logit);
        g.color.iter().for_each(|v| w.f64(*v));
    }
    match &scene.ade {
        Some(net) => {
            w.u8(1);
            w.u64(net.l() as u64);
            w.f64(net.lambda_p);
            w.f64s(net.params());
        }
        None => w.u8(0),
    }
    w.u64(state.optim.groups.len() as u64);
    state.optim.groups.iter().for_each(|a| w.adam(a));
    match &state.optim.mlp {
        Some(a) => {
            w.u8(1);
            w.adam(a);
        }
        None => w.u8(0),
    }
    w.f64s(&state.grad_accum);
    w.u64(state.grad_count.len() as u64);
    state.grad_count.iter().for_each(|c| w.u32(*c));
    w.u64(state.order.len() as u64);
    state.order.iter().for_each(|o| w.u64(*o as u64));
    w.0.extend_from_slice(&state.rng.get_seed());
    w.u64(state.rng.get_stream());
    w.0.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Scene, TrainState)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Data("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let iteration = r.u64()?;
    let n = r.len(14 * 8)?;
    let mut gaussians = Vec::with_capacity(n);
    for _ in 0..n {
        let mut v = [0.0; 14];
        for x in &mut v {
            *x = r.f64()?;
        }
        gaussians.push(Gaussian {
            position: [v[0], v[1], v[2]],
            rotation: Quat::new(v[3], v[4], v[5], v[6]),
            log_scale: [v[7], v[8], v[9]],
            opacity_logit: v[10],
            color: [v[11], v[12], v[13]],
        });
    }
    let ade = match r.u8()? {
        0 => None,
        1 => {
            let l = r.u64()? as usize;
            let lambda_p = r.f64()?;
            let params = r.f64s()?;
            let mut net = AdeNetwork::new(l, lambda_p, 0)?;
            net.set_params(params)?;
            Some(net)
        }
        f => return Err(Error::Data(format!("bad network flag {f}"))),
    };
    let n_groups = r.len(1)?;
    let groups = (0..n_groups).map(|_| r.adam()).collect::<Result<Vec<_>>>()?;
    let mlp = match r.u8()? {
        0 => None,
        1 => Some(r.adam()?),
        f => return Err(Error::Data(format!("bad optimizer flag {f}"))),
    };
    let grad_accum = r.f64s()?;
    let nc = r.len(4)?;
    let grad_count = (0..nc).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let no = r.len(8)?;
    let order = (0..no).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = r.u128()?;
    if r.pos != bytes.len() {
        return Err(Error::Data(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let scene = Scene {
        cloud: GaussianCloud::new(gaussians),
        ade,
    };
    let state = TrainState {
        iteration,
        optim: Optimizers { groups, mlp },
        grad_accum,
        grad_count,
        rng,
        order,
    };
    if state.optim.groups.len() != super::Group::ALL.len() {
        return Err(Error::Data("checkpoint has the wrong number of optimizer groups".into()));
    }
    state.check_consistent(&scene)?;
    Ok((scene, state))
}

pub fn save_checkpoint(path: &Path, scene: &Scene, state: &TrainState) -> Result<()> {
    fs::write(path, encode_checkpoint(scene, state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Scene, TrainState)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
