//! Counter-based normal streams and the shared Brownian increment store.
//!
//! The construction is fixed so that runs reproduce across machines:
//!
//! * the ChaCha12 key is the 32-byte little-endian concatenation of
//!   `master_seed`, a domain tag (`0` for Brownian increments, `1` for
//!   initial conditions) and two zero words;
//! * the ChaCha stream id is the particle index;
//! * each standard normal pair consumes two consecutive `u64` words,
//!   `u1 = ((w1 >> 11) + 1) 2^-53` and `u2 = (w2 >> 11) 2^-53`, and the pair
//!   is `sqrt(-2 ln u1) (cos 2π u2, sin 2π u2)` (Box–Muller);
//! * increment `j` of particle `i` uses normals `j m .. (j + 1) m` of the
//!   increment stream, scaled by `2^{-n_max/2}`.
//!
//! Increments are rounded to multiples of [`QUANTUM`]. Sums of such numbers
//! are exact in `f64` as long as they stay below `2^12` in magnitude, so
//! coarsened increments and the Brownian path itself do not depend on the
//! order of summation.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grid on which every stored increment lies.
pub const QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;

/// Finest level a store may hold (about one million steps).
pub const MAX_LEVEL: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Increments = 0,
    Initial = 1,
}

/// Standard normals for one `(master_seed, domain, index)` triple.
pub struct NormalStream {
    rng: ChaCha12Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(master_seed: u64, domain: Domain, index: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
        let mut rng = ChaCha12Rng::from_seed(key);
        rng.set_stream(index);
        Self { rng, spare: None }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * f64::EPSILON / 2.0;
        let u2 = (self.rng.next_u64() >> 11) as f64 * f64::EPSILON / 2.0;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// SplitMix64 finaliser, used to derive per-replication seeds.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn quantize(x: f64) -> f64 {
    (x / QUANTUM).round() * QUANTUM
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrownianError {
    #[error("level {level} is above the finest stored level {n_max}")]
    LevelTooFine { level: u32, n_max: u32 },
    #[error("finest level must be at most {MAX_LEVEL}, got {0}")]
    TooManySteps(u32),
    #[error("need at least one particle and one noise dimension")]
    Empty,
    #[error("requested {requested} particles but the store holds {available}")]
    NotEnoughParticles { requested: usize, available: usize },
}

/// Brownian increments on `[0, 1]` at a dyadic level, laid out
/// `[particle][step][component]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Increments {
    level: u32,
    particles: usize,
    noise_dim: usize,
    data: Vec<f64>,
}

impl Increments {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn steps(&self) -> usize {
        1 << self.level
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// `ΔW` of `particle` over `[j 2^-n, (j + 1) 2^-n]`.
    pub fn get(&self, particle: usize, step: usize) -> &[f64] {
        let m = self.noise_dim;
        let at = (particle * self.steps() + step) * m;
        &self.data[at..at + m]
    }

    /// All increments of one particle, step-major.
    pub fn particle(&self, particle: usize) -> &[f64] {
        let len = self.steps() * self.noise_dim;
        &self.data[particle * len..(particle + 1) * len]
    }

    /// `W` of `particle` at every grid time `k 2^-n`, `k = 0..=2^n`.
    pub fn path(&self, particle: usize) -> Vec<Vec<f64>> {
        let mut w = vec![0.0; self.noise_dim];
        let mut out = Vec::with_capacity(self.steps() + 1);
        out.push(w.clone());
        for step in 0..self.steps() {
            for (acc, dw) in w.iter_mut().zip(self.get(particle, step)) {
                *acc += dw;
            }
            out.push(w.clone());
        }
        out
    }
}

/// Finest-level increments for every particle, a pure function of
/// `(master_seed, particle, step)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownianStore {
    master_seed: u64,
    finest: Increments,
}

impl BrownianStore {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn n_max(&self) -> u32 {
        self.finest.level
    }

    pub fn particles(&self) -> usize {
        self.finest.particles
    }

    pub fn noise_dim(&self) -> usize {
        self.finest.noise_dim
    }

    pub fn finest(&self) -> &Increments {
        &self.finest
    }
}

/// Draws the finest increments of `particles` independent `m`-dimensional
/// Brownian motions. Particles are generated in parallel; each owns its
/// stream, so the result does not depend on scheduling.
pub fn make_brownian(master_seed: u64, particles: usize, m: usize, n_max: u32) -> Result<BrownianStore, BrownianError> {
    use rayon::prelude::*;
    if particles == 0 || m == 0 {
        return Err(BrownianError::Empty);
    }
    if n_max > MAX_LEVEL {
        return Err(BrownianError::TooManySteps(n_max));
    }
    let steps = 1usize << n_max;
    let scale = (1.0 / steps as f64).sqrt();
    let mut data = vec![0.0; particles * steps * m];
    data.par_chunks_mut(steps * m).enumerate().for_each(|(i, chunk)| {
        let mut z = NormalStream::new(master_seed, Domain::Increments, i as u64);
        for x in chunk.iter_mut() {
            *x = quantize(scale * z.next_normal());
        }
    });
    Ok(BrownianStore {
        master_seed,
        finest: Increments {
            level: n_max,
            particles,
            noise_dim: m,
            data,
        },
    })
}

/// Level-`n` increments as exact block sums of the finest ones.
pub fn coarsen(store: &BrownianStore, level: u32) -> Result<Increments, BrownianError> {
    let fine = &store.finest;
    if level > fine.level {
        return Err(BrownianError::LevelTooFine { level, n_max: fine.level });
    }
    if level == fine.level {
        return Ok(fine.clone());
    }
    let block = 1usize << (fine.level - level);
    let m = fine.noise_dim;
    let steps = 1usize << level;
    let mut data = vec![0.0; fine.particles * steps * m];
    for i in 0..fine.particles {
        for k in 0..steps {
            let out = &mut data[(i * steps + k) * m..(i * steps + k + 1) * m];
            for j in k * block..(k + 1) * block {
                for (o, dw) in out.iter_mut().zip(fine.get(i, j)) {
                    *o += dw;
                }
            }
        }
    }
    Ok(Increments {
        level,
        particles: fine.particles,
        noise_dim: m,
        data,
    })
}
