//! Keyed, counter-based random streams.
//!
//! Every random quantity in a run is addressed by `(master_seed, replica,
//! purpose)` plus a stream index, so any piece of the randomness can be
//! regenerated without replaying what came before it. The spacetime noise
//! uses one ChaCha stream per time step, so a row can be rebuilt in any order
//! and `cell(n, i)` is a pure function of its arguments.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Noise,
    Boundary,
    Auxiliary,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Noise => 0x6e6f_6973_65,
            Purpose::Boundary => 0x626f_756e_64,
            Purpose::Auxiliary => 0x6175_7869_6c,
        }
    }
}

/// Stream indices used under [`Purpose::Auxiliary`].
pub mod aux {
    pub const ENDPOINT: u64 = 1;
    pub const EXPONENTIAL: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const GIRSANOV: u64 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngKey {
    pub master_seed: u64,
    pub replica_id: u64,
    pub purpose: Purpose,
}

pub fn make_key(master_seed: u64, replica_id: u64, purpose: Purpose) -> RngKey {
    RngKey { master_seed, replica_id, purpose }
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngKey {
    pub fn new(master_seed: u64, replica_id: u64, purpose: Purpose) -> Self {
        make_key(master_seed, replica_id, purpose)
    }

    pub fn with_purpose(self, purpose: Purpose) -> Self {
        Self { purpose, ..self }
    }

    fn seed_bytes(&self) -> [u8; 32] {
        let mut state = self.master_seed;
        // Absorb every field before squeezing so that no two keys collide on
        // the first output word.
        for word in [self.replica_id, self.purpose.tag()] {
            state = splitmix64(&mut state) ^ word;
        }
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        seed
    }

    /// Independent ChaCha stream number `stream` under this key.
    pub fn stream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed_bytes());
        rng.set_stream(stream);
        rng
    }

    pub fn normals(&self, stream: u64) -> NormalStream {
        NormalStream::new(self.stream(stream))
    }
}

/// Maps 64 random bits to a uniform in the open interval (0, 1).
#[inline]
pub fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Box–Muller transform of two raw 64-bit words into two independent N(0,1).
#[inline]
pub fn box_muller(a: u64, b: u64) -> (f64, f64) {
    let radius = (-2.0 * open_unit(a).ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * open_unit(b)).sin_cos();
    (radius * c, radius * s)
}

/// Sequential standard normals from a ChaCha stream.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng, spare: None }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (z0, z1) = box_muller(self.rng.next_u64(), self.rng.next_u64());
        self.spare = Some(z1);
        z0
    }

    pub fn next_uniform(&mut self) -> f64 {
        open_unit(self.rng.next_u64())
    }

    /// Exp(1) by inversion.
    pub fn next_exponential(&mut self) -> f64 {
        -self.next_uniform().ln()
    }

    pub fn next_index(&mut self, n: usize) -> usize {
        // Lemire's multiply-shift; the bias is below 2^-40 for the ensemble
        // sizes used here.
        ((self.rng.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    On,
    Off,
}

/// Source of the per-cell standard normals driving the solver.
pub trait NoiseField {
    fn n_sites(&self) -> usize;

    /// `true` when the field is identically zero and the Itô correction must be
    /// dropped along with it.
    fn is_silent(&self) -> bool;

    /// Writes `eta_{step, i}` for every site into `out`.
    fn fill_row(&self, step: usize, out: &mut [f64]);
}

/// Counter-based spacetime white noise for one replica.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseHandle {
    pub key: RngKey,
    pub n_sites: usize,
    pub mode: NoiseMode,
}

impl NoiseHandle {
    pub fn new(key: RngKey, n_sites: usize, mode: NoiseMode) -> Self {
        Self { key: key.with_purpose(Purpose::Noise), n_sites, mode }
    }

    pub fn silent(n_sites: usize) -> Self {
        Self::new(make_key(0, 0, Purpose::Noise), n_sites, NoiseMode::Off)
    }

    /// `eta_{step, site}`; identical on every call. Regenerates the row prefix
    /// up to `site`.
    pub fn cell(&self, step: usize, site: usize) -> f64 {
        if self.mode == NoiseMode::Off {
            return 0.0;
        }
        let mut rng = self.key.stream(step as u64);
        let mut z = 0.0;
        for _ in 0..=site {
            z = StandardNormal.sample(&mut rng);
        }
        z
    }
}

impl NoiseField for NoiseHandle {
    fn n_sites(&self) -> usize {
        self.n_sites
    }

    fn is_silent(&self) -> bool {
        self.mode == NoiseMode::Off
    }

    fn fill_row(&self, step: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_sites);
        if self.mode == NoiseMode::Off {
            out.fill(0.0);
            return;
        }
        let mut rng = self.key.stream(step as u64);
        for z in out.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
    }
}

/// Noise values supplied explicitly, row-major `[step][site]`.
#[derive(Debug, Clone, Copy)]
pub struct InjectedNoise<'a> {
    pub values: &'a [f64],
    pub n_sites: usize,
}

impl NoiseField for InjectedNoise<'_> {
    fn n_sites(&self) -> usize {
        self.n_sites
    }

    fn is_silent(&self) -> bool {
        false
    }

    fn fill_row(&self, step: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.values[step * self.n_sites..(step + 1) * self.n_sites]);
    }
}
