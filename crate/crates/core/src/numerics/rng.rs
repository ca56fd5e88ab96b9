use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

/// Seeded random stream. Identical seed and call sequence give identical
/// outputs on every platform.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this seed and `tag`; does not advance `self`.
    pub fn substream(&self, tag: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(tag);
        Self { seed: self.seed, rng }
    }

    /// Stream derived from the seed and a string key (e.g. a video id).
    pub fn keyed(&self, key: &str) -> Self {
        self.substream(fnv1a(key.as_bytes()))
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Open interval (0, 1).
    fn open_uniform(&mut self) -> f64 {
        loop {
            let u = self.rng.gen::<f64>();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        rand_distr::StandardNormal.sample(&mut self.rng)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        use rand::seq::SliceRandom;
        xs.shuffle(&mut self.rng);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Draw from the symmetric `Beta(alpha, alpha)`.
///
/// Jöhnk's rejection method (in log space) for `alpha < 1`, a ratio of two
/// Gamma variates otherwise.
pub fn beta_sample(alpha: f64, rng: &mut RngState) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Parameter(format!("Beta parameter must be positive, got {alpha}")));
    }
    if alpha < 1.0 {
        let inv = 1.0 / alpha;
        loop {
            let lx = rng.open_uniform().ln() * inv;
            let ly = rng.open_uniform().ln() * inv;
            let m = lx.max(ly);
            let lsum = m + ((lx - m).exp() + (ly - m).exp()).ln();
            if lsum <= 0.0 {
                // x / (x + y) = 1 / (1 + y / x)
                return Ok(1.0 / (1.0 + (ly - lx).exp()));
            }
        }
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Parameter(e.to_string()))?;
    let x = gamma.sample(&mut rng.rng);
    let y = gamma.sample(&mut rng.rng);
    Ok(if x + y > 0.0 { x / (x + y) } else { 0.5 })
}
