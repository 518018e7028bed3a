use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// Counter-based random stream keyed by `(seed, label, index)`.
///
/// The key is hashed into a ChaCha20 key; `index` selects the ChaCha stream.
/// Identical keys give identical draws on every platform, and streams with
/// different labels or indices never share state, so data, initializers and
/// samplers can be seeded independently.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    label: String,
    index: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        Self::keyed(seed, label.to_owned(), 0)
    }

    fn keyed(seed: u64, label: String, index: u64) -> Self {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        let key: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(index);
        Self {
            seed,
            label,
            index,
            rng,
        }
    }

    /// Independent stream under a nested label.
    pub fn child(&self, label: &str) -> Self {
        Self::keyed(self.seed, format!("{}/{}", self.label, label), self.index)
    }

    /// Independent stream with the same label and a different index.
    pub fn indexed(&self, index: u64) -> Self {
        Self::keyed(self.seed, self.label.clone(), index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Number of 32-bit words consumed so far.
    pub fn draw_position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        mean + std * z
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
