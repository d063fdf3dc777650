//! FNV-1a content hashing for fingerprints and run identifiers.
//!
//! The algorithm is fixed so that fingerprints written into checkpoint
//! sidecars and run directory names stay stable across releases.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental FNV-1a (64-bit) hasher.
#[derive(Clone, Copy)]
pub struct ContentHash(u64);

impl ContentHash {
    pub fn new() -> Self {
        ContentHash(FNV_OFFSET)
    }

    pub fn update(&mut self, bytes: &[u8]) -> &mut Self {
        let mut h = self.0;
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
        self.0 = h;
        self
    }

    pub fn update_str(&mut self, s: &str) -> &mut Self {
        // Separator byte keeps ("ab","c") distinct from ("a","bc").
        self.update(s.as_bytes()).update(&[0xff])
    }

    pub fn finish(&self) -> u64 {
        self.0
    }

    pub fn hex(&self) -> String {
        format!("{:016x}", self.0)
    }
}

impl Default for ContentHash {
    fn default() -> Self {
        Self::new()
    }
}

/// One-shot hash of a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = ContentHash::new();
    h.update(bytes);
    h.finish()
}
