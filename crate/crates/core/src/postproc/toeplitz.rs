//! Toeplitz universal hashing over GF(2) for error checking (short tags)
//! and privacy amplification (large compressions).
//!
//! An m×n Toeplitz matrix is defined by the m+n−1 bits along its diagonals,
//! drawn from a PRNG both endpoints seed identically, so no matrix ever
//! crosses the wire. The product T·x is a slice of the linear convolution
//! of the diagonal sequence with x, which is what makes the FFT path work;
//! the word-packed direct path computes the same rows as sliding windows
//! and is kept as the independent route (and as the cheap path for 8-bit
//! tags).

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::bits::Bits;

/// Shared-seed descriptor of a Toeplitz matrix; both endpoints derive
/// identical diagonal bits from the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToeplitzSeed {
    pub seed: u64,
}

impl ToeplitzSeed {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Hex fingerprint recorded in key manifests.
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", crate::seeds::mix(self.seed, 0xF1F1))
    }

    /// Diagonal bits t[0..m+n-1]; entry (i,j) of the matrix is
    /// t[i - j + n - 1], so t[n-1..] is the first column and t[..n]
    /// reversed is the first row.
    fn diagonal(&self, m: usize, n: usize) -> Bits {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Bits::random(m + n - 1, &mut rng)
    }
}

/// 8-bit (by default) error-checking tag: T·block with an m = tag_bits
/// Toeplitz matrix. Same seed and same block give the same tag on both
/// ends; any single-bit difference flips the tag unless the corresponding
/// matrix column is all zero (probability 2^-tag_bits).
pub fn toeplitz_tag(block: &Bits, ts: &ToeplitzSeed, tag_bits: usize) -> Bits {
    assert!(!block.is_empty(), "tag of an empty block");
    assert!((1..=64).contains(&tag_bits));
    let t = ts.diagonal(tag_bits, block.len());
    mul_direct(&t, block, tag_bits)
}

/// Tag packed into a little-endian u64 (tag_bits <= 64).
pub fn toeplitz_tag_u64(block: &Bits, ts: &ToeplitzSeed, tag_bits: usize) -> u64 {
    let bits = toeplitz_tag(block, ts, tag_bits);
    bits.words().first().copied().unwrap_or(0)
}

/// Privacy amplification: compress `block` to `m_out` bits with the seeded
/// Toeplitz matrix, via FFT convolution. Bit-for-bit equal to the direct
/// matrix product.
///
/// `m_out` of zero (an unusable block) yields an empty output.
pub fn privacy_amplify(block: &Bits, m_out: usize, ts: &ToeplitzSeed) -> Bits {
    assert!(m_out <= block.len(), "cannot stretch a block ({m_out} > {})", block.len());
    if m_out == 0 {
        return Bits::new();
    }
    let t = ts.diagonal(m_out, block.len());
    mul_fft(&t, block, m_out)
}

/// Direct product against the same seeded matrix; the independent route
/// used by tests and short tags.
pub fn privacy_amplify_direct(block: &Bits, m_out: usize, ts: &ToeplitzSeed) -> Bits {
    assert!(m_out <= block.len());
    if m_out == 0 {
        return Bits::new();
    }
    let t = ts.diagonal(m_out, block.len());
    mul_direct(&t, block, m_out)
}

/// Row i of T is t[i+n-1], t[i+n-2], ..., t[i] — a reversed window of the
/// diagonal bits. Reversing t once turns every row into a forward sliding
/// window, so each output bit is a word-packed AND/popcount pass.
fn mul_direct(t: &Bits, x: &Bits, m: usize) -> Bits {
    let n = x.len();
    let mut rev = Bits::zeros(t.len());
    for i in 0..t.len() {
        if t.get(t.len() - 1 - i) {
            rev.set(i, true);
        }
    }
    let rw = rev.words();
    let xw = x.words();
    let n_words = n.div_ceil(64);

    let mut out = Bits::zeros(m);
    for i in 0..m {
        // row i = rev[(m-1-i) .. (m-1-i)+n]
        let base = m - 1 - i;
        let (ws, bs) = (base / 64, (base % 64) as u32);
        let mut acc = 0u64;
        for w in 0..n_words {
            let mut window = rw.get(ws + w).copied().unwrap_or(0) >> bs;
            if bs > 0 {
                window |= rw.get(ws + w + 1).copied().unwrap_or(0) << (64 - bs);
            }
            acc ^= window & xw[w];
        }
        if acc.count_ones() & 1 == 1 {
            out.set(i, true);
        }
    }
    out
}

/// T·x as a slice of conv(t, x): y[i] = conv[i + n - 1], for i in 0..m,
/// computed over the complex field and reduced mod 2. The two real
/// sequences share one forward FFT (packed into the real and imaginary
/// parts), and the convolution values stay below 2^22, far inside f64's
/// exact-integer range, so the rounding is exact.
fn mul_fft(t: &Bits, x: &Bits, m: usize) -> Bits {
    let n = x.len();
    let conv_len = t.len() + n - 1;
    let size = conv_len.next_power_of_two();

    let mut packed = vec![Complex64::new(0.0, 0.0); size];
    for i in 0..t.len() {
        if t.get(i) {
            packed[i].re = 1.0;
        }
    }
    for i in 0..n {
        if x.get(i) {
            packed[i].im = 1.0;
        }
    }

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(size);
    fft.process(&mut packed);

    // Unpack the spectra of the two real sequences and multiply:
    // T[k] = (F[k] + conj(F[N-k]))/2, X[k] = (F[k] - conj(F[N-k]))/(2i),
    // product = T·X.
    let mut prod = vec![Complex64::new(0.0, 0.0); size];
    for k in 0..size {
        let fk = packed[k];
        let fnk = packed[(size - k) % size].conj();
        let tk = (fk + fnk) * 0.5;
        let xk = (fk - fnk) * Complex64::new(0.0, -0.5);
        prod[k] = tk * xk;
    }

    let ifft = planner.plan_fft_inverse(size);
    ifft.process(&mut prod);

    let scale = 1.0 / size as f64;
    let mut out = Bits::zeros(m);
    for i in 0..m {
        let val = (prod[i + n - 1].re * scale).round() as i64;
        if val & 1 == 1 {
            out.set(i, true);
        }
    }
    out
}
