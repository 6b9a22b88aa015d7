//! Hash-based lattice value noise.

fn hash(seed: u32, x: i64, y: i64) -> f64 {
    let mut h = (seed as u64) ^ 0x9E37_79B9_7F4A_7C15;
    h ^= (x as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = h.rotate_left(27).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= (y as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 31;
    h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= h >> 29;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in `[0, 1)` with unit cell size.
pub fn value_noise(seed: u32, x: f64, y: f64) -> f64 {
    let (x0, y0) = (libm::floor(x), libm::floor(y));
    let (fx, fy) = (smooth(x - x0), smooth(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash(seed, ix, iy) * (1.0 - fx) + hash(seed, ix + 1, iy) * fx;
    let b = hash(seed, ix, iy + 1) * (1.0 - fx) + hash(seed, ix + 1, iy + 1) * fx;
    a * (1.0 - fy) + b * fy
}

/// Two octaves of value noise, in `[0, 1)`.
pub fn texture(seed: u32, x: f64, y: f64) -> f64 {
    0.65 * value_noise(seed, x, y) + 0.35 * value_noise(seed.wrapping_add(0x51ED), 2.7 * x + 0.31, 2.7 * y - 0.77)
}
