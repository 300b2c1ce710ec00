use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Xavier/Glorot uniform initialization: i.i.d. samples strictly inside
/// `[-L, L]` with `L = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<T: Scalar>(fan_in: usize, fan_out: usize, dims: &[usize], seed: u64) -> Result<Tensor<T>> {
    assert!(fan_in >= 1 && fan_out >= 1, "fan_in and fan_out must be positive");
    let limit = xavier_limit(fan_in, fan_out);
    let limit_t = T::from_f64(limit);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(dims, |_| loop {
        let u: f64 = rng.gen();
        let v = T::from_f64((2.0 * u - 1.0) * limit);
        if v.abs() < limit_t {
            break v;
        }
    })
}

pub fn xavier_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Derives an independent stream seed from a base seed and a stream index.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
