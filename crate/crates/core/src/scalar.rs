//! Scalar abstraction shared by the network, optimizers and schedules.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type for tensors and parameters: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Name written into weight indexes.
    const DTYPE: &'static str;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn to_le_bytes_vec(self, out: &mut Vec<u8>);

    /// `c ← a·b + beta·c` with `a` m×k and `b` k×n, both row-major unless
    /// flagged as stored transposed.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, beta: Self, c: &mut [Self]);
}

macro_rules! gemm_impl {
    ($f:path) => {
        fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, beta: Self, c: &mut [Self]) {
            assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too short");
            let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
            let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
            // SAFETY: the asserted lengths cover every strided access.
            unsafe {
                $f(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
            }
        }
    };
}

/// Decodes little-endian values of the named dtype into `T`.
pub(crate) fn decode_le<T: Scalar>(dtype: &str, bytes: &[u8]) -> Option<Vec<T>> {
    match dtype {
        "f32" if bytes.len() % 4 == 0 => Some(
            bytes
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
        ),
        "f64" if bytes.len() % 8 == 0 => Some(
            bytes
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        ),
        _ => None,
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    gemm_impl!(matrixmultiply::sgemm);

    fn to_le_bytes_vec(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    gemm_impl!(matrixmultiply::dgemm);

    fn to_le_bytes_vec(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}
