//! Scalar abstraction shared by the numerical modules.

use nalgebra::{DMatrix, DVector, RealField};
use num_complex::Complex;
use rustfft::FftPlanner;

pub type CMat<T> = DMatrix<Complex<T>>;
pub type CVec<T> = DVector<Complex<T>>;

/// Real field usable by every numerical routine in the crate (`f32`, `f64`).
pub trait Real:
    RealField + Copy + Default + num_traits::FromPrimitive + num_traits::ToPrimitive + Send + Sync + 'static
{
    /// Unnormalised forward DFT: `X_m = Σ_n x_n e^{-j2πnm/N}`.
    fn fft_forward(buf: &mut [Complex<Self>]);
    /// Unnormalised inverse DFT: `x_n = Σ_m X_m e^{+j2πnm/N}`.
    fn fft_inverse(buf: &mut [Complex<Self>]);
    /// Relative residue below which numerically real quantities are accepted as real.
    fn residue_tol() -> Self;
}

macro_rules! impl_real {
    ($t:ty, $tol:expr) => {
        impl Real for $t {
            fn fft_forward(buf: &mut [Complex<Self>]) {
                if buf.len() > 1 {
                    FftPlanner::<$t>::new().plan_fft_forward(buf.len()).process(buf);
                }
            }
            fn fft_inverse(buf: &mut [Complex<Self>]) {
                if buf.len() > 1 {
                    FftPlanner::<$t>::new().plan_fft_inverse(buf.len()).process(buf);
                }
            }
            fn residue_tol() -> Self {
                $tol
            }
        }
    };
}

impl_real!(f64, 1e-10);
impl_real!(f32, 1e-3);

#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

#[inline]
pub fn from_usize<T: Real>(n: usize) -> T {
    nalgebra::convert(n as f64)
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    num_traits::ToPrimitive::to_f64(&x).unwrap_or(f64::NAN)
}

#[inline]
pub fn cx<T: Real>(re: T, im: T) -> Complex<T> {
    Complex::new(re, im)
}

#[inline]
pub fn re<T: Real>(x: T) -> Complex<T> {
    Complex::new(x, T::zero())
}

/// `e^{jφ}`.
#[inline]
pub fn cis<T: Real>(phase: T) -> Complex<T> {
    Complex::new(phase.cos(), phase.sin())
}

/// Euclidean norm of column `k`.
pub fn column_norm<T: Real>(m: &CMat<T>, k: usize) -> T {
    m.column(k).iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt()
}

/// `a^H b` for two complex column slices of equal length.
pub fn dotc<T: Real>(a: impl IntoIterator<Item = Complex<T>>, b: impl IntoIterator<Item = Complex<T>>) -> Complex<T> {
    a.into_iter()
        .zip(b)
        .fold(Complex::new(T::zero(), T::zero()), |acc, (x, y)| acc + x.conj() * y)
}

/// Conjugate transpose.
pub fn adjoint<T: Real>(m: &CMat<T>) -> CMat<T> {
    m.adjoint()
}

/// Embeds a real matrix into the complex field.
pub fn complexify<T: Real>(m: &DMatrix<T>) -> CMat<T> {
    m.map(|x| Complex::new(x, T::zero()))
}
