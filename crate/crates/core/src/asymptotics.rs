//! Large-system moments of channels with a variance profile.
//!
//! `ξ_ℓ` follows the discretised recursion over the rows of the variance mask
//! `D`. Composition sums are evaluated with a convolution recurrence; the
//! explicit enumeration is kept as [`xi_table_enumerated`].

use std::io::Write;

use nalgebra::DMatrix;
use num_traits::{FromPrimitive, Num};

use crate::channel::VarianceProfile;
use crate::error::{Error, Result};
use crate::scalar::{from_usize, Real};

/// Largest supported moment order.
pub const MAX_ORDER: usize = 8;
/// Largest integer whose compositions may be enumerated.
pub const MAX_COMPOSITION: usize = 16;

/// All ordered tuples of positive integers summing to `n`.
pub fn compositions(n: usize) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Config("compositions need n ≥ 1".into()));
    }
    if n > MAX_COMPOSITION {
        return Err(Error::OrderTooLarge { order: n, max: MAX_COMPOSITION });
    }
    // Bit i of the mask set means "cut after position i".
    let mut out = Vec::with_capacity(1 << (n - 1));
    for mask in 0u32..(1 << (n - 1)) {
        let mut parts = Vec::new();
        let mut run = 1;
        for i in 0..n - 1 {
            if mask & (1 << i) != 0 {
                parts.push(run);
                run = 1;
            } else {
                run += 1;
            }
        }
        parts.push(run);
        out.push(parts);
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| b.cmp(a)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable<T: Real> {
    /// `(L+1) × M`, row `ℓ` holds `ξ_ℓ(m/M)`.
    pub xi: DMatrix<T>,
    /// `(L+1) × K` leave-one-out moments `γ^∞_{k,ℓ}`.
    pub gamma: DMatrix<T>,
    /// `(L+1) × K` full moments `ρ^∞_{k,ℓ}`.
    pub rho: DMatrix<T>,
    pub max_order: usize,
}

impl<T: Real> MomentTable<T> {
    /// CSV with header `user,order,gamma,rho`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user", "order", "gamma", "rho"]).map_err(csv_err)?;
        for k in 0..self.gamma.ncols() {
            for l in 0..=self.max_order {
                w.write_record(&[
                    k.to_string(),
                    l.to_string(),
                    format!("{:e}", crate::scalar::to_f64(self.gamma[(l, k)])),
                    format!("{:e}", crate::scalar::to_f64(self.rho[(l, k)])),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn check_order(l: usize) -> Result<()> {
    if l > MAX_ORDER {
        return Err(Error::OrderTooLarge { order: l, max: MAX_ORDER });
    }
    Ok(())
}

/// `t_{k,n} = (1/M) Σ_m D_{m,k} ξ_n(m)` for `n ≤ upto`.
fn t_coefficients<T: Real>(d: &DMatrix<T>, xi: &DMatrix<T>, upto: usize) -> DMatrix<T> {
    let m = from_usize::<T>(d.nrows());
    let mut t = DMatrix::zeros(upto + 1, d.ncols());
    for n in 0..=upto {
        for k in 0..d.ncols() {
            let s = d.column(k).iter().zip(xi.row(n).iter()).fold(T::zero(), |a, (&x, &y)| a + x * y);
            t[(n, k)] = s / m;
        }
    }
    t
}

/// `ξ_ℓ(m/M)` for `ℓ = 0..=L`, one row per order.
pub fn xi_table<T: Real>(d: &VarianceProfile<T>, l: usize) -> Result<DMatrix<T>> {
    check_order(l)?;
    let dm = &d.d_sq;
    let (m, k) = (dm.nrows(), dm.ncols());
    let inv_m = T::one() / from_usize::<T>(m);
    let mut xi = DMatrix::zeros(l + 1, m);
    xi.row_mut(0).fill(T::one());
    // s[(n, k)] = Σ over compositions of n of Π t_{k, part-1}.
    let mut s = DMatrix::<T>::zeros(l + 1, k);
    s.row_mut(0).fill(T::one());
    for ell in 1..=l {
        let t = t_coefficients(dm, &xi, ell - 1);
        let n = ell - 1;
        if n >= 1 {
            for kk in 0..k {
                let mut acc = T::zero();
                for p in 1..=n {
                    acc += t[(p - 1, kk)] * s[(n - p, kk)];
                }
                s[(n, kk)] = acc;
            }
        }
        for row in 0..m {
            let mut total = T::zero();
            for kk in 0..k {
                let dk = dm[(row, kk)];
                if dk == T::zero() {
                    continue;
                }
                let mut inner = T::zero();
                for j in 1..=ell {
                    inner += xi[(j - 1, row)] * s[(ell - j, kk)];
                }
                total += dk * inner;
            }
            xi[(ell, row)] = total * inv_m;
        }
    }
    Ok(xi)
}

/// Reference evaluation of the recursion that enumerates every composition.
pub fn xi_table_enumerated<T: Real>(d: &VarianceProfile<T>, l: usize) -> Result<DMatrix<T>> {
    check_order(l)?;
    let dm = &d.d_sq;
    let (m, k) = (dm.nrows(), dm.ncols());
    let beta = d.beta();
    let inv_k = T::one() / from_usize::<T>(k);
    let mut xi = DMatrix::zeros(l + 1, m);
    xi.row_mut(0).fill(T::one());
    for ell in 1..=l {
        let t = t_coefficients(dm, &xi, ell - 1);
        for row in 0..m {
            let mean_row = dm.row(row).iter().fold(T::zero(), |a, &b| a + b) * inv_k;
            let mut val = beta * xi[(ell - 1, row)] * mean_row;
            for j in 1..ell {
                let comps = compositions(ell - j)?;
                let mut over_users = T::zero();
                for kk in 0..k {
                    let mut sum = T::zero();
                    for c in &comps {
                        sum += c.iter().fold(T::one(), |a, &n| a * t[(n - 1, kk)]);
                    }
                    over_users += dm[(row, kk)] * sum;
                }
                val += beta * xi[(j - 1, row)] * over_users * inv_k;
            }
            xi[(ell, row)] = val;
        }
    }
    Ok(xi)
}

/// `γ^∞_{k,ℓ} = (1/M) Σ_m ξ_ℓ(m/M) D_{m,k}`.
pub fn gamma_infty<T: Real>(d: &VarianceProfile<T>, xi: &DMatrix<T>) -> Result<DMatrix<T>> {
    if xi.ncols() != d.m() {
        return Err(Error::Dimension(format!("ξ table has {} columns, profile has M={}", xi.ncols(), d.m())));
    }
    Ok(t_coefficients(&d.d_sq, xi, xi.nrows() - 1))
}

/// `ρ_ℓ = γ_ℓ + Σ_{i=1}^{ℓ} γ_{ℓ-i} ρ_{i-1}`.
pub fn rho_from_gamma<T: Real>(gamma: &[T]) -> Vec<T> {
    let mut rho: Vec<T> = Vec::with_capacity(gamma.len());
    for ell in 0..gamma.len() {
        let mut v = gamma[ell];
        for i in 1..=ell {
            v += gamma[ell - i] * rho[i - 1];
        }
        rho.push(v);
    }
    rho
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Marchenko-Pastur moment `(1/ℓ) Σ_{i=1}^{ℓ} C(ℓ,i) C(ℓ,i-1) β^i`.
pub fn mp_moment<N: Num + FromPrimitive + Clone>(beta: N, ell: usize) -> N {
    if ell == 0 {
        return N::one();
    }
    let l = ell as u64;
    let mut acc = N::zero();
    let mut pow = N::one();
    for i in 1..=l {
        pow = pow * beta.clone();
        let c = N::from_u128(binomial(l, i) * binomial(l, i - 1)).expect("binomial fits");
        acc = acc + c * pow.clone();
    }
    acc / N::from_u64(l).expect("order fits")
}

/// `(1/M) Σ_m ξ_ℓ(m/M)`, the limit of `(1/M) tr((H̄H̄^H)^ℓ)`.
pub fn trace_moment<T: Real>(xi: &DMatrix<T>, ell: usize) -> Result<T> {
    if ell >= xi.nrows() {
        return Err(Error::OrderTooLarge { order: ell, max: xi.nrows().saturating_sub(1) });
    }
    Ok(xi.row(ell).iter().fold(T::zero(), |a, &b| a + b) / from_usize::<T>(xi.ncols()))
}

/// ξ, γ and ρ tables up to order `l`.
pub fn moment_table<T: Real>(d: &VarianceProfile<T>, l: usize) -> Result<MomentTable<T>> {
    let xi = xi_table(d, l)?;
    let gamma = gamma_infty(d, &xi)?;
    let mut rho = DMatrix::zeros(l + 1, d.k());
    for k in 0..d.k() {
        let g: Vec<T> = gamma.column(k).iter().copied().collect();
        for (i, v) in rho_from_gamma(&g).into_iter().enumerate() {
            rho[(i, k)] = v;
        }
    }
    Ok(MomentTable { xi, gamma, rho, max_order: l })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::CMat;
    use nalgebra::DMatrix;
    use num_complex::Complex;
    use num_rational::Ratio;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_profile(m: usize, k: usize, seed: u64) -> VarianceProfile<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VarianceProfile::from_matrix(DMatrix::from_fn(m, k, |_, _| rng.random_range(0.0..2.0))).unwrap()
    }

    #[test]
    fn composition_examples() {
        assert_eq!(compositions(1).unwrap(), vec![vec![1]]);
        assert_eq!(compositions(2).unwrap(), vec![vec![2], vec![1, 1]]);
        let c4 = compositions(4).unwrap();
        assert_eq!(c4.len(), 8);
        let mut brute = Vec::new();
        for a in 1..=4usize {
            brute.push(vec![a]);
        }
        // Exhaustive enumeration of tuples with parts in 1..=4 and length ≤ 4.
        let mut all: Vec<Vec<usize>> = vec![vec![]];
        let mut found = Vec::new();
        for _ in 0..4 {
            let mut next = Vec::new();
            for t in &all {
                for p in 1..=4 {
                    let mut u = t.clone();
                    u.push(p);
                    if u.iter().sum::<usize>() == 4 {
                        found.push(u.clone());
                    }
                    next.push(u);
                }
            }
            all = next;
        }
        found.sort();
        let mut got = c4.clone();
        got.sort();
        assert_eq!(found, got);
        assert!(compositions(17).is_err());
        assert!(compositions(0).is_err());
    }

    #[test]
    fn iid_xi_values() {
        for beta_k in [(10usize, 100usize), (50, 100), (100, 100)] {
            let d = VarianceProfile::constant(beta_k.1, beta_k.0, 1.0);
            let b = beta_k.0 as f64 / beta_k.1 as f64;
            let xi = xi_table(&d, 3).unwrap();
            for m in 0..beta_k.1 {
                assert!((xi[(1, m)] - b).abs() < 1e-14);
                assert!((xi[(2, m)] - (b + b * b)).abs() < 1e-14);
                assert!((xi[(3, m)] - (b + 3.0 * b * b + b * b * b)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn enumeration_matches_recurrence() {
        let d = random_profile(8, 4, 1);
        let a = xi_table(&d, 3).unwrap();
        let b = xi_table_enumerated(&d, 3).unwrap();
        assert!((&a - &b).abs().max() < 1e-12);
    }

    #[test]
    fn zero_row_stays_zero() {
        let mut d = random_profile(10, 3, 2);
        d.d_sq.row_mut(4).fill(0.0);
        let xi = xi_table(&d, 5).unwrap();
        for l in 1..=5 {
            assert_eq!(xi[(l, 4)], 0.0);
        }
    }

    #[test]
    fn order_guard() {
        let d = VarianceProfile::constant(4, 2, 1.0);
        assert!(matches!(xi_table(&d, 9), Err(Error::OrderTooLarge { .. })));
        assert!(xi_table(&d, 8).is_ok());
    }

    #[test]
    fn gamma_zero_order_is_pathloss() {
        let d = random_profile(16, 4, 3);
        let xi = xi_table(&d, 2).unwrap();
        let g = gamma_infty(&d, &xi).unwrap();
        for k in 0..4 {
            let mean = d.d_sq.column(k).mean();
            assert!((g[(0, k)] - mean).abs() < 1e-14);
        }
        let uniform = VarianceProfile::constant(40, 8, 1.0f64);
        let t = moment_table(&uniform, 4).unwrap();
        for l in 0..=4 {
            assert!((t.gamma[(l, 0)] - mp_moment(0.2, l)).abs() < 1e-13);
        }
    }

    #[test]
    fn rho_recursion_small_orders() {
        let g = [0.7f64, 0.3, 0.2];
        let r = rho_from_gamma(&g);
        assert_eq!(r[0], 0.7);
        assert!((r[1] - (0.3 + 0.49)).abs() < 1e-15);
    }

    fn complex_gaussian(rng: &mut ChaCha8Rng, m: usize, k: usize) -> CMat<f64> {
        use rand_distr::StandardNormal;
        CMat::from_fn(m, k, |_, _| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            Complex::new(a, b) * (0.5f64 / m as f64).sqrt()
        })
    }

    #[test]
    fn leave_one_out_exact_at_finite_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = complex_gaussian(&mut rng, 64, 8);
        let full = &h * h.adjoint();
        for k in 0..8 {
            let hk = h.column(k).clone_owned();
            let loo = &full - &hk * hk.adjoint();
            let mut g = Vec::new();
            let mut r = Vec::new();
            let (mut a, mut b) = (hk.clone(), hk.clone());
            for _ in 0..=5 {
                g.push(hk.dotc(&a).re);
                r.push(hk.dotc(&b).re);
                a = &loo * a;
                b = &full * b;
            }
            for (x, y) in rho_from_gamma(&g).iter().zip(&r) {
                assert!((x - y).abs() < 1e-10 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mp_examples() {
        assert!((mp_moment(0.1f64, 1) - 0.1).abs() < 1e-15);
        assert!((mp_moment(0.1f64, 3) - 0.131).abs() < 1e-15);
        assert_eq!(mp_moment(Ratio::new(1i64, 1), 3), Ratio::from_integer(5));
        let b = Ratio::new(1i64, 10);
        assert_eq!(mp_moment(b, 2), b + b * b);
        assert_eq!(mp_moment(b, 3), b + b * b * 3 + b * b * b);
    }

    #[test]
    fn square_gram_moment_is_catalan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = 200;
        let mut acc = 0.0;
        let trials = 20;
        for _ in 0..trials {
            let h = complex_gaussian(&mut rng, m, m);
            let g = &h * h.adjoint();
            let g3 = &g * &g * &g;
            acc += g3.trace().re / m as f64;
        }
        assert!((acc / trials as f64 - 5.0).abs() < 0.15);
    }

    #[test]
    fn trace_moment_examples() {
        let d = VarianceProfile::constant(50, 25, 1.0);
        let xi = xi_table(&d, 5).unwrap();
        for l in 1..=5 {
            assert!((trace_moment(&xi, l).unwrap() - mp_moment(0.5f64, l)).abs() < 1e-12);
        }
        // ℓ = 1 is tr(H̄H̄^H)/M = (1/M) Σ_k E‖h̄_k‖² = ΣD/M².
        let d = random_profile(20, 5, 4);
        let xi = xi_table(&d, 1).unwrap();
        assert!((trace_moment(&xi, 1).unwrap() - d.d_sq.sum() / 400.0).abs() < 1e-12);
    }

    #[test]
    fn csv_export_header() {
        let t = moment_table(&VarianceProfile::constant(8, 2, 1.0), 2).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("user,order,gamma,rho\n"));
        assert_eq!(s.lines().count(), 1 + 2 * 3);
    }

    proptest! {
        #[test]
        fn composition_counts(n in 1usize..=12) {
            let c = compositions(n).unwrap();
            prop_assert_eq!(c.len(), 1 << (n - 1));
            prop_assert!(c.iter().all(|t| t.iter().all(|&x| x >= 1) && t.iter().sum::<usize>() == n));
        }

        #[test]
        fn recurrence_matches_enumeration(seed in 0u64..1000, m in 3usize..10, k in 1usize..5) {
            let d = random_profile(m, k, seed);
            let a = xi_table(&d, 6).unwrap();
            let b = xi_table_enumerated(&d, 6).unwrap();
            let scale = a.abs().max().max(1.0);
            prop_assert!((&a - &b).abs().max() < 1e-12 * scale);
        }

        #[test]
        fn constant_profile_scales(c in 0.1f64..3.0, k in 1usize..20) {
            let m = 20;
            let d = VarianceProfile::constant(m, k, c);
            let xi = xi_table(&d, 6).unwrap();
            let beta = k as f64 / m as f64;
            for l in 0..=6 {
                let want = c.powi(l as i32) * mp_moment(beta, l);
                prop_assert!((xi[(l, 0)] - want).abs() < 1e-12 * want.max(1.0));
            }
        }

        #[test]
        fn moments_nonnegative(seed in 0u64..500) {
            let d = random_profile(12, 4, seed);
            let t = moment_table(&d, 8).unwrap();
            prop_assert!(t.xi.iter().chain(t.gamma.iter()).chain(t.rho.iter()).all(|&x| x >= 0.0 && x.is_finite()));
            for k in 0..4 {
                prop_assert_eq!(t.gamma[(0, k)], t.rho[(0, k)]);
            }
        }
    }
}
