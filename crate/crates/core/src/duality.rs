//! Uplink/downlink duality with arbitrary unit-norm vector sets.
//!
//! `φ_{k,j} = |v_kᴴ H u_j|²` couples users; SINR targets `Γ` are feasible iff
//! the Perron root of `diag(μ)Φ` is below one, and the minimum noise-normalised
//! powers solve `(I − diag(μ)Φ) p′ = μ` (uplink) or the same with `Φᵀ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, CMat, Real};
use crate::tpe::{sinrs, Link};

const POWER_ITER_TOL: f64 = 1e-12;
const POWER_ITER_CAP: usize = 2_000;
const FEASIBILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DualityCoupling<T: Real> {
    pub phi: DMatrix<T>,
    pub mu: DVector<T>,
    pub targets: DVector<T>,
    pub nu: T,
}

impl<T: Real> DualityCoupling<T> {
    /// `μ_k = Γ_k / ((1 + Γ_k) φ_{k,k})`.
    pub fn new(phi: DMatrix<T>, targets: &[T], nu: T) -> Result<Self> {
        let k = phi.nrows();
        if phi.ncols() != k || targets.len() != k {
            return Err(Error::Dimension(format!("Φ is {}×{}, {} targets", phi.nrows(), phi.ncols(), targets.len())));
        }
        if phi.iter().any(|&x| !(x >= T::zero())) || targets.iter().any(|&g| !(g >= T::zero())) {
            return Err(Error::Config("coupling and targets must be nonnegative".into()));
        }
        let mut mu = DVector::zeros(k);
        for i in 0..k {
            if targets[i] > T::zero() {
                if !(phi[(i, i)] > T::zero()) {
                    return Err(Error::Infeasible(format!("user {i} has zero useful gain")));
                }
                mu[i] = targets[i] / ((T::one() + targets[i]) * phi[(i, i)]);
            }
        }
        Ok(Self { phi, mu, targets: DVector::from_column_slice(targets), nu })
    }
}

/// `φ_{k,j} = |v_kᴴ H u_j|²`.
pub fn coupling_matrix<T: Real>(h: &CMat<T>, u: &CMat<T>, v: &CMat<T>) -> Result<DMatrix<T>> {
    if u.nrows() != h.ncols() || v.nrows() != h.nrows() || u.ncols() != v.ncols() {
        return Err(Error::Dimension("vector sets do not match the channel".into()));
    }
    let hu = h * u;
    let g = v.adjoint() * hu;
    Ok(g.map(|z| z.norm_sqr()))
}

/// Coupling for single-antenna uplink users (`u_j = e_j`): `φ_{k,j} = |v_kᴴ h_j|²`.
pub fn uplink_coupling<T: Real>(h: &CMat<T>, v: &CMat<T>) -> Result<DMatrix<T>> {
    if v.nrows() != h.nrows() || v.ncols() != h.ncols() {
        return Err(Error::Dimension("vector set does not match the channel".into()));
    }
    Ok((v.adjoint() * h).map(|z| z.norm_sqr()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility<T> {
    pub feasible: bool,
    pub spectral_radius: T,
    pub iterations: usize,
}

/// Perron root of a nonnegative matrix by power iteration from the all-ones
/// vector, stopped when the Collatz-Wielandt bounds meet.
///
/// Nearly diagonal couplings have clustered leading eigenvalues and stall the
/// iteration; past the cap the largest Schur eigenvalue modulus is returned.
pub fn perron_root<T: Real>(a: &DMatrix<T>) -> Result<(T, usize)> {
    let n = a.nrows();
    let mut x = DVector::from_element(n, T::one());
    let tol = lit::<T>(POWER_ITER_TOL);
    for it in 1..=POWER_ITER_CAP {
        let y = a * &x;
        let (mut lo, mut hi) = (lit::<T>(f64::MAX), T::zero());
        let mut any = false;
        // Components that have decayed away (reducible blocks) are left out of the lower bound.
        let floor = lit::<T>(1e-9);
        for i in 0..n {
            if x[i] > floor {
                let r = y[i] / x[i];
                lo = lo.min(r);
                hi = hi.max(r);
                any = true;
            }
        }
        if !any || hi == T::zero() {
            return Ok((T::zero(), it));
        }
        if hi - lo <= tol * hi {
            return Ok(((hi + lo) * lit(0.5), it));
        }
        let norm = y.iter().copied().fold(T::zero(), T::max);
        x = y / norm;
    }
    let eig = a.clone().try_schur(T::default_epsilon(), 0).ok_or(Error::NotConverged { what: "Schur decomposition", iterations: 0 })?;
    let r = eig.complex_eigenvalues().iter().fold(T::zero(), |m, z| m.max(z.norm_sqr().sqrt()));
    Ok((r, POWER_ITER_CAP))
}

pub fn feasibility<T: Real>(c: &DualityCoupling<T>) -> Result<Feasibility<T>> {
    let mut a = c.phi.clone();
    for i in 0..a.nrows() {
        a.row_mut(i).scale_mut(c.mu[i]);
    }
    let (r, iterations) = perron_root(&a)?;
    Ok(Feasibility { feasible: r < T::one() - lit(FEASIBILITY_MARGIN), spectral_radius: r, iterations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Uplink,
    Downlink,
}

/// Noise-normalised minimum powers `p′ = p/ν` reaching the targets.
pub fn min_powers<T: Real>(c: &DualityCoupling<T>, side: Side) -> Result<DVector<T>> {
    let f = feasibility(c)?;
    if !f.feasible {
        return Err(Error::Infeasible(format!("spectral radius {:.6}", to_f64(f.spectral_radius))));
    }
    let phi = match side {
        Side::Uplink => c.phi.clone(),
        Side::Downlink => c.phi.transpose(),
    };
    let k = phi.nrows();
    let mut sys = DMatrix::identity(k, k);
    for i in 0..k {
        for j in 0..k {
            sys[(i, j)] -= c.mu[i] * phi[(i, j)];
        }
    }
    let p = sys
        .lu()
        .solve(&c.mu)
        .ok_or_else(|| Error::Singular("I − diag(μ)Φ".into()))?;
    Ok(p.map(|x| x.max(T::zero())))
}

/// Downlink powers `q` giving every user its uplink SINR under `(p, v)`.
pub fn ul_to_dl<T: Real>(h: &CMat<T>, v: &CMat<T>, p: &[T], nu: T) -> Result<Vec<T>> {
    let gamma = sinrs(h, v, nu, Link::Uplink(p))?;
    let phi = uplink_coupling(h, v)?;
    let c = DualityCoupling::new(phi, &gamma, nu)?;
    let q = min_powers(&c, Side::Downlink)?;
    Ok(q.iter().map(|&x| x * nu).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tpe::{finite_weights, horner_precoder, tests::gaussian, PrecoderMatrix};
    use nalgebra::Complex;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(m: CMat<f64>) -> CMat<f64> {
        PrecoderMatrix::normalized(m).unwrap().0.v
    }

    #[test]
    fn perron_clustered_spectrum() {
        let a = DMatrix::from_row_slice(3, 3, &[0.9, 1e-7, 0.0, 2e-7, 0.9 - 1e-9, 1e-8, 0.0, 3e-8, 0.2]);
        let (r, _) = perron_root(&a).unwrap();
        let exact = a.clone().complex_eigenvalues().iter().fold(0.0f64, |m, z| m.max(z.norm()));
        assert!((r - exact).abs() < 1e-12);
        let (r, it) = perron_root(&DMatrix::from_row_slice(2, 2, &[0.0f64, 2.0, 0.5, 0.0])).unwrap();
        assert!((r - 1.0).abs() < 1e-12, "{r} after {it}");
    }

    #[test]
    fn coupling_examples() {
        let h = CMat::<f64>::identity(4, 3);
        let phi = coupling_matrix(&h, &CMat::identity(3, 3), &h).unwrap();
        assert_eq!(phi, DMatrix::identity(3, 3));
        let h = gaussian(1, 8, 3);
        let v = unit(h.clone());
        let phi = coupling_matrix(&h, &CMat::identity(3, 3), &v).unwrap();
        for k in 0..3 {
            for j in 0..3 {
                let want = h.column(k).dotc(&h.column(j)).norm_sqr() / h.column(k).norm_squared();
                assert!((phi[(k, j)] - want).abs() < 1e-12);
            }
        }
        let u = unit(gaussian(2, 3, 3));
        let v = unit(gaussian(3, 8, 3));
        let phi = coupling_matrix(&h, &u, &v).unwrap();
        for k in 0..3 {
            for j in 0..3 {
                let mut acc = Complex::new(0.0, 0.0);
                for m in 0..8 {
                    for n in 0..3 {
                        acc += v[(m, k)].conj() * h[(m, n)] * u[(n, j)];
                    }
                }
                assert!((phi[(k, j)] - acc.norm_sqr()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_coupling_always_feasible() {
        let phi = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5f64, 2.0, 1.0]));
        let c = DualityCoupling::new(phi, &[100.0, 3.0, 1.0], 0.1).unwrap();
        let f = feasibility(&c).unwrap();
        assert!(f.feasible);
        assert!((f.spectral_radius - 100.0 / 101.0).abs() < 1e-12);
        let p = min_powers(&c, Side::Uplink).unwrap();
        for (i, (g, d)) in [(100.0, 0.5), (3.0, 2.0), (1.0, 1.0)].iter().enumerate() {
            assert!((p[i] - g / d).abs() < 1e-9 * (g / d));
        }
        let one = DualityCoupling::new(DMatrix::from_element(1, 1, 0.7f64), &[2.0], 0.1).unwrap();
        assert!((min_powers(&one, Side::Uplink).unwrap()[0] - 2.0 / 0.7).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_closed_form() {
        let phi = DMatrix::from_row_slice(2, 2, &[1.0f64, 0.3, 0.3, 1.0]);
        let c = DualityCoupling::new(phi, &[1.0, 1.0], 0.1).unwrap();
        // diag(μ)Φ = 0.5·Φ, eigenvalues 0.5·(1 ± 0.3).
        assert!((feasibility(&c).unwrap().spectral_radius - 0.65).abs() < 1e-12);
    }

    #[test]
    fn feasibility_flips_at_unit_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = DMatrix::from_fn(4, 4, |i, j| if i == j { rng.random_range(0.5..1.5) } else { rng.random_range(0.0..0.3) });
        let radius = |s: f64| {
            let c = DualityCoupling::new(phi.clone(), &[s; 4], 0.1).unwrap();
            let mut a = phi.clone();
            for i in 0..4 {
                a.row_mut(i).scale_mut(c.mu[i]);
            }
            let dense = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
            (feasibility(&c).unwrap(), dense)
        };
        let (mut lo, mut hi) = (0.01_f64, 1e6_f64);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            let (f, dense) = radius(mid);
            assert!((f.spectral_radius - dense).abs() < 1e-9);
            if f.feasible {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (_, dense) = radius(lo);
        assert!((dense - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ul_to_dl_symmetric_orthogonal() {
        let h = CMat::<f64>::identity(4, 2) * Complex::new(0.8, 0.0);
        let v = CMat::<f64>::identity(4, 2);
        let q = ul_to_dl(&h, &v, &[1.0, 1.0], 0.2).unwrap();
        assert!((q[0] - 1.0).abs() < 1e-12 && (q[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ul_to_dl_asymmetric_pair() {
        let h = CMat::from_row_slice(2, 2, &[Complex::new(1.0, 0.0), Complex::new(0.6, 0.2), Complex::new(0.1, -0.3), Complex::new(0.4, 0.0)]);
        let v = unit(CMat::from_row_slice(2, 2, &[Complex::new(1.0, 0.0), Complex::new(0.2, 0.0), Complex::new(-0.3, 0.1), Complex::new(1.0, 0.0)]));
        let p = [0.5, 1.5];
        let nu = 0.3;
        let q = ul_to_dl(&h, &v, &p, nu).unwrap();
        let ul = sinrs(&h, &v, nu, Link::Uplink(&p)).unwrap();
        let dl = sinrs(&h, &v, nu, Link::Downlink(&q)).unwrap();
        for k in 0..2 {
            assert!((ul[k] - dl[k]).abs() < 1e-8 * ul[k].max(1.0));
        }
        assert!((q.iter().sum::<f64>() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn tpe_vectors_conserve_power() {
        let h = gaussian(12, 32, 4);
        let p = [0.7, 1.1, 1.3, 0.9];
        let w = finite_weights(&h, &p, 0.1, 2).unwrap();
        let v = horner_precoder(&h, &p, &w, 2).unwrap();
        let q = ul_to_dl(&h, &v.v, &p, 0.1).unwrap();
        assert!((q.iter().sum::<f64>() - 4.0).abs() < 1e-10);
    }

    fn random_instance(seed: u64, k: usize) -> (CMat<f64>, CMat<f64>, CMat<f64>, Vec<f64>) {
        let h = gaussian(seed, 12, k);
        let u = unit(gaussian(seed + 1, k, k));
        let v = unit(gaussian(seed + 2, 12, k));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets = (0..k).map(|_| rng.random_range(0.01..0.2)).collect();
        (h, u, v, targets)
    }

    proptest! {
        #[test]
        fn sum_power_conservation(seed in 0u64..1000, k in 1usize..6) {
            let (h, u, v, targets) = random_instance(seed, k);
            let phi = coupling_matrix(&h, &u, &v).unwrap();
            let c = DualityCoupling::new(phi, &targets, 0.1).unwrap();
            if feasibility(&c).unwrap().feasible {
                let up = min_powers(&c, Side::Uplink).unwrap();
                let dn = min_powers(&c, Side::Downlink).unwrap();
                prop_assert!((up.sum() - dn.sum()).abs() < 1e-10 * up.sum().max(1.0));
            }
        }

        #[test]
        fn targets_are_attained_and_minimal(seed in 0u64..1000, k in 1usize..5) {
            let (h, u, v, targets) = random_instance(seed, k);
            let phi = coupling_matrix(&h, &u, &v).unwrap();
            let c = DualityCoupling::new(phi.clone(), &targets, 0.1).unwrap();
            prop_assume!(feasibility(&c).unwrap().feasible);
            let p = min_powers(&c, Side::Uplink).unwrap();
            let sinr = |p: &DVector<f64>, i: usize| {
                let interf: f64 = (0..k).filter(|&j| j != i).map(|j| phi[(i, j)] * p[j]).sum();
                phi[(i, i)] * p[i] / (1.0 + interf)
            };
            for i in 0..k {
                prop_assert!((sinr(&p, i) - targets[i]).abs() < 1e-8 * targets[i].max(1.0));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
            for _ in 0..20 {
                let cand = DVector::from_fn(k, |i, _| p[i] * rng.random_range(0.9..3.0));
                if (0..k).all(|i| sinr(&cand, i) >= targets[i]) {
                    for i in 0..k {
                        prop_assert!(cand[i] >= p[i] - 1e-8);
                    }
                }
            }
        }

        #[test]
        fn dl_sinr_matches_ul(seed in 0u64..1000, k in 1usize..5) {
            let h = gaussian(seed, 16, k);
            let v = unit(gaussian(seed + 5, 16, k));
            let p: Vec<f64> = (0..k).map(|i| 0.5 + (i as f64) / k as f64).collect();
            let q = ul_to_dl(&h, &v, &p, 0.2).unwrap();
            let ul = sinrs(&h, &v, 0.2, Link::Uplink(&p)).unwrap();
            let dl = sinrs(&h, &v, 0.2, Link::Downlink(&q)).unwrap();
            for i in 0..k {
                prop_assert!((ul[i] - dl[i]).abs() < 1e-8 * ul[i].max(1.0));
            }
            prop_assert!((q.iter().sum::<f64>() - p.iter().sum::<f64>()).abs() < 1e-8);
        }
    }
}
