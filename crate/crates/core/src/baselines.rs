//! Reference precoders: conjugate beamforming, MMSE/RZF, Householder-QR
//! inversion and the free-probability TPE of Zarei et al.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use num_traits::{FromPrimitive, Num};

use crate::asymptotics::MAX_ORDER;
use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, re, to_f64, CMat, CVec, Real};
use crate::tpe::{spd_solve, PrecoderMatrix};

/// `v_k = h_k / ‖h_k‖`.
pub fn conj_bf<T: Real>(h: &CMat<T>) -> Result<PrecoderMatrix<T>> {
    Ok(PrecoderMatrix::normalized(h.clone())?.0)
}

fn pg_plus_nu<T: Real>(h: &CMat<T>, p: &[T], nu: T) -> Result<CMat<T>> {
    if p.len() != h.ncols() {
        return Err(Error::Dimension(format!("{} powers for {} users", p.len(), h.ncols())));
    }
    let mut a = h.adjoint() * h;
    for (k, &pk) in p.iter().enumerate() {
        a.row_mut(k).scale_mut(pk);
    }
    for k in 0..a.nrows() {
        a[(k, k)] += re(nu);
    }
    Ok(a)
}

/// SINR-maximising receivers `v_k ∝ H(GPG + νG)^{-1} g_k` and their SINRs.
///
/// Uses `(GPG + νG)^{-1} g_k = (PG + νI)^{-1} e_k`, so a singular Gram matrix
/// is fine as long as `ν > 0`.
pub fn mmse_receiver<T: Real>(h: &CMat<T>, p: &[T], nu: T) -> Result<(PrecoderMatrix<T>, Vec<T>)> {
    let k = h.ncols();
    let a = pg_plus_nu(h, p, nu)?;
    let x = a
        .lu()
        .solve(&CMat::identity(k, k))
        .ok_or_else(|| Error::Singular("PG + νI".into()))?;
    let g = h.adjoint() * h;
    let gx = &g * &x;
    let mut sinr = Vec::with_capacity(k);
    for j in 0..k {
        let s = gx[(j, j)].re * p[j];
        if !(s < T::one()) {
            return Err(Error::NonPhysical(format!("MMSE quadratic form {} ≥ 1 for user {j}", to_f64(s))));
        }
        sinr.push(s / (T::one() - s));
    }
    let v = PrecoderMatrix::normalized(h * x)?.0;
    Ok((v, sinr))
}

/// Output of one HVC step.
#[derive(Debug, Clone, PartialEq)]
pub struct HouseholderVector<T: Real> {
    pub phi: CVec<T>,
    pub zeta: T,
    pub sigma: T,
    pub alpha: T,
    /// Energy above the diagonal; reported but not used by the reflector.
    pub gamma: T,
}

/// Householder vector zeroing column `k` of `g` below the diagonal.
///
/// `μ = 1 + sqrt(1 + σ/α)` makes `I − ζφφᴴ` map `g[k:,k]` onto `e_k`; the
/// entries above the diagonal belong to `R` and stay out of `μ`.
pub fn householder_vector<T: Real>(g: &CMat<T>, k: usize) -> Result<HouseholderVector<T>> {
    let n = g.nrows();
    if k >= n {
        return Err(Error::Dimension(format!("column {k} of a {n}×{n} matrix")));
    }
    let sigma = (k + 1..n).fold(T::zero(), |a, i| a + g[(i, k)].norm_sqr());
    let alpha = g[(k, k)].norm_sqr();
    let gamma = (0..k).fold(T::zero(), |a, i| a + g[(i, k)].norm_sqr());
    let phi_k = if alpha > T::zero() {
        g[(k, k)] * (T::one() + (T::one() + sigma / alpha).sqrt())
    } else if sigma > T::zero() {
        re(sigma.sqrt())
    } else {
        return Err(Error::Singular(format!("zero pivot in column {k}")));
    };
    let mut phi = CVec::zeros(n);
    phi[k] = phi_k;
    for i in k + 1..n {
        phi[i] = g[(i, k)];
    }
    let zeta = lit::<T>(2.0) / (sigma + phi_k.norm_sqr());
    Ok(HouseholderVector { phi, zeta, sigma, alpha, gamma })
}

/// `A ← A − ζ φ (φᴴ A)`.
pub fn householder_apply<T: Real>(a: &mut CMat<T>, hv: &HouseholderVector<T>) {
    let p = hv.phi.adjoint() * &*a;
    let q = &hv.phi * re(hv.zeta);
    *a -= q * p;
}

/// `(Q, R)` with `Q G = R` upper triangular and `Q` unitary.
pub fn qrh_decompose<T: Real>(g: &CMat<T>) -> Result<(CMat<T>, CMat<T>)> {
    let n = g.nrows();
    if g.ncols() != n || n == 0 {
        return Err(Error::Dimension("QRH needs a non-empty square matrix".into()));
    }
    let mut r = g.clone();
    let mut q = CMat::identity(n, n);
    for k in 0..n.saturating_sub(1) {
        let hv = householder_vector(&r, k)?;
        householder_apply(&mut r, &hv);
        householder_apply(&mut q, &hv);
        for i in k + 1..n {
            r[(i, k)] = Complex::new(T::zero(), T::zero());
        }
    }
    Ok((q, r))
}

/// Back substitution `X = R^{-1} Q` on the rows of `Q`.
pub fn back_substitute<T: Real>(r: &CMat<T>, q: &CMat<T>) -> Result<CMat<T>> {
    let n = r.nrows();
    let mut q = q.clone();
    let mut x = CMat::zeros(n, q.ncols());
    let scale = r.diagonal().iter().fold(T::zero(), |a, z| a.max(z.norm_sqr().sqrt()));
    for k in (0..n).rev() {
        let d = r[(k, k)];
        if !(d.norm_sqr().sqrt() > T::default_epsilon() * scale) {
            return Err(Error::Singular(format!("zero pivot R[{k},{k}]")));
        }
        let row = q.row(k) / d;
        x.set_row(k, &row);
        for i in 0..k {
            let f = r[(i, k)];
            let upd = &row * f;
            let mut qi = q.row_mut(i);
            qi -= upd;
        }
    }
    Ok(x)
}

/// Inverse of a Hermitian positive definite matrix via Householder QR and
/// back substitution.
pub fn qrh_invert<T: Real>(g: &CMat<T>) -> Result<CMat<T>> {
    let (q, r) = qrh_decompose(g)?;
    back_substitute(&r, &q)
}

/// Columns of `H(G + εI)^{-1}`, normalised.
pub fn rzf_precoder<T: Real>(h: &CMat<T>, epsilon: T) -> Result<PrecoderMatrix<T>> {
    if epsilon < T::zero() {
        return Err(Error::Config("RZF regularisation must be nonnegative".into()));
    }
    let mut g = h.adjoint() * h;
    for k in 0..g.nrows() {
        g[(k, k)] += re(epsilon);
    }
    let inv = qrh_invert(&g)?;
    Ok(PrecoderMatrix::normalized(h * inv)?.0)
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// `ρ̆_ℓ = (1/ℓ) Σ_{i=0}^{ℓ-1} C(ℓ,i) C(ℓ,i+1) β^i`, with `ρ̆_0 = 1`.
pub fn zarei_moment<N: Num + FromPrimitive + Clone>(beta: N, ell: usize) -> N {
    if ell == 0 {
        return N::one();
    }
    let l = ell as u64;
    let mut acc = N::zero();
    let mut pow = N::one();
    for i in 0..l {
        let c = N::from_u128(binomial(l, i) * binomial(l, i + 1)).expect("binomial fits");
        acc = acc + c * pow.clone();
        pow = pow * beta.clone();
    }
    acc / N::from_u64(l).expect("order fits")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZareiModel<T: Real> {
    pub omega: DVector<T>,
    /// `(1/K) tr(P̆^{-1})`.
    pub b1: T,
    /// `(1/K) tr(P̆)`.
    pub b2: T,
    /// `ρ̆_0..ρ̆_{2J+2}`.
    pub moments: Vec<T>,
    /// `A_k = tr(R_k)/M` as assumed by the mismatched model.
    pub pathloss: Vec<T>,
}

impl<T: Real> ZareiModel<T> {
    /// Coefficients for pathlosses `A`, powers `p`, load `β` and noise `ν`.
    pub fn new(pathloss: &[T], p: &[T], beta: T, nu: T, j: usize) -> Result<Self> {
        if pathloss.len() != p.len() || p.is_empty() {
            return Err(Error::Dimension("pathloss and power vectors must match".into()));
        }
        if pathloss.iter().chain(p).any(|&x| !(x > T::zero())) {
            return Err(Error::Config("pathlosses and powers must be positive".into()));
        }
        let k = from_usize::<T>(p.len());
        let b1 = pathloss.iter().zip(p).fold(T::zero(), |s, (&a, &q)| s + T::one() / (a * q)) / k;
        let b2 = pathloss.iter().zip(p).fold(T::zero(), |s, (&a, &q)| s + a * q) / k;
        let omega = zarei_weights(beta, b1, b2, nu, j)?;
        let moments = (0..=2 * j + 2).map(|l| zarei_moment(beta, l)).collect();
        Ok(Self { omega, b1, b2, moments, pathloss: pathloss.to_vec() })
    }
}

/// `ω = [(1 − b₁b₂) ăăᵀ + b₁b₂ B̆ + ν b₁ C̆]^{-1} ă`.
pub fn zarei_weights<T: Real>(beta: T, b1: T, b2: T, nu: T, j: usize) -> Result<DVector<T>> {
    if j > MAX_ORDER {
        return Err(Error::OrderTooLarge { order: j, max: MAX_ORDER });
    }
    let rho: Vec<T> = (0..=2 * j + 2).map(|l| zarei_moment(beta, l)).collect();
    let n = j + 1;
    let a = DVector::from_fn(n, |l, _| rho[l + 1]);
    let bb = DMatrix::from_fn(n, n, |l, lp| rho[l + lp + 2]);
    let cc = DMatrix::from_fn(n, n, |l, lp| rho[l + lp + 1]);
    let b12 = b1 * b2;
    let m = &a * a.transpose() * (T::one() - b12) + bb * b12 + cc * (nu * b1);
    spd_solve(&m, &a)
}

/// `V = ℍ Σ_l ω_l (ℍᴴℍ)^l` with `ℍ = H A^{-1/2}`, columns normalised.
pub fn zarei_precoder<T: Real>(h: &CMat<T>, model: &ZareiModel<T>) -> Result<PrecoderMatrix<T>> {
    let k = h.ncols();
    if model.pathloss.len() != k {
        return Err(Error::Dimension(format!("model has {} users, channel {k}", model.pathloss.len())));
    }
    let mut hh = h.clone();
    for (j, &a) in model.pathloss.iter().enumerate() {
        hh.column_mut(j).scale_mut(T::one() / a.sqrt());
    }
    let g = hh.adjoint() * &hh;
    let jj = model.omega.len() - 1;
    let mut poly = CMat::identity(k, k) * re(model.omega[jj]);
    for l in (0..jj).rev() {
        poly = &g * poly + CMat::identity(k, k) * re(model.omega[l]);
    }
    Ok(PrecoderMatrix::normalized(hh * poly)?.0)
}
