//! TPE quadratic forms, optimal weights, SINR evaluation and Horner-rule precoding.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex;

use crate::asymptotics::{moment_table, MAX_ORDER};
use crate::channel::{variance_profile, CovarianceModel};
use crate::error::{Error, Result};
use crate::scalar::{column_norm, from_usize, lit, re, to_f64, CMat, CVec, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct TpeQuadratics<T: Real> {
    pub a: DVector<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub order: usize,
    pub user: usize,
}

impl<T: Real> TpeQuadratics<T> {
    /// Hankel triple from a moment sequence `μ_0..μ_{2J+1}`.
    pub fn from_moments(mu: &[T], order: usize, user: usize) -> Result<Self> {
        if mu.len() < 2 * order + 2 {
            return Err(Error::Dimension(format!("need {} moments for J={order}, got {}", 2 * order + 2, mu.len())));
        }
        let n = order + 1;
        Ok(Self {
            a: DVector::from_fn(n, |l, _| mu[l]),
            b: DMatrix::from_fn(n, n, |l, lp| mu[l + lp + 1]),
            c: DMatrix::from_fn(n, n, |l, lp| mu[l + lp]),
            order,
            user,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpeWeights<T: Real> {
    pub w: DVector<T>,
    pub alpha_star: T,
    pub sinr: T,
}

/// Unit-norm precoding (or receive) vectors, one column per user.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderMatrix<T: Real> {
    pub v: CMat<T>,
}

impl<T: Real> PrecoderMatrix<T> {
    /// Normalises every column of `v`; returns the original norms too.
    pub fn normalized(mut v: CMat<T>) -> Result<(Self, Vec<T>)> {
        let mut norms = Vec::with_capacity(v.ncols());
        for k in 0..v.ncols() {
            let n = column_norm(&v, k);
            if !(n > T::zero()) || !n.is_finite() {
                return Err(Error::ZeroDenominator("precoder column normalisation"));
            }
            v.column_mut(k).scale_mut(T::one() / n);
            norms.push(n);
        }
        Ok((Self { v }, norms))
    }
}

fn check_order(j: usize) -> Result<()> {
    if j > MAX_ORDER {
        return Err(Error::OrderTooLarge { order: j, max: MAX_ORDER });
    }
    Ok(())
}

fn real_part<T: Real>(z: Complex<T>) -> Result<T> {
    if z.im.abs() > T::residue_tol() * z.re.abs().max(T::one()) {
        return Err(Error::NonPhysical(format!("quadratic form has imaginary residue {:e}", to_f64(z.im))));
    }
    Ok(z.re)
}

/// Finite-sample triple for user `k` of the scaled channel `H̄ = H P^{1/2}`,
/// from the Krylov vectors `Γ̄^i h̄_k`.
pub fn quadratics_finite<T: Real>(hbar: &CMat<T>, k: usize, j: usize) -> Result<TpeQuadratics<T>> {
    check_order(j)?;
    if k >= hbar.ncols() {
        return Err(Error::Dimension(format!("user {k} out of range")));
    }
    let mut s: Vec<CVec<T>> = vec![hbar.column(k).clone_owned()];
    for i in 0..=j {
        let next = hbar * (hbar.adjoint() * &s[i]);
        s.push(next);
    }
    let mut mu = Vec::with_capacity(2 * j + 2);
    for n in 0..2 * j + 2 {
        mu.push(real_part(s[n / 2].dotc(&s[n - n / 2]))?);
    }
    TpeQuadratics::from_moments(&mu, j, k)
}

/// Large-system triple from a row `ρ^∞_{k,0..2J+1}`.
pub fn quadratics_asymptotic<T: Real>(rho: &[T], j: usize, user: usize) -> Result<TpeQuadratics<T>> {
    TpeQuadratics::from_moments(rho, j, user)
}

/// Solves `A x = b` for symmetric positive definite `A` after diagonal
/// equilibration, escalating a diagonal jitter on factorisation failure.
pub fn spd_solve<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> Result<DVector<T>> {
    let n = a.nrows();
    let scale: Vec<T> = (0..n)
        .map(|i| if a[(i, i)] > T::zero() { T::one() / a[(i, i)].sqrt() } else { T::one() })
        .collect();
    let mut s = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * scale[i] * scale[j]);
    s = (&s + s.transpose()) * lit::<T>(0.5);
    let rhs = DVector::from_fn(n, |i, _| b[i] * scale[i]);
    let tr = s.trace();
    let base = tr / from_usize::<T>(n);
    let mut jitter = T::zero();
    let mut next = lit::<T>(1e-12) * base;
    let cap = lit::<T>(1e-6) * tr;
    loop {
        let mut m = s.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(m) {
            let y = ch.solve(&rhs);
            if y.iter().all(|v| v.is_finite()) {
                return Ok(DVector::from_fn(n, |i, _| y[i] * scale[i]));
            }
        }
        if next > cap {
            return Err(Error::Singular(format!("not positive definite after jitter {:e}", to_f64(jitter))));
        }
        jitter = next;
        next *= lit(10.0);
    }
}

/// `w = α*(B+νC)^{-1}a` with unit-norm normalisation and the resulting SINR.
pub fn optimal_weights<T: Real>(q: &TpeQuadratics<T>, nu: T, p_k: T) -> Result<TpeWeights<T>> {
    let m = &q.b + &q.c * nu;
    let x = spd_solve(&m, &q.a)?;
    let s = q.a.dot(&x);
    let denom = T::one() - s;
    if !(denom > T::zero()) {
        return Err(Error::NonPhysical(format!("1 - aᵀ(B+νC)⁻¹a = {:e} for user {}", to_f64(denom), q.user)));
    }
    let energy = x.dot(&(&q.c * &x));
    if !(energy > T::zero()) {
        return Err(Error::NonPhysical(format!("zero receiver energy for user {}", q.user)));
    }
    if !(p_k > T::zero()) {
        return Err(Error::Config(format!("user {} has no power", q.user)));
    }
    let alpha_star = (p_k / energy).sqrt();
    Ok(TpeWeights { w: x * alpha_star, alpha_star, sinr: s / denom })
}

/// Weights from the realisation itself (genie coefficients).
///
/// The reported SINR comes from [`krylov_sinr`]; the Hankel route loses
/// digits through `1 − aᵀx` once the monomial basis is ill-conditioned.
pub fn finite_weights<T: Real>(h: &CMat<T>, p: &[T], nu: T, j: usize) -> Result<Vec<TpeWeights<T>>> {
    let hbar = scaled_channel(h, p)?;
    (0..h.ncols())
        .map(|k| {
            let mut w = optimal_weights(&quadratics_finite(&hbar, k, j)?, nu, p[k])?;
            w.sinr = krylov_sinr(&hbar, k, j, nu)?;
            Ok(w)
        })
        .collect()
}

/// Best SINR over `span{Γ̄^i h̄_k : i ≤ J}`, `yᴴ(QᴴΓ̄_{[k]}Q + νI)^{-1}y` with
/// `Q` an orthonormal (Lanczos, fully reorthogonalised) basis and `y = Qᴴh̄_k`.
///
/// Directions that vanish after reorthogonalisation end the basis early, as
/// happens once the Krylov space fills `span(H̄)`.
pub fn krylov_sinr<T: Real>(hbar: &CMat<T>, k: usize, j: usize, nu: T) -> Result<T> {
    check_order(j)?;
    let kk = hbar.ncols();
    if k >= kk {
        return Err(Error::Dimension(format!("user {k} out of range")));
    }
    if !(nu > T::zero()) {
        return Err(Error::Config("noise level must be positive".into()));
    }
    let hk = hbar.column(k).clone_owned();
    let h0 = hk.norm();
    if !(h0 > T::zero()) {
        return Ok(T::zero());
    }
    let drop = lit::<T>(1e-10);
    let mut basis: Vec<CVec<T>> = vec![&hk / re(h0)];
    while basis.len() <= j {
        let last = basis.last().expect("nonempty basis");
        let mut next = hbar * (hbar.adjoint() * last);
        let scale = next.norm();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dotc(&next);
                next -= q * c;
            }
        }
        let n = next.norm();
        if !(n > drop * scale) {
            break;
        }
        basis.push(next / re(n));
    }
    let q = CMat::from_columns(&basis);
    let mut others = hbar.clone();
    others.column_mut(k).fill(re(T::zero()));
    let w = others.adjoint() * &q;
    let mut z = w.adjoint() * w;
    for i in 0..z.nrows() {
        z[(i, i)] += re(nu);
    }
    let y = q.adjoint() * &hk;
    let x = z.cholesky().ok_or_else(|| Error::Singular("Krylov interference matrix".into()))?.solve(&y);
    real_part(y.dotc(&x))
}

/// Weights from channel statistics through the large-system moments.
pub fn asymptotic_weights<T: Real>(cov: &CovarianceModel<T>, p: &[T], nu: T, j: usize) -> Result<Vec<TpeWeights<T>>> {
    let table = moment_table(&variance_profile(cov, p)?, 2 * j + 1)?;
    (0..cov.k())
        .map(|k| {
            let row: Vec<T> = table.rho.column(k).iter().copied().collect();
            optimal_weights(&quadratics_asymptotic(&row, j, k)?, nu, p[k])
        })
        .collect()
}

/// `H P^{1/2}`.
pub fn scaled_channel<T: Real>(h: &CMat<T>, p: &[T]) -> Result<CMat<T>> {
    if p.len() != h.ncols() {
        return Err(Error::Dimension(format!("{} powers for {} users", p.len(), h.ncols())));
    }
    let mut out = h.clone();
    for (k, &pk) in p.iter().enumerate() {
        if pk < T::zero() {
            return Err(Error::Config("negative power".into()));
        }
        out.column_mut(k).scale_mut(pk.sqrt());
    }
    Ok(out)
}

fn weight_matrix<T: Real>(weights: &[TpeWeights<T>], j: usize) -> Result<DMatrix<T>> {
    let mut w = DMatrix::zeros(weights.len(), j + 1);
    for (k, wk) in weights.iter().enumerate() {
        if wk.w.len() != j + 1 {
            return Err(Error::Dimension(format!("user {k} has {} weights, expected {}", wk.w.len(), j + 1)));
        }
        for l in 0..=j {
            w[(k, l)] = wk.w[l];
        }
    }
    Ok(w)
}

fn pg<T: Real>(h: &CMat<T>, p: &[T]) -> Result<CMat<T>> {
    if p.len() != h.ncols() {
        return Err(Error::Dimension(format!("{} powers for {} users", p.len(), h.ncols())));
    }
    let mut g = h.adjoint() * h;
    for (k, &pk) in p.iter().enumerate() {
        g.row_mut(k).scale_mut(pk);
    }
    Ok(g)
}

/// `H V^{(0)}` from `V^{(J)} = W^{(J)}`, `V^{(n)} = W^{(n)} + PG V^{(n+1)}`, before normalisation.
pub fn horner_unnormalized<T: Real>(h: &CMat<T>, p: &[T], weights: &[TpeWeights<T>], j: usize) -> Result<CMat<T>> {
    let k = h.ncols();
    if weights.len() != k {
        return Err(Error::Dimension(format!("{} weight vectors for {k} users", weights.len())));
    }
    let w = weight_matrix(weights, j)?;
    let pg = pg(h, p)?;
    let diag = |l: usize| CMat::<T>::from_diagonal(&CVec::from_fn(k, |i, _| re(w[(i, l)])));
    let mut v = diag(j);
    for n in (0..j).rev() {
        v = diag(n) + &pg * v;
    }
    Ok(h * v)
}

/// Horner-rule TPE precoder with unit-norm columns.
pub fn horner_precoder<T: Real>(h: &CMat<T>, p: &[T], weights: &[TpeWeights<T>], j: usize) -> Result<PrecoderMatrix<T>> {
    Ok(PrecoderMatrix::normalized(horner_unnormalized(h, p, weights, j)?)?.0)
}

/// `H x^{(0)}` from `x^{(J)} = W^{(J)} s`, `x^{(n)} = W^{(n)} s + PG x^{(n+1)}`.
///
/// Equals `horner_unnormalized(..) · s`; to match the normalised precoder,
/// divide each `s_k` by the corresponding column norm first.
pub fn direct_tpe_transmit<T: Real>(h: &CMat<T>, p: &[T], weights: &[TpeWeights<T>], s: &CVec<T>) -> Result<CVec<T>> {
    let k = h.ncols();
    if weights.len() != k || s.len() != k {
        return Err(Error::Dimension("weights and symbols must match the user count".into()));
    }
    let j = weights.first().map(|w| w.w.len().saturating_sub(1)).unwrap_or(0);
    let w = weight_matrix(weights, j)?;
    let pg = pg(h, p)?;
    let ws = |l: usize| CVec::<T>::from_fn(k, |i, _| s[i] * w[(i, l)]);
    let mut x = ws(j);
    for n in (0..j).rev() {
        x = ws(n) + &pg * x;
    }
    Ok(h * x)
}

/// Which SINR expression to evaluate.
#[derive(Debug, Clone, Copy)]
pub enum Link<'a, T> {
    /// Uplink receive SINR with UL powers `p`.
    Uplink(&'a [T]),
    /// Downlink SINR with DL powers `q`.
    Downlink(&'a [T]),
}

/// SINR of user `k` for vector set `v`.
pub fn finite_sinr<T: Real>(h: &CMat<T>, v: &CMat<T>, nu: T, k: usize, link: Link<'_, T>) -> Result<T> {
    let kk = h.ncols();
    if v.ncols() != kk || v.nrows() != h.nrows() || k >= kk {
        return Err(Error::Dimension("vector set does not match the channel".into()));
    }
    match link {
        Link::Uplink(p) => {
            let vk = v.column(k);
            let mut interference = nu * vk.norm_squared();
            let mut signal = T::zero();
            for j in 0..kk {
                let g = vk.dotc(&h.column(j)).norm_sqr() * p[j];
                if j == k {
                    signal = g;
                } else {
                    interference += g;
                }
            }
            if !(interference > T::zero()) {
                return Err(Error::ZeroDenominator("uplink SINR"));
            }
            Ok(signal / interference)
        }
        Link::Downlink(q) => {
            let hk = h.column(k);
            let mut interference = nu;
            let mut signal = T::zero();
            for j in 0..kk {
                let g = hk.dotc(&v.column(j)).norm_sqr() * q[j];
                if j == k {
                    signal = g;
                } else {
                    interference += g;
                }
            }
            if !(interference > T::zero()) {
                return Err(Error::ZeroDenominator("downlink SINR"));
            }
            Ok(signal / interference)
        }
    }
}

/// All users' SINRs.
pub fn sinrs<T: Real>(h: &CMat<T>, v: &CMat<T>, nu: T, link: Link<'_, T>) -> Result<Vec<T>> {
    (0..h.ncols()).map(|k| finite_sinr(h, v, nu, k, link)).collect()
}

/// CSV with header `user,order,weight_0..weight_J,alpha_star,sinr`.
pub fn write_weights_csv<T: Real, W: Write>(weights: &[TpeWeights<T>], out: W) -> Result<()> {
    let j = weights.first().map(|w| w.w.len().saturating_sub(1)).unwrap_or(0);
    let mut wr = csv::Writer::from_writer(out);
    let mut header = vec!["user".to_string(), "order".to_string()];
    header.extend((0..=j).map(|l| format!("weight_{l}")));
    header.push("alpha_star".into());
    header.push("sinr".into());
    wr.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
    for (k, w) in weights.iter().enumerate() {
        let mut row = vec![k.to_string(), j.to_string()];
        row.extend(w.w.iter().map(|x| format!("{:e}", to_f64(*x))));
        row.push(format!("{:e}", to_f64(w.alpha_star)));
        row.push(format!("{:e}", to_f64(w.sinr)));
        wr.write_record(&row).map_err(|e| Error::Parse(e.to_string()))?;
    }
    wr.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}
