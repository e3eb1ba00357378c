//! Geometric uniform-linear-array channel model.
//!
//! Users see the union of a few angular scattering clusters. Each cluster has a
//! flat angular density, which gives a Hermitian Toeplitz covariance per user.
//! The circulant approximation of that covariance provides the DFT-domain
//! variance profile used by the large-system moment recursion.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::{cis, from_usize, lit, to_f64, CMat, CVec, Real};

/// Nodes per Gauss-Legendre panel.
const GL_PANEL_NODES: usize = 16;
/// Minimum number of panels per cluster (16 × 32 = 512 nodes).
const GL_MIN_PANELS: usize = 32;
/// Largest phase excursion of the integrand allowed inside one panel, radians.
const GL_PANEL_PHASE: f64 = 4.0;

/// Eigenvalues of an exact Toeplitz covariance are clipped at zero above this
/// threshold (relative to the largest eigenvalue) and rejected below it.
pub const TOEPLITZ_CLIP: f64 = 1e-6;
/// The wrapped circulant spectrum may ripple negative; it is rejected only
/// below this fraction of its largest eigenvalue.
pub const CIRCULANT_REJECT: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig<T> {
    /// Antennas.
    pub m: usize,
    /// Users.
    pub k: usize,
    /// Linear transmit SNR `P/N0`.
    pub snr: T,
    /// Spatial load `K/M`.
    pub beta: T,
    /// Per-component noise variance `β/SNR`.
    pub nu: T,
    /// Antenna spacing over wavelength.
    pub spacing: T,
}

impl<T: Real> SystemConfig<T> {
    pub fn new(m: usize, k: usize, snr: T) -> Result<Self> {
        Self::with_spacing(m, k, snr, lit(0.5))
    }

    pub fn with_spacing(m: usize, k: usize, snr: T, spacing: T) -> Result<Self> {
        if m < 2 || k < 1 || k > m {
            return Err(Error::Config(format!("need M ≥ 2, 1 ≤ K ≤ M (got M={m}, K={k})")));
        }
        if snr <= T::zero() || spacing <= T::zero() {
            return Err(Error::Config("snr and antenna spacing must be positive".into()));
        }
        let beta = from_usize::<T>(k) / from_usize::<T>(m);
        Ok(Self { m, k, snr, beta, nu: beta / snr, spacing })
    }

    pub fn from_snr_db(m: usize, k: usize, snr_db: f64) -> Result<Self> {
        Self::new(m, k, lit(10f64.powf(snr_db / 10.0)))
    }

    /// Same array and users at another SNR.
    pub fn at_snr(&self, snr: T) -> Result<Self> {
        Self::with_spacing(self.m, self.k, snr, self.spacing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cluster<T> {
    /// Centre angle of arrival, radians.
    pub center: T,
    /// Angular spread (support width), radians.
    pub spread: T,
}

/// How per-user covariances are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pathloss {
    /// Each cluster density integrates to `1/S`, so `A_k = |S_k|/S`.
    #[default]
    ClusterShare,
    /// Each user covariance is rescaled to unit diagonal, `A_k = 1`.
    Unit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringGeometry<T> {
    pub clusters: Vec<Cluster<T>>,
    /// `association[k]` lists the cluster indices seen by user `k`.
    pub association: Vec<Vec<usize>>,
    pub sector: (T, T),
    pub pathloss: Pathloss,
}

impl<T: Real> ScatteringGeometry<T> {
    pub fn new(clusters: Vec<Cluster<T>>, association: Vec<Vec<usize>>) -> Result<Self> {
        let third = T::pi() / lit(3.0);
        let g = Self { clusters, association, sector: (-third, third), pathloss: Pathloss::ClusterShare };
        g.validate()?;
        Ok(g)
    }

    pub fn with_pathloss(mut self, pathloss: Pathloss) -> Self {
        self.pathloss = pathloss;
        self
    }

    pub fn with_sector(mut self, lo: T, hi: T) -> Result<Self> {
        self.sector = (lo, hi);
        self.validate()?;
        Ok(self)
    }

    /// Builds the association from an asterisk grid: one row per cluster, one
    /// column per user, `*` marking a coupling.
    pub fn association_from_grid(rows: &[&str]) -> Result<Vec<Vec<usize>>> {
        let users = rows.first().map(|r| r.chars().count()).unwrap_or(0);
        if rows.iter().any(|r| r.chars().count() != users) {
            return Err(Error::Parse("association rows have different lengths".into()));
        }
        let mut assoc = vec![Vec::new(); users];
        for (s, row) in rows.iter().enumerate() {
            for (k, c) in row.chars().enumerate() {
                match c {
                    '*' => assoc[k].push(s),
                    '.' | ' ' | '-' => {}
                    other => return Err(Error::Parse(format!("unexpected symbol {other:?} in association grid"))),
                }
            }
        }
        Ok(assoc)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.clusters.len();
        if s == 0 {
            return Err(Error::Config("geometry has no clusters".into()));
        }
        if self.association.is_empty() {
            return Err(Error::Config("geometry has no users".into()));
        }
        for (k, set) in self.association.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Config(format!("user {k} is not associated with any cluster")));
            }
            if let Some(bad) = set.iter().find(|&&c| c >= s) {
                return Err(Error::Config(format!("user {k} references cluster {bad}, only {s} exist")));
            }
        }
        let slack: T = lit(1e-12);
        for (i, c) in self.clusters.iter().enumerate() {
            let half = c.spread / lit(2.0);
            if c.spread <= T::zero() {
                return Err(Error::Config(format!("cluster {i} has non-positive spread")));
            }
            if c.center - half < self.sector.0 - slack || c.center + half > self.sector.1 + slack {
                return Err(Error::Config(format!("cluster {i} support leaves the sector")));
            }
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.association.len()
    }

    /// Nominal pathloss `A_k` implied by the normalisation rule.
    pub fn nominal_pathloss(&self, k: usize) -> T {
        match self.pathloss {
            Pathloss::ClusterShare => from_usize::<T>(self.association[k].len()) / from_usize::<T>(self.clusters.len()),
            Pathloss::Unit => T::one(),
        }
    }
}

/// `a(θ)_m = exp(-j2π m (d/λ) sin θ)`.
pub fn array_response<T: Real>(theta: T, cfg: &SystemConfig<T>) -> CVec<T> {
    let step = -T::two_pi() * cfg.spacing * theta.sin();
    CVec::from_iterator(cfg.m, (0..cfg.m).map(|m| cis(step * from_usize::<T>(m))))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Toeplitz generator `r_n = ∫ e^{-j2π(d/λ) n sin θ} ρ_k(θ) dθ`, `n = 0..M`.
pub fn toeplitz_covariance<T: Real>(geom: &ScatteringGeometry<T>, k: usize, cfg: &SystemConfig<T>) -> Result<Vec<Complex<T>>> {
    geom.validate()?;
    let set = geom
        .association
        .get(k)
        .ok_or_else(|| Error::Config(format!("user {k} out of range")))?;
    if set.is_empty() {
        return Err(Error::Config(format!("user {k} is not associated with any cluster")));
    }
    let (gx, gw) = gauss_legendre(GL_PANEL_NODES);
    let s_total = from_usize::<T>(geom.clusters.len());
    let mut r = vec![Complex::new(T::zero(), T::zero()); cfg.m];
    for &s in set {
        let c = geom.clusters[s];
        let lo = c.center - c.spread / lit(2.0);
        let phase_span = 2.0 * PI * to_f64(cfg.spacing) * (cfg.m.saturating_sub(1)) as f64 * to_f64(c.spread);
        let panels = GL_MIN_PANELS.max((phase_span / GL_PANEL_PHASE).ceil() as usize);
        let width = c.spread / from_usize::<T>(panels);
        // Flat density 1/(S·Δ) over the support.
        let density = T::one() / (s_total * c.spread);
        for p in 0..panels {
            let a = lo + width * from_usize::<T>(p);
            for (&xi, &wi) in gx.iter().zip(&gw) {
                let theta = a + width * (lit::<T>(xi) + T::one()) / lit(2.0);
                let weight = lit::<T>(wi) * width / lit(2.0) * density;
                let step = -T::two_pi() * cfg.spacing * theta.sin();
                for (n, rn) in r.iter_mut().enumerate() {
                    *rn += cis(step * from_usize::<T>(n)) * weight;
                }
            }
        }
    }
    r[0].im = T::zero();
    if geom.pathloss == Pathloss::Unit {
        let r0 = r[0].re;
        for rn in r.iter_mut() {
            *rn /= r0;
        }
        r[0] = Complex::new(T::one(), T::zero());
    }
    Ok(r)
}

/// Dense Hermitian Toeplitz matrix with first column `r`.
pub fn toeplitz_matrix<T: Real>(r: &[Complex<T>]) -> CMat<T> {
    let m = r.len();
    CMat::from_fn(m, m, |i, j| if i >= j { r[i - j] } else { r[j - i].conj() })
}

/// Dense circulant matrix with first column `c`.
pub fn circulant_matrix<T: Real>(c: &[Complex<T>]) -> CMat<T> {
    let m = c.len();
    CMat::from_fn(m, m, |i, j| c[(i + m - j) % m])
}

/// Wrapped circulant generator `r°_0 = r_0`, `r°_m = r_m + conj(r_{M-m})`.
pub fn circulant_generator<T: Real>(r: &[Complex<T>]) -> Vec<Complex<T>> {
    let m = r.len();
    (0..m).map(|i| if i == 0 { r[0] } else { r[i] + r[m - i].conj() }).collect()
}

/// Eigenvalues of the circulant approximation of the Toeplitz matrix with
/// generator `r`, paired with DFT columns `F[n,m] = e^{-j2πnm/M}/√M`.
///
/// The wrapped generator samples a truncated symbol, so its spectrum can ripple
/// below zero. Negative values are clipped and the spectrum rescaled to keep
/// the trace; a minimum below `-CIRCULANT_REJECT·max` is an error.
pub fn circulant_eigenvalues<T: Real>(r: &[Complex<T>]) -> Result<Vec<T>> {
    let m = r.len();
    if m == 0 {
        return Err(Error::Dimension("empty Toeplitz generator".into()));
    }
    if r[0].im.abs() > T::residue_tol() * (T::one() + r[0].re.abs()) {
        return Err(Error::Config("generator r_0 is not real".into()));
    }
    let mut buf = circulant_generator(r);
    T::fft_inverse(&mut buf);
    let scale = buf.iter().fold(T::one(), |acc, z| acc.max(z.re.abs()));
    let tol = T::residue_tol() * scale * lit(m.max(1) as f64);
    if let Some(z) = buf.iter().find(|z| z.im.abs() > tol) {
        return Err(Error::Config(format!("circulant spectrum not real (residue {:e})", to_f64(z.im))));
    }
    let mut lam: Vec<T> = buf.iter().map(|z| z.re).collect();
    let max = lam.iter().copied().fold(T::zero(), T::max);
    let min = lam.iter().copied().fold(max, T::min);
    if min < -lit::<T>(CIRCULANT_REJECT) * max || max <= T::zero() && min < T::zero() {
        return Err(Error::NotPsd { min: to_f64(min), threshold: -CIRCULANT_REJECT * to_f64(max) });
    }
    if min < T::zero() {
        let total: T = lam.iter().copied().fold(T::zero(), |a, b| a + b);
        for l in lam.iter_mut() {
            *l = l.max(T::zero());
        }
        let clipped: T = lam.iter().copied().fold(T::zero(), |a, b| a + b);
        if clipped > T::zero() {
            let f = total / clipped;
            for l in lam.iter_mut() {
                *l *= f;
            }
        }
    }
    Ok(lam)
}

/// Hermitian square root through an eigendecomposition with PSD repair.
pub fn psd_sqrt<T: Real>(a: &CMat<T>) -> Result<CMat<T>> {
    let herm = (a + a.adjoint()) * Complex::new(lit::<T>(0.5), T::zero());
    let eig = SymmetricEigen::new(herm);
    let max = eig.eigenvalues.iter().copied().fold(T::zero(), T::max);
    let threshold = -lit::<T>(TOEPLITZ_CLIP) * max.max(T::one());
    let min = eig.eigenvalues.iter().copied().fold(max, T::min);
    if min < threshold {
        return Err(Error::NotPsd { min: to_f64(min), threshold: to_f64(threshold) });
    }
    let mut scaled = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(T::zero()).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    Ok(&scaled * eig.eigenvectors.adjoint())
}

/// Per-user covariance statistics.
#[derive(Debug)]
pub struct CovarianceModel<T: Real> {
    /// Toeplitz generators, one per user.
    pub first_columns: Vec<Vec<Complex<T>>>,
    /// `M × K` circulant eigenvalues `Λ_{m,k}`.
    pub circulant_eigs: DMatrix<T>,
    /// `A_k = tr(R_k)/M`.
    pub pathloss: Vec<T>,
    roots: OnceLock<std::result::Result<Vec<CMat<T>>, String>>,
}

impl<T: Real> Clone for CovarianceModel<T> {
    fn clone(&self) -> Self {
        Self::from_parts(self.first_columns.clone(), self.circulant_eigs.clone(), self.pathloss.clone())
    }
}

impl<T: Real> CovarianceModel<T> {
    fn from_parts(first_columns: Vec<Vec<Complex<T>>>, circulant_eigs: DMatrix<T>, pathloss: Vec<T>) -> Self {
        Self { first_columns, circulant_eigs, pathloss, roots: OnceLock::new() }
    }

    /// Builds the model from Toeplitz generators of equal length.
    pub fn from_columns(first_columns: Vec<Vec<Complex<T>>>) -> Result<Self> {
        let k = first_columns.len();
        let m = first_columns.first().map(Vec::len).unwrap_or(0);
        if k == 0 || m == 0 || first_columns.iter().any(|c| c.len() != m) {
            return Err(Error::Dimension("generators must be non-empty and of equal length".into()));
        }
        let mut lam = DMatrix::zeros(m, k);
        for (j, col) in first_columns.iter().enumerate() {
            // Users with identical statistics share the spectrum.
            if let Some(prev) = first_columns[..j].iter().position(|c| c == col) {
                let copy = lam.column(prev).clone_owned();
                lam.set_column(j, &copy);
                continue;
            }
            let eig = circulant_eigenvalues(col)?;
            for (i, &v) in eig.iter().enumerate() {
                lam[(i, j)] = v;
            }
        }
        let pathloss = first_columns.iter().map(|c| c[0].re).collect();
        Ok(Self::from_parts(first_columns, lam, pathloss))
    }

    pub fn from_geometry(geom: &ScatteringGeometry<T>, cfg: &SystemConfig<T>) -> Result<Self> {
        if geom.num_users() != cfg.k {
            return Err(Error::Dimension(format!("geometry has {} users, config has K={}", geom.num_users(), cfg.k)));
        }
        let cols = (0..cfg.k).map(|k| toeplitz_covariance(geom, k, cfg)).collect::<Result<Vec<_>>>()?;
        Self::from_columns(cols)
    }

    /// `R_k = A_k I` for every user.
    pub fn scaled_identity(m: usize, pathloss: &[T]) -> Result<Self> {
        let cols = pathloss
            .iter()
            .map(|&a| {
                let mut c = vec![Complex::new(T::zero(), T::zero()); m];
                c[0] = Complex::new(a, T::zero());
                c
            })
            .collect();
        Self::from_columns(cols)
    }

    pub fn m(&self) -> usize {
        self.circulant_eigs.nrows()
    }

    pub fn k(&self) -> usize {
        self.circulant_eigs.ncols()
    }

    pub fn covariance(&self, k: usize) -> CMat<T> {
        toeplitz_matrix(&self.first_columns[k])
    }

    /// `tr(R_k)`.
    pub fn trace(&self, k: usize) -> T {
        self.pathloss[k] * from_usize::<T>(self.m())
    }

    /// Hermitian square roots `R_k^{1/2}`, computed once on first use.
    pub fn sqrt_factors(&self) -> Result<&[CMat<T>]> {
        let roots = self.roots.get_or_init(|| {
            let mut out: Vec<CMat<T>> = Vec::with_capacity(self.k());
            for (j, col) in self.first_columns.iter().enumerate() {
                if let Some(prev) = self.first_columns[..j].iter().position(|c| c == col) {
                    let copy = out[prev].clone();
                    out.push(copy);
                    continue;
                }
                out.push(psd_sqrt(&toeplitz_matrix(col)).map_err(|e| e.to_string())?);
            }
            Ok(out)
        });
        match roots {
            Ok(r) => Ok(r),
            Err(e) => Err(Error::Config(e.clone())),
        }
    }
}

/// Variance mask `D_{m,k} = Λ_{m,k} p_k` of the channel in the DFT basis.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceProfile<T: Real> {
    pub d_sq: DMatrix<T>,
}

impl<T: Real> VarianceProfile<T> {
    pub fn from_matrix(d_sq: DMatrix<T>) -> Result<Self> {
        if d_sq.iter().any(|&x| !(x >= T::zero())) {
            return Err(Error::Config("variance profile must be nonnegative".into()));
        }
        Ok(Self { d_sq })
    }

    /// `D ≡ c`.
    pub fn constant(m: usize, k: usize, c: T) -> Self {
        Self { d_sq: DMatrix::from_element(m, k, c) }
    }

    pub fn m(&self) -> usize {
        self.d_sq.nrows()
    }

    pub fn k(&self) -> usize {
        self.d_sq.ncols()
    }

    pub fn beta(&self) -> T {
        from_usize::<T>(self.k()) / from_usize::<T>(self.m())
    }
}

pub fn variance_profile<T: Real>(cov: &CovarianceModel<T>, p: &[T]) -> Result<VarianceProfile<T>> {
    if p.len() != cov.k() {
        return Err(Error::Dimension(format!("{} powers for {} users", p.len(), cov.k())));
    }
    if p.iter().any(|&x| !(x >= T::zero())) {
        return Err(Error::Config("powers must be nonnegative".into()));
    }
    let mut d = cov.circulant_eigs.clone();
    for (k, &pk) in p.iter().enumerate() {
        d.column_mut(k).scale_mut(pk);
    }
    Ok(VarianceProfile { d_sq: d })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Columns `M^{-1/2} R_k^{1/2} g_k √p_k`.
    #[default]
    ExactToeplitz,
    /// `F(𝕙 ⊙ √D)` with `𝕙 ~ CN(0, 1/M)`.
    Circulant,
}

#[derive(Debug, Clone)]
pub struct ChannelRealization<T: Real> {
    /// Normalised `M × K` channel.
    pub h: CMat<T>,
    pub seed: u64,
    pub mode: SamplingMode,
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-mode seed for stream `index` under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ mix64(index.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

fn complex_normal<T: Real>(rng: &mut ChaCha8Rng, var: f64) -> Complex<T> {
    let s = (var / 2.0).sqrt();
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    Complex::new(lit(a * s), lit(b * s))
}

pub fn sample_channel<T: Real>(
    cov: &CovarianceModel<T>,
    p: &[T],
    cfg: &SystemConfig<T>,
    seed: u64,
    mode: SamplingMode,
) -> Result<ChannelRealization<T>> {
    let (m, k) = (cov.m(), cov.k());
    if cfg.m != m || cfg.k != k || p.len() != k {
        return Err(Error::Dimension(format!("config M={} K={} vs model M={m} K={k}, {} powers", cfg.m, cfg.k, p.len())));
    }
    if p.iter().any(|&x| !(x >= T::zero())) {
        return Err(Error::Config("powers must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = CMat::<T>::zeros(m, k);
    match mode {
        SamplingMode::ExactToeplitz => {
            let roots = cov.sqrt_factors()?;
            let inv_sqrt_m = T::one() / from_usize::<T>(m).sqrt();
            for j in 0..k {
                let g = CVec::<T>::from_iterator(m, (0..m).map(|_| complex_normal(&mut rng, 1.0)));
                let col = &roots[j] * g * Complex::new(inv_sqrt_m * p[j].sqrt(), T::zero());
                h.set_column(j, &col);
            }
        }
        SamplingMode::Circulant => {
            let inv_sqrt_m = T::one() / from_usize::<T>(m).sqrt();
            let var = 1.0 / m as f64;
            for j in 0..k {
                let mut buf: Vec<Complex<T>> = (0..m)
                    .map(|i| {
                        let z: Complex<T> = complex_normal(&mut rng, var);
                        z * (cov.circulant_eigs[(i, j)] * p[j]).sqrt()
                    })
                    .collect();
                T::fft_forward(&mut buf);
                for (i, z) in buf.into_iter().enumerate() {
                    h[(i, j)] = z * inv_sqrt_m;
                }
            }
        }
    }
    Ok(ChannelRealization { h, seed, mode })
}

/// Unitary DFT matrix `F[n,m] = e^{-j2πnm/M}/√M`.
pub fn dft_matrix<T: Real>(m: usize) -> CMat<T> {
    let norm = T::one() / from_usize::<T>(m).sqrt();
    CMat::from_fn(m, m, |n, c| {
        let ph = -T::two_pi() * from_usize::<T>((n * c) % m) / from_usize::<T>(m);
        cis(ph) * norm
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(m: usize, k: usize) -> SystemConfig<f64> {
        SystemConfig::new(m, k, 10.0).unwrap()
    }

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    #[test]
    fn config_invariants() {
        let c = SystemConfig::<f64>::new(160, 16, 100.0).unwrap();
        assert_eq!(c.beta, 16.0 / 160.0);
        assert_eq!(c.nu, c.beta / 100.0);
        assert!(SystemConfig::<f64>::new(4, 5, 1.0).is_err());
    }

    #[test]
    fn array_response_examples() {
        let a = array_response(0.0, &cfg(4, 1));
        assert!(a.iter().all(|z| (z - Complex::new(1.0, 0.0)).norm() < 1e-15));
        let a = array_response(std::f64::consts::FRAC_PI_2, &cfg(2, 1));
        assert!((a[0] - Complex::new(1.0, 0.0)).norm() < 1e-15);
        assert!((a[1] - Complex::new(-1.0, 0.0)).norm() < 1e-15);
        let th = std::f64::consts::FRAC_PI_6;
        let a = array_response(th, &cfg(8, 1));
        for m in 0..8 {
            let ph = -2.0 * PI * m as f64 * 0.5 * th.sin();
            assert!((a[m] - Complex::new(ph.cos(), ph.sin())).norm() < 1e-13);
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        for p in 0..31 {
            let num: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            assert!((num - exact).abs() < 1e-13, "degree {p}");
        }
    }

    fn trapezoid_column(geom: &ScatteringGeometry<f64>, k: usize, c: &SystemConfig<f64>, nodes: usize) -> Vec<Complex<f64>> {
        let s = geom.clusters.len() as f64;
        let mut r = vec![Complex::new(0.0, 0.0); c.m];
        for &ci in &geom.association[k] {
            let cl = geom.clusters[ci];
            let lo = cl.center - cl.spread / 2.0;
            let h = cl.spread / (nodes - 1) as f64;
            for i in 0..nodes {
                let th = lo + h * i as f64;
                let w = if i == 0 || i == nodes - 1 { h / 2.0 } else { h } / (s * cl.spread);
                for (n, rn) in r.iter_mut().enumerate() {
                    let ph = -2.0 * PI * c.spacing * n as f64 * th.sin();
                    *rn += Complex::new(ph.cos(), ph.sin()) * w;
                }
            }
        }
        r
    }

    #[test]
    fn covariance_single_cluster_normalisation() {
        let g = ScatteringGeometry::new(vec![Cluster { center: 0.0, spread: PI / 6.0 }], vec![vec![0]]).unwrap();
        let r = toeplitz_covariance(&g, 0, &cfg(16, 1)).unwrap();
        assert!((r[0].re - 1.0).abs() < 1e-9);
        let t = toeplitz_matrix(&r);
        assert!((&t - t.adjoint()).norm() < 1e-15);
        // Symmetric support around broadside gives a real generator.
        assert!(r.iter().all(|z| z.im.abs() < 1e-12));
    }

    #[test]
    fn covariance_zero_spacing_is_flat() {
        let g = ScatteringGeometry::new(vec![Cluster { center: 0.0, spread: 2.0 * PI / 3.0 }], vec![vec![0]]).unwrap();
        let c = SystemConfig::with_spacing(8, 1, 1.0, 1e-9).unwrap();
        let r = toeplitz_covariance(&g, 0, &c).unwrap();
        assert!(r.iter().all(|z| (z - Complex::new(1.0, 0.0)).norm() < 1e-7));
    }

    #[test]
    fn covariance_two_clusters_against_trapezoid() {
        let g = ScatteringGeometry::new(
            vec![Cluster { center: deg(-30.0), spread: deg(20.0) }, Cluster { center: deg(25.0), spread: deg(15.0) }],
            vec![vec![0, 1], vec![1]],
        )
        .unwrap();
        let c = cfg(16, 2);
        let r = toeplitz_covariance(&g, 0, &c).unwrap();
        let oracle = trapezoid_column(&g, 0, &c, 100_000);
        for (a, b) in r.iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-8);
        }
        assert!((r[0].re - 1.0).abs() < 1e-9, "A_k = |S_k|/S = 2/2");
        let r1 = toeplitz_covariance(&g, 1, &c).unwrap();
        assert!((r1[0].re - 0.5).abs() < 1e-9);
        // Sum of per-cluster columns.
        let g0 = ScatteringGeometry { association: vec![vec![0]], ..g.clone() };
        let r0 = toeplitz_covariance(&g0, 0, &c).unwrap();
        for n in 0..16 {
            assert!((r[n] - r0[n] - r1[n]).norm() < 1e-12);
        }
    }

    #[test]
    fn unit_pathloss_rescales() {
        let g = ScatteringGeometry::new(
            vec![Cluster { center: deg(-30.0), spread: deg(20.0) }, Cluster { center: deg(25.0), spread: deg(15.0) }],
            vec![vec![1]],
        )
        .unwrap()
        .with_pathloss(Pathloss::Unit);
        let r = toeplitz_covariance(&g, 0, &cfg(16, 1)).unwrap();
        assert_eq!(r[0].re, 1.0);
        assert_eq!(g.nominal_pathloss(0), 1.0);
    }

    #[test]
    fn geometry_validation() {
        let c = vec![Cluster { center: 0.0, spread: 0.2 }];
        assert!(ScatteringGeometry::new(c.clone(), vec![vec![]]).is_err());
        assert!(ScatteringGeometry::new(c.clone(), vec![vec![1]]).is_err());
        assert!(ScatteringGeometry::new(vec![Cluster { center: 1.0, spread: 0.2 }], vec![vec![0]]).is_err());
        let assoc = ScatteringGeometry::<f64>::association_from_grid(&["*.*", ".**"]).unwrap();
        assert_eq!(assoc, vec![vec![0], vec![1], vec![0, 1]]);
    }

    #[test]
    fn identity_spectrum() {
        let mut r = vec![Complex::new(0.0f64, 0.0); 12];
        r[0] = Complex::new(1.0, 0.0);
        let l = circulant_eigenvalues(&r).unwrap();
        assert!(l.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn circulant_spectrum_matches_dense_eigensolver() {
        let g = ScatteringGeometry::new(vec![Cluster { center: deg(10.0), spread: deg(40.0) }], vec![vec![0]]).unwrap();
        let r = toeplitz_covariance(&g, 0, &cfg(24, 1)).unwrap();
        let c = circulant_generator(&r);
        let circ = circulant_matrix(&c);
        let f = dft_matrix::<f64>(24);
        // Raw inverse DFT of the wrapped generator is the eigenvalue paired with F's columns.
        let mut raw = c.clone();
        f64::fft_inverse(&mut raw);
        let d = f.adjoint() * &circ * &f;
        for m in 0..24 {
            assert!((d[(m, m)].re - raw[m].re).abs() < 1e-10);
            for n in 0..24 {
                if n != m {
                    assert!(d[(n, m)].norm() < 1e-10);
                }
            }
        }
        let mut dense: Vec<f64> = SymmetricEigen::new(circ).eigenvalues.iter().copied().collect();
        let mut fast: Vec<f64> = raw.iter().map(|z| z.re).collect();
        dense.sort_by(f64::total_cmp);
        fast.sort_by(f64::total_cmp);
        for (a, b) in dense.iter().zip(&fast) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn circulant_rejects_badly_indefinite_generators() {
        let mut r = vec![Complex::new(0.0, 0.0); 8];
        r[0] = Complex::new(1.0, 0.0);
        r[1] = Complex::new(2.0, 0.0);
        assert!(matches!(circulant_eigenvalues(&r), Err(Error::NotPsd { .. })));
    }

    // Wasserstein-1 distance between the two empirical spectra.
    fn spectral_distance(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn szego_convergence_of_circulant_spectrum() {
        let g = ScatteringGeometry::new(vec![Cluster { center: 0.0, spread: PI / 6.0 }], vec![vec![0]]).unwrap();
        let mut last = f64::INFINITY;
        for m in [32, 64, 128, 256] {
            let r = toeplitz_covariance(&g, 0, &cfg(m, 1)).unwrap();
            let exact: Vec<f64> = SymmetricEigen::new(toeplitz_matrix(&r)).eigenvalues.iter().copied().collect();
            let circ = circulant_eigenvalues(&r).unwrap();
            let w1 = spectral_distance(exact, circ);
            assert!(w1 < last, "M={m}: {w1} !< {last}");
            last = w1;
        }
    }

    #[test]
    fn variance_profile_examples() {
        let cov = CovarianceModel::<f64>::scaled_identity(6, &[1.0, 1.0, 1.0]).unwrap();
        let d = variance_profile(&cov, &[1.0, 1.0, 1.0]).unwrap();
        assert!(d.d_sq.iter().all(|&x| x == 1.0));
        let d = variance_profile(&cov, &[1.0, 0.0, 1.0]).unwrap();
        assert!(d.d_sq.column(1).iter().all(|&x| x == 0.0));
        assert!(variance_profile(&cov, &[1.0]).is_err());
    }

    #[test]
    fn zero_profile_gives_zero_channel() {
        let cov = CovarianceModel::<f64>::scaled_identity(8, &[1.0, 1.0]).unwrap();
        let c = cfg(8, 2);
        for mode in [SamplingMode::ExactToeplitz, SamplingMode::Circulant] {
            let h = sample_channel(&cov, &[0.0, 0.0], &c, 3, mode).unwrap();
            assert_eq!(h.h.norm(), 0.0);
        }
    }

    #[test]
    fn identity_channel_column_norms() {
        let cov = CovarianceModel::<f64>::scaled_identity(32, &[1.0; 4]).unwrap();
        let c = cfg(32, 4);
        let trials = 10_000;
        let mut acc = 0.0;
        for t in 0..trials {
            let h = sample_channel(&cov, &[1.0; 4], &c, derive_seed(11, t), SamplingMode::ExactToeplitz).unwrap();
            acc += (0..4).map(|k| h.h.column(k).norm_squared()).sum::<f64>() / 4.0;
        }
        assert!((acc / trials as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn circulant_mode_covariance() {
        let g = ScatteringGeometry::new(vec![Cluster { center: deg(15.0), spread: deg(30.0) }], vec![vec![0]]).unwrap();
        let c = cfg(16, 1);
        let cov = CovarianceModel::from_geometry(&g, &c).unwrap();
        let trials = 10_000;
        let mut emp = CMat::<f64>::zeros(16, 16);
        for t in 0..trials {
            let h = sample_channel(&cov, &[2.0], &c, derive_seed(5, t), SamplingMode::Circulant).unwrap();
            let col = h.h.column(0);
            emp += col.clone() * col.adjoint();
        }
        emp /= Complex::new(trials as f64, 0.0);
        let f = dft_matrix::<f64>(16);
        let diag = CMat::from_diagonal(&CVec::from_iterator(16, (0..16).map(|m| Complex::new(cov.circulant_eigs[(m, 0)] * 2.0 / 16.0, 0.0))));
        let target = &f * diag * f.adjoint();
        assert!((&emp - &target).norm() / target.norm() < 0.05);
    }

    #[test]
    fn seeds_are_deterministic() {
        let g = ScatteringGeometry::new(vec![Cluster { center: 0.0, spread: 0.5 }], vec![vec![0], vec![0]]).unwrap();
        let c = cfg(8, 2);
        let cov = CovarianceModel::from_geometry(&g, &c).unwrap();
        let a = sample_channel(&cov, &[1.0, 1.0], &c, 99, SamplingMode::ExactToeplitz).unwrap();
        let b = sample_channel(&cov, &[1.0, 1.0], &c, 99, SamplingMode::ExactToeplitz).unwrap();
        assert_eq!(a.h, b.h);
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }

    #[test]
    fn single_precision_pipeline() {
        let g = ScatteringGeometry::<f32>::new(vec![Cluster { center: 0.1, spread: 0.4 }], vec![vec![0]]).unwrap();
        let c = SystemConfig::<f32>::new(16, 1, 10.0).unwrap();
        let cov = CovarianceModel::from_geometry(&g, &c).unwrap();
        let mean: f32 = cov.circulant_eigs.iter().sum::<f32>() / 16.0;
        assert!((mean - 1.0).abs() < 1e-4);
        let h = sample_channel(&cov, &[1.0], &c, 1, SamplingMode::ExactToeplitz).unwrap();
        assert!(h.h.norm() > 0.0);
    }

    proptest! {
        #[test]
        fn trace_is_preserved(center in -0.6f64..0.6, spread in 0.05f64..0.4, m in 8usize..64) {
            let g = ScatteringGeometry::new(vec![Cluster { center, spread }], vec![vec![0]]).unwrap();
            let r = toeplitz_covariance(&g, 0, &cfg(m, 1)).unwrap();
            // Clusters narrower than a few array beamwidths may ripple too far below zero.
            let l = match circulant_eigenvalues(&r) {
                Err(Error::NotPsd { .. }) if spread * (m as f64) < 4.0 => return Ok(()),
                other => other.unwrap(),
            };
            let mean = l.iter().sum::<f64>() / m as f64;
            prop_assert!((mean - r[0].re).abs() < 1e-8);
            prop_assert!(l.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn pathloss_law(sets in proptest::collection::vec(proptest::sample::subsequence(vec![0usize, 1, 2, 3], 1..=4), 1..4)) {
            let clusters = vec![
                Cluster { center: -0.8, spread: 0.2 },
                Cluster { center: -0.2, spread: 0.3 },
                Cluster { center: 0.3, spread: 0.1 },
                Cluster { center: 0.7, spread: 0.25 },
            ];
            let g = ScatteringGeometry::new(clusters, sets.clone()).unwrap();
            let c = SystemConfig::new(16, sets.len(), 1.0).unwrap();
            let cov = CovarianceModel::from_geometry(&g, &c).unwrap();
            for (k, s) in sets.iter().enumerate() {
                prop_assert!((cov.pathloss[k] - s.len() as f64 / 4.0).abs() < 1e-9);
                let t = cov.covariance(k);
                prop_assert!((&t - t.adjoint()).norm() == 0.0);
            }
        }
    }
}
