//! Clock-cycle cost model for RZF (Householder QR) and TPE precoder
//! computation on a maximally parallel DSP fabric.
//!
//! All latencies are integers. Every `log₂` term and every fractional
//! pipelining term is rounded up.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyParams {
    /// Real addition.
    pub n_a: u64,
    /// Real multiplication.
    pub n_m: u64,
    /// Real division.
    pub n_rd: u64,
    /// Real square root.
    pub n_s: u64,
    /// Complex division.
    pub n_cd: u64,
    pub m: u64,
    pub k: u64,
    pub j: u64,
    /// Parallelisation index, a power of two.
    pub u: u64,
    /// Clock frequency in Hz.
    pub f_d: f64,
    /// Resource blocks.
    pub b: u64,
    /// Subcarriers per resource block.
    pub s: u64,
}

impl Default for LatencyParams {
    fn default() -> Self {
        Self { n_a: 1, n_m: 1, n_rd: 4, n_s: 4, n_cd: 6, m: 160, k: 16, j: 4, u: 4, f_d: 300e6, b: 100, s: 12 }
    }
}

impl LatencyParams {
    pub fn with_size(m: u64, k: u64, j: u64, u: u64) -> Self {
        Self { m, k, j, u, ..Self::default() }
    }

    pub fn n_ca(&self) -> u64 {
        self.n_a
    }

    pub fn n_cm(&self) -> u64 {
        self.n_m + self.n_a
    }

    pub fn n_ccm(&self) -> u64 {
        self.n_cm()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 3 {
            return Err(Error::Domain(format!("K={} but the HVC tree needs K ≥ 3", self.k)));
        }
        if self.m == 0 || self.j == 0 {
            return Err(Error::Domain("M and J must be positive".into()));
        }
        if !self.u.is_power_of_two() || self.u > self.k {
            return Err(Error::Domain(format!("U={} must be a power of two not above K={}", self.u, self.k)));
        }
        if [self.n_a, self.n_m, self.n_rd, self.n_s, self.n_cd].contains(&0) {
            return Err(Error::Domain("primitive latencies must be positive".into()));
        }
        if !(self.f_d > 0.0) {
            return Err(Error::Domain("clock frequency must be positive".into()));
        }
        Ok(())
    }
}

/// `⌈log₂ x⌉` for `x ≥ 1`.
pub fn clog2(x: u64) -> u64 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros() as u64
    }
}

/// Smallest `n` with `2^n · den ≥ num`, i.e. `⌈log₂(num/den)⌉` clamped at 0.
fn clog2_ratio(num: u64, den: u64) -> u64 {
    let mut n = 0;
    while den << n < num {
        n += 1;
    }
    n
}

fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Inner product of two length-`S` vectors with an adder tree.
pub fn dot_product_latency(p: &LatencyParams, s: u64) -> u64 {
    p.n_cm() + clog2(s) * p.n_ca()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub hvc: u64,
    /// HCZ latency of iteration `k = 1..=K-1` (index `k-1`).
    pub hcz: Vec<u64>,
    pub bks: u64,
    pub qrh: u64,
    pub tr: u64,
    pub gc: u64,
    pub pc: u64,
    pub p: u64,
    pub dtpe: u64,
    pub rzf: u64,
    pub tpe: u64,
    pub tpep: u64,
    pub dtpep: u64,
    pub chi_qrh: u64,
    pub chi_tr: u64,
    /// `L_RZF / L_TPE`.
    pub alpha_rzf: f64,
    /// `L_DTPEP / L_TPEP`.
    pub alpha_dtpep: f64,
}

pub fn unit_latencies(p: &LatencyParams) -> Result<LatencyReport> {
    p.validate()?;
    let (m, k, j, u) = (p.m, p.k, p.j, p.u);
    let (n_a, n_m, n_ca, n_cm, n_ccm) = (p.n_a, p.n_m, p.n_ca(), p.n_cm(), p.n_ccm());

    let hvc = 2 * n_ccm + (4 + clog2(k - 2)) * n_a + n_m + 2 * p.n_rd + p.n_s;
    let hcz: Vec<u64> = (1..k).map(|kk| 2 * n_cm + (1 + clog2(k - kk + 1)) * n_ca).collect();
    let bks = k * (p.n_cd + n_cm + n_ca);
    let tree: u64 = (1..k).map(|kk| clog2(k - kk + 1)).sum();
    let qrh = (k - 1) * hvc + bks + (k * (2 * n_cm + n_ca) + n_ca + n_ca * tree);

    let tr = n_cm + n_ca + (j - 1) * (dot_product_latency(p, k) + (ceil_div(k, u) - 1) + n_ca);
    let gc = n_a
        + n_cm
        + if k * k >= m {
            clog2(m) * n_ca + (ceil_div(m, u) - 1)
        } else {
            // (M/U − 1)(1 + M/K²) = (M − U)(K² + M) / (U K²)
            (clog2(k * k) + clog2_ratio(m, k * k)) * n_ca + ceil_div((m - u) * (k * k + m), u * k * k)
        };
    let pc = dot_product_latency(p, k) + (ceil_div(m, u) - 1);
    let pu = if u * k < m { dot_product_latency(p, k) + ceil_div(m - u * k, u * k) } else { dot_product_latency(p, k) };
    let dtpe = n_cm + j * (dot_product_latency(p, k) + n_ca) + pu;

    let rzf = gc + qrh + pc;
    let tpe = gc + tr + pc;
    let tpep = p.b * tpe + p.s * p.b * pu;
    let dtpep = p.b * gc + p.s * p.b * dtpe;
    Ok(LatencyReport {
        hvc,
        hcz,
        bks,
        qrh,
        tr,
        gc,
        pc,
        p: pu,
        dtpe,
        rzf,
        tpe,
        tpep,
        dtpep,
        chi_qrh: 4 * (k * k + 3 * k),
        chi_tr: 4 * u * k * k,
        alpha_rzf: rzf as f64 / tpe as f64,
        alpha_dtpep: dtpep as f64 / tpep as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Rzf,
    Tpe,
}

pub fn total_latency(p: &LatencyParams, scheme: Scheme) -> Result<u64> {
    let r = unit_latencies(p)?;
    Ok(match scheme {
        Scheme::Rzf => r.rzf,
        Scheme::Tpe => r.tpe,
    })
}

/// Seconds to compute `B` precoders of `cycles` each at `f_d`.
pub fn wall_clock(p: &LatencyParams, cycles: u64) -> f64 {
    p.b as f64 * cycles as f64 / p.f_d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtpepComparison {
    /// `α(U, s) = (L_GC + s L_DTPE) / (L_TPE + s L_P)`.
    pub alpha: f64,
    pub tpep: u64,
    pub dtpep: u64,
}

pub fn dtpep_comparison(p: &LatencyParams) -> Result<DtpepComparison> {
    let r = unit_latencies(p)?;
    let alpha = (r.gc + p.s * r.dtpe) as f64 / (r.tpe + p.s * r.p) as f64;
    Ok(DtpepComparison { alpha, tpep: r.tpep, dtpep: r.dtpep })
}

/// `U = 2, 4, …, K` (largest power of two not above `K`).
pub fn u_grid(k: u64) -> Vec<u64> {
    (1..)
        .map(|n| 1u64 << n)
        .take_while(|&u| u <= k)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dsp_blocks: u64,
    #[serde(rename = "M")]
    pub m: u64,
    #[serde(rename = "K")]
    pub k: u64,
    #[serde(rename = "J")]
    pub j: u64,
    #[serde(rename = "L_tpe")]
    pub l_tpe: u64,
    #[serde(rename = "L_rzf")]
    pub l_rzf: u64,
    pub alpha: f64,
}

/// Latency amplification over the `U` grid for each `(M, K, J)`.
pub fn amplification_sweep(base: &LatencyParams, sizes: &[(u64, u64, u64)]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &(m, k, j) in sizes {
        for u in u_grid(k) {
            let p = LatencyParams { m, k, j, u, ..base.clone() };
            let r = unit_latencies(&p)?;
            rows.push(SweepRow { dsp_blocks: r.chi_tr, m, k, j, l_tpe: r.tpe, l_rzf: r.rzf, alpha: r.alpha_rzf });
        }
    }
    Ok(rows)
}

/// CSV with header `dsp_blocks,M,K,J,L_tpe,L_rzf,alpha`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["dsp_blocks", "M", "K", "J", "L_tpe", "L_rzf", "alpha"]).map_err(|e| Error::Parse(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}
