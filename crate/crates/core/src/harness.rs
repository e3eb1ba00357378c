//! Seeded Monte Carlo experiments: scenario files, builtin geometries, ergodic
//! rates per precoder and SNR, and CSV/JSON/CDF emission.
//!
//! Every trial draws one channel from `derive_seed(seed, trial)` and reuses it
//! for all (precoder, SNR) cells. Uplink vectors are mapped to the downlink
//! through duality before the downlink SINRs are evaluated; rates are in bits.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{conj_bf, mmse_receiver, rzf_precoder, zarei_precoder, ZareiModel};
use crate::channel::{
    derive_seed, sample_channel, Cluster, CovarianceModel, Pathloss, SamplingMode, ScatteringGeometry, SystemConfig,
};
use crate::duality::{ul_to_dl, uplink_coupling};
use crate::error::{Error, Result};
use crate::power_control::{
    asymptotic_sinr_fn, conventional_power, max_min_bracket, max_min_sinr, mwsr_power, yates_min_power, MaxMinOptions,
    MwsrOptions, YatesOptions, YatesOutcome,
};
use crate::scalar::CMat;
use crate::tpe::{asymptotic_weights, finite_weights, horner_precoder, sinrs, Link, TpeWeights};

pub const BUILTIN_SCENARIOS: [&str; 3] = ["single-cluster", "quasi-orthogonal-8", "mixed-table1"];

/// TPE degree behind the statistical max-min and min-power allocations.
pub const POLICY_ORDER: usize = 3;

pub const RATES_CSV: &str = "rates.csv";
pub const SUM_RATES_CSV: &str = "sum_rates.csv";
pub const RESULTS_JSON: &str = "results.json";
pub const CDF_DIR: &str = "cdf";

const RATES_HEADER: [&str; 5] = ["precoder", "snr_db", "user", "rate_mean", "rate_stderr"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrecoderKind {
    /// TPE with large-system coefficients.
    Tpe(usize),
    /// TPE with coefficients from the realisation itself.
    TpeFinite(usize),
    ConjBf,
    /// Regularised zero-forcing with `ε = ν`.
    Rzf,
    Mmse,
    /// Free-probability TPE with i.i.d. moments.
    Zarei(usize),
}

impl fmt::Display for PrecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tpe(j) => write!(f, "tpe:{j}"),
            Self::TpeFinite(j) => write!(f, "tpe-finite:{j}"),
            Self::ConjBf => f.write_str("conjbf"),
            Self::Rzf => f.write_str("rzf"),
            Self::Mmse => f.write_str("mmse"),
            Self::Zarei(j) => write!(f, "zarei:{j}"),
        }
    }
}

impl FromStr for PrecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, order) = match s.split_once(':') {
            Some((n, j)) => {
                let j = j.trim().parse::<usize>().map_err(|_| Error::Parse(format!("bad degree in precoder {s:?}")))?;
                (n.trim(), Some(j))
            }
            None => (s, None),
        };
        match (name.to_ascii_lowercase().as_str(), order) {
            ("tpe", Some(j)) => Ok(Self::Tpe(j)),
            ("tpe-finite", Some(j)) => Ok(Self::TpeFinite(j)),
            ("zarei", Some(j)) => Ok(Self::Zarei(j)),
            ("conjbf" | "mrt", None) => Ok(Self::ConjBf),
            ("rzf", None) => Ok(Self::Rzf),
            ("mmse", None) => Ok(Self::Mmse),
            _ => Err(Error::Parse(format!("unknown precoder {s:?}"))),
        }
    }
}

impl Serialize for PrecoderKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PrecoderKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Uplink power allocation applied before the duality map.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PowerPolicy {
    #[default]
    Uniform,
    /// `p_k ∝ 1/A_k`.
    Conventional,
    /// Common-SINR allocation from statistics.
    #[serde(rename = "maxmin")]
    MaxMin,
    /// Minimum powers reaching linear SINR `targets`, from statistics.
    #[serde(rename = "minpower")]
    MinPower { targets: Vec<f64> },
    /// Per-trial weighted log-SINR maximisation with queue weights.
    Mwsr { weights: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub center_deg: f64,
    pub spread_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub m: usize,
    pub k: usize,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default)]
    pub pathloss: Pathloss,
    #[serde(default = "default_sector")]
    pub sector_deg: [f64; 2],
    pub clusters: Vec<ClusterSpec>,
    /// `association[k]` lists the (zero-based) clusters seen by user `k`.
    pub association: Vec<Vec<usize>>,
}

fn default_spacing() -> f64 {
    0.5
}

fn default_sector() -> [f64; 2] {
    [-60.0, 60.0]
}

impl ScenarioSpec {
    pub fn geometry(&self) -> Result<ScatteringGeometry<f64>> {
        let clusters = self
            .clusters
            .iter()
            .map(|c| Cluster { center: c.center_deg.to_radians(), spread: c.spread_deg.to_radians() })
            .collect();
        ScatteringGeometry::new(clusters, self.association.clone())?
            .with_pathloss(self.pathloss)
            .with_sector(self.sector_deg[0].to_radians(), self.sector_deg[1].to_radians())
    }

    pub fn config(&self, snr_db: f64) -> Result<SystemConfig<f64>> {
        SystemConfig::with_spacing(self.m, self.k, 10f64.powf(snr_db / 10.0), self.spacing)
    }

    pub fn covariance(&self) -> Result<CovarianceModel<f64>> {
        if self.association.len() != self.k {
            return Err(Error::Config(format!("{} association rows for K={}", self.association.len(), self.k)));
        }
        CovarianceModel::from_geometry(&self.geometry()?, &self.config(0.0)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: ScenarioSpec,
    pub precoders: Vec<PrecoderKind>,
    #[serde(default)]
    pub power: PowerPolicy,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Worker threads; `None` uses the global pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("snr grid must be nonempty and finite".into()));
        }
        if self.precoders.is_empty() {
            return Err(Error::Config("no precoders to compare".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let k = self.scenario.k;
        match &self.power {
            PowerPolicy::MinPower { targets } if targets.len() != k => {
                return Err(Error::Config(format!("{} SINR targets for K={k}", targets.len())));
            }
            PowerPolicy::Mwsr { weights } if weights.len() != k => {
                return Err(Error::Config(format!("{} queue weights for K={k}", weights.len())));
            }
            _ => {}
        }
        self.scenario.config(0.0)?;
        self.scenario.geometry()?;
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }
}

/// Association grid of the mixed scenario: one row per cluster, one column per user.
pub const MIXED_TABLE1_GRID: [&str; 5] =
    ["*..***....*..*.*", "..*.*...*.**..**", "***....***.****.", "***.*.....******", ".****.*..*****.*"];

pub const MIXED_TABLE1_CENTERS_DEG: [f64; 5] = [-30.62, -17.56, -16.69, 7.5, 11.92];

pub fn builtin_scenarios(name: &str) -> Result<ExperimentSpec> {
    let (m, k) = (160, 16);
    let (clusters, association, precoders) = match name {
        "single-cluster" => (
            vec![ClusterSpec { center_deg: 0.0, spread_deg: 30.0 }],
            vec![vec![0]; k],
            ordering_precoders(),
        ),
        "quasi-orthogonal-8" => {
            let spread = 180.0 / 11.0;
            let step = (120.0 - spread) / 7.0;
            let clusters = (0..8).map(|s| ClusterSpec { center_deg: -60.0 + spread / 2.0 + step * s as f64, spread_deg: spread }).collect();
            (clusters, (0..k).map(|u| vec![u / 2]).collect(), ordering_precoders())
        }
        "mixed-table1" => {
            let clusters = MIXED_TABLE1_CENTERS_DEG.iter().map(|&c| ClusterSpec { center_deg: c, spread_deg: 30.0 }).collect();
            let mut precoders = ordering_precoders();
            precoders.extend([PrecoderKind::Tpe(3), PrecoderKind::Zarei(3)]);
            (clusters, ScatteringGeometry::<f64>::association_from_grid(&MIXED_TABLE1_GRID)?, precoders)
        }
        other => return Err(Error::UnknownScenario(other.into())),
    };
    Ok(ExperimentSpec {
        scenario: ScenarioSpec {
            name: name.into(),
            m,
            k,
            spacing: 0.5,
            pathloss: Pathloss::Unit,
            sector_deg: default_sector(),
            clusters,
            association,
        },
        precoders,
        power: PowerPolicy::Uniform,
        snr_db: vec![0.0, 10.0, 20.0, 30.0],
        trials: 500,
        seed: 1,
        sampling: SamplingMode::ExactToeplitz,
        output: default_output(),
        workers: None,
    })
}

fn ordering_precoders() -> Vec<PrecoderKind> {
    vec![PrecoderKind::ConjBf, PrecoderKind::TpeFinite(1), PrecoderKind::TpeFinite(2), PrecoderKind::TpeFinite(3), PrecoderKind::Mmse]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub precoder: String,
    pub snr_db: f64,
    pub user: usize,
    pub rate_mean: f64,
    pub rate_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumRate {
    pub precoder: String,
    pub snr_db: f64,
    pub mean: f64,
    pub stderr: f64,
    /// In trial order.
    pub per_trial: Vec<f64>,
}

/// Empirical CDF of the per-user rates pooled over users and trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cdf {
    pub precoder: String,
    pub snr_db: f64,
    /// Sorted ascending.
    pub rates: Vec<f64>,
}

impl Cdf {
    pub fn from_samples(precoder: String, snr_db: f64, mut rates: Vec<f64>) -> Self {
        rates.sort_by(f64::total_cmp);
        Self { precoder, snr_db, rates }
    }

    /// `(rate_i, i/N)` for `i = 1..N`.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.rates.len() as f64;
        self.rates.iter().enumerate().map(|(i, &r)| (r, (i + 1) as f64 / n)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub precoder: String,
    pub snr_db: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub seed: u64,
    pub trials: usize,
    pub rows: Vec<RateRow>,
    pub sum_rates: Vec<SumRate>,
    pub cdfs: Vec<Cdf>,
    pub failures: Vec<CellFailure>,
}

impl ResultTable {
    pub fn sum_rate(&self, precoder: PrecoderKind, snr_db: f64) -> Option<&SumRate> {
        let tag = precoder.to_string();
        self.sum_rates.iter().find(|s| s.precoder == tag && s.snr_db == snr_db)
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Mean and standard error (sample deviation over `√n`).
pub fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

enum Statistical {
    Tpe(Vec<TpeWeights<f64>>),
    Zarei(ZareiModel<f64>),
}

/// Everything a cell needs that does not depend on the realisation.
struct Prepared {
    precoder: PrecoderKind,
    snr_db: f64,
    nu: f64,
    beta: f64,
    /// `None` under the per-trial MWSR policy.
    powers: Option<Vec<f64>>,
    stat: Option<Statistical>,
}

fn static_powers(policy: &PowerPolicy, cfg: &SystemConfig<f64>, cov: &CovarianceModel<f64>) -> Result<Option<Vec<f64>>> {
    let k = cov.k();
    Ok(Some(match policy {
        PowerPolicy::Uniform => vec![1.0; k],
        PowerPolicy::Conventional => conventional_power(&cov.pathloss)?.p,
        PowerPolicy::MaxMin => {
            let bracket = max_min_bracket(cfg, cov);
            max_min_sinr(asymptotic_sinr_fn(cov, cfg.nu, POLICY_ORDER), k, bracket, &MaxMinOptions::default())?.allocation.p
        }
        PowerPolicy::MinPower { targets } => {
            let report = yates_min_power(targets, asymptotic_sinr_fn(cov, cfg.nu, POLICY_ORDER), &YatesOptions::default())?;
            match report.outcome {
                YatesOutcome::Converged { allocation, .. } => allocation.p,
                YatesOutcome::Infeasible { iterations } | YatesOutcome::OverBudget { iterations } => {
                    return Err(Error::Infeasible(format!("SINR targets not reachable after {iterations} iterations")));
                }
            }
        }
        PowerPolicy::Mwsr { .. } => return Ok(None),
    }))
}

fn statistical(kind: PrecoderKind, cov: &CovarianceModel<f64>, p: &[f64], beta: f64, nu: f64) -> Result<Option<Statistical>> {
    Ok(match kind {
        PrecoderKind::Tpe(j) => Some(Statistical::Tpe(asymptotic_weights(cov, p, nu, j)?)),
        PrecoderKind::Zarei(j) => Some(Statistical::Zarei(ZareiModel::new(&cov.pathloss, p, beta, nu, j)?)),
        _ => None,
    })
}

fn vectors(
    kind: PrecoderKind,
    h: &CMat<f64>,
    p: &[f64],
    nu: f64,
    beta: f64,
    cov: &CovarianceModel<f64>,
    stat: Option<&Statistical>,
) -> Result<CMat<f64>> {
    let v = match kind {
        PrecoderKind::ConjBf => conj_bf(h)?,
        PrecoderKind::Rzf => rzf_precoder(h, nu)?,
        PrecoderKind::Mmse => mmse_receiver(h, p, nu)?.0,
        PrecoderKind::TpeFinite(j) => horner_precoder(h, p, &finite_weights(h, p, nu, j)?, j)?,
        PrecoderKind::Tpe(j) => match stat {
            Some(Statistical::Tpe(w)) => horner_precoder(h, p, w, j)?,
            _ => horner_precoder(h, p, &asymptotic_weights(cov, p, nu, j)?, j)?,
        },
        PrecoderKind::Zarei(j) => match stat {
            Some(Statistical::Zarei(model)) => zarei_precoder(h, model)?,
            _ => zarei_precoder(h, &ZareiModel::new(&cov.pathloss, p, beta, nu, j)?)?,
        },
    };
    Ok(v.v)
}

fn cell_rates(cell: &Prepared, h: &CMat<f64>, cov: &CovarianceModel<f64>, policy: &PowerPolicy) -> Result<Vec<f64>> {
    let (p, v) = match (&cell.powers, policy) {
        (Some(p), _) => (p.clone(), vectors(cell.precoder, h, p, cell.nu, cell.beta, cov, cell.stat.as_ref())?),
        (None, PowerPolicy::Mwsr { weights }) => {
            let ones = vec![1.0; h.ncols()];
            let v = vectors(cell.precoder, h, &ones, cell.nu, cell.beta, cov, cell.stat.as_ref())?;
            let phi = uplink_coupling(h, &v)?;
            (mwsr_power(weights, &phi, cell.nu, &MwsrOptions::default())?.allocation.p, v)
        }
        (None, _) => unreachable!("only the MWSR policy defers powers"),
    };
    let q = ul_to_dl(h, &v, &p, cell.nu)?;
    let s = sinrs(h, &v, cell.nu, Link::Downlink(&q))?;
    Ok(s.into_iter().map(|x| (1.0 + x).log2()).collect())
}

type TrialOutcome = Vec<std::result::Result<Vec<f64>, String>>;

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let sc = &spec.scenario;
    let cov = sc.covariance()?;
    if spec.sampling == SamplingMode::ExactToeplitz {
        cov.sqrt_factors()?;
    }
    let base = sc.config(0.0)?;

    // Precoder-major, SNR-minor.
    let mut cells: Vec<std::result::Result<Prepared, (PrecoderKind, f64, String)>> = Vec::new();
    let powers: Vec<Result<Option<Vec<f64>>>> = spec
        .snr_db
        .iter()
        .map(|&snr| static_powers(&spec.power, &sc.config(snr)?, &cov))
        .collect();
    for &precoder in &spec.precoders {
        for (i, &snr_db) in spec.snr_db.iter().enumerate() {
            let cfg = sc.config(snr_db)?;
            let prepared = match &powers[i] {
                Err(e) => Err(e.to_string()),
                Ok(p) => {
                    let stat = match p {
                        Some(p) => statistical(precoder, &cov, p, cfg.beta, cfg.nu),
                        None => Ok(None),
                    };
                    stat.map(|stat| Prepared { precoder, snr_db, nu: cfg.nu, beta: cfg.beta, powers: p.clone(), stat })
                        .map_err(|e| e.to_string())
                }
            };
            cells.push(prepared.map_err(|reason| (precoder, snr_db, reason)));
        }
    }

    let trial = |t: usize| -> TrialOutcome {
        let ones = vec![1.0; sc.k];
        let h = match sample_channel(&cov, &ones, &base, derive_seed(spec.seed, t as u64), spec.sampling) {
            Ok(r) => r.h,
            Err(e) => return vec![Err(format!("trial {t}: {e}")); cells.len()],
        };
        cells
            .iter()
            .map(|c| match c {
                Ok(cell) => cell_rates(cell, &h, &cov, &spec.power).map_err(|e| format!("trial {t}: {e}")),
                Err((_, _, reason)) => Err(reason.clone()),
            })
            .collect()
    };
    let outcomes: Vec<TrialOutcome> = match spec.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| (0..spec.trials).into_par_iter().map(trial).collect()),
        None => (0..spec.trials).into_par_iter().map(trial).collect(),
    };

    let mut table = ResultTable { seed: spec.seed, trials: spec.trials, ..Default::default() };
    for (ci, cell) in cells.iter().enumerate() {
        let (precoder, snr_db) = match cell {
            Ok(c) => (c.precoder, c.snr_db),
            Err((p, s, _)) => (*p, *s),
        };
        let tag = precoder.to_string();
        let mut per_user: Vec<Vec<f64>> = Vec::with_capacity(spec.trials);
        let mut failure = None;
        for o in &outcomes {
            match &o[ci] {
                Ok(r) => per_user.push(r.clone()),
                Err(reason) => {
                    failure = Some(reason.clone());
                    break;
                }
            }
        }
        if let Some(reason) = failure {
            table.failures.push(CellFailure { precoder: tag, snr_db, reason });
            continue;
        }
        for u in 0..sc.k {
            let x: Vec<f64> = per_user.iter().map(|r| r[u]).collect();
            let (rate_mean, rate_stderr) = mean_stderr(&x);
            table.rows.push(RateRow { precoder: tag.clone(), snr_db, user: u, rate_mean, rate_stderr });
        }
        let per_trial: Vec<f64> = per_user.iter().map(|r| r.iter().sum()).collect();
        let (mean, stderr) = mean_stderr(&per_trial);
        table.sum_rates.push(SumRate { precoder: tag.clone(), snr_db, mean, stderr, per_trial });
        table.cdfs.push(Cdf::from_samples(tag, snr_db, per_user.concat()));
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// `rates.csv`, `sum_rates.csv` and one gnuplot `.dat` CDF per cell.
    Csv,
    /// `results.json`, the full table.
    Json,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

/// File name of the CDF for one cell, e.g. `tpe-finite-2_20dB.dat`.
pub fn cdf_file_name(precoder: &str, snr_db: f64) -> String {
    format!("{}_{}dB.dat", precoder.replace(':', "-"), snr_db)
}

pub fn write_rates_csv<W: Write>(rows: &[RateRow], out: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let map = |e: csv::Error| Error::Parse(e.to_string());
    wr.write_record(RATES_HEADER).map_err(map)?;
    for r in rows {
        wr.serialize(r).map_err(map)?;
    }
    wr.flush().map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_rates_csv<R: Read>(input: R) -> Result<Vec<RateRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if header.iter().ne(RATES_HEADER) {
        return Err(Error::Parse(format!("unexpected rate header {header:?}")));
    }
    rd.deserialize().map(|r| r.map_err(|e| Error::Parse(e.to_string()))).collect()
}

pub fn write_cdf<W: Write>(cdf: &Cdf, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# {} at {} dB", cdf.precoder, cdf.snr_db)?;
    writeln!(out, "# rate prob")?;
    for (r, p) in cdf.steps() {
        writeln!(out, "{r} {p}")?;
    }
    Ok(())
}

pub fn parse_cdf<R: Read>(input: R) -> Result<Vec<(f64, f64)>> {
    let mut pts = Vec::new();
    for line in BufReader::new(input).lines() {
        let line = line.map_err(|e| Error::Parse(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace().map(str::parse::<f64>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(r)), Some(Ok(p)), None) => pts.push((r, p)),
            _ => return Err(Error::Parse(format!("bad CDF line {line:?}"))),
        }
    }
    Ok(pts)
}

/// Writes the table under `dir`; returns the files written.
pub fn emit(table: &ResultTable, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for f in formats {
        match f {
            Format::Csv => {
                let path = dir.join(RATES_CSV);
                write_rates_csv(&table.rows, fs::File::create(&path).map_err(io_err(&path))?)?;
                written.push(path);

                let path = dir.join(SUM_RATES_CSV);
                let mut wr = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
                wr.write_record(["precoder", "snr_db", "sum_rate_mean", "sum_rate_stderr"]).map_err(csv_err(&path))?;
                for s in &table.sum_rates {
                    wr.write_record([s.precoder.clone(), s.snr_db.to_string(), s.mean.to_string(), s.stderr.to_string()])
                        .map_err(csv_err(&path))?;
                }
                wr.flush().map_err(io_err(&path))?;
                written.push(path);

                let cdf_dir = dir.join(CDF_DIR);
                fs::create_dir_all(&cdf_dir).map_err(io_err(&cdf_dir))?;
                for c in &table.cdfs {
                    let path = cdf_dir.join(cdf_file_name(&c.precoder, c.snr_db));
                    let file = fs::File::create(&path).map_err(io_err(&path))?;
                    let mut w = std::io::BufWriter::new(file);
                    write_cdf(c, &mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
                    written.push(path);
                }
            }
            Format::Json => {
                let path = dir.join(RESULTS_JSON);
                let file = fs::File::create(&path).map_err(io_err(&path))?;
                let mut w = std::io::BufWriter::new(file);
                serde_json::to_writer(&mut w, table).map_err(|e| Error::Parse(e.to_string()))?;
                w.flush().map_err(io_err(&path))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Reads back `results.json` from a directory written by [`emit`].
pub fn load_table(dir: &Path) -> Result<ResultTable> {
    let path = dir.join(RESULTS_JSON);
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
