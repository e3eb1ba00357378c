//! Power allocation: pathloss inversion, Yates min-power iteration, max-min
//! bisection, weighted log-SINR maximisation and the virtual-queue scheduler.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::{CovarianceModel, SystemConfig};
use crate::duality::uplink_coupling;
use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, to_f64, CMat, Real};
use crate::tpe::{asymptotic_weights, finite_weights, horner_precoder, sinrs, Link, TpeWeights};

/// Power vector under the normalised convention `Σp = K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation<T> {
    pub p: Vec<T>,
}

impl<T: Real> PowerAllocation<T> {
    pub fn uniform(k: usize) -> Self {
        Self { p: vec![T::one(); k] }
    }

    pub fn sum(&self) -> T {
        self.p.iter().fold(T::zero(), |a, &b| a + b)
    }

    /// Same direction scaled to `Σp = budget`.
    pub fn rescaled(&self, budget: T) -> Result<Self> {
        let s = self.sum();
        if !(s > T::zero()) {
            return Err(Error::ZeroDenominator("power rescaling"));
        }
        Ok(Self { p: self.p.iter().map(|&x| x * budget / s).collect() })
    }
}

/// One row of a convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub sum_power: f64,
    pub min_sinr: f64,
    pub objective: f64,
}

fn trace_row<T: Real>(iteration: usize, p: &[T], sinr: &[T], objective: f64) -> TraceRow {
    TraceRow {
        iteration,
        sum_power: p.iter().map(|&x| to_f64(x)).sum(),
        min_sinr: sinr.iter().map(|&x| to_f64(x)).fold(f64::INFINITY, f64::min),
        objective,
    }
}

/// CSV with header `iteration,sum_power,min_sinr,objective`.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if trace.is_empty() {
        w.write_record(["iteration", "sum_power", "min_sinr", "objective"]).map_err(|e| Error::Parse(e.to_string()))?;
    }
    for r in trace {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

/// `p_k = (1/A_k) · K / Σ_j 1/A_j`.
pub fn conventional_power<T: Real>(pathloss: &[T]) -> Result<PowerAllocation<T>> {
    if pathloss.is_empty() {
        return Err(Error::Dimension("no users".into()));
    }
    if pathloss.iter().any(|&a| !(a > T::zero())) {
        return Err(Error::Config("pathloss must be positive".into()));
    }
    let k = from_usize::<T>(pathloss.len());
    let inv_sum = pathloss.iter().fold(T::zero(), |s, &a| s + T::one() / a);
    Ok(PowerAllocation { p: pathloss.iter().map(|&a| k / (a * inv_sum)).collect() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct YatesOptions {
    /// Starting point `p = ε·1`.
    pub epsilon: f64,
    /// Relative change below which the iteration stops.
    pub tolerance: f64,
    /// Any power above this flags infeasibility.
    pub blow_up: f64,
    pub max_iterations: usize,
    /// Attained SINRs must be at least `Γ − slack`.
    pub slack: f64,
    /// Stop early once `Σp` exceeds this (iterates only grow).
    pub sum_cap: Option<f64>,
}

impl Default for YatesOptions {
    fn default() -> Self {
        Self { epsilon: 1e-3, tolerance: 1e-8, blow_up: 1e6, max_iterations: 10_000, slack: 1e-6, sum_cap: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum YatesOutcome<T> {
    Converged { allocation: PowerAllocation<T>, sinr: Vec<T>, iterations: usize },
    Infeasible { iterations: usize },
    OverBudget { iterations: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct YatesReport<T> {
    pub outcome: YatesOutcome<T>,
    pub trace: Vec<TraceRow>,
}

/// Fixed point of `p_k ← p_k Γ_k / SINR_k(p)` from `p = ε·1`.
///
/// Users with `Γ_k = 0` are held at zero power and their SINR is ignored.
pub fn yates_min_power<T: Real, F>(targets: &[T], mut sinr_fn: F, opts: &YatesOptions) -> Result<YatesReport<T>>
where
    F: FnMut(&[T]) -> Result<Vec<T>>,
{
    if targets.iter().any(|&g| !(g >= T::zero())) {
        return Err(Error::Config("SINR targets must be nonnegative".into()));
    }
    let k = targets.len();
    let mut p: Vec<T> = targets.iter().map(|&g| if g > T::zero() { lit(opts.epsilon) } else { T::zero() }).collect();
    let mut trace = Vec::new();
    let blow_up = lit::<T>(opts.blow_up);
    for it in 1..=opts.max_iterations {
        let sinr = sinr_fn(&p)?;
        if sinr.len() != k {
            return Err(Error::Dimension(format!("SINR function returned {} values for {k} users", sinr.len())));
        }
        trace.push(trace_row(it - 1, &p, &sinr, f64::NAN));
        let mut next = p.clone();
        let mut change = T::zero();
        let mut attained = true;
        for i in 0..k {
            if targets[i] == T::zero() {
                continue;
            }
            if !(sinr[i] > T::zero()) {
                return Err(Error::NonPhysical(format!("zero SINR for user {i} at positive power")));
            }
            next[i] = p[i] * targets[i] / sinr[i];
            change = change.max((next[i] - p[i]).abs() / next[i]);
            attained &= sinr[i] >= targets[i] - lit(opts.slack);
        }
        if change < lit(opts.tolerance) && attained {
            return Ok(YatesReport {
                outcome: YatesOutcome::Converged { allocation: PowerAllocation { p }, sinr, iterations: it },
                trace,
            });
        }
        if next.iter().any(|&x| x > blow_up || !x.is_finite()) {
            return Ok(YatesReport { outcome: YatesOutcome::Infeasible { iterations: it }, trace });
        }
        if let Some(cap) = opts.sum_cap {
            if next.iter().fold(T::zero(), |a, &b| a + b) > lit(cap) {
                return Ok(YatesReport { outcome: YatesOutcome::OverBudget { iterations: it }, trace });
            }
        }
        p = next;
    }
    Ok(YatesReport { outcome: YatesOutcome::Infeasible { iterations: opts.max_iterations }, trace })
}

/// SINRs of the large-system TPE receivers of degree `j` as a function of `p`.
pub fn asymptotic_sinr_fn<T: Real>(cov: &CovarianceModel<T>, nu: T, j: usize) -> impl FnMut(&[T]) -> Result<Vec<T>> + '_ {
    move |p: &[T]| Ok(asymptotic_weights(cov, p, nu, j)?.into_iter().map(|w| w.sinr).collect())
}

/// SINRs of the finite-sample TPE receivers of degree `j` on one realisation.
pub fn finite_sinr_fn<T: Real>(h: &CMat<T>, nu: T, j: usize) -> impl FnMut(&[T]) -> Result<Vec<T>> + '_ {
    move |p: &[T]| Ok(finite_weights(h, p, nu, j)?.into_iter().map(|w| w.sinr).collect())
}

/// Upper end of the max-min bracket, `SNR · max_k tr(R_k)`.
pub fn max_min_bracket<T: Real>(cfg: &SystemConfig<T>, cov: &CovarianceModel<T>) -> T {
    (0..cov.k()).fold(T::zero(), |a, k| a.max(cov.trace(k))) * cfg.snr
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxMinOptions {
    pub budget_tolerance: f64,
    pub max_iterations: usize,
    pub yates: YatesOptions,
}

impl Default for MaxMinOptions {
    fn default() -> Self {
        Self { budget_tolerance: 1e-3, max_iterations: 60, yates: YatesOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxMinResult<T> {
    /// Common SINR reached before rescaling.
    pub xi: T,
    /// Allocation rescaled to the budget.
    pub allocation: PowerAllocation<T>,
    pub sinr: Vec<T>,
    pub trace: Vec<TraceRow>,
}

/// Bisection on the common target `ξ ∈ [0, ξ_max]` with Yates inner solves.
pub fn max_min_sinr<T: Real, F>(mut sinr_fn: F, k: usize, xi_max: T, opts: &MaxMinOptions) -> Result<MaxMinResult<T>>
where
    F: FnMut(&[T]) -> Result<Vec<T>>,
{
    if k == 0 || !(xi_max > T::zero()) {
        return Err(Error::Config("max-min needs users and a positive bracket".into()));
    }
    let budget = from_usize::<T>(k);
    let mut yopts = opts.yates.clone();
    yopts.sum_cap = Some(to_f64(budget) * (1.0 + opts.budget_tolerance));
    let (mut lo, mut hi) = (T::zero(), xi_max);
    let mut best: Option<(T, PowerAllocation<T>)> = None;
    let mut trace = Vec::new();
    for it in 0..opts.max_iterations {
        let mid = (lo + hi) * lit(0.5);
        let report = yates_min_power(&vec![mid; k], &mut sinr_fn, &yopts)?;
        match report.outcome {
            YatesOutcome::Converged { allocation, sinr, .. } => {
                let total = allocation.sum();
                trace.push(trace_row(it, &allocation.p, &sinr, to_f64(mid)));
                if total > budget * lit(1.0 + opts.budget_tolerance) {
                    hi = mid;
                    continue;
                }
                lo = mid;
                let done = (total - budget).abs() <= budget * lit(opts.budget_tolerance);
                best = Some((mid, allocation));
                if done {
                    break;
                }
            }
            YatesOutcome::Infeasible { .. } | YatesOutcome::OverBudget { .. } => {
                trace.push(TraceRow { iteration: it, sum_power: f64::NAN, min_sinr: f64::NAN, objective: to_f64(mid) });
                hi = mid;
            }
        }
    }
    let (xi, alloc) = best.ok_or(Error::NotConverged { what: "max-min bisection", iterations: opts.max_iterations })?;
    let allocation = alloc.rescaled(budget)?;
    let sinr = sinr_fn(&allocation.p)?;
    Ok(MaxMinResult { xi, allocation, sinr, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MwsrOptions {
    pub kkt_tolerance: f64,
    pub max_newton: usize,
    pub barrier_growth: f64,
    /// Backtracking factor.
    pub damping: f64,
    pub start: f64,
}

impl Default for MwsrOptions {
    fn default() -> Self {
        Self { kkt_tolerance: 1e-6, max_newton: 500, barrier_growth: 10.0, damping: 0.5, start: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MwsrSolution<T> {
    pub allocation: PowerAllocation<T>,
    /// `Σ_k Q_k log SINR_k` at the returned powers.
    pub objective: T,
    pub kkt_residual: T,
    pub newton_steps: usize,
}

/// `Σ_k Q_k log SINR_k` for coupling `φ` and noise `ν`; users with `Q_k = 0` are skipped.
pub fn weighted_log_sinr<T: Real>(q: &[T], phi: &DMatrix<T>, nu: T, p: &[T]) -> T {
    let k = q.len();
    let mut obj = T::zero();
    for i in 0..k {
        if q[i] == T::zero() {
            continue;
        }
        let interf = (0..k).filter(|&j| j != i).fold(nu, |a, j| a + phi[(i, j)] * p[j]);
        obj += q[i] * (phi[(i, i)] * p[i] / interf).ln();
    }
    obj
}

struct Mwsr<'a, T: Real> {
    q: Vec<T>,
    phi: &'a DMatrix<T>,
    idx: Vec<usize>,
    nu: T,
    budget: T,
}

impl<T: Real> Mwsr<'_, T> {
    fn interference(&self, e: &[T], a: usize) -> T {
        let k = self.idx[a];
        self.idx.iter().enumerate().filter(|&(b, _)| b != a).fold(self.nu, |s, (b, &j)| s + self.phi[(k, j)] * e[b])
    }

    /// `f(x) = Σ Q_k [log I_k − log φ_kk − x_k]`.
    fn f(&self, x: &[T]) -> T {
        let e: Vec<T> = x.iter().map(|v| v.exp()).collect();
        (0..x.len()).fold(T::zero(), |s, a| {
            let k = self.idx[a];
            s + self.q[a] * (self.interference(&e, a).ln() - self.phi[(k, k)].ln() - x[a])
        })
    }

    fn grad_hess(&self, x: &[T]) -> (DVector<T>, DMatrix<T>) {
        let n = x.len();
        let e: Vec<T> = x.iter().map(|v| v.exp()).collect();
        let mut g = DVector::from_fn(n, |a, _| -self.q[a]);
        let mut h = DMatrix::zeros(n, n);
        for a in 0..n {
            let k = self.idx[a];
            let inv = T::one() / self.interference(&e, a);
            let w: Vec<T> = (0..n).map(|b| if b == a { T::zero() } else { self.phi[(k, self.idx[b])] * e[b] * inv }).collect();
            for i in 0..n {
                g[i] += self.q[a] * w[i];
                h[(i, i)] += self.q[a] * w[i];
                for l in 0..n {
                    h[(i, l)] -= self.q[a] * w[i] * w[l];
                }
            }
        }
        (g, h)
    }

    fn barrier(&self, x: &[T]) -> Option<T> {
        let slack = self.budget - x.iter().fold(T::zero(), |s, v| s + v.exp());
        (slack > T::zero()).then(|| -slack.ln())
    }
}

/// Maximises `Σ Q_k log SINR_k` subject to `Σp ≤ K` in log-power variables
/// with a log barrier, then rescales to `Σp = K`.
pub fn mwsr_power<T: Real>(q: &[T], phi: &DMatrix<T>, nu: T, opts: &MwsrOptions) -> Result<MwsrSolution<T>> {
    let k = q.len();
    if phi.nrows() != k || phi.ncols() != k || k == 0 {
        return Err(Error::Dimension(format!("{k} weights for a {}×{} coupling", phi.nrows(), phi.ncols())));
    }
    if q.iter().any(|&x| !(x >= T::zero())) || phi.iter().any(|&x| !(x >= T::zero())) || !(nu > T::zero()) {
        return Err(Error::Config("weights and coupling must be nonnegative, noise positive".into()));
    }
    let idx: Vec<usize> = (0..k).filter(|&i| q[i] > T::zero()).collect();
    if idx.iter().any(|&i| !(phi[(i, i)] > T::zero())) {
        return Err(Error::Config("active users need a positive useful gain".into()));
    }
    let budget = from_usize::<T>(k);
    if idx.is_empty() {
        return Ok(MwsrSolution { allocation: PowerAllocation::uniform(k), objective: T::zero(), kkt_residual: T::zero(), newton_steps: 0 });
    }
    let prob = Mwsr { q: idx.iter().map(|&i| q[i]).collect(), phi, idx: idx.clone(), nu, budget };
    let n = idx.len();
    let mut x = vec![lit::<T>(opts.start).ln(); n];
    let mut t = T::one();
    let mut steps = 0;
    let tol = lit::<T>(opts.kkt_tolerance);
    let kkt = |x: &[T], t: T| {
        let (g, _) = prob.grad_hess(x);
        let s = x.iter().fold(T::zero(), |a, v| a + v.exp());
        let lambda = T::one() / (t * (budget - s));
        let r = (0..x.len()).fold(T::zero(), |m, i| m.max((g[i] + lambda * x[i].exp()).abs()));
        r.max(T::one() / t)
    };
    loop {
        // Centering: Newton on t f(x) + barrier(x).
        loop {
            let (g, h) = prob.grad_hess(&x);
            let e: Vec<T> = x.iter().map(|v| v.exp()).collect();
            let slack = budget - e.iter().fold(T::zero(), |a, &b| a + b);
            let mut grad = g * t;
            let mut hess = h * t;
            for i in 0..n {
                grad[i] += e[i] / slack;
                for l in 0..n {
                    hess[(i, l)] += e[i] * e[l] / (slack * slack);
                }
                hess[(i, i)] += e[i] / slack;
            }
            let hess = (&hess + hess.transpose()) * lit::<T>(0.5);
            let dir = match Cholesky::new(hess.clone()) {
                Some(ch) => -ch.solve(&grad),
                None => -hess.lu().solve(&grad).ok_or_else(|| Error::Singular("MWSR Newton system".into()))?,
            };
            let decrement = -grad.dot(&dir);
            let phi_t = |x: &[T]| prob.barrier(x).map(|b| t * prob.f(x) + b);
            let f0 = phi_t(&x).ok_or(Error::NonPhysical("left the feasible region".into()))?;
            if decrement * lit(0.5) <= lit(1e-14) {
                break;
            }
            let mut step = T::one();
            let mut accepted = false;
            let mut stalled = false;
            for _ in 0..60 {
                let cand: Vec<T> = (0..n).map(|i| x[i] + step * dir[i]).collect();
                if let Some(f1) = phi_t(&cand) {
                    if f1 <= f0 - lit::<T>(0.25) * step * decrement {
                        x = cand;
                        // No strict decrease left: only round-off is moving.
                        stalled = !(f1 < f0);
                        accepted = true;
                        break;
                    }
                }
                step *= lit(opts.damping);
            }
            steps += 1;
            if !accepted || stalled || steps >= opts.max_newton {
                if kkt(&x, t) <= tol {
                    break;
                }
                if steps >= opts.max_newton {
                    return Err(Error::NotConverged { what: "MWSR Newton", iterations: steps });
                }
                break;
            }
        }
        let r = kkt(&x, t);
        if r <= tol {
            let mut p = vec![T::zero(); k];
            for (a, &i) in idx.iter().enumerate() {
                p[i] = x[a].exp();
            }
            let allocation = PowerAllocation { p }.rescaled(budget)?;
            let objective = weighted_log_sinr(q, phi, nu, &allocation.p);
            return Ok(MwsrSolution { allocation, objective, kkt_residual: r, newton_steps: steps });
        }
        t *= lit(opts.barrier_growth);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Utility {
    ProportionalFair,
    MaxMin,
    SumRate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState<T> {
    pub queues: Vec<T>,
    pub v: T,
    pub b_max: T,
    pub utility: Utility,
}

/// Arrivals `B` maximising `V·U(b) − Σ Q_k b_k` on `[0, B_max]^K`, then
/// `Q ← [Q − R + B]₊`.
pub fn scheduler_step<T: Real>(state: &SchedulerState<T>, rates: &[T]) -> Result<(SchedulerState<T>, Vec<T>)> {
    let k = state.queues.len();
    if rates.len() != k {
        return Err(Error::Dimension(format!("{} rates for {k} queues", rates.len())));
    }
    if rates.iter().any(|&r| !(r >= T::zero())) {
        return Err(Error::Config("rates must be nonnegative".into()));
    }
    let b: Vec<T> = match state.utility {
        Utility::ProportionalFair => state
            .queues
            .iter()
            .map(|&q| if q > T::zero() { state.b_max.min(state.v / q) } else { state.b_max })
            .collect(),
        Utility::MaxMin => {
            let total = state.queues.iter().fold(T::zero(), |a, &b| a + b);
            vec![if state.v > total { state.b_max } else { T::zero() }; k]
        }
        Utility::SumRate => state.queues.iter().map(|&q| if state.v > q { state.b_max } else { T::zero() }).collect(),
    };
    let queues = (0..k).map(|i| (state.queues[i] - rates[i] + b[i]).max(T::zero())).collect();
    Ok((SchedulerState { queues, ..state.clone() }, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlternationOptions {
    pub sinr_tolerance: f64,
    pub max_rounds: usize,
    pub mwsr: MwsrOptions,
}

impl Default for AlternationOptions {
    fn default() -> Self {
        Self { sinr_tolerance: 1e-4, max_rounds: 50, mwsr: MwsrOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlternationResult<T: Real> {
    pub weights: Vec<TpeWeights<T>>,
    pub allocation: PowerAllocation<T>,
    pub sinr: Vec<T>,
    pub rounds: usize,
    pub trace: Vec<TraceRow>,
}

/// Alternates optimal TPE weights (fixed powers) with MWSR powers (fixed
/// receivers) on one realisation until the SINRs settle.
pub fn alternate_weights_powers<T: Real>(h: &CMat<T>, q: &[T], nu: T, j: usize, opts: &AlternationOptions) -> Result<AlternationResult<T>> {
    let k = h.ncols();
    if q.len() != k {
        return Err(Error::Dimension(format!("{} weights for {k} users", q.len())));
    }
    if q.iter().any(|&x| !(x > T::zero())) {
        return Err(Error::Config("alternation needs positive queue weights".into()));
    }
    let mut p = PowerAllocation::uniform(k);
    let mut weights = finite_weights(h, &p.p, nu, j)?;
    let mut v = horner_precoder(h, &p.p, &weights, j)?;
    let mut last: Option<Vec<T>> = None;
    let mut trace = Vec::new();
    for round in 1..=opts.max_rounds {
        let phi = uplink_coupling(h, &v.v)?;
        let sol = mwsr_power(q, &phi, nu, &opts.mwsr)?;
        p = sol.allocation;
        let mut objective = sol.objective;
        // The Krylov basis moves with p, so a fresh set of vectors can lose to the
        // old one at the new powers. Keep whichever scores higher.
        let cand_w = finite_weights(h, &p.p, nu, j)?;
        let cand_v = horner_precoder(h, &p.p, &cand_w, j)?;
        let cand_obj = weighted_log_sinr(q, &uplink_coupling(h, &cand_v.v)?, nu, &p.p);
        let improved = cand_obj >= objective;
        if improved {
            weights = cand_w;
            v = cand_v;
            objective = cand_obj;
        }
        let sinr = sinrs(h, &v.v, nu, Link::Uplink(&p.p))?;
        trace.push(trace_row(round, &p.p, &sinr, to_f64(objective)));
        let settled = !improved
            || last
                .as_ref()
                .is_some_and(|prev| prev.iter().zip(&sinr).all(|(&a, &b)| to_f64((a - b).abs()) < opts.sinr_tolerance));
        if settled || round == opts.max_rounds {
            return Ok(AlternationResult { weights, allocation: p, sinr, rounds: round, trace });
        }
        last = Some(sinr);
    }
    unreachable!("max_rounds ≥ 1 returns inside the loop")
}
