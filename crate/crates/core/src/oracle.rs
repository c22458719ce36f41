//! Exact-expectation oracles for the coefficient-sampling case and the
//! expected-trajectory recursion, with no Monte-Carlo sampling involved.
//!
//! For coefficient sampling the error coordinates obey closed linear
//! recursions for the first and second conditional moments,
//!
//! ```text
//! eps'_i    = a^2 (1 - r_i mu (2 - mu)) eps_i
//!             + 2 a abar (1 - r_i mu) c_i epsbar_i + abar^2 c_i^2
//!             + r_i a^2 mu^2 sigma^2
//! epsbar'_i = a (1 - r_i mu) epsbar_i + abar c_i
//! ```
//!
//! with `abar = 1 - a`, starting from `eps_i = c_i^2`, `epsbar_i = c_i`.
//! These give the exact expected squared error in any weighted norm and are
//! the ground truth the Monte-Carlo harness is validated against.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::Eigensystem;
use crate::numeric::pairwise_sum_by;
use crate::online::{Schedule, ScheduleMode};

/// Index chunk width for the parallel drivers. Fixed so that results do not
/// depend on the worker count.
const CHUNK: usize = 512;

/// A coefficient-sampling learning task: sampling weights, target
/// coefficients and the noise standard deviation.
#[derive(Clone, Debug)]
pub struct ConsProblemSpec {
    rho: Vec<f64>,
    tail_mass: f64,
    c: Vec<f64>,
    sigma: f64,
}

impl ConsProblemSpec {
    /// `rho` are the retained probability weights (non-increasing,
    /// positive); `tail_mass` is the probability mass of the truncated
    /// indices; the two must sum to one.
    pub fn new(rho: Vec<f64>, tail_mass: f64, c: Vec<f64>, sigma: f64) -> Result<Self> {
        if rho.is_empty() || rho.len() != c.len() {
            return Err(Error::DimensionMismatch {
                expected: rho.len(),
                found: c.len(),
            });
        }
        if rho.iter().any(|r| !(*r > 0.0)) || rho.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter {
                name: "rho",
                reason: "weights must be positive and non-increasing".into(),
            });
        }
        if !(0.0..1.0).contains(&tail_mass) {
            return Err(Error::InvalidParameter {
                name: "tail_mass",
                reason: format!("tail mass {tail_mass} outside [0, 1)"),
            });
        }
        let total = pairwise_sum_by(rho.len(), |i| rho[i]) + tail_mass;
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter {
                name: "rho",
                reason: format!("retained mass plus tail must be 1, got {total}"),
            });
        }
        if !(sigma >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: "noise deviation must be non-negative".into(),
            });
        }
        Ok(Self {
            rho,
            tail_mass,
            c,
            sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.rho.len()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn target(&self) -> &[f64] {
        &self.c
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Exact conditional moments of the error coordinates after `m` steps.
#[derive(Clone, Debug)]
pub struct MomentState {
    /// Second moments `E((c_i^(m))^2)`.
    pub eps: Vec<f64>,
    /// First moments `E(c_i^(m))`.
    pub eps_bar: Vec<f64>,
    pub m: usize,
}

impl MomentState {
    /// State at `m = 0` for a zero initial iterate: the error is the target.
    pub fn initial(spec: &ConsProblemSpec) -> Self {
        Self {
            eps: spec.c.iter().map(|c| c * c).collect(),
            eps_bar: spec.c.clone(),
            m: 0,
        }
    }
}

/// Tolerated second-moment defect before the recursion is declared
/// inconsistent; anything beyond this indicates a transcription bug, not
/// rounding.
const JENSEN_SLACK: f64 = 1e-10;

#[inline]
fn moment_step_one(
    eps: &mut f64,
    eps_bar: &mut f64,
    rho: f64,
    c: f64,
    sigma: f64,
    alpha: f64,
    mu: f64,
) {
    let abar = 1.0 - alpha;
    let damp = 1.0 - rho * mu;
    let e2 = alpha * alpha * (1.0 - rho * mu * (2.0 - mu)) * *eps
        + 2.0 * alpha * abar * damp * c * *eps_bar
        + abar * abar * c * c
        + rho * alpha * alpha * mu * mu * sigma * sigma;
    let e1 = alpha * damp * *eps_bar + abar * c;
    *eps = e2;
    *eps_bar = e1;
}

/// Advance both moment recursions by one step for every retained index.
pub fn cons_moment_step(
    spec: &ConsProblemSpec,
    state: &mut MomentState,
    sched: &Schedule,
) -> Result<()> {
    let (alpha, mu) = sched.params(state.m)?;
    if spec.rho[0] * mu > 1.0 {
        return Err(Error::InvalidParameter {
            name: "mu",
            reason: format!(
                "step size {mu} violates rho_1 * mu <= 1 (rho_1 = {})",
                spec.rho[0]
            ),
        });
    }
    for i in 0..spec.dim() {
        moment_step_one(
            &mut state.eps[i],
            &mut state.eps_bar[i],
            spec.rho[i],
            spec.c[i],
            spec.sigma,
            alpha,
            mu,
        );
        let gap = state.eps_bar[i] * state.eps_bar[i] - state.eps[i];
        if gap > JENSEN_SLACK {
            return Err(Error::MomentConsistency {
                m: state.m + 1,
                index: i,
                gap,
            });
        }
    }
    state.m += 1;
    Ok(())
}

/// Weighted expected squared error `sum_i rho_i^{-sbar} eps_{m,i}`.
///
/// `sbar` in [-1, 0] is the certified range; values outside are permitted
/// with a warning.
pub fn weighted_error(spec: &ConsProblemSpec, state: &MomentState, sbar: f64) -> f64 {
    if !(-1.0..=0.0).contains(&sbar) {
        log::warn!("weighted_error called with sbar = {sbar} outside the certified range [-1, 0]");
    }
    if sbar == 0.0 {
        pairwise_sum_by(spec.dim(), |i| state.eps[i])
    } else {
        pairwise_sum_by(spec.dim(), |i| spec.rho[i].powf(-sbar) * state.eps[i])
    }
}

/// `(checkpoint, weighted expected squared error)` curve of the moment
/// recursion, parallelized over indices in fixed-size chunks. Identical
/// arithmetic per index to repeated `cons_moment_step`.
pub fn cons_moment_curve(
    spec: &ConsProblemSpec,
    sched: &Schedule,
    m_max: usize,
    checkpoints: &[usize],
    sbar: f64,
) -> Result<Vec<(usize, f64)>> {
    let mut cps: Vec<usize> = checkpoints.to_vec();
    cps.sort_unstable();
    cps.dedup();
    if let Some(&last) = cps.last() {
        if last > m_max {
            return Err(Error::CheckpointBeyondRun {
                checkpoint: last,
                steps: m_max,
            });
        }
    }
    // One pass over the schedule, shared by every chunk.
    let mut params = Vec::with_capacity(m_max);
    for m in 0..m_max {
        let (alpha, mu) = sched.params(m)?;
        if spec.rho[0] * mu > 1.0 {
            return Err(Error::InvalidParameter {
                name: "mu",
                reason: format!("step size {mu} violates rho_1 * mu <= 1 at m = {m}"),
            });
        }
        params.push((alpha, mu));
    }

    let n = spec.dim();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let partials: Result<Vec<Vec<f64>>> = starts
        .par_iter()
        .map(|&lo| {
            let hi = (lo + CHUNK).min(n);
            let rho = &spec.rho[lo..hi];
            let c = &spec.c[lo..hi];
            let mut eps: Vec<f64> = c.iter().map(|x| x * x).collect();
            let mut eps_bar: Vec<f64> = c.to_vec();
            let weight: Vec<f64> = if sbar == 0.0 {
                vec![1.0; hi - lo]
            } else {
                rho.iter().map(|r| r.powf(-sbar)).collect()
            };
            let mut out = Vec::with_capacity(cps.len());
            let mut cp_iter = cps.iter().copied().peekable();
            if cp_iter.peek() == Some(&0) {
                jensen_check(&eps, &eps_bar, lo, 0)?;
                out.push(pairwise_sum_by(hi - lo, |i| weight[i] * eps[i]));
                cp_iter.next();
            }
            for (m, &(alpha, mu)) in params.iter().enumerate() {
                for i in 0..(hi - lo) {
                    moment_step_one(
                        &mut eps[i],
                        &mut eps_bar[i],
                        rho[i],
                        c[i],
                        spec.sigma,
                        alpha,
                        mu,
                    );
                }
                if cp_iter.peek() == Some(&(m + 1)) {
                    jensen_check(&eps, &eps_bar, lo, m + 1)?;
                    out.push(pairwise_sum_by(hi - lo, |i| weight[i] * eps[i]));
                    cp_iter.next();
                }
            }
            Ok(out)
        })
        .collect();
    let partials = partials?;

    Ok(cps
        .iter()
        .enumerate()
        .map(|(k, &m)| (m, partials.iter().map(|p| p[k]).sum()))
        .collect())
}

fn jensen_check(eps: &[f64], eps_bar: &[f64], offset: usize, m: usize) -> Result<()> {
    for (i, (e, eb)) in eps.iter().zip(eps_bar).enumerate() {
        let gap = eb * eb - e;
        if gap > JENSEN_SLACK {
            return Err(Error::MomentConsistency {
                m,
                index: offset + i,
                gap,
            });
        }
    }
    Ok(())
}

/// Product `Pi_k^{m-1} = prod_{j=k+1}^{m} (1 - a / j^t)`, with the empty
/// product `Pi_m^{m-1} = 1`.
///
/// Evaluated in log space so that products of up to ~1e6 sub-unit factors
/// do not underflow.
pub fn pi_product(a: f64, t: f64, k: usize, m: usize) -> Result<f64> {
    if k > m {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: format!("need k <= m, got k = {k}, m = {m}"),
        });
    }
    if !(a >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "a",
            reason: "factor scale must be non-negative".into(),
        });
    }
    if a == 0.0 || k == m {
        return Ok(1.0);
    }
    // The largest factor magnitude is at j = k+1; all factors must stay in
    // [1/2, 1), the contraction regime.
    if a / ((k + 1) as f64).powf(t) > 0.5 {
        return Err(Error::InvalidParameter {
            name: "a",
            reason: format!(
                "a / (k+1)^t = {} exceeds 1/2; factors leave the contraction regime",
                a / ((k + 1) as f64).powf(t)
            ),
        });
    }
    let log_sum: f64 = ((k + 1)..=m)
        .map(|j| (-a / (j as f64).powf(t)).ln_1p())
        .sum();
    Ok(log_sum.exp())
}

/// `S_m = sum_{k=0}^{m} Pi_k^{m-1}`, accumulated with a backward running
/// product.
pub fn s_sum(a: f64, t: f64, m: usize) -> Result<f64> {
    if !(a >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "a",
            reason: "factor scale must be non-negative".into(),
        });
    }
    if a > 0.5 {
        return Err(Error::InvalidParameter {
            name: "a",
            reason: format!("a = {a} exceeds 1/2; factors leave the contraction regime"),
        });
    }
    let mut sum = 1.0; // Pi_m^{m-1}
    let mut prod = 1.0;
    for k in (1..=m).rev() {
        prod *= 1.0 - a / (k as f64).powf(t);
        sum += prod;
    }
    Ok(sum)
}

/// Closed form of the expected error coordinate under the shrinkage
/// schedule `alpha_m = (m+1)/(m+2)`:
///
/// ```text
/// c^(m) = ( prod_{l<m}(1 - mu_l L) c0
///           + sum_{k=1}^{m} k mu_{k-1} prod_{l=k}^{m-1}(1 - mu_l L) g ) / (m+1)
/// ```
pub fn expected_coeff_closed_form(
    lambda: f64,
    c0: f64,
    g: f64,
    sched: &Schedule,
    m: usize,
) -> Result<f64> {
    if !matches!(sched.mode(), ScheduleMode::Regularized) {
        return Err(Error::InvalidParameter {
            name: "sched",
            reason: "the closed form is specific to the regularized shrinkage".into(),
        });
    }
    if m == 0 {
        return Ok(c0);
    }
    let mu = |k: usize| -> Result<f64> { Ok(sched.params(k)?.1) };
    // Backward sweep over suffix products prod_{l=k}^{m-1}(1 - mu_l lambda).
    let mut suffix = 1.0; // k = m
    let mut forced = 0.0;
    for k in (1..=m).rev() {
        forced += k as f64 * mu(k - 1)? * suffix;
        suffix *= 1.0 - mu(k - 1)? * lambda;
    }
    // After the loop, suffix = prod_{l=0}^{m-1}(1 - mu_l lambda).
    Ok((suffix * c0 + forced * g) / (m as f64 + 1.0))
}

/// Expected-trajectory norms under the one-step expectation recursion
/// `U' = alpha (I - mu P) U + alpha mu g`, recorded as `|E u^(m)|^2` at the
/// checkpoints.
pub fn expected_trajectory(
    eig: &Eigensystem,
    g: &[f64],
    u0: &[f64],
    sched: &Schedule,
    m_max: usize,
    checkpoints: &[usize],
) -> Result<Vec<(usize, f64)>> {
    expected_trajectory_impl(eig, g, u0, None, sched, m_max, checkpoints)
}

/// Like [`expected_trajectory`] but records `|target - E u^(m)|^2`: the
/// squared norm of the expected error against a fixed reference.
pub fn expected_error_trajectory(
    eig: &Eigensystem,
    g: &[f64],
    u0: &[f64],
    target: &[f64],
    sched: &Schedule,
    m_max: usize,
    checkpoints: &[usize],
) -> Result<Vec<(usize, f64)>> {
    expected_trajectory_impl(eig, g, u0, Some(target), sched, m_max, checkpoints)
}

fn expected_trajectory_impl(
    eig: &Eigensystem,
    g: &[f64],
    u0: &[f64],
    reference: Option<&[f64]>,
    sched: &Schedule,
    m_max: usize,
    checkpoints: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if !matches!(sched.mode(), ScheduleMode::Regularized) {
        return Err(Error::InvalidParameter {
            name: "sched",
            reason: "expected-trajectory analysis assumes the regularized shrinkage".into(),
        });
    }
    let n = eig.dim();
    for (name, len) in [("g", g.len()), ("u0", u0.len())] {
        if len != n {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("expected {n} coefficients, got {len}"),
            });
        }
    }
    if let Some(r) = reference {
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: r.len(),
            });
        }
    }
    if g.iter().chain(u0).any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteSample("trajectory coefficients".into()));
    }
    let mut cps: Vec<usize> = checkpoints.to_vec();
    cps.sort_unstable();
    cps.dedup();
    if let Some(&last) = cps.last() {
        if last > m_max {
            return Err(Error::CheckpointBeyondRun {
                checkpoint: last,
                steps: m_max,
            });
        }
    }
    let mut params = Vec::with_capacity(m_max);
    for m in 0..m_max {
        params.push(sched.params(m)?);
    }
    let lambdas = eig.lambdas();

    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let partials: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&lo| {
            let hi = (lo + CHUNK).min(n);
            let lam = &lambdas[lo..hi];
            let gs = &g[lo..hi];
            let mut u: Vec<f64> = u0[lo..hi].to_vec();
            let sq = |u: &[f64]| match reference {
                None => pairwise_sum_by(u.len(), |i| u[i] * u[i]),
                Some(r) => {
                    let r = &r[lo..hi];
                    pairwise_sum_by(u.len(), |i| (r[i] - u[i]) * (r[i] - u[i]))
                }
            };
            let mut out = Vec::with_capacity(cps.len());
            let mut cp_iter = cps.iter().copied().peekable();
            if cp_iter.peek() == Some(&0) {
                out.push(sq(&u));
                cp_iter.next();
            }
            for (m, &(alpha, mu)) in params.iter().enumerate() {
                for i in 0..(hi - lo) {
                    u[i] = alpha * (1.0 - mu * lam[i]) * u[i] + alpha * mu * gs[i];
                }
                if cp_iter.peek() == Some(&(m + 1)) {
                    out.push(sq(&u));
                    cp_iter.next();
                }
            }
            out
        })
        .collect();

    Ok(cps
        .iter()
        .enumerate()
        .map(|(k, &m)| (m, partials.iter().map(|p| p[k]).sum()))
        .collect())
}

/// Decay-exponent rule `t_{s, sbar} = max((s+1)/(s+2), (sbar+3)/(sbar+4))`.
pub fn theorem2_t(s: f64, sbar: f64) -> Result<f64> {
    check_theorem2_range(s, sbar)?;
    Ok(((s + 1.0) / (s + 2.0)).max((sbar + 3.0) / (sbar + 4.0)))
}

/// Certified decay exponent `min((s - sbar)/(s + 2), 2/(sbar + 4))` of the
/// expected squared error in the index-`sbar` norm.
pub fn theorem2_rate(s: f64, sbar: f64) -> Result<f64> {
    check_theorem2_range(s, sbar)?;
    Ok(((s - sbar) / (s + 2.0)).min(2.0 / (sbar + 4.0)))
}

fn check_theorem2_range(s: f64, sbar: f64) -> Result<()> {
    if !((-1.0..=0.0).contains(&sbar) && s >= 0.0 && sbar < s && s <= sbar + 2.0) {
        return Err(Error::InvalidParameter {
            name: "s",
            reason: format!(
                "need -1 <= sbar <= 0 <= s, sbar < s <= sbar + 2; got s = {s}, sbar = {sbar}"
            ),
        });
    }
    Ok(())
}

/// Witness produced by [`theorem3_probe`].
#[derive(Clone, Debug)]
pub struct Theorem3Witness {
    /// Largest normalized error over the probed family.
    pub value: f64,
    /// Index of the family member attaining it.
    pub argmax: usize,
}

/// Lower-bound probe: over a configurable family of sampling laws and
/// unit-smoothness targets, report the maximum of
/// `(m+1)^rate * E(|e^(m)|^2_sbar)`.
///
/// This exhibits witnesses for the optimality of the rate exponent; it
/// makes no claim of exhausting the supremum over all sampling laws.
pub fn theorem3_probe(
    family: &[ConsProblemSpec],
    sched: &Schedule,
    s: f64,
    sbar: f64,
    m: usize,
) -> Result<Theorem3Witness> {
    if family.is_empty() {
        return Err(Error::InvalidParameter {
            name: "family",
            reason: "the probe needs at least one member".into(),
        });
    }
    let rate = theorem2_rate(s, sbar)?;
    let mut best = f64::NEG_INFINITY;
    let mut argmax = 0;
    for (idx, spec) in family.iter().enumerate() {
        // Normalize the target to unit index-s norm for this rho.
        let norm_sq = pairwise_sum_by(spec.dim(), |i| {
            spec.rho[i].powf(-s) * spec.c[i] * spec.c[i]
        });
        let z = norm_sq.sqrt();
        let scaled = ConsProblemSpec::new(
            spec.rho.clone(),
            spec.tail_mass,
            spec.c.iter().map(|c| c / z).collect(),
            spec.sigma,
        )?;
        let curve = cons_moment_curve(&scaled, sched, m, &[m], sbar)?;
        let value = (m as f64 + 1.0).powf(rate) * curve[0].1;
        if value > best {
            best = value;
            argmax = idx;
        }
    }
    Ok(Theorem3Witness {
        value: best,
        argmax,
    })
}
