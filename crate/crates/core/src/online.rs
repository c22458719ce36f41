//! The online iteration and its parameter schedules.
//!
//! One step processes a sample `(w_m, y_m)`:
//!
//! ```text
//! u_{m+1} = alpha_m * (u_m + mu_m * R_{w_m}(y_m - R*_{w_m} u_m))
//! ```
//!
//! with shrinkage `alpha_m = (m+1)/(m+2)` in regularized mode, `alpha_m = 1`
//! otherwise, and step size `mu_m = A / (m+1)^t`. The same recursion runs
//! either on spectral coordinates or as a growing kernel expansion; the two
//! paths are algebraically equivalent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::{draw_sample, ProblemInstance};
use crate::hilbert::{
    apply_feature_spectral, eval_feature_adjoint, smoothness_norm, uniform_bound, DualAnchor,
    FeatureMap, FeatureSpaceVector, SamplePoint, YVector,
};

/// Step-size and shrinkage schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    t: f64,
    a: f64,
    mode: ScheduleMode,
    averaging: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleMode {
    /// Shrinkage `alpha_m = (m+1)/(m+2)` with decaying steps.
    Regularized,
    /// `alpha_m = 1` with the same decaying steps.
    Unregularized,
    /// `alpha_m = 1` with a constant step fixed from the horizon; only the
    /// final iterate is certified.
    FiniteHorizon { horizon: usize, mu: f64 },
}

fn check_decay_params(t: f64, a: f64) -> Result<()> {
    if !(t > 0.5 && t < 1.0) {
        return Err(Error::InvalidParameter {
            name: "t",
            reason: format!("decay exponent must lie in (1/2, 1), got {t}"),
        });
    }
    if !(a > 0.0) {
        return Err(Error::InvalidParameter {
            name: "a",
            reason: format!("step-size constant must be positive, got {a}"),
        });
    }
    Ok(())
}

impl Schedule {
    pub fn regularized(t: f64, a: f64) -> Result<Self> {
        check_decay_params(t, a)?;
        Ok(Self {
            t,
            a,
            mode: ScheduleMode::Regularized,
            averaging: false,
        })
    }

    pub fn unregularized(t: f64, a: f64) -> Result<Self> {
        check_decay_params(t, a)?;
        Ok(Self {
            t,
            a,
            mode: ScheduleMode::Unregularized,
            averaging: false,
        })
    }

    /// Constant-step schedule for a fixed horizon, step size
    /// `(2 Lambda)^{-1} (N+1)^{-2/3}`.
    pub fn finite_horizon(horizon: usize, lambda_bound: f64) -> Result<Self> {
        let mu = finite_horizon_mu(horizon, lambda_bound)?;
        Ok(Self {
            t: 0.0,
            a: mu,
            mode: ScheduleMode::FiniteHorizon { horizon, mu },
            averaging: false,
        })
    }

    pub fn with_averaging(mut self, on: bool) -> Self {
        self.averaging = on;
        self
    }

    pub fn averaging(&self) -> bool {
        self.averaging
    }

    pub fn mode(&self) -> &ScheduleMode {
        &self.mode
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// `(alpha_m, mu_m)` for step `m >= 0`.
    pub fn params(&self, m: usize) -> Result<(f64, f64)> {
        let mf = m as f64;
        match self.mode {
            ScheduleMode::Regularized => {
                Ok(((mf + 1.0) / (mf + 2.0), self.a / (mf + 1.0).powf(self.t)))
            }
            ScheduleMode::Unregularized => Ok((1.0, self.a / (mf + 1.0).powf(self.t))),
            ScheduleMode::FiniteHorizon { horizon, mu } => {
                if m >= horizon {
                    Err(Error::HorizonExceeded { m, horizon })
                } else {
                    Ok((1.0, mu))
                }
            }
        }
    }

    /// Largest product `mu_m * lambda` over the spectrum; must stay at or
    /// below 1/2 for every contraction factor to lie in [1/2, 1].
    pub fn contraction_margin(&self, lambda_bound: f64) -> f64 {
        let mu0 = match self.mode {
            ScheduleMode::FiniteHorizon { mu, .. } => mu,
            _ => self.a, // mu_0 = A is the largest step
        };
        mu0 * lambda_bound
    }
}

/// Schedule certified by the main convergence theorem for smoothness `s`:
/// `t = (1+s)/(2+s)`, `A = 1/(2 Lambda)`.
pub fn theorem1_schedule(s: f64, lambda_bound: f64) -> Result<Schedule> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "s",
            reason: format!("smoothness must lie in (0, 1], got {s}"),
        });
    }
    if !(lambda_bound > 0.0) {
        return Err(Error::InvalidParameter {
            name: "lambda_bound",
            reason: "uniform bound must be positive".into(),
        });
    }
    Schedule::regularized((1.0 + s) / (2.0 + s), 1.0 / (2.0 * lambda_bound))
}

/// Constant step size `(2 Lambda)^{-1} (N+1)^{-2/3}` for a horizon of `n`
/// samples.
pub fn finite_horizon_mu(n: usize, lambda_bound: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "horizon must contain at least one sample".into(),
        });
    }
    if !(lambda_bound > 0.0) {
        return Err(Error::InvalidParameter {
            name: "lambda_bound",
            reason: "uniform bound must be positive".into(),
        });
    }
    Ok((n as f64 + 1.0).powf(-2.0 / 3.0) / (2.0 * lambda_bound))
}

/// One observed sample.
#[derive(Clone, Debug)]
pub struct Sample {
    pub omega: SamplePoint,
    pub y: YVector,
}

/// Iterate, optional running average, and step counter.
#[derive(Clone, Debug)]
pub struct IterateState {
    pub u: FeatureSpaceVector,
    pub u_bar: Option<FeatureSpaceVector>,
    pub m: usize,
}

impl IterateState {
    pub fn new(u0: FeatureSpaceVector, averaging: bool) -> Self {
        let u_bar = averaging.then(|| u0.clone());
        Self { u: u0, u_bar, m: 0 }
    }

    /// The vector whose error a run reports: the average when averaging is
    /// on, the raw iterate otherwise.
    pub fn reported(&self) -> &FeatureSpaceVector {
        self.u_bar.as_ref().unwrap_or(&self.u)
    }
}

fn check_sample(map: &FeatureMap, sample: &Sample) -> Result<()> {
    if !sample.y.is_finite() {
        return Err(Error::NonFiniteSample(format!("{:?}", sample.y)));
    }
    if sample.y.dim() != map.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: map.output_dim(),
            found: sample.y.dim(),
        });
    }
    Ok(())
}

/// Incremental average update `ubar' = ((m+1) ubar + u') / (m+2)` on
/// spectral coordinates.
fn update_average_spectral(u_bar: &mut FeatureSpaceVector, u_new: &[f64], m: usize) -> Result<()> {
    let bar = u_bar.coeffs_mut()?;
    let w_old = (m as f64 + 1.0) / (m as f64 + 2.0);
    let w_new = 1.0 / (m as f64 + 2.0);
    for (b, un) in bar.iter_mut().zip(u_new) {
        *b = w_old * *b + w_new * un;
    }
    Ok(())
}

/// One step of the iteration on spectral coordinates.
pub fn online_step(
    state: &mut IterateState,
    sample: &Sample,
    map: &FeatureMap,
    sched: &Schedule,
) -> Result<()> {
    check_sample(map, sample)?;
    let (alpha, mu) = sched.params(state.m)?;
    let f = eval_feature_adjoint(map, sample.omega, &state.u)?;
    let resid = YVector::new(
        sample
            .y
            .as_slice()
            .iter()
            .zip(f.as_slice())
            .map(|(y, fv)| y - fv)
            .collect(),
    );
    let corr = apply_feature_spectral(map, sample.omega, &resid)?;
    {
        let u = state.u.coeffs_mut()?;
        let c = corr.coeffs()?;
        for (uk, ck) in u.iter_mut().zip(c) {
            *uk = alpha * (*uk + mu * ck);
        }
    }
    if let Some(bar) = state.u_bar.as_mut() {
        let u_new = state.u.coeffs()?.to_vec();
        update_average_spectral(bar, &u_new, state.m)?;
    }
    state.m += 1;
    Ok(())
}

/// One step of the iteration as a kernel expansion: existing anchors shrink
/// by `alpha_m`, one anchor is appended at `w_m` with coefficient
/// `alpha_m mu_m (y_m - f_m(w_m))`.
pub fn online_step_dual(
    state: &mut IterateState,
    sample: &Sample,
    map: &FeatureMap,
    sched: &Schedule,
) -> Result<()> {
    if matches!(map, FeatureMap::SpectralDiscrete { .. }) {
        // Coefficient-sampling problems run on the spectral path; anchors
        // would only mirror the sampled indices.
        return Err(Error::UnsupportedRepresentation {
            required: "spectral",
        });
    }
    check_sample(map, sample)?;
    let (alpha, mu) = sched.params(state.m)?;
    let f = eval_feature_adjoint(map, sample.omega, &state.u)?;
    let SamplePoint::Real(w) = sample.omega else {
        return Err(Error::OutOfDomain(
            "kernel expansion needs a continuous sample point".into(),
        ));
    };
    let gamma = YVector::new(
        sample
            .y
            .as_slice()
            .iter()
            .zip(f.as_slice())
            .map(|(y, fv)| alpha * mu * (y - fv))
            .collect(),
    );
    let FeatureSpaceVector::Dual { anchors } = &mut state.u else {
        return Err(Error::UnsupportedRepresentation { required: "dual" });
    };
    for a in anchors.iter_mut() {
        a.coeff = YVector::new(a.coeff.as_slice().iter().map(|c| alpha * c).collect());
    }
    anchors.push(DualAnchor {
        omega: w,
        coeff: gamma,
    });

    if let Some(bar) = state.u_bar.as_mut() {
        // The average shares the anchor sequence of the iterate; blend
        // blockwise and append the new anchor's share.
        let FeatureSpaceVector::Dual {
            anchors: bar_anchors,
        } = bar
        else {
            return Err(Error::UnsupportedRepresentation { required: "dual" });
        };
        let w_old = (state.m as f64 + 1.0) / (state.m as f64 + 2.0);
        let w_new = 1.0 / (state.m as f64 + 2.0);
        let u_anchors = match &state.u {
            FeatureSpaceVector::Dual { anchors } => anchors,
            FeatureSpaceVector::Spectral { .. } => unreachable!(),
        };
        for (b, un) in bar_anchors.iter_mut().zip(u_anchors.iter()) {
            b.coeff = YVector::new(
                b.coeff
                    .as_slice()
                    .iter()
                    .zip(un.coeff.as_slice())
                    .map(|(bc, uc)| w_old * bc + w_new * uc)
                    .collect(),
            );
        }
        let last = u_anchors.last().expect("anchor appended above");
        bar_anchors.push(DualAnchor {
            omega: last.omega,
            coeff: YVector::new(last.coeff.as_slice().iter().map(|c| w_new * c).collect()),
        });
    }
    state.m += 1;
    Ok(())
}

/// A `(checkpoint, squared error)` record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunRecord {
    pub m: usize,
    pub sq_error: f64,
}

/// Options of a single run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub steps: usize,
    /// Checkpoints at which the squared error is recorded; any order,
    /// duplicates ignored.
    pub checkpoints: Vec<usize>,
    pub seed: u64,
    /// Index of the error norm: 0 is the plain feature-space norm.
    pub sbar: f64,
    /// Permit interior checkpoints on finite-horizon schedules, which
    /// certify only the final iterate.
    pub allow_fh_interior: bool,
}

impl RunConfig {
    pub fn new(steps: usize, checkpoints: Vec<usize>, seed: u64, sbar: f64) -> Self {
        Self {
            steps,
            checkpoints,
            seed,
            sbar,
            allow_fh_interior: false,
        }
    }
}

/// Draw `steps` i.i.d. samples from the problem, iterate from zero, and
/// record the squared smoothness-norm error of the iterate (or of its
/// running average) at each checkpoint. Deterministic in `cfg.seed`.
pub fn run(problem: &ProblemInstance, sched: &Schedule, cfg: &RunConfig) -> Result<Vec<RunRecord>> {
    let lambda = uniform_bound(&problem.map);
    if sched.contraction_margin(lambda) > 0.5 + 1e-12 {
        return Err(Error::InvalidParameter {
            name: "a",
            reason: format!(
                "step sizes violate the contraction bound: mu_0 * Lambda = {} > 1/2",
                sched.contraction_margin(lambda)
            ),
        });
    }
    let mut checkpoints = cfg.checkpoints.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    if let Some(&last) = checkpoints.last() {
        if last > cfg.steps {
            return Err(Error::CheckpointBeyondRun {
                checkpoint: last,
                steps: cfg.steps,
            });
        }
    }
    if let ScheduleMode::FiniteHorizon { horizon, .. } = sched.mode() {
        if cfg.steps > *horizon {
            return Err(Error::HorizonExceeded {
                m: cfg.steps,
                horizon: *horizon,
            });
        }
        if !cfg.allow_fh_interior {
            if let Some(&cp) = checkpoints.iter().find(|&&cp| cp != cfg.steps) {
                return Err(Error::InteriorCheckpoint {
                    checkpoint: cp,
                    horizon: *horizon,
                });
            }
        }
    }

    let dim = problem.eig.dim();
    let target = problem.target.coeffs()?;
    let lambdas = problem.eig.lambdas();
    let sq_err = |coeffs: &[f64]| -> f64 {
        let e: Vec<f64> = target.iter().zip(coeffs).map(|(t, u)| t - u).collect();
        let v = FeatureSpaceVector::spectral(e);
        // target and eig share the dimension by ProblemInstance's contract
        let n = smoothness_norm(&problem.eig, &v, cfg.sbar).expect("spectral error vector");
        n * n
    };
    debug_assert_eq!(lambdas.len(), dim);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(checkpoints.len());
    let mut next_cp = checkpoints.iter().copied().peekable();

    let fast_spectral =
        !sched.averaging() && matches!(problem.map, FeatureMap::SpectralDiscrete { .. });

    if !fast_spectral {
        let mut state = IterateState::new(
            FeatureSpaceVector::zero_spectral(dim),
            sched.averaging(),
        );
        if next_cp.peek() == Some(&0) {
            records.push(RunRecord {
                m: 0,
                sq_error: sq_err(state.reported().coeffs()?),
            });
            next_cp.next();
        }
        for m in 0..cfg.steps {
            let sample = draw_sample(problem, &mut rng)?;
            online_step(&mut state, &sample, &problem.map, sched)?;
            if next_cp.peek() == Some(&(m + 1)) {
                records.push(RunRecord {
                    m: m + 1,
                    sq_error: sq_err(state.reported().coeffs()?),
                });
                next_cp.next();
            }
        }
        return Ok(records);
    }

    // Coefficient-sampling fast path: u = scale * w, so the uniform
    // shrinkage costs O(1) per step and only the sampled coordinate is
    // touched. Same iteration up to reassociation; materialized at
    // checkpoints.
    let mut scale = 1.0f64;
    let mut w = vec![0.0f64; dim];
    let mut materialized = vec![0.0f64; dim];
    if next_cp.peek() == Some(&0) {
        records.push(RunRecord {
            m: 0,
            sq_error: sq_err(&materialized),
        });
        next_cp.next();
    }
    for m in 0..cfg.steps {
        let sample = draw_sample(problem, &mut rng)?;
        check_sample(&problem.map, &sample)?;
        let (alpha, mu) = sched.params(m)?;
        let SamplePoint::Index(i) = sample.omega else {
            return Err(Error::OutOfDomain(
                "coefficient-sampling problems draw index points".into(),
            ));
        };
        let y = sample.y.scalar_value()?;
        let resid = y - scale * w[i];
        w[i] += mu * resid / scale;
        scale *= alpha;
        if next_cp.peek() == Some(&(m + 1)) {
            for (mk, wk) in materialized.iter_mut().zip(&w) {
                *mk = scale * wk;
            }
            records.push(RunRecord {
                m: m + 1,
                sq_error: sq_err(&materialized),
            });
            next_cp.next();
        }
    }
    Ok(records)
}
