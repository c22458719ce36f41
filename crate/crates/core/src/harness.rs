//! Problem generators, sampling, Monte-Carlo estimation, certified error
//! bounds and rate fitting.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{
    eval_feature_adjoint, smoothness_norm, uniform_bound, Eigensystem, FeatureMap,
    FeatureSpaceVector, NystromBasis, SamplePoint, ScalarKernel, SpdMatrix, YVector,
};
use crate::numeric::pairwise_sum_by;
use crate::online::{run, RunConfig, Sample, Schedule};
use crate::oracle::ConsProblemSpec;

/// Additive output noise, applied independently per output coordinate.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseModel {
    None,
    Gaussian { sigma: f64 },
    UniformBounded { halfwidth: f64 },
}

impl NoiseModel {
    /// Per-coordinate variance.
    pub fn variance(&self) -> f64 {
        match self {
            Self::None => 0.0,
            Self::Gaussian { sigma } => sigma * sigma,
            Self::UniformBounded { halfwidth } => halfwidth * halfwidth / 3.0,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Self::None => 0.0,
            Self::Gaussian { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                z * sigma
            }
            Self::UniformBounded { halfwidth } => rng.random_range(-halfwidth..=*halfwidth),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::None => true,
            Self::Gaussian { sigma } => sigma.is_finite() && *sigma >= 0.0,
            Self::UniformBounded { halfwidth } => halfwidth.is_finite() && *halfwidth >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "noise",
                reason: "noise scale must be finite and non-negative".into(),
            })
        }
    }
}

/// The sampling law of the input point.
#[derive(Clone, Debug)]
pub enum Sampling {
    /// Indices drawn with the given probability weights.
    DiscreteIndex { weights: Vec<f64> },
    /// The uniform law on [0, 1], discretized to the midpoint grid that
    /// also discretizes the covariance operator. Keeping the two grids
    /// identical makes the computed eigensystem exact for the sampled
    /// problem rather than a quadrature approximation of it.
    UniformInterval { nodes: usize },
}

/// A fully specified synthetic learning task: feature map, covariance
/// spectrum, target, noise and sampling law.
#[derive(Debug)]
pub struct ProblemInstance {
    pub map: FeatureMap,
    pub eig: Eigensystem,
    /// Spectral coefficients of the target.
    pub target: FeatureSpaceVector,
    pub noise: NoiseModel,
    pub sampling: Sampling,
    index_dist: Option<WeightedIndex<f64>>,
}

impl ProblemInstance {
    pub fn new(
        map: FeatureMap,
        eig: Eigensystem,
        target: FeatureSpaceVector,
        noise: NoiseModel,
        sampling: Sampling,
    ) -> Result<Self> {
        noise.validate()?;
        let coeffs = target.coeffs()?;
        if coeffs.len() != eig.dim() {
            return Err(Error::DimensionMismatch {
                expected: eig.dim(),
                found: coeffs.len(),
            });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidProblem("non-finite target coefficient".into()));
        }
        match map.spectral_dim() {
            Some(d) if d == eig.dim() => {}
            Some(d) => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: eig.dim(),
                })
            }
            None => return Err(Error::MissingSpectralBasis),
        }
        let index_dist = match (&sampling, &map) {
            (Sampling::DiscreteIndex { weights }, FeatureMap::SpectralDiscrete { .. }) => {
                if weights.len() != eig.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: eig.dim(),
                        found: weights.len(),
                    });
                }
                // The sampling law and the covariance spectrum are one and
                // the same object in the coefficient-sampling case.
                if weights
                    .iter()
                    .zip(eig.lambdas())
                    .any(|(w, l)| (w - l).abs() > 1e-15 * l.abs())
                {
                    return Err(Error::InvalidProblem(
                        "sampling weights must equal the covariance eigenvalues".into(),
                    ));
                }
                let total = pairwise_sum_by(weights.len(), |i| weights[i]);
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidProblem(format!(
                        "sampling weights must sum to 1, got {total}"
                    )));
                }
                Some(WeightedIndex::new(weights.iter().cloned()).map_err(|e| {
                    Error::InvalidProblem(format!("invalid sampling weights: {e}"))
                })?)
            }
            (Sampling::DiscreteIndex { .. }, _) => {
                return Err(Error::InvalidProblem(
                    "index sampling requires the discrete feature map".into(),
                ))
            }
            (Sampling::UniformInterval { nodes }, m) => {
                if matches!(m, FeatureMap::SpectralDiscrete { .. }) {
                    return Err(Error::InvalidProblem(
                        "interval sampling requires a kernel feature map".into(),
                    ));
                }
                if *nodes == 0 {
                    return Err(Error::InvalidProblem("sampling grid is empty".into()));
                }
                None
            }
        };
        Ok(Self {
            map,
            eig,
            target,
            noise,
            sampling,
            index_dist,
        })
    }

    /// A coefficient-sampling problem assembled from its parts. The
    /// sampling weights double as the covariance eigenvalues.
    pub fn cons(weights: Vec<f64>, target: Vec<f64>, noise: NoiseModel) -> Result<Self> {
        let dim = weights.len();
        let eig = Eigensystem::new(weights.clone(), 1.0)?;
        Self::new(
            FeatureMap::spectral_discrete(dim),
            eig,
            FeatureSpaceVector::spectral(target),
            noise,
            Sampling::DiscreteIndex { weights },
        )
    }

    pub fn target_coeffs(&self) -> &[f64] {
        self.target.coeffs().expect("target is spectral by construction")
    }

    pub fn lambda_bound(&self) -> f64 {
        uniform_bound(&self.map)
    }

    /// The oracle view of a coefficient-sampling problem.
    pub fn oracle_spec(&self) -> Result<ConsProblemSpec> {
        match &self.sampling {
            Sampling::DiscreteIndex { weights } => ConsProblemSpec::new(
                weights.clone(),
                0.0,
                self.target_coeffs().to_vec(),
                match &self.noise {
                    NoiseModel::None => 0.0,
                    NoiseModel::Gaussian { sigma } => *sigma,
                    NoiseModel::UniformBounded { halfwidth } => {
                        (halfwidth * halfwidth / 3.0).sqrt()
                    }
                },
            ),
            Sampling::UniformInterval { .. } => Err(Error::InvalidProblem(
                "exact moment recursions exist only for index sampling".into(),
            )),
        }
    }
}

/// Exponent of the near-boundary target profile: coefficients decay as
/// `lambda_k^{s/2} k^{-TARGET_TAIL_EXPONENT}`, placing the target in the
/// index-s smoothness class with essentially no room to spare.
const TARGET_TAIL_EXPONENT: f64 = 0.51;

/// Unit index-s-norm target whose coefficients sit at the boundary of the
/// smoothness class: `c_k ~ lambda_k^{s/2} k^{-0.51}`, normalized.
pub fn boundary_target(lambdas: &[f64], s: f64) -> Vec<f64> {
    let mut c: Vec<f64> = lambdas
        .iter()
        .enumerate()
        .map(|(k, l)| l.powf(s / 2.0) * ((k + 1) as f64).powf(-TARGET_TAIL_EXPONENT))
        .collect();
    let norm_sq = pairwise_sum_by(c.len(), |k| lambdas[k].powf(-s) * c[k] * c[k]);
    let z = norm_sq.sqrt();
    for x in &mut c {
        *x /= z;
    }
    c
}

/// Coefficient-sampling problem with polynomially decaying weights
/// `rho_i ~ i^{-p}` normalized over `n` retained indices, and a target of
/// unit index-s norm sitting at the boundary of that smoothness class.
/// The seed randomizes the coefficient signs.
pub fn make_cons_problem(
    rho_decay: f64,
    n: usize,
    s: f64,
    seed: u64,
    sigma: f64,
) -> Result<ProblemInstance> {
    if !(rho_decay > 1.0) {
        return Err(Error::InvalidParameter {
            name: "rho_decay",
            reason: format!("weights i^(-p) are normalizable only for p > 1, got {rho_decay}"),
        });
    }
    if n < 2 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "need at least two retained modes".into(),
        });
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "sigma",
            reason: "noise deviation must be non-negative".into(),
        });
    }
    let raw: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-rho_decay)).collect();
    let z = pairwise_sum_by(n, |i| raw[i]);
    let rho: Vec<f64> = raw.iter().map(|r| r / z).collect();
    let mut c = boundary_target(&rho, s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in &mut c {
        if rng.random::<bool>() {
            *x = -*x;
        }
    }
    let noise = if sigma == 0.0 {
        NoiseModel::None
    } else {
        NoiseModel::Gaussian { sigma }
    };
    ProblemInstance::cons(rho, c, noise)
}

/// Brownian-bridge problem (scalar for `d = 1`, multiplicative for
/// `d > 1`) with the numerically computed eigensystem and a unit
/// index-s-norm boundary target. `t` defaults to the identity.
pub fn make_bridge_problem(
    n_quad: usize,
    s: f64,
    sigma: f64,
    d: usize,
    t: Option<SpdMatrix>,
) -> Result<ProblemInstance> {
    if n_quad < 100 {
        return Err(Error::InvalidParameter {
            name: "n_quad",
            reason: format!("quadrature needs at least 100 nodes, got {n_quad}"),
        });
    }
    if d == 0 {
        return Err(Error::InvalidParameter {
            name: "d",
            reason: "output dimension must be at least 1".into(),
        });
    }
    let t = match t {
        Some(t) if t.dim() != d => {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: t.dim(),
            })
        }
        Some(t) => t,
        None => SpdMatrix::identity(d),
    };
    let basis = NystromBasis::shared(ScalarKernel::BrownianBridge, n_quad)?;

    let identity_t = d == 1 && (t.matrix()[(0, 0)] - 1.0).abs() == 0.0;
    let (map, lambdas) = if identity_t {
        let lambdas = basis.lambdas().to_vec();
        (FeatureMap::brownian_bridge_with_basis(basis), lambdas)
    } else {
        let map = FeatureMap::multiplicative_with_basis(ScalarKernel::BrownianBridge, t, basis)?;
        let lambdas = match &map {
            FeatureMap::MultiplicativeVector(m) => m.spectral_lambdas()?,
            _ => unreachable!(),
        };
        (map, lambdas)
    };
    let eig = Eigensystem::new(lambdas.clone(), uniform_bound(&map))?;
    let c = boundary_target(&lambdas, s);
    let noise = if sigma == 0.0 {
        NoiseModel::None
    } else {
        NoiseModel::Gaussian { sigma }
    };
    ProblemInstance::new(
        map,
        eig,
        FeatureSpaceVector::spectral(c),
        noise,
        Sampling::UniformInterval { nodes: n_quad },
    )
}

/// Draw one i.i.d. sample `(w, y)` with `y = f_u(w) + noise`.
pub fn draw_sample(problem: &ProblemInstance, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let omega = match &problem.sampling {
        Sampling::DiscreteIndex { .. } => {
            let dist = problem
                .index_dist
                .as_ref()
                .expect("index distribution built at construction");
            SamplePoint::Index(dist.sample(rng))
        }
        Sampling::UniformInterval { nodes } => {
            let j = rng.random_range(0..*nodes);
            let w = match &problem.map {
                FeatureMap::BrownianBridge { basis: Some(b) } => b.nodes()[j],
                FeatureMap::MultiplicativeVector(m) => {
                    m.basis().expect("bridge problems carry a basis").nodes()[j]
                }
                _ => (j as f64 + 0.5) / *nodes as f64,
            };
            SamplePoint::Real(w)
        }
    };
    let clean = eval_feature_adjoint(&problem.map, omega, &problem.target)?;
    let y: Vec<f64> = clean
        .as_slice()
        .iter()
        .map(|f| f + problem.noise.draw(rng))
        .collect();
    Ok(Sample {
        omega,
        y: YVector::new(y),
    })
}

/// The noise variance of the learning task. The implemented problems put
/// the regression function inside the hypothesis space, so this is the
/// output noise energy: per-coordinate variance times the output dimension
/// for isotropic noise.
pub fn noise_variance(problem: &ProblemInstance) -> f64 {
    problem.noise.variance() * problem.map.output_dim() as f64
}

/// Squared norms entering the error bounds:
/// `(|u - u0|^2, |u|^2, |u|_{V^s}^2)`.
pub fn target_norms(
    problem: &ProblemInstance,
    u0: &FeatureSpaceVector,
    s: f64,
) -> Result<(f64, f64, f64)> {
    let target = problem.target_coeffs();
    let u0c = u0.coeffs()?;
    if u0c.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            found: u0c.len(),
        });
    }
    let e0: Vec<f64> = target.iter().zip(u0c).map(|(t, u)| t - u).collect();
    let e0_sq = pairwise_sum_by(e0.len(), |i| e0[i] * e0[i]);
    let u_sq = pairwise_sum_by(target.len(), |i| target[i] * target[i]);
    let u_s = smoothness_norm(&problem.eig, &problem.target, s)?;
    Ok((e0_sq, u_sq, u_s * u_s))
}

/// The certified constant
/// `C^2 = 2|u - u0|^2 + 2|u|^2 + 8 Lambda^s |u|_{V^s}^2 + sigma_H^2 / Lambda`.
pub fn theorem1_constant(
    problem: &ProblemInstance,
    u0: &FeatureSpaceVector,
    s: f64,
) -> Result<f64> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "s",
            reason: format!("smoothness must lie in (0, 1], got {s}"),
        });
    }
    let (e0_sq, u_sq, u_vs_sq) = target_norms(problem, u0, s)?;
    let lambda = problem.lambda_bound();
    Ok(2.0 * e0_sq + 2.0 * u_sq + 8.0 * lambda.powf(s) * u_vs_sq + noise_variance(problem) / lambda)
}

/// The envelope `C^2 (m+1)^{-s/(2+s)}`, certified for `m >= 1`.
pub fn theorem1_bound(c2: f64, s: f64, m: usize) -> f64 {
    c2 * (m as f64 + 1.0).powf(-s / (2.0 + s))
}

/// Four-term bound for unit smoothness and arbitrary decay parameters
/// `1/2 < t < 1`, `0 < A <= 1/(2 Lambda)`:
///
/// ```text
/// |e0|^2/(m+1)^2 + 2 A^2 Lambda sigma_H^2/(m+1)^{2t-1}
///   + |u|^2/(m+1) + A^{-1} |u|_{V^1}^2/(m+1)^{1-t}
/// ```
#[allow(clippy::too_many_arguments)]
pub fn s1_bound_general(
    e0_sq: f64,
    u_sq: f64,
    u_v1_sq: f64,
    sigma_h_sq: f64,
    lambda: f64,
    t: f64,
    a: f64,
    m: usize,
) -> f64 {
    let _ = lambda;
    let mp = m as f64 + 1.0;
    e0_sq / (mp * mp)
        + 2.0 * a * a * lambda * sigma_h_sq / mp.powf(2.0 * t - 1.0)
        + u_sq / mp
        + u_v1_sq / (a * mp.powf(1.0 - t))
}

/// The four-term bound specialized to `t = 2/3`, `A = 1/(2 Lambda)`:
///
/// ```text
/// |e0|^2/(m+1)^2 + |u|^2/(m+1)
///   + (2 Lambda |u|_{V^1}^2 + sigma_H^2/(2 Lambda)) / (m+1)^{1/3}
/// ```
pub fn refined_s1_bound(
    e0_sq: f64,
    u_sq: f64,
    u_v1_sq: f64,
    sigma_h_sq: f64,
    lambda: f64,
    m: usize,
) -> f64 {
    let mp = m as f64 + 1.0;
    e0_sq / (mp * mp)
        + u_sq / mp
        + (2.0 * lambda * u_v1_sq + sigma_h_sq / (2.0 * lambda)) / mp.powf(1.0 / 3.0)
}

/// Final-iterate bound for the constant-step horizon-`n` run:
///
/// ```text
/// |e0|^2/(N+1)^2 + 2 Lambda sigma_H^2 mu^2 (N+1)
///   + (|u|^2 + mu^{-1} |u|_{V^1}^2)/(N+1)
/// ```
pub fn finite_horizon_bound(
    e0_sq: f64,
    u_sq: f64,
    u_v1_sq: f64,
    sigma_h_sq: f64,
    lambda: f64,
    mu: f64,
    n: usize,
) -> f64 {
    let np = n as f64 + 1.0;
    e0_sq / (np * np) + 2.0 * lambda * sigma_h_sq * mu * mu * np + (u_sq + u_v1_sq / mu) / np
}

/// Per-checkpoint Monte-Carlo statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckpointStat {
    pub m: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Monte-Carlo estimate of the expected squared error curve over
/// independent runs seeded `base_seed, base_seed + 1, ...`. Trials are
/// evaluated in parallel but aggregated in trial order, so the output is
/// deterministic in `(base_seed, trials)` regardless of thread count.
pub fn monte_carlo_error(
    problem: &ProblemInstance,
    sched: &Schedule,
    steps: usize,
    trials: usize,
    base_seed: u64,
    checkpoints: &[usize],
    sbar: f64,
) -> Result<Vec<CheckpointStat>> {
    if trials < 2 {
        return Err(Error::InvalidParameter {
            name: "trials",
            reason: "standard errors need at least two trials".into(),
        });
    }
    let trial_records: Result<Vec<_>> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let cfg = RunConfig::new(
                steps,
                checkpoints.to_vec(),
                base_seed.wrapping_add(trial),
                sbar,
            );
            let records = run(problem, sched, &cfg)?;
            for r in &records {
                if !r.sq_error.is_finite() {
                    return Err(Error::NonFiniteStatistic { trial, m: r.m });
                }
            }
            Ok(records)
        })
        .collect();
    let trial_records = trial_records?;

    let n_cp = trial_records[0].len();
    let tf = trials as f64;
    let mut out = Vec::with_capacity(n_cp);
    for (k, rec0) in trial_records[0].iter().enumerate() {
        let m = rec0.m;
        let mean = pairwise_sum_by(trials, |t| trial_records[t][k].sq_error) / tf;
        let var = pairwise_sum_by(trials, |t| {
            let d = trial_records[t][k].sq_error - mean;
            d * d
        }) / (tf - 1.0);
        out.push(CheckpointStat {
            m,
            mean,
            stderr: (var / tf).sqrt(),
        });
    }
    Ok(out)
}

/// Result of a log-log least-squares fit.
#[derive(Clone, Copy, Debug)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub window: (usize, usize),
    /// Root-mean-square residual of the fit in log space.
    pub residual: f64,
}

/// Ordinary least squares of `log(value)` against `log(m + 1)` over the
/// records falling inside `window` (inclusive).
pub fn fit_rate(records: &[(usize, f64)], window: (usize, usize)) -> Result<RateFit> {
    let (lo, hi) = window;
    if lo >= hi {
        return Err(Error::RateFit(format!(
            "empty window [{lo}, {hi}]"
        )));
    }
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|(m, _)| (lo..=hi).contains(m))
        .map(|&(m, v)| {
            if v > 0.0 {
                Ok(((m as f64 + 1.0).ln(), v.ln()))
            } else {
                Err(Error::RateFit(format!(
                    "non-positive value {v} at m = {m}"
                )))
            }
        })
        .collect::<Result<_>>()?;
    if pts.len() < 4 {
        return Err(Error::RateFit(format!(
            "need at least 4 records in the window, found {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = pts.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mean_x) * (x - mean_x)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = pts
        .iter()
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    Ok(RateFit {
        slope,
        intercept,
        window,
        residual: (ss_res / n).sqrt(),
    })
}

/// Checkpoint grid `{1, 2, 4, ...} ∪ {n}`: log-uniform coverage for rate
/// fitting plus the final iterate.
pub fn geometric_checkpoints(n: usize) -> Vec<usize> {
    if n == 0 {
        return vec![0];
    }
    let mut cps = Vec::new();
    let mut m = 1usize;
    while m <= n {
        cps.push(m);
        match m.checked_mul(2) {
            Some(next) => m = next,
            None => break,
        }
    }
    if *cps.last().unwrap() != n {
        cps.push(n);
    }
    cps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::online::theorem1_schedule;
    use crate::oracle::{cons_moment_step, weighted_error, MomentState};

    #[test]
    fn cons_problem_is_normalized_and_matched() {
        let p = make_cons_problem(2.0, 100, 1.0, 7, 0.5).unwrap();
        let (_, _, u_vs_sq) = target_norms(&p, &FeatureSpaceVector::zero_spectral(100), 1.0).unwrap();
        assert!((u_vs_sq - 1.0).abs() < 1e-12, "unit smoothness norm");
        // lambda_i = rho_i exactly
        match &p.sampling {
            Sampling::DiscreteIndex { weights } => {
                assert_eq!(weights.as_slice(), p.eig.lambdas());
            }
            _ => panic!("cons problems sample indices"),
        }
        assert_eq!(noise_variance(&p), 0.25);

        let p0 = make_cons_problem(2.0, 100, 1.0, 7, 0.0).unwrap();
        assert_eq!(noise_variance(&p0), 0.0);
    }

    #[test]
    fn cons_problem_rejects_flat_decay() {
        assert!(make_cons_problem(1.0, 10, 1.0, 0, 0.0).is_err());
        assert!(make_cons_problem(0.5, 10, 1.0, 0, 0.0).is_err());
    }

    #[test]
    fn seed_changes_signs_not_magnitudes() {
        let a = make_cons_problem(2.0, 50, 1.0, 1, 0.0).unwrap();
        let b = make_cons_problem(2.0, 50, 1.0, 2, 0.0).unwrap();
        let ca = a.target_coeffs();
        let cb = b.target_coeffs();
        assert!(ca.iter().zip(cb).all(|(x, y)| (x.abs() - y.abs()).abs() < 1e-18));
        assert!(ca.iter().zip(cb).any(|(x, y)| x != y));
    }

    #[test]
    fn draw_sample_is_noiseless_exact_when_no_noise() {
        let p = make_cons_problem(2.0, 30, 1.0, 3, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let s = draw_sample(&p, &mut rng).unwrap();
            let SamplePoint::Index(i) = s.omega else {
                panic!()
            };
            assert_eq!(s.y.scalar_value().unwrap(), p.target_coeffs()[i]);
        }
    }

    #[test]
    fn empirical_index_frequencies_match_weights() {
        let p = make_cons_problem(2.0, 50, 1.0, 3, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 100_000usize;
        let mut counts = vec![0usize; 50];
        for _ in 0..draws {
            let s = draw_sample(&p, &mut rng).unwrap();
            let SamplePoint::Index(i) = s.omega else {
                panic!()
            };
            counts[i] += 1;
        }
        let rho = p.eig.lambdas();
        for i in 0..10 {
            let freq = counts[i] as f64 / draws as f64;
            let tol = 3.0 * (rho[i] * (1.0 - rho[i]) / draws as f64).sqrt();
            assert!(
                (freq - rho[i]).abs() <= tol,
                "index {i}: freq {freq} vs weight {} (tol {tol})",
                rho[i]
            );
        }
    }

    #[test]
    fn empirical_noise_mean_is_centered() {
        let sigma = 0.7;
        let p = make_cons_problem(2.0, 10, 1.0, 3, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000usize;
        let mut acc = 0.0;
        for _ in 0..draws {
            let s = draw_sample(&p, &mut rng).unwrap();
            let SamplePoint::Index(i) = s.omega else {
                panic!()
            };
            acc += s.y.scalar_value().unwrap() - p.target_coeffs()[i];
        }
        let mean = acc / draws as f64;
        assert!(mean.abs() <= 3.0 * sigma / (draws as f64).sqrt());
    }

    #[test]
    fn noise_variance_models() {
        assert_eq!(NoiseModel::None.variance(), 0.0);
        assert_eq!(NoiseModel::Gaussian { sigma: 0.5 }.variance(), 0.25);
        let u = NoiseModel::UniformBounded { halfwidth: 1.0 };
        assert!((u.variance() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn theorem1_constant_plugin_arithmetic() {
        // |u|^2 = 1, Lambda = 1, s = 1, |u|_{V^1}^2 = 2, sigma_H^2 = 0.25,
        // u0 = 0: C^2 = 2 + 2 + 16 + 0.25.
        let weights = vec![0.5, 0.5];
        let c = vec![2f64.sqrt() * 0.5, 2f64.sqrt() * 0.5]; // |u|^2 = 1, V^1 norm^2 = 2
        let p = ProblemInstance::cons(weights, c, NoiseModel::Gaussian { sigma: 0.5 }).unwrap();
        let c2 = theorem1_constant(&p, &FeatureSpaceVector::zero_spectral(2), 1.0).unwrap();
        assert!((c2 - 20.25).abs() < 1e-12, "got {c2}");
    }

    #[test]
    fn theorem1_constant_vanishes_in_degenerate_case() {
        let p = ProblemInstance::cons(vec![0.6, 0.4], vec![0.0, 0.0], NoiseModel::None).unwrap();
        let c2 = theorem1_constant(&p, &FeatureSpaceVector::zero_spectral(2), 1.0).unwrap();
        assert_eq!(c2, 0.0);
    }

    #[test]
    fn theorem1_bound_values() {
        assert!((theorem1_bound(20.25, 1.0, 7) - 10.125).abs() < 1e-12);
        assert!(theorem1_bound(20.25, 1.0, usize::MAX / 2) < 1e-4);
    }

    #[test]
    fn refined_bound_matches_general_bound_at_optimum() {
        // t = 2/3 and A = 1/(2 Lambda) collapse the general form.
        let (e0, u, uv1, s2, lam) = (0.8, 0.6, 1.3, 0.09, 0.25);
        for m in [1usize, 10, 1000] {
            let a = 1.0 / (2.0 * lam);
            let g = s1_bound_general(e0, u, uv1, s2, lam, 2.0 / 3.0, a, m);
            let r = refined_s1_bound(e0, u, uv1, s2, lam, m);
            assert!((g - r).abs() <= 1e-12 * r, "m={m}: {g} vs {r}");
        }
    }

    #[test]
    fn monte_carlo_agrees_with_oracle_small_problem() {
        let p = make_cons_problem(2.0, 12, 1.0, 11, 0.4).unwrap();
        let sched = theorem1_schedule(1.0, 1.0).unwrap();
        let cps = vec![1, 4, 16, 64, 128];
        let stats = monte_carlo_error(&p, &sched, 128, 500, 500, &cps, 0.0).unwrap();

        let spec = p.oracle_spec().unwrap();
        let mut state = MomentState::initial(&spec);
        let mut oracle = Vec::new();
        for m in 1..=128usize {
            cons_moment_step(&spec, &mut state, &sched).unwrap();
            if cps.contains(&m) {
                oracle.push(weighted_error(&spec, &state, 0.0));
            }
        }
        for (stat, o) in stats.iter().zip(&oracle) {
            assert!(
                (stat.mean - o).abs() <= 4.0 * stat.stderr,
                "m={}: mc {} vs oracle {} (stderr {})",
                stat.m,
                stat.mean,
                o,
                stat.stderr
            );
        }
    }

    #[test]
    fn monte_carlo_zero_stderr_for_deterministic_dynamics() {
        // Single atom, no noise: every trial follows the same path.
        let p = ProblemInstance::cons(vec![1.0], vec![1.0], NoiseModel::None).unwrap();
        let sched = theorem1_schedule(1.0, 1.0).unwrap();
        let stats = monte_carlo_error(&p, &sched, 16, 2, 0, &[16], 0.0).unwrap();
        assert_eq!(stats[0].stderr, 0.0);
    }

    #[test]
    fn monte_carlo_is_deterministic_in_base_seed() {
        let p = make_cons_problem(2.0, 8, 0.5, 2, 0.3).unwrap();
        let sched = theorem1_schedule(0.5, 1.0).unwrap();
        let a = monte_carlo_error(&p, &sched, 64, 8, 7, &[1, 64], 0.0).unwrap();
        let b = monte_carlo_error(&p, &sched, 64, 8, 7, &[1, 64], 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn doubling_trials_shrinks_stderr_like_root_two() {
        let p = make_cons_problem(2.0, 16, 1.0, 4, 0.5).unwrap();
        let sched = theorem1_schedule(1.0, 1.0).unwrap();
        let a = monte_carlo_error(&p, &sched, 256, 600, 90, &[256], 0.0).unwrap();
        let b = monte_carlo_error(&p, &sched, 256, 1200, 90, &[256], 0.0).unwrap();
        let ratio = b[0].stderr / a[0].stderr * 2f64.sqrt();
        assert!(
            (ratio - 1.0).abs() <= 0.3,
            "stderr scaling off: sqrt(2) * se_2T / se_T = {ratio}"
        );
    }

    #[test]
    fn general_s1_bound_dominates_off_optimal_schedule() {
        // A non-optimal decay exponent still sits under the four-term
        // bound evaluated at its own (t, A).
        let p = make_cons_problem(2.0, 50, 1.0, 8, 0.3).unwrap();
        let (t, a) = (0.8, 0.3);
        let sched = Schedule::regularized(t, a).unwrap();
        let cps = geometric_checkpoints(1000);
        let stats = monte_carlo_error(&p, &sched, 1000, 200, 71, &cps, 0.0).unwrap();
        let u0 = FeatureSpaceVector::zero_spectral(50);
        let (e0_sq, u_sq, u_v1_sq) = target_norms(&p, &u0, 1.0).unwrap();
        let s2 = noise_variance(&p);
        for st in stats.iter().filter(|st| st.m >= 1) {
            let bound = s1_bound_general(e0_sq, u_sq, u_v1_sq, s2, 1.0, t, a, st.m);
            assert!(
                st.mean - 4.0 * st.stderr <= bound,
                "m={}: {} vs bound {}",
                st.m,
                st.mean,
                bound
            );
        }
    }

    #[test]
    fn isotropic_noise_variance_scales_with_output_dim() {
        // Two output dimensions with unit-halfwidth uniform noise: 2 * 1/3.
        let t = SpdMatrix::identity(2);
        let base = make_bridge_problem(128, 1.0, 0.0, 2, Some(t)).unwrap();
        let p = ProblemInstance::new(
            base.map.clone(),
            base.eig.clone(),
            base.target.clone(),
            NoiseModel::UniformBounded { halfwidth: 1.0 },
            base.sampling.clone(),
        )
        .unwrap();
        assert!((noise_variance(&p) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn theorem1_constant_monotone_in_each_input() {
        let weights = vec![0.6, 0.4];
        let mk = |c: Vec<f64>, sigma: f64| {
            let noise = if sigma == 0.0 {
                NoiseModel::None
            } else {
                NoiseModel::Gaussian { sigma }
            };
            ProblemInstance::cons(weights.clone(), c, noise).unwrap()
        };
        let u0 = FeatureSpaceVector::zero_spectral(2);
        let base = theorem1_constant(&mk(vec![0.3, 0.1], 0.2), &u0, 1.0).unwrap();
        let bigger_target = theorem1_constant(&mk(vec![0.6, 0.2], 0.2), &u0, 1.0).unwrap();
        let more_noise = theorem1_constant(&mk(vec![0.3, 0.1], 0.4), &u0, 1.0).unwrap();
        let farther_start =
            theorem1_constant(&mk(vec![0.3, 0.1], 0.2), &FeatureSpaceVector::spectral(vec![-1.0, 0.0]), 1.0)
                .unwrap();
        assert!(bigger_target > base);
        assert!(more_noise > base);
        assert!(farther_start > base);
    }

    #[test]
    fn fit_rate_recovers_exact_power_law() {
        let records: Vec<(usize, f64)> = geometric_checkpoints(10_000)
            .into_iter()
            .map(|m| (m, (m as f64 + 1.0).powf(-1.0 / 3.0)))
            .collect();
        let fit = fit_rate(&records, (1, 10_000)).unwrap();
        assert!((fit.slope + 1.0 / 3.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);

        let flat: Vec<(usize, f64)> = (1..=8).map(|m| (m, 2.5)).collect();
        let fit = fit_rate(&flat, (1, 8)).unwrap();
        assert!(fit.slope.abs() < 1e-12);
    }

    #[test]
    fn fit_rate_error_paths() {
        let records = [(1usize, 1.0), (2, 0.5), (4, 0.25), (8, 0.125)];
        assert!(fit_rate(&records[..3], (1, 4)).is_err()); // too few
        let with_zero = vec![(1usize, 1.0), (2, 0.0), (4, 0.25), (8, 0.125)];
        assert!(fit_rate(&with_zero, (1, 8)).is_err());
    }

    #[test]
    fn geometric_checkpoints_cover_and_terminate() {
        assert_eq!(geometric_checkpoints(0), vec![0]);
        assert_eq!(geometric_checkpoints(1), vec![1]);
        assert_eq!(geometric_checkpoints(10), vec![1, 2, 4, 8, 10]);
        assert_eq!(geometric_checkpoints(16), vec![1, 2, 4, 8, 16]);
    }

    #[test]
    fn bridge_problem_reports_composed_bound() {
        let t = SpdMatrix::new(nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]))
            .unwrap();
        let p = make_bridge_problem(128, 1.0, 0.0, 2, Some(t)).unwrap();
        assert_eq!(p.lambda_bound(), 0.5);
        // d = 1 with identity reduces to the scalar kernel map.
        let p1 = make_bridge_problem(128, 1.0, 0.0, 1, None).unwrap();
        assert!(matches!(p1.map, FeatureMap::BrownianBridge { .. }));
        assert_eq!(p1.lambda_bound(), 0.25);
    }

    #[test]
    fn bridge_problem_top_eigenvalue_near_analytic_value() {
        let p = make_bridge_problem(400, 1.0, 0.0, 1, None).unwrap();
        let lam1 = p.eig.lambdas()[0];
        let exact = 1.0 / (std::f64::consts::PI * std::f64::consts::PI);
        assert!((lam1 - exact).abs() / exact < 0.01);
    }

    #[test]
    fn bridge_problem_rejects_bad_inputs() {
        assert!(make_bridge_problem(50, 1.0, 0.0, 1, None).is_err()); // too coarse
        let t = SpdMatrix::identity(3);
        assert!(make_bridge_problem(128, 1.0, 0.0, 2, Some(t)).is_err()); // dim mismatch
    }

    #[test]
    fn uniform_bounded_noise_has_matching_variance() {
        let p = ProblemInstance::cons(
            vec![0.7, 0.3],
            vec![0.1, 0.1],
            NoiseModel::UniformBounded { halfwidth: 1.0 },
        )
        .unwrap();
        assert!((noise_variance(&p) - 1.0 / 3.0).abs() < 1e-15);
        // Empirical second moment over many draws.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut acc = 0.0;
        let draws = 200_000;
        for _ in 0..draws {
            let s = draw_sample(&p, &mut rng).unwrap();
            let SamplePoint::Index(i) = s.omega else {
                panic!()
            };
            let e = s.y.scalar_value().unwrap() - p.target_coeffs()[i];
            acc += e * e;
        }
        let emp = acc / draws as f64;
        assert!((emp - 1.0 / 3.0).abs() < 0.01);
    }
}
