//! Feature-space primitives: feature maps, operator kernels, the covariance
//! spectrum and the smoothness-norm scale it generates.
//!
//! A feature map sends an output-space vector `y` to the feature space `V`;
//! its adjoint evaluates feature-space vectors as functions of the sample
//! point. Three map kinds are implemented:
//!
//! * `SpectralDiscrete` — the coefficient-sampling case on a truncated index
//!   set, where the map hits one coordinate of an orthonormal system;
//! * `BrownianBridge` — the scalar kernel `(1 - max(w,t)) * min(w,t)` on
//!   [0, 1];
//! * `MultiplicativeVector` — `K(w,t) = k(w,t) T` with a symmetric positive
//!   definite matrix `T` acting on a d-dimensional output space.

pub mod bridge;

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numeric::{pairwise_sum, pairwise_sum_by};

pub use bridge::NystromBasis;

/// A point of the sampling domain: an index for discrete maps, a real in
/// [0, 1] for kernel maps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SamplePoint {
    Index(usize),
    Real(f64),
}

/// Element of the output space Y.
#[derive(Clone, Debug, PartialEq)]
pub struct YVector(Vec<f64>);

impl YVector {
    pub fn new(entries: Vec<f64>) -> Self {
        Self(entries)
    }

    /// One-dimensional output, the scalar case.
    pub fn scalar(value: f64) -> Self {
        Self(vec![value])
    }

    pub fn zero(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// The single entry of a scalar output.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.0.len() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: self.0.len(),
            });
        }
        Ok(self.0[0])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Eigenvalues of the covariance operator, truncated to finitely many modes.
///
/// Defines the smoothness-norm scale: a spectral vector `v = (c_k)` has
/// `|v|_s^2 = sum_k lambda_k^{-s} c_k^2`.
#[derive(Clone, Debug)]
pub struct Eigensystem {
    lambdas: Vec<f64>,
    lambda_bound: f64,
}

impl Eigensystem {
    pub fn new(lambdas: Vec<f64>, lambda_bound: f64) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::InvalidParameter {
                name: "lambdas",
                reason: "at least one retained mode is required".into(),
            });
        }
        if lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidParameter {
                name: "lambdas",
                reason: "eigenvalues must be strictly positive".into(),
            });
        }
        if lambdas.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter {
                name: "lambdas",
                reason: "eigenvalues must be non-increasing".into(),
            });
        }
        if !(lambda_bound > 0.0) || lambdas[0] > lambda_bound {
            return Err(Error::InvalidParameter {
                name: "lambda_bound",
                reason: format!(
                    "uniform bound {lambda_bound} must be positive and dominate \
                     the top eigenvalue {}",
                    lambdas[0]
                ),
            });
        }
        Ok(Self {
            lambdas,
            lambda_bound,
        })
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn lambda_bound(&self) -> f64 {
        self.lambda_bound
    }
}

/// One term of a kernel expansion: the sample point it was planted at and
/// its output-space coefficient block.
#[derive(Clone, Debug)]
pub struct DualAnchor {
    pub omega: f64,
    pub coeff: YVector,
}

/// Element of the feature space V in one of two representations.
///
/// `Spectral` stores coefficients with respect to the covariance
/// eigensystem; `Dual` stores a kernel expansion with one anchor per
/// processed sample. Anchors are never pruned or merged.
#[derive(Clone, Debug)]
pub enum FeatureSpaceVector {
    Spectral { coeffs: Vec<f64> },
    Dual { anchors: Vec<DualAnchor> },
}

impl FeatureSpaceVector {
    pub fn spectral(coeffs: Vec<f64>) -> Self {
        Self::Spectral { coeffs }
    }

    pub fn zero_spectral(dim: usize) -> Self {
        Self::Spectral {
            coeffs: vec![0.0; dim],
        }
    }

    pub fn empty_dual() -> Self {
        Self::Dual {
            anchors: Vec::new(),
        }
    }

    pub fn coeffs(&self) -> Result<&[f64]> {
        match self {
            Self::Spectral { coeffs } => Ok(coeffs),
            Self::Dual { .. } => Err(Error::UnsupportedRepresentation {
                required: "spectral",
            }),
        }
    }

    pub fn coeffs_mut(&mut self) -> Result<&mut Vec<f64>> {
        match self {
            Self::Spectral { coeffs } => Ok(coeffs),
            Self::Dual { .. } => Err(Error::UnsupportedRepresentation {
                required: "spectral",
            }),
        }
    }

    pub fn anchors(&self) -> Result<&[DualAnchor]> {
        match self {
            Self::Dual { anchors } => Ok(anchors),
            Self::Spectral { .. } => Err(Error::UnsupportedRepresentation { required: "dual" }),
        }
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self, Self::Spectral { .. })
    }
}

/// Scalar kernels on [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScalarKernel {
    /// `k(w, t) = (1 - max(w, t)) * min(w, t)`, the kernel of the
    /// first-order Sobolev space with zero boundary values.
    BrownianBridge,
}

impl ScalarKernel {
    pub fn eval(self, omega: f64, theta: f64) -> f64 {
        match self {
            Self::BrownianBridge => {
                let (lo, hi) = if omega <= theta {
                    (omega, theta)
                } else {
                    (theta, omega)
                };
                (1.0 - hi) * lo
            }
        }
    }

    /// `sup_w k(w, w)`.
    pub fn sup_diagonal(self) -> f64 {
        match self {
            // w(1 - w) is maximal at w = 1/2.
            Self::BrownianBridge => 0.25,
        }
    }

    pub fn contains(self, omega: f64) -> bool {
        (0.0..=1.0).contains(&omega)
    }
}

/// A validated symmetric positive definite matrix with its eigensystem.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    mat: DMatrix<f64>,
    /// Descending eigenvalues.
    eigvals: Vec<f64>,
    /// Columns are unit eigenvectors, ordered like `eigvals`.
    eigvecs: DMatrix<f64>,
}

impl SpdMatrix {
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::InvalidParameter {
                name: "t",
                reason: "matrix must be square".into(),
            });
        }
        let d = mat.nrows();
        let scale = mat.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
        for i in 0..d {
            for j in 0..d {
                if (mat[(i, j)] - mat[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidParameter {
                        name: "t",
                        reason: "matrix must be symmetric".into(),
                    });
                }
            }
        }
        let eig = mat.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("finite eigenvalues")
        });
        if order.iter().any(|&i| !(eig.eigenvalues[i] > 0.0)) {
            return Err(Error::InvalidParameter {
                name: "t",
                reason: "matrix must be positive definite".into(),
            });
        }
        let eigvals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut eigvecs = DMatrix::zeros(d, d);
        for (k, &i) in order.iter().enumerate() {
            eigvecs.set_column(k, &eig.eigenvectors.column(i));
        }
        Ok(Self {
            mat,
            eigvals,
            eigvecs,
        })
    }

    /// Build from row-major data; rows must be square and SPD.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidParameter {
                name: "t",
                reason: "rows must all have the matrix dimension".into(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(d, d, &flat))
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mat: DMatrix::identity(d, d),
            eigvals: vec![1.0; d],
            eigvecs: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigvals
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigvals[0]
    }

    /// k-th unit eigenvector.
    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        self.eigvecs.column(k).iter().cloned().collect()
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVector::from_column_slice(y);
        (&self.mat * v).iter().cloned().collect()
    }
}

/// Multiplicative operator-kernel map `K(w, t) = k(w, t) T` on `Y = R^d`.
///
/// When a spectral basis for the scalar factor is attached, the covariance
/// eigensystem is the tensor product: eigenvalue `lambda_i * tau_j` with
/// eigenvector `psi_i (x) e_j`, flattened in descending eigenvalue order.
#[derive(Clone, Debug)]
pub struct MultiplicativeMap {
    scalar: ScalarKernel,
    t: SpdMatrix,
    basis: Option<Arc<NystromBasis>>,
    /// Flat mode -> (scalar mode, T mode), descending in `lambda_i * tau_j`.
    modes: Vec<(usize, usize)>,
}

impl MultiplicativeMap {
    pub fn new(scalar: ScalarKernel, t: SpdMatrix) -> Self {
        Self {
            scalar,
            t,
            basis: None,
            modes: Vec::new(),
        }
    }

    pub fn with_basis(scalar: ScalarKernel, t: SpdMatrix, basis: Arc<NystromBasis>) -> Result<Self> {
        if basis.kernel() != scalar {
            return Err(Error::InvalidProblem(
                "attached basis was computed for a different scalar kernel".into(),
            ));
        }
        let d = t.dim();
        let mut modes: Vec<(usize, usize)> = (0..basis.dim())
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .collect();
        let lam = basis.lambdas();
        let tau = t.eigenvalues();
        modes.sort_by(|&(ia, ja), &(ib, jb)| {
            let va = lam[ia] * tau[ja];
            let vb = lam[ib] * tau[jb];
            vb.partial_cmp(&va)
                .expect("finite eigenvalues")
                .then((ia, ja).cmp(&(ib, jb)))
        });
        Ok(Self {
            scalar,
            t,
            basis: Some(basis),
            modes,
        })
    }

    pub fn scalar(&self) -> ScalarKernel {
        self.scalar
    }

    pub fn t(&self) -> &SpdMatrix {
        &self.t
    }

    pub fn basis(&self) -> Option<&Arc<NystromBasis>> {
        self.basis.as_ref()
    }

    pub fn modes(&self) -> &[(usize, usize)] {
        &self.modes
    }

    /// Tensor eigenvalues in flat-mode order.
    pub fn spectral_lambdas(&self) -> Result<Vec<f64>> {
        let basis = self.basis.as_ref().ok_or(Error::MissingSpectralBasis)?;
        let lam = basis.lambdas();
        let tau = self.t.eigenvalues();
        Ok(self.modes.iter().map(|&(i, j)| lam[i] * tau[j]).collect())
    }
}

/// The feature map kinds.
#[derive(Clone, Debug)]
pub enum FeatureMap {
    /// Coefficient sampling against an orthonormal system, truncated to
    /// `dim` retained indices.
    SpectralDiscrete { dim: usize },
    /// Scalar Brownian-bridge kernel on [0, 1]; the optional basis enables
    /// the spectral representation.
    BrownianBridge { basis: Option<Arc<NystromBasis>> },
    MultiplicativeVector(MultiplicativeMap),
}

impl FeatureMap {
    pub fn spectral_discrete(dim: usize) -> Self {
        Self::SpectralDiscrete { dim }
    }

    pub fn brownian_bridge() -> Self {
        Self::BrownianBridge { basis: None }
    }

    pub fn brownian_bridge_with_basis(basis: Arc<NystromBasis>) -> Self {
        Self::BrownianBridge { basis: Some(basis) }
    }

    pub fn multiplicative(scalar: ScalarKernel, t: SpdMatrix) -> Self {
        Self::MultiplicativeVector(MultiplicativeMap::new(scalar, t))
    }

    pub fn multiplicative_with_basis(
        scalar: ScalarKernel,
        t: SpdMatrix,
        basis: Arc<NystromBasis>,
    ) -> Result<Self> {
        Ok(Self::MultiplicativeVector(MultiplicativeMap::with_basis(
            scalar, t, basis,
        )?))
    }

    /// Dimension of the output space Y.
    pub fn output_dim(&self) -> usize {
        match self {
            Self::SpectralDiscrete { .. } | Self::BrownianBridge { .. } => 1,
            Self::MultiplicativeVector(m) => m.t.dim(),
        }
    }

    /// Number of modes of the spectral representation, when available.
    pub fn spectral_dim(&self) -> Option<usize> {
        match self {
            Self::SpectralDiscrete { dim } => Some(*dim),
            Self::BrownianBridge { basis } => basis.as_ref().map(|b| b.dim()),
            Self::MultiplicativeVector(m) => m.basis.as_ref().map(|b| b.dim() * m.t.dim()),
        }
    }

    fn check_point(&self, omega: SamplePoint) -> Result<()> {
        match (self, omega) {
            (Self::SpectralDiscrete { dim }, SamplePoint::Index(i)) => {
                if i >= *dim {
                    Err(Error::OutOfDomain(format!(
                        "index {i} beyond the {dim} retained modes"
                    )))
                } else {
                    Ok(())
                }
            }
            (Self::SpectralDiscrete { .. }, SamplePoint::Real(w)) => Err(Error::OutOfDomain(
                format!("continuous point {w} on a discrete index domain"),
            )),
            (Self::BrownianBridge { .. } | Self::MultiplicativeVector(_), SamplePoint::Real(w)) => {
                if ScalarKernel::BrownianBridge.contains(w) && w.is_finite() {
                    Ok(())
                } else {
                    Err(Error::OutOfDomain(format!("{w} outside [0, 1]")))
                }
            }
            (
                Self::BrownianBridge { .. } | Self::MultiplicativeVector(_),
                SamplePoint::Index(i),
            ) => Err(Error::OutOfDomain(format!(
                "index point {i} on a continuous domain"
            ))),
        }
    }

    fn check_y(&self, y: &YVector) -> Result<()> {
        if y.dim() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                found: y.dim(),
            });
        }
        Ok(())
    }

    fn check_spectral(&self, coeffs: &[f64]) -> Result<()> {
        match self.spectral_dim() {
            None => Err(Error::MissingSpectralBasis),
            Some(dim) if coeffs.len() != dim => Err(Error::DimensionMismatch {
                expected: dim,
                found: coeffs.len(),
            }),
            Some(_) => Ok(()),
        }
    }
}

/// Uniform bound on the squared feature-map operator norm; also bounds
/// the operator kernel and the covariance spectrum.
pub fn uniform_bound(map: &FeatureMap) -> f64 {
    match map {
        FeatureMap::SpectralDiscrete { .. } => 1.0,
        FeatureMap::BrownianBridge { .. } => ScalarKernel::BrownianBridge.sup_diagonal(),
        FeatureMap::MultiplicativeVector(m) => m.scalar.sup_diagonal() * m.t.max_eigenvalue(),
    }
}

/// The operator kernel `K(w, t)` as an `output_dim x output_dim` matrix.
pub fn kernel_eval(map: &FeatureMap, omega: SamplePoint, theta: SamplePoint) -> Result<DMatrix<f64>> {
    map.check_point(omega)?;
    map.check_point(theta)?;
    match (map, omega, theta) {
        (FeatureMap::SpectralDiscrete { .. }, SamplePoint::Index(i), SamplePoint::Index(j)) => {
            Ok(DMatrix::from_element(1, 1, if i == j { 1.0 } else { 0.0 }))
        }
        (FeatureMap::BrownianBridge { .. }, SamplePoint::Real(w), SamplePoint::Real(t)) => Ok(
            DMatrix::from_element(1, 1, ScalarKernel::BrownianBridge.eval(w, t)),
        ),
        (FeatureMap::MultiplicativeVector(m), SamplePoint::Real(w), SamplePoint::Real(t)) => {
            Ok(m.t.matrix() * m.scalar.eval(w, t))
        }
        _ => unreachable!("check_point screens mismatched point kinds"),
    }
}

/// Adjoint evaluation `f_v(w)`, the value of the function represented by
/// `v` at the sample point.
pub fn eval_feature_adjoint(
    map: &FeatureMap,
    omega: SamplePoint,
    v: &FeatureSpaceVector,
) -> Result<YVector> {
    map.check_point(omega)?;
    match (map, v) {
        (FeatureMap::SpectralDiscrete { dim }, FeatureSpaceVector::Spectral { coeffs }) => {
            if coeffs.len() != *dim {
                return Err(Error::DimensionMismatch {
                    expected: *dim,
                    found: coeffs.len(),
                });
            }
            let SamplePoint::Index(i) = omega else {
                unreachable!()
            };
            Ok(YVector::scalar(coeffs[i]))
        }
        (FeatureMap::SpectralDiscrete { .. }, FeatureSpaceVector::Dual { .. }) => {
            Err(Error::UnsupportedRepresentation {
                required: "spectral",
            })
        }
        (FeatureMap::BrownianBridge { basis }, FeatureSpaceVector::Spectral { coeffs }) => {
            let basis = basis.as_ref().ok_or(Error::MissingSpectralBasis)?;
            if coeffs.len() != basis.dim() {
                return Err(Error::DimensionMismatch {
                    expected: basis.dim(),
                    found: coeffs.len(),
                });
            }
            let SamplePoint::Real(w) = omega else {
                unreachable!()
            };
            Ok(YVector::scalar(basis.eval_spectral(w, coeffs)))
        }
        (FeatureMap::BrownianBridge { .. }, FeatureSpaceVector::Dual { anchors }) => {
            let SamplePoint::Real(w) = omega else {
                unreachable!()
            };
            let mut acc = 0.0;
            for a in anchors {
                acc += ScalarKernel::BrownianBridge.eval(w, a.omega) * a.coeff.scalar_value()?;
            }
            Ok(YVector::scalar(acc))
        }
        (FeatureMap::MultiplicativeVector(m), FeatureSpaceVector::Spectral { coeffs }) => {
            map.check_spectral(coeffs)?;
            let basis = m.basis.as_ref().expect("checked by check_spectral");
            let SamplePoint::Real(w) = omega else {
                unreachable!()
            };
            let psi = basis.psi_at(w);
            let tau = m.t.eigenvalues();
            let d = m.t.dim();
            // Coefficients against the T eigenbasis, then rotate to Y.
            let mut in_eigbasis = vec![0.0; d];
            for (flat, &(i, j)) in m.modes.iter().enumerate() {
                in_eigbasis[j] += coeffs[flat] * psi[i] * tau[j].sqrt();
            }
            let mut out = vec![0.0; d];
            for (j, coef) in in_eigbasis.iter().enumerate() {
                let e = m.t.eigenvector(j);
                for (o, ev) in out.iter_mut().zip(&e) {
                    *o += coef * ev;
                }
            }
            Ok(YVector::new(out))
        }
        (FeatureMap::MultiplicativeVector(m), FeatureSpaceVector::Dual { anchors }) => {
            let SamplePoint::Real(w) = omega else {
                unreachable!()
            };
            let d = m.t.dim();
            let mut out = vec![0.0; d];
            for a in anchors {
                map.check_y(&a.coeff)?;
                let k = m.scalar.eval(w, a.omega);
                let tc = m.t.apply(a.coeff.as_slice());
                for (o, v) in out.iter_mut().zip(&tc) {
                    *o += k * v;
                }
            }
            Ok(YVector::new(out))
        }
    }
}

/// Apply the feature map: `R_w y` in the representation native to the map
/// kind (spectral for the discrete map, a single kernel anchor otherwise).
pub fn apply_feature(map: &FeatureMap, omega: SamplePoint, y: &YVector) -> Result<FeatureSpaceVector> {
    map.check_point(omega)?;
    map.check_y(y)?;
    match (map, omega) {
        (FeatureMap::SpectralDiscrete { dim }, SamplePoint::Index(i)) => {
            let mut coeffs = vec![0.0; *dim];
            coeffs[i] = y.scalar_value()?;
            Ok(FeatureSpaceVector::spectral(coeffs))
        }
        (FeatureMap::BrownianBridge { .. } | FeatureMap::MultiplicativeVector(_), SamplePoint::Real(w)) => {
            Ok(FeatureSpaceVector::Dual {
                anchors: vec![DualAnchor {
                    omega: w,
                    coeff: y.clone(),
                }],
            })
        }
        _ => unreachable!("check_point screens mismatched point kinds"),
    }
}

/// Apply the feature map in spectral coordinates; requires a basis for
/// kernel kinds. Coordinate `k` of `R_w y` is `(R_w y, psi_k)`.
pub fn apply_feature_spectral(
    map: &FeatureMap,
    omega: SamplePoint,
    y: &YVector,
) -> Result<FeatureSpaceVector> {
    map.check_point(omega)?;
    map.check_y(y)?;
    match (map, omega) {
        (FeatureMap::SpectralDiscrete { .. }, _) => apply_feature(map, omega, y),
        (FeatureMap::BrownianBridge { basis }, SamplePoint::Real(w)) => {
            let basis = basis.as_ref().ok_or(Error::MissingSpectralBasis)?;
            let yv = y.scalar_value()?;
            let coeffs = basis.psi_at(w).iter().map(|p| p * yv).collect();
            Ok(FeatureSpaceVector::spectral(coeffs))
        }
        (FeatureMap::MultiplicativeVector(m), SamplePoint::Real(w)) => {
            let basis = m.basis.as_ref().ok_or(Error::MissingSpectralBasis)?;
            let psi = basis.psi_at(w);
            let tau = m.t.eigenvalues();
            let d = m.t.dim();
            let proj: Vec<f64> = (0..d)
                .map(|j| {
                    let e = m.t.eigenvector(j);
                    y.as_slice().iter().zip(&e).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let coeffs = m
                .modes
                .iter()
                .map(|&(i, j)| psi[i] * tau[j].sqrt() * proj[j])
                .collect();
            Ok(FeatureSpaceVector::spectral(coeffs))
        }
        _ => unreachable!("check_point screens mismatched point kinds"),
    }
}

/// Apply the covariance operator to a spectral vector: coordinatewise
/// multiplication by the eigenvalues.
pub fn covariance_apply(eig: &Eigensystem, v: &FeatureSpaceVector) -> Result<FeatureSpaceVector> {
    let coeffs = v.coeffs()?;
    if coeffs.len() != eig.dim() {
        return Err(Error::DimensionMismatch {
            expected: eig.dim(),
            found: coeffs.len(),
        });
    }
    Ok(FeatureSpaceVector::spectral(
        coeffs
            .iter()
            .zip(eig.lambdas())
            .map(|(c, l)| c * l)
            .collect(),
    ))
}

/// Smoothness norm of index `s`: `(sum_k lambda_k^{-s} c_k^2)^{1/2}`.
/// `s = 0` is the plain feature-space norm.
pub fn smoothness_norm(eig: &Eigensystem, v: &FeatureSpaceVector, s: f64) -> Result<f64> {
    let coeffs = v.coeffs()?;
    if coeffs.len() != eig.dim() {
        return Err(Error::DimensionMismatch {
            expected: eig.dim(),
            found: coeffs.len(),
        });
    }
    let lambdas = eig.lambdas();
    let sum = if s == 0.0 {
        pairwise_sum_by(coeffs.len(), |k| coeffs[k] * coeffs[k])
    } else {
        pairwise_sum_by(coeffs.len(), |k| lambdas[k].powf(-s) * coeffs[k] * coeffs[k])
    };
    Ok(sum.sqrt())
}

/// Feature-space norm in either representation. For a kernel expansion this
/// is the double sum `sum_{ij} (K(w_i, w_j) c_j, c_i)`.
pub fn norm_v(map: &FeatureMap, v: &FeatureSpaceVector) -> Result<f64> {
    match v {
        FeatureSpaceVector::Spectral { coeffs } => {
            Ok(pairwise_sum_by(coeffs.len(), |k| coeffs[k] * coeffs[k]).sqrt())
        }
        FeatureSpaceVector::Dual { anchors } => {
            let mut acc = Vec::with_capacity(anchors.len());
            for ai in anchors {
                let mut row = 0.0;
                for aj in anchors {
                    let km = kernel_eval(
                        map,
                        SamplePoint::Real(ai.omega),
                        SamplePoint::Real(aj.omega),
                    )?;
                    let kc = &km * nalgebra::DVector::from_column_slice(aj.coeff.as_slice());
                    row += kc
                        .iter()
                        .zip(ai.coeff.as_slice())
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
                acc.push(row);
            }
            let sq = pairwise_sum(&acc);
            // Gram quadratic form; tiny negative values are rounding.
            Ok(sq.max(0.0).sqrt())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bridge_map() -> FeatureMap {
        FeatureMap::brownian_bridge()
    }

    fn mult_map_diag12() -> FeatureMap {
        let t = SpdMatrix::new(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            1.0, 2.0,
        ])))
        .unwrap();
        FeatureMap::multiplicative(ScalarKernel::BrownianBridge, t)
    }

    #[test]
    fn bridge_kernel_piecewise_values() {
        let k = ScalarKernel::BrownianBridge;
        assert_eq!(k.eval(0.25, 0.5), 0.125);
        assert!((k.eval(0.3, 0.7) - 0.09).abs() < 1e-15);
        assert!((k.eval(0.7, 0.3) - 0.09).abs() < 1e-15);
        assert_eq!(k.eval(0.0, 0.4), 0.0);
        assert_eq!(k.eval(1.0, 0.4), 0.0);
    }

    #[test]
    fn spectral_discrete_adjoint_is_coefficient_lookup() {
        let map = FeatureMap::spectral_discrete(5);
        let zero = FeatureSpaceVector::zero_spectral(5);
        for i in 0..5 {
            let y = eval_feature_adjoint(&map, SamplePoint::Index(i), &zero).unwrap();
            assert_eq!(y.scalar_value().unwrap(), 0.0);
        }
        let mut c = vec![0.0; 5];
        c[2] = 1.0; // third unit coordinate
        let e3 = FeatureSpaceVector::spectral(c);
        let at3 = eval_feature_adjoint(&map, SamplePoint::Index(2), &e3).unwrap();
        let at2 = eval_feature_adjoint(&map, SamplePoint::Index(1), &e3).unwrap();
        assert_eq!(at3.scalar_value().unwrap(), 1.0);
        assert_eq!(at2.scalar_value().unwrap(), 0.0);
    }

    #[test]
    fn bridge_dual_single_anchor_evaluates_kernel() {
        let map = bridge_map();
        let v = FeatureSpaceVector::Dual {
            anchors: vec![DualAnchor {
                omega: 0.5,
                coeff: YVector::scalar(1.0),
            }],
        };
        let y = eval_feature_adjoint(&map, SamplePoint::Real(0.25), &v).unwrap();
        assert_eq!(y.scalar_value().unwrap(), 0.125);
    }

    #[test]
    fn apply_feature_places_single_coordinate() {
        let map = FeatureMap::spectral_discrete(6);
        let v = apply_feature(&map, SamplePoint::Index(1), &YVector::scalar(5.0)).unwrap();
        assert_eq!(v.coeffs().unwrap(), &[0.0, 5.0, 0.0, 0.0, 0.0, 0.0]);

        let zero = apply_feature(&map, SamplePoint::Index(3), &YVector::scalar(0.0)).unwrap();
        assert!(zero.coeffs().unwrap().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn kernel_eval_scalar_and_multiplicative() {
        let m = kernel_eval(
            &bridge_map(),
            SamplePoint::Real(0.3),
            SamplePoint::Real(0.7),
        )
        .unwrap();
        assert!((m[(0, 0)] - 0.09).abs() < 1e-15);

        let mm = kernel_eval(
            &mult_map_diag12(),
            SamplePoint::Real(0.3),
            SamplePoint::Real(0.7),
        )
        .unwrap();
        assert!((mm[(0, 0)] - 0.09).abs() < 1e-15);
        assert!((mm[(1, 1)] - 0.18).abs() < 1e-15);
        assert_eq!(mm[(0, 1)], 0.0);
    }

    #[test]
    fn multiplicative_anchor_composes_to_kernel_action() {
        // eval(theta, apply(omega, y)) == k(theta, omega) T y entrywise.
        let map = mult_map_diag12();
        let y = YVector::new(vec![1.5, -2.0]);
        let planted = apply_feature(&map, SamplePoint::Real(0.4), &y).unwrap();
        let got = eval_feature_adjoint(&map, SamplePoint::Real(0.9), &planted).unwrap();
        let k = ScalarKernel::BrownianBridge.eval(0.9, 0.4);
        assert!((got.as_slice()[0] - k * 1.0 * 1.5).abs() < 1e-15);
        assert!((got.as_slice()[1] - k * 2.0 * (-2.0)).abs() < 1e-15);
    }

    #[test]
    fn uniform_bounds_per_kind() {
        assert_eq!(uniform_bound(&FeatureMap::spectral_discrete(3)), 1.0);
        assert_eq!(uniform_bound(&bridge_map()), 0.25);
        assert_eq!(uniform_bound(&mult_map_diag12()), 0.5);
    }

    #[test]
    fn covariance_is_diagonal_action() {
        let eig = Eigensystem::new(vec![0.5, 0.25], 1.0).unwrap();
        let v = FeatureSpaceVector::spectral(vec![1.0, 1.0]);
        let pv = covariance_apply(&eig, &v).unwrap();
        assert_eq!(pv.coeffs().unwrap(), &[0.5, 0.25]);

        let zero = FeatureSpaceVector::zero_spectral(2);
        let pz = covariance_apply(&eig, &zero).unwrap();
        assert!(pz.coeffs().unwrap().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn covariance_rejects_dual_representation() {
        let eig = Eigensystem::new(vec![0.5], 1.0).unwrap();
        let v = FeatureSpaceVector::empty_dual();
        assert!(matches!(
            covariance_apply(&eig, &v),
            Err(Error::UnsupportedRepresentation { .. })
        ));
    }

    #[test]
    fn smoothness_norm_values() {
        let eig = Eigensystem::new(vec![0.5, 0.25], 1.0).unwrap();
        let e1 = FeatureSpaceVector::spectral(vec![1.0, 0.0]);
        // lambda_1^{-1} * 1 = 2, norm sqrt(2)
        let n1 = smoothness_norm(&eig, &e1, 1.0).unwrap();
        assert!((n1 - 2f64.sqrt()).abs() < 1e-15);

        let v = FeatureSpaceVector::spectral(vec![3.0, 4.0]);
        assert_eq!(smoothness_norm(&eig, &v, 0.0).unwrap(), 5.0);
    }

    #[test]
    fn eigensystem_validation() {
        assert!(Eigensystem::new(vec![], 1.0).is_err());
        assert!(Eigensystem::new(vec![0.1, 0.2], 1.0).is_err()); // increasing
        assert!(Eigensystem::new(vec![0.2, 0.0], 1.0).is_err()); // not positive
        assert!(Eigensystem::new(vec![2.0, 0.1], 1.0).is_err()); // above bound
        assert!(Eigensystem::new(vec![0.5, 0.5, 0.1], 1.0).is_ok()); // ties fine
    }

    #[test]
    fn domain_errors() {
        let map = FeatureMap::spectral_discrete(3);
        let v = FeatureSpaceVector::zero_spectral(3);
        assert!(matches!(
            eval_feature_adjoint(&map, SamplePoint::Index(3), &v),
            Err(Error::OutOfDomain(_))
        ));
        assert!(matches!(
            eval_feature_adjoint(&map, SamplePoint::Real(0.5), &v),
            Err(Error::OutOfDomain(_))
        ));
        let bm = bridge_map();
        let d = FeatureSpaceVector::empty_dual();
        assert!(matches!(
            eval_feature_adjoint(&bm, SamplePoint::Real(1.5), &d),
            Err(Error::OutOfDomain(_))
        ));
    }

    #[test]
    fn spectral_on_bare_kernel_map_needs_basis() {
        let map = bridge_map();
        let v = FeatureSpaceVector::zero_spectral(4);
        assert!(matches!(
            eval_feature_adjoint(&map, SamplePoint::Real(0.5), &v),
            Err(Error::MissingSpectralBasis)
        ));
    }

    #[test]
    fn spd_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(SpdMatrix::new(bad).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(SpdMatrix::new(indef).is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert!(SpdMatrix::new(ok).is_ok());
    }

    #[test]
    fn dual_norm_matches_gram_form() {
        let map = bridge_map();
        let v = FeatureSpaceVector::Dual {
            anchors: vec![
                DualAnchor {
                    omega: 0.3,
                    coeff: YVector::scalar(2.0),
                },
                DualAnchor {
                    omega: 0.6,
                    coeff: YVector::scalar(-1.0),
                },
            ],
        };
        let k = ScalarKernel::BrownianBridge;
        let expect = (4.0 * k.eval(0.3, 0.3) + 1.0 * k.eval(0.6, 0.6)
            - 2.0 * 2.0 * k.eval(0.3, 0.6))
        .sqrt();
        assert!((norm_v(&map, &v).unwrap() - expect).abs() < 1e-14);
    }

    proptest! {
        // Kernel-feature consistency: eval(w, apply(t, y)) == K(w, t) y.
        #[test]
        fn kernel_feature_consistency_bridge(
            w in 0.0f64..=1.0,
            t in 0.0f64..=1.0,
            y in -5.0f64..5.0,
        ) {
            let map = bridge_map();
            let planted = apply_feature(&map, SamplePoint::Real(t), &YVector::scalar(y)).unwrap();
            let got = eval_feature_adjoint(&map, SamplePoint::Real(w), &planted)
                .unwrap()
                .scalar_value()
                .unwrap();
            let want = ScalarKernel::BrownianBridge.eval(w, t) * y;
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }

        #[test]
        fn kernel_symmetry_and_bound(
            w in 0.0f64..=1.0,
            t in 0.0f64..=1.0,
        ) {
            for map in [bridge_map(), mult_map_diag12()] {
                let a = kernel_eval(&map, SamplePoint::Real(w), SamplePoint::Real(t)).unwrap();
                let b = kernel_eval(&map, SamplePoint::Real(t), SamplePoint::Real(w)).unwrap();
                prop_assert_eq!(a.clone(), b.transpose());
                // operator norm of the symmetric kernel block
                let top = SpdMatrix::new(a.clone())
                    .map(|s| s.max_eigenvalue())
                    .unwrap_or_else(|_| {
                        // kernel blocks can be indefinite only by rounding; use abs max eig
                        a.clone().symmetric_eigen().eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()))
                    });
                prop_assert!(top <= uniform_bound(&map) + 1e-12);
            }
        }

        #[test]
        fn covariance_is_psd_and_symmetric(
            c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, c3 in -3.0f64..3.0,
            d1 in -3.0f64..3.0, d2 in -3.0f64..3.0, d3 in -3.0f64..3.0,
        ) {
            let eig = Eigensystem::new(vec![0.9, 0.4, 0.05], 1.0).unwrap();
            let v = FeatureSpaceVector::spectral(vec![c1, c2, c3]);
            let w = FeatureSpaceVector::spectral(vec![d1, d2, d3]);
            let pv = covariance_apply(&eig, &v).unwrap();
            let pw = covariance_apply(&eig, &w).unwrap();
            let dot = |a: &FeatureSpaceVector, b: &FeatureSpaceVector| -> f64 {
                a.coeffs().unwrap().iter().zip(b.coeffs().unwrap()).map(|(x, y)| x * y).sum()
            };
            prop_assert!(dot(&pv, &v) >= 0.0);
            prop_assert!((dot(&pv, &w) - dot(&v, &pw)).abs() <= 1e-12);
        }

        // Norm-scale nesting |v|_V <= Lambda^{s/2} |v|_{V^s} for s in (0, 1].
        #[test]
        fn norm_scale_nesting(
            c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, c3 in -3.0f64..3.0,
            s in 0.01f64..=1.0,
        ) {
            let eig = Eigensystem::new(vec![0.8, 0.3, 0.02], 1.0).unwrap();
            let v = FeatureSpaceVector::spectral(vec![c1, c2, c3]);
            let n0 = smoothness_norm(&eig, &v, 0.0).unwrap();
            let ns = smoothness_norm(&eig, &v, s).unwrap();
            prop_assert!(n0 <= eig.lambda_bound().powf(s / 2.0) * ns * (1.0 + 1e-12));
        }
    }
}
