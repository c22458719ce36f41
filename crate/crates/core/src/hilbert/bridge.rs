//! Numerically computed spectral basis for scalar kernels on [0, 1].
//!
//! The covariance operator of a scalar kernel under the uniform sampling
//! measure is discretized by the midpoint rule on `n` nodes and decomposed
//! once by a dense symmetric eigensolver. Off-node eigenfunction values come
//! from the Nystrom extension, which is exact at the nodes themselves.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hilbert::ScalarKernel;

/// Spectral data of the midpoint-rule discretization of a scalar kernel
/// integral operator on [0, 1].
///
/// Eigenfunctions are stored H-normalized (`psi_k`, unit feature-space norm)
/// and L2-normalized (`phi_k`, with `psi_k = sqrt(lambda_k) * phi_k`). All
/// `n` modes are retained so that the implied rank-n kernel reproduces the
/// exact kernel whenever at least one argument is a quadrature node.
pub struct NystromBasis {
    kernel: ScalarKernel,
    n: usize,
    nodes: Vec<f64>,
    /// Eigenvalues of the discretized operator, descending, all positive.
    lambdas: Vec<f64>,
    sqrt_lambdas: Vec<f64>,
    /// Row-major `[mode][node]`: L2(rho)-orthonormal eigenfunction values.
    phi: Vec<f64>,
    /// Node-major `[node][mode]`: `psi_k(x_j)`, contiguous per node.
    psi_by_node: Vec<f64>,
}

impl std::fmt::Debug for NystromBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NystromBasis")
            .field("kernel", &self.kernel)
            .field("n", &self.n)
            .field("lambda_1", &self.lambdas.first())
            .finish_non_exhaustive()
    }
}

impl NystromBasis {
    /// Discretize and decompose. `n` is both the quadrature resolution and
    /// the number of retained modes.
    pub fn new(kernel: ScalarKernel, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "n",
                reason: "quadrature needs at least one node".into(),
            });
        }
        let h = 1.0 / n as f64;
        let nodes: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) * h).collect();

        // Symmetric midpoint discretization K(x_i, x_j) / n.
        let mut mat = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = kernel.eval(nodes[i], nodes[j]) * h;
                mat[(i, j)] = v;
                mat[(j, i)] = v;
            }
        }

        let eig = mat.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("eigenvalues are finite")
        });

        let mut lambdas = Vec::with_capacity(n);
        let mut phi = vec![0.0; n * n];
        let sqrt_n = (n as f64).sqrt();
        for (k, &col) in order.iter().enumerate() {
            let lam = eig.eigenvalues[col];
            if !(lam > 0.0) {
                return Err(Error::InvalidProblem(format!(
                    "discretized kernel operator is not positive definite \
                     (eigenvalue {lam:.3e} at mode {k})"
                )));
            }
            lambdas.push(lam);
            let column = eig.eigenvectors.column(col);
            // Canonical sign: first entry of significant magnitude positive.
            let sign = column
                .iter()
                .find(|x| x.abs() > 1e-12)
                .map_or(1.0, |x| x.signum());
            for j in 0..n {
                phi[k * n + j] = sign * sqrt_n * column[j];
            }
        }

        let sqrt_lambdas: Vec<f64> = lambdas.iter().map(|l| l.sqrt()).collect();
        let mut psi_by_node = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                psi_by_node[j * n + k] = sqrt_lambdas[k] * phi[k * n + j];
            }
        }

        Ok(Self {
            kernel,
            n,
            nodes,
            lambdas,
            sqrt_lambdas,
            phi,
            psi_by_node,
        })
    }

    /// Process-wide cache: the decomposition is deterministic in
    /// `(kernel, n)` and expensive at production resolution.
    pub fn shared(kernel: ScalarKernel, n: usize) -> Result<Arc<Self>> {
        type Cache = Mutex<HashMap<(ScalarKernel, usize), Arc<NystromBasis>>>;
        static CACHE: OnceLock<Cache> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        {
            let guard = cache.lock().expect("basis cache poisoned");
            if let Some(b) = guard.get(&(kernel, n)) {
                return Ok(Arc::clone(b));
            }
        }
        // Build outside the lock; duplicate work on a race is harmless.
        let built = Arc::new(Self::new(kernel, n)?);
        let mut guard = cache.lock().expect("basis cache poisoned");
        Ok(Arc::clone(
            guard.entry((kernel, n)).or_insert(built),
        ))
    }

    pub fn kernel(&self) -> ScalarKernel {
        self.kernel
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Index of the quadrature node equal to `omega`, if any.
    pub fn node_index(&self, omega: f64) -> Option<usize> {
        let guess = (omega * self.n as f64 - 0.5).round();
        if guess < 0.0 || guess >= self.n as f64 {
            return None;
        }
        let j = guess as usize;
        (self.nodes[j] == omega).then_some(j)
    }

    /// Values `psi_k(omega)` for all retained modes.
    ///
    /// At a node this is an exact lookup; elsewhere the Nystrom extension
    /// `phi_k(omega) = (1/(lambda_k n)) sum_j k(omega, x_j) phi_k(x_j)`.
    pub fn psi_at(&self, omega: f64) -> Vec<f64> {
        if let Some(j) = self.node_index(omega) {
            return self.psi_by_node[j * self.n..(j + 1) * self.n].to_vec();
        }
        let k_omega: Vec<f64> = self
            .nodes
            .iter()
            .map(|&x| self.kernel.eval(omega, x))
            .collect();
        let h = 1.0 / self.n as f64;
        (0..self.n)
            .map(|k| {
                let row = &self.phi[k * self.n..(k + 1) * self.n];
                let dot: f64 = row.iter().zip(&k_omega).map(|(p, kv)| p * kv).sum();
                // psi = sqrt(lambda) * phi = dot * h / sqrt(lambda)
                dot * h / self.sqrt_lambdas[k]
            })
            .collect()
    }

    /// Evaluate a spectral vector: `sum_k coeffs[k] * psi_k(omega)`.
    pub fn eval_spectral(&self, omega: f64, coeffs: &[f64]) -> f64 {
        if let Some(j) = self.node_index(omega) {
            let col = &self.psi_by_node[j * self.n..(j + 1) * self.n];
            return col.iter().zip(coeffs).map(|(p, c)| p * c).sum();
        }
        self.psi_at(omega)
            .iter()
            .zip(coeffs)
            .map(|(p, c)| p * c)
            .sum()
    }
}
