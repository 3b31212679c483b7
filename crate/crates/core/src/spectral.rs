//! Spectral checks for the preconditioned operators: dense generalized
//! eigensolves on small instances, Lanczos extremes for larger ones, the
//! measured constants `a₀`, `b₀`, and the interval verdicts.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::assembly::SaddleOperator;
use crate::error::{Error, Result};
use crate::precond::{APreconditioner, HsReference};
use crate::random::{uniform_vector, Stream};
use crate::sparse::CsrMatrix;
use crate::tally::OpTally;

/// Largest total dimension accepted by the dense routines.
pub const DENSE_LIMIT: usize = 2000;

/// `(1 - √5) / 2`
pub const MU_HAT_1: f64 = -0.618_033_988_749_894_9;
/// `(1 + √5) / 2`
pub const MU_HAT_2: f64 = 1.618_033_988_749_895;

/// Endpoints `(μ̌₁, μ̌₂)` for the contrast-dependent parameter `r`:
/// `(1 - r ∓ √((1 + r)² + 4)) / 2`.
pub fn mu_check(r: f64) -> (f64, f64) {
    let root = ((1.0 + r).powi(2) + 4.0).sqrt();
    let lo = (1.0 - r - root) / 2.0;
    // product of the roots is -(1 + r); avoids cancellation for large r
    (lo, -(1.0 + r) / lo)
}

/// Eigenvalues (ascending) and `Gram`-orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct DenseSpectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

fn check_dense(dim: usize, limit: usize) -> Result<()> {
    if dim > limit {
        return Err(Error::TooLarge { dim, limit });
    }
    Ok(())
}

/// All generalized eigenpairs of `op x = λ gram x` by reduction with the
/// Cholesky factor of `gram`.
pub fn dense_pencil(op: &DMatrix<f64>, gram: &DMatrix<f64>, limit: usize) -> Result<DenseSpectrum> {
    let n = op.nrows();
    check_dense(n, limit)?;
    if op.ncols() != n || gram.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: gram.nrows(),
        });
    }
    let chol = Cholesky::new(gram.clone())
        .ok_or_else(|| Error::ContractViolation("Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::ContractViolation("singular Cholesky factor".into()))?;
    let mut c = &linv * op * linv.transpose();
    c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let lt_inv = linv.transpose();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &(&lt_inv * eig.eigenvectors.column(i)));
    }
    Ok(DenseSpectrum { values, vectors })
}

/// Sorted generalized eigenvalues of `(op, gram)`.
pub fn dense_spectrum(op: &DMatrix<f64>, gram: &DMatrix<f64>, limit: usize) -> Result<Vec<f64>> {
    Ok(dense_pencil(op, gram, limit)?.values)
}

/// Spectral condition number of an SPD sparse matrix.
pub fn dense_condition(a: &CsrMatrix, limit: usize) -> Result<f64> {
    check_dense(a.nrows(), limit)?;
    let ev = SymmetricEigen::new(a.to_dense()).eigenvalues;
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(min > 0.0) {
        return Err(Error::ContractViolation(
            "matrix is not positive definite".into(),
        ));
    }
    Ok(max / min)
}

/// Dense blocks of a saddle operator.
#[derive(Debug, Clone)]
pub struct DenseBlocks {
    pub a: DMatrix<f64>,
    /// `B_D`
    pub bd: DMatrix<f64>,
    /// `Σ_ε B_D`
    pub sigma_bd: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Block-diagonal inclusion mass matrix.
    pub mass: DMatrix<f64>,
}

impl DenseBlocks {
    pub fn new(op: &SaddleOperator) -> Result<Self> {
        check_dense(op.dim(), DENSE_LIMIT)?;
        let n = op.n_p();
        let mut bd = DMatrix::zeros(n, n);
        let mut sigma_bd = DMatrix::zeros(n, n);
        let mut q = DMatrix::zeros(n, n);
        let mut mass = DMatrix::zeros(n, n);
        for (s, b) in op.blocks().iter().enumerate() {
            let o = op.offsets()[s];
            let ns = b.rank_one.len();
            let bs = b.stiffness.to_dense();
            bd.view_mut((o, o), (ns, ns)).copy_from(&bs);
            sigma_bd
                .view_mut((o, o), (ns, ns))
                .copy_from(&(bs * op.eps()[s]));
            let m = DVector::from_column_slice(&b.rank_one.m);
            let d2 = b.rank_one.d * b.rank_one.d;
            q.view_mut((o, o), (ns, ns))
                .copy_from(&(&m * m.transpose() / d2));
            mass.view_mut((o, o), (ns, ns))
                .copy_from(&b.mass.to_dense());
        }
        Ok(Self {
            a: op.stiffness().to_dense(),
            bd,
            sigma_bd,
            q,
            mass,
        })
    }

    pub fn n_u(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.bd.nrows()
    }

    /// `[[A, Bᵀ], [B, -Σ_ε B_D - Q]]`
    pub fn saddle(&self) -> DMatrix<f64> {
        let (nu, n) = (self.n_u(), self.n_p());
        let mut out = DMatrix::zeros(nu + n, nu + n);
        out.view_mut((0, 0), (nu, nu)).copy_from(&self.a);
        out.view_mut((0, nu), (n, n)).copy_from(&self.bd);
        out.view_mut((nu, 0), (n, n)).copy_from(&self.bd);
        out.view_mut((nu, nu), (n, n))
            .copy_from(&(-(&self.sigma_bd + &self.q)));
        out
    }

    /// `S₀ = B_D (A⁻¹)_{DD} B_D`
    pub fn s0(&self) -> Result<DMatrix<f64>> {
        let n = self.n_p();
        let chol = Cholesky::new(self.a.clone())
            .ok_or_else(|| Error::Factorization("A is not positive definite".into()))?;
        let mut bt = DMatrix::zeros(self.n_u(), n);
        bt.view_mut((0, 0), (n, n)).copy_from(&self.bd);
        let x = chol.solve(&bt);
        let s0 = self.bd.transpose() * x.rows(0, n);
        Ok((&s0 + s0.transpose()) * 0.5)
    }

    /// `diag(A, G)` for a Schur-block Gram matrix `G`.
    pub fn block_gram(&self, schur: &DMatrix<f64>) -> DMatrix<f64> {
        let (nu, n) = (self.n_u(), self.n_p());
        let mut out = DMatrix::zeros(nu + n, nu + n);
        out.view_mut((0, 0), (nu, nu)).copy_from(&self.a);
        out.view_mut((nu, nu), (n, n)).copy_from(schur);
        out
    }
}

/// Fraction of `x` (in the `G`-norm) lying along the per-inclusion constants,
/// with `xᵀ G x` supplied by the caller.
fn constant_alignment(op: &SaddleOperator, w: &[f64], denom: f64) -> f64 {
    if denom <= 0.0 {
        return 0.0;
    }
    let mut num = 0.0;
    for (s, b) in op.blocks().iter().enumerate() {
        let r = op.block_range(s);
        let c: f64 = b.rank_one.m.iter().zip(&w[r]).map(|(m, v)| m * v).sum();
        num += c * c / (b.rank_one.d * b.rank_one.d);
    }
    num / denom
}

/// Alignment above which an eigenvector is attributed to `ker B_D`.
pub const KERNEL_ALIGNMENT: f64 = 0.99;

/// Extreme eigenvalues `(a₀, b₀)` of `H_S S₀` on the complement of
/// `ker B_D`. Kernel eigenvectors are detected by their alignment with the
/// per-inclusion constants in the mass inner product.
pub fn measure_a0_b0(op: &SaddleOperator) -> Result<(f64, f64)> {
    let blocks = DenseBlocks::new(op)?;
    let spec = dense_pencil(&blocks.s0()?, &(&blocks.bd + &blocks.q), DENSE_LIMIT)?;
    let mut a0 = f64::INFINITY;
    let mut b0 = f64::NEG_INFINITY;
    for (i, &mu) in spec.values.iter().enumerate() {
        let v = spec.vectors.column(i);
        let denom = (v.transpose() * &blocks.mass * v)[(0, 0)];
        if constant_alignment(op, v.as_slice(), denom) > KERNEL_ALIGNMENT {
            continue;
        }
        a0 = a0.min(mu);
        b0 = b0.max(mu);
    }
    if !a0.is_finite() {
        return Err(Error::ContractViolation(
            "no eigenvalues outside ker B_D".into(),
        ));
    }
    Ok((a0, b0))
}

/// Which Schur block the reference preconditioner carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PencilKind {
    /// `H₀ = diag(A⁻¹, (S₀ + Q)⁻¹)`
    Ideal,
    /// `H = diag(A⁻¹, (B_D + Q)⁻¹)`
    Practical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EigenClass {
    /// Eigenvector along `[0; e_s]`, eigenvalue `-1`.
    Kernel,
    Negative,
    Positive,
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenVerdict {
    pub value: f64,
    pub class: EigenClass,
    /// Inside the predicted set (kernel eigenvalues are checked against -1).
    pub inside: bool,
    /// Inside `[μ̌₁, μ̂₁] ∪ [1, μ̂₂]` taken literally, without exclusions.
    pub inside_nominal: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub pencil: PencilKind,
    pub eps_max: f64,
    pub a0: f64,
    pub b0: f64,
    pub r_max: f64,
    pub mu_check_1: f64,
    pub mu_hat_1: f64,
    pub mu_hat_2: f64,
    pub mu_check_2: f64,
    /// Predicted negative and positive intervals after kernel exclusion.
    pub negative_interval: (f64, f64),
    pub positive_interval: (f64, f64),
    pub kernel_count: usize,
    pub expected_kernel_count: usize,
    pub eigenvalues: Vec<EigenVerdict>,
    pub tolerance: f64,
}

impl SpectrumReport {
    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues.first().map_or(f64::NAN, |e| e.value)
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.last().map_or(f64::NAN, |e| e.value)
    }

    /// Every non-kernel eigenvalue inside the predicted intervals and the
    /// kernel cluster of the expected size.
    pub fn passes(&self) -> bool {
        self.kernel_count == self.expected_kernel_count && self.eigenvalues.iter().all(|e| e.inside)
    }

    /// The stricter reading: the whole spectrum inside
    /// `[μ̌₁, μ̂₁] ∪ [1, μ̂₂]`.
    pub fn passes_nominal(&self) -> bool {
        self.eigenvalues.iter().all(|e| e.inside_nominal)
    }

    pub fn outside_nominal(&self) -> usize {
        self.eigenvalues
            .iter()
            .filter(|e| !e.inside_nominal)
            .count()
    }
}

/// Dense spectrum of the preconditioned saddle operator with an exact `H_A`
/// and the verdict against the interval predictions.
///
/// With `H₀` the non-kernel spectrum is predicted in
/// `[μ̌₁(r), μ̂₁] ∪ [1, μ̂₂]` with `r = ε_max / a₀`. With the practical `H`
/// the Schur block is only spectrally equivalent, `S₀ + Q ≤ B_D + Q ≤
/// (S₀ + Q) / a₀`, which scales the intervals to
/// `[μ̌₁, a₀ μ̂₁] ∪ [a₀, μ̂₂]`.
pub fn verify_intervals(
    op: &SaddleOperator,
    pencil: PencilKind,
    tol: f64,
) -> Result<SpectrumReport> {
    let blocks = DenseBlocks::new(op)?;
    let (a0, b0) = measure_a0_b0(op)?;
    let eps_max = op.eps().iter().copied().fold(0.0, f64::max);
    let r_max = eps_max / a0;
    let (mu_check_1, mu_check_2) = mu_check(r_max);
    let schur = match pencil {
        PencilKind::Ideal => blocks.s0()? + &blocks.q,
        PencilKind::Practical => &blocks.bd + &blocks.q,
    };
    let gram = blocks.block_gram(&schur);
    let spec = dense_pencil(&blocks.saddle(), &gram, DENSE_LIMIT)?;
    let (alpha_min, alpha_max) = match pencil {
        PencilKind::Ideal => (1.0, 1.0),
        PencilKind::Practical => (1.0, 1.0 / a0),
    };
    let negative_interval = (mu_check_1 / alpha_min, MU_HAT_1 / alpha_max);
    let positive_interval = (1.0 / alpha_max, MU_HAT_2 / alpha_min);
    let within = |x: f64, (lo, hi): (f64, f64)| x >= lo - tol && x <= hi + tol;

    let nu = blocks.n_u();
    let mut kernel_count = 0;
    let eigenvalues = spec
        .values
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let v = spec.vectors.column(i);
            // Gram-normalized, so the p-part alignment is relative to 1
            let w = v.rows(nu, blocks.n_p());
            let align = constant_alignment(op, w.as_slice(), 1.0);
            let class = if align > KERNEL_ALIGNMENT {
                EigenClass::Kernel
            } else if value < 0.0 {
                EigenClass::Negative
            } else {
                EigenClass::Positive
            };
            let inside = match class {
                EigenClass::Kernel => {
                    kernel_count += 1;
                    (value + 1.0).abs() <= tol.max(1e-8)
                }
                EigenClass::Negative => within(value, negative_interval),
                EigenClass::Positive => within(value, positive_interval),
            };
            let inside_nominal =
                within(value, (mu_check_1, MU_HAT_1)) || within(value, (1.0, MU_HAT_2));
            EigenVerdict {
                value,
                class,
                inside,
                inside_nominal,
            }
        })
        .collect();
    Ok(SpectrumReport {
        pencil,
        eps_max,
        a0,
        b0,
        r_max,
        mu_check_1,
        mu_hat_1: MU_HAT_1,
        mu_hat_2: MU_HAT_2,
        mu_check_2,
        negative_interval,
        positive_interval,
        kernel_count,
        expected_kernel_count: op.blocks().len(),
        eigenvalues,
        tolerance: tol,
    })
}

/// Result of [`lanczos_extremes`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanczosEstimate {
    pub min: f64,
    pub max: f64,
    /// Residual bounds `|β_k s_k|` for the two extreme Ritz pairs.
    pub min_error: f64,
    pub max_error: f64,
    pub steps: usize,
    /// Both bounds below the requested tolerance (or an invariant subspace
    /// was reached).
    pub converged: bool,
}

/// Extreme eigenvalues of an operator self-adjoint in the inner product
/// `inner`, by Lanczos with full reorthogonalization from a seeded start.
pub fn lanczos_extremes<F, G>(
    dim: usize,
    mut apply: F,
    inner: G,
    budget: usize,
    tol: f64,
    seed: u64,
) -> Result<LanczosEstimate>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
    G: Fn(&[f64], &[f64]) -> f64,
{
    if dim == 0 || budget == 0 {
        return Err(Error::Parameter(
            "Lanczos needs a positive dimension and budget".into(),
        ));
    }
    let mut v = uniform_vector(dim, seed, Stream::Probe);
    let nv = inner(&v, &v).sqrt();
    if !(nv > 0.0) {
        return Err(Error::ContractViolation(
            "inner product is not positive".into(),
        ));
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let steps = budget.min(dim);
    let mut estimate = None;
    for k in 0..steps {
        let mut w = apply(&basis[k])?;
        let alpha = inner(&w, &basis[k]);
        alphas.push(alpha);
        for _ in 0..2 {
            for q in &basis {
                let c = inner(&w, q);
                w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
        }
        let beta = inner(&w, &w).max(0.0).sqrt();
        let est = ritz_extremes(&alphas, &betas, beta, tol, k + 1);
        let scale = alphas.iter().fold(0.0_f64, |m, a| m.max(a.abs())).max(1.0);
        if beta <= 1e-12 * scale {
            estimate = Some(LanczosEstimate {
                converged: true,
                ..est
            });
            break;
        }
        estimate = Some(est);
        if est.converged {
            break;
        }
        betas.push(beta);
        basis.push(w.into_iter().map(|x| x / beta).collect());
    }
    Ok(estimate.expect("at least one step"))
}

fn ritz_extremes(
    alphas: &[f64],
    betas: &[f64],
    beta_next: f64,
    tol: f64,
    steps: usize,
) -> LanczosEstimate {
    let k = alphas.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alphas[i];
        if i + 1 < k {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (mut imin, mut imax) = (0, 0);
    for i in 0..k {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[imax] {
            imax = i;
        }
    }
    let min = eig.eigenvalues[imin];
    let max = eig.eigenvalues[imax];
    let min_error = (beta_next * eig.eigenvectors[(k - 1, imin)]).abs();
    let max_error = (beta_next * eig.eigenvectors[(k - 1, imax)]).abs();
    let converged =
        min_error <= tol * min.abs().max(1e-300) && max_error <= tol * max.abs().max(1e-300);
    LanczosEstimate {
        min,
        max,
        min_error,
        max_error,
        steps,
        converged,
    }
}

/// Extreme eigenvalues `(β₁, β₂)` of `H_A A`, self-adjoint in the
/// `A`-inner product. With an inner-iteration `H_A` the operator is only
/// nearly linear and the result is an estimate.
pub fn ha_bounds(
    a: &CsrMatrix,
    ha: &APreconditioner,
    budget: usize,
    tol: f64,
    seed: u64,
) -> Result<LanczosEstimate> {
    let mut tally = OpTally::default();
    lanczos_extremes(
        a.nrows(),
        |x| ha.apply(&a.mul_vec(x)?, &mut tally),
        |x, y| {
            let mut ay = vec![0.0; y.len()];
            a.mul_vec_into(y, &mut ay);
            x.iter().zip(&ay).map(|(p, q)| p * q).sum()
        },
        budget,
        tol,
        seed,
    )
}

/// `H_S S₀` applied densely, for Lanczos checks against the dense pencil.
pub fn hs_s0_operator(op: &SaddleOperator) -> Result<(DMatrix<f64>, HsReference)> {
    let blocks = DenseBlocks::new(op)?;
    Ok((blocks.s0()?, HsReference::build(op)?))
}
