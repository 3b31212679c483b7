//! Outer iterations: preconditioned Uzawa (PU) on the Schur complement,
//! preconditioned Lanczos (PL) on the saddle system, and PCG on
//! `K_ε = A_ε H A_ε` (PCG-K). Plus a plain PCG for `A`.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::assembly::SaddleOperator;
use crate::error::{check_len, Error, Result};
use crate::precond::{APreconditioner, BlockPreconditioner, SchurPreconditioner};
use crate::random::{uniform_vector, Stream};
use crate::sparse::CsrMatrix;
use crate::tally::OpTally;
use crate::vecops::{axpy, dot, norm2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Pu,
    Pl,
    PcgK,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pu, Method::Pl, Method::PcgK];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pu => "PU",
            Method::Pl => "PL",
            Method::PcgK => "PCG-K",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pu" | "uzawa" => Ok(Method::Pu),
            "pl" | "lanczos" => Ok(Method::Pl),
            "pcg-k" | "pcgk" | "pcg" => Ok(Method::PcgK),
            other => Err(Error::Parameter(format!("unknown method `{other}`"))),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative reduction target of the stopping norm.
    pub delta: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            delta: 1e-6,
            max_iter: 1000,
        }
    }
}

impl SolverConfig {
    pub fn new(delta: f64, max_iter: usize) -> Result<Self> {
        let cfg = Self { delta, max_iter };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Parameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    /// Stopping norm before the first iteration and after each one.
    pub norms: Vec<f64>,
    pub tally: OpTally,
    pub wall_time: Duration,
}

impl SolverReport {
    pub fn final_ratio(&self) -> f64 {
        match (self.norms.first(), self.norms.last()) {
            (Some(&first), Some(&last)) if first > 0.0 => last / first,
            _ => 0.0,
        }
    }

    /// True when no stopping norm exceeds its predecessor by more than
    /// `rel_tol` times the initial norm.
    pub fn is_monotone(&self, rel_tol: f64) -> bool {
        let scale = self.norms.first().copied().unwrap_or(0.0);
        self.norms
            .windows(2)
            .all(|w| w[1] <= w[0] + rel_tol * scale)
    }
}

fn quad_norm(q: f64, scale: f64) -> Result<f64> {
    if q < -1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::ContractViolation(format!(
            "negative quadratic form {q:e}"
        )));
    }
    Ok(q.max(0.0).sqrt())
}

struct Progress {
    norms: Vec<f64>,
    delta: f64,
    max_iter: usize,
    start: Instant,
}

impl Progress {
    fn new(norm0: f64, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            norms: vec![norm0],
            delta: cfg.delta,
            max_iter: cfg.max_iter,
            start: Instant::now(),
        })
    }

    fn iterations(&self) -> usize {
        self.norms.len() - 1
    }

    fn done(&self) -> bool {
        *self.norms.last().unwrap() <= self.delta * self.norms[0]
    }

    /// Records a new norm; `Ok(true)` once converged.
    fn push(&mut self, norm: f64) -> Result<bool> {
        self.norms.push(norm);
        if self.done() {
            return Ok(true);
        }
        if self.iterations() >= self.max_iter {
            return Err(Error::MaxIterations {
                iterations: self.iterations(),
                ratio: norm / self.norms[0],
            });
        }
        Ok(false)
    }

    fn finish(self, tally: OpTally) -> SolverReport {
        SolverReport {
            iterations: self.norms.len() - 1,
            wall_time: self.start.elapsed(),
            norms: self.norms,
            tally,
        }
    }
}

fn breakdown(iteration: usize, reason: &str) -> Error {
    Error::Breakdown {
        iteration,
        reason: reason.to_string(),
    }
}

/// `S_ε ξ = Σ_ε B_D ξ + Q ξ + B_D (H_A Bᵀ ξ)_D` together with `H_S S_ε ξ`,
/// using one `H_A` application.
pub fn apply_schur(
    op: &SaddleOperator,
    ha: &APreconditioner,
    hs: &SchurPreconditioner,
    xi: &[f64],
    tally: &mut OpTally,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = op.n_p();
    let t = ha.apply(&op.apply_bt(xi)?, tally)?;
    let t_d = &t[..n];
    let mut s = op.apply_sigma_bd(xi)?;
    let q = op.apply_q(xi)?;
    let bt = op.apply_bd(t_d)?;
    for i in 0..n {
        s[i] += q[i] + bt[i];
    }
    let mut hs_s = hs.apply_hs_composed(crate::precond::SchurTerm::SigmaBdImage(xi))?;
    let qt = hs.project(xi)?;
    let ct = hs.complement(t_d)?;
    for i in 0..n {
        hs_s[i] += qt[i] + ct[i];
    }
    Ok((s, hs_s))
}

/// Preconditioned Uzawa: PCG with `H_S` on `S_ε p = g`, where
/// `g = B_D (H_A f)_D`. With `f = 0` the stopping norm is `‖p‖_{S_ε}`;
/// otherwise it is the `H_S`-norm of the residual.
pub fn pu_solve(
    op: &SaddleOperator,
    ha: &APreconditioner,
    hs: &SchurPreconditioner,
    f: &[f64],
    p0: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolverReport)> {
    check_len(op.n_u(), f.len())?;
    check_len(op.n_p(), p0.len())?;
    let n = op.n_p();
    let mut tally = OpTally::default();
    let homogeneous = f.iter().all(|&v| v == 0.0);

    // r = S p - g and z = H_S r
    let (mut r, mut z) = apply_schur(op, ha, hs, p0, &mut tally)?;
    if !homogeneous {
        let hf = ha.apply(f, &mut tally)?;
        let g = op.apply_bd(&hf[..n])?;
        let hg = hs.complement(&hf[..n])?;
        axpy(-1.0, &g, &mut r);
        axpy(-1.0, &hg, &mut z);
    }
    let mut p = p0.to_vec();
    let norm_of = |r: &[f64], z: &[f64], p: &[f64]| -> Result<f64> {
        if homogeneous {
            quad_norm(dot(r, p), norm2(r) * norm2(p))
        } else {
            quad_norm(dot(z, r), norm2(z) * norm2(r))
        }
    };
    let mut progress = Progress::new(norm_of(&r, &z, &p)?, cfg)?;
    if progress.norms[0] == 0.0 || progress.done() {
        return Ok((p, progress.finish(tally)));
    }
    let mut xi = z.clone();
    loop {
        let k = progress.iterations() + 1;
        let (s_xi, hs_s_xi) = apply_schur(op, ha, hs, &xi, &mut tally)?;
        let curv = dot(&s_xi, &xi);
        if !(curv > 1e-300 * norm2(&xi).powi(2)) {
            return Err(breakdown(k, "non-positive curvature <S ξ, ξ>"));
        }
        let beta = dot(&r, &xi) / curv;
        axpy(-beta, &xi, &mut p);
        axpy(-beta, &s_xi, &mut r);
        axpy(-beta, &hs_s_xi, &mut z);
        if progress.push(norm_of(&r, &z, &p)?)? {
            break;
        }
        let alpha = dot(&z, &s_xi) / curv;
        for (x, zi) in xi.iter_mut().zip(&z) {
            *x = zi - alpha * *x;
        }
    }
    Ok((p, progress.finish(tally)))
}

/// The primal field from the inclusion variable: `u = H_A (f - Bᵀ p)`.
pub fn recover_u_from_p(
    op: &SaddleOperator,
    ha: &APreconditioner,
    f: &[f64],
    p: &[f64],
    tally: &mut OpTally,
) -> Result<Vec<f64>> {
    let mut rhs = f.to_vec();
    axpy(-1.0, &op.apply_bt(p)?, &mut rhs);
    ha.apply(&rhs, tally)
}

fn saddle_residual(
    op: &SaddleOperator,
    f: &[f64],
    x: &[f64],
    tally: &mut OpTally,
) -> Result<Vec<f64>> {
    let mut r = if x.iter().all(|&v| v == 0.0) {
        vec![0.0; op.dim()]
    } else {
        let ax = op.apply(x, tally)?;
        ax.into_iter().map(|v| -v).collect()
    };
    axpy(1.0, f, &mut r[..op.n_u()]);
    Ok(r)
}

/// Preconditioned Lanczos with a three-term recurrence on `H A_ε`,
/// minimizing the `K_ε`-norm of the error. Directions are kept
/// `K_ε`-orthonormal; `A_ε ξ` and `H A_ε ξ` are carried by recurrence so each
/// step costs one `A_ε` and one `H`.
pub fn pl_solve(
    op: &SaddleOperator,
    h: &BlockPreconditioner,
    f: &[f64],
    z0: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolverReport)> {
    check_len(op.n_u(), f.len())?;
    check_len(op.dim(), z0.len())?;
    let nu = op.n_u();
    let mut tally = OpTally::default();
    let mut x = z0.to_vec();
    let mut r = saddle_residual(op, f, &x, &mut tally)?;
    let mut hr = h.apply_residual(&r[..nu], &x, &mut tally)?;
    let mut progress = Progress::new(quad_norm(dot(&hr, &r), norm2(&hr) * norm2(&r))?, cfg)?;
    if progress.norms[0] == 0.0 || progress.done() {
        return Ok((x, progress.finish(tally)));
    }

    let mut xi = hr.clone();
    let mut a = op.apply(&xi, &mut tally)?;
    let mut y = h.apply_image(&a[..nu], &xi, &mut tally)?;
    let nn = dot(&a, &y);
    if !(nn > 0.0) {
        return Err(breakdown(1, "zero <A ξ, H A ξ>"));
    }
    let s = 1.0 / nn.sqrt();
    for v in [&mut xi, &mut a, &mut y] {
        v.iter_mut().for_each(|e| *e *= s);
    }
    let mut prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;

    loop {
        let c = dot(&r, &y);
        axpy(c, &xi, &mut x);
        axpy(-c, &a, &mut r);
        axpy(-c, &y, &mut hr);
        let norm = quad_norm(dot(&hr, &r), norm2(&hr) * norm2(&r))?;
        if progress.push(norm)? {
            break;
        }
        let k = progress.iterations() + 1;

        let b = op.apply(&y, &mut tally)?;
        let hb = h.apply_image(&b[..nu], &y, &mut tally)?;
        let alpha = dot(&b, &y);
        let gamma = prev.as_ref().map_or(0.0, |(_, _, y_p)| dot(&b, y_p));
        let mut xi_n = y.clone();
        let mut a_n = b;
        let mut y_n = hb;
        axpy(-alpha, &xi, &mut xi_n);
        axpy(-alpha, &a, &mut a_n);
        axpy(-alpha, &y, &mut y_n);
        if let Some((xi_p, a_p, y_p)) = &prev {
            axpy(-gamma, xi_p, &mut xi_n);
            axpy(-gamma, a_p, &mut a_n);
            axpy(-gamma, y_p, &mut y_n);
        }
        let nn = dot(&a_n, &y_n);
        if !(nn > 1e-300) {
            return Err(breakdown(k, "zero <A ξ, H A ξ>"));
        }
        let s = 1.0 / nn.sqrt();
        for v in [&mut xi_n, &mut a_n, &mut y_n] {
            v.iter_mut().for_each(|e| *e *= s);
        }
        prev = Some((
            std::mem::replace(&mut xi, xi_n),
            std::mem::replace(&mut a, a_n),
            std::mem::replace(&mut y, y_n),
        ));
    }
    Ok((x, progress.finish(tally)))
}

/// PCG on `K_ε z = A_ε H F` with preconditioner `H`. Each step applies
/// `A_ε` twice and `H` twice.
pub fn pcg_k_solve(
    op: &SaddleOperator,
    h: &BlockPreconditioner,
    f: &[f64],
    z0: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolverReport)> {
    check_len(op.n_u(), f.len())?;
    check_len(op.dim(), z0.len())?;
    let nu = op.n_u();
    let mut tally = OpTally::default();
    let mut x = z0.to_vec();
    let mut r = saddle_residual(op, f, &x, &mut tally)?;
    let mut hr = h.apply_residual(&r[..nu], &x, &mut tally)?;
    let mut progress = Progress::new(quad_norm(dot(&hr, &r), norm2(&hr) * norm2(&r))?, cfg)?;
    if progress.norms[0] == 0.0 || progress.done() {
        return Ok((x, progress.finish(tally)));
    }

    // residual of the K-system and its preconditioned form
    let big_r = op.apply(&hr, &mut tally)?;
    let mut z = h.apply_image(&big_r[..nu], &hr, &mut tally)?;
    let mut rz = dot(&big_r, &z);
    let mut p = z.clone();
    let mut ap = op.apply(&p, &mut tally)?;
    let mut hap = h.apply_image(&ap[..nu], &p, &mut tally)?;
    loop {
        let k = progress.iterations() + 1;
        let curv = dot(&ap, &hap);
        if !(curv > 1e-300) {
            return Err(breakdown(k, "non-positive curvature <K ξ, ξ>"));
        }
        let step = rz / curv;
        axpy(step, &p, &mut x);
        axpy(-step, &ap, &mut r);
        axpy(-step, &hap, &mut hr);
        if progress.push(quad_norm(dot(&hr, &r), norm2(&hr) * norm2(&r))?)? {
            break;
        }
        let big_r = op.apply(&hr, &mut tally)?;
        z = h.apply_image(&big_r[..nu], &hr, &mut tally)?;
        let rz_new = dot(&big_r, &z);
        let az = op.apply(&z, &mut tally)?;
        let haz = h.apply_image(&az[..nu], &z, &mut tally)?;
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
            ap[i] = az[i] + beta * ap[i];
            hap[i] = haz[i] + beta * hap[i];
        }
    }
    Ok((x, progress.finish(tally)))
}

/// PCG on `A x = b`. With `b = 0` the stopping norm is `‖x‖_A`, otherwise the
/// `H_A`-norm of the residual.
pub fn cg_basic(
    a: &CsrMatrix,
    ha: &APreconditioner,
    b: &[f64],
    x0: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolverReport)> {
    check_len(a.nrows(), b.len())?;
    check_len(a.nrows(), x0.len())?;
    let homogeneous = b.iter().all(|&v| v == 0.0);
    let mut tally = OpTally::default();
    let mut x = x0.to_vec();
    let mut r = b.to_vec();
    if x.iter().any(|&v| v != 0.0) {
        tally.a_apps += 1;
        axpy(-1.0, &a.mul_vec(&x)?, &mut r);
    }
    let mut z = ha.apply(&r, &mut tally)?;
    let norm_of = |r: &[f64], z: &[f64], x: &[f64]| -> Result<f64> {
        if homogeneous {
            quad_norm(-dot(r, x), norm2(r) * norm2(x))
        } else {
            quad_norm(dot(r, z), norm2(r) * norm2(z))
        }
    };
    let mut progress = Progress::new(norm_of(&r, &z, &x)?, cfg)?;
    if progress.norms[0] == 0.0 || progress.done() {
        return Ok((x, progress.finish(tally)));
    }
    let mut rz = dot(&r, &z);
    let mut p = z.clone();
    loop {
        let k = progress.iterations() + 1;
        tally.a_apps += 1;
        let ap = a.mul_vec(&p)?;
        let curv = dot(&p, &ap);
        if !(curv > 0.0) {
            return Err(breakdown(k, "non-positive curvature <A p, p>"));
        }
        let alpha = rz / curv;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        z = ha.apply(&r, &mut tally)?;
        if progress.push(norm_of(&r, &z, &x)?)? {
            break;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Ok((x, progress.finish(tally)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// `‖x‖_A` on the primal space.
    A,
    /// `‖p‖_{S_ε}` on the inclusion space, with `A⁻¹` realized by `H_A`.
    S,
    /// `‖z‖_{K_ε}` on the saddle space.
    K,
}

/// `√⟨Op v, v⟩` for the chosen operator.
pub fn evaluate_norm(
    kind: NormKind,
    op: &SaddleOperator,
    h: &BlockPreconditioner,
    v: &[f64],
) -> Result<f64> {
    let mut tally = OpTally::default();
    let scale = norm2(v).powi(2);
    match kind {
        NormKind::A => {
            let av = op.apply_a(v, &mut tally)?;
            quad_norm(dot(&av, v), scale * 8.0)
        }
        NormKind::S => {
            let (s, _) = apply_schur(op, &h.ha, &h.hs, v, &mut tally)?;
            quad_norm(dot(&s, v), norm2(&s) * norm2(v))
        }
        NormKind::K => {
            let av = op.apply(v, &mut tally)?;
            let hav = h.apply_image(&av[..op.n_u()], v, &mut tally)?;
            quad_norm(dot(&av, &hav), norm2(&av) * norm2(&hav))
        }
    }
}

/// Random initial guess with entries uniform in `[-1, 1]`.
pub fn initial_guess(len: usize, seed: u64) -> Vec<f64> {
    uniform_vector(len, seed, Stream::InitialGuess)
}

/// Homogeneous run (`f = 0`) from a seeded random initial guess; PU draws the
/// guess on the inclusion space, PL and PCG-K on the full saddle space.
pub fn homogeneous_run(
    method: Method,
    op: &SaddleOperator,
    h: &BlockPreconditioner,
    pu_ha: &APreconditioner,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<SolverReport> {
    let f = vec![0.0; op.n_u()];
    let report = match method {
        Method::Pu => pu_solve(op, pu_ha, &h.hs, &f, &initial_guess(op.n_p(), seed), cfg)?.1,
        Method::Pl => pl_solve(op, h, &f, &initial_guess(op.dim(), seed), cfg)?.1,
        Method::PcgK => pcg_k_solve(op, h, &f, &initial_guess(op.dim(), seed), cfg)?.1,
    };
    Ok(report)
}
