//! Preconditioners: the Schur block `H_S = (B_D + Q)⁻¹` applied through the
//! projector identities, its factorization reference, the `H_A` family and
//! the block-diagonal `H = diag(H_A, H_S)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::assembly::{RankOneBlock, SaddleOperator};
use crate::banded::BandCholesky;
use crate::error::{check_len, Error, Result};
use crate::mesh::{OrderingMap, StructuredMesh};
use crate::multigrid::Multigrid;
use crate::sparse::CsrMatrix;
use crate::tally::OpTally;
use crate::vecops::{axpy, dot};

/// Operand of the composed `H_S`, described by its pre-image.
#[derive(Debug, Clone, Copy)]
pub enum SchurTerm<'a> {
    /// `B_D w`
    BdImage(&'a [f64]),
    /// `Q z`
    QImage(&'a [f64]),
    /// `Σ_ε B_D p`
    SigmaBdImage(&'a [f64]),
    /// A plain vector with no known pre-image. Always rejected.
    Untagged(&'a [f64]),
}

/// `H_S = (B_D + Q)⁻¹` realized with `O(n)` work per application.
#[derive(Debug, Clone)]
pub struct SchurPreconditioner {
    rank_one: Vec<RankOneBlock>,
    eps: Vec<f64>,
    offsets: Vec<usize>,
}

impl SchurPreconditioner {
    pub fn new(op: &SaddleOperator) -> Self {
        Self {
            rank_one: op.blocks().iter().map(|b| b.rank_one.clone()).collect(),
            eps: op.eps().to_vec(),
            offsets: op.offsets().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn num_blocks(&self) -> usize {
        self.rank_one.len()
    }

    fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    /// `Q̃_s p_s = (1/d_s²) e_s (m_s · p_s)`
    pub fn apply_projector(&self, s: usize, p: &[f64]) -> Result<Vec<f64>> {
        let block = self
            .rank_one
            .get(s)
            .ok_or_else(|| Error::Parameter(format!("no inclusion {s}")))?;
        check_len(block.len(), p.len())?;
        Ok(vec![block.mean(p); p.len()])
    }

    /// `Q̃ p` on all inclusions.
    pub fn project(&self, p: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), p.len())?;
        let mut out = vec![0.0; p.len()];
        for (s, b) in self.rank_one.iter().enumerate() {
            let r = self.range(s);
            let c = b.mean(&p[r.clone()]);
            out[r].iter_mut().for_each(|v| *v = c);
        }
        Ok(out)
    }

    /// `(I - Q̃) p`
    pub fn complement(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.project(p)?;
        for (o, pi) in out.iter_mut().zip(p) {
            *o = pi - *o;
        }
        Ok(out)
    }

    pub fn apply_hs_composed(&self, term: SchurTerm<'_>) -> Result<Vec<f64>> {
        match term {
            SchurTerm::BdImage(w) => self.complement(w),
            SchurTerm::QImage(z) => self.project(z),
            SchurTerm::SigmaBdImage(p) => {
                let mut out = self.complement(p)?;
                for s in 0..self.num_blocks() {
                    let e = self.eps[s];
                    out[self.range(s)].iter_mut().for_each(|v| *v *= e);
                }
                Ok(out)
            }
            SchurTerm::Untagged(_) => Err(Error::ContractViolation(
                "H_S accepts only B_D-, Q- or Σ_ε B_D-images with a known pre-image".into(),
            )),
        }
    }

    /// `H_S (B_D v_D - Σ_ε B_D w - Q w)`, the second block of `A_ε (v, w)`,
    /// where `v_d` is the restriction of `v` to the inclusion nodes.
    pub fn saddle_image(&self, v_d: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), v_d.len())?;
        check_len(self.dim(), w.len())?;
        let mut out = vec![0.0; w.len()];
        for (s, b) in self.rank_one.iter().enumerate() {
            let r = self.range(s);
            let e = self.eps[s];
            let diff: Vec<f64> = v_d[r.clone()]
                .iter()
                .zip(&w[r.clone()])
                .map(|(v, w)| v - e * w)
                .collect();
            let c = b.mean(&diff) + b.mean(&w[r.clone()]);
            for (o, d) in out[r].iter_mut().zip(&diff) {
                *o = d - c;
            }
        }
        Ok(out)
    }
}

/// Dense Cholesky factors of each `B_s + Q_s`. Validation oracle only.
#[derive(Debug, Clone)]
pub struct HsReference {
    factors: Vec<Cholesky<f64, Dyn>>,
    offsets: Vec<usize>,
}

impl HsReference {
    pub fn build(op: &SaddleOperator) -> Result<Self> {
        let factors = op
            .blocks()
            .iter()
            .enumerate()
            .map(|(s, b)| {
                let mut dense = b.stiffness.to_dense();
                let m = DVector::from_column_slice(&b.rank_one.m);
                dense += &m * m.transpose() / (b.rank_one.d * b.rank_one.d);
                Cholesky::new(dense).ok_or_else(|| {
                    Error::Factorization(format!(
                        "B_s + Q_s is not positive definite on inclusion {s}"
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            factors,
            offsets: op.offsets().to_vec(),
        })
    }

    /// Solves `(B_D + Q) x = y`.
    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(*self.offsets.last().unwrap(), y.len())?;
        let mut x = vec![0.0; y.len()];
        for (s, f) in self.factors.iter().enumerate() {
            let r = self.offsets[s]..self.offsets[s + 1];
            let sol = f.solve(&DVector::from_column_slice(&y[r.clone()]));
            x[r].copy_from_slice(sol.as_slice());
        }
        Ok(x)
    }

    /// Dense `(B_D + Q)⁻¹`.
    pub fn dense_inverse(&self) -> DMatrix<f64> {
        let n = *self.offsets.last().unwrap();
        let mut out = DMatrix::zeros(n, n);
        for (s, f) in self.factors.iter().enumerate() {
            let o = self.offsets[s];
            let inv = f.inverse();
            out.view_mut((o, o), (inv.nrows(), inv.ncols()))
                .copy_from(&inv);
        }
        out
    }
}

/// Single-application preconditioners usable on their own or as the base
/// of the inner CG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseKind {
    /// Banded Cholesky solve with `A`.
    Exact,
    /// One geometric V(1,1) cycle.
    Multigrid,
    /// Diagonal scaling.
    Jacobi,
    /// Forward then backward Gauss-Seidel sweep from zero.
    Sgs,
}

/// Choice of `H_A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum HaSpec {
    Base(BaseKind),
    /// A fixed number of CG steps on `A` from a zero start.
    InnerCg {
        steps: usize,
        base: BaseKind,
    },
}

pub const DEFAULT_INNER_STEPS: usize = 12;

impl Default for HaSpec {
    fn default() -> Self {
        HaSpec::Base(BaseKind::Exact)
    }
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseKind::Exact => "exact",
            BaseKind::Multigrid => "multigrid",
            BaseKind::Jacobi => "jacobi",
            BaseKind::Sgs => "sgs",
        })
    }
}

impl FromStr for BaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(BaseKind::Exact),
            "multigrid" | "mg" => Ok(BaseKind::Multigrid),
            "jacobi" | "diagonal" => Ok(BaseKind::Jacobi),
            "sgs" => Ok(BaseKind::Sgs),
            other => Err(Error::Parameter(format!(
                "unknown H_A base preconditioner `{other}`"
            ))),
        }
    }
}

impl fmt::Display for HaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HaSpec::Base(b) => write!(f, "{b}"),
            HaSpec::InnerCg { steps, base } => write!(f, "inner:{steps}:{base}"),
        }
    }
}

impl FromStr for HaSpec {
    type Err = Error;

    /// Accepts `exact`, `multigrid`, `jacobi`, `sgs`, `inner`,
    /// `inner:<steps>` and `inner:<steps>:<base>`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        if parts[0].eq_ignore_ascii_case("inner") {
            if parts.len() > 3 {
                return Err(Error::Parameter(format!("malformed H_A spec `{s}`")));
            }
            let steps = match parts.get(1) {
                Some(t) => t
                    .parse::<usize>()
                    .map_err(|_| Error::Parameter(format!("bad inner step count in `{s}`")))?,
                None => DEFAULT_INNER_STEPS,
            };
            if steps == 0 {
                return Err(Error::Parameter("inner CG needs at least one step".into()));
            }
            let base = match parts.get(2) {
                Some(b) => b.parse()?,
                None => BaseKind::Sgs,
            };
            return Ok(HaSpec::InnerCg { steps, base });
        }
        if parts.len() != 1 {
            return Err(Error::Parameter(format!("malformed H_A spec `{s}`")));
        }
        Ok(HaSpec::Base(parts[0].parse()?))
    }
}

impl TryFrom<String> for HaSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<HaSpec> for String {
    fn from(h: HaSpec) -> String {
        h.to_string()
    }
}

#[derive(Debug, Clone)]
enum BaseOp {
    Exact(BandCholesky),
    Multigrid(Multigrid),
    Jacobi(Vec<f64>),
    Sgs,
}

/// An SPD approximation of `A⁻¹`, working in system ordering.
#[derive(Debug, Clone)]
pub struct APreconditioner {
    spec: HaSpec,
    base: BaseOp,
    a: CsrMatrix,
    ordering: OrderingMap,
}

impl APreconditioner {
    /// `a` must be the Dirichlet stiffness of `mesh` in the system ordering
    /// given by `ordering`.
    pub fn new(
        spec: HaSpec,
        a: &CsrMatrix,
        mesh: &StructuredMesh,
        ordering: &OrderingMap,
    ) -> Result<Self> {
        check_len(mesh.num_interior(), a.nrows())?;
        check_len(a.nrows(), ordering.len())?;
        let kind = match spec {
            HaSpec::Base(b) => b,
            HaSpec::InnerCg { base, .. } => base,
        };
        let base = match kind {
            BaseKind::Exact => BaseOp::Exact(BandCholesky::factor(
                &a.permute_symmetric(ordering.inverse()),
            )?),
            BaseKind::Multigrid => BaseOp::Multigrid(Multigrid::new(mesh.cells_per_side())?),
            BaseKind::Jacobi => BaseOp::Jacobi(a.diagonal().iter().map(|d| 1.0 / d).collect()),
            BaseKind::Sgs => BaseOp::Sgs,
        };
        Ok(Self {
            spec,
            base,
            a: a.clone(),
            ordering: ordering.clone(),
        })
    }

    pub fn spec(&self) -> HaSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn apply_base(&self, r: &[f64], tally: &mut OpTally) -> Result<Vec<f64>> {
        tally.ha_apps += 1;
        match &self.base {
            BaseOp::Exact(chol) => {
                let mut g = self.ordering.unpermute(r);
                chol.solve_in_place(&mut g)?;
                Ok(self.ordering.permute(&g))
            }
            BaseOp::Multigrid(mg) => Ok(self
                .ordering
                .permute(&mg.apply(&self.ordering.unpermute(r))?)),
            BaseOp::Jacobi(inv) => Ok(r.iter().zip(inv).map(|(a, b)| a * b).collect()),
            BaseOp::Sgs => Ok(symmetric_gauss_seidel(&self.a, r)),
        }
    }

    /// `H_A r`. Base variants count one `H_A` application; the inner CG
    /// counts its own `A` and base applications.
    pub fn apply(&self, r: &[f64], tally: &mut OpTally) -> Result<Vec<f64>> {
        check_len(self.dim(), r.len())?;
        match self.spec {
            HaSpec::Base(_) => self.apply_base(r, tally),
            HaSpec::InnerCg { steps, .. } => self.inner_cg(r, steps, tally),
        }
    }

    fn inner_cg(&self, b: &[f64], steps: usize, tally: &mut OpTally) -> Result<Vec<f64>> {
        let n = b.len();
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut z = self.apply_base(&r, tally)?;
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for step in 0..steps {
            if rz <= 0.0 {
                break;
            }
            tally.a_apps += 1;
            let ap = self.a.mul_vec(&p)?;
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            axpy(alpha, &p, &mut x);
            if step + 1 == steps {
                break;
            }
            axpy(-alpha, &ap, &mut r);
            z = self.apply_base(&r, tally)?;
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
        Ok(x)
    }
}

/// `(D + U)⁻¹ D (D + L)⁻¹ r`: one forward and one backward sweep from zero.
fn symmetric_gauss_seidel(a: &CsrMatrix, r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let mut x = vec![0.0; n];
    let diag = a.diagonal();
    for i in 0..n {
        let s: f64 = a
            .row(i)
            .filter(|&(j, _)| j != i)
            .map(|(j, v)| v * x[j])
            .sum();
        x[i] = (r[i] - s) / diag[i];
    }
    for i in (0..n).rev() {
        let s: f64 = a
            .row(i)
            .filter(|&(j, _)| j != i)
            .map(|(j, v)| v * x[j])
            .sum();
        x[i] = (r[i] - s) / diag[i];
    }
    x
}

/// `H = diag(H_A, H_S)` on the saddle space.
#[derive(Debug, Clone)]
pub struct BlockPreconditioner {
    pub ha: APreconditioner,
    pub hs: SchurPreconditioner,
}

impl BlockPreconditioner {
    pub fn new(ha: APreconditioner, hs: SchurPreconditioner) -> Self {
        Self { ha, hs }
    }

    pub fn n_u(&self) -> usize {
        self.ha.dim()
    }

    pub fn dim(&self) -> usize {
        self.ha.dim() + self.hs.dim()
    }

    /// `H (A_ε x)` given `first = (A_ε x)_1` and the pre-image `x`. The
    /// second block of `A_ε x` only depends on `x`, so `H_S` acts through
    /// [`SchurPreconditioner::saddle_image`].
    pub fn apply_image(&self, first: &[f64], x: &[f64], tally: &mut OpTally) -> Result<Vec<f64>> {
        check_len(self.n_u(), first.len())?;
        check_len(self.dim(), x.len())?;
        let n = self.hs.dim();
        let mut out = self.ha.apply(first, tally)?;
        let (v, w) = x.split_at(self.n_u());
        out.extend(self.hs.saddle_image(&v[..n], w)?);
        Ok(out)
    }

    /// `H (F - A_ε x)` for a right-hand side `F = (f, 0)`, given
    /// `first = f - (A_ε x)_1`.
    pub fn apply_residual(
        &self,
        first: &[f64],
        x: &[f64],
        tally: &mut OpTally,
    ) -> Result<Vec<f64>> {
        let mut out = self.apply_image(first, x, tally)?;
        out[self.n_u()..].iter_mut().for_each(|v| *v = -*v);
        Ok(out)
    }
}
