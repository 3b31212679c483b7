//! Assembly of the P1 finite-element blocks of the saddle-point system.
//!
//! All matrices live in system ordering (see [`OrderingMap`]). The inclusion
//! blocks `B_s` and `M_s` are kept in their local numbering and stored per
//! inclusion; `Q_s` is never formed, only its generating vector `m_s = M_s e_s`.

use crate::error::{check_len, Error, Result};
use crate::mesh::{InclusionLayout, Node, OrderingMap, StructuredMesh};
use crate::sparse::{CsrMatrix, TripletBuilder};
use crate::tally::OpTally;
use crate::vecops::dot;

/// Exact P1 stiffness of a triangle: `K_ab = ∫ ∇φ_a · ∇φ_b`.
pub fn element_stiffness(p: [[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let area2 =
        (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    // ∇φ_a = (y_b - y_c, x_c - x_b) / (2|T|) for (a, b, c) cyclic
    let grads: [[f64; 2]; 3] = std::array::from_fn(|a| {
        let b = (a + 1) % 3;
        let c = (a + 2) % 3;
        [(p[b][1] - p[c][1]) / area2, (p[c][0] - p[b][0]) / area2]
    });
    let area = 0.5 * area2.abs();
    std::array::from_fn(|a| {
        std::array::from_fn(|b| area * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]))
    })
}

/// Consistent P1 mass matrix of a triangle.
pub fn element_mass(p: [[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let area = 0.5
        * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
            .abs();
    std::array::from_fn(|a| std::array::from_fn(|b| if a == b { area / 6.0 } else { area / 12.0 }))
}

fn triangle_coords(mesh: &StructuredMesh, t: [Node; 3]) -> [[f64; 2]; 3] {
    t.map(|n| mesh.coords(n))
}

/// Stiffness of `∫ w(T) ∇u · ∇v` with Dirichlet nodes eliminated, where the
/// weight is constant per cell.
fn assemble_weighted<F>(mesh: &StructuredMesh, ordering: &OrderingMap, weight: F) -> CsrMatrix
where
    F: Fn((usize, usize)) -> f64,
{
    let n = mesh.num_interior();
    let mut t = TripletBuilder::new(n, n);
    for (cell, tri) in mesh.triangles() {
        let w = weight(cell);
        let k = element_stiffness(triangle_coords(mesh, tri));
        let idx = tri.map(|node| mesh.interior_index(node).map(|i| ordering.system_index(i)));
        for a in 0..3 {
            let Some(ia) = idx[a] else { continue };
            for b in 0..3 {
                let Some(ib) = idx[b] else { continue };
                t.push(ia, ib, w * k[a][b]);
            }
        }
    }
    t.build()
}

/// Dirichlet stiffness `A` of the Laplacian.
pub fn assemble_stiffness(mesh: &StructuredMesh, ordering: &OrderingMap) -> CsrMatrix {
    assemble_weighted(mesh, ordering, |_| 1.0)
}

/// Stiffness `A_σ` of `∫ σ ∇u · ∇v` with `σ = 1 + 1/ε_s` inside inclusion `s`.
pub fn assemble_sigma_matrix(layout: &InclusionLayout, ordering: &OrderingMap) -> CsrMatrix {
    assemble_weighted(layout.mesh(), ordering, |cell| {
        match layout.cell_owner(cell) {
            Some(s) => 1.0 + 1.0 / layout.inclusions()[s].eps,
            None => 1.0,
        }
    })
}

/// Load vector `f̄_i = ∫ f φ_i` by one-point barycentre quadrature per triangle.
pub fn assemble_load<F>(mesh: &StructuredMesh, ordering: &OrderingMap, f: F) -> Vec<f64>
where
    F: Fn([f64; 2]) -> f64,
{
    let mut out = vec![0.0; mesh.num_interior()];
    let area = 0.5 * mesh.h() * mesh.h();
    for (_, tri) in mesh.triangles() {
        let p = triangle_coords(mesh, tri);
        let centre = [
            (p[0][0] + p[1][0] + p[2][0]) / 3.0,
            (p[0][1] + p[1][1] + p[2][1]) / 3.0,
        ];
        let share = f(centre) * area / 3.0;
        for node in tri {
            if let Some(i) = mesh.interior_index(node) {
                out[ordering.system_index(i)] += share;
            }
        }
    }
    out
}

/// The rank-one block `Q_s = (1/d_s²) m_s m_sᵀ` with `m_s = M_s e_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneBlock {
    /// Integrals of the local basis functions over the inclusion.
    pub m: Vec<f64>,
    /// Side length, so `d² = |D_s|`.
    pub d: f64,
}

impl RankOneBlock {
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Discrete mean weight `(m · p) / d²`.
    pub fn mean(&self, p: &[f64]) -> f64 {
        dot(&self.m, p) / (self.d * self.d)
    }

    /// `y += alpha * Q_s p`
    pub fn add_q(&self, alpha: f64, p: &[f64], y: &mut [f64]) {
        let c = alpha * self.mean(p);
        for (yi, mi) in y.iter_mut().zip(&self.m) {
            *yi += c * mi;
        }
    }

    pub fn apply_q(&self, p: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; p.len()];
        self.add_q(1.0, p, &mut y);
        y
    }
}

/// Per-inclusion matrices in local numbering.
#[derive(Debug, Clone)]
pub struct InclusionBlock {
    /// Neumann stiffness over the inclusion.
    pub stiffness: CsrMatrix,
    /// Consistent mass matrix over the inclusion.
    pub mass: CsrMatrix,
    pub rank_one: RankOneBlock,
}

/// Assembles `B_s`, `M_s` and the rank-one data for every inclusion.
pub fn assemble_inclusion_blocks(layout: &InclusionLayout) -> Vec<InclusionBlock> {
    let mesh = layout.mesh();
    let h = mesh.h();
    layout
        .inclusions()
        .iter()
        .map(|inc| {
            let ns = inc.num_nodes();
            let mut kb = TripletBuilder::new(ns, ns);
            let mut mb = TripletBuilder::new(ns, ns);
            let (x0, y0) = inc.origin;
            for cj in y0..y0 + inc.cells {
                for ci in x0..x0 + inc.cells {
                    for tri in mesh.cell_triangles(ci, cj) {
                        let p = triangle_coords(mesh, tri);
                        let k = element_stiffness(p);
                        let mm = element_mass(p);
                        let idx = tri.map(|n| inc.local_index(n).expect("cell inside inclusion"));
                        for a in 0..3 {
                            for b in 0..3 {
                                kb.push(idx[a], idx[b], k[a][b]);
                                mb.push(idx[a], idx[b], mm[a][b]);
                            }
                        }
                    }
                }
            }
            let mass = mb.build();
            let m = mass.mul_vec(&vec![1.0; ns]).expect("square block");
            InclusionBlock {
                stiffness: kb.build(),
                mass,
                rank_one: RankOneBlock { m, d: inc.side(h) },
            }
        })
        .collect()
}

/// Matrix-free saddle operator
/// `A_ε = [[A, Bᵀ], [B, -Σ_ε B_D - Q]]` with `B = [B_D 0]`.
#[derive(Debug, Clone)]
pub struct SaddleOperator {
    a: CsrMatrix,
    blocks: Vec<InclusionBlock>,
    eps: Vec<f64>,
    offsets: Vec<usize>,
}

impl SaddleOperator {
    pub fn new(
        a: CsrMatrix,
        blocks: Vec<InclusionBlock>,
        eps: Vec<f64>,
        offsets: Vec<usize>,
    ) -> Result<Self> {
        check_len(blocks.len(), eps.len())?;
        check_len(blocks.len() + 1, offsets.len())?;
        for (s, b) in blocks.iter().enumerate() {
            check_len(offsets[s + 1] - offsets[s], b.rank_one.len())?;
        }
        if *offsets.last().unwrap() > a.nrows() {
            return Err(Error::ContractViolation(
                "inclusion blocks exceed the primal dimension".into(),
            ));
        }
        Ok(Self {
            a,
            blocks,
            eps,
            offsets,
        })
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn blocks(&self) -> &[InclusionBlock] {
        &self.blocks
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Primal dimension `N`.
    pub fn n_u(&self) -> usize {
        self.a.nrows()
    }

    /// Inclusion dimension `n`.
    pub fn n_p(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn dim(&self) -> usize {
        self.n_u() + self.n_p()
    }

    pub fn block_range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    /// Overwrites the rank-one data; used to build deliberately broken
    /// operators for regression checks.
    pub fn set_rank_one(&mut self, s: usize, rank_one: RankOneBlock) -> Result<()> {
        check_len(self.blocks[s].rank_one.len(), rank_one.len())?;
        self.blocks[s].rank_one = rank_one;
        Ok(())
    }

    pub fn apply_a(&self, x: &[f64], tally: &mut OpTally) -> Result<Vec<f64>> {
        tally.a_apps += 1;
        self.a.mul_vec(x)
    }

    /// `y = B_D p` on the first `n` entries.
    pub fn apply_bd(&self, p: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_p(), p.len())?;
        let mut y = vec![0.0; p.len()];
        for (s, b) in self.blocks.iter().enumerate() {
            let r = self.block_range(s);
            b.stiffness.mul_vec_into(&p[r.clone()], &mut y[r]);
        }
        Ok(y)
    }

    /// `y = Σ_ε B_D p`
    pub fn apply_sigma_bd(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.apply_bd(p)?;
        for s in 0..self.blocks.len() {
            let e = self.eps[s];
            y[self.block_range(s)].iter_mut().for_each(|v| *v *= e);
        }
        Ok(y)
    }

    /// `y = Q p`
    pub fn apply_q(&self, p: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_p(), p.len())?;
        let mut y = vec![0.0; p.len()];
        for (s, b) in self.blocks.iter().enumerate() {
            let r = self.block_range(s);
            b.rank_one.add_q(1.0, &p[r.clone()], &mut y[r]);
        }
        Ok(y)
    }

    /// `Bᵀ w`: `B_D w` extended by zero to length `N`.
    pub fn apply_bt(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.apply_bd(w)?;
        y.resize(self.n_u(), 0.0);
        Ok(y)
    }

    /// `A_ε z` for `z = (v, w)`.
    pub fn apply(&self, z: &[f64], tally: &mut OpTally) -> Result<Vec<f64>> {
        check_len(self.dim(), z.len())?;
        let (v, w) = z.split_at(self.n_u());
        let mut out = vec![0.0; self.dim()];
        tally.a_apps += 1;
        {
            let (top, bottom) = out.split_at_mut(self.n_u());
            self.a.mul_vec_into(v, top);
            let mut tmp = Vec::new();
            for (s, b) in self.blocks.iter().enumerate() {
                let r = self.block_range(s);
                let ns = r.len();
                tmp.resize(ns, 0.0);
                // Bᵀ w contribution
                b.stiffness.mul_vec_into(&w[r.clone()], &mut tmp);
                for (o, t) in top[r.clone()].iter_mut().zip(&tmp) {
                    *o += t;
                }
                // B_s (v_s - ε_s w_s) - Q_s w_s
                let diff: Vec<f64> = v[r.clone()]
                    .iter()
                    .zip(&w[r.clone()])
                    .map(|(a, c)| a - self.eps[s] * c)
                    .collect();
                b.stiffness.mul_vec_into(&diff, &mut bottom[r.clone()]);
                b.rank_one.add_q(-1.0, &w[r.clone()], &mut bottom[r]);
            }
        }
        Ok(out)
    }
}

/// Assembled problem: mesh, layout, ordering and the saddle operator.
#[derive(Debug, Clone)]
pub struct SaddleProblem {
    pub layout: InclusionLayout,
    pub ordering: OrderingMap,
    pub op: SaddleOperator,
}

impl SaddleProblem {
    pub fn assemble(layout: &InclusionLayout) -> Result<Self> {
        layout.validate()?;
        let ordering = OrderingMap::new(layout);
        let a = assemble_stiffness(layout.mesh(), &ordering);
        let blocks = assemble_inclusion_blocks(layout);
        let op = SaddleOperator::new(a, blocks, layout.eps(), ordering.offsets().to_vec())?;
        Ok(Self {
            layout: layout.clone(),
            ordering,
            op,
        })
    }

    pub fn mesh(&self) -> &StructuredMesh {
        self.layout.mesh()
    }

    /// Load vector for a source `f` in system order.
    pub fn load<F: Fn([f64; 2]) -> f64>(&self, f: F) -> Vec<f64> {
        assemble_load(self.mesh(), &self.ordering, f)
    }

    pub fn sigma_matrix(&self) -> CsrMatrix {
        assemble_sigma_matrix(&self.layout, &self.ordering)
    }

    /// Inclusion variable from a primal solution:
    /// `p_s = (u_s - c_s) / ε_s` with `c_s` the `M_s`-weighted mean of `u_s`.
    pub fn recover_p_from_u(&self, u: &[f64]) -> Result<Vec<f64>> {
        recover_p_from_u(&self.op, u)
    }
}

/// See [`SaddleProblem::recover_p_from_u`].
pub fn recover_p_from_u(op: &SaddleOperator, u: &[f64]) -> Result<Vec<f64>> {
    check_len(op.n_u(), u.len())?;
    let mut p = vec![0.0; op.n_p()];
    for (s, b) in op.blocks().iter().enumerate() {
        let r = op.block_range(s);
        let c = b.rank_one.mean(&u[r.clone()]);
        let eps = op.eps()[s];
        for (pi, ui) in p[r.clone()].iter_mut().zip(&u[r]) {
            *pi = (ui - c) / eps;
        }
    }
    Ok(p)
}
