#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use saddle_core::mesh::{
    assign_epsilon, place_periodic, EpsilonMode, InclusionLayout, StructuredMesh,
};
use saddle_core::precond::{APreconditioner, BlockPreconditioner, HaSpec, SchurPreconditioner};
use saddle_core::SaddleProblem;

pub fn periodic(cells: usize, k: usize, mode: EpsilonMode, seed: u64) -> InclusionLayout {
    let mesh = StructuredMesh::new(cells).unwrap();
    assign_epsilon(&place_periodic(&mesh, k).unwrap(), mode, seed).unwrap()
}

pub fn problem(cells: usize, k: usize, mode: EpsilonMode) -> SaddleProblem {
    SaddleProblem::assemble(&periodic(cells, k, mode, 11)).unwrap()
}

pub fn ha(problem: &SaddleProblem, spec: &str) -> APreconditioner {
    APreconditioner::new(
        spec.parse::<HaSpec>().unwrap(),
        problem.op.stiffness(),
        problem.mesh(),
        &problem.ordering,
    )
    .unwrap()
}

pub fn block(problem: &SaddleProblem, spec: &str) -> BlockPreconditioner {
    BlockPreconditioner::new(ha(problem, spec), SchurPreconditioner::new(&problem.op))
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

/// Dense matrices assembled here from scratch, in system ordering, without the
/// library's element routines: P1 hat gradients on each right triangle are
/// written out by hand.
pub struct DenseOracle {
    pub a: DMatrix<f64>,
    pub a_sigma: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub eps_diag: DVector<f64>,
    pub n_u: usize,
    pub n_p: usize,
}

impl DenseOracle {
    pub fn new(problem: &SaddleProblem) -> Self {
        let layout = &problem.layout;
        let mesh = layout.mesh();
        let big_m = mesh.cells_per_side();
        let h = 1.0 / big_m as f64;
        let n_u = (big_m - 1) * (big_m - 1);
        let sys = |i: usize, j: usize| -> Option<usize> {
            if i == 0 || j == 0 || i == big_m || j == big_m {
                None
            } else {
                Some(
                    problem
                        .ordering
                        .system_index((j - 1) * (big_m - 1) + (i - 1)),
                )
            }
        };
        // Lower triangle (ll, lr, ur): gradients (-1,0), (1,-1), (0,1) over h;
        // upper triangle (ll, ur, ul): (0,-1), (1,0), (-1,1) over h. Area h²/2,
        // so K = ½ G Gᵀ independent of h.
        let lower = [[-1.0, 0.0], [1.0, -1.0], [0.0, 1.0]];
        let upper = [[0.0, -1.0], [1.0, 0.0], [-1.0, 1.0]];
        let local = |g: &[[f64; 2]; 3]| -> [[f64; 3]; 3] {
            let mut k = [[0.0; 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    k[a][b] = 0.5 * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                }
            }
            k
        };
        let kl = local(&lower);
        let ku = local(&upper);
        let area = 0.5 * h * h;
        let mass = |a: usize, b: usize| if a == b { area / 6.0 } else { area / 12.0 };

        let mut a = DMatrix::zeros(n_u, n_u);
        let mut a_sigma = DMatrix::zeros(n_u, n_u);
        let n_p = layout.num_inclusion_nodes();
        let mut bd = DMatrix::zeros(n_p, n_p);
        let mut mm: DMatrix<f64> = DMatrix::zeros(n_p, n_p);
        let mut eps_diag = DVector::zeros(n_p);
        let mut offset = 0;
        let mut offsets = Vec::new();
        for inc in layout.inclusions() {
            offsets.push(offset);
            offset += (inc.cells + 1) * (inc.cells + 1);
        }
        for cj in 0..big_m {
            for ci in 0..big_m {
                let owner = layout.inclusions().iter().position(|inc| {
                    ci >= inc.origin.0
                        && ci < inc.origin.0 + inc.cells
                        && cj >= inc.origin.1
                        && cj < inc.origin.1 + inc.cells
                });
                let sigma = owner.map_or(1.0, |s| 1.0 + 1.0 / layout.inclusions()[s].eps);
                let tris = [
                    ([(ci, cj), (ci + 1, cj), (ci + 1, cj + 1)], &kl),
                    ([(ci, cj), (ci + 1, cj + 1), (ci, cj + 1)], &ku),
                ];
                for (nodes, k) in tris {
                    for p in 0..3 {
                        for q in 0..3 {
                            if let (Some(r), Some(c)) =
                                (sys(nodes[p].0, nodes[p].1), sys(nodes[q].0, nodes[q].1))
                            {
                                a[(r, c)] += k[p][q];
                                a_sigma[(r, c)] += sigma * k[p][q];
                            }
                        }
                    }
                    if let Some(s) = owner {
                        let inc = &layout.inclusions()[s];
                        let loc = |(i, j): (usize, usize)| {
                            offsets[s] + (j - inc.origin.1) * (inc.cells + 1) + (i - inc.origin.0)
                        };
                        for p in 0..3 {
                            for q in 0..3 {
                                bd[(loc(nodes[p]), loc(nodes[q]))] += k[p][q];
                                mm[(loc(nodes[p]), loc(nodes[q]))] += mass(p, q);
                            }
                        }
                    }
                }
            }
        }
        let mut q = DMatrix::zeros(n_p, n_p);
        for (s, inc) in layout.inclusions().iter().enumerate() {
            let ns = (inc.cells + 1) * (inc.cells + 1);
            let o = offsets[s];
            let ones = DVector::from_element(ns, 1.0);
            let m: DVector<f64> = mm.view((o, o), (ns, ns)) * ones;
            let d2 = (inc.cells as f64 * h).powi(2);
            q.view_mut((o, o), (ns, ns))
                .copy_from(&(&m * m.transpose() / d2));
            for i in 0..ns {
                eps_diag[o + i] = inc.eps;
            }
        }
        Self {
            a,
            a_sigma,
            bd,
            q,
            eps_diag,
            n_u,
            n_p,
        }
    }

    pub fn saddle(&self) -> DMatrix<f64> {
        let (nu, n) = (self.n_u, self.n_p);
        let mut out = DMatrix::zeros(nu + n, nu + n);
        out.view_mut((0, 0), (nu, nu)).copy_from(&self.a);
        out.view_mut((0, nu), (n, n)).copy_from(&self.bd);
        out.view_mut((nu, 0), (n, n)).copy_from(&self.bd);
        let sigma_bd = DMatrix::from_diagonal(&self.eps_diag) * &self.bd;
        out.view_mut((nu, nu), (n, n))
            .copy_from(&(-(sigma_bd + &self.q)));
        out
    }

    /// Exact Schur complement `Σ_ε B_D + Q + B_D (A⁻¹)_{DD} B_D`.
    pub fn schur(&self) -> DMatrix<f64> {
        let n = self.n_p;
        let ainv = self.a.clone().try_inverse().unwrap();
        let sigma_bd = DMatrix::from_diagonal(&self.eps_diag) * &self.bd;
        sigma_bd + &self.q + &self.bd * ainv.view((0, 0), (n, n)) * &self.bd
    }
}
