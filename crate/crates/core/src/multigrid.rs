//! Geometric multigrid V(1,1) cycle for the Dirichlet Laplacian on the
//! structured mesh. Used as a cheap `H_A`.
//!
//! Every level stores vectors on the full `(M+1)²` node grid with zero
//! boundary values, so the stencil needs no boundary tests. The P1 coarse
//! operator for nested meshes is again the 5-point stencil, which is what the
//! smoother and residual use on every level.

use crate::banded::BandCholesky;
use crate::error::{check_len, Error, Result};
use crate::sparse::TripletBuilder;

#[derive(Debug, Clone)]
struct Level {
    cells: usize,
}

impl Level {
    fn stride(&self) -> usize {
        self.cells + 1
    }

    fn len(&self) -> usize {
        self.stride() * self.stride()
    }

    fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let s = self.stride();
        let mut r = vec![0.0; self.len()];
        for j in 1..self.cells {
            for i in 1..self.cells {
                let k = j * s + i;
                r[k] = b[k] - (4.0 * x[k] - x[k - 1] - x[k + 1] - x[k - s] - x[k + s]);
            }
        }
        r
    }

    fn relax(&self, x: &mut [f64], b: &[f64], k: usize) {
        let s = self.stride();
        x[k] = 0.25 * (b[k] + x[k - 1] + x[k + 1] + x[k - s] + x[k + s]);
    }

    fn forward_gs(&self, x: &mut [f64], b: &[f64]) {
        let s = self.stride();
        for j in 1..self.cells {
            for i in 1..self.cells {
                self.relax(x, b, j * s + i);
            }
        }
    }

    fn backward_gs(&self, x: &mut [f64], b: &[f64]) {
        let s = self.stride();
        for j in (1..self.cells).rev() {
            for i in (1..self.cells).rev() {
                self.relax(x, b, j * s + i);
            }
        }
    }
}

/// V(1,1) cycle with forward Gauss-Seidel pre-smoothing and backward
/// Gauss-Seidel post-smoothing. The cycle is a symmetric positive definite
/// linear operator.
#[derive(Debug, Clone)]
pub struct Multigrid {
    levels: Vec<Level>,
    coarse: BandCholesky,
}

impl Multigrid {
    /// Hierarchy for a `cells × cells` mesh; coarsens while the cell count is
    /// even and above 2.
    pub fn new(cells: usize) -> Result<Self> {
        if cells < 2 {
            return Err(Error::InvalidMesh(format!(
                "multigrid needs at least 2 cells, got {cells}"
            )));
        }
        let mut levels = vec![Level { cells }];
        let mut c = cells;
        while c.is_multiple_of(2) && c >= 4 {
            c /= 2;
            levels.push(Level { cells: c });
        }
        let coarse = BandCholesky::factor(&five_point(levels.last().unwrap().cells))?;
        Ok(Self { levels, coarse })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn cells(&self) -> usize {
        self.levels[0].cells
    }

    /// One cycle from a zero initial guess; input and output in grid order of
    /// interior nodes.
    pub fn apply(&self, r: &[f64]) -> Result<Vec<f64>> {
        let m = self.cells();
        check_len((m - 1) * (m - 1), r.len())?;
        let s = m + 1;
        let mut b = vec![0.0; s * s];
        for j in 1..m {
            for i in 1..m {
                b[j * s + i] = r[(j - 1) * (m - 1) + (i - 1)];
            }
        }
        let x = self.cycle(0, &b)?;
        let mut out = vec![0.0; r.len()];
        for j in 1..m {
            for i in 1..m {
                out[(j - 1) * (m - 1) + (i - 1)] = x[j * s + i];
            }
        }
        Ok(out)
    }

    fn cycle(&self, l: usize, b: &[f64]) -> Result<Vec<f64>> {
        let level = &self.levels[l];
        if l + 1 == self.levels.len() {
            return self.coarse_solve(level, b);
        }
        let mut x = vec![0.0; level.len()];
        level.forward_gs(&mut x, b);
        let r = level.residual(&x, b);
        let coarse = &self.levels[l + 1];
        let rc = restrict(level, coarse, &r);
        let ec = self.cycle(l + 1, &rc)?;
        prolong_add(level, coarse, &ec, &mut x);
        level.backward_gs(&mut x, b);
        Ok(x)
    }

    fn coarse_solve(&self, level: &Level, b: &[f64]) -> Result<Vec<f64>> {
        let m = level.cells;
        let s = level.stride();
        let mut inner = Vec::with_capacity((m - 1) * (m - 1));
        for j in 1..m {
            for i in 1..m {
                inner.push(b[j * s + i]);
            }
        }
        self.coarse.solve_in_place(&mut inner)?;
        let mut x = vec![0.0; level.len()];
        for j in 1..m {
            for i in 1..m {
                x[j * s + i] = inner[(j - 1) * (m - 1) + (i - 1)];
            }
        }
        Ok(x)
    }
}

fn five_point(cells: usize) -> crate::sparse::CsrMatrix {
    let n = cells - 1;
    let mut t = TripletBuilder::new(n * n, n * n);
    for j in 0..n {
        for i in 0..n {
            let k = j * n + i;
            t.push(k, k, 4.0);
            if i + 1 < n {
                t.push(k, k + 1, -1.0);
                t.push(k + 1, k, -1.0);
            }
            if j + 1 < n {
                t.push(k, k + n, -1.0);
                t.push(k + n, k, -1.0);
            }
        }
    }
    t.build()
}

// Fine node (2I, 2J) coincides with coarse (I, J). Edge midpoints take the
// average of their two coarse endpoints; the diagonal edges run from
// lower-left to upper-right.
const CHILDREN: [(isize, isize, f64); 7] = [
    (0, 0, 1.0),
    (1, 0, 0.5),
    (-1, 0, 0.5),
    (0, 1, 0.5),
    (0, -1, 0.5),
    (1, 1, 0.5),
    (-1, -1, 0.5),
];

fn restrict(fine: &Level, coarse: &Level, r: &[f64]) -> Vec<f64> {
    let fs = fine.stride() as isize;
    let cs = coarse.stride();
    let mut rc = vec![0.0; coarse.len()];
    for cj in 1..coarse.cells {
        for ci in 1..coarse.cells {
            let centre = (2 * cj) as isize * fs + (2 * ci) as isize;
            rc[cj * cs + ci] = CHILDREN
                .iter()
                .map(|&(di, dj, w)| w * r[(centre + dj * fs + di) as usize])
                .sum();
        }
    }
    rc
}

fn prolong_add(fine: &Level, coarse: &Level, ec: &[f64], x: &mut [f64]) {
    let fs = fine.stride() as isize;
    let cs = coarse.stride();
    for cj in 1..coarse.cells {
        for ci in 1..coarse.cells {
            let v = ec[cj * cs + ci];
            let centre = (2 * cj) as isize * fs + (2 * ci) as isize;
            for &(di, dj, w) in &CHILDREN {
                x[(centre + dj * fs + di) as usize] += w * v;
            }
        }
    }
}
