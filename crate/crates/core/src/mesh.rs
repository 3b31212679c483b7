//! Structured triangulation of the unit square, square inclusion layouts and
//! the node ordering that puts inclusion unknowns first.
//!
//! Grid node `(i, j)` sits at `(i h, j h)` with `0 <= i, j <= M`. Every cell is
//! split by its lower-left to upper-right diagonal. Dirichlet nodes are
//! eliminated, so the unknowns are the `(M - 1)²` interior nodes.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::random::{seeded_rng, Stream};

/// Grid coordinates `(i, j)` of a mesh node.
pub type Node = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuredMesh {
    cells: usize,
}

impl StructuredMesh {
    /// Mesh with `cells` cells per side; requires `cells >= 2`.
    pub fn new(cells: usize) -> Result<Self> {
        if cells < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 cells per side, got {cells}"
            )));
        }
        Ok(Self { cells })
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }

    /// Number of interior (non-Dirichlet) nodes, `(M - 1)²`.
    pub fn num_interior(&self) -> usize {
        (self.cells - 1) * (self.cells - 1)
    }

    pub fn is_boundary(&self, (i, j): Node) -> bool {
        i == 0 || j == 0 || i == self.cells || j == self.cells
    }

    pub fn coords(&self, (i, j): Node) -> [f64; 2] {
        [i as f64 * self.h(), j as f64 * self.h()]
    }

    /// Row-major index among interior nodes, `None` on the boundary.
    pub fn interior_index(&self, node: Node) -> Option<usize> {
        if self.is_boundary(node) {
            None
        } else {
            Some((node.1 - 1) * (self.cells - 1) + (node.0 - 1))
        }
    }

    pub fn interior_node(&self, idx: usize) -> Node {
        let w = self.cells - 1;
        (idx % w + 1, idx / w + 1)
    }

    /// The two triangles of cell `(ci, cj)`, vertices counter-clockwise.
    pub fn cell_triangles(&self, ci: usize, cj: usize) -> [[Node; 3]; 2] {
        let ll = (ci, cj);
        let lr = (ci + 1, cj);
        let ur = (ci + 1, cj + 1);
        let ul = (ci, cj + 1);
        [[ll, lr, ur], [ll, ur, ul]]
    }

    /// All triangles together with the cell that owns them.
    pub fn triangles(&self) -> impl Iterator<Item = ((usize, usize), [Node; 3])> + '_ {
        (0..self.cells).flat_map(move |cj| {
            (0..self.cells).flat_map(move |ci| {
                self.cell_triangles(ci, cj)
                    .into_iter()
                    .map(move |t| ((ci, cj), t))
            })
        })
    }
}

/// One square inclusion aligned with the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inclusion {
    /// Lower-left corner node.
    pub origin: Node,
    /// Side length in cells.
    pub cells: usize,
    /// Coefficient parameter: `σ = 1 + 1/ε` inside the inclusion.
    pub eps: f64,
}

impl Inclusion {
    /// Number of nodes of the closed square, `(k + 1)²`.
    pub fn num_nodes(&self) -> usize {
        (self.cells + 1) * (self.cells + 1)
    }

    /// Nodes of the closure in row-major order; this is the local ordering of
    /// the inclusion block.
    pub fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        let (x0, y0) = self.origin;
        (0..=self.cells).flat_map(move |b| (0..=self.cells).map(move |a| (x0 + a, y0 + b)))
    }

    pub fn local_index(&self, (i, j): Node) -> Option<usize> {
        let (x0, y0) = self.origin;
        let k = self.cells;
        if i >= x0 && i <= x0 + k && j >= y0 && j <= y0 + k {
            Some((j - y0) * (k + 1) + (i - x0))
        } else {
            None
        }
    }

    pub fn contains_cell(&self, (ci, cj): (usize, usize)) -> bool {
        let (x0, y0) = self.origin;
        ci >= x0 && ci < x0 + self.cells && cj >= y0 && cj < y0 + self.cells
    }

    /// `d_s = |D_s|^{1/2}`, the side length.
    pub fn side(&self, h: f64) -> f64 {
        self.cells as f64 * h
    }
}

/// The set of inclusions placed on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionLayout {
    mesh: StructuredMesh,
    cells_per_inclusion: usize,
    periodic_count: usize,
    seed: Option<u64>,
    inclusions: Vec<Inclusion>,
}

/// Reproducibility record for a layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutManifest {
    pub cells_per_side: usize,
    pub cells_per_inclusion: usize,
    pub num_inclusions: usize,
    pub seed: Option<u64>,
    pub eps: Vec<f64>,
    pub origins: Vec<Node>,
}

impl InclusionLayout {
    /// Builds a layout from explicit inclusions, checking every invariant.
    pub fn from_inclusions(mesh: StructuredMesh, inclusions: Vec<Inclusion>) -> Result<Self> {
        let k = inclusions.first().map_or(0, |s| s.cells);
        let layout = Self {
            mesh,
            cells_per_inclusion: k,
            periodic_count: inclusions.len(),
            seed: None,
            inclusions,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn mesh(&self) -> &StructuredMesh {
        &self.mesh
    }

    pub fn inclusions(&self) -> &[Inclusion] {
        &self.inclusions
    }

    pub fn cells_per_inclusion(&self) -> usize {
        self.cells_per_inclusion
    }

    /// Inclusion count of the full periodic lattice this layout derives from.
    pub fn periodic_count(&self) -> usize {
        self.periodic_count
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn num_inclusions(&self) -> usize {
        self.inclusions.len()
    }

    /// `n = Σ n_s`
    pub fn num_inclusion_nodes(&self) -> usize {
        self.inclusions.iter().map(Inclusion::num_nodes).sum()
    }

    /// `n_0 = N - n`
    pub fn num_exterior_nodes(&self) -> usize {
        self.mesh.num_interior() - self.num_inclusion_nodes()
    }

    pub fn eps(&self) -> Vec<f64> {
        self.inclusions.iter().map(|s| s.eps).collect()
    }

    pub fn eps_min(&self) -> f64 {
        self.inclusions
            .iter()
            .map(|s| s.eps)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn eps_max(&self) -> f64 {
        self.inclusions.iter().map(|s| s.eps).fold(0.0, f64::max)
    }

    /// Index of the inclusion owning a cell, if any.
    pub fn cell_owner(&self, cell: (usize, usize)) -> Option<usize> {
        self.inclusions.iter().position(|s| s.contains_cell(cell))
    }

    pub fn manifest(&self) -> LayoutManifest {
        LayoutManifest {
            cells_per_side: self.mesh.cells_per_side(),
            cells_per_inclusion: self.cells_per_inclusion,
            num_inclusions: self.num_inclusions(),
            seed: self.seed,
            eps: self.eps(),
            origins: self.inclusions.iter().map(|s| s.origin).collect(),
        }
    }

    pub fn from_manifest(manifest: &LayoutManifest) -> Result<Self> {
        check_len(manifest.origins.len(), manifest.eps.len())?;
        let mesh = StructuredMesh::new(manifest.cells_per_side)?;
        let inclusions = manifest
            .origins
            .iter()
            .zip(&manifest.eps)
            .map(|(&origin, &eps)| Inclusion {
                origin,
                cells: manifest.cells_per_inclusion,
                eps,
            })
            .collect();
        let mut layout = Self::from_inclusions(mesh, inclusions)?;
        layout.seed = manifest.seed;
        Ok(layout)
    }

    /// Checks closure disjointness, clearance from `∂Ω` and `ε ∈ (0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let m = self.mesh.cells_per_side();
        let mut owner = vec![usize::MAX; (m + 1) * (m + 1)];
        for (s, inc) in self.inclusions.iter().enumerate() {
            if inc.cells == 0 {
                return Err(Error::Layout(format!("inclusion {s} has zero size")));
            }
            if !(inc.eps > 0.0 && inc.eps <= 1.0) {
                return Err(Error::Parameter(format!(
                    "inclusion {s}: eps = {} outside (0, 1]",
                    inc.eps
                )));
            }
            for node in inc.nodes() {
                if node.0 > m || node.1 > m || self.mesh.is_boundary(node) {
                    return Err(Error::Layout(format!(
                        "inclusion {s} touches the outer boundary at {node:?}"
                    )));
                }
                let slot = &mut owner[node.1 * (m + 1) + node.0];
                if *slot != usize::MAX {
                    return Err(Error::Layout(format!(
                        "inclusions {} and {s} share node {node:?}",
                        *slot
                    )));
                }
                *slot = s;
            }
        }
        Ok(())
    }
}

/// Regular lattice of `(M / 2k)²` inclusions of side `d = k h`, spaced `d`
/// apart with a margin of `d / 2` to the boundary. All `ε_s` start at 1.
pub fn place_periodic(mesh: &StructuredMesh, k: usize) -> Result<InclusionLayout> {
    let m = mesh.cells_per_side();
    if k < 2 || !k.is_multiple_of(2) {
        return Err(Error::Layout(format!(
            "inclusion side must be an even number of cells so the d/2 margin is grid-aligned, got {k}"
        )));
    }
    if !m.is_multiple_of(2 * k) {
        return Err(Error::Layout(format!(
            "{m} cells per side is not divisible by the period 2k = {}",
            2 * k
        )));
    }
    let per_side = m / (2 * k);
    let margin = k / 2;
    let inclusions: Vec<Inclusion> = (0..per_side)
        .flat_map(|b| {
            (0..per_side).map(move |a| Inclusion {
                origin: (margin + 2 * k * a, margin + 2 * k * b),
                cells: k,
                eps: 1.0,
            })
        })
        .collect();
    let count = inclusions.len();
    let mut layout = InclusionLayout::from_inclusions(*mesh, inclusions)?;
    layout.periodic_count = count;
    Ok(layout)
}

/// Periodic lattice with `removal_count` inclusions removed at random.
pub fn place_random(
    mesh: &StructuredMesh,
    k: usize,
    removal_count: usize,
    seed: u64,
) -> Result<InclusionLayout> {
    let mut layout = place_periodic(mesh, k)?;
    let total = layout.inclusions.len();
    if removal_count >= total {
        return Err(Error::Layout(format!(
            "cannot remove {removal_count} of {total} inclusions"
        )));
    }
    let mut rng = seeded_rng(seed, Stream::Removal);
    let mut removed = vec![false; total];
    for idx in sample(&mut rng, total, removal_count) {
        removed[idx] = true;
    }
    let mut keep = removed.iter().map(|r| !r);
    layout.inclusions.retain(|_| keep.next().unwrap());
    layout.seed = Some(seed);
    Ok(layout)
}

/// Default number of removed inclusions for random layouts: about a tenth
/// of the lattice (26 of 256 on the 64×64 mesh with 2×2 inclusions).
pub fn default_removal(periodic_count: usize) -> usize {
    (periodic_count as f64 * 26.0 / 256.0).round() as usize
}

/// Upper end of the random coefficient segment.
pub const DEFAULT_EPS_UPPER: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EpsilonMode {
    /// Every inclusion gets the same `ε`.
    Uniform(f64),
    /// `ε_s` uniform on `[min, max]`.
    Random { min: f64, max: f64 },
}

impl EpsilonMode {
    pub fn random(min: f64) -> Self {
        EpsilonMode::Random {
            min,
            max: DEFAULT_EPS_UPPER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EpsilonMode::Uniform(eps) if eps > 0.0 && eps <= 1.0 => Ok(()),
            EpsilonMode::Uniform(eps) => Err(Error::Parameter(format!(
                "uniform eps = {eps} outside (0, 1]"
            ))),
            EpsilonMode::Random { min, max } if min > 0.0 && min <= max && max <= 1.0 => Ok(()),
            EpsilonMode::Random { min, max } => Err(Error::Parameter(format!(
                "random eps segment [{min}, {max}] must satisfy 0 < min <= max <= 1"
            ))),
        }
    }
}

/// Returns a copy of `layout` with coefficients drawn according to `mode`.
pub fn assign_epsilon(
    layout: &InclusionLayout,
    mode: EpsilonMode,
    seed: u64,
) -> Result<InclusionLayout> {
    mode.validate()?;
    let mut out = layout.clone();
    match mode {
        EpsilonMode::Uniform(eps) => out.inclusions.iter_mut().for_each(|s| s.eps = eps),
        EpsilonMode::Random { min, max } => {
            let mut rng = seeded_rng(seed, Stream::Epsilon);
            for s in &mut out.inclusions {
                s.eps = if min == max {
                    max
                } else {
                    rng.random_range(min..=max)
                };
            }
        }
    }
    Ok(out)
}

/// Bijection between interior-node indices and system indices. System order
/// lists the nodes of inclusion 1, …, inclusion m (each in local row-major
/// order) followed by the exterior nodes in grid order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderingMap {
    /// `to_system[interior] = system`
    to_system: Vec<usize>,
    /// `to_interior[system] = interior`
    to_interior: Vec<usize>,
    /// Start of each inclusion block; the last entry is `n`.
    offsets: Vec<usize>,
}

impl OrderingMap {
    pub fn new(layout: &InclusionLayout) -> Self {
        let mesh = layout.mesh();
        let total = mesh.num_interior();
        let mut to_system = vec![usize::MAX; total];
        let mut to_interior = Vec::with_capacity(total);
        let mut offsets = vec![0];
        for inc in layout.inclusions() {
            for node in inc.nodes() {
                let idx = mesh.interior_index(node).expect("validated layout");
                to_system[idx] = to_interior.len();
                to_interior.push(idx);
            }
            offsets.push(to_interior.len());
        }
        for (idx, slot) in to_system.iter_mut().enumerate() {
            if *slot == usize::MAX {
                *slot = to_interior.len();
                to_interior.push(idx);
            }
        }
        Self {
            to_system,
            to_interior,
            offsets,
        }
    }

    pub fn len(&self) -> usize {
        self.to_system.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_system.is_empty()
    }

    pub fn system_index(&self, interior: usize) -> usize {
        self.to_system[interior]
    }

    pub fn interior_index(&self, system: usize) -> usize {
        self.to_interior[system]
    }

    /// `perm[interior] = system`, suitable for [`crate::sparse::CsrMatrix::permute_symmetric`].
    pub fn forward(&self) -> &[usize] {
        &self.to_system
    }

    pub fn inverse(&self) -> &[usize] {
        &self.to_interior
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn num_inclusion_nodes(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Grid-ordered vector to system order.
    pub fn permute(&self, grid: &[f64]) -> Vec<f64> {
        self.to_interior.iter().map(|&g| grid[g]).collect()
    }

    /// System-ordered vector to grid order.
    pub fn unpermute(&self, system: &[f64]) -> Vec<f64> {
        self.to_system.iter().map(|&s| system[s]).collect()
    }
}
