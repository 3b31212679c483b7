//! Sweep configuration: a flat TOML file whose keys are lists of axis values.
//!
//! ```toml
//! cells = [64]
//! k = [2]
//! layout = ["periodic", "random"]
//! eps_min = [1e-2, 1e-4, 1e-6]
//! method = ["PU"]
//! ```
//!
//! Missing keys take their defaults; an explicitly empty list yields an
//! empty sweep.

use std::fmt;
use std::path::Path;

use anyhow::{bail, Context, Result};
use saddle_core::mesh::{
    assign_epsilon, default_removal, place_periodic, place_random, EpsilonMode, InclusionLayout,
    StructuredMesh,
};
use saddle_core::solvers::SolverConfig;
use saddle_core::spectral::DENSE_LIMIT;
use saddle_core::{HaSpec, Method, PencilKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutMode {
    Periodic,
    Random,
}

impl fmt::Display for LayoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayoutMode::Periodic => "periodic",
            LayoutMode::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsKind {
    /// Every inclusion gets `eps_min`.
    Uniform,
    /// `ε_s` uniform on `[eps_min, 1e-2]`.
    Random,
}

impl fmt::Display for EpsKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EpsKind::Uniform => "uniform",
            EpsKind::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub cells: Vec<usize>,
    pub k: Vec<usize>,
    pub layout: Vec<LayoutMode>,
    pub eps_mode: Vec<EpsKind>,
    pub eps_min: Vec<f64>,
    pub delta: Vec<f64>,
    pub method: Vec<Method>,
    pub seeds: Vec<u64>,
    /// `H_A` for PL and PCG-K (and PU unless `pu_ha` is set).
    pub ha: HaSpec,
    pub pu_ha: Option<HaSpec>,
    pub max_iter: usize,
    /// Inclusions removed from the lattice in random layouts; defaults to
    /// about a tenth of the lattice.
    pub removal: Option<usize>,
    pub pencil: Vec<PencilKind>,
    /// Per-eigenvalue tolerance of the interval verdicts.
    pub tolerance: f64,
    /// Zero the rank-one weights of the first inclusion before the
    /// spectrum is computed. A regression guard for the verdict.
    pub corrupt_q: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            cells: vec![64],
            k: vec![2],
            layout: vec![LayoutMode::Periodic],
            eps_mode: vec![EpsKind::Random],
            eps_min: vec![1e-6],
            delta: vec![1e-6],
            method: Method::ALL.to_vec(),
            seeds: vec![1],
            ha: HaSpec::default(),
            pu_ha: None,
            max_iter: 1000,
            removal: None,
            pencil: vec![PencilKind::Practical],
            tolerance: 1e-8,
            corrupt_q: false,
        }
    }
}

/// One geometry/coefficient instance of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Instance {
    pub cells: usize,
    pub k: usize,
    pub layout: LayoutMode,
    pub eps_mode: EpsKind,
    pub eps_min: f64,
    pub seed: u64,
}

impl Instance {
    pub fn label(&self) -> String {
        format!(
            "M={} k={} {} {} ε_min={:e} seed={}",
            self.cells, self.k, self.layout, self.eps_mode, self.eps_min, self.seed
        )
    }

    /// Directory-safe identifier.
    pub fn slug(&self) -> String {
        format!(
            "M{}_k{}_{}_{}_eps{:e}_seed{}",
            self.cells, self.k, self.layout, self.eps_mode, self.eps_min, self.seed
        )
    }

    fn eps(&self) -> EpsilonMode {
        match self.eps_mode {
            EpsKind::Uniform => EpsilonMode::Uniform(self.eps_min),
            EpsKind::Random => EpsilonMode::random(self.eps_min),
        }
    }

    pub fn build_layout(&self, removal: Option<usize>) -> saddle_core::Result<InclusionLayout> {
        let mesh = StructuredMesh::new(self.cells)?;
        let lattice = place_periodic(&mesh, self.k)?;
        let placed = match self.layout {
            LayoutMode::Periodic => lattice,
            LayoutMode::Random => {
                let count = removal.unwrap_or_else(|| default_removal(lattice.num_inclusions()));
                place_random(&mesh, self.k, count, self.seed)?
            }
        };
        assign_epsilon(&placed, self.eps(), self.seed)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid configuration")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn pu_ha(&self) -> HaSpec {
        self.pu_ha.unwrap_or(self.ha)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    /// Instances in axis order: cells, k, layout, ε mode, ε_min, seed.
    pub fn instances(&self) -> Vec<Instance> {
        let mut out = Vec::new();
        for &cells in &self.cells {
            for &k in &self.k {
                for &layout in &self.layout {
                    for &eps_mode in &self.eps_mode {
                        for &eps_min in &self.eps_min {
                            for &seed in &self.seeds {
                                out.push(Instance {
                                    cells,
                                    k,
                                    layout,
                                    eps_mode,
                                    eps_min,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn solver_config(&self, delta: f64) -> saddle_core::Result<SolverConfig> {
        SolverConfig::new(delta, self.max_iter)
    }

    /// Checks every combination before any assembly starts. Returns the
    /// layouts so they need not be rebuilt.
    pub fn validate(&self) -> Result<Vec<(Instance, InclusionLayout)>> {
        for &delta in &self.delta {
            self.solver_config(delta)?;
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            bail!("tolerance must be a non-negative number");
        }
        self.instances()
            .into_iter()
            .map(|inst| {
                let layout = inst
                    .build_layout(self.removal)
                    .with_context(|| format!("instance {}", inst.label()))?;
                Ok((inst, layout))
            })
            .collect()
    }

    /// Additional checks for the dense spectral command.
    pub fn validate_dense(layouts: &[(Instance, InclusionLayout)]) -> Result<()> {
        for (inst, layout) in layouts {
            let dim = layout.mesh().num_interior() + layout.num_inclusion_nodes();
            if dim > DENSE_LIMIT {
                bail!(
                    "instance {} has {dim} unknowns, above the dense limit of {DENSE_LIMIT}; \
                     use M ≤ 16 for full spectra",
                    inst.label()
                );
            }
        }
        Ok(())
    }
}
