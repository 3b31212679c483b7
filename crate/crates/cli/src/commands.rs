//! The four subcommands.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;
use saddle_core::assembly::RankOneBlock;
use saddle_core::mesh::InclusionLayout;
use saddle_core::solvers::homogeneous_run;
use saddle_core::sparse::TripletBuilder;
use saddle_core::spectral::{ha_bounds, verify_intervals, EigenClass, SpectrumReport};
use saddle_core::{
    APreconditioner, BlockPreconditioner, Method, SaddleProblem, SchurPreconditioner,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, Instance};
use crate::output::{write_csv, RunManifest, RunSeed};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveRow {
    pub method: Method,
    pub cells: usize,
    pub k: usize,
    pub layout: String,
    pub eps_mode: String,
    pub eps_min: f64,
    pub delta: f64,
    pub seed: u64,
    pub inclusions: usize,
    pub ha: String,
    pub iterations: usize,
    pub a_apps: usize,
    pub ha_apps: usize,
    pub total_apps: usize,
    pub final_ratio: f64,
}

const SOLVE_HEADER: [&str; 15] = [
    "method",
    "cells",
    "k",
    "layout",
    "eps_mode",
    "eps_min",
    "delta",
    "seed",
    "inclusions",
    "ha",
    "iterations",
    "a_apps",
    "ha_apps",
    "total_apps",
    "final_ratio",
];

#[derive(Debug, Clone, Serialize)]
struct HistoryRow {
    method: Method,
    instance: String,
    delta: f64,
    iteration: usize,
    norm: f64,
}

/// Lanczos estimate of the extreme eigenvalues of `H_A A` per instance.
#[derive(Debug, Clone, Serialize)]
struct BoundsRow {
    instance: String,
    ha: String,
    beta_min: f64,
    beta_max: f64,
    steps: usize,
    converged: bool,
}

const BOUNDS_BUDGET: usize = 60;
const BOUNDS_TOL: f64 = 1e-6;

type InstanceRuns = (Vec<(SolveRow, Vec<f64>)>, Vec<BoundsRow>);

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building the thread pool")
}

fn manifest_runs(layouts: &[(Instance, InclusionLayout)]) -> Vec<RunSeed> {
    layouts
        .iter()
        .map(|(inst, _)| RunSeed {
            instance: inst.slug(),
            seed: inst.seed,
        })
        .collect()
}

fn solve_instance(
    cfg: &ExperimentConfig,
    inst: &Instance,
    layout: &InclusionLayout,
) -> Result<InstanceRuns> {
    let label = inst.label();
    let pb = SaddleProblem::assemble(layout).with_context(|| format!("assembling {label}"))?;
    let a = pb.op.stiffness();
    let ha = APreconditioner::new(cfg.ha, a, pb.mesh(), &pb.ordering)?;
    let pu_ha = if cfg.pu_ha() == cfg.ha {
        ha.clone()
    } else {
        APreconditioner::new(cfg.pu_ha(), a, pb.mesh(), &pb.ordering)?
    };
    let mut bounds = Vec::new();
    for (spec, op) in [(cfg.ha, &ha), (cfg.pu_ha(), &pu_ha)] {
        if bounds.iter().any(|b: &BoundsRow| b.ha == spec.to_string()) {
            continue;
        }
        let est = ha_bounds(a, op, BOUNDS_BUDGET, BOUNDS_TOL, inst.seed)?;
        bounds.push(BoundsRow {
            instance: inst.slug(),
            ha: spec.to_string(),
            beta_min: est.min,
            beta_max: est.max,
            steps: est.steps,
            converged: est.converged,
        });
    }
    let h = BlockPreconditioner::new(ha, SchurPreconditioner::new(&pb.op));
    let mut rows = Vec::new();
    for &delta in &cfg.delta {
        let scfg = cfg.solver_config(delta)?;
        for &method in &cfg.method {
            let report = homogeneous_run(method, &pb.op, &h, &pu_ha, inst.seed, &scfg)
                .with_context(|| format!("{method} on {label}, δ={delta:e}"))?;
            let spec = if method == Method::Pu {
                cfg.pu_ha()
            } else {
                cfg.ha
            };
            rows.push((
                SolveRow {
                    method,
                    cells: inst.cells,
                    k: inst.k,
                    layout: inst.layout.to_string(),
                    eps_mode: inst.eps_mode.to_string(),
                    eps_min: inst.eps_min,
                    delta,
                    seed: inst.seed,
                    inclusions: layout.num_inclusions(),
                    ha: spec.to_string(),
                    iterations: report.iterations,
                    a_apps: report.tally.a_apps,
                    ha_apps: report.tally.ha_apps,
                    total_apps: report.tally.total(),
                    final_ratio: report.final_ratio(),
                },
                report.norms,
            ));
        }
    }
    Ok((rows, bounds))
}

/// Runs the sweep in a pool of `threads` workers; rows keep the axis order.
fn run_sweep(
    cfg: &ExperimentConfig,
    layouts: &[(Instance, InclusionLayout)],
    threads: usize,
) -> Result<InstanceRuns> {
    let per_instance: Vec<InstanceRuns> = pool(threads)?.install(|| {
        layouts
            .par_iter()
            .map(|(inst, layout)| solve_instance(cfg, inst, layout))
            .collect::<Result<_>>()
    })?;
    let (rows, bounds): (Vec<_>, Vec<_>) = per_instance.into_iter().unzip();
    Ok((
        rows.into_iter().flatten().collect(),
        bounds.into_iter().flatten().collect(),
    ))
}

fn write_solve_outputs(out: &Path, name: &str, (rows, bounds): &InstanceRuns) -> Result<()> {
    write_csv(
        &out.join(format!("{name}_ha_bounds.csv")),
        &format!("{name}_ha_bounds"),
        &[
            "instance",
            "ha",
            "beta_min",
            "beta_max",
            "steps",
            "converged",
        ],
        bounds,
    )?;
    let plain: Vec<&SolveRow> = rows.iter().map(|(r, _)| r).collect();
    write_csv(
        &out.join(format!("{name}.csv")),
        name,
        &SOLVE_HEADER,
        &plain,
    )?;
    let history: Vec<HistoryRow> = rows
        .iter()
        .flat_map(|(r, norms)| {
            let instance = format!(
                "M{}_k{}_{}_{}_eps{:e}_seed{}",
                r.cells, r.k, r.layout, r.eps_mode, r.eps_min, r.seed
            );
            norms
                .iter()
                .enumerate()
                .map(move |(iteration, &norm)| HistoryRow {
                    method: r.method,
                    instance: instance.clone(),
                    delta: r.delta,
                    iteration,
                    norm,
                })
        })
        .collect();
    write_csv(
        &out.join(format!("{name}_history.csv")),
        &format!("{name}_history"),
        &["method", "instance", "delta", "iteration", "norm"],
        &history,
    )
}

/// `solve`: one CSV row per (method, instance, δ).
pub fn solve(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<Vec<SolveRow>> {
    let layouts = cfg.validate()?;
    fs::create_dir_all(out)?;
    let runs = run_sweep(cfg, &layouts, threads)?;
    write_solve_outputs(out, "solve", &runs)?;
    RunManifest::new("solve", cfg, threads, manifest_runs(&layouts)).write(out)?;
    Ok(runs.0.into_iter().map(|(r, _)| r).collect())
}

/// Total {A, H_A} applications per method, one table row per instance and δ.
pub fn cost_table(methods: &[Method], rows: &[SolveRow]) -> String {
    type Key = (usize, usize, String, String, u64, u64, u64);
    let key = |r: &SolveRow| -> Key {
        (
            r.cells,
            r.k,
            r.layout.clone(),
            r.eps_mode.clone(),
            r.eps_min.to_bits(),
            r.delta.to_bits(),
            r.seed,
        )
    };
    let mut order: Vec<Key> = Vec::new();
    let mut cells: BTreeMap<(Key, Method), usize> = BTreeMap::new();
    let mut sample: BTreeMap<Key, &SolveRow> = BTreeMap::new();
    for r in rows {
        let k = key(r);
        if !sample.contains_key(&k) {
            order.push(k.clone());
            sample.insert(k.clone(), r);
        }
        cells.insert((k, r.method), r.total_apps);
    }
    let mut md = String::from("| M | k | layout | ε mode | ε_min | δ | seed |");
    for m in methods {
        md.push_str(&format!(" {m} |"));
    }
    md.push_str("\n|---|---|---|---|---|---|---|");
    md.push_str(&"---:|".repeat(methods.len()));
    md.push('\n');
    for k in &order {
        let r = sample[k];
        md.push_str(&format!(
            "| {} | {} | {} | {} | {:e} | {:e} | {} |",
            r.cells, r.k, r.layout, r.eps_mode, r.eps_min, r.delta, r.seed
        ));
        for m in methods {
            match cells.get(&(k.clone(), *m)) {
                Some(c) => md.push_str(&format!(" {c} |")),
                None => md.push_str(" – |"),
            }
        }
        md.push('\n');
    }
    md
}

/// `cost`: the solve sweep plus a Markdown table of application counts.
pub fn cost(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<String> {
    let layouts = cfg.validate()?;
    fs::create_dir_all(out)?;
    let runs = run_sweep(cfg, &layouts, threads)?;
    write_solve_outputs(out, "cost", &runs)?;
    let plain: Vec<SolveRow> = runs.0.into_iter().map(|(r, _)| r).collect();
    let mut md = String::from("# Cost: total applications of A and H_A\n\n");
    md.push_str(&format!(
        "H_A: `{}` (PU: `{}`). Counts are for homogeneous runs from a random start.\n\n",
        cfg.ha,
        cfg.pu_ha()
    ));
    let table = cost_table(&cfg.method, &plain);
    md.push_str(&table);
    fs::write(out.join("cost.md"), &md)?;
    RunManifest::new("cost", cfg, threads, manifest_runs(&layouts)).write(out)?;
    Ok(table)
}

#[derive(Debug, Clone, Serialize)]
struct EigenRow {
    instance: String,
    pencil: String,
    index: usize,
    value: f64,
    class: String,
    inside: bool,
    inside_nominal: bool,
}

/// Per-instance verdict of the `spectrum` command.
#[derive(Debug, Clone, Serialize)]
pub struct VerdictRow {
    pub instance: String,
    pub pencil: String,
    pub eps_max: Option<f64>,
    pub a0: Option<f64>,
    pub b0: Option<f64>,
    pub r_max: Option<f64>,
    pub mu_check_1: Option<f64>,
    pub mu_hat_1: Option<f64>,
    pub mu_hat_2: Option<f64>,
    pub negative_lo: Option<f64>,
    pub negative_hi: Option<f64>,
    pub positive_lo: Option<f64>,
    pub positive_hi: Option<f64>,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub kernel_count: Option<usize>,
    pub expected_kernel_count: usize,
    pub outside_nominal: Option<usize>,
    pub verdict: String,
    pub note: String,
}

const VERDICT_HEADER: [&str; 20] = [
    "instance",
    "pencil",
    "eps_max",
    "a0",
    "b0",
    "r_max",
    "mu_check_1",
    "mu_hat_1",
    "mu_hat_2",
    "negative_lo",
    "negative_hi",
    "positive_lo",
    "positive_hi",
    "lambda_min",
    "lambda_max",
    "kernel_count",
    "expected_kernel_count",
    "outside_nominal",
    "verdict",
    "note",
];

fn verdict_row(
    instance: &str,
    pencil: &str,
    expected: usize,
    res: &saddle_core::Result<SpectrumReport>,
) -> VerdictRow {
    match res {
        Ok(r) => VerdictRow {
            instance: instance.to_string(),
            pencil: pencil.to_string(),
            eps_max: Some(r.eps_max),
            a0: Some(r.a0),
            b0: Some(r.b0),
            r_max: Some(r.r_max),
            mu_check_1: Some(r.mu_check_1),
            mu_hat_1: Some(r.mu_hat_1),
            mu_hat_2: Some(r.mu_hat_2),
            negative_lo: Some(r.negative_interval.0),
            negative_hi: Some(r.negative_interval.1),
            positive_lo: Some(r.positive_interval.0),
            positive_hi: Some(r.positive_interval.1),
            lambda_min: Some(r.lambda_min()),
            lambda_max: Some(r.lambda_max()),
            kernel_count: Some(r.kernel_count),
            expected_kernel_count: expected,
            outside_nominal: Some(r.outside_nominal()),
            verdict: if r.passes() { "PASS" } else { "FAIL" }.into(),
            note: String::new(),
        },
        Err(e) => VerdictRow {
            instance: instance.to_string(),
            pencil: pencil.to_string(),
            eps_max: None,
            a0: None,
            b0: None,
            r_max: None,
            mu_check_1: None,
            mu_hat_1: None,
            mu_hat_2: None,
            negative_lo: None,
            negative_hi: None,
            positive_lo: None,
            positive_hi: None,
            lambda_min: None,
            lambda_max: None,
            kernel_count: None,
            expected_kernel_count: expected,
            outside_nominal: None,
            verdict: "FAIL".into(),
            note: e.to_string(),
        },
    }
}

fn pencil_name(p: saddle_core::PencilKind) -> String {
    serde_json::to_value(p)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn class_name(c: EigenClass) -> &'static str {
    match c {
        EigenClass::Kernel => "kernel",
        EigenClass::Negative => "negative",
        EigenClass::Positive => "positive",
    }
}

/// `spectrum`: dense spectra and interval verdicts. Returns the verdicts;
/// the caller turns any FAIL into a nonzero exit status.
pub fn spectrum(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<Vec<VerdictRow>> {
    let layouts = cfg.validate()?;
    ExperimentConfig::validate_dense(&layouts)?;
    fs::create_dir_all(out)?;
    let results: Vec<(Vec<EigenRow>, Vec<VerdictRow>)> =
        pool(threads)?.install(|| {
            layouts
                .par_iter()
                .map(|(inst, layout)| -> Result<_> {
                    let mut pb = SaddleProblem::assemble(layout)
                        .with_context(|| format!("assembling {}", inst.label()))?;
                    if cfg.corrupt_q && !pb.op.blocks().is_empty() {
                        let old = &pb.op.blocks()[0].rank_one;
                        let zeroed = RankOneBlock {
                            m: vec![0.0; old.len()],
                            d: old.d,
                        };
                        pb.op.set_rank_one(0, zeroed)?;
                    }
                    let slug = inst.slug();
                    let mut eig = Vec::new();
                    let mut verdicts = Vec::new();
                    for &pencil in &cfg.pencil {
                        let name = pencil_name(pencil);
                        let res = verify_intervals(&pb.op, pencil, cfg.tolerance);
                        if let Ok(rep) = &res {
                            eig.extend(rep.eigenvalues.iter().enumerate().map(|(index, e)| {
                                EigenRow {
                                    instance: slug.clone(),
                                    pencil: name.clone(),
                                    index,
                                    value: e.value,
                                    class: class_name(e.class).into(),
                                    inside: e.inside,
                                    inside_nominal: e.inside_nominal,
                                }
                            }));
                        }
                        verdicts.push(verdict_row(&slug, &name, layout.num_inclusions(), &res));
                    }
                    Ok((eig, verdicts))
                })
                .collect::<Result<_>>()
        })?;
    let (eig, verdicts): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let eig: Vec<EigenRow> = eig.into_iter().flatten().collect();
    let verdicts: Vec<VerdictRow> = verdicts.into_iter().flatten().collect();
    write_csv(
        &out.join("spectrum.csv"),
        "spectrum",
        &[
            "instance",
            "pencil",
            "index",
            "value",
            "class",
            "inside",
            "inside_nominal",
        ],
        &eig,
    )?;
    write_csv(
        &out.join("verdict.csv"),
        "verdict",
        &VERDICT_HEADER,
        &verdicts,
    )?;
    RunManifest::new("spectrum", cfg, threads, manifest_runs(&layouts)).write(out)?;
    Ok(verdicts)
}

fn write_mtx(path: &Path, m: &saddle_core::CsrMatrix) -> Result<()> {
    let mut f =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    m.write_matrix_market(&mut f, true)?;
    f.flush()?;
    Ok(())
}

/// `export-matrix`: `A`, `A_σ`, `B_D`, the inclusion mass matrix and the
/// rank-one data of every instance, in system ordering.
pub fn export_matrices(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<String>> {
    let layouts = cfg.validate()?;
    let mut dirs = Vec::new();
    for (inst, layout) in &layouts {
        let pb = SaddleProblem::assemble(layout)?;
        let dir = out.join(inst.slug());
        fs::create_dir_all(&dir)?;
        write_mtx(&dir.join("A.mtx"), pb.op.stiffness())?;
        write_mtx(&dir.join("A_sigma.mtx"), &pb.sigma_matrix())?;
        let n = pb.op.n_p();
        let (mut bd, mut mass) = (TripletBuilder::new(n, n), TripletBuilder::new(n, n));
        let mut rank_one = Vec::new();
        for (s, b) in pb.op.blocks().iter().enumerate() {
            let o = pb.op.offsets()[s];
            for i in 0..b.rank_one.len() {
                for (j, v) in b.stiffness.row(i) {
                    bd.push(o + i, o + j, v);
                }
                for (j, v) in b.mass.row(i) {
                    mass.push(o + i, o + j, v);
                }
                rank_one.push((s, o + i, b.rank_one.d, b.rank_one.m[i], pb.op.eps()[s]));
            }
        }
        write_mtx(&dir.join("B_D.mtx"), &bd.build())?;
        write_mtx(&dir.join("M_D.mtx"), &mass.build())?;
        write_csv(
            &dir.join("rank_one.csv"),
            "rank_one",
            &["inclusion", "row", "d", "m", "eps"],
            &rank_one,
        )?;
        fs::write(
            dir.join("layout.json"),
            serde_json::to_string_pretty(&layout.manifest())? + "\n",
        )?;
        dirs.push(inst.slug());
    }
    RunManifest::new("export-matrix", cfg, 1, manifest_runs(&layouts)).write(out)?;
    Ok(dirs)
}
