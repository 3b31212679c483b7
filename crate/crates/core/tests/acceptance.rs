//! One pass/fail line per acceptance criterion. Run with
//! `cargo test -p saddle-core --test acceptance -- --nocapture`.

mod common;

use std::cell::RefCell;
use std::time::{Duration, Instant};

use common::{block, ha, periodic, rel_err};
use nalgebra::DVector;
use saddle_core::mesh::{
    assign_epsilon, default_removal, place_random, EpsilonMode, StructuredMesh,
};
use saddle_core::precond::{HsReference, SchurPreconditioner, SchurTerm};
use saddle_core::random::{uniform_vector, Stream};
use saddle_core::solvers::{homogeneous_run, pl_solve, Method, SolverConfig, SolverReport};
use saddle_core::spectral::{dense_condition, verify_intervals, PencilKind, DENSE_LIMIT};
use saddle_core::vecops::dot;
use saddle_core::{InclusionLayout, SaddleProblem};

const EPS_SWEEP: [f64; 3] = [1e-2, 1e-4, 1e-6];
const RUN_SEED: u64 = 1;

type Outcome = (bool, String);
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

/// Stopping-norm histories of every PU and PCG-K run, for the monotonicity check.
#[derive(Default)]
struct Histories(RefCell<Vec<(String, SolverReport)>>);

impl Histories {
    fn record(&self, label: String, method: Method, report: &SolverReport) {
        if matches!(method, Method::Pu | Method::PcgK) {
            self.0.borrow_mut().push((label, report.clone()));
        }
    }
}

fn random_layout(cells: usize, k: usize, eps_min: f64, seed: u64) -> InclusionLayout {
    let mesh = StructuredMesh::new(cells).unwrap();
    let full = periodic(cells, k, EpsilonMode::Uniform(1.0), seed).num_inclusions();
    let layout = place_random(&mesh, k, default_removal(full), seed).unwrap();
    assign_epsilon(&layout, EpsilonMode::random(eps_min), seed).unwrap()
}

fn run(
    pb: &SaddleProblem,
    method: Method,
    spec: &str,
    pu_spec: &str,
    hist: &Histories,
    label: &str,
) -> SolverReport {
    let h = block(pb, spec);
    let pu_ha = ha(pb, pu_spec);
    let report = homogeneous_run(
        method,
        &pb.op,
        &h,
        &pu_ha,
        RUN_SEED,
        &SolverConfig::default(),
    )
    .unwrap_or_else(|e| panic!("{label} {method}: {e}"));
    hist.record(format!("{label} {method}"), method, &report);
    report
}

fn spread(v: &[usize]) -> usize {
    v.iter().max().unwrap() - v.iter().min().unwrap()
}

fn c1_intervals() -> Outcome {
    let mut ok = true;
    let mut worst = 0;
    let mut lo = f64::INFINITY;
    let mut corrected = true;
    for cells in [8, 16] {
        for eps in EPS_SWEEP {
            let layout = periodic(cells, 2, EpsilonMode::random(eps), 11);
            let pb = SaddleProblem::assemble(&layout).unwrap();
            let rep = verify_intervals(&pb.op, PencilKind::Practical, 1e-8).unwrap();
            ok &= rep.passes_nominal();
            worst = worst.max(rep.outside_nominal());
            lo = lo.min(rep.lambda_min());
            corrected &= rep.passes()
                && verify_intervals(&pb.op, PencilKind::Ideal, 1e-8)
                    .unwrap()
                    .passes();
        }
    }
    (
        ok,
        format!(
            "up to {worst} eigenvalues outside [μ̌₁, μ̂₁] ∪ [1, μ̂₂]; λ_min = {lo:.4}; \
             kernel at -1 and scaled intervals hold: {corrected}"
        ),
    )
}

fn c2_contrast(hist: &Histories) -> Outcome {
    // reference counts with a W-cycle AMG H_A; ours must fall within ±50%
    let reference = [
        (Method::Pu, 10.0, 11.0),
        (Method::Pl, 40.0, 46.0),
        (Method::PcgK, 88.0, 93.0),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (method, lo, hi) in reference {
        let mut by_eps = vec![Vec::new(); EPS_SWEEP.len()];
        let mut by_layout: Vec<Vec<usize>> = vec![Vec::new(); 4];
        for (i, eps) in EPS_SWEEP.iter().enumerate() {
            let mut layouts = vec![(
                "periodic".to_string(),
                periodic(64, 2, EpsilonMode::random(*eps), 11),
            )];
            for seed in 1..=3 {
                layouts.push((format!("random#{seed}"), random_layout(64, 2, *eps, seed)));
            }
            for (j, (name, layout)) in layouts.iter().enumerate() {
                let pb = SaddleProblem::assemble(layout).unwrap();
                let it = run(
                    &pb,
                    method,
                    "exact",
                    "exact",
                    hist,
                    &format!("c2 {name} ε={eps}"),
                )
                .iterations;
                by_eps[i].push(it);
                by_layout[j].push(it);
            }
        }
        let all: Vec<usize> = by_eps.iter().flatten().copied().collect();
        let eps_spread = (0..4).map(|j| spread(&by_layout[j])).max().unwrap();
        let layout_spread = by_eps.iter().map(|v| spread(v)).max().unwrap();
        let (min, max) = (*all.iter().min().unwrap(), *all.iter().max().unwrap());
        let in_band = min as f64 >= 0.5 * lo && max as f64 <= 1.5 * hi;
        let pass = eps_spread <= 2 && layout_spread <= 2 && in_band;
        ok &= pass;
        detail.push(format!(
            "{method} {min}–{max} (Δε {eps_spread}, Δlayout {layout_spread}, band {}–{}){}",
            0.5 * lo,
            1.5 * hi,
            if pass { "" } else { " ✗" }
        ));
    }
    (ok, detail.join("; "))
}

fn c3_mesh(hist: &Histories) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for method in Method::ALL {
        let counts: Vec<usize> = [(16, 2), (32, 4), (64, 8)]
            .iter()
            .map(|&(m, k)| {
                let pb = SaddleProblem::assemble(&periodic(m, k, EpsilonMode::random(1e-6), 11))
                    .unwrap();
                run(&pb, method, "exact", "exact", hist, &format!("c3 M={m}")).iterations
            })
            .collect();
        let min = *counts.iter().min().unwrap() as f64;
        let var = spread(&counts) as f64 / min;
        ok &= var <= 0.2;
        detail.push(format!("{method} {counts:?} ({:.0}%)", 100.0 * var));
    }
    (ok, detail.join("; "))
}

fn c4_cost(hist: &Histories) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for eps in EPS_SWEEP {
        let pb = SaddleProblem::assemble(&periodic(64, 2, EpsilonMode::random(eps), 11)).unwrap();
        let label = format!("c4 ε={eps}");
        let cost = |m| {
            run(&pb, m, "multigrid", "inner:7:multigrid", hist, &label)
                .tally
                .total()
        };
        let (pu, pl, k) = (cost(Method::Pu), cost(Method::Pl), cost(Method::PcgK));
        let pass = pl < pu && pu < k && pl as f64 <= 0.5 * k as f64;
        ok &= pass;
        detail.push(format!(
            "ε={eps:e}: PL {pl} < PU {pu} < PCG-K {k}{}",
            if pass { "" } else { " ✗" }
        ));
    }
    (ok, detail.join("; "))
}

fn c5_equivalence() -> Outcome {
    let layout = periodic(16, 2, EpsilonMode::Uniform(1e-4), 11);
    assert_eq!(layout.num_inclusions(), 16);
    let pb = SaddleProblem::assemble(&layout).unwrap();
    let f = pb.load(|_| 1.0);
    let h = block(&pb, "exact");
    let cfg = SolverConfig::new(1e-12, 2000).unwrap();
    let (z, _) = pl_solve(&pb.op, &h, &f, &vec![0.0; pb.op.dim()], &cfg).unwrap();
    let (u, p) = z.split_at(pb.op.n_u());
    let want = pb
        .sigma_matrix()
        .to_dense()
        .lu()
        .solve(&DVector::from_column_slice(&f))
        .unwrap();
    let a = pb.op.stiffness().to_dense();
    let err = DVector::from_column_slice(u) - &want;
    let a_norm = |v: &DVector<f64>| (v.transpose() * &a * v)[(0, 0)].sqrt();
    let u_err = a_norm(&err) / a_norm(&want);
    let p_rec = pb.recover_p_from_u(u).unwrap();
    let p_err = rel_err(&p_rec, p);
    (
        u_err <= 1e-7 && p_err <= 1e-6,
        format!("u {u_err:.1e} (A-norm), p {p_err:.1e}"),
    )
}

fn c6_identities() -> Outcome {
    let pb = SaddleProblem::assemble(&periodic(8, 2, EpsilonMode::random(1e-6), 11)).unwrap();
    let hs = SchurPreconditioner::new(&pb.op);
    let reference = HsReference::build(&pb.op).unwrap();
    let n = pb.op.n_p();
    let (mut composed, mut proj, mut sym, mut ident) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..100 {
        let w = uniform_vector(n, seed, Stream::Probe);
        let images = [
            (SchurTerm::BdImage(&w), pb.op.apply_bd(&w).unwrap()),
            (SchurTerm::QImage(&w), pb.op.apply_q(&w).unwrap()),
            (
                SchurTerm::SigmaBdImage(&w),
                pb.op.apply_sigma_bd(&w).unwrap(),
            ),
        ];
        for (term, image) in images {
            let c = hs.apply_hs_composed(term).unwrap();
            composed = composed.max(rel_err(&c, &reference.apply(&image).unwrap()));
        }
        let v = uniform_vector(n, seed + 1000, Stream::Probe);
        for s in 0..hs.num_blocks() {
            let r = pb.op.block_range(s);
            let mass = &pb.op.blocks()[s].mass;
            let (ws, vs) = (&w[r.clone()], &v[r]);
            let qw = hs.apply_projector(s, ws).unwrap();
            let qqw = hs.apply_projector(s, &qw).unwrap();
            proj = proj.max(rel_err(&qqw, &qw));
            let qv = hs.apply_projector(s, vs).unwrap();
            let lhs = dot(&mass.mul_vec(&qw).unwrap(), vs);
            let rhs = dot(&mass.mul_vec(ws).unwrap(), &qv);
            sym = sym.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
        }
        let mut sum = hs.apply_hs_composed(SchurTerm::BdImage(&w)).unwrap();
        let q = hs.apply_hs_composed(SchurTerm::QImage(&w)).unwrap();
        sum.iter_mut().zip(&q).for_each(|(a, b)| *a += b);
        ident = ident.max(rel_err(&sum, &w));
    }
    (
        composed <= 1e-12 && proj <= 1e-13 && sym <= 1e-13 && ident <= 1e-13,
        format!("composed {composed:.1e}, Q̃² {proj:.1e}, M-sym {sym:.1e}, H_S(B_D+Q) {ident:.1e}"),
    )
}

fn c7_condition() -> Outcome {
    let conds: Vec<f64> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&eps| {
            let pb =
                SaddleProblem::assemble(&periodic(32, 2, EpsilonMode::Uniform(eps), 11)).unwrap();
            dense_condition(&pb.sigma_matrix(), DENSE_LIMIT).unwrap()
        })
        .collect();
    let factors: Vec<f64> = conds.windows(2).map(|w| w[1] / w[0]).collect();
    (
        factors.iter().all(|f| (5.0..=20.0).contains(f)),
        format!(
            "cond {:.3e} → {:.3e} → {:.3e}, factors {:.2}, {:.2}",
            conds[0], conds[1], conds[2], factors[0], factors[1]
        ),
    )
}

fn c8_monotone(hist: &Histories) -> Outcome {
    let runs = hist.0.borrow();
    let bad: Vec<&str> = runs
        .iter()
        .filter(|(_, r)| !r.is_monotone(1e-12))
        .map(|(l, _)| l.as_str())
        .collect();
    (
        bad.is_empty(),
        format!(
            "{} runs checked, {} non-monotone {:?}",
            runs.len(),
            bad.len(),
            bad
        ),
    )
}

#[test]
fn acceptance() {
    let hist = Histories::default();
    let criteria: Vec<(&str, Duration, Check<'_>)> = vec![
        (
            "1 eigenvalue intervals",
            Duration::from_secs(120),
            Box::new(c1_intervals),
        ),
        (
            "2 contrast robustness",
            Duration::from_secs(300),
            Box::new(|| c2_contrast(&hist)),
        ),
        (
            "3 mesh robustness",
            Duration::from_secs(600),
            Box::new(|| c3_mesh(&hist)),
        ),
        (
            "4 cost ordering",
            Duration::from_secs(300),
            Box::new(|| c4_cost(&hist)),
        ),
        (
            "5 solution equivalence",
            Duration::from_secs(60),
            Box::new(c5_equivalence),
        ),
        (
            "6 preconditioner identities",
            Duration::from_secs(10),
            Box::new(c6_identities),
        ),
        (
            "7 condition growth",
            Duration::from_secs(120),
            Box::new(c7_condition),
        ),
        (
            "8 monotone stopping norms",
            Duration::from_secs(1),
            Box::new(|| c8_monotone(&hist)),
        ),
    ];
    let mut failed = Vec::new();
    for (name, budget, check) in &criteria {
        let start = Instant::now();
        let (ok, detail) = check();
        let elapsed = start.elapsed();
        let ok = ok && elapsed <= *budget;
        println!(
            "{} criterion {name}: {detail} [{:.2}s]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        if !ok {
            failed.push(*name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
