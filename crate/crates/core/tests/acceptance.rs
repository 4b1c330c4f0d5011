//! Acceptance suite: one PASS/FAIL line per criterion.

use std::time::{Duration, Instant};

use cutflux::assembly::ProblemData;
use cutflux::driver::{
    manufactured_g_case, run_experiment, ConvergenceTable, ExperimentSpec, Metric, RefinementMode,
};
use cutflux::experiments::{make_example, ExampleName};
use cutflux::flux::{irt_defects, irt_split};
use cutflux::geometry::CutTopology;
use cutflux::mesh::build_structured_mesh;
use cutflux::multiplier::{b_form, constrained_multiplier, constraint_defect};
use cutflux::spaces::{build_ch_dofmap, build_mh_dofmap, PrimalField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;
const RATE: std::ops::RangeInclusive<f64> = -0.6..=-0.4;
const WINDOW: usize = 4;

struct Run {
    label: String,
    table: Result<ConvergenceTable, String>,
    elapsed: Duration,
}

impl Run {
    fn new(label: impl Into<String>, spec: &ExperimentSpec) -> Self {
        let t0 = Instant::now();
        let table = run_experiment(spec).map_err(|e| e.to_string());
        Run {
            label: label.into(),
            table,
            elapsed: t0.elapsed(),
        }
    }

    fn table(&self) -> Result<&ConvergenceTable, String> {
        self.table
            .as_ref()
            .map_err(|e| format!("{}: {e}", self.label))
    }
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(result: Result<(bool, String), String>) -> Verdict {
    match result {
        Ok((pass, detail)) => Verdict { pass, detail },
        Err(detail) => Verdict {
            pass: false,
            detail,
        },
    }
}

fn in_rate(s: Option<f64>) -> bool {
    s.is_some_and(|s| RATE.contains(&s))
}

fn fmt_slope(s: Option<f64>) -> String {
    s.map_or("n/a".into(), |s| format!("{s:.3}"))
}

fn spec(example: ExampleName, mode: RefinementMode) -> ExperimentSpec {
    ExperimentSpec::new(example, mode)
}

fn conservation(runs: &[&Run]) -> Result<(bool, String), String> {
    let mut worst = 0.0f64;
    let mut iterations = 0;
    for run in runs {
        for r in &run.table()?.rows {
            worst = worst.max(r.max_conservation_defect / r.conservation_scale);
            iterations += 1;
        }
    }
    Ok((
        worst <= TOL,
        format!("worst defect/scale {worst:.2e} over {iterations} iterations"),
    ))
}

fn mixed_identity(runs: &[&Run]) -> Result<(bool, String), String> {
    let mut worst = 0.0f64;
    let mut meshes = 0;
    for run in runs {
        for r in run.table()?.rows.iter().filter(|r| r.n_dofs <= 10_000) {
            worst = worst.max(r.mixed_identity_defect);
            meshes += 1;
        }
    }
    Ok((
        meshes > 0 && worst <= TOL,
        format!("worst relative defect {worst:.2e} over {meshes} meshes"),
    ))
}

fn kernel_property() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut worst_constraint = 0.0f64;
    for (name, mu) in [(ExampleName::Ellipse, 10.0), (ExampleName::Petal, 100.0)] {
        let e = make_example(name, mu).map_err(|e| e.to_string())?;
        let mesh = build_structured_mesh(e.domain, 8).map_err(|e| e.to_string())?;
        let cut = CutTopology::classify(&mesh, |x| e.phi(x)).map_err(|e| e.to_string())?;
        let dofs = build_ch_dofmap(&mesh, &cut);
        let mh = build_mh_dofmap(&mesh, &cut, &dofs);
        let data = ProblemData::new(e.k, 10.0, 0.1, &e).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let mu = constrained_multiplier(&mesh, &mh, || rng.random_range(-1.0..1.0));
            worst_constraint = worst_constraint.max(constraint_defect(&mesh, &mh, &mu));
            for _ in 0..20 {
                let v = PrimalField::from_values(
                    (0..dofs.n_dofs)
                        .map(|i| {
                            if dofs.dirichlet[i] {
                                0.0
                            } else {
                                rng.random_range(-1.0..1.0)
                            }
                        })
                        .collect(),
                );
                for s in 0..2 {
                    let local: Vec<Option<[f64; 3]>> = (0..mesh.n_cells())
                        .map(|c| v.local(&dofs, c, s).ok())
                        .collect();
                    worst = worst.max(b_form(&mesh, &cut, &data, &mu, s, &local).abs());
                }
            }
        }
    }
    Ok((
        worst <= 1e-12 && worst_constraint <= 1e-12,
        format!("max |b_h(mu, v)| {worst:.2e}, constraint defect {worst_constraint:.2e}"),
    ))
}

fn irt_structure(runs: &[&Run]) -> Result<(bool, String), String> {
    let mut pipeline = 0.0f64;
    for run in runs {
        for r in &run.table()?.rows {
            pipeline = pipeline.max(r.irt_defect);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut random = 0.0f64;
    let mut cells = 0;
    for (name, mu) in [
        (ExampleName::Ellipse, 1.0),
        (ExampleName::Ellipse, 1e4),
        (ExampleName::LShape, 5.0),
        (ExampleName::Petal, 100.0),
    ] {
        let e = make_example(name, mu).map_err(|e| e.to_string())?;
        let mesh = build_structured_mesh(e.domain, name.default_n0()).map_err(|e| e.to_string())?;
        let cut = CutTopology::classify(&mesh, |x| e.phi(x)).map_err(|e| e.to_string())?;
        for c in (0..mesh.n_cells()).filter(|&c| cut.is_cut(c)) {
            cells += 1;
            for _ in 0..100 {
                let b: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let pair = irt_split(&mesh, &cut, c, b, e.k).map_err(|e| e.to_string())?;
                let d = irt_defects(&mesh, &cut, c, &pair, b, e.k, 0.0);
                random = random.max(d.max());
            }
        }
    }
    Ok((
        pipeline <= TOL && random <= TOL,
        format!("pipeline {pipeline:.2e}, random triples {random:.2e} on {cells} cut cells"),
    ))
}

fn linear_patch(run: &Run) -> Result<(bool, String), String> {
    let r = &run.table()?.rows[0];
    let worst = r.energy_error.max(r.eta).max(r.eta_gamma);
    Ok((
        worst <= 1e-9 && run.elapsed < Duration::from_secs(1),
        format!(
            "energy {:.2e}, eta {:.2e}, eta_gamma {:.2e}, {:.2?}",
            r.energy_error, r.eta, r.eta_gamma, run.elapsed
        ),
    ))
}

fn uniform_rates(run: &Run) -> Result<(bool, String), String> {
    let t = run.table()?;
    let (se, sf) = (
        t.slope(Metric::EnergyError, WINDOW),
        t.slope(Metric::FluxError, WINDOW),
    );
    Ok((
        t.rows.len() == 6 && in_rate(se) && in_rate(sf) && run.elapsed < Duration::from_secs(120),
        format!(
            "energy {}, flux {}, {} meshes, {:.2?}",
            fmt_slope(se),
            fmt_slope(sf),
            t.rows.len(),
            run.elapsed
        ),
    ))
}

fn amr_contrast(runs: &[Run]) -> Result<(bool, String), String> {
    let mut pass = true;
    let mut parts = Vec::new();
    for run in runs {
        let t = run.table()?;
        let (se, si) = (
            t.slope(Metric::EnergyError, WINDOW),
            t.slope(Metric::Eta, WINDOW),
        );
        let eff = t.rows.iter().skip(2).map(|r| r.effectivity);
        let (lo, hi) = eff.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        let ok = in_rate(se)
            && in_rate(si)
            && lo >= 0.5
            && hi <= 5.0
            && run.elapsed < Duration::from_secs(300);
        pass &= ok;
        parts.push(format!(
            "{}: energy {}, eta {}, eff [{lo:.2}, {hi:.2}], N {}",
            run.label,
            fmt_slope(se),
            fmt_slope(si),
            t.last().map_or(0, |r| r.n_dofs)
        ));
    }
    Ok((pass, parts.join("; ")))
}

fn corner_singularity(amr: &Run, uniform: &Run) -> Result<(bool, String), String> {
    let t = amr.table()?;
    let u = uniform.table()?;
    let last = t.last().ok_or("empty table")?;
    let se = t.slope(Metric::EnergyError, WINDOW);
    let reference = u
        .interpolate(Metric::EnergyError, last.n_dofs as f64)
        .ok_or("uniform run does not reach the final dof count")?;
    Ok((
        in_rate(se) && last.energy_error < reference && amr.elapsed < Duration::from_secs(600),
        format!(
            "slope {}, AMR error {:.3e} at N={} vs uniform {:.3e}, {:.2?}",
            fmt_slope(se),
            last.energy_error,
            last.n_dofs,
            reference,
            amr.elapsed
        ),
    ))
}

fn interface_concentration(run: &Run) -> Result<(bool, String), String> {
    let t = run.table()?;
    let se = t.slope(Metric::EnergyError, WINDOW);
    let frac = t
        .rows
        .get(5)
        .and_then(|r| r.near_interface_fraction())
        .ok_or("fewer than six iterations")?;
    Ok((
        in_rate(se) && frac >= 0.3 && run.elapsed < Duration::from_secs(300),
        format!(
            "slope {}, near-interface share at iteration 5 {frac:.2}, {:.2?}",
            fmt_slope(se),
            run.elapsed
        ),
    ))
}

fn nonhomogeneous_g(run: &Run) -> Result<(bool, String), String> {
    let (pass, detail) = conservation(&[run])?;
    Ok((
        pass && run.elapsed < Duration::from_secs(60),
        format!("{detail}, {:.2?}", run.elapsed),
    ))
}

#[test]
fn acceptance() {
    let linear = Run::new(
        "linear-patch",
        &ExperimentSpec {
            max_iters: 1,
            ..spec(ExampleName::LinearPatch, RefinementMode::Uniform)
        },
    );
    let uniform = Run::new(
        "ellipse uniform",
        &ExperimentSpec {
            mu: 1.0,
            max_iters: 6,
            max_dofs: usize::MAX,
            ..spec(ExampleName::Ellipse, RefinementMode::Uniform)
        },
    );
    let contrast: Vec<Run> = [10.0, 100.0, 1000.0, 10000.0]
        .into_iter()
        .map(|mu| {
            Run::new(
                format!("mu={mu}"),
                &ExperimentSpec {
                    mu,
                    ..spec(ExampleName::Ellipse, RefinementMode::Amr)
                },
            )
        })
        .collect();
    let lshape = Run::new(
        "lshape amr",
        &spec(ExampleName::LShape, RefinementMode::Amr),
    );
    let lshape_n = lshape
        .table
        .as_ref()
        .ok()
        .and_then(|t| t.last())
        .map_or(60_000, |r| r.n_dofs);
    let lshape_uniform = Run::new(
        "lshape uniform",
        &ExperimentSpec {
            max_dofs: lshape_n,
            ..spec(ExampleName::LShape, RefinementMode::Uniform)
        },
    );
    let petal = Run::new("petal amr", &spec(ExampleName::Petal, RefinementMode::Amr));
    let manufactured = Run::new("manufactured-g", &manufactured_g_case());

    let mut all: Vec<&Run> = vec![
        &linear,
        &uniform,
        &lshape,
        &lshape_uniform,
        &petal,
        &manufactured,
    ];
    all.extend(contrast.iter());

    let verdicts = [
        ("conservation identity", verdict(conservation(&all))),
        ("mixed identity", verdict(mixed_identity(&all))),
        ("kernel property", verdict(kernel_property())),
        ("IRT structure", verdict(irt_structure(&all))),
        ("linear patch", verdict(linear_patch(&linear))),
        ("ellipse uniform rates", verdict(uniform_rates(&uniform))),
        ("ellipse AMR contrast", verdict(amr_contrast(&contrast))),
        (
            "L-shape AMR",
            verdict(corner_singularity(&lshape, &lshape_uniform)),
        ),
        ("petal AMR", verdict(interface_concentration(&petal))),
        (
            "non-homogeneous g",
            verdict(nonhomogeneous_g(&manufactured)),
        ),
    ];
    println!();
    for (i, (name, v)) in verdicts.iter().enumerate() {
        println!(
            "criterion {:2} {} {name}: {}",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    let failed: Vec<usize> = verdicts
        .iter()
        .enumerate()
        .filter(|(_, (_, v))| !v.pass)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
