//! Refinement loops: solve, reconstruct, estimate, check, mark, refine.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::assembly::{all_residuals, solve_primal, ProblemData};
use crate::estimator::{energy_error, estimate, flux_error, EstimatorReport};
use crate::experiments::{make_example, ExactSolution, ExampleName};
use crate::flux::{
    check_conservation, check_irt, mean_zero_jump_defect, reconstruct_flux, ReconstructedFlux,
};
use crate::geometry::CutTopology;
use crate::mesh::{build_structured_mesh, dorfler_mark, MarkSet, Mesh};
use crate::multiplier::{assemble_theta, mixed_identity_defect, MultiplierField};
use crate::output::{save_csv, save_vtk};
use crate::spaces::{build_ch_dofmap, build_mh_dofmap, ChDofMap, PrimalField};
use crate::{Error, Result};

/// Relative bound for the per-iteration structural checks.
pub const HARD_CHECK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefinementMode {
    /// Every cell is split into four per iteration.
    Uniform,
    /// Doerfler marking on `eta_T`.
    Amr,
}

impl RefinementMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RefinementMode::Uniform => "uniform",
            RefinementMode::Amr => "amr",
        }
    }
}

impl fmt::Display for RefinementMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RefinementMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(RefinementMode::Uniform),
            "amr" => Ok(RefinementMode::Amr),
            _ => Err(Error::InvalidInput(format!(
                "unknown refinement mode '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub example: ExampleName,
    pub mu: f64,
    pub mode: RefinementMode,
    pub theta_mark: f64,
    /// Stop once the dof count reaches this budget.
    pub max_dofs: usize,
    /// Upper bound on the number of solves.
    pub max_iters: usize,
    pub gamma: f64,
    pub gamma_g: f64,
    pub n0: usize,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Defaults of the named example.
    pub fn new(example: ExampleName, mode: RefinementMode) -> Self {
        Self {
            example,
            mu: example.default_mu(),
            mode,
            theta_mark: 0.35,
            max_dofs: example.default_max_dofs(),
            max_iters: 100,
            gamma: 10.0,
            gamma_g: 0.1,
            n0: example.default_n0(),
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.theta_mark > 0.0 && self.theta_mark <= 1.0) {
            return bad(format!(
                "marking fraction must lie in (0, 1], got {}",
                self.theta_mark
            ));
        }
        if self.max_dofs == 0 || self.max_iters == 0 {
            return bad("dof budget and iteration cap must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma_g >= 0.0) {
            return bad(format!(
                "invalid penalties gamma = {}, gamma_g = {}",
                self.gamma, self.gamma_g
            ));
        }
        if self.n0 == 0 {
            return bad("initial resolution must be positive".into());
        }
        Ok(())
    }
}

/// Spec of the non-homogeneous interface-flux case.
pub fn manufactured_g_case() -> ExperimentSpec {
    ExperimentSpec {
        max_iters: 6,
        ..ExperimentSpec::new(ExampleName::ManufacturedG, RefinementMode::Amr)
    }
}

/// One row of the convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub n_dofs: usize,
    pub n_cells: usize,
    pub n_cut: usize,
    pub energy_error: f64,
    pub flux_error: f64,
    pub eta: f64,
    pub eta_gamma: f64,
    pub eps: f64,
    pub effectivity: f64,
    pub max_conservation_defect: f64,
    pub conservation_scale: f64,
    /// Mixed identity defect relative to the node-patch residual scale.
    pub mixed_identity_defect: f64,
    /// Mixed identity defect relative to the problem residual scale.
    pub mixed_identity_global: f64,
    pub irt_defect: f64,
    pub mean_jump_defect: f64,
    /// Cells marked for refinement after this solve (zero on the last row).
    pub marked: usize,
    /// Marked cells that are cut or share a vertex with a cut cell.
    pub marked_near_interface: usize,
}

impl IterationRecord {
    pub fn near_interface_fraction(&self) -> Option<f64> {
        (self.marked > 0).then(|| self.marked_near_interface as f64 / self.marked as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub spec: ExperimentSpec,
    pub rows: Vec<IterationRecord>,
}

/// Quantities tracked against the dof count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    EnergyError,
    FluxError,
    Eta,
}

impl Metric {
    fn of(self, r: &IterationRecord) -> f64 {
        match self {
            Metric::EnergyError => r.energy_error,
            Metric::FluxError => r.flux_error,
            Metric::Eta => r.eta,
        }
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

impl ConvergenceTable {
    /// Slope of `metric` against N over the last `window` rows.
    pub fn slope(&self, metric: Metric, window: usize) -> Option<f64> {
        let start = self.rows.len().saturating_sub(window);
        let pts: Vec<(f64, f64)> = self.rows[start..]
            .iter()
            .map(|r| (r.n_dofs as f64, metric.of(r)))
            .collect();
        loglog_slope(&pts)
    }

    /// `metric` interpolated at `n` in log-log coordinates (clamped to the covered range).
    pub fn interpolate(&self, metric: Metric, n: f64) -> Option<f64> {
        let first = self.rows.first()?;
        if n <= first.n_dofs as f64 {
            return Some(metric.of(first));
        }
        for w in self.rows.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let (xa, xb) = (a.n_dofs as f64, b.n_dofs as f64);
            if n <= xb && xb > xa {
                let t = (n.ln() - xa.ln()) / (xb.ln() - xa.ln());
                return Some((metric.of(a).ln() * (1.0 - t) + metric.of(b).ln() * t).exp());
            }
        }
        self.rows.last().map(|r| metric.of(r))
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.rows.last()
    }
}

/// State of one solve handed to observers.
pub struct IterationView<'a> {
    pub iter: usize,
    pub mesh: &'a Mesh,
    pub cut: &'a CutTopology,
    pub dofs: &'a ChDofMap,
    pub u: &'a PrimalField,
    pub theta: &'a MultiplierField,
    pub flux: &'a ReconstructedFlux,
    pub report: &'a EstimatorReport,
    pub record: &'a IterationRecord,
}

fn hard_check(check: &'static str, iteration: usize, value: f64, bound: f64) -> Result<()> {
    if value <= bound {
        Ok(())
    } else {
        Err(Error::HardCheck {
            check,
            iteration,
            value,
            bound,
        })
    }
}

/// Cells that are cut or share a vertex with a cut cell.
pub fn near_interface_cells(mesh: &Mesh, cut: &CutTopology) -> Vec<bool> {
    let mut touched = vec![false; mesh.n_vertices()];
    for c in (0..mesh.n_cells()).filter(|&c| cut.is_cut(c)) {
        for &v in &mesh.cells[c] {
            touched[v] = true;
        }
    }
    mesh.cells
        .iter()
        .map(|t| t.iter().any(|&v| touched[v]))
        .collect()
}

/// Solves on one mesh and runs all structural checks.
pub fn solve_iteration(
    spec: &ExperimentSpec,
    exact: &ExactSolution,
    mesh: &Mesh,
    iter: usize,
) -> Result<(
    CutTopology,
    ChDofMap,
    PrimalField,
    MultiplierField,
    ReconstructedFlux,
    EstimatorReport,
    IterationRecord,
)> {
    let cut = CutTopology::classify(mesh, |x| exact.phi(x))?;
    let dofs = build_ch_dofmap(mesh, &cut);
    let data = ProblemData::new(exact.k, spec.gamma, spec.gamma_g, exact)?;
    let u = solve_primal(mesh, &cut, &data, &dofs)?;
    let residuals = all_residuals(mesh, &cut, &data, &dofs, &u)?;
    let mh = build_mh_dofmap(mesh, &cut, &dofs);
    let theta = assemble_theta(mesh, &data, &mh, &residuals)?;

    let mixed = mixed_identity_defect(mesh, &cut, &data, &dofs, &theta, &residuals);
    hard_check(
        "mixed identity",
        iter,
        mixed.global_relative(),
        HARD_CHECK_TOL,
    )?;
    let flux = reconstruct_flux(mesh, &cut, &dofs, &u, &theta, &data)?;
    let irt = check_irt(&flux, mesh, &cut, &data)?.max();
    hard_check(
        "immersed Raviart-Thomas conditions",
        iter,
        irt,
        HARD_CHECK_TOL,
    )?;
    let cons = check_conservation(&flux, mesh, &cut, &data)?;
    hard_check(
        "conservation",
        iter,
        cons.max_defect,
        HARD_CHECK_TOL * cons.scale,
    )?;
    let mean_jump = mean_zero_jump_defect(&flux, mesh, &cut);
    hard_check("mean-zero normal jumps", iter, mean_jump, HARD_CHECK_TOL)?;

    let mut report = estimate(mesh, &cut, &dofs, &u, &flux, &data)?;
    let energy = energy_error(mesh, &cut, &dofs, &u, &data, |s, x| exact.grad(s, x))?;
    let flux_err = flux_error(mesh, &cut, &flux, &data, |s, x| exact.flux(s, x))?;
    report.energy_error = Some(energy);
    report.flux_error = Some(flux_err);

    let record = IterationRecord {
        iter,
        n_dofs: dofs.n_dofs,
        n_cells: mesh.n_cells(),
        n_cut: cut.n_cut(),
        energy_error: energy,
        flux_error: flux_err,
        eta: report.eta,
        eta_gamma: report.eta_gamma,
        eps: report.eps,
        effectivity: report.eta / energy,
        max_conservation_defect: cons.max_defect,
        conservation_scale: cons.scale,
        mixed_identity_defect: mixed.patch_relative,
        mixed_identity_global: mixed.global_relative(),
        irt_defect: irt,
        mean_jump_defect: mean_jump,
        marked: 0,
        marked_near_interface: 0,
    };
    Ok((cut, dofs, u, theta, flux, report, record))
}

/// Runs the refinement loop. With an output directory, every iteration writes
/// a VTK snapshot and rewrites the CSV table, so a failed run keeps the rows
/// computed before the failure.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ConvergenceTable> {
    let Some(dir) = &spec.out_dir else {
        return run_experiment_with(spec, |_| Ok(()));
    };
    let mut rows = Vec::new();
    run_experiment_with(spec, |view| {
        save_vtk(dir, view)?;
        rows.push(view.record.clone());
        save_csv(dir, &rows)?;
        Ok(())
    })
}

/// Runs the refinement loop, calling `observe` after every solve.
pub fn run_experiment_with<F>(spec: &ExperimentSpec, mut observe: F) -> Result<ConvergenceTable>
where
    F: FnMut(&IterationView) -> Result<()>,
{
    spec.validate()?;
    let exact = make_example(spec.example, spec.mu)?;
    let mut mesh = build_structured_mesh(exact.domain, spec.n0)?;
    let mut rows = Vec::new();
    for iter in 0..spec.max_iters {
        let (cut, dofs, u, theta, flux, report, mut record) =
            solve_iteration(spec, &exact, &mesh, iter)?;
        let done = dofs.n_dofs >= spec.max_dofs || iter + 1 == spec.max_iters;
        let marked: MarkSet = if done {
            MarkSet::new()
        } else {
            match spec.mode {
                RefinementMode::Amr => dorfler_mark(&report.eta_t, spec.theta_mark)?,
                RefinementMode::Uniform => (0..mesh.n_cells()).collect(),
            }
        };
        let near = near_interface_cells(&mesh, &cut);
        record.marked = marked.len();
        record.marked_near_interface = marked.iter().filter(|&&c| near[c]).count();
        observe(&IterationView {
            iter,
            mesh: &mesh,
            cut: &cut,
            dofs: &dofs,
            u: &u,
            theta: &theta,
            flux: &flux,
            report: &report,
            record: &record,
        })?;
        rows.push(record);
        if done {
            break;
        }
        mesh = match spec.mode {
            RefinementMode::Amr => mesh.refine(&marked)?,
            RefinementMode::Uniform => mesh.refine_uniform()?,
        };
    }
    Ok(ConvergenceTable {
        spec: spec.clone(),
        rows,
    })
}
