//! A posteriori indicators built from the reconstructed flux, plus exact error norms.

use crate::assembly::{ProblemData, DATA_DEGREE};
use crate::flux::{eval_total_flux, ReconstructedFlux};
use crate::geometry::CutTopology;
use crate::mesh::Mesh;
use crate::quadrature::{quad_polygon, quad_segment};
use crate::spaces::{eval_field, grad_field, interface_jump, ChDofMap, PrimalField};
use crate::{dot, par, sub, Point, Result};

/// Local and global indicators of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorReport {
    /// `eta_T` per cell.
    pub eta_t: Vec<f64>,
    /// Interface-jump indicator per cell (cut cells only).
    pub eta_tilde: Vec<Option<f64>>,
    /// Normal-trace jump indicator per edge (interior cut edges only).
    pub eta_f: Vec<Option<f64>>,
    /// Data oscillation per cell, already weighted by `h_T^2 / delta_T`.
    pub eps_t: Vec<f64>,
    pub eta: f64,
    pub eta_gamma: f64,
    pub eps: f64,
    pub energy_error: Option<f64>,
    pub flux_error: Option<f64>,
}

impl EstimatorReport {
    /// `eta / energy_error`.
    pub fn effectivity(&self) -> Option<f64> {
        self.energy_error.map(|e| self.eta / e)
    }

    /// Largest relative mismatch between the global values and their local parts.
    pub fn aggregation_defect(&self) -> f64 {
        let check = |global: f64, sq: f64| {
            let local = sq.sqrt();
            if global == local {
                0.0
            } else {
                (global - local).abs() / global.abs().max(local)
            }
        };
        let gamma_sq =
            sum_sq(self.eta_tilde.iter().flatten()) + sum_sq(self.eta_f.iter().flatten());
        check(self.eta, sum_sq(&self.eta_t))
            .max(check(self.eta_gamma, gamma_sq))
            .max(check(self.eps, self.eps_t.iter().map(|v| v * v).sum()))
    }
}

fn sum_sq<'a>(v: impl IntoIterator<Item = &'a f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum()
}

/// `|| k^{-1/2} (sigma_h - k grad u_h) ||_T`, side-wise on cut cells.
pub fn eta_t(
    mesh: &Mesh,
    cut: &CutTopology,
    dofs: &ChDofMap,
    u: &PrimalField,
    flux: &ReconstructedFlux,
    data: &ProblemData,
    c: usize,
) -> Result<f64> {
    flux_mismatch(mesh, cut, dofs, u, flux, data, c, 2)
}

fn flux_mismatch(
    mesh: &Mesh,
    cut: &CutTopology,
    dofs: &ChDofMap,
    u: &PrimalField,
    flux: &ReconstructedFlux,
    data: &ProblemData,
    c: usize,
    degree: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for s in 0..2 {
        if !cut.in_cell[s][c] {
            continue;
        }
        let k = data.k[s];
        let g = grad_field(u, mesh, dofs, c, s)?;
        let rule = quad_polygon(&cut.piece(mesh, c, s)?, degree)?;
        for (x, w) in rule.iter() {
            let sigma = eval_total_flux(flux, mesh, cut, c, s, x)?;
            let d = [sigma[0] - k * g[0], sigma[1] - k * g[1]];
            total += w * dot(d, d) / k;
        }
    }
    Ok(total.sqrt())
}

/// `sqrt(h_T k_Gamma / (h_min |Gamma_T|)) || [u_h] ||_{Gamma_T}` on cut cell `c`.
pub fn eta_tilde_t(
    mesh: &Mesh,
    cut: &CutTopology,
    dofs: &ChDofMap,
    u: &PrimalField,
    data: &ProblemData,
    c: usize,
) -> Result<Option<f64>> {
    let Some(cc) = cut.cut_cell(c) else {
        return Ok(None);
    };
    let rule = quad_segment(cc.gamma[0], cc.gamma[1], 2)?;
    let mut sq = 0.0;
    for (x, w) in rule.iter() {
        let j = interface_jump(u, mesh, dofs, c, x)?;
        sq += w * j * j;
    }
    let prefactor = (mesh.h_cell[c] * data.weights.k_gamma / (cc.h_min * cc.length)).sqrt();
    Ok(Some(prefactor * sq.sqrt()))
}

/// `sqrt(h_F / k_Gamma) ||j||_F` for a jump that is constant on each sub-edge.
pub fn eta_f_from_jumps(h_f: f64, k_gamma: f64, pieces: &[(f64, f64)]) -> f64 {
    let sq: f64 = pieces.iter().map(|&(len, j)| len * j * j).sum();
    (h_f / k_gamma).sqrt() * sq.sqrt()
}

/// Normal-trace jump of the total flux across edge `e` on each side's sub-edge,
/// as `(length, jump)` pairs.
pub fn normal_trace_jumps(
    mesh: &Mesh,
    cut: &CutTopology,
    flux: &ReconstructedFlux,
    e: usize,
) -> Result<Vec<(f64, f64)>> {
    let edge = &mesh.edges[e];
    let Some(p) = edge.plus else {
        return Ok(Vec::new());
    };
    let n = mesh.normal[e];
    let mut out = Vec::with_capacity(2);
    for s in 0..2 {
        let Some([a, b]) = cut.edge_piece(mesh, e, s) else {
            continue;
        };
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let jm = dot(eval_total_flux(flux, mesh, cut, edge.minus, s, mid)?, n);
        let jp = dot(eval_total_flux(flux, mesh, cut, p, s, mid)?, n);
        out.push((cut.edge_cut[e].len[s], jm - jp));
    }
    Ok(out)
}

/// Indicator of an interior edge crossed by the interface.
pub fn eta_f(
    mesh: &Mesh,
    cut: &CutTopology,
    flux: &ReconstructedFlux,
    data: &ProblemData,
    e: usize,
) -> Result<Option<f64>> {
    if cut.edge_cut[e].split.is_none() || mesh.edges[e].is_boundary() {
        return Ok(None);
    }
    let jumps = normal_trace_jumps(mesh, cut, flux, e)?;
    Ok(Some(eta_f_from_jumps(
        mesh.h_edge[e],
        data.weights.k_gamma,
        &jumps,
    )))
}

/// Weight `delta_T`: the local coefficient on uncut cells, `k_Gamma` on cut cells.
pub fn delta_t(cut: &CutTopology, data: &ProblemData, c: usize) -> f64 {
    if cut.is_cut(c) {
        data.weights.k_gamma
    } else {
        data.k[usize::from(!cut.in_cell[0][c])]
    }
}

/// `(h_T^2 / delta_T) || f - pi_T f ||_T^2` per cell and the square root of their sum.
pub fn eps_data(mesh: &Mesh, cut: &CutTopology, data: &ProblemData) -> Result<(Vec<f64>, f64)> {
    let sq = par::try_map_range(mesh.n_cells(), |c| -> Result<f64> {
        let mut samples = Vec::new();
        for s in 0..2 {
            if !cut.in_cell[s][c] {
                continue;
            }
            let rule = quad_polygon(&cut.piece(mesh, c, s)?, DATA_DEGREE)?;
            samples.extend(rule.iter().map(|(x, w)| (w, data.source.f(s, x))));
        }
        let measure: f64 = samples.iter().map(|p| p.0).sum();
        let mean = samples.iter().map(|(w, f)| w * f).sum::<f64>() / measure;
        let osc: f64 = samples
            .iter()
            .map(|(w, f)| w * (f - mean) * (f - mean))
            .sum();
        Ok(mesh.h_cell[c] * mesh.h_cell[c] / delta_t(cut, data, c) * osc)
    })?;
    let local: Vec<f64> = sq.iter().map(|v| v.sqrt()).collect();
    let global = sq.iter().sum::<f64>().sqrt();
    Ok((local, global))
}

/// All indicators; exact errors are left empty.
pub fn estimate(
    mesh: &Mesh,
    cut: &CutTopology,
    dofs: &ChDofMap,
    u: &PrimalField,
    flux: &ReconstructedFlux,
    data: &ProblemData,
) -> Result<EstimatorReport> {
    let eta_t = par::try_map_range(mesh.n_cells(), |c| eta_t(mesh, cut, dofs, u, flux, data, c))?;
    let eta_tilde =
        par::try_map_range(mesh.n_cells(), |c| eta_tilde_t(mesh, cut, dofs, u, data, c))?;
    let eta_f = par::try_map_range(mesh.n_edges(), |e| eta_f(mesh, cut, flux, data, e))?;
    let (eps_t, eps) = eps_data(mesh, cut, data)?;
    let eta = sum_sq(&eta_t).sqrt();
    let eta_gamma = (sum_sq(eta_tilde.iter().flatten()) + sum_sq(eta_f.iter().flatten())).sqrt();
    Ok(EstimatorReport {
        eta_t,
        eta_tilde,
        eta_f,
        eps_t,
        eta,
        eta_gamma,
        eps,
        energy_error: None,
        flux_error: None,
    })
}

/// `sqrt(sum_s || k_s^{1/2} (grad u - grad u_h) ||^2)` over the side-wise pieces.
pub fn energy_error<G>(
    mesh: &Mesh,
    cut: &CutTopology,
    dofs: &ChDofMap,
    u: &PrimalField,
    data: &ProblemData,
    grad: G,
) -> Result<f64>
where
    G: Fn(usize, Point) -> Point + Sync,
{
    let sq = par::try_map_range(mesh.n_cells(), |c| -> Result<f64> {
        let mut total = 0.0;
        for s in 0..2 {
            if !cut.in_cell[s][c] {
                continue;
            }
            let gh = grad_field(u, mesh, dofs, c, s)?;
            let rule = quad_polygon(&cut.piece(mesh, c, s)?, DATA_DEGREE)?;
            total += data.k[s]
                * rule.integrate(|x| {
                    let d = sub(grad(s, x), gh);
                    dot(d, d)
                });
        }
        Ok(total)
    })?;
    Ok(sq.iter().sum::<f64>().sqrt())
}

/// `|| K^{-1/2} (sigma - sigma_h) ||` with the exact flux `sigma = K grad u`.
pub fn flux_error<S>(
    mesh: &Mesh,
    cut: &CutTopology,
    flux: &ReconstructedFlux,
    data: &ProblemData,
    sigma: S,
) -> Result<f64>
where
    S: Fn(usize, Point) -> Point + Sync,
{
    let sq = par::try_map_range(mesh.n_cells(), |c| -> Result<f64> {
        let mut total = 0.0;
        for s in 0..2 {
            if !cut.in_cell[s][c] {
                continue;
            }
            let rule = quad_polygon(&cut.piece(mesh, c, s)?, DATA_DEGREE)?;
            for (x, w) in rule.iter() {
                let d = sub(sigma(s, x), eval_total_flux(flux, mesh, cut, c, s, x)?);
                total += w * dot(d, d) / data.k[s];
            }
        }
        Ok(total)
    })?;
    Ok(sq.iter().sum::<f64>().sqrt())
}

/// `|| u - u_h ||` in L2, for diagnostics.
pub fn l2_error<U>(
    mesh: &Mesh,
    cut: &CutTopology,
    dofs: &ChDofMap,
    u: &PrimalField,
    exact: U,
) -> Result<f64>
where
    U: Fn(usize, Point) -> f64 + Sync,
{
    let sq = par::try_map_range(mesh.n_cells(), |c| -> Result<f64> {
        let mut total = 0.0;
        for s in 0..2 {
            if !cut.in_cell[s][c] {
                continue;
            }
            let rule = quad_polygon(&cut.piece(mesh, c, s)?, DATA_DEGREE)?;
            for (x, w) in rule.iter() {
                let d = exact(s, x) - eval_field(u, mesh, dofs, c, s, x)?;
                total += w * d * d;
            }
        }
        Ok(total)
    })?;
    Ok(sq.iter().sum::<f64>().sqrt())
}
