//! Conservative flux reconstruction in the immersed Raviart-Thomas space.

use nalgebra::{DMatrix, DVector};

use crate::assembly::{mean_normal_flux, ProblemData, DATA_DEGREE};
use crate::geometry::{CutCell, CutTopology};
use crate::linalg::solve_dense_square;
use crate::mesh::Mesh;
use crate::multiplier::MultiplierField;
use crate::quadrature::{quad_polygon, quad_segment};
use crate::spaces::{outward_normal, ChDofMap, PrimalField, RtCoeffs};
use crate::{dot, norm, par, sub, Error, Point, Result};

/// Flux on one cell: a single RT0 function, or a pair valid on the two sub-polygons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellFlux {
    Uncut(RtCoeffs),
    Cut([RtCoeffs; 2]),
}

impl CellFlux {
    /// The RT0 function used on side `s`.
    pub fn side(&self, s: usize) -> &RtCoeffs {
        match self {
            CellFlux::Uncut(r) => r,
            CellFlux::Cut(p) => &p[s],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructedFlux {
    /// `int_F sigma . n_F` per edge.
    pub edge_flux: Vec<f64>,
    pub cell: Vec<CellFlux>,
    /// Interface-data correction on cut cells (absent when the flux jump vanishes).
    pub sigma_g: Vec<Option<[RtCoeffs; 2]>>,
}

/// Edge dofs: for each side carrying a multiplier on `e`, the mean normal
/// flux over the side's part of the edge minus `k_s h_F` times the mean multiplier.
pub fn flux_dofs(
    mesh: &Mesh,
    cut: &CutTopology,
    dofs: &ChDofMap,
    u: &PrimalField,
    theta: &MultiplierField,
    data: &ProblemData,
) -> Result<Vec<f64>> {
    par::try_map_range(mesh.n_edges(), |e| {
        let mut phi = 0.0;
        for s in 0..2 {
            if !cut.in_edge[s][e] {
                continue;
            }
            let q = mean_normal_flux(mesh, dofs, u, data, s, e)?;
            phi += q * cut.edge_cut[e].len[s] - data.k[s] * mesh.h_edge[e] * theta.mean(s, e);
        }
        Ok(phi)
    })
}

/// Outward edge fluxes of cell `c` from the edge dofs.
pub fn cell_dof_triple(mesh: &Mesh, edge_flux: &[f64], c: usize) -> [f64; 3] {
    std::array::from_fn(|j| {
        let e = mesh.cell_edges[c][j];
        mesh.edges[e].sign_for(c) * edge_flux[e]
    })
}

/// The 6x6 system converting cut-cell edge fluxes into a pair of RT0 functions.
///
/// Unknowns are the outward edge fluxes `x^0_j, x^1_j` of the two RT0
/// functions over the full triangle. Rows: three edge balances (the uncut edge
/// is owned by one side), equal divergence, normal-trace jump across the
/// interface and the tangential condition at the interface midpoint.
#[derive(Debug, Clone)]
pub struct CutFluxSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

pub fn cut_flux_system(
    tri: &[Point; 3],
    area: f64,
    cc: &CutCell,
    b: [f64; 3],
    k: [f64; 2],
    normal_jump: f64,
) -> CutFluxSystem {
    let mut a = DMatrix::zeros(6, 6);
    let mut rhs = DVector::zeros(6);
    for j in 0..3 {
        if j == cc.uncut_edge() {
            a[(j, 3 * cc.uncut_side() + j)] = 1.0;
        } else {
            let total = cc.sub_len[j][0] + cc.sub_len[j][1];
            a[(j, j)] = cc.sub_len[j][0] / total;
            a[(j, 3 + j)] = cc.sub_len[j][1] / total;
        }
        rhs[j] = b[j];
        let d = sub(cc.mid, tri[j]);
        let alpha = dot(d, cc.normal);
        let beta = dot(d, cc.tangent);
        a[(3, j)] = 1.0;
        a[(3, 3 + j)] = -1.0;
        a[(4, j)] = alpha;
        a[(4, 3 + j)] = -alpha;
        a[(5, j)] = beta / k[0];
        a[(5, 3 + j)] = -beta / k[1];
    }
    rhs[4] = 2.0 * area * normal_jump;
    CutFluxSystem { matrix: a, rhs }
}

fn solve_cut(
    mesh: &Mesh,
    cut: &CutTopology,
    c: usize,
    b: [f64; 3],
    k: [f64; 2],
    normal_jump: f64,
) -> Result<[RtCoeffs; 2]> {
    let cc = cut
        .cut_cell(c)
        .ok_or_else(|| Error::InvalidInput(format!("cell {c} is not cut")))?;
    let tri = mesh.cell_points(c);
    let sys = cut_flux_system(&tri, mesh.area[c], cc, b, k, normal_jump);
    let x = solve_dense_square(sys.matrix, sys.rhs).ok_or_else(|| Error::SingularCutSystem {
        cell: c,
        detail: format!(
            "interface from {:?} to {:?}, sub-edge lengths {:?}",
            cc.gamma[0], cc.gamma[1], cc.sub_len
        ),
    })?;
    Ok([
        RtCoeffs {
            flux: [x[0], x[1], x[2]],
        },
        RtCoeffs {
            flux: [x[3], x[4], x[5]],
        },
    ])
}

/// Splits the outward edge fluxes `b` of cut cell `c` into an immersed RT0 pair.
pub fn irt_split(
    mesh: &Mesh,
    cut: &CutTopology,
    c: usize,
    b: [f64; 3],
    k: [f64; 2],
) -> Result<[RtCoeffs; 2]> {
    solve_cut(mesh, cut, c, b, k, 0.0)
}

/// Correction pair with zero edge fluxes whose normal trace jumps by `g_mean` across the interface.
pub fn sigma_g(
    mesh: &Mesh,
    cut: &CutTopology,
    c: usize,
    g_mean: f64,
    k: [f64; 2],
) -> Result<[RtCoeffs; 2]> {
    solve_cut(mesh, cut, c, [0.0; 3], k, g_mean)
}

/// Mean of the interface data over the interface segment of cut cell `c`.
pub fn interface_data_mean(
    mesh: &Mesh,
    cut: &CutTopology,
    data: &ProblemData,
    c: usize,
) -> Result<Option<f64>> {
    let _ = mesh;
    let Some(cc) = cut.cut_cell(c) else {
        return Ok(None);
    };
    let rule = quad_segment(cc.gamma[0], cc.gamma[1], 5)?;
    let mut any = false;
    let total = rule.integrate(|x| match data.source.g(x) {
        Some(g) => {
            any = true;
            g
        }
        None => 0.0,
    });
    Ok(any.then(|| total / rule.measure()))
}

pub fn reconstruct_flux(
    mesh: &Mesh,
    cut: &CutTopology,
    dofs: &ChDofMap,
    u: &PrimalField,
    theta: &MultiplierField,
    data: &ProblemData,
) -> Result<ReconstructedFlux> {
    let edge_flux = flux_dofs(mesh, cut, dofs, u, theta, data)?;
    let parts = par::try_map_range(
        mesh.n_cells(),
        |c| -> Result<(CellFlux, Option<[RtCoeffs; 2]>)> {
            let b = cell_dof_triple(mesh, &edge_flux, c);
            if !cut.is_cut(c) {
                return Ok((CellFlux::Uncut(RtCoeffs { flux: b }), None));
            }
            let pair = irt_split(mesh, cut, c, b, data.k)?;
            let corr = match interface_data_mean(mesh, cut, data, c)? {
                Some(g) => Some(sigma_g(mesh, cut, c, g, data.k)?),
                None => None,
            };
            Ok((CellFlux::Cut(pair), corr))
        },
    )?;
    let (cell, sigma_g) = parts.into_iter().unzip();
    Ok(ReconstructedFlux {
        edge_flux,
        cell,
        sigma_g,
    })
}

/// `sigma_h` on side `s` of cell `c` at `x`.
pub fn eval_flux(
    flux: &ReconstructedFlux,
    mesh: &Mesh,
    cut: &CutTopology,
    c: usize,
    s: usize,
    x: Point,
) -> Result<Point> {
    if !cut.in_cell[s][c] {
        return Err(Error::SideMismatch {
            cell: c,
            side: crate::geometry::side_name(s),
        });
    }
    Ok(flux.cell[c].side(s).eval(&mesh.cell_points(c), x))
}

/// `sigma_h + sigma^g` on side `s` of cell `c` at `x`.
pub fn eval_total_flux(
    flux: &ReconstructedFlux,
    mesh: &Mesh,
    cut: &CutTopology,
    c: usize,
    s: usize,
    x: Point,
) -> Result<Point> {
    let mut v = eval_flux(flux, mesh, cut, c, s, x)?;
    if let Some(pair) = &flux.sigma_g[c] {
        let w = pair[s].eval(&mesh.cell_points(c), x);
        v = [v[0] + w[0], v[1] + w[1]];
    }
    Ok(v)
}

/// `int_T div_h (sigma_h + sigma^g)`, summed side-wise over the sub-polygons.
pub fn cell_divergence_integral(
    flux: &ReconstructedFlux,
    mesh: &Mesh,
    cut: &CutTopology,
    c: usize,
) -> f64 {
    let tri = mesh.cell_points(c);
    let mut total = 0.0;
    for s in 0..2 {
        let area = cut.piece_area(mesh, c, s);
        if area == 0.0 {
            continue;
        }
        total += area * flux.cell[c].side(s).div(&tri);
        if let Some(pair) = &flux.sigma_g[c] {
            total += area * pair[s].div(&tri);
        }
    }
    total
}

/// Elementwise conservation defect and the bound it is measured against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservationReport {
    /// `max_T |int_T div_h sigma + int_T f|`.
    pub max_defect: f64,
    /// `max_T |T| sup_T |f|`, or the largest edge flux when the source vanishes.
    pub scale: f64,
}

impl ConservationReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_defect <= tol * self.scale
    }
}

pub fn check_conservation(
    flux: &ReconstructedFlux,
    mesh: &Mesh,
    cut: &CutTopology,
    data: &ProblemData,
) -> Result<ConservationReport> {
    let per_cell = par::try_map_range(mesh.n_cells(), |c| -> Result<(f64, f64)> {
        let mut int_f = 0.0;
        let mut sup_f = 0.0f64;
        for s in 0..2 {
            if !cut.in_cell[s][c] {
                continue;
            }
            let rule = quad_polygon(&cut.piece(mesh, c, s)?, DATA_DEGREE)?;
            for (x, w) in rule.iter() {
                let f = data.source.f(s, x);
                int_f += w * f;
                sup_f = sup_f.max(f.abs());
            }
        }
        let defect = (cell_divergence_integral(flux, mesh, cut, c) + int_f).abs();
        Ok((defect, mesh.area[c] * sup_f))
    })?;
    let max_defect = per_cell.iter().map(|p| p.0).fold(0.0, f64::max);
    let mut scale = per_cell.iter().map(|p| p.1).fold(0.0, f64::max);
    if scale == 0.0 {
        scale = flux.edge_flux.iter().map(|v| v.abs()).fold(0.0, f64::max);
    }
    Ok(ConservationReport { max_defect, scale })
}

/// Relative defects of the immersed Raviart-Thomas conditions on one cut cell.
///
/// Trace defects are measured against the size of the fields involved.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IrtDefects {
    pub normal: f64,
    pub tangential: f64,
    pub divergence: f64,
    /// Edge fluxes recomputed by sub-edge quadrature against the input triple.
    pub roundtrip: f64,
}

impl IrtDefects {
    pub fn max(&self) -> f64 {
        self.normal
            .max(self.tangential)
            .max(self.divergence)
            .max(self.roundtrip)
    }

    pub fn merge(self, o: Self) -> Self {
        Self {
            normal: self.normal.max(o.normal),
            tangential: self.tangential.max(o.tangential),
            divergence: self.divergence.max(o.divergence),
            roundtrip: self.roundtrip.max(o.roundtrip),
        }
    }
}

fn rel(d: f64, scale: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else if scale > 0.0 {
        d / scale
    } else {
        f64::INFINITY
    }
}

/// Checks a pair against the immersed conditions with normal-trace jump `normal_jump`
/// and target edge fluxes `b`, by evaluation and quadrature.
pub fn irt_defects(
    mesh: &Mesh,
    cut: &CutTopology,
    c: usize,
    pair: &[RtCoeffs; 2],
    b: [f64; 3],
    k: [f64; 2],
    normal_jump: f64,
) -> IrtDefects {
    let cc = cut.cut_cell(c).expect("cut cell");
    let tri = mesh.cell_points(c);
    let mut out = IrtDefects::default();
    for &x in &cc.gamma {
        let (v0, v1) = (pair[0].eval(&tri, x), pair[1].eval(&tri, x));
        let (n0, n1) = (dot(v0, cc.normal), dot(v1, cc.normal));
        let scale = norm(v0).max(norm(v1)).max(normal_jump.abs());
        out.normal = out.normal.max(rel((n0 - n1 - normal_jump).abs(), scale));
    }
    let (v0, v1) = (pair[0].eval(&tri, cc.mid), pair[1].eval(&tri, cc.mid));
    let (t0, t1) = (dot(v0, cc.tangent) / k[0], dot(v1, cc.tangent) / k[1]);
    out.tangential = rel((t0 - t1).abs(), (norm(v0) / k[0]).max(norm(v1) / k[1]));
    let (d0, d1) = (pair[0].div(&tri), pair[1].div(&tri));
    let dof_scale = pair
        .iter()
        .flat_map(|r| r.flux)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        / mesh.area[c];
    out.divergence = rel((d0 - d1).abs(), d0.abs().max(d1.abs()).max(dof_scale));
    let bscale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for j in 0..3 {
        let e = mesh.cell_edges[c][j];
        let n = outward_normal(&tri, j);
        let mut total = 0.0;
        for s in 0..2 {
            if let Some([p, q]) = cut.edge_piece(mesh, e, s) {
                let rule = quad_segment(p, q, 2).expect("segment rule");
                total += rule.integrate(|x| dot(pair[s].eval(&tri, x), n));
            }
        }
        out.roundtrip = out.roundtrip.max(rel((total - b[j]).abs(), bscale));
    }
    out
}

/// IRT defects of the reconstructed flux (and correction) over all cut cells.
pub fn check_irt(
    flux: &ReconstructedFlux,
    mesh: &Mesh,
    cut: &CutTopology,
    data: &ProblemData,
) -> Result<IrtDefects> {
    let per_cell = par::try_map_range(mesh.n_cells(), |c| -> Result<IrtDefects> {
        let CellFlux::Cut(pair) = &flux.cell[c] else {
            return Ok(IrtDefects::default());
        };
        let b = cell_dof_triple(mesh, &flux.edge_flux, c);
        let mut d = irt_defects(mesh, cut, c, pair, b, data.k, 0.0);
        if let Some(g) = &flux.sigma_g[c] {
            let gm = interface_data_mean(mesh, cut, data, c)?.unwrap_or(0.0);
            let mut dg = irt_defects(mesh, cut, c, g, [0.0; 3], data.k, gm);
            // Zero target fluxes: measure against the correction's own size.
            let tri = mesh.cell_points(c);
            let gscale = g
                .iter()
                .flat_map(|r| r.flux)
                .fold(0.0f64, |m, v| m.max(v.abs()));
            dg.roundtrip = 0.0;
            for j in 0..3 {
                let e = mesh.cell_edges[c][j];
                let n = outward_normal(&tri, j);
                let mut total = 0.0;
                for s in 0..2 {
                    if let Some([p, q]) = cut.edge_piece(mesh, e, s) {
                        total += quad_segment(p, q, 2)?.integrate(|x| dot(g[s].eval(&tri, x), n));
                    }
                }
                dg.roundtrip = dg.roundtrip.max(rel(total.abs(), gscale));
            }
            d = d.merge(dg);
        }
        Ok(d)
    })?;
    Ok(per_cell
        .into_iter()
        .fold(IrtDefects::default(), IrtDefects::merge))
}

/// Largest `|int_F [sigma . n_F]|` over interior edges, relative to the largest edge flux,
/// with traces integrated side-wise over the sub-edges.
pub fn mean_zero_jump_defect(flux: &ReconstructedFlux, mesh: &Mesh, cut: &CutTopology) -> f64 {
    let scale = flux.edge_flux.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = par::map_range(mesh.n_edges(), |e| {
        let edge = &mesh.edges[e];
        let Some(p) = edge.plus else { return 0.0 };
        let n = mesh.normal[e];
        let trace = |c: usize| -> f64 {
            let tri = mesh.cell_points(c);
            (0..2)
                .filter_map(|s| {
                    let [a, b] = cut.edge_piece(mesh, e, s)?;
                    if !cut.in_cell[s][c] {
                        return None;
                    }
                    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
                    Some(crate::dist(a, b) * dot(flux.cell[c].side(s).eval(&tri, mid), n))
                })
                .sum()
        };
        (trace(edge.minus) - trace(p)).abs()
    })
    .into_iter()
    .fold(0.0, f64::max);
    rel(worst, scale)
}
