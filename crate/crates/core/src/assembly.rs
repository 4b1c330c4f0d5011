//! The unfitted Nitsche system and elementwise residuals.

use crate::geometry::{kappa_weights, CutCell, CutTopology, Weights};
use crate::linalg::{SparseMatrix, SpdSolver};
use crate::mesh::Mesh;
use crate::quadrature::{quad_polygon, quad_segment};
use crate::spaces::{grad_field, local_gradient, ChDofMap, PrimalField};
use crate::{dot, par, sub, Error, Point, Result};

/// Quadrature degree for integrands involving the (non-polynomial) data.
pub const DATA_DEGREE: usize = 4;

/// Problem data entering the right-hand side.
pub trait Source: Sync {
    /// Source term on side `s`.
    fn f(&self, s: usize, x: Point) -> f64;
    /// Interface flux jump, `None` when it vanishes identically.
    fn g(&self, x: Point) -> Option<f64>;
    /// Dirichlet value of side `s`.
    fn boundary(&self, s: usize, x: Point) -> f64;
}

/// Coefficients and stabilisation parameters.
#[derive(Clone, Copy)]
pub struct ProblemData<'a> {
    pub k: [f64; 2],
    pub weights: Weights,
    /// Nitsche penalty.
    pub gamma: f64,
    /// Ghost penalty.
    pub gamma_g: f64,
    pub source: &'a dyn Source,
}

impl<'a> ProblemData<'a> {
    pub fn new(k: [f64; 2], gamma: f64, gamma_g: f64, source: &'a dyn Source) -> Result<Self> {
        let weights = kappa_weights(k[0], k[1])?;
        if !(gamma > 0.0 && gamma_g > 0.0) {
            return Err(Error::InvalidInput(format!(
                "penalty parameters must be positive, got gamma = {gamma}, gamma_g = {gamma_g}"
            )));
        }
        Ok(Self {
            k,
            weights,
            gamma,
            gamma_g,
            source,
        })
    }

    /// `+1` for side 0 and `-1` for side 1: the sign of `v_s` in `[v] = v_0 - v_1`.
    pub fn jump_sign(s: usize) -> f64 {
        if s == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Assembled system over all dofs (Dirichlet rows included).
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
}

/// Element matrices and load vectors of one cell.
#[derive(Debug, Clone, Default)]
pub struct LocalBlocks {
    /// `k_s |T^s| grad l_a . grad l_b` per present side.
    pub vol: [Option<[[f64; 3]; 3]>; 2],
    /// Source and interface-data load per present side.
    pub load: [Option<[f64; 3]>; 2],
    /// Interface block on cut cells, indexed by `3 s + a`.
    pub iface: Option<[[f64; 6]; 6]>,
}

/// Interface quantities of a cut cell: the penalty, `int l_a l_b`, `int l_a`
/// and `grad l_a . n_Gamma`.
struct InterfaceMoments {
    pen: f64,
    mass: [[f64; 3]; 3],
    m: [f64; 3],
    dn: [f64; 3],
}

fn interface_moments(
    mesh: &Mesh,
    data: &ProblemData,
    cc: &CutCell,
    c: usize,
) -> Result<InterfaceMoments> {
    let grads = mesh.barycentric_gradients(c);
    let pen = data.gamma * data.weights.k_gamma / mesh.h_cell[c];
    let rule = quad_segment(cc.gamma[0], cc.gamma[1], 2)?;
    let mut mass = [[0.0; 3]; 3];
    let mut m = [0.0; 3];
    for (x, w) in rule.iter() {
        let l = mesh.barycentric(c, x);
        for a in 0..3 {
            m[a] += w * l[a];
            for b in 0..3 {
                mass[a][b] += w * l[a] * l[b];
            }
        }
    }
    let dn = std::array::from_fn(|a| dot(grads[a], cc.normal));
    Ok(InterfaceMoments { pen, mass, m, dn })
}

pub fn local_blocks(
    mesh: &Mesh,
    cut: &CutTopology,
    data: &ProblemData,
    c: usize,
) -> Result<LocalBlocks> {
    let grads = mesh.barycentric_gradients(c);
    let mut out = LocalBlocks::default();
    for s in 0..2 {
        if !cut.in_cell[s][c] {
            continue;
        }
        let area = cut.piece_area(mesh, c, s);
        let ks = data.k[s];
        out.vol[s] = Some(std::array::from_fn(|a| {
            std::array::from_fn(|b| ks * area * dot(grads[a], grads[b]))
        }));
        let rule = quad_polygon(&cut.piece(mesh, c, s)?, DATA_DEGREE)?;
        let mut load = [0.0; 3];
        for (x, w) in rule.iter() {
            let fx = w * data.source.f(s, x);
            let l = mesh.barycentric(c, x);
            for a in 0..3 {
                load[a] += fx * l[a];
            }
        }
        out.load[s] = Some(load);
    }
    if let Some(cc) = cut.cut_cell(c) {
        let kg = data.weights.k_gamma;
        let InterfaceMoments { pen, mass, m, dn } = interface_moments(mesh, data, cc, c)?;
        let mut block = [[0.0; 6]; 6];
        for s in 0..2 {
            let ss = ProblemData::jump_sign(s);
            for t in 0..2 {
                let st = ProblemData::jump_sign(t);
                for a in 0..3 {
                    for b in 0..3 {
                        block[3 * s + a][3 * t + b] = pen * ss * st * mass[a][b]
                            - kg * dn[b] * ss * m[a]
                            - kg * dn[a] * st * m[b];
                    }
                }
            }
        }
        out.iface = Some(block);
        let grule = quad_segment(cc.gamma[0], cc.gamma[1], 5)?;
        let mut gl = [0.0; 3];
        let mut any = false;
        for (x, w) in grule.iter() {
            if let Some(g) = data.source.g(x) {
                any = true;
                let l = mesh.barycentric(c, x);
                for a in 0..3 {
                    gl[a] += w * g * l[a];
                }
            }
        }
        if any {
            // Test functions enter through {v}* = omega2 v_0 + omega1 v_1.
            for s in 0..2 {
                let wgt = data.weights.omega(1 - s);
                let load = out.load[s].as_mut().unwrap();
                for a in 0..3 {
                    load[a] += wgt * gl[a];
                }
            }
        }
    }
    Ok(out)
}

/// Ghost-penalty coefficients: the normal-derivative jump of a side field
/// across interior edge `e` is `sum_a cm[a] u^-_a + sum_a cp[a] u^+_a`.
pub fn ghost_coeffs(mesh: &Mesh, e: usize) -> ([f64; 3], [f64; 3]) {
    let edge = &mesh.edges[e];
    let n = mesh.normal[e];
    let gm = mesh.barycentric_gradients(edge.minus);
    let gp = mesh.barycentric_gradients(edge.plus.expect("ghost edge must be interior"));
    (
        std::array::from_fn(|a| dot(gm[a], n)),
        std::array::from_fn(|a| -dot(gp[a], n)),
    )
}

/// `gamma_g k_s h_F^2`: the weight of the ghost term on edge `e`.
fn ghost_weight(mesh: &Mesh, data: &ProblemData, s: usize, e: usize) -> f64 {
    data.gamma_g * data.k[s] * mesh.h_edge[e] * mesh.h_edge[e]
}

pub fn assemble_system(
    mesh: &Mesh,
    cut: &CutTopology,
    data: &ProblemData,
    dofs: &ChDofMap,
) -> Result<LinearSystem> {
    let blocks = par::try_map_range(mesh.n_cells(), |c| local_blocks(mesh, cut, data, c))?;
    let mut triplets = Vec::with_capacity(mesh.n_cells() * 30);
    let mut rhs = vec![0.0; dofs.n_dofs];
    for (c, blk) in blocks.iter().enumerate() {
        for s in 0..2 {
            let (Some(vol), Some(load)) = (blk.vol[s], blk.load[s]) else {
                continue;
            };
            let d = dofs.local(c, s)?;
            for a in 0..3 {
                rhs[d[a]] += load[a];
                for b in 0..3 {
                    triplets.push((d[a], d[b], vol[a][b]));
                }
            }
        }
        if let Some(block) = &blk.iface {
            let d0 = dofs.local(c, 0)?;
            let d1 = dofs.local(c, 1)?;
            let d = [d0[0], d0[1], d0[2], d1[0], d1[1], d1[2]];
            for i in 0..6 {
                for j in 0..6 {
                    triplets.push((d[i], d[j], block[i][j]));
                }
            }
        }
    }
    for s in 0..2 {
        for (e, edge) in mesh.edges.iter().enumerate() {
            if !cut.ghost_edge[s][e] {
                continue;
            }
            let (cm, cp) = ghost_coeffs(mesh, e);
            let dm = dofs.local(edge.minus, s)?;
            let dp = dofs.local(edge.plus.unwrap(), s)?;
            let idx = [dm[0], dm[1], dm[2], dp[0], dp[1], dp[2]];
            let coef = [cm[0], cm[1], cm[2], cp[0], cp[1], cp[2]];
            let w = ghost_weight(mesh, data, s, e);
            for i in 0..6 {
                for j in 0..6 {
                    triplets.push((idx[i], idx[j], w * coef[i] * coef[j]));
                }
            }
        }
    }
    Ok(LinearSystem {
        matrix: SparseMatrix::from_triplets(dofs.n_dofs, triplets)?,
        rhs,
    })
}

/// Solves the discrete problem with Dirichlet dofs eliminated.
///
/// Each side is stored relative to the mean of its Dirichlet values. After the
/// algebraic solve, a few correction steps are driven by the elementwise
/// residuals, which see only nodal differences and the offset jump.
pub fn solve_primal(
    mesh: &Mesh,
    cut: &CutTopology,
    data: &ProblemData,
    dofs: &ChDofMap,
) -> Result<PrimalField> {
    let sys = assemble_system(mesh, cut, data, dofs)?;
    let (mut u, solver, map) = solve_with_factor(mesh, data, dofs, &sys)?;
    let free_residual = |u: &PrimalField| -> Result<(Vec<f64>, f64)> {
        let res = all_residuals(mesh, cut, data, dofs, u)?;
        let mut r = vec![0.0; solver.size()];
        let mut scale = vec![0.0f64; solver.size()];
        for (c, cr) in res.iter().enumerate() {
            for s in 0..2 {
                let Some(d) = dofs.cell_dofs[s][c] else {
                    continue;
                };
                for a in 0..3 {
                    if let Some(i) = map[d[a]] {
                        r[i] += cr.value[s][a];
                        scale[i] = scale[i].max(cr.scale[s][a]);
                    }
                }
            }
        }
        let rel = r
            .iter()
            .zip(&scale)
            .map(|(v, s)| if *s > 0.0 { v.abs() / s } else { v.abs() })
            .fold(0.0, f64::max);
        Ok((r, rel))
    };
    let (mut r, mut rel) = free_residual(&u)?;
    for _ in 0..8 {
        if rel == 0.0 {
            break;
        }
        let dx = solver.solve(&r);
        let mut cand = u.clone();
        for (d, i) in map.iter().enumerate() {
            if let Some(i) = i {
                cand.coeffs[d] += dx[*i];
            }
        }
        let (cr, crel) = free_residual(&cand)?;
        if crel.is_nan() || crel >= rel {
            break;
        }
        let enough = crel > 0.5 * rel;
        (u, r, rel) = (cand, cr, crel);
        if enough {
            break;
        }
    }
    Ok(u)
}

pub fn solve_assembled(
    mesh: &Mesh,
    data: &ProblemData,
    dofs: &ChDofMap,
    sys: &LinearSystem,
) -> Result<PrimalField> {
    Ok(solve_with_factor(mesh, data, dofs, sys)?.0)
}

fn solve_with_factor(
    mesh: &Mesh,
    data: &ProblemData,
    dofs: &ChDofMap,
    sys: &LinearSystem,
) -> Result<(PrimalField, SpdSolver, Vec<Option<usize>>)> {
    let mut u = vec![0.0; dofs.n_dofs];
    let mut map = vec![None; dofs.n_dofs];
    let mut n_free = 0;
    for d in 0..dofs.n_dofs {
        if dofs.dirichlet[d] {
            u[d] = data
                .source
                .boundary(dofs.dof_side[d], mesh.vertices[dofs.dof_vertex[d]]);
        } else {
            map[d] = Some(n_free);
            n_free += 1;
        }
    }
    let mut b = Vec::with_capacity(n_free);
    for d in (0..dofs.n_dofs).filter(|&d| !dofs.dirichlet[d]) {
        let lifted: f64 = sys
            .matrix
            .row(d)
            .filter(|&(c, _)| dofs.dirichlet[c])
            .map(|(c, v)| v * u[c])
            .sum();
        b.push(sys.rhs[d] - lifted);
    }
    let a = sys.matrix.restrict(&map, n_free);
    let solver = SpdSolver::factor(&a)?;
    let x = solver.solve_refined(&a, &b)?;
    for d in 0..dofs.n_dofs {
        if let Some(i) = map[d] {
            u[d] = x[i];
        }
    }
    let mut offset = [0.0; 2];
    for (s, o) in offset.iter_mut().enumerate() {
        let (sum, n) = (0..dofs.n_dofs)
            .filter(|&d| dofs.dirichlet[d] && dofs.dof_side[d] == s)
            .fold((0.0, 0usize), |(a, n), d| (a + u[d], n + 1));
        if n > 0 {
            *o = sum / n as f64;
        }
    }
    for (d, v) in u.iter_mut().enumerate() {
        *v -= offset[dofs.dof_side[d]];
    }
    Ok((PrimalField { coeffs: u, offset }, solver, map))
}

/// Residuals of one cell, tested against `phi_N chi_T` for each side and local node.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellResidual {
    pub value: [[f64; 3]; 2],
    /// Sum of the magnitudes of the contributing terms.
    pub scale: [[f64; 3]; 2],
}

/// Mean flux `<k_s grad u_s . n_F>` on edge `e` (one-sided on the boundary).
pub fn mean_normal_flux(
    mesh: &Mesh,
    dofs: &ChDofMap,
    u: &PrimalField,
    data: &ProblemData,
    s: usize,
    e: usize,
) -> Result<f64> {
    let edge = &mesh.edges[e];
    let n = mesh.normal[e];
    let q = |c: usize| -> Result<f64> {
        let g = local_gradient(&mesh.barycentric_gradients(c), u.local_shifted(dofs, c, s)?);
        Ok(data.k[s] * dot(g, n))
    };
    Ok(match edge.plus {
        Some(p) => 0.5 * (q(edge.minus)? + q(p)?),
        None => q(edge.minus)?,
    })
}

/// `int_{F cap side s} l_a` for the barycentric coordinates of cell `c`.
fn edge_piece_moments(mesh: &Mesh, cut: &CutTopology, c: usize, e: usize, s: usize) -> [f64; 3] {
    match cut.edge_piece(mesh, e, s) {
        Some([p, q]) => {
            let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
            let len = crate::dist(p, q);
            mesh.barycentric(c, mid).map(|l| len * l)
        }
        None => [0.0; 3],
    }
}

/// Ghost-term contribution `gamma_g k_s h_F^2 J(u) J(phi_a chi_c)` for each local node.
fn ghost_terms(
    mesh: &Mesh,
    cut: &CutTopology,
    data: &ProblemData,
    dofs: &ChDofMap,
    u: &PrimalField,
    c: usize,
    s: usize,
) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for &e in &mesh.cell_edges[c] {
        if !cut.ghost_edge[s][e] {
            continue;
        }
        let edge = &mesh.edges[e];
        let p = edge.plus.unwrap();
        let (cm, cp) = ghost_coeffs(mesh, e);
        let gm = grad_field(u, mesh, dofs, edge.minus, s)?;
        let gp = grad_field(u, mesh, dofs, p, s)?;
        let jump = dot(sub(gm, gp), mesh.normal[e]);
        let own = if c == edge.minus { cm } else { cp };
        let w = ghost_weight(mesh, data, s, e);
        for a in 0..3 {
            out[a] += w * jump * own[a];
        }
    }
    Ok(out)
}

/// Residuals of cell `c` tested against its local basis functions:
/// load minus the element forms applied to `u`, plus the mean-flux edge terms.
///
/// Every form is evaluated through gradients and nodal jumps rather than
/// matrix rows, so a large constant part of `u` does not enter through
/// cancellation.
pub fn cell_residual(
    mesh: &Mesh,
    cut: &CutTopology,
    data: &ProblemData,
    dofs: &ChDofMap,
    u: &PrimalField,
    c: usize,
) -> Result<CellResidual> {
    let blk = local_blocks(mesh, cut, data, c)?;
    let grads = mesh.barycentric_gradients(c);
    let mut out = CellResidual::default();
    let uloc: [Option<[f64; 3]>; 2] = std::array::from_fn(|s| u.local_shifted(dofs, c, s).ok());
    let iface = match (cut.cut_cell(c), uloc[0], uloc[1]) {
        (Some(cc), Some(u0), Some(u1)) => {
            let im = interface_moments(mesh, data, cc, c)?;
            let d = u.local_jump(dofs, c)?;
            let dn_sum = dot(local_gradient(&grads, u0), cc.normal)
                + dot(local_gradient(&grads, u1), cc.normal);
            Some((im, d, dn_sum))
        }
        _ => None,
    };
    for s in 0..2 {
        let (Some(load), Some(us)) = (blk.load[s], uloc[s]) else {
            continue;
        };
        let ks = data.k[s];
        let area = cut.piece_area(mesh, c, s);
        let flux = {
            let g = local_gradient(&grads, us);
            [ks * area * g[0], ks * area * g[1]]
        };
        let ghost = ghost_terms(mesh, cut, data, dofs, u, c, s)?;
        let mut edge_terms = [0.0; 3];
        let mut edge_scale = [0.0; 3];
        for &e in &mesh.cell_edges[c] {
            if !cut.in_edge[s][e] {
                continue;
            }
            let q = mean_normal_flux(mesh, dofs, u, data, s, e)?;
            let sign = mesh.edges[e].sign_for(c);
            let mom = edge_piece_moments(mesh, cut, c, e, s);
            for a in 0..3 {
                edge_terms[a] += sign * q * mom[a];
                edge_scale[a] += (q * mom[a]).abs();
            }
        }
        let sgn = ProblemData::jump_sign(s);
        for a in 0..3 {
            let vol = dot(flux, grads[a]);
            let mut v = load[a] - ghost[a] + edge_terms[a] - vol;
            let mut sc = load[a].abs() + ghost[a].abs() + edge_scale[a] + vol.abs();
            if let Some((im, d, dn_sum)) = &iface {
                let kg = data.weights.k_gamma;
                let md: f64 = (0..3).map(|b| im.mass[a][b] * d[b]).sum();
                let jd: f64 = (0..3).map(|b| im.m[b] * d[b]).sum();
                let terms = [
                    im.pen * sgn * md,
                    -kg * sgn * im.m[a] * dn_sum,
                    -kg * im.dn[a] * jd,
                ];
                for t in terms {
                    v -= t;
                    sc += t.abs();
                }
            }
            out.value[s][a] = v;
            out.scale[s][a] = sc;
        }
    }
    Ok(out)
}

/// Residuals of every cell.
pub fn all_residuals(
    mesh: &Mesh,
    cut: &CutTopology,
    data: &ProblemData,
    dofs: &ChDofMap,
    u: &PrimalField,
) -> Result<Vec<CellResidual>> {
    par::try_map_range(mesh.n_cells(), |c| {
        cell_residual(mesh, cut, data, dofs, u, c)
    })
}

/// Residual tested against `phi_N chi_T` for vertex `node` of `cell` on `side`;
/// returns `(value, scale)`.
pub fn assemble_residual(
    mesh: &Mesh,
    cut: &CutTopology,
    data: &ProblemData,
    dofs: &ChDofMap,
    u: &PrimalField,
    cell: usize,
    node: usize,
    side: usize,
) -> Result<(f64, f64)> {
    if !cut.in_cell[side][cell] {
        return Err(Error::SideMismatch {
            cell,
            side: crate::geometry::side_name(side),
        });
    }
    let a = mesh.local_index(cell, node).ok_or_else(|| {
        Error::InvalidInput(format!("vertex {node} is not a vertex of cell {cell}"))
    })?;
    let r = cell_residual(mesh, cut, data, dofs, u, cell)?;
    Ok((r.value[side][a], r.scale[side][a]))
}

/// The same residual after integration by parts on the sub-polygon: source,
/// interface flux mismatch, Nitsche penalty and symmetry terms, half edge
/// jumps of the normal flux, and the ghost terms.
pub fn assemble_residual_ibp(
    mesh: &Mesh,
    cut: &CutTopology,
    data: &ProblemData,
    dofs: &ChDofMap,
    u: &PrimalField,
    cell: usize,
    node: usize,
    side: usize,
) -> Result<f64> {
    if !cut.in_cell[side][cell] {
        return Err(Error::SideMismatch {
            cell,
            side: crate::geometry::side_name(side),
        });
    }
    let a = mesh.local_index(cell, node).ok_or_else(|| {
        Error::InvalidInput(format!("vertex {node} is not a vertex of cell {cell}"))
    })?;
    let grads = mesh.barycentric_gradients(cell);
    let ks = data.k[side];

    let rule = quad_polygon(&cut.piece(mesh, cell, side)?, DATA_DEGREE)?;
    let mut r = rule.integrate(|x| data.source.f(side, x) * mesh.barycentric(cell, x)[a]);

    if let Some(cc) = cut.cut_cell(cell) {
        let kg = data.weights.k_gamma;
        let u0 = u.local_shifted(dofs, cell, 0)?;
        let u1 = u.local_shifted(dofs, cell, 1)?;
        let d = u.local_jump(dofs, cell)?;
        let g0 = local_gradient(&grads, u0);
        let g1 = local_gradient(&grads, u1);
        let flux_jump = data.k[0] * dot(g0, cc.normal) - data.k[1] * dot(g1, cc.normal);
        let jump_at = |x: Point| {
            let l = mesh.barycentric(cell, x);
            (0..3).map(|b| d[b] * l[b]).sum::<f64>()
        };
        let seg = quad_segment(cc.gamma[0], cc.gamma[1], 5)?;
        let omega = data.weights.omega(1 - side);
        r += omega
            * seg.integrate(|x| {
                let g = data.source.g(x).unwrap_or(0.0);
                (g - flux_jump) * mesh.barycentric(cell, x)[a]
            });
        r -= ProblemData::jump_sign(side) * data.gamma * kg / mesh.h_cell[cell]
            * seg.integrate(|x| jump_at(x) * mesh.barycentric(cell, x)[a]);
        r += kg * dot(grads[a], cc.normal) * seg.integrate(jump_at);
    }

    for &e in &mesh.cell_edges[cell] {
        let edge = &mesh.edges[e];
        let Some(p) = edge.plus else { continue };
        if !cut.in_edge[side][e] {
            continue;
        }
        let n = mesh.normal[e];
        let gm = local_gradient(
            &mesh.barycentric_gradients(edge.minus),
            u.local_shifted(dofs, edge.minus, side)?,
        );
        let gp = local_gradient(
            &mesh.barycentric_gradients(p),
            u.local_shifted(dofs, p, side)?,
        );
        let jump = ks * (dot(gm, n) - dot(gp, n));
        let Some([x0, x1]) = cut.edge_piece(mesh, e, side) else {
            continue;
        };
        let q = quad_segment(x0, x1, 2)?;
        r -= 0.5 * jump * q.integrate(|x| mesh.barycentric(cell, x)[a]);
    }
    r -= ghost_terms(mesh, cut, data, dofs, u, cell, side)?[a];
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{make_example, ExampleName};
    use crate::mesh::{build_structured_mesh, Domain};
    use crate::spaces::build_ch_dofmap;
    use rand::{Rng, SeedableRng};

    struct Linear;
    impl Source for Linear {
        fn f(&self, _: usize, _: Point) -> f64 {
            0.0
        }
        fn g(&self, _: Point) -> Option<f64> {
            None
        }
        fn boundary(&self, _: usize, x: Point) -> f64 {
            x[0] + x[1]
        }
    }

    fn ellipse(p: Point) -> f64 {
        (p[0] * p[0] / 0.27 + p[1] * p[1] / 0.55).sqrt() - 1.0
    }

    fn setup(n: usize) -> (Mesh, CutTopology, ChDofMap) {
        let m = build_structured_mesh(Domain::Square { a: -1.0, b: 1.0 }, n).unwrap();
        let cut = CutTopology::classify(&m, ellipse).unwrap();
        let d = build_ch_dofmap(&m, &cut);
        (m, cut, d)
    }

    /// Standard P1 stiffness matrix of the Laplacian, assembled independently.
    fn p1_stiffness(m: &Mesh) -> Vec<Vec<f64>> {
        let n = m.n_vertices();
        let mut k = vec![vec![0.0; n]; n];
        for c in 0..m.n_cells() {
            let p = m.cell_points(c);
            // Cotangent formula.
            for j in 0..3 {
                let (a, b, o) = (p[(j + 1) % 3], p[(j + 2) % 3], p[j]);
                let u = crate::sub(a, o);
                let v = crate::sub(b, o);
                let cot = dot(u, v) / (u[0] * v[1] - u[1] * v[0]).abs();
                let (ia, ib) = (m.cells[c][(j + 1) % 3], m.cells[c][(j + 2) % 3]);
                k[ia][ib] -= 0.5 * cot;
                k[ib][ia] -= 0.5 * cot;
                k[ia][ia] += 0.5 * cot;
                k[ib][ib] += 0.5 * cot;
            }
        }
        k
    }

    #[test]
    fn no_interface_gives_p1_stiffness() {
        let m = build_structured_mesh(Domain::Square { a: -1.0, b: 1.0 }, 3).unwrap();
        let cut = CutTopology::classify(&m, |_| -1.0).unwrap();
        let d = build_ch_dofmap(&m, &cut);
        let data = ProblemData::new([1.0, 1.0], 10.0, 0.1, &Linear).unwrap();
        let sys = assemble_system(&m, &cut, &data, &d).unwrap();
        let k = p1_stiffness(&m);
        for i in 0..m.n_vertices() {
            for j in 0..m.n_vertices() {
                assert!((sys.matrix.get(i, j) - k[i][j]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn linear_solution_reproduced() {
        let (m, cut, d) = setup(6);
        assert!(cut.n_cut() > 0);
        let data = ProblemData::new([1.0, 1.0], 10.0, 0.1, &Linear).unwrap();
        let u = solve_primal(&m, &cut, &data, &d).unwrap();
        let exact = PrimalField::interpolate(&m, &d, |_, x| x[0] + x[1]);
        for (a, b) in u.values(&d).iter().zip(&exact.values(&d)) {
            assert!((a - b).abs() < 1e-10);
        }
        for c in 0..m.n_cells() {
            let r = cell_residual(&m, &cut, &data, &d, &u, c).unwrap();
            for s in 0..2 {
                for a in 0..3 {
                    assert!(r.value[s][a].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn ellipse_matrix_symmetric() {
        let e = make_example(ExampleName::Ellipse, 10.0).unwrap();
        let m = build_structured_mesh(e.domain, 8).unwrap();
        let cut = CutTopology::classify(&m, |x| e.phi(x)).unwrap();
        let d = build_ch_dofmap(&m, &cut);
        let data = ProblemData::new(e.k, 10.0, 0.1, &e).unwrap();
        let sys = assemble_system(&m, &cut, &data, &d).unwrap();
        assert!(sys.matrix.asymmetry() <= 1e-12);
    }

    #[test]
    fn coercive_on_random_vectors() {
        let e = make_example(ExampleName::Ellipse, 100.0).unwrap();
        let m = build_structured_mesh(e.domain, 8).unwrap();
        let cut = CutTopology::classify(&m, |x| e.phi(x)).unwrap();
        let d = build_ch_dofmap(&m, &cut);
        let data = ProblemData::new(e.k, 10.0, 0.1, &e).unwrap();
        let sys = assemble_system(&m, &cut, &data, &d).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let v: Vec<f64> = (0..d.n_dofs)
                .map(|i| {
                    if d.dirichlet[i] {
                        0.0
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect();
            let av = sys.matrix.matvec(&v);
            assert!(v.iter().zip(&av).map(|(a, b)| a * b).sum::<f64>() > 0.0);
        }
    }

    #[test]
    fn galerkin_orthogonality_and_patch_additivity() {
        for name in [ExampleName::Ellipse, ExampleName::ManufacturedG] {
            let e = make_example(name, 10.0).unwrap();
            let m = build_structured_mesh(e.domain, 8).unwrap();
            let cut = CutTopology::classify(&m, |x| e.phi(x)).unwrap();
            let d = build_ch_dofmap(&m, &cut);
            let data = ProblemData::new(e.k, 10.0, 0.1, &e).unwrap();
            let u = solve_primal(&m, &cut, &data, &d).unwrap();
            let res = all_residuals(&m, &cut, &data, &d, &u).unwrap();
            let unorm = crate::linalg::norm2(&u.values(&d));
            for (dof, patch) in d.patches().iter().enumerate() {
                if d.dirichlet[dof] {
                    continue;
                }
                let s = d.dof_side[dof];
                let total: f64 = patch.iter().map(|&(c, j)| res[c].value[s][j]).sum();
                assert!(
                    total.abs() <= 1e-10 * unorm,
                    "{name}: dof {dof} residual {total}"
                );
                // Additivity: the patch sum equals the residual of the hat function,
                // tested here against the global load minus A u.
            }
            let sys = assemble_system(&m, &cut, &data, &d).unwrap();
            let au = sys.matrix.matvec(&u.values(&d));
            for (dof, patch) in d.patches().iter().enumerate() {
                if !d.dirichlet[dof] {
                    continue;
                }
                // On boundary hats the mean-flux edge terms survive.
                let s = d.dof_side[dof];
                let total: f64 = patch.iter().map(|&(c, j)| res[c].value[s][j]).sum();
                let direct = sys.rhs[dof] - au[dof];
                let edges: f64 = patch
                    .iter()
                    .map(|&(c, j)| mesh_edge_terms(&m, &cut, &data, &d, &u, c, j, s))
                    .sum();
                assert!((total - (direct + edges)).abs() <= 1e-10 * unorm.max(1.0));
            }
        }
    }

    fn mesh_edge_terms(
        m: &Mesh,
        cut: &CutTopology,
        data: &ProblemData,
        d: &ChDofMap,
        u: &PrimalField,
        c: usize,
        a: usize,
        s: usize,
    ) -> f64 {
        m.cell_edges[c]
            .iter()
            .filter(|&&e| cut.in_edge[s][e])
            .map(|&e| {
                let q = mean_normal_flux(m, d, u, data, s, e).unwrap();
                m.edges[e].sign_for(c) * q * edge_piece_moments(m, cut, c, e, s)[a]
            })
            .sum()
    }

    #[test]
    fn direct_and_integrated_forms_agree() {
        for (name, mu) in [
            (ExampleName::Ellipse, 1.0),
            (ExampleName::Ellipse, 1000.0),
            (ExampleName::ManufacturedG, 3.0),
            (ExampleName::Petal, 100.0),
        ] {
            let e = make_example(name, mu).unwrap();
            let m = build_structured_mesh(e.domain, 8).unwrap();
            let cut = CutTopology::classify(&m, |x| e.phi(x)).unwrap();
            let d = build_ch_dofmap(&m, &cut);
            let data = ProblemData::new(e.k, 10.0, 0.1, &e).unwrap();
            // Any field works: both forms are identities in u.
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
            let u = PrimalField::from_values(
                (0..d.n_dofs).map(|_| rng.random_range(-1.0..1.0)).collect(),
            );
            for c in 0..m.n_cells() {
                for s in 0..2 {
                    if !cut.in_cell[s][c] {
                        continue;
                    }
                    for &v in &m.cells[c] {
                        let (direct, scale) =
                            assemble_residual(&m, &cut, &data, &d, &u, c, v, s).unwrap();
                        let ibp = assemble_residual_ibp(&m, &cut, &data, &d, &u, c, v, s).unwrap();
                        assert!(
                            (direct - ibp).abs() <= 1e-10 * scale.max(1e-300),
                            "{name}, cell {c}, side {s}: {direct} vs {ibp}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn residual_side_mismatch() {
        let (m, cut, d) = setup(4);
        let data = ProblemData::new([1.0, 1.0], 10.0, 0.1, &Linear).unwrap();
        let u = PrimalField::zeros(&d);
        let c = (0..m.n_cells()).find(|&c| !cut.in_cell[1][c]).unwrap();
        let v = m.cells[c][0];
        assert!(matches!(
            assemble_residual(&m, &cut, &data, &d, &u, c, v, 1),
            Err(Error::SideMismatch { .. })
        ));
    }
}
