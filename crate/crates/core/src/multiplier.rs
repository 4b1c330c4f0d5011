//! Edgewise Lagrange multipliers from node-patch problems.

use nalgebra::{DMatrix, DVector};

use crate::assembly::{CellResidual, ProblemData};
use crate::geometry::CutTopology;
use crate::linalg::{solve_constrained_lsq, DenseSystem};
use crate::mesh::Mesh;
use crate::spaces::{ChDofMap, MhDofMap, NodePatch};
use crate::{par, Error, Result};

/// Edgewise linear multipliers per side, stored by their values at `edge.v[0]`
/// and `edge.v[1]`; zero on edges that carry no side-`s` multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierField {
    pub theta: [Vec<[f64; 2]>; 2],
}

impl MultiplierField {
    pub fn zeros(mesh: &Mesh) -> Self {
        Self {
            theta: [
                vec![[0.0; 2]; mesh.n_edges()],
                vec![[0.0; 2]; mesh.n_edges()],
            ],
        }
    }

    /// Value of the side-`s` multiplier of edge `e` at its endpoint `v`.
    pub fn at(&self, mesh: &Mesh, s: usize, e: usize, v: usize) -> f64 {
        let k = usize::from(mesh.edges[e].v[1] == v);
        self.theta[s][e][k]
    }

    /// Mean value over the edge.
    pub fn mean(&self, s: usize, e: usize) -> f64 {
        0.5 * (self.theta[s][e][0] + self.theta[s][e][1])
    }
}

/// Dense rows of one node patch: one row per cell, one column per edge.
#[derive(Debug, Clone)]
pub struct NodePatchSystem {
    pub system: DenseSystem,
    /// Constraint row for closed patches, scaled like the cell rows.
    pub constraint: Option<Vec<f64>>,
    /// Largest residual magnitude over the rows.
    pub scale: f64,
}

/// `(k_s h_F / 2) * (+1 if n_F leaves cell c)`: the row coefficient of edge `e` for cell `c`.
fn row_coeff(mesh: &Mesh, data: &ProblemData, s: usize, c: usize, e: usize) -> f64 {
    0.5 * data.k[s] * mesh.h_edge[e] * mesh.edges[e].sign_for(c)
}

pub fn node_patch_system(
    mesh: &Mesh,
    data: &ProblemData,
    patch: &NodePatch,
    residuals: &[CellResidual],
) -> NodePatchSystem {
    let s = patch.side;
    let (m, n) = (patch.cells.len(), patch.edges.len());
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    let mut scale = 0.0f64;
    for (i, &(c, j)) in patch.cells.iter().enumerate() {
        for (k, &e) in patch.edges.iter().enumerate() {
            if mesh.cell_edges[c].contains(&e) {
                a[(i, k)] = row_coeff(mesh, data, s, c, e);
            }
        }
        b[i] = residuals[c].value[s][j];
        scale = scale.max(residuals[c].scale[s][j]);
    }
    let constraint = patch.interior.then(|| {
        patch
            .constraint
            .iter()
            .map(|&v| 0.5 * data.k[s] * v)
            .collect()
    });
    NodePatchSystem {
        system: DenseSystem::new(a, b),
        constraint,
        scale,
    }
}

/// Values at the patch node of the multiplier edges of `patch`, in `patch.edges` order.
pub fn solve_node_patch(
    mesh: &Mesh,
    data: &ProblemData,
    patch: &NodePatch,
    residuals: &[CellResidual],
) -> Result<Vec<f64>> {
    let sys = node_patch_system(mesh, data, patch, residuals);
    let sol = solve_constrained_lsq(&sys.system, sys.constraint.as_deref(), sys.scale).map_err(
        |err| match err {
            Error::IncompatibleSystem {
                residual, scale, ..
            } => Error::IncompatibleSystem {
                context: format!(
                    "node patch of vertex {} on side {}",
                    patch.vertex,
                    patch.side + 1
                ),
                residual,
                scale,
            },
            other => other,
        },
    )?;
    Ok(sol.x.iter().copied().collect())
}

/// Sums the node-patch contributions into edgewise multipliers.
pub fn assemble_theta(
    mesh: &Mesh,
    data: &ProblemData,
    mh: &MhDofMap,
    residuals: &[CellResidual],
) -> Result<MultiplierField> {
    let local = par::try_map_slice(&mh.patches, |p| solve_node_patch(mesh, data, p, residuals))?;
    let mut field = MultiplierField::zeros(mesh);
    for (patch, values) in mh.patches.iter().zip(local) {
        for (&e, v) in patch.edges.iter().zip(values) {
            let k = usize::from(mesh.edges[e].v[1] == patch.vertex);
            field.theta[patch.side][e][k] += v;
        }
    }
    Ok(field)
}

/// `b_h^s(mu, v)` for a broken P1 function `v` given by local nodal values per cell.
pub fn b_form(
    mesh: &Mesh,
    cut: &CutTopology,
    data: &ProblemData,
    mu: &MultiplierField,
    s: usize,
    v: &[Option<[f64; 3]>],
) -> f64 {
    let mut total = 0.0;
    for (e, edge) in mesh.edges.iter().enumerate() {
        if !cut.in_edge[s][e] {
            continue;
        }
        let trace = |c: usize, w: usize| -> f64 {
            let j = mesh.local_index(c, w).unwrap();
            v[c].map_or(0.0, |vals| vals[j])
        };
        for (k, &w) in edge.v.iter().enumerate() {
            let jump = trace(edge.minus, w) - edge.plus.map_or(0.0, |p| trace(p, w));
            total += 0.5 * data.k[s] * mesh.h_edge[e] * mu.theta[s][e][k] * jump;
        }
    }
    total
}

/// `b_h^s(mu, phi_a chi_c)` using only the edges of cell `c`.
pub fn b_form_local(
    mesh: &Mesh,
    cut: &CutTopology,
    data: &ProblemData,
    mu: &MultiplierField,
    s: usize,
    c: usize,
    a: usize,
) -> f64 {
    let v = mesh.cells[c][a];
    mesh.cell_edges[c]
        .iter()
        .filter(|&&e| cut.in_edge[s][e] && mesh.edges[e].v.contains(&v))
        .map(|&e| row_coeff(mesh, data, s, c, e) * mu.at(mesh, s, e, v))
        .sum()
}

/// Defect of `b_h(theta, phi_N chi_T) = r_h(phi_N chi_T)` over all cells,
/// sides and nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedIdentityDefect {
    /// Largest defect relative to the residual scale of its node patch.
    pub patch_relative: f64,
    /// Largest absolute defect.
    pub max_abs: f64,
    /// Largest residual scale over all test functions.
    pub problem_scale: f64,
}

impl MixedIdentityDefect {
    /// Largest defect relative to the problem scale.
    pub fn global_relative(&self) -> f64 {
        if self.problem_scale > 0.0 {
            self.max_abs / self.problem_scale
        } else if self.max_abs > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

pub fn mixed_identity_defect(
    mesh: &Mesh,
    cut: &CutTopology,
    data: &ProblemData,
    dofs: &ChDofMap,
    theta: &MultiplierField,
    residuals: &[CellResidual],
) -> MixedIdentityDefect {
    let mut patch_scale = vec![0.0f64; dofs.n_dofs];
    for (c, r) in residuals.iter().enumerate() {
        for s in 0..2 {
            let Some(d) = dofs.cell_dofs[s][c] else {
                continue;
            };
            for a in 0..3 {
                patch_scale[d[a]] = patch_scale[d[a]].max(r.scale[s][a]);
            }
        }
    }
    let per_cell = par::map_range(mesh.n_cells(), |c| {
        let (mut rel, mut abs) = (0.0f64, 0.0f64);
        for s in 0..2 {
            let Some(d) = dofs.cell_dofs[s][c] else {
                continue;
            };
            if !cut.in_cell[s][c] {
                continue;
            }
            for a in 0..3 {
                let b = b_form_local(mesh, cut, data, theta, s, c, a);
                let scale = patch_scale[d[a]];
                let defect = (b - residuals[c].value[s][a]).abs();
                abs = abs.max(defect);
                if defect > 0.0 {
                    rel = rel.max(if scale > 0.0 {
                        defect / scale
                    } else {
                        f64::INFINITY
                    });
                }
            }
        }
        (rel, abs)
    });
    MixedIdentityDefect {
        patch_relative: per_cell.iter().fold(0.0, |m, p| m.max(p.0)),
        max_abs: per_cell.iter().fold(0.0, |m, p| m.max(p.1)),
        problem_scale: patch_scale.iter().fold(0.0, |m: f64, &v| m.max(v)),
    }
}

/// Multiplier whose node-patch values come from `sample`, projected onto the
/// constraint of every closed patch.
pub fn constrained_multiplier<F: FnMut() -> f64>(
    mesh: &Mesh,
    mh: &MhDofMap,
    mut sample: F,
) -> MultiplierField {
    let mut mu = MultiplierField::zeros(mesh);
    for p in &mh.patches {
        let mut vals: Vec<f64> = p.edges.iter().map(|_| sample()).collect();
        if p.interior {
            let c = &p.constraint;
            let dotp: f64 = vals.iter().zip(c).map(|(v, w)| v * w).sum();
            let nn: f64 = c.iter().map(|w| w * w).sum();
            for (v, w) in vals.iter_mut().zip(c) {
                *v -= dotp / nn * w;
            }
        }
        for (&e, v) in p.edges.iter().zip(vals) {
            let k = usize::from(mesh.edges[e].v[1] == p.vertex);
            mu.theta[p.side][e][k] += v;
        }
    }
    mu
}

/// Largest `|sum_F s_N^F h_F mu_F(N)|` over the closed node patches.
pub fn constraint_defect(mesh: &Mesh, mh: &MhDofMap, mu: &MultiplierField) -> f64 {
    mh.patches
        .iter()
        .filter(|p| p.interior)
        .map(|p| {
            p.edges
                .iter()
                .zip(&p.constraint)
                .map(|(&e, &sh)| sh * mu.at(mesh, p.side, e, p.vertex))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}
