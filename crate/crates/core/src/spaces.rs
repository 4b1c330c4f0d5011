//! Degrees of freedom for the doubled P1 space, the multiplier layout and
//! lowest-order Raviart-Thomas helpers.

use crate::geometry::{side_name, CutTopology, Weights};
use crate::mesh::Mesh;
use crate::{cross3, dot, sub, Error, Point, Result};

/// Dofs of the doubled continuous P1 space.
///
/// Each side owns one dof per (vertex, connected component of the side-`s`
/// cells around it), so vertices of cut cells carry two dofs. Side-0 dofs come
/// first.
#[derive(Debug, Clone)]
pub struct ChDofMap {
    pub n_dofs: usize,
    /// Number of dofs per side.
    pub n_side: [usize; 2],
    /// `cell_dofs[s][c]`: side-`s` dofs of the local vertices of cell `c`.
    pub cell_dofs: [Vec<Option<[usize; 3]>>; 2],
    pub dof_vertex: Vec<usize>,
    pub dof_side: Vec<usize>,
    pub dirichlet: Vec<bool>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

pub fn build_ch_dofmap(mesh: &Mesh, cut: &CutTopology) -> ChDofMap {
    let nc = mesh.n_cells();
    let mut cell_dofs: [Vec<Option<[usize; 3]>>; 2] = [vec![None; nc], vec![None; nc]];
    let mut dof_vertex = Vec::new();
    let mut dof_side = Vec::new();
    let mut dirichlet = Vec::new();
    let mut n_side = [0; 2];

    for s in 0..2 {
        // Union-find over (cell, local vertex) slots glued across side-s edges.
        let mut parent: Vec<usize> = (0..3 * nc).collect();
        for (e, edge) in mesh.edges.iter().enumerate() {
            let (Some(p), true) = (edge.plus, cut.in_edge[s][e]) else {
                continue;
            };
            for &v in &edge.v {
                let a = 3 * edge.minus + mesh.local_index(edge.minus, v).unwrap();
                let b = 3 * p + mesh.local_index(p, v).unwrap();
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut roots: Vec<(usize, usize)> = (0..nc)
            .filter(|&c| cut.in_cell[s][c])
            .flat_map(|c| (0..3).map(move |j| 3 * c + j))
            .filter_map(|slot| {
                let r = find(&mut parent, slot);
                (r == slot).then(|| (mesh.cells[slot / 3][slot % 3], slot))
            })
            .collect();
        roots.sort_unstable();
        let base = dof_vertex.len();
        let mut root_dof = std::collections::HashMap::with_capacity(roots.len());
        for (k, &(v, slot)) in roots.iter().enumerate() {
            root_dof.insert(slot, base + k);
            dof_vertex.push(v);
            dof_side.push(s);
            dirichlet.push(false);
        }
        n_side[s] = roots.len();
        for c in (0..nc).filter(|&c| cut.in_cell[s][c]) {
            cell_dofs[s][c] = Some(std::array::from_fn(|j| {
                root_dof[&find(&mut parent, 3 * c + j)]
            }));
        }
        for (e, edge) in mesh.edges.iter().enumerate() {
            if edge.is_boundary() && cut.in_edge[s][e] {
                let d = cell_dofs[s][edge.minus].unwrap();
                for &v in &edge.v {
                    dirichlet[d[mesh.local_index(edge.minus, v).unwrap()]] = true;
                }
            }
        }
    }
    ChDofMap {
        n_dofs: dof_vertex.len(),
        n_side,
        cell_dofs,
        dof_vertex,
        dof_side,
        dirichlet,
    }
}

impl ChDofMap {
    pub fn local(&self, c: usize, s: usize) -> Result<[usize; 3]> {
        self.cell_dofs[s][c].ok_or(Error::SideMismatch {
            cell: c,
            side: side_name(s),
        })
    }

    pub fn n_free(&self) -> usize {
        self.dirichlet.iter().filter(|&&d| !d).count()
    }

    /// `(cell, local vertex)` slots of every dof, cells ascending.
    pub fn patches(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.n_dofs];
        for s in 0..2 {
            for (c, d) in self.cell_dofs[s].iter().enumerate() {
                if let Some(d) = d {
                    for (j, &dof) in d.iter().enumerate() {
                        out[dof].push((c, j));
                    }
                }
            }
        }
        out
    }
}

/// Member of the doubled P1 space, stored as a constant per side plus nodal
/// deviations, so nodal differences keep full precision when `u` carries a
/// large constant part.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalField {
    pub coeffs: Vec<f64>,
    pub offset: [f64; 2],
}

impl PrimalField {
    pub fn zeros(dofs: &ChDofMap) -> Self {
        Self::from_values(vec![0.0; dofs.n_dofs])
    }

    pub fn from_values(coeffs: Vec<f64>) -> Self {
        Self {
            coeffs,
            offset: [0.0; 2],
        }
    }

    /// Nodal values `offset + coeffs` for every dof.
    pub fn values(&self, dofs: &ChDofMap) -> Vec<f64> {
        self.coeffs
            .iter()
            .zip(&dofs.dof_side)
            .map(|(c, &s)| self.offset[s] + c)
            .collect()
    }

    /// Nodal interpolant of `u(side, x)`.
    pub fn interpolate<F: Fn(usize, Point) -> f64>(mesh: &Mesh, dofs: &ChDofMap, u: F) -> Self {
        let coeffs = (0..dofs.n_dofs)
            .map(|d| u(dofs.dof_side[d], mesh.vertices[dofs.dof_vertex[d]]))
            .collect();
        Self::from_values(coeffs)
    }

    /// Local nodal values of side `s` on cell `c`.
    pub fn local(&self, dofs: &ChDofMap, c: usize, s: usize) -> Result<[f64; 3]> {
        Ok(dofs.local(c, s)?.map(|d| self.offset[s] + self.coeffs[d]))
    }

    /// Local nodal deviations from the side offset.
    pub fn local_shifted(&self, dofs: &ChDofMap, c: usize, s: usize) -> Result<[f64; 3]> {
        Ok(dofs.local(c, s)?.map(|d| self.coeffs[d]))
    }

    /// Nodal values of `u_1 - u_2` on cut cell `c`.
    pub fn local_jump(&self, dofs: &ChDofMap, c: usize) -> Result<[f64; 3]> {
        let (w0, w1) = (
            self.local_shifted(dofs, c, 0)?,
            self.local_shifted(dofs, c, 1)?,
        );
        let o = self.offset[0] - self.offset[1];
        Ok(std::array::from_fn(|b| o + (w0[b] - w1[b])))
    }
}

/// Value of the side-`s` component on cell `c` at `x`.
pub fn eval_field(
    field: &PrimalField,
    mesh: &Mesh,
    dofs: &ChDofMap,
    c: usize,
    s: usize,
    x: Point,
) -> Result<f64> {
    let u = field.local(dofs, c, s)?;
    let l = mesh.barycentric(c, x);
    Ok(u[0] * l[0] + u[1] * l[1] + u[2] * l[2])
}

/// Gradient of the side-`s` component on cell `c` (constant per cell).
pub fn grad_field(
    field: &PrimalField,
    mesh: &Mesh,
    dofs: &ChDofMap,
    c: usize,
    s: usize,
) -> Result<Point> {
    let u = field.local_shifted(dofs, c, s)?;
    Ok(local_gradient(&mesh.barycentric_gradients(c), u))
}

/// Gradient from nodal differences.
pub(crate) fn local_gradient(g: &[Point; 3], u: [f64; 3]) -> Point {
    let (d1, d2) = (u[1] - u[0], u[2] - u[0]);
    [d1 * g[1][0] + d2 * g[2][0], d1 * g[1][1] + d2 * g[2][1]]
}

/// Interface jump `u_1 - u_2` on cut cell `c`.
pub fn interface_jump(
    field: &PrimalField,
    mesh: &Mesh,
    dofs: &ChDofMap,
    c: usize,
    x: Point,
) -> Result<f64> {
    let d = field.local_jump(dofs, c)?;
    let l = mesh.barycentric(c, x);
    Ok(d[0] * l[0] + d[1] * l[1] + d[2] * l[2])
}

/// Weighted mean `omega1 v1 + omega2 v2`.
pub fn weighted_mean(w: &Weights, v1: f64, v2: f64) -> f64 {
    w.omega1 * v1 + w.omega2 * v2
}

/// Swapped weighted mean `omega2 v1 + omega1 v2`.
pub fn weighted_mean_star(w: &Weights, v1: f64, v2: f64) -> f64 {
    w.omega2 * v1 + w.omega1 * v2
}

/// Edge jump `v^- - v^+` (one-sided on the boundary).
pub fn edge_jump(minus: f64, plus: Option<f64>) -> f64 {
    minus - plus.unwrap_or(0.0)
}

/// Edge mean `(v^- + v^+) / 2` (one-sided on the boundary).
pub fn edge_mean(minus: f64, plus: Option<f64>) -> f64 {
    match plus {
        Some(p) => 0.5 * (minus + p),
        None => minus,
    }
}

/// Orientation sign of edge `e` seen from its endpoint `v`: +1 when `n_F` is
/// the clockwise rotation of the direction from `v` to the other endpoint.
pub fn node_edge_sign(mesh: &Mesh, e: usize, v: usize) -> f64 {
    let edge = &mesh.edges[e];
    let w = if edge.v[0] == v { edge.v[1] } else { edge.v[0] };
    let d = sub(mesh.vertices[w], mesh.vertices[v]);
    if dot(mesh.normal[e], [d[1], -d[0]]) > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// A node patch of one side: the cells around a dof and the multiplier edges through it.
#[derive(Debug, Clone)]
pub struct NodePatch {
    pub dof: usize,
    pub vertex: usize,
    pub side: usize,
    /// `(cell, local index of the vertex)`, cells ascending.
    pub cells: Vec<(usize, usize)>,
    /// Multiplier edges through the vertex, ascending.
    pub edges: Vec<usize>,
    /// True when the patch is a closed fan of interior multiplier edges.
    pub interior: bool,
    /// `s_N^F h_F` per entry of `edges`.
    pub constraint: Vec<f64>,
}

/// Layout of the edgewise-linear multiplier space, organised by node patch.
#[derive(Debug, Clone)]
pub struct MhDofMap {
    pub patches: Vec<NodePatch>,
}

pub fn build_mh_dofmap(mesh: &Mesh, cut: &CutTopology, dofs: &ChDofMap) -> MhDofMap {
    let patches = dofs
        .patches()
        .into_iter()
        .enumerate()
        .map(|(dof, cells)| {
            let side = dofs.dof_side[dof];
            let vertex = dofs.dof_vertex[dof];
            let mut edges: Vec<usize> = cells
                .iter()
                .flat_map(|&(c, j)| {
                    [
                        mesh.cell_edges[c][(j + 1) % 3],
                        mesh.cell_edges[c][(j + 2) % 3],
                    ]
                })
                .filter(|&e| cut.in_edge[side][e])
                .collect();
            edges.sort_unstable();
            edges.dedup();
            let interior =
                edges.len() == cells.len() && edges.iter().all(|&e| !mesh.edges[e].is_boundary());
            let constraint = edges
                .iter()
                .map(|&e| node_edge_sign(mesh, e, vertex) * mesh.h_edge[e])
                .collect();
            NodePatch {
                dof,
                vertex,
                side,
                cells,
                edges,
                interior,
                constraint,
            }
        })
        .collect();
    MhDofMap { patches }
}

/// Lowest-order Raviart-Thomas function on a triangle, stored by its outward
/// edge fluxes `x_j = |F_j| N_j`, edge `j` opposite vertex `A_j`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RtCoeffs {
    pub flux: [f64; 3],
}

impl RtCoeffs {
    /// `sum_j x_j (p - A_j) / (2|T|)`.
    pub fn eval(&self, tri: &[Point; 3], p: Point) -> Point {
        let two_a = cross3(tri[0], tri[1], tri[2]);
        let mut v = [0.0; 2];
        for j in 0..3 {
            v[0] += self.flux[j] * (p[0] - tri[j][0]) / two_a;
            v[1] += self.flux[j] * (p[1] - tri[j][1]) / two_a;
        }
        v
    }

    /// Constant divergence `sum_j x_j / |T|`.
    pub fn div(&self, tri: &[Point; 3]) -> f64 {
        2.0 * self.flux.iter().sum::<f64>() / cross3(tri[0], tri[1], tri[2])
    }

    /// Edge dofs `N_j = x_j / |F_j|`.
    pub fn dofs(&self, tri: &[Point; 3]) -> [f64; 3] {
        std::array::from_fn(|j| self.flux[j] / crate::dist(tri[(j + 1) % 3], tri[(j + 2) % 3]))
    }

    /// Basis function `Lambda_j`.
    pub fn basis(tri: &[Point; 3], j: usize) -> Self {
        let mut flux = [0.0; 3];
        flux[j] = crate::dist(tri[(j + 1) % 3], tri[(j + 2) % 3]);
        Self { flux }
    }
}

/// Outward unit normal of edge `j` (opposite vertex `j`) of a counter-clockwise triangle.
pub fn outward_normal(tri: &[Point; 3], j: usize) -> Point {
    let (a, b) = (tri[(j + 1) % 3], tri[(j + 2) % 3]);
    let d = sub(b, a);
    let len = crate::norm(d);
    [d[1] / len, -d[0] / len]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CutTopology;
    use crate::mesh::{build_structured_mesh, Domain};
    use crate::quadrature::quad_segment;
    use proptest::prelude::*;

    fn square(n: usize) -> Mesh {
        build_structured_mesh(Domain::Square { a: -1.0, b: 1.0 }, n).unwrap()
    }

    fn ellipse(p: Point) -> f64 {
        (p[0] * p[0] / 0.36 + p[1] * p[1] / 0.49).sqrt() - 1.0
    }

    #[test]
    fn offset_changes_values_but_not_gradients() {
        let m = square(4);
        let cut = CutTopology::classify(&m, ellipse).unwrap();
        let d = build_ch_dofmap(&m, &cut);
        let plain = PrimalField::interpolate(&m, &d, |s, p| p[0] - 2.0 * p[1] + 3.0 * s as f64);
        let mut shifted = plain.clone();
        shifted.offset = [0.25, -1.5];
        for (v, &s) in shifted.coeffs.iter_mut().zip(&d.dof_side) {
            *v -= shifted.offset[s];
        }
        for (a, b) in plain.values(&d).iter().zip(shifted.values(&d)) {
            assert!((a - b).abs() < 1e-14);
        }
        for c in (0..m.n_cells()).filter(|&c| cut.is_cut(c)) {
            let x = m.centroid(c);
            for s in 0..2 {
                let (g0, g1) = (
                    grad_field(&plain, &m, &d, c, s).unwrap(),
                    grad_field(&shifted, &m, &d, c, s).unwrap(),
                );
                assert!((g0[0] - g1[0]).abs() < 1e-12 && (g0[1] - g1[1]).abs() < 1e-12);
                let (u0, u1) = (
                    eval_field(&plain, &m, &d, c, s, x).unwrap(),
                    eval_field(&shifted, &m, &d, c, s, x).unwrap(),
                );
                assert!((u0 - u1).abs() < 1e-14);
            }
            let j = interface_jump(&shifted, &m, &d, c, x).unwrap();
            assert!((j + 3.0).abs() < 1e-13);
        }
    }

    #[test]
    fn no_interface_is_standard_p1() {
        let m = square(3);
        let cut = CutTopology::classify(&m, |_| -1.0).unwrap();
        let d = build_ch_dofmap(&m, &cut);
        assert_eq!(d.n_dofs, m.n_vertices());
        assert_eq!(d.n_side, [m.n_vertices(), 0]);
        assert!(d.dof_vertex.iter().enumerate().all(|(k, &v)| k == v));
    }

    #[test]
    fn cut_cells_double_their_vertices() {
        let m = square(1);
        // Only the lower cell [p10, p11, p00] is cut.
        let cut = CutTopology::classify(&m, |p| p[0] - p[1] - 1.2).unwrap();
        assert_eq!(cut.class[0], crate::geometry::CellClass::Cut);
        assert_eq!(cut.class[1], crate::geometry::CellClass::Inside1);
        let d = build_ch_dofmap(&m, &cut);
        assert_eq!(d.n_side, [4, 3]);
        assert_eq!(d.n_dofs, 7);
        // Both cells cut: every vertex is touched by a cut cell and doubled.
        let cut = CutTopology::classify(&m, |p| p[0] - 0.5 * p[1] - 0.4).unwrap();
        assert_eq!(cut.n_cut(), 2);
        let d = build_ch_dofmap(&m, &cut);
        assert_eq!(d.n_side, [4, 4]);
    }

    #[test]
    fn dirichlet_mask_on_boundary() {
        let m = square(2);
        let cut = CutTopology::classify(&m, ellipse).unwrap();
        let d = build_ch_dofmap(&m, &cut);
        for k in 0..d.n_dofs {
            let p = m.vertices[d.dof_vertex[k]];
            let on_boundary = p[0].abs() == 1.0 || p[1].abs() == 1.0;
            if d.dirichlet[k] {
                assert!(on_boundary);
            }
            if on_boundary && d.dof_side[k] == 1 {
                assert!(d.dirichlet[k]);
            }
        }
    }

    #[test]
    fn p1_reproduces_linears() {
        let m = square(4);
        let cut = CutTopology::classify(&m, ellipse).unwrap();
        let d = build_ch_dofmap(&m, &cut);
        let f = PrimalField::interpolate(&m, &d, |_, p| p[0] + p[1]);
        for c in 0..m.n_cells() {
            let x = m.centroid(c);
            for s in 0..2 {
                if cut.in_cell[s][c] {
                    let v = eval_field(&f, &m, &d, c, s, x).unwrap();
                    assert!((v - x[0] - x[1]).abs() < 1e-14);
                    let g = grad_field(&f, &m, &d, c, s).unwrap();
                    assert!((g[0] - 1.0).abs() < 1e-13 && (g[1] - 1.0).abs() < 1e-13);
                } else {
                    assert!(eval_field(&f, &m, &d, c, s, x).is_err());
                }
            }
            if let Some(cc) = cut.cut_cell(c) {
                for &x in &cc.gamma {
                    assert!(interface_jump(&f, &m, &d, c, x).unwrap().abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn means_and_jumps() {
        let w = crate::geometry::kappa_weights(1.0, 3.0).unwrap();
        assert_eq!(weighted_mean(&w, 1.0, 0.0), 0.75);
        assert_eq!(weighted_mean_star(&w, 1.0, 0.0), 0.25);
        assert_eq!(edge_jump(3.0, Some(1.0)), 2.0);
        assert_eq!(edge_mean(3.0, Some(1.0)), 2.0);
        assert_eq!(edge_jump(3.0, None), 3.0);
        assert_eq!(edge_mean(3.0, None), 3.0);
    }

    #[test]
    fn rt_dual_basis() {
        let tri = [[0.2, 0.1], [1.3, 0.4], [0.5, 1.2]];
        for j in 0..3 {
            let b = RtCoeffs::basis(&tri, j);
            for k in 0..3 {
                let (a, c) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                let n = outward_normal(&tri, k);
                let q = quad_segment(a, c, 2).unwrap();
                let len = q.measure();
                let nk = q.integrate(|p| dot(b.eval(&tri, p), n)) / len;
                assert!((nk - f64::from(u8::from(j == k))).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rt_constant_field() {
        let tri = [[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]];
        // Constant (1, 2): outward fluxes from the exact normal components.
        let flux = std::array::from_fn(|j| {
            let n = outward_normal(&tri, j);
            dot([1.0, 2.0], n) * crate::dist(tri[(j + 1) % 3], tri[(j + 2) % 3])
        });
        let r = RtCoeffs { flux };
        for p in [[0.1, 0.1], [1.0, 0.2], [0.3, 0.6]] {
            let v = r.eval(&tri, p);
            assert!((v[0] - 1.0).abs() < 1e-14 && (v[1] - 2.0).abs() < 1e-14);
        }
        assert!(r.div(&tri).abs() < 1e-14);
    }

    #[test]
    fn constraint_data_signs() {
        let m = square(2);
        let cut = CutTopology::classify(&m, |_| -1.0).unwrap();
        let d = build_ch_dofmap(&m, &cut);
        let mh = build_mh_dofmap(&m, &cut, &d);
        let centre = m
            .vertices
            .iter()
            .position(|p| p[0] == 0.0 && p[1] == 0.0)
            .unwrap();
        let p = mh.patches.iter().find(|p| p.vertex == centre).unwrap();
        assert!(p.interior);
        assert_eq!(p.edges.len(), 6);
        // Rotating around the node: each sign is that of n_F against the clockwise tangent.
        for (&e, &c) in p.edges.iter().zip(&p.constraint) {
            assert_eq!(c.abs(), m.h_edge[e]);
        }
        assert_eq!(mh.patches.iter().filter(|p| p.interior).count(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn continuous_fields_have_no_edge_jumps(seed in 0u64..1000, shift in -0.3f64..0.3) {
            use rand::{Rng, SeedableRng};
            let m = square(6);
            let cut = CutTopology::classify(&m, |p| ellipse(p) + shift).unwrap();
            let d = build_ch_dofmap(&m, &cut);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f = PrimalField::from_values((0..d.n_dofs).map(|_| rng.random_range(-1.0..1.0)).collect());
            for s in 0..2 {
                for (e, edge) in m.edges.iter().enumerate() {
                    let (Some(p), true) = (edge.plus, cut.in_edge[s][e]) else { continue };
                    for &v in &edge.v {
                        let x = m.vertices[v];
                        let a = eval_field(&f, &m, &d, edge.minus, s, x).unwrap();
                        let b = eval_field(&f, &m, &d, p, s, x).unwrap();
                        prop_assert!(edge_jump(a, Some(b)).abs() < 1e-14);
                    }
                }
            }
        }
    }
}
