//! Conforming triangulations, newest-vertex bisection and Dörfler marking.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::{cross3, dist, Error, Point, Result};

/// Cells selected for refinement.
pub type MarkSet = BTreeSet<usize>;

/// Rectangular computational domains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    /// `[a, b]^2`.
    Square { a: f64, b: f64 },
    /// `[a, b]^2` without the lower-right quadrant `[m, b] x [a, m]`, `m = (a + b) / 2`.
    LShape { a: f64, b: f64 },
}

/// An edge with its adjacent cells. `minus < plus` for interior edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Endpoints, `v[0] < v[1]`.
    pub v: [usize; 2],
    pub minus: usize,
    pub plus: Option<usize>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.plus.is_none()
    }

    /// The neighbour of `cell` across this edge.
    pub fn other(&self, cell: usize) -> Option<usize> {
        if cell == self.minus {
            self.plus
        } else {
            Some(self.minus)
        }
    }

    /// +1 when `n_F` is the outward normal of `cell`, -1 otherwise.
    pub fn sign_for(&self, cell: usize) -> f64 {
        if cell == self.minus {
            1.0
        } else {
            -1.0
        }
    }
}

/// Conforming triangle mesh.
///
/// Cells are stored counter-clockwise as `[v0, v1, v2]` with `v0` the newest
/// vertex, so `(v1, v2)` is the refinement edge. `cell_edges[c][j]` is the
/// edge opposite local vertex `j`.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub cells: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    pub cell_edges: Vec<[usize; 3]>,
    pub vertex_cells: Vec<Vec<usize>>,
    pub area: Vec<f64>,
    /// Cell diameter `h_T`.
    pub h_cell: Vec<f64>,
    /// Edge length `h_F`.
    pub h_edge: Vec<f64>,
    /// Unit normal `n_F`: from `minus` to `plus`, outward on the boundary.
    pub normal: Vec<Point>,
    /// Index of the parent cell in the mesh this one was refined from
    /// (identity for a freshly built mesh).
    pub parent: Vec<usize>,
}

impl Mesh {
    /// Builds adjacency data and validates orientation and conformity.
    pub fn new(vertices: Vec<Point>, cells: Vec<[usize; 3]>) -> Result<Self> {
        let parent = (0..cells.len()).collect();
        Self::with_parent(vertices, cells, parent)
    }

    fn with_parent(
        vertices: Vec<Point>,
        cells: Vec<[usize; 3]>,
        parent: Vec<usize>,
    ) -> Result<Self> {
        let nv = vertices.len();
        let mut area = Vec::with_capacity(cells.len());
        let mut vertex_cells = vec![Vec::new(); nv];
        for (c, t) in cells.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidInput(format!(
                    "cell {c} references a missing vertex"
                )));
            }
            let a = 0.5 * cross3(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if !(a > 0.0) {
                return Err(Error::DegenerateCell { cell: c, area: a });
            }
            area.push(a);
            for &v in t {
                vertex_cells[v].push(c);
            }
        }

        let mut index: HashMap<(usize, usize), usize> =
            HashMap::with_capacity(3 * cells.len() / 2 + nv);
        let mut edges: Vec<Edge> = Vec::new();
        let mut cell_edges = vec![[0usize; 3]; cells.len()];
        for (c, t) in cells.iter().enumerate() {
            for j in 0..3 {
                let (a, b) = (t[(j + 1) % 3], t[(j + 2) % 3]);
                let key = (a.min(b), a.max(b));
                let e = match index.get(&key) {
                    Some(&e) => {
                        if edges[e].plus.is_some() {
                            return Err(Error::InvalidInput(format!(
                                "edge ({}, {}) is shared by more than two cells",
                                key.0, key.1
                            )));
                        }
                        edges[e].plus = Some(c);
                        e
                    }
                    None => {
                        edges.push(Edge {
                            v: [key.0, key.1],
                            minus: c,
                            plus: None,
                        });
                        index.insert(key, edges.len() - 1);
                        edges.len() - 1
                    }
                };
                cell_edges[c][j] = e;
            }
        }

        let h_edge: Vec<f64> = edges
            .iter()
            .map(|e| dist(vertices[e.v[0]], vertices[e.v[1]]))
            .collect();
        let h_cell = cell_edges
            .iter()
            .map(|ce| ce.iter().map(|&e| h_edge[e]).fold(0.0, f64::max))
            .collect();
        let normal = edges
            .iter()
            .enumerate()
            .map(|(e, edge)| {
                let (p, q) = (vertices[edge.v[0]], vertices[edge.v[1]]);
                let len = h_edge[e];
                let mut n = [(q[1] - p[1]) / len, -(q[0] - p[0]) / len];
                // Orient away from the minus cell, whose opposite vertex lies behind.
                let t = cells[edge.minus];
                let opp = t.iter().copied().find(|v| !edge.v.contains(v)).unwrap();
                let w = vertices[opp];
                if (w[0] - p[0]) * n[0] + (w[1] - p[1]) * n[1] > 0.0 {
                    n = [-n[0], -n[1]];
                }
                n
            })
            .collect();

        Ok(Self {
            vertices,
            cells,
            edges,
            cell_edges,
            vertex_cells,
            area,
            h_cell,
            h_edge,
            normal,
            parent,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn cell_points(&self, c: usize) -> [Point; 3] {
        self.cells[c].map(|v| self.vertices[v])
    }

    pub fn centroid(&self, c: usize) -> Point {
        let p = self.cell_points(c);
        [
            (p[0][0] + p[1][0] + p[2][0]) / 3.0,
            (p[0][1] + p[1][1] + p[2][1]) / 3.0,
        ]
    }

    /// Gradients of the three barycentric coordinates of cell `c`.
    pub fn barycentric_gradients(&self, c: usize) -> [Point; 3] {
        let p = self.cell_points(c);
        let two_a = 2.0 * self.area[c];
        std::array::from_fn(|j| {
            let (b, d) = (p[(j + 1) % 3], p[(j + 2) % 3]);
            [(b[1] - d[1]) / two_a, (d[0] - b[0]) / two_a]
        })
    }

    /// Barycentric coordinates of `x` in cell `c`.
    pub fn barycentric(&self, c: usize, x: Point) -> [f64; 3] {
        let p = self.cell_points(c);
        let two_a = 2.0 * self.area[c];
        std::array::from_fn(|j| cross3(x, p[(j + 1) % 3], p[(j + 2) % 3]) / two_a)
    }

    /// Local index of vertex `v` in cell `c`.
    pub fn local_index(&self, c: usize, v: usize) -> Option<usize> {
        self.cells[c].iter().position(|&w| w == v)
    }

    /// Smallest diameter among the cells around vertex `v`.
    pub fn vertex_h(&self, v: usize) -> f64 {
        self.vertex_cells[v]
            .iter()
            .map(|&c| self.h_cell[c])
            .fold(f64::INFINITY, f64::min)
    }

    /// Two sweeps of bisection of every cell: four children per cell, half the mesh size.
    pub fn refine_uniform(&self) -> Result<Mesh> {
        let once = self.refine(&(0..self.n_cells()).collect())?;
        let mut twice = once.refine(&(0..once.n_cells()).collect())?;
        twice.parent = twice.parent.iter().map(|&p| once.parent[p]).collect();
        Ok(twice)
    }

    /// Newest-vertex bisection of the marked cells plus the closure needed for conformity.
    pub fn refine(&self, marked: &MarkSet) -> Result<Mesh> {
        if let Some(&c) = marked.iter().find(|&&c| c >= self.n_cells()) {
            return Err(Error::InvalidInput(format!(
                "marked cell {c} does not exist"
            )));
        }
        if marked.is_empty() {
            let mut m = self.clone();
            m.parent = (0..m.n_cells()).collect();
            return Ok(m);
        }

        let mut edge_marked = vec![false; self.n_edges()];
        let mut stack = Vec::new();
        for &c in marked {
            let r = self.cell_edges[c][0];
            if !edge_marked[r] {
                edge_marked[r] = true;
                stack.push(r);
            }
        }
        while let Some(e) = stack.pop() {
            let edge = self.edges[e];
            for c in std::iter::once(edge.minus).chain(edge.plus) {
                let r = self.cell_edges[c][0];
                if !edge_marked[r] {
                    edge_marked[r] = true;
                    stack.push(r);
                }
            }
        }
        let marked_keys: HashSet<(usize, usize)> = self
            .edges
            .iter()
            .zip(&edge_marked)
            .filter(|(_, &m)| m)
            .map(|(e, _)| (e.v[0], e.v[1]))
            .collect();

        let mut vertices = self.vertices.clone();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut cells = Vec::with_capacity(self.n_cells() * 2);
        let mut parent = Vec::with_capacity(self.n_cells() * 2);
        let mut work = Vec::new();
        for (c, &t) in self.cells.iter().enumerate() {
            work.push(t);
            while let Some([v0, v1, v2]) = work.pop() {
                let key = (v1.min(v2), v1.max(v2));
                if !marked_keys.contains(&key) {
                    cells.push([v0, v1, v2]);
                    parent.push(c);
                    continue;
                }
                let m = *midpoints.entry(key).or_insert_with(|| {
                    let (p, q) = (vertices[v1], vertices[v2]);
                    vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                    vertices.len() - 1
                });
                // Pushed in reverse so the child containing v1 is emitted first.
                work.push([m, v2, v0]);
                work.push([m, v0, v1]);
            }
        }
        Self::with_parent(vertices, cells, parent)
    }

    /// Checks that no vertex lies strictly inside an edge (quadratic cost, test use).
    pub fn is_conforming(&self) -> bool {
        self.edges.iter().all(|e| {
            let (p, q) = (self.vertices[e.v[0]], self.vertices[e.v[1]]);
            let len = dist(p, q);
            self.vertices.iter().enumerate().all(|(v, &x)| {
                if e.v.contains(&v) {
                    return true;
                }
                let on_line = cross3(p, q, x).abs() <= 1e-12 * len * len;
                let t =
                    ((x[0] - p[0]) * (q[0] - p[0]) + (x[1] - p[1]) * (q[1] - p[1])) / (len * len);
                !(on_line && t > 1e-12 && t < 1.0 - 1e-12)
            })
        })
    }
}

/// Structured mesh with `n` subdivisions per axis; each square is split along
/// its `(x0, y0)`–`(x1, y1)` diagonal. For the L-shape `n` must be even.
pub fn build_structured_mesh(domain: Domain, n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidInput(
            "mesh resolution must be at least 1".into(),
        ));
    }
    let (a, b, lshape) = match domain {
        Domain::Square { a, b } => (a, b, false),
        Domain::LShape { a, b } => (a, b, true),
    };
    if !(b > a) {
        return Err(Error::InvalidInput(format!("empty interval [{a}, {b}]")));
    }
    if lshape && !n.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "L-shape needs an even resolution, got {n}"
        )));
    }
    let keep = |i: usize, j: usize| !(lshape && i >= n / 2 && j < n / 2);
    let coord = |k: usize| a + (b - a) * k as f64 / n as f64;

    let mut id = vec![usize::MAX; (n + 1) * (n + 1)];
    let mut vertices = Vec::new();
    let mut cells = Vec::new();
    let mut vid = |i: usize, j: usize, vertices: &mut Vec<Point>| {
        let k = j * (n + 1) + i;
        if id[k] == usize::MAX {
            id[k] = vertices.len();
            vertices.push([coord(i), coord(j)]);
        }
        id[k]
    };
    for j in 0..n {
        for i in 0..n {
            if !keep(i, j) {
                continue;
            }
            let p00 = vid(i, j, &mut vertices);
            let p10 = vid(i + 1, j, &mut vertices);
            let p01 = vid(i, j + 1, &mut vertices);
            let p11 = vid(i + 1, j + 1, &mut vertices);
            cells.push([p10, p11, p00]);
            cells.push([p01, p00, p11]);
        }
    }
    Mesh::new(vertices, cells)
}

/// Minimal set of cells whose squared indicators capture a `theta` fraction of the total.
///
/// Cells are taken by decreasing indicator, ties by ascending index.
pub fn dorfler_mark(indicators: &[f64], theta: f64) -> Result<MarkSet> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "marking fraction {theta} not in (0, 1]"
        )));
    }
    if let Some(i) = indicators.iter().position(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidInput(format!(
            "indicator {i} is {} (must be finite and nonnegative)",
            indicators[i]
        )));
    }
    let mut order: Vec<usize> = (0..indicators.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (indicators[i] * indicators[i], indicators[j] * indicators[j]);
        b.total_cmp(&a).then(i.cmp(&j))
    });
    let total: f64 = order.iter().map(|&i| indicators[i] * indicators[i]).sum();
    let mut marked = MarkSet::new();
    if total == 0.0 {
        return Ok(marked);
    }
    let target = theta * total;
    let mut acc = 0.0;
    for i in order {
        if acc >= target {
            break;
        }
        acc += indicators[i] * indicators[i];
        marked.insert(i);
    }
    Ok(marked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(n: usize) -> Mesh {
        build_structured_mesh(Domain::Square { a: -1.0, b: 1.0 }, n).unwrap()
    }

    fn assert_valid(m: &Mesh) {
        assert!(m.area.iter().all(|&a| a > 0.0));
        assert!(m.is_conforming());
        for (e, edge) in m.edges.iter().enumerate() {
            if let Some(p) = edge.plus {
                assert!(edge.minus < p);
                // n_F points into the plus cell.
                let c = m.centroid(p);
                let x = m.vertices[edge.v[0]];
                assert!(crate::dot(m.normal[e], crate::sub(c, x)) > 0.0);
            } else {
                let c = m.centroid(edge.minus);
                let x = m.vertices[edge.v[0]];
                assert!(crate::dot(m.normal[e], crate::sub(c, x)) < 0.0);
            }
        }
    }

    #[test]
    fn square_counts() {
        let m = square(1);
        assert_eq!((m.n_vertices(), m.n_cells(), m.n_edges()), (4, 2, 5));
        let m = square(4);
        assert_eq!((m.n_vertices(), m.n_cells()), (25, 32));
        assert_valid(&m);
    }

    #[test]
    fn lshape_counts() {
        let m = build_structured_mesh(Domain::LShape { a: -5.0, b: 5.0 }, 2).unwrap();
        assert_eq!(m.n_cells(), 6);
        assert_eq!(m.n_vertices(), 8);
        let total: f64 = m.area.iter().sum();
        assert!((total - 75.0).abs() < 1e-12);
        assert!(m.cells.iter().all(|t| t.iter().all(|&v| {
            let p = m.vertices[v];
            !(p[0] > 0.0 && p[1] < 0.0)
        })));
        assert!(build_structured_mesh(Domain::LShape { a: -5.0, b: 5.0 }, 3).is_err());
    }

    #[test]
    fn zero_resolution_rejected() {
        assert!(build_structured_mesh(Domain::Square { a: 0.0, b: 1.0 }, 0).is_err());
    }

    #[test]
    fn refine_single_cell_closes_conformingly() {
        let m = square(1);
        let r = m.refine(&MarkSet::from([0])).unwrap();
        assert!(r.n_cells() >= 3);
        assert_valid(&r);
    }

    #[test]
    fn refine_empty_is_identity() {
        let m = square(2);
        let r = m.refine(&MarkSet::new()).unwrap();
        assert_eq!(r.vertices, m.vertices);
        assert_eq!(r.cells, m.cells);
    }

    #[test]
    fn refine_all_shrinks_diameters() {
        let m = square(4);
        let all: MarkSet = (0..m.n_cells()).collect();
        let r = m.refine(&all).unwrap();
        assert_eq!(r.n_cells(), 2 * m.n_cells());
        for (c, &p) in r.parent.iter().enumerate() {
            let ratio = r.h_cell[c] / m.h_cell[p];
            assert!((0.5 - 1e-12..=1.0 + 1e-12).contains(&ratio));
        }
        let u = m.refine_uniform().unwrap();
        assert_eq!(u.n_cells(), 4 * m.n_cells());
        assert!(u.is_conforming());
        for (c, &p) in u.parent.iter().enumerate() {
            assert!((u.h_cell[c] / m.h_cell[p] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn refine_rejects_unknown_cell() {
        assert!(square(1).refine(&MarkSet::from([7])).is_err());
    }

    #[test]
    fn dorfler_examples() {
        assert_eq!(
            dorfler_mark(&[1.0, 0.0, 0.0], 0.35).unwrap(),
            MarkSet::from([0])
        );
        assert_eq!(
            dorfler_mark(&[1.0; 4], 1.0).unwrap(),
            MarkSet::from([0, 1, 2, 3])
        );
        assert_eq!(
            dorfler_mark(&[3.0, 2.0, 2.0, 1.0], 0.5).unwrap(),
            MarkSet::from([0])
        );
        assert!(dorfler_mark(&[0.0; 5], 0.5).unwrap().is_empty());
        assert_eq!(
            dorfler_mark(&[1.0, 2.0, 2.0], 0.5).unwrap(),
            MarkSet::from([1, 2])
        );
        assert!(dorfler_mark(&[1.0], 0.0).is_err());
        assert!(dorfler_mark(&[f64::NAN], 0.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn refine_preserves_area_and_conformity(
            picks in proptest::collection::vec(0usize..32, 0..10),
            rounds in 1usize..3,
        ) {
            let mut m = square(4);
            for round in 0..rounds {
                let marked: MarkSet = picks.iter().map(|&p| (p * (round + 1)) % m.n_cells()).collect();
                let r = m.refine(&marked).unwrap();
                let mut child_area = vec![0.0; m.n_cells()];
                for (c, &p) in r.parent.iter().enumerate() {
                    child_area[p] += r.area[c];
                }
                for (c, &a) in child_area.iter().enumerate() {
                    prop_assert!((a - m.area[c]).abs() <= 1e-12 * m.area[c]);
                }
                for &c in &marked {
                    prop_assert!(r.parent.iter().filter(|&&p| p == c).count() >= 2);
                }
                prop_assert!(r.area.iter().all(|&a| a > 0.0));
                prop_assert!(r.is_conforming());
                m = r;
            }
        }

        #[test]
        fn dorfler_scale_invariant(
            ind in proptest::collection::vec(0.0f64..10.0, 1..40),
            theta in 0.01f64..=1.0,
            scale in 1e-3f64..1e3,
        ) {
            let scaled: Vec<f64> = ind.iter().map(|x| x * scale).collect();
            prop_assert_eq!(dorfler_mark(&ind, theta).unwrap(), dorfler_mark(&scaled, theta).unwrap());
        }

        #[test]
        fn dorfler_minimal_prefix(
            ind in proptest::collection::vec(0.0f64..10.0, 1..40),
            theta in 0.01f64..=1.0,
        ) {
            let m = dorfler_mark(&ind, theta).unwrap();
            let total: f64 = ind.iter().map(|x| x * x).sum();
            if total == 0.0 {
                prop_assert!(m.is_empty());
            } else {
                let sum = |s: &MarkSet| s.iter().map(|&i| ind[i] * ind[i]).sum::<f64>();
                prop_assert!(sum(&m) >= theta * total * (1.0 - 1e-12));
                for &drop in &m {
                    let mut fewer = m.clone();
                    fewer.remove(&drop);
                    prop_assert!(sum(&fewer) < theta * total);
                }
                // No set of the same size minus one can reach the target: the
                // |M| - 1 largest values fall short.
                let mut sorted: Vec<f64> = ind.iter().map(|x| x * x).collect();
                sorted.sort_by(|a, b| b.total_cmp(a));
                let best: f64 = sorted.iter().take(m.len() - 1).sum();
                prop_assert!(best < theta * total);
            }
        }
    }
}
