//! Level-set interface, cell/edge classification and cut-cell geometry.
//!
//! Sides are indexed `0` (the region `phi < 0`) and `1` (`phi > 0`).

use crate::mesh::Mesh;
use crate::{dist, lerp, norm, Error, Point, Result};

/// Diffusion-weighted averaging constants of the interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub omega1: f64,
    pub omega2: f64,
    /// Harmonic-type mean `k1 k2 / (k1 + k2)`.
    pub k_gamma: f64,
}

impl Weights {
    /// `omega[s]`.
    pub fn omega(&self, s: usize) -> f64 {
        if s == 0 {
            self.omega1
        } else {
            self.omega2
        }
    }
}

pub fn kappa_weights(k1: f64, k2: f64) -> Result<Weights> {
    if !(k1 > 0.0 && k2 > 0.0 && k1.is_finite() && k2.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "diffusivities must be positive, got ({k1}, {k2})"
        )));
    }
    let s = k1 + k2;
    Ok(Weights {
        omega1: k2 / s,
        omega2: k1 / s,
        k_gamma: k1 * k2 / s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellClass {
    Inside1,
    Inside2,
    Cut,
}

impl CellClass {
    /// Integer code used in output files: 1, 2, or 0 for cut.
    pub fn code(self) -> i32 {
        match self {
            CellClass::Inside1 => 1,
            CellClass::Inside2 => 2,
            CellClass::Cut => 0,
        }
    }
}

/// Geometry of one cut cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CutCell {
    /// Local index of the vertex alone on its side.
    pub lone: usize,
    /// Side of the lone vertex.
    pub lone_side: usize,
    /// Sub-polygons on side 0 and side 1, counter-clockwise.
    pub poly: [Vec<Point>; 2],
    pub poly_area: [f64; 2],
    /// Endpoints of the interface segment.
    pub gamma: [Point; 2],
    /// Unit normal pointing from side 0 to side 1.
    pub normal: Point,
    /// `normal` rotated by 90 degrees clockwise.
    pub tangent: Point,
    /// Midpoint of the interface segment.
    pub mid: Point,
    pub length: f64,
    /// Lengths of the side-0 and side-1 parts of the edge opposite each local vertex.
    pub sub_len: [[f64; 2]; 3],
    /// Smallest sub-edge length over the cut edges.
    pub h_min: f64,
}

impl CutCell {
    /// Local index of the edge not crossed by the interface.
    pub fn uncut_edge(&self) -> usize {
        self.lone
    }

    /// Side owning the uncut edge.
    pub fn uncut_side(&self) -> usize {
        1 - self.lone_side
    }
}

/// Side-wise split of an edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCut {
    /// Crossing point, if the interface cuts the edge.
    pub split: Option<Point>,
    /// Length on side 0 and side 1.
    pub len: [f64; 2],
}

/// Classification of a mesh against a level set.
#[derive(Debug, Clone)]
pub struct CutTopology {
    /// Level-set values at the vertices after snapping.
    pub phi: Vec<f64>,
    pub class: Vec<CellClass>,
    pub cut: Vec<Option<CutCell>>,
    pub edge_cut: Vec<EdgeCut>,
    /// `in_cell[s][c]`: cell `c` meets side `s`.
    pub in_cell: [Vec<bool>; 2],
    /// `in_edge[s][e]`: edge `e` carries side-`s` multipliers.
    ///
    /// Interior edges whose two cells both meet side `s`, plus boundary
    /// edges of such cells.
    pub in_edge: [Vec<bool>; 2],
    /// `ghost_edge[s][e]`: interior side-`s` edges with a cut neighbour.
    pub ghost_edge: [Vec<bool>; 2],
}

fn side_of(phi: f64) -> usize {
    usize::from(phi > 0.0)
}

impl CutTopology {
    /// Classifies every cell and edge, computing cut geometry from the
    /// piecewise-linear interpolant of `phi`.
    pub fn classify<F: Fn(Point) -> f64>(mesh: &Mesh, phi: F) -> Result<Self> {
        let mut values = Vec::with_capacity(mesh.n_vertices());
        for (v, &x) in mesh.vertices.iter().enumerate() {
            let mut p = phi(x);
            let tol = 1e-12 * mesh.vertex_h(v);
            if p.abs() < tol {
                p = tol;
            }
            if !p.is_finite() || p == 0.0 {
                return Err(Error::ZeroLevelSet {
                    vertex: v,
                    x: x[0],
                    y: x[1],
                });
            }
            values.push(p);
        }
        Self::from_vertex_values(mesh, values)
    }

    /// Classification from snapped, nonzero vertex values.
    pub fn from_vertex_values(mesh: &Mesh, phi: Vec<f64>) -> Result<Self> {
        if phi.len() != mesh.n_vertices() {
            return Err(Error::InvalidInput(
                "one level-set value per vertex required".into(),
            ));
        }
        if let Some(v) = phi.iter().position(|p| !p.is_finite() || *p == 0.0) {
            let x = mesh.vertices[v];
            return Err(Error::ZeroLevelSet {
                vertex: v,
                x: x[0],
                y: x[1],
            });
        }

        let crossing = |a: usize, b: usize| -> Point {
            // Canonical orientation so neighbouring cells agree bitwise.
            let (a, b) = (a.min(b), a.max(b));
            let t = phi[a] / (phi[a] - phi[b]);
            lerp(mesh.vertices[a], mesh.vertices[b], t)
        };

        let edge_cut: Vec<EdgeCut> = mesh
            .edges
            .iter()
            .enumerate()
            .map(|(e, edge)| {
                let [a, b] = edge.v;
                let (sa, sb) = (side_of(phi[a]), side_of(phi[b]));
                let mut len = [0.0; 2];
                if sa == sb {
                    len[sa] = mesh.h_edge[e];
                    EdgeCut { split: None, len }
                } else {
                    let x = crossing(a, b);
                    len[sa] = dist(mesh.vertices[a], x);
                    len[sb] = dist(x, mesh.vertices[b]);
                    EdgeCut {
                        split: Some(x),
                        len,
                    }
                }
            })
            .collect();

        let mut class = Vec::with_capacity(mesh.n_cells());
        let mut cut = Vec::with_capacity(mesh.n_cells());
        for (c, t) in mesh.cells.iter().enumerate() {
            let s = t.map(|v| side_of(phi[v]));
            if s[0] == s[1] && s[1] == s[2] {
                class.push(if s[0] == 0 {
                    CellClass::Inside1
                } else {
                    CellClass::Inside2
                });
                cut.push(None);
                continue;
            }
            class.push(CellClass::Cut);
            let lone = (0..3)
                .find(|&j| s[j] != s[(j + 1) % 3] && s[j] != s[(j + 2) % 3])
                .unwrap();
            let mut poly: [Vec<Point>; 2] = [Vec::with_capacity(4), Vec::with_capacity(4)];
            let mut gamma = Vec::with_capacity(2);
            for j in 0..3 {
                let k = (j + 1) % 3;
                poly[s[j]].push(mesh.vertices[t[j]]);
                if s[j] != s[k] {
                    let x = crossing(t[j], t[k]);
                    poly[0].push(x);
                    poly[1].push(x);
                    gamma.push(x);
                }
            }
            let grads = mesh.barycentric_gradients(c);
            let g = [
                (0..3).map(|j| phi[t[j]] * grads[j][0]).sum::<f64>(),
                (0..3).map(|j| phi[t[j]] * grads[j][1]).sum::<f64>(),
            ];
            let gn = norm(g);
            let normal = [g[0] / gn, g[1] / gn];
            let gamma = [gamma[0], gamma[1]];
            let sub_len: [[f64; 2]; 3] =
                std::array::from_fn(|j| edge_cut[mesh.cell_edges[c][j]].len);
            let h_min = (0..3)
                .filter(|&j| j != lone)
                .flat_map(|j| sub_len[j])
                .fold(f64::INFINITY, f64::min);
            // Lone piece from edge fractions; stays positive for snapped slivers.
            let lone_frac: f64 = [(lone + 1) % 3, (lone + 2) % 3]
                .iter()
                .map(|&j| {
                    let e = mesh.cell_edges[c][j];
                    edge_cut[e].len[s[lone]] / mesh.h_edge[e]
                })
                .product();
            let mut poly_area = [0.0; 2];
            poly_area[s[lone]] = mesh.area[c] * lone_frac;
            poly_area[1 - s[lone]] = mesh.area[c] * (1.0 - lone_frac);
            if poly_area.iter().any(|&a| !(a > 0.0)) {
                return Err(Error::Internal(format!(
                    "cut cell {c} has an empty sub-polygon"
                )));
            }
            cut.push(Some(CutCell {
                lone,
                lone_side: s[lone],
                poly,
                poly_area,
                gamma,
                normal,
                tangent: [normal[1], -normal[0]],
                mid: lerp(gamma[0], gamma[1], 0.5),
                length: dist(gamma[0], gamma[1]),
                sub_len,
                h_min,
            }));
        }

        let in_cell: [Vec<bool>; 2] = std::array::from_fn(|s| {
            class
                .iter()
                .map(|&k| k == CellClass::Cut || (k == CellClass::Inside1) == (s == 0))
                .collect()
        });
        let in_edge: [Vec<bool>; 2] = std::array::from_fn(|s| {
            mesh.edges
                .iter()
                .map(|e| in_cell[s][e.minus] && e.plus.is_none_or(|p| in_cell[s][p]))
                .collect()
        });
        let ghost_edge: [Vec<bool>; 2] = std::array::from_fn(|s| {
            mesh.edges
                .iter()
                .enumerate()
                .map(|(i, e)| match e.plus {
                    Some(p) => {
                        in_edge[s][i]
                            && (class[e.minus] == CellClass::Cut || class[p] == CellClass::Cut)
                    }
                    None => false,
                })
                .collect()
        });

        Ok(Self {
            phi,
            class,
            cut,
            edge_cut,
            in_cell,
            in_edge,
            ghost_edge,
        })
    }

    pub fn is_cut(&self, c: usize) -> bool {
        self.class[c] == CellClass::Cut
    }

    pub fn cut_cell(&self, c: usize) -> Option<&CutCell> {
        self.cut[c].as_ref()
    }

    pub fn n_cut(&self) -> usize {
        self.cut.iter().filter(|c| c.is_some()).count()
    }

    /// The side-`s` part of cell `c` as a polygon.
    pub fn piece(&self, mesh: &Mesh, c: usize, s: usize) -> Result<Vec<Point>> {
        if !self.in_cell[s][c] {
            return Err(Error::SideMismatch {
                cell: c,
                side: side_name(s),
            });
        }
        Ok(match &self.cut[c] {
            Some(cc) => cc.poly[s].clone(),
            None => mesh.cell_points(c).to_vec(),
        })
    }

    /// Area of the side-`s` part of cell `c` (zero if absent).
    pub fn piece_area(&self, mesh: &Mesh, c: usize, s: usize) -> f64 {
        match &self.cut[c] {
            Some(cc) => cc.poly_area[s],
            None if self.in_cell[s][c] => mesh.area[c],
            None => 0.0,
        }
    }

    /// The side-`s` part of edge `e` as a segment, if nonempty.
    pub fn edge_piece(&self, mesh: &Mesh, e: usize, s: usize) -> Option<[Point; 2]> {
        let edge = &mesh.edges[e];
        let (a, b) = (mesh.vertices[edge.v[0]], mesh.vertices[edge.v[1]]);
        let sa = side_of(self.phi[edge.v[0]]);
        match self.edge_cut[e].split {
            None if sa == s => Some([a, b]),
            None => None,
            Some(x) if sa == s => Some([a, x]),
            Some(x) => Some([x, b]),
        }
    }

    /// Side of vertex `v`.
    pub fn vertex_side(&self, v: usize) -> usize {
        side_of(self.phi[v])
    }
}

pub(crate) fn side_name(s: usize) -> &'static str {
    if s == 0 {
        "side-1"
    } else {
        "side-2"
    }
}
