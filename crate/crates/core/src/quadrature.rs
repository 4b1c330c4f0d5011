//! Quadrature on triangles, convex polygons and segments.

use crate::{cross3, dist, lerp, Error, Point, Result};

/// Points and weights of a physical-space rule.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sum of the weights, i.e. the measure of the integration domain.
    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate<F: FnMut(Point) -> f64>(&self, mut f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Point, f64)> + '_ {
        self.points
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
    }
}

const T2: [([f64; 3], f64); 3] = [
    ([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0], 1.0 / 3.0),
    ([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1.0 / 3.0),
];

const A1: f64 = 0.445_948_490_915_964_886_318;
const W1: f64 = 0.223_381_589_678_011_465_944;
const A2: f64 = 0.091_576_213_509_770_743_460;
const W2: f64 = 0.109_951_743_655_321_867_389;

const T4: [([f64; 3], f64); 6] = [
    ([1.0 - 2.0 * A1, A1, A1], W1),
    ([A1, 1.0 - 2.0 * A1, A1], W1),
    ([A1, A1, 1.0 - 2.0 * A1], W1),
    ([1.0 - 2.0 * A2, A2, A2], W2),
    ([A2, 1.0 - 2.0 * A2, A2], W2),
    ([A2, A2, 1.0 - 2.0 * A2], W2),
];

fn triangle_table(degree: usize) -> Result<&'static [([f64; 3], f64)]> {
    match degree {
        0..=2 => Ok(&T2),
        3 | 4 => Ok(&T4),
        _ => Err(Error::InvalidInput(format!(
            "triangle quadrature of degree {degree} is not available (max 4)"
        ))),
    }
}

fn push_triangle(rule: &mut QuadratureRule, table: &[([f64; 3], f64)], t: [Point; 3]) {
    let area = 0.5 * cross3(t[0], t[1], t[2]).abs();
    if area == 0.0 {
        return;
    }
    for (b, w) in table {
        rule.points.push([
            b[0] * t[0][0] + b[1] * t[1][0] + b[2] * t[2][0],
            b[0] * t[0][1] + b[1] * t[1][1] + b[2] * t[2][1],
        ]);
        rule.weights.push(w * area);
    }
}

/// Rule on a triangle, exact for polynomials up to `degree` (at most 4).
pub fn quad_triangle(t: [Point; 3], degree: usize) -> Result<QuadratureRule> {
    let table = triangle_table(degree)?;
    let mut rule = QuadratureRule::default();
    push_triangle(&mut rule, table, t);
    Ok(rule)
}

/// Rule on a convex polygon via a fan triangulation from the first vertex.
///
/// Degenerate polygons give an empty rule.
pub fn quad_polygon(poly: &[Point], degree: usize) -> Result<QuadratureRule> {
    let table = triangle_table(degree)?;
    let mut rule = QuadratureRule::default();
    for k in 1..poly.len().saturating_sub(1) {
        push_triangle(&mut rule, table, [poly[0], poly[k], poly[k + 1]]);
    }
    Ok(rule)
}

/// Rule on the segment `[a, b]`, exact up to `degree` (at most 5).
pub fn quad_segment(a: Point, b: Point, degree: usize) -> Result<QuadratureRule> {
    let len = dist(a, b);
    let (nodes, weights): (&[f64], &[f64]) = match degree {
        0..=3 => {
            const G: f64 = 0.288_675_134_594_812_9; // 1 / (2 sqrt 3)
            (&[0.5 - G, 0.5 + G], &[0.5, 0.5])
        }
        4 | 5 => {
            const G: f64 = 0.387_298_334_620_741_7; // sqrt(3/5) / 2
            (
                &[0.5 - G, 0.5, 0.5 + G],
                &[5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
            )
        }
        _ => {
            return Err(Error::InvalidInput(format!(
                "segment quadrature of degree {degree} is not available (max 5)"
            )))
        }
    };
    if len == 0.0 {
        return Ok(QuadratureRule::default());
    }
    Ok(QuadratureRule {
        points: nodes.iter().map(|&t| lerp(a, b, t)).collect(),
        weights: weights.iter().map(|w| w * len).collect(),
    })
}

/// Area of a simple polygon (shoelace), positive for counter-clockwise order.
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|k| {
            let (p, q) = (poly[k], poly[(k + 1) % n]);
            p[0] * q[1] - p[1] * q[0]
        })
        .sum::<f64>()
}
