//! Triangle quadrature used by the assembly and error routines.

/// Symmetric quadrature rule on the reference triangle.
///
/// Points are barycentric; weights sum to one and scale with the element
/// area when applied to a physical triangle.
#[derive(Debug, Clone)]
pub struct QuadRule {
    /// Barycentric coordinates of the quadrature points.
    pub points: Vec<[f64; 3]>,
    /// Reference weights, summing to one.
    pub weights: Vec<f64>,
}

impl QuadRule {
    /// The 7-point degree-5 rule: the centroid plus two symmetric
    /// three-point orbits.
    pub fn degree5() -> Self {
        let s = 15.0f64.sqrt();
        let a1 = (6.0 - s) / 21.0;
        let w1 = (155.0 - s) / 1200.0;
        let a2 = (6.0 + s) / 21.0;
        let w2 = (155.0 + s) / 1200.0;
        let third = 1.0 / 3.0;
        QuadRule {
            points: vec![
                [third, third, third],
                [a1, a1, 1.0 - 2.0 * a1],
                [a1, 1.0 - 2.0 * a1, a1],
                [1.0 - 2.0 * a1, a1, a1],
                [a2, a2, 1.0 - 2.0 * a2],
                [a2, 1.0 - 2.0 * a2, a2],
                [1.0 - 2.0 * a2, a2, a2],
            ],
            weights: vec![9.0 / 40.0, w1, w1, w1, w2, w2, w2],
        }
    }

    /// The 3-point edge-midpoint rule, exact for polynomials up to
    /// degree 2.
    pub fn edge_midpoints() -> Self {
        let third = 1.0 / 3.0;
        QuadRule {
            points: vec![[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
            weights: vec![third, third, third],
        }
    }

    /// Maps a barycentric point to physical coordinates on the triangle
    /// with corners `p`.
    pub fn physical_point(lambda: [f64; 3], p: [[f64; 2]; 3]) -> [f64; 2] {
        [
            lambda[0] * p[0][0] + lambda[1] * p[1][0] + lambda[2] * p[2][0],
            lambda[0] * p[0][1] + lambda[1] * p[1][1] + lambda[2] * p[2][1],
        ]
    }

    /// Integrates `f` over the triangle with corners `p` and area `area`.
    pub fn integrate<F: FnMut([f64; 2]) -> f64>(&self, p: [[f64; 2]; 3], area: f64, mut f: F) -> f64 {
        let mut sum = 0.0;
        for (lambda, w) in self.points.iter().zip(&self.weights) {
            sum += w * f(Self::physical_point(*lambda, p));
        }
        area * sum
    }
}
