//! Interpolating cubic spline with not-a-knot end conditions.
//!
//! The third derivative is continuous across the second and the penultimate
//! knot, so any cubic polynomial is reproduced exactly. With three knots the
//! interpolant degenerates to the parabola through them, with two to a line.

#[derive(Debug, Clone)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots.
    curvature: Vec<f64>,
}

impl CubicSpline {
    /// Builds the spline. `knots` must be strictly increasing, finite, with at
    /// least two entries and the same length as `values`.
    pub fn new(knots: &[f64], values: &[f64]) -> Option<Self> {
        let n = knots.len();
        if n < 2
            || values.len() != n
            || knots.iter().chain(values).any(|v| !v.is_finite())
            || knots.windows(2).any(|w| w[1] <= w[0])
        {
            return None;
        }
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let slope: Vec<f64> = values
            .windows(2)
            .zip(&h)
            .map(|(v, h)| (v[1] - v[0]) / h)
            .collect();
        let curvature = match n {
            2 => vec![0.0; 2],
            3 => vec![2.0 * (slope[1] - slope[0]) / (h[0] + h[1]); 3],
            _ => not_a_knot_curvature(&h, &slope),
        };
        Some(Self {
            knots: knots.to_vec(),
            values: values.to_vec(),
            curvature,
        })
    }

    /// Evaluates the spline. Arguments outside the knot range are extrapolated
    /// with the boundary cubic.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.knots.len();
        let seg = match self.knots.partition_point(|&k| k <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let (t0, t1) = (self.knots[seg], self.knots[seg + 1]);
        if t == t0 {
            return self.values[seg];
        }
        if t == t1 {
            return self.values[seg + 1];
        }
        let h = t1 - t0;
        let a = (t1 - t) / h;
        let b = (t - t0) / h;
        let (m0, m1) = (self.curvature[seg], self.curvature[seg + 1]);
        a * self.values[seg]
            + b * self.values[seg + 1]
            + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0
    }
}

/// Second derivatives for `n >= 4` knots. The two boundary unknowns are
/// eliminated through the not-a-knot conditions, leaving a tridiagonal system
/// over the interior knots.
fn not_a_knot_curvature(h: &[f64], slope: &[f64]) -> Vec<f64> {
    let n = h.len() + 1;
    let m = n - 2;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for r in 0..m {
        lower[r] = h[r];
        diag[r] = 2.0 * (h[r] + h[r + 1]);
        upper[r] = h[r + 1];
        rhs[r] = 6.0 * (slope[r + 1] - slope[r]);
    }
    // M0 = ((h0 + h1) M1 - h0 M2) / h1
    let (h0, h1) = (h[0], h[1]);
    diag[0] += h0 * (h0 + h1) / h1;
    upper[0] -= h0 * h0 / h1;
    lower[0] = 0.0;
    // M_{n-1} = ((a + b) M_{n-2} - b M_{n-3}) / a
    let (a, b) = (h[n - 3], h[n - 2]);
    diag[m - 1] += b * (a + b) / a;
    lower[m - 1] -= b * b / a;
    upper[m - 1] = 0.0;

    for r in 1..m {
        let w = lower[r] / diag[r - 1];
        diag[r] -= w * upper[r - 1];
        rhs[r] -= w * rhs[r - 1];
    }
    let mut interior = vec![0.0; m];
    interior[m - 1] = rhs[m - 1] / diag[m - 1];
    for r in (0..m - 1).rev() {
        interior[r] = (rhs[r] - upper[r] * interior[r + 1]) / diag[r];
    }

    let mut curvature = Vec::with_capacity(n);
    curvature.push(((h0 + h1) * interior[0] - h0 * interior[1]) / h1);
    curvature.extend_from_slice(&interior);
    curvature.push(((a + b) * interior[m - 1] - b * interior[m - 2]) / a);
    curvature
}
