/// Eigenvalues of a symmetric 2x2 matrix, ordered so `|lambda1| <= |lambda2|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenPair {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl EigenPair {
    pub fn new(a: f64, b: f64) -> Self {
        if a.abs() <= b.abs() {
            Self { lambda1: a, lambda2: b }
        } else {
            Self { lambda1: b, lambda2: a }
        }
    }
}

/// Closed-form eigenvalues of `[[a, b], [b, d]]`.
pub fn eigen2x2_ordered(a: f64, b: f64, d: f64) -> EigenPair {
    let half_trace = 0.5 * (a + d);
    let half_diff = 0.5 * (a - d);
    let disc = half_diff.hypot(b);
    // avoid cancellation in the smaller-magnitude root
    let big = if half_trace >= 0.0 { half_trace + disc } else { half_trace - disc };
    let det = a * d - b * b;
    let small = if big != 0.0 { det / big } else { 0.0 };
    EigenPair::new(small, big)
}
