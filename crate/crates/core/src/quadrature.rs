//! Composite Gauss–Legendre rules on panelled intervals.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

/// Gauss–Legendre rule on the reference interval `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pairs: Vec<(f64, f64)>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let n = NonZeroUsize::new(n.max(1)).expect("non-zero");
        let mut pairs: Vec<(f64, f64)> = GaussLegendre::new(n)
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (x, w))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        GaussRule { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        self.pairs.iter().map(move |&(x, w)| (mid + half * x, half * w))
    }

    /// Composite rule over consecutive breakpoints.
    pub fn composite(&self, breaks: &[f64]) -> Vec<(f64, f64)> {
        breaks
            .windows(2)
            .flat_map(|w| self.on(w[0], w[1]).collect::<Vec<_>>())
            .collect()
    }
}

/// Breakpoints `0, b r^{m-1}, ..., b r, b` graded geometrically toward 0.
pub fn graded_breaks(b: f64, ratio: f64, panels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(panels + 1);
    out.push(0.0);
    for m in (0..panels).rev() {
        out.push(b * ratio.powi(m as i32));
    }
    out
}

/// `n` equal panels on `[a, b]`.
pub fn uniform_breaks(a: f64, b: f64, panels: usize) -> Vec<f64> {
    let panels = panels.max(1);
    (0..=panels)
        .map(|k| {
            if k == panels {
                b
            } else {
                a + (b - a) * k as f64 / panels as f64
            }
        })
        .collect()
}

/// Chebyshev points of the first kind on `[a, b]`, increasing.
pub fn chebyshev_nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    (0..n)
        .map(|k| {
            let theta = std::f64::consts::PI * (2.0 * (n - 1 - k) as f64 + 1.0) / (2.0 * n as f64);
            mid + half * theta.cos()
        })
        .collect()
}

/// Barycentric interpolation through Chebyshev points of the first kind.
#[derive(Debug, Clone)]
pub struct ChebyshevInterpolant {
    pub a: f64,
    pub b: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ChebyshevInterpolant {
    pub fn new(a: f64, b: f64, n: usize) -> Self {
        let nodes = chebyshev_nodes(a, b, n);
        let weights = (0..n)
            .map(|k| {
                let j = n - 1 - k;
                let theta = std::f64::consts::PI * (2.0 * j as f64 + 1.0) / (2.0 * n as f64);
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                s * theta.sin()
            })
            .collect();
        ChebyshevInterpolant { a, b, nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn eval(&self, values: &[f64], x: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&xk, &wk), &fk) in self.nodes.iter().zip(&self.weights).zip(values) {
            let d = x - xk;
            if d == 0.0 {
                return fk;
            }
            let c = wk / d;
            num += c * fk;
            den += c;
        }
        num / den
    }
}
