//! Gauss–Legendre rules and piecewise tensor-product integration.

use std::f64::consts::PI;

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Splits `[lo, hi]` at the given interior breakpoints and grades the
/// sub-intervals adjacent to `kink` geometrically towards it.
pub(crate) fn panels(lo: f64, hi: f64, breaks: &[f64], kink: Option<f64>) -> Vec<(f64, f64)> {
    let mut pts = vec![lo, hi];
    let width = hi - lo;
    let tiny = 1e-14 * width.abs().max(f64::MIN_POSITIVE);
    for &b in breaks {
        if b > lo + tiny && b < hi - tiny {
            pts.push(b);
        }
    }
    let kink = kink.filter(|&k| k >= lo - tiny && k <= hi + tiny);
    if let Some(k) = kink {
        if k > lo + tiny && k < hi - tiny {
            pts.push(k);
        }
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() <= tiny);
    let mut out = Vec::with_capacity(pts.len() + 8);
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        match kink {
            Some(k) if (a - k).abs() <= tiny => grade(k, b, &mut out, false),
            Some(k) if (b - k).abs() <= tiny => grade(k, a, &mut out, true),
            _ => out.push((a, b)),
        }
    }
    out
}

const GRADING: [f64; 3] = [0.02, 0.12, 0.4];

fn grade(k: f64, far: f64, out: &mut Vec<(f64, f64)>, reversed: bool) {
    let len = far - k;
    let mut cuts = vec![k];
    cuts.extend(GRADING.iter().map(|g| k + g * len));
    cuts.push(far);
    let mut segs: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
    if reversed {
        segs = segs.into_iter().rev().map(|(a, b)| (b, a)).collect();
    }
    for (a, b) in segs {
        out.push(if a <= b { (a, b) } else { (b, a) });
    }
}
