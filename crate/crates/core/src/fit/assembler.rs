//! Observation covariance of the bivariate Matérn model on a fixed dataset,
//! with pairwise distances computed once and correlation blocks cached by
//! `(lambda, nu)`. Entries agree bit for bit with the generic assembly.

use std::cell::RefCell;
use std::rc::Rc;

use nalgebra::DMatrix;

use crate::covariance::{BivariateMaternParams, MultiscaleCovariance, Scale};
use crate::gp::MultiscaleDataset;
use crate::kernels::MaternOrder;

const CAPACITY: usize = 6;

type Block = Rc<Vec<f64>>;

#[derive(Default)]
struct Lru {
    entries: Vec<((u64, u64), Block)>,
}

impl Lru {
    fn get_or(&mut self, lambda: f64, nu: f64, make: impl FnOnce() -> Vec<f64>) -> Block {
        let key = (lambda.to_bits(), nu.to_bits());
        if let Some(pos) = self.entries.iter().position(|(k, _)| *k == key) {
            let e = self.entries.remove(pos);
            let b = e.1.clone();
            self.entries.push(e);
            return b;
        }
        let b = Rc::new(make());
        if self.entries.len() == CAPACITY {
            self.entries.remove(0);
        }
        self.entries.push((key, b.clone()));
        b
    }
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    match (x, y) {
        ([x0, x1], [y0, y1]) => ((x0 - y0).powi(2) + (x1 - y1).powi(2)).sqrt(),
        _ => crate::kernels::euclidean(&x.iter().zip(y).map(|(a, b)| a - b).collect::<Vec<_>>()),
    }
}

pub(crate) struct Assembler {
    n_c: usize,
    n_f: usize,
    /// Column-major lower triangles (diagonal included).
    d_cc: Vec<f64>,
    d_ff: Vec<f64>,
    /// `n_c x n_f`, column-major.
    d_cf: Vec<f64>,
    /// Off-diagonal pairs at identical locations within a scale.
    coincident: Vec<(usize, usize)>,
    noise: [Option<f64>; 2],
    caches: RefCell<[Lru; 3]>,
}

fn lower(pts: &[&[f64]]) -> Vec<f64> {
    let n = pts.len();
    let mut d = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in j..n {
            d.push(distance(pts[i], pts[j]));
        }
    }
    d
}

impl Assembler {
    pub(crate) fn new(data: &MultiscaleDataset) -> Self {
        let pts = data.points();
        let (n_c, n_f) = (data.n_c(), data.n_f());
        let c: Vec<&[f64]> = (0..n_c).map(|i| pts.point(i)).collect();
        let f: Vec<&[f64]> = (n_c..n_c + n_f).map(|i| pts.point(i)).collect();
        let mut d_cf = Vec::with_capacity(n_c * n_f);
        for y in &f {
            for x in &c {
                d_cf.push(distance(x, y));
            }
        }
        let mut coincident = Vec::new();
        for (off, set) in [(0, &c), (n_c, &f)] {
            for j in 0..set.len() {
                for i in j + 1..set.len() {
                    if set[i] == set[j] {
                        coincident.push((off + i, off + j));
                    }
                }
            }
        }
        Self {
            n_c,
            n_f,
            d_cc: lower(&c),
            d_ff: lower(&f),
            d_cf,
            coincident,
            noise: [data.noise_c, data.noise_f],
            caches: RefCell::new(Default::default()),
        }
    }

    fn correlations(&self, which: usize, d: &[f64], lambda: f64, nu: f64) -> Block {
        self.caches.borrow_mut()[which].get_or(lambda, nu, || {
            let order = MaternOrder::new(nu);
            d.iter().map(|&r| order.eval(r / lambda)).collect()
        })
    }

    fn nugget(&self, p: &BivariateMaternParams, s: Scale) -> f64 {
        let k = match s {
            Scale::Coarse => 0,
            Scale::Fine => 1,
        };
        match self.noise[k] {
            Some(v) => v * v,
            None => p.nugget_variance(s),
        }
    }

    /// Observation covariance `[coarse; fine]` including nuggets.
    pub(crate) fn covariance(&self, p: &BivariateMaternParams) -> DMatrix<f64> {
        let (nc, nf) = (self.n_c, self.n_f);
        let n = nc + nf;
        let mut out = DMatrix::zeros(n, n);
        let fill_lower = |out: &mut DMatrix<f64>, off: usize, m: usize, r: &[f64], s2: f64| {
            let mut k = 0;
            for j in 0..m {
                for i in j..m {
                    let v = s2 * r[k];
                    out[(off + i, off + j)] = v;
                    out[(off + j, off + i)] = v;
                    k += 1;
                }
            }
        };
        let s2c = p.sigma_c * p.sigma_c;
        let s2f = p.sigma_f * p.sigma_f;
        if nc > 0 {
            let r = self.correlations(0, &self.d_cc, p.lambda_c, p.nu_c);
            fill_lower(&mut out, 0, nc, &r, s2c);
        }
        if nf > 0 {
            let r = self.correlations(1, &self.d_ff, p.lambda_f, p.nu_f);
            fill_lower(&mut out, nc, nf, &r, s2f);
        }
        if nc > 0 && nf > 0 {
            let r = self.correlations(2, &self.d_cf, p.lambda_cf, p.nu_cf());
            let sx = p.rho * p.sigma_c * p.sigma_f;
            for j in 0..nf {
                for i in 0..nc {
                    let v = sx * r[i + nc * j];
                    out[(i, nc + j)] = v;
                    out[(nc + j, i)] = v;
                }
            }
        }
        let (gc, gf) = (self.nugget(p, Scale::Coarse), self.nugget(p, Scale::Fine));
        for i in 0..n {
            out[(i, i)] += if i < nc { gc } else { gf };
        }
        for &(i, j) in &self.coincident {
            let g = if i < nc { gc } else { gf };
            out[(i, j)] += g;
            out[(j, i)] += g;
        }
        out
    }
}
