use msgp::covariance::{BivariateMaternParams, Scale};
use msgp::darcy::{mmse_update, solve_darcy, DarcyProblem, HeadEnsembleStats, HeadObservationSet};
use msgp::fields::{block_average_grid, empirical_variogram, mse, nystrom_factor, FieldRealization, ObservationSet, StructuredGrid};
use msgp::gp::{MultiscaleDataset, Posterior};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Uniform};

fn grid(n1: usize, n2: usize) -> StructuredGrid {
    StructuredGrid::new([0.0, 0.0], [n1 as f64 / n2 as f64, 1.0], [n1, n2]).unwrap()
}

fn fine(g: StructuredGrid, values: Vec<f64>) -> FieldRealization {
    FieldRealization::new(g, values, Scale::Fine, 0).unwrap()
}

fn params(sigma: f64, lambda: f64, nu: f64) -> BivariateMaternParams {
    BivariateMaternParams {
        lambda_c: lambda,
        lambda_f: lambda,
        lambda_cf: lambda,
        nu_c: nu,
        nu_f: nu,
        sigma_c: sigma,
        sigma_f: sigma,
        rho: 0.0,
        sigma_nc: 0.0,
        sigma_nf: 0.0,
    }
}

#[test]
fn block_average_preserves_constants() {
    let g = grid(12, 9);
    let f = fine(g, vec![2.5; g.len()]);
    for m in 1..=9 {
        let c = block_average_grid(&f, m).unwrap();
        assert!(c.values.iter().all(|v| (v - 2.5).abs() < 1e-14));
        assert_eq!(c.scale, Scale::Coarse);
    }
    assert!(block_average_grid(&f, 0).is_err());
    assert!(block_average_grid(&f, 10).is_err());
}

#[test]
fn coarsening_lowers_variance() {
    let g = grid(32, 32);
    let p = params(1.0, 0.1, 0.5);
    let fac = nystrom_factor(&p, Scale::Fine, &g).unwrap();
    let fields = fac.sampler().simulate_grid(&g, 20, 5).unwrap();
    let (mut vf, mut vc) = (0.0, 0.0);
    for f in &fields {
        vf += f.moments().1;
        vc += block_average_grid(f, 6).unwrap().moments().1;
    }
    assert!(vc < 0.8 * vf, "coarse {vc} fine {vf}");
}

#[test]
fn sampler_streams_do_not_depend_on_draw_count() {
    let g = grid(8, 8);
    let p = params(1.0, 0.2, 1.5);
    let fac = nystrom_factor(&p, Scale::Fine, &g).unwrap();
    let t = g.centroids(Scale::Fine);
    let a = fac.sampler().sample(&t, 3, 11).unwrap();
    let b = fac.sampler().sample(&t, 7, 11).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(x.iter().zip(y).all(|(u, v)| (u - v).abs() < 1e-12));
    }
    assert_ne!(a[0], fac.sampler().sample(&t, 1, 12).unwrap()[0]);
}

#[test]
fn mse_matches_conditional_monte_carlo() {
    let g = grid(12, 12);
    let mut p = params(1.0, 0.25, 1.5);
    p.sigma_nf = 0.1;
    let fac = nystrom_factor(&p, Scale::Fine, &g).unwrap();
    let reference = fac.sampler().simulate_grid(&g, 1, 1).unwrap().remove(0);
    let mut d = MultiscaleDataset::new(2);
    for i in (0..g.len()).step_by(7) {
        d.push(&g.centroid(i), Scale::Fine, reference.values[i]);
    }
    let post = Posterior::new(&d, &p).unwrap();
    let targets = g.centroids(Scale::Fine);
    let exact = mse(&post.predict(&targets, false).unwrap(), &reference).unwrap();
    let draws = fac.conditional(&post).unwrap().sample(&targets, 200, 9).unwrap();
    let per: Vec<f64> = draws
        .iter()
        .map(|y| y.iter().zip(&reference.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * g.cell_area())
        .collect();
    let n = per.len() as f64;
    let mean = per.iter().sum::<f64>() / n;
    let se = (per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "mc {mean} exact {exact} se {se}");
}

#[test]
fn white_noise_variogram_sits_at_the_sill() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let u = Uniform::new(0.0, 1.0).unwrap();
    let noise = Normal::new(0.0, 0.5).unwrap();
    let n = 600;
    let coords: Vec<f64> = (0..2 * n).map(|_| u.sample(&mut rng)).collect();
    let values: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
    let obs = ObservationSet { dim: 2, coords, values, scale: Scale::Fine };
    let bins = empirical_variogram(&obs, None, 8, 0.6).unwrap();
    for b in bins {
        let v = b.value.unwrap();
        assert!((v - 0.25).abs() < 0.05, "lag {} value {v}", b.lag);
    }
}

#[test]
fn large_head_noise_leaves_the_prior() {
    let samples: Vec<Vec<f64>> = (0..50).map(|k| vec![(k as f64 * 0.37).sin(), (k as f64 * 0.11).cos(), 0.1 * k as f64]).collect();
    let stats = HeadEnsembleStats::from_samples(vec![3, 8, 13], &samples, 0).unwrap();
    let obs = HeadObservationSet::new(vec![8], vec![5.0], 1e6).unwrap();
    let est = mmse_update(&stats, &obs).unwrap();
    for (a, b) in est.h_hat.iter().zip(&stats.mean) {
        assert!((a - b).abs() < 1e-9);
    }
    let exact = HeadObservationSet::new(vec![8], vec![5.0], 1e-8).unwrap();
    let est = mmse_update(&stats, &exact).unwrap();
    assert!((est.h_hat[1] - 5.0).abs() < 1e-6);
    assert!(est.variance()[1] < 1e-12);
    assert!(mmse_update(&stats, &HeadObservationSet::new(vec![4], vec![0.0], 0.1).unwrap()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn block_average_is_linear(
        a in -3.0f64..3.0, b in -3.0f64..3.0, m in 1usize..8, seed in 0u64..1000,
    ) {
        let g = grid(10, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let f: Vec<f64> = (0..g.len()).map(|_| n.sample(&mut rng)).collect();
        let h: Vec<f64> = (0..g.len()).map(|_| n.sample(&mut rng)).collect();
        let mix: Vec<f64> = f.iter().zip(&h).map(|(x, y)| a * x + b * y).collect();
        let bf = block_average_grid(&fine(g, f), m).unwrap();
        let bh = block_average_grid(&fine(g, h), m).unwrap();
        let bm = block_average_grid(&fine(g, mix), m).unwrap();
        for i in 0..g.len() {
            prop_assert!((bm.values[i] - a * bf.values[i] - b * bh.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn heads_obey_the_maximum_principle(
        amps in proptest::collection::vec(-1.5f64..1.5, 4), seed in 0u64..100, hl in -2.0f64..2.0, dh in 0.1f64..3.0,
    ) {
        let g = StructuredGrid::new([0.0, 0.0], [2.0, 1.0], [16, 8]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = (0..g.len())
            .map(|i| {
                let c = g.centroid(i);
                amps[0] * (3.0 * c[0]).sin() + amps[1] * (5.0 * c[1]).cos() + amps[2] * c[0] * c[1] + amps[3] * n.sample(&mut rng)
            })
            .collect();
        let p = DarcyProblem::new(g, 1.0, hl, hl - dh).unwrap();
        let s = solve_darcy(&p, &fine(g, y)).unwrap();
        let (lo, hi) = (hl - dh, hl);
        prop_assert!(s.heads.iter().all(|&h| h >= lo - 1e-10 * dh && h <= hi + 1e-10 * dh));
        prop_assert!((s.inflow - s.outflow).abs() <= 1e-8 * s.inflow.abs().max(1e-300));
        prop_assert!(s.inflow > 0.0);
    }

    #[test]
    fn head_update_shrinks_variance(obs_node in 0usize..4, sigma in 1e-3f64..1.0, h in -1.0f64..1.0) {
        let samples: Vec<Vec<f64>> = (0..40)
            .map(|k| {
                let t = k as f64;
                vec![(0.3 * t).sin(), (0.3 * t).sin() + 0.1 * (1.7 * t).cos(), (0.9 * t).cos(), 0.05 * t]
            })
            .collect();
        let stats = HeadEnsembleStats::from_samples(vec![0, 1, 2, 3], &samples, 0).unwrap();
        let est = mmse_update(&stats, &HeadObservationSet::new(vec![obs_node], vec![h], sigma).unwrap()).unwrap();
        for (post, prior) in est.variance().iter().zip(stats.variance()) {
            prop_assert!(*post <= prior + 1e-12 && *post >= -1e-12);
        }
        let c = est.cov_matrix();
        prop_assert!((&c - c.transpose()).amax() < 1e-12);
    }
}
