use gendaug_core::datasets::{make_gaussian_world, GaussianWorldConfig};
use gendaug_core::metrics::{
    fid, fit_stats, inception_score, pareto_frontier, Direction, FeatureExtractor, GaussianStats,
};
use gendaug_core::numerics::{SeededRng, Tensor};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn stats(mean: Vec<f64>, cov: &DMatrix<f64>) -> GaussianStats {
    let f = mean.len();
    let data = (0..f * f).map(|k| cov[(k / f, k % f)]).collect();
    GaussianStats { mean, cov: Tensor::new([f, f], data).unwrap(), count: 1000 }
}

/// FID with the cross term from the eigenvalues of the non-symmetric
/// product `Σa Σb`, which are real and nonnegative for PSD inputs.
fn eigen_oracle(ma: &[f64], sa: &DMatrix<f64>, mb: &[f64], sb: &DMatrix<f64>) -> f64 {
    let product = sa * sb;
    let cross: f64 = product.complex_eigenvalues().iter().map(|z| z.re.max(0.0).sqrt()).sum();
    let mean: f64 = ma.iter().zip(mb).map(|(a, b)| (a - b) * (a - b)).sum();
    mean + sa.trace() + sb.trace() - 2.0 * cross
}

fn random_psd(rng: &mut SeededRng, f: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(f, f, |_, _| rng.normal());
    &a * a.transpose() / f as f64 + DMatrix::identity(f, f) * 0.01
}

#[test]
fn fid_matches_independent_oracle() {
    let mut rng = SeededRng::new(17, 0);
    for _ in 0..20 {
        let (sa, sb) = (random_psd(&mut rng, 6), random_psd(&mut rng, 6));
        let ma: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let mb: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let got = fid(&stats(ma.clone(), &sa), &stats(mb.clone(), &sb)).unwrap();
        let want = eigen_oracle(&ma, &sa, &mb, &sb);
        assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
    }
}

#[test]
fn fid_matches_frozen_reference() {
    let f = 6;
    let a = DMatrix::from_fn(f, f, |i, j| ((i + 2 * j + 1) as f64).sin());
    let b = DMatrix::from_fn(f, f, |i, j| (2.0 * i as f64 - j as f64 + 0.5).cos());
    let sa = &a * a.transpose() / f as f64 + DMatrix::identity(f, f) * 0.1;
    let sb = &b * b.transpose() / f as f64 + DMatrix::identity(f, f) * 0.05;
    let ma = (0..f).map(|i| 0.1 * i as f64).collect();
    let mb = (0..f).map(|i| -0.05 * (i * i) as f64).collect();
    let got = fid(&stats(ma, &sa), &stats(mb, &sb)).unwrap();
    // scipy.linalg.sqrtm on the same matrices
    assert!((got - 9.134_327_471_810_401).abs() <= 1e-6, "{got}");
}

#[test]
fn identity_feature_fid_recovers_mean_gap() {
    let mut cfg = GaussianWorldConfig::axis_aligned(2, 8, 1.5, 1.0, 10_000, 10_000);
    cfg.means[1][3] = 0.5;
    let gap: f64 = cfg.means[0].iter().zip(&cfg.means[1]).map(|(a, b)| (a - b) * (a - b)).sum();
    let (train, val) = make_gaussian_world(&cfg, &SeededRng::new(2, 0)).unwrap();
    let ext = FeatureExtractor::Identity { dim: 8 };
    let a = ext.stats(&train.select(&train.indices_of(0)).data().to_vec()).unwrap();
    let b = ext.stats(&val.select(&val.indices_of(1)).data().to_vec()).unwrap();
    let d = fid(&a, &b).unwrap();
    assert!((d - gap).abs() <= 0.02 * gap, "fid {d} vs ‖δ‖² {gap}");
}

fn probability_matrix(n: usize, c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, c), n).prop_map(|rows| {
        rows.into_iter()
            .flat_map(|r| {
                let r: Vec<f64> = r.into_iter().map(|v| v * v * v + 1e-12).collect();
                let s: f64 = r.iter().sum();
                r.into_iter().map(move |v| v / s)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inception_score_is_bounded(p in probability_matrix(20, 7)) {
        let (m, _) = inception_score(&p, 7, 2).unwrap();
        prop_assert!((1.0 - 1e-12..=7.0 + 1e-12).contains(&m), "IS {}", m);
    }

    #[test]
    fn inception_score_ignores_order_within_split(p in probability_matrix(10, 4), seed in 0u64..1000) {
        let mut rows: Vec<&[f64]> = p.chunks(4).collect();
        SeededRng::new(seed, 0).shuffle(&mut rows);
        let shuffled: Vec<f64> = rows.concat();
        let (a, _) = inception_score(&p, 4, 1).unwrap();
        let (b, _) = inception_score(&shuffled, 4, 1).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn fid_symmetric_and_nonnegative(seed in 0u64..10_000, f in 1usize..6) {
        let mut rng = SeededRng::new(seed, 1);
        let pts_a: Vec<f64> = (0..(f + 4) * f).map(|_| rng.normal()).collect();
        let pts_b: Vec<f64> = (0..(f + 4) * f).map(|_| 2.0 * rng.normal() + 0.5).collect();
        let (a, b) = (fit_stats(&pts_a, f).unwrap(), fit_stats(&pts_b, f).unwrap());
        let (ab, ba) = (fid(&a, &b).unwrap(), fid(&b, &a).unwrap());
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(fid(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn pareto_frontier_is_exact(pts in prop::collection::vec((0i32..6, 0i32..6), 1..25), dx: bool, dy: bool) {
        let pts: Vec<(f64, f64)> = pts.into_iter().map(|(a, b)| (a as f64, b as f64)).collect();
        let dir = |b: bool| if b { Direction::Max } else { Direction::Min };
        let (dx, dy) = (dir(dx), dir(dy));
        let key = |d: Direction, v: f64| if d == Direction::Max { -v } else { v };
        let dominated = |q: (f64, f64), p: (f64, f64)| {
            let (q0, q1, p0, p1) = (key(dx, q.0), key(dy, q.1), key(dx, p.0), key(dy, p.1));
            q0 <= p0 && q1 <= p1 && (q0 < p0 || q1 < p1)
        };
        let front = pareto_frontier(&pts, (dx, dy)).unwrap();
        for (i, &p) in pts.iter().enumerate() {
            let beaten = pts.iter().any(|&q| dominated(q, p));
            prop_assert_eq!(front.contains(&i), !beaten);
            if beaten {
                prop_assert!(front.iter().any(|&j| dominated(pts[j], p)));
            }
        }
    }
}
