use dualgp_core::{
    info_score, sample_candidates, select_exhaustive, select_max_variance, CandidateSet, DataSet,
    GpModel, KernelConfig, SamplingMode,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn k_ref(a: f64, x: &[f64], y: &[f64]) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum();
    a * (-d2 / 2.0).exp()
}

fn dense_det(a: f64, sigma: f64, pts: &[Vec<f64>]) -> f64 {
    let m = pts.len();
    DMatrix::from_fn(m, m, |i, j| {
        k_ref(a, &pts[i], &pts[j]) + if i == j { sigma + 1e-9 } else { 0.0 }
    })
    .determinant()
}

fn with(xs: &[Vec<f64>], extra: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut v = xs.to_vec();
    v.extend(extra.iter().map(|p| p.to_vec()));
    v
}

fn model(a: f64, sigma: f64, xs: &[Vec<f64>]) -> GpModel {
    let d = xs.first().map_or(1, |x| x.len());
    let data = DataSet::from_points(d, xs.to_vec(), vec![0.0; xs.len()]).unwrap();
    GpModel::new(data, KernelConfig::new(a, 1.0).unwrap(), sigma).unwrap()
}

fn far_apart(pts: &[Vec<f64>]) -> bool {
    for i in 0..pts.len() {
        for j in 0..i {
            let d2: f64 = pts[i]
                .iter()
                .zip(&pts[j])
                .map(|(p, q)| (p - q).powi(2))
                .sum();
            if d2.sqrt() < 0.05 {
                return false;
            }
        }
    }
    true
}

fn first_min(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    loop {
        let m = rng.random_range(0..=4);
        let n = rng.random_range(1..=6);
        let xs: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
        let th: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
        if far_apart(&with(
            &xs,
            &th.iter().map(|p| p.as_slice()).collect::<Vec<_>>(),
        )) {
            return (xs, th);
        }
    }
}

#[test]
fn symmetric_grid_argmin_matches_dense_oracle() {
    let gp = model(1.0, 0.1, &[]);
    let theta = CandidateSet::new(vec![vec![-1.0], vec![0.0], vec![1.0]]);
    let oracle: Vec<f64> = theta
        .points()
        .iter()
        .map(|xt| {
            theta
                .points()
                .iter()
                .map(|x| dense_det(1.0, 0.1, &[xt.clone(), x.clone()]).ln())
                .sum()
        })
        .collect();
    for (i, xt) in theta.points().iter().enumerate() {
        let s = info_score(&gp, &theta, xt).unwrap();
        assert!((s - oracle[i]).abs() < 1e-10);
    }
    let pick = select_exhaustive(&gp, &theta).unwrap();
    assert_eq!(pick.candidate_index, first_min(&oracle));
    assert_eq!(pick.candidate_index, 1);
}

#[test]
fn log_sum_argmin_equals_product_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let (xs, th) = random_instance(&mut rng);
        let gp = model(1.0, 0.1, &xs);
        let theta = CandidateSet::new(th.clone());
        let products: Vec<f64> = th
            .iter()
            .map(|xt| {
                th.iter()
                    .map(|x| dense_det(1.0, 0.1, &with(&xs, &[xt, x])))
                    .product()
            })
            .collect();
        let got = select_exhaustive(&gp, &theta).unwrap().candidate_index;
        let want = first_min(&products);
        let rel = (products[got] - products[want]).abs() / products[want].abs().max(1e-300);
        assert!(
            got == want || rel < 1e-9,
            "got {got}, want {want}: {products:?}"
        );
    }
}

#[test]
fn adding_the_selected_point_does_not_raise_aggregate_log_det() {
    // a + σ ≤ 1 keeps every conditional variance below one
    let (a, sigma) = (0.8, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let (xs, th) = random_instance(&mut rng);
        let gp = model(a, sigma, &xs);
        let theta = CandidateSet::new(th.clone());
        let pick = &th[select_exhaustive(&gp, &theta).unwrap().candidate_index];
        let agg = |train: &[Vec<f64>]| -> f64 {
            th.iter()
                .map(|x| dense_det(a, sigma, &with(train, &[x])).ln())
                .sum::<f64>()
        };
        let before = agg(&xs);
        let after = agg(&with(&xs, &[pick]));
        assert!(after <= before + 1e-9, "{before} -> {after}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn selections_are_permutation_covariant(seed in 0u64..10_000, shuffle in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (xs, th) = random_instance(&mut rng);
        let gp = model(1.0, 0.1, &xs);
        let mut perm: Vec<usize> = (0..th.len()).collect();
        let mut srng = ChaCha8Rng::seed_from_u64(shuffle);
        for i in (1..perm.len()).rev() {
            perm.swap(i, srng.random_range(0..=i));
        }
        let permuted = CandidateSet::new(perm.iter().map(|&i| th[i].clone()).collect());
        let theta = CandidateSet::new(th.clone());

        let scores: Vec<f64> = th.iter().map(|xt| info_score(&gp, &theta, xt).unwrap()).collect();
        let best = scores[select_exhaustive(&gp, &theta).unwrap().candidate_index];
        let p = select_exhaustive(&gp, &permuted).unwrap().candidate_index;
        prop_assert_eq!(scores[perm[p]], best);
        // lowest new index among the tied set
        for &i in perm.iter().take(p) {
            prop_assert!(scores[i] > best);
        }

        let vars: Vec<f64> = th.iter().map(|x| gp.posterior(x).unwrap().variance).collect();
        let top = vars[select_max_variance(&gp, &theta).unwrap()];
        let q = select_max_variance(&gp, &permuted).unwrap();
        prop_assert_eq!(vars[perm[q]], top);
        for &i in perm.iter().take(q) {
            prop_assert!(vars[i] < top);
        }
    }
}

#[test]
fn max_variance_agreement_diagnostic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 100;
    let mut agree = 0;
    for _ in 0..trials {
        let (xs, th) = random_instance(&mut rng);
        let gp = model(1.0, 0.1, &xs);
        let theta = CandidateSet::new(th);
        if select_exhaustive(&gp, &theta).unwrap().candidate_index
            == select_max_variance(&gp, &theta).unwrap()
        {
            agree += 1;
        }
    }
    println!("max-variance agrees with exhaustive choice on {agree}/{trials} instances");
}

#[test]
fn sampling_contracts() {
    let g = sample_candidates(&[(0.0, 1.0)], 3, SamplingMode::Grid, 0, &[]).unwrap();
    assert_eq!(g.points(), &[vec![0.0], vec![0.5], vec![1.0]]);

    let g2 = sample_candidates(&[(0.0, 1.0), (-1.0, 1.0)], 10, SamplingMode::Grid, 0, &[]).unwrap();
    assert_eq!(g2.len(), 9);

    let bounds = [(0.0, 1.0), (-2.0, 2.0)];
    let a = sample_candidates(&bounds, 50, SamplingMode::UniformRandom, 42, &[]).unwrap();
    let b = sample_candidates(&bounds, 50, SamplingMode::UniformRandom, 42, &[]).unwrap();
    assert_eq!(a.points(), b.points());
    assert!(a
        .points()
        .iter()
        .all(|p| (0.0..1.0).contains(&p[0]) && (-2.0..2.0).contains(&p[1])));

    let all = g.points().to_vec();
    let none = sample_candidates(&[(0.0, 1.0)], 3, SamplingMode::Grid, 0, &all).unwrap();
    assert!(none.is_empty());
    assert_eq!(none.dropped(), 3);
    assert!(select_exhaustive(&model(1.0, 0.1, &[]), &none).is_err());
}
