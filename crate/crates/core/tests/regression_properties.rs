use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use npt_frechet::bw_geometry::{
    bivariate_closed_form, bw_distance_sq, frechet_objective, project_correlation, CorrelationMatrix, GdConfig,
    SpdMatrix,
};
use npt_frechet::nonparanormal::{npt_distance, phi_inv, Nonparanormal};
use npt_frechet::quantile_space::{isotonic_project, w2_sq, QuantileFunction, QuantileGrid};
use npt_frechet::regression::{
    fit, mspe, DistributionalDataset, GaussianSummary, Method, NptFit, PredictorTable, TestPoint,
};

fn grid() -> QuantileGrid {
    QuantileGrid::new(40).unwrap()
}

fn corr(rho: f64) -> CorrelationMatrix {
    CorrelationMatrix::bivariate(rho).unwrap()
}

/// Responses whose marginals shift with `z` and whose latent is noisy.
fn noisy_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DistributionalDataset {
    let g = grid();
    let mut rows = Vec::with_capacity(n);
    let mut responses = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shift = z.iter().sum::<f64>() + rng.random_range(-0.3..0.3);
        let scale = 1.0 + 0.3 * rng.random_range(0.0..1.0);
        let q1 = QuantileFunction::from_fn(g, |u| shift + scale * phi_inv(u).unwrap()).unwrap();
        let q2 = QuantileFunction::from_fn(g, |u| (scale * u).powi(2) - z[0]).unwrap();
        let rho = (0.5 * z[0] + rng.random_range(-0.2..0.2)).clamp(-0.9, 0.9);
        responses.push(Nonparanormal::new(vec![q1, q2], corr(rho)).unwrap());
        rows.push(z);
    }
    DistributionalDataset::new(PredictorTable::new(rows, 0.0).unwrap(), responses).unwrap()
}

fn npt_fit(ds: &DistributionalDataset) -> NptFit {
    fit(ds, &GdConfig::default(), Method::Npt).unwrap()
}

#[test]
fn weights_are_affine_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, -1.0, 1.0, 0.3, 0.2, 0.0, 3.0]);
    let b = [1.0, -4.0, 0.5];
    let map = |z: &[f64]| -> Vec<f64> {
        (0..3).map(|i| (0..3).map(|j| a[(i, j)] * z[j]).sum::<f64>() + b[i]).collect()
    };
    let t1 = PredictorTable::new(rows.clone(), 0.0).unwrap();
    let t2 = PredictorTable::new(rows.iter().map(|r| map(r)).collect(), 0.0).unwrap();
    for _ in 0..20 {
        let z: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w1 = t1.weights_at(&z).unwrap();
        let w2 = t2.weights_at(&map(&z)).unwrap();
        for (x, y) in w1.iter().zip(&w2) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn identical_responses_are_reproduced_everywhere() {
    let g = grid();
    let law = Nonparanormal::new(
        vec![
            QuantileFunction::from_fn(g, |u| u.ln()).unwrap(),
            QuantileFunction::from_fn(g, |u| 3.0 * u).unwrap(),
        ],
        corr(-0.4),
    )
    .unwrap();
    let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![f64::from(i), f64::from(i * i % 7)]).collect();
    let ds = DistributionalDataset::new(PredictorTable::new(rows, 0.0).unwrap(), vec![law.clone(); 10]).unwrap();
    let f = npt_fit(&ds);
    for z in [[0.0, 0.0], [50.0, -3.0], [4.5, 2.0]] {
        let pred = f.predict(&z).unwrap();
        assert!(npt_distance(&pred.distribution, &law).unwrap() < 1e-10);
    }
}

#[test]
fn mean_prediction_is_projected_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ds = noisy_dataset(&mut rng, 25, 2);
    let f = npt_fit(&ds);
    let pred = f.predict(ds.predictors().mean()).unwrap();
    assert_eq!(&pred, f.mean_fit());
    let n = ds.n() as f64;
    for j in 0..2 {
        let avg: Vec<f64> = (0..grid().size())
            .map(|k| ds.responses().iter().map(|r| r.marginal(j).values()[k]).sum::<f64>() / n)
            .collect();
        let want = isotonic_project(&avg, None).unwrap();
        for (a, b) in pred.distribution.marginal(j).values().iter().zip(want.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn bivariate_mean_latent_matches_closed_form() {
    let g = grid();
    let q = QuantileFunction::from_fn(g, |u| u).unwrap();
    let responses = vec![
        Nonparanormal::new(vec![q.clone(), q.clone()], corr(0.0)).unwrap(),
        Nonparanormal::new(vec![q.clone(), q], corr(0.8)).unwrap(),
    ];
    let ds = DistributionalDataset::new(PredictorTable::new(vec![vec![-1.0], vec![1.0]], 0.0).unwrap(), responses)
        .unwrap();
    let rho = npt_fit(&ds).mean_fit().distribution.latent().get(0, 1);
    assert!((rho - 0.447213595499958).abs() < 1e-10);
}

/// Perturbing either fitted component never lowers its empirical objective.
#[test]
fn decoupled_fit_is_a_joint_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = noisy_dataset(&mut rng, 30, 2);
    let f = npt_fit(&ds);
    let z = [0.3, -0.2];
    let pred = f.predict(&z).unwrap();
    let n = ds.n() as f64;
    let w: Vec<f64> = ds.predictors().weights_at(&z).unwrap().iter().map(|s| s / n).collect();

    let latents: Vec<SpdMatrix> = ds.responses().iter().map(|r| r.latent().as_spd().clone()).collect();
    let base = frechet_objective(latents.iter(), &w, pred.distribution.latent().as_spd()).unwrap();
    for _ in 0..50 {
        let t = rng.random_range(-1.0..1.0) * 1e-3;
        let rho = (pred.distribution.latent().get(0, 1) + t).clamp(-0.999, 0.999);
        let moved = frechet_objective(latents.iter(), &w, corr(rho).as_spd()).unwrap();
        assert!(moved >= base - 1e-14, "{moved} < {base}");
    }

    for j in 0..2 {
        let objective = |q: &QuantileFunction| -> f64 {
            ds.responses()
                .iter()
                .zip(&w)
                .map(|(r, wi)| wi * w2_sq(r.marginal(j), q).unwrap())
                .sum()
        };
        let fitted = pred.distribution.marginal(j);
        let base = objective(fitted);
        for _ in 0..50 {
            let bumped: Vec<f64> =
                fitted.values().iter().map(|v| v + 1e-3 * rng.random_range(-1.0..1.0)).collect();
            let moved = objective(&isotonic_project(&bumped, None).unwrap());
            assert!(moved >= base - 1e-14, "{moved} < {base}");
        }
    }
}

#[test]
fn predictions_are_continuous() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ds = noisy_dataset(&mut rng, 30, 2);
    let f = npt_fit(&ds);
    let start = [-0.8, 0.5];
    let step: [f64; 2] = [0.01, -0.006];
    let norm = (step[0] * step[0] + step[1] * step[1]).sqrt();
    let mut prev = f.predict(&start).unwrap().distribution;
    let mut ratios = Vec::new();
    for k in 1..=100 {
        let z = [start[0] + step[0] * f64::from(k), start[1] + step[1] * f64::from(k)];
        let cur = f.predict(&z).unwrap().distribution;
        ratios.push(npt_distance(&prev, &cur).unwrap() / norm);
        prev = cur;
    }
    let typical = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let max = ratios.iter().copied().fold(0.0, f64::max);
    assert!(max <= 3.0 * typical + 1e-9, "jump {max} vs typical {typical}");
}

#[test]
fn r2_matches_direct_three_point_computation() {
    let g = QuantileGrid::new(4).unwrap();
    let laws = [(0.0, 1.0, 0.1), (1.0, 1.5, 0.5), (3.0, 0.8, -0.2)];
    let zs = [-1.0, 0.0, 2.0];
    let responses: Vec<Nonparanormal> = laws
        .iter()
        .map(|&(m, s, r)| {
            let q1 = QuantileFunction::from_fn(g, |u| m + s * (u - 0.5)).unwrap();
            let q2 = QuantileFunction::from_fn(g, |u| s * u * u).unwrap();
            Nonparanormal::new(vec![q1, q2], corr(r)).unwrap()
        })
        .collect();
    let ds = DistributionalDataset::new(
        PredictorTable::new(zs.iter().map(|&z| vec![z]).collect(), 0.0).unwrap(),
        responses.clone(),
    )
    .unwrap();
    let f = npt_fit(&ds);
    let r2 = f.r2_components().unwrap();

    // Weights s_n(Z_i, z) by hand: mean 1/3, variance 14/9.
    let zbar = 1.0 / 3.0;
    let var = zs.iter().map(|z| (z - zbar) * (z - zbar)).sum::<f64>() / 3.0;
    let weights = |z: f64| -> Vec<f64> { zs.iter().map(|zi| (1.0 + (zi - zbar) * (z - zbar) / var) / 3.0).collect() };
    let fitted_marginal = |j: usize, w: &[f64]| -> Vec<f64> {
        let avg: Vec<f64> = (0..4)
            .map(|k| responses.iter().zip(w).map(|(r, wi)| wi * r.marginal(j).values()[k]).sum())
            .collect();
        isotonic_project(&avg, None).unwrap().values().to_vec()
    };
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 4.0;
    let mut num = [0.0; 3];
    let mut den = [0.0; 3];
    let null_w = [1.0 / 3.0; 3];
    for (i, &z) in zs.iter().enumerate() {
        let w = weights(z);
        for j in 0..2 {
            let obs = responses[i].marginal(j).values();
            num[j] += sq(obs, &fitted_marginal(j, &w));
            den[j] += sq(obs, &fitted_marginal(j, &null_w));
        }
        let rhos: Vec<f64> = responses.iter().map(|r| r.latent().get(0, 1)).collect();
        let obs = responses[i].latent().as_spd();
        num[2] += bw_distance_sq(obs, corr(bivariate_closed_form(&rhos, &w).unwrap()).as_spd()).unwrap();
        den[2] += bw_distance_sq(obs, corr(bivariate_closed_form(&rhos, &null_w).unwrap()).as_spd()).unwrap();
    }
    for j in 0..2 {
        assert!((r2.marginal[j] - (1.0 - num[j] / den[j])).abs() < 1e-10);
    }
    assert!((r2.latent.unwrap() - (1.0 - num[2] / den[2])).abs() < 1e-9);
    let global = 1.0 - num.iter().sum::<f64>() / den.iter().sum::<f64>();
    assert!((r2.global - global).abs() < 1e-9);
    assert!(r2.components().iter().all(|&v| v <= 1.0));
}

#[test]
fn mspe_examples() {
    let g = grid();
    let q = QuantileFunction::from_fn(g, |u| u).unwrap();
    let law = Nonparanormal::new(vec![q.clone(), q.clone()], corr(0.8)).unwrap();
    let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![f64::from(i)]).collect();
    let ds = DistributionalDataset::new(PredictorTable::new(rows, 0.0).unwrap(), vec![law; 5]).unwrap();
    let test = vec![TestPoint {
        z: vec![2.5],
        marginals: vec![q.clone(), q],
        latent: corr(0.8),
    }];
    let (marg, c) = mspe(&npt_fit(&ds), &test).unwrap();
    assert!(marg < 1e-20 && c < 1e-20);
    let (marg, c) = mspe(&fit(&ds, &GdConfig::default(), Method::Marginal).unwrap(), &test).unwrap();
    assert!(marg < 1e-20);
    let expected = 4.0 - 2.0 * (1.8f64.sqrt() + 0.2f64.sqrt());
    assert!((c - expected).abs() < 1e-12);
    assert!((c - 0.42229).abs() < 1e-5);
}

#[test]
fn gaussian_baseline_recovers_constant_gaussian() {
    let g = grid();
    let mean = vec![1.0, -2.0];
    let cov = SpdMatrix::from_rows(&[vec![4.0, 1.2], vec![1.2, 1.0]]).unwrap();
    let latent = project_correlation(&cov, 0.0).unwrap();
    let sd = [2.0, 1.0];
    let law = Nonparanormal::new(
        (0..2)
            .map(|j| QuantileFunction::from_fn(g, |u| mean[j] + sd[j] * phi_inv(u).unwrap()).unwrap())
            .collect(),
        latent.clone(),
    )
    .unwrap();
    let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![f64::from(i) * 0.5]).collect();
    let summaries = vec![
        GaussianSummary {
            mean: mean.clone(),
            cov: cov.clone()
        };
        6
    ];
    let ds = DistributionalDataset::new(PredictorTable::new(rows, 0.0).unwrap(), vec![law.clone(); 6])
        .unwrap()
        .with_gaussian(summaries)
        .unwrap();
    let f = fit(&ds, &GdConfig::default(), Method::Gaussian).unwrap();
    for z in [0.0, 1.3, 7.0] {
        let pred = f.predict(&[z]).unwrap();
        assert!(npt_distance(&pred.distribution, &law).unwrap() < 1e-9);
    }
}

#[test]
fn gaussian_baseline_mean_is_average_at_center() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<npt_frechet::RawSample> = (0..8)
        .map(|_| {
            let rows: Vec<Vec<f64>> = (0..30)
                .map(|_| vec![rng.random_range(0.0..4.0), rng.random_range(-1.0..1.0)])
                .collect();
            npt_frechet::RawSample::from_rows(&rows).unwrap()
        })
        .collect();
    let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![f64::from(i)]).collect();
    let ds = DistributionalDataset::from_samples(PredictorTable::new(rows, 0.0).unwrap(), &samples, grid()).unwrap();
    let f = fit(&ds, &GdConfig::default(), Method::Gaussian).unwrap();
    let pred = f.mean_fit();
    // The median grid point pair straddles p = 0.5, where Φ⁻¹ is antisymmetric.
    let q = pred.distribution.marginal(0).values();
    let center = 0.5 * (q[19] + q[20]);
    let avg = samples.iter().map(|s| s.column_means()[0]).sum::<f64>() / 8.0;
    assert!((center - avg).abs() < 1e-12);
}

#[test]
fn permutation_pvalues_ignore_subject_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ds = noisy_dataset(&mut rng, 12, 1);
    let f = npt_fit(&ds);
    let perms: Vec<Vec<usize>> = (0..19)
        .map(|_| {
            let mut p: Vec<usize> = (0..12).collect();
            for i in (1..12).rev() {
                p.swap(i, rng.random_range(0..=i));
            }
            p
        })
        .collect();
    let base = f.permutation_test_with(&perms).unwrap();

    // Relabel subjects by a fixed permutation sigma and carry the same
    // predictor reassignments over to the new labels.
    let sigma: Vec<usize> = (0..12).map(|i| (i * 5) % 12).collect();
    let mut inv = vec![0; 12];
    for (new, &old) in sigma.iter().enumerate() {
        inv[old] = new;
    }
    let rows: Vec<Vec<f64>> = sigma.iter().map(|&o| ds.predictors().row(o).to_vec()).collect();
    let responses: Vec<Nonparanormal> = sigma.iter().map(|&o| ds.responses()[o].clone()).collect();
    let relabeled = DistributionalDataset::new(PredictorTable::new(rows, 0.0).unwrap(), responses).unwrap();
    let perms2: Vec<Vec<usize>> = perms
        .iter()
        .map(|p| sigma.iter().map(|&o| inv[p[o]]).collect())
        .collect();
    let other = npt_fit(&relabeled).permutation_test_with(&perms2).unwrap();
    let (a, b) = (base.inference.unwrap(), other.inference.unwrap());
    assert_eq!(a.raw_p, b.raw_p);
    assert_eq!(a.adjusted_p, b.adjusted_p);
}

#[test]
fn permutation_test_is_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ds = noisy_dataset(&mut rng, 15, 2);
    let f = npt_fit(&ds);
    let a = f.permutation_test(29, 99).unwrap();
    assert_eq!(a, f.permutation_test(29, 99).unwrap());
    let inf = a.inference.unwrap();
    assert_eq!(inf.replicates, 29);
    assert!(inf.raw_p.iter().zip(&inf.adjusted_p).all(|(r, a)| a >= r));
}

#[test]
fn extrapolated_point_mass_is_an_error() {
    let g = grid();
    let one = QuantileFunction::from_fn(g, |u| u).unwrap();
    let two = QuantileFunction::from_fn(g, |u| 2.0 * u).unwrap();
    let responses = vec![
        Nonparanormal::new(vec![one.clone(), one.clone()], corr(0.0)).unwrap(),
        Nonparanormal::new(vec![two, one], corr(0.0)).unwrap(),
    ];
    let ds = DistributionalDataset::new(PredictorTable::new(vec![vec![0.0], vec![1.0]], 0.0).unwrap(), responses)
        .unwrap();
    let f = npt_fit(&ds);
    // Weights (1 - z, z) give the first marginal slope 1 + z.
    assert!(f.predict(&[-0.5]).is_ok());
    assert!(matches!(
        f.predict(&[-2.0]),
        Err(npt_frechet::NptError::PointMassMarginal { component: 0, .. })
    ));
}
