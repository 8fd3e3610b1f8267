//! Statistical checks of the samplers and plug-in estimators against exact
//! quantities. Seeds are fixed; tolerances are several standard errors wide.

use pairshap::asymptotics::{
    covariance_exact, kernel_matrices_exact, kernel_matrices_plugin, sigma_exact, sigma_plugin,
    CovarianceMethod,
};
use pairshap::exact::KernelWeights;
use pairshap::experiments::{estimate, run_method_comparison};
use pairshap::game::{GameEvaluator, Permutation};
use pairshap::kernel::{estimate_kernel, CoalitionSampler};
use pairshap::linalg::Matrix;
use pairshap::presets;
use pairshap::seed::{derive_seed, stream_rng};
use pairshap::shapley_subset;

fn reference_game() -> GameEvaluator {
    GameEvaluator::new(presets::exp_linear_reference()).unwrap()
}

fn relative_error(est: &Matrix, exact: &Matrix) -> f64 {
    est.sub(exact).frobenius_norm() / exact.frobenius_norm()
}

/// Pearson statistic of observed counts against expected probabilities.
fn chi_square(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

#[test]
fn kernel_coalitions_follow_the_kernel_distribution() {
    // q = 4: 14 nonempty proper coalitions, size masses (4, 3, 4)/11 spread
    // uniformly within each size.
    let q = 4;
    let sampler = CoalitionSampler::new(&KernelWeights::new(q).unwrap());
    let mut rng = stream_rng(1, 0);
    let mut counts = [0u64; 16];
    for _ in 0..1_000_000 {
        counts[sampler.sample(&mut rng).to_mask() as usize] += 1;
    }
    assert_eq!(counts[0] + counts[15], 0);
    let size_mass = [0.0, 4.0 / 11.0, 3.0 / 11.0, 4.0 / 11.0];
    let per_size = [1.0, 4.0, 6.0, 4.0];
    let masks: Vec<usize> = (1..15).collect();
    let probs: Vec<f64> = masks
        .iter()
        .map(|&m| {
            let s = (m as u32).count_ones() as usize;
            size_mass[s] / per_size[s]
        })
        .collect();
    let observed: Vec<u64> = masks.iter().map(|&m| counts[m]).collect();
    // df = 13, upper 0.1% point
    assert!(chi_square(&observed, &probs) < 34.53);
}

#[test]
fn permutations_are_uniform() {
    let q = 4;
    let mut rng = stream_rng(2, 0);
    let mut all = Vec::new();
    let mut p = Permutation::identity(q);
    loop {
        all.push(p.order().to_vec());
        if !p.next_lexicographic() {
            break;
        }
    }
    assert_eq!(all.len(), 24);
    let mut counts = vec![0u64; 24];
    for _ in 0..240_000 {
        let pi = Permutation::random(q, &mut rng);
        counts[all.iter().position(|o| o == pi.order()).unwrap()] += 1;
    }
    // df = 23, upper 0.1% point
    assert!(chi_square(&counts, &[1.0 / 24.0; 24]) < 49.73);
}

#[test]
fn estimators_are_consistent() {
    let g = reference_game();
    let phi = shapley_subset(&g).unwrap().phi;
    let n = 20_000;
    for method in CovarianceMethod::ALL {
        let var = covariance_exact(&g, method).unwrap().component_variances();
        let est = estimate(&g, method, n, derive_seed(4, &[method.index() as u64])).unwrap();
        for j in 0..4 {
            let tau = (var[j] / n as f64).sqrt();
            assert!(
                (est.phi[j] - phi[j]).abs() < 4.0 * tau,
                "{method} j={j}: {} vs {} (tau {tau})",
                est.phi[j],
                phi[j]
            );
        }
    }
}

#[test]
fn paired_kernel_stderr_covers_truth() {
    // Around 95% of 400 intervals φ̂ ± 1.96 τ should contain φ.
    let g = reference_game();
    let phi = shapley_subset(&g).unwrap().phi;
    let var = covariance_exact(&g, CovarianceMethod::KernelPaired)
        .unwrap()
        .component_variances();
    let n = 512;
    let mut hits = 0;
    let reps = 400;
    for r in 0..reps {
        let (est, _) = estimate_kernel(&g, n, true, derive_seed(5, &[r])).unwrap();
        for j in 0..4 {
            if (est.phi[j] - phi[j]).abs() <= 1.96 * (var[j] / n as f64).sqrt() {
                hits += 1;
            }
        }
    }
    let coverage = hits as f64 / (4 * reps) as f64;
    assert!((0.92..=0.98).contains(&coverage), "coverage {coverage}");
}

#[test]
fn plugin_sandwich_approaches_exact() {
    let g = reference_game();
    for paired in [false, true] {
        let exact = kernel_matrices_exact(&g, paired).unwrap();
        let (phi, batch) = estimate_kernel(&g, 200_000, paired, 6).unwrap();
        let plug = kernel_matrices_plugin(&batch, &phi).unwrap();
        let err = relative_error(&plug.t, &exact.t);
        assert!(err < 0.05, "paired={paired}: relative error {err}");
    }
}

#[test]
fn plugin_sigma_approaches_exact() {
    let g = reference_game();
    let exact = sigma_exact(&g).unwrap();
    let plug = sigma_plugin(&g, 100_000, 7).unwrap();
    let err = relative_error(&plug.matrix, &exact.matrix);
    assert!(err < 0.05, "relative error {err}");
    let ones = plug.matrix.matvec(&[1.0; 4]);
    assert!(ones.iter().all(|x| x.abs() < 1e-12));
}

#[test]
fn q8_replica_dimension_adjusted_comparison() {
    let spec = presets::exp_linear_normal(8, presets::EXP_LINEAR_SEED).unwrap();
    let cmp = run_method_comparison(&spec, None, 0).unwrap();
    assert_eq!(cmp.kernel.eigenvalues.len(), 7);
    assert_eq!(cmp.permutation.eigenvalues.len(), 8);
    for r in [&cmp.kernel, &cmp.permutation] {
        let scale = r.trace.abs();
        assert!(r.eigenvalues.iter().all(|&l| l > -1e-9 * scale));
    }
    assert!(
        cmp.top_adjusted_ratio() > 1.0,
        "ratio {}",
        cmp.top_adjusted_ratio()
    );
    let csv = cmp.to_csv();
    assert_eq!(csv.lines().count(), 1 + 7 + 8);
}

#[test]
fn separated_game_kernel_error_shrinks_but_permutation_is_exact() {
    let g = GameEvaluator::new(presets::five_player()).unwrap();
    let phi = shapley_subset(&g).unwrap().phi;
    let err = |n: usize| {
        let (est, _) = estimate_kernel(&g, n, true, 8).unwrap();
        (0..2)
            .map(|j| (est.phi[j] - phi[j]).abs())
            .fold(0.0, f64::max)
    };
    assert!(err(100) > 1e-6);
    assert!(err(100_000) < err(100));
    let pi = Permutation::random(5, &mut stream_rng(9, 0));
    let b = pairshap::permutation::paired_marginal_vector(&g, &pi).unwrap();
    assert!((b.b[0] - phi[0]).abs() < 1e-10 && (b.b[1] - phi[1]).abs() < 1e-10);
}
