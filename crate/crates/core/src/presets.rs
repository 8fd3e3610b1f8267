//! Reference games and seeded random game generators.
//!
//! Parameters that have to be random (normal coefficient vectors and
//! interaction matrices) are drawn from fixed seeds so every run sees the
//! same game.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::game::{Term, TermKind, ValueFunctionSpec};
use crate::seed::stream_rng;

/// Seed of the coefficient vector in [`exp_linear_normal`].
pub const EXP_LINEAR_SEED: u64 = 10;
/// Seed of the interaction matrices in [`three_block`].
pub const THREE_BLOCK_SEED: u64 = 3;
/// Seed of the interaction matrices in [`five_player`].
pub const FIVE_PLAYER_SEED: u64 = 5;

/// `ν(Z) = exp(Zᵀβ) - 1` with `β = (-0.5, 0.1, 0.8, -0.2)`.
pub fn exp_linear_reference() -> ValueFunctionSpec {
    let term =
        Term::exp_linear(vec![0, 1, 2, 3], vec![-0.5, 0.1, 0.8, -0.2], -1.0).expect("valid term");
    ValueFunctionSpec::new(4, vec![term]).expect("valid spec")
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize, scale: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            scale * z
        })
        .collect()
}

fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, m: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..m).map(|_| normal_vec(rng, m, scale)).collect()
}

/// `ν(Z) = exp(Zᵀβ)` with `β` i.i.d. standard normal.
pub fn exp_linear_normal(q: usize, seed: u64) -> Result<ValueFunctionSpec> {
    let mut rng = stream_rng(seed, 0);
    let beta = normal_vec(&mut rng, q, 1.0);
    ValueFunctionSpec::new(q, vec![Term::exp_linear((0..q).collect(), beta, 0.0)?])
}

/// `Σ_k exp(Z_kᵀ A_k Z_k)` over consecutive groups of the given sizes, with
/// standard normal `A_k`.
pub fn additive_exp_bilinear(sizes: &[usize], seed: u64) -> Result<ValueFunctionSpec> {
    let mut rng = stream_rng(seed, 0);
    let mut start = 0;
    let mut terms = Vec::with_capacity(sizes.len());
    for &m in sizes {
        let a = normal_matrix(&mut rng, m, 1.0);
        terms.push(Term::exp_bilinear((start..start + m).collect(), a, 0.0)?);
        start += m;
    }
    ValueFunctionSpec::new(start, terms)
}

/// Nine players in three additive groups of three, each `exp(Z_kᵀ A_k Z_k)`.
pub fn three_block() -> ValueFunctionSpec {
    additive_exp_bilinear(&[3, 3, 3], THREE_BLOCK_SEED).expect("valid spec")
}

/// `(Z₁,Z₂) A₁ (Z₁,Z₂)ᵀ + exp((Z₃,Z₄,Z₅) A₂ (Z₃,Z₄,Z₅)ᵀ)` with standard normal `A₁`, `A₂`.
pub fn five_player() -> ValueFunctionSpec {
    let mut rng = stream_rng(FIVE_PLAYER_SEED, 0);
    separated(&mut rng, 2, 3, 1.0).expect("valid spec")
}

/// Bilinear block on players `0..d` plus an exp-bilinear block on the next
/// `rest` players, coefficients normal with standard deviation `scale`.
pub fn separated<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    rest: usize,
    scale: f64,
) -> Result<ValueFunctionSpec> {
    let a1 = normal_matrix(rng, d, scale);
    let a2 = normal_matrix(rng, rest, scale);
    ValueFunctionSpec::new(
        d + rest,
        vec![
            Term::bilinear((0..d).collect(), a1, 0.0)?,
            Term::exp_bilinear((d..d + rest).collect(), a2, 0.0)?,
        ],
    )
}

/// `ZᵀAZ` on all `q` players.
pub fn random_bilinear<R: Rng + ?Sized>(rng: &mut R, q: usize) -> Result<ValueFunctionSpec> {
    let a = normal_matrix(rng, q, 1.0);
    ValueFunctionSpec::new(q, vec![Term::bilinear((0..q).collect(), a, 0.0)?])
}

/// A single exponential term on all players, so the game is not bilinear.
pub fn random_non_bilinear<R: Rng + ?Sized>(rng: &mut R, q: usize) -> Result<ValueFunctionSpec> {
    let term = if rng.random_bool(0.5) {
        Term::exp_linear((0..q).collect(), normal_vec(rng, q, 0.5), 0.0)?
    } else {
        Term::exp_bilinear((0..q).collect(), normal_matrix(rng, q, 0.5 / q as f64), 0.0)?
    };
    ValueFunctionSpec::new(q, vec![term])
}

/// One to three terms of random kinds on random player subsets.
pub fn random_mixed<R: Rng + ?Sized>(rng: &mut R, q: usize) -> Result<ValueFunctionSpec> {
    const KINDS: [TermKind; 4] = [
        TermKind::Linear,
        TermKind::Bilinear,
        TermKind::ExpLinear,
        TermKind::ExpBilinear,
    ];
    let count = rng.random_range(1..=3);
    let mut terms = Vec::with_capacity(count);
    for _ in 0..count {
        let mut indices: Vec<usize> = (0..q).filter(|_| rng.random_bool(0.6)).collect();
        if indices.is_empty() {
            indices.push(rng.random_range(0..q));
        }
        let m = indices.len();
        let offset = rng.random_range(-1.0..1.0);
        let term = match KINDS[rng.random_range(0..4)] {
            TermKind::Linear => Term::linear(indices, normal_vec(rng, m, 1.0), offset)?,
            TermKind::Bilinear => Term::bilinear(indices, normal_matrix(rng, m, 1.0), offset)?,
            TermKind::ExpLinear => Term::exp_linear(indices, normal_vec(rng, m, 0.5), offset)?,
            TermKind::ExpBilinear => {
                Term::exp_bilinear(indices, normal_matrix(rng, m, 0.5 / m as f64), offset)?
            }
        };
        terms.push(term);
    }
    ValueFunctionSpec::new(q, terms)
}
