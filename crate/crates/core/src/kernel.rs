//! Sampling and paired-sampling KernelSHAP.
//!
//! The efficiency constraint eliminates the last player: the regression is
//! on `x = Z̃ - Z_q 1̃ ∈ ℝ^{q-1}` with response `y = ν(Z) - Z_q ν(1)`, and
//! `φ_q = ν(1) - 1̃ᵀφ̃`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::Serialize;

use crate::error::{Result, ShapError};
use crate::exact::{complete_with_efficiency, KernelWeights, ShapleyMethod, ShapleyVector};
use crate::game::{Coalition, Game};
use crate::linalg::{rank, solve_spd, Matrix};
use crate::seed::stream_rng;

/// Full-batch redraws allowed before giving up on a rank-deficient design.
pub const MAX_REDRAWS: usize = 100;
/// Relative pivot tolerance used for design rank checks.
pub const RANK_TOL: f64 = 1e-10;

/// `Z̃ - Z_q 1̃`.
pub fn design_row(z: &Coalition) -> Vec<f64> {
    let q = z.q();
    let last = if z.contains(q - 1) { 1.0 } else { 0.0 };
    (0..q - 1)
        .map(|k| if z.contains(k) { 1.0 - last } else { -last })
        .collect()
}

/// Draws coalitions from the KernelSHAP distribution `p`: a size with
/// probability proportional to `1/(s(q-s))`, then a uniform subset of that size.
#[derive(Clone, Debug)]
pub struct CoalitionSampler {
    q: usize,
    sizes: WeightedIndex<f64>,
}

impl CoalitionSampler {
    pub fn new(weights: &KernelWeights) -> Self {
        let sizes = WeightedIndex::new(weights.size_masses().iter().copied())
            .expect("kernel weights have positive mass for q >= 2");
        CoalitionSampler {
            q: weights.q(),
            sizes,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Coalition {
        let s = self.sizes.sample(rng);
        let members = rand::seq::index::sample(rng, self.q, s);
        let mut z = Coalition::empty(self.q);
        for j in members.iter() {
            z.insert(j);
        }
        z
    }
}

pub fn sample_coalition<R: Rng + ?Sized>(weights: &KernelWeights, rng: &mut R) -> Coalition {
    CoalitionSampler::new(weights).sample(rng)
}

/// The draws behind one KernelSHAP estimate. Paired batches interleave each
/// draw's row with its complement's row (rows `2i`, `2i+1`).
#[derive(Clone, Debug)]
pub struct KernelSampleBatch {
    pub q: usize,
    pub draws: Vec<Coalition>,
    pub paired: bool,
    pub design: Matrix,
    pub response: Vec<f64>,
    pub seed: u64,
    /// Number of rank-deficient batches discarded before this one.
    pub retries: usize,
}

impl KernelSampleBatch {
    /// Number of draws (pairs when paired).
    pub fn n(&self) -> usize {
        self.draws.len()
    }

    /// Rows contributed by each sampling unit.
    pub fn rows_per_draw(&self) -> usize {
        if self.paired {
            2
        } else {
            1
        }
    }
}

/// `(𝔷ᵀ𝔷)⁻¹ 𝔷ᵀ Y` via the normal equations.
pub fn least_squares(design: &Matrix, response: &[f64]) -> Result<Vec<f64>> {
    let d = design.cols();
    let mut gram = Matrix::zeros(d, d);
    let mut rhs = vec![0.0; d];
    for (i, y) in response.iter().enumerate() {
        let x = design.row(i);
        gram.add_outer(x, 1.0);
        for (r, xk) in rhs.iter_mut().zip(x) {
            *r += y * xk;
        }
    }
    solve_spd(&gram, &rhs)
}

fn draws_rank(q: usize, draws: &[Coalition]) -> usize {
    let rows: Vec<f64> = draws.iter().flat_map(design_row).collect();
    let m = Matrix::from_row_major(draws.len(), q - 1, rows).expect("row lengths match");
    rank(&m, RANK_TOL)
}

fn build_rows<G: Game + ?Sized>(
    game: &G,
    draws: &[Coalition],
    paired: bool,
    grand: f64,
) -> Result<(Matrix, Vec<f64>)> {
    let q = game.players();
    let per = if paired { 2 } else { 1 };
    let mut data = Vec::with_capacity(draws.len() * per * (q - 1));
    let mut response = Vec::with_capacity(draws.len() * per);
    let mut push = |z: &Coalition| -> Result<()> {
        let last = if z.contains(q - 1) { grand } else { 0.0 };
        response.push(game.value(z)? - last);
        data.extend(design_row(z));
        Ok(())
    };
    for z in draws {
        push(z)?;
        if paired {
            push(&z.complement())?;
        }
    }
    let design = Matrix::from_row_major(response.len(), q - 1, data)?;
    Ok((design, response))
}

/// Sampling KernelSHAP (`paired = false`) or paired-sampling KernelSHAP.
///
/// `n` counts draws; a paired batch therefore has `2n` rows. A batch whose
/// design has rank below `q - 1` is discarded and redrawn from the next
/// stream of `seed`, up to [`MAX_REDRAWS`] times. The game is only evaluated
/// for the accepted batch: `n + 1` calls unpaired, `2n + 1` paired.
pub fn estimate_kernel<G: Game + ?Sized>(
    game: &G,
    n: usize,
    paired: bool,
    seed: u64,
) -> Result<(ShapleyVector, KernelSampleBatch)> {
    if n == 0 {
        return Err(ShapError::Domain("sample size n must be at least 1".into()));
    }
    let q = game.players();
    let sampler = CoalitionSampler::new(&KernelWeights::new(q)?);
    let mut last_rank = 0;
    for attempt in 0..MAX_REDRAWS {
        let mut rng = stream_rng(seed, attempt as u64);
        let draws: Vec<Coalition> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
        last_rank = draws_rank(q, &draws);
        if last_rank < q - 1 {
            continue;
        }
        let grand = game.value(&Coalition::full(q))?;
        let (design, response) = build_rows(game, &draws, paired, grand)?;
        let tilde = least_squares(&design, &response)?;
        let method = if paired {
            ShapleyMethod::KernelPairedSampling
        } else {
            ShapleyMethod::KernelSampling
        };
        let estimate = ShapleyVector {
            phi: complete_with_efficiency(tilde, grand),
            method,
        };
        let batch = KernelSampleBatch {
            q,
            draws,
            paired,
            design,
            response,
            seed,
            retries: attempt,
        };
        return Ok((estimate, batch));
    }
    Err(ShapError::RankDeficient {
        rank: last_rank,
        required: q - 1,
        attempts: MAX_REDRAWS,
    })
}

/// Paired KernelSHAP solve on an explicit basis of `q - 1` coalitions and
/// their complements. Exact for bilinear games.
pub fn solve_bilinear_basis<G: Game + ?Sized>(
    game: &G,
    basis: &[Coalition],
) -> Result<ShapleyVector> {
    let q = game.players();
    if basis.len() != q - 1 {
        return Err(ShapError::Dimension(format!(
            "basis needs {} coalitions, got {}",
            q - 1,
            basis.len()
        )));
    }
    if let Some(z) = basis.iter().find(|z| z.q() != q) {
        return Err(ShapError::Dimension(format!(
            "basis coalition has {} players, game has {q}",
            z.q()
        )));
    }
    let r = draws_rank(q, basis);
    if r < q - 1 {
        return Err(ShapError::RankDeficient {
            rank: r,
            required: q - 1,
            attempts: 1,
        });
    }
    let grand = game.value(&Coalition::full(q))?;
    let (design, response) = build_rows(game, basis, true, grand)?;
    let tilde = least_squares(&design, &response)?;
    Ok(ShapleyVector {
        phi: complete_with_efficiency(tilde, grand),
        method: ShapleyMethod::BilinearBasis,
    })
}

/// `q - 1` uniformly random nonempty proper coalitions whose design has full rank.
pub fn random_basis<R: Rng + ?Sized>(q: usize, rng: &mut R) -> Result<Vec<Coalition>> {
    let mut last_rank = 0;
    for _ in 0..MAX_REDRAWS {
        let basis: Vec<Coalition> = (0..q - 1)
            .map(|_| loop {
                let bits: Vec<bool> = (0..q).map(|_| rng.random()).collect();
                let z = Coalition::from_bits(bits).expect("q >= 2");
                if !z.is_empty() && !z.is_full() {
                    break z;
                }
            })
            .collect();
        last_rank = draws_rank(q, &basis);
        if last_rank == q - 1 {
            return Ok(basis);
        }
    }
    Err(ShapError::RankDeficient {
        rank: last_rank,
        required: q - 1,
        attempts: MAX_REDRAWS,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BilinearityVerdict {
    pub verdict: &'static str,
    pub consistent: bool,
    pub max_discrepancy: f64,
    pub trials: usize,
    pub tol: f64,
}

/// Solves on `trials` random independent bases; the game is consistent with a
/// bilinear form iff all solutions agree within `tol` (max-norm).
pub fn bilinearity_test<G: Game + ?Sized>(
    game: &G,
    trials: usize,
    tol: f64,
    seed: u64,
) -> Result<BilinearityVerdict> {
    if trials < 2 {
        return Err(ShapError::Domain(format!(
            "need at least 2 trials, got {trials}"
        )));
    }
    let q = game.players();
    let mut solutions = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = stream_rng(seed, t as u64);
        let basis = random_basis(q, &mut rng)?;
        solutions.push(solve_bilinear_basis(game, &basis)?);
    }
    let mut worst: f64 = 0.0;
    for a in 0..trials {
        for b in a + 1..trials {
            worst = worst.max(solutions[a].max_abs_diff(&solutions[b]));
        }
    }
    let consistent = worst <= tol;
    Ok(BilinearityVerdict {
        verdict: if consistent {
            "bilinear-consistent"
        } else {
            "not-bilinear"
        },
        consistent,
        max_discrepancy: worst,
        trials,
        tol,
    })
}
