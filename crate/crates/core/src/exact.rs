//! Exact Shapley values by full enumeration.
//!
//! The game is tabulated once over all `2^q` coalitions; the subset formula,
//! the permutation average and the constrained weighted least squares
//! solution are then computed from the same table.

use serde::Serialize;

use crate::error::{Result, ShapError};
use crate::game::{Coalition, Game, Permutation};
use crate::linalg::{solve_spd, Matrix};

/// Largest game tabulated for the subset formula and exact kernel solution.
pub const MAX_SUBSET_PLAYERS: usize = 25;
/// Largest game for which all `q!` permutations are walked.
pub const MAX_PERMUTATION_PLAYERS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapleyMethod {
    Subset,
    Permutation,
    Kernel,
    KernelSampling,
    KernelPairedSampling,
    PermutationSampling,
    PermutationPairedSampling,
    BilinearBasis,
}

impl ShapleyMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapleyMethod::Subset => "subset",
            ShapleyMethod::Permutation => "permutation",
            ShapleyMethod::Kernel => "kernel",
            ShapleyMethod::KernelSampling => "kernel-sampling",
            ShapleyMethod::KernelPairedSampling => "kernel-paired-sampling",
            ShapleyMethod::PermutationSampling => "permutation-sampling",
            ShapleyMethod::PermutationPairedSampling => "permutation-paired-sampling",
            ShapleyMethod::BilinearBasis => "bilinear-basis",
        }
    }
}

/// Attribution for players `1..=q`; the non-distributed payoff is always 0.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShapleyVector {
    pub phi: Vec<f64>,
    pub method: ShapleyMethod,
}

impl ShapleyVector {
    pub fn q(&self) -> usize {
        self.phi.len()
    }

    pub fn total(&self) -> f64 {
        self.phi.iter().sum()
    }

    /// `max_j |φ_j - ψ_j|`.
    pub fn max_abs_diff(&self, other: &ShapleyVector) -> f64 {
        max_abs_diff(&self.phi, &other.phi)
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// `C(n, k)` in floating point via the multiplicative recurrence.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// KernelSHAP sampling weights, normalized to a probability distribution
/// over the nonempty proper coalitions.
#[derive(Clone, Debug)]
pub struct KernelWeights {
    q: usize,
    /// Probability of drawing a coalition of size `s`; zero for `s = 0, q`.
    size_mass: Vec<f64>,
    normalizer: f64,
}

impl KernelWeights {
    pub fn new(q: usize) -> Result<Self> {
        if q < 2 {
            return Err(ShapError::Domain(format!(
                "kernel weights need q >= 2, got {q}"
            )));
        }
        let unnormalized: Vec<f64> = (0..=q)
            .map(|s| {
                if s == 0 || s == q {
                    0.0
                } else {
                    (q - 1) as f64 / (s * (q - s)) as f64
                }
            })
            .collect();
        let normalizer: f64 = unnormalized.iter().sum();
        let size_mass = unnormalized.iter().map(|w| w / normalizer).collect();
        Ok(KernelWeights {
            q,
            size_mass,
            normalizer,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// `Σ_{∅≠C⊊Q} (q-1) / (C(q,|C|) |C| (q-|C|))`.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Probability that a draw has size `s`.
    pub fn size_probability(&self, s: usize) -> f64 {
        self.size_mass.get(s).copied().unwrap_or(0.0)
    }

    /// Sizes `0..=q` with their probabilities.
    pub fn size_masses(&self) -> &[f64] {
        &self.size_mass
    }

    /// `p(C)` for a coalition of size `s`.
    pub fn coalition_probability(&self, s: usize) -> f64 {
        self.size_probability(s) / binomial(self.q, s)
    }
}

pub fn kernel_weights(q: usize) -> Result<KernelWeights> {
    KernelWeights::new(q)
}

/// `Z̃ - Z_q 1̃` for a coalition given by bit mask.
pub(crate) fn design_row_mask(q: usize, mask: u64, out: &mut [f64]) {
    let last = (mask >> (q - 1) & 1) as f64;
    for (k, x) in out.iter_mut().enumerate() {
        *x = (mask >> k & 1) as f64 - last;
    }
}

/// Normalized values of every coalition, indexed by bit mask.
#[derive(Clone, Debug)]
pub struct ValueTable {
    q: usize,
    values: Vec<f64>,
}

impl ValueTable {
    /// Evaluates the game exactly once on each of the `2^q` coalitions.
    pub fn build<G: Game + ?Sized>(game: &G) -> Result<Self> {
        let q = game.players();
        if q > MAX_SUBSET_PLAYERS {
            return Err(ShapError::SizeGuard {
                method: "exact enumeration",
                cap: MAX_SUBSET_PLAYERS,
                q,
            });
        }
        let values = (0..1u64 << q)
            .map(|m| {
                if m == 0 {
                    Ok(0.0)
                } else {
                    game.value(&Coalition::from_mask(q, m))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ValueTable { q, values })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, mask: u64) -> f64 {
        self.values[mask as usize]
    }

    pub fn grand_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `φ_j = (1/q) Σ_{C ⊆ Q∖{j}} C(q-1,|C|)^{-1} (ν(C∪{j}) - ν(C))`.
    pub fn shapley_subset(&self) -> ShapleyVector {
        let q = self.q;
        let weight: Vec<f64> = (0..q)
            .map(|s| 1.0 / (q as f64 * binomial(q - 1, s)))
            .collect();
        let mut phi = vec![0.0; q];
        for mask in 0..1u64 << q {
            let w = weight
                .get(mask.count_ones() as usize)
                .copied()
                .unwrap_or(0.0);
            let v = self.value(mask);
            for (j, p) in phi.iter_mut().enumerate() {
                if mask >> j & 1 == 0 {
                    *p += w * (self.value(mask | 1 << j) - v);
                }
            }
        }
        ShapleyVector {
            phi,
            method: ShapleyMethod::Subset,
        }
    }

    /// Average marginal contribution over all `q!` orderings.
    pub fn shapley_all_permutations(&self) -> Result<ShapleyVector> {
        let q = self.q;
        if q > MAX_PERMUTATION_PLAYERS {
            return Err(ShapError::SizeGuard {
                method: "all-permutations enumeration",
                cap: MAX_PERMUTATION_PLAYERS,
                q,
            });
        }
        let mut sums = vec![0.0; q];
        let mut count = 0u64;
        let mut pi = Permutation::identity(q);
        loop {
            let mut mask = 0u64;
            let mut prev = 0.0;
            for &j in pi.order() {
                mask |= 1 << j;
                let v = self.value(mask);
                sums[j] += v - prev;
                prev = v;
            }
            count += 1;
            if !pi.next_lexicographic() {
                break;
            }
        }
        Ok(ShapleyVector {
            phi: sums.into_iter().map(|s| s / count as f64).collect(),
            method: ShapleyMethod::Permutation,
        })
    }

    /// Population moments of the KernelSHAP regression under `p`:
    /// `J = E[x xᵀ]` and `E[y x]`, with `x = Z̃ - Z_q 1̃`, `y = ν(Z) - Z_q ν(1)`.
    pub(crate) fn kernel_moments(&self) -> Result<(Matrix, Vec<f64>)> {
        let q = self.q;
        let weights = KernelWeights::new(q)?;
        let p_by_size: Vec<f64> = (0..=q).map(|s| weights.coalition_probability(s)).collect();
        let full = self.grand_value();
        let mut j = Matrix::zeros(q - 1, q - 1);
        let mut rhs = vec![0.0; q - 1];
        let mut x = vec![0.0; q - 1];
        for mask in 1..(1u64 << q) - 1 {
            let p = p_by_size[mask.count_ones() as usize];
            design_row_mask(q, mask, &mut x);
            let y = self.value(mask) - (mask >> (q - 1) & 1) as f64 * full;
            j.add_outer(&x, p);
            for (r, xk) in rhs.iter_mut().zip(&x) {
                *r += p * y * xk;
            }
        }
        Ok((j, rhs))
    }

    /// Exact constrained weighted least squares solution.
    pub fn shapley_kernel(&self) -> Result<ShapleyVector> {
        let (j, rhs) = self.kernel_moments()?;
        let tilde = solve_spd(&j, &rhs)?;
        Ok(ShapleyVector {
            phi: complete_with_efficiency(tilde, self.grand_value()),
            method: ShapleyMethod::Kernel,
        })
    }
}

/// Appends `φ_q = ν(1) - 1̃ᵀφ̃`.
pub(crate) fn complete_with_efficiency(mut tilde: Vec<f64>, grand: f64) -> Vec<f64> {
    let last = grand - tilde.iter().sum::<f64>();
    tilde.push(last);
    tilde
}

pub fn shapley_subset<G: Game + ?Sized>(game: &G) -> Result<ShapleyVector> {
    Ok(ValueTable::build(game)?.shapley_subset())
}

pub fn shapley_all_permutations<G: Game + ?Sized>(game: &G) -> Result<ShapleyVector> {
    let q = game.players();
    if q > MAX_PERMUTATION_PLAYERS {
        return Err(ShapError::SizeGuard {
            method: "all-permutations enumeration",
            cap: MAX_PERMUTATION_PLAYERS,
            q,
        });
    }
    ValueTable::build(game)?.shapley_all_permutations()
}

pub fn shapley_kernel_exact<G: Game + ?Sized>(game: &G) -> Result<ShapleyVector> {
    ValueTable::build(game)?.shapley_kernel()
}
