//! Sampling and paired-sampling PermutationSHAP, single-permutation exact
//! paths and additive recovery by group sums.

use std::fmt;

use serde::Serialize;

use crate::error::{Result, ShapError};
use crate::exact::{ShapleyMethod, ShapleyVector};
use crate::game::{Coalition, Game, GameEvaluator, Permutation, TermKind};
use crate::seed::stream_rng;

/// Marginal contributions `b_j = ν(C_{π,j} ∪ {j}) - ν(C_{π,j})` along one ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalVector {
    pub b: Vec<f64>,
}

impl MarginalVector {
    pub fn total(&self) -> f64 {
        self.b.iter().sum()
    }
}

/// Walks the prefix chain of `pi`. `ν(∅) = 0` is not re-evaluated, so this
/// costs `q` calls, the last of which is `ν(1)`.
pub fn marginal_vector<G: Game + ?Sized>(game: &G, pi: &Permutation) -> Result<MarginalVector> {
    let q = game.players();
    if pi.q() != q {
        return Err(ShapError::Dimension(format!(
            "permutation has {} players, game has {q}",
            pi.q()
        )));
    }
    let mut b = vec![0.0; q];
    let mut z = Coalition::empty(q);
    let mut prev = 0.0;
    for &j in pi.order() {
        z.insert(j);
        let v = game.value(&z)?;
        b[j] = v - prev;
        prev = v;
    }
    Ok(MarginalVector { b })
}

/// `½(B_π + B_{ρ(π)})`.
pub fn paired_marginal_vector<G: Game + ?Sized>(
    game: &G,
    pi: &Permutation,
) -> Result<MarginalVector> {
    let fwd = marginal_vector(game, pi)?;
    let rev = marginal_vector(game, &pi.reverse())?;
    let b = fwd
        .b
        .iter()
        .zip(&rev.b)
        .map(|(x, y)| 0.5 * (x + y))
        .collect();
    Ok(MarginalVector { b })
}

/// One sampling unit per permutation: `B_π`, or `½(B_π + B_{ρ(π)})` when
/// paired. Permutations come from stream 0 of `seed`.
pub fn sample_marginals<G: Game + ?Sized>(
    game: &G,
    n: usize,
    paired: bool,
    seed: u64,
) -> Result<Vec<MarginalVector>> {
    if n == 0 {
        return Err(ShapError::Domain("sample size n must be at least 1".into()));
    }
    let q = game.players();
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|_| {
            let pi = Permutation::random(q, &mut rng);
            if paired {
                paired_marginal_vector(game, &pi)
            } else {
                marginal_vector(game, &pi)
            }
        })
        .collect()
}

/// Mean of the sampled units. A paired estimate with `n` pairs costs `2nq`
/// evaluations.
pub fn estimate_permutation<G: Game + ?Sized>(
    game: &G,
    n: usize,
    paired: bool,
    seed: u64,
) -> Result<ShapleyVector> {
    let units = sample_marginals(game, n, paired, seed)?;
    Ok(ShapleyVector {
        phi: mean_of(&units, game.players()),
        method: if paired {
            ShapleyMethod::PermutationPairedSampling
        } else {
            ShapleyMethod::PermutationSampling
        },
    })
}

pub(crate) fn mean_of(units: &[MarginalVector], q: usize) -> Vec<f64> {
    let mut phi = vec![0.0; q];
    for u in units {
        for (p, b) in phi.iter_mut().zip(&u.b) {
            *p += b;
        }
    }
    let n = units.len() as f64;
    phi.iter_mut().for_each(|p| *p /= n);
    phi
}

/// Disjoint groups covering all players (0-based internally).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    q: usize,
    groups: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(q: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut owner = vec![usize::MAX; q];
        for (g, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(ShapError::Partition(format!("group {} is empty", g + 1)));
            }
            for &j in group {
                if j >= q {
                    return Err(ShapError::Partition(format!(
                        "player {} is outside 1..={q}",
                        j + 1
                    )));
                }
                if owner[j] != usize::MAX {
                    return Err(ShapError::Partition(format!(
                        "player {} appears in more than one group",
                        j + 1
                    )));
                }
                owner[j] = g;
            }
        }
        if let Some(j) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(ShapError::Partition(format!(
                "player {} is in no group",
                j + 1
            )));
        }
        Ok(Partition { q, groups })
    }

    pub fn from_one_based(q: usize, groups: &[Vec<usize>]) -> Result<Self> {
        if groups.iter().flatten().any(|&j| j == 0) {
            return Err(ShapError::Partition("player numbers start at 1".into()));
        }
        Partition::new(
            q,
            groups
                .iter()
                .map(|g| g.iter().map(|j| j - 1).collect())
                .collect(),
        )
    }

    /// Groups sorted internally and ordered by smallest member, so equal
    /// partitions compare equal regardless of how they were listed.
    pub fn canonical(mut self) -> Self {
        for g in &mut self.groups {
            g.sort_unstable();
        }
        self.groups.sort();
        self
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn to_one_based(&self) -> Vec<Vec<usize>> {
        self.groups
            .iter()
            .map(|g| g.iter().map(|j| j + 1).collect())
            .collect()
    }

    /// Groups given by the connected components of the term index sets.
    pub fn from_terms(evaluator: &GameEvaluator) -> Self {
        let q = evaluator.spec().q();
        let mut uf = UnionFind::new(q);
        for t in evaluator.spec().terms() {
            for w in t.indices().windows(2) {
                uf.union(w[0], w[1]);
            }
        }
        uf.into_partition()
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .to_one_based()
            .iter()
            .map(|g| {
                let s: Vec<String> = g.iter().map(usize::to_string).collect();
                format!("{{{}}}", s.join(","))
            })
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}

impl Serialize for Partition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_one_based().serialize(s)
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }

    pub(crate) fn into_partition(mut self) -> Partition {
        let n = self.parent.len();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut slot = vec![usize::MAX; n];
        for j in 0..n {
            let r = self.find(j);
            if slot[r] == usize::MAX {
                slot[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[r]].push(j);
        }
        Partition::new(n, groups).expect("components partition the players")
    }
}

/// `Σ_{j ∈ A_k} φ_j` for each group.
pub fn group_sums(phi: &ShapleyVector, partition: &Partition) -> Result<Vec<f64>> {
    if phi.q() != partition.q() {
        return Err(ShapError::Dimension(format!(
            "Shapley vector has {} players, partition has {}",
            phi.q(),
            partition.q()
        )));
    }
    Ok(partition
        .groups()
        .iter()
        .map(|g| g.iter().map(|&j| phi.phi[j]).sum())
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct SeparatedCheck {
    pub d: usize,
    /// Paired single-permutation estimates for players `1..=d`.
    pub estimates: Vec<f64>,
    /// `½ Σ_{k≤d} (a_jk + a_kj)` (plus `β_j` for linear terms) for `j ≤ d`.
    pub expected: Vec<f64>,
    pub max_abs_diff: f64,
}

/// Estimates players `1..=d` from the single pair `(π, ρ(π))` on a game
/// whose terms touching `{1..d}` are linear or bilinear and read only those
/// players.
pub fn separated_exact_check(
    evaluator: &GameEvaluator,
    d: usize,
    pi: &Permutation,
) -> Result<SeparatedCheck> {
    let spec = evaluator.spec();
    let q = spec.q();
    if d == 0 || d > q {
        return Err(ShapError::Domain(format!(
            "block size d = {d} outside 1..={q}"
        )));
    }
    let mut expected = vec![0.0; d];
    for (t, term) in spec.terms().iter().enumerate() {
        let inside = term.indices().iter().filter(|&&j| j < d).count();
        if inside == 0 {
            continue;
        }
        if inside < term.indices().len() {
            return Err(ShapError::Spec(format!(
                "term {} reads players on both sides of the split at d = {d}",
                t + 1
            )));
        }
        if !matches!(term.kind(), TermKind::Linear | TermKind::Bilinear) {
            return Err(ShapError::Spec(format!(
                "term {} on the first block is {:?}, expected linear or bilinear",
                t + 1,
                term.kind()
            )));
        }
        let single = crate::game::ValueFunctionSpec::new(q, vec![term.clone()])?;
        let contrib = single.quadratic_shapley().expect("linear or bilinear term");
        for (e, c) in expected.iter_mut().zip(contrib) {
            *e += c;
        }
    }
    let paired = paired_marginal_vector(evaluator, pi)?;
    let estimates = paired.b[..d].to_vec();
    let max_abs_diff = crate::exact::max_abs_diff(&estimates, &expected);
    Ok(SeparatedCheck {
        d,
        estimates,
        expected,
        max_abs_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{max_abs_diff, shapley_subset};
    use crate::game::TableGame;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference_game() -> GameEvaluator {
        GameEvaluator::from_json(
            r#"{"q":4,"terms":[{"kind":"exp_linear","indices":[1,2,3,4],
                "beta":[-0.5,0.1,0.8,-0.2],"offset":-1}]}"#,
        )
        .unwrap()
    }

    fn five_player() -> GameEvaluator {
        GameEvaluator::from_json(
            r#"{"q":5,"terms":[
                {"kind":"bilinear","indices":[1,2],"A":[[0.4,-1.3],[0.2,-0.6]]},
                {"kind":"exp_bilinear","indices":[3,4,5],
                 "A":[[0.3,-0.2,0.5],[0.1,0.4,-0.7],[0.6,0.2,-0.1]]}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn identity_on_linear_game() {
        let beta = [0.5, -1.5, 2.0];
        let g = TableGame::from_fn(3, |z| z.members().map(|j| beta[j]).sum()).unwrap();
        let b = marginal_vector(&g, &Permutation::identity(3)).unwrap();
        assert!(max_abs_diff(&b.b, &beta) < 1e-15);
    }

    #[test]
    fn hand_chain_q3() {
        // ν({1}) = 1, ν({1,2}) = 3, ν(1) = 7, other values arbitrary
        let mut values = vec![0.0, 1.0, 5.0, 3.0, -2.0, 4.0, 0.5, 7.0];
        values[0] = 0.0;
        let g = TableGame::from_values(3, values).unwrap();
        let b = marginal_vector(&g, &Permutation::identity(3)).unwrap();
        assert_eq!(b.b, vec![1.0, 2.0, 7.0 - 3.0]);
    }

    #[test]
    fn telescoping_total() {
        let g = reference_game();
        let full = g.evaluate(&Coalition::full(4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let b = marginal_vector(&g, &Permutation::random(4, &mut rng)).unwrap();
            assert!((b.total() - full).abs() < 1e-10);
        }
    }

    #[test]
    fn evaluation_budget() {
        let g = reference_game();
        estimate_permutation(&g, 25, true, 3).unwrap();
        assert_eq!(g.evaluation_count(), 2 * 25 * 4);
        g.reset_count();
        estimate_permutation(&g, 25, false, 3).unwrap();
        assert_eq!(g.evaluation_count(), 25 * 4);
    }

    #[test]
    fn constant_game_gives_zero() {
        let g = TableGame::from_fn(5, |_| 2.0).unwrap();
        for paired in [false, true] {
            assert_eq!(
                estimate_permutation(&g, 7, paired, 9).unwrap().phi,
                vec![0.0; 5]
            );
        }
    }

    #[test]
    fn bilinear_single_pair_is_exact() {
        let g = GameEvaluator::from_json(
            r#"{"q":4,"terms":[{"kind":"bilinear","indices":[1,2,3,4],
                "A":[[0.5,1.0,-2.0,0.0],[0.3,-1.0,0.0,0.7],[1.1,0.0,2.0,-0.4],[0.0,0.9,0.2,0.1]]}]}"#,
        )
        .unwrap();
        let exact = g.spec().quadratic_shapley().unwrap();
        for seed in 0..10 {
            let phi = estimate_permutation(&g, 1, true, seed).unwrap();
            assert!(max_abs_diff(&phi.phi, &exact) < 1e-12);
        }
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::new(3, vec![vec![0, 1], vec![2]]).is_ok());
        let overlap = Partition::new(3, vec![vec![0, 1], vec![1, 2]]).unwrap_err();
        assert_eq!(overlap.name(), "PartitionError");
        assert!(Partition::new(3, vec![vec![0, 1]]).is_err());
        assert!(Partition::new(3, vec![vec![0, 1, 2], vec![]]).is_err());
        assert!(Partition::from_one_based(3, &[vec![0, 1], vec![2, 3]]).is_err());
        let p = Partition::from_one_based(4, &[vec![4, 2], vec![1, 3]])
            .unwrap()
            .canonical();
        assert_eq!(p.to_one_based(), vec![vec![1, 3], vec![2, 4]]);
        assert_eq!(p.to_string(), "{1,3} {2,4}");
    }

    #[test]
    fn trivial_partition_total() {
        let g = reference_game();
        let phi = estimate_permutation(&g, 3, false, 1).unwrap();
        let sums = group_sums(&phi, &Partition::new(4, vec![vec![0, 1, 2, 3]]).unwrap()).unwrap();
        assert!((sums[0] - (0.2f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn partition_from_terms() {
        let p = Partition::from_terms(&five_player());
        assert_eq!(p.to_one_based(), vec![vec![1, 2], vec![3, 4, 5]]);
    }

    #[test]
    fn separated_five_player() {
        let g = five_player();
        let exact = shapley_subset(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let pi = Permutation::random(5, &mut rng);
            let check = separated_exact_check(&g, 2, &pi).unwrap();
            assert!(check.max_abs_diff < 1e-12);
            assert!(max_abs_diff(&check.estimates, &exact.phi[..2]) < 1e-10);
        }
    }

    #[test]
    fn separated_rejects_bad_split() {
        let g = five_player();
        let pi = Permutation::identity(5);
        assert_eq!(
            separated_exact_check(&g, 1, &pi).unwrap_err().name(),
            "SpecError"
        );
        assert_eq!(
            separated_exact_check(&g, 5, &pi).unwrap_err().name(),
            "SpecError"
        );
        assert!(separated_exact_check(&g, 0, &pi).is_err());
    }
}
