//! Coalitions, permutations and declarative value functions.
//!
//! Players are 0-based inside the crate. Every external surface (JSON
//! configs, CLI output, `Display` impls) uses 1-based player numbers.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapError};

/// Smallest number of players a game may have.
pub const MIN_PLAYERS: usize = 2;

/// A subset of the grand coalition stored as an explicit indicator vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Coalition {
    bits: Vec<bool>,
}

impl Coalition {
    pub fn empty(q: usize) -> Self {
        Coalition {
            bits: vec![false; q],
        }
    }

    pub fn full(q: usize) -> Self {
        Coalition {
            bits: vec![true; q],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.len() < MIN_PLAYERS {
            return Err(ShapError::Domain(format!(
                "coalition needs at least {MIN_PLAYERS} players, got {}",
                bits.len()
            )));
        }
        Ok(Coalition { bits })
    }

    /// Coalition holding the given 0-based players.
    pub fn from_members(q: usize, members: &[usize]) -> Self {
        let mut c = Coalition::empty(q);
        for &j in members {
            c.bits[j] = true;
        }
        c
    }

    /// Bit `j` of `mask` is player `j`. Only meaningful for `q <= 63`.
    pub fn from_mask(q: usize, mask: u64) -> Self {
        debug_assert!(q <= 63);
        Coalition {
            bits: (0..q).map(|j| mask >> j & 1 == 1).collect(),
        }
    }

    pub fn to_mask(&self) -> u64 {
        assert!(self.q() <= 63, "integer masks hold at most 63 players");
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .fold(0u64, |m, (j, _)| m | 1 << j)
    }

    pub fn q(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn contains(&self, j: usize) -> bool {
        self.bits[j]
    }

    pub fn insert(&mut self, j: usize) {
        self.bits[j] = true;
    }

    pub fn remove(&mut self, j: usize) {
        self.bits[j] = false;
    }

    pub fn size(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    /// `1 - Z` componentwise.
    pub fn complement(&self) -> Coalition {
        Coalition {
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    pub fn union(&self, other: &Coalition) -> Coalition {
        assert_eq!(self.q(), other.q());
        Coalition {
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a || b)
                .collect(),
        }
    }

    /// 0-based members in increasing order.
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| b.then_some(j))
    }

    /// The coalition as a 0/1 vector.
    pub fn indicator(&self) -> Vec<f64> {
        self.bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, j) in self.members().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", j + 1)?;
        }
        write!(f, "}}")
    }
}

/// An ordering of the players together with its inverse position map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
    position: Vec<usize>,
}

impl Permutation {
    /// Builds a permutation from a 0-based ordering, rejecting non-bijections.
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let q = order.len();
        let mut position = vec![usize::MAX; q];
        for (pos, &j) in order.iter().enumerate() {
            if j >= q || position[j] != usize::MAX {
                return Err(ShapError::Domain(format!(
                    "{order:?} is not a permutation of 0..{q}"
                )));
            }
            position[j] = pos;
        }
        Ok(Permutation { order, position })
    }

    /// Builds a permutation from 1-based player numbers.
    pub fn from_one_based(order: &[usize]) -> Result<Self> {
        if order.contains(&0) {
            return Err(ShapError::Domain("player numbers start at 1".into()));
        }
        Permutation::new(order.iter().map(|j| j - 1).collect())
    }

    pub fn identity(q: usize) -> Self {
        Permutation {
            order: (0..q).collect(),
            position: (0..q).collect(),
        }
    }

    /// Uniformly random permutation via Fisher-Yates.
    pub fn random<R: Rng + ?Sized>(q: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..q).collect();
        order.shuffle(rng);
        Permutation::from_order_unchecked(order)
    }

    fn from_order_unchecked(order: Vec<usize>) -> Self {
        let mut position = vec![0; order.len()];
        for (pos, &j) in order.iter().enumerate() {
            position[j] = pos;
        }
        Permutation { order, position }
    }

    pub fn q(&self) -> usize {
        self.order.len()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Position of player `j` in the ordering (0-based).
    pub fn position(&self, j: usize) -> usize {
        self.position[j]
    }

    /// `(π_q, ..., π_1)`.
    pub fn reverse(&self) -> Permutation {
        let mut order = self.order.clone();
        order.reverse();
        Permutation::from_order_unchecked(order)
    }

    /// Players preceding `j` in the ordering.
    pub fn prefix_coalition(&self, j: usize) -> Coalition {
        Coalition::from_members(self.q(), &self.order[..self.position[j]])
    }

    /// Advances to the next permutation in lexicographic order. Returns
    /// `false` (leaving `self` unchanged) on the last one.
    pub fn next_lexicographic(&mut self) -> bool {
        let o = &mut self.order;
        let n = o.len();
        if n < 2 {
            return false;
        }
        let mut i = n - 1;
        while i > 0 && o[i - 1] >= o[i] {
            i -= 1;
        }
        if i == 0 {
            return false;
        }
        let mut k = n - 1;
        while o[k] <= o[i - 1] {
            k -= 1;
        }
        o.swap(i - 1, k);
        o[i..].reverse();
        for (pos, &j) in self.order.iter().enumerate() {
            self.position[j] = pos;
        }
        true
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, j) in self.order.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", j + 1)?;
        }
        write!(f, ")")
    }
}

/// A cooperative game on `q` players, normalized so the empty coalition is worth 0.
pub trait Game: Sync {
    fn players(&self) -> usize;

    /// Normalized value `ν(Z) - ν_raw(∅)`.
    fn value(&self, z: &Coalition) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Linear,
    Bilinear,
    ExpLinear,
    ExpBilinear,
}

impl TermKind {
    fn is_bilinear(self) -> bool {
        matches!(self, TermKind::Bilinear | TermKind::ExpBilinear)
    }

    fn is_exponential(self) -> bool {
        matches!(self, TermKind::ExpLinear | TermKind::ExpBilinear)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum TermParams {
    Beta(Vec<f64>),
    /// Square matrix, row-major, side `indices.len()`.
    Matrix(Vec<f64>),
}

/// One additive piece of a value function, reading only `indices`.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    kind: TermKind,
    indices: Vec<usize>,
    params: TermParams,
    offset: f64,
}

impl Term {
    /// `β^T z_sub + offset`, indices 0-based.
    pub fn linear(indices: Vec<usize>, beta: Vec<f64>, offset: f64) -> Result<Self> {
        Term::with_beta(TermKind::Linear, indices, beta, offset)
    }

    /// `exp(β^T z_sub) + offset`.
    pub fn exp_linear(indices: Vec<usize>, beta: Vec<f64>, offset: f64) -> Result<Self> {
        Term::with_beta(TermKind::ExpLinear, indices, beta, offset)
    }

    /// `z_sub^T A z_sub + offset`; `a` is given by rows.
    pub fn bilinear(indices: Vec<usize>, a: Vec<Vec<f64>>, offset: f64) -> Result<Self> {
        Term::with_matrix(TermKind::Bilinear, indices, a, offset)
    }

    /// `exp(z_sub^T A z_sub) + offset`.
    pub fn exp_bilinear(indices: Vec<usize>, a: Vec<Vec<f64>>, offset: f64) -> Result<Self> {
        Term::with_matrix(TermKind::ExpBilinear, indices, a, offset)
    }

    fn with_beta(kind: TermKind, indices: Vec<usize>, beta: Vec<f64>, offset: f64) -> Result<Self> {
        check_indices(&indices)?;
        if beta.len() != indices.len() {
            return Err(ShapError::Dimension(format!(
                "beta has {} entries for {} indices",
                beta.len(),
                indices.len()
            )));
        }
        check_finite(beta.iter().chain([&offset]))?;
        Ok(Term {
            kind,
            indices,
            params: TermParams::Beta(beta),
            offset,
        })
    }

    fn with_matrix(
        kind: TermKind,
        indices: Vec<usize>,
        a: Vec<Vec<f64>>,
        offset: f64,
    ) -> Result<Self> {
        check_indices(&indices)?;
        let m = indices.len();
        if a.len() != m || a.iter().any(|row| row.len() != m) {
            return Err(ShapError::Dimension(format!(
                "A must be {m}x{m} for {m} indices"
            )));
        }
        let flat: Vec<f64> = a.into_iter().flatten().collect();
        check_finite(flat.iter().chain([&offset]))?;
        Ok(Term {
            kind,
            indices,
            params: TermParams::Matrix(flat),
            offset,
        })
    }

    pub fn kind(&self) -> TermKind {
        self.kind
    }

    /// 0-based players read by the term.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    fn raw(&self, z: &Coalition) -> f64 {
        let inner = match &self.params {
            TermParams::Beta(beta) => self
                .indices
                .iter()
                .zip(beta)
                .filter(|(&j, _)| z.contains(j))
                .map(|(_, b)| b)
                .sum::<f64>(),
            TermParams::Matrix(a) => {
                let m = self.indices.len();
                let active: Vec<usize> = (0..m).filter(|&k| z.contains(self.indices[k])).collect();
                let mut s = 0.0;
                for &r in &active {
                    for &c in &active {
                        s += a[r * m + c];
                    }
                }
                s
            }
        };
        if self.kind.is_exponential() {
            inner.exp() + self.offset
        } else {
            inner + self.offset
        }
    }

    /// Shapley contribution of a linear or bilinear term, by player (0-based, length `q`).
    fn quadratic_shapley(&self, q: usize) -> Option<Vec<f64>> {
        let mut phi = vec![0.0; q];
        match (&self.params, self.kind) {
            (TermParams::Beta(beta), TermKind::Linear) => {
                for (&j, b) in self.indices.iter().zip(beta) {
                    phi[j] += b;
                }
            }
            (TermParams::Matrix(a), TermKind::Bilinear) => {
                let m = self.indices.len();
                for r in 0..m {
                    let s: f64 = (0..m).map(|c| a[r * m + c] + a[c * m + r]).sum();
                    phi[self.indices[r]] += 0.5 * s;
                }
            }
            _ => return None,
        }
        Some(phi)
    }
}

fn check_indices(indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(ShapError::Dimension(
            "a term must read at least one player".into(),
        ));
    }
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(ShapError::Dimension(format!(
            "duplicate indices in term {:?}",
            indices.iter().map(|j| j + 1).collect::<Vec<_>>()
        )));
    }
    Ok(())
}

fn check_finite<'a>(mut values: impl Iterator<Item = &'a f64>) -> Result<()> {
    if values.any(|v| !v.is_finite()) {
        return Err(ShapError::Schema(
            "parameters must be finite numbers".into(),
        ));
    }
    Ok(())
}

/// Declarative value function: a sum of terms over player subsets.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunctionSpec {
    q: usize,
    terms: Vec<Term>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    q: i64,
    terms: Vec<RawTerm>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    kind: TermKind,
    indices: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<Vec<f64>>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    offset: f64,
}

impl ValueFunctionSpec {
    pub fn new(q: usize, terms: Vec<Term>) -> Result<Self> {
        if q < MIN_PLAYERS {
            return Err(ShapError::Domain(format!(
                "a game needs at least {MIN_PLAYERS} players, got q = {q}"
            )));
        }
        for t in &terms {
            if let Some(&j) = t.indices.iter().find(|&&j| j >= q) {
                return Err(ShapError::Dimension(format!(
                    "term index {} outside 1..={q}",
                    j + 1
                )));
            }
        }
        Ok(ValueFunctionSpec { q, terms })
    }

    /// Parses the JSON value-function document.
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ShapError::Schema(e.to_string()))?;
        ValueFunctionSpec::from_json_value(value)
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let raw: RawSpec =
            serde_json::from_value(value).map_err(|e| ShapError::Schema(e.to_string()))?;
        if raw.q < MIN_PLAYERS as i64 {
            return Err(ShapError::Domain(format!(
                "a game needs at least {MIN_PLAYERS} players, got q = {}",
                raw.q
            )));
        }
        let q = raw.q as usize;
        let mut terms = Vec::with_capacity(raw.terms.len());
        for (k, t) in raw.terms.into_iter().enumerate() {
            let mut indices = Vec::with_capacity(t.indices.len());
            for &j in &t.indices {
                if j < 1 || j as usize > q {
                    return Err(ShapError::Dimension(format!(
                        "term {}: index {j} outside 1..={q}",
                        k + 1
                    )));
                }
                indices.push(j as usize - 1);
            }
            let term = match (t.kind.is_bilinear(), t.beta, t.a) {
                (false, Some(beta), None) => Term::with_beta(t.kind, indices, beta, t.offset),
                (true, None, Some(a)) => Term::with_matrix(t.kind, indices, a, t.offset),
                (false, _, _) => Err(ShapError::Schema(format!(
                    "term {}: {:?} terms take \"beta\" and no \"A\"",
                    k + 1,
                    t.kind
                ))),
                (true, _, _) => Err(ShapError::Schema(format!(
                    "term {}: {:?} terms take \"A\" and no \"beta\"",
                    k + 1,
                    t.kind
                ))),
            }?;
            terms.push(term);
        }
        ValueFunctionSpec::new(q, terms)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let m = t.indices.len();
                let (beta, a) = match &t.params {
                    TermParams::Beta(b) => (Some(b.clone()), None),
                    TermParams::Matrix(a) => {
                        (None, Some(a.chunks(m).map(|r| r.to_vec()).collect()))
                    }
                };
                RawTerm {
                    kind: t.kind,
                    indices: t.indices.iter().map(|&j| j as i64 + 1).collect(),
                    beta,
                    a,
                    offset: t.offset,
                }
            })
            .collect();
        serde_json::to_value(RawSpec {
            q: self.q as i64,
            terms,
        })
        .expect("spec serializes")
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Un-normalized value.
    pub fn raw_value(&self, z: &Coalition) -> f64 {
        self.terms.iter().map(|t| t.raw(z)).sum()
    }

    /// Closed-form Shapley values when every term is linear or bilinear:
    /// `β_j` for linear terms and `½ Σ_k (a_jk + a_kj)` for bilinear ones.
    pub fn quadratic_shapley(&self) -> Option<Vec<f64>> {
        let mut phi = vec![0.0; self.q];
        for t in &self.terms {
            for (p, c) in phi.iter_mut().zip(t.quadratic_shapley(self.q)?) {
                *p += c;
            }
        }
        Some(phi)
    }
}

/// Evaluates a [`ValueFunctionSpec`] with the empty-coalition value subtracted,
/// counting every call.
#[derive(Debug)]
pub struct GameEvaluator {
    spec: ValueFunctionSpec,
    empty_raw: f64,
    evals: AtomicU64,
}

impl GameEvaluator {
    pub fn new(spec: ValueFunctionSpec) -> Result<Self> {
        let empty = Coalition::empty(spec.q());
        let empty_raw = spec.raw_value(&empty);
        if !empty_raw.is_finite() {
            return Err(ShapError::NonFinite {
                value: empty_raw,
                coalition: empty.to_string(),
            });
        }
        Ok(GameEvaluator {
            spec,
            empty_raw,
            evals: AtomicU64::new(0),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        GameEvaluator::new(ValueFunctionSpec::parse(text)?)
    }

    pub fn spec(&self) -> &ValueFunctionSpec {
        &self.spec
    }

    pub fn evaluate(&self, z: &Coalition) -> Result<f64> {
        if z.q() != self.spec.q() {
            return Err(ShapError::Dimension(format!(
                "coalition has {} players, game has {}",
                z.q(),
                self.spec.q()
            )));
        }
        self.evals.fetch_add(1, Ordering::Relaxed);
        let v = self.spec.raw_value(z) - self.empty_raw;
        if !v.is_finite() {
            return Err(ShapError::NonFinite {
                value: v,
                coalition: z.to_string(),
            });
        }
        Ok(v)
    }

    /// Number of `evaluate` calls so far.
    pub fn evaluation_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset_count(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }
}

impl Game for GameEvaluator {
    fn players(&self) -> usize {
        self.spec.q()
    }

    fn value(&self, z: &Coalition) -> Result<f64> {
        self.evaluate(z)
    }
}

/// A game given by its full table of coalition values (indexed by bit mask).
#[derive(Clone, Debug)]
pub struct TableGame {
    q: usize,
    values: Vec<f64>,
}

impl TableGame {
    /// Largest `q` accepted for a tabulated game.
    pub const MAX_PLAYERS: usize = 25;

    /// `values[mask]` is the raw value of the coalition with bit mask `mask`.
    pub fn from_values(q: usize, mut values: Vec<f64>) -> Result<Self> {
        if q < MIN_PLAYERS {
            return Err(ShapError::Domain(format!("q = {q} < {MIN_PLAYERS}")));
        }
        if q > Self::MAX_PLAYERS {
            return Err(ShapError::SizeGuard {
                method: "table game",
                cap: Self::MAX_PLAYERS,
                q,
            });
        }
        if values.len() != 1 << q {
            return Err(ShapError::Dimension(format!(
                "expected {} values for q = {q}, got {}",
                1u64 << q,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ShapError::Domain("table values must be finite".into()));
        }
        let base = values[0];
        for v in &mut values {
            *v -= base;
        }
        Ok(TableGame { q, values })
    }

    pub fn from_fn(q: usize, f: impl Fn(&Coalition) -> f64) -> Result<Self> {
        if q > Self::MAX_PLAYERS {
            return Err(ShapError::SizeGuard {
                method: "table game",
                cap: Self::MAX_PLAYERS,
                q,
            });
        }
        let values = (0..1u64 << q)
            .map(|m| f(&Coalition::from_mask(q, m)))
            .collect();
        TableGame::from_values(q, values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Game for TableGame {
    fn players(&self) -> usize {
        self.q
    }

    fn value(&self, z: &Coalition) -> Result<f64> {
        if z.q() != self.q {
            return Err(ShapError::Dimension(format!(
                "coalition has {} players, game has {}",
                z.q(),
                self.q
            )));
        }
        Ok(self.values[z.to_mask() as usize])
    }
}
