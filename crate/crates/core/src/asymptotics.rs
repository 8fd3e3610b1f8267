//! Asymptotic covariance matrices of the sampling estimators, computed
//! exactly by enumeration or as plug-in estimates from a sample.
//!
//! Kernel estimators: `T = J⁻¹ I J⁻¹` (unpaired) and `T₂ = J₂⁻¹ I₂ J₂⁻¹`
//! (paired), both `(q-1)×(q-1)` in the reduced coordinates `φ̃`.
//! Permutation estimators: `Σ = Var(½(B_π + B_{ρ(π)}))` (paired) and
//! `Var(B_π)` (unpaired), both `q×q`.

use std::fmt;
use std::str::FromStr;

use serde_json::{json, Value};

use crate::error::{Result, ShapError};
use crate::exact::{
    design_row_mask, KernelWeights, ShapleyVector, ValueTable, MAX_PERMUTATION_PLAYERS,
};
use crate::game::{Game, Permutation};
use crate::kernel::{estimate_kernel, KernelSampleBatch};
use crate::linalg::{eig_sym, sandwich, solve_spd, Matrix};
use crate::permutation::{sample_marginals, MarginalVector, Partition, UnionFind};

/// Largest game for exact kernel covariance enumeration.
pub const MAX_KERNEL_COVARIANCE_PLAYERS: usize = 20;
/// Eigenvalues with `|λ| ≤ POSITIVE_EIG_TOL · trace` are treated as zero.
pub const POSITIVE_EIG_TOL: f64 = 1e-12;
/// A meat matrix below this (relative to `(1 + max|ν|)²`) is numerically zero.
pub const DEGENERATE_TOL: f64 = 1e-20;
/// Tolerance for the `J₂ = 2J` identity.
pub const J2_IDENTITY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CovarianceMethod {
    Kernel,
    KernelPaired,
    Permutation,
    PermutationPaired,
}

impl CovarianceMethod {
    pub const ALL: [CovarianceMethod; 4] = [
        CovarianceMethod::Kernel,
        CovarianceMethod::KernelPaired,
        CovarianceMethod::Permutation,
        CovarianceMethod::PermutationPaired,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceMethod::Kernel => "kernel",
            CovarianceMethod::KernelPaired => "kernel-paired",
            CovarianceMethod::Permutation => "permutation",
            CovarianceMethod::PermutationPaired => "permutation-paired",
        }
    }

    pub fn index(self) -> usize {
        CovarianceMethod::ALL
            .iter()
            .position(|&m| m == self)
            .unwrap()
    }

    pub fn is_paired(self) -> bool {
        matches!(
            self,
            CovarianceMethod::KernelPaired | CovarianceMethod::PermutationPaired
        )
    }

    pub fn is_kernel(self) -> bool {
        matches!(
            self,
            CovarianceMethod::Kernel | CovarianceMethod::KernelPaired
        )
    }

    pub fn from_parts(kernel: bool, paired: bool) -> Self {
        match (kernel, paired) {
            (true, false) => CovarianceMethod::Kernel,
            (true, true) => CovarianceMethod::KernelPaired,
            (false, false) => CovarianceMethod::Permutation,
            (false, true) => CovarianceMethod::PermutationPaired,
        }
    }

    /// Value-function calls per sampling unit, used as the dimension adjustment.
    pub fn evals_per_sample(self, q: usize) -> usize {
        match self {
            CovarianceMethod::Kernel => 1,
            CovarianceMethod::KernelPaired => 2,
            CovarianceMethod::Permutation => q,
            CovarianceMethod::PermutationPaired => 2 * q,
        }
    }
}

impl fmt::Display for CovarianceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CovarianceMethod {
    type Err = ShapError;

    fn from_str(s: &str) -> Result<Self> {
        CovarianceMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ShapError::Schema(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Exact,
    Plugin { n: usize, seed: u64 },
}

impl Provenance {
    fn to_json(self) -> Value {
        match self {
            Provenance::Exact => json!("exact-enumeration"),
            Provenance::Plugin { n, seed } => json!({"kind": "plug-in", "n": n, "seed": seed}),
        }
    }
}

/// A covariance matrix with its spectrum.
#[derive(Clone, Debug)]
pub struct CovarianceReport {
    pub method: CovarianceMethod,
    pub provenance: Provenance,
    pub q: usize,
    pub matrix: Matrix,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub trace: f64,
    pub notes: Vec<String>,
}

impl CovarianceReport {
    pub fn new(
        method: CovarianceMethod,
        provenance: Provenance,
        q: usize,
        matrix: Matrix,
        notes: Vec<String>,
    ) -> Result<Self> {
        let side = if method.is_kernel() { q - 1 } else { q };
        if matrix.rows() != side || matrix.cols() != side {
            return Err(ShapError::Dimension(format!(
                "{method} covariance for q = {q} must be {side}x{side}"
            )));
        }
        let eigenvalues = eig_sym(&matrix)?.values;
        let trace = matrix.trace();
        Ok(CovarianceReport {
            method,
            provenance,
            q,
            matrix,
            eigenvalues,
            trace,
            notes,
        })
    }

    /// Eigenvalues with `|λ| > POSITIVE_EIG_TOL · trace`.
    pub fn positive_eigenvalues(&self) -> Vec<f64> {
        let cut = POSITIVE_EIG_TOL * self.trace.abs();
        self.eigenvalues
            .iter()
            .copied()
            .filter(|l| l.abs() > cut)
            .collect()
    }

    /// Eigenvalues scaled by the value-function calls per sampling unit.
    pub fn dimension_adjusted_eigs(&self) -> Vec<f64> {
        let f = self.method.evals_per_sample(self.q) as f64;
        self.eigenvalues.iter().map(|l| l * f).collect()
    }

    /// Asymptotic variance of each `φ̂_j` (times `n`). For the kernel
    /// estimators the last component is `1̃ᵀ T 1̃` since `φ̂_q = ν(1) - 1̃ᵀφ̂̃`.
    pub fn component_variances(&self) -> Vec<f64> {
        let mut v = self.matrix.diagonal();
        if self.method.is_kernel() {
            let ones = vec![1.0; self.q - 1];
            v.push(self.matrix.quadratic_form(&ones));
        }
        v
    }

    pub fn to_json(&self, adjusted: bool) -> Value {
        let mut out = json!({
            "method": self.method.as_str(),
            "provenance": self.provenance.to_json(),
            "q": self.q,
            "matrix": self.matrix.to_rows(),
            "eigenvalues": self.eigenvalues,
            "trace": self.trace,
        });
        if adjusted {
            out["adjusted_eigenvalues"] = json!(self.dimension_adjusted_eigs());
            out["adjustment_factor"] = json!(self.method.evals_per_sample(self.q));
        }
        if !self.notes.is_empty() {
            out["notes"] = json!(self.notes);
        }
        out
    }
}

/// Bread, meat and sandwich of one kernel estimator.
#[derive(Clone, Debug)]
pub struct KernelMatrices {
    pub paired: bool,
    /// `I` or `I₂`.
    pub i: Matrix,
    /// `J` or `J₂`.
    pub j: Matrix,
    /// `T` or `T₂`.
    pub t: Matrix,
    /// Reduced coordinates the residuals were formed with.
    pub phi_tilde: Vec<f64>,
    /// `I` is numerically zero, so the estimator is exact for this game.
    pub degenerate: bool,
}

impl KernelMatrices {
    fn method(&self) -> CovarianceMethod {
        CovarianceMethod::from_parts(true, self.paired)
    }

    fn note(&self) -> Vec<String> {
        if !self.degenerate {
            return Vec::new();
        }
        let name = if self.paired {
            "BilinearDegenerate"
        } else {
            "LinearDegenerate"
        };
        vec![name.to_string()]
    }
}

fn is_negligible(m: &Matrix, value_scale: f64) -> bool {
    m.max_abs() <= DEGENERATE_TOL * (1.0 + value_scale).powi(2)
}

fn value_scale(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Exact `(I, J, T)` or `(I₂, J₂, T₂)` by enumeration under `p`.
pub fn kernel_matrices_exact<G: Game + ?Sized>(game: &G, paired: bool) -> Result<KernelMatrices> {
    let q = game.players();
    if q > MAX_KERNEL_COVARIANCE_PLAYERS {
        return Err(ShapError::SizeGuard {
            method: "exact kernel covariance",
            cap: MAX_KERNEL_COVARIANCE_PLAYERS,
            q,
        });
    }
    let table = ValueTable::build(game)?;
    kernel_matrices_from_table(&table, paired)
}

pub fn kernel_matrices_from_table(table: &ValueTable, paired: bool) -> Result<KernelMatrices> {
    let q = table.q();
    let (j, rhs) = table.kernel_moments()?;
    let phi_tilde = solve_spd(&j, &rhs)?;
    let weights = KernelWeights::new(q)?;
    let full = table.grand_value();
    let all = (1u64 << q) - 1;
    let d = q - 1;
    let mut meat = Matrix::zeros(d, d);
    let mut j2 = Matrix::zeros(d, d);
    let mut x = vec![0.0; d];
    let mut xc = vec![0.0; d];
    for mask in 1..all {
        let p = weights.coalition_probability(mask.count_ones() as usize);
        design_row_mask(q, mask, &mut x);
        let fit: f64 = x.iter().zip(&phi_tilde).map(|(a, b)| a * b).sum();
        let last = (mask >> (q - 1) & 1) as f64;
        if paired {
            let comp = all ^ mask;
            design_row_mask(q, comp, &mut xc);
            let rbar = 0.5 * (table.value(mask) + full - table.value(comp)) - last * full - fit;
            meat.add_outer(&x, 4.0 * p * rbar * rbar);
            j2.add_outer(&x, p);
            j2.add_outer(&xc, p);
        } else {
            let r = table.value(mask) - last * full - fit;
            meat.add_outer(&x, p * r * r);
        }
    }
    let bread = if paired {
        let gap = j2.sub(&j.scale(2.0)).max_abs();
        if gap > J2_IDENTITY_TOL * j2.max_abs() {
            return Err(ShapError::Spec(format!(
                "internal: J2 differs from 2J by {gap:e}"
            )));
        }
        j2
    } else {
        j
    };
    let t = sandwich(&bread, &meat)?;
    let degenerate = is_negligible(&meat, value_scale(table.values()));
    Ok(KernelMatrices {
        paired,
        i: meat,
        j: bread,
        t,
        phi_tilde,
        degenerate,
    })
}

/// Plug-in `(Î, Ĵ, T̂)` from the batch behind an estimate, with residuals
/// formed at that estimate. Each draw (pair when paired) is one unit.
pub fn kernel_matrices_plugin(
    batch: &KernelSampleBatch,
    phi: &ShapleyVector,
) -> Result<KernelMatrices> {
    let q = batch.q;
    if phi.q() != q {
        return Err(ShapError::Dimension(format!(
            "estimate has {} players, batch has {q}",
            phi.q()
        )));
    }
    let d = q - 1;
    let phi_tilde = phi.phi[..d].to_vec();
    let per = batch.rows_per_draw();
    let n = batch.n() as f64;
    let mut meat = Matrix::zeros(d, d);
    let mut bread = Matrix::zeros(d, d);
    let mut score = vec![0.0; d];
    for unit in 0..batch.n() {
        score.iter_mut().for_each(|s| *s = 0.0);
        for r in unit * per..(unit + 1) * per {
            let x = batch.design.row(r);
            let fit: f64 = x.iter().zip(&phi_tilde).map(|(a, b)| a * b).sum();
            let resid = batch.response[r] - fit;
            for (s, xk) in score.iter_mut().zip(x) {
                *s += xk * resid;
            }
            bread.add_outer(x, 1.0 / n);
        }
        meat.add_outer(&score, 1.0 / n);
    }
    let t = sandwich(&bread, &meat)?;
    let degenerate = is_negligible(&meat, value_scale(&batch.response));
    Ok(KernelMatrices {
        paired: batch.paired,
        i: meat,
        j: bread,
        t,
        phi_tilde,
        degenerate,
    })
}

fn sum_outer_centered(units: &[Vec<f64>], mean: &[f64]) -> Matrix {
    let q = mean.len();
    let mut m = Matrix::zeros(q, q);
    let mut c = vec![0.0; q];
    for u in units {
        for k in 0..q {
            c[k] = u[k] - mean[k];
        }
        m.add_outer(&c, 1.0);
    }
    m
}

fn sample_covariance(units: &[Vec<f64>]) -> Matrix {
    let q = units[0].len();
    let n = units.len() as f64;
    let mut mean = vec![0.0; q];
    for u in units {
        for (m, v) in mean.iter_mut().zip(u) {
            *m += v / n;
        }
    }
    sum_outer_centered(units, &mean)
        .scale(1.0 / (n - 1.0))
        .symmetrize()
}

/// Marginal vectors `B_π` (or `½(B_π + B_{ρ(π)})`) for every permutation, from the table.
fn all_permutation_units(table: &ValueTable, paired: bool) -> Vec<Vec<f64>> {
    let q = table.q();
    let chain = |order: &mut dyn Iterator<Item = usize>, b: &mut [f64], w: f64| {
        let mut mask = 0u64;
        let mut prev = 0.0;
        for j in order {
            mask |= 1 << j;
            let v = table.value(mask);
            b[j] += w * (v - prev);
            prev = v;
        }
    };
    let mut units = Vec::new();
    let mut pi = Permutation::identity(q);
    loop {
        let mut b = vec![0.0; q];
        if paired {
            chain(&mut pi.order().iter().copied(), &mut b, 0.5);
            chain(&mut pi.order().iter().rev().copied(), &mut b, 0.5);
        } else {
            chain(&mut pi.order().iter().copied(), &mut b, 1.0);
        }
        units.push(b);
        if !pi.next_lexicographic() {
            break;
        }
    }
    units
}

/// A degenerate covariance is rounding noise around zero; report it as exactly zero.
fn zero_if(m: Matrix, degenerate: bool) -> Matrix {
    if degenerate {
        Matrix::zeros(m.rows(), m.cols())
    } else {
        m
    }
}

fn bilinear_note(degenerate: bool) -> Vec<String> {
    if degenerate {
        vec!["BilinearDegenerate".to_string()]
    } else {
        Vec::new()
    }
}

/// Exact `Σ` report for paired-sampling PermutationSHAP.
pub fn sigma_exact<G: Game + ?Sized>(game: &G) -> Result<CovarianceReport> {
    permutation_report_exact(game, true)
}

/// Exact `Σ` (paired) or `Var(B_π)` (unpaired) over all `q!` permutations,
/// with the same `(N - 1)` normalization as the plug-in estimator.
pub fn permutation_report_exact<G: Game + ?Sized>(
    game: &G,
    paired: bool,
) -> Result<CovarianceReport> {
    let q = game.players();
    if q > MAX_PERMUTATION_PLAYERS {
        return Err(ShapError::SizeGuard {
            method: "exact permutation covariance",
            cap: MAX_PERMUTATION_PLAYERS,
            q,
        });
    }
    let table = ValueTable::build(game)?;
    let m = sample_covariance(&all_permutation_units(&table, paired));
    let degenerate = paired && is_negligible(&m, value_scale(table.values()));
    CovarianceReport::new(
        CovarianceMethod::from_parts(false, paired),
        Provenance::Exact,
        q,
        zero_if(m, degenerate),
        bilinear_note(degenerate),
    )
}

/// Exact `T` or `T₂` report.
pub fn kernel_report_exact<G: Game + ?Sized>(game: &G, paired: bool) -> Result<CovarianceReport> {
    let km = kernel_matrices_exact(game, paired)?;
    let t = zero_if(km.t.clone(), km.degenerate);
    CovarianceReport::new(km.method(), Provenance::Exact, game.players(), t, km.note())
}

pub fn covariance_exact<G: Game + ?Sized>(
    game: &G,
    method: CovarianceMethod,
) -> Result<CovarianceReport> {
    if method.is_kernel() {
        kernel_report_exact(game, method.is_paired())
    } else {
        permutation_report_exact(game, method.is_paired())
    }
}

fn units_to_rows(units: Vec<MarginalVector>) -> Vec<Vec<f64>> {
    units.into_iter().map(|u| u.b).collect()
}

/// Plug-in `Σ̂`: sample covariance of `½(B_π + B_{ρ(π)})` over `n`
/// permutations, normalized by `n - 1`. Uses the same draws as
/// [`crate::permutation::estimate_permutation`] with this seed.
pub fn sigma_plugin<G: Game + ?Sized>(game: &G, n: usize, seed: u64) -> Result<CovarianceReport> {
    covariance_plugin(game, CovarianceMethod::PermutationPaired, n, seed)
}

pub fn covariance_plugin<G: Game + ?Sized>(
    game: &G,
    method: CovarianceMethod,
    n: usize,
    seed: u64,
) -> Result<CovarianceReport> {
    let q = game.players();
    let provenance = Provenance::Plugin { n, seed };
    if method.is_kernel() {
        let (phi, batch) = estimate_kernel(game, n, method.is_paired(), seed)?;
        let km = kernel_matrices_plugin(&batch, &phi)?;
        let t = zero_if(km.t.clone(), km.degenerate);
        return CovarianceReport::new(method, provenance, q, t, km.note());
    }
    if n < 2 {
        return Err(ShapError::Domain(format!(
            "plug-in covariance needs n >= 2, got {n}"
        )));
    }
    let units = units_to_rows(sample_marginals(game, n, method.is_paired(), seed)?);
    let scale = units.iter().map(|u| value_scale(u)).fold(0.0, f64::max);
    let m = sample_covariance(&units);
    let degenerate = method.is_paired() && is_negligible(&m, scale);
    CovarianceReport::new(
        method,
        provenance,
        q,
        zero_if(m, degenerate),
        bilinear_note(degenerate),
    )
}

/// Smallest eigenvalue of `T - T₂`.
pub fn psd_gap(t: &Matrix, t2: &Matrix) -> Result<f64> {
    if (t.rows(), t.cols()) != (t2.rows(), t2.cols()) {
        return Err(ShapError::Dimension("matrices differ in shape".into()));
    }
    let e = eig_sym(&t.sub(t2).symmetrize())?;
    Ok(*e.values.last().unwrap_or(&0.0))
}

pub fn dimension_adjusted_eigs(report: &CovarianceReport) -> Vec<f64> {
    report.dimension_adjusted_eigs()
}

/// `m_jk / √(m_jj m_kk)`, with zero off-diagonal entries where a variance
/// is not positive. Thresholding this at `z/√n` tests each sample covariance
/// entry against `z` times its own noise level, whatever the block scales.
pub fn correlation_matrix(m: &Matrix) -> Matrix {
    let q = m.rows();
    let d = m.diagonal();
    let mut out = Matrix::identity(q);
    for j in 0..q {
        for k in 0..q {
            if j != k && d[j] > 0.0 && d[k] > 0.0 {
                out[(j, k)] = m[(j, k)] / (d[j] * d[k]).sqrt();
            }
        }
    }
    out
}

/// Connected components of the graph `j ~ k ⇔ |m_jk| > threshold`.
pub fn detect_blocks_matrix(m: &Matrix, threshold: f64) -> Partition {
    let q = m.rows();
    let mut uf = UnionFind::new(q);
    for j in 0..q {
        for k in j + 1..q {
            if m[(j, k)].abs() > threshold || m[(k, j)].abs() > threshold {
                uf.union(j, k);
            }
        }
    }
    uf.into_partition().canonical()
}

/// Block partition from a permutation covariance report.
pub fn detect_blocks(report: &CovarianceReport, threshold: f64) -> Result<Partition> {
    if report.method.is_kernel() {
        return Err(ShapError::Dimension(
            "block detection needs a q x q permutation covariance".into(),
        ));
    }
    Ok(detect_blocks_matrix(&report.matrix, threshold))
}
