//! Elementary differentials and the truncated expansion of `E f(X_t)` for
//! autonomous problems with explicit derivative oracles.

use crate::simulate::{AffineSde, TestFunctional};
use crate::trees::{count_classes, ColoredTree, Family, HalfInt, Node, NodeKind};
use crate::{Calculus, Error, Result};
use std::sync::Arc;

/// Multilinear derivatives of the drift and the diffusion columns.
///
/// `drift(x, dirs, out)` writes `a^{(k)}(x)(dirs[0], …, dirs[k-1])` with
/// `k = dirs.len()`; `diffusion` does the same for column `j` (0-based).
pub trait DerivativeOracle {
    /// State dimension `d`.
    fn dim(&self) -> usize;
    /// Noise dimension `m`.
    fn noise_dim(&self) -> usize;
    /// Highest derivative order the oracle evaluates.
    fn max_order(&self) -> usize;
    /// `k`-linear derivative of the drift.
    fn drift(&self, x: &[f64], dirs: &[&[f64]], out: &mut [f64]);
    /// `k`-linear derivative of diffusion column `j`.
    fn diffusion(&self, j: usize, x: &[f64], dirs: &[&[f64]], out: &mut [f64]);
}

/// Multilinear derivatives of a scalar test function.
pub trait FunctionalOracle {
    /// Highest derivative order the oracle evaluates.
    fn max_order(&self) -> usize;
    /// `f^{(k)}(x)(dirs[0], …, dirs[k-1])` with `k = dirs.len()`.
    fn derivative(&self, x: &[f64], dirs: &[&[f64]]) -> f64;
}

impl FunctionalOracle for TestFunctional {
    /// The shipped functionals are polynomials, so every order is exact.
    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn derivative(&self, x: &[f64], dirs: &[&[f64]]) -> f64 {
        TestFunctional::derivative(*self, x, dirs)
    }
}

/// Exact derivatives of an affine SDE: order 1 is the matrix, higher orders
/// vanish.
#[derive(Debug, Clone)]
pub struct AffineOracle {
    sde: AffineSde,
}

impl AffineOracle {
    /// Oracle for the coefficients as written (Stratonovich drift for a
    /// Stratonovich problem).
    pub fn new(sde: &AffineSde) -> Result<Self> {
        sde.validate()?;
        Ok(AffineOracle { sde: sde.clone() })
    }
}

fn affine_derivative(mat: &[Vec<f64>], off: &[f64], x: &[f64], dirs: &[&[f64]], out: &mut [f64]) {
    match dirs.len() {
        0 => {
            for (i, o) in out.iter_mut().enumerate() {
                *o = off[i] + mat[i].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        1 => {
            for (i, o) in out.iter_mut().enumerate() {
                *o = mat[i].iter().zip(dirs[0]).map(|(a, b)| a * b).sum();
            }
        }
        _ => out.fill(0.0),
    }
}

impl DerivativeOracle for AffineOracle {
    fn dim(&self) -> usize {
        self.sde.d()
    }

    fn noise_dim(&self) -> usize {
        self.sde.m()
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn drift(&self, x: &[f64], dirs: &[&[f64]], out: &mut [f64]) {
        affine_derivative(&self.sde.drift_matrix, &self.sde.drift_offset, x, dirs, out);
    }

    fn diffusion(&self, j: usize, x: &[f64], dirs: &[&[f64]], out: &mut [f64]) {
        affine_derivative(&self.sde.diffusion_matrices[j], &self.sde.diffusion_offsets[j], x, dirs, out);
    }
}

/// `k`-linear drift derivative evaluator.
pub type DriftDerivative = Arc<dyn Fn(&[f64], &[&[f64]], &mut [f64]) + Send + Sync>;
/// `k`-linear diffusion derivative evaluator for a 0-based column.
pub type DiffusionDerivative = Arc<dyn Fn(usize, &[f64], &[&[f64]], &mut [f64]) + Send + Sync>;

/// Oracle assembled from user closures.
#[derive(Clone)]
pub struct ClosureOracle {
    pub d: usize,
    pub m: usize,
    pub max_order: usize,
    pub drift: DriftDerivative,
    pub diffusion: DiffusionDerivative,
}

impl DerivativeOracle for ClosureOracle {
    fn dim(&self) -> usize {
        self.d
    }

    fn noise_dim(&self) -> usize {
        self.m
    }

    fn max_order(&self) -> usize {
        self.max_order
    }

    fn drift(&self, x: &[f64], dirs: &[&[f64]], out: &mut [f64]) {
        (self.drift)(x, dirs, out)
    }

    fn diffusion(&self, j: usize, x: &[f64], dirs: &[&[f64]], out: &mut [f64]) {
        (self.diffusion)(j, x, dirs, out)
    }
}

fn differential(n: &Node, oracle: &dyn DerivativeOracle, f: &dyn FunctionalOracle, x: &[f64]) -> Result<Vec<f64>> {
    let k = n.children.len();
    let available = if n.color.kind == NodeKind::Root { f.max_order() } else { oracle.max_order() };
    if k > available {
        return Err(Error::Domain(format!("tree needs derivatives of order {k}, oracle provides up to {available}")));
    }
    let args = n.children.iter().map(|c| differential(c, oracle, f, x)).collect::<Result<Vec<_>>>()?;
    let dirs: Vec<&[f64]> = args.iter().map(Vec::as_slice).collect();
    match n.color.kind {
        NodeKind::Root => Ok(vec![f.derivative(x, &dirs)]),
        NodeKind::Det => {
            let mut out = vec![0.0; oracle.dim()];
            oracle.drift(x, &dirs, &mut out);
            Ok(out)
        }
        NodeKind::Stoch => {
            let j = n.color.index.unwrap_or(0) as usize;
            if j == 0 || j > oracle.noise_dim() {
                return Err(Error::Domain(format!("diffusion index {j} outside 1..={}", oracle.noise_dim())));
            }
            let mut out = vec![0.0; oracle.dim()];
            oracle.diffusion(j - 1, x, &dirs, &mut out);
            Ok(out)
        }
    }
}

/// Elementary differential `F(t)(x)` of a tree with concrete indices: a
/// one-element vector for a γ root, a `d`-vector otherwise.
pub fn elementary_differential(t: &ColoredTree, oracle: &dyn DerivativeOracle, f: &dyn FunctionalOracle, x: &[f64]) -> Result<Vec<f64>> {
    if !t.is_concrete() && t.class_count() > 0 {
        return Err(Error::Domain(format!("tree {t} has index variables; assign values first")));
    }
    if x.len() != oracle.dim() {
        return Err(Error::Domain(format!("x has {} entries, expected {}", x.len(), oracle.dim())));
    }
    differential(t.root(), oracle, f, x)
}

/// Sum of `F(t)(x)` over all assignments of values in `1..=m` to the index
/// classes of `t`.
pub fn summed_differential(t: &ColoredTree, oracle: &dyn DerivativeOracle, f: &dyn FunctionalOracle, x: &[f64]) -> Result<Vec<f64>> {
    let classes = t.class_count();
    let m = oracle.noise_dim() as u32;
    let mut values = vec![1u32; classes];
    let mut total: Option<Vec<f64>> = None;
    loop {
        let v = elementary_differential(&t.assign(&values)?, oracle, f, x)?;
        match &mut total {
            None => total = Some(v),
            Some(acc) => acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b),
        }
        let mut i = 0;
        loop {
            if i == classes {
                return Ok(total.unwrap_or_default());
            }
            values[i] += 1;
            if values[i] <= m {
                break;
            }
            values[i] = 1;
            i += 1;
        }
    }
}

/// Coefficients `c_k` of the truncated expansion `Σ_k c_k dt^k`, `k ≤ p`.
///
/// The sum runs over the classes of TS(I) or TS(S) with their α counts and
/// every index assignment. Stratonovich problems are expanded over TS(S)
/// with the Stratonovich drift as supplied by the oracle.
pub fn expansion_coefficients(oracle: &dyn DerivativeOracle, f: &dyn FunctionalOracle, x0: &[f64], p: u32, calculus: Calculus) -> Result<Vec<f64>> {
    let mut coef = vec![0.0; p as usize + 1];
    let mut classes: Vec<(ColoredTree, u64)> = count_classes(Family::Star(calculus), HalfInt::from_int(p)).into_iter().collect();
    classes.sort_by(|a, b| a.0.cmp(&b.0));
    for (t, alpha) in classes {
        let st = t.stats();
        let k = st.rho.0 / 2;
        let pairs = st.s / 2;
        let fk: f64 = (1..=k).map(f64::from).product();
        let value = summed_differential(&t, oracle, f, x0)?[0];
        coef[k as usize] += alpha as f64 * value / (2f64.powi(pairs as i32) * fk);
    }
    Ok(coef)
}

/// Truncated expansion of `E f(X_dt)` started at `x0`, up to order `p`.
pub fn truncated_expectation(oracle: &dyn DerivativeOracle, f: &dyn FunctionalOracle, x0: &[f64], dt: f64, p: u32, calculus: Calculus) -> Result<f64> {
    if !(dt >= 0.0) {
        return Err(Error::Domain(format!("dt must be non-negative, got {dt}")));
    }
    let c = expansion_coefficients(oracle, f, x0, p, calculus)?;
    Ok(c.iter().rev().fold(0.0, |acc, ck| acc * dt + ck))
}

/// One row of [`expansion_table`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionRow {
    pub dt: f64,
    pub truncated: f64,
    pub exact: f64,
    pub error: f64,
}

/// Truncated and closed-form `E f(X_dt)` of an affine problem over a grid.
pub fn expansion_table(sde: &AffineSde, f: TestFunctional, p: u32, dts: &[f64]) -> Result<Vec<ExpansionRow>> {
    let oracle = AffineOracle::new(sde)?;
    let c = expansion_coefficients(&oracle, &f, &sde.x0, p, sde.calculus)?;
    dts.iter()
        .map(|&dt| {
            if !(dt >= 0.0) {
                return Err(Error::Domain(format!("dt must be non-negative, got {dt}")));
            }
            let truncated = c.iter().rev().fold(0.0, |acc, ck| acc * dt + ck);
            let exact = sde.exact_moment(f, dt);
            Ok(ExpansionRow { dt, truncated, exact, error: (truncated - exact).abs() })
        })
        .collect()
}

/// CSV with columns `dt,truncated,exact,error`.
pub fn expansion_csv(rows: &[ExpansionRow]) -> String {
    let mut out = String::from("dt,truncated,exact,error\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.dt, r.truncated, r.exact, r.error));
    }
    out
}
