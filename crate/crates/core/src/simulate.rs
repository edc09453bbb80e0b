//! Explicit SRK time stepping, test problems with exact moments and Monte
//! Carlo weak-convergence studies.
//!
//! Trajectories are processed in chunks of [`CHUNK_SIZE`]. Chunk `c` draws
//! from the ChaCha8 stream `c` of the run seed, and chunk sums are reduced in
//! chunk order with compensated summation, so results depend only on the
//! seed and the sample count, not on the number of threads.

use crate::rational::q_to_f64;
use crate::rvmodel::{HalfPowerPoly, Sampler};
use crate::tableau::{Tableau, TableauInstance};
use crate::{Calculus, Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;

/// Trajectories per random stream.
pub const CHUNK_SIZE: u64 = 10_000;

/// Functional `f` whose expectation is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestFunctional {
    /// First component `x_1`.
    X,
    /// Square of the first component `x_1²`.
    Xsq,
    /// Squared Euclidean norm `|x|²`.
    Norm2,
}

impl TestFunctional {
    /// Value at `x`.
    #[inline]
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            TestFunctional::X => x[0],
            TestFunctional::Xsq => x[0] * x[0],
            TestFunctional::Norm2 => x.iter().map(|v| v * v).sum(),
        }
    }

    /// `k`-th derivative at `x` applied to `dirs.len() = k` directions.
    pub fn derivative(self, x: &[f64], dirs: &[&[f64]]) -> f64 {
        match (self, dirs.len()) {
            (_, 0) => self.eval(x),
            (TestFunctional::X, 1) => dirs[0][0],
            (TestFunctional::Xsq, 1) => 2.0 * x[0] * dirs[0][0],
            (TestFunctional::Xsq, 2) => 2.0 * dirs[0][0] * dirs[1][0],
            (TestFunctional::Norm2, 1) => 2.0 * x.iter().zip(dirs[0]).map(|(a, b)| a * b).sum::<f64>(),
            (TestFunctional::Norm2, 2) => 2.0 * dirs[0].iter().zip(dirs[1]).map(|(a, b)| a * b).sum::<f64>(),
            _ => 0.0,
        }
    }
}

impl FromStr for TestFunctional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(TestFunctional::X),
            "xsq" | "x2" | "x^2" => Ok(TestFunctional::Xsq),
            "norm2" => Ok(TestFunctional::Norm2),
            _ => Err(Error::Parse(format!("unknown functional `{s}` (expected x, xsq or norm2)"))),
        }
    }
}

impl fmt::Display for TestFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestFunctional::X => "x",
            TestFunctional::Xsq => "xsq",
            TestFunctional::Norm2 => "norm2",
        })
    }
}

/// Drift evaluator `a(t, x) → out`.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// Diffusion column evaluator `b^j(t, x) → out` with 0-based `j`.
pub type DiffusionFn = Arc<dyn Fn(usize, f64, &[f64], &mut [f64]) + Send + Sync>;
/// Jacobian of column `j`, row-major: `out[i * d + k] = ∂b^{i,j}/∂x^k`.
pub type JacobianFn = Arc<dyn Fn(usize, f64, &[f64], &mut [f64]) + Send + Sync>;
/// Exact `E f(X_T)` if known.
pub type ExactMomentFn = Arc<dyn Fn(TestFunctional, f64) -> Option<f64> + Send + Sync>;

/// SDE `dX = a(t,X) dt + Σ_j b^j(t,X) dW^j` in Itô or Stratonovich form.
#[derive(Clone)]
pub struct SdeProblem {
    pub name: String,
    pub d: usize,
    pub m: usize,
    pub calculus: Calculus,
    pub drift: DriftFn,
    pub diffusion: DiffusionFn,
    pub diffusion_jacobian: Option<JacobianFn>,
    pub x0: Vec<f64>,
    pub exact: Option<ExactMomentFn>,
    /// Affine coefficients when the problem is affine-linear.
    pub affine: Option<AffineSde>,
}

impl fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem").field("name", &self.name).field("d", &self.d).field("m", &self.m).field("calculus", &self.calculus).finish()
    }
}

impl SdeProblem {
    /// Exact `E f(X_T)` when available.
    pub fn exact_moment(&self, f: TestFunctional, t: f64) -> Option<f64> {
        self.exact.as_ref().and_then(|e| e(f, t))
    }
}

/// Converts a Stratonovich problem to the equivalent Itô problem with drift
/// `ã = a + ½ Σ_j (∂b^j/∂x) b^j`; Itô problems are returned unchanged.
pub fn stratonovich_to_ito(prob: &SdeProblem) -> Result<SdeProblem> {
    if prob.calculus == Calculus::Ito {
        return Ok(prob.clone());
    }
    let jac = prob
        .diffusion_jacobian
        .clone()
        .ok_or_else(|| Error::Domain(format!("problem `{}` has no diffusion Jacobians", prob.name)))?;
    let (d, m) = (prob.d, prob.m);
    let drift = prob.drift.clone();
    let diffusion = prob.diffusion.clone();
    let new_drift: DriftFn = Arc::new(move |t, x, out| {
        drift(t, x, out);
        let mut b = vec![0.0; d];
        let mut j = vec![0.0; d * d];
        for col in 0..m {
            diffusion(col, t, x, &mut b);
            jac(col, t, x, &mut j);
            for i in 0..d {
                out[i] += 0.5 * (0..d).map(|k| j[i * d + k] * b[k]).sum::<f64>();
            }
        }
    });
    Ok(SdeProblem {
        name: format!("{} (Itô form)", prob.name),
        calculus: Calculus::Ito,
        drift: new_drift,
        affine: prob.affine.as_ref().map(AffineSde::to_ito),
        ..prob.clone()
    })
}

/// Affine-linear SDE `dX = (A X + a0) dt + Σ_j (B_j X + b_j) dW^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineSde {
    pub name: String,
    pub calculus: Calculus,
    pub drift_matrix: Vec<Vec<f64>>,
    pub drift_offset: Vec<f64>,
    pub diffusion_matrices: Vec<Vec<Vec<f64>>>,
    pub diffusion_offsets: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
}

/// Names accepted by [`builtin_problem`].
pub const BUILTIN_PROBLEMS: [&str; 4] = ["gbm", "gbm-strat", "linear2d", "ou"];

fn mat(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

impl AffineSde {
    /// Checks dimensions.
    pub fn validate(&self) -> Result<()> {
        let d = self.x0.len();
        let bad = |field: &str, msg: String| Err(Error::scheme(field, msg));
        if d == 0 {
            return bad("x0", "dimension must be positive".into());
        }
        if self.drift_matrix.len() != d || self.drift_matrix.iter().any(|r| r.len() != d) {
            return bad("drift_matrix", format!("expected a {d}x{d} matrix"));
        }
        if self.drift_offset.len() != d {
            return bad("drift_offset", format!("expected {d} entries"));
        }
        let m = self.diffusion_matrices.len();
        if m == 0 || self.diffusion_offsets.len() != m {
            return bad("diffusion_offsets", "need one offset per diffusion matrix and at least one column".into());
        }
        for (j, (b, o)) in self.diffusion_matrices.iter().zip(&self.diffusion_offsets).enumerate() {
            if b.len() != d || b.iter().any(|r| r.len() != d) {
                return bad(&format!("diffusion_matrices[{j}]"), format!("expected a {d}x{d} matrix"));
            }
            if o.len() != d {
                return bad(&format!("diffusion_offsets[{j}]"), format!("expected {d} entries"));
            }
        }
        Ok(())
    }

    /// Dimension `d`.
    pub fn d(&self) -> usize {
        self.x0.len()
    }

    /// Noise dimension `m`.
    pub fn m(&self) -> usize {
        self.diffusion_matrices.len()
    }

    /// Itô form: `A ← A + ½ Σ B_j²`, `a0 ← a0 + ½ Σ B_j b_j`.
    pub fn to_ito(&self) -> AffineSde {
        self.to_calculus(Calculus::Ito)
    }

    /// The same process written in the given calculus.
    pub fn to_calculus(&self, target: Calculus) -> AffineSde {
        if self.calculus == target {
            return self.clone();
        }
        let sign = if target == Calculus::Ito { 0.5 } else { -0.5 };
        let mut a = mat(&self.drift_matrix);
        let mut a0 = DVector::from_vec(self.drift_offset.clone());
        for (b, o) in self.diffusion_matrices.iter().zip(&self.diffusion_offsets) {
            let bm = mat(b);
            a += sign * &bm * &bm;
            a0 += sign * &bm * DVector::from_vec(o.clone());
        }
        AffineSde {
            name: self.name.clone(),
            calculus: target,
            drift_matrix: a.row_iter().map(|r| r.iter().copied().collect()).collect(),
            drift_offset: a0.iter().copied().collect(),
            ..self.clone()
        }
    }

    /// Exact first moment and second-moment matrix at time `t`.
    pub fn moments(&self, t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let ito = self.to_ito();
        let d = self.d();
        let a = mat(&ito.drift_matrix);
        let a0 = DVector::from_vec(ito.drift_offset.clone());
        let bs: Vec<(DMatrix<f64>, DVector<f64>)> =
            ito.diffusion_matrices.iter().zip(&ito.diffusion_offsets).map(|(b, o)| (mat(b), DVector::from_vec(o.clone()))).collect();
        // state z = (1, m1, vec M2), dz/dt = G z
        let n = 1 + d + d * d;
        let deriv = |z: &DVector<f64>| -> DVector<f64> {
            let one = z[0];
            let m1 = DVector::from_iterator(d, z.iter().skip(1).take(d).copied());
            let m2 = DMatrix::from_row_iterator(d, d, z.iter().skip(1 + d).copied());
            let dm1 = &a * &m1 + &a0 * one;
            let mut dm2 = &a * &m2 + &m2 * a.transpose() + &a0 * m1.transpose() + &m1 * a0.transpose();
            for (b, o) in &bs {
                dm2 += b * &m2 * b.transpose() + b * &m1 * o.transpose() + o * m1.transpose() * b.transpose() + o * o.transpose() * one;
            }
            let mut out = DVector::zeros(n);
            for i in 0..d {
                out[1 + i] = dm1[i];
                for k in 0..d {
                    out[1 + d + i * d + k] = dm2[(i, k)];
                }
            }
            out
        };
        let mut g = DMatrix::zeros(n, n);
        for c in 0..n {
            let mut e = DVector::zeros(n);
            e[c] = 1.0;
            g.set_column(c, &deriv(&e));
        }
        let mut z0 = DVector::zeros(n);
        z0[0] = 1.0;
        for i in 0..d {
            z0[1 + i] = self.x0[i];
            for k in 0..d {
                z0[1 + d + i * d + k] = self.x0[i] * self.x0[k];
            }
        }
        let z = (g * t).exp() * z0;
        let m1 = DVector::from_iterator(d, z.iter().skip(1).take(d).copied());
        let m2 = DMatrix::from_row_iterator(d, d, z.iter().skip(1 + d).copied());
        (m1, m2)
    }

    /// Exact `E f(X_t)` for the shipped functionals.
    pub fn exact_moment(&self, f: TestFunctional, t: f64) -> f64 {
        let (m1, m2) = self.moments(t);
        match f {
            TestFunctional::X => m1[0],
            TestFunctional::Xsq => m2[(0, 0)],
            TestFunctional::Norm2 => m2.trace(),
        }
    }

    /// Problem with closure evaluators and exact moments.
    pub fn to_problem(&self) -> Result<SdeProblem> {
        self.validate()?;
        let d = self.d();
        let a = self.drift_matrix.clone();
        let a0 = self.drift_offset.clone();
        let bm = self.diffusion_matrices.clone();
        let bo = self.diffusion_offsets.clone();
        let bj = self.diffusion_matrices.clone();
        let me = self.clone();
        let affine_apply = move |mat: &[Vec<f64>], off: &[f64], x: &[f64], out: &mut [f64]| {
            for i in 0..d {
                out[i] = off[i] + mat[i].iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
            }
        };
        Ok(SdeProblem {
            name: self.name.clone(),
            d,
            m: self.m(),
            calculus: self.calculus,
            drift: Arc::new(move |_, x, out| affine_apply(&a, &a0, x, out)),
            diffusion: Arc::new(move |j, _, x, out| affine_apply(&bm[j], &bo[j], x, out)),
            diffusion_jacobian: Some(Arc::new(move |j, _, _, out| {
                for i in 0..d {
                    for k in 0..d {
                        out[i * d + k] = bj[j][i][k];
                    }
                }
            })),
            x0: self.x0.clone(),
            exact: Some(Arc::new(move |f, t| Some(me.exact_moment(f, t)))),
            affine: Some(self.clone()),
        })
    }
}

/// A shipped affine test problem.
pub fn builtin_affine(name: &str) -> Option<AffineSde> {
    let gbm = |calculus: Calculus, name: &str| AffineSde {
        name: name.into(),
        calculus,
        drift_matrix: vec![vec![1.5]],
        drift_offset: vec![0.0],
        diffusion_matrices: vec![vec![vec![0.1]]],
        diffusion_offsets: vec![vec![0.0]],
        x0: vec![0.1],
    };
    Some(match name {
        "gbm" => gbm(Calculus::Ito, "gbm"),
        "gbm-strat" => gbm(Calculus::Strat, "gbm-strat"),
        "linear2d" => AffineSde {
            name: "linear2d".into(),
            calculus: Calculus::Ito,
            drift_matrix: vec![vec![-0.5, 0.2], vec![0.1, -0.3]],
            drift_offset: vec![0.0, 0.0],
            diffusion_matrices: vec![vec![vec![0.2, 0.0], vec![0.0, 0.2]], vec![vec![0.0, 0.1], vec![0.1, 0.0]]],
            diffusion_offsets: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            x0: vec![1.0, 0.5],
        },
        "ou" => AffineSde {
            name: "ou".into(),
            calculus: Calculus::Ito,
            drift_matrix: vec![vec![-1.0]],
            drift_offset: vec![0.5],
            diffusion_matrices: vec![vec![vec![0.0]]],
            diffusion_offsets: vec![vec![0.3]],
            x0: vec![1.0],
        },
        _ => return None,
    })
}

/// A shipped problem by name (`gbm`, `gbm-strat`, `linear2d`, `ou`).
pub fn builtin_problem(name: &str) -> Option<Result<SdeProblem>> {
    builtin_affine(name).map(|a| a.to_problem())
}

/// Loads a built-in problem or an affine problem file (JSON).
pub fn load_affine(name_or_path: &str) -> Result<AffineSde> {
    if let Some(a) = builtin_affine(name_or_path) {
        return Ok(a);
    }
    let text = std::fs::read_to_string(name_or_path).map_err(|e| Error::scheme(name_or_path, format!("cannot read problem file: {e}")))?;
    let a: AffineSde = serde_json::from_str(&text).map_err(|e| Error::scheme(name_or_path, e.to_string()))?;
    a.validate().map_err(|e| match e {
        Error::Scheme { field, message } => Error::Scheme { field: format!("{name_or_path}: {field}"), message },
        other => other,
    })?;
    Ok(a)
}

#[derive(Debug, Clone)]
struct NumPoly {
    constant: f64,
    terms: Vec<(f64, Vec<(usize, i32)>)>,
}

impl NumPoly {
    fn new(p: &HalfPowerPoly, h: f64) -> Self {
        let sh = h.sqrt();
        let mut constant = 0.0;
        let mut terms = Vec::new();
        for (e, mono, q) in p.terms() {
            let c = q_to_f64(q) * sh.powi(e);
            if mono.is_empty() {
                constant += c;
            } else {
                terms.push((c, mono.iter().map(|&(s, k)| (s as usize, k as i32)).collect()));
            }
        }
        NumPoly { constant, terms }
    }

    #[inline]
    fn eval(&self, xi: &[f64]) -> f64 {
        let mut v = self.constant;
        for (c, mono) in &self.terms {
            let mut t = *c;
            for &(s, k) in mono {
                t *= if k == 1 { xi[s] } else { xi[s].powi(k) };
            }
            v += t;
        }
        v
    }
}

/// Tableau compiled for a fixed step size: numeric weights and the sparse
/// stage structure of one step.
#[derive(Debug, Clone)]
pub struct Stepper {
    h: f64,
    s: usize,
    slots: usize,
    /// Diffusion column (0-based) per slot; unused for slot 0.
    column: Vec<usize>,
    /// Time offsets `c_i h` per slot and stage.
    ch: Vec<Vec<f64>>,
    weights: Vec<NumPoly>,
    /// `(slot, stage, weight)` terms of the update.
    update: Vec<(usize, usize, usize)>,
    /// For stage `i` and slot: `(col slot, stage j, weight)` terms of `H_i`.
    stage_terms: Vec<Vec<Vec<(usize, usize, usize)>>>,
    /// Whether `H_i^(slot)` and its evaluation are needed.
    needed: Vec<Vec<bool>>,
    sampler: Sampler,
    m: usize,
}

/// Scratch buffers for [`Stepper::step_into`].
#[derive(Debug, Clone)]
pub struct Workspace {
    wval: Vec<f64>,
    evals: Vec<f64>,
    stage: Vec<f64>,
    xi: Vec<f64>,
}

impl Stepper {
    /// Compiles an explicit tableau instance for step size `h`.
    pub fn new(tab: &TableauInstance, h: f64) -> Result<Self> {
        if !tab.is_explicit() {
            return Err(Error::Unsupported(format!("scheme `{}` is implicit", tab.name())));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Domain(format!("step size must be positive, got {h}")));
        }
        let s = tab.stages();
        let slots = tab.slot_count();
        let mut weights = Vec::new();
        let mut push = |p: &HalfPowerPoly| {
            weights.push(NumPoly::new(p, h));
            weights.len() - 1
        };
        let mut update = Vec::new();
        for slot in 0..slots {
            for (i, z) in tab.z(slot).iter().enumerate() {
                if !z.is_zero() {
                    update.push((slot, i, push(z)));
                }
            }
        }
        let mut stage_terms = vec![vec![Vec::new(); slots]; s];
        for row in 0..slots {
            for col in 0..slots {
                let zz = tab.zz(row, col);
                for i in 0..s {
                    for j in 0..s {
                        if !zz[i][j].is_zero() {
                            stage_terms[i][row].push((col, j, push(&zz[i][j])));
                        }
                    }
                }
            }
        }
        let mut needed = vec![vec![false; s]; slots];
        for &(slot, i, _) in &update {
            needed[slot][i] = true;
        }
        for i in (0..s).rev() {
            for row in 0..slots {
                if needed[row][i] {
                    for &(col, j, _) in &stage_terms[i][row] {
                        needed[col][j] = true;
                    }
                }
            }
        }
        Ok(Stepper {
            h,
            s,
            slots,
            column: (0..slots).map(|sl| (tab.slot_index(sl) as usize).saturating_sub(1)).collect(),
            ch: (0..slots).map(|sl| tab.c(sl).iter().map(|c| q_to_f64(c) * h).collect()).collect(),
            weights,
            update,
            stage_terms,
            needed,
            sampler: tab.model().sampler(),
            m: tab.m() as usize,
        })
    }

    /// Step size.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of primitive random variables drawn per step.
    pub fn primitive_count(&self) -> usize {
        self.sampler.len()
    }

    /// Scratch buffers sized for dimension `d`.
    pub fn workspace(&self, d: usize) -> Workspace {
        Workspace { wval: vec![0.0; self.weights.len()], evals: vec![0.0; self.slots * self.s * d], stage: vec![0.0; d], xi: vec![0.0; self.sampler.len()] }
    }

    /// One step from `(t, y)` with primitive draws `xi`, written to `out`.
    pub fn step_into(&self, prob: &SdeProblem, t: f64, y: &[f64], xi: &[f64], ws: &mut Workspace, out: &mut [f64]) -> Result<()> {
        let d = prob.d;
        for (w, p) in ws.wval.iter_mut().zip(&self.weights) {
            *w = p.eval(xi);
        }
        for i in 0..self.s {
            for slot in 0..self.slots {
                if !self.needed[slot][i] {
                    continue;
                }
                ws.stage.copy_from_slice(y);
                for &(col, j, w) in &self.stage_terms[i][slot] {
                    let wv = ws.wval[w];
                    let base = (col * self.s + j) * d;
                    for k in 0..d {
                        ws.stage[k] += wv * ws.evals[base + k];
                    }
                }
                let base = (slot * self.s + i) * d;
                let tt = t + self.ch[slot][i];
                let (stage, evals) = (&ws.stage, &mut ws.evals[base..base + d]);
                if slot == 0 {
                    (prob.drift)(tt, stage, evals);
                } else {
                    (prob.diffusion)(self.column[slot], tt, stage, evals);
                }
            }
        }
        out.copy_from_slice(y);
        for &(slot, i, w) in &self.update {
            let wv = ws.wval[w];
            let base = (slot * self.s + i) * d;
            for k in 0..d {
                out[k] += wv * ws.evals[base + k];
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite state after step at t = {t} with h = {}", self.h)));
        }
        Ok(())
    }

    /// Draws fresh primitives into the workspace and steps.
    #[inline]
    pub fn step_random(&self, prob: &SdeProblem, t: f64, y: &[f64], rng: &mut ChaCha8Rng, ws: &mut Workspace, out: &mut [f64]) -> Result<()> {
        let mut xi = std::mem::take(&mut ws.xi);
        self.sampler.draw(rng, &mut xi);
        let r = self.step_into(prob, t, y, &xi, ws, out);
        ws.xi = xi;
        r
    }

    fn check_problem(&self, prob: &SdeProblem) -> Result<()> {
        if prob.m != self.m {
            return Err(Error::Domain(format!("scheme instantiated for m = {} but problem `{}` has m = {}", self.m, prob.name, prob.m)));
        }
        if prob.x0.len() != prob.d {
            return Err(Error::Domain(format!("x0 of problem `{}` has {} entries, expected {}", prob.name, prob.x0.len(), prob.d)));
        }
        Ok(())
    }
}

/// One SRK step with explicit primitive draws `xi` (see
/// [`crate::rvmodel::ModelInstance::sampler`] for their order).
pub fn srk_step(stepper: &Stepper, prob: &SdeProblem, t: f64, y: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
    stepper.check_problem(prob)?;
    if xi.len() != stepper.primitive_count() {
        return Err(Error::Domain(format!("expected {} primitive draws, got {}", stepper.primitive_count(), xi.len())));
    }
    let mut ws = stepper.workspace(prob.d);
    let mut out = vec![0.0; prob.d];
    stepper.step_into(prob, t, y, xi, &mut ws, &mut out)?;
    Ok(out)
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    /// Adds `x`.
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    /// Current total.
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// How trajectory chunks are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecPolicy {
    /// One thread, chunks in order.
    Sequential,
    /// Rayon worker pool; `None` uses the global pool. Falls back to
    /// sequential execution when the `parallel` feature is disabled.
    Parallel(Option<usize>),
}

impl Default for ExecPolicy {
    fn default() -> Self {
        ExecPolicy::Parallel(None)
    }
}

/// Monte Carlo estimate of `E f(Y(T))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: u64,
}

/// Count, compensated sum and centred sum of squares of one chunk.
#[derive(Debug, Clone, Copy, Default)]
struct ChunkSums {
    n: u64,
    sum: f64,
    m2: f64,
}

fn compensated(values: impl Iterator<Item = f64>) -> f64 {
    let mut s = NeumaierSum::default();
    values.for_each(|v| s.add(v));
    s.value()
}

fn run_chunk(prob: &SdeProblem, stepper: &Stepper, f: TestFunctional, steps: u64, seed: u64, chunk: u64, n: u64) -> Result<ChunkSums> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    let d = prob.d;
    let mut ws = stepper.workspace(d);
    let mut y = vec![0.0; d];
    let mut next = vec![0.0; d];
    let mut values = Vec::with_capacity(n as usize);
    for traj in 0..n {
        y.copy_from_slice(&prob.x0);
        for step in 0..steps {
            let t = step as f64 * stepper.h;
            stepper.step_random(prob, t, &y, &mut rng, &mut ws, &mut next).map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!("{msg} (trajectory {})", chunk * CHUNK_SIZE + traj)),
                other => other,
            })?;
            std::mem::swap(&mut y, &mut next);
        }
        values.push(f.eval(&y));
    }
    let sum = compensated(values.iter().copied());
    let mean = sum / n as f64;
    let m2 = compensated(values.iter().map(|v| (v - mean) * (v - mean)));
    Ok(ChunkSums { n, sum, m2 })
}

fn run_chunks(policy: ExecPolicy, n_chunks: u64, job: &(dyn Fn(u64) -> Result<ChunkSums> + Sync)) -> Result<Vec<ChunkSums>> {
    match policy {
        ExecPolicy::Sequential => (0..n_chunks).map(job).collect(),
        #[cfg(feature = "parallel")]
        ExecPolicy::Parallel(threads) => {
            use rayon::prelude::*;
            let run = || (0..n_chunks).into_par_iter().map(job).collect::<Result<Vec<_>>>();
            match threads {
                None => run(),
                Some(k) => rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build()
                    .map_err(|e| Error::Domain(format!("cannot build thread pool: {e}")))?
                    .install(run),
            }
        }
        #[cfg(not(feature = "parallel"))]
        ExecPolicy::Parallel(_) => (0..n_chunks).map(job).collect(),
    }
}

/// Number of steps `T / h`, which must be a positive integer.
pub fn step_count(t_end: f64, h: f64) -> Result<u64> {
    if !(h > 0.0) || !(t_end > 0.0) {
        return Err(Error::Domain(format!("need T > 0 and h > 0, got T = {t_end}, h = {h}")));
    }
    let n = (t_end / h).round();
    if (n * h - t_end).abs() > 1e-9 * t_end || n < 1.0 {
        return Err(Error::Domain(format!("T = {t_end} is not an integer multiple of h = {h}")));
    }
    Ok(n as u64)
}

/// Estimates `E f(Y(T))` from `n_samples` trajectories.
#[allow(clippy::too_many_arguments)]
pub fn simulate_weak(
    prob: &SdeProblem,
    tab: &Tableau,
    f: TestFunctional,
    t_end: f64,
    h: f64,
    n_samples: u64,
    seed: u64,
    policy: ExecPolicy,
) -> Result<WeakEstimate> {
    if n_samples == 0 {
        return Err(Error::Domain("n_samples must be at least 1".into()));
    }
    let steps = step_count(t_end, h)?;
    let inst = tab.instantiate(prob.m as u32)?;
    let stepper = Stepper::new(&inst, h)?;
    stepper.check_problem(prob)?;
    let n_chunks = n_samples.div_ceil(CHUNK_SIZE);
    let job = |c: u64| {
        let n = CHUNK_SIZE.min(n_samples - c * CHUNK_SIZE);
        run_chunk(prob, &stepper, f, steps, seed, c, n)
    };
    let chunks = run_chunks(policy, n_chunks, &job)?;
    let n = n_samples as f64;
    let mean = compensated(chunks.iter().map(|c| c.sum)) / n;
    let m2 = compensated(chunks.iter().map(|c| {
        let dm = c.sum / c.n as f64 - mean;
        c.m2 + c.n as f64 * dm * dm
    }));
    let var = if n_samples > 1 { m2 / (n - 1.0) } else { 0.0 };
    Ok(WeakEstimate { mean, stderr: (var / n).sqrt(), n_samples })
}

/// One step size of a convergence study.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakErrorRow {
    pub h: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// `|E f(X_T) - estimate|`.
    pub bias: f64,
    /// Whether the Monte Carlo error is below a third of the bias.
    pub usable: bool,
    /// Slope over the usable rows up to and including this one.
    pub slope_so_far: Option<f64>,
}

/// Outcome of the slope fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyStatus {
    /// At least two step sizes had bias above the noise.
    Ok,
    /// Fewer than two step sizes had bias above the noise.
    Inconclusive,
}

/// Result of [`convergence_study`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeakErrorReport {
    pub rows: Vec<WeakErrorRow>,
    pub exact: f64,
    pub slope: Option<f64>,
    /// 95% confidence interval of the slope (needs three usable rows).
    pub slope_ci: Option<(f64, f64)>,
    pub status: StudyStatus,
    pub n_samples: u64,
    pub seed: u64,
}

/// Least-squares slope and its standard error.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<(f64, Option<f64>)> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let se = if n > 2 {
        let rss: f64 = points.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
        Some((rss / (nf - 2.0) / sxx).sqrt())
    } else {
        None
    };
    Some((slope, se))
}

fn t_quantile_975(df: usize) -> f64 {
    const T: [f64; 10] = [12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228];
    if df == 0 {
        f64::INFINITY
    } else if df <= T.len() {
        T[df - 1]
    } else {
        1.96
    }
}

/// Runs [`simulate_weak`] per step size and fits `log bias` against `log h`
/// over the rows whose standard error is below a third of the bias.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    prob: &SdeProblem,
    tab: &Tableau,
    f: TestFunctional,
    t_end: f64,
    step_sizes: &[f64],
    n_samples: u64,
    seed: u64,
    policy: ExecPolicy,
) -> Result<WeakErrorReport> {
    let exact = prob.exact_moment(f, t_end).ok_or_else(|| Error::Domain(format!("problem `{}` has no exact moment for {f}", prob.name)))?;
    let mut rows: Vec<WeakErrorRow> = Vec::new();
    let mut pts = Vec::new();
    for &h in step_sizes {
        let est = simulate_weak(prob, tab, f, t_end, h, n_samples, seed, policy)?;
        let bias = (exact - est.mean).abs();
        let usable = est.stderr < bias / 3.0;
        if usable {
            pts.push((h.ln(), bias.ln()));
        }
        rows.push(WeakErrorRow { h, estimate: est.mean, stderr: est.stderr, bias, usable, slope_so_far: fit_slope(&pts).map(|s| s.0) });
    }
    let fit = fit_slope(&pts);
    let slope_ci = fit.and_then(|(s, se)| se.map(|se| (s - t_quantile_975(pts.len() - 2) * se, s + t_quantile_975(pts.len() - 2) * se)));
    Ok(WeakErrorReport {
        rows,
        exact,
        slope: fit.map(|f| f.0),
        slope_ci,
        status: if fit.is_some() { StudyStatus::Ok } else { StudyStatus::Inconclusive },
        n_samples,
        seed,
    })
}

impl WeakErrorReport {
    /// CSV with columns `h,estimate,stderr,bias,slope_so_far`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,estimate,stderr,bias,slope_so_far\n");
        for r in &self.rows {
            let slope = r.slope_so_far.map(|s| format!("{s}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", r.h, r.estimate, r.stderr, r.bias, slope);
        }
        out
    }

    /// Human-readable summary of the fit.
    pub fn summary(&self) -> String {
        match (self.status, self.slope) {
            (StudyStatus::Ok, Some(s)) => match self.slope_ci {
                Some((lo, hi)) => format!("slope {s:.3} (95% CI {lo:.3} .. {hi:.3}), exact {}", self.exact),
                None => format!("slope {s:.3}, exact {}", self.exact),
            },
            _ => format!("inconclusive: fewer than two step sizes with bias above three standard errors (exact {})", self.exact),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gbm() -> SdeProblem {
        builtin_problem("gbm").unwrap().unwrap()
    }

    #[test]
    fn gbm_exact_moments() {
        let p = gbm();
        let x = p.exact_moment(TestFunctional::X, 1.0).unwrap();
        let x2 = p.exact_moment(TestFunctional::Xsq, 1.0).unwrap();
        assert!((x - 0.1 * 1.5f64.exp()).abs() < 1e-12);
        assert!((x2 - 0.01 * (3.0f64 + 0.01).exp()).abs() < 1e-12);
        let s = builtin_problem("gbm-strat").unwrap().unwrap();
        let s2 = s.exact_moment(TestFunctional::Xsq, 1.0).unwrap();
        assert!((s2 - 0.01 * (3.0f64 + 0.02).exp()).abs() < 1e-12);
    }

    #[test]
    fn ou_moments() {
        let p = builtin_problem("ou").unwrap().unwrap();
        let t = 0.7;
        let mean = 0.5 + (1.0 - 0.5) * (-t as f64).exp();
        let var = 0.09 / 2.0 * (1.0 - (-2.0 * t as f64).exp());
        assert!((p.exact_moment(TestFunctional::X, t).unwrap() - mean).abs() < 1e-12);
        assert!((p.exact_moment(TestFunctional::Xsq, t).unwrap() - (var + mean * mean)).abs() < 1e-12);
    }

    #[test]
    fn euler_single_step() {
        let p = gbm();
        let tab = Tableau::builtin("euler").unwrap().unwrap().instantiate(1).unwrap();
        let st = Stepper::new(&tab, 0.25).unwrap();
        let y = srk_step(&st, &p, 0.0, &[2.0], &[1.0]).unwrap();
        let expect = 2.0 + 1.5 * 2.0 * 0.25 + 0.1 * 2.0 * 0.5;
        assert!((y[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn strat_conversion_of_gbm() {
        let s = builtin_problem("gbm-strat").unwrap().unwrap();
        let i = stratonovich_to_ito(&s).unwrap();
        let mut out = [0.0];
        (i.drift)(0.0, &[2.0], &mut out);
        assert!((out[0] - (1.5 * 2.0 + 0.5 * 0.01 * 2.0)).abs() < 1e-14);
    }

    #[test]
    fn calculus_round_trip() {
        let a = builtin_affine("linear2d").unwrap();
        let back = a.to_calculus(Calculus::Strat).to_ito();
        for (r, q) in back.drift_matrix.iter().zip(&a.drift_matrix) {
            for (x, y) in r.iter().zip(q) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        let s = a.to_calculus(Calculus::Strat);
        assert!((s.exact_moment(TestFunctional::Norm2, 0.8) - a.exact_moment(TestFunctional::Norm2, 0.8)).abs() < 1e-12);
    }

    #[test]
    fn step_count_rules() {
        assert_eq!(step_count(1.0, 0.25).unwrap(), 4);
        assert!(step_count(1.0, 0.3).is_err());
        assert!(step_count(1.0, -0.5).is_err());
    }

    #[test]
    fn neumaier_recovers_small_terms() {
        let mut s = NeumaierSum::default();
        s.add(1e16);
        for _ in 0..10 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 10.0);
    }

    #[test]
    fn thread_count_does_not_change_estimates() {
        let p = gbm();
        let tab = Tableau::builtin("ri1wm").unwrap().unwrap();
        let a = simulate_weak(&p, &tab, TestFunctional::Xsq, 1.0, 0.25, 25_000, 7, ExecPolicy::Sequential).unwrap();
        let b = simulate_weak(&p, &tab, TestFunctional::Xsq, 1.0, 0.25, 25_000, 7, ExecPolicy::Parallel(Some(3))).unwrap();
        assert_eq!(a, b);
    }
}
