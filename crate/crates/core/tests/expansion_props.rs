//! Truncated expansion against closed forms, finite differences and one
//! SRK step.

use proptest::prelude::*;
use std::sync::Arc;
use weakrk::expansion::{
    expansion_coefficients, expansion_table, summed_differential, truncated_expectation, AffineOracle, ClosureOracle, DerivativeOracle,
};
use weakrk::simulate::{builtin_affine, fit_slope, srk_step, SdeProblem, Stepper, TestFunctional};
use weakrk::tableau::Tableau;
use weakrk::trees::{build_node, for_each_labelled, ColoredTree, Family, HalfInt};
use weakrk::Calculus;

fn slope(sde: &str, f: TestFunctional, p: u32) -> f64 {
    let sde = builtin_affine(sde).unwrap();
    let dts: Vec<f64> = (3..=7).map(|k| 2f64.powi(-k)).collect();
    let rows = expansion_table(&sde, f, p, &dts).unwrap();
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.dt.ln(), r.error.ln())).collect();
    fit_slope(&pts).unwrap().0
}

#[test]
fn error_exponent_is_p_plus_one() {
    let s = slope("gbm", TestFunctional::Xsq, 2);
    assert!((s - 3.0).abs() <= 0.2, "{s}");
    for (sde, f, p) in [
        ("gbm", TestFunctional::Xsq, 1),
        ("gbm", TestFunctional::Xsq, 3),
        ("gbm-strat", TestFunctional::Xsq, 2),
        ("linear2d", TestFunctional::Norm2, 2),
        ("ou", TestFunctional::Xsq, 2),
    ] {
        let s = slope(sde, f, p);
        assert!((s - f64::from(p + 1)).abs() <= 0.2, "{sde} p = {p}: {s}");
    }
}

#[test]
fn stratonovich_expansion_matches_ito_conversion() {
    for name in ["gbm-strat", "linear2d"] {
        let mut strat = builtin_affine(name).unwrap();
        strat.calculus = Calculus::Strat;
        let ito = strat.to_ito();
        for f in [TestFunctional::X, TestFunctional::Xsq, TestFunctional::Norm2] {
            let a = expansion_coefficients(&AffineOracle::new(&strat).unwrap(), &f, &strat.x0, 3, Calculus::Strat).unwrap();
            let b = expansion_coefficients(&AffineOracle::new(&ito).unwrap(), &f, &ito.x0, 3, Calculus::Ito).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{name} {f}: {a:?} vs {b:?}");
            }
        }
    }
}

#[test]
fn canonical_form_preserves_summed_differentials() {
    let sde = builtin_affine("linear2d").unwrap();
    let o = AffineOracle::new(&sde).unwrap();
    let f = TestFunctional::Norm2;
    let x = [0.4, -1.1];
    for calc in [Calculus::Ito, Calculus::Strat] {
        for_each_labelled(Family::Star(calc), HalfInt::from_int(2), &mut |parent, colors| {
            let node = build_node(parent, colors);
            let rep = ColoredTree::from_node(&node);
            let n = colors.iter().filter_map(|c| c.index).max().unwrap_or(0);
            let mut raw = 0.0;
            for code in 0..2u32.pow(n) {
                let t = ColoredTree::from_node_concrete(&node.map_indices(&|j| 1 + ((code >> (j - 1)) & 1)));
                raw += weakrk::expansion::elementary_differential(&t, &o, &f, &x).unwrap()[0];
            }
            let canon = summed_differential(&rep, &o, &f, &x).unwrap()[0];
            assert!((raw - canon).abs() <= 1e-12 * raw.abs().max(1.0), "{rep}: {raw} vs {canon}");
        });
    }
}

/// Scalar polynomial `Σ c_i x^i` as a derivative evaluator.
fn poly_derivative(c: &[f64], x: f64, dirs: &[&[f64]]) -> f64 {
    let k = dirs.len();
    let mut v = 0.0;
    for (i, ci) in c.iter().enumerate().skip(k) {
        let falling: f64 = (0..k).map(|r| (i - r) as f64).product();
        v += ci * falling * x.powi((i - k) as i32);
    }
    v * dirs.iter().map(|d| d[0]).product::<f64>()
}

const DRIFT: [f64; 3] = [0.2, -1.0, 0.5];
const DIFF: [f64; 3] = [0.05, 0.3, 0.1];

fn scalar_oracle() -> ClosureOracle {
    ClosureOracle {
        d: 1,
        m: 1,
        max_order: usize::MAX,
        drift: Arc::new(|x, dirs, out| out[0] = poly_derivative(&DRIFT, x[0], dirs)),
        diffusion: Arc::new(|_, x, dirs, out| out[0] = poly_derivative(&DIFF, x[0], dirs)),
    }
}

fn scalar_problem() -> SdeProblem {
    SdeProblem {
        name: "poly".into(),
        d: 1,
        m: 1,
        calculus: Calculus::Ito,
        drift: Arc::new(|_, x, out| out[0] = poly_derivative(&DRIFT, x[0], &[])),
        diffusion: Arc::new(|_, _, x, out| out[0] = poly_derivative(&DIFF, x[0], &[])),
        diffusion_jacobian: None,
        x0: vec![0.8],
        exact: None,
        affine: None,
    }
}

#[test]
fn one_ri1wm_step_matches_the_expansion_to_third_order() {
    let prob = scalar_problem();
    let oracle = scalar_oracle();
    let tab = Tableau::builtin("ri1wm").unwrap().unwrap().instantiate(1).unwrap();
    let support = tab.model().support(0).to_vec();
    let pts: Vec<(f64, f64)> = (2..=7)
        .map(|k| {
            let h = 2f64.powi(-k);
            let st = Stepper::new(&tab, h).unwrap();
            let mean: f64 = support
                .iter()
                .map(|(v, q)| {
                    let y = srk_step(&st, &prob, 0.0, &prob.x0, &[v.to_f64()]).unwrap();
                    weakrk::rational::q_to_f64(q) * y[0] * y[0]
                })
                .sum();
            let series = truncated_expectation(&oracle, &TestFunctional::Xsq, &prob.x0, h, 2, Calculus::Ito).unwrap();
            (h.ln(), (mean - series).abs().ln())
        })
        .collect();
    let (s, _) = fit_slope(&pts).unwrap();
    assert!((s - 3.0).abs() <= 0.2, "slope {s}");
}

fn central_difference(o: &ClosureOracle, x: f64, dirs: &[f64], diffusion: bool) -> f64 {
    // nested central differences of the order-0 evaluator
    let eval = |x: f64| {
        let mut out = [0.0];
        if diffusion {
            o.diffusion(0, &[x], &[], &mut out)
        } else {
            o.drift(&[x], &[], &mut out)
        }
        out[0]
    };
    let e = 1e-3;
    match dirs.len() {
        1 => (eval(x + e * dirs[0]) - eval(x - e * dirs[0])) / (2.0 * e),
        2 => {
            let (u, v) = (dirs[0] * e, dirs[1] * e);
            (eval(x + u + v) - eval(x + u - v) - eval(x - u + v) + eval(x - u - v)) / (4.0 * e * e)
        }
        _ => unreachable!(),
    }
}

proptest! {
    #[test]
    fn oracle_matches_finite_differences(x in -2.0f64..2.0, u in -1.0f64..1.0, v in -1.0f64..1.0, diffusion in any::<bool>()) {
        let o = scalar_oracle();
        let mut out = [0.0];
        let call = |dirs: &[&[f64]], out: &mut [f64]| if diffusion { o.diffusion(0, &[x], dirs, out) } else { o.drift(&[x], dirs, out) };
        call(&[&[u]], &mut out);
        prop_assert!((out[0] - central_difference(&o, x, &[u], diffusion)).abs() < 1e-5);
        call(&[&[u], &[v]], &mut out);
        prop_assert!((out[0] - central_difference(&o, x, &[u, v], diffusion)).abs() < 1e-5);
    }

    #[test]
    fn affine_forms_are_symmetric(a in prop::collection::vec(-1.0f64..1.0, 2), b in prop::collection::vec(-1.0f64..1.0, 2)) {
        let sde = builtin_affine("linear2d").unwrap();
        let o = AffineOracle::new(&sde).unwrap();
        let x = [0.3, 0.9];
        let f = TestFunctional::Norm2;
        prop_assert!((f.derivative(&x, &[&a, &b]) - f.derivative(&x, &[&b, &a])).abs() < 1e-15);
        let (mut p, mut q) = ([0.0; 2], [0.0; 2]);
        o.drift(&x, &[&a, &b], &mut p);
        o.drift(&x, &[&b, &a], &mut q);
        prop_assert_eq!(p, q);
    }
}
