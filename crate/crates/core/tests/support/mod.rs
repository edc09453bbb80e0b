//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

/// Path of a golden file.
pub fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden").join(name)
}

/// Tab separated rows of a golden file, skipping comments and the header.
pub fn rows(name: &str) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(golden(name)).expect("golden file");
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .skip(1)
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

use std::collections::BTreeMap;
use weakrk::rational::{qi, Q};
use weakrk::rvmodel::{HalfPowerPoly, ModelInstance, Surd};

/// `E(poly)` by summing over every joint value of the primitive symbols,
/// as exact surds keyed by the power of h^(1/2).
pub fn brute_force_expectation(model: &ModelInstance, poly: &HalfPowerPoly) -> BTreeMap<i32, Surd> {
    let n = model.symbol_count();
    let mut out: BTreeMap<i32, Surd> = BTreeMap::new();
    let mut idx = vec![0usize; n];
    loop {
        let mut prob = qi(1);
        for (s, &k) in idx.iter().enumerate() {
            prob *= &model.support(s as u32)[k].1;
        }
        for (e, mono, q) in poly.terms() {
            let mut v = Surd::rational(q.clone() * &prob);
            for &(s, k) in mono {
                v = v.mul(&model.support(s)[idx[s as usize]].0.pow(k));
            }
            let slot = out.entry(e).or_insert_with(|| Surd::rational(Q::from_integer(0.into())));
            *slot = slot.add(&v);
        }
        let mut s = 0;
        loop {
            if s == n {
                out.retain(|_, v| !v.is_zero());
                return out;
            }
            idx[s] += 1;
            if idx[s] < model.support(s as u32).len() {
                break;
            }
            idx[s] = 0;
            s += 1;
        }
    }
}

/// Whether a symbolic expectation equals the brute-force one exactly.
pub fn expectation_matches(model: &ModelInstance, poly: &HalfPowerPoly) -> Result<(), String> {
    let symbolic = model.expect(poly).map_err(|e| e.to_string())?;
    let brute = brute_force_expectation(model, poly);
    let mut halves: Vec<i32> = brute.keys().copied().collect();
    halves.extend(symbolic.terms().map(|(e, _, _)| e));
    halves.sort_unstable();
    halves.dedup();
    for e in halves {
        let want = brute.get(&e).map(|s| s.as_rational().ok_or(format!("irrational brute-force coefficient {s}"))).transpose()?.unwrap_or_else(|| qi(0));
        if symbolic.coefficient(e) != want {
            return Err(format!("h^({e}/2): symbolic {} vs brute force {want}", symbolic.coefficient(e)));
        }
    }
    Ok(())
}
