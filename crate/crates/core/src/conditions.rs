//! Weak order conditions and their verification.
//!
//! Pattern mode iterates TS(Δ) trees with `ρ ≤ p + 1/2` and all correlation
//! patterns with at most `m` blocks and emits one identity per pair:
//!
//! ```text
//! α_*(t) h^ρ / (2^(s/2) ρ!)  =  α_Δ(t) β(t) γ(t) E(Φ_S(t)) / (l - 1)!
//! ```
//!
//! compared up to terms of order `h^(p+1)`. The concrete mode bypasses β by
//! enumerating labelled trees with concrete index values and comparing the
//! exact and method coefficients per concrete tree.

use crate::rational::{factorial, fmt_q};
use crate::rvmodel::{check_moment_condition, HalfPowerPoly, MomentReport};
use crate::tableau::{phi_s, TableauInstance};
use crate::trees::{
    alpha_star_correlated, beta_of, build_node, correlate, enumerate_ts_delta, for_each_labelled, ColoredTree, CorrelationPattern, Family,
    HalfInt,
};
use crate::{Calculus, Error, Result, Q};
use num_traits::Zero;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

/// One instance of the order identity for a correlated tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderCondition {
    /// The all-distinct tree in TS(Δ).
    pub delta_tree: ColoredTree,
    pub pattern: CorrelationPattern,
    /// `delta_tree` with its indices merged by `pattern`.
    pub tree: ColoredTree,
    pub calculus: Calculus,
    pub rho: HalfInt,
    /// α_I or α_S of `tree`, summed over coinciding correlations.
    pub alpha_star: u64,
    pub alpha_delta: u64,
    pub beta: u64,
    pub gamma: u64,
    pub l: u32,
    /// Coefficient of `h^ρ` on the exact side: α_* / (2^(s/2) ρ!).
    pub lhs: Q,
    /// Factor α_Δ β γ / (l-1)! multiplying E(Φ_S(t)).
    pub rhs_factor: Q,
}

impl OrderCondition {
    /// Whether the exact side vanishes, so that E(Φ_S(t)) must vanish.
    pub fn is_homogeneous(&self) -> bool {
        self.alpha_star == 0
    }

    /// Required coefficient of `h^ρ` in E(Φ_S(t)).
    pub fn target(&self) -> Q {
        &self.lhs / &self.rhs_factor
    }

    /// Required value of E(Φ_S(t)) as text, e.g. `1/2*h^2` or `0`.
    pub fn target_text(&self) -> String {
        HalfPowerPoly::term(self.target(), self.rho.0 as i32, Vec::new()).to_string()
    }
}

fn exact_coefficient(alpha_star: u64, s: u32, rho: HalfInt) -> Q {
    if alpha_star == 0 {
        return Q::zero();
    }
    debug_assert!(s % 2 == 0 && rho.is_integer());
    Q::from_integer(alpha_star.into()) / (Q::from_integer((1u64 << (s / 2)).into()) * factorial(u64::from(rho.0 / 2)))
}

/// Generates the order conditions for weak order `p` with `m` noise terms,
/// sorted by (ρ, tree, pattern).
pub fn generate_conditions(calculus: Calculus, p: u32, m: u32) -> Result<Vec<OrderCondition>> {
    if p == 0 || m == 0 {
        return Err(Error::Domain("order p and noise dimension m must be positive".into()));
    }
    let max_rho = HalfInt(2 * p + 1);
    let alpha_star = alpha_star_correlated(calculus, HalfInt(2 * p));
    let mut out = Vec::new();
    for entry in enumerate_ts_delta(max_rho) {
        let u = entry.tree;
        for pattern in CorrelationPattern::all(u.class_count(), m as usize) {
            let t = correlate(&u, &pattern)?;
            let st = t.stats();
            let a = alpha_star.get(&t).copied().unwrap_or(0);
            let beta = beta_of(&t);
            let rhs_factor = Q::from_integer((entry.alpha_delta * beta * st.gamma).into()) / factorial(u64::from(st.l - 1));
            out.push(OrderCondition {
                delta_tree: u.clone(),
                pattern,
                tree: t,
                calculus,
                rho: st.rho,
                alpha_star: a,
                alpha_delta: entry.alpha_delta,
                beta,
                gamma: st.gamma,
                l: st.l,
                lhs: exact_coefficient(a, st.s, st.rho),
                rhs_factor,
            });
        }
    }
    out.sort_by(|x, y| (x.rho, x.tree.key(), &x.pattern).cmp(&(y.rho, y.tree.key(), &y.pattern)));
    Ok(out)
}

/// Result of checking one identity.
#[derive(Debug, Clone)]
pub struct ConditionRecord {
    /// Tree the identity is about; concrete in concrete mode.
    pub tree: ColoredTree,
    /// Source Δ tree and pattern (pattern mode only).
    pub delta_tree: Option<ColoredTree>,
    pub pattern: Option<CorrelationPattern>,
    pub rho: HalfInt,
    /// Exact-side coefficient of `h^ρ`.
    pub lhs: Q,
    /// Method-side coefficient of `h^ρ`.
    pub rhs: Q,
    /// Method side minus exact side, truncated to exponents `< p + 1`.
    pub residual: HalfPowerPoly,
    pub satisfied: bool,
    /// Exact side as a polynomial in `h`.
    pub exact: HalfPowerPoly,
    /// Method side as a polynomial in `h` (before truncation).
    pub method: HalfPowerPoly,
}

impl ConditionRecord {
    /// Residual coefficient of `h^ρ`.
    pub fn residual_at_rho(&self) -> Q {
        &self.rhs - &self.lhs
    }

    fn satisfied_to(&self, q: u32) -> bool {
        self.rho.0 > 2 * q + 1 || self.method.sub(&self.exact).truncate_below(2 * q as i32 + 2).is_zero()
    }
}

/// Result of E(z^(k,ν)ᵀ e) = 0 for one family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundednessRecord {
    pub slot: String,
    pub value: HalfPowerPoly,
    pub satisfied: bool,
}

/// Report of [`verify_tableau`] or [`concrete_coefficient_check`].
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub scheme: String,
    pub calculus: Calculus,
    pub p: u32,
    pub m: u32,
    /// `"pattern"` or `"concrete"`.
    pub mode: &'static str,
    pub records: Vec<ConditionRecord>,
    pub moment: Option<MomentReport>,
    pub boundedness: Vec<BoundednessRecord>,
}

impl VerificationReport {
    /// Whether every identity and side condition holds.
    pub fn passed(&self) -> bool {
        self.records.iter().all(|r| r.satisfied) && self.moment.as_ref().is_none_or(|m| m.passed()) && self.boundedness.iter().all(|b| b.satisfied)
    }

    /// Records that fail.
    pub fn violations(&self) -> Vec<&ConditionRecord> {
        self.records.iter().filter(|r| !r.satisfied).collect()
    }

    /// First failing record in report order.
    pub fn first_failure(&self) -> Option<&ConditionRecord> {
        self.records.iter().find(|r| !r.satisfied)
    }

    /// Largest `q ≤ p` for which every identity up to order `q` holds
    /// (0 when even the first order fails).
    pub fn max_order_passed(&self) -> u32 {
        (1..=self.p).take_while(|&q| self.records.iter().all(|r| r.satisfied_to(q))).last().unwrap_or(0)
    }

    /// CSV with one line per identity.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tree,pattern,rho,lhs,rhs,residual,verdict\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                csv_field(&r.tree.to_string()),
                csv_field(&r.pattern.as_ref().map(|p| p.to_string()).unwrap_or_else(|| "-".into())),
                r.rho,
                fmt_q(&r.lhs),
                fmt_q(&r.rhs),
                csv_field(&r.residual.to_string()),
                if r.satisfied { "ok" } else { "violated" }
            );
        }
        out
    }

    /// Aligned text table plus side conditions and a summary.
    pub fn to_text(&self) -> String {
        let rows: Vec<[String; 7]> = self
            .records
            .iter()
            .map(|r| {
                [
                    r.tree.to_string(),
                    r.pattern.as_ref().map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
                    r.rho.to_string(),
                    fmt_q(&r.lhs),
                    fmt_q(&r.rhs),
                    r.residual.to_string(),
                    if r.satisfied { "ok".into() } else { "VIOLATED".into() },
                ]
            })
            .collect();
        let header = ["tree", "pattern", "rho", "lhs", "rhs", "residual", "verdict"].map(String::from);
        let mut out = format!("scheme {} ({} calculus, p = {}, m = {}, {} mode)\n", self.scheme, self.calculus, self.p, self.m, self.mode);
        out.push_str(&align(&header, &rows));
        if let Some(mr) = &self.moment {
            let bad: Vec<&str> = mr.records.iter().filter(|r| !r.pass).map(|r| r.label.as_str()).collect();
            let _ = writeln!(out, "moment condition: {} monomials, {}", mr.records.len(), if bad.is_empty() { "ok".to_string() } else { format!("violated by {}", bad.join(", ")) });
        }
        for b in &self.boundedness {
            let _ = writeln!(out, "E(z{}^T e) = {}: {}", b.slot, b.value, if b.satisfied { "ok" } else { "VIOLATED" });
        }
        let violations = self.violations().len();
        let _ = writeln!(out, "{} identities, {} violated, max order passed {}", self.records.len(), violations, self.max_order_passed());
        if let Some(f) = self.first_failure() {
            let _ = writeln!(out, "first failure: {} {}", f.tree, f.pattern.as_ref().map(|p| p.to_string()).unwrap_or_default());
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Left-aligned columns separated by two spaces.
pub fn align<const N: usize>(header: &[String; N], rows: &[[String; N]]) -> String {
    let mut w = [0usize; N];
    for r in std::iter::once(header).chain(rows.iter()) {
        for (i, c) in r.iter().enumerate() {
            w[i] = w[i].max(c.chars().count());
        }
    }
    let mut out = String::new();
    for r in std::iter::once(header).chain(rows.iter()) {
        let cells: Vec<String> = r.iter().enumerate().map(|(i, c)| format!("{c:<width$}", width = w[i])).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

fn boundedness(tab: &TableauInstance) -> Result<Vec<BoundednessRecord>> {
    let mut out = Vec::new();
    for slot in 1..tab.slot_count() {
        let sum = tab.z(slot).iter().fold(HalfPowerPoly::zero(), |acc, z| acc.add(z));
        let value = tab.model().expect(&sum)?;
        out.push(BoundednessRecord { slot: tab.slot_name(slot), satisfied: value.is_zero(), value });
    }
    Ok(out)
}

fn expect_phi(tree: &ColoredTree, tab: &TableauInstance) -> Result<HalfPowerPoly> {
    let w = phi_s(tree, tab).map_err(|e| attach(e, tree))?;
    tab.model().expect(&w.expr).map_err(|e| attach(e, tree))
}

fn attach(e: Error, tree: &ColoredTree) -> Error {
    match e {
        Error::Model(msg) => Error::Model(format!("{msg} (tree {tree})")),
        Error::Domain(msg) => Error::Domain(format!("{msg} (tree {tree})")),
        other => other,
    }
}

/// Evaluates every generated condition for the tableau, plus the moment
/// condition (total power up to `2p + 2`) and E(z^(k,ν)ᵀ e) = 0.
pub fn verify_tableau(tab: &TableauInstance, calculus: Calculus, p: u32) -> Result<VerificationReport> {
    let m = tab.m();
    let conditions = generate_conditions(calculus, p, m)?;
    let cut = 2 * p as i32 + 2;
    let mut cache: HashMap<ColoredTree, HalfPowerPoly> = HashMap::new();
    let mut records = Vec::with_capacity(conditions.len());
    for c in conditions {
        let values: Vec<u32> = (1..=c.tree.class_count() as u32).collect();
        let concrete = c.tree.assign(&values)?;
        let e = match cache.get(&concrete) {
            Some(e) => e.clone(),
            None => {
                let e = expect_phi(&concrete, tab)?;
                cache.insert(concrete.clone(), e.clone());
                e
            }
        };
        let halves = c.rho.0 as i32;
        let method = e.scale(&c.rhs_factor);
        let exact = HalfPowerPoly::term(c.lhs.clone(), halves, Vec::new());
        let residual = method.sub(&exact).truncate_below(cut);
        records.push(ConditionRecord {
            tree: c.tree,
            delta_tree: Some(c.delta_tree),
            pattern: Some(c.pattern),
            rho: c.rho,
            lhs: c.lhs,
            rhs: method.coefficient(halves),
            satisfied: residual.is_zero(),
            residual,
            exact,
            method,
        });
    }
    let moment = check_moment_condition(tab.model(), 2 * p + 2)?;
    Ok(VerificationReport {
        scheme: tab.name().to_string(),
        calculus,
        p,
        m,
        mode: "pattern",
        records,
        moment: Some(moment),
        boundedness: boundedness(tab)?,
    })
}

fn all_assignments(n: usize, m: u32) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                (1..=m).map(move |x| {
                    let mut w = v.clone();
                    w.push(x);
                    w
                })
            })
            .collect();
    }
    out
}

/// Concrete-index oracle: compares, for every concrete tree, the exact
/// coefficient Σ 1/(2^(s/2) ρ!) over labelled TS(*) trees and index values
/// with the method coefficient Σ γ E(Φ_S) / (l-1)! over labelled TS(Δ)
/// trees and index values, up to terms of order `h^(p+1)`.
pub fn concrete_coefficient_check(tab: &TableauInstance, calculus: Calculus, p: u32) -> Result<VerificationReport> {
    let m = tab.m();
    if p == 0 {
        return Err(Error::Domain("order p must be positive".into()));
    }
    let mut exact_counts: BTreeMap<ColoredTree, u64> = BTreeMap::new();
    let mut assign_cache: HashMap<usize, Vec<Vec<u32>>> = HashMap::new();
    for_each_labelled(Family::Star(calculus), HalfInt(2 * p), &mut |parent, colors| {
        let node = build_node(parent, colors);
        let n = colors.iter().filter_map(|c| c.index).max().unwrap_or(0) as usize;
        for v in assign_cache.entry(n).or_insert_with(|| all_assignments(n, m)).iter() {
            let t = ColoredTree::from_node_concrete(&node.map_indices(&|j| v[j as usize - 1]));
            *exact_counts.entry(t).or_default() += 1;
        }
    });
    let mut method_counts: BTreeMap<ColoredTree, u64> = BTreeMap::new();
    for_each_labelled(Family::Delta, HalfInt(2 * p + 1), &mut |parent, colors| {
        let node = build_node(parent, colors);
        let n = colors.iter().filter_map(|c| c.index).max().unwrap_or(0) as usize;
        for v in assign_cache.entry(n).or_insert_with(|| all_assignments(n, m)).iter() {
            let t = ColoredTree::from_node_concrete(&node.map_indices(&|j| v[j as usize - 1]));
            *method_counts.entry(t).or_default() += 1;
        }
    });
    let cut = 2 * p as i32 + 2;
    let mut records = Vec::new();
    let mut trees: Vec<ColoredTree> = method_counts.keys().chain(exact_counts.keys()).cloned().collect();
    trees.sort();
    trees.dedup();
    for t in trees {
        let st = t.stats();
        let halves = st.rho.0 as i32;
        let a = exact_counts.get(&t).copied().unwrap_or(0);
        let exact = HalfPowerPoly::term(exact_coefficient(a, st.s, st.rho), halves, Vec::new());
        let count = method_counts.get(&t).copied().unwrap_or(0);
        let method = if count == 0 {
            HalfPowerPoly::zero()
        } else {
            expect_phi(&t, tab)?.scale(&(Q::from_integer((count * st.gamma).into()) / factorial(u64::from(st.l - 1))))
        };
        let residual = method.sub(&exact).truncate_below(cut);
        records.push(ConditionRecord {
            tree: t,
            delta_tree: None,
            pattern: None,
            rho: st.rho,
            lhs: exact.coefficient(halves),
            rhs: method.coefficient(halves),
            satisfied: residual.is_zero(),
            residual,
            exact,
            method,
        });
    }
    Ok(VerificationReport {
        scheme: tab.name().to_string(),
        calculus,
        p,
        m,
        mode: "concrete",
        records,
        moment: None,
        boundedness: Vec::new(),
    })
}

/// CSV of generated conditions.
pub fn conditions_csv(conds: &[OrderCondition]) -> String {
    let mut out = String::from("tree,delta_tree,pattern,rho,alpha_star,alpha_delta,beta,gamma,lhs,rhs_factor,target\n");
    for c in conds {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&c.tree.to_string()),
            csv_field(&c.delta_tree.to_string()),
            c.pattern,
            c.rho,
            c.alpha_star,
            c.alpha_delta,
            c.beta,
            c.gamma,
            fmt_q(&c.lhs),
            fmt_q(&c.rhs_factor),
            csv_field(&c.target_text())
        );
    }
    out
}

/// Aligned text table of generated conditions.
pub fn conditions_text(conds: &[OrderCondition]) -> String {
    let header = ["tree", "pattern", "rho", "alpha*", "alphaD", "beta", "gamma", "E(Phi_S) target"].map(String::from);
    let rows: Vec<[String; 8]> = conds
        .iter()
        .map(|c| {
            [
                c.tree.to_string(),
                c.pattern.to_string(),
                c.rho.to_string(),
                c.alpha_star.to_string(),
                c.alpha_delta.to_string(),
                c.beta.to_string(),
                c.gamma.to_string(),
                c.target_text(),
            ]
        })
        .collect();
    align(&header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{qi, qr};
    use crate::tableau::Tableau;

    fn find<'a>(cs: &'a [OrderCondition], tree: &str, pattern: &str) -> &'a OrderCondition {
        let t: ColoredTree = tree.parse().unwrap();
        let p: CorrelationPattern = pattern.parse().unwrap();
        cs.iter().find(|c| c.delta_tree == t && c.pattern == p).unwrap_or_else(|| panic!("{tree} {pattern}"))
    }

    #[test]
    fn worked_examples() {
        let cs = generate_conditions(Calculus::Ito, 2, 2).unwrap();
        let a = find(&cs, "(s_j1,[s_j2])", "j1=j2");
        assert_eq!(a.target(), qr(1, 2));
        let a0 = find(&cs, "(s_j1,[s_j2])", "j1;j2");
        assert!(a0.is_homogeneous());
        assert_eq!(a0.target(), qi(0));
        let b = find(&cs, "(s_j1,s_j2,s_j3,s_j4)", "j1=j2;j3=j4");
        assert_eq!(b.target(), qi(1));
        assert_eq!(b.target_text(), "h^2");
        let g = cs.iter().find(|c| c.rho == HalfInt(0)).unwrap();
        assert_eq!(g.target(), qi(1));
    }

    #[test]
    fn euler_first_order_only() {
        let inst = Tableau::builtin("euler").unwrap().unwrap().instantiate(1).unwrap();
        assert!(verify_tableau(&inst, Calculus::Ito, 1).unwrap().passed());
        let r2 = verify_tableau(&inst, Calculus::Ito, 2).unwrap();
        assert!(!r2.passed());
        assert_eq!(r2.max_order_passed(), 1);
    }

    #[test]
    fn beta_is_one_for_single_noise() {
        for c in generate_conditions(Calculus::Strat, 2, 1).unwrap() {
            assert_eq!(c.beta, 1, "{}", c.tree);
        }
    }
}
