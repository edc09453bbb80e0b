//! SRK coefficient sets keyed by index patterns, their expansion for a
//! concrete noise dimension, and the elementary weights `Φ_S(t)`.
//!
//! A scheme file is JSON. Coefficient blocks are rules: each rule names a
//! coefficient kind (`alpha`, `gamma`, `A`, `B`), the row slot and column
//! slot as index patterns, optional index constraints, a weight expression
//! (the random variable `θ_ι` multiplying the block) and the exact values.
//!
//! ```json
//! {"coef": "B", "row": "k,l", "col": "l,l", "where": ["k!=l"],
//!  "weight": "sqrt(h)", "values": [[], ["1"], ["-1", "0"]]}
//! ```
//!
//! The slot `"0"` is the deterministic slot `(0,0)`; any other slot is a
//! family pattern `(k, ν)` whose first symbol is the diffusion index `k`.
//! Rules with different weights add up; two rules with the same weight
//! that hit the same slot must agree.

use crate::rational::{fmt_q, parse_q, qi};
use crate::rvmodel::{HalfPowerPoly, IndexPattern, ModelInstance, ModelSpec, RandomVariableModel};
use crate::trees::{ColoredTree, Node, NodeKind};
use crate::{Calculus, Error, Result, Q};
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Values of one coefficient block: a vector or lower-triangular rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefValues {
    Vector(Vec<String>),
    Matrix(Vec<Vec<String>>),
}

/// Kind of coefficient a rule defines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoefKind {
    /// Drift weights α (vector, weight `h`).
    #[serde(rename = "alpha")]
    Alpha,
    /// Diffusion weights γ^(ι) (vector, weight θ_ι).
    #[serde(rename = "gamma")]
    Gamma,
    /// Drift stage matrix A (weight `h`).
    #[serde(rename = "A")]
    A,
    /// Diffusion stage matrix B^(ι) (weight θ_ι).
    #[serde(rename = "B")]
    B,
}

/// One pattern-keyed coefficient rule as stored in a scheme file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoefRule {
    pub coef: CoefKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col: Option<String>,
    #[serde(default, rename = "where", skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    pub values: CoefValues,
}

/// Serialized scheme file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeFile {
    pub name: String,
    pub calculus: Calculus,
    pub claimed_order: u32,
    pub stages: usize,
    /// Family patterns `(k, ν)`, e.g. `"k,l"`.
    pub families: Vec<String>,
    pub coefficients: Vec<CoefRule>,
    pub rv_model: ModelSpec,
}

#[derive(Debug, Clone)]
enum Slot {
    Det,
    Family(IndexPattern),
}

#[derive(Debug, Clone)]
struct Rule {
    kind: CoefKind,
    row: Slot,
    col: Slot,
    weight: Option<crate::rvmodel::Expr>,
    /// Dense `stages × stages` (or `1 × stages` for vectors) values.
    values: Vec<Vec<Q>>,
    explicit: bool,
}

/// Full SRK coefficient set with its random-variable model.
#[derive(Debug, Clone)]
pub struct Tableau {
    file: SchemeFile,
    families: Vec<IndexPattern>,
    rules: Vec<Rule>,
    model: RandomVariableModel,
}

const RI1WM: &str = include_str!("../schemes/ri1wm.json");
const RS1WM: &str = include_str!("../schemes/rs1wm.json");
const EULER: &str = include_str!("../schemes/euler.json");

/// Names accepted by [`Tableau::builtin`].
pub const BUILTIN_SCHEMES: [&str; 3] = ["ri1wm", "rs1wm", "euler"];

fn split_pattern(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).collect()
}

impl Tableau {
    /// Parses and validates a scheme file.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemeFile = serde_json::from_str(text)?;
        Self::from_file(file)
    }

    /// Validates a parsed scheme file.
    pub fn from_file(file: SchemeFile) -> Result<Self> {
        let s = file.stages;
        if s == 0 {
            return Err(Error::scheme("stages", "must be positive"));
        }
        let model = RandomVariableModel::from_spec(file.rv_model.clone())?;
        let mut families = Vec::new();
        for (i, f) in file.families.iter().enumerate() {
            let vars = split_pattern(f);
            if vars.len() < 2 {
                return Err(Error::scheme(format!("families[{i}]"), "a family pattern needs the index k and at least one ν index"));
            }
            families.push(IndexPattern::new(&vars, &[]).map_err(|e| Error::scheme(format!("families[{i}]"), e.to_string()))?);
        }
        let mut rules = Vec::new();
        for (i, r) in file.coefficients.iter().enumerate() {
            rules.push(Self::parse_rule(i, r, s)?);
        }
        Ok(Tableau { file, families, rules, model })
    }

    fn parse_rule(i: usize, r: &CoefRule, s: usize) -> Result<Rule> {
        let field = |f: &str| format!("coefficients[{i}].{f}");
        let slot = |text: &Option<String>, name: &str, required: bool| -> Result<Slot> {
            match text.as_deref() {
                None if required => Err(Error::scheme(field(name), "missing")),
                None | Some("0") => Ok(Slot::Det),
                Some(p) => Ok(Slot::Family(IndexPattern::new(&split_pattern(p), &[]).map_err(|e| Error::scheme(field(name), e.to_string()))?)),
            }
        };
        let (row, col) = match r.coef {
            CoefKind::Alpha => {
                if r.row.is_some() || r.col.is_some() {
                    return Err(Error::scheme(field("row"), "alpha has no row or column slot"));
                }
                (Slot::Det, Slot::Det)
            }
            CoefKind::Gamma => {
                if r.col.is_some() {
                    return Err(Error::scheme(field("col"), "gamma has no column slot"));
                }
                let row = slot(&r.row, "row", true)?;
                if matches!(row, Slot::Det) {
                    return Err(Error::scheme(field("row"), "gamma rows are families (k,ν)"));
                }
                (row, Slot::Det)
            }
            CoefKind::A => {
                if r.col.is_some() {
                    return Err(Error::scheme(field("col"), "A always has the column slot 0"));
                }
                (slot(&r.row, "row", true)?, Slot::Det)
            }
            CoefKind::B => {
                let col = slot(&r.col, "col", true)?;
                if matches!(col, Slot::Det) {
                    return Err(Error::scheme(field("col"), "B columns are families (r,μ)"));
                }
                (slot(&r.row, "row", true)?, col)
            }
        };
        let weight = match (r.coef, &r.weight) {
            (CoefKind::Alpha | CoefKind::A, Some(_)) => return Err(Error::scheme(field("weight"), "alpha and A are always weighted by h")),
            (CoefKind::Alpha | CoefKind::A, None) => None,
            (_, None) => return Err(Error::scheme(field("weight"), "gamma and B need a weight expression")),
            (_, Some(w)) => Some(crate::rvmodel::Expr::parse(w).map_err(|e| Error::scheme(field("weight"), e.to_string()))?),
        };
        // constraints are checked once both row and column are bound
        let constraints = r.constraints.clone();
        let attach = |slot: Slot| -> Result<Slot> {
            Ok(match slot {
                Slot::Family(p) if !constraints.is_empty() => Slot::Family(p.with_constraints(&constraints).map_err(|e| Error::scheme(field("where"), e.to_string()))?),
                other => other,
            })
        };
        let (row, col) = if matches!(col, Slot::Family(_)) { (row, attach(col)?) } else { (attach(row)?, col) };
        if !constraints.is_empty() && matches!((&row, &col), (Slot::Det, Slot::Det)) {
            return Err(Error::scheme(field("where"), "constraints need an index pattern"));
        }
        let parse_entry = |x: &String| parse_q(x).map_err(|e| Error::scheme(field("values"), e.to_string()));
        let vector = matches!(r.coef, CoefKind::Alpha | CoefKind::Gamma);
        let mut explicit = true;
        let values = match (&r.values, vector) {
            (CoefValues::Vector(v), true) => {
                if v.len() != s {
                    return Err(Error::scheme(field("values"), format!("expected {s} entries, found {}", v.len())));
                }
                vec![v.iter().map(parse_entry).collect::<Result<Vec<Q>>>()?]
            }
            (CoefValues::Matrix(rows), false) => {
                if rows.len() != s {
                    return Err(Error::scheme(field("values"), format!("expected {s} rows, found {}", rows.len())));
                }
                let mut out = vec![vec![Q::zero(); s]; s];
                for (ri, row) in rows.iter().enumerate() {
                    if row.len() > s {
                        return Err(Error::scheme(field("values"), format!("row {} has more than {s} entries", ri + 1)));
                    }
                    for (ci, x) in row.iter().enumerate() {
                        let q = parse_entry(x)?;
                        if ci >= ri && !q.is_zero() {
                            explicit = false;
                        }
                        out[ri][ci] = q;
                    }
                }
                out
            }
            (_, true) => return Err(Error::scheme(field("values"), "expected a vector of stage values")),
            (_, false) => return Err(Error::scheme(field("values"), "expected lower-triangular matrix rows")),
        };
        Ok(Rule { kind: r.coef, row, col, weight, values, explicit })
    }

    /// Loads a scheme from a path or a built-in name (`ri1wm`, `rs1wm`, `euler`).
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Some(t) = Self::builtin(name_or_path) {
            return t;
        }
        let p = Path::new(name_or_path);
        let text = std::fs::read_to_string(p).map_err(|e| Error::scheme(name_or_path, format!("cannot read scheme file: {e}")))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Scheme { field, message } => Error::Scheme { field: format!("{name_or_path}: {field}"), message },
            other => Error::scheme(name_or_path, other.to_string()),
        })
    }

    /// A shipped scheme by name.
    pub fn builtin(name: &str) -> Option<Result<Self>> {
        let text = match name.to_ascii_lowercase().as_str() {
            "ri1wm" => RI1WM,
            "rs1wm" => RS1WM,
            "euler" | "euler-maruyama" | "em" => EULER,
            _ => return None,
        };
        Some(Self::from_json(text))
    }

    /// Serialized form (pretty JSON); parsing it gives an equal tableau.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("scheme files serialize")
    }

    /// The scheme file this tableau was built from.
    pub fn file(&self) -> &SchemeFile {
        &self.file
    }

    /// Scheme name.
    pub fn name(&self) -> &str {
        &self.file.name
    }

    /// Calculus the scheme is designed for.
    pub fn calculus(&self) -> Calculus {
        self.file.calculus
    }

    /// Number of stages.
    pub fn stages(&self) -> usize {
        self.file.stages
    }

    /// Whether all stage matrices are strictly lower triangular.
    pub fn is_explicit(&self) -> bool {
        self.rules.iter().all(|r| r.explicit)
    }

    /// Random-variable model of the scheme.
    pub fn model(&self) -> &RandomVariableModel {
        &self.model
    }

    /// Expands all pattern rules for noise dimension `m`.
    pub fn instantiate(&self, m: u32) -> Result<TableauInstance> {
        let model = self.model.instantiate(m)?;
        self.instantiate_with(&model)
    }

    /// Expands all pattern rules against an existing model instance.
    pub fn instantiate_with(&self, model: &ModelInstance) -> Result<TableauInstance> {
        let m = model.m();
        let s = self.stages();
        let mut families: Vec<(u32, Vec<u32>)> = Vec::new();
        for p in &self.families {
            for idx in p.instances(m)? {
                let f = (idx[0], idx[1..].to_vec());
                if !families.contains(&f) {
                    families.push(f);
                }
            }
        }
        families.sort();
        let nf = families.len();
        let zero_vec = || vec![HalfPowerPoly::zero(); s];
        let zero_mat = || vec![vec![HalfPowerPoly::zero(); s]; s];
        let mut inst = TableauInstance {
            name: self.name().to_string(),
            stages: s,
            m,
            explicit: self.is_explicit(),
            families: families.clone(),
            fam_of_k: (1..=m).map(|k| (0..nf).filter(|&i| families[i].0 == k).collect()).collect(),
            z: vec![zero_vec(); nf + 1],
            zz: vec![vec![zero_mat(); nf + 1]; nf + 1],
            c: vec![vec![Q::zero(); s]; nf + 1],
            model: model.clone(),
        };
        // slot 0 is (0,0); slot i + 1 is family i
        let slot_keys: Vec<Option<Vec<u32>>> = std::iter::once(None).chain(families.iter().map(|(k, nu)| {
            let mut v = vec![*k];
            v.extend(nu);
            Some(v)
        })).collect();
        let mut seen: HashMap<(CoefKind, usize, usize, HalfPowerPoly), usize> = HashMap::new();
        for (ri, rule) in self.rules.iter().enumerate() {
            for (rs, rkey) in slot_keys.iter().enumerate() {
                for (cs, ckey) in slot_keys.iter().enumerate() {
                    let mut b = HashMap::new();
                    let ok = Self::slot_matches(&rule.row, rkey, &mut b)? && Self::slot_matches(&rule.col, ckey, &mut b)? && {
                        let r_ok = match &rule.row {
                            Slot::Family(p) => p.constraints_hold(&b)?,
                            Slot::Det => true,
                        };
                        let c_ok = match &rule.col {
                            Slot::Family(p) => p.constraints_hold(&b)?,
                            Slot::Det => true,
                        };
                        r_ok && c_ok
                    };
                    if !ok {
                        continue;
                    }
                    let weight = match &rule.weight {
                        None => HalfPowerPoly::h_pow(2),
                        Some(w) => model.eval(w, &b).map_err(|e| Error::scheme(format!("coefficients[{ri}].weight"), e.to_string()))?,
                    };
                    let key = (rule.kind, rs, cs, weight.clone());
                    if let Some(&prev) = seen.get(&key) {
                        if self.rules[prev].values != rule.values {
                            return Err(Error::scheme(
                                format!("coefficients[{ri}]"),
                                format!("conflicts with coefficients[{prev}] at slot {}", slot_label(rkey, ckey)),
                            ));
                        }
                        continue;
                    }
                    seen.insert(key, ri);
                    match rule.kind {
                        CoefKind::Alpha | CoefKind::Gamma => {
                            for i in 0..s {
                                let term = weight.scale(&rule.values[0][i]);
                                inst.z[rs][i].add_assign(&term);
                            }
                        }
                        CoefKind::A | CoefKind::B => {
                            for i in 0..s {
                                for j in 0..s {
                                    if !rule.values[i][j].is_zero() {
                                        inst.zz[rs][cs][i][j].add_assign(&weight.scale(&rule.values[i][j]));
                                    }
                                }
                            }
                            if rule.kind == CoefKind::A {
                                for i in 0..s {
                                    let row_sum: Q = rule.values[i].iter().sum();
                                    inst.c[rs][i] += row_sum;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(inst)
    }

    fn slot_matches(slot: &Slot, key: &Option<Vec<u32>>, b: &mut HashMap<String, u32>) -> Result<bool> {
        match (slot, key) {
            (Slot::Det, None) => Ok(true),
            (Slot::Family(p), Some(v)) => p.bind(v, b),
            _ => Ok(false),
        }
    }
}

fn slot_label(r: &Option<Vec<u32>>, c: &Option<Vec<u32>>) -> String {
    let f = |k: &Option<Vec<u32>>| match k {
        None => "(0,0)".to_string(),
        Some(v) => format!("({})", v.iter().map(u32::to_string).collect::<Vec<_>>().join(",")),
    };
    format!("{},{}", f(r), f(c))
}

/// Coefficient arrays expanded for a fixed noise dimension `m`.
///
/// Slot 0 is `(0,0)`; slot `i + 1` is family `families()[i]`. Entries are
/// the full weights `z_i` and `Z_ij` as polynomials in the primitive random
/// variables, e.g. `Z^(0,0),(0,0) = A h` and `Z^(k,ν),(r,μ) = Σ_ι B^(ι) θ_ι`.
#[derive(Debug, Clone)]
pub struct TableauInstance {
    name: String,
    stages: usize,
    m: u32,
    explicit: bool,
    families: Vec<(u32, Vec<u32>)>,
    fam_of_k: Vec<Vec<usize>>,
    z: Vec<Vec<HalfPowerPoly>>,
    zz: Vec<Vec<Vec<Vec<HalfPowerPoly>>>>,
    c: Vec<Vec<Q>>,
    model: ModelInstance,
}

impl TableauInstance {
    /// Scheme name.
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of stages.
    pub fn stages(&self) -> usize {
        self.stages
    }

    /// Noise dimension.
    pub fn m(&self) -> u32 {
        self.m
    }

    /// Whether the stage matrices are strictly lower triangular.
    pub fn is_explicit(&self) -> bool {
        self.explicit
    }

    /// Families `(k, ν)` in slot order (slot `i + 1`).
    pub fn families(&self) -> &[(u32, Vec<u32>)] {
        &self.families
    }

    /// Slots of the families with diffusion index `k`.
    pub fn family_slots(&self, k: u32) -> Vec<usize> {
        self.fam_of_k.get(k as usize - 1).map(|v| v.iter().map(|i| i + 1).collect()).unwrap_or_default()
    }

    /// Diffusion index of a family slot (0 for the deterministic slot).
    pub fn slot_index(&self, slot: usize) -> u32 {
        if slot == 0 {
            0
        } else {
            self.families[slot - 1].0
        }
    }

    /// Number of slots (`1 + families`).
    pub fn slot_count(&self) -> usize {
        self.families.len() + 1
    }

    /// Weight vector `z^(slot)`.
    pub fn z(&self, slot: usize) -> &[HalfPowerPoly] {
        &self.z[slot]
    }

    /// Weight matrix `Z^(row),(col)`.
    pub fn zz(&self, row: usize, col: usize) -> &[Vec<HalfPowerPoly>] {
        &self.zz[row][col]
    }

    /// Time weights `c^(slot) = A^(slot),(0,0) e`.
    pub fn c(&self, slot: usize) -> &[Q] {
        &self.c[slot]
    }

    /// The model instance the weights are written in.
    pub fn model(&self) -> &ModelInstance {
        &self.model
    }

    /// Human-readable slot label such as `(0,0)` or `(1,2)`.
    pub fn slot_name(&self, slot: usize) -> String {
        if slot == 0 {
            "(0,0)".into()
        } else {
            let (k, nu) = &self.families[slot - 1];
            let mut v = vec![k.to_string()];
            v.extend(nu.iter().map(u32::to_string));
            format!("({})", v.join(","))
        }
    }

    /// Coefficient table as text, one nonzero entry per line.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for sl in 0..self.slot_count() {
            for (i, p) in self.z[sl].iter().enumerate() {
                if !p.is_zero() {
                    out.push_str(&format!("z{}[{}] = {}\n", self.slot_name(sl), i + 1, self.model.display(p)));
                }
            }
        }
        for r in 0..self.slot_count() {
            for cl in 0..self.slot_count() {
                for i in 0..self.stages {
                    for j in 0..self.stages {
                        let p = &self.zz[r][cl][i][j];
                        if !p.is_zero() {
                            out.push_str(&format!("Z{},{}[{},{}] = {}\n", self.slot_name(r), self.slot_name(cl), i + 1, j + 1, self.model.display(p)));
                        }
                    }
                }
            }
        }
        for sl in 0..self.slot_count() {
            if self.c[sl].iter().any(|q| !q.is_zero()) {
                let cs: Vec<String> = self.c[sl].iter().map(fmt_q).collect();
                out.push_str(&format!("c{} = ({})\n", self.slot_name(sl), cs.join(", ")));
            }
        }
        out
    }
}

/// Elementary weight of a concrete tree.
#[derive(Debug, Clone)]
pub struct ElementaryWeight {
    pub tree: ColoredTree,
    pub expr: HalfPowerPoly,
}

/// Elementary weight `Φ_S(t)` of a concrete tree with a γ root.
pub fn phi_s(t: &ColoredTree, tab: &TableauInstance) -> Result<ElementaryWeight> {
    if !t.has_gamma_root() {
        return Err(Error::Domain(format!("Φ_S needs a tree with γ root, got {t}")));
    }
    if t.stats().s > 0 && !t.is_concrete() {
        return Err(Error::Domain(format!("tree {t} carries index variables; assign concrete values first")));
    }
    let mut memo: HashMap<(&Node, usize), Vec<HalfPowerPoly>> = HashMap::new();
    let mut expr = HalfPowerPoly::constant(qi(1));
    for child in &t.root().children {
        let mut factor = HalfPowerPoly::zero();
        for slot in child_slots(child, tab)? {
            let w = psi(child, slot, tab, &mut memo)?;
            for (zi, wi) in tab.z(slot).iter().zip(&w) {
                if !zi.is_zero() && !wi.is_zero() {
                    factor.add_assign(&zi.mul(wi));
                }
            }
        }
        expr = expr.mul(&factor);
        if expr.is_zero() {
            break;
        }
    }
    Ok(ElementaryWeight { tree: t.clone(), expr })
}

fn child_slots(n: &Node, tab: &TableauInstance) -> Result<Vec<usize>> {
    match n.color.kind {
        NodeKind::Det => Ok(vec![0]),
        NodeKind::Stoch => {
            let j = n.color.index.expect("σ nodes carry an index");
            if j == 0 || j > tab.m() {
                return Err(Error::Domain(format!("index {j} outside 1..{}", tab.m())));
            }
            Ok(tab.family_slots(j))
        }
        NodeKind::Root => Err(Error::Structural("γ node below the root".into())),
    }
}

/// Stage vector `Ψ^(slot)(n)`: component-wise product over the children of
/// `n` of `Σ_slot' Z^(slot),(slot') Ψ^(slot')(child)`.
fn psi<'a>(n: &'a Node, slot: usize, tab: &TableauInstance, memo: &mut HashMap<(&'a Node, usize), Vec<HalfPowerPoly>>) -> Result<Vec<HalfPowerPoly>> {
    if let Some(v) = memo.get(&(n, slot)) {
        return Ok(v.clone());
    }
    let s = tab.stages();
    let mut acc = vec![HalfPowerPoly::constant(qi(1)); s];
    for child in &n.children {
        let mut contrib = vec![HalfPowerPoly::zero(); s];
        for cslot in child_slots(child, tab)? {
            let w = psi(child, cslot, tab, memo)?;
            let zm = tab.zz(slot, cslot);
            for i in 0..s {
                for j in 0..s {
                    if !zm[i][j].is_zero() && !w[j].is_zero() {
                        contrib[i].add_assign(&zm[i][j].mul(&w[j]));
                    }
                }
            }
        }
        for i in 0..s {
            acc[i] = if acc[i].is_zero() { HalfPowerPoly::zero() } else { acc[i].mul(&contrib[i]) };
        }
    }
    memo.insert((n, slot), acc.clone());
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::qr;

    fn t(s: &str) -> ColoredTree {
        s.parse().unwrap()
    }

    #[test]
    fn builtins_parse_and_round_trip() {
        for name in BUILTIN_SCHEMES {
            let tab = Tableau::builtin(name).unwrap().unwrap();
            let again = Tableau::from_json(&tab.to_json()).unwrap();
            assert_eq!(tab.file(), again.file());
            assert!(tab.is_explicit());
        }
    }

    #[test]
    fn phi_of_gamma_and_tau() {
        for name in BUILTIN_SCHEMES {
            let inst = Tableau::builtin(name).unwrap().unwrap().instantiate(1).unwrap();
            assert_eq!(phi_s(&ColoredTree::gamma_tree(), &inst).unwrap().expr, HalfPowerPoly::constant(qi(1)));
            assert_eq!(phi_s(&t("(t)"), &inst).unwrap().expr, HalfPowerPoly::h_pow(2));
        }
    }

    #[test]
    fn ri1wm_weights() {
        let inst = Tableau::builtin("ri1wm").unwrap().unwrap().instantiate(2).unwrap();
        assert_eq!(inst.c(0), &[qi(0), qr(2, 3), qr(2, 3)]);
        // B^(0)(k,l),(r,s) vanishes unless l = r = s
        for row in 1..inst.slot_count() {
            for col in 1..inst.slot_count() {
                let (_, nu) = &inst.families()[row - 1];
                let (r, mu) = &inst.families()[col - 1];
                let nonzero = inst.zz(row, col).iter().flatten().any(|p| !p.is_zero());
                assert_eq!(nonzero, nu[0] == *r && mu[0] == *r, "slot {row},{col}");
            }
        }
        // A^(k,l),(0,0) vanishes for k ≠ l
        for (i, (k, nu)) in inst.families().iter().enumerate() {
            let nonzero = inst.zz(i + 1, 0).iter().flatten().any(|p| !p.is_zero());
            assert_eq!(nonzero, *k == nu[0]);
        }
    }

    #[test]
    fn rs1wm_cross_slot_uses_other_index() {
        let inst = Tableau::builtin("rs1wm").unwrap().unwrap().instantiate(2).unwrap();
        let s1 = inst.family_slots(1)[0];
        let s2 = inst.family_slots(2)[0];
        let entry = &inst.zz(s1, s2)[2][0];
        assert_eq!(inst.model().display(entry), "1/4*h^(1/2)*I(2)");
    }

    #[test]
    fn conflicting_rules_are_rejected() {
        let mut file = Tableau::builtin("euler").unwrap().unwrap().file().clone();
        let mut dup = file.coefficients[1].clone();
        dup.values = CoefValues::Vector(vec!["2".into()]);
        file.coefficients.push(dup);
        let err = Tableau::from_file(file).unwrap().instantiate(1).unwrap_err();
        assert!(matches!(err, Error::Scheme { .. }), "{err}");
    }

    #[test]
    fn euler_sigma_pair() {
        let inst = Tableau::builtin("euler").unwrap().unwrap().instantiate(1).unwrap();
        let w = phi_s(&t("(s_1,s_1)"), &inst).unwrap();
        let e = inst.model().expect(&w.expr).unwrap();
        assert_eq!(e, HalfPowerPoly::h_pow(2));
    }

    #[test]
    fn variable_trees_are_rejected() {
        let inst = Tableau::builtin("euler").unwrap().unwrap().instantiate(1).unwrap();
        assert!(phi_s(&t("(s_j1)"), &inst).is_err());
        assert!(phi_s(&t("(s_3)"), &inst).is_err());
    }
}
