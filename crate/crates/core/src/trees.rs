//! Colored rooted trees (S-trees), their canonical forms and the tree
//! families TS(I), TS(S) and TS(Δ) with the coefficients α, β and γ.
//!
//! Node colors are `γ` (the root standing for the functional `f`), `τ`
//! (drift `a`) and `σ_j` (diffusion column `b^j`, carrying an index).
//! Trees are written in bracket notation: `(…)` for a γ root, `[…]` for a
//! τ node with children, `{…}_jk` for a σ node with children, and the leaves
//! `t` and `s_jk`. A bare `g` is the single γ node and a bare `s` is a σ leaf
//! with a fresh index of its own.
//!
//! Index labels come in two flavours. *Variable* trees carry index
//! variables that may be renamed freely, so equivalence is taken up to
//! renaming. *Concrete* trees carry index values in `1..=m`, which are fixed.

use crate::{Calculus, Error, Result};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

/// Kind of a tree node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    /// The γ root, evaluated with `f`.
    Root,
    /// A deterministic τ node, evaluated with the drift.
    Det,
    /// A stochastic σ node, evaluated with a diffusion column.
    Stoch,
}

impl NodeKind {
    fn rank(self) -> u32 {
        match self {
            NodeKind::Root => 0,
            NodeKind::Det => 1,
            NodeKind::Stoch => 2,
        }
    }
}

/// Color of a node: its kind plus the index label of a σ node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeColor {
    pub kind: NodeKind,
    /// Index variable or value; present exactly for σ nodes.
    pub index: Option<u32>,
}

impl NodeColor {
    pub const ROOT: NodeColor = NodeColor { kind: NodeKind::Root, index: None };
    pub const DET: NodeColor = NodeColor { kind: NodeKind::Det, index: None };

    /// A σ node with index label `j`.
    pub fn stoch(j: u32) -> Self {
        NodeColor { kind: NodeKind::Stoch, index: Some(j) }
    }
}

/// Half-integer such as a tree order ρ, stored as a count of halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct HalfInt(pub u32);

impl HalfInt {
    /// The integer `n`.
    pub fn from_int(n: u32) -> Self {
        HalfInt(2 * n)
    }

    /// Number of halves.
    pub fn halves(self) -> u32 {
        self.0
    }

    /// Whether the value is an integer.
    pub fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    /// Value as a float.
    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / 2.0
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}.5", self.0 / 2)
        }
    }
}

impl FromStr for HalfInt {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Parse(format!("`{s}` is not a non-negative half-integer"));
        if let Some((int, frac)) = s.split_once('.') {
            let n: u32 = int.parse().map_err(|_| bad())?;
            match frac.trim_end_matches('0') {
                "" => Ok(HalfInt(2 * n)),
                "5" => Ok(HalfInt(2 * n + 1)),
                _ => Err(bad()),
            }
        } else if let Some((num, den)) = s.split_once('/') {
            let num: u32 = num.parse().map_err(|_| bad())?;
            match den {
                "1" => Ok(HalfInt(2 * num)),
                "2" => Ok(HalfInt(num)),
                _ => Err(bad()),
            }
        } else {
            let n: u32 = s.parse().map_err(|_| bad())?;
            Ok(HalfInt(2 * n))
        }
    }
}

/// Monotonically labelled tree given by a parent map and node colors.
///
/// Labels are zero based: node `0` is the root and `parent[i - 1]` is the
/// parent of node `i`, which must be smaller than `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelledTree {
    parent: Vec<usize>,
    colors: Vec<NodeColor>,
}

impl LabelledTree {
    /// Validates and wraps a parent map and a color map.
    pub fn new(parent: Vec<usize>, colors: Vec<NodeColor>) -> Result<Self> {
        if colors.is_empty() {
            return Err(Error::Structural("a tree needs at least one node".into()));
        }
        if parent.len() + 1 != colors.len() {
            return Err(Error::Structural(format!(
                "parent map covers {} nodes but {} colors were given",
                parent.len() + 1,
                colors.len()
            )));
        }
        for (i, &p) in parent.iter().enumerate() {
            let node = i + 1;
            if p >= node {
                return Err(Error::Structural(format!(
                    "parent of node {node} is {p}; labels must increase away from the root"
                )));
            }
        }
        for (i, c) in colors.iter().enumerate() {
            match c.kind {
                NodeKind::Root if i != 0 => {
                    return Err(Error::Structural(format!("node {i} is a γ node but not the root")))
                }
                NodeKind::Stoch if c.index.is_none() => {
                    return Err(Error::Structural(format!("σ node {i} carries no index")))
                }
                NodeKind::Root | NodeKind::Det if c.index.is_some() => {
                    return Err(Error::Structural(format!("non-σ node {i} carries an index")))
                }
                _ => {}
            }
        }
        Ok(LabelledTree { parent, colors })
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    /// Always false: a labelled tree has a root.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Parent of node `i >= 1`.
    pub fn parent(&self, i: usize) -> usize {
        self.parent[i - 1]
    }

    /// Color of node `i`.
    pub fn color(&self, i: usize) -> NodeColor {
        self.colors[i]
    }

    /// Recursive node structure in label order.
    pub fn to_node(&self) -> Node {
        build_node(&self.parent, &self.colors)
    }
}

/// Node structure of a labelled tree given as parent list and colors, where
/// `parent[i - 1]` is the parent of node `i` and node 0 is the root.
pub fn build_node(parent: &[usize], colors: &[NodeColor]) -> Node {
    let mut kids: Vec<Vec<usize>> = vec![Vec::new(); colors.len()];
    for (i, &p) in parent.iter().enumerate() {
        kids[p].push(i + 1);
    }
    fn rec(i: usize, kids: &[Vec<usize>], colors: &[NodeColor]) -> Node {
        Node { color: colors[i], children: kids[i].iter().map(|&c| rec(c, kids, colors)).collect() }
    }
    rec(0, &kids, colors)
}

/// Recursive tree node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub color: NodeColor,
    pub children: Vec<Node>,
}

impl Node {
    /// A node without children.
    pub fn leaf(color: NodeColor) -> Self {
        Node { color, children: Vec::new() }
    }

    /// A node with the given children.
    pub fn with(color: NodeColor, children: Vec<Node>) -> Self {
        Node { color, children }
    }

    /// Number of nodes in the subtree.
    pub fn size(&self) -> u32 {
        1 + self.children.iter().map(Node::size).sum::<u32>()
    }

    /// Density γ of the subtree.
    pub fn density(&self) -> u64 {
        let prod: u64 = self.children.iter().map(Node::density).product();
        match self.color.kind {
            NodeKind::Root => prod,
            _ => u64::from(self.size()) * prod,
        }
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        f(self);
        for c in &self.children {
            c.visit(f);
        }
    }

    /// Copy with every σ index `j` replaced by `f(j)`.
    pub fn map_indices(&self, f: &impl Fn(u32) -> u32) -> Node {
        Node {
            color: match self.color.index {
                Some(j) => NodeColor::stoch(f(j)),
                None => self.color,
            },
            children: self.children.iter().map(|c| c.map_indices(f)).collect(),
        }
    }

    /// Sorts children recursively by their encodings under the class key `cls`
    /// and returns the sorted node with its preorder encoding.
    fn sorted(&self, cls: &impl Fn(u32) -> u32) -> (Node, Vec<u32>) {
        let mut kids: Vec<(Node, Vec<u32>)> = self.children.iter().map(|c| c.sorted(cls)).collect();
        kids.sort_by(|a, b| a.1.cmp(&b.1));
        let mut enc = vec![self.color.kind.rank(), self.color.index.map_or(0, cls), kids.len() as u32];
        let mut children = Vec::with_capacity(kids.len());
        for (n, e) in kids {
            enc.extend_from_slice(&e);
            children.push(n);
        }
        (Node { color: self.color, children }, enc)
    }
}

/// Cached statistics of a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TreeStats {
    /// Number of nodes l(t).
    pub l: u32,
    /// Number of τ nodes d(t).
    pub d: u32,
    /// Number of σ nodes s(t).
    pub s: u32,
    /// Number of equal-index pairs, Σ over index classes of ⌊size / 2⌋.
    pub n: u32,
    /// Order ρ(t) = d + s/2.
    pub rho: HalfInt,
    /// Density γ(t).
    pub gamma: u64,
}

/// Canonical colored tree.
///
/// Children are ordered by their preorder encoding (kind rank γ < τ < σ,
/// index class, child count, then the children recursively). Index
/// variables are numbered `1, 2, …` by first appearance in preorder.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColoredTree {
    root: Node,
    concrete: bool,
    key: Vec<u32>,
    stats: TreeStats,
}

impl ColoredTree {
    /// Canonical form of a tree whose indices are variables.
    pub fn from_node(node: &Node) -> Self {
        let root = canonical_variable(node);
        Self::wrap(root, false)
    }

    /// Canonical form of a tree whose indices are concrete values.
    pub fn from_node_concrete(node: &Node) -> Self {
        let (root, _) = node.sorted(&|j| j);
        Self::wrap(root, true)
    }

    fn wrap(root: Node, concrete: bool) -> Self {
        let (_, key) = root.sorted(&|j| j);
        let mut d = 0;
        let mut s = 0;
        let mut class_sizes: BTreeMap<u32, u32> = BTreeMap::new();
        root.visit(&mut |n| match n.color.kind {
            NodeKind::Det => d += 1,
            NodeKind::Stoch => {
                s += 1;
                *class_sizes.entry(n.color.index.unwrap_or(0)).or_default() += 1;
            }
            NodeKind::Root => {}
        });
        let stats = TreeStats {
            l: root.size(),
            d,
            s,
            n: class_sizes.values().map(|c| c / 2).sum(),
            rho: HalfInt(2 * d + s),
            gamma: root.density(),
        };
        ColoredTree { root, concrete, key, stats }
    }

    /// The single γ node.
    pub fn gamma_tree() -> Self {
        Self::from_node(&Node::leaf(NodeColor::ROOT))
    }

    /// Root node of the canonical structure.
    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Cached statistics.
    pub fn stats(&self) -> TreeStats {
        self.stats
    }

    /// Order ρ(t).
    pub fn rho(&self) -> HalfInt {
        self.stats.rho
    }

    /// Whether the indices are concrete values rather than variables.
    pub fn is_concrete(&self) -> bool {
        self.concrete
    }

    /// Whether the root is the γ node.
    pub fn has_gamma_root(&self) -> bool {
        self.root.color.kind == NodeKind::Root
    }

    /// Canonical preorder encoding, a total order within one index flavour.
    pub fn key(&self) -> &[u32] {
        &self.key
    }

    /// Index classes with their node counts, in canonical order.
    pub fn index_classes(&self) -> Vec<(u32, u32)> {
        let mut order: Vec<u32> = Vec::new();
        let mut sizes: HashMap<u32, u32> = HashMap::new();
        self.root.visit(&mut |n| {
            if let Some(j) = n.color.index {
                if !sizes.contains_key(&j) {
                    order.push(j);
                }
                *sizes.entry(j).or_default() += 1;
            }
        });
        order.into_iter().map(|j| (j, sizes[&j])).collect()
    }

    /// Number of distinct index labels.
    pub fn class_count(&self) -> usize {
        self.index_classes().len()
    }

    /// The all-distinct shape |t|: every σ node receives its own index.
    pub fn delta_shape(&self) -> ColoredTree {
        let mut next = 0u32;
        fn rec(n: &Node, next: &mut u32) -> Node {
            let color = match n.color.kind {
                NodeKind::Stoch => {
                    *next += 1;
                    NodeColor::stoch(*next)
                }
                _ => n.color,
            };
            Node { color, children: n.children.iter().map(|c| rec(c, next)).collect() }
        }
        ColoredTree::from_node(&rec(&self.root, &mut next))
    }

    /// Whether every σ node has an index of its own.
    pub fn is_delta(&self) -> bool {
        self.index_classes().iter().all(|&(_, c)| c == 1)
    }

    /// Concrete tree obtained by giving class `c` (1-based, canonical order)
    /// the value `values[c - 1]`.
    pub fn assign(&self, values: &[u32]) -> Result<ColoredTree> {
        let classes = self.index_classes();
        if classes.len() != values.len() {
            return Err(Error::Domain(format!(
                "tree has {} index classes but {} values were given",
                classes.len(),
                values.len()
            )));
        }
        let pos: HashMap<u32, usize> = classes.iter().enumerate().map(|(i, &(j, _))| (j, i)).collect();
        let node = self.root.map_indices(&|j| values[pos[&j]]);
        Ok(ColoredTree::from_node_concrete(&node))
    }

    /// Variable tree obtained by forgetting the concrete index values.
    pub fn to_variable(&self) -> ColoredTree {
        ColoredTree::from_node(&self.root)
    }

    fn write(&self, n: &Node, out: &mut String) {
        let idx = |out: &mut String, j: u32| {
            if self.concrete {
                out.push_str(&format!("_{j}"));
            } else {
                out.push_str(&format!("_j{j}"));
            }
        };
        let kids = |out: &mut String| {
            for (i, c) in n.children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                self.write(c, out);
            }
        };
        match (n.color.kind, n.children.is_empty()) {
            (NodeKind::Root, true) => out.push('g'),
            (NodeKind::Root, false) => {
                out.push('(');
                kids(out);
                out.push(')');
            }
            (NodeKind::Det, true) => out.push('t'),
            (NodeKind::Det, false) => {
                out.push('[');
                kids(out);
                out.push(']');
            }
            (NodeKind::Stoch, true) => {
                out.push('s');
                idx(out, n.color.index.unwrap_or(0));
            }
            (NodeKind::Stoch, false) => {
                out.push('{');
                kids(out);
                out.push('}');
                idx(out, n.color.index.unwrap_or(0));
            }
        }
    }
}

impl PartialOrd for ColoredTree {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ColoredTree {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.stats.rho, &self.key, self.concrete).cmp(&(other.stats.rho, &other.key, other.concrete))
    }
}

impl fmt::Display for ColoredTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write(&self.root, &mut s);
        f.write_str(&s)
    }
}

impl FromStr for ColoredTree {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_bracket(s)
    }
}

/// Canonical representative of a labelled tree's equivalence class.
pub fn canonicalize(t: &LabelledTree) -> ColoredTree {
    ColoredTree::from_node(&t.to_node())
}

/// Canonical form under arbitrary renaming of index variables.
///
/// Index classes holding a single node are interchangeable, so they share
/// one sort key. The remaining classes are tried in every order and the
/// smallest encoding wins. Classes are finally renumbered by first
/// appearance in preorder.
fn canonical_variable(node: &Node) -> Node {
    let mut sizes: BTreeMap<u32, u32> = BTreeMap::new();
    node.visit(&mut |n| {
        if let Some(j) = n.color.index {
            *sizes.entry(j).or_default() += 1;
        }
    });
    let multi: Vec<u32> = sizes.iter().filter(|(_, &c)| c > 1).map(|(&j, _)| j).collect();
    let mut best: Option<(Vec<u32>, Node)> = None;
    for perm in permutations(multi.len()) {
        let rank: HashMap<u32, u32> = multi.iter().zip(&perm).map(|(&j, &p)| (j, p as u32 + 1)).collect();
        let (n, enc) = node.sorted(&|j| rank.get(&j).copied().unwrap_or(0));
        if best.as_ref().is_none_or(|(b, _)| enc < *b) {
            best = Some((enc, n));
        }
    }
    let (_, sorted) = best.expect("at least one permutation");
    let mut names: HashMap<u32, u32> = HashMap::new();
    let mut singles = 0u32;
    renumber(&sorted, &sizes, &mut names, &mut singles)
}

fn renumber(n: &Node, sizes: &BTreeMap<u32, u32>, names: &mut HashMap<u32, u32>, next: &mut u32) -> Node {
    let color = match n.color.index {
        Some(j) => {
            let id = if sizes[&j] == 1 {
                *next += 1;
                *next
            } else {
                *names.entry(j).or_insert_with(|| {
                    *next += 1;
                    *next
                })
            };
            NodeColor::stoch(id)
        }
        None => n.color,
    };
    Node { color, children: n.children.iter().map(|c| renumber(c, sizes, names, next)).collect() }
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) else {
            return out;
        };
        let j = (i + 1..n).rev().find(|&j| cur[j] > cur[i]).expect("successor exists");
        cur.swap(i, j);
        cur[i + 1..].reverse();
    }
}

fn parse_bracket(text: &str) -> Result<ColoredTree> {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    let mut p = Parser { chars, pos: 0, fresh: 1 << 20, concrete: None };
    let node = p.tree()?;
    if p.pos != p.chars.len() {
        return Err(p.err("trailing input"));
    }
    if p.concrete == Some(true) && p.fresh > 1 << 20 {
        return Err(Error::Parse(format!("bare `s` leaves need variable indices in `{text}`")));
    }
    Ok(if p.concrete == Some(true) { ColoredTree::from_node_concrete(&node) } else { ColoredTree::from_node(&node) })
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    fresh: u32,
    concrete: Option<bool>,
}

impl Parser {
    fn err(&self, what: &str) -> Error {
        let s: String = self.chars.iter().collect();
        Error::Parse(format!("{what} at position {} in `{s}`", self.pos))
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected `{c}`")))
        }
    }

    fn children(&mut self, close: char) -> Result<Vec<Node>> {
        let mut out = Vec::new();
        if self.peek() == Some(close) {
            self.pos += 1;
            return Ok(out);
        }
        loop {
            out.push(self.tree()?);
            match self.peek() {
                Some(',') => self.pos += 1,
                Some(c) if c == close => {
                    self.pos += 1;
                    return Ok(out);
                }
                _ => return Err(self.err(&format!("expected `,` or `{close}`"))),
            }
        }
    }

    fn index(&mut self, required: bool) -> Result<u32> {
        if self.peek() != Some('_') {
            if required {
                return Err(self.err("expected `_` and an index"));
            }
            self.fresh += 1;
            return Ok(self.fresh);
        }
        self.pos += 1;
        let braced = self.peek() == Some('{');
        if braced {
            self.pos += 1;
        }
        let variable = self.peek() == Some('j');
        if variable {
            self.pos += 1;
        }
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        let digits: String = self.chars[start..self.pos].iter().collect();
        let value: u32 = digits.parse().map_err(|_| self.err("expected index digits"))?;
        if braced {
            self.eat('}')?;
        }
        match self.concrete {
            Some(c) if c == variable => return Err(self.err("mixed variable and concrete indices")),
            _ => self.concrete = Some(!variable),
        }
        if !variable && value == 0 {
            return Err(self.err("concrete indices start at 1"));
        }
        Ok(value)
    }

    fn tree(&mut self) -> Result<Node> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                Ok(Node::with(NodeColor::ROOT, self.children(')')?))
            }
            Some('g') | Some('γ') => {
                self.pos += 1;
                Ok(Node::leaf(NodeColor::ROOT))
            }
            Some('t') | Some('τ') => {
                self.pos += 1;
                Ok(Node::leaf(NodeColor::DET))
            }
            Some('[') => {
                self.pos += 1;
                Ok(Node::with(NodeColor::DET, self.children(']')?))
            }
            Some('s') | Some('σ') => {
                self.pos += 1;
                let j = self.index(false)?;
                Ok(Node::leaf(NodeColor::stoch(j)))
            }
            Some('{') => {
                self.pos += 1;
                let kids = self.children('}')?;
                let j = self.index(true)?;
                Ok(Node::with(NodeColor::stoch(j), kids))
            }
            _ => Err(self.err("expected a tree")),
        }
    }
}

/// Set partition of a tree's index classes into equality blocks.
///
/// `blocks()[c - 1]` is the block of index class `c`; blocks are numbered
/// by first appearance starting at 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CorrelationPattern {
    blocks: Vec<u32>,
}

impl CorrelationPattern {
    /// Pattern from arbitrary block labels, normalized to first appearance.
    pub fn new(labels: &[u32]) -> Self {
        let mut map: HashMap<u32, u32> = HashMap::new();
        let blocks = labels
            .iter()
            .map(|l| {
                let next = map.len() as u32 + 1;
                *map.entry(*l).or_insert(next)
            })
            .collect();
        CorrelationPattern { blocks }
    }

    /// Pattern whose blocks are all singletons.
    pub fn discrete(n: usize) -> Self {
        CorrelationPattern { blocks: (1..=n as u32).collect() }
    }

    /// Block label per class.
    pub fn blocks(&self) -> &[u32] {
        &self.blocks
    }

    /// Number of index variables covered.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    /// Whether the pattern covers no variable.
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Number of blocks.
    pub fn block_count(&self) -> usize {
        self.blocks.iter().copied().max().unwrap_or(0) as usize
    }

    /// Realizable with `m` distinct index values.
    pub fn realizable(&self, m: usize) -> bool {
        self.block_count() <= m
    }

    /// All set partitions of `n` variables with at most `max_blocks` blocks.
    pub fn all(n: usize, max_blocks: usize) -> Vec<CorrelationPattern> {
        set_partitions(n, max_blocks).into_iter().map(|blocks| CorrelationPattern { blocks }).collect()
    }
}

impl fmt::Display for CorrelationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.blocks.is_empty() {
            return f.write_str("-");
        }
        let parts: Vec<String> = (1..=self.block_count() as u32)
            .map(|b| {
                let members: Vec<String> = self
                    .blocks
                    .iter()
                    .enumerate()
                    .filter(|(_, &x)| x == b)
                    .map(|(i, _)| format!("j{}", i + 1))
                    .collect();
                members.join("=")
            })
            .collect();
        f.write_str(&parts.join(";"))
    }
}

impl FromStr for CorrelationPattern {
    type Err = Error;

    /// Parses the display form, e.g. `j1=j3;j2=j4`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "-" || s.is_empty() {
            return Ok(CorrelationPattern { blocks: Vec::new() });
        }
        let mut labels: BTreeMap<usize, u32> = BTreeMap::new();
        for (b, part) in s.split(';').enumerate() {
            for var in part.split('=') {
                let v: usize = var
                    .trim()
                    .strip_prefix('j')
                    .and_then(|d| d.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("bad index variable `{var}` in pattern `{s}`")))?;
                if labels.insert(v, b as u32).is_some() {
                    return Err(Error::Parse(format!("variable j{v} appears twice in pattern `{s}`")));
                }
            }
        }
        if labels.keys().copied().ne(1..=labels.len()) {
            return Err(Error::Parse(format!("pattern `{s}` must cover j1..jn")));
        }
        let raw: Vec<u32> = labels.values().copied().collect();
        Ok(CorrelationPattern::new(&raw))
    }
}

/// Restricted growth strings of length `n` with at most `max_blocks` blocks,
/// in lexicographic order.
pub fn set_partitions(n: usize, max_blocks: usize) -> Vec<Vec<u32>> {
    fn rec(cur: &mut Vec<u32>, n: usize, max_used: u32, cap: u32, out: &mut Vec<Vec<u32>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for b in 1..=(max_used + 1).min(cap) {
            cur.push(b);
            rec(cur, n, max_used.max(b), cap, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
        return out;
    }
    rec(&mut Vec::with_capacity(n), n, 0, max_blocks as u32, &mut out);
    out
}

/// Merges the index classes of `u` according to `pattern` and returns the
/// canonical result. Works for any variable tree, not only Δ trees.
pub fn correlate(u: &ColoredTree, pattern: &CorrelationPattern) -> Result<ColoredTree> {
    let classes = u.index_classes();
    if classes.len() != pattern.len() {
        return Err(Error::Domain(format!(
            "pattern covers {} index variables but `{u}` has {}",
            pattern.len(),
            classes.len()
        )));
    }
    let block: HashMap<u32, u32> = classes.iter().zip(pattern.blocks()).map(|(&(j, _), &b)| (j, b)).collect();
    Ok(ColoredTree::from_node(&u.root.map_indices(&|j| block[&j])))
}

/// Correlation coefficient β: the number of correlation patterns of the
/// all-distinct shape of `correlate(t_star, pattern)` that realize it.
pub fn beta(t_star: &ColoredTree, pattern: &CorrelationPattern) -> Result<u64> {
    if t_star.stats.s % 2 == 1 {
        return Err(Error::Domain(format!("`{t_star}` has an odd number of σ nodes")));
    }
    let t = correlate(t_star, pattern)?;
    Ok(beta_of(&t))
}

/// β of a correlated tree: the number of set partitions `P` of the index
/// variables of `|t|` with `correlate(|t|, P) ∼ t`.
pub fn beta_of(t: &ColoredTree) -> u64 {
    let u = t.delta_shape();
    let target = t.to_variable();
    let k = target.class_count();
    CorrelationPattern::all(u.class_count(), usize::MAX)
        .into_iter()
        .filter(|p| p.block_count() == k)
        .filter(|p| correlate(&u, p).map(|c| c == target).unwrap_or(false))
        .count() as u64
}

/// One row of a tree table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTableEntry {
    pub tree: ColoredTree,
    pub alpha_delta: u64,
    pub alpha_ito: u64,
    pub alpha_strat: u64,
}

/// Which construction rule generates the labelled trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// One τ or one σ with a fresh index per step.
    Delta,
    /// One τ or a σ pair sharing a fresh index per step.
    Star(Calculus),
}

/// Depth-first walk over all monotonically labelled trees of a family with
/// ρ ≤ `max_rho`. Every prefix of a construction sequence is itself a tree of
/// the family, so each labelled tree is visited exactly once.
pub fn for_each_labelled(family: Family, max_rho: HalfInt, visit: &mut impl FnMut(&[usize], &[NodeColor])) {
    let mut parent: Vec<usize> = Vec::new();
    let mut colors: Vec<NodeColor> = vec![NodeColor::ROOT];
    walk(family, max_rho.0, 0, 0, &mut parent, &mut colors, visit);
}

fn walk(
    family: Family,
    max: u32,
    rho: u32,
    classes: u32,
    parent: &mut Vec<usize>,
    colors: &mut Vec<NodeColor>,
    visit: &mut impl FnMut(&[usize], &[NodeColor]),
) {
    visit(parent, colors);
    let l = colors.len();
    if rho + 2 <= max {
        for p in 0..l {
            parent.push(p);
            colors.push(NodeColor::DET);
            walk(family, max, rho + 2, classes, parent, colors, visit);
            parent.pop();
            colors.pop();
        }
    }
    match family {
        Family::Delta => {
            if rho < max {
                for p in 0..l {
                    parent.push(p);
                    colors.push(NodeColor::stoch(classes + 1));
                    walk(family, max, rho + 1, classes + 1, parent, colors, visit);
                    parent.pop();
                    colors.pop();
                }
            }
        }
        Family::Star(calc) => {
            if rho + 2 <= max {
                let j = NodeColor::stoch(classes + 1);
                for p1 in 0..l {
                    for p2 in 0..=l {
                        if calc == Calculus::Ito && p2 == l {
                            continue;
                        }
                        parent.push(p1);
                        parent.push(p2);
                        colors.push(j);
                        colors.push(j);
                        walk(family, max, rho + 2, classes + 1, parent, colors, visit);
                        parent.truncate(parent.len() - 2);
                        colors.truncate(colors.len() - 2);
                    }
                }
            }
        }
    }
}

/// Number of labelled trees per canonical class.
pub fn count_classes(family: Family, max_rho: HalfInt) -> HashMap<ColoredTree, u64> {
    let mut counts: HashMap<ColoredTree, u64> = HashMap::new();
    for_each_labelled(family, max_rho, &mut |parent, colors| {
        let t = ColoredTree::from_node(&build_node(parent, colors));
        *counts.entry(t).or_default() += 1;
    });
    counts
}

/// α_* of correlated trees: every labelled tree of TS(*) is paired with
/// every set partition of its pair indices and the merged tree is counted.
/// Trees whose classes all have size two receive exactly the plain α_*
/// counts; coinciding correlated trees accumulate the sum of their sources.
pub fn alpha_star_correlated(calc: Calculus, max_rho: HalfInt) -> HashMap<ColoredTree, u64> {
    let mut counts: HashMap<ColoredTree, u64> = HashMap::new();
    let mut partitions: HashMap<usize, Vec<Vec<u32>>> = HashMap::new();
    for_each_labelled(Family::Star(calc), max_rho, &mut |parent, colors| {
        let node = build_node(parent, colors);
        let n = colors.iter().filter_map(|c| c.index).max().unwrap_or(0) as usize;
        let parts = partitions.entry(n).or_insert_with(|| set_partitions(n, usize::MAX));
        for p in parts.iter() {
            let merged = node.map_indices(&|j| p[j as usize - 1]);
            *counts.entry(ColoredTree::from_node(&merged)).or_default() += 1;
        }
    });
    counts
}

fn sorted_entries(map: HashMap<ColoredTree, u64>, fill: impl Fn(&ColoredTree, u64) -> TreeTableEntry) -> Vec<TreeTableEntry> {
    let mut v: Vec<(ColoredTree, u64)> = map.into_iter().collect();
    v.sort_by(|a, b| a.0.cmp(&b.0));
    v.into_iter().map(|(t, c)| fill(&t, c)).collect()
}

/// All classes of TS(Δ) with ρ ≤ `max_rho` and their α_Δ, ordered by ρ and
/// canonical key. The α_I and α_S columns hold the (correlation-summed) α_*
/// of the same tree: a tree without σ nodes has α_I = α_S = α_Δ, and any
/// other Δ tree has unpaired indices and therefore α_* = 0.
pub fn enumerate_ts_delta(max_rho: HalfInt) -> Vec<TreeTableEntry> {
    let counts = count_classes(Family::Delta, max_rho);
    sorted_entries(counts, |t, c| {
        let plain = if t.stats.s == 0 { c } else { 0 };
        TreeTableEntry { tree: t.clone(), alpha_delta: c, alpha_ito: plain, alpha_strat: plain }
    })
}

/// All classes of TS(I) or TS(S) with ρ ≤ `max_rho`, each with α_I and α_S.
pub fn enumerate_ts_star(calc: Calculus, max_rho: HalfInt) -> Vec<TreeTableEntry> {
    let ito = count_classes(Family::Star(Calculus::Ito), max_rho);
    let strat = count_classes(Family::Star(Calculus::Strat), max_rho);
    let chosen = match calc {
        Calculus::Ito => ito.clone(),
        Calculus::Strat => strat.clone(),
    };
    sorted_entries(chosen, |t, _| TreeTableEntry {
        tree: t.clone(),
        alpha_delta: if t.stats.s == 0 { ito.get(t).copied().unwrap_or(0) } else { 0 },
        alpha_ito: ito.get(t).copied().unwrap_or(0),
        alpha_strat: strat.get(t).copied().unwrap_or(0),
    })
}
