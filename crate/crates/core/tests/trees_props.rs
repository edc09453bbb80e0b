//! Invariants of canonical forms and tree families.

use proptest::prelude::*;
use weakrk::trees::{
    beta, canonicalize, correlate, count_classes, enumerate_ts_star, for_each_labelled, permutations, ColoredTree,
    CorrelationPattern, Family, HalfInt, LabelledTree, NodeColor, NodeKind,
};
use weakrk::Calculus;

/// Smallest encoding of a labelled tree over all monotone relabellings that
/// fix the root and all renamings of the index labels.
fn brute_force_key(parent: &[usize], colors: &[NodeColor]) -> Vec<(usize, u32, u32)> {
    let l = colors.len();
    let mut best: Option<Vec<(usize, u32, u32)>> = None;
    for perm in permutations(l - 1) {
        // new label of old node i (i >= 1) is perm[i - 1] + 1
        let new_of = |i: usize| if i == 0 { 0 } else { perm[i - 1] + 1 };
        let mut np = vec![0usize; l];
        let mut nc = vec![NodeColor::ROOT; l];
        for i in 0..l {
            nc[new_of(i)] = colors[i];
            if i > 0 {
                np[new_of(i)] = new_of(parent[i - 1]);
            }
        }
        if (1..l).any(|i| np[i] >= i) {
            continue;
        }
        let mut names = std::collections::HashMap::new();
        let enc: Vec<(usize, u32, u32)> = (0..l)
            .map(|i| {
                let kind = match nc[i].kind {
                    NodeKind::Root => 0,
                    NodeKind::Det => 1,
                    NodeKind::Stoch => 2,
                };
                let idx = nc[i].index.map_or(0, |j| {
                    let next = names.len() as u32 + 1;
                    *names.entry(j).or_insert(next)
                });
                (np[i], kind, idx)
            })
            .collect();
        if best.as_ref().is_none_or(|b| enc < *b) {
            best = Some(enc);
        }
    }
    best.expect("identity relabelling is monotone")
}

fn arb_tree() -> impl Strategy<Value = (Vec<usize>, Vec<NodeColor>)> {
    (1usize..=6).prop_flat_map(|l| {
        let parents: Vec<BoxedStrategy<usize>> = (1..l).map(|i| (0..i).boxed()).collect();
        let colors = proptest::collection::vec(prop_oneof![Just(None), (1u32..=3).prop_map(Some)], l - 1);
        (parents, colors).prop_map(|(p, c)| {
            let mut colors = vec![NodeColor::ROOT];
            colors.extend(c.into_iter().map(|x| x.map_or(NodeColor::DET, NodeColor::stoch)));
            (p, colors)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn canonical_form_agrees_with_brute_force((p1, c1) in arb_tree(), (p2, c2) in arb_tree()) {
        let a = canonicalize(&LabelledTree::new(p1.clone(), c1.clone()).unwrap());
        let b = canonicalize(&LabelledTree::new(p2.clone(), c2.clone()).unwrap());
        prop_assert_eq!(a == b, brute_force_key(&p1, &c1) == brute_force_key(&p2, &c2));
    }

    #[test]
    fn canonical_form_is_invariant_under_relabelling((p, c) in arb_tree(), seed in any::<u64>(), shift in 1u32..50) {
        let l = c.len();
        // random monotone relabelling: a random linear extension of the tree order
        let mut order = vec![0usize];
        let mut avail: Vec<usize> = (1..l).filter(|&i| p[i - 1] == 0).collect();
        let mut s = seed;
        while !avail.is_empty() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let pick = avail.remove((s >> 33) as usize % avail.len());
            order.push(pick);
            avail.extend((1..l).filter(|&i| p[i - 1] == pick));
        }
        let mut new_of = vec![0usize; l];
        for (new, &old) in order.iter().enumerate() {
            new_of[old] = new;
        }
        let mut np = vec![0usize; l - 1];
        let mut nc = vec![NodeColor::ROOT; l];
        for old in 0..l {
            nc[new_of[old]] = c[old].index.map_or(c[old], |j| NodeColor::stoch(j * 7 + shift));
            if old > 0 {
                np[new_of[old] - 1] = new_of[p[old - 1]];
            }
        }
        let a = canonicalize(&LabelledTree::new(p, c).unwrap());
        let b = canonicalize(&LabelledTree::new(np, nc).unwrap());
        prop_assert_eq!(&a, &b);
        let again: ColoredTree = a.to_string().parse().unwrap();
        prop_assert_eq!(again, a);
    }

    #[test]
    fn density_recursion((p, c) in arb_tree()) {
        let t = canonicalize(&LabelledTree::new(p, c).unwrap());
        fn dens(n: &weakrk::trees::Node) -> u64 {
            let prod: u64 = n.children.iter().map(dens).product();
            if n.color.kind == NodeKind::Root { prod } else { u64::from(n.size()) * prod }
        }
        prop_assert_eq!(t.stats().gamma, dens(t.root()));
        prop_assert_eq!(t.stats().rho.halves(), 2 * t.stats().d + t.stats().s);
    }
}

#[test]
fn delta_class_counts_sum_to_labelled_count() {
    // Each monotone labelled tree with l nodes: (l-1)! parent maps, two colors per non-root node.
    let counts = count_classes(Family::Delta, HalfInt(8));
    for l in 1..=5u32 {
        let total: u64 = counts.iter().filter(|(t, _)| t.stats().l == l).map(|(_, c)| c).sum();
        let fact: u64 = (1..u64::from(l)).product();
        assert_eq!(total, fact * 2u64.pow(l - 1), "l = {l}");
    }
}

#[test]
fn ito_pairs_are_not_parent_and_child() {
    let mut checked = 0;
    for_each_labelled(Family::Star(Calculus::Ito), HalfInt(6), &mut |parent, colors| {
        let mut by_class: std::collections::HashMap<u32, Vec<usize>> = Default::default();
        for (i, c) in colors.iter().enumerate() {
            if let Some(j) = c.index {
                by_class.entry(j).or_default().push(i);
            }
        }
        for nodes in by_class.values() {
            assert_eq!(nodes.len(), 2);
            let (a, b) = (nodes[0], nodes[1]);
            assert_ne!(parent[b - 1], a);
            assert_ne!(parent[a - 1], b);
        }
        checked += 1;
    });
    assert!(checked > 100);
}

#[test]
fn ito_classes_are_the_positive_strat_classes() {
    let ito = enumerate_ts_star(Calculus::Ito, HalfInt(6));
    let strat = enumerate_ts_star(Calculus::Strat, HalfInt(6));
    let positive: Vec<&ColoredTree> = strat.iter().filter(|e| e.alpha_ito > 0).map(|e| &e.tree).collect();
    let ito_trees: Vec<&ColoredTree> = ito.iter().map(|e| &e.tree).collect();
    assert_eq!(positive, ito_trees);
    assert!(strat.iter().all(|e| e.alpha_ito <= e.alpha_strat));
}

#[test]
fn beta_is_invariant_under_pair_index_renaming() {
    for e in enumerate_ts_star(Calculus::Strat, HalfInt(6)) {
        let n = e.tree.class_count();
        for p in CorrelationPattern::all(n, n) {
            let b = beta(&e.tree, &p).unwrap();
            for perm in weakrk::trees::permutations(n) {
                let renamed = e.tree.root().clone();
                let relabel = |j: u32| perm[j as usize - 1] as u32 + 1;
                fn map(n: &weakrk::trees::Node, f: &impl Fn(u32) -> u32) -> weakrk::trees::Node {
                    weakrk::trees::Node {
                        color: n.color.index.map_or(n.color, |j| NodeColor::stoch(f(j))),
                        children: n.children.iter().map(|c| map(c, f)).collect(),
                    }
                }
                let t2 = ColoredTree::from_node(&map(&renamed, &relabel));
                // the pattern follows the variables through the renaming
                let classes2 = t2.index_classes();
                let corr1 = correlate(&e.tree, &p).unwrap();
                let found = CorrelationPattern::all(classes2.len(), n)
                    .into_iter()
                    .find(|q| correlate(&t2, q).unwrap() == corr1)
                    .expect("renamed pattern exists");
                assert_eq!(beta(&t2, &found).unwrap(), b);
            }
        }
    }
}

#[test]
fn correlations_realizing_t212b_coincide() {
    let u: ColoredTree = "(s_j1,s_j2,{s_j4}_j3)".parse().unwrap();
    // Canonical class order of u: find the variables by position.
    let classes: Vec<u32> = u.index_classes().iter().map(|c| c.0).collect();
    assert_eq!(classes.len(), 4);
    let t212b: ColoredTree = "(s_j1,s_j2,{s_j2}_j1)".parse().unwrap();
    let hits = CorrelationPattern::all(4, 2)
        .into_iter()
        .filter(|p| p.block_count() == 2 && correlate(&u, p).unwrap() == t212b)
        .count();
    assert_eq!(hits, 2);
}
