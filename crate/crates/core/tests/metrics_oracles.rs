use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scribe_core::codec::{Block, Document, Entity, LayoutTree};
use scribe_core::metrics::{cer, entity_f1, levenshtein, map_cer, tree_edit_distance, wer};

/// Exponential recursion straight from the definition.
fn naive_lev<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    match (a, b) {
        ([], _) => b.len(),
        (_, []) => a.len(),
        ([x, ra @ ..], [y, rb @ ..]) => {
            let sub = naive_lev(ra, rb) + usize::from(x != y);
            sub.min(naive_lev(ra, b) + 1).min(naive_lev(a, rb) + 1)
        }
    }
}

fn all_strings(alphabet: &[char], max_len: usize) -> Vec<Vec<char>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let next: Vec<Vec<char>> = frontier
            .iter()
            .flat_map(|s: &Vec<char>| {
                alphabet.iter().map(move |&c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn levenshtein_matches_recursion_exhaustively() {
    let short = all_strings(&['a', 'b', 'c'], 4);
    for a in &short {
        for b in &short {
            assert_eq!(levenshtein(a, b), naive_lev(a, b), "{a:?} {b:?}");
        }
    }
    let long = all_strings(&['a', 'b'], 6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3000 {
        let a = &long[rng.gen_range(0..long.len())];
        let b = &long[rng.gen_range(0..long.len())];
        assert_eq!(levenshtein(a, b), naive_lev(a, b), "{a:?} {b:?}");
    }
}

pub fn cer_and_wer_against_recursion() {
    let words = ["a", "b", "c"];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut sentence = |min: usize| {
        let n = rng.gen_range(min..=3);
        (0..n).map(|_| words[rng.gen_range(0..3)]).collect::<Vec<_>>()
    };
    for _ in 0..2000 {
        let (p, g) = (sentence(0), sentence(1));
        let expected = naive_lev(&p, &g) as f64 / g.len() as f64;
        assert!((wer(&p.join(" "), &g.join(" ")).unwrap() - expected).abs() < 1e-12);
        let (pc, gc): (Vec<char>, Vec<char>) = (p.join(" ").chars().collect(), g.join(" ").chars().collect());
        let expected = naive_lev(&pc, &gc) as f64 / gc.len() as f64;
        assert!((cer(&p.join(" "), &g.join(" ")).unwrap() - expected).abs() < 1e-12);
    }
}

/// Ordered tree shape: children lists in pre-order numbering.
#[derive(Clone, Debug)]
struct Shape {
    parent: Vec<Option<usize>>,
}

fn forests(n: usize) -> Vec<Vec<Shape>> {
    // all ordered forests of n nodes, as lists of tree shapes
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for k in 1..=n {
        for first in trees(k) {
            for rest in forests(n - k) {
                let mut f = vec![first.clone()];
                f.extend(rest);
                out.push(f);
            }
        }
    }
    out
}

fn trees(n: usize) -> Vec<Shape> {
    forests(n - 1)
        .into_iter()
        .map(|forest| {
            let mut parent = vec![None];
            for t in forest {
                let base = parent.len();
                for p in t.parent {
                    parent.push(Some(p.map_or(0, |q| q + base)));
                }
            }
            Shape { parent }
        })
        .collect()
}

fn is_ancestor(parent: &[Option<usize>], a: usize, mut b: usize) -> bool {
    while let Some(p) = parent[b] {
        if p == a {
            return true;
        }
        b = p;
    }
    false
}

/// Every mapping that preserves one-to-one, ancestry and left-to-right order.
fn valid_mappings(s: &Shape, t: &Shape) -> Vec<Vec<(usize, usize)>> {
    fn rec(
        i: usize,
        s: &Shape,
        t: &Shape,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if i == s.parent.len() {
            out.push(cur.clone());
            return;
        }
        rec(i + 1, s, t, used, cur, out);
        for j in 0..t.parent.len() {
            if used[j] {
                continue;
            }
            let ok = cur.iter().all(|&(i2, j2)| {
                (i2 < i) == (j2 < j)
                    && is_ancestor(&s.parent, i2, i) == is_ancestor(&t.parent, j2, j)
                    && is_ancestor(&s.parent, i, i2) == is_ancestor(&t.parent, j, j2)
            });
            if ok {
                used[j] = true;
                cur.push((i, j));
                rec(i + 1, s, t, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, s, t, &mut vec![false; t.parent.len()], &mut Vec::new(), &mut out);
    out
}

fn to_tree(shape: &Shape, labels: &[&'static str]) -> LayoutTree {
    fn build(node: usize, shape: &Shape, labels: &[&'static str]) -> LayoutTree {
        let children = (0..shape.parent.len())
            .filter(|&c| shape.parent[c] == Some(node))
            .map(|c| build(c, shape, labels))
            .collect();
        LayoutTree::node(labels[node], children)
    }
    build(0, shape, labels)
}

fn labelings(n: usize) -> Vec<Vec<&'static str>> {
    let alphabet = ["a", "b", "c"];
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|l: Vec<&str>| alphabet.iter().map(move |&c| [l.clone(), vec![c]].concat()))
            .collect();
    }
    out
}

fn brute_cost(mappings: &[Vec<(usize, usize)>], la: &[&str], lb: &[&str]) -> usize {
    mappings
        .iter()
        .map(|m| la.len() + lb.len() - 2 * m.len() + m.iter().filter(|&&(i, j)| la[i] != lb[j]).count())
        .min()
        .unwrap()
}

pub fn tree_distance_matches_mapping_enumeration() {
    let shapes: Vec<Shape> = (1..=5).flat_map(trees).collect();
    assert_eq!(shapes.len(), 1 + 1 + 2 + 5 + 14);
    let mut cache = std::collections::HashMap::new();
    let mut mappings = |a: usize, b: usize| -> Vec<Vec<(usize, usize)>> {
        cache.entry((a, b)).or_insert_with(|| valid_mappings(&shapes[a], &shapes[b])).clone()
    };
    // exhaustive over every labelled pair with at most four nodes each
    let small: Vec<usize> = (0..shapes.len()).filter(|&i| shapes[i].parent.len() <= 4).collect();
    let mut checked = 0usize;
    for &sa in &small {
        for &sb in &small {
            let maps = mappings(sa, sb);
            for la in labelings(shapes[sa].parent.len()) {
                let ta = to_tree(&shapes[sa], &la);
                for lb in labelings(shapes[sb].parent.len()) {
                    let tb = to_tree(&shapes[sb], &lb);
                    assert_eq!(tree_edit_distance(&ta, &tb), brute_cost(&maps, &la, &lb), "{ta:?} vs {tb:?}");
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 471 * 471);
    // random pairs including five-node trees
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20_000 {
        let (sa, sb) = (rng.gen_range(0..shapes.len()), rng.gen_range(0..shapes.len()));
        let la: Vec<&str> = (0..shapes[sa].parent.len()).map(|_| ["a", "b", "c"][rng.gen_range(0..3)]).collect();
        let lb: Vec<&str> = (0..shapes[sb].parent.len()).map(|_| ["a", "b", "c"][rng.gen_range(0..3)]).collect();
        let maps = mappings(sa, sb);
        let (ta, tb) = (to_tree(&shapes[sa], &la), to_tree(&shapes[sb], &lb));
        assert_eq!(tree_edit_distance(&ta, &tb), brute_cost(&maps, &la, &lb), "{ta:?} vs {tb:?}");
    }
}

fn blocks_strategy() -> impl Strategy<Value = Vec<(String, String)>> {
    prop::collection::vec((prop::sample::select(vec!["x", "y"]), "[abc]{1,6}"), 0..5)
        .prop_map(|v| v.into_iter().map(|(c, t)| (c.to_string(), t)).collect())
}

fn doc(blocks: &[(String, String)]) -> Document {
    Document {
        blocks: blocks.iter().map(|(c, t)| Block::new(c.clone(), None, vec![t.clone()])).collect(),
        entities: vec![],
    }
}

proptest! {
    #[test]
    fn map_cer_is_bounded_and_monotone(
        gt in blocks_strategy(),
        pred in blocks_strategy(),
        pick in any::<prop::sample::Index>(),
        pos in any::<prop::sample::Index>(),
        append in any::<bool>(),
    ) {
        let before = map_cer(&doc(&pred), &doc(&gt));
        prop_assert!((0.0..=100.0).contains(&before));
        if !pred.is_empty() {
            // a character no reference uses can only raise every distance
            let mut worse = pred.clone();
            let i = pick.index(worse.len());
            let mut chars: Vec<char> = worse[i].1.chars().collect();
            if append {
                chars.push('#');
            } else {
                let p = pos.index(chars.len());
                chars[p] = '#';
            }
            worse[i].1 = chars.into_iter().collect();
            let after = map_cer(&doc(&worse), &doc(&gt));
            prop_assert!(after <= before + 1e-9, "{after} > {before}");
        }
    }

    #[test]
    fn entity_scores_are_symmetric(
        a in entity_doc_strategy(),
        b in entity_doc_strategy(),
    ) {
        let ab = entity_f1(&a, &b).overall;
        let ba = entity_f1(&b, &a).overall;
        prop_assert_eq!(ab.score().precision, ba.score().recall);
        prop_assert_eq!(ab.score().recall, ba.score().precision);
        let perfect = entity_f1(&a, &a).overall.score();
        prop_assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
    }
}

fn entity_doc_strategy() -> impl Strategy<Value = Document> {
    ("[ab ]{4,14}", prop::collection::vec((0usize..14, 1usize..5, prop::sample::select(vec!["P", "D"])), 0..4))
        .prop_map(|(text, spans)| {
            let len = text.chars().count();
            let mut entities: Vec<Entity> = Vec::new();
            let mut sorted = spans;
            sorted.sort();
            let mut cursor = 0;
            for (start, width, cat) in sorted {
                let start = start.max(cursor);
                let end = (start + width).min(len);
                if start < end {
                    entities.push(Entity { block: 0, start, end, category: cat.to_string() });
                    cursor = end;
                }
            }
            Document { blocks: vec![Block::new("body", None, vec![text])], entities }
        })
}

mod tests {
    #[test]
    fn levenshtein_matches_recursion_exhaustively() {
        super::levenshtein_matches_recursion_exhaustively()
    }

    #[test]
    fn cer_and_wer_against_recursion() {
        super::cer_and_wer_against_recursion()
    }

    #[test]
    fn tree_distance_matches_mapping_enumeration() {
        super::tree_distance_matches_mapping_enumeration()
    }
}
