/// Maximum-cardinality bipartite matching. `adj[left]` lists admissible
/// right vertices in preference order; a greedy pass takes the first free
/// choice, then augmenting paths fill in the rest. Returns `(left, right)` pairs.
pub fn max_matching(adj: &[Vec<usize>], n_right: usize) -> Vec<(usize, usize)> {
    let mut owner: Vec<Option<usize>> = vec![None; n_right];
    let mut mate: Vec<Option<usize>> = vec![None; adj.len()];
    for (l, opts) in adj.iter().enumerate() {
        if let Some(&r) = opts.iter().find(|&&r| owner[r].is_none()) {
            owner[r] = Some(l);
            mate[l] = Some(r);
        }
    }
    fn augment(l: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &r in &adj[l] {
            if seen[r] {
                continue;
            }
            seen[r] = true;
            if owner[r].is_none_or(|other| augment(other, adj, owner, seen)) {
                owner[r] = Some(l);
                return true;
            }
        }
        false
    }
    for l in 0..adj.len() {
        if mate[l].is_none() {
            let mut seen = vec![false; n_right];
            if augment(l, adj, &mut owner, &mut seen) {
                mate.iter_mut().for_each(|m| *m = None);
                for (r, o) in owner.iter().enumerate() {
                    if let Some(o) = o {
                        mate[*o] = Some(r);
                    }
                }
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = owner.iter().enumerate().filter_map(|(r, o)| o.map(|l| (l, r))).collect();
    pairs.sort_unstable();
    pairs
}
