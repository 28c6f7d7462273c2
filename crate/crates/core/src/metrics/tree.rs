use crate::codec::LayoutTree;

struct Postorder<'a> {
    labels: Vec<&'a str>,
    /// Post-order index of each node's leftmost leaf.
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a> Postorder<'a> {
    fn new(tree: &'a LayoutTree) -> Self {
        fn walk<'a>(t: &'a LayoutTree, labels: &mut Vec<&'a str>, leftmost: &mut Vec<usize>) -> usize {
            let mut first = None;
            for c in &t.children {
                let l = walk(c, labels, leftmost);
                first.get_or_insert(l);
            }
            let me = labels.len();
            labels.push(&t.label);
            let l = first.unwrap_or(me);
            leftmost.push(l);
            l
        }
        let (mut labels, mut leftmost) = (Vec::new(), Vec::new());
        walk(tree, &mut labels, &mut leftmost);
        // keyroots: highest node for each distinct leftmost leaf
        let n = labels.len();
        let mut keyroots: Vec<usize> = (0..n).filter(|&i| !(i + 1..n).any(|j| leftmost[j] == leftmost[i])).collect();
        keyroots.sort_unstable();
        Self { labels, leftmost, keyroots }
    }
}

/// Ordered-tree edit distance with unit insert, delete and relabel costs.
pub fn tree_edit_distance(a: &LayoutTree, b: &LayoutTree) -> usize {
    let (ta, tb) = (Postorder::new(a), Postorder::new(b));
    let (n, m) = (ta.labels.len(), tb.labels.len());
    let mut td = vec![vec![0usize; m]; n];
    for &i in &ta.keyroots {
        for &j in &tb.keyroots {
            let (li, lj) = (ta.leftmost[i], tb.leftmost[j]);
            let rows = i - li + 2;
            let cols = j - lj + 2;
            let mut fd = vec![vec![0usize; cols]; rows];
            for x in 1..rows {
                fd[x][0] = fd[x - 1][0] + 1;
            }
            for y in 1..cols {
                fd[0][y] = fd[0][y - 1] + 1;
            }
            for x in 1..rows {
                for y in 1..cols {
                    let (ni, nj) = (li + x - 1, lj + y - 1);
                    let del = fd[x - 1][y] + 1;
                    let ins = fd[x][y - 1] + 1;
                    if ta.leftmost[ni] == li && tb.leftmost[nj] == lj {
                        let rel = fd[x - 1][y - 1] + usize::from(ta.labels[ni] != tb.labels[nj]);
                        fd[x][y] = del.min(ins).min(rel);
                        td[ni][nj] = fd[x][y];
                    } else {
                        let px = ta.leftmost[ni] - li;
                        let py = tb.leftmost[nj] - lj;
                        fd[x][y] = del.min(ins).min(fd[px][py] + td[ni][nj]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

/// Edit distance and normaliser for the layout ordering error rate.
/// The normaliser counts ground-truth nodes plus edges, root excluded.
pub fn loer_parts(pred: &LayoutTree, gt: &LayoutTree) -> (usize, usize) {
    let nodes = gt.size() - 1;
    (tree_edit_distance(pred, gt), 2 * nodes)
}

/// Layout ordering error rate of one page; 0 when both trees are bare roots.
pub fn loer(pred: &LayoutTree, gt: &LayoutTree) -> f64 {
    let (d, norm) = loer_parts(pred, gt);
    d as f64 / norm.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(label: &str, children: Vec<LayoutTree>) -> LayoutTree {
        LayoutTree::node(label, children)
    }

    #[test]
    fn textbook_pair() {
        // f(d(a c(b)) e) vs f(c(d(a b)) e): distance 2
        let a = t("f", vec![t("d", vec![t("a", vec![]), t("c", vec![t("b", vec![])])]), t("e", vec![])]);
        let b = t("f", vec![t("c", vec![t("d", vec![t("a", vec![]), t("b", vec![])])]), t("e", vec![])]);
        assert_eq!(tree_edit_distance(&a, &b), 2);
        assert_eq!(tree_edit_distance(&b, &a), 2);
    }

    #[test]
    fn loer_examples() {
        let gt = t("root", vec![t("body", vec![])]);
        let pred = t("root", vec![]);
        assert_eq!(loer(&gt, &gt), 0.0);
        assert_eq!(loer(&pred, &gt), 0.5);
        let gt = t("root", vec![t("sender", vec![]), t("body", vec![])]);
        let swapped = t("root", vec![t("body", vec![]), t("sender", vec![])]);
        assert_eq!(tree_edit_distance(&swapped, &gt), 2);
        assert_eq!(loer(&swapped, &gt), 0.5);
        assert_eq!(loer(&pred, &pred), 0.0);
    }
}
