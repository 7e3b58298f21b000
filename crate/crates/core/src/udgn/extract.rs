//! Tree extraction from head distributions.

use crate::error::{Error, Result};

const FLOOR: f64 = 1e-12;

/// Row argmax of `p`, smallest index on ties. Cycles are possible.
pub fn extract_argmax(p: &[Vec<f64>]) -> Vec<usize> {
    p.iter()
        .map(|row| {
            let mut k = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[k] {
                    k = j;
                }
            }
            k
        })
        .collect()
}

/// Edge weight for head `j` of dependent `i`.
pub fn edge_weight(p: &[Vec<f64>], i: usize, j: usize) -> f64 {
    (p[i][j] + FLOOR).ln()
}

/// Total weight of a head assignment (`None` marks the root).
pub fn tree_weight(p: &[Vec<f64>], heads: &[Option<usize>]) -> f64 {
    heads
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.map(|j| edge_weight(p, i, j)))
        .sum()
}

/// Maximum spanning arborescence under log-probability edge weights,
/// trying every token as root. `heads[i]` is `None` for the root.
pub fn extract_chuliu(p: &[Vec<f64>]) -> Result<Vec<Option<usize>>> {
    let n = p.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("{n} token(s)")));
    }
    if p.iter().any(|r| r.len() != n) {
        return Err(Error::contract("head matrix must be square"));
    }
    // w[h][d]
    let w: Vec<Vec<f64>> = (0..n)
        .map(|h| {
            (0..n)
                .map(|d| if h == d { f64::NEG_INFINITY } else { edge_weight(p, d, h) })
                .collect()
        })
        .collect();
    let mut best: Option<(f64, Vec<Option<usize>>)> = None;
    for root in 0..n {
        let parents = arborescence(&w, root);
        let heads: Vec<Option<usize>> = parents;
        let score = tree_weight(p, &heads);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, heads));
        }
    }
    Ok(best.expect("n >= 2").1)
}

/// Chu-Liu/Edmonds on a dense graph `w[h][d]` (`-inf` for missing edges),
/// every node reachable from `root`. Returns the parent of each node.
pub fn arborescence(w: &[Vec<f64>], root: usize) -> Vec<Option<usize>> {
    let n = w.len();
    // best incoming edge per node, smallest head on ties
    let mut parent: Vec<Option<usize>> = vec![None; n];
    for d in 0..n {
        if d == root {
            continue;
        }
        let mut bh = None;
        for h in 0..n {
            if h == d || w[h][d] == f64::NEG_INFINITY {
                continue;
            }
            if bh.is_none_or(|b: usize| w[h][d] > w[b][d]) {
                bh = Some(h);
            }
        }
        parent[d] = bh;
    }
    let Some(cycle) = find_cycle(&parent, root) else {
        return parent;
    };
    let in_cycle: Vec<bool> = (0..n).map(|v| cycle.contains(&v)).collect();

    // contract the cycle into node `c`
    let mut map = vec![usize::MAX; n];
    let mut back = Vec::new();
    for v in 0..n {
        if !in_cycle[v] {
            map[v] = back.len();
            back.push(v);
        }
    }
    let c = back.len();
    let m = c + 1;
    let mut cw = vec![vec![f64::NEG_INFINITY; m]; m];
    // for edges into the cycle: which cycle node they enter
    let mut enter = vec![usize::MAX; m];
    // for edges out of the cycle: which cycle node they leave from
    let mut leave = vec![usize::MAX; m];
    for h in 0..n {
        for d in 0..n {
            let x = w[h][d];
            if h == d || x == f64::NEG_INFINITY {
                continue;
            }
            match (in_cycle[h], in_cycle[d]) {
                (false, false) => cw[map[h]][map[d]] = x,
                (false, true) => {
                    let adj = x - w[parent[d].expect("cycle node has a parent")][d];
                    let hh = map[h];
                    if adj > cw[hh][c] {
                        cw[hh][c] = adj;
                        enter[hh] = d;
                    }
                }
                (true, false) => {
                    let dd = map[d];
                    if x > cw[c][dd] {
                        cw[c][dd] = x;
                        leave[dd] = h;
                    }
                }
                (true, true) => {}
            }
        }
    }
    let sub = arborescence(&cw, map[root]);
    let mut out = parent.clone();
    for (sd, sp) in sub.iter().enumerate() {
        let Some(sh) = *sp else { continue };
        if sd == c {
            // edge entering the cycle breaks it at the entered node
            let d = enter[sh];
            out[d] = Some(back[sh]);
        } else {
            let d = back[sd];
            out[d] = Some(if sh == c { leave[sd] } else { back[sh] });
        }
    }
    out
}

fn find_cycle(parent: &[Option<usize>], root: usize) -> Option<Vec<usize>> {
    let n = parent.len();
    let mut color = vec![0u8; n]; // 0 new, 1 on current path, 2 done
    color[root] = 2;
    for start in 0..n {
        if color[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut v = start;
        loop {
            if color[v] == 2 {
                break;
            }
            if color[v] == 1 {
                let pos = path.iter().position(|&x| x == v).expect("on path");
                return Some(path[pos..].to_vec());
            }
            color[v] = 1;
            path.push(v);
            match parent[v] {
                Some(p) => v = p,
                None => break,
            }
        }
        for &x in &path {
            color[x] = 2;
        }
    }
    None
}

/// 1-indexed heads with 0 for the root.
pub fn to_conll_heads(heads: &[Option<usize>]) -> Vec<usize> {
    heads.iter().map(|h| h.map_or(0, |j| j + 1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_tokens_pick_best_root() {
        let p = vec![vec![0.0, 0.9], vec![0.6, 0.0]];
        assert_eq!(extract_chuliu(&p).unwrap(), vec![Some(1), None]);
        assert_eq!(extract_argmax(&p), vec![1, 0]);
    }

    #[test]
    fn cycle_is_broken() {
        let p = vec![
            vec![0.0, 0.9, 0.1],
            vec![0.1, 0.0, 0.9],
            vec![0.9, 0.1, 0.0],
        ];
        let heads = extract_chuliu(&p).unwrap();
        assert_eq!(heads.iter().filter(|h| h.is_none()).count(), 1);
        let w = tree_weight(&p, &heads);
        assert!((w - 2.0 * (0.9f64 + 1e-12).ln()).abs() < 1e-12);
    }
}
