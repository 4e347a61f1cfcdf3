use crate::error::{Error, Result};

/// Query-to-event assignment, pairs sorted by query index.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub pairs: Vec<(usize, usize)>,
}

impl MatchResult {
    pub fn queries(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    pub fn cost(&self, cost: &[Vec<f64>]) -> f64 {
        self.pairs.iter().map(|&(q, g)| cost[q][g]).sum()
    }
}

/// Minimum-cost assignment of `rows` to `cols` (`rows.len() <= cols.len()`),
/// every row matched. Returns the column chosen for each row.
fn solve_rows(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> Vec<usize> {
    let (n, m) = (rows.len(), cols.len());
    debug_assert!(n <= m);
    let a = |i: usize, j: usize| cost[rows[i - 1]][cols[j - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = cols[j - 1];
        }
    }
    out
}

/// Optimal cost of a `min(rows, cols)`-sized matching over the sub-matrix.
fn optimum(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    if rows.len() <= cols.len() {
        let pick = solve_rows(cost, rows, cols);
        rows.iter().zip(&pick).map(|(&r, &c)| cost[r][c]).sum()
    } else {
        let t: Vec<Vec<f64>> = (0..cost[0].len()).map(|c| cost.iter().map(|row| row[c]).collect()).collect();
        let pick = solve_rows(&t, cols, rows);
        cols.iter().zip(&pick).map(|(&c, &r)| cost[r][c]).sum()
    }
}

/// Minimum-cost injective matching of size `min(rows, cols)`.
///
/// Among optimal matchings (costs equal within `1e-9` relative), returns the
/// one whose sorted pair list is lexicographically smallest.
pub fn hungarian_match(cost: &[Vec<f64>]) -> Result<MatchResult> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(Error::invalid("empty cost matrix"));
    }
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::shape("ragged cost matrix"));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::invalid("cost matrix has non-finite entries"));
    }
    let size = n.min(m);
    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..m).collect();
    let best = optimum(cost, &all_rows, &all_cols);
    let tol = 1e-9 * best.abs().max(1.0);

    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(size);
    let mut fixed_cost = 0.0;
    let mut free_cols = all_cols;
    for q in 0..n {
        if pairs.len() == size {
            break;
        }
        let rest: Vec<usize> = (q + 1..n).collect();
        let need = size - pairs.len() - 1;
        let mut chosen = None;
        for (ci, &g) in free_cols.iter().enumerate() {
            let cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != g).collect();
            if rest.len().min(cols.len()) < need {
                continue;
            }
            let total = fixed_cost + cost[q][g] + optimum(cost, &rest, &cols);
            if total <= best + tol {
                chosen = Some(ci);
                break;
            }
        }
        if let Some(ci) = chosen {
            let g = free_cols.remove(ci);
            fixed_cost += cost[q][g];
            pairs.push((q, g));
        }
    }
    debug_assert_eq!(pairs.len(), size);
    Ok(MatchResult { pairs })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Exhaustive search; ties resolved towards the smaller sorted pair list.
    pub(crate) fn brute_force(cost: &[Vec<f64>]) -> (f64, Vec<(usize, usize)>) {
        let (n, m) = (cost.len(), cost[0].len());
        let size = n.min(m);
        let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
        let mut stack = Vec::new();
        fn rec(
            cost: &[Vec<f64>],
            q: usize,
            size: usize,
            used: &mut Vec<bool>,
            stack: &mut Vec<(usize, usize)>,
            best: &mut Option<(f64, Vec<(usize, usize)>)>,
        ) {
            let (n, m) = (cost.len(), cost[0].len());
            if stack.len() == size {
                let c: f64 = stack.iter().map(|&(a, b)| cost[a][b]).sum();
                let better = match best {
                    None => true,
                    Some((bc, bp)) => {
                        let tol = 1e-9 * bc.abs().max(1.0);
                        c < *bc - tol || (c <= *bc + tol && stack.as_slice() < bp.as_slice())
                    }
                };
                if better {
                    *best = Some((c, stack.clone()));
                }
                return;
            }
            if q == n || n - q < size - stack.len() {
                return;
            }
            for g in 0..m {
                if !used[g] {
                    used[g] = true;
                    stack.push((q, g));
                    rec(cost, q + 1, size, used, stack, best);
                    stack.pop();
                    used[g] = false;
                }
            }
            rec(cost, q + 1, size, used, stack, best);
        }
        rec(cost, 0, size, &mut vec![false; m], &mut stack, &mut best);
        best.unwrap()
    }

    #[test]
    fn examples() {
        let r = hungarian_match(&[vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(r.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(r.cost(&[vec![1.0, 2.0], vec![3.0, 0.0]]), 1.0);

        let c = vec![vec![0.0, 5.0, 6.0], vec![4.0, 0.0, 7.0], vec![9.0, 8.0, 0.0]];
        assert_eq!(hungarian_match(&c).unwrap().pairs, vec![(0, 0), (1, 1), (2, 2)]);

        assert!(hungarian_match(&[]).is_err());
        assert!(hungarian_match(&[vec![]]).is_err());
        assert!(hungarian_match(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn ties_prefer_smaller_pair_lists() {
        let c = vec![vec![1.0; 3]; 4];
        assert_eq!(hungarian_match(&c).unwrap().pairs, vec![(0, 0), (1, 1), (2, 2)]);
        let c = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(hungarian_match(&c).unwrap().pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn tall_and_wide_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..500 {
            let (n, m) = if seed % 2 == 0 { (6, 4) } else { (rng.random_range(1..8), rng.random_range(1..8)) };
            let integer = seed % 3 == 0;
            let c: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..m)
                        .map(|_| if integer { rng.random_range(0..3) as f64 } else { rng.random_range(-2.0..2.0) })
                        .collect()
                })
                .collect();
            let got = hungarian_match(&c).unwrap();
            let (bc, bp) = brute_force(&c);
            assert!((got.cost(&c) - bc).abs() <= 1e-9, "seed {seed}");
            assert_eq!(got.pairs, bp, "seed {seed}");
        }
    }
}
