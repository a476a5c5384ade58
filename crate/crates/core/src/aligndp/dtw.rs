use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

/// Optimal warping path between two frame sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwAlignment {
    /// `(anchor index, positive index)` pairs from `(0, 0)` to the last frame of each.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Classic DTW with squared-Euclidean local cost and steps
/// `(1,0)`, `(0,1)`, `(1,1)`.
///
/// On equal accumulated cost the backtrace prefers the diagonal, then a step
/// in the anchor, then a step in the positive.
pub fn dtw_pairs(a: &Matrix, b: &Matrix) -> Result<DtwAlignment> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Empty("DTW needs at least one frame per side".into()));
    }
    if a.cols() != b.cols() {
        return Err(Error::Dimension(format!(
            "feature dims {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let n = a.rows();
    let m = b.rows();
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let local = squared_distance(a.row(i), b.row(j));
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = local + prev;
        }
    }

    let mut pairs = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        if i == 0 {
            j -= 1;
        } else if j == 0 {
            i -= 1;
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                i -= 1;
                j -= 1;
            } else if up <= left {
                i -= 1;
            } else {
                j -= 1;
            }
        }
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok(DtwAlignment {
        pairs,
        cost: acc[n * m - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path_cost(a: &Matrix, b: &Matrix, path: &[(usize, usize)]) -> f64 {
        path.iter()
            .map(|&(i, j)| squared_distance(a.row(i), b.row(j)))
            .sum()
    }

    // Every monotone boundary-anchored path, by recursive expansion.
    fn all_paths(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
        fn go(i: usize, j: usize, n: usize, m: usize, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
            cur.push((i, j));
            if i == n - 1 && j == m - 1 {
                out.push(cur.clone());
            } else {
                if i + 1 < n && j + 1 < m {
                    go(i + 1, j + 1, n, m, cur, out);
                }
                if i + 1 < n {
                    go(i + 1, j, n, m, cur, out);
                }
                if j + 1 < m {
                    go(i, j + 1, n, m, cur, out);
                }
            }
            cur.pop();
        }
        let mut out = Vec::new();
        go(0, 0, n, m, &mut Vec::new(), &mut out);
        out
    }

    fn is_valid_path(path: &[(usize, usize)], n: usize, m: usize) -> bool {
        path.first() == Some(&(0, 0))
            && path.last() == Some(&(n - 1, m - 1))
            && path.windows(2).all(|w| {
                let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
                matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
            })
    }

    #[test]
    fn identical_inputs_walk_the_diagonal() {
        let a = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let al = dtw_pairs(&a, &a).unwrap();
        assert_eq!(al.cost, 0.0);
        assert_eq!(al.pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn single_anchor_frame_pairs_with_everything() {
        let a = Matrix::from_rows(&[[0.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let al = dtw_pairs(&a, &b).unwrap();
        assert_eq!(al.pairs, vec![(0, 0), (0, 1), (0, 2)]);
        assert_eq!(al.cost, 14.0);
    }

    #[test]
    fn hand_grid_matches_enumeration() {
        let a = Matrix::from_rows(&[[0.0], [2.0], [1.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let paths = all_paths(3, 3);
        assert_eq!(paths.len(), 13);
        let best = paths
            .iter()
            .map(|p| path_cost(&a, &b, p))
            .fold(f64::INFINITY, f64::min);
        let al = dtw_pairs(&a, &b).unwrap();
        assert_eq!(al.cost, best);
        assert_eq!(path_cost(&a, &b, &al.pairs), best);
        assert!(is_valid_path(&al.pairs, 3, 3));
    }

    #[test]
    fn errors() {
        let empty = Matrix::zeros(0, 2);
        let one = Matrix::zeros(1, 2);
        assert!(dtw_pairs(&empty, &one).is_err());
        assert!(dtw_pairs(&one, &Matrix::zeros(1, 3)).is_err());
    }

    proptest! {
        #[test]
        fn cost_equals_exhaustive_minimum_4x4(
            av in prop::collection::vec(-3.0f64..3.0, 8),
            bv in prop::collection::vec(-3.0f64..3.0, 8),
        ) {
            let a = Matrix::new(4, 2, av).unwrap();
            let b = Matrix::new(4, 2, bv).unwrap();
            let al = dtw_pairs(&a, &b).unwrap();
            let best = all_paths(4, 4)
                .iter()
                .map(|p| path_cost(&a, &b, p))
                .fold(f64::INFINITY, f64::min);
            prop_assert!((al.cost - best).abs() < 1e-9);
            prop_assert!((path_cost(&a, &b, &al.pairs) - al.cost).abs() < 1e-9);
            prop_assert!(is_valid_path(&al.pairs, 4, 4));
        }
    }
}
