//! Dominance utilities for minimization problems.

/// `a` dominates `b` iff it is no worse in every objective and differs in at
/// least one (equal points do not dominate each other).
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Fast non-dominated sort. Returns rank-ordered fronts of indices into
/// `points`; every index appears in exactly one front, ascending within it.
pub fn nondominated_sort<P: AsRef<[f64]>>(points: &[P]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (points[i].as_ref(), points[j].as_ref());
            if dominates(a, b) {
                dominated_by[i].push(j);
                domination_count[j] += 1;
            } else if dominates(b, a) {
                dominated_by[j].push(i);
                domination_count[i] += 1;
            }
        }
    }

    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                domination_count[j] -= 1;
                if domination_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front` (aligned with `front`).
/// Boundary members of every objective get `f64::INFINITY`.
pub fn crowding_distance<P: AsRef<[f64]>>(points: &[P], front: &[usize]) -> Vec<f64> {
    let m = front.len();
    let mut dist = vec![0.0; m];
    if m == 0 {
        return dist;
    }
    if m <= 2 {
        return vec![f64::INFINITY; m];
    }
    let n_obj = points[front[0]].as_ref().len();
    let mut order: Vec<usize> = (0..m).collect();
    for k in 0..n_obj {
        let value = |slot: usize| points[front[slot]].as_ref()[k];
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));
        let lo = value(order[0]);
        let hi = value(order[m - 1]);
        dist[order[0]] = f64::INFINITY;
        dist[order[m - 1]] = f64::INFINITY;
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        for w in 1..m - 1 {
            let slot = order[w];
            if dist[slot].is_finite() {
                dist[slot] += (value(order[w + 1]) - value(order[w - 1])) / span;
            }
        }
    }
    dist
}

/// Area dominated by `points` and bounded by `reference` (2 objectives,
/// minimization). Points not strictly better than the reference in both
/// objectives contribute nothing.
pub fn hypervolume_2d<P: AsRef<[f64]>>(points: &[P], reference: [f64; 2]) -> f64 {
    let mut inside: Vec<[f64; 2]> = points
        .iter()
        .map(|p| {
            let p = p.as_ref();
            [p[0], p[1]]
        })
        .filter(|p| p[0] < reference[0] && p[1] < reference[1])
        .collect();
    inside.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut area = 0.0;
    let mut ceiling = reference[1];
    for p in inside {
        if p[1] < ceiling {
            area += (reference[0] - p[0]) * (ceiling - p[1]);
            ceiling = p[1];
        }
    }
    area
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_front0(points: &[[f64; 2]]) -> Vec<usize> {
        (0..points.len()).filter(|&i| !points.iter().any(|q| dominates(q, &points[i]))).collect()
    }

    #[test]
    fn sort_example() {
        let pts = [[1.0, 5.0], [2.0, 2.0], [5.0, 1.0], [3.0, 3.0]];
        assert_eq!(nondominated_sort(&pts), vec![vec![0, 1, 2], vec![3]]);
        assert_eq!(brute_front0(&pts), vec![0, 1, 2]);
    }

    #[test]
    fn single_and_equal_points() {
        assert_eq!(nondominated_sort(&[[3.0, 4.0]]), vec![vec![0]]);
        assert_eq!(nondominated_sort(&[[1.0, 1.0], [1.0, 1.0]]), vec![vec![0, 1]]);
        assert!(nondominated_sort::<[f64; 2]>(&[]).is_empty());
    }

    #[test]
    fn chain_gives_one_front_per_point() {
        let pts = [[3.0, 3.0], [1.0, 1.0], [2.0, 2.0]];
        assert_eq!(nondominated_sort(&pts), vec![vec![1], vec![2], vec![0]]);
    }

    #[test]
    fn crowding_boundaries_are_infinite() {
        let pts = [[1.0, 4.0], [2.0, 3.0], [3.0, 2.0], [4.0, 1.0]];
        let d = crowding_distance(&pts, &[0, 1, 2, 3]);
        assert!(d[0].is_infinite() && d[3].is_infinite());
        // each interior point spans 2/3 of the range in both objectives
        assert!((d[1] - 4.0 / 3.0).abs() < 1e-12);
        assert!((d[2] - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(crowding_distance(&pts, &[1, 2]), vec![f64::INFINITY; 2]);
    }

    #[test]
    fn hypervolume_examples() {
        assert_eq!(hypervolume_2d(&[[1.0, 1.0]], [2.0, 3.0]), 2.0);
        // [1,4]x[3,4] plus [2,4]x[1,4] minus their overlap: 3 + 6 - 2
        assert_eq!(hypervolume_2d(&[[1.0, 3.0], [2.0, 1.0]], [4.0, 4.0]), 7.0);
        assert_eq!(hypervolume_2d(&[[5.0, 1.0]], [4.0, 4.0]), 0.0);
        // dominated points add nothing
        assert_eq!(hypervolume_2d(&[[1.0, 1.0], [2.0, 2.0]], [3.0, 3.0]), 4.0);
    }
}
