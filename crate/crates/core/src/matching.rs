//! Maximum bipartite matching by augmenting paths (Kuhn's algorithm).
//!
//! Left vertices are services, right vertices are VM instances. Requests have
//! a handful of services, so the O(V * E) bound is never a concern here.

/// Maximum matching of `adj.len()` left vertices onto `right` right vertices.
/// Returns, per left vertex, the matched right vertex.
pub fn max_matching(adj: &[Vec<usize>], right: usize) -> Vec<Option<usize>> {
    let mut owner: Vec<Option<usize>> = vec![None; right];
    let mut seen = vec![false; right];
    for left in 0..adj.len() {
        seen.iter_mut().for_each(|s| *s = false);
        augment(left, adj, &mut owner, &mut seen);
    }
    let mut assignment = vec![None; adj.len()];
    for (r, l) in owner.iter().enumerate() {
        if let Some(l) = *l {
            assignment[l] = Some(r);
        }
    }
    assignment
}

fn augment(
    left: usize,
    adj: &[Vec<usize>],
    owner: &mut [Option<usize>],
    seen: &mut [bool],
) -> bool {
    for &r in &adj[left] {
        if seen[r] {
            continue;
        }
        seen[r] = true;
        let free = match owner[r] {
            None => true,
            Some(other) => augment(other, adj, owner, seen),
        };
        if free {
            owner[r] = Some(left);
            return true;
        }
    }
    false
}

/// Whether every left vertex can be matched to a distinct right vertex.
pub fn is_perfect_on_left(adj: &[Vec<usize>], right: usize) -> bool {
    max_matching(adj, right).iter().all(Option::is_some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive Hall-condition check over all subsets of the left side.
    fn hall_holds(adj: &[Vec<usize>]) -> bool {
        let n = adj.len();
        (1u32..(1 << n)).all(|mask| {
            let mut nbrs = std::collections::BTreeSet::new();
            for (i, a) in adj.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    nbrs.extend(a.iter().copied());
                }
            }
            nbrs.len() >= mask.count_ones() as usize
        })
    }

    #[test]
    fn shared_single_vertex() {
        let adj = vec![vec![0], vec![0]];
        assert!(!is_perfect_on_left(&adj, 1));
        assert_eq!(max_matching(&adj, 1).iter().flatten().count(), 1);
    }

    #[test]
    fn needs_augmenting_path() {
        // greedy would give 0->0 and strand 1
        let adj = vec![vec![0, 1], vec![0]];
        let m = max_matching(&adj, 2);
        assert_eq!(m, vec![Some(1), Some(0)]);
    }

    proptest! {
        #[test]
        fn agrees_with_hall(edges in proptest::collection::vec(proptest::collection::btree_set(0usize..6, 0..4), 1..6)) {
            let adj: Vec<Vec<usize>> = edges.into_iter().map(|s| s.into_iter().collect()).collect();
            let m = max_matching(&adj, 6);
            // distinct and valid
            let used: Vec<usize> = m.iter().flatten().copied().collect();
            let mut dedup = used.clone();
            dedup.sort();
            dedup.dedup();
            prop_assert_eq!(used.len(), dedup.len());
            for (l, r) in m.iter().enumerate() {
                if let Some(r) = r {
                    prop_assert!(adj[l].contains(r));
                }
            }
            prop_assert_eq!(is_perfect_on_left(&adj, 6), hall_holds(&adj));
        }
    }
}
