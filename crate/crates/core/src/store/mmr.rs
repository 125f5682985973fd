//! Greedy maximal marginal relevance selection.

use std::cmp::Ordering;

/// Selects up to `k` candidates, each maximizing
/// `lambda * query_sim[i] - (1 - lambda) * max_{s in selected} pair_sim(i, s)`.
///
/// The first pick maximizes `lambda * query_sim[i]`. Equal objectives go to the
/// candidate with the smaller id. Returns candidate indices in selection order.
pub fn mmr_select<F>(query_sim: &[f64], ids: &[&str], pair_sim: F, k: usize, lambda: f64) -> Vec<usize>
where
    F: Fn(usize, usize) -> f64,
{
    debug_assert_eq!(query_sim.len(), ids.len());
    let n = query_sim.len();
    let k = k.min(n);
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut remaining: Vec<usize> = (0..n).collect();
    // Running max similarity of each candidate to the selected set.
    let mut max_to_selected = vec![f64::NEG_INFINITY; n];

    while selected.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &i) in remaining.iter().enumerate() {
            let objective = if selected.is_empty() {
                lambda * query_sim[i]
            } else {
                lambda * query_sim[i] - (1.0 - lambda) * max_to_selected[i]
            };
            let better = match best {
                None => true,
                Some((best_pos, best_obj)) => match objective.total_cmp(&best_obj) {
                    Ordering::Greater => true,
                    Ordering::Equal => ids[i] < ids[remaining[best_pos]],
                    Ordering::Less => false,
                },
            };
            if better {
                best = Some((pos, objective));
            }
        }
        let Some((pos, _)) = best else { break };
        let chosen = remaining.swap_remove(pos);
        selected.push(chosen);
        for &i in &remaining {
            let s = pair_sim(i, chosen);
            if s > max_to_selected[i] {
                max_to_selected[i] = s;
            }
        }
    }
    selected
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_prefers_diverse_candidate() {
        // sim to query: d1 0.9, d2 0.85, d3 0.3; sim(d1,d2)=0.95, sim(d1,d3)=0.1.
        // Step two: d2 scores 0.5*0.85 - 0.5*0.95 = -0.05, d3 scores 0.5*0.3 - 0.5*0.1 = 0.10.
        let q = [0.9, 0.85, 0.3];
        let pair = [[1.0, 0.95, 0.1], [0.95, 1.0, 0.2], [0.1, 0.2, 1.0]];
        let picked = mmr_select(&q, &["d1", "d2", "d3"], |i, j| pair[i][j], 2, 0.5);
        assert_eq!(picked, vec![0, 2]);
    }

    #[test]
    fn lambda_one_is_relevance_order() {
        let q = [0.2, 0.9, 0.9, 0.5];
        let picked = mmr_select(&q, &["a", "c", "b", "d"], |_, _| 1.0, 4, 1.0);
        assert_eq!(picked, vec![2, 1, 3, 0]);
    }

    #[test]
    fn exhausts_pool() {
        let q = [0.5, 0.4];
        assert_eq!(mmr_select(&q, &["a", "b"], |_, _| 0.0, 10, 0.5).len(), 2);
        assert!(mmr_select(&[], &[], |_, _| 0.0, 3, 0.5).is_empty());
    }
}
