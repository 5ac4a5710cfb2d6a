use rand::seq::SliceRandom;

use super::{BipartiteGraph, Edge, ScreenError};
use crate::rng::SeedStream;

/// Replaces `round_half_up(fraction × in-degree)` incident edges of every
/// target by edges from sources that were not connected to it.
///
/// Each target draws one shuffle of its incident edges and one shuffle of
/// its candidate sources from a stream keyed by the seed and the target
/// ticker, and the first `k` of each are used. Replacement sets are
/// therefore nested across fractions for a fixed seed. Inserted edges keep
/// the magnitude of the edge they replace and are flagged synthetic.
pub fn randomize_edges(graph: &BipartiteGraph, fraction: f64, seed: u64) -> Result<BipartiteGraph, ScreenError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(ScreenError::InvalidFraction(fraction));
    }
    let mut out = graph.clone();
    if fraction == 0.0 {
        return Ok(out);
    }
    let streams = SeedStream::new(seed);
    let mut edges = Vec::with_capacity(graph.edges.len());
    for target in 0..graph.target_tickers.len() {
        let incident = graph.incident(target);
        let deg = incident.len();
        let k = ((fraction * deg as f64) + 0.5 + 1e-9).floor() as usize;
        let k = k.min(deg);
        if k == 0 {
            edges.extend_from_slice(incident);
            continue;
        }
        let ticker = &graph.target_tickers[target];
        let mut rng = streams.rng(&["randomize", ticker]);
        let mut order: Vec<usize> = (0..deg).collect();
        order.shuffle(&mut rng);
        let mut candidates: Vec<usize> = (0..graph.source_tickers.len())
            .filter(|&s| !incident.iter().any(|e| e.source == s))
            .filter(|&s| !(graph.config.exclude_self_edges && graph.source_tickers[s] == *ticker))
            .collect();
        if candidates.len() < k {
            return Err(ScreenError::InsufficientCandidates { target: ticker.clone(), needed: k, available: candidates.len() });
        }
        candidates.shuffle(&mut rng);
        let replaced: Vec<usize> = order[..k].to_vec();
        for (pos, e) in incident.iter().enumerate() {
            if let Some(r) = replaced.iter().position(|&p| p == pos) {
                edges.push(Edge { source: candidates[r], target, t_beta: e.t_beta.abs(), synthetic: true, degenerate: false });
            } else {
                edges.push(*e);
            }
        }
    }
    out.edges = edges;
    out.sort_edges();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::screening::ScreenConfig;
    use chrono::NaiveDate;

    fn graph() -> BipartiteGraph {
        let mut g = BipartiteGraph::empty(
            (0..10).map(|j| format!("S{j}")).collect(),
            (0..3).map(|i| format!("T{i}")).collect(),
            NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
            ScreenConfig::default(),
        );
        for (t, deg) in [(0usize, 4usize), (1, 1), (2, 0)] {
            for s in 0..deg {
                g.edges.push(Edge { source: s, target: t, t_beta: -3.0 - s as f64, synthetic: false, degenerate: false });
            }
        }
        g.sort_edges();
        g
    }

    #[test]
    fn zero_fraction_is_identity() {
        let g = graph();
        assert_eq!(randomize_edges(&g, 0.0, 7).unwrap(), g);
    }

    #[test]
    fn full_replacement_removes_all_originals() {
        let g = graph();
        for seed in 0..20 {
            let r = randomize_edges(&g, 1.0, seed).unwrap();
            assert_eq!(r.in_degrees(), g.in_degrees());
            assert!(r.edges.iter().all(|e| !g.has_edge(e.source, e.target) && e.synthetic));
            assert!(r.validate());
        }
    }

    #[test]
    fn half_of_four_is_two() {
        let g = graph();
        for seed in 0..50 {
            let r = randomize_edges(&g, 0.5, seed).unwrap();
            let replaced = r.incident(0).iter().filter(|e| e.synthetic).count();
            assert_eq!(replaced, 2);
            // 0.5 × 1 rounds half up
            assert_eq!(r.incident(1).iter().filter(|e| e.synthetic).count(), 1);
        }
    }

    #[test]
    fn nested_across_fractions_and_deterministic() {
        let g = graph();
        let a = randomize_edges(&g, 0.25, 3).unwrap();
        let b = randomize_edges(&g, 0.5, 3).unwrap();
        assert_eq!(a, randomize_edges(&g, 0.25, 3).unwrap());
        for e in a.incident(0).iter().filter(|e| e.synthetic) {
            assert!(b.has_edge(e.source, e.target));
        }
    }

    #[test]
    fn insufficient_candidates() {
        let mut g = graph();
        g.source_tickers.truncate(5);
        assert!(matches!(randomize_edges(&g, 1.0, 0), Err(ScreenError::InsufficientCandidates { .. })));
        assert!(matches!(randomize_edges(&g, 1.5, 0), Err(ScreenError::InvalidFraction(_))));
    }
}
