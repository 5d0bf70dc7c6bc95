//! Temporal 2-hop context sampling.
//!
//! A context holds exactly `K` node ids: the seed, then its admissible
//! 1-hop and 2-hop neighbors in breadth-first order, then random fallback
//! nodes when the neighborhood is too small. A node is admissible when it
//! has no timestamp or its timestamp is not after the seed's as-of time, so
//! no context ever contains information from the future of its seed.

use std::collections::{HashMap, HashSet};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EntityGraph;
use crate::rng;

/// Hop category of tokens drawn as random padding.
pub const FALLBACK_HOP: u8 = 3;
/// Size of the hop vocabulary: hops 0, 1, 2 and fallback.
pub const HOP_VOCAB: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledContext {
    pub seed: u32,
    pub seed_time: i64,
    pub tokens: Vec<u32>,
    pub hops: Vec<u8>,
    /// `timestamp(token) - seed_time`, 0 when the token has no timestamp.
    pub rel_time: Vec<i64>,
    /// Row-major `K x K` induced adjacency, symmetric with zero diagonal.
    pub local_adjacency: Vec<bool>,
    pub seed_index: usize,
}

impl SampledContext {
    pub fn k(&self) -> usize {
        self.tokens.len()
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.local_adjacency[a * self.k() + b]
    }

    /// Position pairs `(a, b)` with `a < b` that are connected.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let k = self.k();
        (0..k)
            .flat_map(|a| (a + 1..k).map(move |b| (a, b)))
            .filter(|&(a, b)| self.adjacent(a, b))
            .collect()
    }

    pub fn fallback_count(&self) -> usize {
        self.hops.iter().filter(|&&h| h == FALLBACK_HOP).count()
    }
}

/// JSON layout of one context, one per line in `sample` output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub seed: u32,
    pub seed_time: i64,
    pub seed_index: usize,
    pub tokens: Vec<u32>,
    pub hops: Vec<u8>,
    pub rel_time: Vec<i64>,
    /// Connected position pairs `[a, b]` with `a < b`.
    pub edges: Vec<[usize; 2]>,
}

impl From<&SampledContext> for ContextRecord {
    fn from(c: &SampledContext) -> Self {
        Self {
            seed: c.seed,
            seed_time: c.seed_time,
            seed_index: c.seed_index,
            tokens: c.tokens.clone(),
            hops: c.hops.clone(),
            rel_time: c.rel_time.clone(),
            edges: c.edges().into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }
}

impl From<ContextRecord> for SampledContext {
    fn from(r: ContextRecord) -> Self {
        let k = r.tokens.len();
        let mut local_adjacency = vec![false; k * k];
        for [a, b] in r.edges {
            local_adjacency[a * k + b] = true;
            local_adjacency[b * k + a] = true;
        }
        Self {
            seed: r.seed,
            seed_time: r.seed_time,
            tokens: r.tokens,
            hops: r.hops,
            rel_time: r.rel_time,
            local_adjacency,
            seed_index: r.seed_index,
        }
    }
}

/// A prediction seed and the time its context is taken at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedRequest {
    pub node: u32,
    pub as_of: i64,
}

impl SeedRequest {
    /// Uses the seed's own timestamp when `as_of` is not given.
    pub fn resolve(g: &EntityGraph, node: u32, as_of: Option<i64>) -> Result<Self> {
        let as_of = as_of.or_else(|| g.timestamp(node)).ok_or_else(|| {
            Error::Config(format!("seed {node} has no timestamp and no as-of time"))
        })?;
        Ok(Self { node, as_of })
    }
}

fn admissible(g: &EntityGraph, v: u32, seed_time: i64) -> bool {
    g.timestamp(v).is_none_or(|t| t <= seed_time)
}

/// Samples exactly `k` tokens around `req.node`.
pub fn sample_context<R: Rng + ?Sized>(
    g: &EntityGraph,
    req: SeedRequest,
    k: usize,
    rng: &mut R,
) -> Result<SampledContext> {
    assert!(k >= 1, "context size must be positive");
    let (seed, seed_time) = (req.node, req.as_of);
    if !admissible(g, seed, seed_time) {
        return Err(Error::InadmissibleSeed {
            seed,
            as_of: seed_time,
        });
    }
    let mut tokens = vec![seed];
    let mut hops = vec![0u8];
    let mut visited: HashSet<u32> = HashSet::from([seed]);
    let mut frontier = vec![seed];

    for hop in 1..=2u8 {
        let budget = k - tokens.len();
        if budget == 0 || frontier.is_empty() {
            break;
        }
        let mut next: Vec<u32> = frontier
            .iter()
            .flat_map(|&u| g.neighbors(u))
            .map(|nb| nb.node)
            .filter(|&v| !visited.contains(&v) && admissible(g, v, seed_time))
            .collect();
        next.sort_unstable();
        next.dedup();
        for &v in &next {
            visited.insert(v);
        }
        let mut picked = if next.len() > budget {
            reservoir(&next, budget, rng)
        } else {
            next.clone()
        };
        picked.sort_unstable();
        hops.extend(std::iter::repeat_n(hop, picked.len()));
        tokens.extend(picked);
        frontier = next;
    }

    let need = k - tokens.len();
    if need > 0 {
        let universe: Vec<u32> = (0..g.node_count() as u32)
            .filter(|&v| admissible(g, v, seed_time))
            .collect();
        if universe.is_empty() {
            return Err(Error::EmptyUniverse { seed });
        }
        let chosen: HashSet<u32> = tokens.iter().copied().collect();
        let fresh: Vec<u32> = universe
            .iter()
            .copied()
            .filter(|v| !chosen.contains(v))
            .collect();
        let mut fill: Vec<u32> = if fresh.len() >= need {
            index::sample(rng, fresh.len(), need)
                .into_iter()
                .map(|i| fresh[i])
                .collect()
        } else {
            let mut all = fresh;
            while all.len() < need {
                all.push(universe[rng.random_range(0..universe.len())]);
            }
            all
        };
        fill.sort_unstable();
        hops.extend(std::iter::repeat_n(FALLBACK_HOP, fill.len()));
        tokens.extend(fill);
    }

    let rel_time = tokens
        .iter()
        .map(|&v| g.timestamp(v).map_or(0, |t| t - seed_time))
        .collect();
    let local_adjacency = induced_adjacency(g, &tokens);
    Ok(SampledContext {
        seed,
        seed_time,
        tokens,
        hops,
        rel_time,
        local_adjacency,
        seed_index: 0,
    })
}

/// Uniform sample of `m` items from `items` (Algorithm R).
fn reservoir<R: Rng + ?Sized>(items: &[u32], m: usize, rng: &mut R) -> Vec<u32> {
    let mut out = items[..m].to_vec();
    for (i, &v) in items.iter().enumerate().skip(m) {
        let j = rng.random_range(0..=i);
        if j < m {
            out[j] = v;
        }
    }
    out
}

/// `K x K` adjacency of the token list, probing each token's sorted
/// adjacency against the token set.
fn induced_adjacency(g: &EntityGraph, tokens: &[u32]) -> Vec<bool> {
    let k = tokens.len();
    let mut positions: HashMap<u32, Vec<usize>> = HashMap::with_capacity(k);
    for (i, &v) in tokens.iter().enumerate() {
        positions.entry(v).or_default().push(i);
    }
    let mut adj = vec![false; k * k];
    for (a, &v) in tokens.iter().enumerate() {
        let mut last = None;
        for nb in g.neighbors(v) {
            if last == Some(nb.node) {
                continue;
            }
            last = Some(nb.node);
            if let Some(ps) = positions.get(&nb.node) {
                for &b in ps {
                    if b != a {
                        adj[a * k + b] = true;
                        adj[b * k + a] = true;
                    }
                }
            }
        }
    }
    adj
}

/// Samples one context per request. Request `i` draws from its own stream
/// keyed by `(master, stream_keys, i)`, so output is independent of
/// scheduling.
pub fn sample_many(
    g: &EntityGraph,
    requests: &[SeedRequest],
    k: usize,
    master: u64,
    stream_keys: &[u64],
) -> Result<Vec<SampledContext>> {
    requests
        .par_iter()
        .enumerate()
        .map(|(i, &req)| {
            let mut keys = stream_keys.to_vec();
            keys.push(i as u64);
            let mut r = rng::stream(master, &keys);
            sample_context(g, req, k, &mut r)
        })
        .collect()
}

/// Number of `(context, token)` pairs whose token lies after the seed time.
pub fn leakage_audit(contexts: &[SampledContext], g: &EntityGraph) -> usize {
    contexts
        .iter()
        .map(|c| {
            c.tokens
                .iter()
                .filter(|&&v| g.timestamp(v).is_some_and(|t| t > c.seed_time))
                .count()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn star() -> EntityGraph {
        EntityGraph::from_edges(
            vec!["hub".into(), "leaf".into()],
            &[1, 4],
            vec![Some(10), Some(1), Some(2), Some(3), Some(4)],
            vec!["leaf.hub".into()],
            &[(1, 0, 0), (2, 0, 0), (3, 0, 0), (4, 0, 0)],
        )
    }

    fn req(node: u32, as_of: i64) -> SeedRequest {
        SeedRequest { node, as_of }
    }

    #[test]
    fn star_fills_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = sample_context(&star(), req(0, 10), 5, &mut rng).unwrap();
        assert_eq!(c.tokens, vec![0, 1, 2, 3, 4]);
        assert_eq!(c.hops, vec![0, 1, 1, 1, 1]);
        assert_eq!(c.fallback_count(), 0);
        assert_eq!(c.rel_time, vec![0, -9, -8, -7, -6]);
    }

    #[test]
    fn star_pads_with_fallback() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = sample_context(&star(), req(0, 10), 8, &mut rng).unwrap();
        assert_eq!(c.k(), 8);
        assert_eq!(&c.hops[..5], &[0, 1, 1, 1, 1]);
        assert_eq!(c.fallback_count(), 3);
        // universe is the 5 star nodes, all already chosen
        assert!(c.tokens[5..].iter().all(|&v| v < 5));
        assert_eq!(c.hops.iter().filter(|&&h| h == 0).count(), 1);
    }

    #[test]
    fn chain_respects_time() {
        // a - b - c - d, c happens after a
        let g = EntityGraph::from_edges(
            vec!["n".into()],
            &[4],
            vec![Some(5), Some(3), Some(9), Some(1)],
            vec!["r".into()],
            &[(0, 1, 0), (1, 2, 0), (2, 3, 0)],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = sample_context(&g, req(0, 5), 3, &mut rng).unwrap();
        assert_eq!(c.tokens, vec![0, 1, 3]);
        assert_eq!(c.hops, vec![0, 1, FALLBACK_HOP]);
        assert!(c.adjacent(0, 1) && !c.adjacent(1, 2) && !c.adjacent(0, 2));
        assert_eq!(leakage_audit(&[c], &g), 0);
    }

    #[test]
    fn overflowing_frontier_is_subsampled() {
        let g = star();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = sample_context(&g, req(0, 10), 3, &mut rng).unwrap();
        assert_eq!(c.hops, vec![0, 1, 1]);
        assert!(c.tokens[1] < c.tokens[2]);
    }

    #[test]
    fn inadmissible_seed_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_context(&star(), req(1, 0), 3, &mut rng),
            Err(Error::InadmissibleSeed { seed: 1, as_of: 0 })
        ));
    }

    #[test]
    fn audit_counts_planted_violations() {
        let g = star();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = sample_context(&g, req(0, 10), 5, &mut rng).unwrap();
        assert_eq!(leakage_audit(&[], &g), 0);
        c.seed_time = 3; // leaves 4 (t=4) in the future... and hub (t=10)
        assert_eq!(leakage_audit(std::slice::from_ref(&c), &g), 2);
    }

    #[test]
    fn record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = sample_context(&star(), req(0, 10), 7, &mut rng).unwrap();
        let rec = ContextRecord::from(&c);
        let line = serde_json::to_string(&rec).unwrap();
        let back: ContextRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(SampledContext::from(back), c);
    }
}
