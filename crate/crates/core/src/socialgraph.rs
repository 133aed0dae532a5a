//! Cumulative communication graphs and the eight-measure centrality vector.
//!
//! PageRank and HITS run on the directed message-count graph. Eigenvector
//! centrality, closeness, betweenness and subgraph density use the
//! symmetrized graph, where the weight of {u, v} is w(u→v) + w(v→u) and the
//! length of an edge is 1 / weight.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Game, Power};
use crate::error::{Error, Result};

pub const PAGERANK_DAMPING: f64 = 0.85;
/// Convergence tolerance of the eigenvector-type iterations.
pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITERS: usize = 1000;
/// Relative slack when comparing path lengths for ties.
const PATH_EPS: f64 = 1e-9;

/// Directed weighted graph over a fixed node set.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    weights: Vec<Vec<f64>>,
    cutoff: Option<u32>,
}

impl CommGraph {
    pub fn empty(n: usize) -> Self {
        CommGraph {
            weights: vec![vec![0.0; n]; n],
            cutoff: None,
        }
    }

    /// Graph from a dense weight matrix; the diagonal is ignored.
    pub fn from_weights(mut weights: Vec<Vec<f64>>) -> Self {
        for (i, row) in weights.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        CommGraph {
            weights,
            cutoff: None,
        }
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn cutoff(&self) -> Option<u32> {
        self.cutoff
    }

    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[from][to]
    }

    pub fn add_message(&mut self, from: usize, to: usize) {
        self.weights[from][to] += 1.0;
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.weights.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, w)| **w > 0.0)
                .map(move |(j, &w)| (i, j, w))
        })
    }

    pub fn scaled(&self, c: f64) -> CommGraph {
        CommGraph {
            weights: self
                .weights
                .iter()
                .map(|r| r.iter().map(|w| w * c).collect())
                .collect(),
            cutoff: self.cutoff,
        }
    }

    fn symmetrized(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        (0..n)
            .map(|i| (0..n).map(|j| self.weights[i][j] + self.weights[j][i]).collect())
            .collect()
    }
}

/// Graph of all messages in `game` with `abs_index ≤ cutoff`; nodes are the
/// seven powers in [`Power::ALL`] order.
pub fn accumulate(game: &Game, cutoff: u32) -> CommGraph {
    let mut g = CommGraph::empty(Power::ALL.len());
    for t in &game.threads {
        for m in t.messages.iter().filter(|m| m.abs_index <= cutoff) {
            g.add_message(m.sender.index(), m.receiver.index());
        }
    }
    g.cutoff = Some(cutoff);
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CentralityVector {
    pub eigenvector: f64,
    pub closeness: f64,
    pub pagerank: f64,
    pub subgraph_density: f64,
    pub betweenness: f64,
    pub hub: f64,
    pub authority: f64,
    pub weighted_degree: f64,
}

impl CentralityVector {
    pub const NAMES: [&'static str; 8] = [
        "eigenvector",
        "closeness",
        "pagerank",
        "subgraph_density",
        "betweenness",
        "hub",
        "authority",
        "weighted_degree",
    ];

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.eigenvector,
            self.closeness,
            self.pagerank,
            self.subgraph_density,
            self.betweenness,
            self.hub,
            self.authority,
            self.weighted_degree,
        ]
    }
}

/// Centrality vectors of every node.
pub fn centralities(g: &CommGraph) -> Result<Vec<CentralityVector>> {
    let n = g.n();
    if n == 0 {
        return Err(Error::invalid("centrality of an empty graph"));
    }
    let sym = g.symmetrized();
    let eig = eigenvector_centrality(&sym);
    let close = closeness(&sym);
    let pr = pagerank(g, PAGERANK_DAMPING);
    let dens = subgraph_density(&sym);
    let btw = betweenness(&sym);
    let (hub, auth) = hits(g);
    Ok((0..n)
        .map(|i| CentralityVector {
            eigenvector: eig[i],
            closeness: close[i],
            pagerank: pr[i],
            subgraph_density: dens[i],
            betweenness: btw[i],
            hub: hub[i],
            authority: auth[i],
            weighted_degree: (0..n).map(|j| g.weights[i][j] + g.weights[j][i]).sum(),
        })
        .collect())
}

pub fn centralities_of(g: &CommGraph, player: Power) -> Result<CentralityVector> {
    let all = centralities(g)?;
    all.get(player.index())
        .copied()
        .ok_or_else(|| Error::invalid(format!("{player} is not a node of this graph")))
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

fn normalize_l2(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Dominant direction of a symmetric matrix whose largest eigenvalue is
/// strictly dominant in magnitude, started from the all-ones vector.
///
/// Power iteration on `M^(2^k)`: the matrix is squared and rescaled until it
/// stops changing, which converges to the projector onto the dominant
/// eigenspace; the result is that projector applied to the ones vector.
fn dominant_direction(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let scale = |a: &mut Vec<Vec<f64>>| {
        let max = a.iter().flatten().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if max > 0.0 {
            a.iter_mut().flatten().for_each(|v| *v /= max);
        }
    };
    let mut p = m.to_vec();
    scale(&mut p);
    let mut settled = 0;
    for _ in 0..POWER_MAX_ITERS {
        let mut q = mat_mul(&p, &p);
        scale(&mut q);
        let change = p
            .iter()
            .flatten()
            .zip(q.iter().flatten())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        p = q;
        if change < POWER_TOL {
            // a couple more squarings push the residual far below tolerance
            settled += 1;
            if settled > 2 {
                break;
            }
        }
    }
    let mut v: Vec<f64> = (0..n).map(|i| p[i].iter().sum::<f64>().abs()).collect();
    normalize_l2(&mut v);
    v
}

fn has_edges(m: &[Vec<f64>]) -> bool {
    m.iter().flatten().any(|&w| w > 0.0)
}

fn eigenvector_centrality(sym: &[Vec<f64>]) -> Vec<f64> {
    let n = sym.len();
    if !has_edges(sym) {
        return vec![0.0; n];
    }
    // the identity shift makes the Perron root strictly dominant
    let mut shifted = sym.to_vec();
    for (i, row) in shifted.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    dominant_direction(&shifted)
}

/// Hub and authority scores, each L2-normalized.
fn hits(g: &CommGraph) -> (Vec<f64>, Vec<f64>) {
    let n = g.n();
    let a = &g.weights;
    if !has_edges(a) {
        return (vec![0.0; n], vec![0.0; n]);
    }
    // A Aᵀ
    let aat: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| a[i][k] * a[j][k]).sum())
                .collect()
        })
        .collect();
    let hub = dominant_direction(&aat);
    let mut auth: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a[i][j] * hub[i]).sum()).collect();
    normalize_l2(&mut auth);
    (hub, auth)
}

/// PageRank on the directed weighted graph; dangling nodes spread their
/// mass uniformly.
fn pagerank(g: &CommGraph, damping: f64) -> Vec<f64> {
    let n = g.n();
    let nf = n as f64;
    let out: Vec<f64> = g.weights.iter().map(|r| r.iter().sum()).collect();
    let mut x = vec![1.0 / nf; n];
    for _ in 0..10_000 {
        let dangling: f64 = (0..n).filter(|&i| out[i] == 0.0).map(|i| x[i]).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        let mut next = vec![base; n];
        for i in 0..n {
            if out[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let w = g.weights[i][j];
                if w > 0.0 {
                    next[j] += damping * x[i] * w / out[i];
                }
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let change: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = next;
        if change < 1e-15 {
            break;
        }
    }
    x
}

/// Single-source shortest path lengths with edge length 1 / weight.
fn dijkstra(sym: &[Vec<f64>], s: usize) -> Vec<f64> {
    let n = sym.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[s] = 0.0;
    for _ in 0..n {
        let u = match (0..n)
            .filter(|&i| !done[i] && dist[i].is_finite())
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))
        {
            Some(u) => u,
            None => break,
        };
        done[u] = true;
        for v in 0..n {
            if sym[u][v] > 0.0 {
                let nd = dist[u] + 1.0 / sym[u][v];
                if nd < dist[v] {
                    dist[v] = nd;
                }
            }
        }
    }
    dist
}

/// `(reachable − 1) / Σ distances`, 0 for isolated nodes.
fn closeness(sym: &[Vec<f64>]) -> Vec<f64> {
    (0..sym.len())
        .map(|s| {
            let d = dijkstra(sym, s);
            let reach: Vec<f64> = d.into_iter().filter(|x| x.is_finite()).collect();
            let total: f64 = reach.iter().sum();
            if total > 0.0 {
                (reach.len() - 1) as f64 / total
            } else {
                0.0
            }
        })
        .collect()
}

#[inline]
fn same_length(a: f64, b: f64) -> bool {
    (a - b).abs() <= PATH_EPS * a.abs().max(b.abs()).max(1e-300)
}

/// Brandes' algorithm on the symmetrized weighted graph; each unordered
/// pair counted once, no normalization.
fn betweenness(sym: &[Vec<f64>]) -> Vec<f64> {
    let n = sym.len();
    let mut bc = vec![0.0; n];
    for s in 0..n {
        let dist = dijkstra(sym, s);
        let mut order: Vec<usize> = (0..n).filter(|&v| dist[v].is_finite()).collect();
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));
        let mut sigma = vec![0.0; n];
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        sigma[s] = 1.0;
        for &v in &order {
            if v == s {
                continue;
            }
            for u in 0..n {
                if sym[u][v] > 0.0
                    && dist[u].is_finite()
                    && u != v
                    && same_length(dist[u] + 1.0 / sym[u][v], dist[v])
                {
                    preds[v].push(u);
                }
            }
            sigma[v] = preds[v].iter().map(|&u| sigma[u]).sum();
        }
        let mut delta = vec![0.0; n];
        for &w in order.iter().rev() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                bc[w] += delta[w];
            }
        }
    }
    bc.iter_mut().for_each(|b| *b /= 2.0);
    bc
}

/// |E| / |V| of each node's connected component (undirected edges).
fn subgraph_density(sym: &[Vec<f64>]) -> Vec<f64> {
    let n = sym.len();
    let mut comp = vec![usize::MAX; n];
    let mut c = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = c;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if sym[u][v] > 0.0 && comp[v] == usize::MAX {
                    comp[v] = c;
                    stack.push(v);
                }
            }
        }
        c += 1;
    }
    let mut nodes = vec![0usize; c];
    let mut edges = vec![0usize; c];
    for u in 0..n {
        nodes[comp[u]] += 1;
        for v in u + 1..n {
            if sym[u][v] > 0.0 {
                edges[comp[u]] += 1;
            }
        }
    }
    (0..n)
        .map(|u| edges[comp[u]] as f64 / nodes[comp[u]] as f64)
        .collect()
}

/// Centralities of all players after each message of a game.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralityTrace {
    pub game_id: u32,
    /// `(cutoff abs_index, vector per power)` in message order.
    pub snapshots: Vec<(u32, Vec<CentralityVector>)>,
}

impl CentralityTrace {
    /// Snapshot at the given cutoff, i.e. including that message.
    pub fn at(&self, cutoff: u32) -> Option<&[CentralityVector]> {
        self.snapshots
            .binary_search_by_key(&cutoff, |s| s.0)
            .ok()
            .map(|i| self.snapshots[i].1.as_slice())
    }
}

/// Sweeps a game message by message, recomputing centralities whenever the
/// accumulated graph changes.
pub fn centrality_trace(game: &Game) -> Result<CentralityTrace> {
    let mut g = CommGraph::empty(Power::ALL.len());
    let mut snapshots: Vec<(u32, Vec<CentralityVector>)> = Vec::new();
    let msgs = game.messages();
    let mut i = 0;
    while i < msgs.len() {
        let cutoff = msgs[i].abs_index;
        while i < msgs.len() && msgs[i].abs_index == cutoff {
            g.add_message(msgs[i].sender.index(), msgs[i].receiver.index());
            i += 1;
        }
        g.cutoff = Some(cutoff);
        snapshots.push((cutoff, centralities(&g)?));
    }
    Ok(CentralityTrace {
        game_id: game.game_id,
        snapshots,
    })
}

/// Writes `game,player,cutoff,<8 measures>`.
pub fn write_trace_csv<W: Write>(out: W, traces: &[CentralityTrace]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["game", "player", "cutoff"];
    header.extend(CentralityVector::NAMES);
    w.write_record(&header)?;
    for t in traces {
        for (cutoff, vs) in &t.snapshots {
            for (p, v) in Power::ALL.iter().zip(vs) {
                let mut rec = vec![t.game_id.to_string(), p.name().to_string(), cutoff.to_string()];
                rec.extend(v.to_array().iter().map(|x| format!("{x:.10}")));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `game,cutoff,source,target,weight` for the given snapshots.
pub fn write_edge_list_csv<W: Write>(out: W, snapshots: &BTreeMap<u32, CommGraph>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["game", "cutoff", "source", "target", "weight"])?;
    for (game, g) in snapshots {
        let cutoff = g.cutoff.map(|c| c.to_string()).unwrap_or_default();
        for (i, j, wt) in g.edges() {
            let name = |k: usize| Power::ALL.get(k).map_or_else(|| k.to_string(), |p| p.name().into());
            w.write_record([game.to_string(), cutoff.clone(), name(i), name(j), wt.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn undirected(n: usize, edges: &[(usize, usize)]) -> CommGraph {
        let mut w = vec![vec![0.0; n]; n];
        for &(a, b) in edges {
            w[a][b] = 1.0;
            w[b][a] = 1.0;
        }
        CommGraph::from_weights(w)
    }

    #[test]
    fn triangle() {
        let c = centralities(&undirected(3, &[(0, 1), (1, 2), (0, 2)])).unwrap();
        for v in &c {
            assert!((v.pagerank - 1.0 / 3.0).abs() < 1e-12);
            assert_eq!(v.betweenness, 0.0);
            assert!((v.subgraph_density - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn path_betweenness() {
        let c = centralities(&undirected(3, &[(0, 1), (1, 2)])).unwrap();
        assert_eq!(c.iter().map(|v| v.betweenness).collect::<Vec<_>>(), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn directed_star_hits() {
        // leaves 1..4 all point at center 0
        let mut w = vec![vec![0.0; 5]; 5];
        for row in w.iter_mut().skip(1) {
            row[0] = 1.0;
        }
        let c = centralities(&CommGraph::from_weights(w)).unwrap();
        assert!((c[0].authority - 1.0).abs() < 1e-12);
        assert_eq!(c[0].hub, 0.0);
        for v in &c[1..] {
            assert!((v.hub - 0.5).abs() < 1e-12);
            assert_eq!(v.authority, 0.0);
        }
    }

    #[test]
    fn empty_graph_is_an_error() {
        assert!(centralities(&CommGraph::empty(0)).is_err());
        let c = centralities(&CommGraph::empty(7)).unwrap();
        assert!(c.iter().all(|v| v.eigenvector == 0.0 && v.closeness == 0.0));
        assert!((c[0].pagerank - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn closeness_uses_inverse_weights() {
        let mut g = undirected(2, &[(0, 1)]);
        g.add_message(0, 1);
        // symmetrized weight 3 → length 1/3
        let c = centralities(&g).unwrap();
        assert!((c[0].closeness - 3.0).abs() < 1e-12);
        assert_eq!(c[0].weighted_degree, 3.0);
    }
}
