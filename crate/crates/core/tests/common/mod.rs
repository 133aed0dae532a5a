#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use parley_core::socialgraph::CommGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MEASURES: [&str; 8] = [
    "eigenvector",
    "closeness",
    "pagerank",
    "subgraph_density",
    "betweenness",
    "hub",
    "authority",
    "weighted_degree",
];

fn dense(g: &CommGraph) -> DMatrix<f64> {
    let n = g.n();
    DMatrix::from_fn(n, n, |i, j| g.weight(i, j))
}

/// Cyclic Jacobi rotations; returns eigenvalues and eigenvectors as columns.
fn jacobi_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off < 1e-30 * (1.0 + a.norm_squared()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let mut r = DMatrix::<f64>::identity(n, n);
                r[(p, p)] = c;
                r[(q, q)] = c;
                r[(p, q)] = s;
                r[(q, p)] = -s;
                a = r.transpose() * &a * &r;
                v *= &r;
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

/// Dominant eigenspace projector of a symmetric matrix applied to ones.
fn perron_projection(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let (values, vectors) = jacobi_eigen(m);
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * top.abs().max(1.0);
    let ones = DVector::from_element(n, 1.0);
    let mut proj = DVector::zeros(n);
    for k in 0..n {
        if values[k] >= top - tol {
            let v = vectors.column(k);
            proj += v * v.dot(&ones);
        }
    }
    let mut out: Vec<f64> = proj.iter().map(|x| x.abs()).collect();
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|x| *x /= norm);
    }
    out
}

fn l2(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn pagerank(a: &DMatrix<f64>, d: f64) -> Vec<f64> {
    let n = a.nrows();
    let nf = n as f64;
    let mut t = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let out: f64 = a.row(i).sum();
        for j in 0..n {
            t[(j, i)] = if out > 0.0 { a[(i, j)] / out } else { 1.0 / nf };
        }
    }
    let lhs = DMatrix::identity(n, n) - t * d;
    let rhs = DVector::from_element(n, (1.0 - d) / nf);
    let x = lhs.lu().solve(&rhs).expect("nonsingular");
    let s = x.sum();
    x.iter().map(|v| v / s).collect()
}

/// Every simple path from `s` to `t` with its total length.
fn simple_paths(sym: &DMatrix<f64>, s: usize, t: usize) -> Vec<(Vec<usize>, f64)> {
    fn walk(
        sym: &DMatrix<f64>,
        t: usize,
        path: &mut Vec<usize>,
        len: f64,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        let u = *path.last().unwrap();
        if u == t {
            out.push((path.clone(), len));
            return;
        }
        for v in 0..sym.nrows() {
            if sym[(u, v)] > 0.0 && !path.contains(&v) {
                path.push(v);
                walk(sym, t, path, len + 1.0 / sym[(u, v)], out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(sym, t, &mut vec![s], 0.0, &mut out);
    out
}

fn shortest(paths: &[(Vec<usize>, f64)]) -> Vec<&(Vec<usize>, f64)> {
    let best = paths.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    paths
        .iter()
        .filter(|p| (p.1 - best).abs() <= 1e-9 * best.max(1e-300))
        .collect()
}

/// All eight measures per node, computed without the library.
pub fn oracle(g: &CommGraph) -> Vec<[f64; 8]> {
    let n = g.n();
    let a = dense(g);
    let sym = &a + a.transpose();
    let has_edges = a.iter().any(|&w| w > 0.0);

    let eig = if has_edges {
        perron_projection(&sym)
    } else {
        vec![0.0; n]
    };
    let (hub, auth) = if has_edges {
        let hub = perron_projection(&(&a * a.transpose()));
        let mut auth: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a[(i, j)] * hub[i]).sum()).collect();
        l2(&mut auth);
        (hub, auth)
    } else {
        (vec![0.0; n], vec![0.0; n])
    };
    let pr = pagerank(&a, 0.85);

    let mut dist = vec![vec![f64::INFINITY; n]; n];
    let mut btw = vec![0.0; n];
    for s in 0..n {
        dist[s][s] = 0.0;
        for t in 0..n {
            if s == t {
                continue;
            }
            let paths = simple_paths(&sym, s, t);
            let best = shortest(&paths);
            if let Some(p) = best.first() {
                dist[s][t] = p.1;
            }
            if s < t && !best.is_empty() {
                let total = best.len() as f64;
                for v in 0..n {
                    if v == s || v == t {
                        continue;
                    }
                    let through = best.iter().filter(|p| p.0.contains(&v)).count() as f64;
                    btw[v] += through / total;
                }
            }
        }
    }
    let close: Vec<f64> = (0..n)
        .map(|s| {
            let reach: Vec<f64> = dist[s].iter().copied().filter(|d| d.is_finite()).collect();
            let sum: f64 = reach.iter().sum();
            if sum > 0.0 {
                (reach.len() - 1) as f64 / sum
            } else {
                0.0
            }
        })
        .collect();
    let density: Vec<f64> = (0..n)
        .map(|u| {
            let comp: Vec<usize> = (0..n).filter(|&v| dist[u][v].is_finite()).collect();
            let mut edges = 0;
            for (i, &x) in comp.iter().enumerate() {
                for &y in &comp[i + 1..] {
                    if sym[(x, y)] > 0.0 {
                        edges += 1;
                    }
                }
            }
            edges as f64 / comp.len() as f64
        })
        .collect();
    let wdeg: Vec<f64> = (0..n).map(|i| sym.row(i).sum()).collect();

    (0..n)
        .map(|i| [eig[i], close[i], pr[i], density[i], btw[i], hub[i], auth[i], wdeg[i]])
        .collect()
}

/// Directed graph on `n` nodes from the bits of `mask` over off-diagonal pairs.
pub fn directed_from_mask(n: usize, mask: u64) -> CommGraph {
    let mut w = vec![vec![0.0; n]; n];
    let mut bit = 0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            if i != j {
                if mask >> bit & 1 == 1 {
                    *cell = 1.0;
                }
                bit += 1;
            }
        }
    }
    CommGraph::from_weights(w)
}

/// Undirected graph on `n` nodes from the bits of `mask` over unordered pairs.
pub fn undirected_from_mask(n: usize, mask: u64) -> CommGraph {
    let mut w = vec![vec![0.0; n]; n];
    let mut bit = 0;
    for i in 0..n {
        for j in i + 1..n {
            if mask >> bit & 1 == 1 {
                w[i][j] = 1.0;
                w[j][i] = 1.0;
            }
            bit += 1;
        }
    }
    CommGraph::from_weights(w)
}

/// Seeded directed graphs with integer message counts, 2 to 6 nodes.
pub fn weighted_graphs(count: usize, seed: u64) -> Vec<CommGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.random_range(2..=6);
            let density = rng.random_range(0.2..0.9);
            let w = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            if i != j && rng.random_bool(density) {
                                f64::from(rng.random_range(1..=9))
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect();
            CommGraph::from_weights(w)
        })
        .collect()
}

/// Largest absolute difference between library and oracle, with the
/// measure and node where it occurs.
pub fn max_deviation(g: &CommGraph) -> (f64, &'static str, usize) {
    let lib = parley_core::socialgraph::centralities(g).expect("non-empty graph");
    let ora = oracle(g);
    let mut worst = (0.0, MEASURES[0], 0);
    for (i, (l, o)) in lib.iter().zip(&ora).enumerate() {
        for (k, (x, y)) in l.to_array().iter().zip(o).enumerate() {
            let d = (x - y).abs();
            if d > worst.0 || d.is_nan() {
                worst = (d, MEASURES[k], i);
            }
        }
    }
    worst
}
