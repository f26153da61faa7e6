use std::collections::BTreeMap;

use graftnet::retrieval::PprConfig;
use graftnet::store::{KnowledgeBase, Triple};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_kb(rng: &mut ChaCha8Rng, n: usize, relations: usize, edges: usize) -> KnowledgeBase {
    let mut triples = std::collections::BTreeSet::new();
    while triples.len() < edges {
        let s = rng.gen_range(0..n as u32);
        let o = rng.gen_range(0..n as u32);
        if s != o {
            triples.insert(Triple::new(s, rng.gen_range(0..relations as u32), o));
        }
    }
    KnowledgeBase::new(
        (0..n).map(|i| format!("e{i}")).collect(),
        (0..relations).map(|r| vec![format!("r{r}")]).collect(),
        triples.into_iter().collect(),
    )
    .unwrap()
}

/// Transition matrix built straight from the edge list, independently of
/// the library's row construction.
pub fn dense_transitions(kb: &KnowledgeBase, w: &[f64]) -> Vec<Vec<f64>> {
    let n = kb.num_entities();
    let mut m = vec![vec![0.0; n]; n];
    for u in 0..n {
        let edges: Vec<&Triple> = kb.triples().iter().filter(|t| t.subject.index() == u).collect();
        let mut per_type: BTreeMap<usize, usize> = BTreeMap::new();
        for t in &edges {
            *per_type.entry(t.relation.index()).or_default() += 1;
        }
        let total: f64 = per_type.keys().map(|&r| w[r]).sum();
        if total <= 0.0 {
            continue;
        }
        for t in &edges {
            let r = t.relation.index();
            m[u][t.object.index()] += w[r] / total / per_type[&r] as f64;
        }
    }
    m
}

pub fn restart_vector(n: usize, seeds: &[usize]) -> Vec<f64> {
    let mut s = vec![0.0; n];
    for &i in seeds {
        s[i] = 1.0 / seeds.len() as f64;
    }
    s
}

/// Solves `(I - (1-γ)(Wᵀ + s·dᵀ)) p = γ s` by Gaussian elimination with
/// partial pivoting, where `d` flags sink rows.
pub fn linear_solve_ppr(m: &[Vec<f64>], seeds: &[usize], gamma: f64) -> Vec<f64> {
    let n = m.len();
    let s = restart_vector(n, seeds);
    let sink: Vec<bool> = m.iter().map(|row| row.iter().all(|&x| x == 0.0)).collect();
    let mut a = vec![vec![0.0; n + 1]; n];
    for v in 0..n {
        for u in 0..n {
            let mut t = m[u][v];
            if sink[u] {
                t += s[v];
            }
            a[v][u] = if u == v { 1.0 } else { 0.0 } - (1.0 - gamma) * t;
        }
        a[v][n] = gamma * s[v];
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..=n {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}

/// Visit frequencies of a random walk that restarts to the seeds with
/// probability γ and from sinks.
pub fn random_walk_ppr(m: &[Vec<f64>], seeds: &[usize], gamma: f64, steps: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = m.len();
    let mut visits = vec![0usize; n];
    let pick_seed = |rng: &mut ChaCha8Rng| seeds[rng.gen_range(0..seeds.len())];
    let mut at = pick_seed(rng);
    for _ in 0..steps {
        let row = &m[at];
        let sink = row.iter().all(|&x| x == 0.0);
        at = if sink || rng.gen_bool(gamma) {
            pick_seed(rng)
        } else {
            let mut x: f64 = rng.gen();
            let mut next = n - 1;
            for (v, &p) in row.iter().enumerate() {
                if x < p {
                    next = v;
                    break;
                }
                x -= p;
            }
            next
        };
        visits[at] += 1;
    }
    visits.iter().map(|&c| c as f64 / steps as f64).collect()
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn tight() -> PprConfig {
    PprConfig {
        restart: 0.2,
        tolerance: 1e-12,
        max_iters: 1000,
    }
}
