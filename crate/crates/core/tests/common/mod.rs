//! Independent reference solvers used only by tests.
#![allow(dead_code)]

use std::collections::VecDeque;

/// Min-cost flow by successive shortest paths (SPFA), for small dense graphs.
pub struct MinCostFlow {
    n: usize,
    // (to, cap, cost, rev)
    adj: Vec<Vec<(usize, i64, i64, usize)>>,
}

impl MinCostFlow {
    pub fn new(n: usize) -> Self {
        Self { n, adj: vec![Vec::new(); n] }
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: i64) {
        let rf = self.adj[to].len();
        let rt = self.adj[from].len();
        self.adj[from].push((to, cap, cost, rf));
        self.adj[to].push((from, 0, -cost, rt));
    }

    /// Returns (flow, cost) of a min-cost maximum flow.
    pub fn run(&mut self, s: usize, t: usize) -> (i64, i64) {
        let (mut flow, mut cost) = (0, 0);
        loop {
            let mut dist = vec![i64::MAX; self.n];
            let mut prev: Vec<Option<(usize, usize)>> = vec![None; self.n];
            let mut in_queue = vec![false; self.n];
            let mut q = VecDeque::new();
            dist[s] = 0;
            q.push_back(s);
            while let Some(u) = q.pop_front() {
                in_queue[u] = false;
                for (ei, &(v, cap, c, _)) in self.adj[u].iter().enumerate() {
                    if cap > 0 && dist[u] + c < dist[v] {
                        dist[v] = dist[u] + c;
                        prev[v] = Some((u, ei));
                        if !in_queue[v] {
                            in_queue[v] = true;
                            q.push_back(v);
                        }
                    }
                }
            }
            if dist[t] == i64::MAX {
                return (flow, cost);
            }
            let mut push = i64::MAX;
            let mut v = t;
            while let Some((u, ei)) = prev[v] {
                push = push.min(self.adj[u][ei].1);
                v = u;
            }
            let mut v = t;
            while let Some((u, ei)) = prev[v] {
                self.adj[u][ei].1 -= push;
                let (to, _, _, rev) = self.adj[u][ei];
                self.adj[to][rev].1 += push;
                v = u;
            }
            flow += push;
            cost += push * dist[t];
        }
    }
}

/// Minimum number of single-person moves turning `h1` into `h2` (equal group totals),
/// solved as a transportation problem between sizes.
pub fn emd_transport(h1: &[u64], h2: &[u64]) -> i64 {
    let (a, b) = (h1.len(), h2.len());
    let (s, t) = (a + b, a + b + 1);
    let mut g = MinCostFlow::new(a + b + 2);
    for (i, &c) in h1.iter().enumerate() {
        g.add_edge(s, i, c as i64, 0);
    }
    for (j, &c) in h2.iter().enumerate() {
        g.add_edge(a + j, t, c as i64, 0);
    }
    for i in 0..a {
        for j in 0..b {
            g.add_edge(i, a + j, i64::MAX / 4, (i as i64 - j as i64).abs());
        }
    }
    let (flow, cost) = g.run(s, t);
    assert_eq!(flow as u64, h1.iter().sum::<u64>());
    cost
}

/// Minimum-cost perfect assignment on a square matrix, O(n^3) Hungarian method with
/// potentials. Returns (cost, column assigned to each row).
pub fn hungarian(cost: &[Vec<i64>]) -> (i64, Vec<usize>) {
    let n = cost.len();
    if n == 0 {
        return (0, Vec::new());
    }
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
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
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i][assign[i]]).sum();
    (total, assign)
}

fn blocks_of(mask: u32, n: usize) -> Vec<(usize, usize)> {
    // bit i set: a block boundary after index i
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..n {
        if i + 1 == n || mask & (1 << i) != 0 {
            out.push((start, i + 1));
            start = i + 1;
        }
    }
    out
}

/// Weighted least-squares isotonic optimum by enumerating every partition into
/// consecutive blocks, each fitted at `clamp(weighted mean, lo, hi)`.
pub fn l2_partition_oracle(y: &[f64], w: &[f64], lo: f64, hi: f64) -> f64 {
    let n = y.len();
    if n == 0 {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for mask in 0..(1u32 << (n - 1)) {
        let mut prev = f64::NEG_INFINITY;
        let mut obj = 0.0;
        let mut ok = true;
        for (a, b) in blocks_of(mask, n) {
            let sw: f64 = w[a..b].iter().sum();
            let swy: f64 = (a..b).map(|i| w[i] * y[i]).sum();
            let val = (swy / sw).clamp(lo, hi);
            if val < prev - 1e-12 {
                ok = false;
                break;
            }
            prev = val;
            obj += (a..b).map(|i| w[i] * (y[i] - val).powi(2)).sum::<f64>();
        }
        if ok {
            best = best.min(obj);
        }
    }
    best
}

/// Least-absolute-deviation isotonic optimum by dynamic programming over candidate
/// values (the data clamped into `[lo, hi]`, plus both bounds).
pub fn l1_dp_oracle(y: &[f64], lo: f64, hi: f64) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let mut cand: Vec<f64> = y.iter().map(|v| v.clamp(lo, hi)).collect();
    if lo.is_finite() {
        cand.push(lo);
    }
    if hi.is_finite() {
        cand.push(hi);
    }
    cand.sort_by(f64::total_cmp);
    cand.dedup();
    let mut cost: Vec<f64> = cand.iter().map(|c| (y[0] - c).abs()).collect();
    for &yi in &y[1..] {
        let mut run = f64::INFINITY;
        for (k, c) in cand.iter().enumerate() {
            run = run.min(cost[k]);
            cost[k] = run + (yi - c).abs();
        }
    }
    cost.into_iter().fold(f64::INFINITY, f64::min)
}

/// Optimum of the isotonic problem with every value at least `lower` and the last
/// value fixed at `last`.
pub fn constrained_oracle(y: &[f64], l1: bool, lower: f64, last: f64) -> f64 {
    let Some((&yn, head)) = y.split_last() else { return 0.0 };
    if l1 {
        l1_dp_oracle(head, lower, last) + (yn - last).abs()
    } else {
        l2_partition_oracle(head, &vec![1.0; head.len()], lower, last) + (yn - last).powi(2)
    }
}

/// Euclidean projection onto `{x >= 0, sum x = total}` by enumerating supports.
pub fn simplex_oracle(v: &[f64], total: f64) -> Vec<f64> {
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let s: f64 = support.iter().map(|&i| v[i]).sum();
        let shift = (s - total) / support.len() as f64;
        let mut x = vec![0.0; n];
        let mut ok = true;
        for &i in &support {
            x[i] = v[i] - shift;
            if x[i] < -1e-12 {
                ok = false;
            }
        }
        if !ok {
            continue;
        }
        let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, x));
        }
    }
    best.map(|(_, x)| x).unwrap_or_default()
}

/// Cost of a matching given as (child, index) per parent group.
pub fn matching_cost(parent: &[u64], children: &[Vec<u64>], assignment: &[(u32, u32)]) -> u64 {
    parent.iter().zip(assignment).map(|(&p, &(c, j))| p.abs_diff(children[c as usize][j as usize])).sum()
}

/// Hungarian optimum of the parent/child group matching problem.
pub fn matching_oracle(parent: &[u64], children: &[Vec<u64>]) -> i64 {
    let pool: Vec<u64> = children.iter().flatten().copied().collect();
    let cost: Vec<Vec<i64>> =
        parent.iter().map(|&p| pool.iter().map(|&c| (p as i64 - c as i64).abs()).collect()).collect();
    hungarian(&cost).0
}

/// True if `assignment` hits every child group exactly once.
pub fn is_bijection(children: &[Vec<u64>], assignment: &[(u32, u32)]) -> bool {
    let mut seen: Vec<Vec<bool>> = children.iter().map(|c| vec![false; c.len()]).collect();
    for &(c, j) in assignment {
        let slot = &mut seen[c as usize][j as usize];
        if *slot {
            return false;
        }
        *slot = true;
    }
    seen.iter().flatten().all(|&b| b)
}
