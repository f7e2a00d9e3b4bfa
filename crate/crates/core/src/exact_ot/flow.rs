//! Maximum flow with real capacities.
//!
//! [`Dinic`] is a general level-graph max-flow used for one-shot threshold graphs.
//! [`ThresholdMatcher`] grows a bipartite threshold graph edge group by edge group and
//! keeps its flow between thresholds, augmenting along BFS paths.

use std::collections::VecDeque;

use super::ssp::FLOW_EPS;

#[derive(Clone, Debug)]
struct Arc {
    to: usize,
    cap: f64,
}

/// Dinic's algorithm on an explicit arc list.
#[derive(Clone, Debug)]
pub(crate) struct Dinic {
    adj: Vec<Vec<usize>>,
    arcs: Vec<Arc>,
    level: Vec<usize>,
    iter: Vec<usize>,
}

impl Dinic {
    pub fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
            arcs: Vec::new(),
            level: vec![0; nodes],
            iter: vec![0; nodes],
        }
    }

    pub fn add_arc(&mut self, from: usize, to: usize, cap: f64) {
        self.adj[from].push(self.arcs.len());
        self.arcs.push(Arc { to, cap });
        self.adj[to].push(self.arcs.len());
        self.arcs.push(Arc { to: from, cap: 0.0 });
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    /// Flow currently carried by the arc created at index `arc`.
    pub fn flow_on(&self, arc: usize) -> f64 {
        self.arcs[arc ^ 1].cap
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.fill(usize::MAX);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &a in &self.adj[u] {
                let arc = &self.arcs[a];
                if arc.cap > FLOW_EPS && self.level[arc.to] == usize::MAX {
                    self.level[arc.to] = self.level[u] + 1;
                    queue.push_back(arc.to);
                }
            }
        }
        self.level[t] != usize::MAX
    }

    fn dfs(&mut self, u: usize, t: usize, pushed: f64) -> f64 {
        if u == t {
            return pushed;
        }
        while self.iter[u] < self.adj[u].len() {
            let a = self.adj[u][self.iter[u]];
            let (to, cap) = (self.arcs[a].to, self.arcs[a].cap);
            if cap > FLOW_EPS && self.level[to] == self.level[u] + 1 {
                let got = self.dfs(to, t, pushed.min(cap));
                if got > 0.0 {
                    self.arcs[a].cap -= got;
                    self.arcs[a ^ 1].cap += got;
                    return got;
                }
            }
            self.iter[u] += 1;
        }
        0.0
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        while self.bfs(s, t) {
            self.iter.fill(0);
            loop {
                let f = self.dfs(s, t, f64::INFINITY);
                if f <= FLOW_EPS {
                    break;
                }
                total += f;
            }
        }
        total
    }
}

/// Bipartite flow on the graph `{(i, j) : cost(i, j) <= threshold}` with a threshold
/// that only ever increases.
pub(crate) struct ThresholdMatcher<'a> {
    n: usize,
    m: usize,
    supply: &'a [f64],
    demand: &'a [f64],
    cost: &'a [f64],
    threshold: f64,
    flow: Vec<f64>,
    shipped: Vec<f64>,
    received: Vec<f64>,
    total: f64,
}

impl<'a> ThresholdMatcher<'a> {
    pub fn new(supply: &'a [f64], demand: &'a [f64], cost: &'a [f64]) -> Self {
        let (n, m) = (supply.len(), demand.len());
        Self {
            n,
            m,
            supply,
            demand,
            cost,
            threshold: f64::NEG_INFINITY,
            flow: vec![0.0; n * m],
            shipped: vec![0.0; n],
            received: vec![0.0; m],
            total: 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Raises the threshold and augments to the new maximum flow.
    pub fn raise_to(&mut self, threshold: f64) -> f64 {
        debug_assert!(threshold >= self.threshold);
        self.threshold = threshold;
        while self.augment_once() {}
        self.total
    }

    /// One BFS augmenting path over sources `0..n` and targets `n..n+m`.
    fn augment_once(&mut self) -> bool {
        let (n, m) = (self.n, self.m);
        let mut parent = vec![usize::MAX; n + m];
        let mut queue = VecDeque::new();
        for i in 0..n {
            if self.supply[i] - self.shipped[i] > FLOW_EPS {
                parent[i] = i;
                queue.push_back(i);
            }
        }
        let mut end = None;
        'search: while let Some(u) = queue.pop_front() {
            if u < n {
                for j in 0..m {
                    let v = n + j;
                    if parent[v] == usize::MAX && self.cost[u * m + j] <= self.threshold {
                        parent[v] = u;
                        if self.demand[j] - self.received[j] > FLOW_EPS {
                            end = Some(j);
                            break 'search;
                        }
                        queue.push_back(v);
                    }
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if parent[i] == usize::MAX && self.flow[i * m + j] > FLOW_EPS {
                        parent[i] = u;
                        queue.push_back(i);
                    }
                }
            }
        }
        let Some(j_end) = end else {
            return false;
        };

        let mut amount = self.demand[j_end] - self.received[j_end];
        let mut v = n + j_end;
        loop {
            let u = parent[v];
            if v >= n {
                // forward arc u -> v
                v = u;
            } else if u == v {
                amount = amount.min(self.supply[v] - self.shipped[v]);
                break;
            } else {
                amount = amount.min(self.flow[v * m + (u - n)]);
                v = u;
            }
        }
        if amount <= FLOW_EPS {
            return false;
        }

        let mut v = n + j_end;
        loop {
            let u = parent[v];
            if v >= n {
                self.flow[u * m + (v - n)] += amount;
                v = u;
            } else if u == v {
                self.shipped[v] += amount;
                break;
            } else {
                let idx = v * m + (u - n);
                self.flow[idx] = (self.flow[idx] - amount).max(0.0);
                v = u;
            }
        }
        self.received[j_end] += amount;
        self.total += amount;
        true
    }
}
