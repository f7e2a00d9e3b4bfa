//! Successive shortest paths on a dense transportation network.
//!
//! Nodes are a super source `S`, one node per supply atom, one node per demand atom
//! and a super sink `T`. Supply-to-demand arcs have unbounded capacity; their costs
//! may be `+inf` to forbid the pair. Dijkstra runs on reduced costs with Johnson
//! potentials, so every augmentation follows a cheapest `S -> T` path. The path
//! costs are nondecreasing, which makes the cost-vs-flow curve convex.

/// Residuals at or below this are treated as exhausted.
pub(crate) const FLOW_EPS: f64 = 1e-13;

pub(crate) struct Augmentation {
    pub mass: f64,
    /// Actual cost of the augmenting path, i.e. the marginal cost per unit of flow.
    pub slope: f64,
}

pub(crate) struct TransportSolver {
    n: usize,
    m: usize,
    supply: Vec<f64>,
    demand: Vec<f64>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    shipped: Vec<f64>,
    received: Vec<f64>,
    potential: Vec<f64>,
    dist: Vec<f64>,
    parent: Vec<usize>,
    done: Vec<bool>,
    total: f64,
}

const NONE: usize = usize::MAX;

impl TransportSolver {
    /// `cost` is row-major `supply.len() x demand.len()` and must be non-negative or `+inf`.
    pub fn new(supply: Vec<f64>, demand: Vec<f64>, cost: Vec<f64>) -> Self {
        let (n, m) = (supply.len(), demand.len());
        debug_assert_eq!(cost.len(), n * m);
        let v = n + m + 2;
        Self {
            n,
            m,
            supply,
            demand,
            cost,
            flow: vec![0.0; n * m],
            shipped: vec![0.0; n],
            received: vec![0.0; m],
            potential: vec![0.0; v],
            dist: vec![f64::INFINITY; v],
            parent: vec![NONE; v],
            done: vec![false; v],
            total: 0.0,
        }
    }

    pub fn total_flow(&self) -> f64 {
        self.total
    }

    fn source(&self) -> usize {
        0
    }

    fn sink(&self) -> usize {
        self.n + self.m + 1
    }

    fn relax(dist: &mut [f64], parent: &mut [usize], from: usize, to: usize, reduced: f64) {
        let d = dist[from] + reduced.max(0.0);
        if d < dist[to] {
            dist[to] = d;
            parent[to] = from;
        }
    }

    /// Dense Dijkstra from `S`. Ties go to the lowest node index, so runs are deterministic.
    fn shortest_paths(&mut self) -> bool {
        let (n, m) = (self.n, self.m);
        let (s, t) = (self.source(), self.sink());
        self.dist.fill(f64::INFINITY);
        self.parent.fill(NONE);
        self.done.fill(false);
        self.dist[s] = 0.0;
        loop {
            let mut u = NONE;
            let mut best = f64::INFINITY;
            for (v, (&d, &fin)) in self.dist.iter().zip(&self.done).enumerate() {
                if !fin && d < best {
                    best = d;
                    u = v;
                }
            }
            if u == NONE {
                break;
            }
            self.done[u] = true;
            if u == t {
                break;
            }
            if u == s {
                for i in 0..n {
                    if self.supply[i] - self.shipped[i] > FLOW_EPS {
                        let rc = self.potential[s] - self.potential[1 + i];
                        Self::relax(&mut self.dist, &mut self.parent, s, 1 + i, rc);
                    }
                }
            } else if u <= n {
                let i = u - 1;
                let row = &self.cost[i * m..(i + 1) * m];
                let pu = self.potential[u];
                for j in 0..m {
                    let c = row[j];
                    if c.is_finite() && !self.done[1 + n + j] {
                        let rc = c + pu - self.potential[1 + n + j];
                        Self::relax(&mut self.dist, &mut self.parent, u, 1 + n + j, rc);
                    }
                }
            } else {
                let j = u - 1 - n;
                let pu = self.potential[u];
                for i in 0..n {
                    if self.flow[i * m + j] > FLOW_EPS && !self.done[1 + i] {
                        let rc = -self.cost[i * m + j] + pu - self.potential[1 + i];
                        Self::relax(&mut self.dist, &mut self.parent, u, 1 + i, rc);
                    }
                }
                if self.demand[j] - self.received[j] > FLOW_EPS {
                    let rc = pu - self.potential[t];
                    Self::relax(&mut self.dist, &mut self.parent, u, t, rc);
                }
            }
        }
        let reach = self.dist[t];
        if !reach.is_finite() {
            return false;
        }
        for (p, &d) in self.potential.iter_mut().zip(&self.dist) {
            *p += d.min(reach);
        }
        true
    }

    /// Pushes flow along one cheapest augmenting path, at most `limit` units.
    /// Returns `None` once no augmenting path exists or `limit` is exhausted.
    pub fn augment(&mut self, limit: f64) -> Option<Augmentation> {
        if limit <= FLOW_EPS || !self.shortest_paths() {
            return None;
        }
        let (n, m) = (self.n, self.m);
        let t = self.sink();

        // collect the node path T <- ... <- S
        let mut path = Vec::new();
        let mut v = t;
        while v != NONE {
            path.push(v);
            v = self.parent[v];
        }
        path.reverse();

        let first = path[1] - 1;
        let last = path[path.len() - 2] - 1 - n;
        let mut mass = limit
            .min(self.supply[first] - self.shipped[first])
            .min(self.demand[last] - self.received[last]);
        let mut slope = 0.0;
        for w in path[1..path.len() - 1].windows(2) {
            let (a, b) = (w[0], w[1]);
            if a <= n {
                slope += self.cost[(a - 1) * m + (b - 1 - n)];
            } else {
                let idx = (b - 1) * m + (a - 1 - n);
                slope -= self.cost[idx];
                mass = mass.min(self.flow[idx]);
            }
        }
        if mass <= 0.0 {
            return None;
        }
        for w in path[1..path.len() - 1].windows(2) {
            let (a, b) = (w[0], w[1]);
            if a <= n {
                self.flow[(a - 1) * m + (b - 1 - n)] += mass;
            } else {
                let idx = (b - 1) * m + (a - 1 - n);
                self.flow[idx] = (self.flow[idx] - mass).max(0.0);
            }
        }
        self.shipped[first] += mass;
        self.received[last] += mass;
        self.total += mass;
        Some(Augmentation { mass, slope })
    }

    /// Augments until `target` units flow or the network is saturated.
    pub fn run_to(&mut self, target: f64) {
        while self.total < target - FLOW_EPS {
            if self.augment(target - self.total).is_none() {
                break;
            }
        }
    }

    /// Positive-flow entries as `(i, j, mass)`.
    pub fn positive_flows(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.flow
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > 0.0)
            .map(move |(idx, &f)| (idx / self.m, idx % self.m, f))
    }
}
