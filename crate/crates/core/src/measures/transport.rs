//! Exact discrete optimal transport by the transportation simplex.
//!
//! The basis is a spanning tree of the bipartite supply/demand graph with
//! `m + n - 1` cells. Each pivot prices every nonbasic cell against the dual
//! potentials, pushes flow around the cycle closed by the entering cell and
//! drops the blocking cell. Long runs of degenerate pivots switch pricing to
//! Bland's rule, which cannot cycle.

use crate::error::{Error, Result};

/// An optimal coupling in sparse form.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// `(source, target, mass)` for every basic cell, zero-mass cells included.
    pub flows: Vec<(usize, usize, f64)>,
    /// `sum mass * cost`.
    pub cost: f64,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    i: usize,
    j: usize,
    flow: f64,
}

/// Minimise `sum_ij pi_ij c_ij` over couplings `pi` with row sums `a` and column sums `b`.
///
/// `cost` is row-major `a.len() x b.len()`. The masses must agree; callers validate.
pub fn solve(a: &[f64], b: &[f64], cost: &[f64]) -> Result<TransportPlan> {
    let (m, n) = (a.len(), b.len());
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput("transport problem with an empty side".into()));
    }
    if cost.len() != m * n {
        return Err(Error::InvalidInput(format!("cost matrix has {} entries, expected {}", cost.len(), m * n)));
    }
    let scale = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let tol = 1e-13 * (1.0 + scale);

    let mut basis = northwest_corner(a, b);
    let nodes = m + n;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let mut is_basic = vec![false; m * n];
    let mut parent_edge = vec![usize::MAX; nodes];
    let mut visited = vec![false; nodes];
    let mut queue = Vec::with_capacity(nodes);

    let max_pivots = 50 * (m + n) * (m + n) + 1000;
    let mut degenerate_streak = 0usize;
    for _ in 0..max_pivots {
        for list in adj.iter_mut() {
            list.clear();
        }
        is_basic.iter_mut().for_each(|x| *x = false);
        for (k, c) in basis.iter().enumerate() {
            adj[c.i].push(k);
            adj[m + c.j].push(k);
            is_basic[c.i * n + c.j] = true;
        }

        // duals from row 0 over the tree
        visited.iter_mut().for_each(|x| *x = false);
        queue.clear();
        queue.push(0);
        visited[0] = true;
        u[0] = 0.0;
        let mut head = 0;
        while head < queue.len() {
            let node = queue[head];
            head += 1;
            for &k in &adj[node] {
                let c = basis[k];
                let (other, known_row) = if node < m { (m + c.j, true) } else { (c.i, false) };
                if visited[other] {
                    continue;
                }
                visited[other] = true;
                if known_row {
                    v[c.j] = cost[c.i * n + c.j] - u[c.i];
                } else {
                    u[c.i] = cost[c.i * n + c.j] - v[c.j];
                }
                queue.push(other);
            }
        }
        if queue.len() != nodes {
            return Err(Error::Domain("transport basis lost connectivity".into()));
        }

        let use_bland = degenerate_streak > m + n;
        let mut entering: Option<(usize, usize)> = None;
        let mut best = -tol;
        'price: for i in 0..m {
            let row = &cost[i * n..(i + 1) * n];
            for j in 0..n {
                if is_basic[i * n + j] {
                    continue;
                }
                let r = row[j] - u[i] - v[j];
                if r < best {
                    entering = Some((i, j));
                    if use_bland {
                        break 'price;
                    }
                    best = r;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let total = basis.iter().map(|c| c.flow * cost[c.i * n + c.j]).sum();
            return Ok(TransportPlan { flows: basis.iter().map(|c| (c.i, c.j, c.flow)).collect(), cost: total });
        };

        // tree path from row ei to column ej
        visited.iter_mut().for_each(|x| *x = false);
        queue.clear();
        queue.push(ei);
        visited[ei] = true;
        let target = m + ej;
        let mut head = 0;
        while head < queue.len() && !visited[target] {
            let node = queue[head];
            head += 1;
            for &k in &adj[node] {
                let c = basis[k];
                let other = if node < m { m + c.j } else { c.i };
                if !visited[other] {
                    visited[other] = true;
                    parent_edge[other] = k;
                    queue.push(other);
                }
            }
        }
        let mut path = Vec::new();
        let mut node = target;
        while node != ei {
            let k = parent_edge[node];
            path.push(k);
            let c = basis[k];
            node = if node < m { m + c.j } else { c.i };
        }
        // path[0] touches column ej and gives up flow; signs alternate from there
        let mut leave_pos = 0;
        let mut theta = f64::INFINITY;
        for (pos, &k) in path.iter().enumerate().step_by(2) {
            let f = basis[k].flow;
            if f < theta || (use_bland && f == theta && k < path[leave_pos]) {
                theta = f;
                leave_pos = pos;
            }
        }
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis[k].flow -= theta;
            } else {
                basis[k].flow += theta;
            }
        }
        let leaving = path[leave_pos];
        basis[leaving] = Cell { i: ei, j: ej, flow: theta };
        for &k in path.iter().step_by(2) {
            if basis[k].flow < 0.0 {
                basis[k].flow = 0.0;
            }
        }
        if theta > 0.0 {
            degenerate_streak = 0;
        } else {
            degenerate_streak += 1;
        }
    }
    Err(Error::Domain(format!("transport simplex did not converge in {max_pivots} pivots")))
}

fn northwest_corner(a: &[f64], b: &[f64]) -> Vec<Cell> {
    let (m, n) = (a.len(), b.len());
    let mut ra = a.to_vec();
    let mut rb = b.to_vec();
    let mut cells = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let f = ra[i].min(rb[j]).max(0.0);
        cells.push(Cell { i, j, flow: f });
        let row_done = ra[i] <= rb[j];
        ra[i] -= f;
        rb[j] -= f;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if (row_done && i < m - 1) || j == n - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    cells
}
