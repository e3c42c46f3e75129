//! Viewpoint sequencing: open TSP, cluster remapping, outlier merging and
//! intra-cluster reordering.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::params::MergeMode;
use crate::Vec3;

/// Open path over point indices. `length` sums consecutive legs only.
#[derive(Clone, Debug, PartialEq)]
pub struct Tour {
    pub order: Vec<usize>,
    pub length: f64,
    pub open: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Cluster {
    pub id: usize,
    pub segment: usize,
    /// Point indices in visiting order.
    pub members: Vec<usize>,
}

impl Cluster {
    pub fn entry(&self) -> usize {
        self.members[0]
    }

    pub fn exit(&self) -> usize {
        self.members[self.members.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn dist(points: &[Vec3], a: usize, b: usize) -> f64 {
    (points[a] - points[b]).norm()
}

/// Sum of consecutive leg lengths of `order`.
pub fn path_length(points: &[Vec3], order: &[usize]) -> f64 {
    order.windows(2).map(|w| dist(points, w[0], w[1])).sum()
}

/// Path length including the leg from `start` to the first point.
pub fn path_length_from(points: &[Vec3], start: &Vec3, order: &[usize]) -> f64 {
    order.first().map_or(0.0, |&f| (points[f] - start).norm()) + path_length(points, order)
}

/// Pluggable open-tour solver; the first visited point is the one nearest `start`.
pub trait TourSolver {
    fn solve(&self, points: &[Vec3], start: &Vec3) -> Tour;
}

/// Nearest-neighbor construction refined by 2-opt and Or-opt.
#[derive(Clone, Copy, Debug, Default)]
pub struct LocalSearchSolver;

impl TourSolver for LocalSearchSolver {
    fn solve(&self, points: &[Vec3], start: &Vec3) -> Tour {
        solve_tsp(points, start)
    }
}

const IMPROVE_EPS: f64 = 1e-10;
const KICK_BUDGET: usize = 2_000_000;
const SHUFFLE_WINDOW: usize = 8;
const KICK_SEED: u64 = 0x70u64 << 8 | 0x0b;

/// Index of the point nearest `start`; ties go to the lower index.
pub fn nearest_to(points: &[Vec3], start: &Vec3) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = (p - start).norm();
        if d < bd {
            bd = d;
            best = i;
        }
    }
    best
}

/// Greedy nearest-neighbor path from `first`.
pub fn nearest_neighbor(points: &[Vec3], first: usize) -> Vec<usize> {
    let n = points.len();
    let mut used = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut cur = first;
    used[cur] = true;
    order.push(cur);
    for _ in 1..n {
        let mut best = usize::MAX;
        let mut bd = f64::INFINITY;
        for (j, &u) in used.iter().enumerate() {
            if !u {
                let d = dist(points, cur, j);
                if d < bd {
                    bd = d;
                    best = j;
                }
            }
        }
        used[best] = true;
        order.push(best);
        cur = best;
    }
    order
}

/// First improving 2-opt move on an open path with `order[0]` fixed.
fn two_opt_pass(points: &[Vec3], order: &mut [usize]) -> bool {
    let n = order.len();
    for i in 1..n {
        for j in i + 1..n {
            let a = order[i - 1];
            let b = order[i];
            let c = order[j];
            let before = dist(points, a, b) + if j + 1 < n { dist(points, c, order[j + 1]) } else { 0.0 };
            let after = dist(points, a, c) + if j + 1 < n { dist(points, b, order[j + 1]) } else { 0.0 };
            if after < before - IMPROVE_EPS {
                order[i..=j].reverse();
                return true;
            }
        }
    }
    false
}

/// First improving Or-opt move: relocate a run of 1..=3 points (optionally
/// reversed) elsewhere in the path, never before `order[0]`.
fn or_opt_pass(points: &[Vec3], order: &mut Vec<usize>) -> bool {
    let n = order.len();
    for len in 1..=3usize {
        for i in 1..n {
            if i + len > n {
                break;
            }
            let j = i + len - 1;
            let prev = order[i - 1];
            let next = order.get(j + 1).copied();
            let first = order[i];
            let last = order[j];
            let removed = dist(points, prev, first)
                + next.map_or(0.0, |x| dist(points, last, x))
                - next.map_or(0.0, |x| dist(points, prev, x));
            // Insert between order[k] and order[k + 1] for k outside [i - 1, j].
            for k in 0..n {
                if k + 1 >= i && k <= j {
                    continue;
                }
                let u = order[k];
                let w = order.get(k + 1).copied();
                for rev in [false, true] {
                    let (h, t) = if rev { (last, first) } else { (first, last) };
                    let added = dist(points, u, h) + w.map_or(0.0, |x| dist(points, t, x))
                        - w.map_or(0.0, |x| dist(points, u, x));
                    if added < removed - IMPROVE_EPS {
                        let mut run: Vec<usize> = order.drain(i..=j).collect();
                        if rev {
                            run.reverse();
                        }
                        let at = if k < i { k + 1 } else { k + 1 - len };
                        order.splice(at..at, run);
                        return true;
                    }
                }
            }
        }
    }
    false
}

/// Run 2-opt and Or-opt until neither finds an improving move.
pub fn improve(points: &[Vec3], order: &mut Vec<usize>) -> usize {
    let mut moves = 0;
    loop {
        if two_opt_pass(points, order) || or_opt_pass(points, order) {
            moves += 1;
            continue;
        }
        return moves;
    }
}

/// Open tour starting at the point nearest `start`: nearest neighbor, then
/// 2-opt and Or-opt to local optimality, then seeded perturbation rounds.
pub fn solve_tsp(points: &[Vec3], start: &Vec3) -> Tour {
    if points.is_empty() {
        return Tour {
            order: vec![],
            length: 0.0,
            open: true,
        };
    }
    let first = nearest_to(points, start);
    let mut order = nearest_neighbor(points, first);
    improve(points, &mut order);
    let mut length = path_length(points, &order);
    let n = points.len();
    if n >= 5 {
        // Alternate double-bridge kicks and shuffles of a short window, each
        // re-optimized by the same local search; only strictly shorter paths
        // are kept.
        let kicks = (KICK_BUDGET / (n * n)).min(20 * n);
        let mut rng = ChaCha8Rng::seed_from_u64(KICK_SEED);
        for k in 0..kicks {
            let mut cand = order.clone();
            if k % 2 == 0 {
                let mut cuts = [rng.gen_range(1..n), rng.gen_range(1..n), rng.gen_range(1..n)];
                cuts.sort_unstable();
                let [a, b, c] = cuts;
                if a == b || b == c {
                    continue;
                }
                cand[a..c].rotate_left(b - a);
            } else {
                let w = (n - 1).min(SHUFFLE_WINDOW);
                let i = rng.gen_range(1..=n - w);
                cand[i..i + w].shuffle(&mut rng);
            }
            improve(points, &mut cand);
            let len = path_length(points, &cand);
            if len < length - IMPROVE_EPS {
                order = cand;
                length = len;
            }
        }
    }
    Tour {
        order,
        length,
        open: true,
    }
}

/// Maximal runs of consecutive same-segment points.
pub fn remap_clusters(order: &[usize], segment_of: &[usize]) -> Vec<Cluster> {
    let mut out: Vec<Cluster> = Vec::new();
    for &v in order {
        match out.last_mut() {
            Some(c) if c.segment == segment_of[v] => c.members.push(v),
            _ => out.push(Cluster {
                id: out.len(),
                segment: segment_of[v],
                members: vec![v],
            }),
        }
    }
    out
}

/// Fuse neighbors in the sequence that share a segment.
fn fuse_adjacent(clusters: Vec<Cluster>) -> Vec<Cluster> {
    let mut out: Vec<Cluster> = Vec::with_capacity(clusters.len());
    for c in clusters {
        match out.last_mut() {
            Some(last) if last.segment == c.segment => last.members.extend(c.members),
            _ => out.push(c),
        }
    }
    out
}

fn endpoint_distance(points: &[Vec3], a: &Cluster, b: &Cluster) -> f64 {
    [a.entry(), a.exit()]
        .iter()
        .flat_map(|&x| [b.entry(), b.exit()].map(|y| dist(points, x, y)))
        .fold(f64::INFINITY, f64::min)
}

/// Absorb clusters smaller than tau into a same-segment partner, for
/// tau = 1..=tau_max. Partners are chosen by endpoint distance (ties by
/// sequence proximity, then position) under [`MergeMode::Nearest`], or by
/// sequence proximity (ties by distance) under [`MergeMode::SequenceNearest`].
pub fn merge_outliers(clusters: &[Cluster], points: &[Vec3], tau_max: usize, mode: MergeMode) -> Vec<Cluster> {
    let mut cur = clusters.to_vec();
    for tau in 1..=tau_max {
        loop {
            let mut action = None;
            for (i, c) in cur.iter().enumerate() {
                if c.len() >= tau {
                    continue;
                }
                let mut best: Option<(usize, (f64, usize))> = None;
                for (j, o) in cur.iter().enumerate() {
                    if j == i || o.segment != c.segment {
                        continue;
                    }
                    let d = endpoint_distance(points, c, o);
                    let gap = i.abs_diff(j);
                    let better = match best {
                        None => true,
                        Some((_, (bd, bg))) => match mode {
                            MergeMode::Nearest => d < bd - 1e-12 || ((d - bd).abs() <= 1e-12 && gap < bg),
                            MergeMode::SequenceNearest => gap < bg || (gap == bg && d < bd - 1e-12),
                        },
                    };
                    if better {
                        best = Some((j, (d, gap)));
                    }
                }
                if let Some((j, _)) = best {
                    action = Some((i, j));
                    break;
                }
            }
            let Some((i, j)) = action else { break };
            let outlier = cur[i].clone();
            let recv = &mut cur[j];
            let to_entry = [outlier.entry(), outlier.exit()]
                .iter()
                .map(|&x| dist(points, x, recv.entry()))
                .fold(f64::INFINITY, f64::min);
            let to_exit = [outlier.entry(), outlier.exit()]
                .iter()
                .map(|&x| dist(points, x, recv.exit()))
                .fold(f64::INFINITY, f64::min);
            let mut run = outlier.members.clone();
            if to_entry < to_exit {
                // Prepend, with the member nearest the entry adjacent to it.
                if dist(points, run[0], recv.entry()) < dist(points, run[run.len() - 1], recv.entry()) {
                    run.reverse();
                }
                run.extend(recv.members.iter().copied());
                recv.members = run;
            } else {
                if dist(points, run[run.len() - 1], recv.exit()) < dist(points, run[0], recv.exit()) {
                    run.reverse();
                }
                recv.members.extend(run);
            }
            cur.remove(i);
            cur = fuse_adjacent(cur);
        }
    }
    cur
}

/// One visiting order of a cluster with its internal path length.
#[derive(Clone, Debug)]
struct Candidate {
    order: Vec<usize>,
    internal: f64,
}

/// Shortest Hamiltonian path for every (first, last) pair (Held-Karp).
fn exhaustive_candidates(points: &[Vec3], members: &[usize]) -> Vec<Candidate> {
    let m = members.len();
    if m == 1 {
        return vec![Candidate {
            order: members.to_vec(),
            internal: 0.0,
        }];
    }
    let full = (1usize << m) - 1;
    let d = |a: usize, b: usize| dist(points, members[a], members[b]);
    let mut out = Vec::new();
    for s in 0..m {
        let mut cost = vec![f64::INFINITY; (1 << m) * m];
        let mut parent = vec![usize::MAX; (1 << m) * m];
        cost[(1 << s) * m + s] = 0.0;
        for mask in 0..=full {
            if mask & (1 << s) == 0 {
                continue;
            }
            for last in 0..m {
                let c = cost[mask * m + last];
                if !c.is_finite() {
                    continue;
                }
                for nxt in 0..m {
                    if mask & (1 << nxt) != 0 {
                        continue;
                    }
                    let nm = mask | (1 << nxt);
                    let nc = c + d(last, nxt);
                    if nc < cost[nm * m + nxt] {
                        cost[nm * m + nxt] = nc;
                        parent[nm * m + nxt] = last;
                    }
                }
            }
        }
        for e in 0..m {
            if e == s {
                continue;
            }
            let mut order = Vec::with_capacity(m);
            let (mut mask, mut cur) = (full, e);
            while cur != usize::MAX {
                order.push(members[cur]);
                let p = parent[mask * m + cur];
                mask &= !(1 << cur);
                cur = p;
            }
            order.reverse();
            out.push(Candidate {
                internal: cost[full * m + e],
                order,
            });
        }
    }
    out
}

fn heuristic_candidates(points: &[Vec3], members: &[usize]) -> Vec<Candidate> {
    let mut orders = vec![members.to_vec(), members.iter().rev().copied().collect()];
    for base in orders.clone() {
        let mut o = base;
        improve(points, &mut o);
        orders.push(o);
    }
    orders
        .into_iter()
        .map(|order| Candidate {
            internal: path_length(points, &order),
            order,
        })
        .collect()
}

/// Maximum cluster size reordered exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 8;

/// Reorder members inside each cluster, keeping cluster order.
///
/// Clusters of up to [`EXHAUSTIVE_LIMIT`] members contribute every optimal
/// (first, last) path; larger ones contribute their current order, its
/// reversal and locally improved variants. A dynamic program over the
/// cluster sequence picks the combination with the shortest total path from
/// `start`, so the result is never longer than the input sequence.
pub fn local_reorder(clusters: &[Cluster], points: &[Vec3], start: &Vec3) -> Vec<Cluster> {
    if clusters.is_empty() {
        return Vec::new();
    }
    let cands: Vec<Vec<Candidate>> = clusters
        .iter()
        .map(|c| {
            if c.len() <= EXHAUSTIVE_LIMIT {
                exhaustive_candidates(points, &c.members)
            } else {
                heuristic_candidates(points, &c.members)
            }
        })
        .collect();
    let mut cost: Vec<Vec<f64>> = Vec::with_capacity(cands.len());
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(cands.len());
    cost.push(
        cands[0]
            .iter()
            .map(|c| (points[c.order[0]] - start).norm() + c.internal)
            .collect(),
    );
    back.push(vec![usize::MAX; cands[0].len()]);
    for k in 1..cands.len() {
        let mut ck = Vec::with_capacity(cands[k].len());
        let mut bk = Vec::with_capacity(cands[k].len());
        for c in &cands[k] {
            let mut best = (f64::INFINITY, usize::MAX);
            for (pi, p) in cands[k - 1].iter().enumerate() {
                let v = cost[k - 1][pi] + dist(points, p.order[p.order.len() - 1], c.order[0]);
                if v < best.0 {
                    best = (v, pi);
                }
            }
            ck.push(best.0 + c.internal);
            bk.push(best.1);
        }
        cost.push(ck);
        back.push(bk);
    }
    let last = cost.len() - 1;
    let mut pick = (0..cost[last].len())
        .fold((f64::INFINITY, 0), |b, i| if cost[last][i] < b.0 { (cost[last][i], i) } else { b })
        .1;
    let mut chosen = vec![0; cands.len()];
    for k in (0..cands.len()).rev() {
        chosen[k] = pick;
        pick = back[k][pick];
    }
    clusters
        .iter()
        .zip(chosen)
        .enumerate()
        .map(|(k, (c, i))| Cluster {
            id: c.id,
            segment: c.segment,
            members: cands[k][i].order.clone(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageDiagnostic {
    pub stage: String,
    /// Path length from the start position through every viewpoint (m).
    pub length_m: f64,
    pub clusters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoutePlan {
    /// Final visiting order of point indices.
    pub order: Vec<usize>,
    pub clusters: Vec<Cluster>,
    pub tour: Tour,
    pub diagnostics: Vec<StageDiagnostic>,
}

/// Full sequencing pipeline over `points` tagged with `segment_of`.
pub fn plan_route(
    points: &[Vec3],
    segment_of: &[usize],
    start: &Vec3,
    tau_max: usize,
    mode: MergeMode,
    solver: &dyn TourSolver,
) -> RoutePlan {
    let mut diagnostics = Vec::new();
    let mut stage = |name: &str, order: &[usize], clusters: usize| {
        diagnostics.push(StageDiagnostic {
            stage: name.into(),
            length_m: path_length_from(points, start, order),
            clusters,
        });
    };
    if points.is_empty() {
        return RoutePlan {
            order: vec![],
            clusters: vec![],
            tour: Tour {
                order: vec![],
                length: 0.0,
                open: true,
            },
            diagnostics,
        };
    }
    let nn = nearest_neighbor(points, nearest_to(points, start));
    stage("nearest_neighbor", &nn, 0);
    let tour = solver.solve(points, start);
    stage("tsp", &tour.order, 0);
    let remapped = remap_clusters(&tour.order, segment_of);
    stage("remap", &tour.order, remapped.len());
    let merged = merge_outliers(&remapped, points, tau_max, mode);
    let flat = |cs: &[Cluster]| cs.iter().flat_map(|c| c.members.iter().copied()).collect::<Vec<_>>();
    stage("merge", &flat(&merged), merged.len());
    let reordered = local_reorder(&merged, points, start);
    let order = flat(&reordered);
    stage("reorder", &order, reordered.len());
    RoutePlan {
        order,
        clusters: reordered,
        tour,
        diagnostics,
    }
}
