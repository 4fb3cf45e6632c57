//! Exact and heuristic reference solvers.
//!
//! [`brute_force`] enumerates every solution and is the ground-truth oracle
//! for tiny instances. [`reference_cost`] picks the strongest solver that is
//! affordable for a size: Held-Karp dynamic programming for TSP up to 20
//! nodes, otherwise multi-start local search.

use rand::seq::SliceRandom;

use super::{tour_length_unchecked, Instance, ProblemKind};
use crate::error::{Error, Result};
use crate::rng::{self, domain};

pub const BRUTE_FORCE_MAX_TSP: usize = 10;
pub const BRUTE_FORCE_MAX_CUSTOMERS: usize = 8;
pub const HELD_KARP_MAX: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Optimum {
    pub cost: f64,
    pub solution: Vec<usize>,
    /// False when the value comes from a heuristic.
    pub exact: bool,
}

/// Exhaustive search: permutations for TSP, orders times route splits for CVRP.
pub fn brute_force(instance: &Instance) -> Result<Optimum> {
    match instance.kind {
        ProblemKind::Tsp => {
            if instance.n() > BRUTE_FORCE_MAX_TSP {
                return Err(Error::TooLarge(format!("TSP with {} nodes (max {BRUTE_FORCE_MAX_TSP})", instance.n())));
            }
            Ok(brute_force_tsp(instance))
        }
        ProblemKind::Cvrp => {
            if instance.n() - 1 > BRUTE_FORCE_MAX_CUSTOMERS {
                return Err(Error::TooLarge(format!(
                    "CVRP with {} customers (max {BRUTE_FORCE_MAX_CUSTOMERS})",
                    instance.n() - 1
                )));
            }
            Ok(brute_force_cvrp(instance))
        }
    }
}

fn brute_force_tsp(inst: &Instance) -> Optimum {
    let n = inst.n();
    let mut best = (f64::INFINITY, Vec::new());
    let mut path = vec![0];
    let mut used = vec![false; n];
    used[0] = true;

    fn dfs(inst: &Instance, path: &mut Vec<usize>, used: &mut [bool], partial: f64, best: &mut (f64, Vec<usize>)) {
        let n = inst.n();
        let last = *path.last().unwrap();
        if path.len() == n {
            let total = partial + inst.dist(last, path[0]);
            if total < best.0 {
                *best = (total, path.clone());
            }
            return;
        }
        for next in 1..n {
            if used[next] {
                continue;
            }
            let p = partial + inst.dist(last, next);
            if p >= best.0 {
                continue;
            }
            used[next] = true;
            path.push(next);
            dfs(inst, path, used, p, best);
            path.pop();
            used[next] = false;
        }
    }

    dfs(inst, &mut path, &mut used, 0.0, &mut best);
    Optimum { cost: best.0, solution: best.1, exact: true }
}

/// Optimal depot-delimited split of a fixed customer order.
fn split_order(inst: &Instance, order: &[usize]) -> (f64, Vec<usize>) {
    let m = order.len();
    let mut best = vec![f64::INFINITY; m + 1];
    let mut pred = vec![0usize; m + 1];
    best[0] = 0.0;
    for i in 0..m {
        if !best[i].is_finite() {
            continue;
        }
        let mut load = 0;
        let mut inner = 0.0;
        for j in i..m {
            load += inst.demands[order[j]];
            if load > inst.capacity {
                break;
            }
            if j > i {
                inner += inst.dist(order[j - 1], order[j]);
            }
            let cost = best[i] + inst.dist(0, order[i]) + inner + inst.dist(order[j], 0);
            if cost < best[j + 1] {
                best[j + 1] = cost;
                pred[j + 1] = i;
            }
        }
    }
    let mut cuts = vec![m];
    let mut k = m;
    while k > 0 {
        k = pred[k];
        cuts.push(k);
    }
    cuts.reverse();
    let mut routes = vec![0];
    for w in cuts.windows(2) {
        routes.extend_from_slice(&order[w[0]..w[1]]);
        routes.push(0);
    }
    (best[m], routes)
}

fn brute_force_cvrp(inst: &Instance) -> Optimum {
    let mut order: Vec<usize> = (1..inst.n()).collect();
    let mut best = (f64::INFINITY, Vec::new());

    // Heap's algorithm over customer orders.
    fn visit(inst: &Instance, order: &mut Vec<usize>, k: usize, best: &mut (f64, Vec<usize>)) {
        if k <= 1 {
            let (c, routes) = split_order(inst, order);
            if c < best.0 {
                *best = (c, routes);
            }
            return;
        }
        for i in 0..k {
            visit(inst, order, k - 1, best);
            if k % 2 == 0 {
                order.swap(i, k - 1);
            } else {
                order.swap(0, k - 1);
            }
        }
    }

    let m = order.len();
    visit(inst, &mut order, m, &mut best);
    Optimum { cost: best.0, solution: best.1, exact: true }
}

/// Held-Karp dynamic program, exact for TSP up to [`HELD_KARP_MAX`] nodes.
pub fn held_karp(inst: &Instance) -> Result<Optimum> {
    let n = inst.n();
    if inst.kind != ProblemKind::Tsp || n > HELD_KARP_MAX {
        return Err(Error::TooLarge(format!("held_karp supports TSP up to {HELD_KARP_MAX} nodes")));
    }
    if n <= 3 {
        return brute_force(inst);
    }
    // Node 0 is the fixed start; subsets range over nodes 1..n (bit k-1 = node k).
    let m = n - 1;
    let full = 1usize << m;
    let mut dp = vec![f64::INFINITY; full * m];
    let mut parent = vec![u8::MAX; full * m];
    for k in 0..m {
        dp[(1 << k) * m + k] = inst.dist(0, k + 1);
    }
    for mask in 1..full {
        for j in 0..m {
            let cur = dp[mask * m + j];
            if mask & (1 << j) == 0 || !cur.is_finite() {
                continue;
            }
            let mut rest = !mask & (full - 1);
            while rest != 0 {
                let k = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                let next = mask | (1 << k);
                let c = cur + inst.dist(j + 1, k + 1);
                let slot = next * m + k;
                if c < dp[slot] {
                    dp[slot] = c;
                    parent[slot] = j as u8;
                }
            }
        }
    }
    let last_mask = full - 1;
    let (mut j, cost) = (0..m)
        .map(|j| (j, dp[last_mask * m + j] + inst.dist(j + 1, 0)))
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let mut tour = Vec::with_capacity(n);
    let mut mask = last_mask;
    loop {
        tour.push(j + 1);
        let p = parent[mask * m + j];
        mask &= !(1 << j);
        if p == u8::MAX {
            break;
        }
        j = p as usize;
    }
    tour.push(0);
    tour.reverse();
    Ok(Optimum { cost, solution: tour, exact: true })
}

fn two_opt(inst: &Instance, tour: &mut [usize]) {
    let n = tour.len();
    if n < 4 {
        return;
    }
    loop {
        let mut improved = false;
        for i in 0..n - 1 {
            for j in i + 2..n {
                let (a, b) = (tour[i], tour[i + 1]);
                let (c, d) = (tour[j], tour[(j + 1) % n]);
                if a == d {
                    continue;
                }
                let delta = inst.dist(a, c) + inst.dist(b, d) - inst.dist(a, b) - inst.dist(c, d);
                if delta < -1e-12 {
                    tour[i + 1..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

fn tsp_local_search(inst: &Instance, restarts: usize, seed: u64) -> Optimum {
    let mut rng = rng::stream(seed, &[domain::REFERENCE, inst.id]);
    let mut best = (f64::INFINITY, Vec::new());
    for _ in 0..restarts.max(1) {
        let mut tour: Vec<usize> = (0..inst.n()).collect();
        tour.shuffle(&mut rng);
        two_opt(inst, &mut tour);
        let c = tour_length_unchecked(inst, &tour);
        if c < best.0 {
            best = (c, tour);
        }
    }
    Optimum { cost: best.0, solution: best.1, exact: false }
}

fn route_len(inst: &Instance, r: &[usize]) -> f64 {
    if r.is_empty() {
        return 0.0;
    }
    let inner: f64 = r.windows(2).map(|w| inst.dist(w[0], w[1])).sum();
    inst.dist(0, r[0]) + inner + inst.dist(*r.last().unwrap(), 0)
}

fn cvrp_improve(inst: &Instance, routes: &mut Vec<Vec<usize>>) {
    let load = |r: &[usize]| r.iter().map(|&c| inst.demands[c]).sum::<u32>();
    loop {
        let mut improved = false;
        // intra-route 2-opt
        for r in routes.iter_mut() {
            let mut closed: Vec<usize> = std::iter::once(0).chain(r.iter().copied()).collect();
            let before = tour_length_unchecked(inst, &closed);
            two_opt(inst, &mut closed);
            if tour_length_unchecked(inst, &closed) < before - 1e-12 {
                let z = closed.iter().position(|&v| v == 0).unwrap();
                closed.rotate_left(z);
                *r = closed[1..].to_vec();
                improved = true;
            }
        }
        // relocate a customer to the best position in another route (or a new one)
        'relocate: for a in 0..routes.len() {
            for i in 0..routes[a].len() {
                let c = routes[a][i];
                let mut src = routes[a].clone();
                src.remove(i);
                let gain = route_len(inst, &routes[a]) - route_len(inst, &src);
                let mut best: Option<(usize, usize, f64)> = None;
                for b in 0..=routes.len() {
                    if b == a {
                        continue;
                    }
                    let target: &[usize] = if b < routes.len() { &routes[b] } else { &[] };
                    if load(target) + inst.demands[c] > inst.capacity {
                        continue;
                    }
                    let base = route_len(inst, target);
                    for pos in 0..=target.len() {
                        let mut t = target.to_vec();
                        t.insert(pos, c);
                        let delta = route_len(inst, &t) - base - gain;
                        if delta < -1e-12 && best.is_none_or(|x| delta < x.2) {
                            best = Some((b, pos, delta));
                        }
                    }
                }
                if let Some((b, pos, _)) = best {
                    if b == routes.len() {
                        routes.push(Vec::new());
                    }
                    routes[b].insert(pos, c);
                    routes[a] = src;
                    routes.retain(|r| !r.is_empty());
                    improved = true;
                    break 'relocate;
                }
            }
        }
        // swap two customers in different routes
        'swap: for a in 0..routes.len() {
            for b in a + 1..routes.len() {
                for i in 0..routes[a].len() {
                    for j in 0..routes[b].len() {
                        let (ca, cb) = (routes[a][i], routes[b][j]);
                        let la = load(&routes[a]) - inst.demands[ca] + inst.demands[cb];
                        let lb = load(&routes[b]) - inst.demands[cb] + inst.demands[ca];
                        if la > inst.capacity || lb > inst.capacity {
                            continue;
                        }
                        let before = route_len(inst, &routes[a]) + route_len(inst, &routes[b]);
                        let mut ra = routes[a].clone();
                        let mut rb = routes[b].clone();
                        ra[i] = cb;
                        rb[j] = ca;
                        if route_len(inst, &ra) + route_len(inst, &rb) < before - 1e-12 {
                            routes[a] = ra;
                            routes[b] = rb;
                            improved = true;
                            break 'swap;
                        }
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
}

fn cvrp_local_search(inst: &Instance, restarts: usize, seed: u64) -> Optimum {
    let mut rng = rng::stream(seed, &[domain::REFERENCE, inst.id]);
    let mut best = (f64::INFINITY, Vec::new());
    for _ in 0..restarts.max(1) {
        let mut order: Vec<usize> = (1..inst.n()).collect();
        order.shuffle(&mut rng);
        let (_, seq) = split_order(inst, &order);
        let mut routes: Vec<Vec<usize>> = seq.split(|&v| v == 0).filter(|r| !r.is_empty()).map(|r| r.to_vec()).collect();
        cvrp_improve(inst, &mut routes);
        let mut flat = vec![0];
        for r in &routes {
            flat.extend_from_slice(r);
            flat.push(0);
        }
        let c: f64 = routes.iter().map(|r| route_len(inst, r)).sum();
        if c < best.0 {
            best = (c, flat);
        }
    }
    Optimum { cost: best.0, solution: best.1, exact: false }
}

/// Best affordable reference solution for `instance`.
pub fn reference_cost(instance: &Instance, seed: u64) -> Result<Optimum> {
    match instance.kind {
        ProblemKind::Tsp if instance.n() <= BRUTE_FORCE_MAX_TSP => brute_force(instance),
        ProblemKind::Tsp if instance.n() <= HELD_KARP_MAX => held_karp(instance),
        ProblemKind::Tsp => Ok(tsp_local_search(instance, 50, seed)),
        ProblemKind::Cvrp if instance.n() - 1 <= BRUTE_FORCE_MAX_CUSTOMERS => brute_force(instance),
        ProblemKind::Cvrp => Ok(cvrp_local_search(instance, 40, seed)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{generate_dataset, routes_cost, tour_cost};

    // Frozen output of the exhaustive search on the seed-13 TSP8 instance.
    const TSP8_SEED13_OPT: f64 = 2.449494727096204;

    #[test]
    fn square_is_optimal_in_hull_order() {
        let inst = Instance::tsp(vec![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]], 0).unwrap();
        let opt = brute_force(&inst).unwrap();
        assert!((opt.cost - 4.0).abs() < 1e-12);
    }

    #[test]
    fn two_nodes() {
        let inst = Instance::tsp(vec![[0.0, 0.0], [0.6, 0.8]], 0).unwrap();
        assert!((brute_force(&inst).unwrap().cost - 2.0).abs() < 1e-12);
    }

    #[test]
    fn frozen_tsp8_seed13() {
        let inst = &generate_dataset(ProblemKind::Tsp, 8, 1, 13).unwrap().instances[0];
        let opt = brute_force(inst).unwrap();
        println!("TSP8 seed 13 optimum = {:.15}", opt.cost);
        assert!((opt.cost - TSP8_SEED13_OPT).abs() < 1e-12);
        assert!((tour_cost(inst, &opt.solution).unwrap() - opt.cost).abs() < 1e-12);
    }

    #[test]
    fn refuses_large_instances() {
        let inst = &generate_dataset(ProblemKind::Tsp, 11, 1, 0).unwrap().instances[0];
        assert!(matches!(brute_force(inst), Err(Error::TooLarge(_))));
        let inst = &generate_dataset(ProblemKind::Cvrp, 10, 1, 0).unwrap().instances[0];
        assert!(matches!(brute_force(inst), Err(Error::TooLarge(_))));
    }

    #[test]
    fn brute_force_beats_random_tours() {
        use rand::seq::SliceRandom;
        for seed in 0..10 {
            let inst = &generate_dataset(ProblemKind::Tsp, 8, 1, seed).unwrap().instances[0];
            let opt = brute_force(inst).unwrap().cost;
            let mut rng = rng::stream(seed, &[5]);
            for _ in 0..10 {
                let mut t: Vec<usize> = (0..8).collect();
                t.shuffle(&mut rng);
                assert!(opt <= tour_cost(inst, &t).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn held_karp_agrees_with_brute_force() {
        for seed in 0..5 {
            let inst = &generate_dataset(ProblemKind::Tsp, 9, 1, seed).unwrap().instances[0];
            let hk = held_karp(inst).unwrap();
            assert!((hk.cost - brute_force(inst).unwrap().cost).abs() < 1e-12);
            assert!((tour_cost(inst, &hk.solution).unwrap() - hk.cost).abs() < 1e-12);
        }
    }

    #[test]
    fn cvrp_brute_force_is_feasible_and_no_worse_than_local_search() {
        for seed in 0..3 {
            let inst = &generate_dataset(ProblemKind::Cvrp, 8, 1, seed).unwrap().instances[0];
            let opt = brute_force(inst).unwrap();
            assert!((routes_cost(inst, &opt.solution).unwrap() - opt.cost).abs() < 1e-12);
            let ls = cvrp_local_search(inst, 10, 0);
            assert!((routes_cost(inst, &ls.solution).unwrap() - ls.cost).abs() < 1e-9);
            assert!(opt.cost <= ls.cost + 1e-12);
        }
    }

    #[test]
    fn local_search_reference_is_feasible() {
        let inst = &generate_dataset(ProblemKind::Cvrp, 21, 1, 4).unwrap().instances[0];
        let r = reference_cost(inst, 0).unwrap();
        assert!(!r.exact);
        assert!((routes_cost(inst, &r.solution).unwrap() - r.cost).abs() < 1e-9);
    }
}
