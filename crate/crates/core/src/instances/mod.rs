//! Routing instances: generation, validation and solution costs.

mod io;
pub mod oracle;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, domain};

pub use io::{read_references, write_references, DSET_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Tsp,
    Cvrp,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Tsp => "tsp",
            ProblemKind::Cvrp => "cvrp",
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsp" => Ok(ProblemKind::Tsp),
            "cvrp" => Ok(ProblemKind::Cvrp),
            other => Err(Error::validation(format!("unknown problem kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A TSP or CVRP instance on the unit square.
///
/// For CVRP, node 0 is the depot and `demands[0] == 0`. TSP instances carry
/// empty demands and zero capacity.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub kind: ProblemKind,
    pub coords: Vec<[f64; 2]>,
    pub demands: Vec<u32>,
    pub capacity: u32,
    pub id: u64,
}

/// Vehicle capacity used by the generator for `customers` customers.
pub fn default_capacity(customers: usize) -> u32 {
    if customers <= 50 {
        30
    } else {
        50
    }
}

pub const MAX_DEMAND: u32 = 9;

impl Instance {
    pub fn tsp(coords: Vec<[f64; 2]>, id: u64) -> Result<Self> {
        let inst = Instance { kind: ProblemKind::Tsp, coords, demands: Vec::new(), capacity: 0, id };
        inst.validate()?;
        Ok(inst)
    }

    pub fn cvrp(coords: Vec<[f64; 2]>, demands: Vec<u32>, capacity: u32, id: u64) -> Result<Self> {
        let inst = Instance { kind: ProblemKind::Cvrp, coords, demands, capacity, id };
        inst.validate()?;
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::validation(format!("instance needs at least 2 nodes, got {}", self.n())));
        }
        for (i, c) in self.coords.iter().enumerate() {
            if !c.iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(Error::validation(format!("coordinate {i} outside the unit square: {c:?}")));
            }
        }
        match self.kind {
            ProblemKind::Tsp => {
                if !self.demands.is_empty() || self.capacity != 0 {
                    return Err(Error::validation("TSP instances carry no demands or capacity"));
                }
            }
            ProblemKind::Cvrp => {
                if self.demands.len() != self.n() {
                    return Err(Error::validation("CVRP demands must have one entry per node"));
                }
                if self.capacity == 0 {
                    return Err(Error::validation("CVRP capacity must be positive"));
                }
                if self.demands[0] != 0 {
                    return Err(Error::validation("depot demand must be 0"));
                }
                if let Some(i) = (1..self.n()).find(|&i| self.demands[i] == 0 || self.demands[i] > self.capacity) {
                    return Err(Error::validation(format!(
                        "customer {i} demand {} not in 1..={}",
                        self.demands[i], self.capacity
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        let [xi, yi] = self.coords[i];
        let [xj, yj] = self.coords[j];
        (xi - xj).hypot(yi - yj)
    }

    /// Cost of a solution in this instance's encoding (tour or depot-delimited routes).
    pub fn cost(&self, solution: &[usize]) -> Result<f64> {
        match self.kind {
            ProblemKind::Tsp => tour_cost(self, solution),
            ProblemKind::Cvrp => routes_cost(self, solution),
        }
    }

    /// Relabel nodes: node `perm[i]` of the result is node `i` of `self`.
    /// For CVRP the depot must stay at index 0.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let mut coords = vec![[0.0; 2]; n];
        let mut demands = vec![0; self.demands.len()];
        for (i, &p) in perm.iter().enumerate() {
            coords[p] = self.coords[i];
            if !self.demands.is_empty() {
                demands[p] = self.demands[i];
            }
        }
        Instance { coords, demands, ..self.clone() }
    }
}

/// A generated collection of same-kind, same-size instances.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: ProblemKind,
    pub n: usize,
    pub seed: u64,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Sample one instance from the uniform distribution.
pub fn sample_instance(kind: ProblemKind, n: usize, seed: u64, index: u64) -> Instance {
    let mut rng = rng::stream(seed, &[domain::DATASET, index]);
    let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect();
    let id = rng::mix(&[seed, index]);
    match kind {
        ProblemKind::Tsp => Instance { kind, coords, demands: Vec::new(), capacity: 0, id },
        ProblemKind::Cvrp => {
            let mut demands = vec![0u32; n];
            for d in demands.iter_mut().skip(1) {
                *d = rng.gen_range(1..=MAX_DEMAND);
            }
            Instance { kind, coords, demands, capacity: default_capacity(n - 1), id }
        }
    }
}

/// Generate `count` instances with `n` nodes (CVRP: depot included).
pub fn generate_dataset(kind: ProblemKind, n: usize, count: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::validation(format!("n must be at least 2, got {n}")));
    }
    if count < 1 {
        return Err(Error::validation("count must be at least 1"));
    }
    let instances = par::map_range(count, |i| sample_instance(kind, n, seed, i as u64));
    Ok(Dataset { kind, n, seed, instances })
}

fn check_permutation(n: usize, tour: &[usize]) -> Result<()> {
    if tour.len() != n {
        return Err(Error::NotPermutation { n, detail: format!("length {}", tour.len()) });
    }
    let mut seen = vec![false; n];
    for &v in tour {
        if v >= n {
            return Err(Error::NotPermutation { n, detail: format!("index {v} out of range") });
        }
        if std::mem::replace(&mut seen[v], true) {
            return Err(Error::NotPermutation { n, detail: format!("index {v} repeated") });
        }
    }
    Ok(())
}

/// Closed-tour Euclidean length.
pub fn tour_cost(instance: &Instance, tour: &[usize]) -> Result<f64> {
    check_permutation(instance.n(), tour)?;
    Ok(tour_length_unchecked(instance, tour))
}

pub(crate) fn tour_length_unchecked(instance: &Instance, tour: &[usize]) -> f64 {
    let n = tour.len();
    (0..n).map(|i| instance.dist(tour[i], tour[(i + 1) % n])).sum()
}

/// Total length of depot-delimited routes such as `[0, 3, 1, 0, 2, 0]`.
pub fn routes_cost(instance: &Instance, routes: &[usize]) -> Result<f64> {
    if instance.kind != ProblemKind::Cvrp {
        return Err(Error::validation("routes_cost needs a CVRP instance"));
    }
    let n = instance.n();
    if routes.len() < 3 || routes[0] != 0 || *routes.last().unwrap() != 0 {
        return Err(Error::MalformedRoutes("sequence must start and end at the depot".into()));
    }
    let mut seen = vec![false; n];
    let mut load = 0u32;
    let mut route = 0usize;
    for w in routes.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b >= n {
            return Err(Error::MalformedRoutes(format!("node {b} out of range")));
        }
        if a == 0 && b == 0 {
            return Err(Error::MalformedRoutes("empty route".into()));
        }
        if b == 0 {
            route += 1;
            load = 0;
            continue;
        }
        if std::mem::replace(&mut seen[b], true) {
            return Err(Error::DuplicateCustomer(b));
        }
        load += instance.demands[b];
        if load > instance.capacity {
            return Err(Error::CapacityExceeded { route, load, capacity: instance.capacity });
        }
    }
    if let Some(c) = (1..n).find(|&c| !seen[c]) {
        return Err(Error::MissingCustomer(c));
    }
    Ok(routes.windows(2).map(|w| instance.dist(w[0], w[1])).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn square() -> Instance {
        Instance::tsp(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]], 0).unwrap()
    }

    #[test]
    fn generated_coordinates_in_unit_square() {
        let ds = generate_dataset(ProblemKind::Tsp, 4, 1, 7).unwrap();
        assert_eq!(ds.instances[0].coords.len(), 4);
        assert!(ds.instances[0].coords.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn generation_is_deterministic_across_thread_counts() {
        let a = par::with_threads(1, || generate_dataset(ProblemKind::Tsp, 10, 5, 7).unwrap());
        let b = par::with_threads(4, || generate_dataset(ProblemKind::Tsp, 10, 5, 7).unwrap());
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    }

    #[test]
    fn cvrp_demand_rule() {
        let ds = generate_dataset(ProblemKind::Cvrp, 21, 1, 3).unwrap();
        let inst = &ds.instances[0];
        assert_eq!(inst.demands[0], 0);
        assert!(inst.demands[1..].iter().all(|d| (1..=9).contains(d)));
        assert_eq!(inst.capacity, 30);
        inst.validate().unwrap();
    }

    #[test]
    fn rejects_bad_generation_args() {
        assert!(matches!(generate_dataset(ProblemKind::Tsp, 1, 1, 0), Err(Error::Validation(_))));
        assert!(matches!(generate_dataset(ProblemKind::Tsp, 5, 0, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn square_perimeter() {
        assert!((tour_cost(&square(), &[0, 1, 2, 3]).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn two_node_tour() {
        let inst = Instance::tsp(vec![[0.0, 0.0], [0.6, 0.8]], 0).unwrap();
        assert!((tour_cost(&inst, &[0, 1]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tour_cost_rejects_non_permutations() {
        let inst = square();
        assert!(matches!(tour_cost(&inst, &[0, 1, 2]), Err(Error::NotPermutation { .. })));
        assert!(matches!(tour_cost(&inst, &[0, 1, 1, 3]), Err(Error::NotPermutation { .. })));
        assert!(matches!(tour_cost(&inst, &[0, 1, 2, 4]), Err(Error::NotPermutation { .. })));
    }

    #[test]
    fn tour_cost_matches_edge_sum() {
        // seed-11 instance, summed edge by edge with explicit sqrt
        let inst = &generate_dataset(ProblemKind::Tsp, 7, 1, 11).unwrap().instances[0];
        let tour = [3, 0, 6, 1, 5, 2, 4];
        let mut expect = 0.0;
        for k in 0..7 {
            let a = inst.coords[tour[k]];
            let b = inst.coords[tour[(k + 1) % 7]];
            expect += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        }
        assert!((tour_cost(inst, &tour).unwrap() - expect).abs() < 1e-12);
    }

    fn cvrp_fixture() -> Instance {
        Instance::cvrp(vec![[0.5, 0.5], [0.5, 0.8], [0.1, 0.5], [0.9, 0.9]], vec![0, 4, 5, 3], 10, 0).unwrap()
    }

    #[test]
    fn single_customer_out_and_back() {
        let inst = Instance::cvrp(vec![[0.5, 0.5], [0.5, 0.8]], vec![0, 4], 10, 0).unwrap();
        assert!((routes_cost(&inst, &[0, 1, 0]).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn separate_routes_add_up() {
        let inst = Instance::cvrp(vec![[0.5, 0.5], [0.5, 0.8], [0.1, 0.5]], vec![0, 4, 5], 10, 0).unwrap();
        let c = routes_cost(&inst, &[0, 1, 0, 2, 0]).unwrap();
        assert!((c - (0.6 + 0.8)).abs() < 1e-12);
    }

    #[test]
    fn routes_cost_matches_edge_sum() {
        let inst = &generate_dataset(ProblemKind::Cvrp, 7, 1, 5).unwrap().instances[0];
        // greedy capacity-feasible split of customers 1..=6 in index order
        let mut routes = vec![0];
        let mut load = 0;
        for c in 1..7 {
            if load + inst.demands[c] > inst.capacity {
                routes.push(0);
                load = 0;
            }
            routes.push(c);
            load += inst.demands[c];
        }
        routes.push(0);
        let mut expect = 0.0;
        for w in routes.windows(2) {
            let (a, b) = (inst.coords[w[0]], inst.coords[w[1]]);
            expect += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        }
        assert!((routes_cost(inst, &routes).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn routes_cost_error_variants() {
        let inst = cvrp_fixture();
        assert!(matches!(routes_cost(&inst, &[0, 1, 2, 3, 0]), Err(Error::CapacityExceeded { .. })));
        assert!(matches!(routes_cost(&inst, &[0, 1, 3, 0]), Err(Error::MissingCustomer(2))));
        assert!(matches!(routes_cost(&inst, &[0, 1, 3, 0, 1, 2, 0]), Err(Error::DuplicateCustomer(1))));
        assert!(matches!(routes_cost(&inst, &[1, 3, 0, 2, 0]), Err(Error::MalformedRoutes(_))));
        assert!(matches!(routes_cost(&inst, &[0, 1, 3, 0, 0, 2, 0]), Err(Error::MalformedRoutes(_))));
    }

    proptest! {
        #[test]
        fn tour_cost_cyclic_and_reflection_invariant(seed in 0u64..1000, shift in 0usize..8) {
            let inst = &generate_dataset(ProblemKind::Tsp, 8, 1, seed).unwrap().instances[0];
            let mut tour: Vec<usize> = (0..8).collect();
            tour.shuffle(&mut rng::stream(seed, &[99]));
            let base = tour_cost(inst, &tour).unwrap();
            let mut shifted = tour.clone();
            shifted.rotate_left(shift);
            let mut reversed = tour.clone();
            reversed.reverse();
            prop_assert!((tour_cost(inst, &shifted).unwrap() - base).abs() < 1e-12);
            prop_assert!((tour_cost(inst, &reversed).unwrap() - base).abs() < 1e-12);
        }
    }
}
