//! Construction MDP for TSP and CVRP.
//!
//! TSP: `reset` places the agent on the start node, and every action visits
//! one unvisited node, so an episode has exactly `n - 1` actions.
//!
//! CVRP: the agent starts at the depot with a full vehicle, and the start
//! point is the customer forced as the first visit. The depot cannot be
//! chosen while the vehicle is already there. The episode ends back at the
//! depot once every customer is served.

use crate::error::{Error, Result};
use crate::instances::{Instance, ProblemKind};

/// Logit value for infeasible actions. Finite, so softmax stays NaN-free.
pub const MASKED_LOGIT: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct State {
    pub visited: Vec<bool>,
    pub position: usize,
    pub start_point: usize,
    pub step: usize,
    pub remaining_capacity: u32,
    pub route_log: Vec<usize>,
    kind: ProblemKind,
    unserved: usize,
}

impl State {
    pub fn reset(instance: &Instance, start_point: usize) -> Result<Self> {
        let n = instance.n();
        let mut visited = vec![false; n];
        match instance.kind {
            ProblemKind::Tsp => {
                if start_point >= n {
                    return Err(Error::validation(format!("start point {start_point} out of range for {n} nodes")));
                }
                visited[start_point] = true;
                Ok(State {
                    visited,
                    position: start_point,
                    start_point,
                    step: 0,
                    remaining_capacity: 0,
                    route_log: Vec::new(),
                    kind: instance.kind,
                    unserved: n - 1,
                })
            }
            ProblemKind::Cvrp => {
                if start_point == 0 || start_point >= n {
                    return Err(Error::validation(format!(
                        "CVRP start point must be a customer in 1..{n}, got {start_point}"
                    )));
                }
                visited[0] = true;
                Ok(State {
                    visited,
                    position: 0,
                    start_point,
                    step: 0,
                    remaining_capacity: instance.capacity,
                    route_log: Vec::new(),
                    kind: instance.kind,
                    unserved: n - 1,
                })
            }
        }
    }

    pub fn is_terminal(&self) -> bool {
        match self.kind {
            ProblemKind::Tsp => self.unserved == 0,
            ProblemKind::Cvrp => self.unserved == 0 && self.position == 0 && self.step > 0,
        }
    }

    /// Fill `mask` with action feasibility without allocating.
    pub fn mask_into(&self, instance: &Instance, mask: &mut [bool]) -> Result<()> {
        if self.is_terminal() {
            return Err(Error::contract("action mask requested for a terminal state"));
        }
        match self.kind {
            ProblemKind::Tsp => {
                for (m, v) in mask.iter_mut().zip(&self.visited) {
                    *m = !v;
                }
            }
            ProblemKind::Cvrp => {
                if self.step == 0 {
                    mask.fill(false);
                    mask[self.start_point] = true;
                    return Ok(());
                }
                mask[0] = self.position != 0;
                for c in 1..mask.len() {
                    mask[c] = !self.visited[c] && instance.demands[c] <= self.remaining_capacity;
                }
            }
        }
        Ok(())
    }

    pub fn action_mask(&self, instance: &Instance) -> Result<Vec<bool>> {
        let mut mask = vec![false; instance.n()];
        self.mask_into(instance, &mut mask)?;
        Ok(mask)
    }

    /// In-place transition. Returns `done`.
    pub fn apply(&mut self, instance: &Instance, action: usize) -> Result<bool> {
        let n = instance.n();
        if action >= n {
            return Err(Error::contract(format!("action {action} out of range")));
        }
        let feasible = match self.kind {
            ProblemKind::Tsp => !self.is_terminal() && !self.visited[action],
            ProblemKind::Cvrp => {
                !self.is_terminal()
                    && if self.step == 0 {
                        action == self.start_point
                    } else if action == 0 {
                        self.position != 0
                    } else {
                        !self.visited[action] && instance.demands[action] <= self.remaining_capacity
                    }
            }
        };
        if !feasible {
            return Err(Error::contract(format!("action {action} is masked in the current state")));
        }
        if action == 0 && self.kind == ProblemKind::Cvrp {
            self.remaining_capacity = instance.capacity;
        } else {
            self.visited[action] = true;
            self.unserved -= 1;
            if self.kind == ProblemKind::Cvrp {
                self.remaining_capacity -= instance.demands[action];
            }
        }
        self.position = action;
        self.step += 1;
        self.route_log.push(action);
        Ok(self.is_terminal())
    }

    /// Pure transition: returns the successor state.
    pub fn step(&self, instance: &Instance, action: usize) -> Result<(State, bool)> {
        let mut next = self.clone();
        let done = next.apply(instance, action)?;
        Ok((next, done))
    }

    /// Solution encoded so far (tour for TSP, depot-delimited routes for CVRP).
    pub fn solution(&self) -> Vec<usize> {
        solution_from_actions(self.kind, self.start_point, &self.route_log)
    }
}

pub fn solution_from_actions(kind: ProblemKind, start_point: usize, actions: &[usize]) -> Vec<usize> {
    let first = match kind {
        ProblemKind::Tsp => start_point,
        ProblemKind::Cvrp => 0,
    };
    std::iter::once(first).chain(actions.iter().copied()).collect()
}

/// One constructed solution and the data needed to learn from it.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub instance_id: u64,
    pub kind: ProblemKind,
    pub start_point: usize,
    pub actions: Vec<usize>,
    pub action_logps: Vec<f64>,
    /// Memory correction logit of each taken action (0 without memory).
    pub memory_logits_taken: Vec<f64>,
    /// Negative solution cost.
    pub ret: f64,
    pub attempt_index: usize,
}

impl Trajectory {
    pub fn solution(&self) -> Vec<usize> {
        solution_from_actions(self.kind, self.start_point, &self.actions)
    }

    pub fn cost(&self) -> f64 {
        -self.ret
    }

    /// Node the agent stood on before each action.
    pub fn positions(&self) -> Vec<usize> {
        let sol = self.solution();
        sol[..self.actions.len()].to_vec()
    }

    pub fn total_logp(&self) -> f64 {
        self.action_logps.iter().sum()
    }
}

/// Upper bound on the number of actions in one episode.
pub fn horizon(instance: &Instance) -> usize {
    match instance.kind {
        ProblemKind::Tsp => instance.n() - 1,
        ProblemKind::Cvrp => 2 * (instance.n() - 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::generate_dataset;
    use crate::rng;
    use rand::Rng;

    fn random_rollout(inst: &Instance, start: usize, seed: u64) -> State {
        let mut rng = rng::stream(seed, &[77]);
        let mut s = State::reset(inst, start).unwrap();
        loop {
            let mask = s.action_mask(inst).unwrap();
            let choices: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            let a = choices[rng.gen_range(0..choices.len())];
            if s.apply(inst, a).unwrap() {
                return s;
            }
        }
    }

    #[test]
    fn tsp_reset() {
        let inst = &generate_dataset(ProblemKind::Tsp, 4, 1, 0).unwrap().instances[0];
        let s = State::reset(inst, 2).unwrap();
        assert_eq!(s.visited, vec![false, false, true, false]);
        assert_eq!(s.position, 2);
        assert_eq!(s.step, 0);
        assert_eq!(s, State::reset(inst, 2).unwrap());
        assert!(State::reset(inst, 4).is_err());
    }

    #[test]
    fn cvrp_reset_full_capacity() {
        let inst = &generate_dataset(ProblemKind::Cvrp, 6, 1, 0).unwrap().instances[0];
        let s = State::reset(inst, 3).unwrap();
        assert_eq!(s.remaining_capacity, inst.capacity);
        assert_eq!(s.position, 0);
        assert!(State::reset(inst, 0).is_err());
    }

    #[test]
    fn tsp_mask_after_two_visits() {
        let inst = &generate_dataset(ProblemKind::Tsp, 3, 1, 0).unwrap().instances[0];
        let (s, done) = State::reset(inst, 0).unwrap().step(inst, 1).unwrap();
        assert!(!done);
        assert_eq!(s.action_mask(inst).unwrap(), vec![false, false, true]);
    }

    #[test]
    fn cvrp_masks() {
        let inst = Instance::cvrp(
            vec![[0.5, 0.5], [0.1, 0.1], [0.2, 0.2], [0.3, 0.3]],
            vec![0, 3, 5, 2],
            10,
            0,
        )
        .unwrap();
        let s = State::reset(&inst, 1).unwrap();
        assert_eq!(s.action_mask(&inst).unwrap(), vec![false, true, false, false]);
        let (s, _) = s.step(&inst, 1).unwrap();
        assert_eq!(s.remaining_capacity, 7);
        assert_eq!(s.action_mask(&inst).unwrap(), vec![true, false, true, true]);
        // back at the depot with everything feasible: the depot is masked
        let (s, _) = s.step(&inst, 0).unwrap();
        assert_eq!(s.action_mask(&inst).unwrap(), vec![false, false, true, true]);
        // capacity 2 left: the demand-5 customer is masked
        let (s, _) = s.step(&inst, 3).unwrap();
        let mut low = s.clone();
        low.remaining_capacity = 2;
        assert!(!low.action_mask(&inst).unwrap()[2]);
        assert!(s.step(&inst, 3).is_err());
    }

    #[test]
    fn masked_action_is_a_contract_error() {
        let inst = &generate_dataset(ProblemKind::Tsp, 4, 1, 0).unwrap().instances[0];
        let s = State::reset(inst, 0).unwrap();
        assert!(matches!(s.step(inst, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn two_node_tsp_is_done_after_one_step() {
        let inst = Instance::tsp(vec![[0.0, 0.0], [1.0, 1.0]], 0).unwrap();
        let (s, done) = State::reset(&inst, 0).unwrap().step(&inst, 1).unwrap();
        assert!(done);
        assert!(s.action_mask(&inst).is_err());
    }

    #[test]
    fn rollout_cost_matches_tour_cost() {
        let inst = &generate_dataset(ProblemKind::Tsp, 7, 1, 3).unwrap().instances[0];
        let s = random_rollout(inst, 4, 0);
        assert_eq!(s.step, 6);
        let tour = s.solution();
        let by_hand: f64 = (0..7).map(|i| inst.dist(tour[i], tour[(i + 1) % 7])).sum();
        assert!((crate::instances::tour_cost(inst, &tour).unwrap() - by_hand).abs() < 1e-12);
    }

    #[test]
    fn random_rollouts_are_feasible() {
        for seed in 0..200 {
            let tsp = &generate_dataset(ProblemKind::Tsp, 9, 1, seed).unwrap().instances[0];
            let s = random_rollout(tsp, (seed % 9) as usize, seed);
            assert_eq!(s.step, 8);
            tsp.cost(&s.solution()).unwrap();
            let cvrp = &generate_dataset(ProblemKind::Cvrp, 11, 1, seed).unwrap().instances[0];
            let s = random_rollout(cvrp, 1 + (seed % 10) as usize, seed);
            assert!(s.step <= horizon(cvrp));
            cvrp.cost(&s.solution()).unwrap();
        }
    }
}
