#![allow(dead_code)]

use comerge::model::{CarState, World, WorldState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A car anywhere on the road with its body inside the edges.
pub fn random_car(rng: &mut impl Rng, world: &World, y_max: f64) -> CarState {
    let (lo, hi) = world.center_bounds();
    CarState::new(
        rng.random_range(0.0..y_max),
        rng.random_range(lo..=hi),
        rng.random_range(world.physics.v_min..=world.physics.v_max),
    )
}

/// Two non-overlapping cars well before the road end, at moderate speeds, so
/// that short-horizon plans have something to trade off.
pub fn planning_state(rng: &mut impl Rng, world: &World) -> WorldState {
    let (lo, hi) = world.center_bounds();
    loop {
        let car = |rng: &mut ChaCha8Rng| {
            CarState::new(rng.random_range(0.0..20.0), rng.random_range(lo..=hi), rng.random_range(8.0..22.0))
        };
        let mut r = ChaCha8Rng::seed_from_u64(rng.random());
        let s = WorldState::new(car(&mut r), car(&mut r));
        if !comerge::model::is_terminal(&s, world) {
            return s;
        }
    }
}

/// `n` planning states drawn from one seed.
pub fn planning_states(seed: u64, n: usize, world: &World) -> Vec<WorldState> {
    let mut r = rng(seed);
    (0..n).map(|_| planning_state(&mut r, world)).collect()
}
