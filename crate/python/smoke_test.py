"""Smoke test for the `comerge` extension module.

Build and install it first, e.g. `maturin develop -m crates/py/Cargo.toml --release`.
"""

import math
import sys
import tempfile

import comerge


def check(cond, what):
    if not cond:
        sys.exit(f"FAIL {what}")
    print(f"ok   {what}")


def main():
    world = comerge.World(road_length=200.0)
    # Each car starts in the other car's goal lane.
    human = comerge.CarState(0.0, world.lane_center(1), 15.0)
    robot = comerge.CarState(0.0, world.lane_center(0), 15.0)
    s = comerge.WorldState(human, robot)

    s1 = world.transition(s, "accelerate", "turn_right")
    check(math.isclose(s1.human.v, 15.4), "acceleration adds accel * dt")
    check(s1.robot.x > robot.x and math.isclose(s1.robot.v, 15.0), "a turn keeps the speed")
    check("turn_left" not in world.allowed_actions(comerge.CarState(0.0, 1.0, 15.0)), "edge rule")
    check(world.rewards(s) == (0.0, 0.0), "no reward outside the goal lane")
    try:
        world.transition(s, "fly", "stay")
        check(False, "unknown action rejected")
    except ValueError:
        check(True, "unknown action rejected")

    p = comerge.plan(s, world, alpha=0.6, max_expansions=2000, seed=1)
    check(p["actions"] and all(h in comerge.ACTIONS and r in comerge.ACTIONS for h, r in p["actions"]), "plan has legal actions")
    q = comerge.plan(s, world, alpha=0.6, max_expansions=2000, seed=1)
    check(p["actions"] == q["actions"] and p["value"] == q["value"], "planning is reproducible")

    log = comerge.simulate(alpha=0.6, road_length=100.0, human="cooperative:0.5", seed=3)
    out = log.outcome()
    check(out["ticks"] == len(log) > 0, "trial ran")
    check(log.replay() == log.states()[1:], "log replays exactly")
    again = comerge.TrialLog.from_jsonl(log.to_jsonl())
    check(again.to_jsonl() == log.to_jsonl(), "jsonl round trip")

    grid = '{"road_lengths": [100], "alphas": [0.0, 1.0], "trials_per_condition": 2, "planner": {"max_expansions": 200}}'
    with tempfile.TemporaryDirectory() as d:
        csv, summaries = comerge.run_batch(grid, "cooperative:0.5", d)
    check(len(csv.strip().splitlines()) == 3 and len(summaries) == 2, "batch summary")

    t, df, pval = comerge.t_test([1.0, 2.0, 3.0, 4.0], [2.0, 3.0, 4.0, 5.5])
    f, _, _ = comerge.anova([[1.0, 2.0, 3.0, 4.0], [2.0, 3.0, 4.0, 5.5]])
    check(df == 6 and 0 < pval < 1 and math.isclose(f, t * t), "F equals t squared")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
