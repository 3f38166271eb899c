"""Smoke test for the compiled extension. Run after `maturin develop` (or installing the wheel)."""

import math
import pathlib
import tempfile

import laser_teleop

SCENARIOS = pathlib.Path(__file__).resolve().parents[3] / "scenarios"


def test_run_and_replay():
    rec = laser_teleop.run_scenario(str(SCENARIOS / "dwell_goal.json"))
    assert len(rec) == 121
    assert rec.completed
    summary = rec.summary()
    assert summary["outcome"] == "completed"
    goals = [i for i in range(len(rec)) if (rec.row(i)["command"] or {}).get("type") == "goal_pose"]
    assert len(goals) == 1
    assert abs(rec.row(goals[0])["t"] - 3.0) < 1 / 30 + 1e-9
    assert rec.replay()

    with tempfile.TemporaryDirectory() as d:
        path = pathlib.Path(d) / "run.jsonl"
        rec.save(str(path))
        again = laser_teleop.Recording.load(str(path))
        assert again.to_jsonl() == rec.to_jsonl()
        rec.save_csv(str(pathlib.Path(d) / "run.csv"))

    t = rec.column("t")
    assert t == sorted(t) and len(t) == len(rec)


def test_seed_changes_jittered_run():
    a = laser_teleop.run_scenario(str(SCENARIOS / "dwell_jitter.json"), seed=1)
    b = laser_teleop.run_scenario(str(SCENARIOS / "dwell_jitter.json"), seed=2)
    assert a.to_jsonl() != b.to_jsonl()


def test_kinematics_round_trip():
    q = [0.2, 0.3, -0.4, 0.1, 0.3, 0.2]
    pos, quat = laser_teleop.forward_kinematics(q)
    sol = laser_teleop.inverse_kinematics(pos, quat)
    assert sol is not None
    pos2, quat2 = laser_teleop.forward_kinematics(sol)
    assert math.dist(pos, pos2) < 1e-4
    home, _ = laser_teleop.forward_kinematics([0.0] * 6)
    assert math.dist(home, (0.4, 0.0, 0.45)) < 1e-9
    assert laser_teleop.inverse_kinematics([3.0, 0.0, 0.0], [0, 0, 0, 1]) is None


def test_mov_rad():
    stream = [[0.0, 0.0, math.sin(0.25 * k / 30), math.cos(0.25 * k / 30)] for k in range(301)]
    assert abs(laser_teleop.mov_rad(stream) - 5.0) < 1e-9


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"ok {name}")
