"""Write the converter-oracle fixture by brute-force enumeration of all 5 actions.

Output CSV: ``env,kind,scenario_id,expected_action``.  The oracle below is
written from the converter rules alone in plain Python; it shares only the
scenario generator (``tests/converter_scenarios.py``) with the test suite.

Usage::

    python tools/make_converter_fixture.py --out tests/fixtures/converter_oracle.csv
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from converter_scenarios import N_SCENARIOS, scenario  # noqa: E402

# controller constants the converters are specified with
KP, KD, DEADBAND = 1.0, 0.2, 0.05
SPLIT_RADIUS, SPLIT_PENALTY = 2, 0.5
TIE = 1e-9

# continuous actions: noop, -x, +x, -y, +y
UNIT = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)]
# grid actions: stay, +x, -x, +y, -y
MOVES = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)]


def first_best(values, better) -> int:
    best = 0
    for a in range(1, len(values)):
        if better(values[a], values[best]):
            best = a
    return best


def oracle_go_landmark(sc) -> int:
    fx = KP * sc["target"][0] - KD * sc["velocity"][0]
    fy = KP * sc["target"][1] - KD * sc["velocity"][1]
    if math.hypot(fx, fy) < DEADBAND:
        return 0
    dots = [ux * fx + uy * fy for ux, uy in UNIT]
    return first_best(dots, lambda a, b: a > b + TIE)


def oracle_avoid(sc) -> int:
    theta = math.atan2(sc["ally"][1], sc["ally"][0]) + math.pi / 2
    cx, cy = math.cos(theta), math.sin(theta)
    dots = [ux * cx + uy * cy for ux, uy in UNIT]
    return first_best(dots, lambda a, b: a > b + TIE)


def oracle_explore(sc) -> int:
    # E, N, W, S
    return [1, 3, 2, 4][sc["direction"]]


def landing(sc, move):
    cell = (move[0], move[1])
    return (0, 0) if cell in set(map(tuple, sc["obstacles"])) else cell


def manhattan(a, b) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def oracle_pursue(sc) -> int:
    target = tuple(sc["target"])
    near = [tuple(a) for a in sc["allies"] if max(abs(a[0]), abs(a[1])) <= SPLIT_RADIUS]
    scores = []
    for m in MOVES:
        cell = landing(sc, m)
        s = float(max(manhattan(cell, target), 1))
        s += sum(SPLIT_PENALTY for a in near if manhattan(cell, a) == 1)
        scores.append(s)
    return first_best(scores, lambda a, b: a < b - TIE)


def oracle_follow(sc) -> int:
    target = tuple(sc["target"])
    scores = []
    for m in MOVES:
        cell = landing(sc, m)
        moved = cell != (0, 0)
        d = manhattan(cell, target)
        scores.append(math.inf if moved and d == 0 else float(d))
    return first_best(scores, lambda a, b: a < b - TIE)


ORACLES = {"go_landmark": oracle_go_landmark, "avoid_collision": oracle_avoid, "explore": oracle_explore,
           "pursue_evader": oracle_pursue, "follow_ally": oracle_follow}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["env", "kind", "scenario_id", "expected_action"])
        for sid in range(N_SCENARIOS):
            sc = scenario(sid)
            w.writerow([sc["env"], sc["kind"], sid, ORACLES[sc["kind"]](sc)])
    print(f"{N_SCENARIOS} scenarios -> {args.out}")


if __name__ == "__main__":
    main()
