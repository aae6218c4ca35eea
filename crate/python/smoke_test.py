"""Smoke test for the livecap Python module.

Build and copy the extension next to this script first:

    cargo build --release -p livecap-py
    cp target/release/liblivecap.so python/livecap.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import livecap  # noqa: E402


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    # a = (0.3, 0.4, 0, 0.3), two packets served per frame
    skewed = livecap.ArrivalPmf([0.3, 0.4, 0.0, 0.3])
    roots = livecap.find_roots(skewed, 2)
    assert len(roots) == 1
    assert close(roots[0].real, (0.7 - math.sqrt(0.85)) / 0.6)
    boundary = livecap.solve_infinite(skewed, 2)
    # sum (S - i) q_i = S - E[A]
    assert close(2 * boundary[0] + boundary[1], 2 - skewed.mean())

    # a = (1/2, 1/4, 1/4), one packet served per frame, three buffered
    toy = livecap.ArrivalPmf([0.5, 0.25, 0.25])
    q = livecap.solve_finite(toy, 1, 3)
    assert all(close(x, y) for x, y in zip(q, [2 / 7, 2 / 7, 2 / 7, 1 / 7]))
    outage, drop = livecap.evaluate(toy, 1, 3)
    assert close(outage, 2 / 7)
    assert close(drop, 1 - (5 / 7) / 0.75)

    report = livecap.solver_report(toy, 1, 3)
    assert set(report) >= {"q", "beta", "outage", "drop_rate", "roots"}

    # reference user 8 with an eighth of the cell
    user8 = livecap.RatePmf.reference(8)
    arrivals = user8.arrivals(275 / 8)
    sol = livecap.max_playout_rate(arrivals, 4800, 0.01, 0.03)
    assert sol["S"] == 100 and close(sol["U_bps"], 50e6)
    assert sol["outage"] <= 0.01 and sol["drop"] <= 0.03

    share = livecap.min_rate_share(4e6, 0.04, 275, livecap.RatePmf.reference(7))
    assert abs(share - 0.0308) < 1e-3

    split = livecap.two_class_split(
        [livecap.RatePmf.reference(3)], [livecap.RatePmf.reference(3)], 1.0, 100, 0.01, 0.01
    )
    assert close(split["ratio"], 1.0) and split["K_p"] == 50

    sim = livecap.simulate_constant(arrivals, sol["S"], 4800, frames=20000, runs=2, seed=1)
    again = livecap.simulate_constant(arrivals, sol["S"], 4800, frames=20000, runs=2, seed=1)
    assert sim == again
    assert len(sim["runs"]) == 2

    try:
        livecap.max_playout_rate(arrivals, 4800, 0.0, 0.0)
    except livecap.LivecapError as e:
        assert e.args[0] == "unsatisfiable"
    else:
        raise AssertionError("expected unsatisfiable targets")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
