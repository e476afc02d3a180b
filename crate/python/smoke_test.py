#!/usr/bin/env python3
"""Smoke test for the pathfbsde_py extension module.

Build and run:

    cargo build --release -p pathfbsde-py
    cp target/release/libpathfbsde_py.so python/pathfbsde_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pathfbsde_py as pf


def main() -> None:
    names = pf.problem_names()
    assert "bm-terminal" in names and "path-sigma" in names, names

    grid = pf.TimeGrid.uniform(0.0, 1.0, 8)
    assert grid.n_steps() == 8
    assert abs(grid.mesh() - 0.125) < 1e-15

    # step evaluation, stopped extension, sup norm
    path = pf.DiscretePath([(0.0, [1.0]), (0.5, [-3.0]), (0.8, [2.0])])
    assert path.value_at(0.25) == [1.0]
    assert path.value_at(0.5) == [-3.0]
    assert path.value_at(5.0) == [2.0]
    assert path.sup_norm() == 3.0

    # concatenation splices at the prefix value
    prefix = pf.DiscretePath([(0.0, [2.0])])
    w = pf.DiscretePath([(0.0, [0.0]), (0.5, [0.7]), (1.0, [-0.4])])
    spliced = pf.concat(prefix, w, 0.5)
    assert spliced.value_at(0.25) == [2.0]
    assert abs(spliced.value_at(1.0)[0] - (2.0 + (-0.4) - 0.7)) < 1e-15

    # the stopped-path metric on a constant path is the time gap
    d = pf.d_infinity(prefix, 0.2, prefix, 0.5)
    assert abs(d - 0.3) < 1e-15, d

    # JSON round trip
    back = pf.DiscretePath.from_json(path.to_json())
    assert back.value_at(0.6) == path.value_at(0.6)

    # forward martingale sanity
    summary = pf.simulate_summary("bm-terminal", n=16, samples=20000, seed=3)
    assert abs(summary["terminal_mean"][0]) < 0.03
    assert abs(summary["terminal_std"][0] - 1.0) < 0.03

    # coupled strong error telescopes for additive noise
    err = pf.strong_error("bm-terminal", coarse_n=4, fine_n=64, samples=200, seed=1)
    assert err < 1e-20, err

    # backward solve on a problem with a closed form: Y(0) = mu T = 0.5, Z = 2
    res = pf.solve("abm-linear", n=32, m=1, samples=20000, seed=7)
    assert abs(res["Y0"] - 0.5) < 4 * res["Y0_stderr"] + 1e-9, res
    assert abs(res["Z0"][0] - 2.0) < 4 * res["Z0_stderr"][0], res
    assert len(res["trace"]) == 2

    # driver-coupled problem through the implicit reference scheme
    imp = pf.solve("discounted-terminal", n=32, m=1, samples=20000, seed=9, implicit=True)
    assert abs(imp["Y0"] - math.exp(-0.5)) < 0.03, imp["Y0"]

    # PPDE value with a frozen past: heat equation gives u(t, gamma) = gamma(t)
    u = pf.evaluate_ppde(
        "bm-terminal", n=16, m=1, samples=20000, seed=11,
        history=[(0.0, [0.0]), (0.25, [0.8])],
    )
    assert abs(u["Y0"] - 0.8) < 4 * u["Y0_stderr"], u

    print("smoke test ok")


if __name__ == "__main__":
    main()
