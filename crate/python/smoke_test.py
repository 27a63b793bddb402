#!/usr/bin/env python3
"""Smoke test for the statknnad_py extension module.

Builds the cdylib if needed, imports it straight from the cargo target
directory, and exercises the main entry points.
"""

import math
import pathlib
import random
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    lib = None
    for profile in ("release", "debug"):
        cand = ROOT / "target" / profile / "libstatknnad_py.so"
        if cand.exists():
            lib = cand
            break
    if lib is None:
        subprocess.run(
            ["cargo", "build", "-p", "statknnad-py"], cwd=ROOT, check=True
        )
        lib = ROOT / "target" / "debug" / "libstatknnad_py.so"
    tmp = pathlib.Path(tempfile.mkdtemp(prefix="statknnad_py_"))
    shutil.copy(lib, tmp / "statknnad_py.so")
    sys.path.insert(0, str(tmp))
    import statknnad_py

    return statknnad_py


def main():
    m = load_module()
    rng = random.Random(7)
    train = [[rng.gauss(0, 1), rng.gauss(0, 1)] for _ in range(60)]

    theta = m.choose_theta(train, 1, 0.9)
    assert math.isfinite(theta)

    # an obvious outlier screens; a central point does not
    far = m.screen([6.0, 6.0], train, 1, theta)
    assert far["selected"] and far["k_star"] == 1 and len(far["neighbors"]) == 1
    near = m.screen([0.01, 0.01], train, 1, theta)
    assert not near["selected"]

    report = m.selective_p([6.0, 6.0], train, 1, theta)
    assert report["screened"]
    for key in ("p_selective", "p_naive", "p_bonferroni", "p_wopp"):
        assert 0.0 <= report[key] <= 1.0, (key, report[key])
    assert not m.selective_p([0.01, 0.01], train, 1, theta)["screened"]

    # adaptive k via a candidate list
    adaptive = m.selective_p([6.0, 6.0], train, [1, 2, 5], theta)
    assert adaptive["screened"]

    # truncated normal: untruncated survival at 0 is one half
    assert abs(m.tn_survival(0.0, 1.0, [(None, None)]) - 0.5) < 1e-12
    p = m.tn_survival(1.5, 1.0, [(1.0, None)])
    assert 0.0 < p < 1.0

    # latent pipeline through a random piecewise-linear network
    net = m.PLNetwork.random(3, [2, 6, 2], False)
    assert net.input_dim() == 2 and net.output_dim() == 2
    round_trip = m.PLNetwork.from_json(net.to_json())
    assert round_trip.forward([0.3, -0.4]) == net.forward([0.3, -0.4])
    latent = m.selective_p(
        [6.0, 6.0], train, 1, -10.0, statistic="image-mean", net_json=net.to_json()
    )
    assert latent["screened"] and 0.0 <= latent["p_selective"] <= 1.0

    # small synthetic experiment; rates conditional on screening
    result = m.experiment(n=30, d=2, k=1, delta=0.0, trials=60, seed=5,
                          theta_quantile=0.5)
    stat = result["methods"]["stat"]
    assert stat["screened"] <= result["trials"]
    assert stat["rejections"] <= stat["screened"]
    assert len(result["records"]) == 60
    again = m.experiment(n=30, d=2, k=1, delta=0.0, trials=60, seed=5,
                         theta_quantile=0.5)
    assert again["methods"]["stat"] == stat

    print("smoke test: all assertions passed")


if __name__ == "__main__":
    main()
