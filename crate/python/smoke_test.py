"""Smoke test for the pycrossdiff extension.

Build first, e.g. `maturin develop -m crates/python/Cargo.toml`, or
`cargo build --release -p pycrossdiff` and put a copy of
target/release/libpycrossdiff.so named pycrossdiff.so on PYTHONPATH.
"""

import math
import sys
import tempfile

import pycrossdiff as cd


def main():
    names = [name for name, _ in cd.presets()]
    assert names == ["testcase1", "testcase2", "testcase3", "testcase4"], names

    assert math.isclose(cd.log_mean(1.0, math.e), math.e - 1.0, rel_tol=1e-14)
    assert cd.log_mean(2.0, 2.0) == 2.0

    mesh = cd.Mesh.rectangle((0.0, 1.0), (0.0, 1.0), 8, 8)
    assert mesh.n_cells == 64 and mesh.dimension == 2
    model = cd.Model.skt([0.5, 0.5], [[1.0, 0.4], [0.2, 1.0]])
    assert model.entropic and model.n_species == 2

    state = cd.State.project(
        mesh, model, lambda i, x, y: 1.0 + 0.5 * math.cos(math.pi * x) * (i + 1)
    )
    m0 = state.masses(mesh)
    end, reports = cd.advance(mesh, model, state, 0.05, dt_init=1e-3, dt_max=1e-2)
    assert math.isclose(end.time, 0.05)
    for a, b in zip(end.masses(mesh), m0):
        assert abs(a - b) <= 1e-12 * b
    assert all(min(r["min_values"]) >= 0.0 for r in reports)
    h = [r["entropy"] for r in reports]
    assert all(b <= a for a, b in zip(h, h[1:]))

    st = cd.stability(
        [0.05, 0.05],
        [[2.5e-5, 1.025], [0.075, 2.5e-5]],
        [59.7, 49.75],
        [[24.875, 19.9], [19.9, 19.9]],
        [2.0, 0.5],
    )
    assert st["unstable"] and abs(st["k_plus"] - 129.818) < 0.01

    report = cd.validate("testcase4")
    assert not report["hypotheses"]["violations"]

    with tempfile.TemporaryDirectory() as out:
        cfg = f"{out}/run.toml"
        with open(cfg, "w") as f:
            f.write(CONFIG)
        summary = cd.run(cfg, f"{out}/run")
        assert summary["steps"] > 0
        assert summary["final_state"].n_cells == 20

    print("pycrossdiff smoke test passed")
    return 0


CONFIG = """
experiment = "custom"

[model]
type = "skt"
a0 = [0.05, 0.05]
a = [[2.5e-5, 1.025], [0.075, 2.5e-5]]
b0 = [59.7, 49.75]
b = [[24.875, 19.9], [19.9, 19.9]]

[mesh]
kind = "interval"
a = 0.0
b = 1.0
cells = 20

[initial]
species = [
  { terms = [{ kind = "constant", value = 2.0 }] },
  { terms = [{ kind = "constant", value = 0.5 }] },
]

[time]
t_end = 0.01
"""

if __name__ == "__main__":
    sys.exit(main())
