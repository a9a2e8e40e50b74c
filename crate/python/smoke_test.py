"""Smoke test of the Python bindings.

Build the extension first, e.g.

    cargo build --release -p gtdd-python --features extension-module
    cp target/release/libgtdd_py.so python/gtdd_py.so

or `maturin develop -m crates/python/Cargo.toml`.
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import gtdd_py  # noqa: E402

CONFIG = """
case = "test1"
[mesh]
nx = 10
ny = 10
[time]
horizon = 0.1
steps = [8, 6]
[solver]
method = "gto-schwarz-gmres"
tol = 1e-8
"""


def main():
    summary = gtdd_py.run(CONFIG)
    assert summary["converged"], summary
    assert 0.0 < summary["c_error"] < 0.5, summary["c_error"]
    assert summary["max_mass_defect"] < 1e-10

    a12, a21, rho = gtdd_py.optimized_robin((1.0, 1.0, 1.0), (1.0, 1.0, -1.0), 0.1, 0.1 / 80)
    assert a12 > 0 and a21 > 0 and rho < 1

    v = gtdd_py.project([0.0, 0.5, 1.0], [1.0, 3.0], [0.0, 1.0])
    assert abs(v[0] - 2.0) < 1e-14

    try:
        gtdd_py.run(CONFIG.replace("nx = 10", "nx = 0"))
    except ValueError as e:
        assert "mesh.nx" in str(e)
    else:
        raise AssertionError("bad config accepted")

    print("gtdd_py", gtdd_py.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
