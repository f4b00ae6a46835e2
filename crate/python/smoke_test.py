"""Smoke test for the Python extension.

Uses an installed ``reflected_stable_py`` if there is one; otherwise builds
the extension with cargo and loads the shared library from ``target/``.
"""

import importlib
import importlib.machinery
import importlib.util
import json
import os
import pathlib
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]


def load():
    try:
        return importlib.import_module("reflected_stable_py")
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "reflected-stable-py"],
        cwd=ROOT,
        check=True,
    )
    target = pathlib.Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target")) / "release"
    for name in ("libreflected_stable_py.so", "libreflected_stable_py.dylib", "reflected_stable_py.dll"):
        lib = target / name
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("reflected_stable_py", str(lib))
            spec = importlib.util.spec_from_loader("reflected_stable_py", loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit(f"no extension library found in {target}")


def main():
    rs = load()
    params = rs.StableParams(1, 1.0)
    assert abs(params.c_levy - 1 / 3.141592653589793) < 1e-12

    try:
        rs.StableParams(1, 2.0)
    except ValueError as e:
        assert "alpha" in str(e)
    else:
        raise AssertionError("alpha = 2 accepted")

    domain = rs.Domain.interval(-1.0, 1.0)
    kernel = rs.ReflectionKernel.projection(domain, 0.3, 0.2)
    assert abs(kernel.mass(2.0, 0.6, 0.8) - 1.0) < 1e-12

    model = rs.Model(params, kernel, n_cells=80)
    k = model.reflected_kernel(0.5)
    assert max(abs(sum(row) - 1.0) for row in k) < 1e-4

    report = model.series_report(0.5)
    assert report["gamma"] < 1.0

    st = model.stationary()
    assert st["beta_hat"] < 1.0
    assert st["tv_closed_null"] < 1e-6
    assert abs(sum(st["kappa_closed_form"]) - 1.0) < 1e-9

    counts = model.simulate_counts(0.0, [0.5], replicas=200, seed=3)
    assert len(counts) == 200 and all(len(c) == 1 for c in counts)

    with tempfile.TemporaryDirectory() as out:
        cfg = {
            "kind": "chain",
            "seed": 5,
            "n_cells": 60,
            "chain_steps": 50000,
            "output_dir": out,
        }
        plan = rs.describe(json.dumps(cfg))
        assert len(plan) >= 3
        manifest = json.loads(rs.run_experiment(json.dumps(cfg), threads=1))
        assert manifest["passed"]
        assert any(f["path"] == "stationary_p.csv" for f in manifest["files"])

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
