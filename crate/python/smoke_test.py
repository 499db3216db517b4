"""Smoke test for the phasenet_py extension.

Build and install first, e.g. `maturin build --release -m crates/py/Cargo.toml`
followed by `pip install` of the produced wheel.
"""

import cmath
import math
import sys

import phasenet_py as pn


def check(cond, what):
    if not cond:
        print(f"FAIL {what}")
        sys.exit(1)
    print(f"ok   {what}")


def main():
    n = 32
    design = pn.Design.random(n, 3, 3, seed=1)
    check(design.kind == "group" and design.n_modes == n, "random design built")
    check(design.is_connected(), "design connected")
    check(design.orthonormality_error() < 1e-10, "columns orthonormal")
    check(pn.Design.from_json(design.to_json()).to_json() == design.to_json(), "design JSON round trip")

    x = pn.random_field(n, 1e4, seed=2)
    rates = pn.intensities(design, x)
    energy = sum(abs(v) ** 2 for v in x)
    check(abs(sum(rates) - energy) < 1e-9 * energy, "intensity conserves energy")

    counts = pn.sample_counts(rates, seed=3)
    rec = pn.reconstruct(design, [float(c) for c in counts], seed=4)
    err = pn.mse(rec["field"], x)
    check(err < 3.0, f"reconstruction near the quantum limit (mse/mode {err:.3f})")

    rotated = [v * cmath.exp(0.4j) for v in x]
    aligned, phase = pn.gauge_align(rotated, x)
    check(abs(phase + 0.4) < 1e-12 and pn.mse(aligned, x, aligned=False) < 1e-18, "gauge alignment")

    summary = pn.fisher_summary(design, x)
    check(summary["crlb_trace_pinv"] >= n * (1 - 1e-9), "CRLB respects the quantum limit")

    rho = 1e3 * max(abs(v) for v in x)
    holo = pn.Design.holographic(n, rho)
    est = pn.holographic_reconstruct(holo, [float(c) for c in pn.sample_counts(pn.intensities(holo, x), seed=5)])
    check(pn.mse(est, x, aligned=False) < 2.0, "holographic estimate")

    try:
        pn.Design.random(4, 5, 5)
    except ValueError:
        check(True, "invalid arguments raise ValueError")
    else:
        check(False, "invalid arguments raise ValueError")

    rows = pn.run_sweep("n_list = [16]\nL_list = [2]\n[optimizer]\nmax_iters = 200\nrestarts = 1\n")
    check(len(rows) == 1 and math.isfinite(rows[0]["mse_per_mode"]), "sweep from TOML")


if __name__ == "__main__":
    main()
