"""Smoke test for the tflpi_py extension.

Build and install first:
    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""

import math
import pathlib
import sys

import tflpi_py

ROOT = pathlib.Path(__file__).resolve().parent.parent
SYSTEMS = ROOT / "systems"


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    return bool(cond)


def main():
    results = []
    m = tflpi_py.System.from_file(str(SYSTEMS / "motivating.sys"))
    results.append(check(m.n == 5 and m.nstar == 2, "motivating system loads"))

    rep = m.check_ltflpi()
    results.append(check(rep["solvable"], "local problem solvable"))
    a = rep["cond_a"]
    results.append(check((a["dim_tangent"], a["dim_g"], a["dim_sum"]) == (2, 3, 5), "condition (a) dims"))

    rel = m.reldeg("x4")
    results.append(check(rel["reldeg"]["well_defined"] and not rel["valid"], "x4 rejected"))
    rel = m.reldeg("x5*exp(-x4)")
    results.append(check(rel["valid"], "x5*exp(-x4) accepted"))

    nf = m.normal_form("x5*exp(-x4)")
    results.append(check(nf["r"] == 3 and abs(nf["a2_at_x0"] - 1.0) < 1e-12, "normal form"))

    chart = m.construct()
    x = [0.01, 0.02, -0.01, 0.03, 0.02]
    s = chart.invert(x)
    back = chart.forward(s)
    results.append(check(max(abs(p - q) for p, q in zip(x, back)) < 1e-7, "chart roundtrip"))
    lam = chart.transverse_output(x)
    results.append(check(abs(lam - x[4] * math.exp(-x[3])) < 1e-6, "extracted output"))

    tr = m.simulate()
    results.append(check(tr["termination"]["status"] == "completed", "simulation completes"))
    results.append(check(tr["xnorm_transverse"][-1] < 1e-3, "simulation converges"))

    br = tflpi_py.lie_bracket(
        ["x4", "-x3 - x2^3", "x2", "0", "x1"],
        ["x1", "0", "0", "1", "x5"],
        ["x1", "x2", "x3", "x4", "x5"],
    )
    val = tflpi_py.evaluate(br[0], ["x1", "x2", "x3", "x4", "x5"], [0, 0, 0, 0.25, 0])
    results.append(check(abs(val + 0.75) < 1e-15, "bracket component"))

    u = tflpi_py.System.from_file(str(SYSTEMS / "unicycle.sys"))
    g = u.check_gtflpi(cylinder=True)
    results.append(check(g["verdict"] == "sufficient-hold", "unicycle global conditions"))
    results.append(check(not u.check_commuting()["commuting"], "unicycle brackets do not commute"))

    try:
        m.reldeg("q7")
        results.append(check(False, "bad output raises"))
    except ValueError:
        results.append(check(True, "bad output raises"))

    print(f"{sum(results)}/{len(results)} checks passed")
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
