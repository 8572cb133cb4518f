"""Smoke test for the volterra extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`
or `pip install crates/py`.
"""

import math

import volterra


def main():
    k = volterra.Kernel.constant(1.0)
    nodes, rows, terms, (left, right) = k.resolvent(6)
    assert abs(rows[-1][0] - math.e) < 1e-2, rows[-1][0]
    assert max(left, right) < 1e-6

    fbm = volterra.Kernel.fbm(0.3)
    exp = fbm.hoelder_exponent("l2_tail", 0.5, [2.0 ** -j for j in range(4, 11)])
    assert abs(exp - 0.6) < 0.2, exp

    model = volterra.Model.mean_field_ou(1.0, 1.0, 1.0)
    times, states = model.simulate(5, 64, seed=7)
    assert len(times) == 33 and len(states[0]) == 64
    again = model.simulate(5, 64, seed=7)[1]
    assert again == states

    pts = [[0.0], [1.0], [3.0]]
    assert volterra.w2(pts, pts) == 0.0
    assert abs(volterra.w2([[0.0]], [[2.0]]) - 2.0) < 1e-15

    case, terms, decay = volterra.chaos_rate_exponent(2.0, 1, 4.0)
    assert case == "p>d/2" and terms == (-0.5, -0.5), (case, terms)

    m, v = volterra.ou_oracle(1.0, 1.0, 1.0, 0.0, 1.0)
    assert m == 1.0 and abs(v - 0.5 * (1 - math.exp(-2))) < 1e-15

    rows, slope, _ = volterra.strong_rate_study(
        """
[model]
kind = "mean_field_ou"
a = 1.0
sigma0 = 1.0
x0 = { kind = "deterministic", value = [1.0] }

[study]
seed = 3
levels = [3, 4, 5]
particles = 16
n_max = 7
reference = "finest_level"
replications = 2
"""
    )
    assert len(rows) == 3 and slope > 0, (rows, slope)
    print("volterra smoke test OK", volterra.__version__)


if __name__ == "__main__":
    main()
