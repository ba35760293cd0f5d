"""Quantizing observables acts like ridge regularization.

For the scalar system ``x+ = 0.9 x + 0.1 u`` the lifted state is ``x``
itself.  Quantizing every observable (and the input) with a common step
``eps`` and fitting by plain least squares gives, as data grow, the same
model as a ridge fit on exact data with ``lambda = eps**2 / 12``.  The gap
between the two shrinks with the number of snapshots, while the gap to the
unregularized fit stays put.

    python demos/ridge_equivalence.py
"""

import numpy as np

from koopquant.dictionary import make_custom_dictionary
from koopquant.dynamics import TrajectorySet
from koopquant.ident import assemble_snapshots, edmd_fit, estimate_gap, ridge_fit
from koopquant.quantization import DitherStream, build_quantizer


def scalar_data(T, seed):
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1, 1, T)
    x = np.zeros(T + 1)
    for t in range(T):
        x[t + 1] = 0.9 * x[t] + 0.1 * u[t]
    return TrajectorySet(x[None, None], u[None, None], 1.0)


def main():
    d = make_custom_dictionary(1, [lambda X: X[0]], state_block=True)
    q = build_quantizer(-2.1, 2.1, 4)
    lam = q.resolution_eps ** 2 / 12
    print(f"b = 4, eps = {q.resolution_eps:.4f}, lambda = eps^2/12 = {lam:.4e}")
    print(f"{'T':>8} {'gap to ridge':>14} {'gap to plain LS':>16}")
    for T in (1_000, 10_000, 100_000):
        to_ridge, to_plain = [], []
        for seed in range(5):
            data = scalar_data(T, seed)
            s = assemble_snapshots(data, d)
            sq = assemble_snapshots(data, d, "observable", quantizers={"signal": [q], "input": [q]},
                                    stream=DitherStream(seed))
            quant = edmd_fit(sq)[0]
            to_ridge.append(estimate_gap(ridge_fit(s, lam)[0], quant)[2])
            to_plain.append(estimate_gap(edmd_fit(s)[0], quant)[2])
        print(f"{T:>8} {np.mean(to_ridge):14.4%} {np.mean(to_plain):16.4%}")


if __name__ == "__main__":
    main()
