"""Exercises the bindings end to end. Run after building the extension:

    cargo build --release -p lbopt-py --features extension-module
    cp target/release/liblbopt.so crates/py/python/lbopt.so
    python3 crates/py/python/smoke_test.py
"""

import json
import math

import lbopt


def main():
    assert math.isclose(lbopt.phi(0.0), math.sqrt(math.e * math.pi / 2), rel_tol=1e-12)
    assert lbopt.psi(math.e, 0.5) == 0.0
    assert lbopt.gamma(1.0) == 0.0 and lbopt.gamma(-1.0) > 0.0

    inst = lbopt.Instance.for_chain(4, 20, 0.5, 40)
    x = [0.0] * inst.d
    x[0] = 1.1 * inst.lam
    g = inst.grad(x)
    assert len(g) == inst.d
    assert lbopt.prog(g, 1) <= lbopt.prog(x, 1) + 1
    step = 1e-4 * inst.lam
    xp, xm = list(x), list(x)
    xp[1] += step
    xm[1] -= step
    fd = (inst.value(xp) - inst.value(xm)) / (2 * step)
    assert abs(fd - g[1]) <= 1e-4 * max(1.0, abs(g[1])), (fd, g[1])

    draw, coin = inst.oracle(x, seed=3)
    assert len(draw) == inst.d and isinstance(coin, bool)
    assert inst.oracle_variance(x) <= inst.sigma2

    msg = lbopt.rand_k([1.0, 2.0, 3.0, 4.0], 2, seed=5)
    assert len(msg["indices"]) == 2 and msg["scale"] == 2.0
    blocks = [lbopt.perm_k([1.0] * 8, p, 4, seed=7)["indices"] for p in range(4)]
    assert sorted(i for b in blocks for i in b) == list(range(1, 9))

    classic = lbopt.Instance(1.0, 7296.0, 1.0, 1, 0.0, 256, "classic")
    rec = classic.simulate("batch_sync_sgd", seed=1)
    assert rec["time_to_eps"] is not None and rec["theory_time"] == 7296.0

    bound = lbopt.block_sum_bound(lbopt.Instance.for_chain(8, 96, 0.1, 384), 1.0, 1.0, 0.5)
    report = lbopt.mc_verify(bound, 2000, 1)
    assert report["pass"], json.dumps(report)

    print("smoke test passed")


if __name__ == "__main__":
    main()
