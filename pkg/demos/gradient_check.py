"""Check a hand-built loss against central finite differences.

The same routine backs ``mlstmfcn verify --suite gradients``.
"""

import numpy as np

from mlstmfcn import layers as ly
from mlstmfcn import tensor as tn
from mlstmfcn import verify as vf


def main():
    rng = np.random.default_rng(0)
    C, T, r = 4, 6, 2
    x = rng.standard_normal((C, T))
    point = {
        "w1": rng.standard_normal((C // r, C)),
        "w2": rng.standard_normal((C, C // r)),
    }
    readout = rng.standard_normal((C, T))

    def loss(v):
        y = ly.se_block(x, ly.SEParams(v["w1"], v["w2"], r))
        return tn.tsum(tn.mul(y, tn.Tensor(readout)))

    err = tn.finite_difference_check(loss, point, 1e-5)
    print(f"SE block: max relative error {err:.2e}")

    print("\nfull gradient suite:")
    vf.run_verify(["gradients"], report=print)


if __name__ == "__main__":
    main()
