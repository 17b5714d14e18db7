"""Closed-form sanity points of the three objectives and the two schedules.

Three things are worth seeing once by hand:
  * with all candidates identical, the matching loss equals 2*ln(K+1)/(K+1)
    and the instruction-contrast loss equals ln(M+1)/(M+1);
  * both losses vanish as the positive pulls ahead of the negatives;
  * the instruction-contrast weight ramps linearly from its initial value to
    exactly 1, and the learning rate warms up to the peak then anneals to the
    floor, hitting all three anchors exactly.
"""

import math

import numpy as np

from dualrec import losses
from dualrec.autodiff import Tensor
from dualrec.train import TrainConfig, lr_at


def main():
    print("uniform-candidate closed forms:")
    for k in (2, 5, 10):
        v = Tensor(np.ones(8))
        got = float(losses.hfm_pair_loss(v, [v] * (k + 1), v, [v] * (k + 1), 0, 0, tau=1.0).data)
        want = 2 * math.log(k + 1) / (k + 1)
        print(f"  matching   K={k:2d}: {got:.12f}  (formula {want:.12f})")
    for m in (2, 5):
        u = Tensor(np.ones(8))
        got = float(losses.icl_loss(u, [u] * (m + 1), 0, tau=1.0).data)
        want = math.log(m + 1) / (m + 1)
        print(f"  instruction M={m:2d}: {got:.12f}  (formula {want:.12f})")

    print("\nmargin sweep (positive similarity - negative similarity):")
    for margin in (0.0, 2.0, 5.0, 10.0, 20.0):
        u = Tensor(np.array([1.0, 0.0]))
        val = float(losses.icl_loss(
            u, [Tensor(np.array([margin, 0.0])), Tensor(np.zeros(2))], 0, tau=1.0
        ).data)
        print(f"  margin {margin:5.1f}: loss {val:.3e}")

    cfg = TrainConfig(total_steps=100)
    print("\nschedules over 100 steps:")
    for step in (0, 3, 5, 25, 50, 100):
        lam = losses.lambda3_schedule(step, 100, 0.2)
        print(f"  step {step:3d}: lr {lr_at(step, cfg):.2e}   lambda3 {lam:.3f}")


if __name__ == "__main__":
    main()
