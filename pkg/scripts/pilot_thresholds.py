"""Pilot runs used to freeze the sampling thresholds in the test suite.

Prints the final exact W2 of the oracle N(0, 1) sampler config over ten seeds
and the W2-to-OU values behind the step-size halving ratios.
"""

import numpy as np

from dsmlangevin import dist_zoo, sampler as sp, score_models as sm, transport as tr

N01 = dist_zoo.gaussian([0.0], 1.0)


def final_w2(seed: int) -> float:
    traj = sp.ula_run(sm.OracleScore(N01), sp.LangevinConfig(0.05, 2000, 4096, sp.gaussian_init(1), seed))
    ref = dist_zoo.sample(N01, 512, seed, "reference").points
    return tr.w2_exact(traj.final.points[:512], ref).value


def w2_to_ou(eta: float, x0: float = 50.0) -> float:
    steps = int(round(1 / eta))
    pooled = np.concatenate([sp.ula_run(sm.OracleScore(N01),
                                        sp.LangevinConfig(eta, steps, 10_000, sp.point_init([x0]), s)).final.points
                             for s in range(5)])
    mean, var = sp.ou_exact_law([x0], 1.0)
    return tr.w2_sliced(pooled, tr.gaussian_quantile_batch(float(mean[0]), var, len(pooled)), 1, 0).value


if __name__ == "__main__":
    vals = [final_w2(s) for s in range(10)]
    print("oracle sampler final W2 by seed:", np.round(vals, 3))
    print("law-level floor (ULA bias):",
          tr.w2_gaussian([0.0], [[1.0]], *sp.ula_gaussian_law([0.0], 0.05, 2000, 0.01)[:1],
                         [[sp.ula_gaussian_law([0.0], 0.05, 2000, 0.01)[1]]]).value)
    w2 = [w2_to_ou(eta) for eta in (0.1, 0.05, 0.025)]
    print("W2 to OU at t=1:", np.round(w2, 4), "ratios:", np.round([w2[0] / w2[1], w2[1] / w2[2]], 3))
