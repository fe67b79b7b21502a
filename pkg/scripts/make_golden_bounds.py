"""Freeze reference values for the bound evaluators.

Evaluates every formula by direct substitution in 50-digit mpmath arithmetic,
without importing the package's bounds module, and writes
tests/golden/bounds_golden.json.  Rerun only when an input set is added.
"""

import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 50

CASES = [
    {"name": "gauss4d_reference", "constants": {"M": 2.0, "m": 1.0, "b": 0.0, "B": 0.0},
     "d": 4, "sigma_sq": 0.25, "eta": 0.01, "k": 1000, "epsilon": 0.1, "R": 1.0,
     "alpha": 0.5, "k_alpha": 0.3, "p_inf": float(1 / (2 * mp.pi * 1.25) ** 2), "universal_C": 1.0,
     "w2_init": 1.0, "delta": 0.05, "n": 1000.0, "rademacher": 0.01},
    {"name": "dissipative_3d", "constants": {"M": 1.0, "m": 0.5, "b": 0.2, "B": 0.3},
     "d": 3, "sigma_sq": 0.1, "eta": 0.005, "k": 200, "epsilon": 0.05, "R": 2.0,
     "alpha": 0.25, "k_alpha": 1.0, "p_inf": 0.05, "universal_C": 0.5,
     "w2_init": 2.0, "delta": 0.1, "n": 10000.0, "rademacher": 0.02},
    {"name": "bimodal_1d_uncovered", "constants": {"M": 2.0, "m": 0.5, "b": 3.4485, "B": 1.0},
     "d": 1, "sigma_sq": 0.1, "eta": 0.01, "tau": 3.0, "epsilon": 0.2, "R": 3.0,
     "alpha": 0.4, "k_alpha": 0.0, "p_inf": 0.4, "universal_C": 1.0,
     "w2_init": 4.0, "delta": 0.01, "n": 500.0, "rademacher": 0.05},
    {"name": "wide_10d_large_eps", "constants": {"M": 0.2, "m": 0.2, "b": 1.0, "B": 0.0},
     "d": 10, "sigma_sq": 0.5, "eta": 0.001, "k": 5000, "epsilon": 1.5, "R": 5.0,
     "alpha": 0.1, "k_alpha": 2.5, "p_inf": 1e-3, "universal_C": 2.0,
     "w2_init": 0.0, "delta": 0.2, "n": 100000.0, "rademacher": 0.001},
    {"name": "stiff_5d_small_C", "constants": {"M": 4.0, "m": 2.0, "b": 0.0, "B": 2.0},
     "d": 5, "sigma_sq": 0.2, "eta": 0.02, "k": 50, "epsilon": 0.3, "R": 0.5,
     "alpha": 2.0, "k_alpha": 0.7, "p_inf": 0.2, "universal_C": 1e-3,
     "w2_init": 3.0, "delta": 0.5, "n": 3.0, "rademacher": 0.1},
]


def evaluate(case):
    c = {k: mp.mpf(v) for k, v in case["constants"].items()}
    M, m, b, B = c["M"], c["m"], c["b"], c["B"]
    d = mp.mpf(case["d"])
    s2 = mp.mpf(case["sigma_sq"])
    eta = mp.mpf(case["eta"])
    tau = eta * case["k"] if "k" in case else mp.mpf(case["tau"])
    eps, R, C = mp.mpf(case["epsilon"]), mp.mpf(case["R"]), mp.mpf(case["universal_C"])
    p_inf, w2_init = mp.mpf(case["p_inf"]), mp.mpf(case["w2_init"])
    alpha, k_alpha = mp.mpf(case["alpha"]), mp.mpf(case["k_alpha"])
    delta, n, rad = mp.mpf(case["delta"]), mp.mpf(case["n"]), mp.mpf(case["rademacher"])

    m_s = (m - s2 * M) / 2
    b_s = b + B ** 2 / (2 * (m - s2 * M))
    m_u, b_u = m / 4, b + m * B ** 2 / (4 * M ** 2)

    c_P = 2 / (m_s * (d + b)) * (1 + C * (d + b) ** 2 * mp.e ** (8 * (M + B) * (d + b) / m_s))
    c_LS = 8 * M / m_s ** 2 + 2 / M + c_P * (2 + 6 * M * (b + d) / m_s)

    smoothing = mp.sqrt(s2) * mp.sqrt(d)
    A = C * mp.sqrt(d * eta * tau) * mp.e ** (M ** 2 * tau / 2)
    mixing = w2_init * mp.e ** (-2 * tau / c_LS)
    out = {"m_sigma": m_s, "b_sigma": b_s, "m_uniform": m_u, "b_uniform": b_u,
           "c_P": c_P, "c_LS": c_LS, "smoothing_term": smoothing, "A_term": A,
           "mixing_term": mixing}
    if case["d"] >= 3:
        inner = eps * tau + C * p_inf ** (mp.mpf(1) / 2 - 1 / d) * mp.e ** (M * mp.sqrt(d) * tau / 4) \
            * mp.sqrt(tau) * eps ** (1 / d)
        front = C * mp.sqrt((b + d) * tau)
        out["C_term"] = front * inner ** (mp.mpf(1) / 4)
        out["C_term_relaxed"] = front * (inner ** (mp.mpf(1) / 2) + inner ** (mp.mpf(1) / 4))
        out["total"] = smoothing + A + mixing + out["C_term"]
        out["total_relaxed"] = smoothing + A + mixing + out["C_term_relaxed"]
    else:
        out["total"] = smoothing + A + mixing

    beta = (mp.log(1 / delta) + mp.log(mp.log(n))) / n
    rate = C * (M * R + B) ** 2 * (mp.log(n) ** 3 * rad ** 2 + beta * d)
    out["rate"] = rate
    out["failure_probability"] = 4 * delta + C * n * mp.e ** (-R ** 2 / m_s)
    out["dae_rate"] = rate / s2 ** 2
    out["bolley_villani"] = 2 * mp.sqrt(3 / (2 * alpha) + k_alpha / alpha + 2 * (b + d) * tau)
    out["bolley_villani_t0"] = 2 * mp.sqrt(3 / (2 * alpha) + k_alpha / alpha)
    # doubles overflow past ~1.8e308; such bounds are stored as "inf"
    return {k: float(v) if float(v) != float("inf") else "inf" for k, v in out.items()}


def main():
    cases = []
    for case in CASES:
        inputs = {k: v for k, v in case.items() if k != "name"}
        cases.append({"name": case["name"], "inputs": {"schema": 1, **inputs}, "expected": evaluate(case)})
    path = Path(__file__).resolve().parent.parent / "tests" / "golden" / "bounds_golden.json"
    path.write_text(json.dumps({"schema": 1, "rel_tol": 1e-12, "cases": cases}, indent=2) + "\n")
    print(f"wrote {len(cases)} cases to {path}")


if __name__ == "__main__":
    main()
