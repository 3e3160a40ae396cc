"""Regenerate ``frozen.json`` from the independent oracles (never from the package).

    python3 tests/make_frozen.py
"""

import json
import math
from pathlib import Path

import numpy as np

import oracles


def build() -> dict:
    rng = np.random.default_rng(11)
    x = rng.normal(size=(1, 2, 8))
    w = rng.normal(size=(3, 2, 3))
    y = rng.normal(size=(1, 3, 8))

    def mse():
        return float(((oracles.conv1d(x, w, padding=1) - y) ** 2).mean())

    conv_grad = oracles.numeric_grad(mse, w)

    rng = np.random.default_rng(3)
    emb = rng.normal(size=(5, 4))
    sbp = [120.0, 122.0, 150.0, 119.0, 90.0]
    dbp = [80.0, 79.0, 95.0, 81.0, 60.0]
    wmat = [[oracles.bp_weight(sbp[i], dbp[i], sbp[j], dbp[j]) if i != j else 0.0 for j in range(5)] for i in range(5)]
    ages = [63.0, 60.0, 25.0, 66.0, 61.0]
    sexes = ["M", "M", "F", "F", "M"]
    pimat = [[oracles.age_weight(ages[i], ages[j]) * oracles.gender_weight(sexes[i], sexes[j]) if i != j else 0.0
              for j in range(5)] for i in range(5)]

    z = np.random.default_rng(5).normal(size=(2, 3, 8)) * 3 + 1
    gamma = np.array([[0.5, -0.2, 1.0], [0.0, 0.3, -0.5]])
    beta = np.array([[2.0, 0.0, -1.0], [0.1, 0.2, 0.3]])
    return {
        "conv_mse": {"x": x.tolist(), "w": w.tolist(), "y": y.tolist(), "padding": 1, "grad_w": conv_grad.tolist()},
        "wcl": {"emb": emb.tolist(), "sbp": sbp, "dbp": dbp, "bp_weights": wmat, "loss_bp": oracles.weighted_infonce(emb, wmat),
                "ages": ages, "sexes": sexes, "pi_weights": pimat, "loss_pi": oracles.weighted_infonce(emb, pimat)},
        "adain": {"z": z.tolist(), "gamma": gamma.tolist(), "beta": beta.tolist(),
                  "out": oracles.adain(z, gamma, beta).tolist()},
        "exp_minus_1": math.exp(-1.0),
        "exp_minus_10": math.exp(-10.0),
    }


if __name__ == "__main__":
    out = Path(__file__).with_name("frozen.json")
    out.write_text(json.dumps(build(), indent=1, sort_keys=True) + "\n")
    print(f"wrote {out}")
