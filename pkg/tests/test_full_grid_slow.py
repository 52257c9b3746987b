"""Full experiment grid at publication scale. Deselected by default; run
with ``pytest -m slow``. Each cell writes its table row to stdout so the
output can be diffed against the reference layout.
"""

import numpy as np
import pytest

from gdsur.montecarlo import McConfig, run_accuracy, run_size

SEED = 20260810
GRID_T = (100, 200, 400, 800)
GRID_N = (5, 10)
GRID_R = (2, 4)

pytestmark = pytest.mark.slow


@pytest.mark.parametrize("regime", ["BD", "GEXOG", "EBD"])
def test_accuracy_grid(regime):
    for n in GRID_N:
        for r in GRID_R:
            for t_len in GRID_T:
                cfg = McConfig(
                    mode="accuracy",
                    regime=regime,
                    n=n,
                    r=r,
                    t=t_len,
                    reps=1000,
                    seed=SEED,
                    estimators=("ols", "fgls-co", "fgls-d", "gd", "bc-gd"),
                )
                res = run_accuracy(cfg)
                cells = " ".join(
                    f"{name}:{res.bias[name]:.4f}/{res.mse[name]:.4f}"
                    for name in cfg.estimators
                )
                print(f"[grid] {regime} N={n} K={r} T={t_len}  {cells}")
                assert all(np.isfinite(v) for v in res.mse.values())


@pytest.mark.parametrize("regime", ["BD", "GEXOG", "EBD"])
def test_size_grid(regime):
    for n in GRID_N:
        for r in GRID_R:
            for t_len in GRID_T:
                cfg = McConfig(
                    mode="size",
                    regime=regime,
                    n=n,
                    r=r,
                    t=t_len,
                    reps=1000,
                    seed=SEED,
                    tests=("wald-gd", "wald-fgls-d", "wald-fgls-co", "grs", "har", "fdb"),
                    b1=199,
                )
                res = run_size(cfg)
                cells = " ".join(
                    f"{name}:{res.rates[name][0.05]:.3f}" for name in cfg.tests
                )
                print(f"[grid] {regime} N={n} K={r} T={t_len} 5%  {cells}")
                assert all(0.0 <= res.rates[name][0.05] <= 1.0 for name in cfg.tests)
