"""Regenerate the frozen task assets under src/sbireduce/data/.

Run once; the CSV files are committed so x_obs and reference posteriors stay
fixed across runs. ``python scripts/make_task_assets.py``
"""
from pathlib import Path

import numpy as np

from sbireduce import tasks

DATA = Path(__file__).resolve().parents[1] / "src" / "sbireduce" / "data"
ASSET_SEED = 20230401


def save(name, arr):
    np.savetxt(DATA / name, np.atleast_2d(arr), delimiter=",", fmt="%.17g")


def main():
    DATA.mkdir(exist_ok=True)
    rng = np.random.default_rng(ASSET_SEED)
    save("bayes_lr_X.csv", rng.standard_normal((10, 6)))
    save("bayes_lr_theta_true.csv", rng.standard_normal(6))
    save("glm_stimulus.csv", rng.standard_normal(100))
    tasks.clear_cache()
    for name, seed in (("bayes_lr", 1), ("slcp", 2), ("bernoulli_glm", 3)):
        task = tasks.get_task(name, with_x_obs=False)
        x_obs = task.simulate(task.theta_true[None], seed=ASSET_SEED + seed)[0]
        save(f"{name}_x_obs.csv", x_obs)
        tasks.clear_cache()


if __name__ == "__main__":
    main()
