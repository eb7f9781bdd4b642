"""Regenerate the synthetic T-cell dataset shipped in odecheck/data.

77 log-scale observations at 9 distinct times (model units, 10 days each),
drawn from the registry T-cell model with Gaussian noise.
"""

from pathlib import Path

import numpy as np

from odecheck import registry
from odecheck.io import write_csv
from odecheck.ode import solve_at
from odecheck.smoothing import ObservationSet

TIMES = np.array([0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0])
COUNTS = np.array([9, 9, 9, 9, 9, 8, 8, 8, 8])
NOISE_SD = 0.3
SEED = 20240601


def make(seed=SEED):
    entry = registry.get("tcell")
    rng = np.random.default_rng(seed)
    t = np.repeat(TIMES, COUNTS)
    x = solve_at(entry.model, entry.theta0, entry.x0, t, t0=0.0)
    y = np.round(x + NOISE_SD * rng.standard_normal(x.shape), 6)
    return ObservationSet(t, y, span=(0.0, 1.0), names=("logTm", "logTs", "logTl"))


if __name__ == "__main__":
    out = Path(__file__).resolve().parents[1] / "src" / "odecheck" / "data" / "tcell_synthetic.csv"
    write_csv(make(), out)
    print(out)
