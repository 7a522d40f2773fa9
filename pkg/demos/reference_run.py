"""Run the analytical model on the default scenario and summarise the result.

    python3 demos/reference_run.py [OUT_DIR]
"""
import sys

import numpy as np

from platoon_edca.config import ScenarioConfig
from platoon_edca.pipeline import emit_outputs, run_analysis

cfg = ScenarioConfig()
series = run_analysis(cfg)
t, n = series["t"], series["n_tr"]

print(f"{len(series)} steps of {cfg.dt} s, target V{cfg.target}")
print(f"neighbours in range: start {n[0]:.0f}, peak {n.max():.0f} "
      f"(first reached at {t[np.argmax(n)]:.2f} s), end {n[-1]:.0f}")
for q in (0, 1):
    pd, pdr = series[f"pd{q}"], series[f"pdr{q}"]
    print(f"AC{q}: delay {pd.min() * 1e6:.1f}..{pd.max() * 1e6:.1f} us, "
          f"delivery ratio {np.nanmin(pdr):.3f}..{np.nanmax(pdr):.3f}")

if len(sys.argv) > 1:
    for p in emit_outputs(series, sys.argv[1], cfg):
        print("wrote", p)
