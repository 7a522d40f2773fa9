"""Model against simulation on a shortened run (a few seconds per seed).

    python3 demos/short_validation.py [SECONDS] [SEEDS]
"""
import sys

from platoon_edca.config import ScenarioConfig
from platoon_edca.pipeline import run_validation

duration = float(sys.argv[1]) if len(sys.argv) > 1 else 5.0
seeds = int(sys.argv[2]) if len(sys.argv) > 2 else 3
report = run_validation(ScenarioConfig(), range(seeds), duration=duration, workers=1)
print(f"{seeds} seeds, {duration:g} s, window {report.window:g} s")
print(report.table())
