"""Drive the experiment runner programmatically and inspect its artifacts.

Equivalent to `stochwave run <config> --paths 10 --out <dir>`; every run
leaves manifest.json (config echo, derived constants, versions, timing),
the experiment's CSVs, and config_echo.toml that re-parses to the same
configuration.
"""

import json
from pathlib import Path

from stochwave.cli import main

config = Path(__file__).resolve().parent.parent / "configs" / "energy_audit.toml"
out = Path("out/demo_cli")

code = main(["run", str(config), "--paths", "10", "--out", str(out)])
print("exit code:", code)

manifest = json.loads((out / "manifest.json").read_text())
print("experiment:", manifest["experiment"])
print("derived constants:", manifest["derived"])
print("summary:", manifest["summary"])
print("artifacts:", sorted(p.name for p in out.iterdir()))

head = (out / "energy.csv").read_text().splitlines()
print("\nenergy.csv head:")
for line in head[:4]:
    print(" ", line)
