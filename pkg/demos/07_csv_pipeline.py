"""The CSV pipeline end to end, as the command line would run it.

Writes synthetic survey/record CSVs plus a JSON configuration, runs the full
pipeline into a report bundle, and shows what landed on disk. The same flow
is available from the shell:

    undercount simulate --scenario single --output-dir data --seed 11
    undercount pipeline --config data/config.json
"""

import tempfile
from pathlib import Path

from undercount.cli import main

workdir = Path(tempfile.mkdtemp(prefix="undercount-demo-"))
data = workdir / "data"

code = main([
    "simulate", "--scenario", "single", "--output-dir", str(data),
    "--seed", "11", "--n-survey", "1500", "--n-offenses", "8000",
])
assert code == 0
print(f"inputs written to {data}:")
for path in sorted(data.iterdir()):
    print(f"  {path.name:<14} {path.stat().st_size:>8} bytes")

code = main(["pipeline", "--config", str(data / "config.json")])
assert code == 0
reports = data / "reports"
print(f"\nreport bundle in {reports}:")
for path in sorted(reports.iterdir()):
    print(f"  {path.name:<24} {path.stat().st_size:>8} bytes")

print("\n" + (reports / "rates.txt").read_text())
print((reports / "diagnostics.txt").read_text())
