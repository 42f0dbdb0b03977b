"""Score the ego candidate grid on the built-in highway scenarios.

    python3 demos/risk_walkthrough.py [out_dir]

Prints the horizon-end risk of each (a_x, target lane) candidate and writes
one risk-map CSV per scenario.
"""
import sys
from pathlib import Path

from predrisk.scenarios import SCENARIOS, assess


def table(result):
    rm = result.risk_map
    end = rm.at_horizon_end()
    head = "a_x".rjust(6) + "".join(f"  y={y:<5g}" for y in rm.targets)
    rows = [head]
    for i, a in enumerate(rm.a_x):
        if i % 2 == 0:  # every 1 m/s^2 keeps the table short
            rows.append(f"{a:6.1f}" + "".join(f"  {end[i, j]:7.3f}" for j in range(len(rm.targets))))
    return "\n".join(rows)


def main(out_dir="demo_out"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, make in SCENARIOS.items():
        result = assess(make(), "cv")
        print(f"\n== {name}: horizon-end risk, constant-velocity predictions ==")
        print(table(result))
        ttc = result.risk_map.header()["ttc"]
        if ttc:
            print("TTC per OV for the lane-keeping, a_x = 0 candidate:",
                  {k: v[len(result.risk_map.a_x) // 2][0] for k, v in ttc.items()})
        (out / f"{name}_risk_map.csv").write_text(result.risk_map.to_csv())
    print(f"\nrisk maps written under {out}/")


if __name__ == "__main__":
    main(*sys.argv[1:])
