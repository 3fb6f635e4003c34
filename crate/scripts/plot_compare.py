#!/usr/bin/env python3
"""Plot the output of `laneshare compare`.

    python3 scripts/plot_compare.py out/compare-vanness

Writes PNGs next to the CSVs. Needs matplotlib.
"""

import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def series(d):
    by = defaultdict(lambda: defaultdict(list))
    for r in rows(d / "series.csv"):
        s = by[r["policy"]]
        s["t"].append(int(r["t"]))
        for k in ("bus_delay_s", "cum_cav_s", "cum_hv_s"):
            s[k].append(float(r[k]))
    for col, label, name in [
        ("bus_delay_s", "accumulated bus delay (s)", "bus_delay.png"),
        ("cum_cav_s", "cumulative CAV travel time (veh-s)", "cum_cav.png"),
        ("cum_hv_s", "cumulative HV travel time (veh-s)", "cum_hv.png"),
    ]:
        fig, ax = plt.subplots(figsize=(6, 4))
        for policy, s in by.items():
            ax.plot(s["t"], s[col], label=policy)
        ax.set_xlabel("time (s)")
        ax.set_ylabel(label)
        ax.legend()
        fig.tight_layout()
        fig.savefig(d / name, dpi=120)
        plt.close(fig)


def on_time(d):
    table = rows(d / "on_time.csv")
    stations = [k for k in table[0] if k.startswith("station_")]
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / len(table)
    for i, r in enumerate(table):
        xs = [j + i * width for j in range(len(stations))]
        ax.bar(xs, [float(r[s] or 0) for s in stations], width, label=r["policy"])
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(stations))])
    ax.set_xticklabels([s.replace("_", " ") for s in stations])
    ax.set_ylabel("on-time arrivals (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(d / "on_time.png", dpi=120)
    plt.close(fig)


def p90(d):
    table = rows(d / "summary.csv")
    classes = ["bus", "cav", "hv"]
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / len(table)
    for i, r in enumerate(table):
        xs = [j + i * width for j in range(len(classes))]
        ax.bar(xs, [float(r[f"p90_{c}_s"] or 0) for c in classes], width, label=r["policy"])
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(classes))])
    ax.set_xticklabels(classes)
    ax.set_ylabel("90th percentile travel time (s)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(d / "p90.png", dpi=120)
    plt.close(fig)


def sweep(d):
    path = d / "penetration.csv"
    if not path.exists():
        return
    by = defaultdict(lambda: ([], []))
    for r in rows(path):
        if r["mean_trip_delay_s"]:
            xs, ys = by[(r["policy"], r["class"])]
            xs.append(float(r["penetration"]) * 100)
            ys.append(float(r["mean_trip_delay_s"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for (policy, cls), (xs, ys) in sorted(by.items()):
        ax.plot(xs, ys, marker="o", label=f"{policy} {cls}")
    ax.set_xlabel("CAV penetration (%)")
    ax.set_ylabel("mean trip delay (s)")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(d / "penetration.png", dpi=120)
    plt.close(fig)


def main():
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    d = Path(sys.argv[1])
    series(d)
    on_time(d)
    p90(d)
    sweep(d)


if __name__ == "__main__":
    main()
