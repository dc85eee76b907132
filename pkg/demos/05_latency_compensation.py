"""Latency compensation under a 200 ms round trip: predicted versus actual.

Runs the straight-line scenario through the delay-injecting channel and
plots the predicted x position against the true robot x at the prediction
target times, with the prediction error underneath.
"""

import pathlib

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from telehaptic.netstream import Fixed
from telehaptic.orchestrator import run_scenario, straight_line_config

OUT = pathlib.Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

config = straight_line_config(Fixed(100.0), seed=9, speed=0.2)  # 200 ms RTT
result = run_scenario(config, OUT / "latency_run")
print(f"straight run completed={result.completed} in {result.te_s:.1f} s; "
      f"mean |x error| {result.prediction_mean_x_err * 100:.2f} cm, "
      f"max {result.prediction_max_x_err * 100:.2f} cm")

rows = np.genfromtxt(OUT / "latency_run" / "prediction_trace.csv",
                     delimiter=",", names=True)
t = rows["t_ms"] / 1000.0
fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True,
                               height_ratios=[3, 1])
ax1.plot(t, rows["actual_x"], label="actual x", color="#5bc0de")
ax1.plot(t, rows["predicted_x"], "--", label="predicted x", color="#d9534f")
ax1.set_ylabel("x (m)")
ax1.legend()
ax1.set_title("robot position versus prediction, 200 ms round trip")
err = np.abs(rows["predicted_x"] - rows["actual_x"]) * 100
ax2.plot(t, err, color="#777")
ax2.axhline(7.0, color="#d9534f", linewidth=1, linestyle=":")
ax2.set_ylabel("|error| (cm)")
ax2.set_xlabel("time (s)")
fig.tight_layout()
fig.savefig(OUT / "05_latency.png", dpi=110)
print(f"figure: {OUT / '05_latency.png'}")
