//! Emits a standalone plotting script next to the sweep outputs instead of
//! rendering figures in-process.

/// Two-panel figure: Bethe free energy vs q on top, the four error curves
/// with one-standard-error shading below.
pub fn sweep_plot_script(csv_name: &str) -> String {
    format!(
        r#"#!/usr/bin/env python3
"""Plot the q-sweep table produced alongside this script."""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

path = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent / "{csv_name}"
rows = list(csv.DictReader(open(path)))
q = [int(r["q"]) for r in rows]

fig, (ax_fe, ax_err) = plt.subplots(2, 1, figsize=(6, 8), sharex=True)

ax_fe.plot(q, [float(r["f_bethe"]) for r in rows], "o-", color="black")
ax_fe.set_ylabel("Bethe free energy")

curves = [
    ("e_bayes", "se_bayes", "Bayes", "tab:blue"),
    ("e_gibbs", "se_gibbs", "Gibbs", "tab:orange"),
    ("e_map", "se_map", "MAP", "tab:green"),
    ("e_training", "se_training", "training", "tab:red"),
]
for key, se_key, label, color in curves:
    y = [float(r[key]) for r in rows]
    se = [float(r[se_key]) for r in rows]
    ax_err.plot(q, y, "o-", label=label, color=color)
    ax_err.fill_between(
        q,
        [v - s for v, s in zip(y, se)],
        [v + s for v, s in zip(y, se)],
        color=color,
        alpha=0.2,
    )
ax_err.set_xlabel("number of clusters q")
ax_err.set_ylabel("prediction error per edge")
ax_err.legend()

fig.tight_layout()
out = path.with_suffix(".png")
fig.savefig(out, dpi=150)
print(f"wrote {{out}}")
"#
    )
}
