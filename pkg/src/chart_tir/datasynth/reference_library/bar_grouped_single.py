# layout: single
# provenance: seed snippet, grouped bar chart with value labels
import matplotlib.pyplot as plt
import numpy as np

groups = ["Q1", "Q2", "Q3", "Q4"]
a = [23, 31, 28, 35]
b = [19, 25, 33, 30]
x = np.arange(len(groups))
w = 0.38

fig, ax = plt.subplots(figsize=(6, 4))
ra = ax.bar(x - w / 2, a, w, label="Product A")
rb = ax.bar(x + w / 2, b, w, label="Product B")
ax.bar_label(ra, padding=2)
ax.bar_label(rb, padding=2)
ax.set_xticks(x)
ax.set_xticklabels(groups)
ax.set_ylabel("Units sold (k)")
ax.set_title("Quarterly sales")
ax.legend(frameon=False)
fig.tight_layout()
fig.savefig("chart.png", dpi=100)
