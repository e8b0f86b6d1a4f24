# layout: single
# provenance: seed snippet, annotated heatmap with colorbar
import matplotlib.pyplot as plt
import numpy as np

rows = ["Mon", "Tue", "Wed", "Thu", "Fri"]
cols = ["8h", "10h", "12h", "14h", "16h", "18h"]
rng = np.random.default_rng(7)
data = rng.integers(5, 60, size=(len(rows), len(cols)))

fig, ax = plt.subplots(figsize=(6, 4))
im = ax.imshow(data, cmap="viridis")
ax.set_xticks(range(len(cols)))
ax.set_xticklabels(cols)
ax.set_yticks(range(len(rows)))
ax.set_yticklabels(rows)
for i in range(len(rows)):
    for j in range(len(cols)):
        ax.text(j, i, int(data[i, j]), ha="center", va="center", color="w", fontsize=8)
fig.colorbar(im, ax=ax, label="Visitors")
ax.set_title("Foot traffic by hour")
fig.tight_layout()
fig.savefig("chart.png", dpi=100)
