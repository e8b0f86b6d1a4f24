# layout: multi
# provenance: seed snippet, 2x2 grid mixing line, bar, scatter and histogram panels
import matplotlib.pyplot as plt
import numpy as np

rng = np.random.default_rng(3)
fig, axes = plt.subplots(2, 2, figsize=(8, 6))

t = np.arange(12)
axes[0, 0].plot(t, 20 + 3 * np.sin(t / 2), marker="o")
axes[0, 0].set_title("(a) Monthly temperature")
axes[0, 0].set_xlabel("Month")

cats = ["A", "B", "C", "D"]
axes[0, 1].bar(cats, [5, 9, 3, 7], color="tab:orange")
axes[0, 1].set_title("(b) Category counts")

x = rng.normal(0, 1, 60)
axes[1, 0].scatter(x, 2 * x + rng.normal(0, 0.5, 60), s=12)
axes[1, 0].set_title("(c) Correlation")

axes[1, 1].hist(rng.normal(50, 10, 400), bins=20, color="tab:green")
axes[1, 1].set_title("(d) Score distribution")

fig.suptitle("Survey overview")
fig.tight_layout()
fig.savefig("chart.png", dpi=100)
