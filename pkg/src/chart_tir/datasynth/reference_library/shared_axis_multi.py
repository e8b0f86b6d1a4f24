# layout: multi
# provenance: seed snippet, row of panels sharing the y axis
import matplotlib.pyplot as plt
import numpy as np

epochs = np.arange(1, 21)
fig, axes = plt.subplots(1, 3, figsize=(10, 3.4), sharey=True)
for ax, (name, rate) in zip(axes, [("SGD", 0.08), ("Adam", 0.15), ("AdamW", 0.17)]):
    ax.plot(epochs, 2.3 * np.exp(-rate * epochs) + 0.2, label="train")
    ax.plot(epochs, 2.3 * np.exp(-rate * 0.8 * epochs) + 0.35, linestyle="--", label="val")
    ax.set_title(name)
    ax.set_xlabel("Epoch")
axes[0].set_ylabel("Loss")
axes[-1].legend(frameon=False)
fig.tight_layout()
fig.savefig("chart.png", dpi=100)
