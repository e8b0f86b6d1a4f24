# layout: single
# provenance: seed snippet, pie chart with percentage labels
import matplotlib.pyplot as plt

labels = ["Solar", "Wind", "Hydro", "Gas", "Coal"]
shares = [18, 24, 12, 31, 15]

fig, ax = plt.subplots(figsize=(5, 5))
ax.pie(shares, labels=labels, autopct="%1.0f%%", startangle=90, counterclock=False)
ax.set_title("Electricity generation mix")
fig.tight_layout()
fig.savefig("chart.png", dpi=100)
