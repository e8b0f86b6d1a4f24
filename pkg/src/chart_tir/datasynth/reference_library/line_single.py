# layout: single
# provenance: seed snippet, single line chart with legend and annotated maximum
import matplotlib.pyplot as plt

years = [2015, 2016, 2017, 2018, 2019, 2020, 2021, 2022]
north = [12.1, 13.4, 13.0, 14.8, 15.2, 13.9, 16.7, 17.3]
south = [10.4, 10.9, 11.8, 11.5, 12.9, 13.6, 13.1, 14.4]

fig, ax = plt.subplots(figsize=(6, 4))
ax.plot(years, north, marker="o", label="North")
ax.plot(years, south, marker="s", linestyle="--", label="South")
peak = max(range(len(north)), key=north.__getitem__)
ax.annotate(f"{north[peak]}", (years[peak], north[peak]), textcoords="offset points", xytext=(0, 6), ha="center")
ax.set_xlabel("Year")
ax.set_ylabel("Revenue (M$)")
ax.set_title("Regional revenue")
ax.legend()
ax.grid(alpha=0.3)
fig.tight_layout()
fig.savefig("chart.png", dpi=100)
