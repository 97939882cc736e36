# %% [markdown]
# The CAN bus baseline
#
# Severing a single shared bus ends delivery for good. Adding redundant
# bridges in a loop makes it worse: frames circulate until the bus is full.

# %%
from sdivn import S, US, bundled_scenario, load_topology, run
from sdivn.livn import rolling_utilization

severed = run(load_topology(bundled_scenario("livn_bus.json")))
for f in severed.flows():
    rep = severed.integrity(f)
    print(f.flow_id, "delivered", severed.delivered(f.flow_id), "last at", rep.last_arrival / S, "s",
          "truncated" if rep.truncated else "")

# %% Loop of three segments
ring = run(load_topology(bundled_scenario("livn_ring.json")), duration=2 * S)
print("first duplicate after", ring.storm.first_duplicate_at / US, "us")
print("outage at", ring.storm.outage / S, "s")
seg = ring.segments["SEG_B"]
for t in (0.1, 0.25, 0.5, 0.75, 1.0):
    print(f"  utilization at {t:4.2f}s: {float(rolling_utilization(seg.busy, int(t * S))):.3f}")
