# %% [markdown]
# Average failover cost per packet
#
# A normal leg and a failure leg under the same configuration. The cost is
# the difference of the two mean transfer times. With defaults the only
# affected packet per flow waits one retransmission timeout, so the cost is
# rto / K.

# %%
from fractions import Fraction

from sdivn import MS, S, bundled_scenario, compare, load_topology

topo = load_topology(bundled_scenario("sdivn_diamond.json"))
cmp = compare(topo)
for row in cmp.rows:
    k = row["K"]
    print(f"{row['flow_id']:9s} ATTN={float(row['ATTN_p_ns']):9.1f} ns  AFCP={float(row['AFCP_p_ns']):8.3f} ns  "
          f"rto/K={float(Fraction(2 * MS, k)):8.3f} ns  share={float(row['AFCP_pct']):.4f}%")

# %% Longer runs dilute the same one-off cost
for seconds in (60, 120, 240):
    c = compare(topo, duration=seconds * S)
    print(seconds, "s:", float(c.row("obstacle")["AFCP_p_ns"]), "ns")
