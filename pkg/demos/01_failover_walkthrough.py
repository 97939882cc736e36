# %% [markdown]
# Fast failover on the diamond
#
# Two ECU pairs talk across four switches. At t=30 s the ingress-side link
# of path1 goes down. The ingress switch notices locally and its group
# falls through to the path2 bucket; the controller tidies up afterwards.

# %%
from sdivn import S, US, bundled_scenario, load_topology, run
from sdivn.engine import fmt_time

topo = load_topology(bundled_scenario("sdivn_diamond.json"))
res = run(topo)
print("delivered:", {f.flow_id: res.delivered(f.flow_id) for f in topo.flows})

# %% Which packets left path1?
for r in res.records:
    if abs(r.t_send - 30 * S) <= 100_000_000:
        print(r.flow_id, r.seq, fmt_time(r.t_send), r.path_id, (r.t_recv - r.t_send) / US, "us",
              "retransmitted" if r.retransmitted else "")

# %% The one packet that paid for the failure
lost = next(r for r in res.records if r.retransmitted and r.flow_id == "obstacle")
d = lost.decomposition
print("t_pd", d.t_pd, "ed_d", d.ed_d, "f_d", d.f_d_total, "c_d", d.c_d_total, "rp_d", d.rp_d)
print("sum", d.total(), "== T_p", lost.t_recv - lost.t_send)

# %% Controller side of the story
for line in res.control_text().splitlines():
    if line.startswith("30."):
        print(line)
