# %% [markdown]
# Picking the two paths
#
# Taking the shortest path and then searching what is left can strand the
# second path. The residual-graph method finds the best pair even then.

# %%
from sdivn.controller import disjoint_pair
from sdivn.switch import Bucket, GroupEntry, Output, resolve_group

edges = [("sa", "s", "a", 1), ("ab", "a", "b", 1), ("bt", "b", "t", 1),
         ("sb", "s", "b", 2), ("at", "a", "t", 2)]
print("pair:", disjoint_pair(edges, "s", "t"))

# %% A fast-failover group in isolation
group = GroupEntry(1, (Bucket("p1", (Output("p1"),)), Bucket("p2", (Output("p2"),))))
for live in ({"p1", "p2"}, {"p2"}, set()):
    print(sorted(live), "->", resolve_group(group, lambda p: p in live))
