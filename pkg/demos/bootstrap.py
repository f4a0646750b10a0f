"""Start the agreement layer from a 100-block chain: voters from the first
94 blocks, the 10 newest of them online, the last 6 re-committed in order."""

from peercensus.simnet.scripted import bootstrap_run

r = bootstrap_run(seed=0)
print(f"voters: {len(r.plan.voters)}, online: {len(r.plan.online)}")
first = len(r.plan.voters) + 1
print(f"re-committed blocks: {len(r.recommitted)} (heights {first}..{first + len(r.recommitted) - 1})")
print(f"re-commit order matches the chain: {r.recommitted == r.expected}")
print(f"final chain length: {r.final_chain_length}")
