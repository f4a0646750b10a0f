"""A 45% attacker grows its share of the voter set, then withholds votes.

Prints when the attacker crosses one third and confirms that nothing the
defenders propose commits afterwards while the old prefix stays intact.
"""

import sys

from peercensus.simnet.scripted import takeover_run

seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
for s in seeds:
    r = takeover_run(s)
    print(f"seed {s}: takeover at attacker share {r.attacker_share_at_takeover:.3f}, "
          f"prefix length {r.pre_takeover_length}")
    print(f"  defender commits after takeover: {r.defender_commits_after}")
    print(f"  withheld messages: {r.withheld_messages}")
    print(f"  honest prefixes byte-identical: {r.prefixes_identical}")
