"""Submit two conflicting transfers of the same balance at different peers
and watch exactly one of them take effect everywhere."""

from peercensus.simnet.scripted import double_spend_run

for s in range(5):
    r = double_spend_run(s)
    print(f"seed {s}: committed {r.committed} of the pair, ledgers agree: {r.ledgers_agree}, "
          f"conserved over {r.blocks_rewarded} rewarded blocks: {r.conserved}")
