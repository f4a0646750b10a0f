"""Per-tick traces and the run summary."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import TextIO

CSV_COLUMNS = ("tick", "phi_R", "phi_I", "phi_B", "secure", "chain_length", "committed_ops")


def ratio(a: int, d: int) -> float:
    if d == 0:
        return math.inf if a else 0.0
    return a / d


def is_secure(attacker_voters: int, online_voters: int) -> bool:
    """|I_A| / |I| < 1/3, written without division."""
    return 3 * attacker_voters < online_voters


def is_secure_phi(attacker_voters: int, defender_voters: int) -> bool:
    """phi_I = |I_A| / |I_D| < 1/2, written without division."""
    return 2 * attacker_voters < defender_voters


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return repr(round(x, 12))


@dataclass
class Metrics:
    ticks: list[int] = field(default_factory=list)
    phi_R: list[float] = field(default_factory=list)
    phi_I: list[float] = field(default_factory=list)
    phi_B: list[float] = field(default_factory=list)
    secure: list[bool] = field(default_factory=list)
    chain_length: list[int] = field(default_factory=list)
    committed_ops: list[int] = field(default_factory=list)
    commit_latencies: list[int] = field(default_factory=list)
    view_changes: int = 0
    blocks_attacker: int = 0
    blocks_defender: int = 0
    info: dict = field(default_factory=dict)

    def record(self, tick, phi_R, phi_I, phi_B, secure, chain_length, committed_ops):
        self.ticks.append(tick)
        self.phi_R.append(phi_R)
        self.phi_I.append(phi_I)
        self.phi_B.append(phi_B)
        self.secure.append(bool(secure))
        self.chain_length.append(chain_length)
        self.committed_ops.append(committed_ops)

    def rows(self):
        return zip(self.ticks, self.phi_R, self.phi_I, self.phi_B, self.secure, self.chain_length, self.committed_ops)

    def write_csv(self, fp: TextIO) -> None:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for t, r, i, b, s, c, o in self.rows():
            w.writerow([t, _fmt(r), _fmt(i), _fmt(b), int(s), c, o])

    def csv_text(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def summary(self) -> dict:
        n = len(self.ticks)
        insecure = n - sum(self.secure)
        lat = self.commit_latencies
        return {
            **self.info,
            "samples": n,
            "insecure_samples": insecure,
            "ever_insecure": insecure > 0,
            "secure_fraction": (sum(self.secure) / n) if n else 1.0,
            "max_phi_I": _num(max(self.phi_I, default=0.0)),
            "max_phi_R": _num(max(self.phi_R, default=0.0)),
            "final_phi_B": _num(self.phi_B[-1]) if n else 0.0,
            "final_chain_length": self.chain_length[-1] if n else 0,
            "final_committed_ops": self.committed_ops[-1] if n else 0,
            "blocks_attacker": self.blocks_attacker,
            "blocks_defender": self.blocks_defender,
            "view_changes": self.view_changes,
            "mean_commit_latency": (sum(lat) / len(lat)) if lat else None,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2) + "\n"


def _num(x: float):
    return "inf" if math.isinf(x) else round(x, 12)


def read_csv(fp: TextIO) -> Metrics:
    m = Metrics()
    r = csv.DictReader(fp)
    for row in r:
        m.record(int(row["tick"]), float(row["phi_R"]), float(row["phi_I"]), float(row["phi_B"]),
                 row["secure"] == "1", int(row["chain_length"]), int(row["committed_ops"]))
    return m
