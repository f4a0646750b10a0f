"""Line-delimited export/import of commit certificates (operation logs)."""

from __future__ import annotations

import json
from typing import Callable, Iterable, TextIO

from .state import CaOperation, Certificate, LogicalTimestamp, Vote


def _ts_to_record(ts):
    return [_ts_to_record(x) if isinstance(x, tuple) else x for x in ts]


def entry_to_record(entry: Certificate) -> dict:
    epoch = entry.epoch
    return {
        "phase": entry.phase,
        "instance": entry.instance,
        "epoch": _ts_to_record(epoch) if isinstance(epoch, tuple) else epoch,
        "view": entry.view,
        "ts": _ts_to_record(entry.ts),
        "op": entry.op.to_record(),
        "votes": [{"sender": v.sender.hex(), "signature": v.signature.hex()} for v in entry.votes],
    }


def _ca_ts(raw) -> tuple:
    return LogicalTimestamp(*raw)


def entry_from_record(rec: dict, op_decoder: Callable[[dict], object] = CaOperation.from_record,
                      ts_decoder: Callable = _ca_ts, epoch_decoder: Callable = int) -> Certificate:
    return Certificate(
        phase=rec["phase"],
        instance=rec["instance"],
        epoch=epoch_decoder(rec["epoch"]),
        view=int(rec["view"]),
        ts=ts_decoder(rec["ts"]),
        op=op_decoder(rec["op"]),
        votes=tuple(Vote(bytes.fromhex(v["sender"]), bytes.fromhex(v["signature"])) for v in rec["votes"]),
    )


def dump_log(entries: Iterable[Certificate], fp: TextIO) -> None:
    for e in entries:
        fp.write(json.dumps(entry_to_record(e), sort_keys=True) + "\n")


def load_log(lines: Iterable[str], **decoders) -> list[Certificate]:
    return [entry_from_record(json.loads(line), **decoders) for line in lines if line.strip()]
