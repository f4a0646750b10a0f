"""Chain agreement: the replicated (O, I, C) state and its ordering protocol."""

from .engine import (
    COMMIT,
    NEW_VIEW,
    PRE_PREPARE,
    PREPARE,
    PROPOSE,
    VIEW_CHANGE,
    AgreementEngine,
    PhaseMessage,
    sign_message,
)
from .records import dump_log, entry_from_record, entry_to_record, load_log
from .replica import CaMachine, CaReplica, Ping, SyncReply, SyncRequest
from .state import (
    CA_INSTANCE,
    CaOperation,
    Certificate,
    LogEntry,
    LogicalTimestamp,
    OpKind,
    SharedState,
    SyncError,
    Vote,
    apply_commit,
    apply_entry,
    block_op,
    current_primary,
    is_successor,
    join_op,
    leave_op,
    make_op,
    max_faulty,
    next_timestamp,
    now_after,
    quorum_size,
    sync_new_peer,
    ts_less,
    validate,
)
