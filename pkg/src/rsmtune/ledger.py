"""Campaign directory: state file, run ledger, command journal, lock.

Layout::

    campaign.json   full state, rewritten atomically on every command
    runs.csv        one row per completed run, in completion order
    journal.jsonl   one line per state-changing command (append-only)
    .lock           advisory lock held while a command runs

Write order is journal, runs.csv, campaign.json. ``campaign.json`` records
how many journal lines it reflects (``revision``), so a process killed
between writes leaves a directory that :meth:`CampaignDir.load` repairs by
trimming the journal and re-deriving runs.csv from the state.
"""

from __future__ import annotations

import contextlib
import csv
import fcntl
import io
import json
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from . import campaign as cp
from .config import CampaignConfig, config_from_dict
from .errors import CampaignError

STATE_FILE = "campaign.json"
RUNS_FILE = "runs.csv"
JOURNAL_FILE = "journal.jsonl"
LOCK_FILE = ".lock"
FIXED_COLUMNS = ["run_id", "phase", "role", "replicate"]


def dumps_state(state: cp.CampaignState) -> str:
    return json.dumps(cp.state_to_dict(state), sort_keys=True, indent=2) + "\n"


def atomic_write(path: Path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def runs_header(names: Iterable[str]) -> list[str]:
    names = list(names)
    return FIXED_COLUMNS + names + [f"{n}_coded" for n in names] + ["loss", "timestamp"]


def import_header(names: Iterable[str]) -> list[str]:
    return FIXED_COLUMNS + list(names) + ["loss"]


def run_row(rec: cp.RunRecord, names, timestamp: str = "") -> list[str]:
    return ([str(rec.run_id), rec.phase, rec.role, str(rec.replicate)]
            + [format_value(rec.decoded[n]) for n in names]
            + [f"{rec.coded[n]:.6f}" for n in names]
            + ["" if rec.loss is None else repr(rec.loss), timestamp])


def render_runs_csv(state: cp.CampaignState, timestamps: dict[int, str] | None = None) -> str:
    names = state.config.names
    timestamps = timestamps or {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(runs_header(names))
    for rec in state.completed():
        w.writerow(run_row(rec, names, timestamps.get(rec.run_id, "")))
    return buf.getvalue()


def render_design_csv(state: cp.CampaignState) -> str:
    """Pending runs of the current phase in import format with empty losses."""
    names = state.config.names
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(import_header(names))
    for rec in state.pending:
        w.writerow([str(rec.run_id), rec.phase, rec.role, str(rec.replicate)]
                   + [format_value(rec.decoded[n]) for n in names] + [""])
    return buf.getvalue()


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def parse_import(state: cp.CampaignState, path) -> list[tuple[int, float]]:
    """Losses from an import CSV, checked against the runs they claim to be."""
    names = state.config.names
    header, rows = read_csv(path)
    expected = import_header(names)
    if header != expected:
        raise CampaignError(f"import header mismatch: expected {','.join(expected)}, got {','.join(header)}")
    out = []
    for line, row in enumerate(rows, start=2):
        if not row["loss"].strip():
            continue
        try:
            rid = int(row["run_id"])
            loss = float(row["loss"])
        except ValueError:
            raise CampaignError(f"{path}:{line}: run_id/loss not numeric") from None
        rec = state.run(rid)
        if row["phase"] != rec.phase or row["role"] != rec.role:
            raise CampaignError(f"{path}:{line}: run {rid} is {rec.phase}/{rec.role}, "
                                f"file says {row['phase']}/{row['role']}")
        for n in names:
            try:
                got = float(row[n])
            except ValueError:
                raise CampaignError(f"{path}:{line}: column {n} not numeric") from None
            want = float(rec.decoded[n])
            if abs(got - want) > 1e-9 * max(1.0, abs(want)):
                raise CampaignError(f"{path}:{line}: run {rid} has {n}={want}, file says {row[n]}")
        out.append((rid, loss))
    return out


class CampaignDir:
    def __init__(self, path):
        self.path = Path(path)

    @property
    def state_path(self) -> Path:
        return self.path / STATE_FILE

    @property
    def runs_path(self) -> Path:
        return self.path / RUNS_FILE

    @property
    def journal_path(self) -> Path:
        return self.path / JOURNAL_FILE

    def exists(self) -> bool:
        return self.state_path.exists()

    @contextlib.contextmanager
    def lock(self):
        self.path.mkdir(parents=True, exist_ok=True)
        fh = open(self.path / LOCK_FILE, "a+")
        try:
            try:
                fcntl.flock(fh.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
            except BlockingIOError:
                raise CampaignError(f"campaign directory {self.path} is locked by another process") from None
            yield self
        finally:
            fh.close()

    # -- reading -----------------------------------------------------------
    def journal(self) -> list[dict]:
        if not self.journal_path.exists():
            return []
        with open(self.journal_path, encoding="utf-8") as fh:
            return [json.loads(ln) for ln in fh if ln.strip()]

    def timestamps(self) -> dict[int, str]:
        if not self.runs_path.exists():
            return {}
        _, rows = read_csv(self.runs_path)
        return {int(r["run_id"]): r.get("timestamp", "") for r in rows}

    def load(self) -> cp.CampaignState:
        if not self.exists():
            raise CampaignError(f"no campaign in {self.path} (run init first)")
        try:
            state = cp.state_from_dict(json.loads(self.state_path.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CampaignError(f"corrupt {self.state_path}: {exc}") from None
        self._repair(state)
        return state

    def _repair(self, state: cp.CampaignState):
        entries = self.journal()
        if len(entries) > state.revision:
            self._write_journal(entries[:state.revision])
        stamps = self.timestamps()
        expected = render_runs_csv(state, stamps)
        current = self.runs_path.read_text(encoding="utf-8") if self.runs_path.exists() else ""
        if current != expected:
            atomic_write(self.runs_path, expected)

    def _write_journal(self, entries):
        atomic_write(self.journal_path, "".join(json.dumps(e, sort_keys=True) + "\n" for e in entries))

    # -- writing -----------------------------------------------------------
    def create(self, config: CampaignConfig) -> cp.CampaignState:
        if self.exists():
            raise CampaignError(f"{self.path} already holds a campaign")
        self.path.mkdir(parents=True, exist_ok=True)
        state = cp.init(config)
        self.journal_path.unlink(missing_ok=True)
        return self.commit(state, [{"op": "init", "config": config.to_dict()}])

    def commit(self, state: cp.CampaignState, entries: list[dict]) -> cp.CampaignState:
        """Persist ``state`` as the result of the journal ``entries``."""
        state.revision += len(entries)
        existing = self.journal()[: state.revision - len(entries)]
        self._write_journal(existing + entries)
        stamps = self.timestamps()
        now = datetime.now(timezone.utc).isoformat(timespec="seconds")
        for rid in state.ledger:
            stamps.setdefault(rid, now)
        atomic_write(self.runs_path, render_runs_csv(state, stamps))
        atomic_write(self.state_path, dumps_state(state))
        return state


def journal_entry(op: str, args: dict) -> dict:
    if op == "step":
        return {"op": "step", "run_ids": [rid for rid, _ in args["results"]]}
    return {"op": op, **{k: v for k, v in args.items()}}


def replay(path) -> cp.CampaignState:
    """Rebuild the state from the journal and the losses in runs.csv."""
    d = CampaignDir(path)
    entries = d.journal()
    if not entries or entries[0].get("op") != "init":
        raise CampaignError("journal does not start with init")
    _, rows = read_csv(d.runs_path)
    losses = {int(r["run_id"]): float(r["loss"]) for r in rows}
    state = cp.init(config_from_dict(entries[0]["config"]))
    state.revision = 1
    for e in entries[1:]:
        op = e["op"]
        if op == "step":
            try:
                args = {"results": [(rid, losses[rid]) for rid in e["run_ids"]]}
            except KeyError as exc:
                raise CampaignError(f"runs.csv lacks a loss for run {exc.args[0]}") from None
        else:
            args = {k: v for k, v in e.items() if k != "op"}
        state = cp.apply_command(state, op, args)
        state.revision += 1
    return state
