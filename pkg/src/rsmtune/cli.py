"""Command line interface.

Exit codes: 0 success, 1 domain error (state untouched), 2 usage error.
Every state-changing command loads the campaign directory under its lock,
applies one or more transitions, and commits atomically.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import campaign as cp
from . import report
from .config import load_config
from .doe import Design, DesignPoint, d_criterion
from .errors import CampaignError, EvaluationError, RsmError
from .ledger import CampaignDir, journal_entry, parse_import, read_csv, render_design_csv

log = logging.getLogger("rsmtune")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _half_width(text: str) -> tuple[str, float]:
    name, sep, val = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    try:
        return name, float(val)
    except ValueError:
        raise argparse.ArgumentTypeError(f"half-width for {name} is not a number: {val!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rsmtune", description="Response-surface hyperparameter tuning campaigns.")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("-C", "--dir", default=os.environ.get("RSMTUNE_DIR", "."),
                   help="campaign directory (default: current directory or $RSMTUNE_DIR)")
    # accepted after the subcommand too; SUPPRESS keeps it from clobbering the global value
    common = _Parser(add_help=False)
    common.add_argument("-C", "--dir", default=argparse.SUPPRESS, help="campaign directory")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("init", help="create a campaign from a config file")
    s.add_argument("paths", nargs="+", metavar="[CONFIG] DIR",
                   help="config file (or $RSMTUNE_CONFIG) and campaign directory")

    sub.add_parser("status", parents=[common], help="show phase and queue")

    s = sub.add_parser("run", parents=[common], help="evaluate pending runs with the configured objective")
    s.add_argument("--jobs", type=int, default=None, help="parallel evaluations (or $RSMTUNE_JOBS)")
    s.add_argument("--autopilot", action="store_true", help="advance through every phase with defaults")

    s = sub.add_parser("design", parents=[common], help="export pending runs for offline evaluation")
    s.add_argument("--out", help="write to this file instead of stdout")

    s = sub.add_parser("import", parents=[common], help="attach externally computed losses")
    s.add_argument("csv")

    s = sub.add_parser("fit", parents=[common], help="show the latest regression fit")
    s.add_argument("--phase", choices=["screening", "descent", "ccd"])

    s = sub.add_parser("drop", parents=[common], help="hold insignificant factors at mid level")
    s.add_argument("--p-threshold", type=float)
    s.add_argument("names", nargs="*")

    s = sub.add_parser("descend", parents=[common], help="queue the path of steepest descent")
    s.add_argument("--steps", type=int, help="use t = -1, -2, ..., -N")

    s = sub.add_parser("ccd", parents=[common], help="recenter on the best descent run and queue a CCD")
    s.add_argument("--half-width", type=_half_width, action="append", default=[], metavar="NAME=D")

    sub.add_parser("analyze", parents=[common], help="canonical analysis of the second-order fit")

    s = sub.add_parser("confirm", parents=[common], help="queue confirmation runs")
    s.add_argument("--replicates", type=int, required=True)
    s.add_argument("--use-best", action="store_true", help="confirm the historic best run instead")

    sub.add_parser("report", parents=[common], help="budget, best so far and confirmation summary")

    s = sub.add_parser("d-compare", help="compare two coded designs by det((X'X)^-1)")
    s.add_argument("design_a")
    s.add_argument("design_b")
    s.add_argument("--order", choices=["first", "second"], default="second")
    s.add_argument("--phase", help="only rows whose phase column equals this")
    return p


def _env_int(name: str):
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"${name} must be an integer, got {raw!r}") from None


def read_design(path, phase: str | None = None) -> tuple[Design, list[str]]:
    """Coded design from CSV: ``*_coded`` columns if present, else every numeric column."""
    header, rows = read_csv(path)
    if phase is not None:
        if "phase" not in header:
            raise CampaignError(f"{path}: no phase column to filter on")
        rows = [r for r in rows if r["phase"] == phase]
    coded = [h for h in header if h.endswith("_coded")]
    if coded:
        names = [h[: -len("_coded")] for h in coded]
    else:
        skip = {"run_id", "phase", "role", "replicate", "loss", "timestamp"}
        coded = names = [h for h in header if h not in skip]
    if not rows or not coded:
        raise CampaignError(f"{path}: no design rows")
    try:
        pts = [DesignPoint(tuple(float(r[c]) for c in coded), "corner") for r in rows]
    except ValueError as exc:
        raise CampaignError(f"{path}: non-numeric design entry ({exc})") from None
    return Design(pts), names


class _Session:
    """Loaded campaign plus the journal entries produced so far."""

    def __init__(self, store: CampaignDir):
        self.store = store
        self.state = store.load()
        self.entries: list[dict] = []

    def apply(self, op: str, args: dict):
        new = cp.apply_command(self.state, op, args)
        self.record(new, op, args)

    def record(self, new, op, args):
        if new is not self.state:
            self.entries.append(journal_entry(op, args))
            self.state = new

    def commit(self):
        if self.entries:
            self.store.commit(self.state, self.entries)
            self.entries = []


def _status(state: cp.CampaignState) -> str:
    lines = [f"phase: {state.phase}",
             f"active factors: {', '.join(f.name for f in state.active)}"]
    if state.dropped:
        lines.append("dropped: " + ", ".join(f"{n} (held {state.held[n]})" for n in state.dropped))
    pend = [r for r in state.pending]
    lines.append(f"completed runs: {len(state.ledger)}; pending: {len(pend)}")
    if state.analysis_error:
        lines.append(f"analysis error: {state.analysis_error}")
    if state.awaiting:
        nxt = {"Screening": "drop / descend", "Descent": "ccd", "Ccd": "analyze / confirm"}
        lines.append(f"awaiting operator: {nxt.get(state.phase, '')}")
    return "\n".join(lines) + "\n"


def _cmd_run(sess: _Session, args, out):
    jobs = args.jobs if args.jobs is not None else _env_int("RSMTUNE_JOBS")
    jobs = jobs if jobs is not None else sess.state.config.jobs
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if args.autopilot:
        try:
            cp.autopilot(sess.state, jobs, on_command=lambda new, op, a: sess.record(new, op, a))
        except cp.CampaignPaused as exc:
            _log_failures(sess, exc.failures)
        finally:
            sess.commit()
        out.write(report.render_report(sess.state, cp.budget(sess.state)))
        return
    results, failures = cp.evaluate_pending(sess.state, jobs)
    if results:
        sess.apply("step", {"results": results})
    sess.commit()
    out.write(f"evaluated {len(results)} runs; pending {len(sess.state.pending)}\n")
    if failures:
        _log_failures(sess, failures)


def _log_failures(sess: _Session, failures):
    log_path = sess.store.path / "failures.log"
    with open(log_path, "a", encoding="utf-8") as fh:
        for rid, exc in failures:
            fh.write(f"run {rid}: {exc}\n{getattr(exc, 'diagnostics', '')}\n")
    rid, exc = failures[0]
    raise EvaluationError(f"{len(failures)} evaluation(s) failed (first: {exc}); see {log_path}")


def _latest_fit(state, which):
    fits = {"screening": state.screening_fit, "descent": state.descent_fit, "ccd": state.ccd_fit}
    if which:
        return fits[which]
    return state.ccd_fit or state.descent_fit or state.screening_fit


def dispatch(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        err.write(f"{exc}\n")
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args, out) or 0
    except UsageError as exc:
        err.write(f"rsmtune: {exc}\n")
        return 2
    except RsmError as exc:
        err.write(f"error: {exc}\n")
        return 1


def _dispatch(args, out):
    cmd = args.command
    if cmd == "init":
        paths = args.paths
        if len(paths) == 1:
            cfg = os.environ.get("RSMTUNE_CONFIG")
            if not cfg:
                raise UsageError("init needs CONFIG DIR (or $RSMTUNE_CONFIG and DIR)")
            paths = [cfg, paths[0]]
        if len(paths) != 2:
            raise UsageError("init takes CONFIG DIR")
        config = load_config(paths[0])
        store = CampaignDir(paths[1])
        with store.lock():
            state = store.create(config)
        out.write(f"initialized {store.path}: {len(state.pending)} pending screening runs\n")
        return 0

    if cmd == "d-compare":
        da, names_a = read_design(args.design_a, args.phase)
        db, names_b = read_design(args.design_b, args.phase)
        a = d_criterion(da, args.order, names_a)
        b = d_criterion(db, args.order, names_b)
        winner = "A" if a < b else "B" if b < a else "tie"
        out.write(report._table(["Design", "Runs", "D"],
                                [["A", len(da), f"{a:.6e}"], ["B", len(db), f"{b:.6e}"]]))
        out.write(f"smaller D: {winner}\n")
        return 0

    store = CampaignDir(args.dir)
    with store.lock():
        sess = _Session(store)
        st = sess.state
        if cmd == "status":
            out.write(_status(st))
        elif cmd == "run":
            _cmd_run(sess, args, out)
        elif cmd == "design":
            text = render_design_csv(st)
            if args.out:
                Path(args.out).write_text(text, encoding="utf-8")
                out.write(f"wrote {len(st.pending)} pending runs to {args.out}\n")
            else:
                out.write(text)
        elif cmd == "import":
            results = parse_import(st, args.csv)
            sess.apply("step", {"results": results})
            sess.commit()
            out.write(f"imported {len(results)} results; pending {len(sess.state.pending)}\n")
        elif cmd == "fit":
            fit = _latest_fit(st, args.phase)
            if fit is None:
                raise CampaignError(st.analysis_error or "no fit available yet")
            out.write(report.render_fit(fit))
        elif cmd == "drop":
            if args.p_threshold is not None and args.names:
                raise UsageError("give either --p-threshold or factor names, not both")
            if args.names:
                names = list(args.names)
            else:
                thr = args.p_threshold if args.p_threshold is not None else st.config.phases.drop_p_threshold
                if st.screening_fit is None or not st.awaiting or st.phase != "Screening":
                    raise CampaignError("drop needs a completed screening phase")
                names = cp._p_value_drops(st.screening_fit, thr, [f.name for f in st.active])
            sess.apply("drop", {"names": names})
            sess.commit()
            out.write("dropped: " + (", ".join(sess.state.dropped) or "none") + "\n")
        elif cmd == "descend":
            sched = None
            if args.steps is not None:
                if args.steps < 1:
                    raise UsageError("--steps must be >= 1")
                sched = [-float(i) for i in range(1, args.steps + 1)]
            sched = sched or st.config.phases.schedule()
            sess.apply("descend", {"t_schedule": sched})
            sess.commit()
            out.write(report.render_descent(sess.state))
        elif cmd == "ccd":
            sess.apply("ccd", {"half_widths": dict(args.half_width)})
            sess.commit()
            s2 = sess.state
            rows = [[f.name, f"{f.low:g}", f"{f.high:g}", f"{f.m:g}"] for f in s2.ccd_factors]
            out.write(report._table(["Factor", "Low", "High", "Center"], rows))
            out.write(f"queued {len(s2.pending)} CCD runs\n")
        elif cmd == "analyze":
            sess.apply("analyze", {})
            sess.commit()
            out.write(report.render_stationary(sess.state))
        elif cmd == "confirm":
            if args.replicates < 0:
                raise UsageError("--replicates must be >= 0")
            if st.stationary is None:
                sess.apply("analyze", {})
            sess.apply("confirm", {"replicates": args.replicates, "use_best": args.use_best})
            sess.commit()
            out.write(f"queued {args.replicates} confirmation runs; phase {sess.state.phase}\n")
        elif cmd == "report":
            out.write(report.render_report(st, cp.budget(st)))
    return 0


def main(argv=None):
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
