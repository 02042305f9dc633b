"""Human validation workflow: three independent reviewers per candidate
pair, two-of-three consensus retention, rejection reasons, and Fleiss's
kappa over the accept/reject table.
"""

from __future__ import annotations

import json
import random
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .errors import (AlreadySubmitted, DegenerateAgreement, IncompleteReviews,
                     InsufficientDecisions, MissingRejectReason,
                     NoSuchAssignment, RosterTooSmall)
from .qagen import QAPair, REJECTION_REASONS

RATERS_PER_ITEM = 3
VERDICTS = ("accept", "reject")
SNAPSHOT_EVERY = 50


@dataclass
class ReviewAssignment:
    qa_id: str
    reviewer_id: str
    state: str = "open"

    def __post_init__(self):
        if self.state not in ("open", "submitted"):
            raise ValueError(f"bad assignment state: {self.state!r}")


@dataclass(frozen=True)
class ReviewDecision:
    qa_id: str
    reviewer_id: str
    verdict: str
    reason: Optional[str] = None
    note: str = ""
    timestamp: float = 0.0

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"bad verdict: {self.verdict!r}")
        if self.verdict == "reject" and self.reason is None:
            raise MissingRejectReason(
                f"reject of {self.qa_id} by {self.reviewer_id} needs a reason")
        if self.reason is not None and self.reason not in REJECTION_REASONS:
            raise ValueError(f"bad rejection reason: {self.reason!r}")

    def to_json(self) -> dict:
        return {"qa_id": self.qa_id, "reviewer_id": self.reviewer_id,
                "verdict": self.verdict, "reason": self.reason,
                "note": self.note, "timestamp": self.timestamp}

    @classmethod
    def from_json(cls, row: dict) -> "ReviewDecision":
        return cls(qa_id=row["qa_id"], reviewer_id=row["reviewer_id"],
                   verdict=row["verdict"], reason=row.get("reason"),
                   note=row.get("note", ""), timestamp=row.get("timestamp", 0.0))


@dataclass
class AgreementReport:
    kappa: float
    n_items: int
    n_raters_per_item: int
    category_table: dict[str, int]

    def __post_init__(self):
        if not -1.0 - 1e-9 <= self.kappa <= 1.0 + 1e-9:
            raise ValueError(f"kappa out of range: {self.kappa}")


# -- assignment -------------------------------------------------------------

def assign(pairs: Sequence[QAPair], roster: Sequence[str],
           seed: int) -> list[ReviewAssignment]:
    """Three distinct reviewers per pending pair, greedily load-balanced
    (loads stay within +/-1 across the roster), seeded deterministic."""
    roster = list(dict.fromkeys(roster))
    if len(roster) < RATERS_PER_ITEM:
        raise RosterTooSmall(f"need at least {RATERS_PER_ITEM} reviewers, "
                             f"got {len(roster)}")
    rng = random.Random(seed)
    load = {reviewer: 0 for reviewer in roster}
    out: list[ReviewAssignment] = []
    for pair in sorted((p for p in pairs if p.review_state == "pending"),
                       key=lambda p: p.qa_id):
        tiebreak = {reviewer: rng.random() for reviewer in roster}
        chosen = sorted(roster, key=lambda r: (load[r], tiebreak[r]))[:RATERS_PER_ITEM]
        for reviewer in chosen:
            load[reviewer] += 1
            out.append(ReviewAssignment(qa_id=pair.qa_id, reviewer_id=reviewer))
    return out


# -- persistent store -------------------------------------------------------------

class ReviewStore:
    """Single-writer review state: assignments plus immutable decisions,
    persisted as an append-only event log with periodic snapshots so a
    restart replays only the tail."""

    def __init__(self, directory: str | Path, clock=time.time,
                 snapshot_every: int = SNAPSHOT_EVERY):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self.snapshot_every = snapshot_every
        self.assignments: dict[tuple[str, str], ReviewAssignment] = {}
        self.decisions: list[ReviewDecision] = []
        self.outcomes: dict[str, dict] = {}
        self._seq = 0
        self._replay()

    @property
    def log_path(self) -> Path:
        return self.directory / "log.jsonl"

    @property
    def snapshot_path(self) -> Path:
        return self.directory / "snapshot.json"

    # -- event log ---------------------------------------------------------

    def _append(self, event: str, payload: dict) -> None:
        self._seq += 1
        row = {"seq": self._seq, "event": event, "payload": payload}
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
        if self._seq % self.snapshot_every == 0:
            self.write_snapshot()

    def _apply(self, event: str, payload: dict) -> None:
        if event == "assign":
            assignment = ReviewAssignment(**payload)
            self.assignments[(assignment.qa_id, assignment.reviewer_id)] = assignment
        elif event == "decision":
            decision = ReviewDecision.from_json(payload)
            self.decisions.append(decision)
            key = (decision.qa_id, decision.reviewer_id)
            if key in self.assignments:
                self.assignments[key].state = "submitted"
        elif event == "outcome":
            self.outcomes[payload["qa_id"]] = payload

    def _replay(self) -> None:
        if self.snapshot_path.is_file():
            snap = json.loads(self.snapshot_path.read_text(encoding="utf-8"))
            self._seq = snap["seq"]
            for row in snap["assignments"]:
                assignment = ReviewAssignment(**row)
                self.assignments[(assignment.qa_id, assignment.reviewer_id)] = assignment
            self.decisions = [ReviewDecision.from_json(r) for r in snap["decisions"]]
            self.outcomes = {r["qa_id"]: r for r in snap["outcomes"]}
        snapshot_seq = self._seq
        if self.log_path.is_file():
            with open(self.log_path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    if row["seq"] <= snapshot_seq:
                        continue
                    self._apply(row["event"], row["payload"])
                    self._seq = row["seq"]

    def write_snapshot(self) -> None:
        snap = {
            "seq": self._seq,
            "assignments": [{"qa_id": a.qa_id, "reviewer_id": a.reviewer_id,
                             "state": a.state}
                            for a in sorted(self.assignments.values(),
                                            key=lambda a: (a.qa_id, a.reviewer_id))],
            "decisions": [d.to_json() for d in self.decisions],
            "outcomes": [self.outcomes[k] for k in sorted(self.outcomes)],
        }
        tmp = self.snapshot_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(snap, ensure_ascii=False, sort_keys=True),
                       encoding="utf-8")
        tmp.replace(self.snapshot_path)

    # -- operations -----------------------------------------------------------

    def record_assignments(self, assignments: Iterable[ReviewAssignment]) -> None:
        for assignment in assignments:
            key = (assignment.qa_id, assignment.reviewer_id)
            if key in self.assignments:
                continue
            self._apply("assign", {"qa_id": assignment.qa_id,
                                   "reviewer_id": assignment.reviewer_id,
                                   "state": assignment.state})
            self._append("assign", {"qa_id": assignment.qa_id,
                                    "reviewer_id": assignment.reviewer_id,
                                    "state": assignment.state})

    def submit(self, decision: ReviewDecision) -> ReviewDecision:
        key = (decision.qa_id, decision.reviewer_id)
        assignment = self.assignments.get(key)
        if assignment is None:
            raise NoSuchAssignment(
                f"no assignment of {decision.qa_id} to {decision.reviewer_id}")
        if assignment.state == "submitted":
            raise AlreadySubmitted(
                f"{decision.reviewer_id} already reviewed {decision.qa_id}")
        if decision.timestamp == 0.0:
            decision = ReviewDecision(qa_id=decision.qa_id,
                                      reviewer_id=decision.reviewer_id,
                                      verdict=decision.verdict,
                                      reason=decision.reason, note=decision.note,
                                      timestamp=float(self.clock()))
        self._apply("decision", decision.to_json())
        self._append("decision", decision.to_json())
        return decision

    def record_outcome(self, qa_id: str, review_state: str,
                       rejection_reason: Optional[str]) -> None:
        payload = {"qa_id": qa_id, "review_state": review_state,
                   "rejection_reason": rejection_reason}
        self._apply("outcome", payload)
        self._append("outcome", payload)

    # -- views ----------------------------------------------------------------

    def open_for(self, reviewer_id: str) -> list[ReviewAssignment]:
        return sorted((a for a in self.assignments.values()
                       if a.reviewer_id == reviewer_id and a.state == "open"),
                      key=lambda a: a.qa_id)

    def decisions_by_item(self) -> dict[str, list[ReviewDecision]]:
        grouped: dict[str, list[ReviewDecision]] = {}
        for decision in self.decisions:
            grouped.setdefault(decision.qa_id, []).append(decision)
        return grouped

    def progress(self) -> dict:
        states = Counter(a.state for a in self.assignments.values())
        return {"open": states.get("open", 0),
                "submitted": states.get("submitted", 0),
                "total": len(self.assignments)}


# -- consensus ------------------------------------------------------------------

def finalize(pairs: Sequence[QAPair],
             decisions_by_item: Mapping[str, Sequence[ReviewDecision]],
             partial: bool = False) -> list[QAPair]:
    """Consensus pass: a pending pair with all three decisions becomes
    accepted on >=2 accepts, otherwise rejected with the majority
    rejection reason (first submitted wins a tie). Idempotent; already
    finalized pairs are untouched. Items short of three decisions raise
    IncompleteReviews unless partial, which leaves them pending.
    """
    out = []
    for pair in pairs:
        if pair.review_state != "pending":
            out.append(pair)
            continue
        decisions = list(decisions_by_item.get(pair.qa_id, ()))
        if len(decisions) < RATERS_PER_ITEM:
            if not partial:
                raise IncompleteReviews(
                    f"{pair.qa_id} has {len(decisions)}/{RATERS_PER_ITEM} decisions")
            out.append(pair)
            continue
        decisions.sort(key=lambda d: d.timestamp)
        accepts = sum(d.verdict == "accept" for d in decisions)
        if accepts >= 2:
            pair.review_state = "accepted"
            pair.rejection_reason = None
        else:
            reasons = [d.reason for d in decisions if d.verdict == "reject"]
            pair.review_state = "rejected"
            pair.rejection_reason = Counter(reasons).most_common(1)[0][0]
        out.append(pair)
    return out


# -- agreement ---------------------------------------------------------------------

def fleiss_kappa(decisions_by_item: Mapping[str, Sequence]) -> AgreementReport:
    """Fleiss's kappa over the two-category accept/reject table, computed
    only over items carrying exactly three decisions."""
    rows = []
    table = Counter()
    for qa_id in sorted(decisions_by_item):
        decisions = decisions_by_item[qa_id]
        if len(decisions) != RATERS_PER_ITEM:
            continue
        verdicts = [d.verdict if isinstance(d, ReviewDecision) else str(d)
                    for d in decisions]
        counts = Counter(verdicts)
        if set(counts) - set(VERDICTS):
            raise ValueError(f"unknown verdicts for {qa_id}: {sorted(counts)}")
        rows.append(counts)
        table.update(counts)
    if not rows:
        raise InsufficientDecisions("no item has all three decisions")

    n = RATERS_PER_ITEM
    item_agreements = []
    for counts in rows:
        squares = sum(counts.get(v, 0) ** 2 for v in VERDICTS)
        item_agreements.append((squares - n) / (n * (n - 1)))
    p_bar = sum(item_agreements) / len(rows)
    total = len(rows) * n
    p_e = sum((table.get(v, 0) / total) ** 2 for v in VERDICTS)
    if p_e >= 1.0:
        if p_bar == 1.0:
            kappa = 1.0
        else:
            raise DegenerateAgreement(
                "expected agreement is 1 but observed agreement is not")
    else:
        kappa = (p_bar - p_e) / (1.0 - p_e)
    return AgreementReport(kappa=kappa, n_items=len(rows),
                           n_raters_per_item=n,
                           category_table={v: table.get(v, 0) for v in VERDICTS})
