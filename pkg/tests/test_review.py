"""Reviewer assignment, decision log persistence, consensus finalize,
and Fleiss kappa with frozen hand-computed oracles."""

import dataclasses
import itertools

import pytest

from charge.errors import (AlreadySubmitted, IncompleteReviews,
                           InsufficientDecisions, MissingRejectReason,
                           NoSuchAssignment, RosterTooSmall)
from charge.qagen import QACategory, QAPair
from charge.review import (AgreementReport, ReviewDecision, ReviewStore, assign,
                           finalize, fleiss_kappa)


def make_pair(n, state="pending", reason=None):
    return QAPair(qa_id=f"qa-{n:03d}", question=f"Question {n}?", answer="A.",
                  category=QACategory("single_point", "text_only"), hops=1,
                  gt_keypoints=[f"kp-{n}"], gt_sources=[("d1", "c1", "text")],
                  review_state=state, rejection_reason=reason)


def decisions_for(qa_id, verdicts, reasons=None, t0=1.0):
    reasons = reasons or [None] * len(verdicts)
    out = []
    for i, (verdict, reason) in enumerate(zip(verdicts, reasons)):
        if verdict == "reject" and reason is None:
            reason = "other"
        out.append(ReviewDecision(qa_id=qa_id, reviewer_id=f"r{i + 1}",
                                  verdict=verdict, reason=reason,
                                  timestamp=t0 + i))
    return out


# -- decisions ------------------------------------------------------------


def test_decision_validation():
    with pytest.raises(ValueError):
        ReviewDecision(qa_id="q", reviewer_id="r", verdict="maybe")
    with pytest.raises(MissingRejectReason):
        ReviewDecision(qa_id="q", reviewer_id="r", verdict="reject")
    with pytest.raises(ValueError):
        ReviewDecision(qa_id="q", reviewer_id="r", verdict="reject",
                       reason="too_long")
    ReviewDecision(qa_id="q", reviewer_id="r", verdict="reject", reason="ocr_error")


def test_decisions_are_immutable():
    decision = ReviewDecision(qa_id="q", reviewer_id="r", verdict="accept")
    with pytest.raises(dataclasses.FrozenInstanceError):
        decision.verdict = "reject"


# -- assignment ---------------------------------------------------------------


def test_assign_needs_three_reviewers():
    with pytest.raises(RosterTooSmall):
        assign([make_pair(1)], ["ann", "bob"], seed=0)
    with pytest.raises(RosterTooSmall):
        assign([make_pair(1)], ["ann", "ann", "bob"], seed=0)


def test_assign_roster_three_gets_everything():
    pairs = [make_pair(i) for i in range(4)]
    assignments = assign(pairs, ["ann", "bob", "cay"], seed=0)
    assert len(assignments) == 12
    per_reviewer = {}
    per_item = {}
    for a in assignments:
        per_reviewer[a.reviewer_id] = per_reviewer.get(a.reviewer_id, 0) + 1
        per_item.setdefault(a.qa_id, set()).add(a.reviewer_id)
    assert per_reviewer == {"ann": 4, "bob": 4, "cay": 4}
    assert all(len(reviewers) == 3 for reviewers in per_item.values())


def test_assign_roster_six_balances_two_each():
    pairs = [make_pair(i) for i in range(4)]
    roster = [f"r{i}" for i in range(6)]
    assignments = assign(pairs, roster, seed=7)
    loads = {r: 0 for r in roster}
    for a in assignments:
        loads[a.reviewer_id] += 1
    assert sorted(loads.values()) == [2, 2, 2, 2, 2, 2]


def test_assign_loads_stay_within_one():
    pairs = [make_pair(i) for i in range(7)]
    roster = [f"r{i}" for i in range(5)]
    assignments = assign(pairs, roster, seed=3)
    loads = {r: 0 for r in roster}
    for a in assignments:
        loads[a.reviewer_id] += 1
    assert sum(loads.values()) == 21
    assert max(loads.values()) - min(loads.values()) <= 1


def test_assign_is_seed_deterministic():
    pairs = [make_pair(i) for i in range(5)]
    roster = [f"r{i}" for i in range(4)]
    first = assign(pairs, roster, seed=11)
    second = assign(pairs, roster, seed=11)
    assert first == second


def test_assign_skips_finalized_pairs():
    pairs = [make_pair(0), make_pair(1, state="accepted")]
    assignments = assign(pairs, ["ann", "bob", "cay"], seed=0)
    assert {a.qa_id for a in assignments} == {"qa-000"}


# -- store ---------------------------------------------------------------------


@pytest.fixture
def store(tmp_path):
    ticker = itertools.count(100)
    return ReviewStore(tmp_path / "review", clock=lambda: next(ticker))


def test_store_submit_flow(store):
    store.record_assignments(assign([make_pair(0)], ["ann", "bob", "cay"], seed=0))
    decision = store.submit(ReviewDecision(qa_id="qa-000", reviewer_id="ann",
                                           verdict="accept"))
    assert decision.timestamp == 100.0
    assert store.progress() == {"open": 2, "submitted": 1, "total": 3}
    assert store.open_for("ann") == []
    assert len(store.open_for("bob")) == 1


def test_store_rejects_unknown_and_duplicate(store):
    store.record_assignments(assign([make_pair(0)], ["ann", "bob", "cay"], seed=0))
    with pytest.raises(NoSuchAssignment):
        store.submit(ReviewDecision(qa_id="qa-000", reviewer_id="dee",
                                    verdict="accept"))
    with pytest.raises(NoSuchAssignment):
        store.submit(ReviewDecision(qa_id="qa-999", reviewer_id="ann",
                                    verdict="accept"))
    store.submit(ReviewDecision(qa_id="qa-000", reviewer_id="ann", verdict="accept"))
    with pytest.raises(AlreadySubmitted):
        store.submit(ReviewDecision(qa_id="qa-000", reviewer_id="ann",
                                    verdict="reject", reason="other"))


def test_store_survives_restart(tmp_path):
    first = ReviewStore(tmp_path / "review", clock=lambda: 5.0)
    first.record_assignments(assign([make_pair(0), make_pair(1)],
                                    ["ann", "bob", "cay"], seed=0))
    first.submit(ReviewDecision(qa_id="qa-000", reviewer_id="ann", verdict="accept"))
    first.submit(ReviewDecision(qa_id="qa-001", reviewer_id="bob", verdict="reject",
                                reason="redundant"))

    second = ReviewStore(tmp_path / "review")
    assert second.progress() == first.progress()
    assert [d.to_json() for d in second.decisions] == \
           [d.to_json() for d in first.decisions]
    with pytest.raises(AlreadySubmitted):
        second.submit(ReviewDecision(qa_id="qa-000", reviewer_id="ann",
                                     verdict="accept"))


def test_store_snapshot_plus_tail_replay(tmp_path):
    store = ReviewStore(tmp_path / "review", clock=lambda: 1.0, snapshot_every=4)
    store.record_assignments(assign([make_pair(0), make_pair(1)],
                                    ["ann", "bob", "cay"], seed=0))
    assert store.snapshot_path.is_file()  # 6 assign events crossed the threshold
    store.submit(ReviewDecision(qa_id="qa-000", reviewer_id="ann", verdict="accept"))

    reloaded = ReviewStore(tmp_path / "review")
    assert reloaded.progress() == {"open": 5, "submitted": 1, "total": 6}
    assert len(reloaded.decisions) == 1


def test_store_outcomes_persist(tmp_path):
    store = ReviewStore(tmp_path / "review")
    store.record_outcome("qa-000", "accepted", None)
    store.record_outcome("qa-001", "rejected", "ocr_error")
    reloaded = ReviewStore(tmp_path / "review")
    assert reloaded.outcomes["qa-001"]["rejection_reason"] == "ocr_error"


# -- finalize --------------------------------------------------------------------


@pytest.mark.parametrize("verdicts", list(itertools.product(["accept", "reject"],
                                                            repeat=3)))
def test_finalize_consensus_rule_exhaustive(verdicts):
    pair = make_pair(0)
    finalize([pair], {"qa-000": decisions_for("qa-000", list(verdicts))})
    accepts = verdicts.count("accept")
    if accepts >= 2:
        assert pair.review_state == "accepted"
        assert pair.rejection_reason is None
    else:
        assert pair.review_state == "rejected"
        assert pair.rejection_reason is not None


def test_finalize_majority_reason():
    pair = make_pair(0)
    finalize([pair], {"qa-000": decisions_for(
        "qa-000", ["reject", "reject", "accept"],
        reasons=["ocr_error", "ocr_error", None])})
    assert pair.review_state == "rejected"
    assert pair.rejection_reason == "ocr_error"


def test_finalize_reason_tie_takes_first_submitted():
    early_ocr = decisions_for("qa-000", ["reject", "reject", "accept"],
                              reasons=["ocr_error", "redundant", None])
    pair = make_pair(0)
    finalize([pair], {"qa-000": early_ocr})
    assert pair.rejection_reason == "ocr_error"

    flipped = [dataclasses.replace(early_ocr[0], timestamp=9.0),
               dataclasses.replace(early_ocr[1], timestamp=2.0),
               early_ocr[2]]
    pair = make_pair(0)
    finalize([pair], {"qa-000": flipped})
    assert pair.rejection_reason == "redundant"


def test_finalize_incomplete_raises_unless_partial():
    pair = make_pair(0)
    short = {"qa-000": decisions_for("qa-000", ["accept", "accept"])}
    with pytest.raises(IncompleteReviews):
        finalize([pair], short)
    finalize([pair], short, partial=True)
    assert pair.review_state == "pending"


def test_finalize_partial_settles_complete_items():
    done, open_item = make_pair(0), make_pair(1)
    table = {"qa-000": decisions_for("qa-000", ["accept", "accept", "reject"])}
    finalize([done, open_item], table, partial=True)
    assert done.review_state == "accepted"
    assert open_item.review_state == "pending"


def test_finalize_is_idempotent():
    pair = make_pair(0)
    table = {"qa-000": decisions_for("qa-000", ["reject", "reject", "reject"],
                                     reasons=["redundant", "other", "redundant"])}
    finalize([pair], table)
    state = (pair.review_state, pair.rejection_reason)
    assert state == ("rejected", "redundant")
    finalize([pair], table)
    assert (pair.review_state, pair.rejection_reason) == state


def test_finalize_leaves_settled_pairs_alone():
    pair = make_pair(0, state="accepted")
    finalize([pair], {"qa-000": decisions_for("qa-000",
                                              ["reject", "reject", "reject"])})
    assert pair.review_state == "accepted"


# -- fleiss kappa ---------------------------------------------------------------


def kappa_of(table):
    by_item = {f"qa-{i:03d}": decisions_for(f"qa-{i:03d}", verdicts)
               for i, verdicts in enumerate(table)}
    return fleiss_kappa(by_item)


def test_kappa_perfect_agreement_is_exactly_one():
    report = kappa_of([["accept"] * 3, ["reject"] * 3, ["accept"] * 3])
    assert report.kappa == 1.0
    assert report.n_items == 3
    assert report.category_table == {"accept": 6, "reject": 3}


def test_kappa_four_item_oracle():
    # counts (3,0),(0,3),(2,1),(1,2): P_bar = 2/3, P_e = 1/2, kappa = 1/3
    report = kappa_of([["accept"] * 3,
                       ["reject"] * 3,
                       ["accept", "accept", "reject"],
                       ["accept", "reject", "reject"]])
    assert report.kappa == pytest.approx(1.0 / 3.0, abs=1e-9)


def test_kappa_single_split_item():
    # one item, 2-1: P_bar = 1/3, P_e = 5/9, kappa = -1/2
    report = kappa_of([["accept", "accept", "reject"]])
    assert report.kappa == pytest.approx(-0.5, abs=1e-9)


def test_kappa_unanimous_single_category():
    report = kappa_of([["accept"] * 3, ["accept"] * 3])
    assert report.kappa == 1.0


def test_kappa_skips_incomplete_items():
    by_item = {"qa-000": decisions_for("qa-000", ["accept", "accept", "reject"]),
               "qa-001": decisions_for("qa-001", ["accept", "accept"])}
    report = fleiss_kappa(by_item)
    assert report.n_items == 1
    with pytest.raises(InsufficientDecisions):
        fleiss_kappa({"qa-001": decisions_for("qa-001", ["accept", "accept"])})


def test_kappa_accepts_plain_verdict_strings():
    report = fleiss_kappa({"a": ["accept", "reject", "accept"]})
    assert report.kappa == pytest.approx(-0.5, abs=1e-9)
    with pytest.raises(ValueError):
        fleiss_kappa({"a": ["accept", "shrug", "accept"]})


def test_kappa_invariant_to_item_and_reviewer_relabeling():
    table = [["accept", "accept", "reject"],
             ["reject", "reject", "reject"],
             ["accept", "accept", "accept"],
             ["reject", "accept", "reject"]]
    base = kappa_of(table).kappa
    assert kappa_of(list(reversed(table))).kappa == pytest.approx(base, abs=1e-12)
    swapped = [[v for v in reversed(verdicts)] for verdicts in table]
    assert kappa_of(swapped).kappa == pytest.approx(base, abs=1e-12)


def test_agreement_report_bounds():
    with pytest.raises(ValueError):
        AgreementReport(kappa=1.5, n_items=1, n_raters_per_item=3,
                        category_table={"accept": 3, "reject": 0})
