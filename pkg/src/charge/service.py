"""HTTP review service: serves candidates with their source materials,
accepts reviewer decisions behind static bearer tokens, reports progress
and agreement, and finalizes consensus outcomes.
"""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Mapping, Optional

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .corpus import Corpus, load_corpus
from .errors import (AlreadySubmitted, IncompleteReviews, InsufficientDecisions,
                     MissingRejectReason, NoSuchAssignment)
from .qagen import QAPair, load_dataset
from .review import (ReviewDecision, ReviewStore, assign, finalize, fleiss_kappa)


def candidate_payload(pair: QAPair, corpus: Corpus) -> dict:
    """Everything a reviewer needs for one card: the pair plus the exact
    source materials its keypoints came from."""
    chunks = []
    charts = []
    for _, source_id, modality in pair.gt_sources:
        if modality == "text":
            chunk = corpus.chunks[source_id]
            chunks.append({"chunk_id": chunk.chunk_id, "doc_id": chunk.doc_id,
                           "text": chunk.text})
        else:
            chart = corpus.charts[source_id]
            charts.append({"chart_id": chart.chart_id, "doc_id": chart.doc_id,
                           "caption": chart.caption,
                           "values_text": chart.values.to_prompt_text(),
                           "image_url": f"/api/images/{chart.chart_id}"})
    return {"pair": pair.to_json(), "chunks": chunks, "charts": charts}


def create_app(data_dir: str | Path, tokens: Mapping[str, str], seed: int = 0,
               static_dir: Optional[str | Path] = None,
               clock=None) -> FastAPI:
    """Review service over a pipeline data directory.

    `tokens` maps bearer token -> reviewer id; the distinct reviewer ids
    form the roster. Assignments are created once, on first startup over
    a dataset, and persist in the review store afterwards.
    """
    data_dir = Path(data_dir)
    corpus = load_corpus(data_dir / "corpus")
    build = load_dataset(data_dir / "dataset")
    pairs = {pair.qa_id: pair for pair in build.pairs}
    store_kwargs = {"clock": clock} if clock is not None else {}
    store = ReviewStore(data_dir / "review", **store_kwargs)

    # replay prior consensus outcomes so finalize stays idempotent across restarts
    for outcome in store.outcomes.values():
        pair = pairs.get(outcome["qa_id"])
        if pair is not None:
            pair.review_state = outcome["review_state"]
            pair.rejection_reason = outcome["rejection_reason"]

    roster = sorted(set(tokens.values()))
    if not store.assignments:
        pending = [p for p in pairs.values() if p.review_state == "pending"]
        if pending:
            store.record_assignments(assign(pending, roster, seed))

    app = FastAPI(title="charge review service")

    def auth(request: Request) -> str:
        header = request.headers.get("authorization", "")
        token = header[7:] if header.lower().startswith("bearer ") else ""
        if not token:
            token = request.query_params.get("token", "")
        reviewer = tokens.get(token)
        if reviewer is None:
            raise HTTPException(status_code=401, detail="invalid or missing token")
        return reviewer

    @app.get("/api/assignments")
    def assignments(reviewer: str, identity: str = Depends(auth)):
        if reviewer != identity:
            raise HTTPException(status_code=403,
                                detail="token does not match requested reviewer")
        items = []
        for assignment in store.open_for(reviewer):
            pair = pairs.get(assignment.qa_id)
            if pair is not None:
                items.append(candidate_payload(pair, corpus))
        return {"reviewer": reviewer, "assignments": items}

    @app.get("/api/candidates/{qa_id}")
    def candidate(qa_id: str, identity: str = Depends(auth)):
        pair = pairs.get(qa_id)
        if pair is None:
            raise HTTPException(status_code=404, detail=f"no candidate {qa_id}")
        return candidate_payload(pair, corpus)

    @app.post("/api/reviews")
    async def submit_review(request: Request, identity: str = Depends(auth)):
        body = await request.json()
        try:
            decision = ReviewDecision(qa_id=str(body.get("qa_id", "")),
                                      reviewer_id=identity,
                                      verdict=str(body.get("verdict", "")),
                                      reason=body.get("reason"),
                                      note=str(body.get("note", "")))
            decision = store.submit(decision)
        except MissingRejectReason as exc:
            raise HTTPException(status_code=422,
                                detail={"error": "missing_reject_reason",
                                        "message": str(exc)})
        except ValueError as exc:
            raise HTTPException(status_code=422,
                                detail={"error": "invalid_decision",
                                        "message": str(exc)})
        except NoSuchAssignment as exc:
            raise HTTPException(status_code=404,
                                detail={"error": "no_such_assignment",
                                        "message": str(exc)})
        except AlreadySubmitted as exc:
            raise HTTPException(status_code=409,
                                detail={"error": "already_submitted",
                                        "message": str(exc)})
        return {"status": "ok", "qa_id": decision.qa_id,
                "reviewer_id": decision.reviewer_id,
                "timestamp": decision.timestamp}

    @app.get("/api/stats")
    def stats(identity: str = Depends(auth)):
        reasons = Counter(d.reason for d in store.decisions
                          if d.verdict == "reject")
        try:
            agreement = fleiss_kappa(store.decisions_by_item())
            kappa = agreement.kappa
            rated_items = agreement.n_items
        except InsufficientDecisions:
            kappa = None
            rated_items = 0
        states = Counter(p.review_state for p in pairs.values())
        return {"progress": store.progress(),
                "kappa": kappa,
                "rated_items": rated_items,
                "reject_reasons": dict(sorted(reasons.items())),
                "dataset": {"total": len(pairs),
                            "pending": states.get("pending", 0),
                            "accepted": states.get("accepted", 0),
                            "rejected": states.get("rejected", 0)}}

    @app.post("/api/finalize")
    async def run_finalize(request: Request, identity: str = Depends(auth)):
        body = {}
        if (await request.body()):
            body = await request.json()
        partial = bool(body.get("partial", False))
        before = {qa_id: pair.review_state for qa_id, pair in pairs.items()}
        try:
            finalize(list(pairs.values()), store.decisions_by_item(), partial=partial)
        except IncompleteReviews as exc:
            raise HTTPException(status_code=409,
                                detail={"error": "incomplete_reviews",
                                        "message": str(exc)})
        for qa_id, pair in pairs.items():
            if pair.review_state != before[qa_id]:
                store.record_outcome(qa_id, pair.review_state, pair.rejection_reason)
        store.write_snapshot()
        states = Counter(p.review_state for p in pairs.values())
        return {"status": "ok",
                "accepted": states.get("accepted", 0),
                "rejected": states.get("rejected", 0),
                "pending": states.get("pending", 0)}

    @app.get("/api/images/{chart_id}")
    def chart_image(chart_id: str, identity: str = Depends(auth)):
        chart = corpus.charts.get(chart_id)
        if chart is None:
            raise HTTPException(status_code=404, detail=f"no chart {chart_id}")
        path = Path(chart.image_ref)
        if not path.is_absolute():
            path = data_dir / "corpus" / path
        if not path.is_file():
            raise HTTPException(status_code=404, detail="chart image missing")
        return FileResponse(path)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="webui")
    else:
        @app.get("/")
        def root():
            return JSONResponse({"service": "charge review",
                                 "webui": "not built",
                                 "api": ["/api/assignments", "/api/candidates/{qa_id}",
                                         "/api/reviews", "/api/stats",
                                         "/api/finalize"]})

    return app
