"""Session-scoped HTTP interface for live human teaching.

One session holds one active-learning loop. The teacher requests a query
point, draws a demonstration, and submits it; the service resamples it onto
the control grid, refits the model, and reports the entropy history. Every
mutation is appended to a JSON-lines event log whose replay reproduces the
posterior bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from . import campaign
from .active import apply_demonstration, refreshed_q, select_query
from .control import single_integrator, rollout
from .gaussians import renyi2_entropy
from .bgmm import epistemic_entropy_values
from .active import info_density_logcost_batch
from .world import (
    Demonstration,
    World2D,
    collides_batch,
    evaluate_rollout,
    resample_polyline,
)

SCHEMA_VERSION = 1

__all__ = ["create_app", "SessionRecord", "replay_event_log", "SCHEMA_VERSION"]


class SessionRecord:
    """Mutable session wrapper; all mutations serialized by a lock."""

    def __init__(self, session_id, config, world, al_session, log_path):
        self.id = session_id
        self.config = config
        self.world = world
        self.session = al_session
        self.log_path = log_path
        self.status = "idle"  # idle | awaiting_demo | fitting
        self.pending_query = None
        self.lock = threading.Lock()

    def log_event(self, event: dict) -> None:
        if self.log_path is None:
            return
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")


def _session_summary(rec: SessionRecord) -> dict:
    s = rec.session
    return {
        "schema_version": SCHEMA_VERSION,
        "session_id": rec.id,
        "status": rec.status,
        "iteration": s.iteration,
        "dataset_size": s.dataset.n if s.dataset is not None else 0,
        "n_initial_demos": len(rec.config.initial_starts),
        "pending_query": None if rec.pending_query is None else rec.pending_query.tolist(),
        "beta": s.config.beta,
        "entropy": s.history[-1].entropy,
        "world": rec.world.to_dict(),
        "goal": rec.world.goal.tolist(),
    }


def _q_components(s) -> list[dict]:
    g = s.q.gmm()
    return [
        {"mean": c.mean.tolist(), "covariance": c.covariance.tolist(), "weight": float(w)}
        for w, c in zip(g.weights, g.components)
    ]


def _history_payload(s) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "history": [e.to_dict() for e in s.history],
    }


def _conflict(detail: str) -> JSONResponse:
    return JSONResponse(
        status_code=409,
        content={"schema_version": SCHEMA_VERSION, "error": detail, "retry_after": 0.5},
        headers={"Retry-After": "1"},
    )


def _build_session(config: campaign.ExperimentConfig, world: World2D, seed: int):
    if len(config.initial_starts) == 0:
        from .active import mvn_from_box, start_session, CostTerm
        from .bgmm import BGMMPrior

        similarity = mvn_from_box(world.bounds.lo, world.bounds.hi)
        var_x = np.diag(similarity.covariance)
        var_u = np.full(2, config.teacher_speed**2)
        prior = BGMMPrior(
            alpha0=config.alpha0, beta0=config.beta0,
            m0=np.concatenate([similarity.mean, np.zeros(2)]),
            W0=np.diag(1.0 / (np.concatenate([var_x, var_u]) * 6.0)), nu0=6.0,
        )
        limit = CostTerm(
            "soft_limit", config.limit_weight,
            {"lower": world.bounds.lo, "upper": world.bounds.hi,
             "sharpness": config.limit_sharpness},
        )
        return start_session(None, prior, similarity, campaign._al_config(config, seed),
                             extra_terms=[limit])
    return campaign.build_session(config, world, seed)


def _do_query(rec: SessionRecord) -> dict:
    """Cost is current; warm-refit q, select the query, move to awaiting_demo."""
    rec.status = "fitting"
    try:
        teacher = campaign.make_teacher(rec.config, rec.world)
        from .active import Feasibility
        from .world import collides, nearest_free_point

        feas = Feasibility(
            predicate=lambda p: not collides(rec.world, p, clearance=teacher.inflation),
            project=lambda p: nearest_free_point(rec.world, p, clearance=teacher.inflation),
        )
        session = refreshed_q(rec.session)
        query = select_query(session.q, feas)
        rec.session = session
        rec.pending_query = query
        rec.status = "awaiting_demo"
    except Exception:
        rec.status = "idle"
        raise
    return {
        "schema_version": SCHEMA_VERSION,
        "query": query.tolist(),
        "q_components": _q_components(rec.session),
        "entropy": renyi2_entropy(rec.session.q.gmm()),
    }


def _do_demo(rec: SessionRecord, polyline, timestamps) -> dict:
    points = np.asarray(polyline, dtype=float)
    if points.ndim != 2 or points.shape[0] < 2 or points.shape[1] != 2:
        raise HTTPException(status_code=422, detail="polyline needs at least 2 planar points")
    if not np.all(np.isfinite(points)):
        raise HTTPException(status_code=422, detail="polyline contains non-finite points")
    if bool(np.any(collides_batch(rec.world, points))):
        raise HTTPException(status_code=422, detail="polyline collides with an obstacle")
    speed = rec.config.teacher_speed
    if timestamps is not None:
        ts = np.asarray(timestamps, dtype=float)
        if ts.shape[0] != points.shape[0] or np.any(np.diff(ts) <= 0):
            raise HTTPException(status_code=422, detail="timestamps must be strictly increasing")
        seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
        speeds = seg / np.diff(ts)
        speed = float(np.median(speeds))
        if speed <= 0:
            raise HTTPException(status_code=422, detail="drawn speed must be positive")
    try:
        states, commands = resample_polyline(points, speed, rec.config.dt)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    if bool(np.any(collides_batch(rec.world, states))):
        raise HTTPException(status_code=422, detail="resampled path collides with an obstacle")
    demo = Demonstration(states, commands, rec.config.dt, source="human",
                         query=rec.pending_query)
    rec.status = "fitting"
    try:
        rec.session = apply_demonstration(rec.session, demo, rec.pending_query)
        rec.pending_query = None
        rec.status = "idle"
    except Exception:
        rec.status = "awaiting_demo"
        raise
    out = _history_payload(rec.session)
    out.update({
        "entropy": rec.session.history[-1].entropy,
        "dataset_size": rec.session.dataset.n,
        "demo_points": int(states.shape[0]),
    })
    return out


def create_app(default_config: campaign.ExperimentConfig | None = None) -> FastAPI:
    """FastAPI app holding an in-memory session registry."""
    base = default_config if default_config is not None else campaign.ExperimentConfig()
    app = FastAPI(title="activelfd teaching service")
    sessions: dict[str, SessionRecord] = {}
    app.state.sessions = sessions

    def get_record(session_id: str) -> SessionRecord:
        rec = sessions.get(session_id)
        if rec is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id}")
        return rec

    @app.post("/sessions")
    def create_session(body: dict | None = None):
        body = body or {}
        overrides = dict(body.get("config", {}))
        cfg_fields = {f.name for f in dataclasses.fields(campaign.ExperimentConfig)}
        unknown = set(overrides) - cfg_fields
        if unknown:
            raise HTTPException(status_code=422, detail=f"unknown config keys {sorted(unknown)}")
        if "initial_starts" in overrides:
            overrides["initial_starts"] = tuple(tuple(s) for s in overrides["initial_starts"])
        config = dataclasses.replace(base, **overrides)
        try:
            world = (World2D.from_dict(body["world"]) if "world" in body
                     else config.load_world())
        except Exception as exc:
            raise HTTPException(status_code=422, detail=f"invalid world fixture: {exc}")
        seed = int(body.get("seed", config.seeds[0]))
        session_id = uuid.uuid4().hex
        log_path = Path(config.out) / "sessions" / f"{session_id}.jsonl"
        try:
            al_session = _build_session(config, world, seed)
        except Exception as exc:
            raise HTTPException(status_code=422, detail=f"session setup failed: {exc}")
        rec = SessionRecord(session_id, config, world, al_session, log_path)
        sessions[session_id] = rec
        rec.log_event({
            "event": "created", "schema_version": SCHEMA_VERSION,
            "seed": seed, "world": world.to_dict(),
            "config": config.to_dict(),
        })
        return {"schema_version": SCHEMA_VERSION, "session_id": session_id}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return _session_summary(get_record(session_id))

    @app.post("/sessions/{session_id}/query")
    def request_query(session_id: str):
        rec = get_record(session_id)
        if not rec.lock.acquire(blocking=False):
            return _conflict("session busy, retry shortly")
        try:
            if rec.status != "idle":
                return _conflict(f"query not allowed while {rec.status}")
            out = _do_query(rec)
            rec.log_event({"event": "query", "schema_version": SCHEMA_VERSION})
            return out
        finally:
            rec.lock.release()

    @app.post("/sessions/{session_id}/demo")
    def submit_demo(session_id: str, body: dict):
        rec = get_record(session_id)
        if not rec.lock.acquire(blocking=False):
            return _conflict("session busy, retry shortly")
        try:
            if rec.status != "awaiting_demo":
                return _conflict(f"demo not allowed while {rec.status}")
            polyline = body.get("polyline")
            if polyline is None:
                raise HTTPException(status_code=422, detail="missing polyline")
            out = _do_demo(rec, polyline, body.get("timestamps"))
            rec.log_event({
                "event": "demo", "schema_version": SCHEMA_VERSION,
                "polyline": [list(map(float, p)) for p in polyline],
                "timestamps": body.get("timestamps"),
            })
            return out
        finally:
            rec.lock.release()

    @app.get("/sessions/{session_id}/grid")
    def get_grid(session_id: str, mode: str = "epistemic", resolution: int = 80):
        rec = get_record(session_id)
        if mode not in ("total", "aleatoric", "epistemic", "cost"):
            raise HTTPException(status_code=422, detail=f"unknown mode {mode!r}")
        if not 2 <= resolution <= 400:
            raise HTTPException(status_code=422, detail="resolution out of range")
        world = rec.world
        xs = np.linspace(world.bounds.lo[0], world.bounds.hi[0], resolution)
        ys = np.linspace(world.bounds.lo[1], world.bounds.hi[1], resolution)
        xx, yy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        if mode == "cost":
            values = info_density_logcost_batch(rec.session.cost, pts)
        else:
            values = epistemic_entropy_values(rec.session.posterior, pts, mode=mode)
        grid = values.reshape(resolution, resolution)
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": mode,
            "resolution": resolution,
            "xs": xs.tolist(),
            "ys": ys.tolist(),
            "values": grid.tolist(),  # values[i][j] at (xs[i], ys[j])
            "vmin": float(values.min()),
            "vmax": float(values.max()),
            "q_components": _q_components(rec.session) if mode == "cost" else None,
        }

    @app.get("/sessions/{session_id}/rollouts")
    def get_rollouts(session_id: str, n: int = 5, mode: str = "sample",
                     policy: str = "poe", seed: int = 0):
        rec = get_record(session_id)
        if mode not in ("sample", "mean"):
            raise HTTPException(status_code=422, detail=f"unknown mode {mode!r}")
        if rec.session.dataset is None:
            raise HTTPException(status_code=409, detail="no demonstrations yet")
        world = rec.world
        sys_ = single_integrator(dim=2, dt=rec.config.dt)
        if policy == "poe":
            expert = campaign.goal_expert(rec.config, world, rec.session.posterior)
            source = campaign.poe_policy_source(rec.session.posterior, expert)
        elif policy == "bgmm":
            source = campaign.bgmm_policy_source(rec.session.posterior)
        else:
            raise HTTPException(status_code=422, detail=f"unknown policy {policy!r}")
        starts = list(rec.config.test_starts)[:n]
        rollouts = []
        for i, start in enumerate(starts):
            r = rollout(source, sys_, np.asarray(start, dtype=float),
                        rec.config.horizon, mode=mode, goal=world.goal,
                        eps=world.goal_eps, rng_seed=seed * 1000 + i,
                        divergence_bound=3.0 * world.diagonal)
            ev = evaluate_rollout(world, r)
            rollouts.append({
                "start": list(start),
                "states": r.states.tolist(),
                "commands": r.commands.tolist(),
                "termination": r.termination,
                "success": ev.success,
                "collided": ev.collided,
            })
        return {"schema_version": SCHEMA_VERSION, "mode": mode,
                "policy": policy, "rollouts": rollouts}

    @app.get("/sessions/{session_id}/history")
    def get_history(session_id: str):
        return _history_payload(get_record(session_id).session)

    return app


def replay_event_log(log_path) -> SessionRecord:
    """Rebuild a session by replaying its event log (deterministic)."""
    events = []
    with open(log_path) as fh:
        for line in fh:
            if line.strip():
                events.append(json.loads(line))
    if not events or events[0]["event"] != "created":
        raise ValueError("event log must start with a 'created' event")
    head = events[0]
    raw = dict(head["config"])
    raw["seeds"] = tuple(raw["seeds"])
    raw["initial_starts"] = tuple(tuple(s) for s in raw["initial_starts"])
    raw["test_starts"] = tuple(tuple(s) for s in raw["test_starts"])
    config = campaign.ExperimentConfig(**raw)
    world = World2D.from_dict(head["world"])
    al_session = _build_session(config, world, head["seed"])
    rec = SessionRecord("replay", config, world, al_session, log_path=None)
    for event in events[1:]:
        if event["event"] == "query":
            _do_query(rec)
        elif event["event"] == "demo":
            _do_demo(rec, event["polyline"], event.get("timestamps"))
        else:
            raise ValueError(f"unknown event {event['event']!r}")
    return rec
