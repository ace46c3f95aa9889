"""Teaching service endpoints: contracts, state machine, replay determinism."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from activelfd.campaign import ExperimentConfig
from activelfd.service import create_app, replay_event_log



def tiny_config(tmp_path, **overrides):
    base = dict(
        out=str(tmp_path / "svc"),
        seeds=(0,),
        k_policy=5,
        k_q=3,
        q_steps=60,
        q_steps_warm=40,
        q_samples=8,
        q_samples_warm=8,
        initial_starts=((0.8, 2.4), (0.8, 8.8), (1.6, 0.9)),
        horizon=200,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture()
def client(tmp_path):
    app = create_app(tiny_config(tmp_path))
    with TestClient(app) as c:
        yield c


def create_session(client, **body):
    resp = client.post("/sessions", json=body or {})
    assert resp.status_code == 200, resp.text
    return resp.json()["session_id"]


def straight_polyline(state):
    world = state["world"]
    return [[0.5, 1.0], [0.5 + 3.0, 1.0]]


class TestSessionLifecycle:
    def test_create_returns_distinct_ids(self, client):
        a = create_session(client)
        b = create_session(client)
        assert a != b

    def test_state_echoes_initial_demo_count(self, client):
        sid = create_session(client)
        state = client.get(f"/sessions/{sid}").json()
        assert state["schema_version"] == 1
        assert state["status"] == "idle"
        assert state["n_initial_demos"] == 3
        assert state["dataset_size"] > 0

    def test_empty_initial_demos_prior_dominated(self, client):
        sid = create_session(client, config={"initial_starts": []})
        state = client.get(f"/sessions/{sid}").json()
        assert state["dataset_size"] == 0

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/nope").status_code == 404

    def test_invalid_world_rejected(self, client):
        resp = client.post("/sessions", json={
            "world": {"schema_version": 1,
                      "bounds": {"min": [0, 0], "max": [1, 1]},
                      "obstacles": [], "goal": [5.0, 5.0], "goal_eps": 0.1},
        })
        assert resp.status_code == 422


class TestQueryEndpoint:
    def test_query_returns_feasible_point(self, client):
        sid = create_session(client)
        out = client.post(f"/sessions/{sid}/query")
        assert out.status_code == 200
        payload = out.json()
        q = np.asarray(payload["query"])
        assert q.shape == (2,)
        assert np.all(q >= 0.0) and np.all(q <= 16.0)
        state = client.get(f"/sessions/{sid}").json()
        assert state["status"] == "awaiting_demo"
        assert state["pending_query"] == payload["query"]

    def test_second_query_conflicts(self, client):
        sid = create_session(client)
        assert client.post(f"/sessions/{sid}/query").status_code == 200
        assert client.post(f"/sessions/{sid}/query").status_code == 409

    def test_entropy_matches_returned_components(self, client):
        from activelfd.gaussians import GMM, Gaussian, renyi2_entropy

        sid = create_session(client)
        payload = client.post(f"/sessions/{sid}/query").json()
        comps = payload["q_components"]
        g = GMM(
            np.array([c["weight"] for c in comps]),
            [Gaussian(np.array(c["mean"]), np.array(c["covariance"])) for c in comps],
        )
        np.testing.assert_allclose(renyi2_entropy(g), payload["entropy"], rtol=1e-9)


class TestDemoEndpoint:
    def test_demo_without_query_conflicts(self, client):
        sid = create_session(client)
        resp = client.post(f"/sessions/{sid}/demo",
                           json={"polyline": [[0.5, 1.0], [3.0, 1.0]]})
        assert resp.status_code == 409

    def test_straight_demo_resamples_to_grid(self, client):
        sid = create_session(client)
        client.post(f"/sessions/{sid}/query")
        before = client.get(f"/sessions/{sid}").json()["dataset_size"]
        resp = client.post(f"/sessions/{sid}/demo",
                           json={"polyline": [[0.5, 1.0], [1.5, 1.0]]})
        assert resp.status_code == 200, resp.text
        payload = resp.json()
        assert payload["demo_points"] == 21  # length 1.0 at speed 1.0, dt 0.05
        assert payload["dataset_size"] == before + 21
        state = client.get(f"/sessions/{sid}").json()
        assert state["status"] == "idle"

    def test_colliding_polyline_rejected_session_unchanged(self, client):
        sid = create_session(client)
        client.post(f"/sessions/{sid}/query")
        before = client.get(f"/sessions/{sid}").json()
        resp = client.post(f"/sessions/{sid}/demo",
                           json={"polyline": [[3.0, 6.0], [6.0, 6.0]]})
        assert resp.status_code == 422
        assert "collide" in resp.json()["detail"]
        after = client.get(f"/sessions/{sid}").json()
        assert after["dataset_size"] == before["dataset_size"]
        assert after["status"] == "awaiting_demo"

    def test_short_polyline_rejected(self, client):
        sid = create_session(client)
        client.post(f"/sessions/{sid}/query")
        resp = client.post(f"/sessions/{sid}/demo", json={"polyline": [[1.0, 1.0]]})
        assert resp.status_code == 422

    def test_timestamped_demo_uses_drawn_speed(self, client):
        sid = create_session(client)
        client.post(f"/sessions/{sid}/query")
        resp = client.post(f"/sessions/{sid}/demo", json={
            "polyline": [[0.5, 1.0], [1.5, 1.0]],
            "timestamps": [0.0, 2.0],  # 1 unit in 2 s -> speed 0.5
        })
        assert resp.status_code == 200
        assert resp.json()["demo_points"] == 41  # 1.0 / (0.5 * 0.05) + 1

    def test_history_grows_per_demo(self, client):
        sid = create_session(client)
        client.post(f"/sessions/{sid}/query")
        client.post(f"/sessions/{sid}/demo",
                    json={"polyline": [[0.5, 1.0], [2.0, 1.5]]})
        hist = client.get(f"/sessions/{sid}/history").json()["history"]
        assert len(hist) == 2  # iteration 0 plus one demo
        assert hist[-1]["iteration"] == 1
        assert not hist[-1]["failed"]


class TestReadEndpoints:
    def test_grid_shape_and_state_untouched(self, client):
        sid = create_session(client)
        before = client.get(f"/sessions/{sid}").json()
        grid = client.get(f"/sessions/{sid}/grid",
                          params={"mode": "epistemic", "resolution": 16}).json()
        assert len(grid["values"]) == 16
        assert len(grid["values"][0]) == 16
        assert grid["vmin"] <= grid["vmax"]
        after = client.get(f"/sessions/{sid}").json()
        assert after == before

    def test_cost_grid_carries_ellipses(self, client):
        sid = create_session(client)
        grid = client.get(f"/sessions/{sid}/grid",
                          params={"mode": "cost", "resolution": 8}).json()
        assert grid["q_components"] is not None
        assert len(grid["q_components"]) == 3

    def test_rollouts_endpoint(self, client):
        sid = create_session(client)
        out = client.get(f"/sessions/{sid}/rollouts",
                         params={"n": 2, "mode": "mean"}).json()
        assert len(out["rollouts"]) == 2
        for r in out["rollouts"]:
            assert r["termination"] in ("goal_reached", "max_steps", "diverged")
            assert len(r["states"]) == len(r["commands"]) + 1

    def test_bad_grid_mode_rejected(self, client):
        sid = create_session(client)
        resp = client.get(f"/sessions/{sid}/grid", params={"mode": "bogus"})
        assert resp.status_code == 422


class TestStateMachine:
    def test_random_illegal_calls_never_mutate(self, client):
        rng = np.random.default_rng(7)
        sid = create_session(client)

        def state_hash():
            payload = client.get(f"/sessions/{sid}").json()
            hist = client.get(f"/sessions/{sid}/history").json()
            return json.dumps([payload, hist], sort_keys=True)

        legal_next = "query"
        for _ in range(12):
            h = state_hash()
            action = rng.choice(["query", "demo"])
            if action == "query":
                resp = client.post(f"/sessions/{sid}/query")
                if legal_next == "query":
                    assert resp.status_code == 200
                    legal_next = "demo"
                else:
                    assert resp.status_code == 409
                    assert state_hash() == h
            else:
                resp = client.post(
                    f"/sessions/{sid}/demo",
                    json={"polyline": [[0.5, 1.0], [2.5, 2.0]]})
                if legal_next == "demo":
                    assert resp.status_code == 200
                    legal_next = "query"
                else:
                    assert resp.status_code == 409
                    assert state_hash() == h


class TestReplayDeterminism:
    def test_event_log_replays_to_identical_posterior(self, tmp_path):
        config = tiny_config(tmp_path)
        app = create_app(config)
        with TestClient(app) as client:
            sid = create_session(client)
            for polyline in ([[0.5, 1.0], [3.0, 2.0]],
                             [[2.0, 11.0], [4.0, 11.5], [6.0, 11.0]]):
                client.post(f"/sessions/{sid}/query")
                resp = client.post(f"/sessions/{sid}/demo", json={"polyline": polyline})
                assert resp.status_code == 200
            live = app.state.sessions[sid].session
            log_path = tmp_path / "svc" / "sessions" / f"{sid}.jsonl"
        replayed = replay_event_log(log_path)
        live_json = json.dumps(live.posterior.to_dict(), sort_keys=True)
        replay_json = json.dumps(replayed.session.posterior.to_dict(), sort_keys=True)
        assert live_json == replay_json
        assert [e.entropy for e in replayed.session.history] == [
            e.entropy for e in live.history
        ]
