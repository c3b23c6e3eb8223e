import base64
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from somdvr.render import decode_png
from somdvr.service import create_app
from somdvr.volume import VolumeMeta, write_sidecar

TWO_BLOBS_PAYLOAD = {
    "phantom": {"kind": "two-blobs", "dims": [16, 16, 16], "i1": 0.2, "i2": 0.9},
    "render_settings": {"width": 48, "height": 48},
}
FAST_TRAIN = {"level": 2, "epochs": 3, "seed": 7, "stride": 4}


@pytest.fixture()
def client():
    with TestClient(create_app()) as c:
        yield c


@pytest.fixture()
def session_id(client):
    return client.post("/session").json()["id"]


def _loaded(client, session_id):
    assert client.post(f"/session/{session_id}/volume", json=TWO_BLOBS_PAYLOAD).status_code == 200
    return session_id


def _trained(client, session_id):
    _loaded(client, session_id)
    resp = client.post(f"/session/{session_id}/train", json=FAST_TRAIN)
    assert resp.status_code == 200
    return resp.json()


def test_health_reports_backend(client):
    doc = client.get("/health").json()
    assert doc["status"] == "ok"
    assert doc["backend"] in ("native", "python")


def test_create_session(client):
    resp = client.post("/session")
    assert resp.status_code == 201
    doc = resp.json()
    assert doc["phase"] == "empty"
    assert doc["revision"] == 0


def test_load_phantom_volume(client, session_id):
    resp = client.post(f"/session/{session_id}/volume", json=TWO_BLOBS_PAYLOAD)
    assert resp.status_code == 200
    doc = resp.json()
    assert doc["dims"] == [16, 16, 16]
    assert doc["n_voxels"] == 4096
    names = [c["name"] for c in doc["feature_stats"]["channels"]]
    assert names == ["px", "py", "pz", "intensity", "grad_mag", "second_deriv"]


def test_load_volume_from_files(client, session_id, tmp_path):
    raw = tmp_path / "vol.raw"
    raw.write_bytes(bytes(range(64)) * 64)  # 16x16x16
    write_sidecar(VolumeMeta(dims=(16, 16, 16)), tmp_path / "vol.json")
    resp = client.post(
        f"/session/{session_id}/volume",
        json={"raw_path": str(raw), "meta_path": str(tmp_path / "vol.json")},
    )
    assert resp.status_code == 200
    assert resp.json()["dims"] == [16, 16, 16]


def test_truncated_raw_file_is_422(client, session_id, tmp_path):
    raw = tmp_path / "vol.raw"
    raw.write_bytes(bytes(100))  # wrong size for 16^3
    write_sidecar(VolumeMeta(dims=(16, 16, 16)), tmp_path / "vol.json")
    resp = client.post(
        f"/session/{session_id}/volume",
        json={"raw_path": str(raw), "meta_path": str(tmp_path / "vol.json")},
    )
    assert resp.status_code == 422
    assert resp.json()["code"] == "SizeMismatch"


def test_malformed_meta_is_400(client, session_id, tmp_path):
    raw = tmp_path / "vol.raw"
    raw.write_bytes(bytes(8))
    (tmp_path / "vol.json").write_text("{broken")
    resp = client.post(f"/session/{session_id}/volume", json={"raw_path": str(raw)})
    assert resp.status_code == 400
    resp = client.post(f"/session/{session_id}/volume", json={})
    assert resp.status_code == 400


def test_second_load_conflicts(client, session_id):
    _loaded(client, session_id)
    resp = client.post(f"/session/{session_id}/volume", json=TWO_BLOBS_PAYLOAD)
    assert resp.status_code == 409
    # after reset the load is accepted again
    assert client.post(f"/session/{session_id}/reset").status_code == 200
    assert client.post(f"/session/{session_id}/volume", json=TWO_BLOBS_PAYLOAD).status_code == 200


def test_train_response_shape(client, session_id):
    doc = _trained(client, session_id)
    assert doc["node_count"] == 162
    assert len(doc["positions"]) == 162
    assert len(doc["adjacency"]) == 162
    assert len(doc["umatrix"]["normalized"]) == 162
    assert 0.0 <= min(doc["umatrix"]["normalized"])
    assert max(doc["umatrix"]["normalized"]) <= 1.0
    assert doc["quantization_error"] > 0
    assert 0.0 <= doc["topographic_error"] <= 1.0


def test_train_default_level_node_count(client, session_id):
    _loaded(client, session_id)
    doc = client.post(f"/session/{session_id}/train",
                      json={"epochs": 1, "stride": 16}).json()
    assert doc["node_count"] == 642  # default level 3


def test_train_without_volume_is_409(client, session_id):
    resp = client.post(f"/session/{session_id}/train", json=FAST_TRAIN)
    assert resp.status_code == 409


def test_train_invalid_params_is_400(client, session_id):
    _loaded(client, session_id)
    resp = client.post(f"/session/{session_id}/train",
                       json={"eta0": 0.01, "eta_min": 0.5})
    assert resp.status_code == 400


def test_train_is_deterministic(client):
    payloads = []
    for _ in range(2):
        sid = client.post("/session").json()["id"]
        _loaded(client, sid)
        payloads.append(client.post(f"/session/{sid}/train", json=FAST_TRAIN).json())
    assert payloads[0]["umatrix"] == payloads[1]["umatrix"]
    assert payloads[0]["quantization_error"] == payloads[1]["quantization_error"]


def test_define_group_pushes_one_frame(client, session_id):
    _trained(client, session_id)
    resp = client.post(f"/session/{session_id}/groups", json={"node_ids": [0, 1, 2]})
    assert resp.status_code == 201
    doc = resp.json()
    assert len(doc["groups"]) == 1
    assert doc["groups"][0]["hue"] == 210.0
    # exactly one frame event so far, carrying a decodable PNG
    log = _drain_events(client, session_id)
    frames = [e for e in log if e["event_type"] == "frame"]
    assert len(frames) == 1
    png = base64.b64decode(frames[0]["payload"]["png"])
    pixels = decode_png(png)
    assert pixels.shape == (48, 48, 4)


def _drain_events(client, session_id, since=0):
    """Replay the logged event backlog via a bounded SSE stream."""
    current = client.get(f"/session/{session_id}").json()["revision"]
    events = []
    if current <= since:
        return events
    with client.stream("GET", f"/session/{session_id}/events",
                       params={"since": since, "until": current}) as resp:
        assert resp.status_code == 200
        for line in resp.iter_lines():
            if line.startswith("data: "):
                event = json.loads(line[6:])
                if event["event_type"] != "heartbeat":
                    events.append(event)
    return events


def test_overlapping_selection_409_state_unchanged(client, session_id):
    _trained(client, session_id)
    client.post(f"/session/{session_id}/groups", json={"node_ids": [0, 1]})
    before = client.get(f"/session/{session_id}").json()
    resp = client.post(f"/session/{session_id}/groups", json={"node_ids": [1, 5]})
    assert resp.status_code == 409
    assert resp.json()["code"] == "OverlappingSelection"
    after = client.get(f"/session/{session_id}").json()
    assert before["groups"] == after["groups"]
    assert before["revision"] == after["revision"]


def test_unknown_nodes_and_groups_are_404(client, session_id):
    _trained(client, session_id)
    assert client.post(f"/session/{session_id}/groups",
                       json={"node_ids": [9999]}).status_code == 404
    assert client.delete(f"/session/{session_id}/groups/42").status_code == 404
    assert client.get("/session/nope").status_code == 404


def test_define_then_delete_restores_frame(client, session_id):
    _trained(client, session_id)
    client.post(f"/session/{session_id}/groups", json={"node_ids": [0, 1]})
    client.post(f"/session/{session_id}/groups", json={"node_ids": [4, 5]})
    client.delete(f"/session/{session_id}/groups/2")
    log = _drain_events(client, session_id)
    frames = [e for e in log if e["event_type"] == "frame"]
    assert len(frames) == 3
    # deleting group 2 must reproduce the one-group frame bit-exactly
    assert frames[2]["payload"]["png"] == frames[0]["payload"]["png"]
    assert frames[2]["payload"]["groups"] == frames[0]["payload"]["groups"]


def test_render_zero_groups_is_background(client, session_id):
    _trained(client, session_id)
    resp = client.post(f"/session/{session_id}/render", json={})
    assert resp.status_code == 200
    pixels = decode_png(resp.content)
    assert np.array_equal(pixels[..., :3], np.zeros_like(pixels[..., :3]))
    assert np.all(pixels[..., 3] == 255)


def test_render_deterministic_bytes(client, session_id):
    _trained(client, session_id)
    client.post(f"/session/{session_id}/groups", json={"node_ids": list(range(30))})
    body = {"settings": {"width": 40, "height": 30}}
    a = client.post(f"/session/{session_id}/render", json=body)
    b = client.post(f"/session/{session_id}/render", json=body)
    assert a.content == b.content
    assert a.headers["content-type"] == "image/png"


def test_render_before_training_is_409(client, session_id):
    _loaded(client, session_id)
    assert client.post(f"/session/{session_id}/render", json={}).status_code == 409


def test_render_with_custom_camera(client, session_id):
    _trained(client, session_id)
    body = {
        "camera": {"eye": [40, 40, 40], "look_at": [8, 8, 8], "up": [0, 0, 1],
                   "vertical_fov": 35.0},
        "settings": {"width": 24, "height": 24, "step": 0.5},
    }
    resp = client.post(f"/session/{session_id}/render", json=body)
    assert resp.status_code == 200
    assert decode_png(resp.content).shape == (24, 24, 4)
    bad = {"camera": {"eye": [0, 0, 0], "look_at": [0, 0, 0]}}
    assert client.post(f"/session/{session_id}/render", json=bad).status_code == 400


def test_revisions_strictly_increase(client, session_id):
    _trained(client, session_id)
    client.post(f"/session/{session_id}/groups", json={"node_ids": [0]})
    client.post(f"/session/{session_id}/groups", json={"node_ids": [1]})
    client.delete(f"/session/{session_id}/groups/1")
    log = _drain_events(client, session_id)
    revisions = [e["revision"] for e in log]
    assert revisions == sorted(revisions)
    assert len(set(revisions)) == len(revisions)
    current = client.get(f"/session/{session_id}").json()["revision"]
    assert revisions[-1] == current


def test_event_replay_from_midpoint(client, session_id):
    _trained(client, session_id)
    client.post(f"/session/{session_id}/groups", json={"node_ids": [0]})
    full = _drain_events(client, session_id)
    partial = _drain_events(client, session_id, since=full[1]["revision"])
    assert partial == full[2:]


def test_group_payload_fields(client, session_id):
    _trained(client, session_id)
    doc = client.post(f"/session/{session_id}/groups",
                      json={"node_ids": [3, 1, 2]}).json()
    group = doc["groups"][0]
    assert set(group) == {"id", "node_ids", "variance", "opacity", "hue", "voxel_count"}
    assert group["node_ids"] == [1, 2, 3]
    assert 0.0 <= group["variance"] <= 0.25
    assert 0.1 <= group["opacity"] <= 0.9


@pytest.fixture(scope="module")
def live_server():
    """A real uvicorn server on a random port, for open-ended SSE reads."""
    import threading
    import time

    import uvicorn

    config = uvicorn.Config(create_app(), host="127.0.0.1", port=0, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("uvicorn did not start")
        time.sleep(0.05)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


def test_live_event_channel_pushes_and_heartbeats(live_server):
    import queue as queue_mod
    import threading

    import httpx

    sid = httpx.post(f"{live_server}/session").json()["id"]
    received: queue_mod.SimpleQueue = queue_mod.SimpleQueue()
    stop = threading.Event()

    def reader():
        with httpx.stream("GET", f"{live_server}/session/{sid}/events",
                          timeout=30.0) as resp:
            for line in resp.iter_lines():
                if line.startswith("data: "):
                    received.put(json.loads(line[6:]))
                if stop.is_set():
                    break

    thread = threading.Thread(target=reader, daemon=True)
    thread.start()
    try:
        httpx.post(f"{live_server}/session/{sid}/volume",
                   json=TWO_BLOBS_PAYLOAD, timeout=60.0)
        httpx.post(f"{live_server}/session/{sid}/train",
                   json=FAST_TRAIN, timeout=120.0)
        httpx.post(f"{live_server}/session/{sid}/groups",
                   json={"node_ids": [0, 1]}, timeout=120.0)
        seen = []
        deadline = 30.0
        while deadline > 0:
            try:
                event = received.get(timeout=1.0)
            except queue_mod.Empty:
                deadline -= 1.0
                continue
            seen.append(event["event_type"])
            if "frame" in seen and "heartbeat" in seen:
                break
            deadline -= 0.0
        assert "volume_loaded" in seen
        assert "trained" in seen
        assert "frame" in seen
        assert "heartbeat" in seen  # channel stays live between events
    finally:
        stop.set()
