import csv
import io
import struct

import numpy as np
import pytest
from fastapi.testclient import TestClient

from sstsne.dataset import make_synthetic_gaussians, write_features_tsv, write_labels_tsv
from sstsne.engine import Engine, TsneConfig
from sstsne.service import (LabelSession, config_from_dict, create_app,
                            pack_frame, parse_labels_tsv)

QUICK = {"out_dims": 2, "perplexity": 6.0, "s": 10, "e_max": 40,
         "alpha_epochs": [8, 16], "seed": 0}


@pytest.fixture(scope="module")
def dataset():
    return make_synthetic_gaussians(3, 20, 6, separation=15.0, noise=1.0,
                                    seed=11, name="demo")


@pytest.fixture
def client(dataset):
    app = create_app(datasets=(dataset,))
    with TestClient(app) as client:
        yield client


def make_session(client, **config_overrides):
    config = {**QUICK, **config_overrides}
    resp = client.post("/sessions", json={"dataset": "demo", "config": config})
    assert resp.status_code == 200
    return resp.json()["id"]


def unpack_frame(raw):
    epoch, n, d = struct.unpack_from("<IIB", raw, 0)
    offset = 9
    positions = np.frombuffer(raw, dtype="<f4", count=n * d, offset=offset).reshape(n, d)
    offset += n * d * 4
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    deltas = [struct.unpack_from("<IH", raw, offset + 6 * i) for i in range(count)]
    return epoch, positions, deltas


def test_config_from_dict():
    cfg = config_from_dict({"perplexity": 7.5, "alpha_epochs": [50, 100],
                            "e_max": 200, "s": 20})
    assert cfg.perplexity == 7.5
    assert cfg.alpha_epochs == (50, 100)
    with pytest.raises(ValueError, match="unknown config field"):
        config_from_dict({"perplexities": 5})
    assert config_from_dict(None) == TsneConfig()


def test_pack_frame_layout():
    positions = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    raw = pack_frame(7, positions, [])
    assert len(raw) == 9 + 3 * 2 * 4 + 4
    epoch, got, deltas = unpack_frame(raw)
    assert epoch == 7
    np.testing.assert_array_equal(got, positions.astype(np.float32))
    assert deltas == []
    raw = pack_frame(7, positions, [(2, 65535), (0, 1)])
    assert len(raw) == 37 + 12
    _, _, deltas = unpack_frame(raw)
    assert deltas == [(2, 65535), (0, 1)]


def test_parse_labels_tsv():
    rows = parse_labels_tsv("index\tclass\n3\tcat\n7\tdog\n")
    assert rows == [(3, "cat"), (7, "dog")]
    with pytest.raises(ValueError, match="header"):
        parse_labels_tsv("3\tcat\n")


def test_session_accounting_unit(dataset):
    engine = Engine(dataset, config_from_dict(QUICK))
    session = LabelSession("s1", dataset, engine)
    session.select_focus(0)
    assert session.counters() == {"labels": 0, "actions": 1}
    neighbors = session.set_k(5)
    assert len(neighbors) == 5
    assert session.counters()["actions"] == 2
    session.set_k(8)  # re-adjusting the slider is free
    assert session.counters()["actions"] == 2
    session.deselect(neighbors[0])
    assert session.counters()["actions"] == 3
    written = session.apply_label(0)
    assert written == 8  # focus plus seven remaining selected neighbors
    assert session.counters() == {"labels": 8, "actions": 3}
    assert session.open_event is None


def test_session_abandoned_event_is_flushed(dataset):
    engine = Engine(dataset, config_from_dict(QUICK))
    session = LabelSession("s2", dataset, engine)
    session.select_focus(0)
    session.set_k(3)
    session.select_focus(1)  # abandons the open event
    assert session.counters()["actions"] == 3
    session.set_k(2)
    session.apply_label(1)
    csv_rows = list(csv.DictReader(io.StringIO(session.action_log_csv())))
    assert len(csv_rows) == 2
    assert csv_rows[0]["labels"] == "0"
    assert int(csv_rows[-1]["cumulative_actions"]) == session.counters()["actions"]
    assert int(csv_rows[-1]["cumulative_labels"]) == session.counters()["labels"]


def test_session_action_errors(dataset):
    from fastapi import HTTPException
    engine = Engine(dataset, config_from_dict(QUICK))
    session = LabelSession("s3", dataset, engine)
    with pytest.raises(HTTPException) as err:
        session.set_k(3)
    assert err.value.status_code == 409
    session.select_focus(0)
    with pytest.raises(HTTPException) as err:
        session.deselect(0)
    assert err.value.status_code == 400
    with pytest.raises(HTTPException) as err:
        session.deselect(59)
    assert err.value.status_code == 400
    with pytest.raises(HTTPException) as err:
        session.apply_label(99)  # beyond the dataset's class list
    assert err.value.status_code == 400


def test_health_and_datasets(client):
    assert client.get("/health").json() == {"status": "ok"}
    listing = client.get("/datasets").json()["datasets"]
    assert listing == [{"name": "demo", "n": 60, "dim": 6, "n_classes": 3,
                        "class_names": ["class_0", "class_1", "class_2"]}]


def test_create_session_and_summary(client):
    session_id = make_session(client)
    summary = client.get(f"/sessions/{session_id}").json()
    assert summary["n"] == 60
    assert summary["epoch"] == 0
    assert summary["running"] is False
    assert summary["counters"] == {"labels": 0, "actions": 0}
    assert summary["class_names"] == ["class_0", "class_1", "class_2"]
    with_kl = client.get(f"/sessions/{session_id}", params={"kl": "true"}).json()
    assert with_kl["kl"] > 0


def test_create_session_errors(client):
    assert client.post("/sessions", json={"dataset": "nope"}).status_code == 404
    resp = client.post("/sessions", json={"dataset": "demo",
                                          "config": {"perplexity": 0.5}})
    assert resp.status_code == 400
    resp = client.post("/sessions", json={"dataset": "demo",
                                          "config": {"bogus": 1}})
    assert resp.status_code == 400
    assert client.get("/sessions/absent").status_code == 404


def test_step_control(client):
    session_id = make_session(client)
    resp = client.post(f"/sessions/{session_id}/control",
                       json={"command": "step", "n": 5}).json()
    assert resp["epoch"] == 5
    assert resp["stepped"] == 5
    assert resp["clamped"] is False
    resp = client.post(f"/sessions/{session_id}/control",
                       json={"command": "step", "n": 99}).json()
    assert resp["epoch"] == 40
    assert resp["stepped"] == 35
    assert resp["clamped"] is True
    bad = client.post(f"/sessions/{session_id}/control",
                      json={"command": "step", "n": 0})
    assert bad.status_code == 400
    bad = client.post(f"/sessions/{session_id}/control", json={"command": "warp"})
    assert bad.status_code == 400


def test_run_pause_cycle(client):
    session_id = make_session(client, e_max=300)
    resp = client.post(f"/sessions/{session_id}/control",
                       json={"command": "run"}).json()
    assert resp["running"] is True
    blocked = client.post(f"/sessions/{session_id}/control",
                          json={"command": "step", "n": 1})
    assert blocked.status_code == 409
    resp = client.post(f"/sessions/{session_id}/control",
                       json={"command": "pause"}).json()
    assert resp["running"] is False


def test_action_flow_over_http(client):
    session_id = make_session(client)
    url = f"/sessions/{session_id}/actions"
    resp = client.post(url, json={"action": "select_focus", "v": 3}).json()
    assert resp["focus"] == 3
    assert resp["counters"] == {"labels": 0, "actions": 1}
    resp = client.post(url, json={"action": "set_k", "k": 4}).json()
    assert len(resp["neighbors"]) == 4
    assert resp["counters"]["actions"] == 2
    assert len(resp["selection"]) == 5
    victim = resp["neighbors"][0]
    resp = client.post(url, json={"action": "deselect", "j": victim}).json()
    assert resp["counters"]["actions"] == 3
    assert victim not in resp["selection"]
    resp = client.post(url, json={"action": "apply_label", "class_id": 1}).json()
    assert resp["written"] == 4
    assert resp["counters"] == {"labels": 4, "actions": 3}
    assert resp["n_labeled"] == 4
    bad = client.post(url, json={"action": "levitate"})
    assert bad.status_code == 400


def test_export_matches_counters(client):
    session_id = make_session(client)
    url = f"/sessions/{session_id}/actions"
    client.post(url, json={"action": "select_focus", "v": 0})
    client.post(url, json={"action": "set_k", "k": 3})
    client.post(url, json={"action": "apply_label", "class_id": 0})
    client.post(url, json={"action": "select_focus", "v": 30})
    client.post(url, json={"action": "set_k", "k": 2})  # left open on purpose
    export = client.get(f"/sessions/{session_id}/export").json()
    rows = list(csv.DictReader(io.StringIO(export["action_log_csv"])))
    assert int(rows[-1]["cumulative_actions"]) == export["counters"]["actions"] == 4
    assert int(rows[-1]["cumulative_labels"]) == export["counters"]["labels"] == 4
    labels = parse_labels_tsv(export["labels_tsv"])
    assert len(labels) == 4
    assert all(name == "class_0" for _, name in labels)


def test_delete_session(client):
    session_id = make_session(client)
    assert client.delete(f"/sessions/{session_id}").json() == {"closed": session_id}
    assert client.get(f"/sessions/{session_id}").status_code == 404


def test_stream_snapshot_and_updates(client):
    session_id = make_session(client)
    url = f"/sessions/{session_id}/actions"
    with client.websocket_connect(f"/sessions/{session_id}/stream") as ws:
        epoch, positions, deltas = unpack_frame(ws.receive_bytes())
        assert epoch == 0
        assert positions.shape == (60, 2)
        assert deltas == []
        client.post(url, json={"action": "select_focus", "v": 2})
        client.post(url, json={"action": "set_k", "k": 1})
        client.post(url, json={"action": "apply_label", "class_id": 2})
        client.post(f"/sessions/{session_id}/control",
                    json={"command": "step", "n": 1})
        epoch, positions, deltas = unpack_frame(ws.receive_bytes())
        assert epoch == 1
        assert (2, 2) in deltas
        assert len(deltas) == 2


def test_stream_unknown_session(client):
    from starlette.websockets import WebSocketDisconnect
    with pytest.raises(WebSocketDisconnect) as err:
        with client.websocket_connect("/sessions/absent/stream") as ws:
            ws.receive_bytes()
    assert err.value.code == 4404


def test_registry_scan_and_thumbnails(tmp_path, dataset):
    root = tmp_path / "data"
    ddir = root / "disk"
    images = ddir / "images"
    images.mkdir(parents=True)
    write_features_tsv(dataset.features, ddir / "features.tsv")
    write_labels_tsv(dataset.true_labels, dataset.class_names, ddir / "labels.tsv")
    (images / "0.png").write_bytes(b"\x89PNG\r\n\x1a\nfake")
    app = create_app(data_root=root)
    with TestClient(app) as client:
        names = [d["name"] for d in client.get("/datasets").json()["datasets"]]
        assert names == ["disk"]
        resp = client.get("/datasets/disk/thumbnail/0")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert client.get("/datasets/disk/thumbnail/1").status_code == 404
