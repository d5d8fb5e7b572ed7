import asyncio
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from cartographer import atlas as A
from cartographer import embed
from cartographer.layout import LayoutConfig, compute_layout, read_layout, write_layout
from cartographer.serve import EventHub, ServeConfig, build_app, publish_events


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory, demo_dataset):
    work = tmp_path_factory.mktemp("serve_work")
    matrix = embed.embed_dataset(demo_dataset, "baseline", work / "m.emb")
    layout = compute_layout(matrix.data.astype(np.float64), matrix.ids,
                            LayoutConfig(n_neighbors=8, n_epochs=60, seed=3))
    write_layout(work / "layout.lay", layout)
    A.build(layout, demo_dataset, work / "atlas", zoom_levels=3, base_budget=8)
    return ServeConfig(dataset_dir=demo_dataset, atlas_dir=work / "atlas",
                       layout_path=work / "layout.lay")


@pytest.fixture(scope="module")
def client(artifacts):
    app = build_app(artifacts)
    with TestClient(app) as c:
        yield c


class TestEndpoints:
    def test_stats(self, client):
        stats = client.get("/api/stats").json()
        assert stats["objects"] == 40
        assert stats["points"] == 40
        assert stats["zoom_levels"] == 3
        assert len(stats["bounds"]) == 4
        assert stats["build_hash"]

    def test_object_metadata_passthrough(self, client, demo_dataset):
        from cartographer import dataset as ds

        doc = client.get("/api/objects/demo-0001").json()
        disk = json.loads(ds.meta_path(Path(demo_dataset),
                                       "demo-0001").read_text())
        assert doc == disk

    def test_unknown_object_404(self, client):
        resp = client.get("/api/objects/absent")
        assert resp.status_code == 404
        assert "error" in resp.json()

    def test_layout_file_served_verbatim(self, client, artifacts):
        body = client.get("/api/layout").text
        assert body == Path(artifacts.layout_path).read_text()

    def test_tile_matches_disk(self, client, artifacts):
        tile = client.get("/api/tiles/0/0/0").json()
        points = A.read_tile_points(artifacts.atlas_dir, 0, 0, 0)
        assert len(tile["members"]) == len(points) == 40
        assert tile["sprite"] == "/api/sprites/0/0_0.png"
        samples = [m for m in tile["members"] if m["sample"]]
        assert len(samples) == 8    # base budget
        assert set(tile["sprite_map"]) == {m["id"] for m in samples}

    def test_tile_out_of_range_404(self, client):
        assert client.get("/api/tiles/9/0/0").status_code == 404
        assert client.get("/api/tiles/1/5/0").status_code == 404

    def test_sprite_served_with_cache_headers(self, client):
        resp = client.get("/api/sprites/0/0_0.png")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert "immutable" in resp.headers["cache-control"]
        assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_missing_sprite_404(self, client):
        assert client.get("/api/sprites/0/9_9.png").status_code == 404

    def test_viewport_matches_brute_force(self, client, artifacts):
        layout = read_layout(artifacts.layout_path)
        atlas = A.load_atlas(artifacts.atlas_dir, layout)
        rng = np.random.default_rng(4)
        x0b, y0b, x1b, y1b = layout.bounds
        for _ in range(50):
            x0 = rng.uniform(x0b - 1, x1b)
            y0 = rng.uniform(y0b - 1, y1b)
            x1 = x0 + rng.uniform(0, (x1b - x0b))
            y1 = y0 + rng.uniform(0, (y1b - y0b))
            zoom = int(rng.integers(0, 3))
            got = client.get("/api/viewport", params=dict(
                x0=x0, y0=y0, x1=x1, y1=y1, zoom=zoom)).json()
            inside = ((layout.coords[:, 0] >= x0) & (layout.coords[:, 0] <= x1)
                      & (layout.coords[:, 1] >= y0) & (layout.coords[:, 1] <= y1))
            flags = atlas.sampled_at(zoom)
            assert len(got["samples"]) == int((inside & flags).sum())
            assert len(got["circles"]) == int((inside & ~flags).sum())

    def test_malformed_request_400(self, client):
        resp = client.get("/api/viewport?x0=abc&y0=0&x1=1&y1=1&zoom=0")
        assert resp.status_code == 400
        assert "error" in resp.json()

    def test_zoom_out_of_range_400(self, client):
        resp = client.get("/api/viewport",
                          params=dict(x0=0, y0=0, x1=1, y1=1, zoom=99))
        assert resp.status_code == 400

    def test_responses_byte_identical(self, client):
        url = "/api/viewport?x0=-5&y0=-5&x1=5&y1=5&zoom=1"
        bodies = {client.get(url).content for _ in range(5)}
        assert len(bodies) == 1
        assert len({client.get("/api/stats").content for _ in range(3)}) == 1

    def test_concurrent_equals_serial(self, client):
        urls = [f"/api/viewport?x0=-9&y0=-9&x1={x1}&y1=9&zoom=1"
                for x1 in np.linspace(-8, 9, 64)]
        serial = [client.get(u).content for u in urls]
        with ThreadPoolExecutor(max_workers=16) as pool:
            parallel = list(pool.map(lambda u: client.get(u).content, urls))
        assert serial == parallel


class TestValidation:
    def test_missing_paths_fail_fast(self, tmp_path):
        config = ServeConfig(dataset_dir=tmp_path / "no",
                             atlas_dir=tmp_path / "no",
                             layout_path=tmp_path / "no.lay")
        with pytest.raises(FileNotFoundError):
            build_app(config)


class TestEventHub:
    def test_fan_out_order(self):
        hub = EventHub(queue_size=16)
        _, a = hub.attach()
        _, b = hub.attach()
        for i in range(5):
            hub.publish(f"msg-{i}")
        got_a = [a.queue.get_nowait() for _ in range(5)]
        got_b = [b.queue.get_nowait() for _ in range(5)]
        assert got_a == got_b == [f"msg-{i}" for i in range(5)]

    def test_overflow_disconnects_only_slow_client(self):
        hub = EventHub(queue_size=256)
        slow_id, slow = hub.attach()
        _, fast = hub.attach()
        drained = []
        for i in range(300):
            hub.publish(f"e-{i}")
            while not fast.queue.empty():
                drained.append(fast.queue.get_nowait())
        assert slow.dropped.is_set()
        assert hub.client_count == 1
        while not fast.queue.empty():
            drained.append(fast.queue.get_nowait())
        assert drained == [f"e-{i}" for i in range(300)]

    def test_no_clients_drops_silently(self):
        hub = EventHub()
        assert hub.publish("nobody home") == 0

    def test_capacity_limit(self):
        hub = EventHub(max_clients=2)
        assert hub.attach() is not None
        assert hub.attach() is not None
        assert hub.attach() is None

    def test_publish_events_serializes(self):
        from cartographer.gesture import InterfaceEvent

        hub = EventHub()
        _, client = hub.attach()
        events = [InterfaceEvent("ZoomIn", 1.5),
                  InterfaceEvent("CursorMove", 1.6, 0.0, x=0.25, y=0.75)]
        assert publish_events(hub, events) == 2
        assert client.queue.get_nowait() == "1.500\tZoomIn\t1.000000"
        assert client.queue.get_nowait() == "1.600\tCursorMove\t0.250000,0.750000"


class TestWebsockets:
    def test_single_client_ordered_delivery(self, client):
        with client.websocket_connect("/ws/events") as ws:
            resp = client.post("/api/events", json={
                "events": ["0.1\tZoomIn\t1.0", "0.2\tScrollUp\t1.0",
                           "0.3\tRefresh\t1.0"]})
            assert resp.json()["delivered"] == 3
            assert ws.receive_text() == "0.1\tZoomIn\t1.0"
            assert ws.receive_text() == "0.2\tScrollUp\t1.0"
            assert ws.receive_text() == "0.3\tRefresh\t1.0"

    def test_two_clients_identical_sequences(self, client):
        with client.websocket_connect("/ws/events") as ws1, \
                client.websocket_connect("/ws/events") as ws2:
            client.post("/api/events",
                        json={"events": ["1\tZoomIn\t1.0", "2\tZoomOut\t1.0"]})
            seq1 = [ws1.receive_text(), ws1.receive_text()]
            seq2 = [ws2.receive_text(), ws2.receive_text()]
            assert seq1 == seq2 == ["1\tZoomIn\t1.0", "2\tZoomOut\t1.0"]

    def test_bad_events_payload_400(self, client):
        resp = client.post("/api/events", json={"events": "not-a-list"})
        assert resp.status_code == 400

    def test_static_ui_mount(self, artifacts, tmp_path):
        ui = tmp_path / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>nebula</body></html>")
        config = ServeConfig(dataset_dir=artifacts.dataset_dir,
                             atlas_dir=artifacts.atlas_dir,
                             layout_path=artifacts.layout_path, ui_dir=ui)
        with TestClient(build_app(config)) as c:
            resp = c.get("/")
            assert resp.status_code == 200
            assert "nebula" in resp.text
            assert c.get("/api/stats").status_code == 200
