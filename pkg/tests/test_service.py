import json
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from basketrec.corpus import Vocabulary
from basketrec.index import IndexParams, build_catalog, save_index
from basketrec.model import TripleModel, read_model_header, save_model
from basketrec.service import RecommenderService, ServiceConfig, ServiceStartupError, create_app
from basketrec.synthetic import random_model


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    raw = random_model(120, 15, 8, seed=3, dtype=np.float32, scale=0.3)
    vocab = Vocabulary([f"user{u}" for u in range(15)], [f"sku{i}" for i in range(120)])
    model = TripleModel(raw.P, raw.Q, raw.H, vocabulary=vocab, item_counts=np.arange(120)[::-1].copy())
    save_model(model, root / "model.bin")
    save_index(build_catalog(model, "approximate", IndexParams(M=8, efc=60, efs=60)), root / "index.bin")
    save_index(build_catalog(model, "exact", layout="asymmetric"), root / "asym.bin")
    save_index(build_catalog(random_model(5, 1, 8, dtype=np.float32)), root / "other.bin")
    return root


@pytest.fixture(scope="module")
def service(artifacts):
    return RecommenderService(ServiceConfig(artifacts / "model.bin", artifacts / "index.bin")).load()


@pytest.fixture(scope="module")
def client(service):
    return TestClient(create_app(service))


def body_without_latency(resp):
    body = resp.json()
    body.pop("latency_ms")
    return body


class TestStartup:
    def test_missing_index_names_path(self, artifacts):
        missing = artifacts / "nope.bin"
        with pytest.raises(ServiceStartupError, match="nope.bin"):
            RecommenderService(ServiceConfig(artifacts / "model.bin", missing)).load()

    def test_missing_model_names_path(self, artifacts):
        with pytest.raises(ServiceStartupError, match="gone.bin"):
            RecommenderService(ServiceConfig(artifacts / "gone.bin", artifacts / "index.bin")).load()

    def test_corrupt_model(self, artifacts, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"garbage" * 10)
        with pytest.raises(ServiceStartupError, match="bad.bin"):
            RecommenderService(ServiceConfig(bad, artifacts / "index.bin")).load()

    def test_mismatched_index(self, artifacts):
        with pytest.raises(ServiceStartupError, match="does not match"):
            RecommenderService(ServiceConfig(artifacts / "model.bin", artifacts / "other.bin")).load()

    def test_bad_seed_mode(self, artifacts):
        with pytest.raises(ServiceStartupError):
            RecommenderService(ServiceConfig(artifacts / "model.bin", artifacts / "index.bin", seed_mode="often")).load()


class TestHealth:
    def test_loading_then_ready(self, artifacts):
        svc = RecommenderService(ServiceConfig(artifacts / "model.bin", artifacts / "index.bin"))
        c = TestClient(create_app(svc))
        r = c.get("/v1/health")
        assert r.status_code == 503 and r.json()["status"] == "loading"
        assert c.post("/v1/recommendations", json={"basket": ["sku1"]}).status_code == 503
        svc.load()
        r = c.get("/v1/health")
        assert r.status_code == 200 and r.json()["status"] == "ready"

    def test_metadata_matches_file_header(self, client, artifacts):
        meta = client.get("/v1/health").json()["model"]
        header = read_model_header(artifacts / "model.bin")
        assert (meta["n"], meta["m"], meta["d"]) == (header["n"], header["m"], header["d"])
        assert meta["backend"] == "approximate"


class TestRecommendations:
    def test_known_user_known_items(self, client):
        basket = ["sku3", "sku40", "sku77"]
        r = client.post("/v1/recommendations", json={"user_id": "user2", "basket": basket, "k": 10})
        assert r.status_code == 200
        body = r.json()
        ids = [e["item_id"] for e in body["items"]]
        assert len(ids) == 10 and not set(ids) & set(basket)
        scores = [e["score"] for e in body["items"]]
        assert scores == sorted(scores, reverse=True)
        assert body["flags"] == {"fallback": False, "unknown_items": []}
        assert body["latency_ms"] >= 0

    def test_all_unknown_falls_back(self, client):
        r = client.post("/v1/recommendations", json={"basket": ["nope", "zip", "nope"], "k": 3})
        body = r.json()
        assert body["flags"] == {"fallback": True, "unknown_items": ["nope", "zip"]}
        assert [e["item_id"] for e in body["items"]] == ["sku0", "sku1", "sku2"]

    def test_unknown_user_is_anonymous(self, client, service):
        a = client.post("/v1/recommendations", json={"user_id": "stranger", "basket": ["sku9"], "k": 5})
        b = client.post("/v1/recommendations", json={"basket": ["sku9"], "k": 5})
        assert body_without_latency(a) == body_without_latency(b)

    def test_default_k(self, client):
        assert len(client.post("/v1/recommendations", json={"basket": ["sku1"]}).json()["items"]) == 20

    def test_fixed_seed_replay(self, client):
        req = {"user_id": "user1", "basket": [f"sku{i}" for i in range(0, 60, 5)], "k": 15}
        bodies = [body_without_latency(client.post("/v1/recommendations", json=req)) for _ in range(3)]
        assert bodies[0] == bodies[1] == bodies[2]

    def test_concurrent_identical_requests(self, service):
        req = {"user_id": "user4", "basket": [f"sku{i}" for i in range(1, 100, 9)], "k": 12}
        out = []

        def worker():
            body = service.handle_recommend(req)
            body.pop("latency_ms")
            out.append(json.dumps(body, sort_keys=True))

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(out) == 8 and len(set(out)) == 1

    def test_per_request_seed_mode_still_valid(self, artifacts):
        svc = RecommenderService(ServiceConfig(artifacts / "model.bin", artifacts / "index.bin",
                                               seed_mode="per-request")).load()
        basket = [f"sku{i}" for i in range(30)]
        body = svc.handle_recommend({"basket": basket, "k": 10})
        assert len(body["items"]) == 10 and not {e["item_id"] for e in body["items"]} & set(basket)

    def test_asymmetric_index(self, artifacts):
        svc = RecommenderService(ServiceConfig(artifacts / "model.bin", artifacts / "asym.bin")).load()
        assert len(svc.handle_recommend({"user_id": "user0", "basket": ["sku5"], "k": 4})["items"]) == 4

    def test_request_counter(self, artifacts):
        svc = RecommenderService(ServiceConfig(artifacts / "model.bin", artifacts / "index.bin")).load()
        for _ in range(3):
            svc.handle_recommend({"basket": ["sku1"], "k": 1})
        assert svc.handle_health()["requests_served"] == 3

    @pytest.mark.parametrize(
        "payload",
        [
            {"basket": ["sku1"], "k": 0},
            {"basket": ["sku1"], "k": 501},
            {"basket": "sku1"},
            {"user_id": "user1"},
            {"basket": ["sku1"], "k": "many"},
            {"basket": ["sku1"], "extra": 1},
        ],
    )
    def test_validation_errors(self, client, payload):
        r = client.post("/v1/recommendations", json=payload)
        assert 400 <= r.status_code < 500

    def test_malformed_json(self, client):
        r = client.post("/v1/recommendations", content=b"{not json", headers={"content-type": "application/json"})
        assert 400 <= r.status_code < 500

    def test_k_bounds_accepted(self, client):
        assert client.post("/v1/recommendations", json={"basket": ["sku1"], "k": 1}).status_code == 200
        r = client.post("/v1/recommendations", json={"basket": ["sku1"], "k": 500})
        assert r.status_code == 200 and len(r.json()["items"]) <= 500

    def test_internal_failure_is_opaque(self, artifacts, monkeypatch):
        svc = RecommenderService(ServiceConfig(artifacts / "model.bin", artifacts / "index.bin")).load()

        def boom(*a, **kw):
            raise RuntimeError("secret internals")

        monkeypatch.setattr(svc, "handle_recommend", boom)
        c = TestClient(create_app(svc), raise_server_exceptions=False)
        r = c.post("/v1/recommendations", json={"basket": ["sku1"]})
        assert r.status_code == 500
        assert "secret" not in r.text
