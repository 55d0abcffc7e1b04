"""Functional tests hitting FastAPI endpoints."""
from fastapi.testclient import TestClient

from app.config.settings import Settings
from app.main import create_app


def get_client(bundle=None, **settings) -> TestClient:
    return TestClient(create_app(Settings(**settings), bundle))


def test_health_endpoint() -> None:
    response = get_client().get("/admin/health")
    assert response.status_code == 200
    assert response.text == "ok"


def test_classification_without_a_model_is_unavailable() -> None:
    client = get_client()
    response = client.post("/v1/classifications", json={"text": "w01 mark"})
    assert response.status_code == 503
    assert client.get("/admin/model").json() == {"loaded": False}


def test_classification_returns_the_computational_path(synthetic_bundle) -> None:
    client = get_client(synthetic_bundle)
    response = client.post("/v1/classifications", json={"text": "w01 mark w02", "engine": "dpbert"})
    assert response.status_code == 200
    body = response.json()
    assert body["engine"] == "dpbert"
    assert body["label"] in ("0", "1")
    assert len(body["logits"]) == 2
    assert body["path"] == " ".join(str(layer) for layer in body["executed_layers"])


def test_truncated_and_early_exit_engines_are_served(synthetic_bundle) -> None:
    client = get_client(synthetic_bundle, entropy_threshold=0.0)
    truncated = client.post("/v1/classifications", json={"text": "w03", "engine": "truncated"}).json()
    assert truncated["executed_layers"] == [1, 2, 3]
    exited = client.post("/v1/classifications", json={"text": "w03", "engine": "early_exit"}).json()
    assert exited["exit_layer"] == 3


def test_unknown_engine_is_a_client_error(synthetic_bundle) -> None:
    response = get_client(synthetic_bundle).post("/v1/classifications", json={"text": "w01", "engine": "gpt"})
    assert response.status_code == 422
    assert response.json()["error"] == "ValueError"


def test_model_description_lists_available_engines(synthetic_bundle) -> None:
    synthetic_bundle.exits = None
    body = get_client(synthetic_bundle).get("/admin/model").json()
    assert body["loaded"] is True
    assert body["engines"] == ["backbone", "dpbert", "truncated"]
    assert body["num_layers"] == 3


def test_metrics_endpoint_counts_requests(synthetic_bundle) -> None:
    client = get_client(synthetic_bundle)
    client.post("/v1/classifications", json={"text": "w01", "engine": "backbone"})
    response = client.get("/admin/metrics")
    assert response.status_code == 200
    assert "dplan_inference_requests_total" in response.text
    assert get_client(prometheus_enabled=False).get("/admin/metrics").status_code == 404
