import threading

import numpy as np
import pytest

from ira.errors import (
    DimensionMismatch,
    RetriesExhausted,
    ServiceError,
    Timeout,
    UnreadableImage,
)
from ira.gateway import (
    CompletionRequest,
    EmbeddingVector,
    ModelGateway,
    RateLimiter,
    ServiceEndpointConfig,
    stub_endpoints,
)
from ira.stubs import StubFixtures

from conftest import DATA_DIR
from testserver import FakeModelServer


def http_endpoints(url, max_retries=0, timeout=5.0, embed_dim=None):
    return {
        role: ServiceEndpointConfig(
            role=role,
            base_url=url,
            model_name="fake-model",
            timeout=timeout,
            max_retries=max_retries,
            embed_dim=embed_dim if role.startswith("embed") else None,
        )
        for role in ("completion", "vqa", "caption", "embed_text", "embed_image")
    }


class TestRequestValidation:
    def test_zero_max_tokens_rejected_before_any_call(self):
        with pytest.raises(ValueError):
            CompletionRequest(prompt="ping", max_tokens=0)

    def test_empty_prompt_rejected(self):
        with pytest.raises(ValueError):
            CompletionRequest(prompt="", max_tokens=5)

    def test_endpoint_validation(self):
        with pytest.raises(ValueError):
            ServiceEndpointConfig(role="completion", base_url="stub:1", model_name="m", timeout=0)
        with pytest.raises(ValueError):
            ServiceEndpointConfig(role="nope", base_url="stub:1", model_name="m")


class TestStubBackends:
    def test_complete_deterministic(self):
        g1 = ModelGateway(stub_endpoints(seed=7))
        g2 = ModelGateway(stub_endpoints(seed=7))
        req = CompletionRequest(prompt="ping", max_tokens=8)
        assert g1.complete(req) == g2.complete(req)
        assert g1.complete(req) != ModelGateway(stub_endpoints(seed=8)).complete(req)

    def test_vqa_and_caption_deterministic(self, stub_gateway):
        a1 = stub_gateway.vqa_answer("img.jpg", "what is it?")
        a2 = stub_gateway.vqa_answer("img.jpg", "what is it?")
        assert a1 == a2
        assert stub_gateway.caption("img.jpg") == stub_gateway.caption("img.jpg")

    def test_caption_payloads_differ_with_question(self, stub_gateway):
        stub_gateway.caption("img.jpg")
        stub_gateway.caption("img.jpg", question="what color?")
        payloads = [payload for role, payload in stub_gateway.request_log if role == "caption"]
        assert "question" not in payloads[0]
        assert payloads[1]["question"] == "what color?"
        assert payloads[0] != payloads[1]

    def test_embed_total_function_and_unit_norm(self, stub_gateway):
        vec = stub_gateway.embed_text("")
        assert vec.dim == 16
        assert vec.normalized
        assert abs(np.linalg.norm(vec.values) - 1.0) < 1e-9

    def test_embed_bitwise_identical(self, stub_gateway):
        v1 = stub_gateway.embed_text("skier")
        v2 = stub_gateway.embed_text("skier")
        assert np.array_equal(v1.values, v2.values)

    def test_fixture_ham(self):
        gateway = ModelGateway(
            stub_endpoints(seed=7), stub_fixtures=StubFixtures.load(DATA_DIR / "stub_fixtures.json")
        )
        assert gateway.vqa_answer("img_v1.jpg", "what is in the sandwich") == "ham"
        assert gateway.caption("some/path/img_ski.jpg") == "A woman on skis in the snow near a tree."

    def test_bounded_in_flight(self, monkeypatch):
        import time as time_mod

        from ira import stubs as stubs_mod

        state = {"active": 0, "peak": 0}
        lock = threading.Lock()
        original = stubs_mod.StubBackend.complete

        def slow_complete(self, prompt, max_tokens, stop_sequences):
            with lock:
                state["active"] += 1
                state["peak"] = max(state["peak"], state["active"])
            time_mod.sleep(0.02)
            try:
                return original(self, prompt, max_tokens, stop_sequences)
            finally:
                with lock:
                    state["active"] -= 1

        monkeypatch.setattr(stubs_mod.StubBackend, "complete", slow_complete)
        gateway = ModelGateway(stub_endpoints(seed=7), max_in_flight=2)
        threads = [
            threading.Thread(
                target=lambda i=i: gateway.complete(CompletionRequest(prompt=f"p{i}", max_tokens=4))
            )
            for i in range(8)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert state["peak"] <= 2
        assert gateway.call_count("completion") == 8

    def test_stub_thread_safety(self, stub_gateway):
        results = []

        def worker(i):
            req = CompletionRequest(prompt=f"ping {i % 4}", max_tokens=4)
            results.append((i % 4, stub_gateway.complete(req)))

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(32)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert stub_gateway.call_count("completion") == 32
        by_prompt = {}
        for key, text in results:
            by_prompt.setdefault(key, set()).add(text)
        assert all(len(texts) == 1 for texts in by_prompt.values())


class TestCache:
    def test_second_call_hits_cache(self, tmp_path):
        gateway = ModelGateway(stub_endpoints(seed=7), cache_dir=tmp_path / "cache")
        req = CompletionRequest(prompt="ping", max_tokens=8)
        first = gateway.complete(req)
        assert gateway.call_count("completion") == 1
        second = gateway.complete(req)
        assert gateway.call_count("completion") == 1  # zero backend operations
        assert first == second

    def test_cache_round_trip_exact_vector(self, tmp_path):
        gateway = ModelGateway(stub_endpoints(seed=7, embed_dim=16), cache_dir=tmp_path / "c")
        v1 = gateway.embed_text("skier")
        fresh = ModelGateway(stub_endpoints(seed=7, embed_dim=16), cache_dir=tmp_path / "c")
        v2 = fresh.embed_text("skier")
        assert fresh.call_count("embed_text") == 0
        assert np.array_equal(v1.values, v2.values)

    def test_cache_keyed_by_model_and_request(self, tmp_path):
        gateway = ModelGateway(stub_endpoints(seed=7), cache_dir=tmp_path / "cache")
        gateway.complete(CompletionRequest(prompt="ping", max_tokens=8))
        gateway.complete(CompletionRequest(prompt="ping", max_tokens=9))
        assert gateway.call_count("completion") == 2

    def test_env_cache_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("IRA_CACHE_DIR", str(tmp_path / "envcache"))
        gateway = ModelGateway(stub_endpoints(seed=7))
        gateway.complete(CompletionRequest(prompt="ping", max_tokens=8))
        assert (tmp_path / "envcache").exists()


class TestRateLimiter:
    def test_never_exceeds_rate_in_any_window(self):
        clock = {"now": 0.0}
        issued = []

        def time_fn():
            return clock["now"]

        def sleep_fn(seconds):
            clock["now"] += seconds

        limiter = RateLimiter(rate=3, time_fn=time_fn, sleep_fn=sleep_fn)
        for _ in range(10):
            limiter.acquire()
            issued.append(clock["now"])
        for i in range(len(issued)):
            window = [t for t in issued if issued[i] - 1.0 < t <= issued[i]]
            assert len(window) <= 3

    def test_limited_gateway_sleeps(self):
        clock = {"now": 0.0}
        endpoints = stub_endpoints(seed=7)
        endpoints["completion"].rate_limit = 2
        gateway = ModelGateway(
            endpoints,
            time_fn=lambda: clock["now"],
            sleep_fn=lambda s: clock.__setitem__("now", clock["now"] + s),
        )
        for i in range(5):
            gateway.complete(CompletionRequest(prompt=f"p{i}", max_tokens=4))
        assert clock["now"] > 0  # had to wait at least once


class TestHttpTransport:
    def test_complete_round_trip(self):
        with FakeModelServer(lambda path, payload, headers: (200, {"text": "pong"})) as server:
            gateway = ModelGateway(http_endpoints(server.url))
            assert gateway.complete(CompletionRequest(prompt="ping", max_tokens=4)) == "pong"
            path, payload, _ = server.received[0]
            assert path == "/v1/complete"
            assert payload["prompt"] == "ping"
            assert payload["max_tokens"] == 4

    def test_bearer_header_from_env(self, monkeypatch):
        monkeypatch.setenv("IRA_API_KEY", "sekret")
        with FakeModelServer(lambda p, payload, h: (200, {"text": "ok"})) as server:
            gateway = ModelGateway(http_endpoints(server.url))
            gateway.complete(CompletionRequest(prompt="ping", max_tokens=4))
            headers = server.received[0][2]
            assert headers.get("Authorization") == "Bearer sekret"

    def test_retry_then_success(self):
        sleeps = []
        with FakeModelServer() as server:
            server.script = [(503, {"error": "warming"}), (503, {"error": "warming"}), (200, {"text": "ok"})]
            gateway = ModelGateway(
                http_endpoints(server.url, max_retries=2), sleep_fn=sleeps.append
            )
            assert gateway.complete(CompletionRequest(prompt="ping", max_tokens=4)) == "ok"
        assert len(server.received) == 3
        assert len(sleeps) == 2
        # exponential backoff starting at 1s, doubling, jittered +-20%
        assert 0.8 <= sleeps[0] <= 1.2
        assert 1.6 <= sleeps[1] <= 2.4

    def test_retries_exhausted(self):
        with FakeModelServer() as server:
            server.script = [(503, {"error": "down"})]
            gateway = ModelGateway(http_endpoints(server.url, max_retries=2), sleep_fn=lambda s: None)
            with pytest.raises(RetriesExhausted):
                gateway.complete(CompletionRequest(prompt="ping", max_tokens=4))
        assert len(server.received) == 3

    def test_non_transient_error_not_retried(self):
        with FakeModelServer() as server:
            server.script = [(404, {"error": "bad route"})]
            gateway = ModelGateway(http_endpoints(server.url, max_retries=3), sleep_fn=lambda s: None)
            with pytest.raises(ServiceError) as excinfo:
                gateway.complete(CompletionRequest(prompt="ping", max_tokens=4))
            assert excinfo.value.status == 404
        assert len(server.received) == 1

    def test_timeout(self):
        with FakeModelServer(lambda p, payload, h: (200, {"text": "slow"})) as server:
            server.delay = 0.6
            gateway = ModelGateway(http_endpoints(server.url, max_retries=0, timeout=0.2))
            with pytest.raises(Timeout):
                gateway.complete(CompletionRequest(prompt="ping", max_tokens=4))

    def test_unreadable_image_before_any_request(self, tmp_path):
        with FakeModelServer(lambda p, payload, h: (200, {"answer": "x"})) as server:
            gateway = ModelGateway(http_endpoints(server.url))
            with pytest.raises(UnreadableImage):
                gateway.vqa_answer(str(tmp_path / "missing.jpg"), "what?")
            assert server.received == []

    def test_vqa_sends_image_bytes(self, tmp_path):
        image = tmp_path / "img.jpg"
        image.write_bytes(b"JPEGDATA")
        with FakeModelServer(lambda p, payload, h: (200, {"answer": "ham"})) as server:
            gateway = ModelGateway(http_endpoints(server.url))
            assert gateway.vqa_answer(str(image), "what is in the sandwich") == "ham"
            payload = server.received[0][1]
            assert payload["question"] == "what is in the sandwich"
            assert payload["image_b64"] == "SlBFR0RBVEE="

    def test_embed_dim_mismatch(self):
        with FakeModelServer(
            lambda p, payload, h: (200, {"vector": [0.0] * 768, "dim": 512})
        ) as server:
            gateway = ModelGateway(http_endpoints(server.url))
            with pytest.raises(DimensionMismatch):
                gateway.embed_text("hello")

    def test_embed_declared_config_dim_mismatch(self):
        with FakeModelServer(
            lambda p, payload, h: (200, {"vector": [1.0] * 32, "dim": 32})
        ) as server:
            gateway = ModelGateway(http_endpoints(server.url, embed_dim=16))
            with pytest.raises(DimensionMismatch):
                gateway.embed_text("hello")

    def test_embed_normalized_at_boundary(self):
        with FakeModelServer(
            lambda p, payload, h: (200, {"vector": [3.0, 4.0], "dim": 2})
        ) as server:
            gateway = ModelGateway(http_endpoints(server.url))
            vec = gateway.embed_text("hello")
            assert vec.normalized
            assert np.allclose(vec.values, [0.6, 0.8])


class TestEmbeddingVector:
    def test_normalized_flag_enforced(self):
        with pytest.raises(DimensionMismatch):
            EmbeddingVector(values=np.array([1.0, 1.0]), dim=2, normalized=True)

    def test_zero_vector_not_normalized(self):
        vec = EmbeddingVector.from_raw([0.0, 0.0])
        assert not vec.normalized
