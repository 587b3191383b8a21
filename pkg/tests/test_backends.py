import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from viewforge.backends import (
    BackendDescriptor,
    EmbeddingVector,
    GenerationRequest,
    StubEmbedBackend,
    StubGenerationBackend,
    StubSegmentBackend,
    StubVQABackend,
    TraceLog,
    apply_env_overrides,
    make_http_backend,
    make_stub_backend,
    resolve_backend,
)
from viewforge.backends.http import (
    HttpEmbedBackend,
    HttpGenerationBackend,
    HttpSegmentBackend,
    HttpVQABackend,
)
from viewforge.errors import (
    BackendError,
    BackendTimeoutError,
    BackendUnavailableError,
)
from viewforge.images import raster_from_base64, raster_to_base64


def rgb(seed=0, size=16):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)


# ---------------------------------------------------------------- descriptors


def test_descriptor_validation():
    with pytest.raises(ValueError):
        BackendDescriptor(kind="nonsense")
    with pytest.raises(ValueError):
        BackendDescriptor(kind="vqa", seed_policy="whenever")
    with pytest.raises(ValueError):
        # stub transports are replayable only under caller-provided seeds
        BackendDescriptor(kind="vqa", seed_policy="fixed")
    d = BackendDescriptor(kind="vqa")
    assert d.is_stub
    assert not BackendDescriptor(kind="vqa", endpoint="http://x").is_stub


def test_generation_request_validation():
    req = GenerationRequest(prompt="p", seed=1)
    req.validate_for("text2image")
    with pytest.raises(ValueError):
        req.validate_for("image2image")
    with pytest.raises(ValueError):
        req.validate_for("edge2image")
    GenerationRequest(prompt="p", seed=1, init_image=rgb()).validate_for(
        "image2image"
    )
    GenerationRequest(
        prompt="p", seed=1, condition_image=rgb()
    ).validate_for("edge2image")


def test_embedding_vector_checks():
    v = EmbeddingVector(values=np.array([3.0, 4.0]), modality="image")
    assert v.dim == 2
    assert v.cosine(v) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        EmbeddingVector(values=np.array([1.0, np.nan]), modality="image")
    zero = EmbeddingVector(values=np.zeros(2), modality="image")
    assert zero.cosine(v) == 0.0


def test_cosine_is_symmetric_and_bounded():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = EmbeddingVector(values=rng.standard_normal(8), modality="image")
        b = EmbeddingVector(values=rng.standard_normal(8), modality="image")
        assert a.cosine(b) == pytest.approx(b.cosine(a))
        assert -1.0 - 1e-12 <= a.cosine(b) <= 1.0 + 1e-12


# ----------------------------------------------------------------- stub: vqa


def test_stub_vqa_deterministic_and_registerable():
    vqa = StubVQABackend()
    img = rgb(1)
    first = vqa.answer(img, "What is this?")
    assert first == vqa.answer(img, "What is this?")
    assert first  # non-empty default answer

    vqa.register(img, "What is this?", "a 1967 VW Beetle")
    assert vqa.answer(img, "What is this?") == "a 1967 VW Beetle"
    # other questions keep the default behavior
    assert vqa.answer(img, "Other question?") != "a 1967 VW Beetle"


def test_stub_vqa_rejects_empty_question():
    vqa = StubVQABackend()
    with pytest.raises(ValueError):
        vqa.answer(rgb(), "")
    with pytest.raises(ValueError):
        vqa.yes_probability(rgb(), "")


def test_stub_vqa_yes_probability():
    vqa = StubVQABackend()
    p = vqa.yes_probability(rgb(2), "Does it show a car?")
    assert 0.0 <= p <= 1.0
    assert p == vqa.yes_probability(rgb(2), "Does it show a car?")
    vqa.set_yes_probability(0.5)
    assert vqa.yes_probability(rgb(3), "anything?") == 0.5


# ----------------------------------------------------------- stub: generation


def test_stub_generation_pure_function_of_request():
    a = StubGenerationBackend("text2image")
    b = StubGenerationBackend("text2image")
    req = GenerationRequest(prompt="a blue truck", seed=42)
    assert np.array_equal(a.generate(req), b.generate(req))


def test_stub_generation_sensitive_to_seed_and_prompt():
    backend = StubGenerationBackend("text2image")
    base = backend.generate(GenerationRequest(prompt="a blue truck", seed=1))
    other_seed = backend.generate(GenerationRequest(prompt="a blue truck", seed=2))
    other_prompt = backend.generate(GenerationRequest(prompt="a red truck", seed=1))
    assert not np.array_equal(base, other_seed)
    assert not np.array_equal(base, other_prompt)


def test_stub_generation_respects_size():
    backend = StubGenerationBackend("text2image")
    out = backend.generate(
        GenerationRequest(prompt="p", seed=0, width=48, height=64)
    )
    assert out.shape == (64, 48, 3)
    assert out.dtype == np.uint8


def test_stub_generation_echoes_half_size_init():
    backend = StubGenerationBackend("image2image")
    init = rgb(5, size=32)
    out = backend.generate(
        GenerationRequest(prompt="p", seed=0, init_image=init, width=64, height=64)
    )
    assert np.array_equal(out[:32, :32], init)


def test_stub_generation_darkens_condition_edges():
    backend = StubGenerationBackend("edge2image")
    cond = np.zeros((64, 64), dtype=np.uint8)
    cond[20:40, 20:40] = 255
    out = backend.generate(
        GenerationRequest(
            prompt="p", seed=0, condition_image=cond, width=64, height=64
        )
    )
    # conditioned pixels were scaled by 0.25 after all drawing
    assert out[cond > 127].max() <= 64


def test_stub_generation_validates_required_images():
    with pytest.raises(ValueError):
        StubGenerationBackend("image2image").generate(
            GenerationRequest(prompt="p", seed=0)
        )
    with pytest.raises(ValueError):
        StubGenerationBackend("edge2image").generate(
            GenerationRequest(prompt="p", seed=0)
        )


# ---------------------------------------------------------------- stub: embed


def test_stub_embed_unit_norm_and_deterministic():
    embed = StubEmbedBackend()
    img = rgb(7)
    v1 = embed.embed_image(img)
    v2 = embed.embed_image(img)
    assert np.array_equal(v1.values, v2.values)
    assert abs(np.linalg.norm(v1.values) - 1.0) < 1e-12
    assert v1.dim == 256
    assert v1.modality == "image"


def test_stub_embed_modalities_are_distinct_spaces():
    embed = StubEmbedBackend()
    img = rgb(8)
    vi = embed.embed_image(img)
    vt = embed.embed_text("a photo")
    vm = embed.embed_multimodal(img, "a photo")
    assert not np.array_equal(vi.values, vt.values)
    assert not np.array_equal(vi.values, vm.values)
    assert vt.modality == "text" and vm.modality == "multimodal"
    with pytest.raises(ValueError):
        embed.embed_text("")
    with pytest.raises(ValueError):
        embed.embed_multimodal(img, "")


# -------------------------------------------------------------- stub: segment


def test_stub_segment_finds_the_blob():
    img = np.full((32, 32, 3), 10, dtype=np.uint8)
    img[8:20, 8:24] = (200, 50, 50)
    result = StubSegmentBackend().segment_foreground(img)
    assert not result.is_empty
    expected = np.zeros((32, 32), dtype=np.uint8)
    expected[8:20, 8:24] = 1
    assert np.array_equal(result.mask, expected)


def test_stub_segment_picks_largest_component():
    img = np.full((32, 32, 3), 10, dtype=np.uint8)
    img[2:5, 2:5] = (200, 0, 0)       # 9 px
    img[10:26, 10:26] = (0, 200, 0)   # 256 px
    mask = StubSegmentBackend().segment_foreground(img).mask
    assert mask[12, 12] == 1
    assert mask[3, 3] == 0


def test_stub_segment_constant_image_is_empty():
    result = StubSegmentBackend().segment_foreground(
        np.full((16, 16, 3), 33, dtype=np.uint8)
    )
    assert result.is_empty
    assert result.mask.sum() == 0


def test_stub_segment_accepts_grayscale():
    img = np.full((16, 16), 5, dtype=np.uint8)
    img[4:12, 4:12] = 250
    result = StubSegmentBackend().segment_foreground(img)
    assert not result.is_empty
    assert result.mask[8, 8] == 1


# -------------------------------------------------------------------- factory


def test_make_stub_backend_dispatch():
    assert isinstance(
        make_stub_backend(BackendDescriptor(kind="vqa")), StubVQABackend
    )
    assert isinstance(
        make_stub_backend(BackendDescriptor(kind="edge2image")),
        StubGenerationBackend,
    )
    assert isinstance(
        make_stub_backend(BackendDescriptor(kind="embed")), StubEmbedBackend
    )
    assert isinstance(
        make_stub_backend(BackendDescriptor(kind="segment")), StubSegmentBackend
    )
    with pytest.raises(ValueError):
        make_stub_backend(BackendDescriptor(kind="vqa", endpoint="http://x"))


def test_resolve_backend_dispatch():
    assert isinstance(resolve_backend(BackendDescriptor(kind="vqa")), StubVQABackend)
    http = resolve_backend(BackendDescriptor(kind="vqa", endpoint="http://host"))
    assert isinstance(http, HttpVQABackend)


# ---------------------------------------------------------------------- trace


def test_trace_truncates_existing_file(tmp_path):
    path = tmp_path / "trace.jsonl"
    path.write_text("stale line\n")
    TraceLog(path)
    assert path.read_text() == ""


def test_trace_records_and_reads_back(tmp_path):
    path = tmp_path / "trace.jsonl"
    log = TraceLog(path)
    with log.stage("structure"):
        log.record("text2image", "generate", "req1", "resp1", 0.01)
        with log.stage("structure.inner"):
            log.record("embed", "embed", "req2", "resp2", 0.02)
        log.record("image2image", "generate", "req3", "resp3", 0.03)
    log.record("vqa", "vqa_answer", "req4", "resp4", 0.04)

    assert [r["stage"] for r in log.records] == [
        "structure", "structure.inner", "structure", None
    ]
    assert log.count() == 4
    assert log.count(operation="generate") == 2
    assert log.count(stage="structure") == 2
    assert log.count(kind="embed") == 1
    assert log.count(operation="generate", stage="structure", kind="text2image") == 1

    records = TraceLog.read(path)
    assert len(records) == 4
    assert TraceLog.content_digest_of_records(records) == log.content_digest()


def test_trace_digest_ignores_latency_and_wall_time():
    a, b = TraceLog(), TraceLog()
    a.record("vqa", "vqa_answer", "r", "s", 0.5)
    time.sleep(0.01)
    b.record("vqa", "vqa_answer", "r", "s", 123.0)
    assert a.records[0]["latency_s"] != b.records[0]["latency_s"]
    assert a.content_digest() == b.content_digest()


def test_trace_digest_sensitive_to_order_and_content():
    a, b, c = TraceLog(), TraceLog(), TraceLog()
    a.record("vqa", "vqa_answer", "r1", "s1", 0)
    a.record("embed", "embed", "r2", "s2", 0)
    b.record("embed", "embed", "r2", "s2", 0)
    b.record("vqa", "vqa_answer", "r1", "s1", 0)
    c.record("vqa", "vqa_answer", "r1", "DIFFERENT", 0)
    c.record("embed", "embed", "r2", "s2", 0)
    assert a.content_digest() != b.content_digest()
    assert a.content_digest() != c.content_digest()


def test_stub_backends_record_into_trace():
    log = TraceLog()
    vqa = StubVQABackend(trace=log)
    gen = StubGenerationBackend("text2image", trace=log)
    with log.stage("demo"):
        vqa.answer(rgb(), "What is it?")
        gen.generate(GenerationRequest(prompt="p", seed=0))
    assert log.count(kind="vqa", stage="demo") == 1
    assert log.count(operation="generate", stage="demo") == 1


# ------------------------------------------------------------- http transport


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_POST(self):
        try:
            self._respond()
        except OSError:
            pass  # client gave up (timeout tests)

    def _respond(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length) or b"{}")
        server = self.server
        server.seen.append({"path": self.path, "payload": payload})
        plan = server.plan

        if plan.get("sleep"):
            time.sleep(plan["sleep"])
        if plan.get("fail_times", 0) > 0:
            plan["fail_times"] -= 1
            self._send(500, b"boom", "text/plain")
            return
        if plan.get("always_status"):
            self._send(plan["always_status"], b"nope", "text/plain")
            return
        if plan.get("raw_body") is not None:
            self._send(200, plan["raw_body"], "text/plain")
            return
        if plan.get("respond") is not None:
            self._send(200, json.dumps(plan["respond"]).encode(), "application/json")
            return
        self._send(200, json.dumps(self._route(payload)).encode(), "application/json")

    def _send(self, status, body, ctype):
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _route(self, payload):
        if self.path == "/vqa":
            if payload.get("mode") == "answer":
                return {"answer": "a red coupe"}
            return {"probability": 0.625}
        if self.path.startswith("/generate/"):
            img = np.full((8, 8, 3), 123, dtype=np.uint8)
            return {"image": raster_to_base64(img)}
        if self.path == "/embed":
            return {"values": [3.0, 4.0]}
        if self.path == "/segment":
            mask = np.zeros((8, 8), dtype=np.uint8)
            mask[:4, :] = 255
            return {"mask": raster_to_base64(mask)}
        return {}


@pytest.fixture
def http_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.daemon_threads = True
    server.plan = {}
    server.seen = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{server.server_address[1]}"
    yield url, server
    server.shutdown()
    server.server_close()


def _descriptor(kind, url, timeout_s=5.0, seed_policy="caller"):
    return BackendDescriptor(
        kind=kind, endpoint=url, model_id="remote-model",
        timeout_s=timeout_s, seed_policy=seed_policy,
    )


def test_http_vqa_answer_and_probability(http_server):
    url, server = http_server
    backend = HttpVQABackend(_descriptor("vqa", url))
    img = rgb(11)
    assert backend.answer(img, "What is this?") == "a red coupe"
    assert backend.yes_probability(img, "Is it a car?") == 0.625

    sent = server.seen[0]["payload"]
    assert sent["mode"] == "answer"
    assert sent["question"] == "What is this?"
    assert np.array_equal(raster_from_base64(sent["image"]), img)


def test_http_generate_sends_idempotency_key(http_server):
    url, server = http_server
    backend = HttpGenerationBackend(_descriptor("edge2image", url))
    cond = np.zeros((8, 8), dtype=np.uint8)
    out = backend.generate(
        GenerationRequest(prompt="p", seed=3, condition_image=cond)
    )
    assert out.shape == (8, 8, 3)
    payload = server.seen[0]["payload"]
    assert server.seen[0]["path"] == "/generate/edge2image"
    assert "idempotency_key" in payload
    assert payload["seed"] == 3


def test_http_generate_random_policy_no_idempotency(http_server):
    url, server = http_server
    backend = HttpGenerationBackend(
        _descriptor("text2image", url, seed_policy="random")
    )
    backend.generate(GenerationRequest(prompt="p", seed=3))
    assert "idempotency_key" not in server.seen[0]["payload"]


def test_http_generate_retries_on_500(http_server):
    url, server = http_server
    server.plan["fail_times"] = 2
    backend = HttpGenerationBackend(
        _descriptor("text2image", url), backoff_s=0.01
    )
    out = backend.generate(GenerationRequest(prompt="p", seed=0))
    assert out.shape == (8, 8, 3)
    assert len(server.seen) == 3


def test_http_generate_exhausted_retries(http_server):
    url, server = http_server
    server.plan["fail_times"] = 99
    backend = HttpGenerationBackend(
        _descriptor("text2image", url), backoff_s=0.01
    )
    with pytest.raises(BackendError) as err:
        backend.generate(GenerationRequest(prompt="p", seed=0))
    assert err.value.retry_meta == {"attempts": 3, "last_status": 500}
    assert len(server.seen) == 3


def test_http_no_retry_on_client_error(http_server):
    url, server = http_server
    server.plan["always_status"] = 404
    backend = HttpVQABackend(_descriptor("vqa", url), backoff_s=0.01)
    with pytest.raises(BackendError):
        backend.answer(rgb(), "q?")
    assert len(server.seen) == 1


def test_http_non_idempotent_single_attempt(http_server):
    url, server = http_server
    server.plan["fail_times"] = 1
    backend = HttpGenerationBackend(
        _descriptor("text2image", url, seed_policy="random"), backoff_s=0.01
    )
    with pytest.raises(BackendError):
        backend.generate(GenerationRequest(prompt="p", seed=0))
    assert len(server.seen) == 1


def test_http_non_json_body_raises(http_server):
    url, server = http_server
    server.plan["raw_body"] = b"rusty bytes"
    backend = HttpVQABackend(_descriptor("vqa", url))
    with pytest.raises(BackendError):
        backend.answer(rgb(), "q?")


def test_http_timeout(http_server):
    url, server = http_server
    server.plan["sleep"] = 0.5
    backend = HttpVQABackend(_descriptor("vqa", url, timeout_s=0.1))
    with pytest.raises(BackendTimeoutError):
        backend.answer(rgb(), "q?")


def test_http_unreachable():
    dead = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    port = dead.server_address[1]
    dead.server_close()
    backend = HttpVQABackend(
        _descriptor("vqa", f"http://127.0.0.1:{port}", timeout_s=1.0)
    )
    with pytest.raises(BackendUnavailableError):
        backend.answer(rgb(), "q?")


def test_http_embed_normalizes_and_learns_dim(http_server):
    url, _ = http_server
    backend = HttpEmbedBackend(_descriptor("embed", url))
    vec = backend.embed_image(rgb())
    assert np.allclose(vec.values, [0.6, 0.8])
    assert backend.dim == 2
    text_vec = backend.embed_text("hello")
    assert abs(np.linalg.norm(text_vec.values) - 1.0) < 1e-12


def test_http_embed_empty_values_raises(http_server):
    url, server = http_server
    server.plan["respond"] = {"values": []}
    backend = HttpEmbedBackend(_descriptor("embed", url))
    with pytest.raises(BackendError):
        backend.embed_image(rgb())


def test_http_segment_thresholds_mask(http_server):
    url, _ = http_server
    backend = HttpSegmentBackend(_descriptor("segment", url))
    result = backend.segment_foreground(rgb(0, size=8))
    assert result.mask.shape == (8, 8)
    assert set(np.unique(result.mask)) <= {0, 1}
    assert result.mask[:4].all() and not result.mask[4:].any()
    assert not result.is_empty


def test_http_segment_missing_mask_raises(http_server):
    url, server = http_server
    server.plan["respond"] = {"oops": True}
    backend = HttpSegmentBackend(_descriptor("segment", url))
    with pytest.raises(BackendError):
        backend.segment_foreground(rgb())


def test_http_generate_missing_image_raises(http_server):
    url, server = http_server
    server.plan["respond"] = {"status": "ok"}
    backend = HttpGenerationBackend(_descriptor("text2image", url))
    with pytest.raises(BackendError):
        backend.generate(GenerationRequest(prompt="p", seed=0))


def test_make_http_backend_dispatch():
    d = _descriptor("segment", "http://host")
    assert isinstance(make_http_backend(d), HttpSegmentBackend)


# ------------------------------------------------------------- env overrides


def test_env_overrides_url_and_timeout(monkeypatch):
    monkeypatch.setenv("VQADIFF_BACKEND_EDGE2IMAGE_URL", "http://gpu-box:9000")
    monkeypatch.setenv("VQADIFF_BACKEND_TIMEOUT_S", "7.5")
    d = apply_env_overrides(BackendDescriptor(kind="edge2image"))
    assert d.endpoint == "http://gpu-box:9000"
    assert d.timeout_s == 7.5
    assert d.kind == "edge2image"
    # unrelated kinds only pick up the timeout
    other = apply_env_overrides(BackendDescriptor(kind="vqa"))
    assert other.endpoint == "stub"
    assert other.timeout_s == 7.5


def test_env_overrides_absent_returns_same_descriptor():
    d = BackendDescriptor(kind="vqa")
    assert apply_env_overrides(d) is d


def test_resolve_backend_honors_env_url(monkeypatch, http_server):
    url, _ = http_server
    monkeypatch.setenv("VQADIFF_BACKEND_VQA_URL", url)
    backend = resolve_backend(BackendDescriptor(kind="vqa"))
    assert isinstance(backend, HttpVQABackend)
    assert backend.answer(rgb(), "What?") == "a red coupe"
