import base64
import hashlib
import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from dgsr import images, inference, service
from dgsr.cli import main


def _png_b64(img) -> str:
    buf = io.BytesIO()
    Image.fromarray(images.quantize(img), mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def lr_image(seed=0, size=32):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1, 1, (size, size, 3)).astype(np.float32)


class TestCli:
    def test_synth_deterministic_checksums(self, tmp_path):
        def digest(root):
            h = hashlib.sha256()
            for p in sorted(root.rglob("*")):
                if p.is_file():
                    h.update(p.read_bytes())
            return h.hexdigest()

        assert main(["--seed", "7", "synth", "--out", str(tmp_path / "a"), "--n", "4"]) == 0
        assert main(["--seed", "7", "synth", "--out", str(tmp_path / "b"), "--n", "4"]) == 0
        assert digest(tmp_path / "a") == digest(tmp_path / "b")

    def test_synth_bad_n(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "x"), "--n", "0"]) == 1

    def test_unknown_flag_exits_one(self, capsys):
        assert main(["synth", "--wat", "1"]) == 1

    def test_eval_mismatched_counts(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        a.mkdir()
        b.mkdir()
        images.save_png(a / "1.png", lr_image(1))
        assert main(["eval", "--pred", str(a), "--ref", str(b)]) == 1

    def test_eval_runs(self, tmp_path, capsys):
        a = tmp_path / "a"
        b = tmp_path / "b"
        a.mkdir()
        b.mkdir()
        images.save_png(a / "1.png", lr_image(1))
        images.save_png(b / "1.png", lr_image(2))
        assert main(["eval", "--pred", str(a), "--ref", str(b), "--out", str(tmp_path / "r.jsonl")]) == 0
        out = capsys.readouterr().out
        assert "mean_psnr_y" in out
        assert (tmp_path / "r.jsonl").is_file()

    def test_infer_single_and_exit_codes(self, tiny_bundle, tmp_path, capsys):
        src = tmp_path / "lr.png"
        images.save_png(src, lr_image(3))
        code = main(
            [
                "infer",
                "--bundle",
                str(tiny_bundle),
                "--input",
                str(src),
                "--output",
                str(tmp_path / "sr.png"),
                "--cfg",
                "1.0",
            ]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)["report"]
        assert report["unet_forwards"] == 1
        assert (tmp_path / "sr.png").is_file()

    def test_infer_missing_bundle_exit_two(self, tmp_path, monkeypatch):
        monkeypatch.delenv("DGSR_BUNDLE", raising=False)
        src = tmp_path / "lr.png"
        images.save_png(src, lr_image(0))
        assert main(["infer", "--input", str(src), "--output", str(tmp_path / "o.png")]) == 2

    def test_bundle_env_var(self, tiny_bundle, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("DGSR_BUNDLE", str(tiny_bundle))
        src = tmp_path / "lr.png"
        images.save_png(src, lr_image(4))
        assert main(["infer", "--input", str(src), "--output", str(tmp_path / "out.png")]) == 0

    def test_infer_batch_directory(self, tiny_bundle, tmp_path, capsys):
        src = tmp_path / "in"
        src.mkdir()
        images.save_png(src / "a.png", lr_image(5))
        code = main(
            ["infer", "--bundle", str(tiny_bundle), "--input", str(src), "--output", str(tmp_path / "out")]
        )
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["processed"] == 1


@pytest.fixture(scope="module")
def client(tiny_bundle):
    app = service.create_app(inference.load_bundle(tiny_bundle), max_pixels=256 * 256)
    return TestClient(app)


class TestService:
    def test_health(self, client):
        r = client.get("/v1/health")
        assert r.status_code == 200
        body = r.json()
        assert body["status"] == "ok"
        assert "bundle" in body

    def test_health_without_bundle_is_503(self):
        bare = TestClient(service.create_app(None))
        assert bare.get("/v1/health").status_code == 503

    def test_estimate(self, client):
        r = client.post("/v1/estimate", json={"image_b64": _png_b64(lr_image(1))})
        assert r.status_code == 200
        body = r.json()
        assert 0.0 <= body["d_n"] <= 1.0
        assert 0.0 <= body["d_b"] <= 1.0

    def test_infer_override_skips_estimator(self, client):
        r = client.post(
            "/v1/infer",
            json={"image_b64": _png_b64(lr_image(2)), "d_n": 0.5, "d_b": 0.5},
        )
        assert r.status_code == 200
        report = r.json()["report"]
        assert report["d_used"] == [0.5, 0.5]
        assert report["estimator_calls"] == 0

    def test_infer_partial_override_estimates_missing(self, client):
        r = client.post(
            "/v1/infer", json={"image_b64": _png_b64(lr_image(2)), "d_n": 0.9}
        )
        assert r.status_code == 200
        report = r.json()["report"]
        assert report["d_used"][0] == 0.9
        assert report["estimator_calls"] == 1
        assert report["d_estimated"] is not None

    def test_infer_deterministic_bytes(self, client):
        payload = {"image_b64": _png_b64(lr_image(3)), "seed": 11, "lambda_cfg": 1.1}
        r1 = client.post("/v1/infer", json=payload)
        r2 = client.post("/v1/infer", json=payload)
        assert r1.json()["image_b64"] == r2.json()["image_b64"]

    def test_infer_forward_counts(self, client):
        r = client.post(
            "/v1/infer", json={"image_b64": _png_b64(lr_image(4)), "lambda_cfg": 1.0}
        )
        assert r.json()["report"]["unet_forwards"] == 1

    def test_multipart_upload(self, client):
        buf = io.BytesIO()
        Image.fromarray(images.quantize(lr_image(5)), mode="RGB").save(buf, format="PNG")
        r = client.post(
            "/v1/infer",
            files={"image": ("lr.png", buf.getvalue(), "image/png")},
            data={"lambda_cfg": "1.0"},
        )
        assert r.status_code == 200

    def test_malformed_body_400(self, client):
        assert client.post("/v1/infer", json={"no_image": 1}).status_code == 400
        assert (
            client.post("/v1/infer", json={"image_b64": "!!!not-base64!!!"}).status_code
            == 400
        )
        r = client.post(
            "/v1/infer", content=b"garbage", headers={"content-type": "application/json"}
        )
        assert r.status_code == 400

    def test_oversized_image_413(self, client):
        big = np.zeros((300, 300, 3), dtype=np.float32)
        r = client.post("/v1/infer", json={"image_b64": _png_b64(big)})
        assert r.status_code == 413

    def test_request_counter_increments(self, client):
        before = client.get("/v1/health").json()["requests"]
        client.post("/v1/estimate", json={"image_b64": _png_b64(lr_image(6))})
        after = client.get("/v1/health").json()["requests"]
        assert after == before + 1

    def test_response_image_decodes(self, client):
        r = client.post("/v1/infer", json={"image_b64": _png_b64(lr_image(7))})
        raw = base64.b64decode(r.json()["image_b64"])
        with Image.open(io.BytesIO(raw)) as im:
            assert im.size == (128, 128)
