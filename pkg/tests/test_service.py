from __future__ import annotations

import base64

import pytest
from fastapi.testclient import TestClient

from pmseg import __version__
from pmseg.cli_app import parse_run_config
from pmseg.service import (
    FilePayload,
    app,
    run_request_payload,
    write_response_files,
)

client = TestClient(app)

CFG = (
    "n_samples=8\nburn_in=2\nm_hat=3\nseed=4\nblur_sigma=0.5\n"
    "synthetic=disks=5,squares=5,size=8,noise=0.1\n"
)


class TestEndpoints:
    def test_health(self):
        resp = client.get("/health")
        assert resp.status_code == 200
        assert resp.json() == {"status": "ok", "version": __version__}

    def test_sample_returns_run_files(self):
        resp = client.post("/sample", json={"config_text": CFG})
        assert resp.status_code == 200
        body = resp.json()
        assert body["exit_code"] == 0
        names = {f["name"] for f in body["files"]}
        assert {"config.txt", "records.csv", "histogram.csv", "map_all.pgm"} <= names
        by_name = {f["name"]: f for f in body["files"]}
        assert by_name["records.csv"]["encoding"] == "text"
        assert by_name["records.csv"]["content"].startswith("sweep,s,")
        assert by_name["map_all.pgm"]["encoding"] == "base64"
        raw = base64.b64decode(by_name["map_all.pgm"]["content"])
        assert raw.startswith(b"P5\n")

    def test_seed_override_in_request(self):
        resp = client.post("/sample", json={"config_text": CFG, "seed": 9})
        assert resp.status_code == 200
        by_name = {f["name"]: f for f in resp.json()["files"]}
        assert "seed=9" in by_name["config.txt"]["content"]

    def test_synthetic_override_in_request(self):
        cfg_no_data = "n_samples=8\nburn_in=2\nm_hat=3\nblur_sigma=0.5\n"
        resp = client.post(
            "/sample",
            json={
                "config_text": cfg_no_data,
                "synthetic": "disks=5,squares=5,size=8,noise=0.1",
            },
        )
        assert resp.status_code == 200
        assert resp.json()["exit_code"] == 0

    def test_bad_config_reports_exit_code(self):
        resp = client.post("/sample", json={"config_text": "n_samples=5\nfrobnicate=1\n"})
        assert resp.status_code == 200
        body = resp.json()
        assert body["exit_code"] == 2
        assert "frobnicate" in body["log"]
        assert body["files"] == []

    def test_extra_fields_rejected(self):
        resp = client.post("/sample", json={"config_text": CFG, "bogus": 1})
        assert resp.status_code == 422

    def test_missing_config_text_rejected(self):
        resp = client.post("/sample", json={})
        assert resp.status_code == 422

    def test_evaluate_endpoint(self):
        resp = client.post("/evaluate", json={"config_text": CFG})
        assert resp.status_code == 200
        body = resp.json()
        assert body["exit_code"] == 0
        names = {f["name"] for f in body["files"]}
        assert "evaluate.csv" in names

    def test_identical_requests_identical_payloads(self):
        a = client.post("/sample", json={"config_text": CFG}).json()
        b = client.post("/sample", json={"config_text": CFG}).json()
        assert a == b


class TestPayloadHelpers:
    def test_run_request_payload_round_trips_config(self):
        cfg = parse_run_config(CFG)
        payload = run_request_payload(cfg)
        assert parse_run_config(payload["config_text"]) == cfg
        # out directory is local to the caller, never shipped
        assert "out=" not in payload["config_text"]

    def test_write_response_files(self, tmp_path):
        files = [
            FilePayload(name="a.csv", encoding="text", content="x,y\n1,2\n"),
            FilePayload(
                name="sub/b.pgm",
                encoding="base64",
                content=base64.b64encode(b"P5\n1 1\n255\n\x00").decode(),
            ),
        ]
        write_response_files(files, tmp_path)
        assert (tmp_path / "a.csv").read_text() == "x,y\n1,2\n"
        assert (tmp_path / "sub" / "b.pgm").read_bytes() == b"P5\n1 1\n255\n\x00"

    def test_write_response_files_rejects_escapes(self, tmp_path):
        for name in ["../evil.txt", "/abs/evil.txt"]:
            with pytest.raises(ValueError):
                write_response_files(
                    [FilePayload(name=name, encoding="text", content="x")], tmp_path
                )

    def test_write_response_files_rejects_unknown_encoding(self, tmp_path):
        with pytest.raises(ValueError):
            write_response_files(
                [FilePayload(name="a.txt", encoding="rot13", content="x")], tmp_path
            )
