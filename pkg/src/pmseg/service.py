"""HTTP service exposing the experiment drivers.

Each POST runs one command into a private temporary directory and returns
the produced files inline (CSV and config echoes as text, PGM maps as
base64), so a remote client ends up with byte-identical artifacts to a
local run. Failures surface as exit_code 2 plus the diagnostic in `log`
rather than as transport errors.
"""

from __future__ import annotations

import base64
import tempfile
from dataclasses import replace
from pathlib import Path

from fastapi import FastAPI
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .cli_app import (
    RunConfig,
    cmd_benchmark,
    cmd_evaluate,
    cmd_sample,
    parse_run_config,
    render_run_config,
)

_TEXT_SUFFIXES = {".csv", ".txt"}


class FilePayload(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    encoding: str  # "text" or "base64"
    content: str


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config_text: str
    seed: int | None = None
    mnist_images: str | None = None
    mnist_labels: str | None = None
    synthetic: str | None = None


class RunResponse(BaseModel):
    model_config = ConfigDict(extra="forbid")

    exit_code: int
    log: str = ""
    files: list[FilePayload] = Field(default_factory=list)


app = FastAPI(title="pmseg", version=__version__)


def _collect_files(out: Path) -> list[FilePayload]:
    payloads = []
    for p in sorted(out.rglob("*")):
        if not p.is_file():
            continue
        rel = p.relative_to(out).as_posix()
        if p.suffix in _TEXT_SUFFIXES:
            payloads.append(
                FilePayload(name=rel, encoding="text", content=p.read_text(encoding="utf-8"))
            )
        else:
            payloads.append(
                FilePayload(
                    name=rel,
                    encoding="base64",
                    content=base64.b64encode(p.read_bytes()).decode("ascii"),
                )
            )
    return payloads


def _execute(command_fn, req: RunRequest) -> RunResponse:
    try:
        cfg = parse_run_config(req.config_text)
        overrides = {
            k: getattr(req, k)
            for k in ("seed", "mnist_images", "mnist_labels", "synthetic")
            if getattr(req, k) is not None
        }
        if overrides:
            cfg = replace(cfg, **overrides)
        with tempfile.TemporaryDirectory(prefix="pmseg-") as tmp:
            cfg = replace(cfg, out=str(Path(tmp) / "run"))
            code = command_fn(cfg)
            files = _collect_files(Path(cfg.out))
        return RunResponse(exit_code=code, files=files)
    except (ValueError, OSError) as exc:
        return RunResponse(exit_code=2, log=str(exc))


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/sample", response_model=RunResponse)
def sample(req: RunRequest) -> RunResponse:
    return _execute(cmd_sample, req)


@app.post("/benchmark", response_model=RunResponse)
def benchmark(req: RunRequest) -> RunResponse:
    return _execute(cmd_benchmark, req)


@app.post("/evaluate", response_model=RunResponse)
def evaluate(req: RunRequest) -> RunResponse:
    return _execute(cmd_evaluate, req)


def run_request_payload(cfg: RunConfig) -> dict:
    """Request body for a config whose flags are already merged in.

    The canonical config text carries everything except the output
    directory, which the service replaces with its own temporary path.
    """
    return RunRequest(config_text=render_run_config(cfg)).model_dump()


def write_response_files(files: list[dict], out: Path) -> None:
    """Write returned payloads under out, refusing path escapes."""
    out.mkdir(parents=True, exist_ok=True)
    for item in files:
        payload = FilePayload.model_validate(item)
        rel = Path(payload.name)
        if rel.is_absolute() or ".." in rel.parts:
            raise ValueError(f"refusing to write outside the output directory: {payload.name}")
        target = out / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        if payload.encoding == "text":
            target.write_text(payload.content, encoding="utf-8")
        elif payload.encoding == "base64":
            target.write_bytes(base64.b64decode(payload.content))
        else:
            raise ValueError(f"unknown file encoding {payload.encoding!r}")
