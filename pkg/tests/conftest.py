"""Shared overfit run and the acceptance summary printed after the session."""
import contextlib
import io
import json
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from megalap.cli import main
from megalap.config import overfit_preset
from megalap.data import generate
from megalap.train import load_checkpoint

OVERFIT_SEED = 7
OVERFIT_STEPS = 500


@dataclass
class OverfitRun:
    out_dir: Path
    exit_code: int
    wall_s: float
    summary: dict
    record: dict
    samples: list
    params: object
    cfg: object


def run_cli(argv):
    """Run the console entry point in-process, returning (exit code, stdout)."""
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main([str(a) for a in argv])
    return code, buf.getvalue()


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("overfit")
    start = time.perf_counter()
    code, stdout = run_cli(
        ["train", "--preset", "overfit", "--seed", OVERFIT_SEED, "--out-dir", out, "--max-steps", OVERFIT_STEPS]
    )
    wall = time.perf_counter() - start
    params, cfg = load_checkpoint(out / "final.ckpt")
    return OverfitRun(
        out_dir=out,
        exit_code=code,
        wall_s=wall,
        summary=json.loads(stdout),
        record=json.loads((out / "run_record.json").read_text()),
        samples=generate(overfit_preset().data),
        params=params,
        cfg=cfg,
    )


# -- acceptance reporting ------------------------------------------------------

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    if hasattr(rep, "wasxfail"):
        status = "XFAIL"
    else:
        status = "PASS" if rep.passed else "FAIL"
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed and not detail and call.excinfo is not None:
        detail = call.excinfo.exconly().splitlines()[0][:160]
    _RESULTS[str(number)] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS, key=lambda n: (int(n.rstrip("ab")), n)):
        title, status, detail = _RESULTS[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {title} -- {detail}")
