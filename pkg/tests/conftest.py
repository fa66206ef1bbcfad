import json
import re
from pathlib import Path

import httpx
import numpy as np
import pytest
from hypothesis import settings

from cfaudit.core import Condition, DecisionRecord, IndexSet, PredictionSet, Sex, TriageScale

FIXTURES = Path(__file__).parent / "fixtures"

# Fixed example generation keeps test_output.txt reproducible run to run.
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")


def make_preds(orig, cf, directions, scale=TriageScale(2, 5), reference=None, condition=Condition.FULL):
    """PredictionSet from plain label lists; directions given as 'mf'/'fm' or 0/1."""
    n = len(orig)
    dirs = np.array([{"mf": 0, "fm": 1}.get(d, d) for d in directions], dtype=np.int8)
    labels = np.stack([np.asarray(orig, dtype=np.int64), np.asarray(cf, dtype=np.int64)], axis=1)
    ids = IndexSet(tuple(f"p{i:05d}" for i in range(n)))
    ref = None if reference is None else np.asarray(reference, dtype=np.int64)
    return PredictionSet(ids, dirs, {Condition(condition): labels}, scale, ref)


def preds_from_cells(cells, scale=TriageScale(2, 5)):
    """Expand ``{(direction, orig, cf): count}`` into a prediction set."""
    orig, cf, dirs = [], [], []
    for (d, o, c), count in sorted(cells.items()):
        orig += [o] * count
        cf += [c] * count
        dirs += [d] * count
    return make_preds(orig, cf, dirs, scale)


def record(rid="r1", sex="M", age=50, hpi="Douleur thoracique", pmh="", cc="", label=3, **tabular):
    return DecisionRecord(rid, Sex.parse(sex), age, tabular, cc, hpi, pmh, label)


# A stand-in rewrite service ----------------------------------------------------

_SWAP_EN = {"he": "she", "she": "he", "his": "her", "her": "his", "him": "her", "man": "woman", "woman": "man"}
_SWAP_FR = {"il": "elle", "elle": "il", "patient": "patiente", "patiente": "patient", "homme": "femme", "femme": "homme"}


def _swap_words(text, table):
    def repl(m):
        w = m.group(0)
        out = table.get(w.lower(), w)
        return out.capitalize() if w[0].isupper() else out
    return re.sub(r"\w+", repl, text)


def rewrite_reply(input_line, language):
    """What a well-behaved rewriting model would answer for one input line."""
    table = _SWAP_FR if language == "fr" else _SWAP_EN
    sex_label = "Sexe patient" if language == "fr" else "Patient sex"
    m = re.match(rf"{sex_label}\s*:\s*([MF])(.*)", input_line, re.DOTALL)
    flipped = "F" if m.group(1) == "M" else "M"
    return f"{sex_label}{' : ' if language == 'fr' else ': '}{flipped}{_swap_words(m.group(2), table)}"


def last_input_line(messages):
    user = messages[-1]["content"]
    return user.rstrip().splitlines()[-1]


class FakeRewriteService:
    """httpx transport answering chat requests; ``garble`` ids get nonsense back."""

    def __init__(self, language="en", garble=(), fail=False):
        self.language = language
        self.garble = set(garble)
        self.fail = fail
        self.calls = 0

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.calls += 1
        if self.fail:
            raise httpx.ConnectError("connection refused", request=request)
        body = json.loads(request.content)
        line = last_input_line(body["messages"])
        if any(tag in line for tag in self.garble):
            content = "Sorry, I cannot help with that."
        elif body.get("max_tokens") == 4:
            content = "3"
        else:
            content = rewrite_reply(line, self.language)
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": content}}]})

    def transport(self):
        return httpx.MockTransport(self)


@pytest.fixture
def fake_service():
    return FakeRewriteService


# Acceptance summary ----------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, text): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, text = marker.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        previous = _ACCEPTANCE.get(number)
        if previous is None or previous[0] == "PASS":
            _ACCEPTANCE[number] = (status, text)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, text = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {text}")
