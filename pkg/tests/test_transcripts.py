"""Golden-transcript conformance for the synthetic adapter.

The fixture in data/protocol_transcripts.json is runtime-agnostic: any
conforming adapter driven with each case's stdin lines must answer with
matching replies. The TypeScript null backend runs the same file.
"""
from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

FIXTURE = Path(__file__).parent / "data" / "protocol_transcripts.json"
TRANSCRIPTS = json.loads(FIXTURE.read_text(encoding="utf-8"))


def matches(expect, actual) -> bool:
    if isinstance(expect, dict):
        if "__gte" in expect:
            return isinstance(actual, (int, float)) and actual >= expect["__gte"]
        if "__len" in expect:
            if not isinstance(actual, list) or len(actual) != expect["__len"]:
                return False
            if expect.get("__positive"):
                return all(isinstance(v, (int, float)) and v > 0 for v in actual)
            return True
        # plain object: every named field must match; extra fields are fine
        return isinstance(actual, dict) and all(matches(v, actual.get(k)) for k, v in expect.items())
    return expect == actual


def drive(case: dict) -> None:
    proc = subprocess.Popen(
        [sys.executable, "-m", "graphbench.synthetic"],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        text=True,
    )
    try:
        hello = json.loads(proc.stdout.readline())
        assert matches(TRANSCRIPTS["hello"], hello), f"bad hello: {hello}"
        for i, step in enumerate(case["steps"]):
            line = step["raw"] if "raw" in step else json.dumps(step["send"])
            proc.stdin.write(line + "\n")
            proc.stdin.flush()
            if step["expect"] is None:
                continue
            reply = json.loads(proc.stdout.readline())
            assert matches(step["expect"], reply), (
                f"{case['name']} step {i}: expected {step['expect']}, got {reply}"
            )
        assert proc.wait(timeout=10) == 0
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.wait()


@pytest.mark.parametrize("case", TRANSCRIPTS["cases"], ids=lambda c: c["name"])
def test_synthetic_backend_conforms(case: dict) -> None:
    drive(case)
