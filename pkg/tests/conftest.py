import json
from pathlib import Path

import pytest

from dasynth.kb import ApiSymbol, KnowledgeBase, ingest
from dasynth.retrieval import build_index

REPO_ROOT = Path(__file__).resolve().parents[1]
SAMPLE_KB_PATH = REPO_ROOT / "data" / "sample_kb.jsonl"


def write_kb(path: Path, records: list[dict]) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def make_symbol(name: str, description: str, kind: str = "function") -> ApiSymbol:
    return ApiSymbol(
        name=name, kind=kind, signature="", description=description, category=""
    )


@pytest.fixture(scope="session")
def sample_kb():
    """The 20-symbol fixture KB shipped with the repo."""
    return ingest(SAMPLE_KB_PATH)


@pytest.fixture(scope="session")
def sample_index(sample_kb):
    return build_index(sample_kb)


@pytest.fixture(scope="session")
def two_doc_kb():
    """The hand-computed retrieval fixture; indexed with names excluded."""
    return KnowledgeBase(
        [
            make_symbol("d1", "draw bitmap"),
            make_symbol("d2", "load bitmap file"),
        ]
    )


@pytest.fixture(scope="session")
def two_doc_index(two_doc_kb):
    return build_index(two_doc_kb, include_names=False)


@pytest.fixture(scope="session")
def ten_doc_kb():
    descriptions = [
        ("alpha_one", "rotates sprites around an anchor point smoothly"),
        ("alpha_two", "loads wave audio assets from memory buffers"),
        ("alpha_three", "converts palette indices into truecolor pixels"),
        ("alpha_four", "polls joystick axes and button states"),
        ("alpha_five", "blends translucent layers using source alpha"),
        ("alpha_six", "queues vertical retrace callbacks for timing"),
        ("alpha_seven", "compresses save files with run length packing"),
        ("alpha_eight", "maps scancodes to printable characters"),
        ("alpha_nine", "streams music tracks from disk incrementally"),
        ("alpha_ten", "measures frames per second over sliding windows"),
    ]
    return KnowledgeBase([make_symbol(n, d) for n, d in descriptions])


@pytest.fixture(scope="session")
def ten_doc_index(ten_doc_kb):
    return build_index(ten_doc_kb)
