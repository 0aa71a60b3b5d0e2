import json

import pytest

from dasynth.kb import KnowledgeBaseError, export, ingest, lookup
from tests.conftest import write_kb


FIXASIN = {
    "name": "al_fixasin",
    "kind": "function",
    "signature": "AL_FIXED al_fixasin(AL_FIXED y)",
    "description": "Returns the inverse sine of a fixed point value.",
    "category": "math",
}


def test_ingest_single_record(tmp_path):
    kb = ingest(write_kb(tmp_path / "kb.jsonl", [FIXASIN]))
    assert len(kb) == 1
    assert kb.symbols[0].name == "al_fixasin"
    assert kb.symbols[0].description.startswith("Returns the inverse sine")


def test_ingest_preserves_order(sample_kb):
    assert sample_kb.names()[0] == "al_fixasin"
    assert len(sample_kb) == 20
    for i, sym in enumerate(sample_kb.symbols):
        assert sample_kb.name_index[sym.name] == i


def test_empty_file_is_an_error(tmp_path):
    path = tmp_path / "kb.jsonl"
    path.write_text("")
    with pytest.raises(KnowledgeBaseError, match="empty knowledge base"):
        ingest(path)


def test_unreadable_file(tmp_path):
    with pytest.raises(KnowledgeBaseError, match="cannot read"):
        ingest(tmp_path / "missing.jsonl")


def test_duplicate_name_names_second_record(tmp_path):
    other = dict(FIXASIN, description="different text")
    path = write_kb(tmp_path / "kb.jsonl", [FIXASIN, other])
    with pytest.raises(KnowledgeBaseError, match=r"line 2.*al_fixasin"):
        ingest(path)


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "kb.jsonl"
    path.write_text(json.dumps(FIXASIN) + "\n{not json\n")
    with pytest.raises(KnowledgeBaseError, match="line 2"):
        ingest(path)


@pytest.mark.parametrize(
    "mutation, msg",
    [
        ({"description": ""}, "empty description"),
        ({"name": "has space"}, "whitespace"),
        ({"name": ""}, "non-empty"),
        ({"kind": "widget"}, "kind"),
        ({"extra_key": "x"}, "unknown keys"),
        ({"signature": 7}, "must be a string"),
    ],
)
def test_malformed_records(tmp_path, mutation, msg):
    record = dict(FIXASIN)
    record.update(mutation)
    path = write_kb(tmp_path / "kb.jsonl", [record])
    with pytest.raises(KnowledgeBaseError, match=msg):
        ingest(path)


def test_missing_key_rejected(tmp_path):
    record = dict(FIXASIN)
    del record["category"]
    path = write_kb(tmp_path / "kb.jsonl", [record])
    with pytest.raises(KnowledgeBaseError, match="missing keys"):
        ingest(path)


def test_lookup_identity(sample_kb):
    for sym in sample_kb.symbols:
        assert lookup(sample_kb, sym.name) is sym


def test_lookup_absent_and_case_sensitive(sample_kb):
    assert lookup(sample_kb, "missing") is None
    assert lookup(sample_kb, "AL_FIXASIN") is None  # only al_fixasin exists
    assert lookup(sample_kb, "al_fixasin") is not None


def test_export_round_trip(sample_kb, tmp_path):
    out = tmp_path / "roundtrip.jsonl"
    export(sample_kb, out)
    assert ingest(out) == sample_kb
