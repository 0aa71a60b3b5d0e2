"""Corpus assembly, statistics, BLEU, and fine-tuning exports.

Exports are JSON lines. The chat format carries only {messages:[...]} per
record (flagged records excluded unless asked for); the script-paired
format embeds the script, dialogue, provenance, and violations and round
trips losslessly. Wall-clock time is recorded once, in the export
manifest, so re-runs with the same seed produce byte-identical data files.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Mapping, Optional, Sequence

from .dialogue import Script
from .errors import DasynthError
from .retrieval import tokenize

if TYPE_CHECKING:  # pragma: no cover
    from .realizer import RealizationViolation, RealizedDialogue


class CorpusError(DasynthError):
    pass


@dataclass(frozen=True)
class Provenance:
    model_id: str
    endpoint: str
    pipeline_version: str
    attempts: int
    # run wall-clock lives in the export manifest; set this only when a
    # per-record stamp is wanted despite breaking byte-reproducibility
    timestamp: Optional[str] = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "endpoint": self.endpoint,
            "pipeline_version": self.pipeline_version,
            "attempts": self.attempts,
            "timestamp": self.timestamp,
        }

    @staticmethod
    def from_dict(obj: dict) -> "Provenance":
        return Provenance(
            model_id=obj["model_id"],
            endpoint=obj["endpoint"],
            pipeline_version=obj["pipeline_version"],
            attempts=obj["attempts"],
            timestamp=obj.get("timestamp"),
        )


@dataclass(frozen=True)
class CorpusRecord:
    script: Script
    dialogue: Optional["RealizedDialogue"]  # None when no attempt parsed
    provenance: Provenance
    violations: tuple["RealizationViolation", ...] = ()

    @property
    def flagged(self) -> bool:
        return bool(self.violations) or self.dialogue is None

    def to_dict(self) -> dict:
        return {
            "script": self.script.to_dict(),
            "dialogue": self.dialogue.to_dict() if self.dialogue else None,
            "provenance": self.provenance.to_dict(),
            "violations": [v.to_dict() for v in self.violations],
        }

    @staticmethod
    def from_dict(obj: dict) -> "CorpusRecord":
        from .realizer import RealizationViolation, RealizedDialogue

        return CorpusRecord(
            script=Script.from_dict(obj["script"]),
            dialogue=(
                RealizedDialogue.from_dict(obj["dialogue"]) if obj["dialogue"] else None
            ),
            provenance=Provenance.from_dict(obj["provenance"]),
            violations=tuple(
                RealizationViolation.from_dict(v) for v in obj.get("violations", ())
            ),
        )


@dataclass(frozen=True)
class CorpusStats:
    avg_turn_length: float  # tokens per turn
    unique_vocabulary: int
    turn_count: int
    dialogue_count: int

    def to_dict(self) -> dict:
        return {
            "avg_turn_length": self.avg_turn_length,
            "unique_vocabulary": self.unique_vocabulary,
            "turn_count": self.turn_count,
            "dialogue_count": self.dialogue_count,
        }


def compute_stats(records: Sequence[CorpusRecord]) -> CorpusStats:
    """Token statistics over realized turns (retrieval tokenizer)."""
    total_tokens = 0
    turns = 0
    vocab: set[str] = set()
    dialogues = 0
    for record in records:
        if record.dialogue is None:
            continue
        dialogues += 1
        for turn in record.dialogue.turns:
            tokens = tokenize(turn.text)
            total_tokens += len(tokens)
            vocab.update(tokens)
            turns += 1
    return CorpusStats(
        avg_turn_length=total_tokens / turns if turns else 0.0,
        unique_vocabulary=len(vocab),
        turn_count=turns,
        dialogue_count=dialogues,
    )


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
) -> float:
    """Corpus-level BLEU over aligned token sequences (turn i vs turn i).

    Modified n-gram precisions are pooled over all pairs for n = 1..4;
    orders with zero candidate n-grams are excluded and the weights
    renormalize uniformly over the rest; any included zero precision gives
    a 0 score (no smoothing). BP = min(1, exp(1 - r/c)).
    """
    if len(candidates) != len(references):
        raise CorpusError(
            f"length mismatch: {len(candidates)} candidates, {len(references)} references"
        )
    if not candidates:
        raise CorpusError("corpus_bleu needs at least one turn pair")
    for i, ref in enumerate(references):
        if not ref:
            raise CorpusError(f"empty reference turn at index {i}")

    cand_total = sum(len(c) for c in candidates)
    ref_total = sum(len(r) for r in references)
    if cand_total == 0:
        return 0.0

    log_sum = 0.0
    included = 0
    for n in range(1, 5):
        matched = 0
        possible = 0
        for cand, ref in zip(candidates, references):
            cand_counts = _ngrams(cand, n)
            if not cand_counts:
                continue
            ref_counts = _ngrams(ref, n)
            possible += sum(cand_counts.values())
            matched += sum(
                min(count, ref_counts[gram]) for gram, count in cand_counts.items()
            )
        if possible == 0:
            continue  # order excluded, weights renormalize
        if matched == 0:
            return 0.0
        included += 1
        log_sum += math.log(matched / possible)
    if included == 0:
        return 0.0

    bp = min(1.0, math.exp(1.0 - ref_total / cand_total))
    return bp * math.exp(log_sum / included)


def _dialogue_turn_tokens(records: Sequence[CorpusRecord]) -> list[list[str]]:
    out = []
    for record in records:
        if record.dialogue is None:
            raise CorpusError(
                f"record for seed {record.script.seed} has no dialogue to score"
            )
        out.extend(tokenize(turn.text) for turn in record.dialogue.turns)
    return out


# extension point: extra turn-aligned similarity metrics (e.g. an embedding
# scorer) receive (candidate_tokens, reference_tokens) per corpus and
# return a float; wired through compare_models(extra_scorers=...)
SimilarityScorer = Callable[[Sequence[Sequence[str]], Sequence[Sequence[str]]], float]


def compare_models(
    candidate_records: Sequence[CorpusRecord],
    reference_records: Sequence[CorpusRecord],
    candidate_label: str = "candidate",
    reference_label: str = "reference",
    extra_scorers: Optional[Mapping[str, SimilarityScorer]] = None,
) -> dict:
    """Per-corpus stats plus BLEU of the candidate against the reference;
    both corpora must realize the same scripts in the same order."""
    if len(candidate_records) != len(reference_records):
        raise CorpusError(
            f"corpora differ in size: {len(candidate_records)} vs {len(reference_records)}"
        )
    for i, (cand, ref) in enumerate(zip(candidate_records, reference_records)):
        if cand.script.to_dict() != ref.script.to_dict():
            raise CorpusError(f"script mismatch at record {i}")

    cand_tokens = _dialogue_turn_tokens(candidate_records)
    ref_tokens = _dialogue_turn_tokens(reference_records)
    report = {
        "records": len(candidate_records),
        "candidate": candidate_label,
        "reference": reference_label,
        "models": {
            candidate_label: compute_stats(candidate_records).to_dict(),
            reference_label: compute_stats(reference_records).to_dict(),
        },
        "bleu": corpus_bleu(cand_tokens, ref_tokens),
    }
    for name, scorer in (extra_scorers or {}).items():
        report[name] = scorer(cand_tokens, ref_tokens)
    return report


def format_comparison_table(report: dict) -> str:
    """Aligned text table over the comparison report's stats columns."""
    headers = ("Model", "Avg. Len", "# Unique", "BLEU")
    rows = []
    for label, stats in report["models"].items():
        bleu = f"{report['bleu']:.3f}" if label == report["candidate"] else "-"
        rows.append(
            (
                label,
                f"{stats['avg_turn_length']:.2f}",
                str(stats["unique_vocabulary"]),
                bleu,
            )
        )
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    lines += ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in rows]
    return "\n".join(lines)


def _chat_messages(record: CorpusRecord) -> dict:
    return {
        "messages": [
            {"role": turn.role, "content": turn.text}
            for turn in record.dialogue.turns
        ]
    }


def export_jsonl(
    records: Sequence[CorpusRecord],
    path: str | Path,
    fmt: str = "chat",
    include_flagged: bool = False,
) -> dict:
    """Write the corpus as JSON lines plus a sidecar manifest; returns the
    manifest. Flagged records are dropped from the chat format unless
    include_flagged is set; the script-paired format always keeps them."""
    if fmt not in ("chat", "script-paired"):
        raise CorpusError(f"unknown export format {fmt!r}")
    if not records:
        raise CorpusError("nothing to export: records are empty")
    path = Path(path)

    lines = []
    skipped = 0
    for record in records:
        if fmt == "chat":
            if record.flagged and not include_flagged:
                skipped += 1
                continue
            if record.dialogue is None:
                skipped += 1
                continue
            lines.append(json.dumps(_chat_messages(record), ensure_ascii=False))
        else:
            lines.append(json.dumps(record.to_dict(), ensure_ascii=False))

    try:
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot write export to {path}: {exc}") from exc

    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    manifest = {
        "path": path.name,
        "format": fmt,
        "records": len(lines),
        "skipped_flagged": skipped,
        "sha256": digest,
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    manifest_path = path.with_name(path.name + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest


def save_corpus(records: Sequence[CorpusRecord], path: str | Path) -> dict:
    return export_jsonl(records, path, fmt="script-paired")


def load_corpus(path: str | Path) -> list[CorpusRecord]:
    """Re-import a script-paired export; inverse of save_corpus."""
    records = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(CorpusRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorpusError(f"{path} line {lineno}: bad record: {exc}") from exc
    return records
