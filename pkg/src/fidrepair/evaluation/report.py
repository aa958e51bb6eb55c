"""Per-sample scoring and report serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from ..preprocess import Vocabulary, tokenize
from .metrics import bleu4, codebleu, exact_match
from .subgroups import GroupRow

AGGREGATION_NOTE = "BLEU and CodeBLEU are means of sentence-level scores"


@dataclass
class EvalReport:
    em_percent: float
    bleu_percent: float
    codebleu_percent: float
    rows: list[dict]
    subgroups: dict[str, list[GroupRow]] = field(default_factory=dict)
    header: dict = field(default_factory=dict)

    def to_records(self) -> list[dict]:
        head = {
            "kind": "summary",
            "em": self.em_percent,
            "bleu": self.bleu_percent,
            "codebleu": self.codebleu_percent,
            "n": len(self.rows),
            "aggregation": AGGREGATION_NOTE,
            **self.header,
        }
        out = [head]
        out.extend({"kind": "sample", **r} for r in self.rows)
        for criterion, groups in self.subgroups.items():
            for g in groups:
                out.append({"kind": "group", "criterion": criterion, **vars(g)})
        return out

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.to_records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def table(self) -> str:
        lines = [
            f"# {AGGREGATION_NOTE}",
            f"{'metric':<10}{'value':>8}",
            f"{'EM':<10}{self.em_percent:>8.2f}",
            f"{'BLEU-4':<10}{self.bleu_percent:>8.2f}",
            f"{'CodeBLEU':<10}{self.codebleu_percent:>8.2f}",
            f"{'samples':<10}{len(self.rows):>8d}",
        ]
        for criterion, groups in self.subgroups.items():
            lines.append("")
            lines.append(f"{criterion:<12}{'n':>6}{'EM':>8}{'BLEU':>8}{'CodeBLEU':>10}")
            for g in groups:
                lines.append(
                    f"{g.group:<12}{g.count:>6d}{g.em_percent:>8.2f}{g.bleu_percent:>8.2f}{g.codebleu_percent:>10.2f}"
                )
        return "\n".join(lines) + "\n"


def score_sample(pred_text: str, ref_text: str, vocab: Vocabulary) -> dict:
    p, r = tokenize(pred_text, vocab), tokenize(ref_text, vocab)
    return {
        "em": exact_match(p, r),
        "bleu": bleu4(p, r) if len(r) else float(not len(p)),
        "codebleu": codebleu(pred_text, ref_text),
    }


def evaluate_predictions(ids: Sequence[str], preds: Sequence[str], refs: Sequence[str],
                         vocab: Vocabulary) -> EvalReport:
    if not (len(ids) == len(preds) == len(refs)):
        raise ValueError(f"length mismatch: {len(ids)} ids, {len(preds)} predictions, {len(refs)} references")
    rows = [{"id": i, **score_sample(p, r, vocab)} for i, p, r in zip(ids, preds, refs)]
    n = len(rows)

    def mean_pct(key):
        return 100.0 * sum(float(r[key]) for r in rows) / n if n else 0.0

    return EvalReport(mean_pct("em"), mean_pct("bleu"), mean_pct("codebleu"), rows)
