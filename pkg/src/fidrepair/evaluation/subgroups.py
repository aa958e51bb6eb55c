"""Test-set partitions by input length, CWE frequency and CWE risk."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

LENGTH_THRESHOLD = 449
CRITERIA = ("length", "frequency", "risk", "custom")


def load_top10() -> list[tuple[str, int]]:
    """(CWE id, number of test samples in the reference merged dataset), by rank."""
    text = resources.files("fidrepair").joinpath("data/top10_cwe.tsv").read_text(encoding="utf-8")
    out = []
    for line in text.splitlines():
        if line.strip() and not line.startswith("#"):
            _, cwe, _, count = line.split("\t")
            out.append((cwe, int(count)))
    return out


TOP10_CWE = tuple(cwe for cwe, _ in load_top10())


@dataclass(frozen=True)
class SampleInfo:
    id: str
    source_len: int
    cwe_type: str


@dataclass
class GroupSpec:
    criterion: str
    threshold: int = LENGTH_THRESHOLD
    cwe_list: Sequence[str] = TOP10_CWE
    groups: Mapping[str, Sequence[str]] = field(default_factory=dict)

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")


def frequent_types(cwe_types: Sequence[str]) -> set[str]:
    """Most frequent CWE types covering at least half of the samples.

    Types are taken whole, by descending count (ties by id), so the frequent
    group can exceed 50% by part of one type.
    """
    counts = Counter(cwe_types)
    ranked = sorted(counts, key=lambda c: (-counts[c], c))
    chosen, covered = set(), 0
    for c in ranked:
        if 2 * covered >= len(cwe_types):
            break
        chosen.add(c)
        covered += counts[c]
    return chosen


def partition(spec: GroupSpec, dataset: Sequence[SampleInfo]) -> dict[str, list[str]]:
    """Map group name -> sample ids. Groups are disjoint and cover ``dataset``."""
    if spec.criterion == "length":
        groups = {"short": [], "long": []}
        for s in dataset:
            groups["long" if s.source_len > spec.threshold else "short"].append(s.id)
    elif spec.criterion == "frequency":
        freq = frequent_types([s.cwe_type for s in dataset])
        groups = {"frequent": [], "infrequent": []}
        for s in dataset:
            groups["frequent" if s.cwe_type in freq else "infrequent"].append(s.id)
    elif spec.criterion == "risk":
        top = set(spec.cwe_list)
        groups = {"top_risk": [], "less_risky": []}
        for s in dataset:
            groups["top_risk" if s.cwe_type in top else "less_risky"].append(s.id)
    else:
        owner: dict[str, str] = {}
        for name, ids in spec.groups.items():
            for i in ids:
                if i in owner:
                    raise ValueError(f"sample {i!r} is in both {owner[i]!r} and {name!r}")
                owner[i] = name
        missing = [s.id for s in dataset if s.id not in owner]
        if missing:
            raise ValueError(f"{len(missing)} samples are in no group, e.g. {missing[0]!r}")
        groups = {name: [s.id for s in dataset if owner[s.id] == name] for name in spec.groups}
    return groups


@dataclass(frozen=True)
class GroupRow:
    group: str
    count: int
    em_percent: float
    bleu_percent: float
    codebleu_percent: float


def subgroup_report(rows: Sequence[Mapping], spec: GroupSpec, dataset: Sequence[SampleInfo]) -> list[GroupRow]:
    """Per-group EM (and BLEU/CodeBLEU means) for report rows keyed by sample id."""
    by_id = {r["id"]: r for r in rows}
    out = []
    for name, ids in partition(spec, dataset).items():
        sel = [by_id[i] for i in ids if i in by_id]
        n = len(sel)

        def pct(key):
            return 100.0 * sum(float(r[key]) for r in sel) / n if n else 0.0

        out.append(GroupRow(name, n, pct("em"), pct("bleu"), pct("codebleu")))
    return out
