"""Repair datasets: ingestion, localization tokens and cross-split deduplication."""

from __future__ import annotations

import difflib
import json
import re
from dataclasses import dataclass, field

START_LOC = "<StartLoc>"
END_LOC = "<EndLoc>"
MOD_START = "<ModStart>"
MOD_END = "<ModEnd>"
SPECIAL_TOKENS = (START_LOC, END_LOC, MOD_START, MOD_END)

SPLITS = ("train", "valid", "test")
_CWE_RE = re.compile(r"CWE-[0-9]+")


class DatasetError(ValueError):
    """Raised for malformed dataset files or inconsistent splits."""


@dataclass(frozen=True)
class RepairSample:
    id: str
    source_fn: str
    fixed_fn: str
    cwe_type: str
    vuln_span: tuple[int, int] | None = None

    def __post_init__(self):
        if not _CWE_RE.fullmatch(self.cwe_type):
            raise ValueError(f"cwe_type must look like CWE-<digits>, got {self.cwe_type!r}")
        if self.vuln_span is not None:
            start, end = self.vuln_span
            n_lines = len(self.source_fn.split("\n"))
            if not (0 <= start <= end < n_lines):
                raise ValueError(
                    f"vuln_span {self.vuln_span} outside 0..{n_lines - 1} for sample {self.id!r}"
                )


@dataclass
class DatasetSplits:
    train: list[RepairSample] = field(default_factory=list)
    valid: list[RepairSample] = field(default_factory=list)
    test: list[RepairSample] = field(default_factory=list)

    def __post_init__(self):
        seen: dict[str, int] = {}
        for s in self.all():
            seen[s.id] = seen.get(s.id, 0) + 1
        dupes = sorted(k for k, v in seen.items() if v > 1)
        if dupes:
            raise DatasetError(f"duplicate sample ids: {', '.join(dupes)}")

    def all(self) -> list[RepairSample]:
        return [*self.train, *self.valid, *self.test]

    def sizes(self) -> dict[str, int]:
        return {name: len(getattr(self, name)) for name in SPLITS}


@dataclass(frozen=True)
class DedupReport:
    removed_train: int
    removed_valid: int
    removed_test_internal: int
    before: dict[str, int]
    after: dict[str, int]

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.removed_train, self.removed_valid, self.removed_test_internal)

    def to_dict(self) -> dict:
        return {
            "removed_train": self.removed_train,
            "removed_valid": self.removed_valid,
            "removed_test_internal": self.removed_test_internal,
            "before": dict(self.before),
            "after": dict(self.after),
        }


# ---------------------------------------------------------------------------
# ingestion


def _sample_from_record(rec: dict, lineno: int) -> tuple[str, RepairSample]:
    missing = [k for k in ("source_fn", "fixed_fn", "cwe_type") if k not in rec]
    if missing:
        raise DatasetError(f"line {lineno}: missing field(s) {', '.join(missing)}")
    split = rec.get("split", "train")
    if split not in SPLITS:
        raise DatasetError(f"line {lineno}: unknown split {split!r}")
    span = rec.get("vuln_span")
    try:
        sample = RepairSample(
            id=str(rec.get("id", f"line-{lineno}")),
            source_fn=rec["source_fn"],
            fixed_fn=rec["fixed_fn"],
            cwe_type=rec["cwe_type"],
            vuln_span=tuple(span) if span is not None else None,
        )
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"line {lineno}: {exc}") from exc
    return split, sample


def load_dataset(path, format: str = "jsonl") -> DatasetSplits:
    """Read a JSONL dataset, one record per line, keeping file order within each split."""
    if format != "jsonl":
        raise DatasetError(f"unsupported dataset format {format!r}")
    buckets: dict[str, list[RepairSample]] = {name: [] for name in SPLITS}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise DatasetError(f"line {lineno}: record is not an object")
            split, sample = _sample_from_record(rec, lineno)
            buckets[split].append(sample)
    return DatasetSplits(**buckets)


def sample_to_record(sample: RepairSample, split: str) -> dict:
    rec = {
        "id": sample.id,
        "split": split,
        "source_fn": sample.source_fn,
        "fixed_fn": sample.fixed_fn,
        "cwe_type": sample.cwe_type,
    }
    if sample.vuln_span is not None:
        rec["vuln_span"] = list(sample.vuln_span)
    return rec


def save_dataset(splits: DatasetSplits, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name in SPLITS:
            for s in getattr(splits, name):
                fh.write(json.dumps(sample_to_record(s, name)) + "\n")


# ---------------------------------------------------------------------------
# localization tokens


def _line_diff_hunks(a: list[str], b: list[str]) -> list[tuple[int, int, int, int]]:
    ops = difflib.SequenceMatcher(a=a, b=b, autojunk=False).get_opcodes()
    return [(i1, i2, j1, j2) for tag, i1, i2, j1, j2 in ops if tag != "equal"]


def annotate_sample(s: RepairSample) -> tuple[str, str]:
    """Insert the localization tokens into the source and the modification tokens into the fix.

    Tokens sit on their own lines so that stripping them (plus the newline they
    introduced) gives back the original text exactly.
    """
    if s.vuln_span is None:
        raise ValueError(f"localization required: sample {s.id!r} has no vuln_span")
    start, end = s.vuln_span
    src = s.source_fn.split("\n")
    annotated_src = src[:start] + [START_LOC] + src[start : end + 1] + [END_LOC] + src[end + 1 :]

    fixed = s.fixed_fn.split("\n")
    hunks = _line_diff_hunks(src, fixed)
    if not hunks:
        # empty edit: anchor the empty pair at the vulnerable span
        anchor = min(start, len(fixed))
        hunks = [(start, start, anchor, anchor)]
    out: list[str] = []
    pos = 0
    for _, _, j1, j2 in hunks:
        out.extend(fixed[pos:j1])
        out.append(MOD_START)
        out.extend(fixed[j1:j2])
        out.append(MOD_END)
        pos = j2
    out.extend(fixed[pos:])
    return "\n".join(annotated_src), "\n".join(out)


def strip_special_tokens(text: str) -> str:
    """Inverse of the insertions made by :func:`annotate_sample`."""
    lines = text.split("\n")
    return "\n".join(line for line in lines if line not in SPECIAL_TOKENS)


# ---------------------------------------------------------------------------
# deduplication


def normalize_code(text: str) -> str:
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    return "\n".join(line.rstrip() for line in text.split("\n"))


def pair_key(s: RepairSample) -> tuple[str, str]:
    return normalize_code(s.source_fn), normalize_code(s.fixed_fn)


def deduplicate_splits(d: DatasetSplits) -> tuple[DatasetSplits, DedupReport]:
    """Remove label leakage in three ordered steps.

    1. drop train samples whose pair also occurs in valid or test;
    2. drop valid samples whose pair also occurs in test;
    3. drop repeated pairs inside test, keeping the first occurrence.
    """
    valid_keys = {pair_key(s) for s in d.valid}
    test_keys = {pair_key(s) for s in d.test}

    held_out = valid_keys | test_keys
    train = [s for s in d.train if pair_key(s) not in held_out]
    valid = [s for s in d.valid if pair_key(s) not in test_keys]
    test: list[RepairSample] = []
    seen: set[tuple[str, str]] = set()
    for s in d.test:
        k = pair_key(s)
        if k not in seen:
            seen.add(k)
            test.append(s)

    out = DatasetSplits(train=train, valid=valid, test=test)
    report = DedupReport(
        removed_train=len(d.train) - len(train),
        removed_valid=len(d.valid) - len(valid),
        removed_test_internal=len(d.test) - len(test),
        before=d.sizes(),
        after=out.sizes(),
    )
    return out, report
