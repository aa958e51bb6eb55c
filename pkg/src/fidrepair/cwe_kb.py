"""Offline CWE knowledge dictionary, hierarchy queries and example-fix bundles."""

from __future__ import annotations

import copy
import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Protocol

import requests

log = logging.getLogger(__name__)

_CWE_RE = re.compile(r"CWE-[0-9]+")


class KnowledgeBaseError(ValueError):
    pass


@dataclass
class CweExample:
    code: str
    language: str = "c"
    analysis: str = ""


@dataclass
class CweEntry:
    id: str
    name: str
    parents: list[str] = field(default_factory=list)
    examples: list[CweExample] = field(default_factory=list)
    fixes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not _CWE_RE.fullmatch(self.id):
            raise KnowledgeBaseError(f"bad CWE id {self.id!r}")
        if self.fixes and len(self.fixes) != len(self.examples):
            raise KnowledgeBaseError(
                f"{self.id}: {len(self.fixes)} fixes for {len(self.examples)} examples"
            )

    @property
    def has_fixes(self) -> bool:
        return len(self.fixes) == len(self.examples)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "parents": list(self.parents),
            "examples": [vars(e).copy() for e in self.examples],
            "fixes": list(self.fixes),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CweEntry":
        return cls(
            id=rec["id"],
            name=rec.get("name", ""),
            parents=list(rec.get("parents", [])),
            examples=[CweExample(**e) for e in rec.get("examples", [])],
            fixes=list(rec.get("fixes", [])),
        )


class CweHierarchy:
    """Parent edges (child -> parents), multi-parent allowed, verified acyclic."""

    def __init__(self, parents: dict[str, list[str]]):
        self.parents = {k: list(dict.fromkeys(v)) for k, v in parents.items()}
        self._children: dict[str, list[str]] = {}
        for child, ps in self.parents.items():
            for p in ps:
                self._children.setdefault(p, []).append(child)
        try:
            tuple(TopologicalSorter(self.parents).static_order())
        except CycleError as exc:
            cycle = exc.args[1]
            raise KnowledgeBaseError(f"cycle in CWE hierarchy: {' -> '.join(cycle)}") from None

    def __contains__(self, cwe_id):
        return cwe_id in self.parents or cwe_id in self._children

    def _check(self, cwe_id):
        if cwe_id not in self:
            raise KeyError(f"unknown CWE id {cwe_id!r}")

    def parents_of(self, cwe_id) -> list[str]:
        self._check(cwe_id)
        return list(self.parents.get(cwe_id, []))

    def children(self, cwe_id) -> list[str]:
        self._check(cwe_id)
        return list(self._children.get(cwe_id, []))

    def siblings(self, cwe_id) -> list[str]:
        out: dict[str, None] = {}
        for p in self.parents_of(cwe_id):
            for c in self._children.get(p, []):
                if c != cwe_id:
                    out[c] = None
        return list(out)


def related_types(h: CweHierarchy, cwe_id: str) -> dict[str, set[str]]:
    return {
        "parents": set(h.parents_of(cwe_id)),
        "children": set(h.children(cwe_id)),
        "siblings": set(h.siblings(cwe_id)),
    }


# ---------------------------------------------------------------------------
# persistence


def load_kb(path) -> tuple[dict[str, CweEntry], CweHierarchy]:
    kb: dict[str, CweEntry] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                entry = CweEntry.from_record(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise KnowledgeBaseError(f"line {lineno}: {exc}") from exc
            if entry.id in kb:
                raise KnowledgeBaseError(f"line {lineno}: duplicate id {entry.id}")
            kb[entry.id] = entry
    return kb, build_hierarchy(kb)


def build_hierarchy(kb: dict[str, CweEntry]) -> CweHierarchy:
    return CweHierarchy({cid: e.parents for cid, e in kb.items()})


def save_kb(kb: dict[str, CweEntry], path) -> None:
    """Write atomically: a temp file in the same directory replaces ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for entry in kb.values():
                fh.write(json.dumps(entry.to_record(), ensure_ascii=False) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# fix generation


def render_fix_prompt(code: str, name: str, analysis: str) -> str:
    return (
        f"The code {code} contains a vulnerability of type {name}. "
        f"The analysis of this vulnerable code is {analysis}. "
        "Please generate the repaired code to address the vulnerability:"
    )


class FixGenerator(Protocol):
    def fix(self, code: str, name: str, analysis: str) -> str: ...


class StubFixGenerator:
    """Deterministic offline generator: returns ``prefix + code``."""

    def __init__(self, prefix: str = "FIXED:"):
        self.prefix = prefix

    def fix(self, code, name, analysis):
        return self.prefix + code


class HttpFixGenerator:
    """POSTs ``{model, prompt}`` to ``endpoint`` and reads ``{text}`` back."""

    def __init__(self, endpoint: str, model: str = "gpt-3.5-turbo", api_key_env: str = "FIXGEN_API_KEY",
                 timeout: float = 60.0, session: requests.Session | None = None):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.session = session or requests.Session()

    def fix(self, code, name, analysis):
        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        resp = self.session.post(
            self.endpoint,
            json={"model": self.model, "prompt": render_fix_prompt(code, name, analysis)},
            headers=headers,
            timeout=self.timeout,
        )
        resp.raise_for_status()
        return resp.json()["text"]


class RecordedFixGenerator:
    """Replays a JSONL transcript of ``{prompt, text}`` records.

    With ``inner`` set, prompts missing from the transcript are forwarded to it
    and the response is appended to the transcript (record mode).
    """

    def __init__(self, transcript_path, inner: FixGenerator | None = None):
        self.transcript_path = Path(transcript_path)
        self.inner = inner
        self.responses: dict[str, str] = {}
        if self.transcript_path.exists():
            with open(self.transcript_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self.responses[rec["prompt"]] = rec["text"]

    def fix(self, code, name, analysis):
        prompt = render_fix_prompt(code, name, analysis)
        if prompt in self.responses:
            return self.responses[prompt]
        if self.inner is None:
            raise KeyError("prompt not present in transcript")
        text = self.inner.fix(code, name, analysis)
        self.responses[prompt] = text
        with open(self.transcript_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"prompt": prompt, "text": text}, ensure_ascii=False) + "\n")
        return text


@dataclass
class FixFailure:
    cwe_id: str
    example_index: int
    error: str


def generate_fixes(kb: dict[str, CweEntry], client: FixGenerator, path=None
                   ) -> tuple[dict[str, CweEntry], list[FixFailure]]:
    """Fill in missing fixes on a copy of ``kb``.

    Entries that already carry fixes are left alone. If any example of an entry
    fails, that entry keeps no fixes at all, so fixes stay aligned with examples.
    When ``path`` is given the result is written there atomically.
    """
    out = copy.deepcopy(kb)
    failures: list[FixFailure] = []
    for entry in out.values():
        if entry.has_fixes:
            continue
        fixes = []
        for i, ex in enumerate(entry.examples):
            try:
                fixes.append(client.fix(ex.code, entry.name, ex.analysis))
            except Exception as exc:  # noqa: BLE001 - any client failure is recorded
                log.warning("fix generation failed for %s example %d: %s", entry.id, i, exc)
                failures.append(FixFailure(entry.id, i, str(exc)))
        if len(fixes) == len(entry.examples):
            entry.fixes = fixes
    if path is not None:
        save_kb(out, path)
    return out, failures


# ---------------------------------------------------------------------------
# knowledge assembly


@dataclass(frozen=True)
class ExamplePair:
    example_code: str
    fix_code: str
    origin_cwe: str
    label: int


@dataclass(frozen=True)
class KnowledgeBundle:
    cwe_name: str
    pairs: tuple[ExamplePair, ...] = ()

    @property
    def labels(self) -> list[int]:
        return [p.label for p in self.pairs]


def assemble_knowledge(kb: dict[str, CweEntry], h: CweHierarchy, target_id: str,
                       max_pairs: int) -> KnowledgeBundle:
    """Collect example-fix pairs for ``target_id`` and its neighbours.

    Order: the target's own pairs, then children, parents, siblings; each group
    follows KB file order and the whole list is cut at ``max_pairs``.
    """
    if target_id not in kb:
        raise KnowledgeBaseError(f"target {target_id!r} not in knowledge base")
    if max_pairs < 0:
        raise ValueError("max_pairs must be non-negative")
    order = {cid: i for i, cid in enumerate(kb)}
    groups = [[target_id]]
    if target_id in h:
        seen = {target_id}
        for rel in (h.children(target_id), h.parents_of(target_id), h.siblings(target_id)):
            ids = sorted((c for c in rel if c in kb and c not in seen), key=order.__getitem__)
            seen.update(ids)
            groups.append(ids)
    pairs: list[ExamplePair] = []
    for ids in groups:
        for cid in ids:
            entry = kb[cid]
            for i, ex in enumerate(entry.examples):
                if len(pairs) >= max_pairs:
                    return KnowledgeBundle(kb[target_id].name, tuple(pairs))
                if not entry.has_fixes:
                    raise KnowledgeBaseError(f"{cid}: example {i} has no generated fix")
                pairs.append(ExamplePair(ex.code, entry.fixes[i], cid, int(cid == target_id)))
    return KnowledgeBundle(kb[target_id].name, tuple(pairs))
