"""Batch front end: ``fidrepair <command> [--config run.yaml] [overrides]``.

Commands run one pipeline stage each and read/write the paths named in the
configuration file::

    seed: 0
    jobs: 1
    paths:
      dataset: data/splits.jsonl     # one sample per line
      kb: data/kb.jsonl              # CWE knowledge entries
      bugfix: data/bugfix.jsonl      # {buggy, fixed} pairs for `adapt`
      vocab: out/vocab.txt
      checkpoint: out/model.ckpt
      init_checkpoint: out/adapted.ckpt   # optional warm start for `train`
      output_dir: out
    model: {d_model: 64, segment_len: 512, max_segments: 10, ...}
    knowledge: {max_pairs: 8, use_ast: true, use_knowledge: true}
    fixgen: {mode: stub, endpoint: null, model: gpt-3.5-turbo, transcript: null}
    eval: {groups: [length, frequency, risk]}

Command-line flags win over file values. The fix generator's credential is
read from the ``FIXGEN_API_KEY`` environment variable only.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import torch
import yaml

from . import __version__
from .corpus import DatasetError, annotate_sample, deduplicate_splits, load_dataset, save_dataset
from .cwe_kb import (
    HttpFixGenerator,
    KnowledgeBaseError,
    RecordedFixGenerator,
    StubFixGenerator,
    generate_fixes,
    load_kb,
)
from .evaluation import GroupSpec, SampleInfo, evaluate_predictions, subgroup_report
from .fid_model import ModelConfig, build_contexts, vocab_texts
from .fid_model.estimator import FiDRepairModel
from .preprocess import Vocabulary, detokenize, tokenize

log = logging.getLogger("fidrepair")

COMMANDS = ("dedup", "preprocess", "build-kb", "adapt", "train", "predict", "evaluate")
GROUP_CHOICES = ("length", "frequency", "risk")
FIXGEN_MODES = ("stub", "http", "recorded")
_MODEL_FIELDS = {f.name for f in dataclasses.fields(ModelConfig)} - {"vocab_size", "seed"}

DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "paths": {
        "dataset": None,
        "kb": None,
        "bugfix": None,
        "vocab": "out/vocab.txt",
        "checkpoint": "out/model.ckpt",
        "init_checkpoint": None,
        "output_dir": "out",
    },
    "model": {},
    "knowledge": {"max_pairs": 8, "use_ast": True, "use_knowledge": True},
    "fixgen": {"mode": "stub", "endpoint": None, "model": "gpt-3.5-turbo", "transcript": None},
    "eval": {"groups": list(GROUP_CHOICES)},
}


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(name, "unknown key")
        if isinstance(base[key], dict) and key != "model":
            if not isinstance(value, dict):
                raise ConfigError(name, "expected a mapping")
            out[key] = _merge(base[key], value, name + ".")
        else:
            out[key] = value
    return out


@dataclasses.dataclass
class RunConfig:
    raw: dict

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def paths(self) -> dict:
        return self.raw["paths"]

    @property
    def out_dir(self) -> Path:
        return Path(self.paths["output_dir"])

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, seed=self.seed, **self.raw["model"])

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def stamp(self) -> dict:
        return {"config_hash": self.digest(), "seed": self.seed, "version": __version__}

    def require(self, key: str) -> Path:
        value = self.paths.get(key)
        if not value:
            raise ConfigError(f"paths.{key}", "required by this command but not set")
        return Path(value)

    def require_file(self, key: str) -> Path:
        p = self.require(key)
        if not p.is_file():
            raise ConfigError(f"paths.{key}", f"file not found: {p}")
        return p


def _check_int(raw: dict, key: str, minimum: int) -> None:
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(key, f"must be an integer >= {minimum}, got {v!r}")


def build_run_config(file_values: dict, args: argparse.Namespace) -> RunConfig:
    raw = _merge(DEFAULTS, file_values or {})
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.jobs is not None:
        raw["jobs"] = args.jobs
    if args.max_segments is not None:
        raw["model"]["max_segments"] = args.max_segments
    if args.segment_len is not None:
        raw["model"]["segment_len"] = args.segment_len
    if getattr(args, "groups", None):
        raw["eval"]["groups"] = list(args.groups)

    _check_int(raw, "seed", 0)
    _check_int(raw, "jobs", 1)
    if not isinstance(raw["model"], dict):
        raise ConfigError("model", "expected a mapping")
    for key in raw["model"]:
        if key not in _MODEL_FIELDS:
            raise ConfigError(f"model.{key}", "unknown key")
    try:
        ModelConfig(vocab_size=1, **raw["model"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("model", str(exc)) from None
    mp = raw["knowledge"]["max_pairs"]
    if isinstance(mp, bool) or not isinstance(mp, int) or mp < 0:
        raise ConfigError("knowledge.max_pairs", f"must be a non-negative integer, got {mp!r}")
    if raw["fixgen"]["mode"] not in FIXGEN_MODES:
        raise ConfigError("fixgen.mode", f"must be one of {', '.join(FIXGEN_MODES)}")
    groups = raw["eval"]["groups"]
    if not isinstance(groups, list) or any(g not in GROUP_CHOICES for g in groups):
        raise ConfigError("eval.groups", f"entries must be among {', '.join(GROUP_CHOICES)}")
    return RunConfig(raw)


# ---------------------------------------------------------------------------
# helpers


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _load_kb(rc: RunConfig):
    kb_path = rc.paths.get("kb")
    if not kb_path or not rc.raw["knowledge"]["use_knowledge"]:
        return None, None
    if not Path(kb_path).is_file():
        raise ConfigError("paths.kb", f"file not found: {kb_path}")
    return load_kb(kb_path)


def _load_vocab(rc: RunConfig) -> Vocabulary:
    return Vocabulary.load(rc.require_file("vocab"))


def _contexts(rc: RunConfig, samples, cfg: ModelConfig, vocab: Vocabulary, kb, h):
    k = rc.raw["knowledge"]
    return build_contexts(samples, kb, h, cfg, vocab, k["max_pairs"], k["use_ast"], k["use_knowledge"] and kb is not None)


def _trace_records(rc: RunConfig, trace):
    h = rc.digest()
    for rec in trace:
        yield {**rec, "config_hash": h}


def _load_bugfix(path: Path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pairs.append((rec["buggy"], rec["fixed"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path} line {lineno}: expected {{buggy, fixed}} ({exc})") from None
    return pairs


# ---------------------------------------------------------------------------
# commands


def cmd_dedup(rc: RunConfig, args) -> int:
    splits = load_dataset(rc.require_file("dataset"))
    deduped, report = deduplicate_splits(splits)
    out = rc.out_dir
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(deduped, out / "dedup.jsonl")
    _write_json(out / "dedup_report.json", {**report.to_dict(), **rc.stamp()})
    print(f"removed train={report.removed_train} valid={report.removed_valid} "
          f"test_internal={report.removed_test_internal}")
    print("before " + " ".join(f"{k}={v}" for k, v in report.before.items()))
    print("after  " + " ".join(f"{k}={v}" for k, v in report.after.items()))
    return 0


def cmd_preprocess(rc: RunConfig, args) -> int:
    splits = load_dataset(rc.require_file("dataset"))
    kb, _ = _load_kb(rc)
    texts = list(vocab_texts(splits.train, kb))
    bugfix = rc.paths.get("bugfix")
    if bugfix and Path(bugfix).is_file():
        texts.extend(t for pair in _load_bugfix(Path(bugfix)) for t in pair)
    vocab = Vocabulary.build(texts)
    vocab_path = rc.require("vocab")
    vocab_path.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(vocab_path)
    cfg = rc.model_config(len(vocab))
    L, K = cfg.segment_len, cfg.max_segments
    lengths = [len(tokenize(s.source_fn, vocab)) for s in splits.all()]
    n_segments = [max(1, -(-n // L)) for n in lengths]
    stats = {
        "vocab_size": len(vocab),
        "vocab_sha256": hashlib.sha256(vocab_path.read_bytes()).hexdigest(),
        "samples": len(lengths),
        "max_source_tokens": max(lengths, default=0),
        "fraction_within_K_segments": (sum(n <= K for n in n_segments) / len(lengths)) if lengths else 1.0,
        **rc.stamp(),
    }
    _write_json(rc.out_dir / "preprocess.json", stats)
    print(f"vocabulary of {len(vocab)} tokens written to {vocab_path}")
    return 0


def _fix_generator(rc: RunConfig):
    fg = rc.raw["fixgen"]
    if fg["mode"] == "stub":
        return StubFixGenerator()
    if fg["mode"] == "http":
        if not fg["endpoint"]:
            raise ConfigError("fixgen.endpoint", "required when fixgen.mode is http")
        return HttpFixGenerator(fg["endpoint"], fg["model"])
    if not fg["transcript"]:
        raise ConfigError("fixgen.transcript", "required when fixgen.mode is recorded")
    inner = HttpFixGenerator(fg["endpoint"], fg["model"]) if fg["endpoint"] else None
    return RecordedFixGenerator(fg["transcript"], inner)


def cmd_build_kb(rc: RunConfig, args) -> int:
    path = rc.require_file("kb")
    kb, _ = load_kb(path)
    _, failures = generate_fixes(kb, _fix_generator(rc), path)
    _write_json(rc.out_dir / "build_kb.json", {
        "entries": len(kb),
        "failures": [dataclasses.asdict(f) for f in failures],
        **rc.stamp(),
    })
    print(f"{len(kb)} entries, {len(failures)} fix failures")
    return 1 if failures else 0


def cmd_adapt(rc: RunConfig, args) -> int:
    vocab = _load_vocab(rc)
    corpus = _load_bugfix(rc.require_file("bugfix"))
    est = FiDRepairModel(**rc.model_config(len(vocab)).to_dict())
    est.adapt(corpus, vocab)
    out = rc.out_dir
    ckpt = out / "adapted.ckpt"
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    est.save(ckpt, extra=rc.stamp())
    _write_jsonl(out / "adapt_trace.jsonl", _trace_records(rc, est.adapt_result_.trace))
    print(f"adapted on {len(corpus)} pairs; checkpoint {ckpt}")
    return 0


def cmd_train(rc: RunConfig, args) -> int:
    vocab = _load_vocab(rc)
    splits = load_dataset(rc.require_file("dataset"))
    kb, h = _load_kb(rc)
    cfg = rc.model_config(len(vocab))
    init = rc.paths.get("init_checkpoint")
    if init:
        if not Path(init).is_file():
            raise ConfigError("paths.init_checkpoint", f"file not found: {init}")
        est = FiDRepairModel.load(init)
        est.set_params(**{k: v for k, v in cfg.to_dict().items()})
        est.warm_start = True
    else:
        est = FiDRepairModel(**cfg.to_dict())
    train_b = _contexts(rc, splits.train, cfg, vocab, kb, h)
    valid_b = _contexts(rc, splits.valid, cfg, vocab, kb, h) if splits.valid else None
    est.fit(train_b, X_val=valid_b)
    ckpt = rc.require("checkpoint")
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    est.save(ckpt, extra={**rc.stamp(), "best_epoch": est.best_epoch_})
    _write_jsonl(rc.out_dir / "train_trace.jsonl", _trace_records(rc, est.loss_trace_))
    _write_jsonl(rc.out_dir / "train_epochs.jsonl", ({**e, "config_hash": rc.digest()} for e in est.history_))
    print(f"trained {len(est.loss_trace_)} steps; best epoch {est.best_epoch_}; checkpoint {ckpt}")
    return 0


def cmd_predict(rc: RunConfig, args) -> int:
    vocab = _load_vocab(rc)
    splits = load_dataset(rc.require_file("dataset"))
    kb, h = _load_kb(rc)
    est = FiDRepairModel.load(rc.require_file("checkpoint"))
    # slot budget flags still apply at inference time
    est.set_params(max_segments=rc.raw["model"].get("max_segments", est.max_segments))
    test_b = _contexts(rc, splits.test, est.config, vocab, kb, h)
    preds = est.predict(test_b)
    h_ = rc.digest()
    _write_jsonl(rc.out_dir / "predictions.jsonl", (
        {"id": s.id, "prediction": detokenize(p, vocab), "config_hash": h_} for s, p in zip(splits.test, preds)
    ))
    print(f"{len(preds)} predictions written to {rc.out_dir / 'predictions.jsonl'}")
    return 0


def cmd_evaluate(rc: RunConfig, args) -> int:
    vocab = _load_vocab(rc)
    splits = load_dataset(rc.require_file("dataset"))
    pred_path = Path(args.predictions) if args.predictions else rc.out_dir / "predictions.jsonl"
    if not pred_path.is_file():
        raise ConfigError("predictions", f"file not found: {pred_path}")
    preds: dict[str, str] = {}
    with open(pred_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                preds[rec["id"]] = rec["prediction"]
    missing = [s.id for s in splits.test if s.id not in preds]
    if missing:
        raise DatasetError(f"no prediction for {len(missing)} test samples, e.g. {missing[0]!r}")
    ids = [s.id for s in splits.test]
    refs = [annotate_sample(s)[1] for s in splits.test]
    report = evaluate_predictions(ids, [preds[i] for i in ids], refs, vocab)
    info = [SampleInfo(s.id, len(tokenize(s.source_fn, vocab)), s.cwe_type) for s in splits.test]
    for crit in rc.raw["eval"]["groups"]:
        report.subgroups[crit] = subgroup_report(report.rows, GroupSpec(crit), info)
    report.header.update(rc.stamp())
    report.write(rc.out_dir / "report.jsonl")
    table = report.table()
    (rc.out_dir / "report.txt").write_text(f"# config {rc.digest()}\n" + table, encoding="utf-8")
    print(table, end="")
    return 0


HANDLERS = {
    "dedup": cmd_dedup,
    "preprocess": cmd_preprocess,
    "build-kb": cmd_build_kb,
    "adapt": cmd_adapt,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="cap on CPU threads")
    common.add_argument("--max-segments", type=int, dest="max_segments", help="K, encoder slots per sample")
    common.add_argument("--segment-len", type=int, dest="segment_len", help="L, tokens per slot")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fidrepair", description="Fusion-in-Decoder vulnerability repair pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "evaluate":
            p.add_argument("--groups", nargs="+", choices=GROUP_CHOICES)
            p.add_argument("--predictions", help="predictions file (default: <output_dir>/predictions.jsonl)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        file_values = {}
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                file_values = yaml.safe_load(fh) or {}
            if not isinstance(file_values, dict):
                raise ConfigError("config", "top level must be a mapping")
        rc = build_run_config(file_values, args)
        torch.set_num_threads(rc.raw["jobs"])
        return HANDLERS[args.command](rc, args)
    except ConfigError as exc:
        print(f"fidrepair: config error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, KnowledgeBaseError, ValueError, KeyError, OSError, yaml.YAMLError) as exc:
        print(f"fidrepair: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
