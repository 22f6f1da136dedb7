"""Config-driven end-to-end runs: generate, train, evaluate, report.

Everything a run writes is a pure function of its resolved config, so two
runs whose ``config_hash`` agree produce byte-identical ``report.json``.
"""

from __future__ import annotations

import hashlib
import json
import platform
import sys
from dataclasses import fields
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from . import __version__, net, synthgen
from .data import DatasetManifest, load_manifest
from .errors import ConfigError, TrokensError
from .fewshot import EvalReport, TrainConfig, TrainResult, evaluate, train
from .model import InputCache, ModelConfig

CLASS_SETS = {"default": synthgen.DEFAULT_CLASSES, "zigzag": synthgen.ZIGZAG_CLASSES}

REQUIRED = ("seed", "data.per_class", "train.episodes", "eval.episodes", "eval.way", "eval.shots")


class StageFailed(TrokensError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    if path.suffix == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        with open(path, "rb") as f:
            return tomllib.load(f)
    if path.suffix == ".json":
        return json.loads(path.read_text())
    raise ConfigError(f"config must be .toml or .json, got {path.name}")


def _lookup(cfg: dict, dotted: str):
    cur = cfg
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise KeyError(dotted)
        cur = cur[part]
    return cur


def _pick(section: dict, cls, what: str) -> dict:
    known = {f.name for f in fields(cls)}
    extra = sorted(set(section) - known)
    if extra:
        raise ConfigError(f"unknown {what} field(s): {', '.join(extra)}")
    return dict(section)


def resolve_config(raw: dict) -> dict:
    """Fill defaults and validate; raises ConfigError naming the first missing field."""
    for name in REQUIRED:
        try:
            _lookup(raw, name)
        except KeyError:
            if name == "data.per_class" and "manifest" in raw.get("data", {}):
                continue
            raise ConfigError(f"missing required config field '{name}'") from None
    data = dict(raw["data"])
    data.setdefault("set", "default")
    data.setdefault("mode", "neutral")
    if "manifest" not in data:
        if data["set"] not in CLASS_SETS:
            raise ConfigError(f"unknown class set {data['set']!r}")
        data.setdefault("classes", len(CLASS_SETS[data["set"]]))
        data.setdefault("test_classes", 3)
    model = _pick(raw.get("model", {}), ModelConfig, "model")
    netd = _pick(model.pop("net", {}), net.NetConfig, "model.net")
    tr = _pick(raw["train"], TrainConfig, "train")
    tr.setdefault("seed", int(raw["seed"]))
    ev = dict(raw["eval"])
    ev.setdefault("query", 2)
    shots = ev["shots"] if isinstance(ev["shots"], list) else [ev["shots"]]
    ev["shots"] = [int(s) for s in shots]
    out = {"seed": int(raw["seed"]), "data": data, "model": dict(model, net=netd), "train": tr, "eval": ev}
    # building the config objects validates the values early
    build_model_config(out, n_train_classes=1)
    TrainConfig(**tr)
    return out


def build_model_config(cfg: dict, n_train_classes: int) -> ModelConfig:
    model = dict(cfg["model"])
    netd = dict(model.pop("net", {}))
    netd["n_classes"] = n_train_classes
    try:
        return ModelConfig(net=net.NetConfig(**netd), **model)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def generate(out_dir, n_classes: int, per_class: int, mode: str = "neutral", seed: int = 0,
             class_set: str = "default", n_test: int = 3) -> DatasetManifest:
    kinds = CLASS_SETS[class_set]
    if not 2 <= n_classes <= len(kinds):
        raise ConfigError(f"class set '{class_set}' offers 2..{len(kinds)} classes, asked for {n_classes}")
    specs = synthgen.default_specs(kinds[:n_classes], mode)
    return synthgen.generate_dataset(per_class, specs, out_dir, seed,
                                     split=synthgen.default_split(n_classes, n_test))


def train_model(m: DatasetManifest, mcfg: ModelConfig, tcfg: TrainConfig,
                cache: Optional[InputCache] = None) -> TrainResult:
    return train(m, mcfg, tcfg, cache=cache)


def save_model(ckpt_dir, result: TrainResult, mcfg: ModelConfig, tcfg: TrainConfig) -> None:
    net.save_checkpoint(ckpt_dir, result.params, {"model": mcfg.to_dict(), "train": tcfg.to_dict()})
    log = [r._asdict() for r in result.log]
    (Path(ckpt_dir) / "train_log.json").write_text(json.dumps(log))


def load_model(ckpt_dir):
    params, doc = net.load_checkpoint(ckpt_dir)
    if "model" not in doc:
        raise ConfigError(f"checkpoint {ckpt_dir} has no model config")
    return params, ModelConfig.from_dict(doc["model"])


def eval_dict(r: EvalReport) -> dict:
    d = r.to_dict()
    d["accuracy"] = round(d["accuracy"], 6)
    if d["ci95"] is not None:
        d["ci95"] = round(d["ci95"], 6)
    return d


def versions() -> Dict[str, str]:
    return {"trokens": __version__, "numpy": np.__version__, "python": platform.python_version()}


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageFailed(name, exc) from exc


def run_pipeline(raw_cfg: dict, out_dir) -> dict:
    """Run gen, train and eval as configured; returns the report dict.

    Writes ``report.json``, ``run.json``, ``resolved_config.json`` and the
    checkpoint under ``out_dir`` (and the dataset, unless the config names
    an existing manifest).
    """
    cfg = resolve_config(raw_cfg)
    h = config_hash(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = cfg["data"]
    if "manifest" in d:
        m = _stage("gen", load_manifest, d["manifest"])
        data_dir = str(Path(d["manifest"]).parent)
    else:
        m = _stage("gen", generate, out / "data", d["classes"], d["per_class"], d["mode"], cfg["seed"],
                   d["set"], d["test_classes"])
        data_dir = "data"
    mcfg = build_model_config(cfg, len(m.split["train"]))
    tcfg = TrainConfig(**cfg["train"])
    cache = InputCache(m, mcfg, cfg["seed"])
    result = _stage("train", train_model, m, mcfg, tcfg, cache)
    _stage("train", save_model, out / "ckpt", result, mcfg, tcfg)
    ev = cfg["eval"]
    evals = {}
    for k in ev["shots"]:
        r = _stage("eval", evaluate, m, result.params, mcfg, ev["episodes"], ev["way"], k, ev["query"],
                   cfg["seed"], cache)
        evals[f"{k}shot"] = eval_dict(r)
    tail = result.log[-min(len(result.log), 100):]
    report = {
        "config_hash": h,
        "train": {"episodes": len(result.log),
                  "final_loss": round(float(np.mean([r.total for r in tail])), 6) if tail else None,
                  "final_episode_acc": round(float(np.mean([r.episode_acc for r in tail])), 6) if tail else None},
        "eval": evals,
    }
    (out / "report.json").write_text(canonical_json(report))
    (out / "resolved_config.json").write_text(canonical_json(cfg))
    write_run_record(out, "run", cfg["seed"], h, {"data": data_dir, "checkpoint": "ckpt",
                                                    "report": "report.json", "config": "resolved_config.json"})
    return report


def write_run_record(out_dir, command: str, seed: int, chash: str, artifacts: Dict[str, str],
                     extra: Optional[dict] = None) -> None:
    doc = {"command": command, "seed": seed, "config_hash": chash, "versions": versions(),
           "artifacts": artifacts}
    if extra:
        doc.update(extra)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / "run.json").write_text(canonical_json(doc))
