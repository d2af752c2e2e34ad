"""Run configuration: flat key=value files with typed sections.

The file format is one `key = value` pair per line, `#` comments, no nesting.
Unknown keys are rejected so typos fail loudly. Values are merged with
`--set key=value` overrides before validation.

Key schema (defaults in parentheses):
  scenario.kind           permuted | split | synthetic (permuted)
  scenario.seed           int (0)
  scenario.n_tasks        int (3), permuted and synthetic kinds
  scenario.train_images   path to IDX train images (permuted/split)
  scenario.train_labels   path to IDX train labels
  scenario.test_images    path to IDX test images
  scenario.test_labels    path to IDX test labels
  scenario.classes_per_task  int (2), split kind
  scenario.classes        int (5), synthetic kind
  scenario.dim            int (16), synthetic kind
  scenario.samples        int (200), synthetic train samples per class
  scenario.separation     float (8.0), synthetic mean spacing
  model.layers            comma list, first=input dim, last=classes (784,100,10)
  train.batch_size        int (128)
  train.lr_initial        float (0.01)
  train.lr_decay          float (0.9)
  train.lr_floor          float (0.0001)
  prune.population        int (16)
  prune.alpha             float (0.9)
  prune.beta              float (0.1)
  prune.v_min             float (0.45)
  prune.v_max             float (0.85)
  prune.short_epochs      int (5)
  prune.full_epochs       int (50)
  prune.t_l               int (4)
  prune.psi_min           int (2)
  quant.psi_init          int (2)
  quant.psi_max           int (8)
  quant.delta             float (0.01)
  quant.kmeans_iters      int (50)
  quant.kmeans_restarts   int (3)
  run.mode                full | pruning-only | quantization-only (full)
  run.seed                int (0), feeds every stage unless a stage overrides
  run.output_dir          directory for reports and checkpoints (run_out)
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import ConfigError
from .network import ModelSpec, TrainConfig
from .pruning import PruneConfig
from .quantization import QuantConfig
from .scenario import (ScenarioSuite, load_idx, permuted_scenario,
                       split_scenario, synthetic_blobs)

_INT_KEYS = {
    "scenario.seed", "scenario.n_tasks", "scenario.classes_per_task",
    "scenario.classes", "scenario.dim", "scenario.samples",
    "train.batch_size",
    "prune.population", "prune.short_epochs", "prune.full_epochs",
    "prune.t_l", "prune.psi_min",
    "quant.psi_init", "quant.psi_max", "quant.kmeans_iters",
    "quant.kmeans_restarts",
    "run.seed",
}
_FLOAT_KEYS = {
    "scenario.separation",
    "train.lr_initial", "train.lr_decay", "train.lr_floor",
    "prune.alpha", "prune.beta", "prune.v_min", "prune.v_max",
    "quant.delta",
}
_STR_KEYS = {
    "scenario.kind", "scenario.train_images", "scenario.train_labels",
    "scenario.test_images", "scenario.test_labels",
    "model.layers", "run.mode", "run.output_dir",
}
_ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS

MODES = ("full", "pruning-only", "quantization-only")


@dataclass
class ScenarioConfig:
    kind: str = "permuted"
    seed: int = 0
    n_tasks: int = 3
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    classes_per_task: int = 2
    classes: int = 5
    dim: int = 16
    samples: int = 200
    separation: float = 8.0


@dataclass
class RunConfig:
    scenario: ScenarioConfig
    model: ModelSpec
    train: TrainConfig
    prune: PruneConfig
    quant: QuantConfig
    mode: str
    output_dir: str
    seed: int
    raw: dict

    def canonical_text(self) -> str:
        """The merged key=value pairs, sorted; embedded in checkpoints."""
        return "\n".join(f"{k} = {self.raw[k]}" for k in sorted(self.raw)) + "\n"


def parse_config_text(text) -> dict:
    """key=value lines to a raw string dict; rejects unknown or malformed keys."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        raw[key] = value
    return raw


def apply_overrides(raw, overrides) -> dict:
    merged = dict(raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"override references unknown key {key!r}")
        merged[key] = value
    return merged


def _typed(raw) -> dict:
    out = {}
    for key, value in raw.items():
        try:
            if key in _INT_KEYS:
                out[key] = int(value)
            elif key in _FLOAT_KEYS:
                out[key] = float(value)
            else:
                out[key] = value
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    return out


def build_run_config(raw: dict) -> RunConfig:
    """Validate merged raw keys into a RunConfig; raises ConfigError."""
    vals = _typed(raw)
    seed = vals.get("run.seed", 0)

    def get(key, default):
        return vals.get(key, default)

    layers_text = get("model.layers", "784,100,10")
    try:
        layers = tuple(int(v) for v in layers_text.split(","))
    except ValueError:
        raise ConfigError(f"model.layers: cannot parse {layers_text!r}") from None

    mode = get("run.mode", "full")
    if mode not in MODES:
        raise ConfigError(f"run.mode must be one of {MODES}, got {mode!r}")

    scenario = ScenarioConfig(
        kind=get("scenario.kind", "permuted"),
        seed=get("scenario.seed", seed),
        n_tasks=get("scenario.n_tasks", 3),
        train_images=get("scenario.train_images", None),
        train_labels=get("scenario.train_labels", None),
        test_images=get("scenario.test_images", None),
        test_labels=get("scenario.test_labels", None),
        classes_per_task=get("scenario.classes_per_task", 2),
        classes=get("scenario.classes", 5),
        dim=get("scenario.dim", 16),
        samples=get("scenario.samples", 200),
        separation=get("scenario.separation", 8.0),
    )
    if scenario.kind not in ("permuted", "split", "synthetic"):
        raise ConfigError(f"scenario.kind {scenario.kind!r} not recognized")
    if scenario.kind in ("permuted", "split"):
        for field_name in ("train_images", "train_labels", "test_images", "test_labels"):
            path = getattr(scenario, field_name)
            if path is None:
                raise ConfigError(f"scenario.{field_name} required for {scenario.kind}")
            if not os.path.exists(path):
                raise ConfigError(f"scenario.{field_name}: no such file {path!r}")

    try:
        model = ModelSpec(layers)
        train = TrainConfig(
            epochs=get("prune.full_epochs", 50),
            batch_size=get("train.batch_size", 128),
            lr_initial=get("train.lr_initial", 0.01),
            lr_decay=get("train.lr_decay", 0.9),
            lr_floor=get("train.lr_floor", 0.0001),
            seed=seed,
        )
        prune = PruneConfig(
            population=get("prune.population", 16),
            alpha=get("prune.alpha", 0.9),
            beta=get("prune.beta", 0.1),
            v_min=get("prune.v_min", 0.45),
            v_max=get("prune.v_max", 0.85),
            short_epochs=get("prune.short_epochs", 5),
            full_epochs=get("prune.full_epochs", 50),
            t_l=get("prune.t_l", 4),
            psi_min=get("prune.psi_min", 2),
            seed=seed,
        )
        quant = QuantConfig(
            psi_init=get("quant.psi_init", 2),
            psi_max=get("quant.psi_max", 8),
            delta=get("quant.delta", 0.01),
            kmeans_iters=get("quant.kmeans_iters", 50),
            kmeans_restarts=get("quant.kmeans_restarts", 3),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    return RunConfig(scenario, model, train, prune, quant, mode,
                     get("run.output_dir", "run_out"), seed, dict(raw))


def load_run_config(path, overrides=None) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    return build_run_config(apply_overrides(parse_config_text(text), overrides))


def build_suite(cfg: ScenarioConfig) -> ScenarioSuite:
    """Materialize the scenario a config describes."""
    if cfg.kind == "synthetic":
        return synthetic_blobs(cfg.n_tasks, cfg.classes, cfg.dim,
                               cfg.samples, cfg.separation, cfg.seed)
    train = load_idx(cfg.train_images, cfg.train_labels)
    test = load_idx(cfg.test_images, cfg.test_labels)
    if cfg.kind == "permuted":
        return permuted_scenario(train, test, cfg.n_tasks, cfg.seed)
    return split_scenario(train, test, cfg.classes_per_task, cfg.seed)
