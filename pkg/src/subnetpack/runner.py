"""Sequential task loop: prune, quantize, commit, evaluate, checkpoint.

Each task carves its sub-network out of the shared slot store, quantizes it,
and commits. Every task seen so far is then re-evaluated from the store's
dequantized components, which is what makes the past-task columns of the
accuracy matrix bit-stable. A checkpoint lands after every task so a run can
resume from any prefix and reproduce the uninterrupted result exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, apply_overrides, build_run_config, build_suite, parse_config_text
from .errors import CapacityExhausted, ConfigError
from .metrics import AccuracyMatrix, capacity_report, forget_check, lifelong_accuracy
from .network import DenseWeights, evaluate, train_masked, xavier_init
from .pruning import ROLE_FULLTRAIN, ROLE_INIT, PruneLog, adaptive_prune
from .quantization import (Codebook, QuantizedTaskWeights, adaptive_quantize,
                           dequantize, identity_quantize)
from .scenario import ScenarioSuite
from .seeding import derive_seed
from .store import SLOT_BITS, TaskMask, WeightSlotStore

CHECKPOINT_NAME = "checkpoint.bin"


@dataclass
class RunState:
    config: RunConfig
    suite: ScenarioSuite | None
    store: WeightSlotStore
    matrix: AccuracyMatrix
    manifest: str
    codebooks: dict = field(default_factory=dict)
    biases: dict = field(default_factory=dict)
    fp_weights: dict = field(default_factory=dict)  # in-memory only, not checkpointed
    q_ref: dict = field(default_factory=dict)
    q_quant: dict = field(default_factory=dict)
    psi_star: dict = field(default_factory=dict)
    prune_logs: list = field(default_factory=list)
    next_task: int = 0

    @property
    def checkpoint_path(self) -> str:
        return os.path.join(self.config.output_dir, CHECKPOINT_NAME)


def new_state(cfg: RunConfig) -> RunState:
    suite = build_suite(cfg.scenario)
    spec = cfg.model
    if spec.layer_sizes[0] != suite.input_dim:
        raise ConfigError(
            f"model input {spec.layer_sizes[0]} != scenario dim {suite.input_dim}")
    if spec.layer_sizes[-1] != suite.n_classes:
        raise ConfigError(
            f"model output {spec.layer_sizes[-1]} != {suite.n_classes} classes")
    store = WeightSlotStore(spec.shapes, t_max=cfg.prune.t_l)
    return RunState(cfg, suite, store, AccuracyMatrix(), suite.manifest_text())


def task_view(state: RunState, task_id: int):
    """(weights, mask) for a committed task, rebuilt from store components."""
    alloc = state.store.tasks[task_id]
    q = QuantizedTaskWeights(alloc.mask, alloc.codes,
                             state.codebooks[task_id], task_id)
    weights = DenseWeights(dequantize(q),
                           [b.copy() for b in state.biases[task_id]])
    return weights, list(alloc.mask)


def _mask_bit_budget(store: WeightSlotStore, mask) -> int:
    """Tightest remaining-bit budget over the mask's slots."""
    budget = SLOT_BITS
    for i in range(store.layer_count):
        flat = np.asarray(mask[i], dtype=bool).ravel()
        if flat.any():
            budget = min(budget, int(store.remaining_bits(i)[flat].min()))
    return budget


def _run_task_full(state: RunState, t, data):
    """Population pruning then adaptive quantization, with budget retries.

    A quantizer that needs more bits than the sampled slots can hold triggers
    a fresh population restricted to roomier slots; the floor rises each
    round, so the loop ends at psi_max.
    """
    cfg = state.config
    psi_min = cfg.prune.psi_min
    while True:
        prune_cfg = replace(cfg.prune, psi_min=psi_min)
        mask, weights, q_ref = adaptive_prune(
            t, state.store, cfg.model, data, prune_cfg, cfg.train,
            sink=state.prune_logs.append)
        budget = _mask_bit_budget(state.store, mask)
        try:
            psi, q, book, q_acc = adaptive_quantize(
                t, cfg.model, mask, weights, q_ref,
                (data.x_val, data.y_val), cfg.quant, psi_cap=budget)
        except CapacityExhausted as exc:
            if budget + 1 > cfg.quant.psi_max:
                raise CapacityExhausted(
                    exc.layers,
                    f"task {t}: no slot set can hold more than {budget} bits",
                ) from exc
            psi_min = budget + 1
            continue
        return mask, weights, q_ref, psi, q, book, q_acc


def _run_task_pruning_only(state: RunState, t, data):
    """Population pruning, then store the winner as raw 32-bit patterns."""
    cfg = state.config
    prune_cfg = replace(cfg.prune, psi_min=SLOT_BITS)
    mask, weights, q_ref = adaptive_prune(
        t, state.store, cfg.model, data, prune_cfg, cfg.train,
        sink=state.prune_logs.append)
    q, book = identity_quantize(mask, weights, task_id=t)
    view = DenseWeights(dequantize(q), [b.copy() for b in weights.biases])
    q_acc = evaluate(cfg.model, view, list(mask), data.x_val, data.y_val)
    return mask, weights, q_ref, SLOT_BITS, q, book, q_acc


def _run_task_quantization_only(state: RunState, t, data):
    """No pruning: train the dense network and quantize every slot."""
    cfg = state.config
    spec = cfg.model
    mask = TaskMask([np.ones(s, dtype=bool) for s in spec.shapes])
    init = xavier_init(spec, derive_seed(cfg.prune.seed, t, ROLE_INIT, 0))
    full_cfg = replace(cfg.train, epochs=cfg.prune.full_epochs,
                       seed=derive_seed(cfg.prune.seed, t, ROLE_FULLTRAIN, 0))
    weights, _ = train_masked(spec, init, list(mask),
                              (data.x_train, data.y_train), full_cfg)
    q_ref = evaluate(spec, weights, list(mask), data.x_val, data.y_val)
    saturated = tuple(
        i for i in range(state.store.layer_count)
        if not state.store.eligible_slots(i, cfg.quant.psi_init, cfg.prune.t_l).all()
    )
    if saturated:
        raise CapacityExhausted(
            saturated,
            f"task {t}: a dense mask needs every slot eligible for "
            f"{cfg.quant.psi_init}-bit components")
    budget = _mask_bit_budget(state.store, mask)
    psi, q, book, q_acc = adaptive_quantize(
        t, spec, mask, weights, q_ref, (data.x_val, data.y_val),
        cfg.quant, psi_cap=budget)
    return mask, weights, q_ref, psi, q, book, q_acc


_MODE_RUNNERS = {
    "full": _run_task_full,
    "pruning-only": _run_task_pruning_only,
    "quantization-only": _run_task_quantization_only,
}


def execute_task(state: RunState, t: int) -> None:
    data = state.suite.get_task(t)
    mask, weights, q_ref, psi, q, book, q_acc = _MODE_RUNNERS[state.config.mode](
        state, t, data)
    state.store.commit(t, mask, psi, q.codes)
    state.codebooks[t] = book
    state.biases[t] = [b.copy() for b in weights.biases]
    state.fp_weights[t] = weights
    state.q_ref[t] = q_ref
    state.q_quant[t] = q_acc
    state.psi_star[t] = psi

    row = []
    for e in range(t + 1):
        task = state.suite.get_task(e)
        view, view_mask = task_view(state, e)
        row.append(evaluate(state.config.model, view, view_mask,
                            task.x_test, task.y_test))
    state.matrix.append_row(row)
    state.next_task = t + 1
    save_run_checkpoint(state)


def execute_run(state: RunState) -> None:
    """Run every remaining task, then write reports.

    On capacity exhaustion the current state is checkpointed before the error
    propagates, so the run can be inspected or resumed with a wider budget.
    """
    os.makedirs(state.config.output_dir, exist_ok=True)
    try:
        for t in range(state.next_task, state.suite.n_tasks):
            execute_task(state, t)
    except CapacityExhausted:
        save_run_checkpoint(state)
        raise
    write_reports(state)


# -- checkpoint round trip ----------------------------------------------------

def _state_payload(state: RunState) -> dict:
    spec = state.config.model
    return {
        "model": {
            "layers": list(spec.layer_sizes),
            "activation": spec.activation,
            "loss": spec.loss,
        },
        "store": state.store.state_dict(),
        "codebooks": {
            str(t): {"psi": b.psi, "centroids": list(b.centroids)}
            for t, b in state.codebooks.items()
        },
        "biases": {str(t): list(bs) for t, bs in state.biases.items()},
        "matrix": [list(row) for row in state.matrix.rows],
        "manifest": state.manifest,
        "config": state.config.canonical_text(),
        "mode": state.config.mode,
        "next_task": state.next_task,
        "q_ref": {str(t): v for t, v in state.q_ref.items()},
        "q_quant": {str(t): v for t, v in state.q_quant.items()},
        "psi_star": {str(t): v for t, v in state.psi_star.items()},
        "prune_logs": [
            {
                "task_id": log.task_id,
                "accuracies": list(log.accuracies),
                "sparsities": list(log.sparsities),
                "scores": list(log.scores),
                "chosen": log.chosen,
                "winner_layer_sparsity": list(log.winner_layer_sparsity),
            }
            for log in state.prune_logs
        ],
    }


def save_run_checkpoint(state: RunState) -> str:
    os.makedirs(state.config.output_dir, exist_ok=True)
    save_checkpoint(state.checkpoint_path, _state_payload(state))
    return state.checkpoint_path


def state_from_checkpoint(path, need_suite=True, output_dir=None) -> RunState:
    """Rebuild a RunState; with need_suite=False, reports only (no resume)."""
    payload = load_checkpoint(path)
    cfg = build_run_config(apply_overrides(
        parse_config_text(payload["config"]), None))
    if output_dir is not None:
        cfg.output_dir = output_dir
    suite = build_suite(cfg.scenario) if need_suite else None
    state = RunState(
        cfg,
        suite,
        WeightSlotStore.from_state_dict(payload["store"]),
        AccuracyMatrix(payload["matrix"]),
        payload["manifest"],
        next_task=payload["next_task"],
    )
    for key, rec in payload["codebooks"].items():
        state.codebooks[int(key)] = Codebook(rec["psi"], rec["centroids"])
    for key, arrs in payload["biases"].items():
        state.biases[int(key)] = arrs
    state.q_ref = {int(k): v for k, v in payload["q_ref"].items()}
    state.q_quant = {int(k): v for k, v in payload["q_quant"].items()}
    state.psi_star = {int(k): v for k, v in payload["psi_star"].items()}
    state.prune_logs = [
        PruneLog(rec["task_id"], tuple(rec["accuracies"]),
                 tuple(rec["sparsities"]), tuple(rec["scores"]), rec["chosen"],
                 tuple(rec["winner_layer_sparsity"]))
        for rec in payload["prune_logs"]
    ]
    return state


# -- reports -------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def write_reports(state: RunState) -> dict:
    """accuracy_matrix.csv, capacity.csv, summary.json, scenario_manifest.txt.

    Files are byte-identical across reruns of the same seeded config; the one
    timestamp sits alone on its own line of summary.json.
    """
    if state.matrix.n_episodes == 0:
        raise ValueError("nothing to report: no task has completed")
    out = state.config.output_dir
    os.makedirs(out, exist_ok=True)
    paths = {}

    n = state.matrix.n_episodes
    lines = ["episode," + ",".join(f"task_{t}" for t in range(n))]
    for e, row in enumerate(state.matrix.rows):
        cells = [_fmt(v) for v in row] + [""] * (n - len(row))
        lines.append(f"{e}," + ",".join(cells))
    paths["accuracy_matrix"] = os.path.join(out, "accuracy_matrix.csv")
    with open(paths["accuracy_matrix"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    cap = capacity_report(state.store, state.codebooks)
    lines = ["task,mode,psi,bits,bits_actual,percent,percent_actual,cumulative_bits"]
    for entry in cap.entries:
        lines.append(
            f"{entry.task_id},{state.config.mode},{entry.psi},{entry.bits},"
            f"{entry.bits_actual},{_fmt(entry.percent)},"
            f"{_fmt(entry.percent_actual)},{entry.cumulative_bits}")
    paths["capacity"] = os.path.join(out, "capacity.csv")
    with open(paths["capacity"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    per_task_sparsity = {
        str(t): [
            1.0 - used / size
            for used, size in zip(state.store.tasks[t].mask.active_counts(),
                                  state.store.layer_sizes)
        ]
        for t in sorted(state.store.tasks)
    }
    summary = {
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "mode": state.config.mode,
        "tasks_completed": state.matrix.n_episodes,
        "lifelong_accuracy": lifelong_accuracy(state.matrix),
        "final_row": list(state.matrix.final_row()),
        "forget_violations": forget_check(state.matrix),
        "psi_star": {str(t): v for t, v in sorted(state.psi_star.items())},
        "accuracy_full_precision": {str(t): v for t, v in sorted(state.q_ref.items())},
        "accuracy_quantized": {str(t): v for t, v in sorted(state.q_quant.items())},
        "quantization_drop": {
            str(t): state.q_ref[t] - state.q_quant[t] for t in sorted(state.q_ref)
        },
        "task_layer_usage_sparsity": per_task_sparsity,
        "capacity": {
            "dense_bits": cap.dense_bits,
            "total_bits": cap.total_bits,
            "total_percent": cap.total_percent,
            "per_task": [
                {
                    "task": e.task_id, "psi": e.psi, "bits": e.bits,
                    "bits_actual": e.bits_actual, "percent": e.percent,
                    "percent_actual": e.percent_actual,
                    "cumulative_bits": e.cumulative_bits,
                }
                for e in cap.entries
            ],
        },
        "prune_logs": [
            {
                "task_id": log.task_id,
                "accuracies": list(log.accuracies),
                "sparsities": list(log.sparsities),
                "scores": list(log.scores),
                "chosen": log.chosen,
                "winner_layer_sparsity": list(log.winner_layer_sparsity),
            }
            for log in state.prune_logs
        ],
    }
    paths["summary"] = os.path.join(out, "summary.json")
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    paths["manifest"] = os.path.join(out, "scenario_manifest.txt")
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        fh.write(state.manifest)
    return paths
