"""Bit-budgeted weight-slot store, per-task masks, sparsity, candidate sampling.

Every weight position is a 32-bit slot carved into task-exclusive components.
A component is (task_id, bit_width, code); the store tracks per-slot component
counts and remaining bits, and owns the committed per-task masks and codes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CapacityExhausted, CapacityWarning, CommitRejected

SLOT_BITS = 32


class TaskMask:
    """Per-layer boolean masks for one task; layer arrays match weight shapes."""

    def __init__(self, layers):
        self.layers = [np.asarray(m, dtype=bool) for m in layers]

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def active_counts(self) -> list[int]:
        return [int(m.sum()) for m in self.layers]

    def same_as(self, other: "TaskMask") -> bool:
        return len(self) == len(other) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self, other)
        )


@dataclass(frozen=True)
class SparsityReport:
    """Per-layer free-slot ratios with their weighted and normalized sums."""

    per_layer: tuple[float, ...]
    weighted: float
    normalized: float


@dataclass
class TaskAllocation:
    """One committed task: bit-width, masks, and per-layer codes.

    codes[i] holds one uint32 per active mask slot of layer i, in row-major
    slot order.
    """

    task_id: int
    psi: int
    mask: TaskMask
    codes: list[np.ndarray]


class WeightSlotStore:
    def __init__(self, layer_shapes, t_max: int = 4):
        self.layer_shapes = tuple((int(r), int(c)) for r, c in layer_shapes)
        self.layer_sizes = tuple(r * c for r, c in self.layer_shapes)
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("every layer needs at least one slot")
        if t_max < 1:
            raise ValueError("t_max must be >= 1")
        self.t_max = int(t_max)
        self._comp_count = [np.zeros(s, dtype=np.int32) for s in self.layer_sizes]
        self._remaining = [np.full(s, SLOT_BITS, dtype=np.int32) for s in self.layer_sizes]
        self.tasks: dict[int, TaskAllocation] = {}

    @property
    def layer_count(self) -> int:
        return len(self.layer_shapes)

    @property
    def total_slots(self) -> int:
        return sum(self.layer_sizes)

    def remaining_bits(self, layer: int) -> np.ndarray:
        return self._remaining[layer].copy()

    def component_counts(self, layer: int) -> np.ndarray:
        return self._comp_count[layer].copy()

    def slot_components(self, layer: int, slot: int) -> list[tuple[int, int, int]]:
        """(task_id, bit_width, code) entries of one slot, in commit order."""
        out = []
        for alloc in self.tasks.values():
            flat = alloc.mask[layer].ravel()
            if flat[slot]:
                pos = int(np.count_nonzero(flat[:slot]))
                out.append((alloc.task_id, alloc.psi, int(alloc.codes[layer][pos])))
        return out

    # -- sparsity ----------------------------------------------------------

    def sparsity_level(self, layer: int) -> float:
        """Fraction of the layer's slots not yet assigned to any task."""
        used = int(np.count_nonzero(self._comp_count[layer]))
        return (self.layer_sizes[layer] - used) / self.layer_sizes[layer]

    def weighted_sparsity(self) -> SparsityReport:
        per_layer = tuple(self.sparsity_level(i) for i in range(self.layer_count))
        return self._report(per_layer)

    def hypothetical_sparsity(self, mask: TaskMask) -> SparsityReport:
        """Sparsity as if `mask` were committed on top of the current tasks."""
        per_layer = []
        for i in range(self.layer_count):
            used = np.count_nonzero(
                (self._comp_count[i] > 0) | mask[i].ravel()
            )
            per_layer.append((self.layer_sizes[i] - int(used)) / self.layer_sizes[i])
        return self._report(tuple(per_layer))

    def _report(self, per_layer) -> SparsityReport:
        weighted = sum(s * u for s, u in zip(self.layer_sizes, per_layer))
        return SparsityReport(per_layer, weighted, weighted / self.total_slots)

    # -- eligibility and sampling -------------------------------------------

    def eligible_slots(self, layer: int, psi_min: int, t_l: int | None = None) -> np.ndarray:
        t_l = self.t_max if t_l is None else t_l
        return (self._comp_count[layer] < t_l) & (self._remaining[layer] >= psi_min)

    def eligible(self, layer: int, slot: int, psi_min: int, t_l: int | None = None) -> bool:
        return bool(self.eligible_slots(layer, psi_min, t_l)[slot])

    # -- commit --------------------------------------------------------------

    def commit(self, task_id: int, mask: TaskMask, psi: int, codes) -> None:
        """Append (task_id, psi, code) components to every masked slot.

        All-or-nothing: any ineligible slot, duplicate task id, or malformed
        codes rejects the whole commit and leaves the store untouched.
        """
        if task_id in self.tasks:
            raise CommitRejected(f"task {task_id} is already committed")
        if not (1 <= psi <= SLOT_BITS):
            raise CommitRejected(f"bit-width {psi} outside [1, {SLOT_BITS}]")
        if len(mask) != self.layer_count or len(codes) != self.layer_count:
            raise CommitRejected("mask/codes layer count mismatch")

        clean_codes = []
        bad_layers = []
        for i in range(self.layer_count):
            if mask[i].shape != self.layer_shapes[i]:
                raise CommitRejected(
                    f"layer {i}: mask shape {mask[i].shape} != {self.layer_shapes[i]}"
                )
            flat = mask[i].ravel()
            layer_codes = np.asarray(codes[i], dtype=np.uint64)
            if layer_codes.shape != (int(flat.sum()),):
                raise CommitRejected(
                    f"layer {i}: got {layer_codes.shape[0]} codes for {int(flat.sum())} slots"
                )
            if psi < SLOT_BITS and layer_codes.size and layer_codes.max() >= (1 << psi):
                raise CommitRejected(f"layer {i}: code exceeds {psi}-bit range")
            clean_codes.append(layer_codes.astype(np.uint32))
            if np.any(flat & ~self.eligible_slots(i, psi)):
                bad_layers.append(i)
        if bad_layers:
            raise CommitRejected(
                f"ineligible slots for bit-width {psi} in layers {bad_layers}"
            )

        for i in range(self.layer_count):
            flat = mask[i].ravel()
            self._comp_count[i][flat] += 1
            self._remaining[i][flat] -= psi
        self.tasks[task_id] = TaskAllocation(task_id, psi, mask, clean_codes)

    # -- serialization ---------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "layer_shapes": [list(s) for s in self.layer_shapes],
            "t_max": self.t_max,
            "tasks": [
                {
                    "task_id": a.task_id,
                    "psi": a.psi,
                    "mask": [m for m in a.mask],
                    "codes": list(a.codes),
                }
                for a in self.tasks.values()
            ],
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "WeightSlotStore":
        store = cls(state["layer_shapes"], t_max=state["t_max"])
        for rec in state["tasks"]:
            store.commit(rec["task_id"], TaskMask(rec["mask"]), rec["psi"], rec["codes"])
        return store


def sample_candidate_mask(store, layer, target_sparsity, psi_min, t_l, rng) -> np.ndarray:
    """Random lottery-ticket mask for one layer at the given sparsity.

    Keeps ceil((1 - s) * slots) uniformly drawn eligible slots; a too-small
    eligible set is taken whole with a CapacityWarning.
    """
    size = store.layer_sizes[layer]
    eligible = np.flatnonzero(store.eligible_slots(layer, psi_min, t_l))
    if eligible.size == 0:
        raise CapacityExhausted([layer], f"no eligible slots left in layer {layer}")
    want = math.ceil((1.0 - target_sparsity) * size)
    if want > eligible.size:
        warnings.warn(
            f"layer {layer}: wanted {want} slots, only {eligible.size} eligible",
            CapacityWarning,
            stacklevel=2,
        )
        chosen = eligible
    else:
        chosen = rng.choice(eligible, size=want, replace=False)
    flat = np.zeros(size, dtype=bool)
    flat[chosen] = True
    return flat.reshape(store.layer_shapes[layer])


def sample_candidate_full(store, v_min, v_max, psi_min, t_l, rng) -> TaskMask:
    """Candidate mask over all layers, target sparsity ~ U[v_min, v_max] per layer."""
    if not (0.0 <= v_min <= v_max <= 1.0):
        raise ValueError(f"need 0 <= v_min <= v_max <= 1, got [{v_min}, {v_max}]")
    layers = []
    for i in range(store.layer_count):
        s = rng.uniform(v_min, v_max)
        layers.append(sample_candidate_mask(store, i, s, psi_min, t_l, rng))
    return TaskMask(layers)
