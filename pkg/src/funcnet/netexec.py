"""Compile genomes into executable networks; forward, backprop, Adam.

A compiled network evaluates layers in genome order. Each connector of a
layer contributes one slot to that layer's input vector, gathered from one
of three places: the per-input affine stage (relu(s_i*x_i + c_i)), the
current-step output of an earlier layer, or the stored previous-step output
of a same-or-later layer (virtual-input recurrence). Hidden layers apply
ReLU; the output layer is linear, so its values serve directly as logits or
Q-values. Gradients never flow through stored memory: recurrent slots are
constants during training (one-step truncation).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .genome import Genome, InvalidGenomeError, digest, validate

log = logging.getLogger(__name__)

LOSS_KINDS = ("cross_entropy", "smooth_l1")

CHECKPOINT_TAG = "funcnet-params"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Parameter checkpoint is malformed or belongs to a different genome."""


@dataclass(eq=False)
class SlotGroup:
    """Slots of one layer that share a source array.

    kind 0 reads the input stage, kind 1 a computed layer output, kind 2 a
    memory vector. `cols` are slot positions within the layer's fan-in,
    `idx` the matching component indices in the source array.
    """
    kind: int
    src_pos: int
    cols: np.ndarray
    idx: np.ndarray


@dataclass(eq=False)
class LayerPlan:
    position: int
    neurons: int
    fan_in: int
    w_slice: slice
    b_slice: slice
    groups: list[SlotGroup]
    is_output: bool
    W: np.ndarray
    b: np.ndarray


@dataclass(eq=False)
class CompiledNetwork:
    """Single-owner mutable execution state for one genome.

    `params` is a fixed buffer; every update happens in place so the per-layer
    W/b views in the plan stay valid. `memory` holds each layer's previous
    single-sample output for recurrent reads.
    """
    genome: Genome
    genome_digest: str
    num_inputs: int
    num_outputs: int
    plan: list[LayerPlan]
    params: np.ndarray
    memory: list[np.ndarray]

    @property
    def param_count(self) -> int:
        return self.params.size

    def reset_memory(self) -> None:
        for m in self.memory:
            m[:] = 0.0

    def memory_snapshot(self) -> list[np.ndarray]:
        return [m.copy() for m in self.memory]

    def set_memory(self, snapshot: list[np.ndarray]) -> None:
        for m, s in zip(self.memory, snapshot, strict=True):
            m[:] = s


@dataclass(eq=False)
class OptimizerState:
    """Adam accumulators; `step` counts applied updates."""
    m: np.ndarray
    v: np.ndarray
    step: int
    lr: float
    beta1: float
    beta2: float
    eps: float


def make_optimizer(net: CompiledNetwork, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState(np.zeros_like(net.params), np.zeros_like(net.params),
                          0, lr, beta1, beta2, eps)


def compile(genome: Genome, rng: np.random.Generator | None = None) -> CompiledNetwork:
    """Build the execution plan; with an rng, also initialize parameters.

    Refuses structurally invalid genomes. Without an rng the parameters are
    left at zero for the caller to fill (init_params or load_params).
    """
    violations = validate(genome)
    if violations:
        raise InvalidGenomeError(violations)
    n_in = genome.num_inputs
    pos_of = {layer.id: p for p, layer in enumerate(genome.layers)}
    total = 2 * n_in + sum(int(l.neuron_count) * (len(l.connectors) + 1)
                           for l in genome.layers)
    params = np.zeros(total, dtype=np.float64)
    plan: list[LayerPlan] = []
    off = 2 * n_in
    last = len(genome.layers) - 1
    for p, layer in enumerate(genome.layers):
        n, f = int(layer.neuron_count), len(layer.connectors)
        grouped: dict[tuple[int, int], tuple[list[int], list[int]]] = {}
        for col, conn in enumerate(layer.connectors):
            if conn.source.is_input:
                key, idx = (0, -1), conn.source.input_index
            else:
                sp = pos_of[conn.source.layer_id]
                key, idx = (2 if sp >= p else 1, sp), conn.source.neuron_index
            cols, idxs = grouped.setdefault(key, ([], []))
            cols.append(col)
            idxs.append(idx)
        groups = [SlotGroup(kind, sp, np.asarray(cols, dtype=np.intp),
                            np.asarray(idxs, dtype=np.intp))
                  for (kind, sp), (cols, idxs) in grouped.items()]
        w_slice = slice(off, off + n * f)
        off += n * f
        b_slice = slice(off, off + n)
        off += n
        plan.append(LayerPlan(position=p, neurons=n, fan_in=f,
                              w_slice=w_slice, b_slice=b_slice, groups=groups,
                              is_output=(p == last),
                              W=params[w_slice].reshape(n, f),
                              b=params[b_slice]))
    net = CompiledNetwork(genome=genome, genome_digest=digest(genome),
                          num_inputs=n_in, num_outputs=genome.num_outputs,
                          plan=plan, params=params,
                          memory=[np.zeros(int(l.neuron_count)) for l in genome.layers])
    if rng is not None:
        init_params(net, rng)
    return net


def init_params(net: CompiledNetwork, rng: np.random.Generator) -> None:
    """He-uniform weights, zero biases, identity input stage, zero memory."""
    net.params[:net.num_inputs] = 1.0
    net.params[net.num_inputs:2 * net.num_inputs] = 0.0
    for lp in net.plan:
        bound = math.sqrt(6.0 / lp.fan_in)
        lp.W[:] = rng.uniform(-bound, bound, size=lp.W.shape)
        lp.b[:] = 0.0
    net.reset_memory()


def recurrent_slot_count(net: CompiledNetwork) -> int:
    return sum(len(g.cols) for lp in net.plan for g in lp.groups if g.kind == 2)


def forward(net: CompiledNetwork, x) -> np.ndarray:
    """Stateful single-sample pass; afterwards `memory` holds this step's outputs.

    A layer's memory is overwritten right after the layer is computed. Safe:
    recurrent readers sit at positions <= their source, so every reader runs
    before its source's update within the same pass.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.num_inputs,):
        raise ValueError(f"expected input of length {net.num_inputs}, got shape {x.shape}")
    n_in = net.num_inputs
    u = np.maximum(net.params[:n_in] * x + net.params[n_in:2 * n_in], 0.0)
    outs: list[np.ndarray] = []
    for lp in net.plan:
        slots = np.empty(lp.fan_in)
        for g in lp.groups:
            if g.kind == 0:
                slots[g.cols] = u[g.idx]
            elif g.kind == 1:
                slots[g.cols] = outs[g.src_pos][g.idx]
            else:
                slots[g.cols] = net.memory[g.src_pos][g.idx]
        z = lp.W @ slots
        z += lp.b
        y = z if lp.is_output else np.maximum(z, 0.0, out=z)
        outs.append(y)
        net.memory[lp.position][:] = y
    return outs[-1]


def _forward_full(net: CompiledNetwork, X: np.ndarray,
                  memories: list[np.ndarray] | None):
    """Stateless batch pass. Returns (U, slot matrices, layer outputs)."""
    if X.ndim != 2 or X.shape[1] != net.num_inputs:
        raise ValueError(f"expected batch of shape (B, {net.num_inputs}), got {X.shape}")
    n_in = net.num_inputs
    batch = X.shape[0]
    U = np.maximum(X * net.params[:n_in] + net.params[n_in:2 * n_in], 0.0)
    S_list: list[np.ndarray] = []
    Y_list: list[np.ndarray] = []
    for lp in net.plan:
        S = np.zeros((batch, lp.fan_in))
        for g in lp.groups:
            if g.kind == 0:
                S[:, g.cols] = U[:, g.idx]
            elif g.kind == 1:
                S[:, g.cols] = Y_list[g.src_pos][:, g.idx]
            elif memories is not None:
                S[:, g.cols] = memories[g.src_pos][:, g.idx]
        Z = S @ lp.W.T + lp.b
        Y_list.append(Z if lp.is_output else np.maximum(Z, 0.0, out=Z))
        S_list.append(S)
    return U, S_list, Y_list


def forward_batch(net: CompiledNetwork, inputs,
                  memories: list[np.ndarray] | None = None) -> np.ndarray:
    """Batch outputs without touching net.memory.

    `memories`, when given, supplies per-sample recurrent reads as one
    (batch, width) array per layer; omitted, recurrent slots read zero.
    """
    X = np.asarray(inputs, dtype=np.float64)
    return _forward_full(net, X, memories)[2][-1]


def _cross_entropy(logits: np.ndarray, targets) -> tuple[float, np.ndarray]:
    t = np.asarray(targets, dtype=np.intp)
    batch, k = logits.shape
    if t.shape != (batch,):
        raise ValueError("cross_entropy expects one class index per sample")
    if np.any((t < 0) | (t >= k)):
        raise ValueError("class index out of range")
    zmax = logits.max(axis=1, keepdims=True)
    ez = np.exp(logits - zmax)
    total = ez.sum(axis=1)
    rows = np.arange(batch)
    per = np.log(total) + zmax[:, 0] - logits[rows, t]
    dlogits = ez / total[:, None]
    dlogits[rows, t] -= 1.0
    return float(per.mean()), dlogits / batch


def _smooth_l1(pred: np.ndarray, targets) -> tuple[float, np.ndarray]:
    tgt = np.asarray(targets, dtype=np.float64)
    if tgt.shape != pred.shape:
        raise ValueError(f"target shape {tgt.shape} != prediction shape {pred.shape}")
    d = pred - tgt
    a = np.abs(d)
    per_elem = np.where(a < 1.0, 0.5 * d * d, a - 0.5)
    return float(per_elem.mean()), np.clip(d, -1.0, 1.0) / d.size


_LOSSES = {"cross_entropy": _cross_entropy, "smooth_l1": _smooth_l1}


def loss(prediction, target, kind: str) -> float:
    """Single-sample loss. cross_entropy takes a class index target."""
    if kind not in _LOSSES:
        raise ValueError(f"unknown loss kind {kind!r}")
    pred = np.atleast_1d(np.asarray(prediction, dtype=np.float64))
    if kind == "cross_entropy":
        value, _ = _cross_entropy(pred[None, :], [int(target)])
    else:
        tgt = np.atleast_1d(np.asarray(target, dtype=np.float64))
        value, _ = _smooth_l1(pred[None, :], tgt[None, :])
    return value


def batch_loss(net: CompiledNetwork, inputs, targets, loss_kind: str,
               memories: list[np.ndarray] | None = None) -> float:
    """Mean batch loss at the current parameters; no gradient, no update."""
    if loss_kind not in _LOSSES:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    X = np.asarray(inputs, dtype=np.float64)
    _, _, Y_list = _forward_full(net, X, memories)
    value, _ = _LOSSES[loss_kind](Y_list[-1], targets)
    return value


def loss_and_grad(net: CompiledNetwork, inputs, targets, loss_kind: str,
                  memories: list[np.ndarray] | None = None) -> tuple[float, np.ndarray]:
    """Mean batch loss and its gradient w.r.t. the flat parameter vector.

    Recurrent slots are read from `memories` (or zero) and treated as
    constants, so no gradient reaches them.
    """
    if loss_kind not in _LOSSES:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    X = np.asarray(inputs, dtype=np.float64)
    U, S_list, Y_list = _forward_full(net, X, memories)
    value, d_out = _LOSSES[loss_kind](Y_list[-1], targets)
    return value, _backward(net, X, U, S_list, Y_list, d_out)


def _backward(net: CompiledNetwork, X, U, S_list, Y_list, d_out) -> np.ndarray:
    grad = np.zeros_like(net.params)
    d_y: list[np.ndarray | None] = [None] * len(net.plan)
    d_y[-1] = d_out
    d_u = np.zeros_like(U)
    for lp in reversed(net.plan):
        dy = d_y[lp.position]
        if dy is None:
            # no non-recurrent consumer reached this layer: zero gradient
            continue
        dz = dy if lp.is_output else dy * (Y_list[lp.position] > 0)
        grad[lp.w_slice] += (dz.T @ S_list[lp.position]).ravel()
        grad[lp.b_slice] += dz.sum(axis=0)
        d_s = dz @ lp.W
        for g in lp.groups:
            if g.kind == 2:
                continue
            block = d_s[:, g.cols]
            if g.kind == 0:
                np.add.at(d_u.T, g.idx, block.T)
            else:
                if d_y[g.src_pos] is None:
                    d_y[g.src_pos] = np.zeros_like(Y_list[g.src_pos])
                np.add.at(d_y[g.src_pos].T, g.idx, block.T)
    n_in = net.num_inputs
    d_pre = d_u * (U > 0)
    grad[:n_in] = (d_pre * X).sum(axis=0)
    grad[n_in:2 * n_in] = d_pre.sum(axis=0)
    return grad


def train_step(net: CompiledNetwork, inputs, targets, loss_kind: str,
               opt: OptimizerState,
               memories: list[np.ndarray] | None = None) -> float:
    """One Adam step on the mean batch loss; returns the pre-update loss.

    A non-finite loss aborts the step: parameters and optimizer state are
    left untouched and the loss is returned as the diagnostic.
    """
    if loss_kind not in _LOSSES:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    X = np.asarray(inputs, dtype=np.float64)
    U, S_list, Y_list = _forward_full(net, X, memories)
    value, d_out = _LOSSES[loss_kind](Y_list[-1], targets)
    if not math.isfinite(value):
        log.warning("non-finite loss %r: update skipped", value)
        return value
    grad = _backward(net, X, U, S_list, Y_list, d_out)
    opt.step += 1
    opt.m += (1.0 - opt.beta1) * (grad - opt.m)
    opt.v += (1.0 - opt.beta2) * (grad * grad - opt.v)
    m_hat = opt.m / (1.0 - opt.beta1 ** opt.step)
    v_hat = opt.v / (1.0 - opt.beta2 ** opt.step)
    net.params -= opt.lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return value


def save_params(net: CompiledNetwork, path) -> None:
    """Checkpoint: text header binding the genome digest, then <f4 payload."""
    header = (f"{CHECKPOINT_TAG} {CHECKPOINT_VERSION}\n"
              f"digest {net.genome_digest}\n"
              f"count {net.params.size}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(net.params.astype("<f4").tobytes())


def load_params(net: CompiledNetwork, path) -> None:
    """Load a checkpoint saved for the same genome; resets memory."""
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4:
        raise CheckpointError("truncated checkpoint header")
    tag_line, digest_line, count_line, payload = parts
    if tag_line.decode("ascii", "replace") != f"{CHECKPOINT_TAG} {CHECKPOINT_VERSION}":
        raise CheckpointError(f"unrecognized checkpoint format: {tag_line!r}")
    if not digest_line.startswith(b"digest "):
        raise CheckpointError("missing digest header")
    if digest_line[7:].decode("ascii", "replace") != net.genome_digest:
        raise CheckpointError("genome digest mismatch: checkpoint belongs to a different genome")
    try:
        count = int(count_line.split()[1])
    except (IndexError, ValueError) as err:
        raise CheckpointError("malformed count header") from err
    if count != net.params.size:
        raise CheckpointError(f"parameter count mismatch: {count} != {net.params.size}")
    if len(payload) != 4 * count:
        raise CheckpointError("payload size does not match count")
    net.params[:] = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    net.reset_memory()
