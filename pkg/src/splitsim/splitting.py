"""Model partitioning at the cut layer and server-side batch handling.

A ``SplitModel`` is one layer stack plus a cut index; clients run the lower
segment and upload ``SmashedBatch`` records (cut-layer activations plus
labels), the server concatenates them along the batch dimension into a
``ConcatBatch`` and runs a single forward/backward.

Loss convention: each client's rows contribute a *mean* cross-entropy over
that client's own rows, and client means are combined with the data-share
weights delta_i. The combined server gradient is then the delta-weighted sum
of per-client server gradients, and the cut-layer gradient slice returned
for client i carries the same delta_i scale (so a single client with
delta=1 reduces exactly to unsplit training).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .errors import DimensionError, InputError

Array = np.ndarray

DELTA_TOL = 1e-9


@dataclass
class SplitModel:
    """An ordered layer stack partitioned at ``cut_index``.

    ``layers[:cut_index]`` form the client segment, ``layers[cut_index:]``
    the server segment. Requires 1 <= cut_index < len(layers).
    """

    layers: list
    cut_index: int

    def __post_init__(self):
        if not 1 <= self.cut_index < len(self.layers):
            raise InputError(
                f"cut index {self.cut_index} outside [1, {len(self.layers) - 1}]"
            )

    @property
    def client_segment(self) -> list:
        return self.layers[: self.cut_index]

    @property
    def server_segment(self) -> list:
        return self.layers[self.cut_index :]

    def copy(self) -> "SplitModel":
        return SplitModel(nn.copy_layers(self.layers), self.cut_index)


@dataclass
class SmashedBatch:
    """Cut-layer activations for one client's mini-batch, with labels."""

    client_id: int
    smashed: Array
    labels: np.ndarray

    def __post_init__(self):
        if self.smashed.ndim != 2:
            raise DimensionError("smashed data must be [batch, cut_width]")
        if len(self.labels) != self.smashed.shape[0]:
            raise DimensionError("label count does not match smashed rows")

    @property
    def sample_count(self) -> int:
        return self.smashed.shape[0]


@dataclass
class ConcatBatch:
    """Client batches stacked along the batch dimension, in client-id order."""

    smashed: Array
    labels: np.ndarray
    client_ids: list[int]
    offsets: list[tuple[int, int]]

    @property
    def effective_size(self) -> int:
        """|B_s|: the server-side effective batch size."""
        return self.smashed.shape[0]

    def rows(self, client_id: int) -> slice:
        start, stop = self.offsets[self.client_ids.index(client_id)]
        return slice(start, stop)


def client_forward(
    client_layers: Sequence,
    features: Array,
    labels,
    client_id: int,
) -> tuple[SmashedBatch, nn.ActivationCache]:
    """Run a batch through the client segment.

    Returns the transportable ``SmashedBatch`` plus the activation cache the
    client must keep locally for its backward pass.
    """
    features = nn.as_tensor(features)
    if features.shape[0] == 0:
        raise InputError("client batch is empty")
    cache = nn.forward(client_layers, features)
    batch = SmashedBatch(
        client_id=client_id,
        smashed=cache.output,
        labels=np.asarray(labels, dtype=np.int64),
    )
    return batch, cache


def concat(batches: Sequence[SmashedBatch]) -> ConcatBatch:
    """Stack smashed batches in ascending client-id order.

    Input order does not matter; the output is canonical so cross-client
    reductions stay bitwise reproducible.
    """
    if not batches:
        raise InputError("no smashed batches to concatenate")
    ordered = sorted(batches, key=lambda b: b.client_id)
    ids = [b.client_id for b in ordered]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate client ids in concat")
    width = ordered[0].smashed.shape[1]
    for b in ordered:
        if b.smashed.shape[1] != width:
            raise DimensionError(
                f"cut width mismatch: {b.smashed.shape[1]} vs {width}"
            )
    offsets = []
    start = 0
    for b in ordered:
        offsets.append((start, start + b.sample_count))
        start += b.sample_count
    return ConcatBatch(
        smashed=np.concatenate([b.smashed for b in ordered], axis=0),
        labels=np.concatenate([b.labels for b in ordered]),
        client_ids=ids,
        offsets=offsets,
    )


@dataclass
class ServerStepResult:
    """Outcome of one server forward/backward/update round."""

    loss: float
    per_client_loss: dict[int, float]
    cut_grads: dict[int, Array]


def server_forward_backward(
    server_layers: Sequence,
    batch: ConcatBatch,
    deltas: dict[int, float],
    lr: float,
    opt_state: nn.OptimizerState,
) -> ServerStepResult:
    """One server round: forward the concat batch, backprop, update weights.

    The upstream gradient row for client i's sample j is
    ``delta_i * (softmax - onehot)_j / b_i``, which makes a single backward
    pass over the concatenated batch equal the delta-weighted sum of
    per-client server gradients. ``cut_grads[i]`` is client i's slice of the
    input gradient (delta-scaled, see module docstring). The optimizer step
    is applied after gradients are extracted, so the returned cut gradients
    reflect pre-update weights.
    """
    missing = [cid for cid in batch.client_ids if cid not in deltas]
    if missing:
        raise InputError(f"missing delta weights for clients {missing}")
    d = np.array([deltas[cid] for cid in batch.client_ids])
    if np.any(d < 0) or abs(d.sum() - 1.0) > DELTA_TOL:
        raise InputError("delta weights must be nonnegative and sum to 1")

    cache = nn.forward(server_layers, batch.smashed)
    logits = cache.output

    per_client_loss: dict[int, float] = {}
    upstream = np.zeros_like(logits)
    total = 0.0
    for cid, (start, stop) in zip(batch.client_ids, batch.offsets):
        loss_i, grad_i = nn.loss_softmax_ce(
            logits[start:stop], batch.labels[start:stop]
        )
        per_client_loss[cid] = loss_i
        upstream[start:stop] = deltas[cid] * grad_i
        total += deltas[cid] * loss_i

    param_grads, input_grad = nn.backward(cache, upstream)
    cut_grads = {
        cid: input_grad[start:stop]
        for cid, (start, stop) in zip(batch.client_ids, batch.offsets)
    }

    params = nn.collect_params(server_layers)
    new_params = nn.optimizer_step(
        params, nn.collect_grads(param_grads), opt_state, lr
    )
    nn.set_params(server_layers, new_params)

    return ServerStepResult(
        loss=total, per_client_loss=per_client_loss, cut_grads=cut_grads
    )
