"""Desk-scale search space: a frozen early-exit surrogate with mixable ops.

Each edge is one block slot of an early-exit MLP evaluated at a fixed
internal width (one unit per class). Every op on an edge is a frozen affine
+ tanh transform; an op's declared quality interpolates its weights between
an informative transform built from the task's known cluster geometry
(quality 1) and pure seeded noise (quality 0). Architectures are evaluated
on the validation split with these fixed weights, so the joint
cross-entropy over all exits is a cheap, differentiable function of the
per-edge mixing vectors.

Ops carry a declared MACs table and materialize to concrete block widths
for final from-scratch training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .toytrain import ConfigError, TaskData, _softmax

HEAD_GAIN = 6.0
NOISE_SCALE = 1.0


@dataclass
class ToySupernet:
    """Frozen search-space surrogate bound to one task's validation split."""

    x_valid: np.ndarray
    y_valid: np.ndarray
    num_classes: int
    op_weights: list[list[np.ndarray]]  # [edge][op] -> (fan_in, H)
    op_biases: list[list[np.ndarray]]
    head_w: list[np.ndarray]  # one head per edge (exit after every block)
    head_b: list[np.ndarray]
    macs: list[np.ndarray]  # [edge] -> per-op MACs
    quality: list[np.ndarray]  # [edge] -> per-op quality in [0, 1]
    width_menu: list[tuple[int, ...]]  # materialized block widths per op

    @property
    def num_edges(self) -> int:
        return len(self.op_weights)

    def ops_per_edge(self) -> list[int]:
        return [len(ops) for ops in self.op_weights]

    def _check_z(self, z_list: list[np.ndarray]) -> None:
        if len(z_list) != self.num_edges:
            raise ConfigError(
                f"expected {self.num_edges} mixing vectors, got {len(z_list)}"
            )
        for i, z in enumerate(z_list):
            if z.shape != (len(self.op_weights[i]),):
                raise ConfigError(
                    f"edge {i}: mixing vector shape {z.shape} != "
                    f"({len(self.op_weights[i])},)"
                )

    def joint_nll(self, z_list: list[np.ndarray]):
        """Joint validation NLL of a mixed architecture and its dNLL/dZ.

        Forward mixes op outputs per edge with the given vectors; backward
        accumulates head gradients through the shared chain.
        """
        z_list = [np.asarray(z, dtype=np.float64) for z in z_list]
        self._check_z(z_list)
        x, y = self.x_valid, self.y_valid
        batch = x.shape[0]
        onehot = np.zeros((batch, self.num_classes))
        onehot[np.arange(batch), y] = 1.0

        h = x
        op_outs: list[list[np.ndarray]] = []
        hiddens: list[np.ndarray] = []
        dz_heads: list[np.ndarray] = []
        nll = 0.0
        for i, z in enumerate(z_list):
            outs = [
                np.tanh(h @ w + b)
                for w, b in zip(self.op_weights[i], self.op_biases[i])
            ]
            h = sum(z[k] * outs[k] for k in range(len(outs)))
            op_outs.append(outs)
            hiddens.append(h)
            logits = h @ self.head_w[i] + self.head_b[i]
            p = _softmax(logits)
            nll += float(-np.mean(np.log(np.maximum(p[np.arange(batch), y], 1e-300))))
            dz_heads.append((p - onehot) / batch)

        grad_z = [np.zeros_like(z) for z in z_list]
        carry = None
        for i in reversed(range(self.num_edges)):
            dh = dz_heads[i] @ self.head_w[i].T
            if carry is not None:
                dh = dh + carry
            outs = op_outs[i]
            for k, out in enumerate(outs):
                grad_z[i][k] = float(np.sum(dh * out))
            carry = sum(
                z_list[i][k] * ((dh * (1.0 - outs[k] ** 2)) @ self.op_weights[i][k].T)
                for k in range(len(outs))
            )
        return nll, grad_z

    def one_hot(self, arch: tuple[int, ...]) -> list[np.ndarray]:
        if len(arch) != self.num_edges:
            raise ConfigError(f"architecture {arch} must pick one op per edge")
        z_list = []
        for i, choice in enumerate(arch):
            z = np.zeros(len(self.op_weights[i]))
            z[choice] = 1.0
            z_list.append(z)
        return z_list

    def nll_of_discrete(self, arch: tuple[int, ...]) -> float:
        nll, _ = self.joint_nll(self.one_hot(arch))
        return nll

    def materialize(self, arch: tuple[int, ...]) -> tuple[int, ...]:
        """Concrete block widths for from-scratch training of a chosen arch."""
        return tuple(self.width_menu[i][choice] for i, choice in enumerate(arch))

    def macs_of_discrete(self, arch: tuple[int, ...]) -> float:
        return float(sum(self.macs[i][choice] for i, choice in enumerate(arch)))


def build_supernet(
    data: TaskData,
    op_widths: list[tuple[int, ...]] | tuple[int, ...],
    seed: int = 0,
    quality: list | None = None,
    macs: list | None = None,
    noise_scale: float = NOISE_SCALE,
) -> ToySupernet:
    """Construct the frozen surrogate for a task.

    ``op_widths`` is the per-edge width menu (a single tuple is reused for
    every edge when the edge count comes from its length... one edge per
    entry when a list of tuples is given).
    """
    task = data.task
    c = task.classes
    d = task.dim
    if isinstance(op_widths, tuple):
        raise ConfigError("op_widths must be a list with one width tuple per edge")
    menus = [tuple(int(w) for w in menu) for menu in op_widths]
    if not menus:
        raise ConfigError("supernet needs at least one edge")
    for i, menu in enumerate(menus):
        if len(menu) < 2:
            raise ConfigError(f"edge {i} needs at least 2 ops, got {len(menu)}")
        if min(menu) < 1:
            raise ConfigError(f"edge {i} has a non-positive width in {menu}")

    rng = np.random.default_rng(seed)
    radius = float(np.max(np.linalg.norm(task.means, axis=1)))

    # informative transforms: class-evidence projection, then identity chains
    good_w = []
    good_b = []
    fan_in = d
    for i in range(len(menus)):
        if i == 0:
            w = task.means.T / (radius * radius)  # (d, C)
            b = -np.square(np.linalg.norm(task.means, axis=1)) / (2 * radius * radius)
        else:
            w = np.eye(c)
            b = np.zeros(c)
        good_w.append(w)
        good_b.append(b)
        fan_in = c

    if quality is None:
        quality_arrays = []
        for menu in menus:
            lo, hi = min(menu), max(menu)
            if hi == lo:
                quality_arrays.append(np.ones(len(menu)))
            else:
                quality_arrays.append(
                    np.array([0.5 + 0.5 * (w - lo) / (hi - lo) for w in menu])
                )
    else:
        quality_arrays = [np.asarray(q, dtype=np.float64) for q in quality]
        for i, (q, menu) in enumerate(zip(quality_arrays, menus)):
            if q.shape != (len(menu),):
                raise ConfigError(f"edge {i}: quality length != op count")
            if (q < 0).any() or (q > 1).any():
                raise ConfigError(f"edge {i}: quality outside [0, 1]")

    if macs is None:
        macs_arrays = []
        fan = d
        for menu in menus:
            macs_arrays.append(np.array([fan * w + w * c for w in menu], dtype=np.float64))
            fan = int(round(float(np.mean(menu))))
    else:
        macs_arrays = [np.asarray(m, dtype=np.float64) for m in macs]
        for i, (m, menu) in enumerate(zip(macs_arrays, menus)):
            if m.shape != (len(menu),):
                raise ConfigError(f"edge {i}: MACs length != op count")
            if (m < 0).any():
                raise ConfigError(f"edge {i}: MACs must be non-negative")

    op_weights: list[list[np.ndarray]] = []
    op_biases: list[list[np.ndarray]] = []
    fan_in = d
    for i, menu in enumerate(menus):
        weights = []
        biases = []
        for k in range(len(menu)):
            q = float(quality_arrays[i][k])
            noise = rng.standard_normal(good_w[i].shape) / np.sqrt(fan_in)
            weights.append(q * good_w[i] + (1.0 - q) * noise_scale * noise)
            biases.append(q * good_b[i])
        op_weights.append(weights)
        op_biases.append(biases)
        fan_in = c

    head_w = [HEAD_GAIN * np.eye(c) for _ in menus]
    head_b = [np.zeros(c) for _ in menus]

    return ToySupernet(
        x_valid=data.x_test,
        y_valid=data.y_test,
        num_classes=c,
        op_weights=op_weights,
        op_biases=op_biases,
        head_w=head_w,
        head_b=head_b,
        macs=macs_arrays,
        quality=quality_arrays,
        width_menu=menus,
    )
