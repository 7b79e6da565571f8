"""Central-difference gradient checks for the network and its layers.

ReLU and max-pool make the loss piecewise smooth. A ``+-h`` probe that
flips any gate straddles a kink, and the difference quotient no longer
estimates the derivative at the base point. ``check_model_gradients``
therefore compares the activation gates of both probes with the base point
and, when they differ, redraws another scalar of the same layer kind.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.model import SignalQualityNet
from .rng import seeded_rng
from .training import cross_entropy_loss


def rel_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def central_difference(f, arr: np.ndarray, index, h: float = 1e-4) -> float:
    old = arr[index]
    arr[index] = old + h
    fp = f()
    arr[index] = old - h
    fm = f()
    arr[index] = old
    return (fp - fm) / (2 * h)


def layer_gradient_error(forward, backward, inputs, seed: int = 0, h: float = 1e-4,
                         skip=None) -> float:
    """Worst relative error of ``backward(G)`` against central differences of
    ``sum(forward() * G)`` over every element of every array in ``inputs``.

    ``backward`` returns one gradient per input, in the same order; ``G`` is a
    fixed random upstream gradient.
    """
    G = np.random.default_rng(seed).standard_normal(np.shape(forward()))
    worst = 0.0
    for arr, grad in zip(inputs, backward(G)):
        for idx in np.ndindex(arr.shape):
            if skip is not None and skip(arr, idx):
                continue
            fd = central_difference(lambda: float(np.sum(forward() * G)), arr, idx, h)
            worst = max(worst, rel_error(fd, grad[idx]))
    return worst


@dataclass
class GradSample:
    name: str
    index: tuple[int, ...]
    numeric: float
    analytic: float
    rel: float
    tries: int


def param_kind(name: str) -> str:
    if name.startswith("fc."):
        return "Linear"
    if ".se." in name:
        return "SE.Linear"
    if "bn" in name.split(".")[-2]:
        return "BatchNorm1d." + name.rsplit(".", 1)[1]
    return "Conv1d"


def _same_gates(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_model_gradients(net: SignalQualityNet, x: np.ndarray, labels: np.ndarray,
                          n_params: int = 20, seed: int = 0, h: float = 1e-4,
                          dropout_seed: int = 12345, max_tries: int = 400) -> list[GradSample]:
    """Compare backprop against central differences of the training-mode loss.

    Dropout masks are frozen by reseeding the dropout stream for every forward.
    Every parameter kind is sampled at least once; remaining picks draw a
    random kind, then a random tensor of that kind, then a random index.
    """
    store = net.store

    def forward():
        logits = net.forward(x, training=True, rng=seeded_rng(dropout_seed))
        return cross_entropy_loss(logits, labels)

    loss0, grad0 = forward()
    base_gates = [g.copy() for g in net.activation_gates()]
    net.backward(grad0)
    analytic = {n: g.copy() for n, g in store.grads.items()}

    def loss_with_gates():
        loss, _ = forward()
        return loss, [g.copy() for g in net.activation_gates()]

    pick = np.random.default_rng(seed)
    by_kind: dict[str, list[str]] = {}
    for n in store.names():
        by_kind.setdefault(param_kind(n), []).append(n)
    kinds = list(by_kind)
    plan = kinds + [kinds[pick.integers(len(kinds))] for _ in range(max(n_params - len(kinds), 0))]

    out = []
    for kind in plan:
        for tries in range(1, max_tries + 1):
            name = by_kind[kind][pick.integers(len(by_kind[kind]))]
            arr = store.params[name]
            idx = tuple(int(pick.integers(s)) for s in arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            lp, gp = loss_with_gates()
            arr[idx] = old - h
            lm, gm = loss_with_gates()
            arr[idx] = old
            if _same_gates(base_gates, gp) and _same_gates(base_gates, gm):
                fd = (lp - lm) / (2 * h)
                an = float(analytic[name][idx])
                out.append(GradSample(name, idx, fd, an, rel_error(fd, an), tries))
                break
        else:
            raise RuntimeError(f"no kink-free probe of kind {kind} in {max_tries} tries")
    return out
