"""Trainable feature head: a small tanh MLP plus a linear classifier.

Forward passes record an activation tape; `backward` replays it for exact
reverse-mode gradients (checked against finite differences in the tests).
Train-mode forwards draw a dropout mask from an explicit seed, which doubles
as the augmentation mechanism: two Train-mode passes with different seeds
give two stochastic views of the same input. Eval mode is deterministic.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1


@dataclass
class EncoderHead:
    layers: list[tuple[np.ndarray, np.ndarray]]      # (W: out x in, b: out)
    classifier: tuple[np.ndarray, np.ndarray]        # (Wc: classes x d, bc: classes)
    dropout_rate: float = 0.1

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.classifier[0].shape[0]

    def copy(self) -> "EncoderHead":
        return EncoderHead(
            layers=[(W.copy(), b.copy()) for W, b in self.layers],
            classifier=(self.classifier[0].copy(), self.classifier[1].copy()),
            dropout_rate=self.dropout_rate,
        )

    def check_finite(self):
        for W, b in self.layers + [self.classifier]:
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite parameters")


def init_head(
    in_dim: int,
    hidden: tuple[int, ...] = (64,),
    out_dim: int = 32,
    n_classes: int = 2,
    dropout_rate: float = 0.1,
    seed: int = 0,
) -> EncoderHead:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE0C0)))
    dims = [in_dim, *hidden, out_dim]
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        W = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in))
        layers.append((W, np.zeros(d_out)))
    Wc = rng.normal(0.0, 1.0 / np.sqrt(out_dim), size=(n_classes, out_dim))
    return EncoderHead(layers=layers, classifier=(Wc, np.zeros(n_classes)), dropout_rate=dropout_rate)


def reinit_classifier(head: EncoderHead, n_classes: int, seed: int = 0) -> EncoderHead:
    """Fresh classifier (e.g. switching from pretraining classes to clusters)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC1A5)))
    d = head.out_dim
    out = head.copy()
    out.classifier = (rng.normal(0.0, 1.0 / np.sqrt(d), size=(n_classes, d)), np.zeros(n_classes))
    return out


@dataclass
class ForwardTape:
    """Activation record of one forward pass, consumed by `backward`."""

    inputs: list[np.ndarray]          # input to each layer
    tanh_outputs: list[np.ndarray | None]  # tanh(pre) per hidden layer, None for output layer
    masks: list[np.ndarray | None]    # dropout masks per hidden layer
    shapes: list[tuple[int, int]]     # weight shapes, to detect stale tapes


def forward(
    head: EncoderHead,
    x: np.ndarray,
    mode: str = "eval",
    noise_seed: int | tuple = 0,
    input_noise: float = 0.0,
) -> tuple[np.ndarray, ForwardTape]:
    """Map a batch (n, in_dim) to features (n, out_dim).

    mode "train" applies inverted dropout after each hidden tanh (and optional
    Gaussian input noise), both drawn from noise_seed; mode "eval" is pure.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != head.in_dim:
        raise ValueError(f"input dim {x.shape[1]} != head input dim {head.in_dim}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    train = mode == "train"
    rng = np.random.default_rng(np.random.SeedSequence(noise_seed)) if train else None
    if train and input_noise > 0.0:
        x = x + rng.normal(0.0, input_noise, size=x.shape)

    h = x
    inputs, tanh_outs, masks = [], [], []
    n_layers = len(head.layers)
    for li, (W, b) in enumerate(head.layers):
        inputs.append(h)
        pre = h @ W.T + b
        if li < n_layers - 1:
            t = np.tanh(pre)
            if train and head.dropout_rate > 0.0:
                keep = 1.0 - head.dropout_rate
                mask = (rng.random(t.shape) < keep) / keep
            else:
                mask = None
            tanh_outs.append(t)
            masks.append(mask)
            h = t if mask is None else t * mask
        else:
            tanh_outs.append(None)
            masks.append(None)
            h = pre
    tape = ForwardTape(
        inputs=inputs,
        tanh_outputs=tanh_outs,
        masks=masks,
        shapes=[W.shape for W, _ in head.layers],
    )
    return h, tape


@dataclass
class Grads:
    layers: list[tuple[np.ndarray, np.ndarray]]
    classifier: tuple[np.ndarray, np.ndarray] | None = None
    dx: np.ndarray | None = None

    def add_(self, other: "Grads"):
        for (dW, db), (oW, ob) in zip(self.layers, other.layers):
            dW += oW
            db += ob
        if other.classifier is not None:
            if self.classifier is None:
                self.classifier = (other.classifier[0].copy(), other.classifier[1].copy())
            else:
                self.classifier[0][...] += other.classifier[0]
                self.classifier[1][...] += other.classifier[1]
        return self


def zero_grads(head: EncoderHead, with_classifier: bool = True) -> Grads:
    return Grads(
        layers=[(np.zeros_like(W), np.zeros_like(b)) for W, b in head.layers],
        classifier=(
            (np.zeros_like(head.classifier[0]), np.zeros_like(head.classifier[1]))
            if with_classifier
            else None
        ),
    )


def backward(head: EncoderHead, tape: ForwardTape, dz: np.ndarray) -> Grads:
    """Exact gradients of the recorded forward pass given dL/dz."""
    if tape.shapes != [W.shape for W, _ in head.layers]:
        raise ValueError("stale tape: head shape changed since forward")
    dz = np.atleast_2d(np.asarray(dz, dtype=np.float64))
    g = dz
    layer_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(head.layers)
    for li in range(len(head.layers) - 1, -1, -1):
        W, _ = head.layers[li]
        t = tape.tanh_outputs[li]
        if t is not None:  # hidden layer: undo dropout then tanh
            mask = tape.masks[li]
            if mask is not None:
                g = g * mask
            g = g * (1.0 - t * t)
        layer_grads[li] = (g.T @ tape.inputs[li], g.sum(axis=0))
        g = g @ W
    return Grads(layers=layer_grads, dx=g)


def classifier_forward(head: EncoderHead, z: np.ndarray) -> np.ndarray:
    Wc, bc = head.classifier
    return np.atleast_2d(z) @ Wc.T + bc


def classifier_backward(
    head: EncoderHead, z: np.ndarray, dlogits: np.ndarray
) -> tuple[tuple[np.ndarray, np.ndarray], np.ndarray]:
    """Returns ((dWc, dbc), dz)."""
    Wc, _ = head.classifier
    z = np.atleast_2d(z)
    dlogits = np.atleast_2d(dlogits)
    dWc = dlogits.T @ z
    dbc = dlogits.sum(axis=0)
    dz = dlogits @ Wc
    return (dWc, dbc), dz


def l2_normalize(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize; returns (unit rows, norms). Zero rows stay zero."""
    z = np.atleast_2d(z)
    norms = np.sqrt((z * z).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    return z / safe, safe


def l2_normalize_backward(zn: np.ndarray, norms: np.ndarray, dzn: np.ndarray) -> np.ndarray:
    """Backprop through row normalization: dz = (dzn - zn (zn.dzn)) / norm."""
    inner = (zn * dzn).sum(axis=1, keepdims=True)
    return (dzn - zn * inner) / norms


# ---------------------------------------------------------------------------
# optimizers

@dataclass
class AdamState:
    m: list        # mirrors [*(W, b) per layer, (Wc, bc)]
    v: list
    t: int = 0

    @classmethod
    def for_head(cls, head: EncoderHead) -> "AdamState":
        params = head.layers + [head.classifier]
        zeros = lambda: [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        return cls(m=zeros(), v=zeros())


def _check_grads_finite(grads: Grads):
    for dW, db in grads.layers:
        if not (np.all(np.isfinite(dW)) and np.all(np.isfinite(db))):
            raise ValueError("non-finite gradients")
    if grads.classifier is not None:
        dWc, dbc = grads.classifier
        if not (np.all(np.isfinite(dWc)) and np.all(np.isfinite(dbc))):
            raise ValueError("non-finite gradients")


def adam_step(
    head: EncoderHead,
    grads: Grads,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> EncoderHead:
    """One adaptive-moment update with decoupled weight decay; returns a new head."""
    _check_grads_finite(grads)
    state.t += 1
    t = state.t
    out = head.copy()
    param_pairs = out.layers + [out.classifier]
    grad_pairs = grads.layers + [
        grads.classifier
        if grads.classifier is not None
        else (np.zeros_like(head.classifier[0]), np.zeros_like(head.classifier[1]))
    ]
    new_layers = []
    new_classifier = None
    for pi, ((W, b), (gW, gb)) in enumerate(zip(param_pairs, grad_pairs)):
        mW, mb = state.m[pi]
        vW, vb = state.v[pi]
        mW[...] = beta1 * mW + (1 - beta1) * gW
        mb[...] = beta1 * mb + (1 - beta1) * gb
        vW[...] = beta2 * vW + (1 - beta2) * gW * gW
        vb[...] = beta2 * vb + (1 - beta2) * gb * gb
        mW_hat = mW / (1 - beta1**t)
        mb_hat = mb / (1 - beta1**t)
        vW_hat = vW / (1 - beta2**t)
        vb_hat = vb / (1 - beta2**t)
        W = W - lr * (mW_hat / (np.sqrt(vW_hat) + eps) + weight_decay * W)
        b = b - lr * (mb_hat / (np.sqrt(vb_hat) + eps) + weight_decay * b)
        if pi < len(out.layers):
            new_layers.append((W, b))
        else:
            new_classifier = (W, b)
    out.layers = new_layers
    out.classifier = new_classifier
    return out


def sgd_step(head: EncoderHead, grads: Grads, lr: float, weight_decay: float = 0.0) -> EncoderHead:
    _check_grads_finite(grads)
    out = head.copy()
    out.layers = [
        (W - lr * (gW + weight_decay * W), b - lr * (gb + weight_decay * b))
        for (W, b), (gW, gb) in zip(out.layers, grads.layers)
    ]
    if grads.classifier is not None:
        Wc, bc = out.classifier
        gWc, gbc = grads.classifier
        out.classifier = (Wc - lr * (gWc + weight_decay * Wc), bc - lr * (gbc + weight_decay * bc))
    return out


# ---------------------------------------------------------------------------
# checkpointing

def save_checkpoint(head: EncoderHead, path: str | Path) -> None:
    """JSON dump of shapes and parameters; round-trips doubles exactly."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "dropout_rate": head.dropout_rate,
        "layers": [[W.tolist(), b.tolist()] for W, b in head.layers],
        "classifier": [head.classifier[0].tolist(), head.classifier[1].tolist()],
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_checkpoint(path: str | Path) -> EncoderHead:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
    layers = [
        (np.array(W, dtype=np.float64), np.array(b, dtype=np.float64))
        for W, b in payload["layers"]
    ]
    Wc, bc = payload["classifier"]
    head = EncoderHead(
        layers=layers,
        classifier=(np.array(Wc, dtype=np.float64), np.array(bc, dtype=np.float64)),
        dropout_rate=float(payload["dropout_rate"]),
    )
    head.check_finite()
    return head
