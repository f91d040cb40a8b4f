"""Cross-entropy training: Adam, weight init, early stopping, checkpoints.

The fit loop shuffles per epoch (seeded), walks batches with teacher
forcing, and evaluates validation perplexity after every epoch.  Training
stops after two consecutive epochs without improvement and the best
parameters are restored.  Checkpoints are a JSON manifest (names, shapes,
config, vocabulary, epoch, perplexity) next to one little-endian binary
blob of the parameter payloads in manifest order.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data import EOS, FeatureStore, Vocabulary, make_batch
from .errors import ContractError, DivergenceError
from .tensor import Tensor


def sequence_loss(step_probs: list[Tensor], targets: np.ndarray,
                  mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over unmasked target positions.

    ``step_probs`` holds one [B, V] distribution per position; ``targets``
    is [B, L].  Masked positions contribute exactly zero (their targets are
    swapped for a safe token before the gather, so no log(0) shows up).
    """
    total_count = int(mask.sum())
    if total_count == 0:
        raise ContractError("sequence_loss: every target position is masked")
    pieces = []
    for i, probs in enumerate(step_probs):
        tgt = np.where(mask[:, i], targets[:, i], EOS)
        picked = T.gather_rows(probs, tgt)
        logged = T.log(picked)
        pieces.append(T.tsum(T.mul(logged, mask[:, i].astype(probs.dtype))))
    total = pieces[0]
    for extra in pieces[1:]:
        total = T.add(total, extra)
    return T.mul(total, -1.0 / total_count)


def perplexity(model, batches) -> float:
    """exp of the token-level mean negative log-likelihood over the dataset."""
    total_nll = 0.0
    total_tokens = 0
    for batch in batches:
        result = model.forward_batch(batch, train=False)
        n = int(batch.target_mask.sum())
        total_nll += result.loss.item() * n
        total_tokens += n
    if total_tokens == 0:
        raise ContractError("perplexity: empty dataset")
    return math.exp(total_nll / total_tokens)


class Adam:
    """Adam with bias correction; beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, params: dict[str, Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise DivergenceError(f"non-finite gradient in parameter {name!r}")
            grads[name] = g
        if self.grad_clip > 0:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
                grads = {k: g * scale for k, g in grads.items()}
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def init_weights(params: dict[str, Tensor], scheme: str, seed: int) -> None:
    """Initialize a parameter registry in place, deterministically per seed.

    default: uniform(-0.08, 0.08).  xavier: Glorot normal.  he: Kaiming
    normal.  Biases are zero except the LSTM forget gate (1.0); attention
    priors start flat at zero; the component-weight scalars start at one.
    """
    if scheme not in ("default", "xavier", "he"):
        raise ContractError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    for name in sorted(params):
        p = params[name]
        arr = p.data
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "b" and "lstm" in name:
            arr[...] = 0.0
            hid = arr.shape[0] // 4
            arr[hid:2 * hid] = 1.0
        elif leaf == "b":
            arr[...] = 0.0
        elif leaf == "prior":
            arr[...] = 0.0
        elif leaf in ("w_hat", "w_local") or name == "attention.pair_weights":
            arr[...] = 1.0
        else:
            fan_in = arr.shape[0]
            fan_out = arr.shape[1] if arr.ndim > 1 else 1
            if scheme == "default":
                arr[...] = rng.uniform(-0.08, 0.08, size=arr.shape)
            elif scheme == "xavier":
                arr[...] = rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), size=arr.shape)
            else:
                arr[...] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=arr.shape)


def count_parameters(model) -> tuple[int, dict[str, int]]:
    """Total trainable scalars and a per-stage breakdown."""
    groups: dict[str, int] = {}
    total = 0
    for name, p in model.parameters().items():
        n = int(p.data.size)
        total += n
        group = name.split(".", 1)[0]
        groups[group] = groups.get(group, 0) + n
    return total, groups


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(stem, model, epoch: int, val_perplexity: float) -> None:
    names = sorted(model.parameters())
    params = model.parameters()
    manifest = {
        "format": "avsd-checkpoint-v1",
        "dtype": str(params[names[0]].data.dtype) if names else "float32",
        "names": names,
        "shapes": {n: list(params[n].data.shape) for n in names},
        "config": model.config.to_dict(),
        "vocabulary": model.vocab.id_to_word[4:],
        "epoch": epoch,
        "val_perplexity": val_perplexity,
    }
    with open(f"{stem}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    with open(f"{stem}.bin", "wb") as fh:
        for n in names:
            arr = params[n].data
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(stem):
    """Rebuild a model (config + vocabulary + parameters) from disk."""
    from .model import Model

    with open(f"{stem}.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = RunConfig.from_dict(manifest["config"])
    vocab = Vocabulary(manifest["vocabulary"])
    model = Model(cfg, vocab)
    dtype = np.dtype(manifest["dtype"]).newbyteorder("<")
    with open(f"{stem}.bin", "rb") as fh:
        blob = fh.read()
    offset = 0
    params = model.parameters()
    for name in manifest["names"]:
        shape = tuple(manifest["shapes"][name])
        n_bytes = int(np.prod(shape)) * dtype.itemsize
        chunk = np.frombuffer(blob[offset:offset + n_bytes], dtype=dtype).reshape(shape)
        if name not in params:
            raise ContractError(f"checkpoint parameter {name!r} not in rebuilt model")
        params[name].data = chunk.astype(params[name].data.dtype).copy()
        offset += n_bytes
    return model, manifest


# ---------------------------------------------------------------------------
# the fit loop

@dataclass
class TrainResult:
    best_epoch: int
    best_val_perplexity: float
    stopped_epoch: int
    diverged: bool = False
    history: list[dict] = field(default_factory=list)


def _batches(examples, vocab, store, cfg: RunConfig, mode: str, rng=None):
    out = []
    for i in range(0, len(examples), cfg.batch_size):
        out.append(make_batch(examples[i:i + cfg.batch_size], vocab, store,
                              frame_count=cfg.frame_count, mode=mode, rng=rng))
    return out


def fit(model, train_examples, val_examples, store: FeatureStore, cfg: RunConfig,
        eval_fn=None, log_path=None, checkpoint_stem=None) -> TrainResult:
    """Train until the epoch budget or two non-improving validation epochs.

    ``eval_fn(model, epoch) -> float`` replaces the validation perplexity
    when given (behavioral tests inject canned sequences through it).
    Returns with the best parameters restored into the model.
    """
    if not train_examples or (eval_fn is None and not val_examples):
        raise ContractError("fit: train and validation splits must be non-empty")
    params = model.parameters()
    adam = Adam(params, lr=cfg.learning_rate, grad_clip=cfg.grad_clip)
    order_rng = np.random.default_rng(cfg.seed)
    frame_rng = np.random.default_rng(cfg.seed + 1)

    best_val = math.inf
    best_epoch = 0
    best_params: dict[str, np.ndarray] = {k: p.data.copy() for k, p in params.items()}
    bad_streak = 0
    diverged = False
    history: list[dict] = []
    log_rows = []

    epoch = 0
    for epoch in range(1, cfg.epochs + 1):
        started = time.time()
        order = order_rng.permutation(len(train_examples))
        shuffled = [train_examples[i] for i in order]
        epoch_loss = 0.0
        n_batches = 0
        for batch in _batches(shuffled, model.vocab, store, cfg, "train", frame_rng):
            result = model.forward_batch(batch, train=True)
            loss_val = result.loss.item()
            if not math.isfinite(loss_val):
                diverged = True
                break
            result.loss.backward()
            try:
                adam.step()
            except DivergenceError:
                diverged = True
                break
            adam.zero_grad()  # a later graph may not touch every parameter
            epoch_loss += loss_val
            n_batches += 1
        if diverged:
            break

        train_loss = epoch_loss / max(n_batches, 1)
        if eval_fn is not None:
            val = float(eval_fn(model, epoch))
        else:
            val = perplexity(model, _batches(val_examples, model.vocab, store, cfg, "eval"))
        seconds = time.time() - started
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_perplexity": val, "seconds": seconds})
        log_rows.append((epoch, train_loss, val, seconds))

        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_params = {k: p.data.copy() for k, p in params.items()}
            bad_streak = 0
        else:
            bad_streak += 1
            if bad_streak >= cfg.early_stop_patience:
                break

    for k, p in params.items():
        p.data = best_params[k].copy()

    if log_path is not None:
        with open(log_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_perplexity", "seconds"])
            writer.writerows(log_rows)
    if checkpoint_stem is not None:
        save_checkpoint(checkpoint_stem, model, best_epoch,
                        best_val if math.isfinite(best_val) else float("nan"))

    return TrainResult(best_epoch=best_epoch,
                       best_val_perplexity=best_val,
                       stopped_epoch=epoch,
                       diverged=diverged,
                       history=history)
