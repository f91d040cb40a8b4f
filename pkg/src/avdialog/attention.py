"""Factor-graph attention over audio, question, and each sampled frame.

Every data source is attended independently but its scores couple to all
other sources: per entity k of source x, the logit is

    w_hat_x * prior_x(k)  +  local(k)  +  cross(k)

with local(k) = w_x * v_x . relu(V_x x_k) and cross(k) the average cosine
between the L-projection of x_k and the R-projections of every entity of
every source (self included), weighted per ordered source pair.  Masked
(padded) entities contribute nothing to the cosine averages and receive
probability exactly zero.  The history vector is not attended; it joins the
attended question vector to form the per-step textual context.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import RunConfig
from .embeddings import ModalityBundle
from .errors import ContractError
from .tensor import Tensor


def modality_names(cfg: RunConfig) -> list[str]:
    names = []
    if "a" in cfg.modalities:
        names.append("audio")
    names.append("question")
    if "v" in cfg.modalities:
        names.extend(f"frame{i}" for i in range(cfg.frame_count))
    return names


@dataclass
class ModalityAttention:
    V: Tensor                 # [d_in, d_local]
    v: Tensor                 # [d_local, 1]
    L: Tensor                 # [d_in, d_pair]
    R: Tensor                 # [d_in, d_pair]
    prior: Tensor | None      # [n_max] positional logits
    w_hat: Tensor             # [1, 1]
    w_local: Tensor           # [1, 1]


@dataclass
class AttentionParams:
    names: list[str]
    per: dict[str, ModalityAttention]
    pair_weights: Tensor      # [D, D], ordered like names
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.index = {n: i for i, n in enumerate(self.names)}


def _param(reg, name, shape, dtype) -> Tensor:
    t = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name)
    reg[name] = t
    return t


def build_attention_params(cfg: RunConfig, reg: dict[str, Tensor], dtype) -> AttentionParams:
    names = modality_names(cfg)
    dims = {"audio": cfg.audio_dim, "question": cfg.question_hidden}
    dims.update({f"frame{i}": cfg.video_dim for i in range(cfg.frame_count)})
    priors = {"audio": cfg.question_prior_len if cfg.audio_prior else 0,
              "question": cfg.question_prior_len if cfg.question_prior else 0}
    priors.update({f"frame{i}": cfg.video_entities if cfg.frame_prior else 0
                   for i in range(cfg.frame_count)})

    shared: dict[str, Tensor] = {}
    per = {}
    for name in names:
        d = dims[name]
        if cfg.share_frame_weights and name.startswith("frame"):
            if not shared:
                shared["V"] = _param(reg, "attention.frames_shared.V",
                                     (d, cfg.attention_local_dim), dtype)
                shared["L"] = _param(reg, "attention.frames_shared.L",
                                     (d, cfg.attention_pair_dim), dtype)
                shared["R"] = _param(reg, "attention.frames_shared.R",
                                     (d, cfg.attention_pair_dim), dtype)
            mat_v, mat_l, mat_r = shared["V"], shared["L"], shared["R"]
        else:
            mat_v = _param(reg, f"attention.{name}.V", (d, cfg.attention_local_dim), dtype)
            mat_l = _param(reg, f"attention.{name}.L", (d, cfg.attention_pair_dim), dtype)
            mat_r = _param(reg, f"attention.{name}.R", (d, cfg.attention_pair_dim), dtype)
        prior = None
        if priors[name] > 0:
            prior = _param(reg, f"attention.{name}.prior", (priors[name],), dtype)
        per[name] = ModalityAttention(
            V=mat_v,
            v=_param(reg, f"attention.{name}.v", (cfg.attention_local_dim, 1), dtype),
            L=mat_l, R=mat_r, prior=prior,
            w_hat=_param(reg, f"attention.{name}.w_hat", (1, 1), dtype),
            w_local=_param(reg, f"attention.{name}.w_local", (1, 1), dtype),
        )
    pair = _param(reg, "attention.pair_weights", (len(names), len(names)), dtype)
    return AttentionParams(names=names, per=per, pair_weights=pair)


def local_evidence(r: Tensor, ma: ModalityAttention) -> Tensor:
    """Per-entity score from the source alone; r [B, n, d] -> [B, n]."""
    if r.shape[-1] != ma.V.shape[0]:
        raise ContractError(f"local_evidence: entity dim {r.shape[-1]} vs V {ma.V.shape}")
    h = T.relu(T.matmul(r, ma.V))
    scores = T.reshape(T.matmul(h, ma.v), r.shape[:-1])
    return T.mul(ma.w_local, scores)


def unit_mean(r: Tensor, mask: np.ndarray | None, proj: Tensor) -> Tensor:
    """Mean of unit-normalized projected entities, ignoring masked rows.

    A source with zero unmasked entities yields the zero vector, so its term
    silently drops out of the cross evidence instead of dividing by zero.
    """
    unit = T.l2_normalize(T.matmul(r, proj))
    if mask is None:
        return T.mean(unit, axis=1)
    m = mask[:, :, None].astype(r.dtype)
    total = T.tsum(T.mul(unit, m), axis=1)
    counts = np.maximum(mask.sum(axis=1, keepdims=True), 1).astype(r.dtype)
    return T.mul(total, 1.0 / counts)


def cross_evidence(name: str, r: Tensor, params: AttentionParams,
                   means: dict[str, Tensor]) -> Tensor:
    """Average normalized inner products against every source; [B, n]."""
    batch, n = r.shape[0], r.shape[1]
    lk = T.l2_normalize(T.matmul(r, params.per[name].L))
    i = params.index[name]
    combined = None
    for other, u in means.items():
        w = params.pair_weights[i, params.index[other]]
        term = T.mul(w, u)
        combined = term if combined is None else T.add(combined, term)
    d_pair = lk.shape[-1]
    stacked = T.reshape(combined, (batch, d_pair, 1))
    return T.reshape(T.matmul(lk, stacked), (batch, n))


def attention_probs(prior: Tensor | None, local: Tensor | None, cross: Tensor | None,
                    w_hat: Tensor, mask: np.ndarray | None, shape: tuple[int, int],
                    dtype, allow_empty: bool = False) -> Tensor:
    """Masked softmax of w_hat * prior + local + cross."""
    logits = None
    for part in (local, cross):
        if part is not None:
            logits = part if logits is None else T.add(logits, part)
    if prior is not None:
        weighted = T.mul(w_hat, T.reshape(prior, (1, -1)))
        logits = weighted if logits is None else T.add(logits, weighted)
    if logits is None:
        logits = Tensor(np.zeros(shape, dtype=dtype))
    if logits.shape != shape:
        logits = T.add(logits, Tensor(np.zeros(shape, dtype=dtype)))
    if mask is not None and not allow_empty and not mask.any(axis=-1).all():
        raise ContractError("attention_probs: a row has every entity masked")
    return T.softmax(logits, mask=mask)


def attend(r: Tensor, probs: Tensor) -> Tensor:
    """Probability-weighted sum of entity vectors; [B, n, d] x [B, n] -> [B, d]."""
    batch, n, d = r.shape
    return T.reshape(T.matmul(T.reshape(probs, (batch, 1, n)), r), (batch, d))


def _sliced_prior(ma: ModalityAttention, n: int, dtype) -> Tensor | None:
    if ma.prior is None:
        return None
    cap = ma.prior.shape[0]
    if n <= cap:
        return ma.prior[:n]
    pad = Tensor(np.zeros(n - cap, dtype=dtype))
    return T.concat([ma.prior, pad], axis=0)


@dataclass
class AttendedSet:
    """Attended vector per source plus the textual context and the maps."""

    attended: dict[str, Tensor]     # name -> [B, d]
    a_t: Tensor                     # [B, d_Q + d_H]
    probs: dict[str, Tensor]        # name -> [B, n]; empty when attention is off


def _sources(bundle: ModalityBundle, cfg: RunConfig):
    out = []
    if bundle.r_a is not None:
        out.append(("audio", bundle.r_a, bundle.a_mask))
    out.append(("question", bundle.r_q, bundle.q_mask))
    if bundle.r_v is not None:
        for i in range(cfg.frame_count):
            out.append((f"frame{i}", bundle.r_v[:, i], None))
    return out


def run_attention(bundle: ModalityBundle, params: AttentionParams | None,
                  cfg: RunConfig) -> AttendedSet:
    """Attend every source in the bundle and assemble the textual context.

    With attention disabled the audio/frame vectors fall back to masked
    means and the question falls back to its final hidden state.
    """
    dtype = bundle.r_q.dtype
    sources = _sources(bundle, cfg)
    attended: dict[str, Tensor] = {}
    probs: dict[str, Tensor] = {}

    if not cfg.attention or params is None:
        for name, r, mask in sources:
            if name == "question":
                attended[name] = bundle.q_final
            elif mask is None:
                attended[name] = T.mean(r, axis=1)
            else:
                m = mask[:, :, None].astype(dtype)
                counts = np.maximum(mask.sum(axis=1, keepdims=True), 1).astype(dtype)
                attended[name] = T.mul(T.tsum(T.mul(r, m), axis=1), 1.0 / counts)
    else:
        means = {name: unit_mean(r, mask, params.per[name].R) for name, r, mask in sources} \
            if cfg.cross_evidence else {}
        for name, r, mask in sources:
            ma = params.per[name]
            local = local_evidence(r, ma) if cfg.local_evidence else None
            cross = cross_evidence(name, r, params, means) if cfg.cross_evidence else None
            prior = _sliced_prior(ma, r.shape[1], dtype)
            p = attention_probs(prior, local, cross, ma.w_hat, mask,
                                (r.shape[0], r.shape[1]), dtype, allow_empty=True)
            probs[name] = p
            attended[name] = attend(r, p)

    a_t = T.concat([attended["question"], bundle.r_h], axis=-1)
    return AttendedSet(attended=attended, a_t=a_t, probs=probs)


def attention_maps(aset: AttendedSet, masks: dict[str, np.ndarray | None]) -> list[dict]:
    """Per-example {source: [probability, ...]} lists, padding trimmed."""
    if not aset.probs:
        return []
    batch = next(iter(aset.probs.values())).shape[0]
    out = []
    for i in range(batch):
        entry = {}
        for name, p in aset.probs.items():
            row = p.data[i]
            mask = masks.get(name)
            if mask is not None:
                row = row[mask[i]]
            entry[name] = [float(x) for x in row]
        out.append(entry)
    return out
