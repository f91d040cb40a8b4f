"""Dataset ingestion: dialog JSON, vocabulary, feature files, batching.

Dialog JSON schema: a top-level list of
``{"video_id": str, "dialog": [{"question": str, "answer": str}, ...]}``.

Feature file layout (little-endian throughout):

====== ===== =========================================
offset bytes meaning
====== ===== =========================================
0      5     magic ``AVSF1``
5      1     modality: ``V`` (video) or ``A`` (audio)
6      1     dtype code: 0x01 = float32
7      1     ndim
8      4*n   dims as uint32
...    ...   payload, float32 row-major
====== ===== =========================================

Video payloads are ``frames x 7 x 7 x 512``; audio payloads are
``steps x 128``.  write -> read is the identity, bit for bit.
"""

from __future__ import annotations

import json
import os
import string
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CodecError, ContractError, ParseError

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ["<pad>", "<sos>", "<eos>", "<unk>"]

MAX_HISTORY = 10  # question-answer pairs kept per example

MAGIC = b"AVSF1"
_MODALITY_CODES = {"video": b"V", "audio": b"A"}
_MODALITY_NAMES = {v: k for k, v in _MODALITY_CODES.items()}
_DTYPE_F32 = 0x01

VIDEO_FRAME_SHAPE = (7, 7, 512)
AUDIO_DIM = 128

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, strip ASCII punctuation, split on whitespace."""
    out = []
    for raw in text.lower().split():
        tok = raw.translate(_PUNCT_TABLE)
        if tok:
            out.append(tok)
    return out


@dataclass
class DialogExample:
    video_id: str
    history: list[tuple[str, str]]  # oldest -> newest, at most MAX_HISTORY
    question: str
    answer: str
    turn: int = 0


class Vocabulary:
    """Word <-> id bijection with reserved ids PAD=0, SOS=1, EOS=2, UNK=3."""

    def __init__(self, words: list[str]):
        self.id_to_word = list(RESERVED) + [w for w in words if w not in RESERVED]
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}

    def __len__(self):
        return len(self.id_to_word)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.word_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids: list[int]) -> str:
        words = [self.id_to_word[i] for i in ids if i not in (PAD, SOS, EOS)]
        return " ".join(words)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.id_to_word[len(RESERVED):], fh, indent=0)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))


def load_dialogs(path) -> list[DialogExample]:
    """Expand each dialog into one example per turn, newest history last."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise ParseError(f"{path}: top level must be a list of dialogs")

    examples: list[DialogExample] = []
    for rec_no, rec in enumerate(raw):
        if not isinstance(rec, dict) or "video_id" not in rec or "dialog" not in rec:
            raise ParseError(f"{path}: record {rec_no} lacks video_id/dialog")
        vid = rec["video_id"]
        turns = rec["dialog"]
        for i, turn in enumerate(turns):
            if not isinstance(turn, dict) or "question" not in turn or "answer" not in turn:
                raise ParseError(f"{path}: record {rec_no} ({vid}) turn {i} lacks question/answer")
            history = [(t["question"], t["answer"]) for t in turns[max(0, i - MAX_HISTORY):i]]
            examples.append(DialogExample(vid, history, turn["question"], turn["answer"], turn=i))
    return examples


def build_vocab(examples: list[DialogExample], min_count: int = 2) -> Vocabulary:
    """Frequency-thresholded vocabulary; id order is count desc, then word."""
    counts: dict[str, int] = {}
    for ex in examples:
        streams = [ex.question, ex.answer]
        for q, a in ex.history:
            streams += [q, a]
        for text in streams:
            for tok in tokenize(text):
                counts[tok] = counts.get(tok, 0) + 1
    kept = [w for w, c in counts.items() if c >= min_count]
    kept.sort(key=lambda w: (-counts[w], w))
    return Vocabulary(kept)


def sample_frames(frames_total: int, count: int, mode: str = "eval",
                  rng: np.random.Generator | None = None) -> list[int]:
    """Equally spaced frame indices.

    eval: deterministic window centers floor((f + 0.5) * N / F).
    train: the same stride with one random integer phase shared by all
    indices, clamped to N - 1.  Indices are nondecreasing; when N < F they
    repeat.
    """
    if frames_total <= 0:
        raise ContractError("sample_frames: need at least one frame")
    if count <= 0:
        raise ContractError("sample_frames: need at least one sample")
    if mode == "eval":
        return [int((f + 0.5) * frames_total / count) for f in range(count)]
    if mode == "train":
        if rng is None:
            raise ContractError("sample_frames: train mode needs an rng")
        phase = int(rng.integers(0, -(-frames_total // count)))
        return [min(f * frames_total // count + phase, frames_total - 1) for f in range(count)]
    raise ContractError(f"sample_frames: unknown mode {mode!r}")


def write_feature_file(path, array: np.ndarray, modality: str) -> None:
    if modality not in _MODALITY_CODES:
        raise ContractError(f"unknown modality {modality!r}")
    arr = np.ascontiguousarray(array, dtype="<f4")
    if modality == "video" and (arr.ndim != 4 or arr.shape[1:] != VIDEO_FRAME_SHAPE):
        raise ContractError(f"video features must be frames x 7 x 7 x 512, got {arr.shape}")
    if modality == "audio" and (arr.ndim != 2 or arr.shape[1] != AUDIO_DIM):
        raise ContractError(f"audio features must be steps x 128, got {arr.shape}")
    header = MAGIC + _MODALITY_CODES[modality] + bytes([_DTYPE_F32, arr.ndim])
    header += b"".join(struct.pack("<I", d) for d in arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def read_feature_file(path) -> tuple[np.ndarray, str]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != MAGIC:
        raise CodecError(f"{path}: bad magic at byte 0: {blob[:5]!r}")
    if len(blob) < 8:
        raise CodecError(f"{path}: truncated header at byte {len(blob)}")
    mod = blob[5:6]
    if mod not in _MODALITY_NAMES:
        raise CodecError(f"{path}: unknown modality byte at offset 5: {mod!r}")
    if blob[6] != _DTYPE_F32:
        raise CodecError(f"{path}: unknown dtype code at offset 6: {blob[6]:#x}")
    ndim = blob[7]
    dims_end = 8 + 4 * ndim
    if len(blob) < dims_end:
        raise CodecError(f"{path}: truncated shape header at byte {len(blob)}")
    shape = struct.unpack(f"<{ndim}I", blob[8:dims_end])
    expected = int(np.prod(shape)) * 4
    if len(blob) - dims_end != expected:
        raise CodecError(
            f"{path}: payload is {len(blob) - dims_end} bytes at offset {dims_end}, "
            f"expected {expected}"
        )
    arr = np.frombuffer(blob[dims_end:], dtype="<f4").reshape(shape)
    return arr, _MODALITY_NAMES[mod]


class FeatureStore:
    """Resolves video ids to feature files under two directories."""

    def __init__(self, video_dir, audio_dir):
        self.video_dir = video_dir
        self.audio_dir = audio_dir

    def _load(self, directory, video_id, modality):
        path = os.path.join(directory, f"{video_id}.avsf")
        if not os.path.exists(path):
            raise ParseError(f"missing {modality} feature file for video_id {video_id!r}: {path}")
        arr, mod = read_feature_file(path)
        if mod != modality:
            raise CodecError(f"{path}: expected {modality} features, found {mod}")
        return arr

    def video(self, video_id) -> np.ndarray:
        return self._load(self.video_dir, video_id, "video")

    def audio(self, video_id) -> np.ndarray:
        return self._load(self.audio_dir, video_id, "audio")


@dataclass
class Batch:
    """Zero-padded batch; masks are True on real (unpadded) positions."""

    video_ids: list[str]
    question: np.ndarray        # [B, nQ] int
    question_mask: np.ndarray   # [B, nQ] bool
    history: np.ndarray         # [B, T, nH] int
    history_token_mask: np.ndarray  # [B, T, nH] bool
    history_pair_mask: np.ndarray   # [B, T] bool
    video: np.ndarray           # [B, F, 49, 512] float32
    audio: np.ndarray           # [B, nA, 128] float32
    audio_mask: np.ndarray      # [B, nA] bool
    answer_input: np.ndarray    # [B, L] int, SOS-prefixed
    answer_target: np.ndarray   # [B, L] int, EOS-suffixed
    target_mask: np.ndarray     # [B, L] bool
    examples: list[DialogExample] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.video_ids)


def _pad_token_rows(rows: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max((len(r) for r in rows), default=0)
    width = max(width, 1)
    ids = np.full((len(rows), width), PAD, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        ids[i, :len(r)] = r
        mask[i, :len(r)] = True
    return ids, mask


def make_batch(examples: list[DialogExample], vocab: Vocabulary, store: FeatureStore,
               frame_count: int = 4, mode: str = "eval",
               rng: np.random.Generator | None = None) -> Batch:
    """Assemble one padded batch; all sequences padded to the batch maximum."""
    if not examples:
        raise ContractError("make_batch: empty example list")

    q_rows = []
    for ex in examples:
        toks = tokenize(ex.question)
        if not toks:
            raise ContractError(f"empty question for video_id {ex.video_id!r} turn {ex.turn}")
        q_rows.append(vocab.encode(toks))
    question, question_mask = _pad_token_rows(q_rows)

    pair_counts = [len(ex.history) for ex in examples]
    t_max = max(max(pair_counts), 1)
    pair_rows: list[list[int]] = []
    for ex in examples:
        for q, a in ex.history:
            pair_rows.append(vocab.encode(tokenize(q) + tokenize(a)))
        pair_rows.extend([] for _ in range(t_max - len(ex.history)))
    flat_ids, flat_mask = _pad_token_rows(pair_rows)
    n_h = flat_ids.shape[1]
    history = flat_ids.reshape(len(examples), t_max, n_h)
    history_token_mask = flat_mask.reshape(len(examples), t_max, n_h)
    history_pair_mask = np.zeros((len(examples), t_max), dtype=bool)
    for i, n in enumerate(pair_counts):
        history_pair_mask[i, :n] = True

    frames = []
    audio_rows = []
    for ex in examples:
        vfeat = store.video(ex.video_id)
        idx = sample_frames(vfeat.shape[0], frame_count, mode=mode, rng=rng)
        frames.append(vfeat[idx].reshape(frame_count, -1, vfeat.shape[-1]))
        audio_rows.append(store.audio(ex.video_id))
    video = np.stack(frames).astype(np.float32)

    n_a = max(max(a.shape[0] for a in audio_rows), 1)
    audio = np.zeros((len(examples), n_a, AUDIO_DIM), dtype=np.float32)
    audio_mask = np.zeros((len(examples), n_a), dtype=bool)
    for i, a in enumerate(audio_rows):
        if a.shape[0] == 0:
            audio_mask[i, 0] = False  # single zero row stays masked
            continue
        audio[i, :a.shape[0]] = a
        audio_mask[i, :a.shape[0]] = True

    ans_in_rows, ans_tgt_rows = [], []
    for ex in examples:
        ids = vocab.encode(tokenize(ex.answer))
        ans_in_rows.append([SOS] + ids)
        ans_tgt_rows.append(ids + [EOS])
    answer_input, _ = _pad_token_rows(ans_in_rows)
    answer_target, target_mask = _pad_token_rows(ans_tgt_rows)

    return Batch(
        video_ids=[ex.video_id for ex in examples],
        question=question, question_mask=question_mask,
        history=history, history_token_mask=history_token_mask,
        history_pair_mask=history_pair_mask,
        video=video, audio=audio, audio_mask=audio_mask,
        answer_input=answer_input, answer_target=answer_target,
        target_mask=target_mask, examples=list(examples),
    )


# ---------------------------------------------------------------------------
# synthetic fixture

COLOR_WORDS = ["red", "blue", "green", "yellow", "purple", "orange", "black", "white"]
_BASE_WORDS = ["what", "color", "is", "the", "it", "there", "any", "sound",
               "yes", "no", "was", "and", "again"]
_CHANNELS_PER_COLOR = 16
_AUDIO_SIGNAL_DIMS = 16


def planted_color_block(features: np.ndarray, color_index: int) -> np.ndarray:
    """The channel block that carries the color signal, averaged over
    frames and spatial positions (used by probe-style diagnostics)."""
    lo = color_index * _CHANNELS_PER_COLOR
    return features[..., lo:lo + _CHANNELS_PER_COLOR].mean(axis=tuple(range(features.ndim - 1)))


def make_synthetic(out_dir, seed: int = 0, n_dialogs: int = 20, vocab_size: int = 50) -> dict:
    """Write a deterministic, learnable fixture dataset.

    Each dialog is three turns about one synthetic video.  The color word in
    turn 1 and 3 answers is planted as a constant block of channels in every
    frame of the video features; the yes/no of turn 2 is planted as a
    constant block in the audio rows.  Noun fillers pad the question
    vocabulary out to ``vocab_size`` words (reserved tokens included).
    """
    if vocab_size < 8:
        raise ContractError("make_synthetic: vocab_size must be >= 8")
    rng = np.random.default_rng(seed)

    n_fillers = max(vocab_size - len(RESERVED) - len(_BASE_WORDS) - len(COLOR_WORDS), 1)
    fillers = [f"obj{i:02d}" for i in range(n_fillers)]

    video_dir = os.path.join(out_dir, "features", "video")
    audio_dir = os.path.join(out_dir, "features", "audio")
    os.makedirs(video_dir, exist_ok=True)
    os.makedirs(audio_dir, exist_ok=True)

    dialogs = []
    plants = []
    for d in range(n_dialogs):
        vid = f"synth{d:04d}"
        # colors and nouns rotate so the whole word inventory is realized
        color = d % len(COLOR_WORDS)
        noisy = bool(rng.integers(2))
        noun = fillers[d % len(fillers)]
        noun2 = fillers[(d + n_dialogs) % len(fillers)]

        frames_total = int(rng.integers(6, 13))
        video = rng.normal(0.0, 0.1, size=(frames_total,) + VIDEO_FRAME_SHAPE).astype(np.float32)
        lo = color * _CHANNELS_PER_COLOR
        video[..., lo:lo + _CHANNELS_PER_COLOR] = 1.0
        write_feature_file(os.path.join(video_dir, f"{vid}.avsf"), video, "video")

        steps = int(rng.integers(4, 10))
        audio = rng.normal(0.0, 0.1, size=(steps, AUDIO_DIM)).astype(np.float32)
        audio[:, :_AUDIO_SIGNAL_DIMS] = 1.0 if noisy else 0.0
        write_feature_file(os.path.join(audio_dir, f"{vid}.avsf"), audio, "audio")

        color_word = COLOR_WORDS[color]
        dialogs.append({
            "video_id": vid,
            "dialog": [
                {"question": f"what color is the {noun}", "answer": f"it is {color_word}"},
                {"question": "is there any sound", "answer": "yes" if noisy else "no"},
                {"question": f"what color was the {noun} and the {noun2} again",
                 "answer": f"it is {color_word}"},
            ],
        })
        plants.append({"video_id": vid, "color": color_word, "noisy": noisy})

    dialog_path = os.path.join(out_dir, "dialogs.json")
    with open(dialog_path, "w", encoding="utf-8") as fh:
        json.dump(dialogs, fh, indent=1, sort_keys=True)

    return {
        "dialogs": dialog_path,
        "video_dir": video_dir,
        "audio_dir": audio_dir,
        "n_dialogs": n_dialogs,
        "words": _BASE_WORDS + COLOR_WORDS + fillers,
        "plants": plants,
    }
