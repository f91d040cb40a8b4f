"""Run configuration: model dimensions, ablation switches, training knobs.

Defaults reproduce the full model: four sampled frames attended alongside
audio and question, answers decoded with a 3-wide beam, Adam at lr 0.001
with batch 64 and dropout 0.5.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ContractError

FUSION_MODES = (
    "aud-vis-lstm",            # default: audio then frames into the encoder LSTM
    "video-audio-lstm",        # frames first, audio last
    "q-first-state",           # attended question projected to the initial state
    "all-first-state",         # every attended vector projected to the initial state
    "all-concat-decoder-input",  # everything concatenated to each decoder input
    "q-h-a-concat-input",      # audio joins the textual context; frames set the state
)

INIT_SCHEMES = ("default", "xavier", "he")


@dataclass
class RunConfig:
    # data paths
    train_path: str = ""
    val_path: str = ""
    test_path: str = ""
    video_feature_dir: str = ""
    audio_feature_dir: str = ""
    vocab_path: str = ""

    # representation dimensions
    frame_count: int = 4           # F
    video_entities: int = 49       # spatial cells per frame
    video_dim: int = 512
    audio_dim: int = 128
    word_embed_dim: int = 128
    question_hidden: int = 256
    history_hidden: int = 128
    attention_local_dim: int = 512
    attention_pair_dim: int = 512
    encoder_input_dim: int = 512
    decoder_hidden: int = 256
    question_prior_len: int = 32   # learned positional prior capacity

    # ablation switches
    modalities: list[str] = field(default_factory=lambda: ["q", "h", "v", "a"])
    attention: bool = True
    local_evidence: bool = True
    cross_evidence: bool = True
    question_prior: bool = True
    frame_prior: bool = True
    audio_prior: bool = False
    share_frame_weights: bool = False
    fusion_mode: str = "aud-vis-lstm"
    temporal_attention: bool = False  # accepted but inert; kept for config parity

    # training
    learning_rate: float = 0.001
    batch_size: int = 64
    epochs: int = 20
    dropout: float = 0.5
    init_scheme: str = "default"
    early_stop_patience: int = 2
    seed: int = 0
    precision: str = "float32"
    grad_clip: float = 0.0         # 0 disables clipping
    min_count: int = 2

    # inference
    beam_width: int = 3
    max_answer_len: int = 20
    length_normalize: bool = False

    @property
    def text_context_dim(self) -> int:
        """Width of the per-step textual context [attended question ; history]."""
        return self.question_hidden + self.history_hidden

    @property
    def modality_count(self) -> int:
        """Attended data sources: audio, question, and one per frame."""
        n = self.frame_count if "v" in self.modalities else 0
        n += 1 if "a" in self.modalities else 0
        n += 1 if "q" in self.modalities else 0
        return n

    def validate(self) -> None:
        for name in ("frame_count", "video_entities", "video_dim", "audio_dim",
                     "word_embed_dim", "question_hidden", "history_hidden",
                     "attention_local_dim", "attention_pair_dim",
                     "encoder_input_dim", "decoder_hidden", "batch_size",
                     "epochs", "beam_width"):
            if getattr(self, name) <= 0:
                raise ContractError(f"config field {name} must be positive")
        if self.learning_rate <= 0:
            raise ContractError("config field learning_rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("config field dropout must be in [0, 1)")
        if self.fusion_mode not in FUSION_MODES:
            raise ContractError(f"config field fusion_mode must be one of {FUSION_MODES}")
        if self.init_scheme not in INIT_SCHEMES:
            raise ContractError(f"config field init_scheme must be one of {INIT_SCHEMES}")
        if self.precision not in ("float32", "float64"):
            raise ContractError("config field precision must be float32 or float64")
        bad = set(self.modalities) - {"q", "h", "v", "a"}
        if bad:
            raise ContractError(f"config field modalities has unknown entries {sorted(bad)}")
        if "q" not in self.modalities:
            raise ContractError("config field modalities must include 'q'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ContractError(f"unknown config field {sorted(unknown)[0]!r}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def apply_overrides(self, overrides: dict) -> "RunConfig":
        merged = self.to_dict()
        for key, value in overrides.items():
            if key not in merged:
                raise ContractError(f"unknown config field {key!r}")
            merged[key] = value
        return RunConfig.from_dict(merged)


# Named ablation presets; each maps to config overrides on top of defaults.
PRESETS: dict[str, dict] = {
    "q": {"modalities": ["q"], "attention": False},
    "q+h": {"modalities": ["q", "h"], "attention": False},
    "q+h+vgg-spatial": {"modalities": ["q", "h", "v"], "attention": False},
    "q+h+vgg-spatial+audio": {"modalities": ["q", "h", "v", "a"], "attention": False},
    "q+att": {"modalities": ["q"], "attention": True},
    "q+h+att": {"modalities": ["q", "h"], "attention": True},
    "q+h+vgg-spatial+att": {"modalities": ["q", "h", "v"], "attention": True},
    "w/o-cross-data-evidence": {"cross_evidence": False},
    "w/o-local-evidence": {"local_evidence": False},
    "w/o-question-prior": {"question_prior": False},
    "sharing-weights": {"share_frame_weights": True},
    "video-audio-lstm": {"fusion_mode": "video-audio-lstm"},
    "q-first-state": {"fusion_mode": "q-first-state"},
    "all-first-state": {"fusion_mode": "all-first-state"},
    "all-concat-decoder-input": {"fusion_mode": "all-concat-decoder-input"},
    "q+h+a-concat-input": {"fusion_mode": "q-h-a-concat-input"},
    "xavier": {"init_scheme": "xavier"},
    "he": {"init_scheme": "he"},
    "w/o-beam": {"beam_width": 1},
    "2-width": {"beam_width": 2},
    "4-width": {"beam_width": 4},
    "5-width": {"beam_width": 5},
}


def apply_preset(cfg: RunConfig, name: str) -> RunConfig:
    if name not in PRESETS:
        raise ContractError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return cfg.apply_overrides(PRESETS[name])
