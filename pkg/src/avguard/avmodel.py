"""Toy two-stream audio-visual recognizers.

Two models share the same front end: a small dense per-frame encoder on
raw audio samples and another on raw pixels, fused by concatenation.
`WordModel` mean-pools over time and emits one logit per word class
(cross-entropy training); `SeqModel` emits per-frame token logits with a
blank at index 0 and trains with a CTC loss.  Attacks differentiate the
losses with respect to the raw-unit input tensors, so the 1/32768 and
1/255 media normalizations live inside the graph.

Checkpoints are a single file: an 8-byte little-endian header length, a
JSON header, then all parameters as little-endian float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numerics as nm
from .avdata import AvClip, CorpusManifest, load_split

AUDIO_SCALE = 1.0 / 32768.0
PIXEL_SCALE = 1.0 / 255.0
MOMENTUM = 0.9
BLANK = 0  # CTC blank sits at logit index 0; vocab token v maps to index v + 1


class InfeasibleTargetError(ValueError):
    """The target sequence cannot be aligned within the available frames."""


@dataclass(frozen=True)
class ModelConfig:
    audio_hidden: int = 32
    audio_dim: int = 16
    video_hidden: int = 32
    video_dim: int = 16

    @property
    def fused_dim(self) -> int:
        return self.audio_dim + self.video_dim


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


# tuned so the toy corpora train reliably across seeds at these budgets
WORD_TRAIN_DEFAULTS = TrainConfig(learning_rate=0.05, epochs=30, batch_size=8, seed=0)
SEQ_TRAIN_DEFAULTS = TrainConfig(learning_rate=0.7, epochs=50, batch_size=8, seed=0)


def clip_arrays(clip: AvClip) -> tuple[np.ndarray, np.ndarray]:
    """Raw-unit float views of a clip: audio [T, spf], video [T, H*W]."""
    t = clip.frames
    audio = clip.audio.astype(np.float64).reshape(t, clip.samples_per_frame)
    video = clip.video.astype(np.float64).reshape(t, -1)
    return audio, video


def _affine(x, weight, bias, rows):
    # bias broadcast over rows via ones-column outer product (the engine has
    # no row broadcasting)
    ones = nm.tensor(np.ones((rows, 1)))
    b_row = nm.reshape(bias, (1, bias.size))
    return nm.add(nm.matmul(x, weight), nm.matmul(ones, b_row))


class _TwoStreamModel:
    """Shared per-frame encoders and parameter bookkeeping."""

    kind = ""

    def __init__(self, out_classes, samples_per_frame, pixels, config: ModelConfig, seed: int):
        self.out_classes = int(out_classes)
        self.samples_per_frame = int(samples_per_frame)
        self.pixels = int(pixels)
        self.config = config
        self.seed = int(seed)
        rng = np.random.default_rng(seed)

        def dense(name, fan_in, fan_out):
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            self.params[name + "_w"] = nm.tensor(w)
            self.params[name + "_b"] = nm.tensor(np.zeros(fan_out))

        self.params: dict[str, nm.Tensor] = {}
        dense("audio1", samples_per_frame, config.audio_hidden)
        dense("audio2", config.audio_hidden, config.audio_dim)
        dense("video1", pixels, config.video_hidden)
        dense("video2", config.video_hidden, config.video_dim)
        dense("head", config.fused_dim, out_classes)

    def parameters(self) -> list[nm.Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def _encode(self, stream, x, rows):
        p = self.params
        h = nm.relu(_affine(x, p[stream + "1_w"], p[stream + "1_b"], rows))
        return nm.relu(_affine(h, p[stream + "2_w"], p[stream + "2_b"], rows))

    def _fuse(self, audio2d, video2d):
        # raw-unit inputs; accepts live tensors so callers can differentiate
        # straight through to their own leaves
        a_in = audio2d if isinstance(audio2d, nm.Tensor) else nm.tensor(np.asarray(audio2d, dtype=np.float64))
        v_in = video2d if isinstance(video2d, nm.Tensor) else nm.tensor(np.asarray(video2d, dtype=np.float64))
        if a_in.data.ndim != 2 or a_in.shape[1] != self.samples_per_frame:
            raise nm.ShapeError(
                f"audio must be frames x {self.samples_per_frame}, got {a_in.shape}"
            )
        if v_in.data.ndim != 2 or v_in.shape[1] != self.pixels:
            raise nm.ShapeError(f"video must be frames x {self.pixels}, got {v_in.shape}")
        if a_in.shape[0] != v_in.shape[0]:
            raise nm.ShapeError(
                f"stream lengths differ: {a_in.shape[0]} audio vs {v_in.shape[0]} video frames"
            )
        rows = a_in.shape[0]
        fa = self._encode("audio", nm.multiply(a_in, AUDIO_SCALE), rows)
        fv = self._encode("video", nm.multiply(v_in, PIXEL_SCALE), rows)
        return nm.concat([fa, fv], axis=1), a_in, v_in, rows


@dataclass
class WordOutput:
    logits: nm.Tensor  # [classes]
    audio_in: nm.Tensor
    video_in: nm.Tensor


@dataclass
class SeqOutput:
    logprobs: nm.Tensor  # [frames, vocab + 1], log-softmaxed rows
    audio_in: nm.Tensor
    video_in: nm.Tensor


class WordModel(_TwoStreamModel):
    """Whole-clip word classifier: fuse, mean-pool over time, one dense head."""

    kind = "word"

    def forward(self, audio2d, video2d) -> WordOutput:
        fused, a_in, v_in, _ = self._fuse(audio2d, video2d)
        pooled = nm.mean(fused, axis=0)
        logits = _affine(nm.reshape(pooled, (1, self.config.fused_dim)),
                         self.params["head_w"], self.params["head_b"], 1)
        return WordOutput(nm.reshape(logits, (self.out_classes,)), a_in, v_in)

    def loss_from(self, out: WordOutput, label: int) -> nm.Tensor:
        logp = nm.log_softmax(out.logits)
        return nm.multiply(nm.total(nm.gather(logp, [int(label)])), -1.0)

    def predict_arrays(self, audio2d, video2d) -> int:
        return int(np.argmax(self.forward(audio2d, video2d).logits.data))

    def predict(self, clip: AvClip) -> int:
        return self.predict_arrays(*clip_arrays(clip))


class SeqModel(_TwoStreamModel):
    """Per-frame token scorer for CTC training; out_classes = vocab + 1."""

    kind = "seq"

    def __init__(self, vocab_size, samples_per_frame, pixels,
                 config: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__(vocab_size + 1, samples_per_frame, pixels, config, seed)
        self.vocab_size = int(vocab_size)

    def forward(self, audio2d, video2d) -> SeqOutput:
        fused, a_in, v_in, rows = self._fuse(audio2d, video2d)
        logits = _affine(fused, self.params["head_w"], self.params["head_b"], rows)
        return SeqOutput(nm.log_softmax(logits), a_in, v_in)

    def loss_from(self, out: SeqOutput, target) -> nm.Tensor:
        return ctc_loss(out.logprobs, target)

    def transcribe_arrays(self, audio2d, video2d) -> tuple[int, ...]:
        return ctc_greedy_decode(self.forward(audio2d, video2d).logprobs.data)

    def transcribe(self, clip: AvClip) -> tuple[int, ...]:
        return self.transcribe_arrays(*clip_arrays(clip))


def WordModelFor(manifest: CorpusManifest, config: ModelConfig = ModelConfig(),
                 seed: int = 0) -> WordModel:
    clip = manifest.clip
    return WordModel(manifest.classes, clip.samples_per_frame,
                     clip.height * clip.width, config, seed)


def SeqModelFor(manifest: CorpusManifest, config: ModelConfig = ModelConfig(),
                seed: int = 0) -> SeqModel:
    clip = manifest.clip
    return SeqModel(len(manifest.vocab), clip.samples_per_frame,
                    clip.height * clip.width, config, seed)


# --------------------------------------------------------------------------
# CTC: loss, decoding, word error rate


def _extended_labels(target) -> np.ndarray:
    target = [int(t) for t in target]
    if not target:
        raise InfeasibleTargetError("target sequence must contain at least one token")
    if min(target) < 0:
        raise ValueError("token indices must be non-negative")
    ext = np.zeros(2 * len(target) + 1, dtype=np.intp)
    ext[1::2] = np.asarray(target) + 1
    return ext


def _min_frames(target) -> int:
    target = [int(t) for t in target]
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_loss(logprobs, target) -> nm.Tensor:
    """Negative log-probability that the frames collapse to `target`.

    `logprobs` is a [T, vocab+1] tensor of per-frame log-scores (blank at
    column 0); `target` is a sequence of vocab token ids.  The total over
    all blank-augmented alignments is computed with the standard log-space
    forward recursion; the gradient uses the matching backward recursion.
    """
    lp_t = logprobs if isinstance(logprobs, nm.Tensor) else nm.tensor(logprobs)
    lp = lp_t.data
    if lp.ndim != 2:
        raise nm.ShapeError(f"logprobs must be 2-D, got shape {lp.shape}")
    frames, n_classes = lp.shape
    ext = _extended_labels(target)
    if ext.max(initial=0) >= n_classes:
        raise ValueError(f"token id out of range for {n_classes - 1} vocabulary entries")
    if _min_frames(target) > frames:
        raise InfeasibleTargetError(
            f"target needs at least {_min_frames(target)} frames, clip has {frames}"
        )
    s = ext.size
    # alpha[t, j]: log-mass of prefixes in extended state j after frame t
    allow_skip = np.zeros(s, dtype=bool)
    allow_skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    scores = lp[:, ext]  # [T, S]
    alpha = np.full((frames, s), -np.inf)
    alpha[0, 0] = scores[0, 0]
    if s > 1:
        alpha[0, 1] = scores[0, 1]
    neg_inf = np.array([-np.inf])
    for t in range(1, frames):
        prev = alpha[t - 1]
        stay_or_step = np.logaddexp(prev, np.concatenate((neg_inf, prev[:-1])))
        skip = np.concatenate((neg_inf, neg_inf, prev[:-2]))
        merged = np.where(allow_skip, np.logaddexp(stay_or_step, skip), stay_or_step)
        alpha[t] = merged + scores[t]
    log_p = np.logaddexp(alpha[-1, -1], alpha[-1, -2]) if s > 1 else alpha[-1, -1]
    if not np.isfinite(log_p):
        raise InfeasibleTargetError("no feasible alignment has positive probability")

    # the same skip legality seen from the departing state
    allow_skip_out = np.zeros(s, dtype=bool)
    allow_skip_out[:-2] = allow_skip[2:]

    def vjp(g):
        beta = np.full((frames, s), -np.inf)
        beta[-1, -1] = scores[-1, -1]
        if s > 1:
            beta[-1, -2] = scores[-1, -2]
        for t in range(frames - 2, -1, -1):
            nxt = beta[t + 1]
            stay_or_step = np.logaddexp(nxt, np.concatenate((nxt[1:], neg_inf)))
            skip = np.concatenate((nxt[2:], neg_inf, neg_inf))
            merged = np.where(allow_skip_out, np.logaddexp(stay_or_step, skip), stay_or_step)
            beta[t] = merged + scores[t]
        # occupancy of state j at frame t with the frame's score counted
        # once: alpha + beta both include it
        occupancy = alpha + beta
        grad = np.zeros((frames, n_classes))
        with np.errstate(invalid="ignore"):
            for j in range(s):
                exponent = occupancy[:, j] - scores[:, j] - log_p
                grad[:, ext[j]] -= np.exp(np.where(np.isfinite(exponent), exponent, -np.inf))
        return (float(g) * grad,)

    return nm.custom_op(-log_p, [lp_t], "ctc_loss", vjp)


def ctc_brute_force(logprobs: np.ndarray, target) -> float:
    """Oracle: enumerate every frame labelling and sum the ones that collapse
    to `target`.  Exponential in T; only for tiny shapes."""
    lp = np.asarray(logprobs, dtype=np.float64)
    frames, n_classes = lp.shape
    want = tuple(int(t) for t in target)
    totals = []
    for flat in range(n_classes**frames):
        path, x = [], flat
        for _ in range(frames):
            path.append(x % n_classes)
            x //= n_classes
        collapsed, prev = [], BLANK
        for c in path:
            if c != prev and c != BLANK:
                collapsed.append(c - 1)
            prev = c
        if tuple(collapsed) == want:
            totals.append(sum(lp[t, c] for t, c in enumerate(path)))
    if not totals:
        return np.inf
    m = max(totals)
    return -(m + np.log(sum(np.exp(v - m) for v in totals)))


def ctc_greedy_decode(logprobs: np.ndarray) -> tuple[int, ...]:
    """Best path decode: frame argmax, collapse repeats, drop blanks."""
    best = np.argmax(np.asarray(logprobs), axis=-1)
    out, prev = [], BLANK
    for c in best:
        if c != prev and c != BLANK:
            out.append(int(c) - 1)
        prev = c
    return tuple(out)


def edit_distance(ref, hyp) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    ref, hyp = list(ref), list(hyp)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i]
        for j, h in enumerate(hyp, start=1):
            cur.append(min(prev[j] + 1, cur[-1] + 1, prev[j - 1] + (r != h)))
        prev = cur
    return prev[-1]


def wer(reference, hypothesis) -> float:
    """Word error rate: edit distance over reference length."""
    reference = list(reference)
    if not reference:
        raise ValueError("reference sequence must not be empty")
    return edit_distance(reference, list(hypothesis)) / len(reference)


# --------------------------------------------------------------------------
# training


def _sgd_step(params: dict, grads: dict, velocity: dict, lr: float) -> None:
    for name in sorted(params):
        g = grads[name]
        velocity[name] = MOMENTUM * velocity[name] + g
        params[name].data -= lr * velocity[name]


def _minibatches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_word(model: WordModel, manifest: CorpusManifest, cfg: TrainConfig) -> list[float]:
    """SGD with momentum on cross-entropy; returns per-epoch validation accuracy."""
    train = [(clip_arrays(c), rec["label"]) for rec, c in load_split(manifest, "train")]
    val = [(clip_arrays(c), rec["label"]) for rec, c in load_split(manifest, "val")]
    if not train or not val:
        raise ValueError("train and val splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    velocity = {k: np.zeros_like(p.data) for k, p in model.params.items()}
    names = sorted(model.params)
    history = []
    for _ in range(cfg.epochs):
        for batch in _minibatches(len(train), cfg.batch_size, rng):
            loss = None
            for i in batch:
                (a2d, v2d), label = train[i]
                item = model.loss_from(model.forward(a2d, v2d), label)
                loss = item if loss is None else nm.add(loss, item)
            loss = nm.multiply(loss, 1.0 / len(batch))
            grads = nm.backward(loss, model.parameters())
            grad_by_name = {k: grads[model.params[k]].data for k in names}
            _sgd_step(model.params, grad_by_name, velocity, cfg.learning_rate)
        correct = sum(model.predict_arrays(a2d, v2d) == label for (a2d, v2d), label in val)
        history.append(correct / len(val))
    return history


def train_seq(model: SeqModel, manifest: CorpusManifest, cfg: TrainConfig) -> list[float]:
    """SGD with momentum on CTC; returns per-epoch validation word error rate.

    The training objective divides each clip's CTC loss by its frame count;
    without that the early gradients (loss scales with T) shove the
    encoders into dead ReLUs and training collapses to all-blank output.
    """
    train = [(clip_arrays(c), tuple(rec["tokens"])) for rec, c in load_split(manifest, "train")]
    val = [(clip_arrays(c), tuple(rec["tokens"])) for rec, c in load_split(manifest, "val")]
    if not train or not val:
        raise ValueError("train and val splits must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    velocity = {k: np.zeros_like(p.data) for k, p in model.params.items()}
    names = sorted(model.params)
    history = []
    for _ in range(cfg.epochs):
        for batch in _minibatches(len(train), cfg.batch_size, rng):
            loss = None
            for i in batch:
                (a2d, v2d), target = train[i]
                item = model.loss_from(model.forward(a2d, v2d), target)
                item = nm.multiply(item, 1.0 / a2d.shape[0])
                loss = item if loss is None else nm.add(loss, item)
            loss = nm.multiply(loss, 1.0 / len(batch))
            grads = nm.backward(loss, model.parameters())
            grad_by_name = {k: grads[model.params[k]].data for k in names}
            _sgd_step(model.params, grad_by_name, velocity, cfg.learning_rate)
        rates = [wer(target, model.transcribe_arrays(a2d, v2d)) for (a2d, v2d), target in val]
        history.append(float(np.mean(rates)))
    return history


# --------------------------------------------------------------------------
# checkpoints: length-prefixed JSON header + float64 little-endian blob


def save_params(path, header: dict, params: dict) -> None:
    names = sorted(params)
    header = dict(header)
    header["params"] = [{"name": k, "shape": list(params[k].data.shape)} for k in names]
    blob = b"".join(np.ascontiguousarray(params[k].data, dtype="<f8").tobytes() for k in names)
    payload = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(blob)


def load_params(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"checkpoint {path} is truncated")
    (header_len,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + header_len].decode())
    offset = 8 + header_len
    params = {}
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        params[spec["name"]] = arr.astype(np.float64)
        offset += count * 8
    return header, params


def save_model(model, path) -> None:
    header = {
        "format": 1,
        "kind": model.kind,
        "out_classes": model.out_classes,
        "samples_per_frame": model.samples_per_frame,
        "pixels": model.pixels,
        "seed": model.seed,
        "config": {
            "audio_hidden": model.config.audio_hidden,
            "audio_dim": model.config.audio_dim,
            "video_hidden": model.config.video_hidden,
            "video_dim": model.config.video_dim,
        },
    }
    if model.kind == "seq":
        header["vocab_size"] = model.vocab_size
    save_params(path, header, model.params)


def load_model(path):
    header, params = load_params(path)
    config = ModelConfig(**header["config"])
    if header["kind"] == "word":
        model = WordModel(header["out_classes"], header["samples_per_frame"],
                          header["pixels"], config, header["seed"])
    elif header["kind"] == "seq":
        model = SeqModel(header["vocab_size"], header["samples_per_frame"],
                         header["pixels"], config, header["seed"])
    else:
        raise ValueError(f"unknown model kind {header['kind']!r} in {path}")
    for name, arr in params.items():
        model.params[name] = nm.tensor(arr)
    return model
