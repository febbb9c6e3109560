"""Deterministic synthetic audio-visual clips and their on-disk corpus format.

Every clip is driven by a shared latent articulation envelope: the audio
is an amplitude-modulated carrier tone, and each video frame shows a
centered dark mouth ellipse whose vertical aperture tracks the
frame-averaged envelope.  That shared envelope is the audio-video
correlation the synchronisation detector relies on.

On disk a corpus is `<root>/manifest.json` plus `<root>/clips/<id>.pcm`
(little-endian signed 16-bit mono audio) and `<root>/clips/<id>.vid`
(raw row-major uint8 grayscale frames).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

AUDIO_MIN, AUDIO_MAX = -32768, 32767
PIXEL_MIN, PIXEL_MAX = 0, 255

# token patterns: aperiodic two-sine envelopes so that no within-clip time
# shift reproduces the same articulation, plus one carrier tone per token
_GOLDEN = 1.6180339887498949
_PHASE_STEP = 2.3999632297286533  # golden angle, decorrelates class phases


class CorpusError(ValueError):
    """Malformed corpus configuration, manifest or clip file."""


@dataclass(frozen=True)
class ClipConfig:
    """Geometry, rates and noise levels for clip synthesis."""

    frames: int = 29
    height: int = 16
    width: int = 16
    sample_rate: int = 16000
    frame_rate: int = 25
    audio_noise: float = 500.0
    pixel_noise: float = 5.0
    amplitude: float = 20000.0
    background: int = 200
    mouth_shade: int = 30

    @property
    def samples_per_frame(self) -> int:
        if self.frames <= 0:
            raise CorpusError("clip must have at least one frame")
        if self.frame_rate <= 0 or self.sample_rate % self.frame_rate != 0:
            raise CorpusError(
                f"sample rate {self.sample_rate} is not an integer multiple "
                f"of frame rate {self.frame_rate}"
            )
        return self.sample_rate // self.frame_rate

    @property
    def total_samples(self) -> int:
        return self.frames * self.samples_per_frame


@dataclass
class AvClip:
    """Paired raw media: int16 audio samples and uint8 grayscale frames."""

    audio: np.ndarray
    video: np.ndarray
    sample_rate: int
    frame_rate: int

    def __post_init__(self):
        self.audio = np.asarray(self.audio, dtype=np.int16)
        self.video = np.asarray(self.video, dtype=np.uint8)
        if self.video.ndim != 3:
            raise CorpusError(f"video must be frames x H x W, got shape {self.video.shape}")
        if self.sample_rate % self.frame_rate != 0:
            raise CorpusError("sample rate must be an integer multiple of frame rate")
        if self.audio.shape != (self.frames * self.samples_per_frame,):
            raise CorpusError(
                f"audio length {self.audio.shape} does not match "
                f"{self.frames} frames x {self.samples_per_frame} samples"
            )

    @property
    def frames(self) -> int:
        return self.video.shape[0]

    @property
    def samples_per_frame(self) -> int:
        return self.sample_rate // self.frame_rate

    def duplicate(self) -> "AvClip":
        return AvClip(self.audio.copy(), self.video.copy(), self.sample_rate, self.frame_rate)


def token_carrier_hz(token: int) -> float:
    """Carrier tone frequency for a token class.

    67 Hz spacing from a 410 Hz base keeps every carrier off an integer
    number of cycles per frame at the default 25 fps / 16 kHz rates, so no
    class degenerates into a single repeated frame template.
    """
    return 410.0 + 67.0 * token


def token_envelope(token: int, positions: np.ndarray) -> np.ndarray:
    """Latent articulation envelope of one token over local positions in [0, 1).

    A class-specific base level plus two incommensurate sinusoids, so the
    pattern never repeats within a segment and classes differ in both mean
    articulation and modulation rate.  Values lie in [0.05, 0.95].
    """
    base = 0.30 + 0.044 * token
    cycles = 1.3 + 0.37 * token
    phase = (token * _PHASE_STEP) % (2.0 * np.pi)
    primary = np.sin(2.0 * np.pi * cycles * positions + phase)
    secondary = np.sin(2.0 * np.pi * cycles * _GOLDEN * positions + 1.7 * phase)
    return base + 0.16 * primary + 0.09 * secondary


def clip_envelope(tokens, config: ClipConfig) -> np.ndarray:
    """Per-sample envelope for a clip: tokens laid out in equal time segments."""
    tokens = list(tokens)
    if not tokens:
        raise CorpusError("clip needs at least one token")
    n = config.total_samples
    t = np.arange(n)
    segment = np.minimum((t * len(tokens)) // n, len(tokens) - 1)
    local = (t * len(tokens) / n) - segment
    env = np.empty(n)
    for k, tok in enumerate(tokens):
        mask = segment == k
        env[mask] = token_envelope(tok, local[mask])
    return env


def render_media(envelope: np.ndarray, tokens, config: ClipConfig, seed: int) -> AvClip:
    """Synthesize audio and video from a per-sample envelope.

    Audio: amplitude-modulated carrier (one tone per token segment) plus
    Gaussian noise, rounded and clamped to int16.  Video: per frame, a
    centered dark ellipse whose vertical semi-axis is proportional to the
    frame-averaged envelope, plus pixel noise, clamped to uint8.
    Deterministic for identical (envelope, tokens, config, seed).
    """
    tokens = list(tokens)
    n = config.total_samples
    if envelope.shape != (n,):
        raise CorpusError(f"envelope length {envelope.shape} != total samples {n}")
    rng = np.random.default_rng(seed)

    t = np.arange(n) / config.sample_rate
    segment = np.minimum((np.arange(n) * len(tokens)) // n, len(tokens) - 1)
    carrier_hz = np.array([token_carrier_hz(tok) for tok in tokens])[segment]
    wave = config.amplitude * envelope * np.sin(2.0 * np.pi * carrier_hz * t)
    if config.audio_noise > 0:
        wave = wave + rng.normal(0.0, config.audio_noise, size=n)
    audio = np.clip(np.rint(wave), AUDIO_MIN, AUDIO_MAX).astype(np.int16)

    h, w = config.height, config.width
    spf = config.samples_per_frame
    frame_env = envelope.reshape(config.frames, spf).mean(axis=1)
    rows = np.arange(h)[:, None] - (h - 1) / 2.0
    cols = np.arange(w)[None, :] - (w - 1) / 2.0
    semi_x = 0.38 * w
    video = np.empty((config.frames, h, w), dtype=np.uint8)
    for j in range(config.frames):
        semi_y = 0.45 * h * frame_env[j]
        frame = np.full((h, w), float(config.background))
        if semi_y > 0:
            inside = (rows / semi_y) ** 2 + (cols / semi_x) ** 2 <= 1.0
            frame[inside] = config.mouth_shade
        if config.pixel_noise > 0:
            frame = frame + rng.normal(0.0, config.pixel_noise, size=(h, w))
        video[j] = np.clip(np.rint(frame), PIXEL_MIN, PIXEL_MAX).astype(np.uint8)
    return AvClip(audio, video, config.sample_rate, config.frame_rate)


def generate_clip(seed: int, label, config: ClipConfig) -> AvClip:
    """Deterministically generate one clip.

    `label` is either a single word-class index (the token spans the whole
    clip) or a token index sequence (equal-length time segments).
    """
    if isinstance(label, (int, np.integer)):
        tokens = [int(label)]
    else:
        tokens = [int(x) for x in label]
    return render_media(clip_envelope(tokens, config), tokens, config, seed)


# --------------------------------------------------------------------------
# corpus generation and the on-disk format


DEFAULT_SENTENCE_VOCAB = [
    "bin", "blue", "at", "a", "zero", "please", "set", "red", "nine", "now",
]


@dataclass(frozen=True)
class CorpusConfig:
    """What to generate: corpus kind, label space, split sizes, clip geometry."""

    kind: str = "word"  # "word" (single class label) or "sentence" (token sequence)
    classes: int = 10
    vocab: tuple = tuple(DEFAULT_SENTENCE_VOCAB)
    sentence_length: int = 6
    counts: dict = field(default_factory=lambda: {"train": 60, "val": 20, "test": 20})
    clip: ClipConfig = field(default_factory=ClipConfig)
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in ("word", "sentence"):
            raise CorpusError(f"unknown corpus kind {self.kind!r}")
        if self.kind == "word" and self.classes < 2:
            raise CorpusError("word corpus needs at least two classes")
        if self.kind == "sentence" and (len(self.vocab) < 2 or self.sentence_length < 1):
            raise CorpusError("sentence corpus needs a vocabulary and positive length")
        for split in ("train", "val", "test"):
            if self.counts.get(split, 0) <= 0:
                raise CorpusError(f"split {split!r} must have a positive clip count")
        self.clip.samples_per_frame  # validates rates/frames


def sentence_clip_config() -> ClipConfig:
    return ClipConfig(frames=75)


@dataclass
class CorpusManifest:
    """Per-clip records plus the shared generation parameters."""

    root: Path
    kind: str
    classes: int
    vocab: list
    clip: ClipConfig
    records: list

    def split(self, name: str) -> list:
        return [r for r in self.records if r["split"] == name]

    def record(self, clip_id: str) -> dict:
        for r in self.records:
            if r["id"] == clip_id:
                return r
        raise CorpusError(f"no record with id {clip_id!r}")


_RECORD_FIELDS = (
    "id", "split", "label", "tokens", "frames", "height", "width",
    "sample_rate", "frame_rate", "seed",
)


def make_corpus(config: CorpusConfig, root) -> CorpusManifest:
    """Generate all clips, write them and the manifest under `root`."""
    config.validate()
    root = Path(root)
    (root / "clips").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    records = []
    for split in ("train", "val", "test"):
        for i in range(config.counts[split]):
            clip_seed = int(rng.integers(0, 2**31 - 1))
            if config.kind == "word":
                label, tokens = i % config.classes, None
            else:
                label = None
                tokens = [int(x) for x in rng.integers(0, len(config.vocab), size=config.sentence_length)]
            records.append({
                "id": f"{split}_{i:04d}",
                "split": split,
                "label": label,
                "tokens": tokens,
                "frames": config.clip.frames,
                "height": config.clip.height,
                "width": config.clip.width,
                "sample_rate": config.clip.sample_rate,
                "frame_rate": config.clip.frame_rate,
                "seed": clip_seed,
            })
    manifest = CorpusManifest(
        root=root,
        kind=config.kind,
        classes=config.classes if config.kind == "word" else 0,
        vocab=list(config.vocab) if config.kind == "sentence" else [],
        clip=config.clip,
        records=records,
    )
    for rec in records:
        clip = generate_clip(rec["seed"], rec["label"] if config.kind == "word" else rec["tokens"], config.clip)
        save_clip(clip, clip_paths(root, rec["id"])[0], clip_paths(root, rec["id"])[1])
    write_manifest(manifest)
    return manifest


def clip_paths(root, clip_id: str) -> tuple[Path, Path]:
    root = Path(root)
    return root / "clips" / f"{clip_id}.pcm", root / "clips" / f"{clip_id}.vid"


def write_manifest(manifest: CorpusManifest) -> None:
    doc = {
        "schema_version": 1,
        "kind": manifest.kind,
        "classes": manifest.classes,
        "vocab": manifest.vocab,
        "generation": {
            "frames": manifest.clip.frames,
            "height": manifest.clip.height,
            "width": manifest.clip.width,
            "sample_rate": manifest.clip.sample_rate,
            "frame_rate": manifest.clip.frame_rate,
            "audio_noise": manifest.clip.audio_noise,
            "pixel_noise": manifest.clip.pixel_noise,
            "amplitude": manifest.clip.amplitude,
            "background": manifest.clip.background,
            "mouth_shade": manifest.clip.mouth_shade,
        },
        "records": [{k: r[k] for k in _RECORD_FIELDS} for r in manifest.records],
    }
    path = Path(manifest.root) / "manifest.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_manifest(root) -> CorpusManifest:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise CorpusError(f"manifest {path} is not valid JSON: {err}") from err
    if doc.get("schema_version") != 1:
        raise CorpusError(f"unsupported manifest schema_version {doc.get('schema_version')!r}")
    gen = doc["generation"]
    clip = ClipConfig(
        frames=gen["frames"], height=gen["height"], width=gen["width"],
        sample_rate=gen["sample_rate"], frame_rate=gen["frame_rate"],
        audio_noise=gen["audio_noise"], pixel_noise=gen["pixel_noise"],
        amplitude=gen["amplitude"], background=gen["background"],
        mouth_shade=gen["mouth_shade"],
    )
    ids = [r["id"] for r in doc["records"]]
    if len(set(ids)) != len(ids):
        raise CorpusError("manifest contains duplicate clip ids")
    return CorpusManifest(
        root=Path(root), kind=doc["kind"], classes=doc["classes"],
        vocab=doc["vocab"], clip=clip, records=doc["records"],
    )


def save_clip(clip: AvClip, pcm_path, vid_path) -> None:
    Path(pcm_path).write_bytes(clip.audio.astype("<i2").tobytes())
    Path(vid_path).write_bytes(clip.video.tobytes())


def load_clip(manifest: CorpusManifest, record: dict) -> AvClip:
    """Load one clip, checking byte counts against the manifest record."""
    pcm_path, vid_path = clip_paths(manifest.root, record["id"])
    spf = record["sample_rate"] // record["frame_rate"]
    want_audio = record["frames"] * spf * 2
    want_video = record["frames"] * record["height"] * record["width"]
    audio_bytes = Path(pcm_path).read_bytes()
    if len(audio_bytes) != want_audio:
        raise CorpusError(
            f"{pcm_path}: expected {want_audio} audio bytes, found {len(audio_bytes)}"
        )
    video_bytes = Path(vid_path).read_bytes()
    if len(video_bytes) != want_video:
        raise CorpusError(
            f"{vid_path}: expected {want_video} video bytes, found {len(video_bytes)}"
        )
    audio = np.frombuffer(audio_bytes, dtype="<i2").astype(np.int16)
    video = np.frombuffer(video_bytes, dtype=np.uint8).reshape(
        record["frames"], record["height"], record["width"]
    )
    return AvClip(audio, video.copy(), record["sample_rate"], record["frame_rate"])


def load_split(manifest: CorpusManifest, split: str) -> list:
    """(record, clip) pairs for one split."""
    return [(rec, load_clip(manifest, rec)) for rec in manifest.split(split)]


def quantize_media(audio_real: np.ndarray, video_real: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Round real-valued media to legal int16 / uint8 grids."""
    audio = np.clip(np.rint(audio_real), AUDIO_MIN, AUDIO_MAX).astype(np.int16)
    video = np.clip(np.rint(video_real), PIXEL_MIN, PIXEL_MAX).astype(np.uint8)
    return audio, video


def shift_audio(clip: AvClip, offset_frames: int) -> AvClip:
    """Circularly delay the audio by a whole number of frames.

    Positive offsets make the audio lag the video (content plays later).
    """
    shift = offset_frames * clip.samples_per_frame
    return AvClip(np.roll(clip.audio, shift), clip.video.copy(), clip.sample_rate, clip.frame_rate)


def word_corpus_config(**overrides) -> CorpusConfig:
    return replace(CorpusConfig(), **overrides)


def sentence_corpus_config(**overrides) -> CorpusConfig:
    base = CorpusConfig(kind="sentence", clip=sentence_clip_config(),
                        counts={"train": 64, "val": 12, "test": 24})
    return replace(base, **overrides)
