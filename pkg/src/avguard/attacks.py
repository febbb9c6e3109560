"""White-box adversarial attacks on both media streams at once.

All three attacks move the raw-unit inputs along the sign of the loss
gradient, each modality with its own budget: FGSM takes one signed step
of size epsilon, BIM iterates small steps inside the epsilon ball, and
the targeted attack descends the CTC loss toward an attacker-chosen
transcription while its per-modality bounds anneal tighter every time
the decode succeeds.  Iterates stay real-valued; `quantize` snaps an
example onto the integer media grid and re-judges it.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import detector
from . import numerics as nm
from .avdata import AUDIO_MAX, AUDIO_MIN, PIXEL_MAX, PIXEL_MIN, AvClip, quantize_media
from .avmodel import SeqModel, WordModel, clip_arrays, ctc_greedy_decode, wer


def bim_iterations(eps_video: float) -> int:
    """Default BIM budget: round(min(eps + 4, 1.25 * eps)) on the video bound."""
    return int(round(min(eps_video + 4.0, 1.25 * eps_video)))


@dataclass(frozen=True)
class AttackConfig:
    """Perturbation budgets, step sizes and iteration counts per modality."""

    eps_audio: float = 1024.0
    eps_video: float = 16.0
    step_audio: float = 64.0
    step_video: float = 1.0
    iterations: int | None = None  # BIM default: bim_iterations(eps_video)

    # targeted attack: starting bounds anneal down on every success
    targeted_eps0_audio: float = 2048.0
    targeted_eps0_video: float = 32.0
    anneal: float = 0.9
    max_iterations: int = 1000
    success_mode: str = "full"  # "full": WER 0; "partial": WER <= partial_wer
    partial_wer: float = 0.5

    def __post_init__(self):
        for name in ("eps_audio", "eps_video", "step_audio", "step_video",
                     "targeted_eps0_audio", "targeted_eps0_video"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.iterations is not None and self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.success_mode not in ("full", "partial"):
            raise ValueError(f"unknown success mode {self.success_mode!r}")


@dataclass
class AdversarialExample:
    """A perturbed clip plus its provenance and measured distortion.

    Media stay float64 until `quantize`; `delta_*` are adversarial minus
    original in raw units.  `distortions` holds l2_v, linf_v, linf_a_db
    (None when the audio perturbation is identically zero).
    """

    original: AvClip
    adv_audio: np.ndarray
    adv_video: np.ndarray
    attack: str
    success: bool
    predicted_class: int | None = None
    achieved_wer: float | None = None
    label: int | None = None
    target: tuple | None = None
    config: AttackConfig = field(default_factory=AttackConfig)
    quantized: bool = False
    iterations_run: int = 0

    @property
    def delta_audio(self) -> np.ndarray:
        return self.adv_audio - self.original.audio.astype(np.float64)

    @property
    def delta_video(self) -> np.ndarray:
        return self.adv_video - self.original.video.astype(np.float64)

    @property
    def distortions(self) -> dict:
        orig_video = self.original.video.astype(np.float64)
        delta_a = self.delta_audio
        return {
            "l2_v": detector.l2_distortion(self.adv_video, orig_video),
            "linf_v": detector.linf_distortion(self.adv_video, orig_video),
            "linf_a_db": (detector.db_distortion(delta_a, self.original.audio)
                          if np.any(delta_a) else None),
        }

    def adversarial_clip(self) -> AvClip:
        if not self.quantized:
            raise ValueError("quantize the example before materializing a clip")
        return AvClip(self.adv_audio.astype(np.int16),
                      self.adv_video.astype(np.uint8),
                      self.original.sample_rate, self.original.frame_rate)


def _flatten_media(audio2d: np.ndarray, video2d: np.ndarray, clip: AvClip):
    audio = audio2d.reshape(clip.audio.shape)
    video = video2d.reshape(clip.video.shape)
    return audio, video


def _word_gradients(model: WordModel, audio2d, video2d, label: int):
    out = model.forward(audio2d, video2d)
    loss = model.loss_from(out, label)
    grads = nm.backward(loss, [out.audio_in, out.video_in])
    pred = int(np.argmax(out.logits.data))
    return grads[out.audio_in].data, grads[out.video_in].data, pred


def fgsm(model: WordModel, clip: AvClip, label: int, config: AttackConfig = AttackConfig()) -> AdversarialExample:
    """One signed-gradient step of size epsilon per modality, loss ascending."""
    audio2d, video2d = clip_arrays(clip)
    if config.eps_audio == 0 and config.eps_video == 0:
        warnings.warn("fgsm with zero budgets on both modalities returns the clip unchanged")
        pred = model.predict_arrays(audio2d, video2d)
        return AdversarialExample(clip.duplicate(), clip.audio.astype(np.float64),
                                  clip.video.astype(np.float64), "fgsm",
                                  success=pred != label, predicted_class=pred,
                                  label=label, config=config, iterations_run=0)
    ga, gv, _ = _word_gradients(model, audio2d, video2d, label)
    adv_a = np.clip(audio2d + config.eps_audio * np.sign(ga), AUDIO_MIN, AUDIO_MAX)
    adv_v = np.clip(video2d + config.eps_video * np.sign(gv), PIXEL_MIN, PIXEL_MAX)
    pred = model.predict_arrays(adv_a, adv_v)
    audio, video = _flatten_media(adv_a, adv_v, clip)
    return AdversarialExample(clip.duplicate(), audio, video, "fgsm",
                              success=pred != label, predicted_class=pred,
                              label=label, config=config, iterations_run=1)


def bim(model: WordModel, clip: AvClip, label: int, config: AttackConfig = AttackConfig()) -> AdversarialExample:
    """Iterated FGSM with per-step projection onto the epsilon ball."""
    audio2d, video2d = clip_arrays(clip)
    if config.eps_audio == 0 and config.eps_video == 0:
        warnings.warn("bim with zero budgets on both modalities returns the clip unchanged")
        pred = model.predict_arrays(audio2d, video2d)
        return AdversarialExample(clip.duplicate(), clip.audio.astype(np.float64),
                                  clip.video.astype(np.float64), "bim",
                                  success=pred != label, predicted_class=pred,
                                  label=label, config=config, iterations_run=0)
    steps = config.iterations if config.iterations is not None else bim_iterations(config.eps_video)
    cur_a, cur_v = audio2d.copy(), video2d.copy()
    for _ in range(steps):
        ga, gv, _ = _word_gradients(model, cur_a, cur_v, label)
        cur_a = cur_a + config.step_audio * np.sign(ga)
        cur_v = cur_v + config.step_video * np.sign(gv)
        cur_a = np.clip(cur_a, audio2d - config.eps_audio, audio2d + config.eps_audio)
        cur_v = np.clip(cur_v, video2d - config.eps_video, video2d + config.eps_video)
        cur_a = np.clip(cur_a, AUDIO_MIN, AUDIO_MAX)
        cur_v = np.clip(cur_v, PIXEL_MIN, PIXEL_MAX)
    pred = model.predict_arrays(cur_a, cur_v)
    audio, video = _flatten_media(cur_a, cur_v, clip)
    return AdversarialExample(clip.duplicate(), audio, video, "bim",
                              success=pred != label, predicted_class=pred,
                              label=label, config=config, iterations_run=steps)


def targeted_opt_attack(model: SeqModel, clip: AvClip, target,
                        config: AttackConfig = AttackConfig()) -> AdversarialExample:
    """Drive the CTC decode to `target` with the smallest perturbation found.

    Projected signed-gradient descent on the CTC loss.  Whenever the decode
    satisfies the configured success mode the per-modality bound tightens to
    anneal * current max perturbation and descent continues, so later
    successes are strictly less distorted; the least distorted success wins.
    Stops early only once both bounds drop below the integer quantization
    grid, where further descent cannot change the emitted media.
    """
    target = tuple(int(t) for t in target)
    audio2d, video2d = clip_arrays(clip)
    eps_a = float(config.targeted_eps0_audio)
    eps_v = float(config.targeted_eps0_video)
    need = config.partial_wer if config.success_mode == "partial" else 0.0

    delta_a = np.zeros_like(audio2d)
    delta_v = np.zeros_like(video2d)
    best: tuple[np.ndarray, np.ndarray, float] | None = None
    best_wer = np.inf
    best_fail: tuple[np.ndarray, np.ndarray, float] | None = None
    iterations = 0
    for iteration in range(config.max_iterations + 1):
        out = model.forward(audio2d + delta_a, video2d + delta_v)
        decoded = ctc_greedy_decode(out.logprobs.data)
        achieved = wer(target, decoded)
        if achieved <= need:
            linf_a = float(np.max(np.abs(delta_a)))
            linf_v = float(np.max(np.abs(delta_v)))
            best = (delta_a.copy(), delta_v.copy(), achieved)
            eps_a = config.anneal * linf_a
            eps_v = config.anneal * linf_v
            if eps_a < 1.0 and eps_v < 0.25:
                iterations = iteration
                break
        elif achieved < best_wer:
            best_wer = achieved
            best_fail = (delta_a.copy(), delta_v.copy(), achieved)
        if iteration == config.max_iterations:
            iterations = iteration
            break
        loss = model.loss_from(out, target)  # raises for infeasible targets
        grads = nm.backward(loss, [out.audio_in, out.video_in])
        delta_a = delta_a - config.step_audio * np.sign(grads[out.audio_in].data)
        delta_v = delta_v - config.step_video * np.sign(grads[out.video_in].data)
        delta_a = np.clip(delta_a, -eps_a, eps_a)
        delta_v = np.clip(delta_v, -eps_v, eps_v)
        delta_a = np.clip(audio2d + delta_a, AUDIO_MIN, AUDIO_MAX) - audio2d
        delta_v = np.clip(video2d + delta_v, PIXEL_MIN, PIXEL_MAX) - video2d
        iterations = iteration + 1

    if best is not None:
        da, dv, achieved = best
        success = True
    else:
        da, dv, achieved = best_fail if best_fail is not None else (delta_a, delta_v, 1.0)
        success = False
    audio, video = _flatten_media(audio2d + da, video2d + dv, clip)
    return AdversarialExample(clip.duplicate(), audio, video, "targeted",
                              success=success, achieved_wer=float(achieved),
                              target=target, config=config, iterations_run=iterations)


def quantize(example: AdversarialExample, model) -> AdversarialExample:
    """Round media onto the int16/uint8 grid and re-judge success there."""
    audio, video = quantize_media(example.adv_audio, example.adv_video)
    out = replace(example, adv_audio=audio.astype(np.float64),
                  adv_video=video.astype(np.float64), quantized=True)
    audio2d = out.adv_audio.reshape(example.original.frames, -1)
    video2d = out.adv_video.reshape(example.original.frames, -1)
    if example.attack in ("fgsm", "bim"):
        pred = model.predict_arrays(audio2d, video2d)
        out.predicted_class = pred
        out.success = pred != example.label
    else:
        decoded = model.transcribe_arrays(audio2d, video2d)
        achieved = wer(example.target, decoded)
        out.achieved_wer = float(achieved)
        need = example.config.partial_wer if example.config.success_mode == "partial" else 0.0
        out.success = achieved <= need
    return out


# --------------------------------------------------------------------------
# attack records: one JSON object per attacked clip


def attack_record(clip_id: str, example: AdversarialExample) -> dict:
    cfg = example.config
    if example.attack == "targeted":
        eps_a, eps_v = cfg.targeted_eps0_audio, cfg.targeted_eps0_video
    else:
        eps_a, eps_v = cfg.eps_audio, cfg.eps_video
    d = example.distortions
    return {
        "clip_id": clip_id,
        "attack": example.attack,
        "eps_a": eps_a,
        "eps_v": eps_v,
        "iterations": example.iterations_run,
        "success": bool(example.success),
        "wer": example.achieved_wer,
        "l2_v": d["l2_v"],
        "linf_v": d["linf_v"],
        "linf_a_db": d["linf_a_db"],
    }


def write_attack_records(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_attack_records(path) -> list[dict]:
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records
