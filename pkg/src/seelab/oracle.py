"""Segmenter abstraction: synthetic test double and subprocess file-protocol client.

The engine never runs neural inference itself. A segmenter is anything with
``segment`` / ``segment_prompted``; two implementations ship here:

* :class:`SyntheticSegmenter` — a deterministic stand-in whose output quality
  is a known function of its configuration and of prompt accuracy, used for
  desk-scale verification of the pipeline's claims.
* :class:`SubprocessSegmenter` — delegates to an external command through a
  request-directory protocol (``image.mskf`` + ``prompts.json`` in,
  ``mask.mskf`` out), for plugging in real models.
"""

from __future__ import annotations

import json
import subprocess
import tempfile
import threading
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, uniform_filter

from .augment import (
    AugSpec,
    apply_spec,
    apply_spec_array,
    fuse,
    identity_spec,
    invert_spec,
    transform_box,
    transform_point,
)
from .errors import DimensionMismatch, InvalidPrompts, OracleFailure
from .prompts import Point, PromptSet
from .raster import Box, GrayMask, load_mask, save_mask
from .seeding import stable_seed


@dataclass(frozen=True)
class SyntheticOracleConfig:
    """Configuration of the deterministic synthetic segmenter.

    The effective quality of a prompted call is
    ``q = clamp(base_quality + prompt_gain * prompt_accuracy, 0, 1)``;
    unprompted calls use ``base_quality`` directly. ``noise_sigma`` scales a
    per-configuration systematic error field that is consistent across views
    of the same image (it transforms with the view), modelling the mistakes
    a model makes on an image regardless of augmentation.
    """

    ground_truth: GrayMask
    base_quality: float = 0.5
    prompt_gain: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.base_quality <= 1.0):
            raise ValueError(f"base_quality must be in [0,1], got {self.base_quality}")
        if self.prompt_gain < 0 or self.noise_sigma < 0:
            raise ValueError("prompt_gain and noise_sigma must be >= 0")


def _box_iou(a: Box, b: Box) -> float:
    ix0, iy0 = max(a.x0, b.x0), max(a.y0, b.y0)
    ix1, iy1 = min(a.x1, b.x1), min(a.y1, b.y1)
    inter = max(0, ix1 - ix0) * max(0, iy1 - iy0)
    union = a.area + b.area - inter
    return inter / union if union else 0.0


def _binary_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    return inter / union if union else 1.0


class SyntheticSegmenter:
    """Deterministic prompt-sensitive oracle around a known ground truth.

    A prediction blends the (view-transformed) ground truth with a noise
    field: ``pixel = q * gt + (1 - q) * u``. The noise ``u`` is seeded
    uniform noise smoothed by a 3x3 box filter, plus the optional systematic
    field scaled by ``noise_sigma``, clipped back into [0, 1]. Every output
    is a pure function of (config, view, prompts).
    """

    kind = "synthetic"

    def __init__(self, config: SyntheticOracleConfig):
        self.config = config
        self._systematic = self._make_systematic(config)

    @staticmethod
    def _make_systematic(config: SyntheticOracleConfig) -> np.ndarray:
        rng = np.random.default_rng(stable_seed(config.seed, "systematic"))
        field = rng.standard_normal(config.ground_truth.shape)
        field = gaussian_filter(field, sigma=2.0, mode="nearest")
        std = field.std()
        return field / std if std > 0 else field

    def _noise(self, view: GrayMask, extra: tuple = ()) -> np.ndarray:
        digest = zlib.crc32(np.ascontiguousarray(view.values, dtype="<f4").tobytes())
        seed = stable_seed(
            self.config.seed, "uniform", float(self.config.base_quality),
            view.height, view.width, digest, *extra,
        )
        u = np.random.default_rng(seed).random(view.shape)
        return uniform_filter(u, size=3, mode="nearest")

    def _blend(self, view: GrayMask, view_spec: AugSpec, q: float, extra: tuple = ()) -> GrayMask:
        gt_view = apply_spec_array(self.config.ground_truth.values, view_spec)
        if gt_view.shape != view.shape:
            raise DimensionMismatch(
                f"view {view.shape} inconsistent with ground truth under {view_spec}"
            )
        u = self._noise(view, extra)
        if self.config.noise_sigma > 0:
            sys_view = apply_spec_array(self._systematic, view_spec)
            u = u + self.config.noise_sigma * sys_view
        u = np.clip(u, 0.0, 1.0)
        pred = q * gt_view.astype(np.float64) + (1.0 - q) * u
        return GrayMask.from_array(pred, clip=True)

    def segment(self, view: GrayMask, view_spec: AugSpec | None = None) -> GrayMask:
        spec = view_spec or identity_spec()
        return self._blend(view, spec, self.config.base_quality)

    def prompt_accuracy(self, prompts: PromptSet, view: GrayMask, view_spec: AugSpec) -> float:
        """Mean of four prompt-fidelity terms measured against the ground truth.

        Points and box are transformed from the original frame into the view
        frame before scoring; an empty point list scores a neutral 0.5.
        """
        gt = self.config.ground_truth
        for p in prompts.fg_points + prompts.bg_points:
            if not (0 <= p.x < gt.width and 0 <= p.y < gt.height):
                raise InvalidPrompts(f"point {(p.x, p.y)} outside {gt.width}x{gt.height}")
        gt_view = apply_spec_array(gt.values, view_spec) >= 0.5

        def point_term(points: tuple[Point, ...], want_fg: bool) -> float:
            if not points:
                return 0.5
            hits = 0
            for p in points:
                x, y = transform_point(p.x, p.y, view_spec, gt.width, gt.height)
                hits += bool(gt_view[y, x]) == want_fg
            return hits / len(points)

        fg_term = point_term(prompts.fg_points, True)
        bg_term = point_term(prompts.bg_points, False)

        ys, xs = np.nonzero(gt_view)
        if ys.size:
            gt_box = Box(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
            box_term = _box_iou(
                transform_box(prompts.box, view_spec, gt.width, gt.height), gt_box
            )
        else:
            box_term = 0.0
        mask_view = apply_spec_array(prompts.mask_prompt.values, view_spec) >= 0.5
        mask_term = _binary_iou(mask_view, gt_view)
        return (fg_term + bg_term + box_term + mask_term) / 4.0

    def segment_prompted(
        self, view: GrayMask, prompts: PromptSet, view_spec: AugSpec | None = None
    ) -> GrayMask:
        spec = view_spec or identity_spec()
        acc = self.prompt_accuracy(prompts, view, spec)
        q = float(np.clip(self.config.base_quality + self.config.prompt_gain * acc, 0.0, 1.0))
        return self._blend(view, spec, q, extra=("prompted", acc))


class SubprocessSegmenter:
    """File-protocol client for an external segmenter process.

    Per call the engine writes ``<reqdir>/image.mskf`` (the view) and
    ``<reqdir>/prompts.json`` (plus ``mask_prompt.mskf`` when prompted, all
    prompt coordinates already in view frame), invokes the command with the
    request directory as its sole argument and reads back
    ``<reqdir>/mask.mskf``. Nonzero exit, timeout, or a missing/misshaped
    reply raise OracleFailure. Calls are serialized per handle.
    """

    kind = "subprocess"

    def __init__(self, command: list[str], timeout_ms: int = 30_000, workdir=None):
        if not command:
            raise OracleFailure("empty oracle command")
        self.command = list(command)
        self.timeout_ms = timeout_ms
        self.workdir = str(workdir) if workdir else None
        self._lock = threading.Lock()

    def _roundtrip(self, view: GrayMask, prompt_obj: dict, mask_prompt: GrayMask | None) -> GrayMask:
        with self._lock, tempfile.TemporaryDirectory(dir=self.workdir) as reqdir:
            req = Path(reqdir)
            save_mask(view, req / "image.mskf")
            if mask_prompt is not None:
                save_mask(mask_prompt, req / "mask_prompt.mskf")
                prompt_obj["mask"] = str(req / "mask_prompt.mskf")
            (req / "prompts.json").write_text(json.dumps(prompt_obj, sort_keys=True))
            try:
                proc = subprocess.run(
                    self.command + [str(req)],
                    timeout=self.timeout_ms / 1000.0,
                    capture_output=True,
                )
            except subprocess.TimeoutExpired as exc:
                raise OracleFailure(f"oracle timed out after {self.timeout_ms} ms") from exc
            except OSError as exc:
                raise OracleFailure(f"could not launch oracle: {exc}") from exc
            if proc.returncode != 0:
                raise OracleFailure(
                    f"oracle exited {proc.returncode}: {proc.stderr.decode(errors='replace')[:500]}"
                )
            reply = req / "mask.mskf"
            if not reply.exists():
                raise OracleFailure("oracle produced no mask.mskf")
            try:
                out = load_mask(reply)
            except Exception as exc:
                raise OracleFailure(f"invalid oracle reply: {exc}") from exc
            if out.shape != view.shape:
                raise OracleFailure(f"oracle reply shape {out.shape} != view {view.shape}")
            return out

    def segment(self, view: GrayMask, view_spec: AugSpec | None = None) -> GrayMask:
        obj = {"fg": [], "bg": [], "box": None, "mask": None, "bg_missing": False}
        return self._roundtrip(view, obj, None)

    def segment_prompted(
        self, view: GrayMask, prompts: PromptSet, view_spec: AugSpec | None = None
    ) -> GrayMask:
        spec = view_spec or identity_spec()
        src_h, src_w = prompts.mask_prompt.shape
        fg = [transform_point(p.x, p.y, spec, src_w, src_h) for p in prompts.fg_points]
        bg = [transform_point(p.x, p.y, spec, src_w, src_h) for p in prompts.bg_points]
        box = transform_box(prompts.box, spec, src_w, src_h)
        obj = {
            "fg": [list(p) for p in fg],
            "bg": [list(p) for p in bg],
            "box": [box.x0, box.y0, box.x1, box.y1],
            "mask": None,
            "bg_missing": prompts.bg_missing,
        }
        mask_view = apply_spec(prompts.mask_prompt, spec)
        return self._roundtrip(view, obj, mask_view)


def coarse_fused_mask(image: GrayMask, augs: list[AugSpec], segmenter) -> GrayMask:
    """Segment every augmented view, invert the transforms, average the masks."""
    preds = []
    for spec in augs:
        view = apply_spec(image, spec)
        pred = segmenter.segment(view, spec)
        preds.append(invert_spec(pred, spec, image.width, image.height))
    return fuse(preds)


def generate_pseudo_label(
    image: GrayMask, augs: list[AugSpec], prompts: PromptSet, segmenter
) -> GrayMask:
    """Prompted counterpart of :func:`coarse_fused_mask`."""
    preds = []
    for spec in augs:
        view = apply_spec(image, spec)
        pred = segmenter.segment_prompted(view, prompts, spec)
        preds.append(invert_spec(pred, spec, image.width, image.height))
    return fuse(preds)
