"""Deterministic stand-in for the robot head and camera.

An actuator vector of length D (default 35, values in [0, 1]) drives a
simple geometric face rendered as a 224x224 grayscale image. The D
actuators are split into six contiguous groups; each group's mean value
controls one facial feature:

    group 0  brow height      (higher value raises both brows)
    group 1  brow angle       (tilts brows around their centers)
    group 2  eye openness     (vertical radius of both eyes)
    group 3  mouth curvature  (corners up vs. down)
    group 4  mouth width
    group 5  jaw drop         (size of the dark mouth opening)

Every feature draws only inside a fixed horizontal band (see REGIONS),
so actuators of one group can never change pixels outside their band.
All strokes use smoothstep profiles with compact support: images are
continuous in the actuator vector and bit-identical for equal inputs.

A synthetic per-emotion "true intensity" is also defined here. It is a
radial bump in the six-dimensional feature space around a seeded target
point, rescaled so the designated optimum scores exactly 1.0 and its
antipodal corner exactly 0.0. It exists for synthetic annotation and
testing only; the trained preference model never sees it.
"""

from __future__ import annotations

import hashlib
from enum import Enum

import numpy as np

from .errors import InvalidActuator

IMAGE_SIZE = 224
DEFAULT_DIM = 35
NUM_FEATURES = 6

# Row bands [start, stop) that fully contain each feature's strokes.
REGIONS = {
    "brow": (54, 94),
    "eye": (96, 130),
    "mouth": (148, 206),
}

FEATURE_NAMES = (
    "brow_height",
    "brow_angle",
    "eye_openness",
    "mouth_curve",
    "mouth_width",
    "jaw_drop",
)

FEATURE_REGION = {
    "brow_height": "brow",
    "brow_angle": "brow",
    "eye_openness": "eye",
    "mouth_curve": "mouth",
    "mouth_width": "mouth",
    "jaw_drop": "mouth",
}

_BG = 0.06
_SKIN = 0.82
_INK = 0.10


class Emotion(str, Enum):
    ANGER = "anger"
    DISGUST = "disgust"
    FEAR = "fear"
    HAPPINESS = "happiness"
    SADNESS = "sadness"
    SURPRISE = "surprise"
    NEUTRAL = "neutral"

    @classmethod
    def parse(cls, value) -> "Emotion":
        if isinstance(value, Emotion):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(e.value for e in cls)
            raise ValueError(f"unknown emotion {value!r}; expected one of {names}") from None


#: The six categories a preference model is trained for (all but neutral).
TRAINABLE_EMOTIONS = tuple(e for e in Emotion if e is not Emotion.NEUTRAL)


def check_actuators(v, dim: int | None = None) -> np.ndarray:
    """Validate and return an actuator vector as a float64 array.

    Raises InvalidActuator on wrong rank/length, non-finite entries, or
    values outside [0, 1].
    """
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidActuator(f"actuator vector must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise InvalidActuator(f"expected {dim} actuators, got {arr.shape[0]}")
    if arr.shape[0] < NUM_FEATURES:
        raise InvalidActuator(f"need at least {NUM_FEATURES} actuators, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidActuator("actuator values must be finite")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidActuator("actuator values must lie in [0, 1]")
    return arr


def actuator_groups(dim: int) -> list[slice]:
    """Contiguous index slices assigning actuators to the six features."""
    if dim < NUM_FEATURES:
        raise InvalidActuator(f"need at least {NUM_FEATURES} actuators, got {dim}")
    bounds = [round(g * dim / NUM_FEATURES) for g in range(NUM_FEATURES + 1)]
    return [slice(bounds[g], bounds[g + 1]) for g in range(NUM_FEATURES)]


def face_features(v) -> np.ndarray:
    """Six feature values in [0, 1]: the per-group actuator means."""
    arr = check_actuators(v)
    groups = actuator_groups(arr.shape[0])
    return np.array([arr[g].mean() for g in groups])


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _stamp(img, rows, alpha):
    """Composite an ink stroke of opacity `alpha` onto a row band of `img`."""
    band = img[rows[0]:rows[1], :]
    band *= 1.0 - alpha
    band += _INK * alpha


_STATIC_LAYER = None


def _static_layer() -> np.ndarray:
    """Background, head ellipse, and nose; independent of the actuators."""
    global _STATIC_LAYER
    if _STATIC_LAYER is None:
        r = np.arange(IMAGE_SIZE, dtype=np.float64)[:, None]
        c = np.arange(IMAGE_SIZE, dtype=np.float64)[None, :]
        img = np.full((IMAGE_SIZE, IMAGE_SIZE), _BG)
        # head: soft-edged ellipse, center (114, 112), radii (100, 86)
        q = ((r - 114.0) / 100.0) ** 2 + ((c - 112.0) / 86.0) ** 2
        head = _smoothstep((1.0 - q) / 0.06)
        img = img * (1.0 - head) + _SKIN * head
        # nose: fixed vertical stroke, rows 131..146, col 112
        nr = (r >= 131) & (r <= 146)
        lateral = _smoothstep((2.2 - np.abs(c - 112.0)) / 1.6)
        vertical = _smoothstep((r - 130.0) / 3.0) * _smoothstep((147.0 - r) / 3.0)
        alpha = 0.8 * lateral * vertical * nr
        img = img * (1.0 - alpha) + _INK * alpha
        _STATIC_LAYER = img
    return _STATIC_LAYER


def render(v, dim: int | None = None) -> np.ndarray:
    """Render an actuator vector to a 224x224 grayscale image in [0, 1].

    Pure and deterministic: identical inputs give bit-identical arrays.
    """
    arr = check_actuators(v, dim)
    f = face_features(arr)
    img = _static_layer().copy()

    # brows (rows 54..94)
    r0, r1 = REGIONS["brow"]
    rows = np.arange(r0, r1, dtype=np.float64)[:, None]
    cols = np.arange(IMAGE_SIZE, dtype=np.float64)[None, :]
    brow_row = 84.0 - 20.0 * f[0]          # [64, 84]
    slope = (f[1] - 0.5) * 10.0            # [-5, 5]
    alpha = np.zeros((r1 - r0, IMAGE_SIZE))
    for center_col, sign in ((76.0, 1.0), (148.0, -1.0)):
        line = brow_row + sign * slope * (cols - center_col) / 18.0
        lateral = _smoothstep((18.0 - np.abs(cols - center_col)) / 5.0)
        stroke = _smoothstep((3.0 - np.abs(rows - line)) / 2.0) * lateral
        alpha = np.maximum(alpha, stroke)
    _stamp(img, (r0, r1), alpha)

    # eyes (rows 96..130)
    r0, r1 = REGIONS["eye"]
    rows = np.arange(r0, r1, dtype=np.float64)[:, None]
    rv = 3.0 + 9.0 * f[2]                  # [3, 12]
    alpha = np.zeros((r1 - r0, IMAGE_SIZE))
    for center_col in (76.0, 148.0):
        q = ((cols - center_col) / 14.0) ** 2 + ((rows - 112.0) / rv) ** 2
        alpha = np.maximum(alpha, _smoothstep((1.0 - q) / 0.35))
    _stamp(img, (r0, r1), alpha)

    # mouth: lip line plus jaw opening (rows 148..206)
    r0, r1 = REGIONS["mouth"]
    rows = np.arange(r0, r1, dtype=np.float64)[:, None]
    curve = (f[3] - 0.5) * 20.0            # [-10, 10], positive = smile
    half_width = 16.0 + 20.0 * f[4]        # [16, 36]
    lip = 172.0 - curve * ((cols - 112.0) / 30.0) ** 2
    lateral = _smoothstep((half_width - np.abs(cols - 112.0)) / 6.0)
    alpha = _smoothstep((3.2 - np.abs(rows - lip)) / 2.2) * lateral
    rv_open = 1.0 + 11.0 * f[5]            # [1, 12]
    open_row = 176.0 + rv_open
    rh_open = 9.0 + 6.0 * f[5]
    q = ((cols - 112.0) / rh_open) ** 2 + ((rows - open_row) / rv_open) ** 2
    alpha = np.maximum(alpha, _smoothstep((1.0 - q) / 0.35))
    _stamp(img, (r0, r1), alpha)

    return np.clip(img, 0.0, 1.0)


def _emotion_rng(emotion: Emotion, seed: int) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{emotion.value}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def emotion_feature_target(emotion, seed: int = 0) -> np.ndarray:
    """Seeded per-emotion target point in the six-dimensional feature space.

    Every coordinate sits away from 0.5 so each emotion's peak expression
    is clearly distinct from the neutral mid-range face.
    """
    emotion = Emotion.parse(emotion)
    rng = _emotion_rng(emotion, seed)
    magnitude = rng.uniform(0.20, 0.42, NUM_FEATURES)
    side = np.where(rng.random(NUM_FEATURES) < 0.5, -1.0, 1.0)
    return 0.5 + side * magnitude


def emotion_optimum(emotion, dim: int = DEFAULT_DIM, seed: int = 0) -> np.ndarray:
    """Actuator vector at which latent_intensity is exactly 1.0."""
    target = emotion_feature_target(emotion, seed)
    v = np.empty(dim)
    for g, sl in enumerate(actuator_groups(dim)):
        v[sl] = target[g]
    return v


def emotion_antipode(emotion, dim: int = DEFAULT_DIM, seed: int = 0) -> np.ndarray:
    """Actuator vector at which latent_intensity is exactly 0.0.

    Each group sits at the feature-cube corner farthest from the target.
    """
    target = emotion_feature_target(emotion, seed)
    corner = np.where(target < 0.5, 1.0, 0.0)
    v = np.empty(dim)
    for g, sl in enumerate(actuator_groups(dim)):
        v[sl] = corner[g]
    return v


# Bump width as a fraction of the maximum feature-space distance. The
# normalized bump then spans exp(-1/(2*0.25^2)) = exp(-8) at the far corner.
_WIDTH_FRACTION = 0.25


def latent_intensity(v, emotion, dim: int | None = None, seed: int = 0) -> float:
    """Synthetic ground-truth intensity of `emotion` for actuator vector `v`.

    Depends on `v` only through the rendered face features, so any two
    vectors producing the same image have the same intensity. Strictly
    decreasing in the feature-space distance to the emotion's target;
    1.0 at emotion_optimum, 0.0 at emotion_antipode.
    """
    emotion = Emotion.parse(emotion)
    f = face_features(check_actuators(v, dim))
    target = emotion_feature_target(emotion, seed)
    d2 = np.sum((f - target) ** 2)
    dmax2 = np.sum(np.maximum(target, 1.0 - target) ** 2)
    s2 = (_WIDTH_FRACTION**2) * dmax2
    bump = np.exp(-d2 / (2.0 * s2))
    floor = np.exp(-dmax2 / (2.0 * s2))
    return float(np.clip((bump - floor) / (1.0 - floor), 0.0, 1.0))
