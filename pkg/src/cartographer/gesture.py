"""Choreographic interface engine.

Pose-keypoint frames are featurized (translation/scale-normalized around
the shoulders), classified into an 11-gesture vocabulary with multinomial
logistic regression, and run through a hysteresis state machine that emits
typed interface events plus sonification parameters. The upstream pose
estimator is out of scope; frames arrive as named 2-D keypoints with
confidences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

KEYPOINT_NAMES = (
    "nose", "left_eye", "right_eye",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
    "left_hip", "right_hip",
)

# Canonical class order is lexicographic, so argmax ties resolve to the
# lexicographically first label for free.
GESTURE_CLASSES = (
    "AdvanceLeft", "AdvanceRight", "Neutral", "Refresh",
    "ScrollDown", "ScrollUp", "Select", "SwitchHands",
    "Track", "ZoomIn", "ZoomOut",
)
CLASS_INDEX = {name: i for i, name in enumerate(GESTURE_CLASSES)}

DISCRETE_GESTURES = frozenset({
    "ZoomIn", "ZoomOut", "ScrollUp", "ScrollDown",
    "AdvanceLeft", "AdvanceRight", "SwitchHands", "Refresh",
})

# The right shoulder is dropped from the feature points: after centering on
# the shoulder midpoint it is exactly the negation of the left shoulder.
FEATURE_POINTS = (
    "nose", "left_eye", "right_eye", "left_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hip", "right_hip",
)
FEATURE_DIM = 22
FEATURE_SPEC_VERSION = "fv1"

MIN_SHOULDER_CONFIDENCE = 0.3

MODEL_MAGIC = "GLM1"


class StreamError(Exception):
    """Out-of-order or malformed pose stream."""


class UnusableFrame(Exception):
    """Frame cannot be featurized (low shoulder confidence / missing points)."""


@dataclass
class PoseFrame:
    """One timestamped keypoint snapshot; coordinates normalized to [0,1]^2."""

    timestamp: float
    keypoints: dict[str, tuple[float, float, float]]  # name -> (x, y, confidence)


def featurize(frame: PoseFrame) -> np.ndarray:
    """22-dim pose feature vector, invariant to translation and uniform scale.

    Keypoints are translated so the shoulder midpoint is the origin and
    scaled by the shoulder width; the vector is the 10 feature points'
    normalized (x, y) plus the two elbow-angle cosines.
    """
    kp = frame.keypoints
    try:
        ls = kp["left_shoulder"]
        rs = kp["right_shoulder"]
    except KeyError as exc:
        raise UnusableFrame(f"missing shoulder keypoint: {exc}") from exc
    if ls[2] < MIN_SHOULDER_CONFIDENCE or rs[2] < MIN_SHOULDER_CONFIDENCE:
        raise UnusableFrame("shoulder confidence below threshold")
    mid = ((ls[0] + rs[0]) / 2.0, (ls[1] + rs[1]) / 2.0)
    width = math.hypot(ls[0] - rs[0], ls[1] - rs[1])
    if width <= 0.0:
        raise UnusableFrame("degenerate shoulder width")

    def norm(name):
        try:
            x, y, _ = kp[name]
        except KeyError as exc:
            raise UnusableFrame(f"missing keypoint: {exc}") from exc
        return ((x - mid[0]) / width, (y - mid[1]) / width)

    feats = []
    for name in FEATURE_POINTS:
        feats.extend(norm(name))

    def elbow_cosine(side):
        sx, sy = norm(f"{side}_shoulder")
        ex, ey = norm(f"{side}_elbow")
        wx, wy = norm(f"{side}_wrist")
        ax, ay = sx - ex, sy - ey
        bx, by = wx - ex, wy - ey
        na, nb = math.hypot(ax, ay), math.hypot(bx, by)
        if na == 0.0 or nb == 0.0:
            return 0.0
        return (ax * bx + ay * by) / (na * nb)

    feats.append(elbow_cosine("left"))
    feats.append(elbow_cosine("right"))
    return np.array(feats, dtype=np.float64)


# ---------------------------------------------------------------------------
# Classifier
# ---------------------------------------------------------------------------

@dataclass
class ClassifierModel:
    """Multinomial logistic regression over the gesture vocabulary."""

    weights: np.ndarray  # (C, F)
    bias: np.ndarray     # (C,)
    feature_spec_version: str = FEATURE_SPEC_VERSION

    def __post_init__(self):
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("non-finite classifier parameters")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def classifier_loss_and_grad(weights: np.ndarray, bias: np.ndarray,
                             features: np.ndarray, labels: np.ndarray,
                             l2: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy with (l2/2)*||W||^2 and its exact gradients."""
    n = features.shape[0]
    probs = _softmax(features @ weights.T + bias)
    nll = -np.log(np.maximum(probs[np.arange(n), labels], 1e-300)).mean()
    loss = nll + 0.5 * l2 * float((weights ** 2).sum())
    delta = probs
    delta[np.arange(n), labels] -= 1.0
    grad_w = delta.T @ features / n + l2 * weights
    grad_b = delta.sum(axis=0) / n
    return float(loss), grad_w, grad_b


def train_classifier(samples: list[tuple[PoseFrame, str]],
                     learning_rate: float = 0.1, epochs: int = 500,
                     l2: float = 1e-4, seed: int = 0) -> ClassifierModel:
    """Full-batch gradient descent on L2-regularized cross-entropy.

    The training loss decreases monotonically: whenever a step would
    increase it, the learning rate is halved (up to 20 times) and the step
    retried. Deterministic for a fixed seed.
    """
    feats, labels = [], []
    for frame, label in samples:
        if label not in CLASS_INDEX:
            raise ValueError(f"unknown gesture label {label!r}")
        feats.append(featurize(frame))
        labels.append(CLASS_INDEX[label])
    features = np.array(feats)
    labels = np.array(labels, dtype=np.int64)
    if np.unique(labels).size < 2:
        raise ValueError("training data must contain at least 2 classes")

    rng = np.random.default_rng(seed)
    c, f = len(GESTURE_CLASSES), features.shape[1]
    weights = rng.standard_normal((c, f)) * 0.01
    bias = np.zeros(c)

    loss, grad_w, grad_b = classifier_loss_and_grad(weights, bias, features,
                                                    labels, l2)
    lr = learning_rate
    halvings = 0
    for epoch in range(epochs):
        while True:
            cand_w = weights - lr * grad_w
            cand_b = bias - lr * grad_b
            new_loss, new_gw, new_gb = classifier_loss_and_grad(
                cand_w, cand_b, features, labels, l2)
            if not np.isfinite(new_loss):
                raise RuntimeError(f"non-finite training loss at epoch {epoch} "
                                   f"(lr={lr:g})")
            if new_loss <= loss or halvings >= 20:
                break
            lr /= 2.0
            halvings += 1
        weights, bias = cand_w, cand_b
        loss, grad_w, grad_b = new_loss, new_gw, new_gb
    return ClassifierModel(weights=weights, bias=bias)


def classify(model: ClassifierModel, features: np.ndarray
             ) -> tuple[str, np.ndarray]:
    """Softmax over logits; ties go to the lexicographically first label."""
    if features.shape[-1] != model.weights.shape[1]:
        raise ValueError(f"feature dim {features.shape[-1]} does not match "
                         f"model dim {model.weights.shape[1]}")
    probs = _softmax(model.weights @ features + model.bias)
    return GESTURE_CLASSES[int(np.argmax(probs))], probs


def save_model(path: str | Path, model: ClassifierModel) -> None:
    c, f = model.weights.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{MODEL_MAGIC} {c} {f} {model.feature_spec_version}\n")
        for row, b in zip(model.weights, model.bias):
            fh.write(" ".join(f"{v:.17g}" for v in row) + f" {b:.17g}\n")


def load_model(path: str | Path) -> ClassifierModel:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != MODEL_MAGIC:
            raise ValueError(f"{path}: bad model header")
        c, f, version = int(header[1]), int(header[2]), header[3]
        weights = np.empty((c, f))
        bias = np.empty(c)
        for i in range(c):
            vals = [float(v) for v in fh.readline().split()]
            if len(vals) != f + 1:
                raise ValueError(f"{path}: row {i} has {len(vals)} values")
            weights[i] = vals[:-1]
            bias[i] = vals[-1]
    return ClassifierModel(weights=weights, bias=bias, feature_spec_version=version)


# ---------------------------------------------------------------------------
# State machine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepParams:
    """Tunables of the hysteresis state machine (defaults per design)."""

    buffer_size: int = 5
    rate_limit: float = 0.7          # seconds between repeats of a held gesture
    cursor_alpha: float = 0.4        # exponential smoothing per frame
    calibration_lo: float = 0.1      # image-space box mapped to the screen
    calibration_hi: float = 0.9
    accel_scale: float = 5.0         # normalized units/s^2 at full gain


@dataclass(frozen=True)
class MachineState:
    """Immutable engine state; ``step`` returns a fresh instance."""

    dominant_hand: str = "right"
    mode: str = "idle"  # idle | tracking | dragging
    buffer: tuple[str, ...] = ()
    effective: str = "Neutral"
    cursor: tuple[float, float] | None = None
    last_fired: tuple[tuple[str, float], ...] = ()
    wrist_history: tuple[tuple[float, float, float], ...] = ()  # (t, x, y)
    last_timestamp: float = float("-inf")

    @property
    def mode_ordinal(self) -> int:
        return ("idle", "tracking", "dragging").index(self.mode)


@dataclass(frozen=True)
class InterfaceEvent:
    kind: str
    timestamp: float
    magnitude: float = 1.0
    x: float | None = None
    y: float | None = None

    def trace_line(self) -> str:
        if self.kind == "CursorMove":
            return f"{self.timestamp:.3f}\t{self.kind}\t{self.x:.6f},{self.y:.6f}"
        return f"{self.timestamp:.3f}\t{self.kind}\t{self.magnitude:.6f}"


@dataclass(frozen=True)
class SonificationParams:
    gain: float
    pitch: float
    texture_index: int


def _clamp01(v: float) -> float:
    return 0.0 if v < 0.0 else 1.0 if v > 1.0 else v


def _majority(buffer: tuple[str, ...], previous: str) -> str:
    counts: dict[str, int] = {}
    for label in buffer:
        counts[label] = counts.get(label, 0) + 1
    best = max(counts.values())
    winners = [label for label, c in counts.items() if c == best]
    if len(winners) == 1:
        return winners[0]
    return previous  # ties keep the previous effective label


def step(state: MachineState, frame: PoseFrame, model: ClassifierModel,
         params: StepParams = StepParams()
         ) -> tuple[MachineState, list[InterfaceEvent], SonificationParams]:
    """Advance the machine by one frame: classify, smooth, emit events."""
    try:
        label, _ = classify(model, featurize(frame))
        usable = True
    except UnusableFrame:
        label = "Neutral"  # unusable frames vote Neutral
        usable = False
    return step_with_label(state, frame, label, usable, params)


def step_with_label(state: MachineState, frame: PoseFrame, label: str,
                    usable: bool = True, params: StepParams = StepParams()
                    ) -> tuple[MachineState, list[InterfaceEvent], SonificationParams]:
    """State-machine core, driven by an already-classified label.

    Pure in (state, frame, label): replaying a stream reproduces the
    identical event trace.
    """
    t = frame.timestamp
    if t <= state.last_timestamp:
        raise StreamError(f"timestamp {t} not after {state.last_timestamp}")

    buffer = (state.buffer + (label,))[-params.buffer_size:]
    effective = _majority(buffer, state.effective)
    newly = effective != state.effective

    events: list[InterfaceEvent] = []
    mode = state.mode
    dominant = state.dominant_hand
    fired = dict(state.last_fired)

    # mode transitions (Dragging only via Tracking; a SwitchHands attempt
    # while dragging is ignored entirely so the drag survives)
    if state.mode == "dragging":
        if effective not in ("Select", "SwitchHands"):
            events.append(InterfaceEvent("SelectUp", t))
            mode = "tracking"
    elif state.mode == "tracking":
        if effective == "Select":
            events.append(InterfaceEvent("SelectDown", t))
            mode = "dragging"
        elif effective != "Track":
            mode = "idle"
    else:
        if effective == "Track":
            mode = "tracking"

    # discrete gestures: fire on arrival, then repeat at the rate limit
    if effective in DISCRETE_GESTURES:
        suppressed = effective == "SwitchHands" and "dragging" in (state.mode, mode)
        if not suppressed:
            held_ok = t - fired.get(effective, float("-inf")) >= params.rate_limit
            if newly or held_ok:
                events.append(InterfaceEvent(effective, t, magnitude=1.0))
                fired[effective] = t
                if effective == "SwitchHands":
                    dominant = "left" if dominant == "right" else "right"

    # cursor follows the dominant wrist while tracking/dragging
    cursor = state.cursor
    wrist = frame.keypoints.get(f"{dominant}_wrist")
    if mode in ("tracking", "dragging"):
        if usable and wrist is not None:
            span = params.calibration_hi - params.calibration_lo
            target = (_clamp01((wrist[0] - params.calibration_lo) / span),
                      _clamp01((wrist[1] - params.calibration_lo) / span))
            if cursor is None:
                cursor = target
            else:
                cursor = (cursor[0] + params.cursor_alpha * (target[0] - cursor[0]),
                          cursor[1] + params.cursor_alpha * (target[1] - cursor[1]))
            events.append(InterfaceEvent("CursorMove", t, magnitude=0.0,
                                         x=cursor[0], y=cursor[1]))
        elif cursor is None:
            cursor = (0.5, 0.5)  # entered tracking without a readable wrist
    elif mode == "idle":
        cursor = None

    # sonification: pitch from wrist height, gain from wrist acceleration
    history = state.wrist_history
    if wrist is not None:
        history = (history + ((t, wrist[0], wrist[1]),))[-3:]
    pitch = 1.0 - _clamp01(wrist[1]) if wrist is not None else 0.0
    gain = 0.0
    if len(history) == 3:
        (t0, x0, y0), (_, x1, y1), (t2, x2, y2) = history
        dt = (t2 - t0) / 2.0
        if dt > 0.0:
            ax = (x2 - 2.0 * x1 + x0) / (dt * dt)
            ay = (y2 - 2.0 * y1 + y0) / (dt * dt)
            gain = _clamp01(math.hypot(ax, ay) / params.accel_scale)

    new_state = MachineState(
        dominant_hand=dominant, mode=mode, buffer=buffer, effective=effective,
        cursor=cursor, last_fired=tuple(sorted(fired.items())),
        wrist_history=history, last_timestamp=t)
    sonify = SonificationParams(gain=gain, pitch=pitch,
                                texture_index=new_state.mode_ordinal)
    return new_state, events, sonify


def run_stream(frames: list[PoseFrame], model: ClassifierModel,
               params: StepParams = StepParams()
               ) -> list[InterfaceEvent]:
    """Drive a whole frame sequence through the machine; return all events."""
    state = MachineState()
    events: list[InterfaceEvent] = []
    for frame in frames:
        state, evs, _ = step(state, frame, model, params)
        events.extend(evs)
    return events


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

def _skeleton(**overrides) -> dict[str, tuple[float, float, float]]:
    base = {
        "nose": (0.50, 0.25),
        "left_eye": (0.53, 0.22),
        "right_eye": (0.47, 0.22),
        "left_shoulder": (0.60, 0.40),
        "right_shoulder": (0.40, 0.40),
        "left_elbow": (0.62, 0.53),
        "right_elbow": (0.38, 0.53),
        "left_wrist": (0.63, 0.66),
        "right_wrist": (0.37, 0.66),
        "left_hip": (0.58, 0.75),
        "right_hip": (0.42, 0.75),
    }
    base.update(overrides)
    return {name: (x, y, 1.0) for name, (x, y) in base.items()}


def canonical_pose(label: str) -> dict[str, tuple[float, float, float]]:
    """Canonical keypoints per gesture; the mirror convention is a person
    facing the camera, so their left side sits at larger image x."""
    if label == "Neutral":
        return _skeleton()
    if label == "ZoomIn":  # hands to shoulders
        return _skeleton(left_elbow=(0.68, 0.50), right_elbow=(0.32, 0.50),
                         left_wrist=(0.61, 0.41), right_wrist=(0.39, 0.41))
    if label == "ZoomOut":  # T-pose, arms straight out
        return _skeleton(left_elbow=(0.73, 0.40), right_elbow=(0.27, 0.40),
                         left_wrist=(0.86, 0.40), right_wrist=(0.14, 0.40))
    if label == "ScrollUp":  # both wrists above the head
        return _skeleton(left_elbow=(0.64, 0.25), right_elbow=(0.36, 0.25),
                         left_wrist=(0.58, 0.08), right_wrist=(0.42, 0.08))
    if label == "ScrollDown":  # both wrists at the hips
        return _skeleton(left_elbow=(0.68, 0.56), right_elbow=(0.32, 0.56),
                         left_wrist=(0.55, 0.76), right_wrist=(0.45, 0.76))
    if label == "AdvanceLeft":  # left arm extended laterally, right down
        return _skeleton(left_elbow=(0.73, 0.40), left_wrist=(0.86, 0.40))
    if label == "AdvanceRight":
        return _skeleton(right_elbow=(0.27, 0.40), right_wrist=(0.14, 0.40))
    if label == "Track":  # dominant wrist forward at chest height
        return _skeleton(right_elbow=(0.35, 0.53), right_wrist=(0.42, 0.52))
    if label == "Select":  # tracked wrist closed to the chest midline
        return _skeleton(right_elbow=(0.37, 0.49), right_wrist=(0.50, 0.39))
    if label == "SwitchHands":  # head turned toward the passive hand
        return _skeleton(nose=(0.58, 0.25), left_eye=(0.60, 0.23),
                         right_eye=(0.51, 0.22))
    if label == "Refresh":  # wrists crossed overhead
        return _skeleton(left_elbow=(0.62, 0.25), right_elbow=(0.38, 0.25),
                         left_wrist=(0.44, 0.10), right_wrist=(0.56, 0.10))
    raise ValueError(f"unknown gesture label {label!r}")


def generate_synthetic_corpus(seed: int, per_class: int,
                              noise_sigma: float = 0.02, fps: float = 30.0
                              ) -> list[tuple[PoseFrame, str]]:
    """Labeled frames around the canonical gesture geometries.

    Each sample takes Gaussian keypoint noise (sigma in normalized image
    units) plus a random global translation and uniform scale; the
    featurizer removes the latter two. With sigma 0 the canonical frames
    are emitted verbatim.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    out: list[tuple[PoseFrame, str]] = []
    idx = 0
    for label in GESTURE_CLASSES:
        pose = canonical_pose(label)
        for _ in range(per_class):
            kp = {}
            if noise_sigma > 0.0:
                scale = rng.uniform(0.85, 1.15)
                dx, dy = rng.uniform(-0.05, 0.05, size=2)
                for name, (x, y, conf) in pose.items():
                    nx = (x - 0.5) * scale + 0.5 + dx + rng.normal(0.0, noise_sigma)
                    ny = (y - 0.5) * scale + 0.5 + dy + rng.normal(0.0, noise_sigma)
                    kp[name] = (nx, ny, conf)
            else:
                kp = dict(pose)
            out.append((PoseFrame(timestamp=idx / fps, keypoints=kp), label))
            idx += 1
    return out


# ---------------------------------------------------------------------------
# Stream / trace file formats
# ---------------------------------------------------------------------------

def format_frame(frame: PoseFrame, label: str | None = None) -> str:
    parts = ";".join(
        f"{name}:{x:.6f},{y:.6f},{conf:.3f}"
        for name, (x, y, conf) in frame.keypoints.items())
    line = f"{frame.timestamp:.3f}\t{parts}"
    if label is not None:
        line += f"\t{label}"
    return line


def parse_frame(line: str) -> tuple[PoseFrame, str | None]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) not in (2, 3):
        raise StreamError(f"malformed stream line: {line!r}")
    t = float(parts[0])
    kp = {}
    for chunk in parts[1].split(";"):
        if not chunk:
            continue
        name, _, coords = chunk.partition(":")
        x, y, conf = coords.split(",")
        kp[name] = (float(x), float(y), float(conf))
    label = parts[2] if len(parts) == 3 else None
    return PoseFrame(timestamp=t, keypoints=kp), label


def write_stream(path: str | Path, frames: list[PoseFrame],
                 labels: list[str] | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, frame in enumerate(frames):
            fh.write(format_frame(frame, labels[i] if labels else None) + "\n")


def read_stream(path: str | Path) -> tuple[list[PoseFrame], list[str] | None]:
    frames, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            frame, label = parse_frame(line)
            frames.append(frame)
            labels.append(label)
    if any(lab is not None for lab in labels):
        return frames, [lab or "" for lab in labels]
    return frames, None


def format_trace(events: list[InterfaceEvent]) -> str:
    return "".join(ev.trace_line() + "\n" for ev in events)
