"""Siamese pairwise preference model.

One shared-weight scorer maps an image to a softmax distribution over the
seven emotion channels; a pair's preference probability is the sigmoid of
the scaled difference between the two images' target-channel scores, and
training minimizes binary cross-entropy against pairwise labels.

The feature extractor concatenates a frozen seeded linear projection of
the flattened image with the output of a trainable two-layer perceptron
(512 combined dimensions by default). Only the perceptron and the
(512, 7) softmax head train; the frozen projection never changes.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from . import dataset, face
from .errors import InvalidInput, InvalidSplit, IoError, NoData

EMOTION_ORDER = tuple(e for e in face.Emotion)
EMOTION_INDEX = {e: i for i, e in enumerate(EMOTION_ORDER)}
NUM_CHANNELS = len(EMOTION_ORDER)

BCE_EPS = 1e-7

CHECKPOINT_FORMAT = "prefrank-model-v1"


@dataclass
class TrainConfig:
    """SGD settings for pairwise training."""

    learning_rate: float = 0.005
    weight_decay: float = 1e-5
    momentum: float = 0.9
    epochs: int = 300
    batch_size: int = 32
    seed: int = 0
    patience: int = 30

    def validate(self) -> "TrainConfig":
        if self.learning_rate <= 0:
            raise InvalidInput("learning_rate must be positive")
        if self.weight_decay < 0:
            raise InvalidInput("weight_decay must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInput("momentum must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise InvalidInput("epochs, batch_size and patience must be >= 1")
        return self


@dataclass
class PreferencePair:
    image_a: np.ndarray
    image_b: np.ndarray
    label: int
    provenance: str = "synthetic"


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=-1, keepdims=True)


def bce_loss(y, y_hat) -> float:
    """Binary cross-entropy of one prediction, clamped away from {0, 1}."""
    p = min(max(float(y_hat), BCE_EPS), 1.0 - BCE_EPS)
    y = float(y)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def mean_bce(y, y_hat) -> float:
    """Mean binary cross-entropy over a batch."""
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(y_hat, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    if y.shape != p.shape or y.size == 0:
        raise NoData("mean_bce needs equal-length, non-empty label/prediction arrays")
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def _as_bank(images) -> np.ndarray:
    """Images as a (n, input_dim) matrix; accepts flat, (n,H,W) or (n,C,H,W)."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInput("empty image batch")
    if arr.ndim == 1:
        return arr[None, :]
    if arr.ndim == 2 and arr.shape == (face.IMAGE_SIZE, face.IMAGE_SIZE):
        return arr.reshape(1, -1)
    return arr.reshape(arr.shape[0], -1)


def frozen_projection(seed: int, frozen_dim: int, input_dim: int,
                      dtype=np.float64) -> np.ndarray:
    """The fixed seeded projection matrix shared by every model with `seed`."""
    rng = np.random.default_rng([int(seed), 0])
    p = rng.normal(0.0, 1.0 / np.sqrt(input_dim), (frozen_dim, input_dim))
    return p.astype(dtype, copy=False)


def frozen_checksum(p: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(p).tobytes()).hexdigest()


class PreferenceRanker(BaseEstimator):
    """Sklearn-style estimator for pairwise preference ranking.

    fit(images, pairs, y) takes an image bank (n, ...) plus integer index
    pairs (m, 2) into that bank and binary labels (1 means the first image
    of the pair is preferred). Scoring methods accept the same layout.
    """

    def __init__(self, target_emotion="happiness", frozen_dim=256, hidden_dim=32,
                 trainable_dim=256, sigmoid_scale=1.0, learning_rate=0.005,
                 weight_decay=1e-5, momentum=0.9, epochs=300, batch_size=32,
                 patience=30, seed=0, dtype="float64"):
        self.target_emotion = target_emotion
        self.frozen_dim = frozen_dim
        self.hidden_dim = hidden_dim
        self.trainable_dim = trainable_dim
        self.sigmoid_scale = sigmoid_scale
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.seed = seed
        self.dtype = dtype

    # -- construction ----------------------------------------------------

    def _np_dtype(self):
        return np.dtype(self.dtype)

    def _init_state(self, input_dim: int):
        dt = self._np_dtype()
        self.input_dim_ = int(input_dim)
        self.target_index_ = EMOTION_INDEX[face.Emotion.parse(self.target_emotion)]
        self.frozen_ = frozen_projection(self.seed, self.frozen_dim, input_dim, dt)
        self.frozen_sha256_ = frozen_checksum(self.frozen_)
        rng = np.random.default_rng([int(self.seed), 1])
        feature_dim = self.frozen_dim + self.trainable_dim
        self.params_ = {
            "W1": rng.normal(0, 1.0 / np.sqrt(input_dim),
                             (self.hidden_dim, input_dim)).astype(dt),
            "b1": np.zeros(self.hidden_dim, dt),
            "W2": rng.normal(0, 1.0 / np.sqrt(self.hidden_dim),
                             (self.trainable_dim, self.hidden_dim)).astype(dt),
            "b2": np.zeros(self.trainable_dim, dt),
            "head_W": rng.normal(0, 0.01, (NUM_CHANNELS, feature_dim)).astype(dt),
            "head_b": np.zeros(NUM_CHANNELS, dt),
        }

    @property
    def feature_dim(self) -> int:
        return self.frozen_dim + self.trainable_dim

    def _check_bank(self, images) -> np.ndarray:
        x = _as_bank(images).astype(self._np_dtype(), copy=False)
        if hasattr(self, "input_dim_") and x.shape[1] != self.input_dim_:
            raise InvalidInput(
                f"expected flattened inputs of size {self.input_dim_}, got {x.shape[1]}"
            )
        return x

    # -- forward ----------------------------------------------------------

    def _features(self, x, frozen_feats=None):
        p = self.params_
        if frozen_feats is None:
            frozen_feats = x @ self.frozen_.T
        hid = np.tanh(x @ p["W1"].T + p["b1"])
        trainable = hid @ p["W2"].T + p["b2"]
        return np.concatenate([frozen_feats, trainable], axis=1), hid

    def score_images(self, images, frozen_feats=None) -> np.ndarray:
        """Softmax distribution over the seven channels, shape (n, 7)."""
        self._require_fitted()
        x = self._check_bank(images)
        phi, _ = self._features(x, frozen_feats)
        return softmax(phi @ self.params_["head_W"].T + self.params_["head_b"])

    def target_scores(self, images, frozen_feats=None) -> np.ndarray:
        return self.score_images(images, frozen_feats)[:, self.target_index_]

    def pair_probability(self, image_a, image_b) -> float:
        """P(image_a preferred): sigmoid of the scaled target-score difference."""
        s = self.target_scores(np.stack([_as_bank(image_a)[0], _as_bank(image_b)[0]]))
        return float(sigmoid(self.sigmoid_scale * (s[0] - s[1])))

    def predict_proba(self, images, pairs) -> np.ndarray:
        s = self.target_scores(images)
        pairs = np.asarray(pairs, dtype=int)
        return sigmoid(self.sigmoid_scale * (s[pairs[:, 0]] - s[pairs[:, 1]]))

    def predict(self, images, pairs) -> np.ndarray:
        return (self.predict_proba(images, pairs) > 0.5).astype(int)

    def score(self, images, pairs, y) -> float:
        """Pairwise accuracy; a probability of exactly 0.5 counts as wrong."""
        p = self.predict_proba(images, pairs)
        y = np.asarray(y)
        correct = ((p > 0.5) & (y == 1)) | ((p < 0.5) & (y == 0))
        return float(np.mean(correct))

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise InvalidInput("model is not fitted")

    # -- loss and gradients ------------------------------------------------

    def _pair_forward(self, x, pairs, frozen_feats=None):
        phi, hid = self._features(x, frozen_feats)
        scores = softmax(phi @ self.params_["head_W"].T + self.params_["head_b"])
        s = scores[:, self.target_index_]
        d = s[pairs[:, 0]] - s[pairs[:, 1]]
        y_hat = sigmoid(self.sigmoid_scale * d)
        return y_hat, scores, phi, hid

    def _loss_and_grads(self, x, pairs, y, frozen_feats=None, want_grads=True):
        p = self.params_
        y = np.asarray(y, dtype=self._np_dtype())
        y_hat, scores, phi, hid = self._pair_forward(x, pairs, frozen_feats)
        loss = mean_bce(y, y_hat)
        if not want_grads:
            return loss, None
        n_pairs = pairs.shape[0]
        inside = (y_hat > BCE_EPS) & (y_hat < 1.0 - BCE_EPS)
        grad_d = self.sigmoid_scale * (y_hat - y) * inside / n_pairs
        coef = np.zeros(x.shape[0], dtype=self._np_dtype())
        np.add.at(coef, pairs[:, 0], grad_d)
        np.subtract.at(coef, pairs[:, 1], grad_d)
        t = self.target_index_
        s_t = scores[:, t]
        one_hot = np.zeros(NUM_CHANNELS, dtype=self._np_dtype())
        one_hot[t] = 1.0
        d_z = (coef * s_t)[:, None] * (one_hot[None, :] - scores)
        d_phi = d_z @ p["head_W"]
        d_train = d_phi[:, self.frozen_dim:]
        d_hid = d_train @ p["W2"]
        d_a1 = d_hid * (1.0 - hid * hid)
        grads = {
            "head_W": d_z.T @ phi,
            "head_b": d_z.sum(axis=0),
            "W2": d_train.T @ hid,
            "b2": d_train.sum(axis=0),
            "W1": d_a1.T @ x,
            "b1": d_a1.sum(axis=0),
        }
        return loss, grads

    # -- training ----------------------------------------------------------

    def fit(self, images, pairs, y, validation_pairs=None, validation_y=None,
            frozen_features=None):
        pairs = np.asarray(pairs, dtype=int)
        y = np.asarray(y, dtype=np.float64)
        if pairs.size == 0:
            raise NoData("no training pairs")
        if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] != y.shape[0]:
            raise InvalidInput("pairs must be (m, 2) with matching labels")
        config = TrainConfig(self.learning_rate, self.weight_decay, self.momentum,
                             self.epochs, self.batch_size, self.seed,
                             self.patience).validate()
        x = _as_bank(images).astype(self._np_dtype(), copy=False)
        self._init_state(x.shape[1])
        dt = self._np_dtype()
        if frozen_features is None:
            frozen_features = x @ self.frozen_.T
        else:
            frozen_features = np.asarray(frozen_features, dtype=dt)

        has_val = validation_pairs is not None and len(validation_pairs) > 0
        if has_val:
            validation_pairs = np.asarray(validation_pairs, dtype=int)
            validation_y = np.asarray(validation_y, dtype=np.float64)

        velocity = {k: np.zeros_like(v) for k, v in self.params_.items()}
        decayed = ("W1", "W2", "head_W")
        rng = np.random.default_rng([int(self.seed), 2])
        m = pairs.shape[0]
        train_losses, val_losses = [], []
        best_val = np.inf
        best_params = None
        best_epoch = -1
        stale = 0

        for epoch in range(config.epochs):
            perm = rng.permutation(m)
            epoch_losses = []
            for start in range(0, m, config.batch_size):
                sel = perm[start:start + config.batch_size]
                batch_pairs = pairs[sel]
                uniq, inverse = np.unique(batch_pairs, return_inverse=True)
                local = inverse.reshape(-1, 2)
                loss, grads = self._loss_and_grads(
                    x[uniq], local, y[sel], frozen_features[uniq])
                epoch_losses.append(loss)
                for name, grad in grads.items():
                    vel = velocity[name]
                    vel *= config.momentum
                    vel += grad
                    self.params_[name] -= config.learning_rate * vel
                    if name in decayed and config.weight_decay > 0:
                        self.params_[name] -= (
                            config.learning_rate * config.weight_decay
                            * self.params_[name])
            train_losses.append(float(np.mean(epoch_losses)))
            if has_val:
                uniq, inverse = np.unique(validation_pairs, return_inverse=True)
                val_loss, _ = self._loss_and_grads(
                    x[uniq], inverse.reshape(-1, 2), validation_y,
                    frozen_features[uniq], want_grads=False)
                val_losses.append(val_loss)
                if val_loss < best_val - 1e-12:
                    best_val = val_loss
                    best_params = {k: v.copy() for k, v in self.params_.items()}
                    best_epoch = epoch
                    stale = 0
                else:
                    stale += 1
                    if stale >= config.patience:
                        break

        if best_params is not None:
            self.params_ = best_params
        self.history_ = {
            "train_loss": train_losses,
            "val_loss": val_losses if has_val else None,
            "best_epoch": best_epoch if has_val else len(train_losses) - 1,
        }
        return self


# -- module-level operations --------------------------------------------------


def _bank_from_pairs(pairs: list[PreferencePair]):
    """Deduplicate pair images into a bank plus (m, 2) index pairs."""
    if not pairs:
        raise NoData("no preference pairs supplied")
    bank: list[np.ndarray] = []
    index: dict[bytes, int] = {}
    idx_pairs = np.empty((len(pairs), 2), dtype=int)
    labels = np.empty(len(pairs), dtype=np.float64)
    for row, pair in enumerate(pairs):
        for col, img in enumerate((pair.image_a, pair.image_b)):
            flat = _as_bank(img)[0]
            key = flat.tobytes()
            slot = index.get(key)
            if slot is None:
                slot = len(bank)
                index[key] = slot
                bank.append(flat)
            idx_pairs[row, col] = slot
        labels[row] = pair.label
    return np.stack(bank), idx_pairs, labels


def train(pairs: list[PreferencePair], config: TrainConfig | None = None,
          validation: list[PreferencePair] | None = None,
          **ranker_kwargs) -> PreferenceRanker:
    """Train a model from explicit preference pairs (images deduplicated)."""
    config = (config or TrainConfig()).validate()
    bank, idx_pairs, labels = _bank_from_pairs(pairs)
    val_idx = val_y = None
    if validation:
        all_pairs = list(pairs) + list(validation)
        bank, idx_all, labels_all = _bank_from_pairs(all_pairs)
        idx_pairs, labels = idx_all[:len(pairs)], labels_all[:len(pairs)]
        val_idx, val_y = idx_all[len(pairs):], labels_all[len(pairs):]
    ranker = PreferenceRanker(
        learning_rate=config.learning_rate, weight_decay=config.weight_decay,
        momentum=config.momentum, epochs=config.epochs,
        batch_size=config.batch_size, patience=config.patience,
        seed=config.seed, **ranker_kwargs)
    return ranker.fit(bank, idx_pairs, labels, val_idx, val_y)


def score(model: PreferenceRanker, image) -> np.ndarray:
    """Seven-channel softmax score of one image."""
    return model.score_images(_as_bank(image))[0]


def pair_probability(model: PreferenceRanker, image_a, image_b) -> float:
    return model.pair_probability(image_a, image_b)


def gradients(model: PreferenceRanker, batch: list[PreferencePair]) -> dict:
    """Exact mean-BCE gradients for every parameter group.

    The frozen projection never trains, so its entry is identically zero.
    """
    model._require_fitted()
    bank, idx_pairs, labels = _bank_from_pairs(batch)
    x = model._check_bank(bank)
    _, grads = model._loss_and_grads(x, idx_pairs, labels)
    grads["frozen"] = np.zeros_like(model.frozen_)
    return grads


def evaluate_accuracy(model: PreferenceRanker, pairs: list[PreferencePair]) -> float:
    bank, idx_pairs, labels = _bank_from_pairs(pairs)
    return model.score(bank, idx_pairs, labels)


@dataclass
class LabelledPairs:
    pairs: list[tuple[int, int]]
    labels: np.ndarray
    dropped: list[tuple[int, int]] = field(default_factory=list)

    @property
    def drop_count(self) -> int:
        return len(self.dropped)


def build_labels(rankings, pair_set) -> LabelledPairs:
    """Majority-vote labels for id pairs from one or more rankings.

    Annotators missing an item abstain on that pair; exact ties (including
    all-abstain pairs) are dropped and reported. label 1 means the left id
    is preferred.
    """
    if hasattr(rankings, "values"):
        rankings = list(rankings.values())
    rankings = list(rankings)
    if not rankings:
        raise NoData("no rankings supplied")
    kept, labels, dropped = [], [], []
    for left, right in pair_set:
        votes_left = votes_right = 0
        for rk in rankings:
            pos = rk.positions()
            if left not in pos or right not in pos:
                continue
            if pos[left] < pos[right]:
                votes_left += 1
            else:
                votes_right += 1
        if votes_left > votes_right:
            kept.append((left, right))
            labels.append(1)
        elif votes_right > votes_left:
            kept.append((left, right))
            labels.append(0)
        else:
            dropped.append((left, right))
    return LabelledPairs(kept, np.asarray(labels, dtype=int), dropped)


@dataclass
class CvResult:
    fold_accuracies: list[float]
    fold_val_ids: list[list[int]]
    fold_pair_counts: list[dict]
    dropped_pairs: int
    histories: list[dict]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))


def preprocess_pool(pool) -> np.ndarray:
    """Flattened preprocessed images of a pool, shape (n, 224*224)."""
    return np.stack([
        dataset.preprocess(face.render(e.actuators))[0].ravel()
        for e in pool.entries
    ])


def kfold_cv(pool, rankings, target_emotion, k: int = 5,
             config: TrainConfig | None = None, bank: np.ndarray | None = None,
             **ranker_kwargs) -> CvResult:
    """Image-level k-fold cross-validation.

    Images are split into k folds; training pairs are generated within the
    training images only and validation pairs within the held-out images
    only, so no pair ever straddles the split.
    """
    config = (config or TrainConfig()).validate()
    ids = pool.ids()
    n = len(ids)
    if n < k:
        raise InvalidSplit(f"need at least {k} images for {k}-fold CV, got {n}")
    if bank is None:
        bank = preprocess_pool(pool)
    row_of = {item: i for i, item in enumerate(ids)}

    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n)
    folds = np.array_split(perm, k)

    proto = PreferenceRanker(target_emotion=target_emotion, seed=config.seed,
                             **ranker_kwargs)
    frozen = frozen_projection(proto.seed, proto.frozen_dim, bank.shape[1],
                               proto._np_dtype())
    frozen_feats = bank.astype(proto._np_dtype(), copy=False) @ frozen.T

    accuracies, val_id_lists, pair_counts, histories = [], [], [], []
    dropped = 0
    for fold in folds:
        val_ids = [ids[i] for i in fold]
        train_ids = [item for item in ids if item not in set(val_ids)]
        train_pairs = dataset.enumerate_pairs(train_ids)
        val_pairs = dataset.enumerate_pairs(val_ids)
        # image-level split: no pair may straddle the train/validation sides
        val_set = set(val_ids)
        assert not any(a in val_set or b in val_set for a, b in train_pairs)
        train_lp = build_labels(rankings, train_pairs)
        val_lp = build_labels(rankings, val_pairs)
        dropped += train_lp.drop_count + val_lp.drop_count
        pair_counts.append({"train": len(train_pairs), "validation": len(val_pairs)})
        to_rows = lambda prs: np.array([[row_of[a], row_of[b]] for a, b in prs], dtype=int)
        ranker = PreferenceRanker(target_emotion=target_emotion, seed=config.seed,
                                  learning_rate=config.learning_rate,
                                  weight_decay=config.weight_decay,
                                  momentum=config.momentum, epochs=config.epochs,
                                  batch_size=config.batch_size,
                                  patience=config.patience, **ranker_kwargs)
        ranker.fit(bank, to_rows(train_lp.pairs), train_lp.labels,
                   to_rows(val_lp.pairs), val_lp.labels,
                   frozen_features=frozen_feats)
        accuracies.append(ranker.score(bank, to_rows(val_lp.pairs), val_lp.labels))
        val_id_lists.append(val_ids)
        histories.append(ranker.history_)
    return CvResult(accuracies, val_id_lists, pair_counts, dropped, histories)


# -- checkpointing -----------------------------------------------------------


def _encode_array(arr: np.ndarray) -> dict:
    le = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(le.tobytes()).decode()}


def _decode_array(obj, dtype) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    arr = np.frombuffer(raw, dtype="<f8").reshape(obj["shape"])
    return arr.astype(dtype)


def save_model(model: PreferenceRanker, path) -> None:
    """Self-describing JSON checkpoint; the frozen stage is stored as its
    generating seed plus checksum, trainable weights as little-endian f64."""
    model._require_fitted()
    payload = {
        "format": CHECKPOINT_FORMAT,
        "target_emotion": str(face.Emotion.parse(model.target_emotion).value),
        "sigmoid_scale": model.sigmoid_scale,
        "seed": model.seed,
        "dtype": model.dtype,
        "dims": {
            "input": model.input_dim_,
            "frozen": model.frozen_dim,
            "hidden": model.hidden_dim,
            "trainable": model.trainable_dim,
            "channels": NUM_CHANNELS,
        },
        "frozen_sha256": model.frozen_sha256_,
        "weights": {k: _encode_array(v) for k, v in sorted(model.params_.items())},
        "train": {
            "learning_rate": model.learning_rate,
            "weight_decay": model.weight_decay,
            "momentum": model.momentum,
            "epochs": model.epochs,
            "batch_size": model.batch_size,
            "patience": model.patience,
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> PreferenceRanker:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"model checkpoint not found: {path}")
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise IoError(f"unrecognized checkpoint format in {path}")
    dims = payload["dims"]
    model = PreferenceRanker(
        target_emotion=payload["target_emotion"],
        frozen_dim=dims["frozen"], hidden_dim=dims["hidden"],
        trainable_dim=dims["trainable"], sigmoid_scale=payload["sigmoid_scale"],
        seed=payload["seed"], dtype=payload["dtype"], **payload.get("train", {}))
    dt = model._np_dtype()
    model.input_dim_ = dims["input"]
    model.target_index_ = EMOTION_INDEX[face.Emotion.parse(payload["target_emotion"])]
    model.frozen_ = frozen_projection(model.seed, model.frozen_dim,
                                      dims["input"], dt)
    model.frozen_sha256_ = frozen_checksum(model.frozen_)
    if model.frozen_sha256_ != payload["frozen_sha256"]:
        raise IoError(f"frozen-stage checksum mismatch in {path}")
    model.params_ = {k: _decode_array(v, dt) for k, v in payload["weights"].items()}
    model.history_ = {"train_loss": [], "val_loss": None, "best_epoch": -1}
    return model
