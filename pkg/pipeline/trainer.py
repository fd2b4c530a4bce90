"""SGD training on class-weighted NLL, with augmented FL copies in the training split only."""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from autodiff import ops
from autodiff.backward import backward
from autodiff.tensor import Tape, Tensor
from catalog.augment import augment
from catalog.labeling import FL, NF, class_weights
from evaluation.scores import ConfusionMatrix, hss, predicted_label, tss
from flarecast.exceptions import DataError, UndefinedScoreError
from network.architecture import build_spec
from network.model import Model

from .serializers import RunConfig

logger = logging.getLogger(__name__)

PREDICT_BATCH = 64
LABEL_OF_TARGET = (FL, NF)


@dataclass
class EpochStats:
    epoch: int
    learning_rate: float
    loss: float
    train_tss: Optional[float] = None
    train_hss: Optional[float] = None
    val_tss: Optional[float] = None
    val_hss: Optional[float] = None


@dataclass
class TrainingHistory:
    config: dict
    class_weights: dict
    training_samples: int
    augmented_copies: int
    epochs: List[EpochStats] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [e.loss for e in self.epochs]

    def to_dict(self):
        return {
            'config': self.config,
            'class_weights': self.class_weights,
            'training_samples': self.training_samples,
            'augmented_copies': self.augmented_copies,
            'epochs': [asdict(e) for e in self.epochs],
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding='utf-8')
        return path


def build_model(config: RunConfig) -> Model:
    spec = build_spec(config.architecture, config.input_size)
    return Model.initialize(spec, scheme=config.init, seed=config.seed)


def expand_with_augmentations(images: np.ndarray, targets: np.ndarray, kinds, seed: int = 0
                              ) -> Tuple[np.ndarray, np.ndarray]:
    """Append one transformed copy per kind of every FL image."""
    copies, copy_targets = [], []
    for i in np.flatnonzero(targets == 0):
        for copy in augment(Tensor(images[i][None]), kinds, seed=seed + int(i)):
            copies.append(copy.data[0])
            copy_targets.append(0)
    if not copies:
        return images, targets
    return np.concatenate([images, np.stack(copies)]), np.concatenate([targets, copy_targets])


def loss_weights(targets: np.ndarray, weighted: bool = True) -> np.ndarray:
    """[w_FL, w_NF]; an empty class aborts whether or not weighting is on."""
    counts = {label: int(np.sum(targets == t)) for t, label in enumerate(LABEL_OF_TARGET)}
    weights = class_weights(counts)
    if not weighted:
        return np.ones(len(LABEL_OF_TARGET))
    return np.array([weights[label] for label in LABEL_OF_TARGET])


def sgd_step(model: Model, grads, learning_rate: float) -> Model:
    """w <- w - lr * dL/dw for every parameter that requires grad."""
    params = {}
    for name, tensor in model.params.items():
        if tensor.requires_grad:
            params[name] = Tensor(tensor.data - learning_rate * grads.wrt(tensor), requires_grad=True)
        else:
            params[name] = tensor
    return model.with_parameters(params)


def fl_probabilities(model: Model, images: np.ndarray, batch_size: int = PREDICT_BATCH) -> np.ndarray:
    out = []
    for start in range(0, len(images), batch_size):
        out.append(model.probabilities(Tensor(images[start:start + batch_size][:, None]))[:, 0])
    return np.concatenate(out) if out else np.zeros(0)


def skill(targets: np.ndarray, probabilities: np.ndarray, threshold: float):
    """(TSS, HSS), each None when undefined for these labels."""
    cm = ConfusionMatrix.from_labels(
        (LABEL_OF_TARGET[t], predicted_label(p, threshold)) for t, p in zip(targets, probabilities)
    )
    scores = []
    for score in (tss, hss):
        try:
            scores.append(score(cm))
        except UndefinedScoreError:
            scores.append(None)
    return tuple(scores)


def train(config: RunConfig, images: np.ndarray, targets: np.ndarray,
          val_images: Optional[np.ndarray] = None, val_targets: Optional[np.ndarray] = None,
          model: Optional[Model] = None) -> Tuple[Model, TrainingHistory]:
    """Train from ``model`` (fresh from the config seed if omitted).

    ``images`` are normalized planes [N,H,W] with targets FL=0, NF=1.
    Everything random derives from ``config.seed``, so equal inputs give
    bitwise-equal weights.
    """
    if len(images) != len(targets):
        raise DataError(f"{len(images)} training images but {len(targets)} targets")
    original = len(images)
    if config.augmentation:
        images, targets = expand_with_augmentations(images, targets, config.augmentations, seed=config.seed)
    weights = loss_weights(targets, config.class_weighting)
    model = (model or build_model(config)).trainable(config.freeze)
    history = TrainingHistory(
        config=config.to_dict(),
        class_weights={label: float(w) for label, w in zip(LABEL_OF_TARGET, weights)},
        training_samples=original,
        augmented_copies=len(images) - original,
    )
    logger.info("training %s on %d images (%d augmented), weights %s",
                config.architecture, len(images), history.augmented_copies, history.class_weights)
    weight_tensor = Tensor(weights)
    rng = np.random.default_rng(config.seed)
    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        order = rng.permutation(len(images))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            with Tape() as tape:
                logits = model.forward_gray(Tensor(images[batch][:, None]))
                loss = ops.nll_loss(ops.log_softmax(logits), targets[batch], weight_tensor)
            model = sgd_step(model, backward(tape, loss), lr)
            total += loss.item() * len(batch)
        stats = EpochStats(epoch=epoch, learning_rate=lr, loss=total / len(images))
        stats.train_tss, stats.train_hss = skill(targets, fl_probabilities(model, images), config.threshold)
        if val_images is not None and len(val_images):
            stats.val_tss, stats.val_hss = skill(val_targets, fl_probabilities(model, val_images),
                                                 config.threshold)
        logger.info("epoch %d lr %.6g loss %.5f train TSS %s val TSS %s",
                    epoch, lr, stats.loss, stats.train_tss, stats.val_tss)
        history.epochs.append(stats)
    frozen = {name: Tensor(t.data) for name, t in model.params.items()}
    return model.with_parameters(frozen), history
