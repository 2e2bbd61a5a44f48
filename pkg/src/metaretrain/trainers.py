"""Semi-supervised training steps sharing one interface.

Each trainer consumes a Batch (augmented labeled part plus weak/strong views
of the unlabeled part), builds its loss, runs one SGD step, and returns a
LossBreakdown. Pseudo-labels are always produced from weak views without
gradient flow and remapped through the strong relation's label map before
entering any consistency loss. Skipped loss branches (zero weight, empty
batch) are omitted from the graph entirely, so degenerate runs reproduce a
plain supervised loop bit for bit.

Implemented steps:
  * FixMatch: confidence-thresholded pseudo-labels, masked cross-entropy.
  * FlexMatch: per-class thresholds scaled by estimated learning status.
  * MixMatch: sharpened K-view label guessing plus pairwise input mixing.
  * FullMatch: FixMatch plus an entropy/negative-learning penalty.
  * Supervised: labeled cross-entropy only (reference for degeneracy checks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ValidationError
from .nn import Model, SGD, Tensor, backward
from .nn import functional as F
from .policy import Batch

TRAINER_NAMES = ("fixmatch", "flexmatch", "mixmatch", "fullmatch", "supervised")


@dataclass(frozen=True)
class TrainerConfig:
    lambda_u: float = 1.0  # unsupervised loss weight
    lambda_p: float = 0.5  # FullMatch penalty weight
    tau: float = 0.95  # confidence threshold (FlexMatch: tau_max)
    tau_min: float = 0.5  # FlexMatch per-class floor
    temperature: float = 0.5  # MixMatch sharpening
    alpha: float = 0.75  # MixMatch Beta parameter
    k_augmentations: int = 2  # MixMatch weak view count
    low_tau: float = 0.05  # FullMatch negative-learning threshold

    def __post_init__(self):
        if self.lambda_u < 0 or self.lambda_p < 0:
            raise ValidationError("loss weights must be non-negative")
        if not 0.0 < self.tau <= 1.0:
            raise ValidationError("tau must be in (0, 1]")
        if not 0.0 < self.tau_min <= self.tau:
            raise ValidationError("tau_min must be in (0, tau]")
        if self.temperature <= 0:
            raise ValidationError("temperature must be positive")
        if self.alpha <= 0:
            raise ValidationError("alpha must be positive")
        if self.k_augmentations < 1:
            raise ValidationError("k_augmentations must be at least 1")
        if not self.low_tau < self.tau:
            raise ValidationError("low_tau must be below tau")


@dataclass(frozen=True)
class LossBreakdown:
    l_sup: float
    l_unsup: float
    l_penalty: float
    total: float
    mask_rate: float
    lambda_u: float
    lambda_p: float

    def __post_init__(self):
        for name in ("l_sup", "l_unsup", "l_penalty"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValidationError("mask_rate must be in [0, 1]")
        expected = self.l_sup + self.lambda_u * self.l_unsup + self.lambda_p * self.l_penalty
        # absolute 1e-6 at ordinary loss magnitudes, relative for diverging runs
        if abs(self.total - expected) > 1e-6 * max(1.0, abs(self.total)):
            raise ValidationError(
                f"loss decomposition broken: total {self.total} vs components {expected}"
            )

    def to_record(self) -> dict:
        return {
            "l_sup": self.l_sup,
            "l_unsup": self.l_unsup,
            "l_penalty": self.l_penalty,
            "total": self.total,
            "mask_rate": self.mask_rate,
        }


@dataclass
class ClassThresholds:
    """FlexMatch learning status: confident-prediction counters per class."""

    tau_max: float
    tau_min: float
    sigma: np.ndarray  # int64 [C]

    @staticmethod
    def fresh(n_classes: int, tau_max: float, tau_min: float) -> "ClassThresholds":
        return ClassThresholds(tau_max=tau_max, tau_min=tau_min, sigma=np.zeros(n_classes, dtype=np.int64))

    def thresholds(self) -> np.ndarray:
        beta = self.sigma / max(int(self.sigma.max()), 1)
        return np.maximum(beta * self.tau_max, self.tau_min)

    def update(self, confident_classes: np.ndarray) -> None:
        np.add.at(self.sigma, confident_classes, 1)

    def reset(self) -> None:
        self.sigma[:] = 0


def flexmatch_thresholds(status: ClassThresholds) -> np.ndarray:
    """tau_c = max(tau_max * sigma_c / max(max_c' sigma_c', 1), tau_min)."""
    return status.thresholds()


def mixmatch_mix(pair_a, pair_b, gamma):
    """MixUp with the mix kept closer to pair_a: gamma' = max(gamma, 1-gamma)."""
    x_i, y_i = pair_a
    x_j, y_j = pair_b
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma < 0) or np.any(gamma > 1):
        raise ValidationError("gamma must lie in [0, 1]")
    for y in (y_i, y_j):
        rows = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if not np.allclose(rows.sum(axis=1), 1.0, atol=1e-6):
            raise ValidationError("mix labels must be probability rows summing to 1")
    g = np.maximum(gamma, 1.0 - gamma)
    gx = g.reshape((-1,) + (1,) * (np.ndim(x_i) - 1)) if np.ndim(gamma) else g
    gy = g.reshape((-1,) + (1,) * (np.ndim(y_i) - 1)) if np.ndim(gamma) else g
    x_mix = gx * np.asarray(x_i, dtype=np.float64) + (1.0 - gx) * np.asarray(x_j, dtype=np.float64)
    y_mix = gy * np.asarray(y_i, dtype=np.float64) + (1.0 - gy) * np.asarray(y_j, dtype=np.float64)
    return x_mix, y_mix


def sharpen(probs: np.ndarray, temperature: float) -> np.ndarray:
    """Lower the entropy of probability rows via a temperature exponent."""
    p = np.asarray(probs, dtype=np.float64) ** (1.0 / temperature)
    return p / p.sum(axis=1, keepdims=True)


class Trainer:
    name = "base"
    n_weak_views = 1

    def __init__(self, model: Model, optimizer: SGD, cfg: TrainerConfig, num_classes: int, seed: int = 0):
        self.model = model
        self.optimizer = optimizer
        self.cfg = cfg
        self.num_classes = num_classes
        self.seed = seed
        self.capture_debug = False
        self.last_debug: dict = {}

    def on_epoch_start(self) -> None:
        pass

    def on_cycle_start(self, cycle: int) -> None:
        pass

    def step(self, batch: Batch) -> LossBreakdown:
        self.model.zero_grads()
        total_t, parts = self._losses(batch)
        total = total_t.item()
        if not np.isfinite(total):
            raise NonFiniteError(f"{self.name}: non-finite total loss")
        backward(self.model, total_t)
        self.optimizer.step(self.model)
        return LossBreakdown(
            l_sup=parts.get("l_sup", 0.0),
            l_unsup=parts.get("l_unsup", 0.0),
            l_penalty=parts.get("l_penalty", 0.0),
            total=total,
            mask_rate=parts.get("mask_rate", 0.0),
            lambda_u=self.cfg.lambda_u,
            lambda_p=self.cfg.lambda_p,
        )

    # subclasses return (total loss tensor, float parts)
    def _losses(self, batch: Batch):
        raise NotImplementedError

    def _supervised_loss(self, batch: Batch):
        if batch.x_labeled.shape[0] == 0:
            return None
        targets = F.one_hot(batch.y_labeled, self.num_classes)
        return F.softmax_cross_entropy(self.model.forward(Tensor(batch.x_labeled)), targets)

    def _pseudo_labels(self, batch: Batch):
        """Confidence and mapped pseudo-labels from the first weak view (no grad)."""
        logits = self.model.predict_logits(batch.x_unlabeled_weak[0])
        probs = F.softmax(logits)
        conf = probs.max(axis=1)
        raw = probs.argmax(axis=1)
        mapped = np.take_along_axis(batch.strong_label_maps, raw[:, None], axis=1)[:, 0]
        if self.capture_debug:
            self.last_debug = {"pseudo_raw": raw.copy(), "pseudo_mapped": mapped.copy(), "confidence": conf.copy()}
        return probs, conf, raw, mapped


class SupervisedTrainer(Trainer):
    name = "supervised"

    def _losses(self, batch: Batch):
        l_sup_t = self._supervised_loss(batch)
        if l_sup_t is None:
            raise ValidationError("supervised trainer needs labeled samples")
        return l_sup_t, {"l_sup": l_sup_t.item(), "mask_rate": 0.0}


class FixMatchTrainer(Trainer):
    name = "fixmatch"

    def _losses(self, batch: Batch):
        l_sup_t = self._supervised_loss(batch)
        parts = {"l_sup": l_sup_t.item() if l_sup_t is not None else 0.0}
        total_t = l_sup_t
        n_u = batch.n_unlabeled
        if n_u:
            _, conf, raw, mapped = self._pseudo_labels(batch)
            mask = (conf >= self.cfg.tau).astype(np.float32)
            parts["mask_rate"] = float(mask.mean())
            if self.capture_debug:
                self.last_debug["mask"] = mask.copy()
            if self.cfg.lambda_u != 0.0 and mask.any():
                l_unsup_t = F.softmax_cross_entropy(
                    self.model.forward(Tensor(batch.x_unlabeled_strong)),
                    F.one_hot(mapped, self.num_classes),
                    weights=mask,
                    normalizer=n_u,
                )
                parts["l_unsup"] = l_unsup_t.item()
                total_t = l_unsup_t * self.cfg.lambda_u if total_t is None else total_t + l_unsup_t * self.cfg.lambda_u
        else:
            parts["mask_rate"] = 0.0
        if total_t is None:
            raise ValidationError("fixmatch step received an entirely empty batch")
        return total_t, parts


class FlexMatchTrainer(Trainer):
    name = "flexmatch"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.status = ClassThresholds.fresh(self.num_classes, self.cfg.tau, self.cfg.tau_min)

    def on_epoch_start(self) -> None:
        self.status.reset()

    def _losses(self, batch: Batch):
        l_sup_t = self._supervised_loss(batch)
        parts = {"l_sup": l_sup_t.item() if l_sup_t is not None else 0.0}
        total_t = l_sup_t
        n_u = batch.n_unlabeled
        if n_u:
            _, conf, raw, mapped = self._pseudo_labels(batch)
            tau_c = self.status.thresholds()
            per_sample_tau = tau_c[raw]
            mask = conf >= per_sample_tau
            # paper's per-class weighting, normalized by tau_max so a converged
            # status (all tau_c == tau_max) reduces exactly to FixMatch
            weights = (per_sample_tau / self.cfg.tau * mask).astype(np.float32)
            parts["mask_rate"] = float(mask.mean())
            if self.capture_debug:
                self.last_debug.update({"mask": mask.copy(), "tau_c": tau_c.copy()})
            if self.cfg.lambda_u != 0.0 and mask.any():
                l_unsup_t = F.softmax_cross_entropy(
                    self.model.forward(Tensor(batch.x_unlabeled_strong)),
                    F.one_hot(mapped, self.num_classes),
                    weights=weights,
                    normalizer=n_u,
                )
                parts["l_unsup"] = l_unsup_t.item()
                total_t = l_unsup_t * self.cfg.lambda_u if total_t is None else total_t + l_unsup_t * self.cfg.lambda_u
            self.status.update(raw[conf >= self.cfg.tau])
        else:
            parts["mask_rate"] = 0.0
        if total_t is None:
            raise ValidationError("flexmatch step received an entirely empty batch")
        return total_t, parts


class MixMatchTrainer(Trainer):
    name = "mixmatch"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.n_weak_views = self.cfg.k_augmentations
        self.rng = np.random.default_rng((self.seed, 0x4D6978))

    def on_cycle_start(self, cycle: int) -> None:
        # cycle-keyed stream so resumed runs replay the identical draw sequence
        self.rng = np.random.default_rng((self.seed, 0x4D6978, cycle))

    def _losses(self, batch: Batch):
        n_u = batch.n_unlabeled
        n_l = batch.x_labeled.shape[0]
        if n_u == 0:
            # degenerate path: behave exactly like the supervised loop
            l_sup_t = self._supervised_loss(batch)
            if l_sup_t is None:
                raise ValidationError("mixmatch step received an entirely empty batch")
            return l_sup_t, {"l_sup": l_sup_t.item(), "mask_rate": 0.0}
        if n_l + n_u * self.n_weak_views < 2:
            raise ValidationError("mixmatch needs at least 2 samples to mix")

        k = batch.x_unlabeled_weak.shape[0]
        guessed = np.zeros((n_u, self.num_classes), dtype=np.float64)
        for v in range(k):
            guessed += F.softmax(self.model.predict_logits(batch.x_unlabeled_weak[v]))
        guessed = sharpen(guessed / k, self.cfg.temperature)
        if self.capture_debug:
            self.last_debug = {"guessed": guessed.copy()}

        x_all = np.concatenate([batch.x_labeled] + [batch.x_unlabeled_weak[v] for v in range(k)], axis=0)
        y_all = np.concatenate(
            [F.one_hot(batch.y_labeled, self.num_classes, dtype=np.float64)] + [guessed] * k, axis=0
        )
        perm = self.rng.permutation(len(x_all))
        gamma = self.rng.beta(self.cfg.alpha, self.cfg.alpha, size=len(x_all))
        x_mix, y_mix = mixmatch_mix((x_all, y_all), (x_all[perm], y_all[perm]), gamma)
        x_mix = x_mix.astype(np.float32)

        parts = {"mask_rate": 1.0}
        total_t = None
        if n_l:
            l_sup_t = F.softmax_cross_entropy(self.model.forward(Tensor(x_mix[:n_l])), y_mix[:n_l])
            parts["l_sup"] = l_sup_t.item()
            total_t = l_sup_t
        l_unsup_t = F.soft_mse(self.model.forward(Tensor(x_mix[n_l:])), y_mix[n_l:])
        parts["l_unsup"] = l_unsup_t.item()
        scaled = l_unsup_t * self.cfg.lambda_u if self.cfg.lambda_u != 0.0 else None
        if scaled is not None:
            total_t = scaled if total_t is None else total_t + scaled
        if total_t is None:
            raise ValidationError("mixmatch step produced no loss terms")
        return total_t, parts


class FullMatchTrainer(Trainer):
    name = "fullmatch"

    def _losses(self, batch: Batch):
        l_sup_t = self._supervised_loss(batch)
        parts = {"l_sup": l_sup_t.item() if l_sup_t is not None else 0.0}
        total_t = l_sup_t
        n_u = batch.n_unlabeled
        if n_u:
            probs_weak, conf, raw, mapped = self._pseudo_labels(batch)
            mask = (conf >= self.cfg.tau).astype(np.float32)
            parts["mask_rate"] = float(mask.mean())
            if self.capture_debug:
                self.last_debug["mask"] = mask.copy()
            need_unsup = self.cfg.lambda_u != 0.0 and mask.any()
            need_penalty = self.cfg.lambda_p != 0.0
            if need_unsup or need_penalty:
                logits_s = self.model.forward(Tensor(batch.x_unlabeled_strong))
            if need_unsup:
                l_unsup_t = F.softmax_cross_entropy(
                    logits_s, F.one_hot(mapped, self.num_classes), weights=mask, normalizer=n_u
                )
                parts["l_unsup"] = l_unsup_t.item()
                total_t = l_unsup_t * self.cfg.lambda_u if total_t is None else total_t + l_unsup_t * self.cfg.lambda_u
            if need_penalty:
                l_pen_t = self._penalty(logits_s, probs_weak, mask)
                if l_pen_t is not None:
                    parts["l_penalty"] = l_pen_t.item()
                    total_t = l_pen_t * self.cfg.lambda_p if total_t is None else total_t + l_pen_t * self.cfg.lambda_p
        else:
            parts["mask_rate"] = 0.0
        if total_t is None:
            raise ValidationError("fullmatch step received an entirely empty batch")
        return total_t, parts

    def _penalty(self, logits_s: Tensor, probs_weak: np.ndarray, mask: np.ndarray):
        """Entropy minimization on below-threshold samples plus negative
        learning on classes the weak prediction deems implausible."""
        n_u, n_c = probs_weak.shape
        terms = []
        unmasked = (1.0 - mask).astype(np.float32)
        ls = logits_s.log_softmax()
        p = ls.exp()
        if unmasked.any():
            entropy_per = -(p * ls).sum(axis=1)
            terms.append((entropy_per * Tensor(unmasked)).sum() * (1.0 / float(unmasked.sum())))
        low = (probs_weak < self.cfg.low_tau).astype(np.float32)
        if low.any():
            neg_log = -(((1.0 - p).clamp_min(1e-6)).log())
            terms.append((neg_log * Tensor(low)).sum() * (1.0 / float(n_u * n_c)))
        if not terms:
            return None
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total


_TRAINERS = {
    "supervised": SupervisedTrainer,
    "fixmatch": FixMatchTrainer,
    "flexmatch": FlexMatchTrainer,
    "mixmatch": MixMatchTrainer,
    "fullmatch": FullMatchTrainer,
}


def build_trainer(name: str, model: Model, optimizer: SGD, cfg: TrainerConfig,
                  num_classes: int, seed: int = 0) -> Trainer:
    if name not in _TRAINERS:
        raise ValidationError(f"unknown trainer {name!r} (choose from {sorted(_TRAINERS)})")
    return _TRAINERS[name](model, optimizer, cfg, num_classes, seed=seed)
