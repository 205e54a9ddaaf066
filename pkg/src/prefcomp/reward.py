"""Learning a listener's latent reward from pairwise preferences.

The dataset is a buffer of (observation A, observation B, label) triplets.
Training swap-augments the pairs, weights the three label classes so each
contributes equally per batch in expectation, and minimizes the pairwise
cross-entropy between the softmax of the two predicted latents and the
label. The agent consumes sigmoid(latent), bounded to (0, 1).
"""

import copy
import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import BalanceWarning, DimensionError, TrainingDiverged
from .features import Observation
from .netio import load_net, save_net

MU_A = (1.0, 0.0)
MU_B = (0.0, 1.0)
MU_EQUAL = (0.5, 0.5)
_PROB_FLOOR = 1e-7


@dataclass
class PreferenceTriplet:
    obs_a: Observation
    obs_b: Observation
    mu: tuple
    origin: str = "simulated"  # human | simulated | augmented

    def __post_init__(self):
        self.mu = (float(self.mu[0]), float(self.mu[1]))
        if abs(self.mu[0] + self.mu[1] - 1.0) > 1e-9:
            raise ValueError(f"label components must sum to 1, got {self.mu}")
        if self.obs_a.tensor.shape != self.obs_b.tensor.shape:
            raise DimensionError("paired observations must share a shape")

    @property
    def label_class(self) -> str:
        if self.mu == MU_A:
            return "a"
        if self.mu == MU_B:
            return "b"
        return "equal"

    def swapped(self) -> "PreferenceTriplet":
        return PreferenceTriplet(
            obs_a=self.obs_b, obs_b=self.obs_a, mu=(self.mu[1], self.mu[0]),
            origin="augmented",
        )


@dataclass
class PreferenceDataset:
    triplets: list
    split: tuple = (0.8, 0.2)
    weights: np.ndarray | None = None  # per-triplet sampling weights

    def __len__(self):
        return len(self.triplets)

    def class_counts(self) -> dict:
        counts = {"a": 0, "b": 0, "equal": 0}
        for t in self.triplets:
            counts[t.label_class] += 1
        return counts


def augment(dataset: PreferenceDataset) -> PreferenceDataset:
    """Append a swapped twin (sides exchanged, label reversed) per triplet."""
    if not dataset.triplets:
        raise ValueError("cannot augment an empty dataset")
    doubled = list(dataset.triplets) + [t.swapped() for t in dataset.triplets]
    return PreferenceDataset(doubled, split=dataset.split)


def balance(dataset: PreferenceDataset) -> PreferenceDataset:
    """Attach inverse-frequency sampling weights so the label classes
    contribute equally per batch in expectation. Weighting only; nothing is
    deleted."""
    counts = dataset.class_counts()
    present = {c: n for c, n in counts.items() if n > 0}
    if len(present) < 3:
        missing = sorted(set(counts) - set(present))
        warnings.warn(
            f"label class(es) {missing} absent; balancing the classes present",
            BalanceWarning,
            stacklevel=2,
        )
    weights = np.array(
        [1.0 / present[t.label_class] for t in dataset.triplets], dtype=np.float64
    )
    weights /= weights.sum()
    return PreferenceDataset(list(dataset.triplets), split=dataset.split, weights=weights)


def pair_probability(r_a, r_b):
    """P[a preferred over b] as the softmax of the two latents (stable form)."""
    r_a = np.asarray(r_a, dtype=np.float64)
    r_b = np.asarray(r_b, dtype=np.float64)
    m = np.maximum(r_a, r_b)
    ea = np.exp(r_a - m)
    eb = np.exp(r_b - m)
    out = ea / (ea + eb)
    return out if out.ndim else float(out)


def preference_loss(latents_a, latents_b, mus) -> float:
    """Mean pairwise cross-entropy over a batch (numpy reference path)."""
    latents_a = np.atleast_1d(np.asarray(latents_a, dtype=np.float64))
    latents_b = np.atleast_1d(np.asarray(latents_b, dtype=np.float64))
    mus = np.atleast_2d(np.asarray(mus, dtype=np.float64))
    if len(latents_a) == 0:
        raise ValueError("empty batch")
    p_a = np.clip(pair_probability(latents_a, latents_b), _PROB_FLOOR, 1 - _PROB_FLOOR)
    p_b = 1.0 - p_a
    losses = -(mus[:, 0] * np.log(p_a) + mus[:, 1] * np.log(p_b))
    return float(np.mean(losses))


def preference_loss_torch(latents_a, latents_b, mu) -> torch.Tensor:
    logits = torch.stack([latents_a, latents_b], dim=1)
    p = torch.softmax(logits, dim=1).clamp(_PROB_FLOOR, 1.0 - _PROB_FLOOR)
    return -(mu * torch.log(p)).sum(dim=1).mean()


@dataclass
class RewardNetConfig:
    conv_filters: tuple = (32, 64, 128)
    conv_kernel: int = 3
    recurrent_hidden: int = 64  # per direction
    dropout_rate: float = 0.5
    batchnorm_decay: float = 0.90
    batch_size: int = 64
    learning_rate: float = 1e-3
    max_epochs: int = 200
    early_stopping_patience: int = 10
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    val_fraction: float = 0.2

    def __post_init__(self):
        self.conv_filters = tuple(int(f) for f in self.conv_filters)
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout must lie in [0, 1)")
        if min(self.conv_filters) <= 0 or self.recurrent_hidden <= 0:
            raise ValueError("layer sizes must be positive")
        if self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("batch size and epoch budget must be positive")


# Small config for fast tests and gradient checks.
DESK_REWARD = RewardNetConfig(
    conv_filters=(8, 16), recurrent_hidden=8, dropout_rate=0.1,
    batch_size=32, max_epochs=60, early_stopping_patience=8, plateau_patience=4,
)


class RewardNet(nn.Module):
    """Conv stack + bidirectional recurrent pooling down to a scalar latent."""

    def __init__(self, obs_shape: tuple, cfg: RewardNetConfig):
        super().__init__()
        self.obs_shape = tuple(obs_shape)  # (n_mels, n_frames, n_stack)
        n_mels, n_frames, n_stack = self.obs_shape
        k = cfg.conv_kernel
        momentum = 1.0 - cfg.batchnorm_decay
        blocks = []
        in_ch = n_stack
        for f in cfg.conv_filters:
            blocks += [
                nn.Conv2d(in_ch, f, kernel_size=k, stride=2, padding=k // 2),
                nn.BatchNorm2d(f, momentum=momentum),
                nn.ReLU(),
            ]
            in_ch = f
        self.conv = nn.Sequential(*blocks)
        with torch.no_grad():
            probe = self.conv(torch.zeros(1, n_stack, n_mels, n_frames))
        _, c, h, w = probe.shape
        if w < 1:
            raise ValueError("conv stack collapsed the time axis; shrink it")
        self.lstm = nn.LSTM(
            input_size=c * h,
            hidden_size=cfg.recurrent_hidden,
            batch_first=True,
            bidirectional=True,
        )
        self.dropout = nn.Dropout(cfg.dropout_rate)
        self.head = nn.Linear(2 * cfg.recurrent_hidden, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (B, n_stack, n_mels, n_frames) -> latent (B,)."""
        if tuple(x.shape[1:]) != (self.obs_shape[2], self.obs_shape[0], self.obs_shape[1]):
            raise DimensionError(
                f"expected observations of shape {self.obs_shape}, got input {tuple(x.shape[1:])}"
            )
        z = self.conv(x)
        b, c, h, w = z.shape
        seq = z.permute(0, 3, 1, 2).reshape(b, w, c * h)
        out, _ = self.lstm(seq)
        pooled = self.dropout(out.mean(dim=1))
        return self.head(pooled).squeeze(-1)


def obs_batch_to_torch(observations, dtype=torch.float32) -> torch.Tensor:
    """Stack observations into a (B, n_stack, n_mels, n_frames) tensor."""
    arrs = [np.transpose(o.tensor, (2, 0, 1)) for o in observations]
    return torch.from_numpy(np.stack(arrs)).to(dtype)


class RewardPredictor:
    """Trained latent-reward model plus its training state."""

    def __init__(self, net: RewardNet, cfg: RewardNetConfig, optimizer=None):
        self.net = net
        self.cfg = cfg
        self.optimizer = optimizer or torch.optim.Adam(
            net.parameters(), lr=cfg.learning_rate
        )
        self.epochs_trained = 0
        self.buffer: list = []  # triplets seen so far, for fine-tune replay

    def latents(self, observations) -> np.ndarray:
        self.net.eval()
        with torch.no_grad():
            out = self.net(obs_batch_to_torch(observations))
        return out.numpy()

    def latent(self, obs: Observation) -> float:
        return float(self.latents([obs])[0])

    def reward(self, obs: Observation) -> float:
        """Agent-facing bounded reward, sigmoid of the latent."""
        return 1.0 / (1.0 + math.exp(-self.latent(obs)))

    def save(self, path) -> None:
        config = {
            "obs_shape": list(self.net.obs_shape),
            "conv_filters": list(self.cfg.conv_filters),
            "conv_kernel": self.cfg.conv_kernel,
            "recurrent_hidden": self.cfg.recurrent_hidden,
            "dropout_rate": self.cfg.dropout_rate,
            "batchnorm_decay": self.cfg.batchnorm_decay,
            "epochs_trained": self.epochs_trained,
        }
        save_net(path, "reward", config, self.net)

    @classmethod
    def load(cls, path) -> "RewardPredictor":
        config, state = load_net(path, expected_kind="reward")
        cfg = RewardNetConfig(
            conv_filters=tuple(config["conv_filters"]),
            conv_kernel=config["conv_kernel"],
            recurrent_hidden=config["recurrent_hidden"],
            dropout_rate=config["dropout_rate"],
            batchnorm_decay=config["batchnorm_decay"],
        )
        net = RewardNet(tuple(config["obs_shape"]), cfg)
        net.load_state_dict(state)
        predictor = cls(net, cfg)
        predictor.epochs_trained = config.get("epochs_trained", 0)
        return predictor


def _triplet_tensors(triplets, dtype=torch.float32):
    xa = obs_batch_to_torch([t.obs_a for t in triplets], dtype)
    xb = obs_batch_to_torch([t.obs_b for t in triplets], dtype)
    mu = torch.tensor([t.mu for t in triplets], dtype=dtype)
    return xa, xb, mu


def _batch_loss(net, xa, xb, mu) -> torch.Tensor:
    latents = net(torch.cat([xa, xb], dim=0))
    la, lb = latents[: len(xa)], latents[len(xa) :]
    return preference_loss_torch(la, lb, mu)


def evaluate_loss(net: RewardNet, triplets) -> float:
    if not triplets:
        return float("nan")
    net.eval()
    with torch.no_grad():
        xa, xb, mu = _triplet_tensors(triplets)
        return float(_batch_loss(net, xa, xb, mu))


def pairwise_accuracy(predictor: RewardPredictor, triplets) -> float:
    """Fraction of non-equal pairs whose predicted ordering matches the label."""
    decided = [t for t in triplets if t.label_class != "equal"]
    if not decided:
        return float("nan")
    la = predictor.latents([t.obs_a for t in decided])
    lb = predictor.latents([t.obs_b for t in decided])
    hits = 0
    for t, ra, rb in zip(decided, la, lb):
        predicted_a = ra > rb
        hits += int(predicted_a == (t.label_class == "a"))
    return hits / len(decided)


def _sample_weights(triplets, recency: np.ndarray | None = None) -> np.ndarray:
    ds = balance(PreferenceDataset(list(triplets)))
    w = ds.weights.copy()
    if recency is not None:
        w = w * recency
    return w / w.sum()


def train_reward(dataset: PreferenceDataset, cfg: RewardNetConfig, seed: int = 0):
    """Fit the reward predictor; returns (predictor, history).

    History rows are (epoch, train_loss, val_loss), the loss-curve artifact.
    The split is taken on the original triplets and each side is
    swap-augmented separately, so no pair leaks into validation as its own
    mirror image.
    """
    originals = list(dataset.triplets)
    if len(originals) < 1:
        raise ValueError("dataset must hold at least one triplet")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    order = rng.permutation(len(originals))
    n_val = int(round(len(originals) * cfg.val_fraction))
    if len(originals) >= 4:
        n_val = max(n_val, 1)
    val = [originals[i] for i in order[:n_val]]
    train = [originals[i] for i in order[n_val:]] or list(val)

    train_aug = augment(PreferenceDataset(train)).triplets
    if len(train_aug) < 2:
        raise ValueError("need at least 2 triplets after augmentation")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BalanceWarning)
        weights = _sample_weights(train_aug)
    xa, xb, mu = _triplet_tensors(train_aug)

    obs_shape = train_aug[0].obs_a.tensor.shape
    net = RewardNet(obs_shape, cfg)
    predictor = RewardPredictor(net, cfg)
    opt = predictor.optimizer

    n = len(train_aug)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    best_val = float("inf")
    best_state = copy.deepcopy(net.state_dict())
    stall = 0
    plateau = 0
    history = []
    for epoch in range(cfg.max_epochs):
        net.train()
        epoch_losses = []
        for _ in range(steps_per_epoch):
            batch = rng.choice(n, size=min(cfg.batch_size, n), replace=True, p=weights)
            idx = torch.from_numpy(batch)
            loss = _batch_loss(net, xa[idx], xb[idx], mu[idx])
            if not torch.isfinite(loss):
                raise TrainingDiverged("non-finite training loss", last_stable=best_state)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_losses.append(loss.item())
        train_loss = float(np.mean(epoch_losses))
        val_loss = evaluate_loss(net, val) if val else train_loss
        history.append((epoch, train_loss, val_loss))
        predictor.epochs_trained += 1

        if val_loss < best_val - 1e-6:
            best_val = val_loss
            best_state = copy.deepcopy(net.state_dict())
            stall = 0
            plateau = 0
        else:
            stall += 1
            plateau += 1
        if plateau >= cfg.plateau_patience:
            for group in opt.param_groups:
                group["lr"] = max(group["lr"] * cfg.plateau_factor, 1e-6)
            plateau = 0
        if stall >= cfg.early_stopping_patience:
            break

    net.load_state_dict(best_state)
    predictor.buffer = originals
    return predictor, history


def finetune_reward(
    predictor: RewardPredictor, new_triplets, k_batches: int, seed: int = 0
) -> RewardPredictor:
    """Exactly ``k_batches`` optimizer steps on the merged buffer, with the
    fresh triplets (and their swap twins) sampled twice as often as old ones."""
    if k_batches < 0:
        raise ValueError("k_batches must be non-negative")
    new_triplets = list(new_triplets)
    if k_batches == 0:
        predictor.buffer = predictor.buffer + new_triplets
        return predictor
    torch.manual_seed(seed + 7919)
    rng = np.random.default_rng(seed + 7919)

    old_aug = augment(PreferenceDataset(predictor.buffer)).triplets if predictor.buffer else []
    new_aug = augment(PreferenceDataset(new_triplets)).triplets if new_triplets else []
    merged = old_aug + new_aug
    if len(merged) < 2:
        raise ValueError("nothing to fine-tune on")
    recency = np.array([1.0] * len(old_aug) + [2.0] * len(new_aug))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BalanceWarning)
        weights = _sample_weights(merged, recency)
    xa, xb, mu = _triplet_tensors(merged)

    net = predictor.net
    opt = predictor.optimizer
    net.train()
    n = len(merged)
    for _ in range(k_batches):
        batch = rng.choice(n, size=min(predictor.cfg.batch_size, n), replace=True, p=weights)
        idx = torch.from_numpy(batch)
        loss = _batch_loss(net, xa[idx], xb[idx], mu[idx])
        if not torch.isfinite(loss):
            raise TrainingDiverged(
                "non-finite fine-tuning loss", last_stable=copy.deepcopy(net.state_dict())
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
    predictor.buffer = predictor.buffer + new_triplets
    return predictor
