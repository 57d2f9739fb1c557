"""Adam optimizer and the training/evaluation loops.

train() is fully deterministic given (TrainConfig): data, shuffling,
augmentation, and init draw from named substreams of the one seed, and no
wall-clock state enters any artifact. The best-validation-DSC model state is
retained and restored at the end.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import gather_state
from .losses import LossConfig, binarize, hybrid_loss
from .metrics import evaluate_masks
from .model import ModelConfig, build_model
from .phantoms import PhantomConfig, augment, epoch_batches, gen_phantom, make_splits
from .rng import stream_rng
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    augment: bool = True
    n_train: int = 200
    n_val: int = 50
    n_test: int = 50
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(
        num_classes=2, base_channels=16, image_size=64,
        use_deform_bottleneck=True, use_simam=True))
    data: PhantomConfig = field(default_factory=PhantomConfig)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.model.image_size != self.data.image_size:
            raise ValueError(
                f"model image_size {self.model.image_size} != data image_size {self.data.image_size}")
        if self.model.num_classes != self.data.num_fg_classes:
            raise ValueError(
                f"model num_classes {self.model.num_classes} != data num_fg_classes "
                f"{self.data.num_fg_classes}")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch, loss_value):
        super().__init__(f"non-finite loss {loss_value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss_value = loss_value


class Adam:
    """Adam with bias correction; moments decay even where gradients are zero."""

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape "
                                 f"{p.data.shape} for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def generate_dataset(data_cfg, n_train, n_val, n_test):
    """Materialize the three splits; each sample is a pure function of (seed, index)."""
    train_idx, val_idx, test_idx = make_splits(n_train, n_val, n_test)
    train = {i: gen_phantom(data_cfg, i) for i in train_idx}
    val = [gen_phantom(data_cfg, i) for i in val_idx]
    test = [gen_phantom(data_cfg, i) for i in test_idx]
    return train, val, test, train_idx


def batch_tensors(samples):
    x = Tensor(np.stack([s.image.data for s in samples]))
    y = Tensor(np.stack([s.mask.data for s in samples]))
    return x, y


def predict_masks(model, samples, batch_size=16, corrupt=None):
    """Eval-mode hard masks for a list of samples; optional input corruption."""
    model.eval()
    preds = []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            x, _ = batch_tensors(chunk)
            if corrupt is not None:
                x = corrupt(x)
            preds.append(binarize(model(x)))
    return np.concatenate(preds, axis=0)


def evaluate(model, samples, batch_size=16, sample_ids=None, pooled_hd95=False, corrupt=None):
    """MetricsReport over a sample list (eval mode, hard masks)."""
    pred = predict_masks(model, samples, batch_size=batch_size, corrupt=corrupt)
    gt = np.stack([s.mask.data for s in samples]) > 0.5
    return evaluate_masks(pred, gt, sample_ids=sample_ids, pooled_hd95=pooled_hd95)


@dataclass
class TrainResult:
    model: object
    best_state: object          # Checkpoint of the best-validation model
    log_rows: list              # (epoch, step, train_loss, val_dsc)
    best_val_dsc: float
    best_epoch: int


def write_log_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "step", "train_loss", "val_dsc"])
        for epoch, step, loss, val in rows:
            w.writerow([epoch, step, repr(float(loss)), repr(float(val))])
    return path


def train(cfg, progress=None):
    """Run the full loop; returns the model restored to its best-validation state."""
    model = build_model(cfg.model, seed=cfg.seed)
    adam = Adam(model.named_parameters(), lr=cfg.lr)
    train_set, val_set, _, train_idx = generate_dataset(
        cfg.data, cfg.n_train, cfg.n_val, cfg.n_test)

    log_rows = []
    best_val = -1.0
    best_epoch = -1
    best_state = None
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        losses = []
        for b, batch_idx in enumerate(epoch_batches(train_idx, cfg.batch_size, cfg.seed, epoch)):
            samples = []
            for idx in batch_idx:
                s = train_set[idx]
                if cfg.augment:
                    aseed = int(stream_rng(cfg.seed, "augment", epoch, idx).integers(0, 2 ** 63))
                    s = augment(s, aseed)
                samples.append(s)
            x, y = batch_tensors(samples)
            logits = model(x)
            loss = hybrid_loss(logits, y, cfg.loss)
            lv = loss.item()
            if not np.isfinite(lv):
                raise TrainingDiverged(epoch, b, lv)
            model.zero_grad()
            loss.backward()
            adam.step()
            step += 1
            losses.append(lv)
        val_dsc = evaluate(model, val_set, batch_size=cfg.batch_size).mean_dsc
        train_loss = float(np.mean(losses))
        log_rows.append((epoch, step, train_loss, val_dsc))
        if progress is not None:
            progress(epoch, train_loss, val_dsc)
        if val_dsc > best_val:
            best_val = val_dsc
            best_epoch = epoch
            best_state = gather_state(model, adam=adam, epoch=epoch,
                                      metrics={"val_dsc": val_dsc, "train_loss": train_loss})
    # Leave the model at its best-validation parameters.
    if best_state is not None:
        for name, p in model.named_parameters():
            p.data[...] = best_state.tensors[name]
        for name, buf in model.named_buffers():
            buf[...] = best_state.tensors[name]
    return TrainResult(model=model, best_state=best_state, log_rows=log_rows,
                       best_val_dsc=best_val, best_epoch=best_epoch)
