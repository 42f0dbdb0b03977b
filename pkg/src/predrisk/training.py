"""Losses, the two-phase training loop and per-horizon evaluation."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import FUTURE_LEN, Sample
from .errors import InvalidParameter, InvalidParams, NumericalError, ShapeError
from .model import (
    AblationConfig,
    Batch,
    GaussianTrajectory,
    ModelConfig,
    Predictor,
    baseline_predict,
    config_fingerprint,
)
from .optim import AdamState, adam_step, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)
HORIZONS = (1, 2, 3, 4, 5)
STEPS_PER_SECOND = 5


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    lr: float = 0.001
    pretrain_epochs: int = 5
    formal_epochs: int = 10
    early_stop_patience: int | None = 2
    seed: int = 0
    # learning rate of the NLL phase; None means lr
    formal_lr: float | None = None
    # fresh Adam moments at the start of each phase
    reset_optimizer: bool = True

    def __post_init__(self):
        if self.batch_size <= 0 or self.lr <= 0:
            raise InvalidParameter("batch_size and lr must be positive")
        if self.formal_lr is not None and self.formal_lr <= 0:
            raise InvalidParameter("formal_lr must be positive")
        if self.pretrain_epochs < 0 or self.formal_epochs < 0:
            raise InvalidParameter("epoch counts must be non-negative")
        if self.early_stop_patience is not None and self.early_stop_patience <= 0:
            raise InvalidParameter("early_stop_patience must be positive or None")


# losses


def rmse_loss(pred, truth):
    """Root of the mean squared error over all steps and both coordinates.

    Plain arrays give a float; a :class:`Tensor` prediction gives a graph
    tensor averaged over the leading batch axis (a tiny epsilon keeps the
    square root differentiable at zero error).
    """
    if isinstance(pred, Tensor):
        truth = np.asarray(truth, float)
        if pred.shape != truth.shape:
            raise ShapeError(f"rmse_loss: incompatible shapes {pred.shape} and {truth.shape}")
        diff = pred - truth
        per = ad.mean(ad.reshape(diff * diff, (diff.shape[0], -1)), axis=1)
        return ad.mean(ad.sqrt(per + 1e-12))
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if pred.shape != truth.shape:
        raise ShapeError(f"rmse_loss: incompatible shapes {pred.shape} and {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def _check_gaussian(sigma: np.ndarray, rho: np.ndarray):
    if not (np.all(sigma > 0) and np.all(np.abs(rho) < 1)):
        raise InvalidParams("sigma must be positive and |rho| < 1")


def nll_terms(mu, sigma, rho, truth):
    """Per-step negative log density of ``truth`` (graph tensors)."""
    truth = np.asarray(truth, float)
    dx = truth[..., 0] - mu[..., 0]
    dy = truth[..., 1] - mu[..., 1]
    sx, sy = sigma[..., 0], sigma[..., 1]
    one_m = 1.0 - rho * rho
    zx, zy = dx / sx, dy / sy
    quad = zx * zx + zy * zy - 2.0 * rho * zx * zy
    return LOG_2PI + ad.log(sx) + ad.log(sy) + 0.5 * ad.log(one_m) + quad / (2.0 * one_m)


def nll_loss(trajectory, truth, sigma=None, rho=None):
    """Sum over steps of the bivariate-Gaussian negative log-likelihood.

    Accepts a :class:`GaussianTrajectory` (returns a float), or tensors
    ``mu, sigma, rho`` of shapes ``(B, 25, 2)``, ``(B, 25, 2)``, ``(B, 25)``
    passed as ``nll_loss(mu, truth, sigma, rho)`` (returns the batch mean
    as a graph tensor).
    """
    if isinstance(trajectory, GaussianTrajectory):
        _check_gaussian(trajectory.sigma, trajectory.rho)
        truth = np.asarray(truth, float)
        if truth.shape != trajectory.mu.shape:
            raise ShapeError(
                f"nll_loss: incompatible shapes {trajectory.mu.shape} and {truth.shape}"
            )
        terms = nll_terms(
            Tensor(trajectory.mu), Tensor(trajectory.sigma), Tensor(trajectory.rho), truth
        )
        return float(np.sum(terms.data))
    mu = ad.as_tensor(trajectory)
    sigma, rho = ad.as_tensor(sigma), ad.as_tensor(rho)
    _check_gaussian(sigma.data, rho.data)
    if mu.shape != np.shape(truth):
        raise ShapeError(f"nll_loss: incompatible shapes {mu.shape} and {np.shape(truth)}")
    terms = nll_terms(mu, sigma, rho, truth)
    return ad.mean(ad.sum_(terms, axis=-1))


# training


@dataclass
class TrainResult:
    predictor: Predictor
    history: list[dict] = field(default_factory=list)
    step_losses: list[tuple[str, float]] = field(default_factory=list)
    best_val: float = math.inf
    best_epoch: int = -1
    stopped_early: dict = field(default_factory=dict)

    def phase_losses(self, phase: str) -> list[float]:
        return [v for p, v in self.step_losses if p == phase]

    def loss_curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "phase", "train_loss", "val_loss"])
        for row in self.history:
            w.writerow([row["epoch"], row["phase"], repr(row["train_loss"]), repr(row["val_loss"])])
        return buf.getvalue()


def _phase_loss(phase: str, predictor: Predictor, batch: Batch) -> Tensor:
    fwd = predictor.forward(batch)
    if phase == "pretrain":
        return rmse_loss(fwd.mu, batch.future)
    return nll_loss(fwd.mu, batch.future, fwd.sigma, fwd.rho)


def _val_loss(phase: str, predictor: Predictor, batch: Batch, batch_size: int) -> float:
    total, n = 0.0, len(batch)
    for k in range(0, n, batch_size):
        idx = np.arange(k, min(k + batch_size, n))
        total += _phase_loss(phase, predictor, batch.subset(idx)).item() * len(idx)
    return total / n


def _plan(cfg: TrainConfig) -> list[str]:
    return ["pretrain"] * cfg.pretrain_epochs + ["formal"] * cfg.formal_epochs


def train(
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample] | None,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
    ablation: AblationConfig | None = None,
    checkpoint_dir=None,
    resume_from=None,
    stop_after_epoch: int | None = None,
) -> TrainResult:
    """RMSE pre-training followed by NLL training, with per-phase early stopping.

    After every epoch the validation loss of the current phase is logged;
    a phase ends once it fails to improve for ``early_stop_patience``
    epochs. The returned predictor holds the best-validation weights of the
    last phase that ran. With ``val_samples=None`` there is no validation
    or early stopping and the final weights are kept. With
    ``checkpoint_dir`` the full training state is written after each epoch
    (``last.json``) so a run can be resumed.
    """
    mcfg = model_config or ModelConfig()
    tcfg = train_config or TrainConfig()
    abl = ablation or AblationConfig()
    if not train_samples or (val_samples is not None and not val_samples):
        raise InvalidParameter("train and validation splits must be nonempty")
    predictor = Predictor(mcfg, abl)
    params = predictor.parameters()
    names = list(predictor.params)
    state = AdamState.for_params(params)
    train_batch = Batch.from_samples(list(train_samples))
    val_batch = None if val_samples is None else Batch.from_samples(list(val_samples))
    if train_batch.future is None or (val_batch is not None and val_batch.future is None):
        raise InvalidParameter("training samples need a 25-step future")

    result = TrainResult(predictor)
    plan = _plan(tcfg)
    start = 0
    progress = {"best_val": math.inf, "bad": 0, "phase": None, "done_phases": []}
    best_params = predictor.state_dict()
    if resume_from is not None:
        doc = load_checkpoint(resume_from)
        predictor.load_state_dict(doc["params"])
        a = doc["adam"]
        state = AdamState([a["m"][k] for k in names], [a["v"][k] for k in names],
                          a["step_count"], a["beta1"], a["beta2"], a["eps"])
        meta = doc["meta"]
        start = meta["epoch"] + 1
        progress = meta["progress"]
        progress["best_val"] = float(progress["best_val"])
        result.history = meta["history"]
        best_params = _best_from(doc)

    for epoch in range(start, len(plan)):
        phase = plan[epoch]
        if phase in progress["done_phases"]:
            continue
        if progress["phase"] != phase:
            progress.update(phase=phase, best_val=math.inf, bad=0)
            if tcfg.reset_optimizer:
                state = AdamState.for_params(params)
        lr = tcfg.formal_lr if phase == "formal" and tcfg.formal_lr is not None else tcfg.lr
        rng = np.random.default_rng([tcfg.seed, epoch])
        order = rng.permutation(len(train_batch))
        losses = []
        for b, k in enumerate(range(0, len(order), tcfg.batch_size)):
            batch = train_batch.subset(order[k : k + tcfg.batch_size])
            for p in params:
                p.zero_grad()
            try:
                loss = _phase_loss(phase, predictor, batch)
            except NumericalError as exc:
                raise NumericalError(str(exc), epoch=epoch, batch=b) from exc
            if not math.isfinite(loss.item()):
                raise NumericalError("non-finite loss", epoch=epoch, batch=b)
            loss.backward()
            adam_step(params, [p.grad for p in params], state, lr)
            losses.append(loss.item())
            result.step_losses.append((phase, loss.item()))
        val = math.nan if val_batch is None else _val_loss(phase, predictor, val_batch, tcfg.batch_size)
        row = {"epoch": epoch, "phase": phase, "train_loss": float(np.mean(losses)),
               "val_loss": val}
        result.history.append(row)
        logger.info("epoch %d %s train %.5f val %.5f", epoch, phase, row["train_loss"], val)
        if val_batch is None or val < progress["best_val"]:
            progress["best_val"], progress["bad"] = val, 0
            best_params = predictor.state_dict()
            result.best_epoch = epoch
        else:
            progress["bad"] += 1
        if (val_batch is not None and tcfg.early_stop_patience is not None
                and progress["bad"] >= tcfg.early_stop_patience):
            progress["done_phases"].append(phase)
            result.stopped_early[phase] = epoch
            predictor.load_state_dict(best_params)
        if checkpoint_dir is not None:
            _save_progress(Path(checkpoint_dir) / "last.json", predictor, state, names, tcfg,
                           mcfg, abl, epoch, progress, result.history, best_params)
        if stop_after_epoch is not None and epoch >= stop_after_epoch:
            break

    result.best_val = progress["best_val"]
    predictor.load_state_dict(best_params)
    if checkpoint_dir is not None:
        save_model(Path(checkpoint_dir) / "best.json", predictor, tcfg.seed,
                   {"history": result.history, "best_epoch": result.best_epoch})
    return result


def _best_from(doc: dict) -> dict:
    best = doc["meta"]["best_params"]
    return {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in best.items()}


def _save_progress(path, predictor, state, names, tcfg, mcfg, abl, epoch, progress, history,
                   best_params):
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "epoch": epoch,
        "progress": {**progress, "best_val": repr(progress["best_val"])},
        "history": history,
        "train_config": asdict(tcfg),
        "model_config": asdict(mcfg),
        "ablation": asdict(abl),
        "fingerprint": config_fingerprint(mcfg, abl, tcfg),
        "best_params": {
            k: {"shape": list(v.shape), "data": [float(x) for x in v.reshape(-1)]}
            for k, v in best_params.items()
        },
    }
    save_checkpoint(path, predictor.state_dict(), tcfg.seed, meta, state, names)


def save_model(path, predictor: Predictor, seed: int = 0, meta: dict | None = None):
    """Write weights with their model/ablation configs."""
    doc = {
        "model_config": asdict(predictor.config),
        "ablation": asdict(predictor.ablation),
        "fingerprint": predictor.fingerprint(),
        **(meta or {}),
    }
    save_checkpoint(path, predictor.state_dict(), seed, doc)


def load_model(path) -> Predictor:
    doc = load_checkpoint(path)
    meta = doc["meta"]
    mcfg = ModelConfig(**meta["model_config"])
    abl_doc = dict(meta["ablation"])
    abl_doc["channels"] = tuple(abl_doc["channels"])
    predictor = Predictor(mcfg, AblationConfig(**abl_doc))
    predictor.load_state_dict(doc["params"])
    return predictor


# evaluation


@dataclass(frozen=True)
class EvalReport:
    rmse_at: tuple[float, ...]
    n_samples: int
    fingerprint: str = ""
    model: str = ""

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "fingerprint": self.fingerprint,
            "n_samples": self.n_samples,
            "rmse_m": {f"{h}s": v for h, v in zip(HORIZONS, self.rmse_at)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model"] + [f"{h}s" for h in HORIZONS])
        w.writerow([self.model] + [f"{v:.6f}" for v in self.rmse_at])
        return buf.getvalue()


def horizon_rmse(pred_means: np.ndarray, truth: np.ndarray) -> tuple[float, ...]:
    """RMSE of the Euclidean position error at 1..5 s (steps 5, 10, ..., 25)."""
    pred_means, truth = np.asarray(pred_means, float), np.asarray(truth, float)
    if pred_means.shape != truth.shape:
        raise ShapeError(f"horizon_rmse: incompatible shapes {pred_means.shape} and {truth.shape}")
    sq = np.sum((pred_means - truth) ** 2, axis=-1)  # (N, 25)
    return tuple(float(np.sqrt(np.mean(sq[:, h * STEPS_PER_SECOND - 1]))) for h in HORIZONS)


def _predictor_from(model) -> tuple[Callable, str, str]:
    if isinstance(model, Predictor):
        return (lambda ss: np.stack([t.mu for t in model.predict_many(ss)]),
                "csp-gan-lstm", model.fingerprint())
    if isinstance(model, str) and model in ("cv", "ca"):
        return (lambda ss: np.stack([baseline_predict(s, model) for s in ss]), model, model)
    if isinstance(model, str) and model == "oracle":
        return (lambda ss: np.stack([s.ov_future for s in ss]), "oracle", "oracle")
    if isinstance(model, (str, Path)):
        return _predictor_from(load_model(model))
    if callable(model):
        return model, getattr(model, "__name__", "custom"), ""
    raise InvalidParameter(f"cannot evaluate {model!r}")


def evaluate(model, samples: Sequence[Sample]) -> EvalReport:
    """Per-horizon RMSE in metres (Table-I layout).

    ``model`` is a :class:`Predictor`, a checkpoint path, one of the
    baselines ``"cv"``/``"ca"``, ``"oracle"`` (returns the ground truth),
    or a callable mapping a list of samples to ``(N, 25, 2)`` means.
    """
    if not samples:
        raise InvalidParameter("test split is empty")
    fn, name, fp = _predictor_from(model)
    samples = list(samples)
    pred = fn(samples)
    truth = np.stack([s.ov_future for s in samples])
    if truth.shape[1] != FUTURE_LEN:
        raise ShapeError("samples need a 25-step future")
    return EvalReport(horizon_rmse(pred, truth), len(samples), fp, name)
