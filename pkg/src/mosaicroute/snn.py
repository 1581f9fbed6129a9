"""Discrete-time recurrent LIF network trained with surrogate gradients.

Update per step ``t`` (dt = 1)::

    s[t]     = H(v[t] - v_threshold)
    I[t]     = x[t] @ w_in + s[t] @ w_rec          (optionally low-pass filtered)
    v[t+1]   = alpha * (v[t] * (1 - s[t]) + v_reset * s[t]) + (1 - alpha) * I[t]
    r[t+1]   = kappa * r[t] + (1 - kappa) * (s[t] @ w_out)

with ``alpha = exp(-1/tau_mem)`` and ``kappa = exp(-1/tau_out)``.  Class
scores are the time sum of the non-spiking readout ``r``.  On the
backward pass H is replaced by the fast-sigmoid pseudo-derivative
``1 / (1 + beta*|x|)**2``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, NumericalError, TrainingDiverged
from .params import NetworkParams
from .rewire import (
    RewireState,
    consistency_errors,
    l1_loss_term,
    prune,
    prune_to_memory,
    rewire_epoch,
)
from .router import check_mappable

log = logging.getLogger(__name__)


@dataclass
class LIFParams:
    tau_mem: float = 10.0
    tau_syn: float = 0.0  # 0 disables the synaptic filter
    tau_out: float = 10.0
    v_threshold: float = 1.0
    v_reset: float = 0.0
    refractory: int = 0
    surrogate_beta: float = 10.0

    def __post_init__(self):
        if not self.tau_mem > 0 or not self.tau_out > 0:
            raise ConfigError("tau_mem and tau_out must be > 0")
        if self.tau_syn < 0:
            raise ConfigError("tau_syn must be >= 0")
        if not self.v_threshold > self.v_reset:
            raise ConfigError("v_threshold must exceed v_reset")
        if self.refractory < 0:
            raise ConfigError("refractory must be >= 0")

    @property
    def alpha(self) -> float:
        return math.exp(-1.0 / self.tau_mem)

    @property
    def kappa(self) -> float:
        return math.exp(-1.0 / self.tau_out)


def surrogate_grad(x, beta: float = 10.0):
    """Fast-sigmoid pseudo-derivative of the spike nonlinearity."""
    if isinstance(x, torch.Tensor):
        return 1.0 / (1.0 + beta * x.abs()) ** 2
    return 1.0 / (1.0 + beta * np.abs(x)) ** 2


class SurrogateSpike(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, beta):
        ctx.save_for_backward(x)
        ctx.beta = beta
        return (x >= 0).to(x.dtype)

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        return grad * surrogate_grad(x, ctx.beta), None


def smooth_spike(x, beta):
    # Same derivative as the surrogate, used for finite-difference checks.
    return x / (1.0 + beta * x.abs())


@dataclass
class ForwardResult:
    spikes: torch.Tensor  # [T, B, N]
    readout: torch.Tensor  # [T, B, n_out]
    voltages: torch.Tensor | None = None  # [T+1, B, N]

    @property
    def logits(self) -> torch.Tensor:
        return self.readout.sum(dim=0)


def _as_tensor(a, dtype):
    if isinstance(a, torch.Tensor):
        return a
    return torch.as_tensor(np.asarray(a), dtype=dtype)


def lif_forward(params, inputs, lif: LIFParams = LIFParams(), spike_fn: str = "surrogate",
                record_v: bool = False, dtype=torch.float32) -> ForwardResult:
    """Simulate the network on ``inputs`` of shape ``[time, batch, channels]``.

    ``params`` is a :class:`NetworkParams` or a dict of tensors with the same
    names (the trainer passes tensors that require grad).
    """
    if isinstance(params, NetworkParams):
        params = params.arrays()
    w_in = _as_tensor(params["w_in"], dtype)
    w_rec = _as_tensor(params["w_rec"], dtype)
    w_out = _as_tensor(params["w_out"], dtype)
    b_out = params.get("b_out")
    x = _as_tensor(inputs, w_in.dtype)
    n_steps, batch, _ = x.shape
    n = w_rec.shape[0]
    alpha, kappa = lif.alpha, lif.kappa
    syn_decay = math.exp(-1.0 / lif.tau_syn) if lif.tau_syn > 0 else 0.0
    if spike_fn == "surrogate":
        def spike(u):
            return SurrogateSpike.apply(u, lif.surrogate_beta)
    elif spike_fn == "smooth":
        def spike(u):
            return smooth_spike(u, lif.surrogate_beta)
    else:
        raise ConfigError(f"unknown spike_fn {spike_fn!r}")

    ff = torch.matmul(x, w_in)  # [T, B, N], all feed-forward drive at once
    ff_ok = torch.isfinite(ff.detach()).flatten(1).all(dim=1)
    if not bool(ff_ok.all()):
        raise NumericalError("non-finite input drive", step=int((~ff_ok).nonzero()[0, 0]))
    v = x.new_zeros(batch, n)
    i_syn = x.new_zeros(batch, n)
    r = x.new_zeros(batch, w_out.shape[1])
    refr = torch.zeros(batch, n, dtype=torch.int64) if lif.refractory else None
    spikes, reads, volts = [], [], [v] if record_v else None
    for t in range(n_steps):
        s = spike(v - lif.v_threshold)
        drive = ff[t] + s @ w_rec
        i_syn = syn_decay * i_syn + drive if syn_decay else drive
        v = alpha * (v * (1.0 - s) + lif.v_reset * s) + (1.0 - alpha) * i_syn
        if refr is not None:
            # clamp to reset for `refractory` steps, starting with the spike step
            refr = torch.clamp(refr - 1, min=0) + lif.refractory * (s.detach() > 0).long()
            v = torch.where(refr > 0, torch.full_like(v, lif.v_reset), v)
        r = kappa * r + (1.0 - kappa) * (s @ w_out)
        spikes.append(s)
        reads.append(r)
        if record_v:
            volts.append(v)
    readout = torch.stack(reads)
    finite = torch.isfinite(readout.detach()).flatten(1).all(dim=1)
    if not bool(finite.all()):
        raise NumericalError("non-finite readout", step=int((~finite).nonzero()[0, 0]))
    if b_out is not None:
        readout = readout + _as_tensor(b_out, readout.dtype) / n_steps
    return ForwardResult(torch.stack(spikes), readout, torch.stack(volts) if record_v else None)


def loss(logits, labels, w_rec=None, lambda_l1: float = 0.0):
    """Cross-entropy of time-summed readout plus ``lambda * |w_rec|_1``."""
    labels = torch.as_tensor(np.asarray(labels) if not isinstance(labels, torch.Tensor) else labels,
                             dtype=torch.long)
    out = F.cross_entropy(logits, labels)
    if w_rec is not None and lambda_l1:
        out = out + lambda_l1 * w_rec.abs().sum()
    return out


# -- training ----------------------------------------------------------------


@dataclass
class OptimizerConfig:
    name: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0
    batch_size: int = 32

    def __post_init__(self):
        if self.name not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.name!r}")
        if not self.lr > 0 or self.batch_size < 1:
            raise ConfigError("lr must be > 0 and batch_size >= 1")


@dataclass
class TrainData:
    x_train: np.ndarray  # [sample, time, channel]
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def n_channels(self) -> int:
        return self.x_train.shape[2]


@dataclass
class TrainResult:
    params: NetworkParams
    log: list = field(default_factory=list)
    events: list = field(default_factory=list)
    final_report: object = None


def evaluate(params, x, y, lif: LIFParams, batch_size: int = 256):
    """Mean cross-entropy and accuracy on ``x [sample, time, channel]``."""
    total, correct, n = 0.0, 0, len(y)
    with torch.no_grad():
        for lo in range(0, n, batch_size):
            xb = torch.as_tensor(x[lo:lo + batch_size]).transpose(0, 1)
            logits = lif_forward(params, xb, lif).logits
            yb = torch.as_tensor(y[lo:lo + batch_size], dtype=torch.long)
            total += float(F.cross_entropy(logits, yb, reduction="sum"))
            correct += int((logits.argmax(dim=1) == yb).sum())
    return total / max(n, 1), correct / max(n, 1)


def _reset_adam_entries(opt, tensor, flat_idx):
    st = opt.state.get(tensor)
    if not st or flat_idx.size == 0:
        return
    idx = torch.as_tensor(flat_idx, dtype=torch.long)
    for key in ("exp_avg", "exp_avg_sq", "momentum_buffer"):
        buf = st.get(key)
        if buf is not None:
            buf.view(-1)[idx] = 0.0


def train(
    params: NetworkParams,
    state: RewireState,
    data: TrainData,
    optimizer: OptimizerConfig = OptimizerConfig(),
    epochs: int = 10,
    seed=0,
    lif: LIFParams = LIFParams(),
    rewiring: bool = True,
    map_every: int = 10,
    input_mask=None,
    check_invariants: bool = True,
    memory_budget: int | None = None,
) -> TrainResult:
    """Masked gradient descent with a rewiring step after every epoch.

    With ``rewiring=False`` the initial mask is kept throughout (the
    L1-only baseline); its final network is pruned once, by threshold, or
    with ``memory_budget`` by dropping the weakest connections until the
    routed memory fits the budget.
    Every log row records per-hop active counts, and every ``map_every``
    epochs (and at the end) the network is routed and checked.
    ``input_mask`` (channels x neurons) pins the input projection to the
    allowed entries and is counted against NT fan-in when routing.
    """
    root = np.random.SeedSequence(seed)
    torch_seed, shuffle_seed, rewire_seed = root.spawn(3)
    torch.manual_seed(int(torch_seed.generate_state(1)[0]))
    shuffle_rng = np.random.default_rng(shuffle_seed)
    rewire_seeds = iter(rewire_seed.spawn(max(epochs, 1)))

    tensors = {k: torch.nn.Parameter(torch.as_tensor(v.copy())) for k, v in params.arrays().items()}
    active_t = torch.as_tensor(state.active.astype(np.float32))
    in_mask_t = None
    if input_mask is not None:
        input_mask = np.asarray(input_mask, dtype=bool)
        in_mask_t = torch.as_tensor(input_mask.astype(np.float32))
        with torch.no_grad():
            tensors["w_in"].mul_(in_mask_t)
    if optimizer.name == "adam":
        opt = torch.optim.Adam(tensors.values(), lr=optimizer.lr)
    else:
        opt = torch.optim.SGD(tensors.values(), lr=optimizer.lr, momentum=optimizer.momentum)

    def current() -> NetworkParams:
        return NetworkParams(**{k: v.detach().numpy().copy() for k, v in tensors.items()})

    result = TrainResult(params=params)

    def safe_eval(p, x, y, epoch):
        try:
            return evaluate(p, x, y, lif)
        except NumericalError as exc:
            raise TrainingDiverged("non-finite readout during evaluation", epoch=epoch,
                                   step=exc.step, log=result.log, params=p) from exc

    def log_row(epoch, train_loss, event=None, map_now=False):
        p = current()
        test_loss, test_acc = safe_eval(p, data.x_test, data.y_test, epoch)
        _, train_acc = safe_eval(p, data.x_train, data.y_train, epoch)
        hop = state.hop_counts()
        row = {
            "epoch": epoch,
            "train_loss": train_loss,
            "test_loss": test_loss,
            "train_acc": train_acc,
            "test_acc": test_acc,
            "l1": l1_loss_term(p, state.lambda_l1, state.active),
            "n_active": int(state.active.sum()),
            "hop_counts": ";".join(str(int(c)) for c in hop),
            # budgets met, inactive weights exactly zero, no ineligible pair active
            "budget_ok": not consistency_errors(p, state),
            "pruned": int(event.pruned.sum()) if event is not None else 0,
            "regrown": int(event.regrown.sum()) if event is not None else 0,
            "mappable": "",
            "memory_elements": "",
        }
        if map_now and state.lattice is not None:
            rep = check_mappable(state.active, state.placement, state.lattice, input_mask=input_mask)
            row["mappable"] = rep.mappable
            row["memory_elements"] = rep.occupancy.memory_elements()
            result.final_report = rep
        if check_invariants:
            errs = consistency_errors(p, state) if rewiring else []
            if errs:
                raise AssertionError(f"epoch {epoch}: rewiring invariant broken: {errs}")
        result.log.append(row)
        return row

    init_loss, _ = safe_eval(current(), data.x_train, data.y_train, 0)
    log_row(0, init_loss, map_now=(epochs == 0))

    n = len(data.y_train)
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(n)
        running, seen = 0.0, 0
        for lo in range(0, n, optimizer.batch_size):
            idx = order[lo:lo + optimizer.batch_size]
            xb = torch.as_tensor(data.x_train[idx]).transpose(0, 1)
            yb = torch.as_tensor(data.y_train[idx], dtype=torch.long)
            opt.zero_grad()
            try:
                out = lif_forward(tensors, xb, lif)
            except NumericalError as exc:
                raise TrainingDiverged("non-finite readout", epoch=epoch, step=exc.step, log=result.log,
                                       params=current()) from exc
            batch_loss = loss(out.logits, yb, tensors["w_rec"], state.lambda_l1)
            if not torch.isfinite(batch_loss):
                raise TrainingDiverged("non-finite loss", epoch=epoch, log=result.log,
                                       params=current())
            batch_loss.backward()
            tensors["w_rec"].grad.mul_(active_t)
            if in_mask_t is not None:
                tensors["w_in"].grad.mul_(in_mask_t)
            opt.step()
            with torch.no_grad():
                tensors["w_rec"].mul_(active_t)
                if in_mask_t is not None:
                    tensors["w_in"].mul_(in_mask_t)
            running += batch_loss.item() * len(idx)
            seen += len(idx)

        event = None
        if rewiring:
            p, event = rewire_epoch(current(), state, next(rewire_seeds), epoch=epoch)
            with torch.no_grad():
                tensors["w_rec"].copy_(torch.as_tensor(p.w_rec))
            active_t = torch.as_tensor(state.active.astype(np.float32))
            _reset_adam_entries(opt, tensors["w_rec"], state.last_regrown)
            result.events.append(event)
        elif epoch == epochs:
            # baseline: drop the weights L1 pushed under threshold, once
            if memory_budget is None:
                p = prune(current(), state)
            else:
                p = prune_to_memory(current(), state, memory_budget, input_mask=input_mask)
            with torch.no_grad():
                tensors["w_rec"].copy_(torch.as_tensor(p.w_rec))
        map_now = epoch == epochs or (map_every and epoch % map_every == 0)
        row = log_row(epoch, running / max(seen, 1), event, map_now=map_now)
        log.info("epoch %d loss %.4f train %.3f test %.3f", epoch, row["train_loss"],
                 row["train_acc"], row["test_acc"])
        if not math.isfinite(row["test_loss"]):
            raise TrainingDiverged("non-finite evaluation loss", epoch=epoch, log=result.log,
                                   params=current())

    result.params = current()
    return result


def lif_config_dict(lif: LIFParams) -> dict:
    return asdict(lif)


__all__ = [
    "LIFParams", "NetworkParams", "NumericalError", "OptimizerConfig", "TrainData",
    "TrainResult", "evaluate", "lif_forward", "loss", "surrogate_grad", "train",
]
