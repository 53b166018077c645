"""
Gradient plumbing and Adam optimization for the field parameter groups.

torch autograd records one graph per loss evaluation and frees it after
``backward``; this module adds what training needs on top of it: term-wise
finiteness checks, zero gradients for parameters a loss never reached, the
cosine learning-rate schedule and an exportable optimizer state.
"""

import logging
import math
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

logger = logging.getLogger(__name__)


class NonFiniteLossError(Exception):
    """A loss term evaluated to NaN or Inf; the step must be discarded."""

    def __init__(self, term: str, value: float):
        self.term = term
        self.value = value
        super().__init__(f"loss term '{term}' is not finite ({value})")


def cosine_lr(step: int, total_steps: int, lr_init: float = 1e-2, lr_final: float = 1e-4) -> float:
    """Cosine decay from ``lr_init`` at step 0 to ``lr_final`` at ``total_steps``."""
    if total_steps <= 0:
        return lr_final
    progress = min(max(step / total_steps, 0.0), 1.0)
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + math.cos(math.pi * progress))


def check_finite(terms: Mapping[str, torch.Tensor]) -> None:
    """Raise NonFiniteLossError naming the first non-finite term."""
    for name, value in terms.items():
        if not bool(torch.isfinite(value).all()):
            raise NonFiniteLossError(name, float(value.detach().reshape(-1)[0]))


class ParameterStore:
    """
    A named parameter group with its own Adam optimizer.

    Adam moments live in the wrapped ``torch.optim.Adam``; ``export_state`` and
    ``import_state`` expose them (plus the step counter) as plain arrays for
    checkpointing.
    """

    def __init__(
        self,
        name: str,
        named_parameters: Iterable[Tuple[str, nn.Parameter]],
        lr: float = 1e-2,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-15,
    ):
        self.name = name
        self.parameters: Dict[str, nn.Parameter] = dict(named_parameters)
        self.optimizer = torch.optim.Adam(
            list(self.parameters.values()), lr=lr, betas=betas, eps=eps, foreach=False,
        )
        self.step_count = 0
        logger.info(
            f"ParameterStore '{name}': {len(self.parameters)} tensors, "
            f"{sum(p.numel() for p in self.parameters.values())} values"
        )

    def zero_grad(self) -> None:
        self.optimizer.zero_grad(set_to_none=True)

    def fill_missing_grads(self) -> None:
        """Parameters the loss did not reach get an explicit zero gradient."""
        for param in self.parameters.values():
            if param.grad is None:
                param.grad = torch.zeros_like(param)

    def grad_norm(self) -> float:
        total = 0.0
        for param in self.parameters.values():
            if param.grad is not None:
                total += float(param.grad.detach().double().pow(2).sum())
        return math.sqrt(total)

    def step(self, lr: float) -> None:
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.step()
        self.step_count += 1

    def export_state(self) -> Dict[str, Dict[str, np.ndarray]]:
        """Per parameter: value, Adam m, Adam v and the Adam step as float32 arrays."""
        exported: Dict[str, Dict[str, np.ndarray]] = {}
        for name, param in self.parameters.items():
            state = self.optimizer.state.get(param, {})
            value = param.detach().cpu().numpy().astype(np.float32)
            m = state.get("exp_avg")
            v = state.get("exp_avg_sq")
            step = state.get("step", 0)
            exported[name] = {
                "value": value,
                "m": np.zeros_like(value) if m is None else m.detach().cpu().numpy().astype(np.float32),
                "v": np.zeros_like(value) if v is None else v.detach().cpu().numpy().astype(np.float32),
                "step": np.asarray([float(step)], dtype=np.float32),
            }
        return exported

    def import_state(self, state: Mapping[str, Mapping[str, np.ndarray]]) -> None:
        missing = set(self.parameters) - set(state)
        if missing:
            raise KeyError(f"store '{self.name}' is missing parameters: {sorted(missing)[:5]}")
        with torch.no_grad():
            for name, param in self.parameters.items():
                entry = state[name]
                param.copy_(torch.from_numpy(np.asarray(entry["value"])).reshape(param.shape))
                step = float(np.asarray(entry["step"]).reshape(-1)[0])
                if step > 0:
                    self.optimizer.state[param] = {
                        "step": torch.tensor(step, dtype=torch.float32),
                        "exp_avg": torch.from_numpy(np.array(entry["m"])).reshape(param.shape).to(param.dtype),
                        "exp_avg_sq": torch.from_numpy(np.array(entry["v"])).reshape(param.shape).to(param.dtype),
                    }
                else:
                    self.optimizer.state.pop(param, None)


def backward(
    loss: torch.Tensor,
    stores: Sequence[ParameterStore],
    terms: Optional[Mapping[str, torch.Tensor]] = None,
) -> Dict[str, float]:
    """
    Accumulate d(loss)/d(theta) into every store.

    Args:
        loss: scalar total
        stores: parameter groups to receive gradients
        terms: named loss terms checked for finiteness first

    Returns:
        Gradient norm per store name

    Raises:
        NonFiniteLossError: a term (or the total) is NaN/Inf; no gradient is written
    """
    check_finite(dict(terms or {}, total=loss))
    for store in stores:
        store.zero_grad()
    loss.backward()
    norms = {}
    for store in stores:
        store.fill_missing_grads()
        norms[store.name] = store.grad_norm()
    return norms


def adam_step(store: ParameterStore, lr: float) -> None:
    """One Adam update of ``store`` with learning rate ``lr``."""
    store.step(lr)
