"""Adan optimizer with exponential learning-rate decay.

Moments follow the ``beta * old + (1 - beta) * new`` convention, so the
betas (0.98, 0.92, 0.99) are the usual Adan defaults.  Step counts are kept
per leading row: rows that are re-seeded or appended during training get a
genuinely fresh state, bias correction included.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

DEFAULT_BETAS = (0.98, 0.92, 0.99)
DEFAULT_EPS = 1e-8
DEFAULT_LR = 0.01
DEFAULT_GAMMA = 0.99995


class NonFiniteGradient(FloatingPointError):
    """Raised before any parameter is touched when a gradient is NaN or inf."""


def lr_at(step: int, base_lr: float = DEFAULT_LR, gamma: float = DEFAULT_GAMMA) -> float:
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    return base_lr * gamma ** step


def _rows(p: torch.Tensor) -> tuple:
    return (p.shape[0],) if p.dim() else ()


def new_slot(p: torch.Tensor) -> dict:
    z = torch.zeros_like(p)
    return {
        "m": z.clone(), "v": z.clone(), "n": z.clone(), "g_prev": z.clone(),
        "steps": torch.zeros(_rows(p), dtype=torch.int64),
    }


def _bcast(x: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return x.reshape(x.shape + (1,) * (like.dim() - x.dim()))


@torch.no_grad()
def _update_(p: torch.Tensor, g: torch.Tensor, slot: dict, lr: float, betas, eps: float) -> None:
    b1, b2, b3 = betas
    steps = slot["steps"] + 1
    fresh = _bcast(steps == 1, g)
    diff = torch.where(fresh, torch.zeros_like(g), g - slot["g_prev"])
    slot["m"].mul_(b1).add_(g, alpha=1 - b1)
    slot["v"].mul_(b2).add_(diff, alpha=1 - b2)
    slot["n"].mul_(b3).addcmul_(g + b2 * diff, g + b2 * diff, value=1 - b3)
    sf = _bcast(steps.to(g.dtype), g)
    m_hat = slot["m"] / (1 - b1 ** sf)
    v_hat = slot["v"] / (1 - b2 ** sf)
    n_hat = slot["n"] / (1 - b3 ** sf)
    p.sub_(lr * (m_hat + b2 * v_hat) / (n_hat.sqrt() + eps))
    slot["g_prev"].copy_(g)
    slot["steps"] = steps


def _check_finite(named_grads) -> None:
    bad = []
    for name, g in named_grads:
        if g is not None and not torch.isfinite(g).all():
            bad.append(f"{name}: {int((~torch.isfinite(g)).sum())} non-finite of {g.numel()}")
    if bad:
        raise NonFiniteGradient("non-finite gradient, step aborted (" + "; ".join(bad) + ")")


@dataclass
class AdanState:
    """Functional optimizer state for :func:`adan_step`."""

    base_lr: float = DEFAULT_LR
    gamma: float = DEFAULT_GAMMA
    betas: tuple = DEFAULT_BETAS
    eps: float = DEFAULT_EPS
    step: int = 0
    slots: list = field(default_factory=list)


def adan_step(state: AdanState, params, grads) -> list[torch.Tensor]:
    """Return updated copies of ``params``; ``state`` advances in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {tuple(p.shape)} vs {tuple(g.shape)}")
    _check_finite((f"param[{i}]", g) for i, g in enumerate(grads))
    if not state.slots:
        state.slots = [new_slot(p) for p in params]
    lr = lr_at(state.step, state.base_lr, state.gamma)
    out = []
    for p, g, slot in zip(params, grads, state.slots):
        q = p.detach().clone()
        _update_(q, g.detach(), slot, lr, state.betas, state.eps)
        out.append(q)
    state.step += 1
    return out


class Adan(torch.optim.Optimizer):
    """Adan over named parameter groups.

    Each group may carry ``name``, ``lr_mult`` and ``frozen``.  The learning
    rate of a step is ``lr_at(step) * lr_mult``.
    """

    def __init__(self, params, lr: float = DEFAULT_LR, gamma: float = DEFAULT_GAMMA,
                 betas=DEFAULT_BETAS, eps: float = DEFAULT_EPS):
        defaults = dict(lr=lr, lr_mult=1.0, betas=tuple(betas), eps=eps, frozen=False, name="")
        super().__init__(params, defaults)
        self.gamma = gamma
        self.step_count = 0

    def current_lr(self) -> float:
        return lr_at(self.step_count, self.defaults["lr"], self.gamma)

    def group(self, name: str) -> dict:
        for g in self.param_groups:
            if g["name"] == name:
                return g
        raise KeyError(name)

    def _slot(self, p):
        st = self.state[p]
        if not st:
            st.update(new_slot(p))
        return st

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        named = [(f"{g['name'] or 'group'}[{i}]", p.grad)
                 for g in self.param_groups if not g["frozen"] for i, p in enumerate(g["params"])]
        _check_finite(named)
        base = lr_at(self.step_count, 1.0, self.gamma)
        for g in self.param_groups:
            if g["frozen"]:
                continue
            lr = g["lr"] * base * g["lr_mult"]
            for p in g["params"]:
                if p.grad is None:
                    continue
                _update_(p, p.grad, self._slot(p), lr, g["betas"], g["eps"])
        self.step_count += 1
        return loss

    def reset_rows(self, p: torch.Tensor, rows) -> None:
        """Give the listed leading rows of ``p`` a fresh state."""
        st = self.state.get(p)
        if not st:
            return
        rows = torch.as_tensor(rows, dtype=torch.int64)
        for k in ("m", "v", "n", "g_prev"):
            st[k][rows] = 0
        st["steps"][rows] = 0

    def replace_param(self, old: torch.Tensor, new: torch.Tensor) -> None:
        """Swap ``old`` for ``new`` in its group.

        When only the leading dimension grew, state of the existing rows is
        kept and appended rows start fresh; any other shape change resets the
        state entirely.
        """
        for g in self.param_groups:
            for i, p in enumerate(g["params"]):
                if p is old:
                    g["params"][i] = new
                    st = self.state.pop(old, None)
                    if st and old.dim() and old.shape[1:] == new.shape[1:] and new.shape[0] >= old.shape[0]:
                        fresh = new_slot(new)
                        n = old.shape[0]
                        for k in fresh:
                            fresh[k][:n] = st[k]
                        self.state[new] = fresh
                    return
        raise KeyError("parameter not managed by this optimizer")
