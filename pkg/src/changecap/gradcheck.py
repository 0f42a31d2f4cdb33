"""Finite-difference verification of analytic gradients.

``grad_check`` reruns a scalar-valued forward function under central
differences, (f(x+eps) - f(x-eps)) / 2eps, and compares against the
gradients produced by the tape.  Inputs should be float64; float32 does
not leave enough headroom for the difference quotient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class GradCheckEntry:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst: GradCheckEntry | None
    entries: list[GradCheckEntry] = field(default_factory=list)

    def passed(self, tol: float) -> bool:
        return self.max_rel_err <= tol

    def __str__(self):
        w = self.worst
        where = f" worst={w.name}{list(w.index)} analytic={w.analytic:.3e} numeric={w.numeric:.3e}" if w else ""
        return f"grad_check max_rel_err={self.max_rel_err:.3e}{where}"


def _rel_err(analytic: float, numeric: float, floor: float) -> float:
    denom = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / denom


def grad_check(
    f,
    tensors: dict[str, Tensor],
    eps: float = 1e-4,
    samples_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` takes no arguments, closes over ``tensors``, and must be
    deterministic and re-runnable.  When ``samples_per_tensor`` is set,
    only that many randomly chosen coordinates per tensor are probed;
    otherwise every coordinate is.
    """
    for t in tensors.values():
        if t.dtype != np.float64:
            raise ValueError("grad_check requires float64 tensors")
        t.zero_grad()

    loss = f()
    ad.backward(loss)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in tensors.items()}

    rng = rng or np.random.default_rng(0)
    entries: list[GradCheckEntry] = []
    with ad.no_grad():
        for name, t in tensors.items():
            flat = t.data.reshape(-1)
            n = flat.shape[0]
            if samples_per_tensor is None or samples_per_tensor >= n:
                idx = np.arange(n)
            else:
                idx = rng.choice(n, size=samples_per_tensor, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = f().item()
                flat[i] = orig - eps
                f_minus = f().item()
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = float(analytic[name].reshape(-1)[i])
                entries.append(GradCheckEntry(
                    name=name,
                    index=np.unravel_index(int(i), t.shape),
                    analytic=a,
                    numeric=numeric,
                    rel_err=_rel_err(a, numeric, floor),
                ))

    worst = max(entries, key=lambda e: e.rel_err) if entries else None
    return GradCheckReport(
        max_rel_err=worst.rel_err if worst else 0.0,
        worst=worst,
        entries=entries,
    )
