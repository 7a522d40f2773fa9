"""Packet delay and broadcast delivery ratio of the target vehicle."""
from __future__ import annotations

import numpy as np


class MetricsError(ArithmeticError):
    pass


def initial_delay(L: float, lam: float) -> float:
    """Little's law ``PD = L / lam``."""
    if lam <= 0:
        raise MetricsError("delay is undefined without arrivals")
    return L / lam


def delay_update(pd_prev: float, delta_L: float, lam: float) -> float:
    """Advance the delay by ``integral of dL/dt / lam`` over one step.

    ``delta_L`` is the step's increment of the integrated queue length, which
    is the exact integral of its rate; ``lam`` is constant within the step.
    """
    if lam <= 0:
        raise MetricsError("delay is undefined without arrivals")
    return pd_prev + delta_L / lam


def _silence(sigma0, sigma1) -> np.ndarray:
    return (1.0 - np.asarray(sigma0, float)) * (1.0 - np.asarray(sigma1, float))


def exposed_collision(h, sigma0, sigma1, sender: int, receiver: int) -> float:
    """Chance that another station in the sender's range transmits in the same slot.

    The sender is excluded from the product; the receiver is not, since its
    own transmission also spoils the reception.
    """
    h = np.asarray(h)
    if not h[sender, receiver]:
        raise MetricsError("receiver is out of the sender's range")
    mask = h[sender].astype(bool)
    mask[sender] = False
    return float(1.0 - np.prod(_silence(sigma0, sigma1)[mask]))


def hidden_collision(h, sigma0, sigma1, sender: int, receiver: int,
                     t_tr: float, t_slot: float) -> float:
    """Chance that a station heard by the receiver but not the sender transmits
    within the ``2 * t_tr`` vulnerable window."""
    h = np.asarray(h)
    if not h[sender, receiver]:
        raise MetricsError("receiver is out of the sender's range")
    mask = h[receiver].astype(bool) & ~h[sender].astype(bool)
    return float(1.0 - np.prod(_silence(sigma0, sigma1)[mask] ** (2.0 * t_tr / t_slot)))


def collision_probabilities(h, sigma0, sigma1, sender: int, t_tr: float, t_slot: float):
    """Total collision probability at every vehicle; NaN outside the sender's range.

    Vectorised form of ``1 - (1 - exposed) * (1 - hidden)`` using log-products.
    """
    h = np.asarray(h).astype(bool)
    with np.errstate(divide="ignore"):
        log_s = np.log(_silence(sigma0, sigma1))
    in_s = h[sender]
    excl = in_s.copy()
    excl[sender] = False
    log_exposed = log_s[excl].sum()
    hidden_src = np.where(~in_s, log_s, 0.0)
    log_hidden = (2.0 * t_tr / t_slot) * (h.astype(float) @ hidden_src)
    # -inf * 0 cannot occur: hidden_src only carries entries outside the sender's range
    pc = -np.expm1(log_exposed + log_hidden)
    return np.where(in_s, pc, np.nan)


def pdr(h, sigma0, sigma1, served_rate: float, lam: float, target: int,
        t_tr: float, t_slot: float) -> float:
    """Delivery ratio of the target's broadcasts.

    ``served_rate`` is the target's departure rate ``mu * rho``; every
    in-range vehicle other than the target is a receiver.  While a queue
    drains the served rate exceeds ``lam``; the ratio is capped at one.
    """
    if lam <= 0:
        raise MetricsError("PDR is undefined without arrivals")
    h = np.asarray(h)
    recv = h[target].astype(bool)
    recv[target] = False
    if not recv.any():
        raise MetricsError("target has no receivers in range")
    pc = collision_probabilities(h, sigma0, sigma1, target, t_tr, t_slot)[recv]
    return min(float(np.sum(served_rate * (1.0 - pc)) / (recv.sum() * lam)), 1.0)
