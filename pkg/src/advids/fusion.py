"""Decision fusion for banks of adversarial detectors.

Each detector reports a probability that a sample is adversarial. Three
rules turn a vector of such probabilities into one decision: majority vote,
simple Bayes averaging and Dempster-Shafer combination over the frame
{clean, adversarial}. Boundary cases (vote ties, mean or pignistic
probability of exactly 0.5) resolve to "adversarial".
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import ConflictError, InputError

CLEAN = "clean"
ADVERSARIAL = "adversarial"
RULES = ("majority", "bayes_avg", "dempster")

_MASS_TOL = 1e-9


@dataclass(frozen=True)
class BeliefMass:
    """Mass function over {clean, adversarial}; m_omega is the ignorance mass."""

    m_clean: float
    m_adv: float
    m_omega: float

    def __post_init__(self):
        masses = (self.m_clean, self.m_adv, self.m_omega)
        if any(not np.isfinite(m) or m < -_MASS_TOL for m in masses):
            raise InputError(f"masses must be finite and non-negative: {masses}")
        if abs(sum(masses) - 1.0) > _MASS_TOL:
            raise InputError(f"masses must sum to 1, got {sum(masses)!r}")

    @classmethod
    def vacuous(cls) -> "BeliefMass":
        return cls(0.0, 0.0, 1.0)

    def pignistic_adv(self) -> float:
        return self.m_adv + self.m_omega / 2.0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.m_clean, self.m_adv, self.m_omega)


@dataclass(frozen=True)
class FusionDecision:
    label: str
    score: float
    rule: str

    @property
    def adversarial(self) -> bool:
        return self.label == ADVERSARIAL


def _probs(p) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(p, dtype=np.float64))
    if arr.ndim != 1 or arr.size == 0:
        raise InputError("need a non-empty vector of detector probabilities")
    if np.any(~np.isfinite(arr)) or np.any((arr < 0) | (arr > 1)):
        raise InputError("detector probabilities must lie in [0, 1]")
    return arr


def _label(flag: bool) -> str:
    return ADVERSARIAL if flag else CLEAN


def fuse_majority(p, threshold: float = 0.5) -> FusionDecision:
    arr = _probs(p)
    votes = arr >= threshold
    frac = float(np.mean(votes))
    return FusionDecision(_label(frac >= 0.5), frac, "majority")


def fuse_bayes_avg(p) -> FusionDecision:
    mean = float(np.mean(np.sort(_probs(p))))
    return FusionDecision(_label(mean >= 0.5), mean, "bayes_avg")


def to_bba(p_adv: float) -> BeliefMass:
    """Confidence-discounted mass: c = |2p - 1| of the evidence is committed."""
    p = float(p_adv)
    if not np.isfinite(p) or p < 0 or p > 1:
        raise InputError(f"probability out of range: {p_adv!r}")
    c = abs(2.0 * p - 1.0)
    return BeliefMass((1.0 - p) * c, p * c, 1.0 - c)


def dempster_combine(a: BeliefMass, b: BeliefMass) -> BeliefMass:
    kappa = a.m_clean * b.m_adv + a.m_adv * b.m_clean
    clean = a.m_clean * b.m_clean + a.m_clean * b.m_omega + a.m_omega * b.m_clean
    adv = a.m_adv * b.m_adv + a.m_adv * b.m_omega + a.m_omega * b.m_adv
    omega = a.m_omega * b.m_omega
    # clean + adv + omega equals 1 - kappa; dividing by the sum keeps it exact
    total = clean + adv + omega
    if kappa >= 1.0 or total <= 0.0:
        raise ConflictError("total conflict between the two mass functions")
    clean, adv = clean / total, adv / total
    # ignorance as the remainder, so the three masses sum to one in floating point
    return BeliefMass(clean, adv, max(1.0 - clean - adv, 0.0) if omega > 0.0 else 0.0)


def combine_all(masses) -> BeliefMass:
    masses = list(masses)
    if not masses:
        raise InputError("nothing to combine")

    def step(acc, item):
        j, m = item
        try:
            return dempster_combine(acc, m)
        except ConflictError:
            want_clean = m.m_clean == 1.0
            culprits = tuple(
                i for i, prev in enumerate(masses[:j])
                if (prev.m_adv == 1.0 if want_clean else prev.m_clean == 1.0)
            )
            raise ConflictError(
                f"detectors {culprits + (j,)} are in total conflict", culprits + (j,)
            ) from None

    return reduce(step, enumerate(masses[1:], start=1), masses[0])


def fuse_dempster(p) -> FusionDecision:
    arr = _probs(p)
    m = combine_all(to_bba(v) for v in arr)
    bet = m.pignistic_adv()
    return FusionDecision(_label(bet >= 0.5), min(max(bet, 0.0), 1.0), "dempster")


FUSERS = {"majority": fuse_majority, "bayes_avg": fuse_bayes_avg, "dempster": fuse_dempster}


def fuse(p, rule: str) -> FusionDecision:
    try:
        return FUSERS[rule](p)
    except KeyError:
        raise InputError(f"unknown fusion rule {rule!r}") from None


# -- vectorised forms used by the experiment harness (rows = samples) --

def _prob_matrix(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] == 0:
        raise InputError("need a (samples, detectors) probability matrix")
    if np.any(~np.isfinite(P)) or np.any((P < 0) | (P > 1)):
        raise InputError("detector probabilities must lie in [0, 1]")
    return P


def fuse_matrix(P, rule: str, threshold: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Fuse every row of ``P``; returns (adversarial flags, scores)."""
    P = _prob_matrix(P)
    if rule == "majority":
        score = np.mean(P >= threshold, axis=1)
    elif rule == "bayes_avg":
        score = np.mean(np.sort(P, axis=1), axis=1)
    elif rule == "dempster":
        c = np.abs(2.0 * P - 1.0)
        mc, ma, mo = (1.0 - P[:, 0]) * c[:, 0], P[:, 0] * c[:, 0], 1.0 - c[:, 0]
        for j in range(1, P.shape[1]):
            bc, ba, bo = (1.0 - P[:, j]) * c[:, j], P[:, j] * c[:, j], 1.0 - c[:, j]
            kappa = mc * ba + ma * bc
            nc_ = mc * bc + mc * bo + mo * bc
            na_ = ma * ba + ma * bo + mo * ba
            no_ = mo * bo
            total = nc_ + na_ + no_
            bad = (kappa >= 1.0) | (total <= 0.0)
            if np.any(bad):
                row = int(np.flatnonzero(bad)[0])
                raise ConflictError(f"total conflict at sample {row}, detector {j}", (j,))
            mc, ma, mo = nc_ / total, na_ / total, no_ / total
        score = np.clip(ma + mo / 2.0, 0.0, 1.0)
    else:
        raise InputError(f"unknown fusion rule {rule!r}")
    return score >= 0.5, score
