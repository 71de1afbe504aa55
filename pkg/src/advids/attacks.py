"""Feature-space evasion attacks under traffic constraints.

Every attack returns points that keep immutable columns bit-identical to
the original, stay within an L-infinity budget of the original and inside
[0, 1]. All functions accept a single vector or a batch of rows and never
modify the model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import netcore as nc
from .errors import ConfigurationError, DataError, DegenerateGradientError, NumericError, ShapeError

KINDS = ("fgsm", "pgd", "cw", "df")


@dataclass(frozen=True, eq=False)
class AttackConstraints:
    mutable_mask: np.ndarray
    max_perturbation: float = 0.1
    value_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        mask = np.asarray(self.mutable_mask, dtype=bool).ravel()
        object.__setattr__(self, "mutable_mask", mask)
        if not 0.0 < self.max_perturbation <= 1.0:
            raise ConfigurationError("max_perturbation must lie in (0, 1]")
        lo, hi = self.value_range
        if not lo < hi:
            raise ConfigurationError("value_range must be increasing")

    @property
    def width(self) -> int:
        return self.mutable_mask.shape[0]

    @classmethod
    def free(cls, width: int, max_perturbation: float = 0.1) -> "AttackConstraints":
        return cls(np.ones(width, dtype=bool), max_perturbation)

    @classmethod
    def from_schema(cls, schema, max_perturbation: float = 0.1) -> "AttackConstraints":
        return cls(schema.mutable_mask.copy(), max_perturbation)

    def restrict(self, cols) -> "AttackConstraints":
        return AttackConstraints(self.mutable_mask[np.asarray(cols, dtype=int)],
                                 self.max_perturbation, self.value_range)


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    epsilon: float = 0.1
    # pgd
    step_size: float = 0.02
    iterations: int = 10
    # deepfool
    overshoot: float = 0.02
    max_iterations: int = 50
    # carlini-wagner
    confidence: float = 0.0
    c_init: float = 1.0
    cw_iterations: int = 100
    cw_step: float = 0.01
    binary_search_steps: int = 5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown attack {self.kind!r}; expected one of {KINDS}")
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be non-negative")
        counts = (self.iterations, self.max_iterations, self.cw_iterations, self.binary_search_steps)
        if min(counts) < 1:
            raise ConfigurationError("iteration counts must be at least 1")
        if self.kind == "pgd" and self.step_size > self.epsilon > 0:
            raise ConfigurationError("pgd step_size must not exceed epsilon")
        if self.overshoot < 0 or self.confidence < 0 or self.c_init <= 0 or self.cw_step <= 0:
            raise ConfigurationError("overshoot, confidence must be >= 0; c_init, cw_step > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def key(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# ------------------------------------------------------------ projection ---

def _rows(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    return (x[None, :] if single else x), single


def project(x_adv, x_orig, c: AttackConstraints, budget: float | None = None) -> np.ndarray:
    """Restore immutable columns, clip to the L-inf ball and the value range."""
    xa, single = _rows(x_adv)
    xo, _ = _rows(x_orig)
    if xa.shape != xo.shape or xa.shape[1] != c.width:
        raise ShapeError(f"shapes {xa.shape}, {xo.shape} do not match constraint width {c.width}")
    eps = c.max_perturbation if budget is None else min(float(budget), c.max_perturbation)
    out = np.clip(xa, xo - eps, xo + eps)
    out = np.clip(out, *c.value_range)
    # x + eps can round so that (x + eps) - x > eps; step back one ulp until exact
    for _ in range(4):
        over = np.abs(out - xo) > eps
        if not over.any():
            break
        out[over] = np.nextafter(out[over], xo[over])
    out = np.where(c.mutable_mask, out, xo)
    return out[0] if single else out


def _check_finite(g: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite {what}")


def _loss_for(net: nc.Network) -> str:
    return "binary_cross_entropy" if net.head == "sigmoid" else "categorical_cross_entropy"


def _labels(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).ravel()
    if y.size == 1 and n != 1:
        y = np.full(n, int(y[0]))
    if y.shape[0] != n:
        raise ShapeError(f"{y.shape[0]} labels for {n} rows")
    return y


# ------------------------------------------------------------ fgsm / pgd ---

def fgsm(net: nc.Network, x, y_true, eps: float, c: AttackConstraints) -> np.ndarray:
    if eps < 0:
        raise ConfigurationError("eps must be non-negative")
    xb, single = _rows(x)
    g = nc.grad_input(net, xb, _labels(y_true, xb.shape[0]), _loss_for(net))
    _check_finite(g, "input gradient")
    out = project(xb + eps * np.sign(g), xb, c, budget=eps)
    return out[0] if single else out


def pgd(net: nc.Network, x, y_true, eps: float, step: float, iters: int,
        c: AttackConstraints) -> np.ndarray:
    """Iterated FGSM with projection onto the eps-ball; no random start."""
    if eps < 0 or step < 0 or iters < 1:
        raise ConfigurationError("need eps, step >= 0 and iters >= 1")
    if step > eps:
        raise ConfigurationError("step must not exceed eps")
    xb, single = _rows(x)
    y = _labels(y_true, xb.shape[0])
    loss = _loss_for(net)
    out = xb.copy()
    for _ in range(iters):
        g = nc.grad_input(net, out, y, loss)
        _check_finite(g, "input gradient")
        out = project(out + step * np.sign(g), xb, c, budget=eps)
    return out[0] if single else out


# -------------------------------------------------------------- deepfool ---

def _margin_coeffs(net: nc.Network) -> np.ndarray:
    """Coefficients turning the logits into the binary margin f (f > 0 means class 1)."""
    if net.head == "sigmoid" and net.output_dim == 1:
        return np.array([1.0])
    if net.output_dim == 2:
        return np.array([-1.0, 1.0])
    raise ConfigurationError("deepfool needs a binary classifier head")


def deepfool(net: nc.Network, x, overshoot: float, max_iters: int, c: AttackConstraints,
             y_true=None, on_degenerate: str = "raise") -> np.ndarray:
    """Binary DeepFool restricted to mutable columns.

    Rows whose prediction already differs from ``y_true`` are returned
    unchanged. ``on_degenerate="skip"`` leaves rows with a zero masked
    gradient at their current perturbation instead of raising.
    """
    if on_degenerate not in ("raise", "skip"):
        raise ConfigurationError("on_degenerate must be 'raise' or 'skip'")
    coeffs = _margin_coeffs(net)
    xb, single = _rows(x)
    mask = c.mutable_mask.astype(np.float64)
    n = xb.shape[0]
    start = nc.predict_labels(net, xb)
    active = np.ones(n, dtype=bool) if y_true is None else start == _labels(y_true, n)
    r_tot = np.zeros_like(xb)
    scale = 1.0 + overshoot
    for _ in range(max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xi = project(xb[idx] + scale * r_tot[idx], xb[idx], c)
        z, g = nc.logit_grad(net, xi, coeffs)
        f = z @ coeffs
        now = (f >= 0) if coeffs.size == 1 else (f > 0)
        flipped = now.astype(np.int64) != start[idx]
        active[idx[flipped]] = False
        keep = ~flipped
        idx, f, w = idx[keep], f[keep], g[keep] * mask
        _check_finite(w, "margin gradient")
        norm2 = np.sum(w * w, axis=1)
        flat = norm2 == 0
        if flat.any():
            if on_degenerate == "raise":
                raise DegenerateGradientError(
                    f"zero gradient on mutable features for row {int(idx[flat][0])}"
                )
            active[idx[flat]] = False
            idx, f, w, norm2 = idx[~flat], f[~flat], w[~flat], norm2[~flat]
        r_tot[idx] += -(f / norm2)[:, None] * w
    out = project(xb + scale * r_tot, xb, c)
    return out[0] if single else out


# ---------------------------------------------------------- carlini-wagner ---

def carlini_wagner(net: nc.Network, x, target_class, spec: AttackSpec, c: AttackConstraints,
                   return_success: bool = False):
    """Targeted L2 attack: minimise c*||d||^2 + max(Z_other - Z_target, -kappa).

    ``c`` weights the distance term, so a successful attempt raises it (asking
    for a smaller perturbation) and a failed one lowers it. Each row returns
    its smallest successful perturbation; rows that never reach the target
    return their lowest-objective attempt. Optimisation is Adam on d with
    learning rate ``spec.cw_step``, projecting onto the constraints after
    every step.
    """
    if net.output_dim != 2:
        raise ConfigurationError("carlini_wagner expects a two-logit classifier")
    xb, single = _rows(x)
    n = xb.shape[0]
    t = _labels(target_class, n)
    if np.any((t < 0) | (t > 1)):
        raise ConfigurationError("target class must be 0 or 1")
    sign = np.where(t == 1, 1.0, -1.0)  # margin = Z_other - Z_target = sign * (Z0 - Z1)
    mask = c.mutable_mask.astype(np.float64)
    kappa = spec.confidence
    b1, b2, adam_eps = 0.9, 0.999, 1e-8

    done = nc.predict_labels(net, xb) == t
    best = xb.copy()
    best_dist = np.where(done, 0.0, np.inf)
    fallback = xb.copy()
    fallback_obj = np.full(n, np.inf)
    const = np.full(n, float(spec.c_init))
    lo, hi = np.zeros(n), np.full(n, np.inf)

    todo = np.flatnonzero(~done)
    for _ in range(spec.binary_search_steps):
        if todo.size == 0:
            break
        x0, ct, sg = xb[todo], const[todo], sign[todo]
        coeffs = np.stack([sg, -sg], axis=1)
        delta = np.zeros_like(x0)
        m, v = np.zeros_like(x0), np.zeros_like(x0)
        hit = np.zeros(todo.size, dtype=bool)
        for step in range(1, spec.cw_iterations + 1):
            z, g = nc.logit_grad(net, x0 + delta, coeffs)
            margin = (z[:, 0] - z[:, 1]) * sg
            dist = np.sum(delta * delta, axis=1)
            obj = ct * dist + np.maximum(margin, -kappa)
            if not np.all(np.isfinite(obj)):
                raise NumericError("non-finite carlini-wagner objective")
            # record the current iterate before stepping
            reached = margin <= -kappa if kappa > 0 else np.argmax(z, axis=1) == t[todo]
            sel = reached & (dist < best_dist[todo])
            best[todo[sel]] = x0[sel] + delta[sel]
            best_dist[todo[sel]] = dist[sel]
            hit |= reached
            lower = obj < fallback_obj[todo]
            fallback[todo[lower]] = x0[lower] + delta[lower]
            fallback_obj[todo[lower]] = obj[lower]

            grad = 2.0 * ct[:, None] * delta + np.where((margin > -kappa)[:, None], g, 0.0)
            grad *= mask
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            mhat = m / (1 - b1 ** step)
            vhat = v / (1 - b2 ** step)
            delta = project(x0 + delta - spec.cw_step * mhat / (np.sqrt(vhat) + adam_eps),
                            x0, c) - x0
        # final iterate
        z = nc.logits(net, x0 + delta)
        dist = np.sum(delta * delta, axis=1)
        reached = np.argmax(z, axis=1) == t[todo]
        sel = reached & (dist < best_dist[todo])
        best[todo[sel]] = x0[sel] + delta[sel]
        best_dist[todo[sel]] = dist[sel]
        hit |= reached

        lo[todo[hit]] = np.maximum(lo[todo[hit]], ct[hit])
        hi[todo[~hit]] = np.minimum(hi[todo[~hit]], ct[~hit])
        nxt = np.where(np.isinf(hi[todo]), ct * 10.0, (lo[todo] + hi[todo]) / 2.0)
        const[todo] = nxt

    success = np.isfinite(best_dist)
    out = np.where(success[:, None], best, fallback)
    out = project(out, xb, c)
    if single:
        out, success = out[0], success[0]
    return (out, success) if return_success else out


# ---------------------------------------------------------- dispatching ---

def attack_network(net: nc.Network, X, y, spec: AttackSpec, c: AttackConstraints) -> np.ndarray:
    if spec.epsilon > c.max_perturbation:
        raise ConfigurationError("attack epsilon exceeds the constraint budget")
    if spec.kind == "fgsm":
        return fgsm(net, X, y, spec.epsilon, c)
    if spec.kind == "pgd":
        return pgd(net, X, y, spec.epsilon, spec.step_size, spec.iterations, c)
    if spec.kind == "df":
        return deepfool(net, X, spec.overshoot, spec.max_iterations, c, y_true=y,
                        on_degenerate="skip")
    # evasion framing: push every row towards the other class
    return carlini_wagner(net, X, 1 - _labels(y, np.shape(np.atleast_2d(X))[0]), spec, c)


def attack_parallel(pids, X, y, spec: AttackSpec, c: AttackConstraints) -> np.ndarray:
    """Attack each ensemble member on its own column slice and reassemble."""
    xb, single = _rows(X)
    if xb.shape[1] != pids.input_dim or c.width != pids.input_dim:
        raise ShapeError(f"expected {pids.input_dim} columns, got {xb.shape[1]}")
    out = xb.copy()
    for net, cols in zip(pids.ensemble, pids.clusters.clusters):
        cols = list(cols)
        out[:, cols] = attack_network(net, xb[:, cols], y, spec, c.restrict(cols))
    return out[0] if single else out


def run_attack(model, X, y, spec: AttackSpec, c: AttackConstraints,
               batch_size: int = 4096) -> np.ndarray:
    """Attack a serial IDS, parallel IDS or bare network, in row batches."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        return X.copy()
    parts = []
    for s in range(0, X.shape[0], batch_size):
        xs, ys = X[s:s + batch_size], y[s:s + batch_size]
        if getattr(model, "design", None) == "parallel":
            parts.append(attack_parallel(model, xs, ys, spec, c))
        else:
            parts.append(attack_network(getattr(model, "net", model), xs, ys, spec, c))
    return np.vstack(parts)


# ----------------------------------------------------------- persistence ---

def manifest_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".manifest.json")


def save_adversarial(X_adv, path, spec: AttackSpec, source_hash: str, model_fingerprint: str,
                     seed: int | None = None) -> Path:
    X_adv = np.asarray(X_adv, dtype=np.float64)
    header = ",".join(f"f{i}" for i in range(X_adv.shape[1]))
    np.savetxt(path, X_adv, fmt="%.17g", delimiter=",", header=header, comments="")
    manifest = {"attack": spec.kind, "hyperparameters": spec.to_dict(), "seed": seed,
                "source_hash": source_hash, "model_fingerprint": model_fingerprint,
                "rows": int(X_adv.shape[0])}
    manifest_path(path).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return Path(path)


def load_adversarial(path) -> tuple[np.ndarray, dict]:
    manifest = json.loads(manifest_path(path).read_text())
    X = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if X.shape[0] != manifest["rows"]:
        raise DataError(f"{path}: {X.shape[0]} rows, manifest says {manifest['rows']}")
    return X, manifest
