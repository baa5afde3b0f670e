"""Harmonic view of small sine networks and the budget arithmetic comparing them to DCT storage.

A 1-D network with two sine layers of width ``d`` is exactly

    F(x) = b2 + sum_{k in Z^d} sum_i A_{k,i} cos(w_k x + phi'_{k,i})

with ``w_k = <k, W0>``, ``phi'_{k,i} = <k, b0> + b1_i - pi/2`` and
``A_{k,i} = W2_i prod_j J_{k_j}(W1_ij)`` (Jacobi-Anger expansion of each
inner ``sin``).  Truncating to ``|k|_inf <= zeta`` gives a finite sum whose
error shrinks factorially when the second-layer weights are small.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument, SearchSpaceOverflow, TheoremPreconditionViolated, UnsupportedRange
from .field import NeuralField

BESSEL_MAX_ARG = 50.0
SERIES_CUTOFF = 12.0


# -- Bessel functions of the first kind, integer order ------------------------

def _bessel_series(p: int, x: float) -> float:
    half = x / 2.0
    term = half ** p / math.factorial(p)
    total = term
    k = 0
    while True:
        k += 1
        term *= -(half * half) / (k * (k + p))
        total += term
        if abs(term) < 1e-17 * max(abs(total), 1e-300) and k > half:
            return total


def _bessel_miller(p: int, x: float) -> float:
    """Downward recurrence from a high start order, normalized by J0 + 2*sum J_2k = 1."""
    start = 2 * ((max(p, int(x)) + 30 + int(math.sqrt(40 * max(p, x, 1.0)))) // 2)
    j_next, j_cur = 0.0, 1e-30
    norm = 0.0
    target = 0.0
    for n in range(start, 0, -1):
        j_prev = 2.0 * n / x * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if abs(j_cur) > 1e250:
            j_next *= 1e-250
            j_cur *= 1e-250
            norm *= 1e-250
            target *= 1e-250
        if n - 1 == p:
            target = j_cur
        if (n - 1) % 2 == 0 and n - 1 > 0:
            norm += 2.0 * j_cur
    norm += j_cur
    if p == 0:
        target = j_cur
    return target / norm


def bessel_j(p: int, x: float) -> float:
    """``J_p(x)`` for integer ``p`` and ``|x| <= 50``."""
    p = int(p)
    x = float(x)
    if not abs(x) <= BESSEL_MAX_ARG:
        raise UnsupportedRange(f"|x|={abs(x)} exceeds {BESSEL_MAX_ARG}")
    sign = 1.0
    if p < 0:
        p = -p
        sign = -1.0 if p % 2 else 1.0
    if x < 0:
        x = -x
        sign *= -1.0 if p % 2 else 1.0
    if x == 0.0:
        return sign if p == 0 else 0.0
    value = _bessel_series(p, x) if x <= SERIES_CUTOFF else _bessel_miller(p, x)
    return sign * value


def bessel_upper_bound(p: int, r: float) -> float:
    """Bound ``(|r|/2)^p / p!`` on ``|J_p(r)|`` for ``p, r > 0``."""
    return (abs(r) / 2.0) ** p / math.factorial(p)


def bessel_nonzero_point(orders: Sequence[int], start: float = 0.1, step: float = 0.173) -> float:
    """A point where every ``J_{k_j}`` is non-zero, found by scanning (zeros are isolated)."""
    x = start
    for _ in range(10000):
        if all(abs(bessel_j(k, x)) > 1e-12 for k in orders):
            return x
        x += step
    raise RuntimeError("no witness found in scan range")


# -- the expansion --------------------------------------------------------------

@dataclass
class HarmonicExpansion:
    shift: float                # b2
    ks: np.ndarray              # (K, d) integer multi-indices
    frequencies: np.ndarray     # (K,)
    amplitudes: np.ndarray      # (K, d)
    phases: np.ndarray          # (K, d), already shifted by -pi/2
    zeta: int

    def __len__(self):
        return self.ks.shape[0]

    def alpha_beta(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-k coefficients of ``alpha_k cos(w_k x) + beta_k sin(w_k x)``."""
        phi = self.phases + np.pi / 2
        return (self.amplitudes * np.sin(phi)).sum(axis=1), (self.amplitudes * np.cos(phi)).sum(axis=1)


def _effective_layers(f: NeuralField):
    cfg = f.config
    if cfg.input_dim != 1 or cfg.output_dim != 1 or cfg.hidden_layers != 2:
        raise InvalidArgument("expansion needs a 1-D -> 1-D field with exactly two sine layers")
    if cfg.widths[0] != cfg.widths[1]:
        raise InvalidArgument("expansion needs equal hidden widths")
    w = cfg.omega0
    return (w * f.weights[0][:, 0], w * f.biases[0], w * f.weights[1], w * f.biases[1],
            f.weights[2][0], float(f.biases[2][0]))


def expand(f: NeuralField, zeta: int) -> HarmonicExpansion:
    """Truncated cosine expansion over all ``k`` with ``|k|_inf <= zeta``.

    The frequency scale ``omega0`` is folded into the first two layers.
    """
    zeta = int(zeta)
    if zeta < 0:
        raise InvalidArgument("zeta must be >= 0")
    w0, b0, w1, b1, w2, b2 = _effective_layers(f)
    d = w0.shape[0]
    orders = np.arange(-zeta, zeta + 1)
    # table[i, j, p] = J_{orders[p]}(W1_ij)
    table = np.array([[[bessel_j(p, w1[i, j]) for p in orders] for j in range(d)] for i in range(d)])
    ks = np.array(list(itertools.product(orders, repeat=d)), dtype=np.int64).reshape(-1, d)
    idx = ks + zeta
    amps = np.ones((ks.shape[0], d))
    for j in range(d):
        amps *= table[:, j, :][:, idx[:, j]].T
    amps *= w2[None, :]
    freqs = ks @ w0
    phases = (ks @ b0)[:, None] + b1[None, :] - np.pi / 2
    return HarmonicExpansion(b2, ks, freqs, amps, phases, zeta)


def eval_expansion(e: HarmonicExpansion, x) -> np.ndarray | float:
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out = np.full(xs.shape, e.shift)
    for start in range(0, len(e), 4096):
        sl = slice(start, start + 4096)
        arg = e.frequencies[sl, None, None] * xs[None, None, :] + e.phases[sl, :, None]
        out += np.einsum("kd,kdx->x", e.amplitudes[sl], np.cos(arg))
    return out if np.ndim(x) else float(out[0])


def expansion_error(f: NeuralField, zeta: int, points: int = 101) -> float:
    """Sup-norm gap between the truncated expansion and direct evaluation on [-1, 1]."""
    from .field import evaluate_points
    xs = np.linspace(-1.0, 1.0, points)
    direct = evaluate_points(f, xs[:, None])[:, 0]
    return float(np.max(np.abs(eval_expansion(expand(f, zeta), xs) - direct)))


# -- DCT feasible space ----------------------------------------------------------

def fred_feasible_eval(gammas, freqs, n: int, x) -> np.ndarray | float:
    """``sum_u gamma_u cos(pi u x / N + pi u / 2N)`` at integer sample positions ``x``."""
    gammas = np.asarray(gammas, dtype=np.float64)
    freqs = np.asarray(freqs, dtype=np.int64)
    if gammas.shape != freqs.shape:
        raise InvalidArgument("one coefficient per selected frequency")
    if freqs.size and (freqs.min() < 0 or freqs.max() >= n):
        raise InvalidArgument(f"frequency index outside 0..{n - 1}")
    xs = np.atleast_1d(np.asarray(x))
    if np.any(xs < 0) or np.any(xs >= n) or np.any(xs != np.round(xs)):
        raise InvalidArgument(f"sample positions must be integers in 0..{n - 1}")
    vals = np.cos(np.pi * freqs[None, :] * xs[:, None] / n + np.pi * freqs[None, :] / (2 * n)) @ gammas
    return vals if np.ndim(x) else float(vals[0])


def ortho_to_feasible(coeffs, freqs, n: int) -> np.ndarray:
    """Rescale orthonormal DCT-II coefficients into the ``gamma_u`` of the cosine sum."""
    freqs = np.asarray(freqs)
    scale = np.where(freqs == 0, math.sqrt(1.0 / n), math.sqrt(2.0 / n))
    return np.asarray(coeffs, dtype=np.float64) * scale


def fred_best_fit_residual(signal, freqs, n: int) -> float:
    """Least-squares residual (sum of squares) of fitting ``signal`` on 0..N-1 with the selected cosines."""
    xs = np.arange(n)
    basis = np.cos(np.pi * np.outer(xs, freqs) / n + np.pi * np.asarray(freqs)[None, :] / (2 * n))
    sol, *_ = np.linalg.lstsq(basis, np.asarray(signal, dtype=np.float64), rcond=None)
    resid = basis @ sol - signal
    return float(resid @ resid)


# -- budget / harmonic-count arithmetic -------------------------------------------

def _check_budget(budget: int):
    if budget < 6:
        raise TheoremPreconditionViolated(f"budget {budget} < 6")


def max_width(budget: int) -> int:
    """Largest ``d`` with ``d^2 + 4d + 1 <= B``, i.e. ``floor(sqrt(3 + B) - 2)``."""
    _check_budget(budget)
    return math.isqrt(3 + budget) - 2


def zeta_threshold(budget: int) -> float:
    """``((2B + 1)^(1/d) - 1) / 2`` with ``d = max_width(B)``; exact when the root is an integer."""
    d = max_width(budget)
    target = 2 * budget + 1
    root = round(target ** (1.0 / d))
    for r in (root - 1, root, root + 1):
        if r > 0 and r ** d == target:
            return (r - 1) / 2.0
    return 0.5 * (math.exp(math.log(target) / d) - 1.0)


def harmonic_count(zeta: int, d: int) -> int:
    """Distinct frequency count ``((2 zeta + 1)^d - 1) / 2``."""
    return ((2 * int(zeta) + 1) ** int(d) - 1) // 2


def min_zeta(budget: int) -> int:
    """Smallest integer truncation whose harmonic count reaches the budget."""
    d = max_width(budget)
    z = 0
    while harmonic_count(z, d) < budget:
        z += 1
    return z


# -- nested feasible spaces -------------------------------------------------------

def squared_loss(target: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    target = np.asarray(target, dtype=np.float64)
    return lambda batch: ((batch - target[None]) ** 2).sum(axis=(1, 2))


def _is_subset(small: np.ndarray, big: np.ndarray) -> bool:
    return all(np.any(np.all(big == row, axis=1)) for row in small)


def exhaustive_min(space: np.ndarray, count: int, loss: Callable[[np.ndarray], np.ndarray],
                   limit: int = 1_000_000, chunk: int = 65536) -> float:
    """Minimum of ``loss`` over all ``count``-tuples of rows of ``space``."""
    space = np.asarray(space, dtype=np.float64)
    total = space.shape[0] ** count
    if total > limit:
        raise SearchSpaceOverflow(f"{space.shape[0]}^{count} = {total} exceeds {limit}")
    best = math.inf
    combos = itertools.product(range(space.shape[0]), repeat=count)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
        if block.size == 0:
            return best
        best = min(best, float(np.min(loss(space[block]))))


def prop1_oracle(target: np.ndarray, small: np.ndarray, big: np.ndarray, count: int,
                 loss: Callable[[np.ndarray], np.ndarray] | None = None) -> tuple[float, float]:
    """Exhaustive optimum over ``small^M`` and ``big^M``.

    ``target`` is an ``(M, D)`` matrix (one row per synthetic instance) used
    by the default squared loss.  When ``small`` is contained in ``big`` the
    first minimum can never undercut the second; a violation raises.
    """
    small = np.atleast_2d(np.asarray(small, dtype=np.float64))
    big = np.atleast_2d(np.asarray(big, dtype=np.float64))
    loss = loss or squared_loss(target)
    lo_small = exhaustive_min(small, count, loss)
    lo_big = exhaustive_min(big, count, loss)
    if _is_subset(small, big) and lo_small < lo_big:
        raise AssertionError(f"nested spaces violated monotonicity: {lo_small} < {lo_big}")
    return lo_small, lo_big


def lattice_space(levels: Sequence[float], dim: int) -> np.ndarray:
    """All points of ``levels^dim``."""
    return np.array(list(itertools.product(levels, repeat=dim)), dtype=np.float64)


def mask_dimensions(space: np.ndarray, masked: Sequence[int]) -> np.ndarray:
    """Points of ``space`` whose ``masked`` coordinates are zero."""
    keep = np.all(space[:, list(masked)] == 0, axis=1) if len(masked) else np.ones(len(space), bool)
    return space[keep]


def clip_values(space: np.ndarray, bound: float) -> np.ndarray:
    """Points of ``space`` with every coordinate inside ``[-bound, bound]``."""
    return space[np.all(np.abs(space) <= bound, axis=1)]
