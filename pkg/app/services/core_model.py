"""Modèle système : horloges matérielles à dérive bornée et canal à délai borné.

Une horloge est linéaire par morceaux *en taux* : sur chaque segment le taux
est affine en t (pente bornée par ν pour le modèle fréquentiel), ce qui rend
H(t) et son inverse calculables en forme close.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from app.errors import ClockDomainError, ClockModelError, ConfigError
from app.models import ClockPolicy, DelayPolicy, SystemParams

logger = logging.getLogger(__name__)

_RATE_TOL = 1e-12


# ── Horloges ────────────────────────────────────────────────
@dataclass(frozen=True)
class RateSegment:
    start: float
    rate: float
    slope: float = 0.0

    def rate_at(self, t: float) -> float:
        return self.rate + self.slope * (t - self.start)


@dataclass(frozen=True)
class HardwareClock:
    segments: tuple[RateSegment, ...]
    offset: float = 0.0
    _starts: np.ndarray = field(init=False, repr=False, compare=False)
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        segs = tuple(self.segments)
        if not segs:
            raise ClockModelError("horloge sans segment")
        if segs[0].start != 0.0:
            raise ClockModelError("le premier segment doit commencer à t=0")
        if segs[-1].slope != 0.0:
            raise ClockModelError("le dernier segment doit avoir un taux constant")
        if self.offset < 0:
            raise ClockModelError("offset H(0) négatif")
        starts = np.array([s.start for s in segs], dtype=float)
        if np.any(np.diff(starts) <= 0):
            raise ClockModelError("débuts de segments non strictement croissants")
        cum = np.empty(len(segs), dtype=float)
        cum[0] = self.offset
        for i in range(1, len(segs)):
            prev = segs[i - 1]
            span = segs[i].start - prev.start
            end_rate = prev.rate_at(segs[i].start)
            if prev.rate <= 0 or end_rate <= 0:
                raise ClockModelError("taux non strictement positif")
            cum[i] = cum[i - 1] + prev.rate * span + 0.5 * prev.slope * span * span
        if segs[-1].rate <= 0:
            raise ClockModelError("taux non strictement positif")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "_starts", starts)
        object.__setattr__(self, "_cum", cum)

    def _index_t(self, t: float) -> int:
        return int(np.searchsorted(self._starts, t, side="right")) - 1

    def _index_h(self, h: float) -> int:
        return int(np.searchsorted(self._cum, h, side="right")) - 1


def constant_clock(rate: float, offset: float = 0.0) -> HardwareClock:
    return HardwareClock((RateSegment(0.0, rate),), offset)


def local_time(clock: HardwareClock, t: float) -> float:
    """H(t) : intégrale du taux depuis 0 plus l'offset."""
    if t < 0:
        raise ClockDomainError(f"temps réel négatif: {t}")
    i = clock._index_t(t)
    seg = clock.segments[i]
    s = t - seg.start
    return float(clock._cum[i] + seg.rate * s + 0.5 * seg.slope * s * s)


def invert_local_time(clock: HardwareClock, h: float) -> float:
    """Unique t tel que H(t) = h."""
    if h < clock.offset:
        raise ClockDomainError(f"temps local {h} antérieur à H(0)={clock.offset}")
    i = clock._index_h(h)
    seg = clock.segments[i]
    dh = h - float(clock._cum[i])
    if dh <= 0:
        return seg.start
    # forme stable de la racine de r·s + k·s²/2 = dh
    disc = seg.rate * seg.rate + 2.0 * seg.slope * dh
    s = 2.0 * dh / (seg.rate + math.sqrt(max(disc, 0.0)))
    return seg.start + s


def rate_at(clock: HardwareClock, t: float) -> float:
    return clock.segments[clock._index_t(max(t, 0.0))].rate_at(max(t, 0.0))


def rate_extrema(clock: HardwareClock, a: float, b: float) -> tuple[float, float]:
    """(min, max) du taux sur [a, b], limites à gauche des cassures comprises."""
    a, b = max(a, 0.0), max(b, 0.0)
    if b < a:
        a, b = b, a
    values = [rate_at(clock, a), rate_at(clock, b)]
    lo = clock._index_t(a)
    hi = clock._index_t(b)
    for i in range(lo + 1, hi + 1):
        prev = clock.segments[i - 1]
        values.append(prev.rate_at(clock.segments[i].start))
        values.append(clock.segments[i].rate)
    return min(values), max(values)


def validate_clock(clock: HardwareClock, theta: float, nu: float | None = None) -> None:
    """Vérifie taux ∈ [1, θ] et, si ν est donné, continuité et |pente| ≤ ν."""
    segs = clock.segments
    for i, seg in enumerate(segs):
        end_rate = seg.rate if i + 1 == len(segs) else seg.rate_at(segs[i + 1].start)
        for r in (seg.rate, end_rate):
            if r < 1.0 - _RATE_TOL or r > theta * (1 + _RATE_TOL):
                raise ClockModelError(f"taux {r:.12g} hors de [1, θ={theta}] (segment {i})")
        if nu is not None:
            if abs(seg.slope) > nu * (1 + 1e-9) + _RATE_TOL:
                raise ClockModelError(f"pente de taux {seg.slope:.6g} > ν={nu} (segment {i})")
            if i + 1 < len(segs) and abs(end_rate - segs[i + 1].rate) > 1e-9 * theta:
                raise ClockModelError(f"saut de taux en t={segs[i + 1].start} incompatible avec ν")


def sample_clock(
    params: SystemParams,
    policy: ClockPolicy,
    rng: np.random.Generator | int,
    node: int = 0,
    horizon: float = 1.0,
) -> HardwareClock:
    """Tire une horloge admissible pour `node` selon la politique donnée."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    theta = params.theta
    offset = 0.0 if policy.offsets == "zero" else float(rng.uniform(0.0, params.big_f))

    if policy.kind == "all_nominal":
        return constant_clock(1.0, offset)
    if policy.kind == "all_max_drift":
        return constant_clock(theta, offset)
    if policy.kind == "random_constant":
        return constant_clock(float(rng.uniform(1.0, theta)), offset)
    if policy.kind == "drift_worstcase_split":
        return constant_clock(1.0 if node < params.n // 2 else theta, offset)
    return _sinusoid_clock(params, policy, rng, offset, horizon)


def _sinusoid_clock(
    params: SystemParams,
    policy: ClockPolicy,
    rng: np.random.Generator,
    offset: float,
    horizon: float,
) -> HardwareClock:
    """Taux sinusoïdal échantillonné puis interpolé linéairement.

    Les pentes des sécantes sont majorées par A·ω, donc la contrainte ν tient
    dès que A·2π/période ≤ ν.
    """
    theta = params.theta
    amp = policy.amplitude * (theta - 1.0) / 2.0
    mid = (1.0 + theta) / 2.0
    if amp == 0.0:
        return constant_clock(mid, offset)
    period = policy.period
    if period is None:
        if params.nu <= 0:
            raise ConfigError("sinusoid_bounded exige ν > 0 ou une période explicite")
        period = 2 * math.pi * amp / params.nu
    omega = 2 * math.pi / period
    if amp * omega > params.nu * (1 + 1e-12):
        raise ConfigError(
            f"sinusoïde A·ω={amp * omega:.4g} > ν={params.nu}: amplitude ou fréquence trop grande"
        )
    phase = float(rng.uniform(0.0, 2 * math.pi))
    step = period / policy.breakpoints_per_period
    count = max(2, int(math.ceil(horizon / step)) + 1)
    times = np.arange(count + 1, dtype=float) * step
    rates = mid + amp * np.sin(omega * times + phase)
    segments: list[RateSegment] = []
    for i in range(count):
        slope = float((rates[i + 1] - rates[i]) / step)
        segments.append(RateSegment(float(times[i]), float(rates[i]), slope))
    segments.append(RateSegment(float(times[count]), float(rates[count]), 0.0))
    return HardwareClock(tuple(segments), offset)


def sample_clocks(
    params: SystemParams,
    policy: ClockPolicy,
    rng: np.random.Generator,
    horizon: float,
    nodes: Sequence[int],
) -> dict[int, HardwareClock]:
    return {v: sample_clock(params, policy, rng, node=v, horizon=horizon) for v in nodes}


# ── Canal ───────────────────────────────────────────────────
def validate_delay_policy(policy: DelayPolicy, params: SystemParams) -> None:
    if policy.kind != "per_link_table":
        return
    table = policy.table
    if table is None or len(table) != params.n or any(len(row) != params.n for row in table):
        raise ConfigError("per_link_table exige une table n×n")
    lo, hi = params.d - params.u, params.d
    for row in table:
        for value in row:
            if value < lo - 1e-15 or value > hi + 1e-15:
                raise ConfigError(f"délai {value} hors de [d−U, d]=[{lo}, {hi}]")


def sample_delay(
    policy: DelayPolicy,
    params: SystemParams,
    sender: int,
    receiver: int,
    rng: np.random.Generator,
) -> float:
    """Délai de bout en bout dans [d−U, d]."""
    lo, hi = params.d - params.u, params.d
    kind = policy.kind
    if kind == "constant_max":
        delay = hi
    elif kind == "constant_min":
        delay = lo
    elif kind == "uniform_random":
        delay = float(rng.uniform(lo, hi))
    elif kind == "adversarial_split":
        # rapide dans un même groupe, lent d'un groupe à l'autre
        half = params.n // 2
        delay = lo if (sender < half) == (receiver < half) else hi
    else:
        delay = float(policy.table[sender][receiver])
    return min(max(delay, lo), hi)
