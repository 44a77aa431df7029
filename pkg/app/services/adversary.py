"""Nœuds byzantins : émissions d'impulsions choisies par l'adversaire.

Les stratégies statiques (`random_pulses`, `custom_schedule`) sont tirées une
fois pour toutes au début de l'exécution. Les stratégies réactives
(`split_early_late`, `mirror_extreme`) observent les impulsions correctes et
répondent au moment le plus gênant. Les messages fautifs passent par le même
canal que les autres (délai dans [d−U, d]).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from app.models import FaultConfig, FaultSpec

logger = logging.getLogger(__name__)

REACTIVE = ("split_early_late", "mirror_extreme")
# vagues incomplètes conservées derrière le rang le plus récent
TALLY_HORIZON = 2


@dataclass(frozen=True)
class FaultPulse:
    """Impulsion émise par un nœud fautif à l'instant réel `time`."""

    time: float
    sender: int
    receivers: tuple[int, ...]
    kind: int = 1


def _receivers(spec_receivers: Optional[list[int]], correct: Sequence[int]) -> tuple[int, ...]:
    if spec_receivers is None:
        return tuple(correct)
    return tuple(v for v in spec_receivers if v in correct)


def _random_pulses(
    spec: FaultSpec, correct: Sequence[int], horizon: float, kinds: Sequence[int], rng: np.random.Generator
) -> list[FaultPulse]:
    out: list[FaultPulse] = []
    t = 0.0
    while True:
        t += float(rng.exponential(1.0 / spec.rate))
        if t > horizon:
            return out
        kind = int(kinds[int(rng.integers(0, len(kinds)))])
        out.append(FaultPulse(t, spec.node, tuple(correct), kind))


def inject_fault_schedule(
    config: FaultConfig,
    correct: Sequence[int],
    horizon: float,
    rng: np.random.Generator,
    kinds: Sequence[int] = (1,),
) -> list[FaultPulse]:
    """Émissions fixées à l'avance, triées par (instant, émetteur).

    `silent` et les stratégies réactives ne produisent rien ici.
    """
    out: list[FaultPulse] = []
    for spec in sorted(config.faults, key=lambda s: s.node):
        if spec.strategy == "random_pulses":
            out.extend(_random_pulses(spec, correct, horizon, kinds, rng))
        elif spec.strategy == "custom_schedule":
            out.extend(
                FaultPulse(item.time, spec.node, _receivers(item.receivers, correct), item.kind)
                for item in spec.schedule
                if item.time <= horizon
            )
    out.sort(key=lambda fp: (fp.time, fp.sender, fp.kind))
    logger.debug("%d impulsions fautives planifiées", len(out))
    return out


@dataclass
class _Tally:
    first: float
    count: int = 0


@dataclass
class Adversary:
    """Réponses des stratégies réactives aux impulsions correctes.

    Les impulsions correctes sont regroupées par (type, rang chez l'émetteur) :
    la k-ième impulsion de chaque nœud correct forme une même vague.
    """

    config: FaultConfig
    correct: tuple[int, ...]
    tallies: dict[tuple[int, int], _Tally] = field(default_factory=dict)

    @property
    def reactive(self) -> list[FaultSpec]:
        return [spec for spec in self.config.faults if spec.strategy in REACTIVE]

    def split_groups(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        half = len(self.correct) // 2
        return self.correct[:half], self.correct[half:]

    def on_correct_pulse(self, sender: int, kind: int, ordinal: int, time: float) -> list[FaultPulse]:
        specs = self.reactive
        if not specs:
            return []
        key = (kind, ordinal)
        tally = self.tallies.get(key)
        if tally is None:
            tally = self.tallies[key] = _Tally(first=time)
        tally.count += 1
        early, late = self.split_groups()
        out: list[FaultPulse] = []
        for spec in specs:
            if spec.strategy == "split_early_late":
                if tally.count == 1 and early:
                    out.append(FaultPulse(time, spec.node, early, kind))
                if tally.count == len(self.correct) and late:
                    out.append(FaultPulse(time, spec.node, late, kind))
            elif tally.count == len(self.correct):
                out.append(FaultPulse(time, spec.node, self.correct, kind))
        if tally.count == len(self.correct):
            del self.tallies[key]
        self._prune(kind, ordinal)
        return out

    def _prune(self, kind: int, ordinal: int) -> None:
        """Oublie les vagues trop anciennes (émetteurs réinitialisés ou muets)."""
        stale = [key for key in self.tallies if key[0] == kind and key[1] < ordinal - TALLY_HORIZON]
        for key in stale:
            del self.tallies[key]
        if stale:
            logger.debug("%d vague(s) incomplète(s) oubliée(s) avant le rang %d", len(stale), ordinal)
