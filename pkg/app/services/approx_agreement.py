"""Étape d'accord approché : point milieu de l'intervalle tronqué.

Chaque nœud trie les n valeurs perçues (+∞ pour « rien reçu ») et retient
(S^{f+1} + S^{n−f})/2. Les propriétés de validité, de convergence et de
correction maximale sont exposées sous forme de bornes pour le banc de test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

from app.errors import InsufficientDataError
from app.utils.helpers import diameter

INF = math.inf


@dataclass(frozen=True)
class ValueMultiset:
    """n valeurs étendues (finies ou +∞) et le nombre f de valeurs tronquées."""

    values: tuple[float, ...]
    f: int

    @classmethod
    def from_received(cls, n: int, f: int, received: Mapping[int, float]) -> "ValueMultiset":
        return cls(tuple(received.get(w, INF) for w in range(n)), f)

    def ranked(self) -> list[tuple[float, int]]:
        """Paires (valeur, émetteur) triées, +∞ en dernier (ordre stable)."""
        return sorted((value, sender) for sender, value in enumerate(self.values))


def select_midpoint(values: ValueMultiset | Sequence[float], f: int | None = None) -> float:
    """(S^{f+1} + S^{n−f})/2 avec S^k la k-ième plus petite valeur."""
    if not isinstance(values, ValueMultiset):
        if f is None:
            raise ValueError("f requis pour une séquence brute")
        values = ValueMultiset(tuple(values), f)
    n, f = len(values.values), values.f
    if n < 3 * f + 1:
        raise ValueError(f"n={n} < 3f+1={3 * f + 1}")
    ranked = values.ranked()
    low, high = ranked[f][0], ranked[n - f - 1][0]
    if math.isinf(high):
        missing = [sender for value, sender in ranked if math.isinf(value)]
        raise InsufficientDataError(
            f"S^{n - f} = +∞ : émetteurs {missing} manquants pour f={f}"
        )
    return (low + high) / 2


# ── Banc d'essai AA ─────────────────────────────────────────
@dataclass
class AAStepRecord:
    """Une étape d'accord approché perturbée, vue de tous les nœuds corrects.

    `perturbations[(w, v)]` est l'écart x̂_wv − x_w réalisé pour un émetteur
    correct w ; `faulty_values[u][v]` la valeur envoyée par le nœud fautif u à
    v (None : rien envoyé).
    """

    n: int
    f: int
    inputs: dict[int, float]
    delta: float = 0.0
    perturbations: dict[tuple[int, int], float] = field(default_factory=dict)
    faulty_values: dict[int, dict[int, float | None]] = field(default_factory=dict)
    missing: Literal["own", "inf"] = "own"

    def __post_init__(self) -> None:
        for (w, v), eps in self.perturbations.items():
            if abs(eps) > self.delta + 1e-15:
                raise ValueError(f"perturbation {eps} de {w}→{v} dépasse δ={self.delta}")

    def perceived(self, v: int) -> ValueMultiset:
        values: list[float] = []
        for w in range(self.n):
            if w in self.inputs:
                x = self.inputs[w] + self.perturbations.get((w, v), 0.0)
            else:
                x = self.faulty_values.get(w, {}).get(v)
            if x is None:
                x = self.inputs[v] if self.missing == "own" else INF
            values.append(x)
        return ValueMultiset(tuple(values), self.f)

    # bornes des propriétés
    def validity_interval(self) -> tuple[float, float]:
        xs = self.inputs.values()
        return min(xs) - self.delta, max(xs) + self.delta

    def convergence_bound(self) -> float:
        return diameter(self.inputs.values()) / 2 + 2 * self.delta

    def max_correction_bound(self) -> float:
        return diameter(self.inputs.values()) + self.delta


def aa_step(record: AAStepRecord) -> dict[int, float]:
    """y_v = point milieu de la vue de v, pour chaque nœud correct v."""
    return {v: select_midpoint(record.perceived(v)) for v in sorted(record.inputs)}
