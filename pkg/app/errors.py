"""Hiérarchie d'exceptions de pulsesync."""

from __future__ import annotations


class PulseSyncError(Exception):
    """Erreur de base de l'application."""


class ConfigError(PulseSyncError):
    """Scénario ou paramètres mal formés (code de sortie 3)."""


class ClockModelError(ConfigError):
    """Une horloge matérielle viole le modèle (dérive θ, Lipschitz ν)."""


class ClockDomainError(PulseSyncError, ValueError):
    """Temps local demandé avant l'offset H(0) de l'horloge."""


class InfeasibleError(PulseSyncError):
    """Aucun jeu de paramètres ne satisfait la condition demandée (code 2).

    ``threshold`` nomme le seuil violé, ``value`` sa valeur calculée.
    """

    def __init__(self, threshold: str, value: float | None = None, detail: str = ""):
        self.threshold = threshold
        self.value = value
        msg = f"infaisable: {threshold}"
        if value is not None:
            msg += f" = {value:.6g}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class InsufficientDataError(PulseSyncError):
    """S^{n−f} vaut +∞ : trop peu de valeurs finies pour le point milieu."""


class ModelViolationError(PulseSyncError):
    """Un nœud correct a raté une fenêtre ou calculé trop tard (mode strict)."""

    def __init__(self, message: str, *, node: int | None = None, round_index: int | None = None):
        self.node = node
        self.round_index = round_index
        super().__init__(message)
