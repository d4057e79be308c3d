"""Bayesian design evaluation with a BART emulator of the asymptotic posterior scale."""

from __future__ import annotations

import json
from os import PathLike
from typing import Any, Mapping, Sequence

import numpy as np

from . import _core
from ._core import ConfigError, DesignError, InvalidParameter, NumericalError, power_fixed

__all__ = [
    "ConfigError",
    "DesignError",
    "Ensemble",
    "Evaluator",
    "InvalidParameter",
    "NumericalError",
    "power_fixed",
    "run_cli",
    "stop_probs",
]


def stop_probs(design: Mapping[str, Any], psi: float, lam: float, draws: int = 100_000, seed: int = 1) -> dict:
    """Stopping probabilities of a sequential design at a single effect size."""
    return json.loads(_core.stop_probs(json.dumps(design), psi, lam, draws, seed))


def run_cli(*args: str | PathLike) -> tuple[int, str, str]:
    """Run a `bvmdesign` subcommand in-process; returns (exit code, stdout, stderr)."""
    return _core.run_cli([str(a) for a in args])


class Evaluator:
    """Design evaluation against a study document and a fitted ensemble."""

    def __init__(
        self,
        config: str | PathLike,
        ensemble: str | PathLike,
        *,
        interactive: bool = False,
        evaluation: Mapping[str, Any] | None = None,
    ) -> None:
        self._core = _core.Evaluator(str(config), str(ensemble), interactive, json.dumps(evaluation) if evaluation else "")

    @property
    def settings(self) -> dict:
        return json.loads(self._core.settings())

    def evaluate(self, design: Mapping[str, Any], cost: Mapping[str, Any] | None | bool = True) -> dict:
        """Operating characteristics; `cost=True` uses the study's cost, `None` disables it."""
        if cost is True:
            cost_json = ""
        elif cost is None or cost is False:
            cost_json = "null"
        else:
            cost_json = json.dumps(cost)
        return json.loads(self._core.evaluate(json.dumps(design), cost_json))

    def curve(self, design: Mapping[str, Any], grid: Sequence[float] | None = None) -> dict:
        return json.loads(self._core.curve(json.dumps(design), list(grid or [])))


class Ensemble:
    """A fitted sum-of-trees posterior."""

    def __init__(self, core: _core.Ensemble) -> None:
        self._core = core

    @classmethod
    def fit(cls, X, y, config: Mapping[str, Any] | None = None) -> "Ensemble":
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        return cls(_core.Ensemble.fit(X, np.asarray(y, dtype=float).tolist(), json.dumps(config) if config else ""))

    @classmethod
    def from_json(cls, doc: Mapping[str, Any] | str) -> "Ensemble":
        return cls(_core.Ensemble.from_json(doc if isinstance(doc, str) else json.dumps(doc)))

    def to_json(self) -> dict:
        return json.loads(self._core.to_json())

    def predict(self, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Posterior mean and central 95% interval at each row of X."""
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        mean, lo, hi = self._core.predict(X)
        return np.asarray(mean), np.asarray(lo), np.asarray(hi)

    def inclusion_proportions(self) -> np.ndarray:
        return np.asarray(self._core.inclusion_proportions())

    @property
    def state_count(self) -> int:
        return self._core.state_count

    @property
    def dimension(self) -> int:
        return self._core.dimension

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Ensemble) and self._core == other._core
