"""scikit-learn style wrapper: ``fit`` builds the precedent base from labeled
cases, ``predict`` runs a jury simulation per case."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .cases import DisputeCase, Verdict
from .gateway import Gateway, GenerationParams, MockProvider
from .jury import SimulationConfig, SimulationResult, load_persona_pool, run_simulation
from .precedents import PrecedentBase, build_base, record_from_case

CLASSES = np.array([Verdict.BUYER.label, Verdict.SELLER.label])


def check_cases(X, require_labels: bool = False) -> list[DisputeCase]:
    """Validate estimator input: a non-empty sequence of cases with unique ids."""
    if isinstance(X, DisputeCase):
        raise TypeError("expected a sequence of DisputeCase, got a single case")
    try:
        cases = list(X)
    except TypeError:
        raise TypeError(f"expected a sequence of DisputeCase, got {type(X).__name__}") from None
    if not cases:
        raise ValueError("no cases given")
    bad = [type(c).__name__ for c in cases if not isinstance(c, DisputeCase)]
    if bad:
        raise TypeError(f"expected DisputeCase items, got {bad[0]}")
    ids = [c.case_id for c in cases]
    if len(set(ids)) != len(ids):
        raise ValueError("case ids must be unique")
    if require_labels:
        missing = [c.case_id for c in cases if c.ground_truth is None]
        if missing:
            raise ValueError(f"case {missing[0]} has no ground truth")
    return cases


def labels_of(cases: Sequence[DisputeCase]) -> np.ndarray:
    """Ground-truth labels ("buyer"/"seller") for labeled cases."""
    cases = check_cases(cases, require_labels=True)
    return np.array([c.ground_truth.winner.label for c in cases])


class JuryVerdictClassifier(ClassifierMixin, BaseEstimator):
    """Predicts dispute verdicts by simulating a jury of LLM agents.

    ``provider`` defaults to the offline mock provider seeded with
    ``random_state``. ``y`` passed to ``fit`` is checked against the cases'
    own ground truth and otherwise unused.
    """

    def __init__(
        self,
        provider=None,
        n_jurors: int = 17,
        n_rounds: int = 3,
        t_max: int = 3,
        memory_k: int = 3,
        delta: float = 0.8,
        out_degree: int = 3,
        random_state: int = 0,
        lite: bool = False,
        use_precedents: bool = True,
        persona_pool=None,
        precedent_top_m: int = 3,
        temperature: float = 0.7,
        max_output_tokens: int = 2048,
    ):
        self.provider = provider
        self.n_jurors = n_jurors
        self.n_rounds = n_rounds
        self.t_max = t_max
        self.memory_k = memory_k
        self.delta = delta
        self.out_degree = out_degree
        self.random_state = random_state
        self.lite = lite
        self.use_precedents = use_precedents
        self.persona_pool = persona_pool
        self.precedent_top_m = precedent_top_m
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens

    def _config(self) -> SimulationConfig:
        seed = int(self.random_state or 0)
        return SimulationConfig(
            jurors=self.n_jurors,
            rounds=self.n_rounds,
            t_max=self.t_max,
            memory_k=self.memory_k,
            delta=self.delta,
            out_degree=self.out_degree,
            network_seed=seed,
            persona_seed=seed,
            fallback_seed=seed,
            lite=self.lite,
        ).validate()

    def _gateway(self) -> Gateway:
        provider = self.provider if self.provider is not None else MockProvider(seed=int(self.random_state or 0))
        return Gateway(provider, GenerationParams(self.temperature, self.max_output_tokens))

    def fit(self, X, y=None, precedents: PrecedentBase | None = None):
        cases = check_cases(X, require_labels=self.use_precedents and precedents is None)
        if y is not None:
            y = np.asarray(y)
            if y.shape[0] != len(cases):
                raise ValueError(f"X has {len(cases)} cases but y has {y.shape[0]} labels")
            for c, label in zip(cases, y):
                if c.ground_truth is not None and Verdict.parse(label) != c.ground_truth.winner:
                    raise ValueError(f"label for {c.case_id} disagrees with its ground truth")
        self._config()
        self.gateway_ = self._gateway()
        self.persona_pool_ = list(self.persona_pool) if self.persona_pool is not None else load_persona_pool()
        if precedents is not None:
            self.precedent_base_ = precedents
        elif self.use_precedents:
            records = [record_from_case(c) for c in cases]
            self.precedent_base_ = build_base(records, self.gateway_, top_m=self.precedent_top_m)
        else:
            self.precedent_base_ = None
        self.classes_ = CLASSES.copy()
        return self

    def simulate(self, X) -> list[SimulationResult]:
        check_is_fitted(self, "classes_")
        cases = check_cases(X)
        config = self._config()
        return [
            run_simulation(c, config, self.gateway_.fork(), self.precedent_base_, self.persona_pool_) for c in cases
        ]

    def predict_vote_split(self, X) -> np.ndarray:
        """(buyer, seller) vote counts of the final round, one row per case."""
        return np.array([r.final_split for r in self.simulate(X)], dtype=int)

    def predict_proba(self, X) -> np.ndarray:
        """Final-round vote shares in ``classes_`` order."""
        split = self.predict_vote_split(X).astype(float)
        return split / split.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        split = self.predict_vote_split(X)
        return np.where(split[:, 1] > split[:, 0], CLASSES[1], CLASSES[0])
