"""Tabular transition model ``p(s' | s, a)`` and a planner over it.

States are :func:`~selfplay_wm.envs.state_key` strings and actions their
canonical text (``"Up"``, ``"1,2,3"``). The model only ever sees these
strings; planning never touches the environment.
"""

from __future__ import annotations

import json
from collections import deque
from typing import Callable, Iterable, Optional

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .envs import EnvKind, key_is_success
from .errors import BudgetExceeded, EmptyHeldout
from .solvers import DEFAULT_NODE_BUDGET


def check_triples(X, y=None) -> list[tuple[str, str, str]]:
    """Validate ``(state, action, next_state)`` input.

    Accepts either an iterable of triples, or ``(state, action)`` pairs in
    ``X`` with successors in ``y``.
    """
    rows = list(X)
    if y is not None:
        y = list(y)
        if len(y) != len(rows):
            raise ValueError(f"X has {len(rows)} rows but y has {len(y)}")
        rows = [(*pair, succ) for pair, succ in zip(rows, y)]
    out = []
    for i, row in enumerate(rows):
        if len(row) != 3:
            raise ValueError(f"row {i}: expected (state, action, next_state), got {row!r}")
        s, a, s2 = row
        if not isinstance(s, str) or not isinstance(s2, str):
            raise TypeError(f"row {i}: state keys must be strings")
        out.append((s, str(a), s2))
    return out


def check_pairs(X) -> list[tuple[str, str]]:
    out = []
    for i, row in enumerate(X):
        if len(row) < 2:
            raise ValueError(f"row {i}: expected (state, action, ...)")
        out.append((row[0], str(row[1])))
    return out


class TransitionModel(BaseEstimator):
    """Count-based maximum-likelihood transition kernel.

    Parameters
    ----------
    kind : str
        Environment kind; selects the default success test used by
        :meth:`plan`.

    Attributes
    ----------
    counts_ : dict
        ``(state, action) -> {next_state: count}``.
    """

    def __init__(self, kind="sokoban"):
        self.kind = kind

    # -- fitting ---------------------------------------------------------

    def fit(self, X, y=None):
        self.counts_ = {}
        self._index = None
        return self.partial_fit(X, y)

    def partial_fit(self, X, y=None):
        if not hasattr(self, "counts_"):
            self.counts_ = {}
        for s, a, s2 in check_triples(X, y):
            succ = self.counts_.setdefault((s, a), {})
            succ[s2] = succ.get(s2, 0) + 1
        self._index = None
        return self

    def merge(self, other: "TransitionModel") -> "TransitionModel":
        """Sum the counts of two fitted models (shard reduction)."""
        merged = TransitionModel(self.kind)
        merged.counts_ = {}
        for table in (self.counts_, other.counts_):
            for pair, succ in table.items():
                dst = merged.counts_.setdefault(pair, {})
                for s2, n in succ.items():
                    dst[s2] = dst.get(s2, 0) + n
        merged._index = None
        return merged

    # -- queries ---------------------------------------------------------

    @property
    def n_entries_(self) -> int:
        check_is_fitted(self, "counts_")
        return len(self.counts_)

    @property
    def is_deterministic_(self) -> bool:
        check_is_fitted(self, "counts_")
        return all(len(succ) == 1 for succ in self.counts_.values())

    def predict_proba(self, state: str, action) -> Optional[dict]:
        """Successor distribution, or ``None`` for an unseen ``(state, action)``."""
        check_is_fitted(self, "counts_")
        succ = self.counts_.get((state, str(action)))
        if not succ:
            return None
        total = sum(succ.values())
        return {s2: n / total for s2, n in succ.items()}

    def _argmax(self, state: str, action: str) -> Optional[str]:
        succ = self.counts_.get((state, action))
        if not succ:
            return None
        # most counts first, then lexicographically smallest key
        return min(succ.items(), key=lambda kv: (-kv[1], kv[0]))[0]

    def predict(self, X) -> list:
        """Most likely successor for each ``(state, action)``; ``None`` if unseen."""
        check_is_fitted(self, "counts_")
        return [self._argmax(s, a) for s, a in check_pairs(X)]

    def score(self, X, y=None) -> float:
        """Fraction of held-out triples whose successor is the predicted one."""
        check_is_fitted(self, "counts_")
        triples = check_triples(X, y)
        if not triples:
            raise EmptyHeldout("held-out set is empty")
        hits = sum(self._argmax(s, a) == s2 for s, a, s2 in triples)
        return hits / len(triples)

    def actions_for(self, state: str) -> list[str]:
        if self._index is None:
            index: dict = {}
            for s, a in self.counts_:
                index.setdefault(s, []).append(a)
            self._index = {s: sorted(acts) for s, acts in index.items()}
        return self._index.get(state, [])

    def rollout(self, state: str, actions: Iterable) -> Optional[str]:
        """Follow most-likely successors; ``None`` if the model runs out."""
        check_is_fitted(self, "counts_")
        for a in actions:
            state = self._argmax(state, str(a))
            if state is None:
                return None
        return state

    # -- planning --------------------------------------------------------

    def plan(self, start: str, success: Optional[Callable[[str], bool]] = None, horizon: int = 10,
             node_budget: int = DEFAULT_NODE_BUDGET) -> Optional[list[str]]:
        """Action sequence of length <= ``horizon`` that reaches ``success``.

        A deterministic table is searched breadth-first, so plans are
        shortest. A stochastic table is solved by finite-horizon expectimax
        and the plan follows the most likely successor of each chosen action.
        Unseen transitions are treated as absent edges. Returns ``None`` when
        no plan exists.
        """
        check_is_fitted(self, "counts_")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if success is None:
            kind = EnvKind.parse(self.kind)
            success = lambda key: key_is_success(kind, key)  # noqa: E731
        if success(start):
            return []
        if self.is_deterministic_:
            return self._plan_bfs(start, success, horizon, node_budget)
        return self._plan_expectimax(start, success, horizon, node_budget)

    def _plan_bfs(self, start, success, horizon, node_budget):
        parents = {start: None}
        queue = deque([(start, 0)])
        expanded = 0
        while queue:
            key, depth = queue.popleft()
            expanded += 1
            if expanded > node_budget:
                raise BudgetExceeded(f"model BFS exceeded {node_budget} nodes")
            if depth >= horizon:
                continue
            for a in self.actions_for(key):
                nxt = self._argmax(key, a)
                if nxt in parents:
                    continue
                parents[nxt] = (key, a)
                if success(nxt):
                    plan = []
                    node = nxt
                    while parents[node] is not None:
                        node, act = parents[node]
                        plan.append(act)
                    return plan[::-1]
                queue.append((nxt, depth + 1))
        return None

    def _plan_expectimax(self, start, success, horizon, node_budget):
        memo: dict = {}
        expanded = [0]

        def value(key, h):
            if success(key):
                return 1.0
            if h == 0:
                return 0.0
            hit = memo.get((key, h))
            if hit is not None:
                return hit[0]
            expanded[0] += 1
            if expanded[0] > node_budget:
                raise BudgetExceeded(f"model expectimax exceeded {node_budget} nodes")
            best, best_a = 0.0, None
            for a in self.actions_for(key):
                dist = self.predict_proba(key, a)
                v = sum(p * value(k2, h - 1) for k2, p in dist.items())
                if v > best + 1e-15:
                    best, best_a = v, a
            memo[(key, h)] = (best, best_a)
            return best

        if value(start, horizon) <= 0.0:
            return None
        plan, key, h = [], start, horizon
        while h > 0 and not success(key):
            a = memo[(key, h)][1]
            if a is None:
                break
            plan.append(a)
            key = self._argmax(key, a)
            h -= 1
            if (key, h) not in memo and not success(key):
                value(key, h)
        return plan

    # -- persistence -----------------------------------------------------

    def to_text(self) -> str:
        """Sorted lines ``state<TAB>action<TAB>successor<TAB>count``.

        String fields are JSON-encoded so grid newlines stay on one line.
        """
        check_is_fitted(self, "counts_")
        lines = []
        for (s, a), succ in self.counts_.items():
            for s2, n in succ.items():
                lines.append((s, a, s2, n))
        lines.sort()
        header = f"# kind={EnvKind.parse(self.kind).value}"
        body = [
            "\t".join((json.dumps(s, ensure_ascii=False), json.dumps(a, ensure_ascii=False),
                       json.dumps(s2, ensure_ascii=False), str(n)))
            for s, a, s2, n in lines
        ]
        return "\n".join([header, *body]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TransitionModel":
        kind = "sokoban"
        counts: dict = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("# kind="):
                kind = line.split("=", 1)[1].strip()
                continue
            s, a, s2, n = line.split("\t")
            succ = counts.setdefault((json.loads(s), json.loads(a)), {})
            succ[json.loads(s2)] = succ.get(json.loads(s2), 0) + int(n)
        model = cls(kind)
        model.counts_ = counts
        model._index = None
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "TransitionModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())
