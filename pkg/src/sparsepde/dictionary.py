"""Polynomial dictionary: every monomial of total degree <= d.

Monomials are ordered by degree, then lexicographically by the sorted tuple of
variable indices they multiply (the order of
``itertools.combinations_with_replacement``). For n = 2, d = 2 that is
``1, x1, x2, x1^2, x1 x2, x2^2``.
"""
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations_with_replacement
from math import comb

import numpy as np

from sparsepde import kernels
from sparsepde.errors import ConfigError

ORDERING = "graded-lex"


def feature_count(n, d):
    return comb(n + d, d)


def default_names(n_sens, param_names):
    return tuple(f"m_{i + 1}" for i in range(n_sens)) + tuple(param_names)


@dataclass(frozen=True)
class DictionarySpec:
    input_dim: int
    degree: int
    names: tuple = field(default=())
    ordering: str = ORDERING

    def __post_init__(self):
        if self.input_dim < 1 or self.degree < 0:
            raise ConfigError("dictionary needs input_dim >= 1 and degree >= 0")
        if self.ordering != ORDERING:
            raise ConfigError(f"unsupported monomial ordering {self.ordering!r}")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x_{i + 1}" for i in range(self.input_dim)))
        elif len(self.names) != self.input_dim:
            raise ConfigError("one variable name per input dimension is required")
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def feature_count(self):
        return feature_count(self.input_dim, self.degree)

    @cached_property
    def combos(self):
        """Variable-index tuples, one per monomial."""
        out = []
        for k in range(self.degree + 1):
            out.extend(combinations_with_replacement(range(self.input_dim), k))
        return tuple(out)

    @cached_property
    def exponents(self):
        E = np.zeros((len(self.combos), self.input_dim), dtype=np.int64)
        for j, c in enumerate(self.combos):
            for i in c:
                E[j, i] += 1
        E.setflags(write=False)
        return E

    @cached_property
    def _parent_table(self):
        index = {c: j for j, c in enumerate(self.combos)}
        parent = np.zeros(len(self.combos), dtype=np.int64)
        var = np.zeros(len(self.combos), dtype=np.int64)
        for j, c in enumerate(self.combos[1:], start=1):
            parent[j] = index[c[:-1]]
            var[j] = c[-1]
        return parent, var

    def evaluate(self, s):
        """Features of one state (n,) or a batch (B, n)."""
        s = np.asarray(s, dtype=np.float64)
        single = s.ndim == 1
        S = np.atleast_2d(s)
        if S.shape[1] != self.input_dim:
            raise ConfigError(f"dictionary expects {self.input_dim} inputs, got {S.shape[1]}")
        parent, var = self._parent_table
        out = kernels.poly_features(np.ascontiguousarray(S), parent, var)
        return out[0] if single else out

    def label(self, index):
        if not 0 <= index < self.feature_count:
            raise IndexError(f"monomial index {index} outside [0, {self.feature_count})")
        return monomial_text(self.exponents[index], self.names)

    def labels(self):
        return [self.label(j) for j in range(self.feature_count)]

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "degree": self.degree,
            "ordering": self.ordering,
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["input_dim"], d["degree"], tuple(d["names"]), d.get("ordering", ORDERING))


def monomial_text(exps, names):
    parts = []
    for e, name in zip(exps, names):
        if e == 1:
            parts.append(name)
        elif e > 1:
            parts.append(f"{name}^{e}")
    return " ".join(parts) if parts else "1"


def evaluate_features(spec, s):
    return spec.evaluate(s)


def monomial_label(spec, index):
    return spec.label(index)
