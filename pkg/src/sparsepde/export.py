"""Closed-form export of sparse polynomial policies.

The effective coefficients of a gated policy are ``Xi * z`` with ``z`` the
deterministic gate values. Terms at or below ``prune_threshold`` in magnitude
are dropped, the rest are sorted by decreasing magnitude per actuator.
"""
import json
import re
from dataclasses import dataclass, field

import numpy as np

from sparsepde.errors import ConfigError

DEFAULT_PRUNE = 1e-3

_LATEX_NAMES = {"μ": r"\mu", "ν": r"\nu"}


@dataclass
class SymbolicPolicy:
    laws: list  # per actuator: list of (coefficient, label)
    names: tuple
    prune_threshold: float = DEFAULT_PRUNE
    dense_count: int = 0
    action_names: tuple = field(default=())

    def __post_init__(self):
        if not self.action_names:
            self.action_names = tuple(f"a_{j + 1}" for j in range(len(self.laws)))

    @property
    def active_per_action(self):
        return [len(t) for t in self.laws]

    @property
    def active_total(self):
        return sum(self.active_per_action)

    def to_dict(self):
        return {
            "prune_threshold": self.prune_threshold,
            "names": list(self.names),
            "dense_count": self.dense_count,
            "active_total": self.active_total,
            "laws": [
                {"action": a, "terms": [[float(c), lab] for c, lab in terms]}
                for a, terms in zip(self.action_names, self.laws)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            laws=[[(float(c), lab) for c, lab in law["terms"]] for law in d["laws"]],
            names=tuple(d["names"]),
            prune_threshold=d["prune_threshold"],
            dense_count=d.get("dense_count", 0),
            action_names=tuple(law["action"] for law in d["laws"]),
        )


def extract(policy, prune_threshold=DEFAULT_PRUNE):
    """Sparse term lists from a polynomial actor (gated or not)."""
    coeffs = policy.effective_coefficients()
    spec = policy.spec
    labels = spec.labels()
    laws = []
    for j in range(coeffs.shape[1]):
        col = coeffs[:, j]
        keep = np.flatnonzero(np.abs(col) > prune_threshold)
        # stable sort: ties keep dictionary order
        keep = keep[np.argsort(-np.abs(col[keep]), kind="stable")]
        laws.append([(float(col[i]), labels[i]) for i in keep])
    return SymbolicPolicy(laws, spec.names, prune_threshold, coeffs.size)


def _parse_monomial(label, index):
    if label == "1":
        return []
    out = []
    for tok in label.split():
        name, _, power = tok.partition("^")
        if name not in index:
            raise KeyError(f"unknown variable {name!r} in term {label!r}")
        out.append((index[name], int(power) if power else 1))
    return out


def evaluate_symbolic(sp, s):
    """a_j = tanh(sum of the exported terms) for one state or a batch."""
    s = np.asarray(s, dtype=np.float64)
    S = np.atleast_2d(s)
    if S.shape[1] != len(sp.names):
        raise ConfigError(f"symbolic policy expects {len(sp.names)} inputs, got {S.shape[1]}")
    index = {n: i for i, n in enumerate(sp.names)}
    pre = np.zeros((S.shape[0], len(sp.laws)))
    for j, terms in enumerate(sp.laws):
        for coef, label in terms:
            mono = np.ones(S.shape[0])
            for i, p in _parse_monomial(label, index):
                for _ in range(p):
                    mono = mono * S[:, i]
            pre[:, j] += coef * mono
    a = np.tanh(pre)
    return a[0] if s.ndim == 1 else a


def _fmt_term(coef, label, first, latex):
    mag = f"{abs(coef):.3f}"
    if label != "1":
        body = _latex_monomial(label) if latex else label
        mag = f"{mag} {body}"
    if first:
        return f"-{mag}" if coef < 0 else mag
    return f" - {mag}" if coef < 0 else f" + {mag}"


def _latex_monomial(label):
    parts = []
    for tok in label.split():
        name, _, power = tok.partition("^")
        name = _LATEX_NAMES.get(name, name)
        base, _, sub = name.partition("_")
        name = f"{base}_{{{sub}}}" if sub else base
        parts.append(f"{name}^{{{power}}}" if power else name)
    return " ".join(parts)


def render(sp, fmt="plain_text"):
    if fmt not in ("plain_text", "latex"):
        raise ConfigError(f"unknown format {fmt!r}")
    latex = fmt == "latex"
    lines = []
    for name, terms in zip(sp.action_names, sp.laws):
        body = "".join(_fmt_term(c, lab, i == 0, latex) for i, (c, lab) in enumerate(terms)) or "0"
        if latex:
            base, _, sub = name.partition("_")
            lines.append(rf"{base}_{{{sub}}} = \tanh\left({body}\right)")
        else:
            lines.append(f"{name} = tanh({body})")
    return "\n".join(lines) + "\n"


_LAW = re.compile(r"^(\S+) = tanh\((.*)\)$")
_TERM = re.compile(r"([+-]?)\s*(\d+\.\d+)(?:\s+(.+))?$")


def parse_plain(text):
    """Inverse of ``render(sp, "plain_text")``: action name -> term list."""
    out = {}
    for line in text.strip().splitlines():
        m = _LAW.match(line.strip())
        if not m:
            raise ValueError(f"not a policy line: {line!r}")
        name, body = m.groups()
        terms = []
        if body != "0":
            pieces = re.split(r"\s(?=[+-]\s)", body)
            for piece in pieces:
                t = _TERM.match(piece.replace("+ ", "+").replace("- ", "-"))
                if not t:
                    raise ValueError(f"cannot parse term {piece!r}")
                sign, mag, label = t.groups()
                coef = -float(mag) if sign == "-" else float(mag)
                terms.append((coef, label or "1"))
        out[name] = terms
    return out


def write_policy_files(sp, stem):
    """Write ``stem.txt``, ``stem.tex`` and ``stem.json``; returns the paths."""
    paths = [f"{stem}.txt", f"{stem}.tex", f"{stem}.json"]
    with open(paths[0], "w") as fh:
        fh.write(render(sp, "plain_text"))
    with open(paths[1], "w") as fh:
        fh.write(render(sp, "latex"))
    with open(paths[2], "w") as fh:
        json.dump(sp.to_dict(), fh, indent=1, ensure_ascii=False)
    return paths
