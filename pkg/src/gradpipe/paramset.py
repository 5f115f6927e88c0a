"""Typed hyperparameter spaces.

A :class:`ParamSet` validates values on assignment and can carry tuning
tokens (:func:`to_tune`) in place of concrete values.  Collections of
parameter sets are addressed through dotted prefixes such as ``"opt.lr"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .tensor import RngState

class _Missing:
    """Sentinel for "no default"; survives copying and pickling."""

    def __repr__(self):
        return "<missing>"

    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self

    def __reduce__(self):
        return "_MISSING"


_MISSING = _Missing()


@dataclass(frozen=True)
class TuneToken:
    lower: float | None = None
    upper: float | None = None
    logscale: bool = False
    levels: tuple | None = None
    internal: bool = False

    def __repr__(self):
        if self.internal:
            return f"to_tune(upper={self.upper}, internal=True)"
        if self.levels is not None:
            return f"to_tune({list(self.levels)!r})"
        return f"to_tune({self.lower}, {self.upper}{', logscale=True' if self.logscale else ''})"


def to_tune(*args, lower=None, upper=None, logscale: bool = False, internal: bool = False,
            levels=None) -> TuneToken:
    """``to_tune(20, 500)``, ``to_tune(["relu", "sigmoid"])`` or ``to_tune(upper=100, internal=True)``."""
    if len(args) == 1 and isinstance(args[0], (list, tuple)):
        levels = args[0]
    elif len(args) == 2:
        lower, upper = args
    elif args:
        raise TypeError("to_tune takes (lower, upper) or a list of levels")
    if levels is not None:
        return TuneToken(levels=tuple(levels))
    if logscale and lower is not None and lower <= 0:
        raise ValueError("logscale tuning needs a positive lower bound")
    return TuneToken(lower, upper, logscale, None, internal)


@dataclass
class Param:
    id: str
    kind: str  # int | dbl | fct | lgl | uty
    lower: float | None = None
    upper: float | None = None
    levels: tuple | None = None
    default: Any = _MISSING
    tags: tuple = ()
    custom_check: Callable[[Any], str | None] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("int", "dbl", "fct", "lgl", "uty"):
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if self.levels is not None:
            self.levels = tuple(self.levels)

    @property
    def has_default(self) -> bool:
        return self.default is not _MISSING

    def check(self, value) -> None:
        if value is None and self.kind != "lgl" and "required" not in self.tags:
            return
        if self.kind == "int":
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                if isinstance(value, (float, np.floating)) and float(value).is_integer():
                    value = int(value)
                else:
                    raise ValueError(f"{self.id}: expected an integer, got {value!r}")
            self._check_bounds(value)
        elif self.kind == "dbl":
            if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
                raise ValueError(f"{self.id}: expected a number, got {value!r}")
            self._check_bounds(value)
        elif self.kind == "fct":
            if value not in self.levels:
                raise ValueError(f"{self.id}: {value!r} not in {list(self.levels)}")
        elif self.kind == "lgl":
            if not isinstance(value, (bool, np.bool_)):
                raise ValueError(f"{self.id}: expected a boolean, got {value!r}")
        if self.custom_check is not None:
            msg = self.custom_check(value)
            if msg:
                raise ValueError(f"{self.id}: {msg}")

    def _check_bounds(self, value):
        if self.lower is not None and value < self.lower:
            raise ValueError(f"{self.id}: {value} is below the lower bound {self.lower}")
        if self.upper is not None and value > self.upper:
            raise ValueError(f"{self.id}: {value} is above the upper bound {self.upper}")


def p_int(id, lower=None, upper=None, default=_MISSING, tags=()):
    return Param(id, "int", lower, upper, default=default, tags=tuple(tags))


def p_dbl(id, lower=None, upper=None, default=_MISSING, tags=()):
    return Param(id, "dbl", lower, upper, default=default, tags=tuple(tags))


def p_fct(id, levels, default=_MISSING, tags=()):
    return Param(id, "fct", levels=tuple(levels), default=default, tags=tuple(tags))


def p_lgl(id, default=_MISSING, tags=()):
    return Param(id, "lgl", default=default, tags=tuple(tags))


def p_uty(id, default=_MISSING, tags=(), custom_check=None):
    return Param(id, "uty", default=default, tags=tuple(tags), custom_check=custom_check)


class ParamSet:
    def __init__(self, params: Iterable[Param] = (), **values):
        self.params: dict[str, Param] = {}
        for p in params:
            if p.id in self.params:
                raise ValueError(f"duplicate parameter {p.id!r}")
            self.params[p.id] = p
        self._values: dict[str, Any] = {}
        self._tokens: dict[str, TuneToken] = {}
        if values:
            self.set_values(**values)

    # -- introspection ---------------------------------------------------------
    def ids(self) -> list[str]:
        return list(self.params)

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name) -> Param:
        try:
            return self.params[name]
        except KeyError:
            raise KeyError(f"unknown hyperparameter {name!r}") from None

    @property
    def values(self) -> dict:
        return dict(self._values)

    @property
    def tune_tokens(self) -> dict:
        return dict(self._tokens)

    def get_values(self, include_defaults: bool = True) -> dict:
        out = {}
        if include_defaults:
            out = {k: p.default for k, p in self.params.items() if p.has_default}
        out.update(self._values)
        return out

    def get(self, name, default=None):
        vals = self.get_values()
        return vals.get(name, default)

    # -- assignment ------------------------------------------------------------
    def set_values(self, values: Mapping | None = None, **kwargs) -> "ParamSet":
        items = dict(values or {})
        items.update(kwargs)
        for name, value in items.items():
            param = self[name]
            if isinstance(value, TuneToken):
                self._check_token(param, value)
                self._tokens[name] = value
                self._values.pop(name, None)
                if value.internal and value.upper is not None:
                    # the internal upper bound doubles as the training budget
                    param.check(value.upper)
                    self._values[name] = int(value.upper) if param.kind == "int" else value.upper
            else:
                param.check(value)
                self._values[name] = value
                self._tokens.pop(name, None)
        return self

    def _check_token(self, param: Param, token: TuneToken) -> None:
        if token.levels is not None:
            if param.kind not in ("fct", "lgl", "uty"):
                raise ValueError(f"{param.id}: categorical tuning on a {param.kind} parameter")
            for lvl in token.levels:
                param.check(lvl)
            return
        if token.internal:
            if "internal_tuning" not in param.tags:
                raise ValueError(f"{param.id} cannot be tuned internally")
            return
        if param.kind not in ("int", "dbl"):
            raise ValueError(f"{param.id}: range tuning needs a numeric parameter")
        lo = param.lower if token.lower is None else token.lower
        hi = param.upper if token.upper is None else token.upper
        if lo is None or hi is None:
            raise ValueError(f"{param.id}: tuning range needs finite bounds")
        param.check(lo)
        param.check(hi)
        if lo > hi:
            raise ValueError(f"{param.id}: empty tuning range [{lo}, {hi}]")
        if token.logscale and (param.kind != "dbl" or lo <= 0):
            raise ValueError(f"{param.id}: logscale needs a positive float range")

    def remove_values(self, *names) -> None:
        for n in names:
            self._values.pop(n, None)
            self._tokens.pop(n, None)

    # -- search space ----------------------------------------------------------
    def search_space(self) -> dict[str, tuple[Param, TuneToken]]:
        return {k: (self.params[k], t) for k, t in self._tokens.items() if not t.internal}

    def internal_search_space(self) -> dict[str, tuple[Param, TuneToken]]:
        return {k: (self.params[k], t) for k, t in self._tokens.items() if t.internal}


class ParamSetCollection:
    """Prefixed union of parameter sets; ``""`` as prefix means unprefixed."""

    def __init__(self, sets: Mapping[str, Any]):
        self.sets = dict(sets)

    def _route(self, name: str):
        if "" in self.sets and name in self.sets[""]:
            return self.sets[""], name
        best = None
        for prefix, ps in self.sets.items():
            if prefix and name.startswith(prefix + "."):
                if best is None or len(prefix) > len(best[0]):
                    best = (prefix, ps)
        if best is None:
            raise KeyError(f"unknown hyperparameter {name!r}")
        return best[1], name[len(best[0]) + 1:]

    def _items(self, getter) -> dict:
        out = {}
        for prefix, ps in self.sets.items():
            for k, v in getter(ps).items():
                key = f"{prefix}.{k}" if prefix else k
                if key in out:
                    raise ValueError(f"hyperparameter name collision on {key!r}")
                out[key] = v
        return out

    @property
    def params(self) -> dict:
        return self._items(lambda ps: ps.params)

    def ids(self) -> list[str]:
        return list(self.params)

    def __contains__(self, name):
        try:
            ps, sub = self._route(name)
        except KeyError:
            return False
        return sub in ps

    def __getitem__(self, name) -> Param:
        ps, sub = self._route(name)
        return ps[sub]

    @property
    def values(self) -> dict:
        return self._items(lambda ps: ps.values)

    @property
    def tune_tokens(self) -> dict:
        return self._items(lambda ps: ps.tune_tokens)

    def get_values(self, include_defaults: bool = True) -> dict:
        return self._items(lambda ps: ps.get_values(include_defaults))

    def get(self, name, default=None):
        ps, sub = self._route(name)
        return ps.get_values().get(sub, default)

    def set_values(self, values: Mapping | None = None, **kwargs) -> "ParamSetCollection":
        items = dict(values or {})
        items.update(kwargs)
        for name, value in items.items():
            ps, sub = self._route(name)
            ps.set_values({sub: value})
        return self

    def remove_values(self, *names) -> None:
        for n in names:
            ps, sub = self._route(n)
            ps.remove_values(sub)

    def search_space(self) -> dict:
        return self._items(lambda ps: ps.search_space())

    def internal_search_space(self) -> dict:
        return self._items(lambda ps: ps.internal_search_space())


def sample_value(param: Param, token: TuneToken, gen: np.random.Generator):
    if token.levels is not None:
        return token.levels[int(gen.integers(len(token.levels)))]
    lo = param.lower if token.lower is None else token.lower
    hi = param.upper if token.upper is None else token.upper
    if lo is None or hi is None:
        raise ValueError(f"{param.id} has no finite tuning range")
    if param.kind == "int":
        return int(gen.integers(int(lo), int(hi) + 1))
    if token.logscale:
        return float(math.exp(gen.uniform(math.log(lo), math.log(hi))))
    return float(gen.uniform(lo, hi))


def paramset_sample(ps, rng: RngState, names: Sequence[str] | None = None) -> dict:
    """Draw one configuration from the tunable (non-internal) entries of ``ps``."""
    space = ps.search_space()
    if names is not None:
        unknown = [n for n in names if n not in space]
        if unknown:
            raise ValueError(f"not tunable: {unknown}")
        space = {n: space[n] for n in names}
    gen = rng.generator()
    return {name: sample_value(param, token, gen) for name, (param, token) in space.items()}
