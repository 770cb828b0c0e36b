"""ANOVA-style composition of per-covariate kernels.

A model is a set of interaction terms (subsets of covariate names); the
combined kernel is a sum of entrywise products of the per-covariate gram
matrices, one product per term.  Scale coefficients come in two flavours:

* parsimonious: one scale per covariate, a term's coefficient is the
  product of its members' scales, so the combined matrix is multilinear
  in the scales (degree one in each coordinate);
* extended: one free scale per term.

The intercept stays outside the expansion (its scale is pinned by the
model's prior mean), so the empty term is excluded throughout.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def term_label(term):
    return "*".join(term)


def expand_sperner(family, order=None):
    """All nonempty subsets of every member of `family`, deduplicated.

    `family` is an iterable of covariate-name collections.  The result is
    ordered by term size, then by covariate positions; `order` fixes the
    covariate order (default: first appearance across the family).
    """
    members = [tuple(dict.fromkeys(m)) for m in family]
    if order is None:
        seen = {}
        for m in members:
            for name in m:
                seen.setdefault(name, len(seen))
        order = tuple(seen)
    else:
        order = tuple(order)
    pos = {name: k for k, name in enumerate(order)}
    for m in members:
        for name in m:
            if name not in pos:
                raise ConfigError(f"covariate {name!r} missing from the declared order")

    out = set()
    for m in members:
        idx = sorted(pos[name] for name in m)
        for mask in range(1, 1 << len(idx)):
            out.add(tuple(idx[b] for b in range(len(idx)) if mask >> b & 1))
    terms = sorted(out, key=lambda t: (len(t), t))
    return tuple(tuple(order[i] for i in t) for t in terms)


@dataclass(frozen=True)
class AnovaSpec:
    """Interaction terms over named covariates, plus the scale flavour."""

    covariates: tuple
    terms: tuple
    parameterization: str = "parsimonious"

    def __post_init__(self):
        covs = tuple(self.covariates)
        object.__setattr__(self, "covariates", covs)
        if len(set(covs)) != len(covs):
            raise ConfigError("duplicate covariate names")
        pos = {name: k for k, name in enumerate(covs)}
        norm = []
        for term in self.terms:
            term = tuple(term)
            if not term:
                raise ConfigError("the empty term is not part of the expansion")
            if len(set(term)) != len(term):
                raise ConfigError(f"term {term!r} repeats a covariate")
            for name in term:
                if name not in pos:
                    raise ConfigError(f"term references unknown covariate {name!r}")
            norm.append(tuple(sorted(term, key=pos.get)))
        if len(set(norm)) != len(norm):
            raise ConfigError("duplicate terms")
        order = sorted(range(len(norm)),
                       key=lambda i: (len(norm[i]), tuple(pos[n] for n in norm[i])))
        object.__setattr__(self, "terms", tuple(norm[i] for i in order))
        if self.parameterization not in ("parsimonious", "extended"):
            raise ConfigError(f"unknown parameterization {self.parameterization!r}")
        if not self.terms:
            raise ConfigError("a model needs at least one term")

    def coordinates(self):
        """Names of the free scale coordinates, in a fixed order."""
        if self.parameterization == "extended":
            return tuple(term_label(t) for t in self.terms)
        used = [name for name in self.covariates if any(name in t for t in self.terms)]
        return tuple(used)

    @property
    def n_scales(self):
        return len(self.coordinates())

    def term_labels(self):
        return tuple(term_label(t) for t in self.terms)


@dataclass(frozen=True)
class ScaleVector:
    """Named scale coordinates for one AnovaSpec."""

    names: tuple
    values: object

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if len(vals) != len(self.names):
            raise ConfigError(f"expected {len(self.names)} scales, got {len(vals)}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "names", tuple(self.names))

    def as_dict(self):
        return {name: float(v) for name, v in zip(self.names, self.values)}


def scale_vector(spec, values):
    return ScaleVector(spec.coordinates(), values)


def _as_values(spec, lam):
    vals = lam.values if isinstance(lam, ScaleVector) else np.asarray(lam, dtype=float).ravel()
    if len(vals) != spec.n_scales:
        raise ConfigError(f"expected {spec.n_scales} scales, got {len(vals)}")
    return vals


def term_coefficients(spec, lam):
    """Per-term coefficients implied by the scale coordinates."""
    vals = _as_values(spec, lam)
    if spec.parameterization == "extended":
        return vals.copy()
    pos = {name: k for k, name in enumerate(spec.coordinates())}
    return np.asarray([np.prod([vals[pos[name]] for name in term]) for term in spec.terms])


def d_term_coefficients(spec, lam, k):
    """Derivative of the per-term coefficients in coordinate k."""
    vals = _as_values(spec, lam)
    if spec.parameterization == "extended":
        out = np.zeros(len(spec.terms))
        out[k] = 1.0
        return out
    coord = spec.coordinates()[k]
    pos = {name: j for j, name in enumerate(spec.coordinates())}
    out = np.zeros(len(spec.terms))
    for i, term in enumerate(spec.terms):
        if coord in term:
            out[i] = np.prod([vals[pos[name]] for name in term if name != coord])
    return out


def build_term_cache(spec, matrices):
    """Entrywise products of per-covariate matrices, one per term.

    `matrices` maps covariate name to an array; training grams and
    cross-gram blocks go through the same code.
    """
    cache = {}
    for term in spec.terms:
        prod = None
        for name in term:
            try:
                M = matrices[name]
            except KeyError:
                raise ConfigError(f"no gram matrix for covariate {name!r}") from None
            prod = np.array(M, dtype=float) if prod is None else prod * M
        cache[term] = prod
    return cache


def _combine(spec, coefs, cache):
    out = None
    for c, term in zip(coefs, spec.terms):
        piece = c * cache[term]
        out = piece if out is None else out + piece
    return out


def assemble(spec, lam, cache):
    """Combined kernel matrix at the given scales."""
    return _combine(spec, term_coefficients(spec, lam), cache)


def d_assemble(spec, lam, cache, k):
    """Derivative of the combined matrix in scale coordinate k."""
    return _combine(spec, d_term_coefficients(spec, lam, k), cache)
