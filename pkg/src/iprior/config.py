"""Run configuration: INI text in, core objects out.

The INI grammar has five sections.  [data] names the response and one
line per covariate (`<kind> [prefix=..] [columns=a,b] [grid=0,1]`);
[kernels] gives one kernel line per covariate (`<family> [gamma=..]
[sigma=..] [metric=..] [centered=..]`); [model] holds the term structure
(`terms = g + x + g*x`, or `expand = g*x` for an interaction closure),
the model kind and label; [fit] and [output] tune estimation and where
artifacts land.

Parsing happens in two stages so the HTTP service can accept the same
content as JSON: `parse_ini` turns text into a plain payload dict and
`realize_config` turns a payload into validated core objects.
"""

import configparser
from dataclasses import dataclass

from .data import ColumnSchema
from .errors import ConfigError
from .estimate import FitConfig
from .kernels import KernelSpec

_COLUMN_KEYS = ("prefix", "columns", "grid")
_KERNEL_KEYS = ("gamma", "sigma", "metric", "centered")
_MODEL_KEYS = ("kind", "terms", "expand", "parameterization", "label", "label_column")
_FIT_KEYS = ("max_iter", "rel_tol", "restarts", "seed", "psi_init", "lam_init",
             "q_tol", "max_sweeps")
_OUTPUT_KEYS = ("dir", "stem")
_SECTIONS = ("data", "kernels", "model", "fit", "output")

_KINDS = ("regression", "classification")


def _parse_bool(raw, where):
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{where}: {raw!r} is not a boolean")


def _parse_float(raw, where):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: {raw!r} is not a number") from None


def _parse_int(raw, where):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{where}: {raw!r} is not an integer") from None


def _split_options(line, where):
    """`head key=value ...` -> (head, dict); values keep their text form."""
    parts = line.split()
    if not parts:
        raise ConfigError(f"{where}: empty value")
    head, opts = parts[0], {}
    for item in parts[1:]:
        if "=" not in item:
            raise ConfigError(f"{where}: expected key=value, got {item!r}")
        key, _, value = item.partition("=")
        if not value:
            raise ConfigError(f"{where}: empty value for {key!r}")
        opts[key] = value
    return head, opts


def _column_payload(name, line):
    where = f"[data] {name}"
    kind, opts = _split_options(line, where)
    out = {"kind": kind}
    for key, value in opts.items():
        if key == "prefix":
            out["prefix"] = value
        elif key == "columns":
            out["columns"] = [c for c in value.split(",") if c]
        elif key == "grid":
            out["grid"] = [_parse_float(v, where) for v in value.split(",") if v]
        else:
            raise ConfigError(f"{where}: unknown option {key!r} "
                              f"(expected one of {_COLUMN_KEYS})")
    return out


def _kernel_payload(name, line):
    where = f"[kernels] {name}"
    family, opts = _split_options(line, where)
    out = {"family": family}
    for key, value in opts.items():
        if key == "gamma" or key == "sigma":
            out[key] = _parse_float(value, where)
        elif key == "metric":
            out["metric"] = value
        elif key == "centered":
            out["centered"] = _parse_bool(value, where)
        else:
            raise ConfigError(f"{where}: unknown option {key!r} "
                              f"(expected one of {_KERNEL_KEYS})")
    return out


def _term_list(raw):
    terms = []
    for chunk in raw.split("+"):
        names = [p.strip() for p in chunk.split("*")]
        if any(not p for p in names):
            raise ConfigError(f"malformed term {chunk.strip()!r}")
        terms.append(names)
    return terms


def parse_ini(text):
    """INI text -> plain payload dict (JSON-safe, defaults not filled in)."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"bad INI syntax: {exc}") from None

    unknown = [s for s in parser.sections() if s not in _SECTIONS]
    if unknown:
        raise ConfigError(f"unknown sections {unknown}; expected {list(_SECTIONS)}")

    payload = {}
    if parser.has_section("data"):
        data = {}
        columns = {}
        for key, value in parser.items("data"):
            if key == "response":
                data["response"] = value.strip()
            else:
                columns[key] = _column_payload(key, value)
        data["columns"] = columns
        payload["data"] = data
    if parser.has_section("kernels"):
        payload["kernels"] = {name: _kernel_payload(name, value)
                              for name, value in parser.items("kernels")}
    if parser.has_section("model"):
        model = {}
        for key, value in parser.items("model"):
            if key not in _MODEL_KEYS:
                raise ConfigError(f"[model]: unknown key {key!r} "
                                  f"(expected one of {_MODEL_KEYS})")
            if key in ("terms", "expand"):
                model[key] = _term_list(value)
            else:
                model[key] = value.strip()
        payload["model"] = model
    if parser.has_section("fit"):
        fit = {}
        for key, value in parser.items("fit"):
            where = f"[fit] {key}"
            if key in ("max_iter", "restarts", "seed", "max_sweeps"):
                fit[key] = _parse_int(value, where)
            elif key in ("rel_tol", "psi_init", "q_tol"):
                fit[key] = _parse_float(value, where)
            elif key == "lam_init":
                fit[key] = [_parse_float(v, where)
                            for v in value.replace(",", " ").split()]
            else:
                raise ConfigError(f"{where}: unknown key (expected one of {_FIT_KEYS})")
        payload["fit"] = fit
    if parser.has_section("output"):
        out = {}
        for key, value in parser.items("output"):
            if key not in _OUTPUT_KEYS:
                raise ConfigError(f"[output]: unknown key {key!r}")
            out[key] = value.strip()
        payload["output"] = out
    return payload


# ---------------------------------------------------------------------------
# realized configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Validated run settings with core-typed members."""

    kind: str
    response: str
    schema: dict            # name -> ColumnSchema
    kernels: dict           # name -> KernelSpec (classification: features only)
    terms: tuple            # tuples of names, or None
    expand: tuple           # tuples of names (closure seeds), or None
    parameterization: str
    label: str
    label_column: str
    fit: FitConfig
    output_dir: str
    stem: str


def realize_config(payload):
    """Payload dict -> RunConfig; all semantic validation happens here."""
    if not isinstance(payload, dict):
        raise ConfigError("configuration payload must be a mapping")

    data = payload.get("data") or {}
    raw_columns = data.get("columns") or {}
    if not raw_columns:
        raise ConfigError("[data] must declare at least one covariate column")
    schema = {}
    for name, cp in raw_columns.items():
        try:
            schema[name] = ColumnSchema(cp["kind"],
                                        columns=cp.get("columns"),
                                        prefix=cp.get("prefix"),
                                        grid=cp.get("grid"))
        except KeyError:
            raise ConfigError(f"column {name!r} needs a kind") from None
    response = data.get("response")

    kernels = {}
    for name, kp in (payload.get("kernels") or {}).items():
        if name not in schema:
            raise ConfigError(f"[kernels] references undeclared column {name!r}")
        try:
            family = kp["family"]
        except KeyError:
            raise ConfigError(f"kernel for {name!r} needs a family") from None
        kwargs = {k: kp[k] for k in _KERNEL_KEYS if kp.get(k) is not None}
        kernels[name] = KernelSpec(family, **kwargs)

    model = payload.get("model") or {}

    # JSON payloads may carry explicit nulls; treat them like absent keys
    def pick(section, key, default=None):
        value = section.get(key)
        return default if value is None else value

    kind = pick(model, "kind", "regression")
    if kind not in _KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {_KINDS}")
    terms = model.get("terms")
    expand = model.get("expand")
    label = pick(model, "label", "model")
    label_column = model.get("label_column")
    parameterization = pick(model, "parameterization", "parsimonious")

    def check_names(groups, what):
        out = []
        for group in groups:
            group = tuple(group)
            for name in group:
                if name not in schema:
                    raise ConfigError(f"{what} references undeclared column {name!r}")
                if name not in kernels:
                    raise ConfigError(f"{what} uses {name!r} but [kernels] has no entry for it")
            out.append(group)
        return tuple(out)

    if kind == "regression":
        if not response:
            raise ConfigError("regression needs [data] response")
        if (terms is None) == (expand is None):
            raise ConfigError("[model] needs exactly one of terms or expand")
        terms = check_names(terms, "terms") if terms is not None else None
        expand = check_names(expand, "expand") if expand is not None else None
        if label_column is not None:
            raise ConfigError("label_column only applies to classification")
    else:
        if not label_column:
            raise ConfigError("classification needs [model] label_column")
        if label_column not in schema:
            raise ConfigError(f"label column {label_column!r} is not declared in [data]")
        if schema[label_column].kind != "categorical":
            raise ConfigError(f"label column {label_column!r} must be categorical")
        if label_column in kernels:
            raise ConfigError("the label column cannot carry a kernel")
        if terms is not None or expand is not None:
            raise ConfigError("classification derives its terms; drop terms/expand")

    fit_payload = payload.get("fit") or {}
    unknown = [k for k in fit_payload if k not in _FIT_KEYS]
    if unknown:
        raise ConfigError(f"[fit]: unknown keys {unknown}")
    lam_init = fit_payload.get("lam_init")
    fit = FitConfig(max_iter=pick(fit_payload, "max_iter", 200),
                    rel_tol=pick(fit_payload, "rel_tol", 1e-8),
                    restarts=pick(fit_payload, "restarts", 4),
                    seed=pick(fit_payload, "seed", 0),
                    psi_init=fit_payload.get("psi_init"),
                    lam_init=None if lam_init is None else tuple(lam_init),
                    q_tol=pick(fit_payload, "q_tol", 1e-10),
                    max_sweeps=pick(fit_payload, "max_sweeps", 100))

    output = payload.get("output") or {}
    return RunConfig(kind=kind,
                     response=response,
                     schema=schema,
                     kernels=kernels,
                     terms=terms,
                     expand=expand,
                     parameterization=parameterization,
                     label=label,
                     label_column=label_column,
                     fit=fit,
                     output_dir=pick(output, "dir", "."),
                     stem=output.get("stem") or label)


def read_config(path):
    """Parse and realize an INI configuration file."""
    with open(path) as fh:
        return realize_config(parse_ini(fh.read()))


def parse_config(text):
    """Parse and realize INI configuration text."""
    return realize_config(parse_ini(text))


def anova_from_config(config):
    """Term structure of a realized regression configuration."""
    from .anova import AnovaSpec, expand_sperner

    if config.kind != "regression":
        raise ConfigError("only regression configs carry an explicit term structure")
    declared = tuple(config.kernels)
    if config.terms is not None:
        used = tuple(n for n in declared
                     if any(n in t for t in config.terms))
        return AnovaSpec(used, config.terms, config.parameterization)
    used = tuple(n for n in declared if any(n in t for t in config.expand))
    terms = expand_sperner(config.expand, order=used)
    return AnovaSpec(used, terms, config.parameterization)


def load_frame(config, source, min_rows=2, with_response=True):
    """Load a CSV through the config's schema.

    Training data keeps the response column (regression only); prediction
    frames pass with_response=False and may be empty.
    """
    from .data import load_dataset

    response = config.response if (with_response and config.kind == "regression") else None
    return load_dataset(source, config.schema, response=response, min_rows=min_rows)
