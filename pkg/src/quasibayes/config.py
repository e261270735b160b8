"""INI configuration for the command line: parsing, defaults and resolved echoes.

Every subcommand resolves its inputs into a ``{section: {key: value}}`` mapping
of typed values. ``dump`` writes that mapping back as INI text with shortest
round-trip numbers, so a resolved file re-parses to the same mapping.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import fields

from .experiments import PriorChoice, RateSpec, SweepPlan
from .io import fmt
from .oracle import NpivDgp, make_mild_dgp, make_npiv_dgp, make_severe_dgp, power_law_coeffs
from .priors import PriorSpec, parse_prior
from .sampler import ChainConfig


class ConfigError(ValueError):
    """Invalid configuration value; the message names the field."""


def read_ini(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return {name: dict(parser[name]) for name in parser.sections()}


def _value_text(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (list, tuple)):
        return ", ".join(_value_text(v) for v in value)
    return fmt(value)


def dump(resolved: dict) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, values in resolved.items():
        parser[section] = {k: _value_text(v) for k, v in values.items() if v is not None}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# typed field readers; ``where`` is "section.key" for error messages

def _get(section: dict, key: str, default, where: str, conv):
    raw = section.get(key)
    if raw is None or (isinstance(raw, str) and raw.strip() == ""):
        return default
    if not isinstance(raw, str):
        return raw
    try:
        return conv(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}.{key}: cannot parse {raw!r} ({exc})") from exc


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError("expected an integer")
    return int(value)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _floats(text: str) -> list:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _ints(text: str) -> list:
    return [_int(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _check(cond: bool, where: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{where}: {message}")


def resolve_dgp(section: dict) -> dict:
    """Fill defaults for a ``[dgp]`` section; validation happens in :func:`build_dgp`."""
    w = "dgp"
    decay = _get(section, "decay", "mild", w, str)
    _check(decay in ("mild", "severe", "custom"), f"{w}.decay", "must be mild, severe or custom")
    out = {"decay": decay}
    if decay == "custom":
        lam = _get(section, "lambdas", None, w, _floats)
        _check(lam is not None and len(lam) > 0, f"{w}.lambdas", "required for a custom spectrum")
        out["lambdas"] = lam
    else:
        out["alpha"] = _get(section, "alpha", 2.0 if decay == "mild" else 1.0, w, float)
        out["J_max"] = _get(section, "J_max", 24, w, _int)
        _check(out["J_max"] >= 1, f"{w}.J_max", "must be >= 1")
        out["scale"] = _get(section, "scale", None if decay == "mild" else 0.4, w, float)
        if decay == "mild":
            out["total"] = _get(section, "total", 0.45, w, float)
        out["zero_set"] = _get(section, "zero_set", [], w, _ints)
    out["true_coeffs"] = _get(section, "true_coeffs", None, w, _floats)
    if out["true_coeffs"] is None:
        out["true_coeffs"] = [0.6, 0.8]
        out["tail_amplitude"] = _get(section, "tail_amplitude", 0.1, w, float)
    else:
        out["tail_amplitude"] = _get(section, "tail_amplitude", 0.0, w, float)
    out["endog_strength"] = _get(section, "endog_strength", 0.5, w, float)
    out["noise_sd"] = _get(section, "noise_sd", 0.5, w, float)
    out["positivity"] = _get(section, "positivity", "bound", w, str)
    return out


def build_dgp(resolved: dict) -> NpivDgp:
    """``true_coeffs`` is the head of ``g0``; ``tail_amplitude`` adds a power-law tail."""
    extra = {k: resolved[k] for k in ("endog_strength", "noise_sd", "positivity")}
    head = resolved["true_coeffs"]
    if resolved["decay"] == "custom":
        J_max = len(resolved["lambdas"])
        coeffs = power_law_coeffs(head, J_max, amplitude=resolved["tail_amplitude"]) \
            if len(head) <= J_max + 1 else head
        return make_npiv_dgp(resolved["lambdas"], coeffs, **extra)
    J_max = resolved["J_max"]
    if len(head) > J_max + 1:
        raise ConfigError(f"dgp.true_coeffs: {len(head)} entries exceed J_max + 1 = {J_max + 1}")
    bad = [j for j in resolved["zero_set"] if not 1 <= j <= J_max]
    if bad:
        raise ConfigError(f"dgp.zero_set: indices {bad} outside 1..{J_max}")
    coeffs = power_law_coeffs(head, J_max, amplitude=resolved["tail_amplitude"])
    if resolved["decay"] == "mild":
        return make_mild_dgp(resolved["alpha"], J_max, coeffs, tuple(resolved["zero_set"]),
                             scale=resolved["scale"], total=resolved["total"], **extra)
    return make_severe_dgp(resolved["alpha"], J_max, coeffs, tuple(resolved["zero_set"]),
                           scale=resolved["scale"], **extra)


def resolve_chain(section: dict, where: str = "chain") -> dict:
    base = ChainConfig()
    out = {}
    for f in fields(ChainConfig):
        if f.name in ("move_probs", "debug_check_every"):
            continue
        conv = float if f.name == "target_accept" else _int
        default = getattr(base, f.name)
        if f.name == "burn_in":
            # a quarter of the run unless set explicitly
            default = out["n_steps"] // 4
        out[f.name] = _get(section, f.name, default, where, conv)
    out["move_probs"] = _get(section, "move_probs", list(base.move_probs), where, _floats)
    return out


def build_chain(resolved: dict) -> ChainConfig:
    try:
        return ChainConfig(**{**resolved, "move_probs": tuple(resolved["move_probs"])})
    except ValueError as exc:
        raise ConfigError(f"chain: {exc}") from exc


def resolve_rates(section: dict) -> dict:
    base = RateSpec()
    out = {}
    for f in fields(RateSpec):
        conv = {"d": _int, "decay": str}.get(f.name, float)
        out[f.name] = _get(section, f.name, getattr(base, f.name), "rates", conv)
    return out


def build_rates(resolved: dict) -> RateSpec:
    try:
        return RateSpec(**resolved)
    except ValueError as exc:
        raise ConfigError(f"rates: {exc}") from exc


def resolve_prior_text(text: str, where: str) -> str:
    """Normalize ``kind:key=value`` keeping only the keys given explicitly."""
    try:
        spec = parse_prior(text)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    keys = [k for k in ("B", "sigma", "beta", "r") if k in _explicit(text)]
    return spec.kind + "".join(
        (":" if i == 0 else ",") + f"{k}={fmt(getattr(spec, k))}" for i, k in enumerate(keys)
    )


def prior_choice(spec: PriorSpec, explicit_B: bool) -> PriorChoice:
    return PriorChoice(spec.kind, sigma=spec.sigma, beta=spec.beta, r=spec.r,
                       B=spec.B if explicit_B else None)


SWEEP_DEFAULTS = {
    "ns": [500, 2000, 8000],
    "replications": 10,
    "priors": ["uniform"],
    "master_seed": 0,
    "model": "npiv",
    "threads": 1,
    "save_draws": False,
    "likelihood_weight": 1.0,
}


def resolve_sweep(sections: dict) -> dict:
    sw = sections.get("sweep", {})
    w = "sweep"
    out = {
        "ns": _get(sw, "ns", SWEEP_DEFAULTS["ns"], w, _ints),
        "replications": _get(sw, "replications", 10, w, _int),
        "master_seed": _get(sw, "master_seed", 0, w, _int),
        "model": _get(sw, "model", "npiv", w, str),
        "threads": _get(sw, "threads", 1, w, _int),
        "save_draws": _get(sw, "save_draws", False, w, _bool),
        "likelihood_weight": _get(sw, "likelihood_weight", 1.0, w, float),
        "q": _get(sw, "q", None, w, _int),
        "k": _get(sw, "k", None, w, _int),
        "q_max": _get(sw, "q_max", None, w, _int),
        "eps": _get(sw, "eps", None, w, float),
        "delta": _get(sw, "delta", None, w, float),
        "h_weights": _get(sw, "h_weights", None, w, _floats),
    }
    # priors are separated by ';' because their parameters use ','
    raw = sw.get("priors")
    texts = raw.split(";") if isinstance(raw, str) else (raw or SWEEP_DEFAULTS["priors"])
    out["priors"] = "; ".join(resolve_prior_text(t, f"{w}.priors") for t in texts if str(t).strip())
    _check(out["priors"] != "", f"{w}.priors", "at least one prior is required")
    _check(out["threads"] >= 1, f"{w}.threads", "must be >= 1")
    return {
        "sweep": out,
        "rates": resolve_rates(sections.get("rates", {})),
        "chain": resolve_chain(sections.get("chain", {})),
        "dgp": resolve_dgp(sections.get("dgp", {})),
    }


def build_sweep(resolved: dict) -> tuple[SweepPlan, NpivDgp]:
    sw = resolved["sweep"]
    choices = []
    for text in sw["priors"].split(";"):
        spec = parse_prior(text)
        choices.append(prior_choice(spec, explicit_B="B" in _explicit(text)))
    try:
        plan = SweepPlan(
            ns=tuple(sw["ns"]), replications=sw["replications"], priors=tuple(choices),
            rates=build_rates(resolved["rates"]), master_seed=sw["master_seed"], model=sw["model"],
            chain=build_chain(resolved["chain"]), q=sw["q"], k=sw["k"], q_max=sw["q_max"],
            eps=sw["eps"], delta=sw["delta"],
            h_weights=None if sw["h_weights"] is None else tuple(sw["h_weights"]),
            likelihood_weight=sw["likelihood_weight"], threads=sw["threads"], save_draws=sw["save_draws"],
        )
    except ValueError as exc:
        raise ConfigError(f"sweep: {exc}") from exc
    return plan, build_dgp(resolved["dgp"])


def _explicit(text: str) -> set:
    _, _, rest = text.partition(":")
    return {item.partition("=")[0].strip() for item in rest.split(",") if "=" in item}
