"""Run configuration files and the coefficient catalog.

A configuration is an INI file with the sections ``[problem]``,
``[discretization]``, ``[study]`` and ``[output]``. Every key is optional
except ``alpha``, ``hurst`` and ``beta``; see the README for the full grammar.
Coefficients are picked by name from :data:`CATALOG` so that each one comes
with a known Lipschitz constant.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from fracspde.errors import ConfigError
from fracspde.fem import CoefficientField
from fracspde.noise import NoiseSpec
from fracspde.scheme import FractionalParams, ProblemSpec, fractional_param_problems

STUDY_KINDS = ("simulate", "temporal", "spatial", "mlcheck", "noisecheck", "smoothing", "dump")
FORMATS = ("csv", "json", "both")


@dataclass(frozen=True)
class CatalogEntry:
    """A coefficient family ``c -> function`` with its Lipschitz constant in ``u``.

    ``lipschitz(c, trace_q)`` returns the constant ``L`` of ``|F(u) - F(v)|**2 <= L |u - v|**2``
    (for ``g`` the left side is the Hilbert-Schmidt norm against ``Q**(1/2)``).
    """

    build: Callable[[float], Callable[..., np.ndarray]]
    lipschitz: Callable[[float, float], float]
    doc: str


def _const_field(c: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: np.full(np.shape(x), c)


# |e_i| <= sqrt(2), so a pointwise Lipschitz constant K in u gives
# sum_i q_i |K (u - v) e_i|^2 <= 2 K^2 tr(Q) |u - v|^2
F_CATALOG = {
    "zero": CatalogEntry(lambda c: (lambda x, u: np.zeros_like(u)), lambda c, tq: 0.0, "f = 0"),
    "linear": CatalogEntry(lambda c: (lambda x, u: c * u), lambda c, tq: c * c, "f = c u"),
    "sine": CatalogEntry(lambda c: (lambda x, u: c * np.sin(u)), lambda c, tq: c * c, "f = c sin(u)"),
}
G_CATALOG = {
    "zero": CatalogEntry(lambda c: (lambda x, u: np.zeros_like(u)), lambda c, tq: 0.0, "g = 0"),
    "const": CatalogEntry(
        lambda c: (lambda x, u: np.full(np.shape(u), c)), lambda c, tq: 0.0, "g = c (additive)"
    ),
    "linear": CatalogEntry(
        lambda c: (lambda x, u: c * u), lambda c, tq: 2.0 * c * c * tq, "g = c u"
    ),
    "sin_profile": CatalogEntry(
        lambda c: (lambda x, u: c * np.sin(np.pi * x) * np.sin(u)),
        lambda c, tq: 2.0 * c * c * tq,
        "g = c sin(pi x) sin(u)",
    ),
}
PHI_CATALOG = {
    "zero": CatalogEntry(lambda c: _const_field(0.0), lambda c, tq: 0.0, "phi = 0"),
    "const": CatalogEntry(_const_field, lambda c, tq: 0.0, "phi = c"),
    "sin_profile": CatalogEntry(
        lambda c: (lambda x: c * np.sin(np.pi * x)), lambda c, tq: 0.0, "phi = c sin(pi x)"
    ),
}
X0_CATALOG = {
    "zero": CatalogEntry(lambda c: _const_field(0.0), lambda c, tq: 0.0, "x0 = 0"),
    "sine": CatalogEntry(
        lambda c: (lambda x: c * np.sin(np.pi * x)), lambda c, tq: 0.0, "x0 = c sin(pi x)"
    ),
    "poly": CatalogEntry(
        lambda c: (lambda x: 4.0 * c * x * (1.0 - x)), lambda c, tq: 0.0, "x0 = 4 c x (1 - x)"
    ),
}
CATALOG = {"f": F_CATALOG, "g": G_CATALOG, "phi": PHI_CATALOG, "x0": X0_CATALOG}


# key -> (converter, default); None marks a required key
_SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "problem": {
        "alpha": (float, None),
        "hurst": (float, None),
        "beta": (float, None),
        "T": (float, 1.0),
        "c0": (float, 0.0),
        "diffusion": (float, 1.0),
        "advection": (float, 0.0),
        "f": (str, "zero"),
        "f_c": (float, 1.0),
        "g": (str, "zero"),
        "g_c": (float, 1.0),
        "phi": (str, "zero"),
        "phi_c": (float, 1.0),
        "x0": (str, "sine"),
        "x0_c": (float, 1.0),
        "lipschitz_L": (float, -1.0),
    },
    "discretization": {
        "n": (int, 63),
        "M": (int, 256),
        "n_modes": (int, 64),
        "decay": (float, 3.0),
    },
    "study": {
        "kind": (str, "simulate"),
        "levels": (str, ""),
        "ref": (int, 0),
        "n_mc": (int, 100),
        "seed": (int, 0),
        "workers": (int, 1),
        "tolerance": (float, 0.15),
    },
    "output": {
        "dir": (str, "out"),
        "format": (str, "both"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    problem: dict[str, Any]
    discretization: dict[str, Any]
    study: dict[str, Any]
    output: dict[str, Any]
    source: str = ""

    @property
    def kind(self) -> str:
        return self.study["kind"]

    @property
    def seed(self) -> int:
        return self.study["seed"]

    @property
    def levels(self) -> list[int]:
        return _int_list(self.study["levels"])

    def fractional(self) -> FractionalParams:
        p = self.problem
        return FractionalParams(p["alpha"], p["hurst"], p["beta"])

    def noise(self) -> NoiseSpec:
        d = self.discretization
        return NoiseSpec(hurst=self.problem["hurst"], n_modes=d["n_modes"], decay=d["decay"])

    def catalog_lipschitz(self) -> float:
        p = self.problem
        tq = self.noise().trace
        lf = F_CATALOG[p["f"]].lipschitz(p["f_c"], tq)
        lg = G_CATALOG[p["g"]].lipschitz(p["g_c"], tq)
        return max(lf, lg)

    def problem_spec(self) -> ProblemSpec:
        p = self.problem
        L = p["lipschitz_L"] if p["lipschitz_L"] >= 0 else self.catalog_lipschitz()
        name = f"f={p['f']}({p['f_c']:g}),g={p['g']}({p['g_c']:g}),phi={p['phi']}({p['phi_c']:g}),x0={p['x0']}({p['x0_c']:g})"
        return ProblemSpec(
            fractional=self.fractional(),
            T=p["T"],
            f=F_CATALOG[p["f"]].build(p["f_c"]),
            g=G_CATALOG[p["g"]].build(p["g_c"]),
            phi=PHI_CATALOG[p["phi"]].build(p["phi_c"]),
            lipschitz_L=L,
            x0=X0_CATALOG[p["x0"]].build(p["x0_c"]),
            coeff=CoefficientField(D=p["diffusion"], q=p["advection"], c0=p["c0"]),
            name=name,
        )

    def echo(self) -> dict[str, Any]:
        return {
            "problem": dict(self.problem),
            "discretization": dict(self.discretization),
            "study": dict(self.study),
            "output": dict(self.output),
        }

    def replace(self, section: str, **values: Any) -> RunConfig:
        sections = self.echo()
        sections[section].update(values)
        return validate(sections, self.source)


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def _is_pow2(k: int) -> bool:
    return k >= 1 and k & (k - 1) == 0


def _problems(sections: dict[str, dict[str, Any]]) -> list[str]:
    p, d, s, o = (sections[k] for k in ("problem", "discretization", "study", "output"))
    problems = list(fractional_param_problems(p["alpha"], p["hurst"], p["beta"]))

    if not p["T"] > 0:
        problems.append(f"T={p['T']} must be positive")
    if not p["diffusion"] > 0:
        problems.append(f"diffusion={p['diffusion']} violates ellipticity (must be positive)")
    for name, table in CATALOG.items():
        if p[name] not in table:
            problems.append(f"{name}={p[name]!r} is not in the catalog {sorted(table)}")

    if not d["decay"] > 1:
        problems.append(f"decay r={d['decay']} must exceed 1 for a trace-class Q")
    if d["n_modes"] < 1:
        problems.append(f"n_modes={d['n_modes']} must be positive")
    if d["n"] < 2:
        problems.append(f"n={d['n']} must be at least 2")
    if d["M"] < 1:
        problems.append(f"M={d['M']} must be positive")

    kind = s["kind"]
    if kind not in STUDY_KINDS:
        problems.append(f"kind={kind!r} must be one of {', '.join(STUDY_KINDS)}")
    try:
        levels = _int_list(s["levels"])
    except ValueError:
        problems.append(f"levels={s['levels']!r} must be a list of integers")
        levels = []
    if kind == "temporal":
        if len(levels) < 3:
            problems.append("temporal study needs at least 3 step-count levels")
        if not all(_is_pow2(k) for k in [*levels, s["ref"]]):
            problems.append("temporal levels and ref must be powers of 2 (dyadic steps)")
        elif levels and s["ref"] <= max(levels):
            problems.append(f"ref={s['ref']} must exceed every temporal level")
    if kind == "spatial":
        if len(levels) < 3:
            problems.append("spatial study needs at least 3 mesh levels")
        if not all(_is_pow2(k + 1) and k >= 3 for k in [*levels, s["ref"]]):
            problems.append("spatial levels and ref must have the form 2**k - 1 (nested meshes)")
        elif levels and s["ref"] <= max(levels):
            problems.append(f"ref={s['ref']} must exceed every spatial level")
    if kind in ("temporal", "spatial") and s["n_mc"] < 2:
        problems.append(f"n_mc={s['n_mc']} must be at least 2")
    if s["workers"] < 1:
        problems.append(f"workers={s['workers']} must be positive")
    if not 0 <= s["seed"] < 2**64:
        problems.append(f"seed={s['seed']} must be an unsigned 64-bit integer")

    if o["format"] not in FORMATS:
        problems.append(f"format={o['format']!r} must be one of {', '.join(FORMATS)}")

    if not problems and p["lipschitz_L"] >= 0:
        cfg = RunConfig(p, d, s, o)
        needed = cfg.catalog_lipschitz()
        if p["lipschitz_L"] < needed:
            problems.append(
                f"lipschitz_L={p['lipschitz_L']} is below the catalog constant {needed:.6g} "
                "of the chosen f and g"
            )
    return problems


def validate(sections: dict[str, dict[str, Any]], source: str = "") -> RunConfig:
    problems = _problems(sections)
    if problems:
        raise ConfigError(problems)
    return RunConfig(
        problem=sections["problem"],
        discretization=sections["discretization"],
        study=sections["study"],
        output=sections["output"],
        source=source,
    )


def load_sections(text: str) -> tuple[dict[str, dict[str, Any]], list[str]]:
    """Parse INI text into typed sections plus a list of every problem found."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case sensitive (T, M)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        return {}, [f"malformed configuration: {exc}"]

    problems = []
    for section in parser.sections():
        if section not in _SCHEMA:
            problems.append(f"unknown section [{section}]")

    sections: dict[str, dict[str, Any]] = {}
    for section, keys in _SCHEMA.items():
        values = {}
        given = parser[section] if parser.has_section(section) else {}
        for key in given:
            if key not in keys:
                problems.append(f"unknown key {key!r} in [{section}]")
        for key, (convert, default) in keys.items():
            if key in given:
                raw = given[key].strip()
                try:
                    values[key] = convert(raw)
                except ValueError:
                    problems.append(f"[{section}] {key}={raw!r} is not a valid {convert.__name__}")
                    values[key] = default
            else:
                if default is None:
                    problems.append(f"missing required key {key!r} in [{section}]")
                values[key] = default
        sections[section] = values
    return sections, problems


def parse_config(path: str | Path, overrides: dict[str, dict[str, Any]] | None = None) -> RunConfig:
    """Read and validate a configuration file; all violations are reported together."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from exc
    return parse_config_text(text, source=str(path), overrides=overrides)


def parse_config_text(
    text: str, source: str = "<string>", overrides: dict[str, dict[str, Any]] | None = None
) -> RunConfig:
    sections, problems = load_sections(text)
    if not sections or any(v is None for sec in sections.values() for v in sec.values()):
        # without every required value the range checks cannot run
        raise ConfigError(problems)
    for section, values in (overrides or {}).items():
        sections[section].update(values)
    problems += _problems(sections)
    if problems:
        raise ConfigError(problems)
    return RunConfig(**sections, source=source)
