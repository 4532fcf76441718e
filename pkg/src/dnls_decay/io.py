"""Flat-file formats: coefficient files, 17-digit CSV tables, JSON manifests."""
from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .nonlinearity import CubicNonlinearity, NuPolynomial


class InputError(ValueError):
    pass


def fmt(x) -> str:
    """17 significant digits: enough for a float to reload bit-identically."""
    return format(float(x) + 0.0, ".17g")


def parse_complex(text: str) -> complex:
    """'re,im', 're' or a Python complex literal such as '-1j'."""
    text = text.strip()
    if "," in text:
        re_s, im_s = text.split(",", 1)
        return complex(float(re_s), float(im_s))
    try:
        return complex(float(text))
    except ValueError:
        try:
            return complex(text.replace(" ", ""))
        except ValueError as exc:
            raise InputError(f"cannot read {text!r} as a complex number") from exc


def format_complex(z: complex) -> str:
    return f"{fmt(z.real)},{fmt(z.imag)}"


def parse_coefficients(text: str) -> CubicNonlinearity:
    """Lines ``key = re,im``; blank lines and ``#`` comments are ignored."""
    coeffs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise InputError(f"line {lineno}: expected 'key = re,im'")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            coeffs[key] = parse_complex(val)
        except InputError as exc:
            raise InputError(f"line {lineno}: {exc}") from None
    try:
        return CubicNonlinearity.from_dict(coeffs)
    except KeyError as exc:
        raise InputError(str(exc)) from None


def read_coefficients(path) -> CubicNonlinearity:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"coefficient file not found: {path}")
    return parse_coefficients(path.read_text())


def format_coefficients(nl: CubicNonlinearity) -> str:
    return "".join(f"{k} = {format_complex(v)}\n" for k, v in nl.to_dict(nonzero_only=True).items())


def parse_nu(text: str) -> NuPolynomial:
    """Inline nu: up to four complex coefficients nu0;nu1;nu2;nu3 (increasing degree).

    Each coefficient uses the coefficient-file syntax, e.g. ``0;0;0,-1`` is -i xi^2.
    """
    parts = [p for p in text.split(";")]
    if not 1 <= len(parts) <= 4:
        raise InputError("nu takes 1 to 4 ';'-separated coefficients")
    cs = [parse_complex(p) for p in parts]
    return NuPolynomial(tuple(c.real for c in cs), tuple(c.imag for c in cs))


def parse_range(text: str, default_kind: str = "lin") -> np.ndarray:
    """'a:b:n' (linear) or 'log:a:b:n' / 'a:b:n(log)'."""
    t = text.strip()
    kind = default_kind
    if t.endswith("(log)"):
        kind, t = "log", t[:-5]
    if t.startswith(("log:", "lin:")):
        kind, t = t[:3], t[4:]
    try:
        a, b, n = t.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise InputError(f"range {text!r} is not of the form a:b:n") from None
    if n < 1 or (n > 1 and not b > a):
        raise InputError(f"range {text!r} is empty or decreasing")
    if kind == "log":
        if a <= 0:
            raise InputError("log ranges need a positive start")
        return np.geomspace(a, b, n)
    return np.linspace(a, b, n)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating, int, np.integer)) else v for v in row])
    return path


def read_csv(path, required: Sequence[str] = ()) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing CSV file: {path}")
    with open(path, newline="") as fh:
        rdr = csv.reader(fh)
        try:
            header = [h.strip() for h in next(rdr)]
        except StopIteration:
            raise InputError(f"{path} is empty") from None
        data = [row for row in rdr if row]
    missing = [c for c in required if c not in header]
    if missing:
        raise InputError(f"{path} lacks column(s) {', '.join(missing)}")
    try:
        cols = np.array(data, dtype=float).reshape(len(data), len(header))
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric entry ({exc})") from None
    return {h: cols[:, i] for i, h in enumerate(header)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"missing file: {path}")
    return json.loads(path.read_text())
