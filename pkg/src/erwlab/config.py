"""Line-oriented environment files.

::

    # comment
    L = 2
    M = 3
    nu.1  = 3/5
    nu.-1 = 1/5
    nu.-2 = 1/5
    q1.1  = 9/10
    q1.-1 = 1/10
    ...

Keys are ``L``, ``M``, ``nu.<k>`` and ``q<j>.<k>`` with ``k`` a jump in
``{-L, ..., -1, 1}`` and ``1 <= j <= M``.  Values are ``p/q`` rationals
(kept exact) or decimals.  Omitted probabilities are zero.
"""

from __future__ import annotations

import hashlib
import re
from pathlib import Path

from .environment import (ENV_A, ENV_B, ENV_C, ENV_CRITICAL, CookieEnvironment, InvalidEnvironment,
                          JumpLaw, as_probability, environment_issues)

BUILTIN = {"ENV-A": ENV_A, "ENV-B": ENV_B, "ENV-C": ENV_C, "ENV-DELTA2": ENV_CRITICAL}

_KEY = re.compile(r"^(L|M|nu\.(-?\d+)|q(\d+)\.(-?\d+))$")


class ParseError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ValidationError(ValueError):
    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


def parse_text(text: str, name: str = "") -> CookieEnvironment:
    """Parse and validate; raises :class:`ParseError` or :class:`ValidationError`."""
    L = M = None
    nu, q = {}, {}
    seen = set()
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = (x.strip() for x in line.split("=", 1))
        else:
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(no, f"expected 'key = value', got {raw!r}")
            key, value = parts
        m = _KEY.match(key)
        if not m:
            raise ParseError(no, f"unknown key {key!r}")
        if key in seen:
            raise ParseError(no, f"duplicate key {key!r}")
        seen.add(key)
        if key in ("L", "M"):
            try:
                v = int(value)
            except ValueError:
                raise ParseError(no, f"{key} must be an integer") from None
            if v < 1:
                raise ParseError(no, f"{key} must be positive")
            if key == "L":
                L = v
            else:
                M = v
            continue
        try:
            p = as_probability(value)
        except (ValueError, ZeroDivisionError, TypeError) as exc:
            raise ParseError(no, f"bad probability {value!r}: {exc}") from None
        if m.group(2) is not None:
            nu[int(m.group(2))] = p
        else:
            q.setdefault(int(m.group(3)), {})[int(m.group(4))] = p
    if L is None or M is None:
        raise ParseError(0, "both L and M are required")
    bad = [j for j in q if not 1 <= j <= M]
    if bad:
        raise ParseError(0, f"cookie index {bad[0]} outside 1..{M}")
    laws = tuple(JumpLaw(q.get(j, {}), L) for j in range(1, M + 1))
    env = CookieEnvironment(L, M, laws, JumpLaw(nu, L), name)
    issues = environment_issues(env)
    if issues:
        raise ValidationError(issues)
    return env


def parse_config(path) -> CookieEnvironment:
    """Read an environment file; built-in names (``ENV-A``...) are accepted too."""
    if str(path) in BUILTIN:
        return BUILTIN[str(path)]
    p = Path(path)
    return parse_text(p.read_text(encoding="utf-8"), p.stem)


def format_environment(env: CookieEnvironment) -> str:
    """Inverse of :func:`parse_text` (canonical key order)."""
    lines = [f"L = {env.L}", f"M = {env.M}"]
    for k in sorted(env.nu.probs):
        lines.append(f"nu.{k} = {env.nu.probs[k]}")
    for j, law in enumerate(env.q, start=1):
        for k in sorted(law.probs):
            lines.append(f"q{j}.{k} = {law.probs[k]}")
    return "\n".join(lines) + "\n"


def config_hash(env: CookieEnvironment) -> str:
    return hashlib.sha256(env.canonical().encode()).hexdigest()
