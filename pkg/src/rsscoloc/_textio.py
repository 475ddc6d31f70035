"""Small helpers for the plain-text tables written by the package."""

import hashlib
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from . import __version__
from .errors import FormatError


def config_hash(config: Mapping[str, object]) -> str:
    """Short stable hash of a flat configuration mapping."""
    text = "\n".join(f"{k}={config[k]}" for k in sorted(config))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def header_lines(
    config_hash: Optional[str] = None,
    seed: Optional[int] = None,
    extra: Optional[Mapping[str, object]] = None,
) -> list:
    lines = [f"# rsscoloc {__version__}"]
    if config_hash is not None:
        lines.append(f"# config_hash={config_hash}")
    if seed is not None:
        lines.append(f"# seed={seed}")
    for key, value in (extra or {}).items():
        lines.append(f"# {key}={value}")
    return lines


def fmt(value: float) -> str:
    # repr round-trips float64 exactly, keeps files byte-stable
    return repr(float(value))


def write_table(
    path,
    columns: Sequence[str],
    rows: Iterable[Sequence[object]],
    header: Optional[Sequence[str]] = None,
) -> None:
    out = list(header) if header else []
    out.append(",".join(columns))
    for row in rows:
        out.append(",".join(fmt(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def read_table(path, expected: Sequence[str], optional: Sequence[str] = ()):
    """Read a comma-separated table with a mandatory header line.

    Lines starting with ``#`` are treated as comments. Returns the list of
    records as dicts keyed by column name and the comment lines.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    comments = []
    header = None
    records = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        fields = [f.strip() for f in line.split(",")]
        if header is None:
            header = fields
            missing = [c for c in expected if c not in header]
            unknown = [c for c in header if c not in expected and c not in optional]
            if missing or unknown:
                raise FormatError(
                    f"{path}:{lineno}: header {header} does not match "
                    f"{list(expected) + list(optional)}"
                )
            continue
        if len(fields) != len(header):
            raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}")
        records.append(dict(zip(header, fields)))
    if header is None:
        raise FormatError(f"{path}: missing header line")
    return records, comments


def parse_comment_keys(comments: Sequence[str]) -> dict:
    out = {}
    for c in comments:
        if "=" in c:
            k, v = c.split("=", 1)
            out[k.strip()] = v.strip()
    return out
