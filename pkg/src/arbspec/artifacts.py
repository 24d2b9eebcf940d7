"""Atomic file output and the run manifest."""

from __future__ import annotations

import configparser
import contextlib
import datetime as _dt
import hashlib
import io
import os
import subprocess
import tempfile
from pathlib import Path

import numpy as np


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temporary path next to ``path`` and move it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path, text):
    with atomic_path(path) as tmp, open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_with(path, writer, *args, **kwargs):
    """Call ``writer(tmp_path, *args, **kwargs)`` and move the result to ``path``."""
    with atomic_path(path) as tmp:
        writer(tmp, *args, **kwargs)


def gnuplot_blocks(blocks, columns):
    """Gnuplot data text: one commented header, blocks separated by two blank lines.

    ``blocks`` is a sequence of ``(title, rows)``.
    """
    out = io.StringIO()
    out.write("# " + " ".join(columns) + "\n")
    for i, (title, rows) in enumerate(blocks):
        if i:
            out.write("\n\n")
        out.write(f"# {title}\n")
        for row in rows:
            out.write(" ".join(f"{v:.10g}" for v in row) + "\n")
    return out.getvalue()


def histogram_rows(values, bins=50):
    """``(left, right, count)`` rows of a histogram of the finite values."""
    values = np.asarray(values, float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return []
    counts, edges = np.histogram(values, bins=bins)
    return [(edges[i], edges[i + 1], counts[i]) for i in range(counts.size)]


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def version_string():
    """Package version plus ``git describe`` output when available."""
    from . import __version__

    here = Path(__file__).resolve().parent
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                              capture_output=True, text=True, timeout=10, check=True).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+g{desc}" if desc else __version__


def write_manifest(path, sections, files, seed):
    """INI manifest: the config echo, version, seed and a checksum per output file.

    The manifest is itself a valid config, so the run can be repeated from it.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for name, items in sections.items():
        cp[name] = items
    cp["manifest"] = {
        "version": version_string(),
        "master_seed": str(seed),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    base = Path(path).parent
    cp["files"] = {str(Path(f).relative_to(base)): sha256(f) for f in sorted(files)}
    buf = io.StringIO()
    cp.write(buf)
    write_text(path, buf.getvalue())
