"""Record every file a block of code opens.

Used to demonstrate that agent training touches only world-model
checkpoints and never the replay data.
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class FileAccess:
    path: str
    mode: str
    size: int


_ACTIVE: list["IOAudit"] = []
_HOOKED = False


def _mode_from_flags(flags: int) -> str:
    acc = flags & (os.O_RDONLY | os.O_WRONLY | os.O_RDWR)
    if acc == os.O_WRONLY:
        return "w"
    return "r+" if acc == os.O_RDWR else "r"


def _hook(event: str, args) -> None:
    if event != "open" or not _ACTIVE:
        return
    file, mode, flags = args
    if not isinstance(file, (str, bytes, os.PathLike)):
        return
    p = os.path.realpath(os.fsdecode(file))
    mode = str(mode) if mode is not None else _mode_from_flags(int(flags or 0))
    try:
        size = os.path.getsize(p) if os.path.isfile(p) else 0
    except OSError:
        size = 0
    for audit in _ACTIVE:
        audit.accesses.append(FileAccess(p, mode, size))


@dataclass
class IOAudit:
    """Context manager recording file opens via the interpreter audit hook.

    Audit hooks cannot be removed, so one hook is installed on first use and
    only records while an ``IOAudit`` is active. It sees ``open``, ``io.open``,
    ``os.open`` and pathlib alike.
    """

    accesses: list[FileAccess] = field(default_factory=list)

    def __enter__(self) -> "IOAudit":
        global _HOOKED
        if not _HOOKED:
            sys.addaudithook(_hook)
            _HOOKED = True
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def reads(self) -> list[FileAccess]:
        return [a for a in self.accesses if "r" in a.mode and "+" not in a.mode]

    def bytes_read_under(self, paths) -> int:
        """Upper bound on bytes read from files at or below any of ``paths``."""
        roots = [os.path.realpath(os.fspath(p)) for p in paths]
        total = 0
        for a in self.reads():
            if any(a.path == r or a.path.startswith(r.rstrip(os.sep) + os.sep) for r in roots):
                total += a.size
        return total

    def touched(self, paths) -> list[str]:
        roots = [os.path.realpath(os.fspath(p)) for p in paths]
        return sorted({a.path for a in self.accesses
                       if any(a.path == r or a.path.startswith(r.rstrip(os.sep) + os.sep)
                              for r in roots)})


def file_paths(directory: str | Path, pattern: str = "*") -> list[Path]:
    return sorted(Path(directory).glob(pattern))
