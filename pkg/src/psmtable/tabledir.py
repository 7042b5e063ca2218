"""Table directory plumbing: descriptor file and the writer lock."""

from __future__ import annotations

import os
from pathlib import Path

from .descriptor import TableDesc
from .errors import AlreadyExists, IoFailed, LockHeld, NotATable

DESC_NAME = "table.desc"
LOCK_NAME = "table.lock"


def create_table_dir(path: Path, desc: TableDesc) -> None:
    path = Path(path)
    if (path / DESC_NAME).exists():
        raise AlreadyExists(f"{path} already contains a table")
    if path.exists() and any(path.iterdir()):
        raise AlreadyExists(f"{path} exists and is not empty")
    if not path.parent.exists():
        raise IoFailed(f"parent directory {path.parent} does not exist")
    try:
        path.mkdir(exist_ok=True)
        (path / DESC_NAME).write_bytes(desc.to_text().encode("ascii"))
    except OSError as exc:
        raise IoFailed(f"creating table at {path}: {exc}") from exc


def read_desc(path: Path) -> TableDesc:
    desc_path = Path(path) / DESC_NAME
    try:
        text = desc_path.read_bytes().decode("ascii")
    except FileNotFoundError:
        raise NotATable(f"no {DESC_NAME} in {path}") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise NotATable(f"cannot read {desc_path}: {exc}") from exc
    return TableDesc.from_text(text)


def is_table(path: Path) -> bool:
    return (Path(path) / DESC_NAME).is_file()


def acquire_lock(path: Path) -> int:
    """Exclusive-create ``table.lock``; stale locks are never auto-broken."""
    lock_path = Path(path) / LOCK_NAME
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockHeld(f"{lock_path} is held by another writer") from None
    except OSError as exc:
        raise IoFailed(f"creating {lock_path}: {exc}") from exc
    os.write(fd, f"pid {os.getpid()}\n".encode())
    return fd


def release_lock(path: Path, fd: int) -> None:
    try:
        os.close(fd)
    except OSError:
        pass
    try:
        os.unlink(Path(path) / LOCK_NAME)
    except OSError:
        pass
