"""Durable participant records: one file per (study, participant).

Layout: ``<root>/<study>__<quoted-participant>.json``, each file holding
one versioned state snapshot (see ``state.encode_state``). Writes go to a
temp file in the same directory and are moved into place with
``os.replace``, so a record is always either the old or the new complete
document — a killed process cannot leave a torn file behind. Durability
target is process death, not power loss; pass ``fsync=True`` to also
flush each record to disk.
"""

from __future__ import annotations

import os
import tempfile
import threading
from pathlib import Path
from urllib.parse import quote, unquote

from .state import DecodeError, StateRecord, decode_state, encode_state


class StorageError(Exception):
    pass


class StorageUnavailableError(StorageError):
    pass


class NotFoundError(StorageError):
    pass


class FileStore:
    def __init__(self, root: str | Path, fsync: bool = False):
        self.root = Path(root)
        self.fsync = fsync
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageUnavailableError(f"cannot create data dir {self.root}: {exc}") from exc
        self._lock = threading.Lock()
        self._file_locks: dict[Path, threading.Lock] = {}

    def path_for(self, study: str, participant: str) -> Path:
        return self.root / f"{quote(study, safe='')}__{quote(participant, safe='')}.json"

    def _lock_for(self, path: Path) -> threading.Lock:
        with self._lock:
            lock = self._file_locks.get(path)
            if lock is None:
                lock = self._file_locks[path] = threading.Lock()
            return lock

    def put_record(self, record: StateRecord) -> None:
        """Atomically replace the record for (record.study, record.participant)."""
        path = self.path_for(record.study, record.participant)
        payload = encode_state(record)
        with self._lock_for(path):
            try:
                fd, tmp_name = tempfile.mkstemp(dir=self.root, prefix=".tmp-", suffix=".json")
                try:
                    with os.fdopen(fd, "w", encoding="utf-8") as fh:
                        fh.write(payload)
                        if self.fsync:
                            fh.flush()
                            os.fsync(fh.fileno())
                    os.replace(tmp_name, path)
                except BaseException:
                    try:
                        os.unlink(tmp_name)
                    except OSError:
                        pass
                    raise
            except OSError as exc:
                raise StorageUnavailableError(f"cannot write {path}: {exc}") from exc

    def get_record(self, study: str, participant: str) -> StateRecord:
        path = self.path_for(study, participant)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise NotFoundError(f"no record for participant {participant!r} in study {study!r}")
        except OSError as exc:
            raise StorageUnavailableError(f"cannot read {path}: {exc}") from exc
        try:
            return decode_state(text)
        except DecodeError as exc:
            raise DecodeError(f"{path}: {exc}") from exc

    def has_record(self, study: str, participant: str) -> bool:
        return self.path_for(study, participant).exists()

    def list_records(self, study: str) -> list[StateRecord]:
        """All records of *study*. A corrupt file raises; it is never skipped."""
        prefix = f"{quote(study, safe='')}__"
        records = []
        for path in sorted(self.root.glob("*.json")):
            if path.name.startswith(".tmp-") or not path.name.startswith(prefix):
                continue
            try:
                records.append(decode_state(path.read_text(encoding="utf-8")))
            except DecodeError as exc:
                raise DecodeError(f"{path}: {exc}") from exc
        return records

    def delete_record(self, study: str, participant: str) -> None:
        path = self.path_for(study, participant)
        with self._lock_for(path):
            try:
                path.unlink(missing_ok=True)
            except OSError as exc:
                raise StorageUnavailableError(f"cannot delete {path}: {exc}") from exc


def participant_from_filename(name: str) -> str:
    """Inverse of the filename encoding, for inspection tools."""
    stem = name[:-5] if name.endswith(".json") else name
    _, _, quoted = stem.partition("__")
    return unquote(quoted)
