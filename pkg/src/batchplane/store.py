"""Pluggable object store: atomic put-if-absent, range reads, idempotent delete.

The store is the only shared mutable state in the system. All coordination
(commit serialization, recovery, reclamation) reduces to these primitives, so
both backends must guarantee:

  * one-winner: at most one concurrent put_if_absent on a key returns Created
  * immutability: object bytes never change between creation and deletion
  * read atomicity: readers see the whole object or NotFound, never a prefix

Watermark objects are the single overwrite case in the system (one writer per
key, monotone content), served by the unconditional ``put``.
"""

from __future__ import annotations

import enum
import os
import random
import re
import tempfile
import threading
import time
from dataclasses import dataclass, field

from .distributions import Distribution, ZERO
from .errors import InvalidKey, NotFound, RangeOutOfBounds, TransientIo

_COMPONENT_RE = re.compile(r"^[A-Za-z0-9._-]+$")


def validate_key(key: str) -> str:
    """Check key shape: slash-separated, no leading slash, no '..' segments."""
    if not key or not isinstance(key, str):
        raise InvalidKey(f"empty or non-string key: {key!r}")
    if key.startswith("/"):
        raise InvalidKey(f"leading slash in key {key!r}")
    for comp in key.split("/"):
        if not _COMPONENT_RE.match(comp):
            raise InvalidKey(f"bad component {comp!r} in key {key!r}")
        if comp == "..":
            raise InvalidKey(f"'..' segment in key {key!r}")
    return key


class PutOutcome(enum.Enum):
    CREATED = "created"
    ALREADY_EXISTS = "already_exists"


@dataclass
class FaultProfile:
    """Latency and crash injection for the in-memory backend.

    crash_after_put_probability injects a TransientIo *after* the put has taken
    effect, so the caller cannot tell whether it landed. This is the ambiguous
    outcome the commit protocol's re-read rule exists for.
    """

    put_latency: Distribution = ZERO
    get_latency: Distribution = ZERO
    crash_after_put_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.crash_after_put_probability <= 1.0:
            raise ValueError("crash_after_put_probability must be in [0,1]")
        self._rng = random.Random(self.seed)
        self._lock = threading.Lock()

    def sleep_put(self) -> None:
        with self._lock:
            d = self.put_latency.sample(self._rng)
        if d > 0:
            time.sleep(d)

    def sleep_get(self) -> None:
        with self._lock:
            d = self.get_latency.sample(self._rng)
        if d > 0:
            time.sleep(d)

    def crash_after_put(self) -> bool:
        with self._lock:
            return self._rng.random() < self.crash_after_put_probability


class ObjectStore:
    """Interface both backends implement. All methods are thread-safe."""

    def put_if_absent(self, key: str, data: bytes) -> PutOutcome:
        """Create the object iff the key is unclaimed. Exactly one concurrent
        caller wins; losers leave the store unchanged."""
        raise NotImplementedError

    def put(self, key: str, data: bytes) -> None:
        """Unconditional atomic create-or-replace (watermarks only)."""
        raise NotImplementedError

    def get(self, key: str) -> bytes:
        raise NotImplementedError

    def get_range(self, key: str, offset: int, length: int) -> bytes:
        raise NotImplementedError

    def list(self, prefix: str) -> list[str]:
        """All keys starting with ``prefix``, lexicographically sorted, so
        zero-padded version names come back in numeric order."""
        raise NotImplementedError

    def delete(self, key: str) -> None:
        """Idempotent: deleting a missing key succeeds."""
        raise NotImplementedError

    def size(self, key: str) -> int:
        raise NotImplementedError

    def exists(self, key: str) -> bool:
        try:
            self.size(key)
            return True
        except NotFound:
            return False


def _check_range(size: int, offset: int, length: int, key: str) -> None:
    if offset < 0 or length < 0 or offset + length > size:
        raise RangeOutOfBounds(
            f"range [{offset}, {offset + length}) outside object {key!r} of size {size}"
        )


class MemoryStore(ObjectStore):
    """Dict-backed store; the default for tests. Supports fault injection."""

    def __init__(self, fault: FaultProfile | None = None):
        self._objects: dict[str, bytes] = {}
        self._lock = threading.Lock()
        self._fault = fault

    def put_if_absent(self, key: str, data: bytes) -> PutOutcome:
        validate_key(key)
        if self._fault:
            self._fault.sleep_put()
        with self._lock:
            if key in self._objects:
                outcome = PutOutcome.ALREADY_EXISTS
            else:
                self._objects[key] = bytes(data)
                outcome = PutOutcome.CREATED
        if self._fault and self._fault.crash_after_put():
            raise TransientIo(f"injected fault after put of {key!r}")
        return outcome

    def put(self, key: str, data: bytes) -> None:
        validate_key(key)
        if self._fault:
            self._fault.sleep_put()
        with self._lock:
            self._objects[key] = bytes(data)
        if self._fault and self._fault.crash_after_put():
            raise TransientIo(f"injected fault after put of {key!r}")

    def get(self, key: str) -> bytes:
        if self._fault:
            self._fault.sleep_get()
        with self._lock:
            try:
                return self._objects[key]
            except KeyError:
                raise NotFound(key) from None

    def get_range(self, key: str, offset: int, length: int) -> bytes:
        data = self.get(key)
        _check_range(len(data), offset, length, key)
        return data[offset : offset + length]

    def list(self, prefix: str) -> list[str]:
        with self._lock:
            keys = [k for k in self._objects if k.startswith(prefix)]
        return sorted(keys)

    def delete(self, key: str) -> None:
        with self._lock:
            self._objects.pop(key, None)

    def size(self, key: str) -> int:
        with self._lock:
            try:
                return len(self._objects[key])
            except KeyError:
                raise NotFound(key) from None


class FilesystemStore(ObjectStore):
    """Directory-backed store for multi-process tests.

    put_if_absent writes a temp file in the destination directory and links it
    into place; the link fails if the name exists, which gives the one-winner
    property across processes on one host. Readers therefore never observe a
    partially written object.
    """

    def __init__(self, root: str):
        self.root = os.path.abspath(root)
        os.makedirs(self.root, exist_ok=True)

    def _path(self, key: str) -> str:
        validate_key(key)
        return os.path.join(self.root, *key.split("/"))

    def _write_temp(self, directory: str, data: bytes) -> str:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
        try:
            os.write(fd, data)
            os.fsync(fd)
        finally:
            os.close(fd)
        return tmp

    def put_if_absent(self, key: str, data: bytes) -> PutOutcome:
        path = self._path(key)
        tmp = self._write_temp(os.path.dirname(path), data)
        try:
            os.link(tmp, path)
            return PutOutcome.CREATED
        except FileExistsError:
            return PutOutcome.ALREADY_EXISTS
        except OSError as exc:
            raise TransientIo(f"link failed for {key!r}: {exc}") from exc
        finally:
            os.unlink(tmp)

    def put(self, key: str, data: bytes) -> None:
        path = self._path(key)
        tmp = self._write_temp(os.path.dirname(path), data)
        os.replace(tmp, path)

    def get(self, key: str) -> bytes:
        try:
            with open(self._path(key), "rb") as f:
                return f.read()
        except FileNotFoundError:
            raise NotFound(key) from None

    def get_range(self, key: str, offset: int, length: int) -> bytes:
        path = self._path(key)
        try:
            size = os.path.getsize(path)
        except FileNotFoundError:
            raise NotFound(key) from None
        _check_range(size, offset, length, key)
        with open(path, "rb") as f:
            f.seek(offset)
            return f.read(length)

    def list(self, prefix: str) -> list[str]:
        keys = []
        for dirpath, _dirnames, filenames in os.walk(self.root):
            for name in filenames:
                if name.startswith(".tmp-"):
                    continue
                rel = os.path.relpath(os.path.join(dirpath, name), self.root)
                key = rel.replace(os.sep, "/")
                if key.startswith(prefix):
                    keys.append(key)
        return sorted(keys)

    def delete(self, key: str) -> None:
        try:
            os.unlink(self._path(key))
        except FileNotFoundError:
            pass

    def size(self, key: str) -> int:
        try:
            return os.path.getsize(self._path(key))
        except FileNotFoundError:
            raise NotFound(key) from None
