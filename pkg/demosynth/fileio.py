"""File helpers shared by every writer: atomic replacement and a lock file
that keeps two commands from writing the same output directory."""
import contextlib
import fcntl
import logging
import os
import tempfile

from .errors import DatasetIOError

LOCK_NAME = '.demosynth.lock'

log = logging.getLogger(__name__)


@contextlib.contextmanager
def atomic_write(path, binary=False):
    """Yields a handle to a temporary file next to path, which replaces path
    only if the block finishes without an exception"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, temp_path = tempfile.mkstemp(
        prefix='.' + os.path.basename(path) + '.', dir=directory)
    mode = 'wb' if binary else 'w'
    kwargs = {} if binary else {'encoding': 'utf-8', 'newline': '\n'}
    try:
        with os.fdopen(handle, mode, **kwargs) as output:
            yield output
            output.flush()
            os.fsync(output.fileno())
        os.replace(temp_path, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(temp_path)
        raise


def write_text(path, text):
    "Atomically writes a string to path"
    with atomic_write(path) as output:
        output.write(text)


class PathLock():
    """An exclusive advisory lock on an output directory. Raises
    DatasetIOError at once if another process holds it."""

    def __init__(self, directory):
        self.log = logging.getLogger("{}.{}".format(
            self.__class__.__module__, self.__class__.__name__
        ))
        self.directory = directory
        self.path = os.path.join(directory, LOCK_NAME)
        self._handle = None

    def acquire(self):
        os.makedirs(self.directory, exist_ok=True)
        handle = open(self.path, 'a+')
        try:
            fcntl.flock(handle.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError as err:
            handle.close()
            raise DatasetIOError(
                f"{self.directory} is locked by another command") from err
        self._handle = handle
        self.log.debug("locked %s", self.directory)
        return self

    def release(self):
        if self._handle is None:
            return
        fcntl.flock(self._handle.fileno(), fcntl.LOCK_UN)
        self._handle.close()
        self._handle = None
        with contextlib.suppress(OSError):
            os.unlink(self.path)

    def __enter__(self):
        return self.acquire()

    def __exit__(self, *exc_info):
        self.release()
