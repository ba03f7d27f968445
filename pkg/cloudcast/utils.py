"""
Various utility functions for cloudcast.

Apart from value coercion for command arguments, this module holds the
helpers every artifact writer shares: content hashing, JSON files and
the exclusive lock used by the benchmarks.
"""

import hashlib
import json
import os

from . import log, script_ext
from .errors import CloudcastException


class Singleton(object):
    """A mixin class to create singleton objects."""

    def __new__(cls, *args, **kwargs):
        it = cls.__dict__.get('__it__')
        if it is not None:
            return it
        cls.__it__ = it = object.__new__(cls)
        return it

    @classmethod
    def reset(cls):
        cls.__it__ = None


def make_boolean(value):
    """Convert the input value into a boolean."""
    value = str(value).lower().strip()

    # true/false
    if value in ('true', 'false'):
        return value == 'true'

    # 0/nonzero
    try:
        ival = int(value)
    except ValueError:
        pass
    else:
        return bool(ival)

    # +/-
    if value in ('+', '-'):
        return value == '+'

    # on/off
    if value in ('on', 'off'):
        return value == 'on'

    raise CloudcastException(
        "unable to convert '%s' into true/false" % (value,))


def make_int(value):
    """Convert the input value into an int."""
    try:
        ival = int(value)
    except Exception:
        pass
    else:
        return ival

    raise CloudcastException("unable to convert '%s' into an int" % (value,))


def make_float(value):
    """Convert the input value into a float."""
    try:
        fval = float(value)
    except Exception:
        pass
    else:
        return fval

    raise CloudcastException("unable to convert '%s' into a float" % (value,))


def canonical_json(obj):
    """Serialize an object to JSON with a stable key order."""
    return json.dumps(obj, sort_keys=True, separators=(',', ':'),
                      default=_json_default)


def _json_default(obj):
    """Make numpy scalars and arrays JSON serializable."""
    if hasattr(obj, 'tolist'):
        return obj.tolist()
    if hasattr(obj, 'to_dict'):
        return obj.to_dict()
    raise TypeError('%r is not JSON serializable' % (obj,))


def content_hash(obj, length=12):
    """Get a short hex digest identifying a JSON-serializable object."""
    digest = hashlib.sha256(canonical_json(obj).encode('utf-8'))
    return digest.hexdigest()[:length]


def write_json(path, obj):
    """Write an object as indented JSON, creating parent directories."""
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=_json_default)
        f.write('\n')


def read_json(path):
    """Read a JSON document."""
    with open(path, encoding='utf-8') as f:
        return json.load(f)


class LockFile(object):
    """An exclusive lock held by the existence of a file.

    Acquiring fails right away if another process holds the lock.
    """

    def __init__(self, path):
        self.path = path
        self.fd = None

    def __enter__(self):
        dirname = os.path.dirname(self.path)
        if dirname:
            os.makedirs(dirname, exist_ok=True)
        try:
            self.fd = os.open(
                self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CloudcastException(
                "lock '%s' is held by another process" % (self.path,))
        os.write(self.fd, str(os.getpid()).encode('ascii'))
        log.debug('acquired lock %s', self.path)
        return self

    def __exit__(self, *exc_info):
        os.close(self.fd)
        self.fd = None
        try:
            os.unlink(self.path)
        except OSError:
            pass
        log.debug('released lock %s', self.path)
        return False


def is_hidden_filename(filename):
    """Check if this is a hidden file (starting with a dot)."""
    return filename not in (
        '.', '..') and os.path.basename(filename).startswith('.')


def is_script_filename(filename):
    """Check if the given filename has the pipeline script extension."""
    return filename.endswith(script_ext) and not is_hidden_filename(filename)


def make_script_filename(name):
    """Add the script extension to the name of a script if necessary."""
    if name not in ('.', '..'):
        scriptname, ext = os.path.splitext(name)
        if not ext:
            scriptname += script_ext
            if os.path.exists(scriptname):
                name = scriptname
    return name


def gather_filenames(arglist):
    """Collect script files from within directories."""
    names = []
    for arg in arglist:
        name = make_script_filename(arg)
        if os.path.isdir(name):
            for dirpath, dirnames, filenames in os.walk(arg):
                dirnames[:] = [
                    d for d in dirnames if not is_hidden_filename(d)]
                for filename in sorted(filenames):
                    if not is_script_filename(filename):
                        continue
                    filename = os.path.join(dirpath, filename)
                    names.append(filename)
        else:
            names.append(name)
    return names
