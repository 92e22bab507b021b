"""Run configuration as a YAML key/value tree.

Precedence: command-line flags > config file > built-in defaults.  Unknown
keys and badly typed values raise ContractViolation naming the key path,
e.g. ``meta.inner.alpha: expected a number, got 'fast'``.
"""
import dataclasses
import hashlib
import typing

import yaml

from .errors import ContractViolation
from .harness import ExperimentConfig


def _is_dc(obj):
    return dataclasses.is_dataclass(obj) and not isinstance(obj, type)


def _coerce(path, current, value, hint):
    if hint is bool or isinstance(current, bool):
        if isinstance(value, bool):
            return value
        raise ContractViolation(f"{path}: expected true/false, got {value!r}")
    if hint is int or isinstance(current, int):
        if isinstance(value, bool):
            raise ContractViolation(f"{path}: expected an integer, got {value!r}")
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, int):
            return value
        if isinstance(value, str):
            try:
                f = float(value)
            except ValueError:
                f = None
            if f is not None and f.is_integer():
                return int(f)
        raise ContractViolation(f"{path}: expected an integer, got {value!r}")
    if hint is float or isinstance(current, float):
        if isinstance(value, bool):
            raise ContractViolation(f"{path}: expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ContractViolation(f"{path}: expected a number, got {value!r}") from None
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ContractViolation(f"{path}: expected a list, got {value!r}")
        return tuple(_coerce(f"{path}[{i}]", 0, v, int) for i, v in enumerate(value))
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ContractViolation(f"{path}: expected a string, got {value!r}")
        return value
    return value


def apply_tree(obj, tree, prefix=""):
    """Overlay a nested dict onto a dataclass instance in place."""
    if not isinstance(tree, dict):
        raise ContractViolation(f"{prefix or 'config'}: expected a mapping, got {tree!r}")
    hints = typing.get_type_hints(type(obj))
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in tree.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in names:
            raise ContractViolation(f"{path}: unknown key")
        current = getattr(obj, key)
        if _is_dc(current):
            apply_tree(current, value, path)
            continue
        hint = hints.get(key)
        if current is None:  # optional ints (horizon)
            setattr(obj, key, None if value is None else _coerce(path, None, value, int))
            continue
        setattr(obj, key, _coerce(path, current, value, hint))
    return obj


def set_path(obj, dotted, value):
    """Apply one ``a.b.c=value`` override."""
    tree = value
    for part in reversed(dotted.split(".")):
        tree = {part: tree}
    return apply_tree(obj, tree)


def to_tree(obj):
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if _is_dc(v):
            out[f.name] = to_tree(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def dump_yaml(cfg):
    return yaml.safe_dump(to_tree(cfg), sort_keys=False, default_flow_style=False)


def load_file(path):
    try:
        with open(path) as fh:
            tree = yaml.safe_load(fh)
    except OSError as e:
        raise ContractViolation(f"config: cannot read {path}: {e.strerror}") from None
    except yaml.YAMLError as e:
        raise ContractViolation(f"config: {path} is not valid YAML: {e}") from None
    return tree or {}


def resolve(path=None, flags=None, overrides=()):
    """Defaults, then the file at ``path``, then ``flags`` (a flat dict of
    top-level keys; None values are skipped), then ``key.path=value``
    overrides.  Returns a validated ExperimentConfig."""
    cfg = ExperimentConfig()
    if path:
        apply_tree(cfg, load_file(path))
    for k, v in (flags or {}).items():
        if v is not None:
            apply_tree(cfg, {k: v})
    for item in overrides:
        if "=" not in item:
            raise ContractViolation(f"override {item!r}: expected key.path=value")
        k, v = item.split("=", 1)
        set_path(cfg, k.strip(), yaml.safe_load(v))
    return cfg.validate()


def blob_sha1(text):
    """Git blob object id of ``text`` (what ``git hash-object`` prints)."""
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
