"""JSON and CSV writers that keep 17 significant digits."""
import csv
import json
import math

import numpy as np


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return _Float(float(obj))
    if isinstance(obj, complex):
        return [_Float(obj.real), _Float(obj.imag)]
    return obj


class _Float(float):
    def __repr__(self):
        if math.isnan(self) or math.isinf(self):
            return "null"
        t = "%.17g" % self
        return t if any(c in t for c in ".en") else t + ".0"


def dumps(obj, indent=2):
    """Serialize with floats at 17 significant digits; NaN/inf become null."""
    # the stdlib exposes no public float-format hook, so drive its iterencoder directly
    it = json.encoder._make_iterencode(
        {}, _reject, json.encoder.encode_basestring_ascii, " " * indent,
        lambda f: repr(_Float(f)), ": ", ",", False, False, False)
    return "".join(it(_clean(obj), 0))


def _reject(o):
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj))
        fh.write("\n")


def fmt(x):
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def write_csv(path, header, rows, meta=None):
    """CSV with leading '# key=value' comment lines for metadata."""
    with open(path, "w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])


def read_csv(path):
    meta, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
            else:
                lines.append(line)
    rows = list(csv.reader(lines))
    return meta, rows[0], rows[1:]
