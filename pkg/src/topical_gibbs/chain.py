"""Thinned posterior draws, their manifest, and on-disk persistence.

Archive layout: a directory holding `manifest.json` plus one append-only
binary file per parameter.  Each record is framed as

    magic b"TGR1" | u32 payload byte length | u64 iteration id | payload

with the payload the parameter's float64 values, little-endian, row-major.
The initialization record lives under `init/` in the same framing.  A CSV
export path emits one plain CSV per parameter for interoperability.
"""

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

MAGIC = b"TGR1"
FORMAT_VERSION = 1

RECORD_FIELDS = (
    "alpha", "beta0_scaled", "theta_scaled", "wtilde", "zeta",
    "lambda_sq", "tau_sq", "sigma_obs", "sigma_topic", "accept_rate",
)


@dataclass
class ChainRecord:
    iteration: int
    alpha: np.ndarray                # K
    beta0_scaled: np.ndarray         # J0 x K
    theta_scaled: np.ndarray         # S x K
    wtilde: np.ndarray               # S x P
    zeta: np.ndarray                 # N x S exposures
    lambda_sq: float
    tau_sq: np.ndarray               # L
    sigma_obs: np.ndarray            # J0
    sigma_topic: np.ndarray          # S
    accept_rate: float

    def payload(self, name):
        value = getattr(self, name)
        return np.asarray(value, dtype="<f8").ravel()


@dataclass
class ChainStore:
    manifest: dict
    init_record: ChainRecord | None = None
    records: list = field(default_factory=list)

    @property
    def dims(self):
        return self.manifest["dims"]

    def append(self, record):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise DataError("records must be appended in increasing iteration order")
        self.records.append(record)

    def iterations(self):
        return np.array([r.iteration for r in self.records])


def _record_shapes(dims):
    n, j0, s, p, k, l_rows = (dims[x] for x in ("N", "J0", "S", "P", "K", "L"))
    return {
        "alpha": (k,),
        "beta0_scaled": (j0, k),
        "theta_scaled": (s, k),
        "wtilde": (s, p),
        "zeta": (n, s),
        "lambda_sq": (),
        "tau_sq": (l_rows,),
        "sigma_obs": (j0,),
        "sigma_topic": (s,),
        "accept_rate": (),
    }


def _write_record(fh, iteration, values):
    payload = values.tobytes()
    fh.write(MAGIC)
    fh.write(struct.pack("<I", len(payload)))
    fh.write(struct.pack("<Q", iteration))
    fh.write(payload)


def _read_records(path):
    out = []
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                break
            if head != MAGIC:
                raise DataError(f"bad record magic in {path}")
            (length,) = struct.unpack("<I", fh.read(4))
            (iteration,) = struct.unpack("<Q", fh.read(8))
            payload = fh.read(length)
            if len(payload) != length:
                raise DataError(f"truncated record in {path}")
            out.append((iteration, np.frombuffer(payload, dtype="<f8")))
    return out


def save_chain(store, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(store.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if store.init_record is not None:
        init_dir = os.path.join(out_dir, "init")
        os.makedirs(init_dir, exist_ok=True)
        for name in RECORD_FIELDS:
            with open(os.path.join(init_dir, f"{name}.bin"), "wb") as fh:
                _write_record(fh, store.init_record.iteration,
                              store.init_record.payload(name))
    for name in RECORD_FIELDS:
        with open(os.path.join(out_dir, f"{name}.bin"), "wb") as fh:
            for rec in store.records:
                _write_record(fh, rec.iteration, rec.payload(name))
    return out_dir


def _records_from_columns(columns, dims):
    shapes = _record_shapes(dims)
    n_rec = len(columns["alpha"])
    records = []
    for i in range(n_rec):
        kwargs = {"iteration": columns["alpha"][i][0]}
        for name in RECORD_FIELDS:
            iteration, flat = columns[name][i]
            if iteration != kwargs["iteration"]:
                raise DataError("parameter files disagree on iteration ids")
            shape = shapes[name]
            kwargs[name] = float(flat[0]) if shape == () else flat.reshape(shape)
        records.append(ChainRecord(**kwargs))
    return records


def load_chain(chain_dir):
    manifest_path = os.path.join(chain_dir, "manifest.json")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read chain manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError("unsupported chain format version")
    dims = manifest["dims"]
    columns = {name: _read_records(os.path.join(chain_dir, f"{name}.bin"))
               for name in RECORD_FIELDS}
    store = ChainStore(manifest=manifest)
    store.records = _records_from_columns(columns, dims)
    init_dir = os.path.join(chain_dir, "init")
    if os.path.isdir(init_dir):
        cols = {name: _read_records(os.path.join(init_dir, f"{name}.bin"))
                for name in RECORD_FIELDS}
        store.init_record = _records_from_columns(cols, dims)[0]
    return store


def export_csv(chain_dir, out_dir):
    """Emit one plain CSV per parameter: iteration column plus flat values."""
    store = load_chain(chain_dir)
    shapes = _record_shapes(store.dims)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in RECORD_FIELDS:
        shape = shapes[name]
        width = int(np.prod(shape)) if shape else 1
        if shape == ():
            header = ["iteration", name]
        else:
            header = ["iteration"] + [
                f"{name}_" + "_".join(str(i) for i in idx)
                for idx in np.ndindex(*shape)
            ]
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for rec in store.records:
                flat = rec.payload(name)
                if flat.size != width:
                    raise DataError(f"record width mismatch in {name}")
                fh.write(str(rec.iteration) + ","
                         + ",".join(repr(float(v)) for v in flat) + "\n")
        written.append(path)
    return written


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def archive_digest(chain_dir, normalize_timestamps=True):
    """Digest of the whole archive; manifest timestamps normalized out."""
    h = hashlib.sha256()
    for root, dirs, files in sorted(os.walk(chain_dir)):
        dirs.sort()
        for fname in sorted(files):
            path = os.path.join(root, fname)
            rel = os.path.relpath(path, chain_dir)
            h.update(rel.encode())
            if normalize_timestamps and fname.endswith("manifest.json"):
                with open(path, "r", encoding="utf-8") as fh:
                    manifest = json.load(fh)
                manifest.pop("created_at", None)
                h.update(json.dumps(manifest, sort_keys=True).encode())
            else:
                h.update(bytes.fromhex(file_digest(path)))
    return h.hexdigest()
