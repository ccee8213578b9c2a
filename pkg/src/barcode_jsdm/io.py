"""Data ingestion, run configuration and archive serialization.

Input layout (comma-separated, one header row each):

* counts: ``sample_id, site_id, <species 1>, ..., <species p>``
* covariates: ``sample_id, <covariate 1>, ...`` with an optional ``year``
  column that is kept aside for per-year summaries
* sites: ``site_id, x, y`` in projected units

Archives are written as one directory per chain holding a text file per
tracked quantity (one draw per line, values in C order, ``%.17g`` so the
round trip is exact) plus a JSON manifest.
"""

import csv
import json
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import __version__
from .archive import TRACKED, ChainDraws, PosteriorArchive
from .data_model import CountMatrix, CovariateMatrix, HyperParams
from .gibbs import SweepConfig
from .latent_regression import SiteGeometry

__all__ = [
    "DataError",
    "Dataset",
    "RunConfig",
    "read_counts",
    "read_covariates",
    "read_sites",
    "ingest",
    "write_counts",
    "write_table",
    "atomic_write",
    "serialize_archive",
    "load_archive",
]

YEAR_COLUMN = "year"
MANIFEST = "manifest.json"


class DataError(ValueError):
    """Malformed input; ``row`` is the 1-based line number in ``path``."""

    def __init__(self, message, path=None, row=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if row is not None:
                where += f", row {row}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.row = row


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def _read_rows(path):
    if not os.path.exists(path):
        raise DataError("file not found", path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh)]
    # keep 1-based line numbers while dropping blank lines
    rows = [(k + 1, [c.strip() for c in r]) for k, r in enumerate(rows) if any(c.strip() for c in r)]
    if not rows:
        raise DataError("empty file", path)
    return rows[0][1], rows[1:]


def _parse_count(text, path, row):
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"count {text!r} is not a number", path, row) from None
    if not np.isfinite(v) or v != np.floor(v):
        raise DataError(f"count {text!r} is not an integer", path, row)
    if v < 0:
        raise DataError(f"count {text!r} is negative", path, row)
    return int(v)


def read_counts(path):
    """Read the counts file; returns ``(sample_ids, site_ids, species, Y)``."""
    header, rows = _read_rows(path)
    if len(header) < 3:
        raise DataError("header needs sample id, site id and at least one species", path, 1)
    species = tuple(header[2:])
    if len(set(species)) != len(species):
        raise DataError("duplicate species name in header", path, 1)
    p = len(species)
    samples, sites, Y = [], [], []
    seen = {}
    for lineno, r in rows:
        if len(r) != p + 2:
            raise DataError(f"expected {p + 2} fields, found {len(r)}", path, lineno)
        sid = r[0]
        if sid in seen:
            raise DataError(f"duplicate sample id {sid!r} (first at row {seen[sid]})", path, lineno)
        seen[sid] = lineno
        samples.append(sid)
        sites.append(r[1])
        Y.append([_parse_count(v, path, lineno) for v in r[2:]])
    if not samples:
        raise DataError("no samples", path)
    return samples, sites, species, np.array(Y, dtype=np.int64)


def read_sites(path):
    """Read the sites file; returns ``(site_ids, coords)``."""
    header, rows = _read_rows(path)
    if len(header) != 3:
        raise DataError("header must be: site_id, x, y", path, 1)
    ids, coords = [], []
    seen = {}
    for lineno, r in rows:
        if len(r) != 3:
            raise DataError(f"expected 3 fields, found {len(r)}", path, lineno)
        if r[0] in seen:
            raise DataError(f"duplicate site id {r[0]!r} (first at row {seen[r[0]]})", path, lineno)
        seen[r[0]] = lineno
        try:
            xy = [float(r[1]), float(r[2])]
        except ValueError:
            raise DataError("coordinates must be numeric", path, lineno) from None
        if not np.all(np.isfinite(xy)):
            raise DataError("coordinates must be finite", path, lineno)
        ids.append(r[0])
        coords.append(xy)
    return ids, np.array(coords, dtype=float).reshape(-1, 2)


def read_covariates(path, sample_ids):
    """Read covariates aligned to ``sample_ids``.

    Returns ``(CovariateMatrix, years)``; ``years`` is ``None`` without a
    year column.
    """
    header, rows = _read_rows(path)
    if len(header) < 1:
        raise DataError("header needs a sample id column", path, 1)
    names = header[1:]
    lower = [h.lower() for h in names]
    year_col = lower.index(YEAR_COLUMN) if YEAR_COLUMN in lower else None
    index = {s: k for k, s in enumerate(sample_ids)}
    raw = np.full((len(sample_ids), len(names)), np.nan)
    found = {}
    for lineno, r in rows:
        if len(r) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(r)}", path, lineno)
        sid = r[0]
        if sid not in index:
            raise DataError(f"unknown sample id {sid!r}", path, lineno)
        if sid in found:
            raise DataError(f"duplicate sample id {sid!r} (first at row {found[sid]})", path, lineno)
        found[sid] = lineno
        try:
            vals = [float(v) for v in r[1:]]
        except ValueError:
            raise DataError("covariates must be numeric", path, lineno) from None
        if not np.all(np.isfinite(vals)):
            raise DataError("covariates must be finite", path, lineno)
        raw[index[sid]] = vals
    missing = [s for s in sample_ids if s not in found]
    if missing:
        raise DataError(f"no covariates for sample {missing[0]!r}", path)
    years = None
    keep = list(range(len(names)))
    if year_col is not None:
        years = raw[:, year_col].astype(np.int64)
        keep.remove(year_col)
    try:
        X = CovariateMatrix.from_raw(raw[:, keep], tuple(names[k] for k in keep))
    except ValueError as exc:
        raise DataError(str(exc), path) from None
    return X, years


@dataclass
class Dataset:
    Y: CountMatrix
    X: CovariateMatrix
    geometry: SiteGeometry = None
    years: np.ndarray = None
    site_ids: tuple = ()

    def __iter__(self):
        return iter((self.Y, self.X, self.geometry))


def ingest(counts_path, covariates_path=None, sites_path=None):
    """Read and cross-check the three input files.

    Without a covariates file the design is intercept-only; without a sites
    file there is no geometry and sites are numbered in order of appearance.
    """
    samples, site_col, species, Yd = read_counts(counts_path)
    if sites_path is not None:
        site_ids, coords = read_sites(sites_path)
        lookup = {s: k for k, s in enumerate(site_ids)}
        site_of = np.empty(len(samples), dtype=np.int64)
        for k, s in enumerate(site_col):
            if s not in lookup:
                raise DataError(f"sample {samples[k]!r} references unknown site {s!r}", counts_path, k + 2)
            site_of[k] = lookup[s]
        geometry = SiteGeometry(coords, site_of)
    else:
        site_ids, site_of = np.unique(np.array(site_col, dtype=object), return_inverse=True)
        site_ids = tuple(site_ids)
        geometry = None
    Y = CountMatrix.from_dense(Yd, site_of=site_of, m=len(site_ids), species=species,
                               samples=tuple(samples))
    if covariates_path is not None:
        X, years = read_covariates(covariates_path, samples)
    else:
        X, years = CovariateMatrix.intercept_only(len(samples)), None
    return Dataset(Y, X, geometry, years, tuple(site_ids))


def write_counts(path, Y, sample_ids=None, site_ids=None):
    """Write a count matrix in the ingestion layout."""
    Yd = Y.dense() if hasattr(Y, "dense") else np.asarray(Y)
    n, p = Yd.shape
    species = list(getattr(Y, "species", ()) or [f"sp{j}" for j in range(p)])
    sample_ids = sample_ids or list(getattr(Y, "samples", ()) or [f"s{i}" for i in range(n)])
    site_of = getattr(Y, "site_of", np.arange(n))
    site_ids = site_ids or [f"site{k}" for k in range(int(np.max(site_of)) + 1)]
    rows = [[sample_ids[i], site_ids[site_of[i]]] + [str(int(v)) for v in Yd[i]] for i in range(n)]
    write_table(path, ["sample_id", "site_id"] + species, rows)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything a command needs; unknown keys are rejected on load."""

    counts: str = None
    covariates: str = None
    sites: str = None
    out: str = "barcode_out"
    archive: str = None
    seed: int = 0
    hypers: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    folds: int = 3
    grid: str = "S"
    replicates: int = 25
    binary_export: bool = False

    def __post_init__(self):
        valid_h = {f.name for f in fields(HyperParams)}
        valid_s = {f.name for f in fields(SweepConfig)}
        bad = set(self.hypers) - valid_h
        if bad:
            raise ValueError(f"unknown hyperparameter(s): {sorted(bad)}")
        bad = set(self.sweep) - valid_s
        if bad:
            raise ValueError(f"unknown sweep setting(s): {sorted(bad)}")

    @classmethod
    def from_dict(cls, d):
        valid = {f.name for f in fields(cls)}
        bad = set(d) - valid
        if bad:
            raise ValueError(f"unknown configuration key(s): {sorted(bad)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def hyper_params(self):
        return HyperParams(**self.hypers)

    def sweep_config(self):
        return SweepConfig(**self.sweep)

    def to_dict(self):
        """Configuration with every default filled in."""
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["hypers"] = self.hyper_params().to_dict()
        d["sweep"] = self.sweep_config().to_dict()
        return d


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def atomic_write(path, writer, mode="w"):
    """Write through ``path + '.tmp'`` and rename, so ``path`` is never partial."""
    tmp = path + ".tmp"
    with open(tmp, mode, newline="" if "b" not in mode else None) as fh:
        writer(fh)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_table(path, header, rows):
    def w(fh):
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        out.writerows(rows)

    atomic_write(path, w)


def _fmt(dtype):
    return "%d" if np.issubdtype(dtype, np.integer) else "%.17g"


def _save_array(path, a, binary=False):
    a = np.asarray(a)
    flat = a.reshape(a.shape[0], -1) if a.ndim > 1 else a.reshape(-1, 1)

    def w(fh):
        np.savetxt(fh, flat, fmt=_fmt(a.dtype), delimiter=",")

    atomic_write(path, w)
    if binary:
        atomic_write(path[:-4] + ".npy", lambda fh: np.save(fh, a), mode="wb")


def _load_array(path, shape, dtype):
    if int(np.prod(shape)) == 0:
        return np.zeros(shape, dtype=dtype)
    flat = np.loadtxt(path, delimiter=",", dtype=np.float64 if not np.issubdtype(dtype, np.integer) else np.int64,
                      ndmin=2)
    return flat.reshape(shape).astype(dtype)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def serialize_archive(archive, directory, binary=False):
    """Write ``archive`` under ``directory`` and return the manifest dict."""
    os.makedirs(directory, exist_ok=True)
    chains = []
    for c, ch in enumerate(archive.chains):
        cdir = os.path.join(directory, f"chain{c}")
        os.makedirs(cdir, exist_ok=True)
        shapes = {}
        for name in TRACKED:
            a = ch.get(name)
            _save_array(os.path.join(cdir, f"{name}.csv"), a, binary)
            shapes[name] = list(a.shape)
        _save_array(os.path.join(cdir, "loglik.csv"), ch.loglik, binary)
        shapes["loglik"] = list(ch.loglik.shape)
        chains.append({
            "directory": f"chain{c}", "seed": ch.seed, "stream_id": ch.stream_id,
            "n_sweeps": ch.n_sweeps, "n_draws": ch.n_draws, "seconds": ch.seconds,
            "shapes": shapes,
        })
    manifest = {
        "software": "barcode_jsdm", "version": __version__,
        "seed": archive.seed,
        "hypers": archive.hypers.to_dict(),
        "config": archive.config.to_dict(),
        "n_chains": archive.n_chains, "n_draws": archive.n_draws,
        "chains": chains,
        "species": list(archive.species), "samples": list(archive.samples),
        "site_of": _jsonable(archive.site_of),
        "meta": _jsonable(archive.meta),
    }
    text = json.dumps(manifest, indent=2)
    atomic_write(os.path.join(directory, MANIFEST), lambda fh: fh.write(text))
    return manifest


def load_archive(directory):
    """Rebuild a :class:`PosteriorArchive` written by :func:`serialize_archive`."""
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise DataError("archive manifest not found", path)
    with open(path) as fh:
        man = json.load(fh)
    chains = []
    for info in man["chains"]:
        cdir = os.path.join(directory, info["directory"])
        arrays = {}
        for name, dtype in TRACKED.items():
            arrays[name] = _load_array(os.path.join(cdir, f"{name}.csv"), tuple(info["shapes"][name]), dtype)
        ll = _load_array(os.path.join(cdir, "loglik.csv"), tuple(info["shapes"]["loglik"]), np.float64)
        chains.append(ChainDraws(**arrays, loglik=ll, n_sweeps=info["n_sweeps"], seed=info["seed"],
                                 stream_id=info["stream_id"], seconds=info["seconds"]))
    site_of = man.get("site_of")
    return PosteriorArchive(
        chains=chains, hypers=HyperParams(**man["hypers"]), config=SweepConfig(**man["config"]),
        seed=man["seed"], site_of=None if site_of is None else np.asarray(site_of, dtype=np.int64),
        species=tuple(man["species"]), samples=tuple(man["samples"]), meta=man.get("meta", {}),
    )
