"""Chain serialization: ``meta.txt`` + ``chain.csv`` + ``checksums.txt``.

Floats are written with ``repr`` (shortest round-trip decimal), so a
reloaded chain is bit-identical to the saved one.
"""
from __future__ import annotations

import csv
import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .gibbs import ChainStore, config_hash

__all__ = ["ChainFileError", "save_chain", "load_chain", "read_manifest", "sha256_file"]

FORMAT = "balasso-chain/1"
DATA_FILES = ("meta.txt", "chain.csv")


class ChainFileError(IOError):
    """Missing, corrupted or inconsistent chain files."""


def _version() -> str:
    from . import __version__

    return __version__


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _header(p: int, q: int, q_lambda: int) -> list[str]:
    return (
        ["draw"]
        + [f"beta_{j}" for j in range(1, p + 1)]
        + ["sigma2"]
        + [f"tau2_{j}" for j in range(1, q + 1)]
        + [f"lambda2_{j}" for j in range(1, q_lambda + 1)]
    )


def save_chain(store: ChainStore, path) -> dict:
    """Write ``store`` into directory ``path`` and return the manifest."""
    path = Path(path)
    k = len(store)
    p, q, ql = store.beta.shape[1], store.tau2.shape[1], store.lambda2.shape[1]
    meta = store.meta
    manifest = {
        "format": FORMAT,
        "config_hash": meta.get("config_hash", config_hash(meta.get("config", {}))),
        "seed": meta.get("seed"),
        "stream": meta.get("stream"),
        "mode": meta.get("mode"),
        "likelihood": meta.get("likelihood"),
        "data_fingerprint": meta.get("config", {}).get("data"),
        "software_version": _version(),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "draws": k,
        "p": p,
        "q": q,
        "q_lambda": ql,
        "meta": meta,
    }
    try:
        path.mkdir(parents=True, exist_ok=True)
        with (path / "chain.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_header(p, q, ql))
            for i in range(k):
                row = np.concatenate(
                    [store.beta[i], [store.sigma2[i]], store.tau2[i], store.lambda2[i]]
                )
                w.writerow([i + 1] + [repr(float(v)) for v in row])
        (path / "meta.txt").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        sums = "".join(f"{sha256_file(path / f)}  {f}\n" for f in DATA_FILES)
        (path / "checksums.txt").write_text(sums)
    except OSError as exc:
        raise ChainFileError(f"cannot write chain to {path}: {exc}") from exc
    return manifest


def _verify_checksums(path: Path) -> None:
    sums = path / "checksums.txt"
    if not sums.exists():
        raise ChainFileError(f"{sums} is missing; refusing to load an unverified chain")
    expected = {}
    for line in sums.read_text().splitlines():
        if line.strip():
            digest, name = line.split(None, 1)
            expected[name.strip()] = digest
    for name in DATA_FILES:
        f = path / name
        if not f.exists():
            raise ChainFileError(f"{f} is missing")
        if name not in expected:
            raise ChainFileError(f"{sums} has no entry for {name}")
        actual = sha256_file(f)
        if actual != expected[name]:
            raise ChainFileError(
                f"checksum mismatch for {f}: expected {expected[name]}, found {actual}"
            )


def read_manifest(path) -> dict:
    path = Path(path)
    f = path / "meta.txt"
    if not f.exists():
        raise ChainFileError(f"manifest {f} is missing")
    try:
        manifest = json.loads(f.read_text())
    except json.JSONDecodeError as exc:
        raise ChainFileError(f"manifest {f} is not valid JSON: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise ChainFileError(f"{f}: unknown format {manifest.get('format')!r}")
    return manifest


def load_chain(path, expected_hash: str | None = None) -> ChainStore:
    """Reload a chain written by :func:`save_chain`.

    Refuses when a checksum fails, when the manifest's hash disagrees with
    the recorded configuration, or when ``expected_hash`` is given and differs.
    """
    path = Path(path)
    manifest = read_manifest(path)
    _verify_checksums(path)
    meta = manifest["meta"]
    stored = manifest["config_hash"]
    if "config" in meta:
        recomputed = config_hash(meta["config"])
        if recomputed != stored:
            raise ChainFileError(
                f"manifest hash {stored} does not match its configuration ({recomputed})"
            )
    if expected_hash is not None and expected_hash != stored:
        raise ChainFileError(f"config hash mismatch: expected {expected_hash}, manifest has {stored}")

    p, q, k = manifest["p"], manifest["q"], manifest["draws"]
    ql = manifest.get("q_lambda", q)
    with (path / "chain.csv").open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _header(p, q, ql):
            raise ChainFileError(f"{path / 'chain.csv'}: header does not match manifest")
        rows = [[float(v) for v in rec[1:]] for rec in reader if rec]
    if len(rows) != k:
        raise ChainFileError(f"manifest lists {k} draws, chain.csv has {len(rows)}")
    M = np.array(rows, dtype=float).reshape(k, p + 1 + q + ql)
    return ChainStore(
        np.ascontiguousarray(M[:, :p]),
        np.ascontiguousarray(M[:, p]),
        np.ascontiguousarray(M[:, p + 1: p + 1 + q]),
        np.ascontiguousarray(M[:, p + 1 + q:]),
        meta,
    )
