import hashlib
import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager

from config import LOG_FORMAT

MANIFEST_NAME = "manifest.json"


def setup_file_logger(directory: str, prefixes: tuple[str, ...], name: str = "experiment.log") -> logging.Handler:
    """Attach a file handler to the root logger that keeps only summary lines.

    The caller removes and closes the returned handler when the run ends.
    """
    fh = logging.FileHandler(os.path.join(directory, name), mode="w", encoding="utf-8")
    fh.setLevel(logging.INFO)
    fh.setFormatter(logging.Formatter(LOG_FORMAT))

    class SummaryFilter(logging.Filter):
        def filter(self, record):
            return record.getMessage().startswith(prefixes)

    fh.addFilter(SummaryFilter())
    logging.getLogger().addHandler(fh)
    return fh


def release_handler(handler: logging.Handler) -> None:
    logging.getLogger().removeHandler(handler)
    handler.close()


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(directory: str, volatile: tuple[str, ...] = ()) -> dict:
    """List every artifact with its hash; `digest` covers only the reproducible ones.

    Paths in `volatile`, and any log file, carry timings or timestamps and are
    flagged so two identical runs agree on the digest.
    """
    entries = []
    for root, _, files in os.walk(directory):
        for filename in files:
            path = os.path.join(root, filename)
            relative = os.path.relpath(path, directory).replace(os.sep, "/")
            if relative == MANIFEST_NAME:
                continue
            entry = {"path": relative, "sha256": sha256_file(path), "bytes": os.path.getsize(path)}
            if relative in volatile or relative.endswith(".log"):
                entry["volatile"] = True
            entries.append(entry)
    entries.sort(key=lambda e: e["path"])
    digest = hashlib.sha256()
    for entry in entries:
        if not entry.get("volatile"):
            digest.update(f"{entry['path']}\0{entry['sha256']}\n".encode("utf-8"))
    manifest = {"digest": digest.hexdigest(), "artifacts": entries}
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    return manifest


def write_json(document, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)
        f.write("\n")


@contextmanager
def atomic_directory(path: str, volatile: tuple[str, ...] = ()):
    """Yield a staging directory that replaces `path` only if the block succeeds."""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    staging = tempfile.mkdtemp(prefix=".staging-", dir=parent)
    try:
        yield staging
        write_manifest(staging, volatile)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if os.path.exists(path):
        shutil.rmtree(path)
    os.replace(staging, path)
