"""Byte-reproducible zip archives of json manifests and numpy arrays.

``np.savez`` stamps entries with the current time, which breaks the
"rerun gives identical bytes" contract, so entries are written with a fixed
date instead.
"""
import io
import json
import zipfile

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _info(name):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def write_archive(path, manifest, arrays=None, blobs=None):
    """Write ``manifest.json`` plus one ``.npy`` entry per array.

    Entries are written in sorted order so identical inputs give identical
    bytes.
    """
    arrays = arrays or {}
    blobs = blobs or {}
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(_info("manifest.json"),
                    json.dumps(manifest, indent=2, sort_keys=True))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(_info(name + ".npy"), buf.getvalue())
        for name in sorted(blobs):
            zf.writestr(_info(name), blobs[name])


def read_archive(path):
    """Return ``(manifest, arrays, blobs)``; raises zipfile/json errors as-is."""
    arrays, blobs = {}, {}
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json").decode("utf-8"))
        for name in zf.namelist():
            if name == "manifest.json":
                continue
            data = zf.read(name)
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.load(io.BytesIO(data), allow_pickle=False)
            else:
                blobs[name] = data
    return manifest, arrays, blobs
