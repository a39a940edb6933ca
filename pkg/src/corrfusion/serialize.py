"""Model persistence: one flat float64 blob plus a JSON manifest.

A saved model is a directory holding

    params.bin     every tensor back to back, little-endian float64,
                    row-major
    manifest.json  model hyperparameters and a tensor table of
                    (name, shape, byte offset)

Batch-norm running statistics and the accumulated covariances are part of
the blob, so inference behaves identically after a round trip and training
can resume from the stored covariance state.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ManifestError
from .model import TwoBranchModel, build_model, state_arrays

FORMAT = "corrfusion-model-v1"


def _model_meta(model: TwoBranchModel) -> dict:
    hidden = [layer.out_dim for layer in model.backbone_x.layers[:-1]]
    meta = {
        "head": model.head,
        "n_classes": model.n_classes,
        "d_in": model.backbone_x.input_dim,
        "hidden": hidden,
        "embed_dim": model.embed_dim,
        "detach_weights": model.detach_weights,
        "r": None,
        "rho": None,
        "bn_momentum": None,
        "bn_eps": None,
        "cov_initialized": False,
    }
    if model.fusion is not None:
        meta.update({
            "r": model.fusion.r,
            "rho": model.fusion.rho,
            "bn_momentum": model.fusion.bn_x.momentum,
            "bn_eps": model.fusion.bn_x.eps,
            "cov_initialized": model.fusion.initialized,
        })
    return meta


def save_model(model: TwoBranchModel, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensors = []
    chunks = []
    offset = 0
    for name, arr in state_arrays(model).items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": FORMAT, "model": _model_meta(model), "tensors": tensors}
    (out / "params.bin").write_bytes(b"".join(chunks))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                       encoding="ascii")


def load_model(in_dir) -> TwoBranchModel:
    src = Path(in_dir)
    for name in ("manifest.json", "params.bin"):
        if not (src / name).is_file():
            raise FileNotFoundError(str(src / name))
    manifest = json.loads((src / "manifest.json").read_text(encoding="ascii"))
    if manifest.get("format") != FORMAT:
        raise ManifestError(f"unsupported model format {manifest.get('format')!r}")
    meta = manifest["model"]
    blob = (src / "params.bin").read_bytes()

    model = build_model(
        d_in=meta["d_in"], hidden=list(meta["hidden"]), embed_dim=meta["embed_dim"],
        r=meta["r"] if meta["r"] is not None else 1,
        rho=meta["rho"] if meta["rho"] is not None else 0.0,
        n_classes=meta["n_classes"], head=meta["head"],
        rng=np.random.default_rng(0),
        bn_momentum=meta["bn_momentum"] if meta["bn_momentum"] is not None else 0.9,
        bn_eps=meta["bn_eps"] if meta["bn_eps"] is not None else 1e-5,
        detach_weights=meta.get("detach_weights", False),
    )
    live = state_arrays(model)
    listed = {t["name"] for t in manifest["tensors"]}
    if listed != set(live):
        raise ManifestError(
            f"tensor table does not match the model: missing {sorted(set(live) - listed)}, "
            f"unexpected {sorted(listed - set(live))}")
    for entry in manifest["tensors"]:
        arr = live[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != arr.shape:
            raise ManifestError(f"tensor {entry['name']} has shape {shape}, "
                                f"expected {arr.shape}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        end = start + count * 8
        if end > len(blob):
            raise ManifestError(f"tensor {entry['name']} overruns params.bin")
        np.copyto(arr, np.frombuffer(blob[start:end], dtype="<f8").reshape(shape))
    if model.fusion is not None:
        model.fusion.initialized = bool(meta.get("cov_initialized", False))
    return model
