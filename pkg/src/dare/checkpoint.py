"""Checkpoint format shared by the encoder and the noise predictor.

Layout: one ASCII magic line with the format version, one JSON line holding
the model configuration and the ordered tensor manifest (name + shape),
then the raw tensor data as little-endian 32-bit floats in manifest order.
"""

from __future__ import annotations

import json

import numpy as np
import torch

from .actions import HorizonConfig
from .diffusion import NoisePredictor, PredictorConfig
from .encoder import EncoderConfig, GraphEncoder

MAGIC = b"DARE-CKPT v1\n"


def save_checkpoint(path, encoder: GraphEncoder, predictor: NoisePredictor, extra: dict | None = None):
    tensors = []
    blobs = []
    for prefix, module in (("encoder", encoder), ("predictor", predictor)):
        for name, tensor in module.state_dict().items():
            arr = tensor.detach().cpu().numpy().astype("<f4")
            tensors.append([f"{prefix}.{name}", list(arr.shape)])
            blobs.append(arr.tobytes())
    header = {
        "encoder": {
            "feature_dim": encoder.cfg.feature_dim,
            "layers": encoder.cfg.layers,
            "input_dim": encoder.cfg.input_dim,
            "utility_cap": encoder.cfg.utility_cap,
        },
        "predictor": {
            "width": predictor.cfg.width,
            "blocks": predictor.cfg.blocks,
            "cond_dim": predictor.cfg.cond_dim,
            "horizon": {
                "observation": predictor.cfg.horizon.observation,
                "prediction": predictor.cfg.horizon.prediction,
                "action": predictor.cfg.horizon.action,
            },
        },
        "extra": extra or {},
        "tensors": tensors,
    }
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path):
    """Returns (encoder, predictor, extra) with float32 parameters."""
    with open(path, "rb") as f:
        magic = f.readline()
        if magic != MAGIC:
            raise ValueError(f"{path}: not a DARE checkpoint (magic {magic!r})")
        header = json.loads(f.readline().decode("ascii"))
        data = f.read()

    enc_cfg = EncoderConfig(
        feature_dim=header["encoder"]["feature_dim"],
        layers=header["encoder"]["layers"],
        input_dim=header["encoder"]["input_dim"],
        utility_cap=header["encoder"]["utility_cap"],
    )
    hor = header["predictor"]["horizon"]
    pred_cfg = PredictorConfig(
        width=header["predictor"]["width"],
        blocks=header["predictor"]["blocks"],
        cond_dim=header["predictor"]["cond_dim"],
        horizon=HorizonConfig(hor["observation"], hor["prediction"], hor["action"]),
    )
    encoder = GraphEncoder(enc_cfg)
    predictor = NoisePredictor(pred_cfg)

    offset = 0
    states = {"encoder": {}, "predictor": {}}
    for full_name, shape in header["tensors"]:
        prefix, name = full_name.split(".", 1)
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += count * 4
        states[prefix][name] = torch.from_numpy(arr.copy())
    encoder.load_state_dict(states["encoder"])
    predictor.load_state_dict(states["predictor"])
    return encoder, predictor, header["extra"]
