"""Versioned checkpoint container: schedule config, vocabulary, parameters."""

from __future__ import annotations

import io
import json
import os
from dataclasses import asdict

import numpy as np

from .net import Denoiser, NetConfig
from .schedule import NoiseSchedule, make_schedule

FORMAT_VERSION = 1


def save_checkpoint(
    path: str | os.PathLike,
    model: Denoiser,
    schedule: NoiseSchedule,
    vocabulary: tuple[str, ...],
    meta: dict | None = None,
) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "net_config": asdict(model.cfg),
        "schedule": {
            "t_train": schedule.t_train,
            "beta_start": float(schedule.beta[0]),
            "beta_end": float(schedule.beta[-1]),
        },
        "vocabulary": list(vocabulary),
        "meta": meta or {},
    }
    buf = io.BytesIO()
    np.savez(buf, __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
             **model.params)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path: str | os.PathLike):
    """Returns (model, schedule, vocabulary, meta)."""
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(
                f"{path}: unsupported checkpoint format {header.get('format_version')}"
            )
        params = {k: data[k] for k in data.files if k != "__header__"}
    cfg = NetConfig(**header["net_config"])
    sch = header["schedule"]
    schedule = make_schedule(sch["t_train"], sch["beta_start"], sch["beta_end"])
    model = Denoiser(cfg, params)
    return model, schedule, tuple(header["vocabulary"]), header["meta"]
