"""
Binary checkpoint format.

    b"SPKV" | u32 version | u32 metadata length | UTF-8 JSON metadata | payload

The payload is every parameter, in `Transformer.parameters()` order, as
little-endian float32; optimizer first and second moments follow in the same
order when present. Shapes and names live in the metadata.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from app.common.errors import CheckpointFormatError
from app.services.gating import GateConfig
from app.services.model.models import ModelConfig
from app.services.model.transformer import Transformer

MAGIC = b"SPKV"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    model_config: ModelConfig
    gate_config: GateConfig
    params: dict[str, np.ndarray]
    step: int = 0
    rng_state: int = 0
    optimizer_moments: Optional[dict[str, dict[str, np.ndarray]]] = None
    extra: dict = field(default_factory=dict)
    frozen_predictors: list[bool] = field(default_factory=list)

    @classmethod
    def from_model(
        cls,
        model: Transformer,
        step: int = 0,
        rng_state: int = 0,
        optimizer_moments: Optional[dict[str, dict[str, np.ndarray]]] = None,
        **extra,
    ) -> "Checkpoint":
        params = {name: tensor.data.copy() for name, tensor in model.parameters()}
        frozen = [block.predictor.frozen for block in model.blocks]
        return cls(model.config, model.gate, params, step, rng_state, optimizer_moments, dict(extra), frozen)

    def to_model(self) -> Transformer:
        model = Transformer(self.model_config, self.gate_config)
        model.load_parameters(self.params)
        for block, frozen in zip(model.blocks, self.frozen_predictors):
            if frozen:
                block.predictor.freeze()
        return model

    def digest(self, include_predictors: bool = True) -> str:
        """sha256 over parameter bytes in checkpoint order."""
        h = hashlib.sha256()
        for name, array in self.params.items():
            if not include_predictors and ".predictor." in name:
                continue
            h.update(name.encode())
            h.update(np.ascontiguousarray(array, dtype=_F32).tobytes())
        return h.hexdigest()

    def to_bytes(self) -> bytes:
        metadata = {
            "model": self.model_config.model_dump(mode="json"),
            "gate": self.gate_config.model_dump(mode="json"),
            "step": self.step,
            "rng_state": self.rng_state,
            "tensors": [{"name": name, "shape": list(array.shape)} for name, array in self.params.items()],
            "optimizer": self.optimizer_moments is not None,
            "extra": self.extra,
            "frozen_predictors": self.frozen_predictors,
        }
        meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
        chunks = [_HEADER.pack(MAGIC, VERSION, len(meta)), meta]
        chunks += [np.ascontiguousarray(a, dtype=_F32).tobytes() for a in self.params.values()]
        if self.optimizer_moments is not None:
            for moment in ("m", "v"):
                chunks += [
                    np.ascontiguousarray(self.optimizer_moments[moment][name], dtype=_F32).tobytes()
                    for name in self.params
                ]
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if len(blob) < _HEADER.size:
            raise CheckpointFormatError("checkpoint is truncated before its header")
        magic, version, meta_len = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        offset = _HEADER.size + meta_len
        if len(blob) < offset:
            raise CheckpointFormatError("checkpoint is truncated inside its metadata")
        try:
            metadata = json.loads(blob[_HEADER.size : offset].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointFormatError("checkpoint metadata is not valid JSON") from e

        def read_block() -> dict[str, np.ndarray]:
            nonlocal offset
            out = {}
            for entry in metadata["tensors"]:
                shape = tuple(entry["shape"])
                n_bytes = int(np.prod(shape, dtype=np.int64)) * _F32.itemsize
                if len(blob) < offset + n_bytes:
                    raise CheckpointFormatError(f"payload truncated at tensor {entry['name']!r}")
                flat = np.frombuffer(blob, dtype=_F32, count=n_bytes // _F32.itemsize, offset=offset)
                out[entry["name"]] = flat.astype(np.float32).reshape(shape)
                offset += n_bytes
            return out

        params = read_block()
        moments = {"m": read_block(), "v": read_block()} if metadata["optimizer"] else None
        if offset != len(blob):
            raise CheckpointFormatError(f"{len(blob) - offset} trailing bytes after payload")
        return cls(
            model_config=ModelConfig.model_validate(metadata["model"]),
            gate_config=GateConfig.model_validate(metadata["gate"]),
            params=params,
            step=metadata["step"],
            rng_state=metadata["rng_state"],
            optimizer_moments=moments,
            extra=metadata.get("extra", {}),
            frozen_predictors=[bool(f) for f in metadata.get("frozen_predictors", [])],
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
