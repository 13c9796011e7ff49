"""Versioned binary checkpoints.

Layout (little-endian)::

    "SSGK" | u32 version | u32 header_len | header (UTF-8 JSON) | payloads

The header holds the training step, the config and its hash, the network
specs, Adam step counters and a tensor directory of
``{name, rank, extents, offset}`` entries; offsets are relative to the
first payload byte and every payload is float32.
"""
from __future__ import annotations

import json
import logging
import struct
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core.adam import AdamState
from .core.ops import RunningStats
from .errors import FormatError
from .models import DiscriminatorParams, DiscriminatorSpec, GeneratorParams, GeneratorSpec

log = logging.getLogger(__name__)

MAGIC = b"SSGK"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


class ConfigHashMismatchWarning(UserWarning):
    """A checkpoint was written under a different configuration."""


@dataclass
class Checkpoint:
    step: int
    config: dict
    config_hash: str
    disc: DiscriminatorParams
    adam_d: AdamState
    gen: Optional[GeneratorParams] = None
    adam_g: Optional[AdamState] = None
    version: int = VERSION

    @classmethod
    def from_state(cls, state) -> "Checkpoint":
        return cls(
            step=state.step,
            config=state.config.as_dict(),
            config_hash=state.config.config_hash(),
            disc=state.disc,
            adam_d=state.adam_d,
            gen=state.gen,
            adam_g=state.adam_g,
        )

    def to_state(self):
        from .train import TrainConfig, TrainerState

        return TrainerState(TrainConfig.from_dict(self.config), self.disc, self.adam_d, self.gen,
                            self.adam_g, self.step)

    def named_tensors(self) -> dict:
        out = {}

        def net(prefix, params):
            for k, v in params.tensors.items():
                out[f"{prefix}/{k}"] = v
            for k, s in params.running.items():
                out[f"{prefix}/{k}.running_mean"] = s.mean
                out[f"{prefix}/{k}.running_var"] = s.var

        def adam(prefix, st):
            for k in st.m:
                out[f"{prefix}/m/{k}"] = st.m[k]
                out[f"{prefix}/v/{k}"] = st.v[k]

        net("disc", self.disc)
        adam("adam_d", self.adam_d)
        if self.gen is not None:
            net("gen", self.gen)
            adam("adam_g", self.adam_g)
        return out


def _spec_dict(spec) -> dict:
    d = asdict(spec)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    tensors = ckpt.named_tensors()
    directory, payloads, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "rank": int(np.ndim(arr)), "extents": list(np.shape(arr)),
                          "offset": offset})
        payloads.append(data)
        offset += len(data)
    header = {
        "step": ckpt.step,
        "config": ckpt.config,
        "config_hash": ckpt.config_hash,
        "discriminator_spec": _spec_dict(ckpt.disc.spec),
        "generator_spec": _spec_dict(ckpt.gen.spec) if ckpt.gen is not None else None,
        "adam_t": {"disc": ckpt.adam_d.t, "gen": ckpt.adam_g.t if ckpt.adam_g else None},
        "tensor_count": len(directory),
        "payload_bytes": offset,
        "tensors": directory,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(payloads)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    data = encode_checkpoint(ckpt)
    with open(path, "wb") as f:
        f.write(data)


def _spec_from(cls, d):
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def decode_checkpoint(buf: bytes, expected_hash: Optional[str] = None) -> Checkpoint:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic, expected {MAGIC!r}", offset=0)
    if len(buf) < _PREFIX.size:
        raise FormatError("truncated checkpoint prefix", offset=len(buf))
    _, version, hlen = _PREFIX.unpack_from(buf)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    hend = _PREFIX.size + hlen
    if len(buf) < hend:
        raise FormatError("truncated checkpoint header", offset=len(buf))
    try:
        header = json.loads(buf[_PREFIX.size : hend].decode("utf-8"))
        directory = header["tensors"]
        count = header["tensor_count"]
        disc_spec = _spec_from(DiscriminatorSpec, header["discriminator_spec"])
        gen_spec = (_spec_from(GeneratorSpec, header["generator_spec"])
                    if header["generator_spec"] is not None else None)
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"invalid checkpoint header: {exc}", offset=_PREFIX.size) from exc
    if count != len(directory):
        raise FormatError(f"header declares {count} tensors, directory lists {len(directory)}",
                          offset=_PREFIX.size)
    payload = memoryview(buf)[hend:]
    if len(payload) != header.get("payload_bytes", len(payload)):
        raise FormatError(f"payload has {len(payload)} bytes, header declares {header['payload_bytes']}",
                          offset=len(buf))
    tensors = {}
    for entry in directory:
        shape = tuple(entry["extents"])
        if len(shape) != entry["rank"]:
            raise FormatError(f"tensor {entry['name']} rank/extents disagree", offset=_PREFIX.size)
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start < 0 or start + 4 * n > len(payload):
            raise FormatError(f"tensor {entry['name']} runs past the end of the file", offset=hend + start)
        tensors[entry["name"]] = np.frombuffer(payload, dtype="<f4", count=n, offset=start).reshape(shape).astype(np.float32)

    disc = DiscriminatorParams(disc_spec)
    gen = GeneratorParams(gen_spec) if gen_spec is not None else None
    adam_d = AdamState(t=int(header["adam_t"]["disc"]))
    adam_g = AdamState(t=int(header["adam_t"]["gen"])) if gen is not None else None
    running: dict = {}
    for name, arr in tensors.items():
        prefix, _, rest = name.partition("/")
        if prefix in ("disc", "gen"):
            target = disc if prefix == "disc" else gen
            if target is None:
                raise FormatError(f"tensor {name} belongs to a network absent from the header")
            if rest.endswith(".running_mean") or rest.endswith(".running_var"):
                layer, _, which = rest.rpartition(".")
                running.setdefault((prefix, layer), {})[which] = arr
            else:
                target.tensors[rest] = arr
        elif prefix in ("adam_d", "adam_g"):
            st = adam_d if prefix == "adam_d" else adam_g
            if st is None:
                raise FormatError(f"tensor {name} belongs to an optimizer absent from the header")
            kind, _, pname = rest.partition("/")
            (st.m if kind == "m" else st.v)[pname] = arr
        else:
            raise FormatError(f"unknown tensor group in {name!r}")
    for (prefix, layer), stats in running.items():
        target = disc if prefix == "disc" else gen
        target.running[layer] = RunningStats(stats["running_mean"], stats["running_var"])

    _check_complete(disc, disc_spec, "disc")
    _check_moments(adam_d, disc, "adam_d")
    if gen is not None:
        _check_complete(gen, gen_spec, "gen")
        _check_moments(adam_g, gen, "adam_g")

    ckpt = Checkpoint(int(header["step"]), header["config"], header["config_hash"], disc, adam_d, gen,
                      adam_g, version)
    if expected_hash is not None and expected_hash != ckpt.config_hash:
        msg = f"checkpoint config hash {ckpt.config_hash} differs from the current config {expected_hash}"
        log.warning(msg)
        warnings.warn(msg, ConfigHashMismatchWarning, stacklevel=2)
    return ckpt


def _check_complete(params, spec, prefix):
    from .core.prng import Prng
    from .models import build_discriminator, build_generator

    builder = build_discriminator if prefix == "disc" else build_generator
    ref = builder(spec, Prng(0))
    if set(ref.tensors) != set(params.tensors) or set(ref.running) != set(params.running):
        raise FormatError(f"{prefix} tensor set does not match its spec (tensor-count mismatch)")
    for k, v in ref.tensors.items():
        if v.shape != params.tensors[k].shape:
            raise FormatError(f"{prefix}/{k} has extents {params.tensors[k].shape}, spec needs {v.shape}")


def _check_moments(state: AdamState, params, prefix):
    if state.t and (set(state.m) != set(params.tensors) or set(state.v) != set(params.tensors)):
        raise FormatError(f"{prefix} moments do not cover the network's tensors (tensor-count mismatch)")
    for k, m in state.m.items():
        if m.shape != params.tensors[k].shape or state.v[k].shape != m.shape:
            raise FormatError(f"{prefix}/{k} moments have extents {m.shape}, parameter {params.tensors[k].shape}")


def load_checkpoint(path, expected_hash: Optional[str] = None) -> Checkpoint:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read(), expected_hash)
