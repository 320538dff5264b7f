"""Binary model checkpoints.

Single-file little-endian format:

    magic  b"PSAC"
    u32    version (currently 1)
    u32    config block length, then that many bytes of "key=value" lines
    u32    epoch
    f64    dev loss
    u32    record count, then per record:
             u16 name length + name bytes
             u8  kind (0 = parameter, 1 = buffer)
             u8  ndim, then ndim * u32 dims
             u64 payload bytes, then raw float32 data
    u8     optimizer-state flag; when 1: u64 t, 5 * f64 hyperparameters,
           then per parameter (in record order) the m and v payloads

The model is rebuilt from the embedded config before any tensor data is
read, so a load either returns a complete model or raises; a truncated or
corrupt file never yields a partially filled model.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError
from .model import PSAConfig, PSANet, build_model
from .optim import AdamState

MAGIC = b"PSAC"
VERSION = 1


@dataclass
class CheckpointMeta:
    config: PSAConfig
    epoch: int = 0
    dev_loss: float = float("nan")
    extras: dict = field(default_factory=dict)


class _Reader:
    def __init__(self, raw: bytes, path: str):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(
                f"{self.path}: truncated (wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.raw)})")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _config_text(cfg: PSAConfig) -> bytes:
    return "".join(f"{k}={v}\n" for k, v in cfg.to_kv().items()).encode()


def _config_parse(blob: bytes, path: str) -> PSAConfig:
    kv = {}
    for line in blob.decode().splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise CheckpointError(f"{path}: malformed config line {line!r}")
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    try:
        return PSAConfig.from_kv(kv)
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: bad embedded config ({e})") from e


def _pack_array(name: str, kind: int, a: np.ndarray) -> bytes:
    payload = np.ascontiguousarray(a, dtype="<f4").tobytes()
    head = struct.pack("<H", len(name.encode())) + name.encode()
    head += struct.pack("<BB", kind, a.ndim)
    head += struct.pack(f"<{a.ndim}I", *a.shape) if a.ndim else b""
    head += struct.pack("<Q", len(payload))
    return head + payload


def save_checkpoint(model: PSANet, path: str, epoch: int = 0,
                    dev_loss: float = float("nan"),
                    optimizer: AdamState | None = None) -> None:
    params = model.named_parameters()
    buffers = model.named_buffers()
    blob = [MAGIC, struct.pack("<I", VERSION)]
    cfg = _config_text(model.config)
    blob.append(struct.pack("<I", len(cfg)))
    blob.append(cfg)
    blob.append(struct.pack("<Id", epoch, dev_loss))
    blob.append(struct.pack("<I", len(params) + len(buffers)))
    for name, t in params.items():
        blob.append(_pack_array(name, 0, t.data))
    for name, a in buffers.items():
        blob.append(_pack_array(name, 1, a))
    if optimizer is None or not optimizer.slots:
        blob.append(struct.pack("<B", 0))
    else:
        if len(optimizer.slots) != len(params):
            raise CheckpointError(
                f"optimizer tracks {len(optimizer.slots)} tensors but the model has {len(params)}")
        blob.append(struct.pack("<B", 1))
        blob.append(struct.pack("<Q", optimizer.t))
        blob.append(struct.pack("<5d", optimizer.lr, optimizer.beta1, optimizer.beta2,
                                optimizer.eps, optimizer.weight_decay))
        for m, v in optimizer.slots:
            blob.append(np.ascontiguousarray(m, dtype="<f4").tobytes())
            blob.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(blob))


def load_checkpoint(path: str, seed: int = 0) -> tuple:
    """Rebuild the model a checkpoint describes; returns (model, meta).

    The seed only feeds the throwaway initialization that the stored tensors
    immediately overwrite; loads of the same file are bit-identical.
    """
    with open(path, "rb") as f:
        r = _Reader(f.read(), path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads {VERSION}")
    (cfg_len,) = r.unpack("<I")
    cfg = _config_parse(r.take(cfg_len), path)
    epoch, dev_loss = r.unpack("<Id")
    (n_records,) = r.unpack("<I")

    records = {}
    kinds = {}
    order = []
    for _ in range(n_records):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        kind, ndim = r.unpack("<BB")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        (nbytes,) = r.unpack("<Q")
        want = 4 * int(np.prod(shape, dtype=np.int64)) if ndim else 4
        if nbytes != want:
            raise CheckpointError(f"{path}: record {name!r} shape {shape} needs {want} bytes, has {nbytes}")
        data = np.frombuffer(r.take(nbytes), dtype="<f4").reshape(shape).astype(np.float32)
        records[name] = data
        kinds[name] = kind
        if kind == 0:
            order.append(name)

    model = build_model(cfg, np.random.default_rng(seed))
    params = model.named_parameters()
    buffers = model.named_buffers()
    for name, t in params.items():
        if name not in records or kinds[name] != 0:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        if records[name].shape != t.data.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {records[name].shape}, model wants {t.data.shape}")
    for name, a in buffers.items():
        if name not in records or kinds[name] != 1:
            raise CheckpointError(f"{path}: missing buffer {name!r}")
        if records[name].shape != a.shape:
            raise CheckpointError(
                f"{path}: buffer {name!r} has shape {records[name].shape}, model wants {a.shape}")
    extra = set(records) - set(params) - set(buffers)
    if extra:
        raise CheckpointError(f"{path}: unknown records {sorted(extra)}")

    # Everything validated; now it is safe to mutate the fresh model.
    for name, t in params.items():
        t.data[...] = records[name]
    for name, a in buffers.items():
        a[...] = records[name]
    for mod in model.modules():
        state = getattr(mod, "state", None)
        if state is not None:
            state.initialized = True  # stored stats are authoritative

    meta = CheckpointMeta(config=cfg, epoch=epoch, dev_loss=dev_loss)
    (has_opt,) = r.unpack("<B")
    if has_opt:
        (t_steps,) = r.unpack("<Q")
        lr, b1, b2, eps, wd = r.unpack("<5d")
        opt = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd, t=int(t_steps))
        for name in order:
            n = records[name].size
            m = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(records[name].shape).astype(np.float32)
            v = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(records[name].shape).astype(np.float32)
            opt.slots.append((m, v))
        meta.extras["optimizer"] = opt
    return model, meta
