"""CSV emission and the binary checkpoint format.

Checkpoint layout (little-endian)::

    b"ISACCKPT" | uint32 version | uint64 header length | JSON header | float64 payload

The header lists every tensor with its agent, network, shape and payload offset,
plus the exploration rng state and a SHA-256 of the payload.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .marl.ddpg import AgentBundle
from .marl.nn import MlpParams

MAGIC = b"ISACCKPT"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def fmt(value) -> str:
    """Locale-independent, deterministic text for one CSV cell."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".10g")
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"{path.name}: row has {len(row)} cells, header {len(header)}")
            w.writerow([fmt(v) for v in row])
            n += 1
    return n


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _tensors(agent: AgentBundle):
    for net_name, net in agent.networks().items():
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            yield net_name, f"W{i}", w
            yield net_name, f"b{i}", b


def save_checkpoint(path, agents: Mapping[str, AgentBundle], episode: int,
                    rng_state: Optional[dict] = None, extra: Optional[dict] = None) -> Path:
    entries, chunks, offset = [], [], 0
    meta = {}
    for name in sorted(agents):
        ag = agents[name]
        meta[name] = {"outputs": {k: n.output for k, n in ag.networks().items()},
                      "low": ag.low.tolist(), "high": ag.high.tolist()}
        for net_name, tname, t in _tensors(ag):
            arr = np.ascontiguousarray(t, dtype="<f8")
            entries.append({"agent": name, "net": net_name, "tensor": tname,
                            "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.size
    payload = b"".join(chunks)
    header = {"version": VERSION, "episode": episode, "tensors": entries, "agents": meta,
              "rng_state": rng_state, "payload_values": offset,
              "sha256": hashlib.sha256(payload).hexdigest(), "extra": extra or {}}
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + struct.pack("<IQ", VERSION, len(blob)) + blob + payload)
    return path


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns (header, {agent: {net: MlpParams}}); raises CheckpointError on any damage."""
    data = Path(path).read_bytes()
    fixed = len(MAGIC) + 12
    if len(data) < fixed or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an isacsim checkpoint")
    version, hlen = struct.unpack("<IQ", data[len(MAGIC):fixed])
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, reader supports {VERSION}")
    if len(data) < fixed + hlen:
        raise CheckpointError(f"{path}: truncated header (format v{version})")
    try:
        header = json.loads(data[fixed:fixed + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header (format v{version})") from exc
    payload = data[fixed + hlen:]
    if len(payload) != 8 * header["payload_values"]:
        raise CheckpointError(f"{path}: truncated payload, expected {8 * header['payload_values']} "
                              f"bytes, found {len(payload)} (format v{version})")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch (format v{version})")
    values = np.frombuffer(payload, dtype="<f8")
    nets: dict = {}
    for e in header["tensors"]:
        size = int(np.prod(e["shape"]))
        arr = values[e["offset"]: e["offset"] + size].reshape(e["shape"]).copy()
        nets.setdefault(e["agent"], {}).setdefault(e["net"], {})[e["tensor"]] = arr
    out = {}
    for agent, per_net in nets.items():
        out[agent] = {}
        for net_name, tensors in per_net.items():
            n = len(tensors) // 2
            out[agent][net_name] = MlpParams([tensors[f"W{i}"] for i in range(n)],
                                             [tensors[f"b{i}"] for i in range(n)],
                                             header["agents"][agent]["outputs"][net_name])
    return header, out


def restore_agents(agents: Mapping[str, AgentBundle], nets: Mapping[str, dict]) -> None:
    for name, ag in agents.items():
        if name not in nets:
            raise CheckpointError(f"checkpoint has no agent {name!r}")
        for net_name, net in ag.networks().items():
            src = nets[name][net_name]
            if src.sizes != net.sizes:
                raise CheckpointError(f"{name}.{net_name}: shape {src.sizes} vs {net.sizes}")
            for dst, s in zip(net.tensors(), src.tensors()):
                dst[...] = s
            net.version += 1


def rng_digest(state) -> str:
    return hashlib.sha256(json.dumps(state, sort_keys=True).encode()).hexdigest()[:16]


def summarize_checkpoint(path) -> list[str]:
    header, nets = load_checkpoint(path)
    lines = [f"checkpoint {Path(path).name}: format v{header['version']}, episode {header['episode']}",
             f"rng state hash: {rng_digest(header['rng_state'])}"]
    for agent in sorted(nets):
        lines.append(f"agent {agent}")
        for net_name in ("actor", "critic", "target_actor", "target_critic"):
            net = nets[agent][net_name]
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                lines.append(f"  {net_name}[{i}] W{list(w.shape)} |W|={np.linalg.norm(w):.6g} "
                             f"b{list(b.shape)} |b|={np.linalg.norm(b):.6g}")
    return lines
