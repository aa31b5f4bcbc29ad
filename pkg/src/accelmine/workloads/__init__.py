"""Small synthetic training workloads shipped with the package.

Each builder returns a graph-file dict; the JSON files next to this module are
those dicts written out, so command-line runs and tests share one corpus.
Regenerate them with ``python -m accelmine.workloads``.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from ..errors import ParseError
from ..graph import OperatorGraph, TrainingGraph, apply_fusion, build_training_graph, graph_from_dict

EB = 2  # bf16


def _gemm(op_id, m, n, k, params=True):
    return {"id": op_id, "kind": "gemm", "m": m, "n": n, "k": k,
            "param_bytes": k * n * EB if params else 0, "activation_bytes": m * n * EB}


def _conv(op_id, m, n, k):
    return {"id": op_id, "kind": "conv", "m": m, "n": n, "k": k,
            "param_bytes": k * n * EB, "activation_bytes": m * n * EB}


def _vec(op_id, elements, params=0):
    return {"id": op_id, "kind": "vector", "elements": elements,
            "param_bytes": params, "activation_bytes": elements * EB}


def chain(n_layers: int = 4, width: int = 256, tokens: int = 256) -> dict:
    """Straight MLP: alternating GEMM and activation, no parallelism."""
    ops, edges, prev = [], [], None
    for i in range(n_layers):
        g, a = f"fc{i}", f"act{i}"
        ops += [_gemm(g, tokens, width, width), _vec(a, tokens * width)]
        if prev:
            edges.append([prev, g])
        edges.append([g, a])
        prev = a
    return {"name": "chain", "batch_size": 8, "ops": ops, "edges": edges}


def diamond(size: int = 128) -> dict:
    """Fork-join of two equal GEMM branches."""
    ops = [
        _gemm("a", size, size, size),
        _gemm("b", size, size, size),
        _gemm("c", size, size, size),
        _vec("d", size * size),
    ]
    edges = [["a", "b"], ["a", "c"], ["b", "d"], ["c", "d"]]
    return {"name": "diamond", "batch_size": 4, "ops": ops, "edges": edges}


def transformer(blocks: int = 4, d_model: int = 512, seq: int = 128, batch: int = 4, heads: int = 8) -> dict:
    """Encoder blocks: attention (per-head scores folded into M) and a 4x FFN."""
    t = seq * batch
    ops, edges = [_vec("embed", t * d_model, params=0)], []
    prev = "embed"
    for b in range(blocks):
        p = f"b{b}_"
        ops += [
            _gemm(p + "qkv", t, 3 * d_model, d_model),
            _gemm(p + "score", seq * heads * batch, seq, d_model // heads, params=False),
            _vec(p + "softmax", seq * seq * heads * batch),
            _gemm(p + "ctx", seq * heads * batch, d_model // heads, seq, params=False),
            _gemm(p + "proj", t, d_model, d_model),
            _vec(p + "ln1", t * d_model, params=2 * d_model * EB),
            _gemm(p + "ffn1", t, 4 * d_model, d_model),
            _vec(p + "gelu", t * 4 * d_model),
            _gemm(p + "ffn2", t, d_model, 4 * d_model),
            _vec(p + "ln2", t * d_model, params=2 * d_model * EB),
        ]
        edges += [
            [prev, p + "qkv"], [p + "qkv", p + "score"], [p + "score", p + "softmax"],
            [p + "softmax", p + "ctx"], [p + "qkv", p + "ctx"], [p + "ctx", p + "proj"],
            [p + "proj", p + "ln1"], [prev, p + "ln1"],
            [p + "ln1", p + "ffn1"], [p + "ffn1", p + "gelu"], [p + "gelu", p + "ffn2"],
            [p + "ffn2", p + "ln2"], [p + "ln1", p + "ln2"],
        ]
        prev = p + "ln2"
    ops.append(_gemm("head", t, 1024, d_model))
    edges.append([prev, "head"])
    return {"name": "transformer", "batch_size": batch, "ops": ops, "edges": edges}


def cnn(blocks: int = 8, batch: int = 8, size: int = 32, channels: int = 64) -> dict:
    """Residual CNN; convs are stored im2col-lowered, spatial size halves every two blocks."""
    ops, edges = [], []
    hw, c = size, channels
    ops.append(_conv("stem", batch * hw * hw, c, 3 * 9))
    prev = "stem"
    for b in range(blocks):
        p = f"r{b}_"
        cin = c
        if b and b % 2 == 0:
            hw, c = max(hw // 2, 4), c * 2
        m = batch * hw * hw
        ops += [
            _conv(p + "conv1", m, c, cin * 9),
            _vec(p + "relu1", m * c),
            _conv(p + "conv2", m, c, c * 9),
            _vec(p + "add", m * c),
            _vec(p + "relu2", m * c),
        ]
        edges += [
            [prev, p + "conv1"], [p + "conv1", p + "relu1"], [p + "relu1", p + "conv2"],
            [p + "conv2", p + "add"], [prev, p + "add"], [p + "add", p + "relu2"],
        ]
        prev = p + "relu2"
    ops.append(_vec("pool", batch * c))
    ops.append(_gemm("fc", batch, 1000, c))
    edges += [[prev, "pool"], ["pool", "fc"]]
    return {"name": "cnn", "batch_size": batch, "ops": ops, "edges": edges}


BUILDERS = {"chain": chain, "diamond": diamond, "transformer": transformer, "cnn": cnn}


def names() -> list[str]:
    return list(BUILDERS)


def path(name: str) -> Path:
    if name not in BUILDERS:
        raise KeyError(f"no bundled workload {name!r}; choose from {names()}")
    return Path(str(resources.files(__name__).joinpath(f"{name}.json")))


def batch_size_of(data: dict) -> int:
    b = data.get("batch_size", 1)
    if isinstance(b, bool) or not isinstance(b, int) or b < 1:
        raise ParseError(f"batch_size must be a positive integer, got {b!r}")
    return b


def read_workload(file) -> tuple[OperatorGraph, int]:
    """Forward graph and batch size from a graph file."""
    try:
        data = json.loads(Path(file).read_bytes())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{file}: not valid JSON: {exc}") from None
    return graph_from_dict(data), batch_size_of(data) if isinstance(data, dict) else 1


def load(name: str, *, fused: bool = True, element_bytes: int = EB) -> TrainingGraph:
    """Bundled workload as a training graph (fused by default)."""
    fwd, batch = read_workload(path(name))
    tg = build_training_graph(fwd, element_bytes=element_bytes, batch_size=batch)
    return apply_fusion(tg) if fused else tg


def write_all(directory: Path | None = None) -> list[Path]:
    directory = Path(directory) if directory else Path(__file__).parent
    out = []
    for name, build in BUILDERS.items():
        p = directory / f"{name}.json"
        p.write_text(json.dumps(build(), indent=1) + "\n")
        out.append(p)
    return out
