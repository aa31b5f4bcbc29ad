"""Operator graphs and training-graph synthesis.

A forward graph arrives as JSON; :func:`build_training_graph` mirrors it into
the backward pass, adds the loss and one optimizer update per parametrized
operator, and records which forward activations are stashed for the backward
pass.  :func:`apply_fusion` then merges tensor-core producers with their
single vector-core consumer.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping

from .errors import AffinityError, CycleError, NonForwardInput, ParseError, UnknownNodeError


class OpKind(str, Enum):
    GEMM = "gemm"
    CONV = "conv"
    VECTOR = "vector"
    FUSED = "fused"


class Pass(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    UPDATE = "update"
    LOSS = "loss"


class Core(str, Enum):
    TENSOR = "tensor"
    VECTOR = "vector"
    BOTH = "both"

    def uses(self, core: "Core") -> bool:
        """True if an op with this affinity occupies a core of type ``core``."""
        return self is core or self is Core.BOTH


TENSOR_KINDS = (OpKind.GEMM, OpKind.CONV)

LOSS_ID = "@loss"


def grad_act_id(op_id: str) -> str:
    return f"{op_id}@dx"


def grad_weight_id(op_id: str) -> str:
    return f"{op_id}@dw"


def update_id(op_id: str) -> str:
    return f"{op_id}@upd"


@dataclass(frozen=True)
class Operator:
    """One node of an operator graph.

    Tensor kinds carry reduction-form dims ``(m, n, k)``: an ``m x k`` input
    times a ``k x n`` operand.  CONV is stored already im2col-lowered.  VECTOR
    carries ``elements``; FUSED carries both.  ``collective_width > 1`` marks a
    tensor-parallel allreduce whose cost is set by the interconnect.
    """

    id: str
    kind: OpKind
    pass_: Pass = Pass.FORWARD
    affinity: Core | None = None
    m: int | None = None
    n: int | None = None
    k: int | None = None
    elements: int | None = None
    param_bytes: int = 0
    activation_bytes: int = 0
    collective_width: int = 1
    fused_from: tuple[str, ...] = ()

    def __post_init__(self):
        kind = OpKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "pass_", Pass(self.pass_))
        expected = {
            OpKind.GEMM: (Core.TENSOR, Core.BOTH),
            OpKind.CONV: (Core.TENSOR, Core.BOTH),
            OpKind.VECTOR: (Core.VECTOR,),
            OpKind.FUSED: (Core.BOTH,),
        }[kind]
        aff = expected[0] if self.affinity is None else Core(self.affinity)
        if aff not in expected:
            raise AffinityError(f"op {self.id!r}: kind {kind.value} cannot run with affinity {aff.value}")
        object.__setattr__(self, "affinity", aff)

        if kind in TENSOR_KINDS or kind is OpKind.FUSED:
            for name in ("m", "n", "k"):
                v = getattr(self, name)
                if v is None or v < 1:
                    raise ParseError(f"op {self.id!r}: dim {name} must be an integer >= 1, got {v!r}")
        if kind is OpKind.VECTOR or kind is OpKind.FUSED:
            if self.elements is None or self.elements < 1:
                raise ParseError(f"op {self.id!r}: elements must be >= 1, got {self.elements!r}")
        if kind is OpKind.FUSED and len(self.fused_from) < 2:
            raise AffinityError(f"op {self.id!r}: fused op must name its constituents")
        if self.param_bytes < 0 or self.activation_bytes < 0:
            raise ParseError(f"op {self.id!r}: byte counts must be non-negative")
        if self.collective_width < 1:
            raise ParseError(f"op {self.id!r}: collective_width must be >= 1")

    @property
    def is_tensor(self) -> bool:
        return self.kind in TENSOR_KINDS or self.kind is OpKind.FUSED

    @property
    def is_collective(self) -> bool:
        return self.collective_width > 1

    @property
    def macs(self) -> int:
        return self.m * self.n * self.k if self.is_tensor else 0

    @property
    def vector_elements(self) -> int:
        return self.elements or 0


class OperatorGraph:
    """Immutable DAG of operators.

    Operators are kept in id order and edges sorted, so two graphs built from
    the same content compare equal and iterate identically.
    """

    def __init__(self, ops: Iterable[Operator], edges: Iterable[tuple[str, str]], name: str = ""):
        table: dict[str, Operator] = {}
        for op in ops:
            if op.id in table:
                raise ParseError(f"duplicate operator id {op.id!r}")
            table[op.id] = op
        self.name = name
        self._ops = {k: table[k] for k in sorted(table)}
        edge_set = set()
        for src, dst in edges:
            for end in (src, dst):
                if end not in self._ops:
                    raise UnknownNodeError(f"edge ({src!r}, {dst!r}) names unknown operator {end!r}")
            if src == dst:
                raise CycleError(f"self-loop on {src!r}")
            edge_set.add((src, dst))
        self._edges = tuple(sorted(edge_set))
        self._succ: dict[str, list[str]] = {k: [] for k in self._ops}
        self._pred: dict[str, list[str]] = {k: [] for k in self._ops}
        for s, d in self._edges:
            self._succ[s].append(d)
            self._pred[d].append(s)
        self._order = self._toposort()

    def _toposort(self) -> tuple[str, ...]:
        indeg = {k: len(v) for k, v in self._pred.items()}
        heap = [k for k, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            u = heapq.heappop(heap)
            order.append(u)
            for v in self._succ[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    heapq.heappush(heap, v)
        if len(order) != len(self._ops):
            stuck = sorted(k for k, d in indeg.items() if d > 0)
            raise CycleError(f"graph {self.name!r} has a cycle through {stuck[:5]}")
        return tuple(order)

    @property
    def ops(self) -> Mapping[str, Operator]:
        return self._ops

    @property
    def edges(self) -> tuple[tuple[str, str], ...]:
        return self._edges

    def __len__(self) -> int:
        return len(self._ops)

    def __contains__(self, op_id: str) -> bool:
        return op_id in self._ops

    def __getitem__(self, op_id: str) -> Operator:
        return self._ops[op_id]

    def __eq__(self, other) -> bool:
        if not isinstance(other, OperatorGraph):
            return NotImplemented
        return self._ops == other._ops and self._edges == other._edges

    def __hash__(self):
        return hash((tuple(self._ops.items()), self._edges))

    def __repr__(self) -> str:
        return f"OperatorGraph({self.name!r}, ops={len(self._ops)}, edges={len(self._edges)})"

    def preds(self, op_id: str) -> list[str]:
        return self._pred[op_id]

    def succs(self, op_id: str) -> list[str]:
        return self._succ[op_id]

    def sources(self) -> list[str]:
        return [k for k in self._order if not self._pred[k]]

    def sinks(self) -> list[str]:
        return [k for k in self._order if not self._succ[k]]

    def topological_order(self) -> list[str]:
        return list(self._order)

    def subgraph(self, op_ids: Iterable[str], name: str | None = None) -> "OperatorGraph":
        keep = set(op_ids)
        return OperatorGraph(
            (self._ops[k] for k in keep),
            ((s, d) for s, d in self._edges if s in keep and d in keep),
            name=self.name if name is None else name,
        )

    def restrict(self, *passes: Pass) -> "OperatorGraph":
        return self.subgraph(k for k, op in self._ops.items() if op.pass_ in passes)

    def to_dict(self) -> dict:
        """Serialize a forward graph back into the file format."""
        out = []
        for op in self._ops.values():
            rec = {"id": op.id, "kind": op.kind.value}
            if op.is_tensor:
                rec.update(m=op.m, n=op.n, k=op.k)
            if op.elements is not None:
                rec["elements"] = op.elements
            rec["param_bytes"] = op.param_bytes
            rec["activation_bytes"] = op.activation_bytes
            out.append(rec)
        return {"name": self.name, "ops": out, "edges": [list(e) for e in self._edges]}


def topological_order(g: OperatorGraph) -> list[str]:
    """Kahn order with ties broken by lexicographically smallest id."""
    return g.topological_order()


def _parse_op(rec) -> Operator:
    if not isinstance(rec, dict):
        raise ParseError(f"operator record must be an object, got {type(rec).__name__}")
    try:
        op_id = rec["id"]
        kind_name = rec["kind"]
    except KeyError as exc:
        raise ParseError(f"operator record missing field {exc.args[0]!r}") from None
    if not isinstance(op_id, str) or not op_id:
        raise ParseError(f"operator id must be a non-empty string, got {op_id!r}")
    if "@" in op_id or "+" in op_id:
        raise ParseError(f"operator id {op_id!r} uses a reserved character ('@' or '+')")
    try:
        kind = OpKind(str(kind_name).lower())
    except ValueError:
        raise ParseError(f"op {op_id!r}: unknown kind {kind_name!r}") from None
    if kind is OpKind.FUSED:
        raise ParseError(f"op {op_id!r}: fused ops are produced by apply_fusion, not ingested")

    def _int(name, default=None):
        v = rec.get(name, default)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, int):
            raise ParseError(f"op {op_id!r}: field {name!r} must be an integer, got {v!r}")
        return v

    affinity = rec.get("core_affinity")
    if affinity is not None:
        try:
            affinity = Core(str(affinity).lower())
        except ValueError:
            raise ParseError(f"op {op_id!r}: unknown core_affinity {affinity!r}") from None
    if kind in TENSOR_KINDS:
        if "elements" in rec:
            raise ParseError(f"op {op_id!r}: {kind.value} ops take m/n/k, not elements")
        dims = dict(m=_int("m"), n=_int("n"), k=_int("k"), elements=None)
    else:
        if any(d in rec for d in ("m", "n", "k")):
            raise ParseError(f"op {op_id!r}: vector ops take elements, not m/n/k")
        dims = dict(m=None, n=None, k=None, elements=_int("elements"))
    return Operator(
        id=op_id,
        kind=kind,
        affinity=affinity,
        param_bytes=_int("param_bytes", 0),
        activation_bytes=_int("activation_bytes", 0),
        **dims,
    )


def graph_from_dict(data) -> OperatorGraph:
    if not isinstance(data, dict):
        raise ParseError("graph file must hold a JSON object")
    if "ops" not in data or not isinstance(data["ops"], list):
        raise ParseError("graph file needs an 'ops' list")
    edges = data.get("edges", [])
    if not isinstance(edges, list):
        raise ParseError("'edges' must be a list of [src, dst] pairs")
    pairs = []
    for e in edges:
        if not isinstance(e, (list, tuple)) or len(e) != 2 or not all(isinstance(x, str) for x in e):
            raise ParseError(f"bad edge {e!r}; expected [src, dst]")
        pairs.append((e[0], e[1]))
    ops = [_parse_op(r) for r in data["ops"]]
    return OperatorGraph(ops, pairs, name=str(data.get("name", "")))


def load_forward_graph(source: str | bytes) -> OperatorGraph:
    """Parse graph-file content (JSON text) into a validated forward graph."""
    try:
        data = json.loads(source)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"graph file is not valid JSON: {exc}") from None
    return graph_from_dict(data)


def load_graph_file(path) -> OperatorGraph:
    with open(path, "rb") as fh:
        return load_forward_graph(fh.read())


@dataclass(frozen=True)
class TrainingGraph:
    """Forward, loss, backward and update passes in a single DAG.

    ``mirror_map`` sends each forward op id to its backward counterparts
    (activation gradient first, then weight gradient when present).
    ``owner`` sends every backward/update op to the forward op it derives
    from.  ``stash_consumers`` lists, per stashed forward op, the backward ops
    reading its output.
    """

    graph: OperatorGraph
    mirror_map: Mapping[str, tuple[str, ...]]
    stash_bytes: int
    stash_consumers: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    owner: Mapping[str, str] = field(default_factory=dict)
    element_bytes: int = 2
    batch_size: int = 1

    @property
    def name(self) -> str:
        return self.graph.name

    def forward(self) -> OperatorGraph:
        return self.graph.restrict(Pass.FORWARD)

    def param_bytes(self) -> int:
        return sum(op.param_bytes for op in self.graph.ops.values() if op.pass_ is Pass.FORWARD)

    def is_fused(self) -> bool:
        return any(op.kind is OpKind.FUSED for op in self.graph.ops.values())


def _backward_ops(op: Operator, eb: int) -> list[Operator]:
    if op.is_tensor:
        out = [
            replace(
                op,
                id=grad_act_id(op.id),
                pass_=Pass.BACKWARD,
                m=op.m, n=op.k, k=op.n,
                param_bytes=op.param_bytes,
                activation_bytes=op.m * op.k * eb,
                fused_from=(),
            )
        ]
        if op.param_bytes > 0:
            out.append(
                replace(
                    op,
                    id=grad_weight_id(op.id),
                    pass_=Pass.BACKWARD,
                    m=op.k, n=op.n, k=op.m,
                    param_bytes=0,
                    activation_bytes=op.k * op.n * eb,
                    fused_from=(),
                )
            )
        return out
    out = [replace(op, id=grad_act_id(op.id), pass_=Pass.BACKWARD, param_bytes=0)]
    if op.param_bytes > 0:
        out.append(
            replace(op, id=grad_weight_id(op.id), pass_=Pass.BACKWARD, param_bytes=0,
                    activation_bytes=op.param_bytes)
        )
    return out


def build_training_graph(fwd: OperatorGraph, *, element_bytes: int = 2, batch_size: int = 1) -> TrainingGraph:
    """Synthesize forward + loss + backward mirror + parameter updates."""
    bad = [k for k, op in fwd.ops.items() if op.pass_ is not Pass.FORWARD]
    if bad:
        raise NonForwardInput(f"training-graph synthesis needs a forward-only graph; got {bad[:5]}")
    if element_bytes < 1 or batch_size < 1:
        raise ValueError("element_bytes and batch_size must be >= 1")

    if len(fwd) == 0:
        # nothing to train, so no loss either
        return TrainingGraph(OperatorGraph([], [], name=fwd.name), {}, 0,
                             element_bytes=element_bytes, batch_size=batch_size)
    ops = list(fwd.ops.values())
    edges = list(fwd.edges)
    mirror: dict[str, tuple[str, ...]] = {}
    owner: dict[str, str] = {}
    for op in fwd.ops.values():
        bwd = _backward_ops(op, element_bytes)
        ops.extend(bwd)
        mirror[op.id] = tuple(b.id for b in bwd)
        for b in bwd:
            owner[b.id] = op.id
        if op.param_bytes > 0:
            upd = Operator(
                id=update_id(op.id),
                kind=OpKind.VECTOR,
                pass_=Pass.UPDATE,
                elements=max(1, op.param_bytes // element_bytes),
                param_bytes=op.param_bytes,
                activation_bytes=0,
            )
            ops.append(upd)
            owner[upd.id] = op.id
            edges.append((grad_weight_id(op.id), upd.id))

    ops.append(
        Operator(
            id=LOSS_ID,
            kind=OpKind.VECTOR,
            pass_=Pass.LOSS,
            elements=batch_size,
            activation_bytes=batch_size * element_bytes,
        )
    )
    for s in fwd.sinks():
        edges.append((s, LOSS_ID))
        for b in mirror[s]:
            edges.append((LOSS_ID, b))

    # gradient w.r.t. u's output is accumulated from the input-gradients of its consumers
    consumers: dict[str, list[str]] = {}
    for u, v in fwd.edges:
        for b in mirror[u]:
            edges.append((grad_act_id(v), b))
        # backward of v reads v's input, which is u's output
        op_v = fwd[v]
        readers = []
        if op_v.param_bytes > 0:
            readers.append(grad_weight_id(v))
        if op_v.kind is OpKind.VECTOR or op_v.param_bytes == 0:
            readers.append(grad_act_id(v))
        consumers.setdefault(u, []).extend(readers)

    stash_consumers = {u: tuple(sorted(set(r))) for u, r in consumers.items() if r}
    stash = sum(fwd[u].activation_bytes for u in stash_consumers)
    graph = OperatorGraph(ops, edges, name=fwd.name)
    return TrainingGraph(
        graph=graph,
        mirror_map=mirror,
        stash_bytes=stash,
        stash_consumers=stash_consumers,
        owner=owner,
        element_bytes=element_bytes,
        batch_size=batch_size,
    )


def fusable_pairs(g: OperatorGraph) -> list[tuple[str, str]]:
    """(tensor producer, vector consumer) edges that qualify for fusion.

    Only forward and backward activations are fused; optimizer updates and
    the loss stay standalone.
    """
    pairs = []
    for u, v in g.edges:
        a, b = g[u], g[v]
        if a.kind not in TENSOR_KINDS or b.kind is not OpKind.VECTOR:
            continue
        if a.pass_ is not b.pass_ or a.pass_ not in (Pass.FORWARD, Pass.BACKWARD):
            continue
        if b.is_collective or a.is_collective:
            continue
        if len(g.succs(u)) == 1 and len(g.preds(v)) == 1:
            pairs.append((u, v))
    return pairs


def apply_fusion(tg: TrainingGraph) -> TrainingGraph:
    """Merge every GEMM/CONV -> VECTOR single-producer/single-consumer edge."""
    g = tg.graph
    pairs = fusable_pairs(g)
    if not pairs:
        return tg
    rename: dict[str, str] = {}
    new_ops: dict[str, Operator] = {k: op for k, op in g.ops.items()}
    for u, v in pairs:
        a, b = g[u], g[v]
        fid = f"{u}+{v}"
        fused = Operator(
            id=fid,
            kind=OpKind.FUSED,
            pass_=a.pass_,
            affinity=Core.BOTH,
            m=a.m, n=a.n, k=a.k,
            elements=b.elements,
            param_bytes=a.param_bytes + b.param_bytes,
            activation_bytes=b.activation_bytes,
            fused_from=(u, v),
        )
        del new_ops[u], new_ops[v]
        new_ops[fid] = fused
        rename[u] = rename[v] = fid

    def r(x: str) -> str:
        return rename.get(x, x)

    edges = {(r(s), r(d)) for s, d in g.edges}
    edges = {e for e in edges if e[0] != e[1]}
    graph = OperatorGraph(new_ops.values(), edges, name=g.name)

    mirror = {k: tuple(dict.fromkeys(r(x) for x in v)) for k, v in tg.mirror_map.items()}
    owner = {}
    for k, v in tg.owner.items():
        owner.setdefault(r(k), v)
    stash_consumers = {}
    for k, v in tg.stash_consumers.items():
        key = r(k)
        merged = set(stash_consumers.get(key, ())) | {r(x) for x in v}
        stash_consumers[key] = tuple(sorted(merged))
    return replace(tg, graph=graph, mirror_map=mirror, owner=owner, stash_consumers=stash_consumers)
