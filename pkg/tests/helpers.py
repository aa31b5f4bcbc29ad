"""Small graph builders shared by the tests."""

from accelmine.graph import Operator, OperatorGraph, OpKind
from accelmine.schedule import TaskGraph


def gemm(op_id, m=16, n=16, k=16, params=True, **kw):
    return Operator(op_id, OpKind.GEMM, m=m, n=n, k=k, param_bytes=k * n * 2 if params else 0,
                    activation_bytes=m * n * 2, **kw)


def vec(op_id, elements=256, params=0, **kw):
    return Operator(op_id, OpKind.VECTOR, elements=elements, param_bytes=params,
                    activation_bytes=elements * 2, **kw)


def graph(ops, edges=(), name="g"):
    return OperatorGraph(ops, edges, name=name)


DIAMOND_EDGES = [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")]


def unit_diamond(core="tensor"):
    return TaskGraph.build({v: 1 for v in "ABCD"}, {v: core for v in "ABCD"}, DIAMOND_EDGES)


def chain_tasks(n=4, dur=1, core="tensor"):
    ids = [f"c{i}" for i in range(n)]
    return TaskGraph.build({v: dur for v in ids}, {v: core for v in ids}, list(zip(ids, ids[1:])))


def bottleneck_model(fan=8):
    """One long GEMM feeding a fan of small parallel GEMMs.

    Split in two stages, the long GEMM dominates the pipeline while the fan
    alone would like many tensor cores.
    """
    from accelmine.graph import build_training_graph

    ops = [gemm("h0", m=256, n=256, k=32768), vec("split", elements=256 * 256)]
    edges = [("h0", "split")]
    for j in range(fan):
        ops.append(gemm(f"l{j}", m=16, n=1024, k=1024))
        edges.append(("split", f"l{j}"))
    ops.append(vec("join", elements=16 * 1024))
    edges += [(f"l{j}", "join") for j in range(fan)]
    return build_training_graph(graph(ops, edges, name="bottleneck"))
