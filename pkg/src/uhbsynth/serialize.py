"""JSON serialization of execution graphs and synthesis results.

Graphs serialize without their program (the program is stored alongside in
its own file); loading re-attaches it.  All dictionaries are emitted with
sorted keys so files are byte-stable across runs.
"""

import json

from uhbsynth.graph import (
    FlushNode,
    InvRecvNode,
    InvSendNode,
    ResolveNode,
    StageNode,
    UhbGraph,
    Vicl,
    ViclNode,
    node_key,
)


def _node_doc(node):
    if isinstance(node, StageNode):
        return {"kind": "stage", "instr": node.instr, "core": node.core, "stage": node.stage}
    if isinstance(node, ResolveNode):
        return {"kind": "resolve", "instr": node.instr, "core": node.core}
    if isinstance(node, ViclNode):
        return {"kind": "vicl", "event": node.event, "vicl": _vicl_doc(node.vicl)}
    if isinstance(node, InvSendNode):
        return {"kind": "inv_send", "writer": node.writer, "core": node.core, "paddr": node.paddr}
    if isinstance(node, InvRecvNode):
        return {"kind": "inv_recv", "writer": node.writer, "core": node.core, "paddr": node.paddr}
    if isinstance(node, FlushNode):
        return {"kind": "flush", "instr": node.instr, "core": node.core, "vaddr": node.vaddr}
    raise TypeError(f"unknown node {node!r}")


def _vicl_doc(v: Vicl):
    return {"core": v.core, "paddr": v.paddr, "instance": v.instance,
            "creator": v.creator, "kind": v.kind}


def _node_from(doc):
    k = doc["kind"]
    if k == "stage":
        return StageNode(doc["instr"], doc["core"], doc["stage"])
    if k == "resolve":
        return ResolveNode(doc["instr"], doc["core"])
    if k == "vicl":
        return ViclNode(doc["event"], _vicl_from(doc["vicl"]))
    if k == "inv_send":
        return InvSendNode(doc["writer"], doc["core"], doc["paddr"])
    if k == "inv_recv":
        return InvRecvNode(doc["writer"], doc["core"], doc["paddr"])
    if k == "flush":
        return FlushNode(doc["instr"], doc["core"], doc["vaddr"])
    raise ValueError(f"unknown node kind {k}")


def _vicl_from(doc):
    return Vicl(doc["core"], doc["paddr"], doc["instance"], doc["creator"], doc["kind"])


def _cause_doc(cause):
    if cause[0] == "displaced":
        return ["displaced", _vicl_doc(cause[1])]
    return list(cause)


def _cause_from(doc):
    if doc[0] == "displaced":
        return ("displaced", _vicl_from(doc[1]))
    return tuple(doc)


def graph_to_json(g: UhbGraph) -> str:
    doc = {
        "nodes": [_node_doc(n) for n in g.nodes],
        "edges": [[_node_doc(s), _node_doc(d), label] for s, d, label in g.edges],
        "sourcing": [[iid, _vicl_doc(v)] for iid, v in g.sourcing],
        "expire_causes": [[_vicl_doc(v), _cause_doc(c)] for v, c in g.expire_causes],
        "vicl_values": [[_vicl_doc(v), val] for v, val in g.vicl_values],
        "access_stage": g.access_stage,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def graph_from_json(text: str, program=None) -> UhbGraph:
    doc = json.loads(text)
    nodes = tuple(sorted((_node_from(d) for d in doc["nodes"]), key=node_key))
    edges = tuple(sorted(
        ((_node_from(s), _node_from(d), label) for s, d, label in doc["edges"]),
        key=lambda e: (node_key(e[0]), node_key(e[1]), e[2])))
    return UhbGraph(
        nodes=nodes,
        edges=edges,
        sourcing=tuple(sorted((iid, _vicl_from(v)) for iid, v in doc["sourcing"])),
        expire_causes=tuple(sorted(
            (_vicl_from(v), _cause_from(c)) for v, c in doc["expire_causes"])),
        vicl_values=tuple(sorted((_vicl_from(v), val) for v, val in doc["vicl_values"])),
        program=program,
        access_stage=doc.get("access_stage", "Execute"),
    )


def embedding_to_doc(emb):
    out = {"pattern": emb.pattern, "mechanism": emb.mechanism, "bindings": []}
    for role, val in emb.bindings:
        if val is None:
            out["bindings"].append([role, None])
        elif isinstance(val, Vicl):
            out["bindings"].append([role, {"vicl": _vicl_doc(val)}])
        else:
            out["bindings"].append([role, val])
    return out


def embedding_from_doc(doc):
    from uhbsynth.patterns import Embedding

    bindings = []
    for role, val in doc["bindings"]:
        if isinstance(val, dict):
            bindings.append((role, _vicl_from(val["vicl"])))
        else:
            bindings.append((role, val))
    return Embedding(doc["pattern"], tuple(bindings), doc.get("mechanism", ""))
