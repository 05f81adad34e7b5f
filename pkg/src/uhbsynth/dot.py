"""DOT export of happens-before execution graphs.

Layout follows the usual grid convention: one column per instruction (left to
right in program order, grouped per core), one row per pipeline stage, with
lifetime and coherence events below.  Node identifiers are stable across runs
so diffs of rendered graphs are meaningful.
"""

from uhbsynth.graph import (
    FlushNode,
    InvRecvNode,
    InvSendNode,
    ResolveNode,
    StageNode,
    UhbGraph,
    ViclNode,
    node_key,
)


def node_id(node) -> str:
    if isinstance(node, StageNode):
        return f"i{node.instr}_{node.stage}"
    if isinstance(node, ResolveNode):
        return f"i{node.instr}_Resolve"
    if isinstance(node, ViclNode):
        v = node.vicl
        return f"vicl_c{v.core}_{v.paddr}_{v.instance}_{node.event}"
    if isinstance(node, InvSendNode):
        return f"invsend_i{node.writer}"
    if isinstance(node, InvRecvNode):
        return f"invrecv_i{node.writer}_c{node.core}"
    if isinstance(node, FlushNode):
        return f"flush_i{node.instr}"
    raise TypeError(f"unknown node {node!r}")


def _instr_label(prog, iid) -> str:
    if prog is None:
        return f"i{iid}"
    return f"i{iid}: " + prog.instruction(iid).brief()


def render_dot(graph: UhbGraph, title: str = "uhb") -> str:
    """Valid DOT text; loads in standard graph viewers."""
    lines = [f'digraph "{title}" {{']
    if graph.nodes:
        lines.append("  rankdir=TB;")
        lines.append('  node [shape=box, fontsize=10];')
        prog = graph.program
        cores = sorted({n.core for n in graph.nodes if hasattr(n, "core")})
        for core in cores:
            lines.append(f"  subgraph cluster_core{core} {{")
            lines.append(f'    label="core {core}";')
            stage_nodes = [n for n in graph.nodes
                           if isinstance(n, (StageNode, ResolveNode)) and n.core == core]
            for n in sorted(stage_nodes, key=node_key):
                extra = ""
                if isinstance(n, StageNode) and prog is not None:
                    instr = prog.instruction(n.instr)
                    if instr.squashed:
                        extra = ', style=dashed'
                lines.append(f'    {node_id(n)} [label="{_dot_label(prog, n)}"{extra}];')
            lines.append("  }")
        rest = [n for n in graph.nodes if not isinstance(n, (StageNode, ResolveNode))]
        for n in sorted(rest, key=node_key):
            shape = "ellipse" if isinstance(n, ViclNode) else "hexagon"
            lines.append(f'  {node_id(n)} [label="{_dot_label(prog, n)}", shape={shape}];')
        for src, dst, label in graph.edges:
            lines.append(f'  {node_id(src)} -> {node_id(dst)} [label="{label}", fontsize=8];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _dot_label(prog, node) -> str:
    if isinstance(node, StageNode):
        return f"{_instr_label(prog, node.instr)}\\n{node.stage}"
    if isinstance(node, ResolveNode):
        return f"i{node.instr} resolve"
    if isinstance(node, ViclNode):
        v = node.vicl
        word = "Create" if node.event == "create" else "Expire"
        return f"{word}\\nc{v.core} {v.paddr} #{v.instance} ({v.kind} by i{v.creator})"
    if isinstance(node, InvSendNode):
        return f"InvSend\\ni{node.writer} {node.paddr}"
    if isinstance(node, InvRecvNode):
        return f"InvRecv\\ncore {node.core} {node.paddr} (i{node.writer})"
    if isinstance(node, FlushNode):
        return f"FlushEvent\\ni{node.instr} {node.vaddr}"
    return str(node)
