from pydantic import validate_call

from .CryptoProvider import MockCryptoProvider
from .model.Base import (
    HeightMismatch,
    HeightNotAbove,
    InvalidJustify,
    InvalidNode,
    MsgType,
    OrphanParent,
    UnknownNode,
)
from .model.TreeModel import GENESIS_PARENT, Node, QuorumCert


class BlockTree:
    """副本本地的待提交节点树

    每个副本持有一棵, 只由该副本的事件处理器修改.
    创世节点 b0 自带一个硬编码的自证 QC (genesis_qc).

    Args:
        crypto: 密码学提供者, 用于计算节点 id 与创世 QC
        padded: True 表示 Chained/事件驱动模式, create_leaf 会用空白节点补齐高度
    """

    def __init__(self, crypto: MockCryptoProvider, padded: bool = True):
        self.crypto = crypto
        self.padded = padded
        self.nodes: dict[str, Node] = {}
        # 本副本通过 create_leaf 新建的节点, 供轨迹登记
        self.created: list[Node] = []
        self.genesis = self.make_node(GENESIS_PARENT, "", None, 0)
        self.nodes[self.genesis.id] = self.genesis
        payload = QuorumCert.encode(MsgType.GENERIC, 0, self.genesis.id)
        parts = {crypto.tsign(i, payload) for i in range(crypto.n)}
        self.genesis_qc = QuorumCert(
            qtype=MsgType.GENERIC,
            view=0,
            node=self.genesis.id,
            sig=crypto.tcombine(payload, parts),
        )

    # -------------------- 构造与插入 --------------------

    def make_node(self, parent: str, cmd: str, justify: QuorumCert | None, height: int) -> Node:
        node_id = self.crypto.hash(Node.content(parent, cmd, justify, height))
        return Node(id=node_id, parent=parent, cmd=cmd, justify=justify, height=height)

    def __contains__(self, digest: str) -> bool:
        return digest in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def get(self, digest: str) -> Node:
        try:
            return self.nodes[digest]
        except KeyError as e:
            raise UnknownNode(f"未知节点 {digest[:8]}") from e

    def insert(self, node: Node) -> str:
        """插入节点; 重复插入同一节点是幂等的

        Raises:
            OrphanParent: 父节点不在树中, 调用方需先补齐祖先
            HeightMismatch: 高度不等于父节点高度 + 1
            InvalidNode: id 与内容摘要不符
            InvalidJustify: justify 指向的不是该节点的祖先
        """
        if node.id in self.nodes:
            return node.id
        if node.id != self.crypto.hash(Node.content(node.parent, node.cmd, node.justify, node.height)):
            raise InvalidNode(f"节点 {node.short} 的 id 与内容不符")
        parent = self.nodes.get(node.parent)
        if parent is None:
            raise OrphanParent(f"节点 {node.short} 的父节点 {node.parent[:8]} 不在本地树中")
        if node.height != parent.height + 1:
            raise HeightMismatch(f"节点 {node.short} 高度 {node.height} != 父节点高度 {parent.height} + 1")
        if node.justify is not None:
            if node.justify.node not in self.nodes or not self.extends(parent.id, node.justify.node):
                raise InvalidJustify(f"节点 {node.short} 的 justify 不指向其祖先")
        self.nodes[node.id] = node
        return node.id

    def insert_branch(self, nodes: list[Node] | tuple[Node, ...]) -> None:
        """按高度顺序插入一段分支后缀, 已存在的节点跳过"""
        for node in sorted(nodes, key=lambda b: b.height):
            if node.id not in self.nodes:
                self.insert(node)

    # -------------------- 祖先关系 --------------------

    def parent_of(self, node: Node) -> Node | None:
        return None if node.is_genesis else self.nodes.get(node.parent)

    def justified(self, node: Node) -> Node | None:
        """node.justify 所指向的节点; 无 justify 时为 None"""
        return self.get(node.justify.node) if node.justify is not None else None

    def extends(self, a: str, b: str) -> bool:
        """b 是否在 a 的分支上(含 a == b)"""
        node = self.get(a)
        target = self.get(b)
        while node.height > target.height:
            node = self.nodes[node.parent]
        return node.id == target.id

    def conflicts(self, a: str, b: str) -> bool:
        """两个分支互不延伸即冲突"""
        return not (self.extends(a, b) or self.extends(b, a))

    def branch(self, leaf: str) -> list[Node]:
        """从创世节点到 leaf 的路径"""
        node = self.get(leaf)
        path = [node]
        while not node.is_genesis:
            node = self.nodes[node.parent]
            path.append(node)
        path.reverse()
        return path

    def suffix(self, leaf: str, stop: str, depth: int) -> tuple[Node, ...]:
        """leaf 之上(不含 leaf)直到 stop 为止的祖先, 最多 depth 个, 按高度升序"""
        out: list[Node] = []
        node = self.get(leaf)
        while not node.is_genesis and len(out) < depth:
            node = self.nodes[node.parent]
            if node.id == stop or node.is_genesis:
                break
            out.append(node)
        out.reverse()
        return tuple(out)

    # -------------------- 创建叶子 --------------------

    @validate_call
    def create_leaf(self, parent: str, cmd: str, qc: QuorumCert | None, target_height: int) -> Node:
        """在 parent 上创建高度为 target_height 的叶子并插入

        Chained/事件驱动模式下中间用空白节点补齐, 使高度等于视图号;
        Basic 模式下只允许创建 parent.height + 1 的子节点.

        Raises:
            HeightNotAbove: target_height 不高于 parent
            HeightMismatch: Basic 模式下 target_height 不是 parent.height + 1
        """
        base = self.get(parent)
        if target_height <= base.height:
            raise HeightNotAbove(f"目标高度 {target_height} 不高于父节点高度 {base.height}")
        if not self.padded and target_height != base.height + 1:
            raise HeightMismatch(f"Basic 模式只能创建高度 {base.height + 1} 的子节点")

        tip = base
        for h in range(base.height + 1, target_height):
            dummy = self.make_node(tip.id, "", None, h)
            self.insert(dummy)
            self.created.append(dummy)
            tip = dummy
        leaf = self.make_node(tip.id, cmd, qc, target_height)
        self.insert(leaf)
        self.created.append(leaf)
        return leaf

    # -------------------- 调试输出 --------------------

    def to_dot(self, name: str = "tree") -> str:
        """DOT 格式: 父边为实线, justify 边为虚线, 空白节点为点线框"""
        lines = [f"digraph {name} {{", "  rankdir=BT;"]
        for node in sorted(self.nodes.values(), key=lambda b: (b.height, b.id)):
            label = "b0" if node.is_genesis else f"{node.short}\\nh={node.height}\\n{node.cmd[:16]}"
            style = ",style=dotted" if node.is_dummy else ""
            lines.append(f'  "{node.short}" [label="{label}"{style}];')
            if not node.is_genesis:
                lines.append(f'  "{node.short}" -> "{node.parent[:8]}";')
            if node.justify is not None:
                lines.append(f'  "{node.short}" -> "{node.justify.node[:8]}" [style=dashed];')
        lines.append("}")
        return "\n".join(lines)
