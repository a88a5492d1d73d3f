"""File formats: edge lists, roll-call CSVs, labels, checkpoints, scatter output."""

from __future__ import annotations

import csv
import json
import os
import tempfile
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .graph import DataError

EDGE_HEADER = ("user_id", "claim_id", "relation", "weight")
CHECKPOINT_MAGIC = "IVGAE1"
DEFAULT_CAST_MAP = {
    "yea": "yea", "y": "yea", "1": "yea", "2": "yea", "3": "yea",
    "nay": "nay", "n": "nay", "4": "nay", "5": "nay", "6": "nay",
    "abstain": "abstain", "absent": "abstain", "7": "abstain", "8": "abstain", "9": "abstain",
}


class ParseError(DataError):
    pass


@dataclass(frozen=True)
class EdgeRecord:
    user_id: str
    claim_id: str
    relation: str = "interact"
    weight: float = 1.0


def atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _check_field(value: str, lineno: int, what: str) -> str:
    if not value:
        raise ParseError(f"line {lineno}: empty {what}")
    return value


def load_edgelist(path) -> list:
    """Read a UTF-8 TSV edge list with header ``user_id claim_id relation [weight]``."""
    records = []
    with open(path, encoding="utf-8") as fh:
        header = None
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if header is None:
                if tuple(parts[:3]) != EDGE_HEADER[:3] or len(parts) > 4 or (
                        len(parts) == 4 and parts[3] != "weight"):
                    raise ParseError(f"line {lineno}: bad header {line!r}")
                header = parts
                continue
            if len(parts) not in (3, 4):
                raise ParseError(f"line {lineno}: expected 3 or 4 tab-separated fields")
            user = _check_field(parts[0], lineno, "user_id")
            claim = _check_field(parts[1], lineno, "claim_id")
            rel = _check_field(parts[2], lineno, "relation")
            weight = 1.0
            if len(parts) == 4 and parts[3] != "":
                try:
                    weight = float(parts[3])
                except ValueError:
                    raise ParseError(f"line {lineno}: bad weight {parts[3]!r}") from None
                if not np.isfinite(weight) or weight < 0:
                    raise ParseError(f"line {lineno}: weight must be finite and >= 0")
            records.append(EdgeRecord(user, claim, rel, weight))
    if header is None:
        raise ParseError(f"{path}: missing header")
    return records


def format_edgelist(records) -> str:
    lines = ["\t".join(EDGE_HEADER)]
    for r in records:
        for v in (r.user_id, r.claim_id, r.relation):
            if not v or "\t" in v or "\n" in v or "\r" in v or v.startswith("#"):
                raise ValueError(f"id {v!r} cannot be written to an edge list")
        lines.append(f"{r.user_id}\t{r.claim_id}\t{r.relation}\t{r.weight!r}")
    return "\n".join(lines) + "\n"


def write_edgelist(records, path) -> None:
    atomic_write(path, format_edgelist(records))


def load_labels(path) -> dict:
    """``node_id<TAB>label`` lines; labels are mapped to 0..C-1 in sorted order.

    Returns {node_id: int}. The raw-label order is exposed by ``label_names``.
    """
    raw = read_kv_tsv(path, ("node_id", "label"))
    names = sorted(set(raw.values()))
    code = {name: i for i, name in enumerate(names)}
    return {node: code[v] for node, v in raw.items()}


def label_names(path) -> list:
    return sorted(set(read_kv_tsv(path, ("node_id", "label")).values()))


def load_ideology(path) -> dict:
    raw = read_kv_tsv(path, ("node_id", "value"))
    out = {}
    for node, v in raw.items():
        try:
            out[node] = float(v)
        except ValueError:
            raise ParseError(f"{path}: bad value {v!r} for {node}") from None
    return out


def read_kv_tsv(path, header) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        seen_header = False
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if not seen_header:
                if tuple(parts) != tuple(header):
                    raise ParseError(f"{path} line {lineno}: expected header {header}")
                seen_header = True
                continue
            if len(parts) != 2 or not parts[0] or parts[1] == "":
                raise ParseError(f"{path} line {lineno}: expected 2 non-empty fields")
            out[parts[0]] = parts[1]
    return out


def write_kv_tsv(mapping: dict, header, path) -> None:
    lines = ["\t".join(header)] + [f"{k}\t{v}" for k, v in mapping.items()]
    atomic_write(path, "\n".join(lines) + "\n")


def load_rollcall(members_path, votes_path, major_parties=None, cast_map=None,
                  reject_unknown=True):
    """Roll-call CSVs to vote records plus member and bill labels.

    ``members_path`` has columns member_id, party; ``votes_path`` has
    member_id, bill_id, cast. Only members of the two most common parties
    (or ``major_parties``) are kept. A bill is labelled with the party
    casting most of its yea votes; ties leave it unlabelled.
    Returns (records, member_labels, bill_labels) with string party labels.
    """
    cast_map = DEFAULT_CAST_MAP if cast_map is None else cast_map
    party = {}
    with open(members_path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"member_id", "party"} <= set(reader.fieldnames):
            raise ParseError(f"{members_path}: need columns member_id, party")
        for row in reader:
            party[row["member_id"].strip()] = row["party"].strip()
    if major_parties is None:
        major_parties = [p for p, _ in sorted(Counter(party.values()).items(),
                                              key=lambda kv: (-kv[1], kv[0]))[:2]]
    major = set(major_parties)
    records = []
    yea_by_party = defaultdict(Counter)
    with open(votes_path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"member_id", "bill_id", "cast"} <= set(reader.fieldnames):
            raise ParseError(f"{votes_path}: need columns member_id, bill_id, cast")
        for lineno, row in enumerate(reader, 2):
            member = row["member_id"].strip()
            bill = row["bill_id"].strip()
            code = row["cast"].strip().lower()
            if code not in cast_map:
                if reject_unknown:
                    raise ParseError(f"{votes_path} line {lineno}: unknown cast code {code!r}")
                continue
            if party.get(member) not in major:
                continue
            rel = cast_map[code]
            records.append(EdgeRecord(member, bill, rel, 1.0))
            if rel == "yea":
                yea_by_party[bill][party[member]] += 1
    member_labels = {m: p for m, p in party.items() if p in major}
    bill_labels = {}
    for bill, counts in yea_by_party.items():
        ranked = counts.most_common()
        if len(ranked) == 1 or ranked[0][1] > ranked[1][1]:
            bill_labels[bill] = ranked[0][0]
    return records, member_labels, bill_labels


def generate_synthetic(n_users=40, n_claims=60, p_in=0.3, p_out=0.02, seed=0):
    """Two-block bipartite benchmark. Returns (records, labels by node id)."""
    for p in (p_in, p_out):
        if not 0.0 <= p <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    user_block = np.arange(n_users) * 2 // n_users
    claim_block = np.arange(n_claims) * 2 // n_claims
    same = user_block[:, None] == claim_block[None, :]
    prob = np.where(same, p_in, p_out)
    hits = rng.random((n_users, n_claims)) < prob
    records = [EdgeRecord(f"u{i}", f"c{j}", "interact", 1.0)
               for i, j in zip(*np.nonzero(hits))]
    labels = {f"u{i}": int(b) for i, b in enumerate(user_block)}
    labels.update({f"c{j}": int(b) for j, b in enumerate(claim_block)})
    return records, labels


def toy_records():
    """Six-node two-block graph: users a, b share claim x; user c holds claims y, z.

    Returns (records, labels by node id).
    """
    pairs = [("a", "x"), ("b", "x"), ("c", "y"), ("c", "z")]
    records = [EdgeRecord(u, c) for u, c in pairs]
    labels = {"a": 0, "b": 0, "x": 0, "c": 1, "y": 1, "z": 1}
    return records, labels


def save_checkpoint(path, named_tensors, config: dict) -> None:
    """Text container: magic line, JSON config line, then per tensor a
    ``name rows cols`` line followed by rows of space-separated float reprs."""
    lines = [CHECKPOINT_MAGIC, json.dumps(config, sort_keys=True)]
    for name, value in named_tensors:
        arr = np.asarray(value, dtype=np.float64)
        lines.append(f"{name} {arr.shape[0]} {arr.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in arr)
    atomic_write(path, "\n".join(lines) + "\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: not an {CHECKPOINT_MAGIC} checkpoint")
    config = json.loads(lines[1])
    tensors = {}
    i = 2
    while i < len(lines):
        name, rows, cols = lines[i].split(" ")
        rows, cols = int(rows), int(cols)
        data = [[float(v) for v in lines[i + 1 + r].split(" ")] if cols else []
                for r in range(rows)]
        tensors[name] = np.array(data, dtype=np.float64).reshape(rows, cols)
        i += 1 + rows
    return tensors, config


def emit_scatter(z, selection, bhin, labels: dict, path, svg_path=None) -> None:
    """CSV of (node_id, node_type, x, y, label) on the two selected axes."""
    z = np.asarray(z, dtype=np.float64)
    ax, ay = selection.axes[0], selection.axes[1]
    lines = ["node_id,node_type,x,y,label"]
    for i, node in enumerate(bhin.node_ids):
        lab = labels.get(i, "-")
        lines.append(f"{_csv_escape(node)},{bhin.node_type(i)},{z[i, ax]:.6f},{z[i, ay]:.6f},{lab}")
    atomic_write(path, "\n".join(lines) + "\n")
    if svg_path is not None:
        atomic_write(svg_path, scatter_svg(z[:, ax], z[:, ay], bhin, labels))


def _csv_escape(s: str) -> str:
    if any(ch in s for ch in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


PALETTE = {0: "#1f77b4", 1: "#d62728", "-": "#7f7f7f"}


def scatter_svg(xs, ys, bhin, labels, size=480, pad=40) -> str:
    hi = max(float(np.max(xs, initial=0)), float(np.max(ys, initial=0)), 1e-9)
    lo = min(float(np.min(xs, initial=0)), float(np.min(ys, initial=0)), 0.0)
    scale = (size - 2 * pad) / (hi - lo)

    def px(v):
        return pad + (v - lo) * scale

    def py(v):
        return size - pad - (v - lo) * scale

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>',
             f'<line x1="{px(lo):.2f}" y1="{py(lo):.2f}" x2="{px(hi):.2f}" y2="{py(hi):.2f}" '
             'stroke="black" stroke-dasharray="4 3"/>']
    for i in range(len(xs)):
        color = PALETTE.get(labels.get(i, "-"), "#2ca02c")
        x, y = px(xs[i]), py(ys[i])
        if bhin.node_type(i) == "user":
            parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{color}"/>')
        else:
            parts.append(f'<rect x="{x - 3:.2f}" y="{y - 3:.2f}" width="6" height="6" '
                         f'fill="none" stroke="{color}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
