"""Append-only transaction DAG with per-conflict-set voting state.

Multi-decree consensus here reuses the single-decree counter machinery,
spread over a growing graph. Every (transaction, consumed output) pair
becomes one vertex. Vertices spending the same output are grouped into a
conflict set, and each conflict set runs what amounts to one Snowball
contest: it tracks a preferred member, the member last worked on, and a
consecutive-success counter. Instead of per-color counters, a vertex
earns a single one-shot chit when its only query round succeeds, and its
confidence is the count of chits in its reflexive progeny. Parent edges
entangle contests, because a positive vote for a vertex endorses its
entire ancestry, so one query advances many contests at once.

A ``DagState`` is single-owner and mutable. Operations mutate in place
and raise on misuse: unknown ids, missing parents, repeated queries.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .sampling import Rng

GENESIS_ID = "genesis"

_ORIGIN_KEY = "origin"


class MissingDependencyError(ValueError):
    """A vertex arrived before some of its parents."""


class UnknownUtxoError(ValueError):
    """A generated transaction referenced an output nobody created."""


class RequeryError(RuntimeError):
    """A vertex was offered a second query result."""


@dataclass(frozen=True)
class DagParams:
    """Voting and commitment thresholds for DAG consensus.

    ``a`` is the yes-vote quorum out of ``k`` sampled peers and must be a
    strict majority of the sample. ``beta1`` commits a virtuous vertex
    early; ``beta2`` commits the current streak owner of a contested set.
    ``fanin`` bounds how many parents a fresh transaction names, and
    ``staleness`` is the number of quiet rounds after which a stuck
    virtuous vertex earns a no-op child (defaults to ``beta1``).
    """

    k: int
    a: int
    beta1: int
    beta2: int
    fanin: int = 2
    staleness: int | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("sample size k must be at least 1")
        if not self.k // 2 < self.a <= self.k:
            raise ValueError(f"quorum a={self.a} must satisfy {self.k // 2} < a <= {self.k}")
        if self.beta1 < 1:
            raise ValueError("beta1 must be at least 1")
        if self.beta2 < self.beta1:
            raise ValueError("beta2 must be at least beta1")
        if self.fanin < 1:
            raise ValueError("parent fan-in must be at least 1")
        if self.staleness is not None and self.staleness < 1:
            raise ValueError("staleness must be at least 1 round")

    @classmethod
    def from_alpha(cls, k: int, alpha: float, beta1: int, beta2: int, **kw: object) -> "DagParams":
        """Build params with the quorum given as a fraction of the sample."""
        if not 0.5 < alpha <= 1.0:
            raise ValueError("alpha must lie in (1/2, 1]")
        return cls(k=k, a=math.ceil(alpha * k), beta1=beta1, beta2=beta2, **kw)  # type: ignore[arg-type]

    @property
    def effective_staleness(self) -> int:
        return self.beta1 if self.staleness is None else self.staleness


@dataclass
class Vertex:
    """One (transaction, consumed output) pair.

    ``conflict_key`` names the consumed output; all spenders of that
    output share one conflict set. ``chit`` moves 0 -> 1 at most once,
    when the vertex's single query round reaches quorum.
    """

    id: str
    data: bytes
    parents: tuple[str, ...]
    conflict_key: str
    chit: int = 0
    queried: bool = False


@dataclass
class ConflictSet:
    """Snowball-style bookkeeping for all spenders of one output."""

    members: list[str]
    pref: str
    last: str
    cnt: int = 0


def _digest(*fields: bytes) -> str:
    h = hashlib.sha256()
    for f in fields:
        h.update(len(f).to_bytes(4, "big"))
        h.update(f)
    return h.hexdigest()[:16]


def make_vertex(data: bytes, parents: Sequence[str], conflict_key: str) -> Vertex:
    """Construct a vertex whose id is a content hash of its fields."""
    vid = _digest(data, *(p.encode() for p in parents), conflict_key.encode())
    return Vertex(id=vid, data=data, parents=tuple(parents), conflict_key=conflict_key)


class DagState:
    """Single-owner DAG replica: vertices, conflict sets, and caches.

    The genesis vertex exists from birth with a fixed chit of 1, so it is
    always confident, always preferred, and always an eligible parent of
    last resort. Its own id doubles as the first spendable output.
    """

    def __init__(self, genesis_data: bytes = b"") -> None:
        self.vertices: dict[str, Vertex] = {}
        self.conflict_sets: dict[str, ConflictSet] = {}
        self.queried: set[str] = set()
        self.confidence_cache: dict[str, int] = {}
        self.utxo_index: dict[str, str] = {}
        self.children: dict[str, list[str]] = {}
        self.accepted: set[str] = set()
        self.minted: set[str] = set()
        self.clock: int = 0
        self._seq: dict[str, int] = {}
        self._order: list[str] = []
        self._query_cursor: int = 0
        self._last_progress: dict[str, int] = {}
        self._nop_catchup: set[str] = set()
        self._nop_checked: dict[str, int] = {}
        self._nop_seq: dict[str, int] = {}
        self._admit(Vertex(GENESIS_ID, genesis_data, (), _ORIGIN_KEY, chit=1))
        self.accepted.add(GENESIS_ID)

    # ------------------------------------------------------------------
    # insertion

    def _admit(self, v: Vertex) -> None:
        self.vertices[v.id] = v
        self._seq[v.id] = len(self._seq)
        self._order.append(v.id)
        self.children[v.id] = []
        for p in v.parents:
            self.children[p].append(v.id)
        self.confidence_cache[v.id] = v.chit
        self._last_progress[v.id] = self.clock
        cs = self.conflict_sets.get(v.conflict_key)
        if cs is None:
            self.conflict_sets[v.conflict_key] = ConflictSet([v.id], pref=v.id, last=v.id)
        else:
            cs.members.append(v.id)
        self._index_utxo(v.conflict_key)

    def on_receive_tx(self, v: Vertex) -> None:
        """Insert ``v`` if unknown. Idempotent; parents must already exist."""
        if v.id in self.vertices:
            return
        missing = [p for p in v.parents if p not in self.vertices]
        if missing:
            raise MissingDependencyError(f"parents not yet delivered: {missing}")
        self._admit(replace(v, chit=0, queried=False))

    def mint_utxo(self, utxo: str) -> None:
        """Register an externally created spendable output."""
        self.minted.add(utxo)

    def on_generate_tx(
        self,
        data: bytes,
        inputs: Sequence[str],
        params: DagParams,
        rng: Rng | None = None,
    ) -> list[str]:
        """Create one vertex per consumed output and insert them all.

        Every vertex of the transaction shares the payload and the parent
        list, since parents are named by the transaction itself. Returns
        the new vertex ids in input order.
        """
        if not inputs:
            raise UnknownUtxoError("a transaction must consume at least one output")
        if len(set(inputs)) != len(inputs):
            raise UnknownUtxoError("a transaction cannot consume one output twice")
        unknown = [u for u in inputs if u not in self.minted and u not in self.vertices]
        if unknown:
            raise UnknownUtxoError(f"unknown outputs: {unknown}")
        parents = tuple(sorted(self.parent_selection(params.fanin, rng), key=self._seq.__getitem__))
        ids = []
        for utxo in inputs:
            vtx = make_vertex(data, parents, utxo)
            self.on_receive_tx(vtx)
            ids.append(vtx.id)
        return ids

    # ------------------------------------------------------------------
    # confidence and preference

    def reflexive_ancestors(self, tid: str) -> list[str]:
        """All vertices reachable through parent edges, ``tid`` included,
        ordered oldest-first by insertion."""
        seen = {tid}
        stack = [tid]
        while stack:
            for p in self.vertices[stack.pop()].parents:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return sorted(seen, key=self._seq.__getitem__)

    def confidence(self, tid: str) -> int:
        """Chits collected across the reflexive progeny of ``tid``."""
        return self.confidence_cache[tid]

    def is_preferred(self, tid: str) -> bool:
        v = self.vertices[tid]
        return self.conflict_sets[v.conflict_key].pref == tid

    def is_strongly_preferred(self, tid: str) -> bool:
        # Walk the ancestry with an early exit; order does not matter here.
        seen = {tid}
        stack = [tid]
        while stack:
            t = stack.pop()
            v = self.vertices[t]
            if self.conflict_sets[v.conflict_key].pref != t:
                return False
            for p in v.parents:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return True

    def _strongly_preferred_all(self) -> dict[str, bool]:
        # One pass in insertion order; parents always precede children.
        out: dict[str, bool] = {}
        for vid in sorted(self.vertices, key=self._seq.__getitem__):
            v = self.vertices[vid]
            own = self.conflict_sets[v.conflict_key].pref == vid
            out[vid] = own and all(out[p] for p in v.parents)
        return out

    def on_query(self, v: Vertex) -> int:
        """Answer a peer's query: insert if new, vote on strong preference."""
        self.on_receive_tx(v)
        return int(self.is_strongly_preferred(v.id))

    # ------------------------------------------------------------------
    # query resolution

    def record_query_result(self, tid: str, yes_votes: int, params: DagParams) -> None:
        """Apply the outcome of ``tid``'s one query round.

        At quorum the vertex earns its chit and every reflexive ancestor's
        conflict set updates preference and its consecutive counter; below
        quorum the chit stays 0 forever and those counters reset.
        """
        if tid not in self.vertices:
            raise KeyError(tid)
        if tid in self.queried:
            raise RequeryError(f"{tid} was already queried")
        v = self.vertices[tid]
        self.queried.add(tid)
        v.queried = True
        self.clock += 1
        ancestors = self.reflexive_ancestors(tid)
        if yes_votes >= params.a:
            v.chit = 1
            for aid in ancestors:
                self.confidence_cache[aid] += 1
                self._last_progress[aid] = self.clock
            for aid in ancestors:
                key = self.vertices[aid].conflict_key
                cs = self.conflict_sets[key]
                if self.confidence_cache[aid] > self.confidence_cache[cs.pref]:
                    cs.pref = aid
                    self._index_utxo(key)
                if aid != cs.last:
                    cs.last = aid
                    cs.cnt = 1
                else:
                    cs.cnt += 1
        else:
            for aid in ancestors:
                self.conflict_sets[self.vertices[aid].conflict_key].cnt = 0

    def advance_clock(self, rounds: int = 1) -> None:
        """Let scheduler rounds pass without any query resolving."""
        if rounds < 0:
            raise ValueError("cannot rewind the clock")
        self.clock += rounds

    def next_unqueried(self) -> Optional[str]:
        """Oldest known vertex still waiting for its query round.

        Returns the same id until that vertex is resolved. Genesis never
        queries. None means this replica has no pending work.
        """
        while self._query_cursor < len(self._order):
            vid = self._order[self._query_cursor]
            if vid != GENESIS_ID and vid not in self.queried:
                return vid
            self._query_cursor += 1
        return None

    # ------------------------------------------------------------------
    # decisions

    def is_accepted(self, tid: str, beta1: int, beta2: int) -> bool:
        """Commitment predicate; true results are remembered forever.

        A virtuous vertex commits early once its whole parent set is
        accepted and its counter reaches ``beta1``. In a contested set
        only the current streak owner can commit, at ``beta2``; handing
        the counter to the set alone would commit every member at once.
        """
        if tid not in self.vertices:
            raise KeyError(tid)
        memo: dict[str, bool] = {}
        stack: list[tuple[str, bool]] = [(tid, False)]
        while stack:
            t, expanded = stack.pop()
            if t in memo:
                continue
            if t in self.accepted:
                memo[t] = True
                continue
            v = self.vertices[t]
            cs = self.conflict_sets[v.conflict_key]
            if cs.cnt >= beta2 and cs.last == t:
                memo[t] = True
                self.accepted.add(t)
                continue
            if not expanded:
                stack.append((t, True))
                for p in v.parents:
                    if p not in memo:
                        stack.append((p, False))
            else:
                ok = (
                    len(cs.members) == 1
                    and cs.cnt >= beta1
                    and all(memo.get(p, False) for p in v.parents)
                )
                memo[t] = ok
                if ok:
                    self.accepted.add(t)
        return memo[tid]

    # ------------------------------------------------------------------
    # growth

    def parent_selection(self, fanin: int, rng: Rng | None = None) -> set[str]:
        """Pick up to ``fanin`` parents for a fresh transaction.

        Eligible vertices are strongly preferred with positive confidence;
        of those, only ones with no eligible child are used, so selection
        sits at the frontier and retreats toward genesis when the frontier
        is contested. Genesis itself always qualifies as a last resort.
        Without an rng the newest eligible vertices win, deterministically.
        """
        if fanin < 1:
            raise ValueError("parent fan-in must be at least 1")
        strongly = self._strongly_preferred_all()
        eligible = {
            vid for vid, ok in strongly.items() if ok and self.confidence_cache[vid] > 0
        }
        frontier = [
            vid for vid in eligible if not any(ch in eligible for ch in self.children[vid])
        ]
        frontier.sort(key=self._seq.__getitem__, reverse=True)
        if len(frontier) <= fanin:
            return set(frontier)
        if rng is None:
            return set(frontier[:fanin])
        picks = rng.generator.choice(len(frontier), size=fanin, replace=False)
        return {frontier[i] for i in picks}

    def _pending_cover(self) -> set[str]:
        """Unaccepted vertices that some unresolved query will still bump:
        every unaccepted ancestor of every vertex awaiting its query."""
        covered: set[str] = set()
        for vid in self._order[self._query_cursor :]:
            if vid in self.queried or vid in covered:
                continue
            stack = [vid]
            while stack:
                t = stack.pop()
                covered.add(t)
                for pp in self.vertices[t].parents:
                    if pp not in self.accepted and pp not in covered:
                        stack.append(pp)
        return covered

    def emit_nop_if_stuck(
        self, tid: str, params: DagParams, pending: Optional[set[str]] = None
    ) -> Optional[Vertex]:
        """Give a starved virtuous vertex a child to rebuild its counter.

        A vertex is starved when it is virtuous real traffic, not yet
        accepted, its whole ancestry is accepted, nothing unresolved can
        still bump it, and its counter has not moved for ``staleness``
        rounds. Starvation puts it in catch-up mode: the first no-op waits
        out the staleness window, and as long as the vertex stays
        unaccepted each resolved helper is followed by another, so the
        counter can climb to commitment. Helpers get normal parent
        selection, which lets one helper bump the whole unaccepted tail.
        """
        v = self.vertices[tid]
        if v.conflict_key.startswith("nop:"):
            return None  # filler does not beget filler
        if len(self.conflict_sets[v.conflict_key].members) != 1:
            return None
        if tid in (self._pending_cover() if pending is None else pending):
            return None  # help is already in flight
        if tid not in self._nop_catchup:
            if self.clock - self._last_progress[tid] < params.effective_staleness:
                return None
        if self.is_accepted(tid, params.beta1, params.beta2):
            self._nop_catchup.discard(tid)
            return None
        ancestry = [a for a in self.reflexive_ancestors(tid) if a != tid]
        if not all(self.is_accepted(a, params.beta1, params.beta2) for a in ancestry):
            return None
        self._nop_catchup.add(tid)
        # Fall back to a direct edge when the frontier would not cover tid.
        sel = self.parent_selection(params.fanin)
        if not any(tid in self.reflexive_ancestors(pp) for pp in sel):
            sel = {tid}
        parents = tuple(sorted(sel, key=self._seq.__getitem__))
        # The sequence number separates repeat helpers for one vertex
        # (a failed helper reuses the same parents); emissions that agree
        # on parents and sequence hash identically on every replica.
        seq = self._nop_seq.get(tid, 0)
        while True:
            key = "nop:" + _digest(tid.encode(), seq.to_bytes(4, "big"), *(p.encode() for p in parents))
            nop = make_vertex(b"nop", parents, key)
            if nop.id not in self.vertices:
                break
            seq += 1
        self._nop_seq[tid] = seq + 1
        self.on_receive_tx(nop)
        return self.vertices[nop.id]

    def emit_nops(self, params: DagParams) -> list[Vertex]:
        """One staleness sweep over the whole DAG; returns inserted no-ops.

        Vertices in catch-up mode are rechecked every sweep (cheap, they
        are few). Everything else is throttled: quiet vertices wait out
        the staleness window, and a failed full check is not repeated for
        another window.
        """
        horizon = params.effective_staleness
        pending = self._pending_cover()
        out: list[Vertex] = []
        for vid in list(self.vertices):
            if vid in self.accepted or vid in pending:
                continue
            if vid not in self._nop_catchup:
                if self.clock - self._last_progress[vid] < horizon:
                    continue
                checked = self._nop_checked.get(vid)
                if checked is not None and self.clock - checked < horizon:
                    continue
            nop = self.emit_nop_if_stuck(vid, params, pending)
            if nop is not None:
                out.append(nop)
                pending.update(
                    a for a in self.reflexive_ancestors(nop.id) if a not in self.accepted
                )
            elif vid not in self._nop_catchup:
                self._nop_checked[vid] = self.clock
        return out

    # ------------------------------------------------------------------
    # bookkeeping and export

    def _index_utxo(self, key: str) -> None:
        # Synthetic keys (genesis, no-ops) are not spendable outputs.
        if key in self.minted or key in self.vertices:
            self.utxo_index[key] = self.conflict_sets[key].pref

    def export_json_lines(self) -> list[str]:
        """Serialize every vertex, parents before children, one JSON object
        per line. Stable across runs for identical histories."""
        lines = []
        for vid in sorted(self.vertices, key=self._seq.__getitem__):
            v = self.vertices[vid]
            lines.append(
                json.dumps(
                    {
                        "id": v.id,
                        "parents": list(v.parents),
                        "conflict_key": v.conflict_key,
                        "chit": v.chit,
                        "confidence": self.confidence_cache[vid],
                    },
                    separators=(",", ":"),
                )
            )
        return lines
