"""In-process transport for k logical parties: FIFO channels, transcripts,
scripted adversaries.

Two execution styles share the same :class:`Network`:

* :func:`run_protocol` drives independent generator-based party programs
  round-robin (used for small protocols and for checking the harness itself);
* :class:`utilsignal.sharing.Session` runs all parties in lockstep over
  vectorized share arrays and pushes every communication step through the
  network, so its transcript has the same shape.
"""
from __future__ import annotations

import fnmatch
import hashlib
import io
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from . import field as F

DEFAULT_PARTIES = 4


class ProtocolAbort(Exception):
    """Raised when any honest party aborts; ``reason`` is a short tag."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


class UnknownHookPoint(KeyError):
    pass


class DeadlockError(RuntimeError):
    pass


# -- adversary scripts ---------------------------------------------------------

@dataclass(frozen=True)
class AddOffset:
    """Add ``eps`` to one element of a named share (the corrupted party's copy)."""

    eps: int
    index: int = 0
    target: str = "share"


@dataclass(frozen=True)
class SubstituteInput:
    data: Any
    target: str = "input"


@dataclass(frozen=True)
class DropMacCheck:
    pass


Deviation = AddOffset | SubstituteInput | DropMacCheck


@dataclass(frozen=True)
class Action:
    hook: str
    deviation: Deviation
    occurrence: int = 1  # fire on the n-th matching hook


@dataclass(frozen=True)
class AdversaryScript:
    corrupted: int
    actions: tuple[Action, ...] = ()

    @classmethod
    def single(cls, corrupted: int, hook: str, deviation: Deviation, occurrence: int = 1):
        return cls(corrupted, (Action(hook, deviation, occurrence),))


class ScriptRunner:
    """Tracks which actions of a script have fired during one run."""

    def __init__(self, script: AdversaryScript | None):
        self.script = script
        self._seen = [0] * (len(script.actions) if script else 0)
        self.fired = [False] * len(self._seen)

    @property
    def corrupted(self) -> int | None:
        return self.script.corrupted if self.script else None

    def match(self, party: int, hook: str) -> list[Action]:
        if self.script is None or party != self.script.corrupted:
            return []
        hits = []
        for i, act in enumerate(self.script.actions):
            if self.fired[i] or not fnmatch.fnmatchcase(hook, act.hook):
                continue
            self._seen[i] += 1
            if self._seen[i] == act.occurrence:
                self.fired[i] = True
                hits.append(act)
        return hits

    def wants(self, party: int, kind: type) -> bool:
        if self.script is None or party != self.script.corrupted:
            return False
        return any(isinstance(a.deviation, kind) and not self.fired[i]
                   for i, a in enumerate(self.script.actions))

    def unfired(self) -> list[Action]:
        if self.script is None:
            return []
        return [a for a, f in zip(self.script.actions, self.fired) if not f]

    def assert_all_fired(self):
        missing = self.unfired()
        if missing:
            raise UnknownHookPoint(", ".join(a.hook for a in missing))


def inject_deviation(state: dict, action: Action) -> dict:
    """Apply one deviation to a party's local state, returning the new state."""
    dev = action.deviation
    if isinstance(dev, AddOffset):
        if dev.target not in state:
            raise UnknownHookPoint(f"{action.hook}: no share named {dev.target!r}")
        cur = state[dev.target]
        if isinstance(cur, np.ndarray):
            new = cur.copy()
            flat = new.reshape(-1)
            flat[dev.index] = F.add(flat[dev.index], np.uint64(dev.eps % F.P))
        else:
            new = (int(cur) + dev.eps) % F.P
        return {**state, dev.target: new}
    if isinstance(dev, SubstituteInput):
        if dev.target not in state:
            raise UnknownHookPoint(f"{action.hook}: no input named {dev.target!r}")
        return {**state, dev.target: dev.data}
    if isinstance(dev, DropMacCheck):
        return {**state, "drop_mac_check": True}
    raise TypeError(f"unknown deviation {dev!r}")


# -- transcript ----------------------------------------------------------------

@dataclass(frozen=True)
class Message:
    round: int
    frm: int
    to: int
    byte_len: int
    sha: str
    payload: bytes | None = None


class Transcript:
    """Ordered record of every delivered message.

    With ``record=False`` only counters and the digest of absorbed public
    values (the opened results) are kept, which is what long Monte Carlo runs
    use.
    """

    def __init__(self, record: bool = True, keep_payloads: bool = False):
        self.record = record
        self.keep_payloads = keep_payloads
        self.messages: list[Message] = []
        self._h = hashlib.sha256()
        self.n_messages = 0
        self.n_bytes = 0

    def log(self, rnd: int, frm: int, to: int, payload: bytes):
        self.n_messages += 1
        self.n_bytes += len(payload)
        if self.record:
            self._h.update(rnd.to_bytes(8, "little") + bytes((frm, to)) + payload)
            sha = hashlib.sha256(payload).hexdigest()
            self.messages.append(Message(rnd, frm, to, len(payload), sha,
                                         payload if self.keep_payloads else None))

    def absorb(self, public: bytes):
        """Mix public data (opened values) into the running digest."""
        self._h.update(public)

    def digest(self) -> bytes:
        return self._h.copy().digest()

    def lines(self) -> Iterable[str]:
        for m in self.messages:
            yield f"{m.round},{m.frm},{m.to},{m.byte_len},{m.sha}"

    def export(self, fp: io.TextIOBase | None = None) -> str:
        text = "".join(line + "\n" for line in self.lines())
        if fp is not None:
            fp.write(text)
        return text


class Network:
    def __init__(self, k: int = DEFAULT_PARTIES, transcript: Transcript | None = None):
        if not 2 <= k <= 8:
            raise ValueError("party count must be in 2..8")
        self.k = k
        self.transcript = transcript if transcript is not None else Transcript()
        self.round = 0
        self._chan: dict[tuple[int, int], deque] = {}

    def send(self, frm: int, to: int, payload: bytes, rnd: int | None = None):
        rnd = self.round if rnd is None else rnd
        self._chan.setdefault((frm, to), deque()).append(payload)
        self.transcript.log(rnd, frm, to, payload)

    def pending(self, frm: int, to: int) -> int:
        return len(self._chan.get((frm, to), ()))

    def recv(self, frm: int, to: int) -> bytes:
        q = self._chan.get((frm, to))
        if not q:
            raise DeadlockError(f"no message from {frm} to {to}")
        return q.popleft()

    # lockstep helpers: one call is one communication round

    def broadcast(self, payloads: list[bytes], senders: Iterable[int] | None = None):
        senders = range(self.k) if senders is None else senders
        for i in senders:
            for j in range(self.k):
                if j != i:
                    self.send(i, j, payloads[i])
        for i in senders:
            for j in range(self.k):
                if j != i:
                    self.recv(i, j)
        self.round += 1

    def gather_to(self, dest: int, payloads: list[bytes]):
        for i in range(self.k):
            if i != dest:
                self.send(i, dest, payloads[i])
                self.recv(i, dest)
        self.round += 1

    def scatter_from(self, src: int, payloads: list[bytes]):
        for j in range(self.k):
            if j != src:
                self.send(src, j, payloads[j])
                self.recv(src, j)
        self.round += 1


# -- generator-driven party programs -----------------------------------------

@dataclass(frozen=True)
class Send:
    to: int
    payload: bytes


@dataclass(frozen=True)
class Recv:
    frm: int


@dataclass
class PartyContext:
    party: int
    k: int
    rng: np.random.Generator
    runner: ScriptRunner
    public: dict = field(default_factory=dict)

    def hook(self, name: str, state: dict) -> dict:
        for act in self.runner.match(self.party, name):
            state = inject_deviation(state, act)
        return state


@dataclass
class RunResult:
    outputs: list
    transcript: Transcript


PartyProgram = Callable[[PartyContext], Any]


def run_protocol(programs: list[PartyProgram], script: AdversaryScript | None = None,
                 seed: int = 0, transcript: Transcript | None = None,
                 public: dict | None = None) -> RunResult:
    """Run generator party programs to completion, round-robin.

    A program is ``f(ctx)`` returning a generator that yields :class:`Send` /
    :class:`Recv` and returns the party's output.  Any :class:`ProtocolAbort`
    raised by a program stops the run and propagates.
    """
    k = len(programs)
    net = Network(k, transcript)
    runner = ScriptRunner(script)
    seeds = np.random.SeedSequence(seed).spawn(k)
    ctxs = [PartyContext(i, k, np.random.default_rng(seeds[i]), runner, dict(public or {}))
            for i in range(k)]
    gens = [prog(ctx) for prog, ctx in zip(programs, ctxs)]
    outputs: list = [None] * k
    done = [False] * k
    waiting: list[Any] = [None] * k  # value to send into each generator next
    blocked: list[Recv | None] = [None] * k

    while not all(done):
        progressed = False
        for i in range(k):
            if done[i]:
                continue
            while True:
                if blocked[i] is not None:
                    src = blocked[i].frm
                    if not net.pending(src, i):
                        break
                    waiting[i] = net.recv(src, i)
                    blocked[i] = None
                try:
                    op = gens[i].send(waiting[i])
                except StopIteration as stop:
                    outputs[i] = stop.value
                    done[i] = True
                    progressed = True
                    break
                waiting[i] = None
                progressed = True
                if isinstance(op, Send):
                    net.send(i, op.to, op.payload)
                elif isinstance(op, Recv):
                    blocked[i] = op
                else:
                    raise TypeError(f"party {i} yielded {op!r}")
        net.round += 1
        if not progressed:
            raise DeadlockError("all remaining parties are blocked")
    runner.assert_all_fired()
    return RunResult(outputs, net.transcript)


def encode_ints(values) -> bytes:
    return np.asarray(values, dtype=np.uint64).astype("<u8").tobytes()


def decode_ints(payload: bytes) -> np.ndarray:
    return np.frombuffer(payload, dtype="<u8").astype(np.uint64)
