"""Parsing, printing, and execution of a small PTX-style kernel IR.

The instruction set is the integer subset needed for register-pressure
experiments: 32-bit moves, local-memory loads and stores, adds, unsigned
compares into predicate registers, guarded branches, opaque calls, and
exit. A program is a flat instruction list plus a label table; there is
no nesting and no data segment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

# Architectural limits. The register-cache bit vectors in the simulator and
# the prefetch markers emitted by the interval pass are sized by REG_COUNT,
# so everything downstream imports these from here.
REG_COUNT = 256
PRED_COUNT = 8
MEMORY_WORDS = 4096

GENERAL = "r"
PREDICATE = "p"

# Opcodes.
MOV = "mov"
LD_LOCAL = "ld_local"
ST_LOCAL = "st_local"
ADD = "add"
SET_CMP = "set_cmp"
BRA = "bra"
CALL = "call"
EXIT = "exit"

CMP_KINDS = ("eq", "ne", "lt", "le", "gt", "ge")

_M32 = 0xFFFFFFFF


class LtrfError(Exception):
    """Base class for every error raised by this package."""


class ParseError(LtrfError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ExecutionError(LtrfError):
    """Base class for interpreter failures."""


class OutOfBounds(ExecutionError):
    """Local-memory access outside the address space, or misaligned."""


class UnboundSymbol(ExecutionError):
    """A symbolic operand had no value bound in the machine state."""


class StepLimitExceeded(ExecutionError):
    """The interpreter hit its step budget without reaching exit."""


# ---------------------------------------------------------------------------
# Operand and instruction types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Register:
    kind: str
    index: int

    def __str__(self) -> str:
        if self.kind == GENERAL:
            return f"R{self.index}"
        return f"%p{self.index}"


def reg(index: int) -> Register:
    """General register R<index>."""
    return Register(GENERAL, index)


def pred(index: int) -> Register:
    """Predicate register number <index>."""
    return Register(PREDICATE, index)


@dataclass(frozen=True)
class Immediate:
    value: int

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class Symbol:
    """A named constant resolved from the machine state at run time."""

    name: str

    def __str__(self) -> str:
        return self.name


Operand = Register | Immediate | Symbol


@dataclass
class Instruction:
    """One decoded instruction.

    srcs holds value operands in operand order: for loads the single source
    is the address, for stores srcs is (address, value). guard is a
    (predicate, negated) pair or None. dead_srcs is filled in by the
    liveness pass with the source positions whose register value is not
    needed after this instruction; it stays None until that pass runs.
    """

    opcode: str
    dest: Register | None = None
    srcs: tuple[Operand, ...] = ()
    guard: tuple[Register, bool] | None = None
    cmp: str | None = None
    target: str | None = None
    dead_srcs: frozenset[int] | None = None

    def general_defs(self) -> tuple[Register, ...]:
        if self.dest is not None and self.dest.kind == GENERAL:
            return (self.dest,)
        return ()

    def general_srcs(self) -> tuple[tuple[int, Register], ...]:
        """(position, register) for every general-register source operand."""
        return tuple(
            (i, s)
            for i, s in enumerate(self.srcs)
            if isinstance(s, Register) and s.kind == GENERAL
        )

    def general_reads(self) -> tuple[Register, ...]:
        """Deduplicated source registers, in operand order."""
        out: list[Register] = []
        for _, r in self.general_srcs():
            if r not in out:
                out.append(r)
        return tuple(out)

    def general_registers(self) -> tuple[Register, ...]:
        """Every general register the instruction names, dest first."""
        out = list(self.general_defs())
        for _, r in self.general_srcs():
            if r not in out:
                out.append(r)
        return tuple(out)

    def is_terminator(self) -> bool:
        return self.opcode in (BRA, EXIT)


@dataclass
class Program:
    """A parsed program: instructions, label table, predicate names.

    labels maps a label name to the index of the instruction it precedes
    (possibly len(instructions) for a trailing label). pred_names remembers
    the source-level spelling of each predicate index so printing
    round-trips.
    """

    instructions: list[Instruction]
    labels: dict[str, int] = field(default_factory=dict)
    pred_names: dict[int, str] = field(default_factory=dict)

    def labels_at(self, index: int) -> list[str]:
        return sorted(name for name, i in self.labels.items() if i == index)

    def pred_name(self, index: int) -> str:
        return self.pred_names.get(index, f"p{index}")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_LABEL_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_$]*)\s*:(.*)$")
_GUARD_RE = re.compile(r"^@(!?)([A-Za-z_][A-Za-z0-9_$]*)\s+(.*)$")
_REG_RE = re.compile(r"^R(\d+)$")
_INT_RE = re.compile(r"^-?(?:0[xX][0-9a-fA-F]+|\d+)$")
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_$.]*$")
_SET_RE = re.compile(r"^set\.(eq|ne|lt|le|gt|ge)\.u32\.u32$")


def _check_arity(mnemonic: str, operands: list[str], n: int, line_no: int) -> None:
    if len(operands) != n:
        raise ParseError(
            line_no, f"{mnemonic} takes {n} operand(s), got {len(operands)}"
        )


def parse_program(text: str) -> Program:
    """Parse assembly text into a Program.

    Accepts '#' comments, optional trailing semicolons, labels on their own
    line or inline before an instruction, and '@p' / '@!p' guard prefixes.
    Branch targets must resolve to a label somewhere in the file; call
    targets are left symbolic.
    """
    instructions: list[Instruction] = []
    labels: dict[str, int] = {}
    pred_index: dict[str, int] = {}
    pending_labels: list[str] = []
    branch_sites: list[tuple[int, str]] = []

    def intern_pred(name: str, line_no: int) -> Register:
        if name not in pred_index:
            if len(pred_index) >= PRED_COUNT:
                raise ParseError(
                    line_no, f"more than {PRED_COUNT} predicate registers"
                )
            pred_index[name] = len(pred_index)
        return Register(PREDICATE, pred_index[name])

    def value_operand(tok: str, line_no: int) -> Operand:
        tok = tok.strip()
        m = _REG_RE.match(tok)
        if m:
            idx = int(m.group(1))
            if idx >= REG_COUNT:
                raise ParseError(line_no, f"register index out of range: {tok}")
            return Register(GENERAL, idx)
        if _INT_RE.match(tok):
            return Immediate(int(tok, 0))
        if _NAME_RE.match(tok):
            return Symbol(tok)
        raise ParseError(line_no, f"bad operand {tok!r}")

    def address_operand(tok: str, line_no: int) -> Operand:
        tok = tok.strip()
        if not (tok.startswith("[") and tok.endswith("]")):
            raise ParseError(line_no, f"expected a [address] operand, got {tok!r}")
        return value_operand(tok[1:-1], line_no)

    def dest_register(tok: str, line_no: int) -> Register:
        op = value_operand(tok, line_no)
        if not (isinstance(op, Register) and op.kind == GENERAL):
            raise ParseError(
                line_no, f"destination must be a general register, got {tok!r}"
            )
        return op

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue

        while True:
            m = _LABEL_RE.match(line)
            if not m:
                break
            name = m.group(1)
            if name in labels or name in pending_labels:
                raise ParseError(line_no, f"duplicate label {name!r}")
            pending_labels.append(name)
            line = m.group(2).strip()
        if not line:
            continue

        guard = None
        gm = _GUARD_RE.match(line)
        if gm:
            guard = (intern_pred(gm.group(2), line_no), gm.group(1) == "!")
            line = gm.group(3).strip()

        if line.endswith(";"):
            line = line[:-1].rstrip()
        if not line:
            raise ParseError(line_no, "guard with no instruction")

        parts = line.split(None, 1)
        mnemonic = parts[0]
        rest = parts[1].strip() if len(parts) > 1 else ""
        operands = [t.strip() for t in rest.split(",")] if rest else []

        set_m = _SET_RE.match(mnemonic)
        if mnemonic == "mov.u32":
            _check_arity(mnemonic, operands, 2, line_no)
            instr = Instruction(
                MOV,
                dest=dest_register(operands[0], line_no),
                srcs=(value_operand(operands[1], line_no),),
                guard=guard,
            )
        elif mnemonic == "ld.local.u32":
            _check_arity(mnemonic, operands, 2, line_no)
            instr = Instruction(
                LD_LOCAL,
                dest=dest_register(operands[0], line_no),
                srcs=(address_operand(operands[1], line_no),),
                guard=guard,
            )
        elif mnemonic == "st.local.u32":
            _check_arity(mnemonic, operands, 2, line_no)
            instr = Instruction(
                ST_LOCAL,
                srcs=(
                    address_operand(operands[0], line_no),
                    value_operand(operands[1], line_no),
                ),
                guard=guard,
            )
        elif mnemonic == "add.u32":
            _check_arity(mnemonic, operands, 3, line_no)
            instr = Instruction(
                ADD,
                dest=dest_register(operands[0], line_no),
                srcs=(
                    value_operand(operands[1], line_no),
                    value_operand(operands[2], line_no),
                ),
                guard=guard,
            )
        elif set_m:
            _check_arity(mnemonic, operands, 3, line_no)
            head = operands[0]
            if _REG_RE.match(head) or not _NAME_RE.match(head):
                raise ParseError(
                    line_no, f"set destination must be a predicate, got {head!r}"
                )
            instr = Instruction(
                SET_CMP,
                dest=intern_pred(head, line_no),
                srcs=(
                    value_operand(operands[1], line_no),
                    value_operand(operands[2], line_no),
                ),
                guard=guard,
                cmp=set_m.group(1),
            )
        elif mnemonic == "bra":
            _check_arity(mnemonic, operands, 1, line_no)
            if not _NAME_RE.match(operands[0]):
                raise ParseError(line_no, f"bad branch target {operands[0]!r}")
            branch_sites.append((line_no, operands[0]))
            instr = Instruction(BRA, target=operands[0], guard=guard)
        elif mnemonic == "call":
            _check_arity(mnemonic, operands, 1, line_no)
            if not _NAME_RE.match(operands[0]):
                raise ParseError(line_no, f"bad call target {operands[0]!r}")
            instr = Instruction(CALL, target=operands[0], guard=guard)
        elif mnemonic == "exit":
            _check_arity(mnemonic, operands, 0, line_no)
            instr = Instruction(EXIT, guard=guard)
        else:
            raise ParseError(line_no, f"unknown instruction {mnemonic!r}")

        for name in pending_labels:
            labels[name] = len(instructions)
        pending_labels.clear()
        instructions.append(instr)

    for name in pending_labels:
        labels[name] = len(instructions)

    for line_no, target in branch_sites:
        if target not in labels:
            raise ParseError(line_no, f"branch to undefined label {target!r}")

    pred_names = {i: n for n, i in pred_index.items()}
    return Program(instructions, labels, pred_names)


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------


def _operand_text(op: Operand, program: Program) -> str:
    if isinstance(op, Register) and op.kind == PREDICATE:
        return program.pred_name(op.index)
    return str(op)


def _instr_parts(instr: Instruction, program: Program) -> tuple[str, str]:
    """(mnemonic, operand text) without guard or label."""
    if instr.opcode == MOV:
        return "mov.u32", f"{instr.dest}, {_operand_text(instr.srcs[0], program)}"
    if instr.opcode == LD_LOCAL:
        return (
            "ld.local.u32",
            f"{instr.dest}, [{_operand_text(instr.srcs[0], program)}]",
        )
    if instr.opcode == ST_LOCAL:
        addr, val = instr.srcs
        return (
            "st.local.u32",
            f"[{_operand_text(addr, program)}], {_operand_text(val, program)}",
        )
    if instr.opcode == ADD:
        a, b = instr.srcs
        return (
            "add.u32",
            f"{instr.dest}, {_operand_text(a, program)}, {_operand_text(b, program)}",
        )
    if instr.opcode == SET_CMP:
        a, b = instr.srcs
        return (
            f"set.{instr.cmp}.u32.u32",
            f"{program.pred_name(instr.dest.index)}, "
            f"{_operand_text(a, program)}, {_operand_text(b, program)}",
        )
    if instr.opcode == BRA:
        return "bra", instr.target
    if instr.opcode == CALL:
        return "call", instr.target
    if instr.opcode == EXIT:
        return "exit", ""
    raise AssertionError(f"unprintable opcode {instr.opcode!r}")


def format_program(
    program: Program, annotations: dict[int, list[str]] | None = None
) -> str:
    """Render a program back to assembly text.

    The output parses back to an equal program (labels, guards, predicate
    names included). annotations maps an instruction index to extra lines
    inserted just before it, used for prefetch markers; indices up to
    len(instructions) are accepted so a marker can trail the program.
    """
    annotations = annotations or {}
    by_index: dict[int, list[str]] = {}
    for name, i in program.labels.items():
        by_index.setdefault(i, []).append(name)
    for names in by_index.values():
        names.sort()

    guard_texts = []
    for instr in program.instructions:
        if instr.guard is None:
            guard_texts.append("")
        else:
            g, negated = instr.guard
            guard_texts.append(("@!" if negated else "@") + program.pred_name(g.index))

    label_w = max((len(n) + 1 for n in program.labels), default=0)
    if label_w:
        label_w += 1
    guard_w = max((len(g) for g in guard_texts), default=0)
    if guard_w:
        guard_w += 1
    mn_w = (
        max(
            (len(_instr_parts(i, program)[0]) for i in program.instructions),
            default=4,
        )
        + 2
    )

    lines: list[str] = []
    for i, instr in enumerate(program.instructions):
        for extra in annotations.get(i, ()):
            lines.append(" " * (label_w + guard_w) + extra)
        names = by_index.get(i, [])
        for name in names[1:]:
            lines.append(f"{name}:")
        label = f"{names[0]}:" if names else ""
        mnemonic, ops = _instr_parts(instr, program)
        body = f"{mnemonic:<{mn_w}}{ops}" if ops else mnemonic
        lines.append(f"{label:<{label_w}}{guard_texts[i]:<{guard_w}}{body};")

    tail = len(program.instructions)
    for extra in annotations.get(tail, ()):
        lines.append(" " * (label_w + guard_w) + extra)
    for name in by_index.get(tail, []):
        lines.append(f"{name}:")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Interpreter
# ---------------------------------------------------------------------------


@dataclass
class MachineState:
    """Architectural state: 256 general registers, 8 predicates, local memory.

    Local memory is word-addressed internally but the ISA uses byte
    addresses, so accesses must be 4-byte aligned. symbols gives values to
    symbolic operands (base addresses and the like).
    """

    regs: list[int]
    preds: list[bool]
    memory: list[int]
    symbols: dict[str, int]

    @classmethod
    def fresh(cls, symbols: dict[str, int] | None = None) -> "MachineState":
        return cls(
            regs=[0] * REG_COUNT,
            preds=[False] * PRED_COUNT,
            memory=[0] * MEMORY_WORDS,
            symbols=dict(symbols or {}),
        )


@dataclass
class RunResult:
    reason: str  # "exit", or "end" when control fell off the program
    steps: int
    pcs: list[int] | None = None


_CMP_FUNCS = {
    "eq": lambda a, b: a == b,
    "ne": lambda a, b: a != b,
    "lt": lambda a, b: a < b,
    "le": lambda a, b: a <= b,
    "gt": lambda a, b: a > b,
    "ge": lambda a, b: a >= b,
}


def _value(state: MachineState, op: Operand) -> int:
    if isinstance(op, Register):
        assert op.kind == GENERAL, "predicate used as a value operand"
        return state.regs[op.index]
    if isinstance(op, Immediate):
        return op.value & _M32
    if op.name not in state.symbols:
        raise UnboundSymbol(f"symbol {op.name!r} has no value")
    return state.symbols[op.name] & _M32


def _word_index(addr: int) -> int:
    if addr % 4 != 0:
        raise OutOfBounds(f"misaligned local access at byte address {addr}")
    w = addr // 4
    if not 0 <= w < MEMORY_WORDS:
        raise OutOfBounds(f"local access at byte address {addr} is out of range")
    return w


def run_program(
    program: Program,
    state: MachineState | None = None,
    *,
    symbols: dict[str, int] | None = None,
    max_steps: int = 1_000_000,
    record_pcs: bool = False,
) -> tuple[RunResult, MachineState]:
    """Execute a program to completion.

    A fresh all-zero state is created when none is passed (symbols only
    applies in that case). Guarded instructions whose predicate test fails
    still count as a step and appear in the recorded pc list; they just
    have no architectural effect.
    """
    if state is None:
        state = MachineState.fresh(symbols)
    pc = 0
    steps = 0
    pcs: list[int] | None = [] if record_pcs else None
    n = len(program.instructions)

    while pc < n:
        if steps >= max_steps:
            raise StepLimitExceeded(f"no exit within {max_steps} steps")
        instr = program.instructions[pc]
        steps += 1
        if pcs is not None:
            pcs.append(pc)

        if instr.guard is not None:
            g, negated = instr.guard
            if state.preds[g.index] == negated:
                pc += 1
                continue

        op = instr.opcode
        if op == MOV:
            state.regs[instr.dest.index] = _value(state, instr.srcs[0])
            pc += 1
        elif op == ADD:
            a = _value(state, instr.srcs[0])
            b = _value(state, instr.srcs[1])
            state.regs[instr.dest.index] = (a + b) & _M32
            pc += 1
        elif op == LD_LOCAL:
            addr = _value(state, instr.srcs[0])
            state.regs[instr.dest.index] = state.memory[_word_index(addr)]
            pc += 1
        elif op == ST_LOCAL:
            addr = _value(state, instr.srcs[0])
            state.memory[_word_index(addr)] = _value(state, instr.srcs[1]) & _M32
            pc += 1
        elif op == SET_CMP:
            a = _value(state, instr.srcs[0])
            b = _value(state, instr.srcs[1])
            state.preds[instr.dest.index] = _CMP_FUNCS[instr.cmp](a, b)
            pc += 1
        elif op == BRA:
            pc = program.labels[instr.target]
        elif op == CALL:
            pc += 1  # calls are opaque to the interpreter
        elif op == EXIT:
            return RunResult("exit", steps, pcs), state
        else:
            raise AssertionError(f"unexecutable opcode {op!r}")

    return RunResult("end", steps, pcs), state
