"""Shared fixture programs.

array_compare is the worked walk-through kernel used across the compiler
tests: it compares two 100-word arrays and leaves 1 or 0 in R6. nested_loop
is the smallest program whose inner-loop interval only merges with the outer
loop on the second interval pass. irreducible is a two-entry loop that the
interval pass must reject.
"""

import pytest

from ltrf.ir import parse_program

ARRAY_COMPARE_SRC = """\
    mov.u32         R0, A;
    mov.u32         R1, B;
    mov.u32         R2, 0;
    mov.u32         R3, 100;
L1: ld.local.u32    R4, [R0];
    ld.local.u32    R5, [R1];
    set.eq.u32.u32  p, R4, R5;
@!p bra             L2;
    add.u32         R0, R0, 4;
    add.u32         R1, R1, 4;
    add.u32         R2, R2, 1;
    set.lt.u32.u32  q, R2, R3;
@q  bra             L1;
    mov.u32         R6, 1;
    bra             L3;
L2: mov.u32         R6, 0;
L3: exit;
"""

NESTED_LOOP_SRC = """\
LA: set.lt.u32.u32  p, R0, R2;
@!p bra             LX;
LB: add.u32         R1, R1, 1;
    set.lt.u32.u32  q, R1, R3;
@q  bra             LB;
    add.u32         R0, R0, 1;
    bra             LA;
LX: exit;
"""

# Two-entry loop: LA and LB branch into each other and both are reachable
# straight from the entry block, so neither dominates the other.
IRREDUCIBLE_SRC = """\
    set.eq.u32.u32  p, R0, R1;
@p  bra             LB;
LA: add.u32         R2, R2, 1;
    bra             LB;
LB: add.u32         R3, R3, 1;
    bra             LA;
"""


@pytest.fixture
def array_compare():
    return parse_program(ARRAY_COMPARE_SRC)


@pytest.fixture
def nested_loop():
    return parse_program(NESTED_LOOP_SRC)


@pytest.fixture
def irreducible():
    return parse_program(IRREDUCIBLE_SRC)
