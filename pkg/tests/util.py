"""Shared builders for test fixtures."""

from __future__ import annotations

from resim import FunctionRecord, Pool


def make_record(
    fid: str,
    instructions: list[str] | tuple[str, ...],
    source_key: str | None = None,
    base_address: int | None = None,
    binary_id: str = "binA",
    compiler: str = "gcc",
    opt_level: str = "O2",
) -> FunctionRecord:
    """Record with sensible defaults; base defaults to the first address."""
    if base_address is None:
        first = str(instructions[0]).split()[0].rstrip(":")
        base_address = int(first, 0)
    return FunctionRecord(
        id=fid,
        binary_id=binary_id,
        source_key=source_key if source_key is not None else f"src::{fid}",
        compiler=compiler,
        opt_level=opt_level,
        base_address=base_address,
        instructions=tuple(instructions),
    )


def make_pool(*records: FunctionRecord) -> Pool:
    return Pool.from_records(records)


# A handful of tiny related/unrelated functions reused across test files.
# a1/a2 are variants of one source (same shape, different registers and
# layout); b is a different function; c shares a1's calls but not its body.
def tiny_pool() -> Pool:
    a1 = make_record(
        "a1",
        [
            "0x1000 push rbp",
            "0x1001 mov rbp, rsp",
            "0x1004 mov eax, dword ptr [rbp-0x4]",
            "0x1008 add eax, 7",
            "0x100b cmp eax, 100",
            "0x100e jle 0x1004",
            "0x1010 call <printf>",
            "0x1015 leave",
            "0x1016 ret",
        ],
        source_key="src::alpha",
    )
    a2 = make_record(
        "a2",
        [
            "0x2000 push rbp",
            "0x2001 mov rbp, rsp",
            "0x2004 mov ecx, dword ptr [rbp-0x8]",
            "0x2008 add ecx, 7",
            "0x200b cmp ecx, 100",
            "0x200e jle 0x2004",
            "0x2010 call <printf>",
            "0x2015 leave",
            "0x2016 ret",
        ],
        source_key="src::alpha",
        binary_id="binB",
        compiler="clang",
    )
    b = make_record(
        "b",
        [
            "0x3000 xor eax, eax",
            "0x3002 mov rdi, qword ptr [rsi+0x10]",
            "0x3006 call <malloc>",
            "0x300b test rax, rax",
            "0x300e jne 0x3002",
            "0x3010 ret",
        ],
        source_key="src::beta",
    )
    c = make_record(
        "c",
        [
            "0x4000 sub rsp, 0x18",
            "0x4004 call <printf>",
            "0x4009 add rsp, 0x18",
            "0x400d ret",
        ],
        source_key="src::gamma",
    )
    return make_pool(a1, a2, b, c)
