"""Instruction normalization: raw disassembly -> position-independent tokens.

Raw instructions are ``"<address> <mnemonic> [operands]"``.  Normalization
rewrites every artifact of linking and layout so that two compilations of the
same source tokenize alike:

  * instruction addresses are consumed relative to ``base_address`` and never
    emitted, so image placement drops out entirely;
  * numeric literals (immediates, displacements, out-of-function addresses)
    with magnitude strictly greater than ``imm_threshold`` become ``IMM``;
    small literals stay, rendered in decimal;
  * jump targets landing inside the function become relative offset tokens
    ``OFF+d`` / ``OFF-d`` where d = target - instruction address (decimal);
  * call targets naming a known libc export keep the name; every other
    direct call target (user functions, raw addresses) becomes ``func``;
  * memory operands split structurally: ``[rbp-0x8]`` -> ``[ rbp - 8 ]``.

Signs are structural tokens, so the threshold applies to magnitudes: ``-8``
stays as ``- 8`` while ``-8001`` becomes ``- IMM``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus import FunctionRecord


class NormalizeError(Exception):
    """Unparseable instruction; names the instruction index and raw text."""


DEFAULT_IMM_THRESHOLD = 5000
DEFAULT_MAX_PAIR_TOKENS = 2048
IMM_TOKEN = "IMM"
CALL_TOKEN = "func"
SEP_TOKEN = "[SEP]"

# ============================================================================
# x86-64 vocabulary
# ============================================================================

REGISTERS = frozenset(
    """
    rax rbx rcx rdx rsi rdi rbp rsp r8 r9 r10 r11 r12 r13 r14 r15
    eax ebx ecx edx esi edi ebp esp r8d r9d r10d r11d r12d r13d r14d r15d
    ax bx cx dx si di bp sp r8w r9w r10w r11w r12w r13w r14w r15w
    al bl cl dl ah bh ch dh sil dil bpl spl r8b r9b r10b r11b r12b r13b r14b r15b
    rip cs ds es fs gs ss
    xmm0 xmm1 xmm2 xmm3 xmm4 xmm5 xmm6 xmm7
    xmm8 xmm9 xmm10 xmm11 xmm12 xmm13 xmm14 xmm15
    ymm0 ymm1 ymm2 ymm3 ymm4 ymm5 ymm6 ymm7
    """.split()
)

JUMP_MNEMONICS = frozenset(
    """
    jmp je jne jz jnz ja jae jb jbe jg jge jl jle js jns jo jno jp jnp
    jc jnc jcxz jecxz jrcxz loop loope loopne
    """.split()
)

CALL_MNEMONICS = frozenset({"call", "callq", "lcall"})

PREFIX_TOKENS = frozenset({"lock", "rep", "repe", "repz", "repne", "repnz", "bnd"})

SIZE_KEYWORDS = frozenset(
    "byte word dword qword tbyte xmmword ymmword ptr rel short near far".split()
)

# Mnemonics the pair scorer treats as instruction heads when it rebuilds
# per-instruction structure out of a flat token stream.
KNOWN_MNEMONICS = frozenset(
    """
    mov movzx movsx movsxd lea push pop xchg
    add sub mul imul idiv inc dec neg adc sbb
    and or xor not shl shr sal sar rol ror
    cmp test cmove cmovne cmovg cmovl cmovge cmovle cmova cmovb
    sete setne setg setl setge setle seta setb
    ret retn leave nop hlt endbr64 cdq cdqe cqo
    movaps movups movdqa movdqu movss movsd
    addss addsd subss subsd mulss mulsd divss divsd
    pxor xorps xorpd ucomiss ucomisd cvtsi2sd cvttsd2si
    """.split()
    + sorted(JUMP_MNEMONICS)
    + sorted(CALL_MNEMONICS)
    + sorted(PREFIX_TOKENS)
)

# Common libc exports recognized as call targets.  Loadable from file for
# other runtimes; this default covers the usual C hot set.  Names that
# collide with x86 mnemonics (e.g. div) are deliberately absent.
DEFAULT_LIBC_NAMES = frozenset(
    """
    printf fprintf sprintf snprintf vprintf vfprintf vsnprintf
    puts putchar fputs fputc getchar fgets scanf fscanf sscanf
    malloc calloc realloc free
    memcpy memmove memset memcmp memchr
    strcpy strncpy strcat strncat strcmp strncmp strcasecmp strlen strnlen
    strchr strrchr strstr strtok strdup strndup strtol strtoul strtoll strtod
    atoi atol atoll atof
    abort exit _exit atexit assert
    system getenv setenv unsetenv
    qsort bsearch rand srand random time clock gettimeofday
    open close read write lseek unlink access stat fstat lstat
    fopen fclose fread fwrite fseek ftell fflush feof ferror rewind
    remove rename tmpfile setbuf setvbuf perror
    isalpha isdigit isalnum isspace isupper islower toupper tolower
    pow sqrt floor ceil fabs fmod exp log log10 sin cos tan atan atan2
    abs labs llabs
    signal raise kill getpid fork execve waitpid wait pipe dup dup2
    mmap munmap mprotect brk sbrk
    pthread_create pthread_join pthread_mutex_lock pthread_mutex_unlock
    pthread_mutex_init pthread_cond_wait pthread_cond_signal
    socket bind listen accept connect send recv sendto recvfrom
    htons htonl ntohs ntohl
    opendir readdir closedir mkdir rmdir chdir getcwd
    fcntl ioctl select poll usleep sleep nanosleep
    setjmp longjmp
    """.split()
)


@dataclass(frozen=True)
class NormalizeConfig:
    imm_threshold: int = DEFAULT_IMM_THRESHOLD
    libc_names: frozenset[str] = DEFAULT_LIBC_NAMES
    imm_token: str = IMM_TOKEN
    call_token: str = CALL_TOKEN
    sep_token: str = SEP_TOKEN
    max_pair_tokens: int = DEFAULT_MAX_PAIR_TOKENS

    def __post_init__(self) -> None:
        if self.imm_threshold < 0:
            raise ValueError("imm_threshold must be >= 0")
        if self.max_pair_tokens < 1:
            raise ValueError("max_pair_tokens must be >= 1")


@dataclass(frozen=True)
class TokenSequence:
    """Normalized tokens of one function.  ``origin_id`` ties the sequence
    back to its pool record (sidecar embedders and the oracle scorer key on
    it)."""

    origin_id: str
    tokens: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class PairEncoding:
    """Joint query (+) candidate encoding for a pairwise model boundary.

    ``tokens`` is query ++ [SEP] ++ candidate, left-truncated to the token
    budget: when the pair is too long the *head* is dropped so tails survive.
    A fully dropped query leaves zero separators; ``truncated`` is set
    whenever any token was dropped.
    """

    tokens: tuple[str, ...]
    query_id: str
    candidate_id: str
    truncated: bool
    sep_index: int | None

    @property
    def has_separator(self) -> bool:
        return self.sep_index is not None


def load_libc_names(path: str) -> frozenset[str]:
    """One export name per line; blank lines and #-comments ignored."""
    names: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                names.add(line)
    return frozenset(names)


# ============================================================================
# Instruction parsing
# ============================================================================


def _parse_int(text: str) -> int | None:
    t = text.strip()
    neg = t.startswith("-")
    if neg:
        t = t[1:]
    if t.startswith(("0x", "0X")):
        try:
            v = int(t, 16)
        except ValueError:
            return None
    elif t.isdigit():
        v = int(t, 10)
    else:
        return None
    return -v if neg else v


@dataclass(frozen=True)
class _ParsedInstruction:
    address: int
    prefixes: tuple[str, ...]
    mnemonic: str
    operands: tuple[str, ...]


def _parse_instruction(raw: str, index: int) -> _ParsedInstruction:
    words = raw.split()
    if len(words) < 2:
        raise NormalizeError(f"instruction {index}: unparseable: {raw!r}")
    addr = _parse_int(words[0].rstrip(":"))
    if addr is None or addr < 0:
        raise NormalizeError(f"instruction {index}: bad address in {raw!r}")
    pos = 1
    prefixes: list[str] = []
    while pos < len(words) and words[pos].lower() in PREFIX_TOKENS:
        prefixes.append(words[pos].lower())
        pos += 1
    if pos >= len(words):
        raise NormalizeError(f"instruction {index}: missing mnemonic: {raw!r}")
    mnemonic = words[pos].lower()
    operand_text = " ".join(words[pos + 1 :])
    operands = tuple(o.strip() for o in operand_text.split(",")) if operand_text else ()
    return _ParsedInstruction(addr, tuple(prefixes), mnemonic, operands)


_STRUCTURAL = frozenset("[]+-*:")
_IGNORED = frozenset("<>()")


def _split_operand(op: str) -> list[str]:
    """Split an operand into words and structural punctuation.

    ``qword ptr [rax+rbx*4-0x10]`` -> qword ptr [ rax + rbx * 4 - 0x10 ]
    """
    parts: list[str] = []
    word: list[str] = []
    for ch in op:
        if ch in _STRUCTURAL:
            if word:
                parts.append("".join(word))
                word = []
            parts.append(ch)
        elif ch.isspace() or ch in _IGNORED:
            if word:
                parts.append("".join(word))
                word = []
        else:
            word.append(ch)
    if word:
        parts.append("".join(word))
    return parts


def _render_literal(value: int, cfg: NormalizeConfig) -> str:
    # Threshold on magnitude; signs were already split off structurally.
    if abs(value) > cfg.imm_threshold:
        return cfg.imm_token
    return str(value)


def _tokenize_operand(op: str, cfg: NormalizeConfig) -> list[str]:
    out: list[str] = []
    for part in _split_operand(op):
        if part in _STRUCTURAL:
            out.append(part)
            continue
        low = part.lower()
        if low in REGISTERS or low in SIZE_KEYWORDS:
            out.append(low)
            continue
        value = _parse_int(part)
        if value is not None:
            if value < 0:
                # A signed literal that reached here whole (no structural
                # split); keep the convention: sign token + magnitude.
                out.append("-")
                value = -value
            out.append(_render_literal(value, cfg))
            continue
        out.append(part)  # unknown symbol passes through untouched
    return out


def _strip_symbol(op: str) -> str:
    return op.strip().strip("<>").strip()


def _is_plain_target(op: str) -> bool:
    """True for direct targets (symbol or literal); registers and memory
    operands are indirect and tokenize normally."""
    inner = _strip_symbol(op)
    if not inner or "[" in inner or " " in inner:
        return False
    return inner.lower() not in REGISTERS


def normalize_function(
    record: FunctionRecord, cfg: NormalizeConfig | None = None
) -> TokenSequence:
    """Apply the rewrite rules to one record.  Deterministic; raises
    NormalizeError naming the instruction index on unparseable input."""
    cfg = cfg or NormalizeConfig()
    parsed = [
        _parse_instruction(raw, i) for i, raw in enumerate(record.instructions)
    ]
    max_addr = max(p.address for p in parsed)
    base = record.base_address

    tokens: list[str] = []
    for p in parsed:
        tokens.extend(p.prefixes)
        tokens.append(p.mnemonic)
        if p.mnemonic in CALL_MNEMONICS and len(p.operands) == 1 and _is_plain_target(
            p.operands[0]
        ):
            name = _strip_symbol(p.operands[0])
            if name in cfg.libc_names:
                tokens.append(name)
            else:
                tokens.append(cfg.call_token)
            continue
        if p.mnemonic in JUMP_MNEMONICS and len(p.operands) == 1 and _is_plain_target(
            p.operands[0]
        ):
            target = _parse_int(_strip_symbol(p.operands[0]))
            if target is not None and base <= target <= max_addr:
                delta = target - p.address
                tokens.append(f"OFF{delta:+d}")
                continue
            # out-of-function target: plain literal under the threshold rule
        for op in p.operands:
            if op:
                tokens.extend(_tokenize_operand(op, cfg))
    return TokenSequence(origin_id=record.id, tokens=tuple(tokens))


def find_vocabulary_violations(
    tokens: Sequence[str], cfg: NormalizeConfig | None = None
) -> list[str]:
    """Tokens that escaped the rewrite: raw hex literals, or decimal literals
    with magnitude above the threshold.  Relative OFF tokens are exempt."""
    cfg = cfg or NormalizeConfig()
    bad: list[str] = []
    for tok in tokens:
        if tok.startswith("OFF"):
            continue
        if tok.lower().startswith("0x"):
            bad.append(tok)
            continue
        value = _parse_int(tok)
        if value is not None and abs(value) > cfg.imm_threshold:
            bad.append(tok)
    return bad


# ============================================================================
# Pair encoding
# ============================================================================


def encode_pair(
    query: TokenSequence,
    candidate: TokenSequence,
    cfg: NormalizeConfig | None = None,
) -> PairEncoding:
    """Join query and candidate around one separator, then left-truncate to
    ``max_pair_tokens``.  The kept window is always a suffix of the full
    joined sequence, so candidate tails survive at the expense of query
    heads."""
    cfg = cfg or NormalizeConfig()
    full = query.tokens + (cfg.sep_token,) + candidate.tokens
    dropped = max(0, len(full) - cfg.max_pair_tokens)
    kept = full[dropped:]
    sep_index: int | None = len(query.tokens) - dropped
    if sep_index < 0:
        sep_index = None
    return PairEncoding(
        tokens=kept,
        query_id=query.origin_id,
        candidate_id=candidate.origin_id,
        truncated=dropped > 0,
        sep_index=sep_index,
    )
