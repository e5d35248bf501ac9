"""Instruction classes, mnemonic classification and histogram construction.

Instruction mnemonics taken from text disassembly listings (x86-64 objdump
output, PTX) are mapped onto a fixed space of eight classes.  Rules are plain
data: an ordered list of ``<pattern> <class> <device>`` lines where the first
matching pattern wins.  Patterns are shell-style globs, so an exact string or
a ``prefix*`` both work.
"""

from __future__ import annotations

import enum
import fnmatch
import io
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, TextIO


class InstructionClass(enum.Enum):
    SCALAR_ARITHMETIC = "scalar_arithmetic"
    SCALAR_MEMORY = "scalar_memory"
    SCALAR_LOGIC = "scalar_logic"
    VECTOR_ARITHMETIC = "vector_arithmetic"
    VECTOR_MEMORY = "vector_memory"
    VECTOR_LOGIC = "vector_logic"
    BRANCH = "branch"
    JUMP = "jump"

    @property
    def index(self) -> int:
        return _CLASS_INDEX[self]

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_name(cls, name: str) -> "InstructionClass":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown instruction class {name!r}") from None


CLASSES: tuple[InstructionClass, ...] = tuple(InstructionClass)
N_CLASSES = len(CLASSES)
_CLASS_INDEX = {c: i for i, c in enumerate(CLASSES)}

# short column suffixes used by the CSV trace layout
SHORT_NAMES = ("sa", "sm", "sl", "va", "vm", "vl", "br", "jp")

_LABELS = {
    InstructionClass.SCALAR_ARITHMETIC: "Scalar Arithmetic",
    InstructionClass.SCALAR_MEMORY: "Scalar Memory",
    InstructionClass.SCALAR_LOGIC: "Scalar Logic",
    InstructionClass.VECTOR_ARITHMETIC: "Vector Arithmetic",
    InstructionClass.VECTOR_MEMORY: "Vector Memory",
    InstructionClass.VECTOR_LOGIC: "Vector Logic",
    InstructionClass.BRANCH: "Branch",
    InstructionClass.JUMP: "Jumps",
}


class Device(enum.Enum):
    CPU = "cpu"
    GPU = "gpu"

    @classmethod
    def parse(cls, value: "str | Device") -> "Device":
        if isinstance(value, Device):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown device {value!r} (expected cpu or gpu)") from None


HISTOGRAM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class InstructionHistogram:
    """Probability mass over the eight instruction classes.

    The all-zero vector is allowed and denotes an idle window.
    """

    probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) != N_CLASSES:
            raise ValueError(f"histogram needs {N_CLASSES} entries, got {len(probs)}")
        for p in probs:
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"histogram entry {p!r} outside [0, 1]")
        total = math.fsum(probs)
        if total != 0.0 and abs(total - 1.0) > HISTOGRAM_TOLERANCE:
            raise ValueError(f"histogram sums to {total!r}, expected 1 or an idle histogram")

    @classmethod
    def idle(cls) -> "InstructionHistogram":
        return cls((0.0,) * N_CLASSES)

    @classmethod
    def one_hot(cls, klass: InstructionClass) -> "InstructionHistogram":
        probs = [0.0] * N_CLASSES
        probs[klass.index] = 1.0
        return cls(tuple(probs))

    @classmethod
    def from_mapping(cls, mass: Mapping) -> "InstructionHistogram":
        """Build from ``{class or class-name: probability}``; missing classes are 0."""
        probs = [0.0] * N_CLASSES
        for key, value in mass.items():
            klass = key if isinstance(key, InstructionClass) else InstructionClass.from_name(key)
            probs[klass.index] = float(value)
        return cls(tuple(probs))

    @property
    def is_idle(self) -> bool:
        return not any(self.probs)

    def __getitem__(self, klass: InstructionClass) -> float:
        return self.probs[klass.index]

    def as_dict(self) -> dict[str, float]:
        return {c.value: p for c, p in zip(CLASSES, self.probs)}


def build_histogram(counts: Mapping[InstructionClass, int]) -> InstructionHistogram:
    """Normalize per-class counts into a histogram (idle if every count is 0)."""
    raw = [0] * N_CLASSES
    for klass, n in counts.items():
        if n < 0 or not math.isfinite(n):
            raise ValueError(f"invalid count {n!r} for {klass}")
        raw[klass.index] += n
    total = sum(raw)
    if total == 0:
        return InstructionHistogram.idle()
    return InstructionHistogram(tuple(n / total for n in raw))


# ---------------------------------------------------------------------------
# Classification rules

@dataclass(frozen=True)
class Rule:
    pattern: str
    klass: InstructionClass
    device: Device

    def matches(self, mnemonic: str) -> bool:
        return fnmatch.fnmatchcase(mnemonic, self.pattern)


@dataclass(frozen=True)
class ClassificationRules:
    rules: tuple[Rule, ...]

    def for_device(self, device: Device) -> tuple[Rule, ...]:
        return tuple(r for r in self.rules if r.device is device)

    def __len__(self):
        return len(self.rules)


def parse_rules(text: str, source: str = "<rules>") -> ClassificationRules:
    rules = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 3:
            raise ValueError(f"{source}:{lineno}: expected '<pattern> <class> <device>', got {line!r}")
        pattern, klass, device = fields
        try:
            rules.append(Rule(pattern.lower(), InstructionClass.from_name(klass), Device.parse(device)))
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    return ClassificationRules(tuple(rules))


def load_rules(path: "str | Path") -> ClassificationRules:
    path = Path(path)
    return parse_rules(path.read_text(encoding="utf-8"), source=str(path))


# x86-64 (Intel or AT&T syntax).  Order matters: specific SIMD forms come
# before the scalar prefixes that would otherwise swallow them.
_DEFAULT_CPU_RULES = """
# control transfer
jmp*        jump    cpu
ljmp*       jump    cpu
call*       jump    cpu
lcall*      jump    cpu
ret*        jump    cpu
lret*       jump    cpu
iret*       jump    cpu
syscall     jump    cpu
sysret*     jump    cpu
j*          branch  cpu
loop*       branch  cpu

# AVX / AVX-512 (VEX and EVEX encoded)
vmovmsk*    vector_logic       cpu
vpmovmskb   vector_logic       cpu
vmov*       vector_memory      cpu
vbroadcast* vector_memory      cpu
vpbroadcast* vector_memory     cpu
vgather*    vector_memory      cpu
vpgather*   vector_memory      cpu
vscatter*   vector_memory      cpu
vpscatter*  vector_memory      cpu
vmaskmov*   vector_memory      cpu
vpmaskmov*  vector_memory      cpu
vlddqu      vector_memory      cpu
vexpand*    vector_memory      cpu
vpexpand*   vector_memory      cpu
vcompress*  vector_memory      cpu
vpcompress* vector_memory      cpu
vpand*      vector_logic       cpu
vpor*       vector_logic       cpu
vpxor*      vector_logic       cpu
vand*       vector_logic       cpu
vor*        vector_logic       cpu
vxor*       vector_logic       cpu
vpcmp*      vector_logic       cpu
vcmp*       vector_logic       cpu
vcomis*     vector_logic       cpu
vucomis*    vector_logic       cpu
vpsll*      vector_logic       cpu
vpsrl*      vector_logic       cpu
vpsra*      vector_logic       cpu
vpshuf*     vector_logic       cpu
vshuf*      vector_logic       cpu
vperm*      vector_logic       cpu
vpperm      vector_logic       cpu
vpunpck*    vector_logic       cpu
vunpck*     vector_logic       cpu
vblend*     vector_logic       cpu
vpblend*    vector_logic       cpu
vinsert*    vector_logic       cpu
vextract*   vector_logic       cpu
vpinsr*     vector_logic       cpu
vpextr*     vector_logic       cpu
vptest*     vector_logic       cpu
vtest*      vector_logic       cpu
vpternlog*  vector_logic       cpu
vpack*      vector_logic       cpu
vpalignr    vector_logic       cpu
valign*     vector_logic       cpu
vpmov*      vector_logic       cpu
vzero*      vector_logic       cpu
v*          vector_arithmetic  cpu

# AVX-512 opmask registers
kmov*       vector_memory      cpu
kand*       vector_logic       cpu
kor*        vector_logic       cpu
kxor*       vector_logic       cpu
kxnor*      vector_logic       cpu
knot*       vector_logic       cpu
kshift*     vector_logic       cpu
kunpck*     vector_logic       cpu
ktest*      vector_logic       cpu
kadd*       vector_logic       cpu

# SSE packed data movement
movaps      vector_memory      cpu
movapd      vector_memory      cpu
movups      vector_memory      cpu
movupd      vector_memory      cpu
movdqa      vector_memory      cpu
movdqu      vector_memory      cpu
movnt*      vector_memory      cpu
lddqu       vector_memory      cpu
maskmov*    vector_memory      cpu
movmsk*     vector_logic       cpu

# SSE packed logic, compare, shuffle
andps       vector_logic       cpu
andpd       vector_logic       cpu
andnps      vector_logic       cpu
andnpd      vector_logic       cpu
orps        vector_logic       cpu
orpd        vector_logic       cpu
xorps       vector_logic       cpu
xorpd       vector_logic       cpu
cmpps       vector_logic       cpu
cmppd       vector_logic       cpu
shufps      vector_logic       cpu
shufpd      vector_logic       cpu
unpck*      vector_logic       cpu
blend*      vector_logic       cpu
pand*       vector_logic       cpu
por         vector_logic       cpu
pxor        vector_logic       cpu
pcmp*       vector_logic       cpu
psll*       vector_logic       cpu
psrl*       vector_logic       cpu
psra*       vector_logic       cpu
pshuf*      vector_logic       cpu
punpck*     vector_logic       cpu
pack*       vector_logic       cpu
palignr     vector_logic       cpu
pblend*     vector_logic       cpu
ptest       vector_logic       cpu
pmovmskb    vector_logic       cpu
pinsr*      vector_logic       cpu
pextr*      vector_logic       cpu
pmov*       vector_logic       cpu

# SSE packed arithmetic
addps       vector_arithmetic  cpu
addpd       vector_arithmetic  cpu
addsubp*    vector_arithmetic  cpu
subps       vector_arithmetic  cpu
subpd       vector_arithmetic  cpu
mulps       vector_arithmetic  cpu
mulpd       vector_arithmetic  cpu
divps       vector_arithmetic  cpu
divpd       vector_arithmetic  cpu
sqrtps      vector_arithmetic  cpu
sqrtpd      vector_arithmetic  cpu
maxps       vector_arithmetic  cpu
maxpd       vector_arithmetic  cpu
minps       vector_arithmetic  cpu
minpd       vector_arithmetic  cpu
rcpps       vector_arithmetic  cpu
rsqrtps     vector_arithmetic  cpu
haddp*      vector_arithmetic  cpu
hsubp*      vector_arithmetic  cpu
dpps        vector_arithmetic  cpu
dppd        vector_arithmetic  cpu
roundp*     vector_arithmetic  cpu
cvtdq2p*    vector_arithmetic  cpu
cvtps2*     vector_arithmetic  cpu
cvtpd2*     vector_arithmetic  cpu
cvttps2*    vector_arithmetic  cpu
cvttpd2*    vector_arithmetic  cpu
padd*       vector_arithmetic  cpu
psub*       vector_arithmetic  cpu
pmul*       vector_arithmetic  cpu
pmadd*      vector_arithmetic  cpu
pavg*       vector_arithmetic  cpu
pmax*       vector_arithmetic  cpu
pmin*       vector_arithmetic  cpu
pabs*       vector_arithmetic  cpu
psad*       vector_arithmetic  cpu
phadd*      vector_arithmetic  cpu
phsub*      vector_arithmetic  cpu
psign*      vector_arithmetic  cpu

# SSE scalar floating point
comis*      scalar_logic       cpu
ucomis*     scalar_logic       cpu
cvt*        scalar_arithmetic  cpu
sqrts*      scalar_arithmetic  cpu
rounds*     scalar_arithmetic  cpu
maxs*       scalar_arithmetic  cpu
mins*       scalar_arithmetic  cpu

# x87
fld*        scalar_memory      cpu
fst*        scalar_memory      cpu
fist*       scalar_memory      cpu
fcom*       scalar_logic       cpu
fucom*      scalar_logic       cpu
ftst        scalar_logic       cpu
fxch        scalar_memory      cpu
fadd*       scalar_arithmetic  cpu
fiadd*      scalar_arithmetic  cpu
fsub*       scalar_arithmetic  cpu
fisub*      scalar_arithmetic  cpu
fmul*       scalar_arithmetic  cpu
fimul*      scalar_arithmetic  cpu
fdiv*       scalar_arithmetic  cpu
fidiv*      scalar_arithmetic  cpu
fsqrt       scalar_arithmetic  cpu
fabs        scalar_arithmetic  cpu
fchs        scalar_arithmetic  cpu
fsin*       scalar_arithmetic  cpu
fcos        scalar_arithmetic  cpu
fptan       scalar_arithmetic  cpu
fpatan      scalar_arithmetic  cpu
fprem*      scalar_arithmetic  cpu
frndint     scalar_arithmetic  cpu
fscale      scalar_arithmetic  cpu
fyl2x*      scalar_arithmetic  cpu
f2xm1       scalar_arithmetic  cpu

# general purpose integer
cmpxchg*    scalar_memory      cpu
xadd*       scalar_memory      cpu
xchg*       scalar_memory      cpu
popcnt*     scalar_logic       cpu
push*       scalar_memory      cpu
pop*        scalar_memory      cpu
cmov*       scalar_logic       cpu
mov*        scalar_memory      cpu
lods*       scalar_memory      cpu
stos*       scalar_memory      cpu
prefetch*   scalar_memory      cpu
scas*       scalar_logic       cpu
add*        scalar_arithmetic  cpu
adc*        scalar_arithmetic  cpu
sub*        scalar_arithmetic  cpu
sbb*        scalar_arithmetic  cpu
imul*       scalar_arithmetic  cpu
mul*        scalar_arithmetic  cpu
idiv*       scalar_arithmetic  cpu
div*        scalar_arithmetic  cpu
inc*        scalar_arithmetic  cpu
dec*        scalar_arithmetic  cpu
neg*        scalar_arithmetic  cpu
lea*        scalar_arithmetic  cpu
cqo         scalar_arithmetic  cpu
cdq*        scalar_arithmetic  cpu
cwd*        scalar_arithmetic  cpu
cbw         scalar_arithmetic  cpu
cltq        scalar_arithmetic  cpu
cqto        scalar_arithmetic  cpu
cltd        scalar_arithmetic  cpu
and*        scalar_logic       cpu
or*         scalar_logic       cpu
xor*        scalar_logic       cpu
not*        scalar_logic       cpu
test*       scalar_logic       cpu
cmp*        scalar_logic       cpu
shl*        scalar_logic       cpu
shr*        scalar_logic       cpu
sal*        scalar_logic       cpu
sar*        scalar_logic       cpu
rol*        scalar_logic       cpu
ror*        scalar_logic       cpu
rcl*        scalar_logic       cpu
rcr*        scalar_logic       cpu
bt*         scalar_logic       cpu
bsf*        scalar_logic       cpu
bsr*        scalar_logic       cpu
bswap*      scalar_logic       cpu
lzcnt*      scalar_logic       cpu
tzcnt*      scalar_logic       cpu
set*        scalar_logic       cpu
"""

# PTX.  Mnemonics keep their dotted modifiers (ld.global.v4.f32, fma.rn.f32).
_DEFAULT_GPU_RULES = """
bra.uni*        jump               gpu
bra*            branch             gpu
brx.idx*        jump               gpu
call*           jump               gpu
ret*            jump               gpu
exit            jump               gpu

wmma.load*      vector_memory      gpu
wmma.store*     vector_memory      gpu
ldmatrix*       vector_memory      gpu
stmatrix*       vector_memory      gpu
cp.async*       vector_memory      gpu
ld.v[248].*     vector_memory      gpu
ld.*.v[248].*   vector_memory      gpu
ldu.*.v[248].*  vector_memory      gpu
st.v[248].*     vector_memory      gpu
st.*.v[248].*   vector_memory      gpu
tex.*           vector_memory      gpu
tld4.*          vector_memory      gpu
suld.*          vector_memory      gpu
sust.*          vector_memory      gpu
ld.*            scalar_memory      gpu
ldu.*           scalar_memory      gpu
st.*            scalar_memory      gpu
atom.*          scalar_memory      gpu
red.*           scalar_memory      gpu
mov.*           scalar_memory      gpu
prefetch*       scalar_memory      gpu

wmma.mma*       vector_arithmetic  gpu
mma*            vector_arithmetic  gpu
wgmma*          vector_arithmetic  gpu
*.f16x2         vector_arithmetic  gpu
*.bf16x2        vector_arithmetic  gpu
dp4a.*          vector_arithmetic  gpu
dp2a.*          vector_arithmetic  gpu

shfl.*          vector_logic       gpu
vote.*          vector_logic       gpu
match.*         vector_logic       gpu

and.*           scalar_logic       gpu
or.*            scalar_logic       gpu
xor.*           scalar_logic       gpu
not.*           scalar_logic       gpu
cnot.*          scalar_logic       gpu
lop3.*          scalar_logic       gpu
shl.*           scalar_logic       gpu
shr.*           scalar_logic       gpu
shf.*           scalar_logic       gpu
setp.*          scalar_logic       gpu
set.*           scalar_logic       gpu
selp.*          scalar_logic       gpu
slct.*          scalar_logic       gpu
prmt.*          scalar_logic       gpu
bfe.*           scalar_logic       gpu
bfi.*           scalar_logic       gpu
popc.*          scalar_logic       gpu
clz.*           scalar_logic       gpu
brev.*          scalar_logic       gpu

add*            scalar_arithmetic  gpu
sub*            scalar_arithmetic  gpu
mul*            scalar_arithmetic  gpu
mad*            scalar_arithmetic  gpu
fma.*           scalar_arithmetic  gpu
div.*           scalar_arithmetic  gpu
rem.*           scalar_arithmetic  gpu
abs.*           scalar_arithmetic  gpu
neg.*           scalar_arithmetic  gpu
min.*           scalar_arithmetic  gpu
max.*           scalar_arithmetic  gpu
sqrt.*          scalar_arithmetic  gpu
rsqrt.*         scalar_arithmetic  gpu
rcp.*           scalar_arithmetic  gpu
ex2.*           scalar_arithmetic  gpu
lg2.*           scalar_arithmetic  gpu
sin.*           scalar_arithmetic  gpu
cos.*           scalar_arithmetic  gpu
tanh.*          scalar_arithmetic  gpu
sad.*           scalar_arithmetic  gpu
cvt.*           scalar_arithmetic  gpu
cvta.*          scalar_arithmetic  gpu
"""

DEFAULT_RULES = parse_rules(_DEFAULT_CPU_RULES + _DEFAULT_GPU_RULES, source="<builtin>")


def classify_mnemonic(
    mnemonic: str,
    device: "Device | str",
    rules: ClassificationRules = DEFAULT_RULES,
) -> "InstructionClass | None":
    """Return the class of the first matching rule, or None when nothing matches."""
    device = Device.parse(device)
    mnemonic = mnemonic.lower()
    for rule in rules.rules:
        if rule.device is device and rule.matches(mnemonic):
            return rule.klass
    return None


# ---------------------------------------------------------------------------
# Listing parser

_ADDRESS = re.compile(r"^(0x)?[0-9a-f]+:$")
_HEX_BYTE = re.compile(r"^[0-9a-f]{2}$")
_MNEMONIC = re.compile(r"^[a-z][a-z0-9_.]*$")
_BANNER = re.compile(r"^(disassembly of section |.*:\s+file format )")
_X86_PREFIXES = {
    "lock", "rep", "repe", "repz", "repne", "repnz", "notrack", "bnd",
    "data16", "data32", "addr32", "rex", "rex.w", "{vex}", "{evex}", "cs", "ds",
}


def _extract_mnemonic(line: str) -> "str | None":
    """Pull the mnemonic out of one listing line.

    Returns ``""`` for lines that carry no instruction (blank, comments,
    labels, directives, byte-only continuation lines) and ``None`` for lines
    that look like instructions but have no usable mnemonic.
    """
    for marker in ("//", "#"):
        line = line.split(marker, 1)[0]
    text = line.strip().lower()
    if not text.strip("(){};, ") or text.startswith((".", "<", ";")) or _BANNER.match(text):
        return ""
    tokens = text.replace(",", " ").split()
    had_address = False
    if _ADDRESS.match(tokens[0]):
        tokens = tokens[1:]
        had_address = True
    elif len(tokens) >= 2 and tokens[-1].endswith(">:"):
        return ""  # objdump symbol header: "0000000000401000 <main>:"
    elif len(tokens) == 1 and tokens[0].endswith(":"):
        return ""  # label
    if had_address:
        while tokens and _HEX_BYTE.match(tokens[0]):
            tokens = tokens[1:]
        if not tokens:
            return ""
    while tokens and (tokens[0] in _X86_PREFIXES or tokens[0].startswith("@")):
        tokens = tokens[1:]
    if not tokens:
        return None
    mnemonic = tokens[0].rstrip(";")
    if not _MNEMONIC.match(mnemonic):
        return None
    return mnemonic


def count_classes(
    listing: "TextIO | Iterable[str] | str",
    device: "Device | str",
    rules: ClassificationRules = DEFAULT_RULES,
) -> tuple[Counter, int]:
    """Raw per-class counts plus the number of unclassified instruction lines."""
    device = Device.parse(device)
    if isinstance(listing, str):
        listing = io.StringIO(listing)
    counts: Counter = Counter()
    unknown = 0
    for line in listing:
        mnemonic = _extract_mnemonic(line)
        if mnemonic == "":
            continue
        klass = None if mnemonic is None else classify_mnemonic(mnemonic, device, rules)
        if klass is None:
            unknown += 1
        else:
            counts[klass] += 1
    return counts, unknown


def parse_disassembly(
    listing: "TextIO | Iterable[str] | str",
    device: "Device | str",
    rules: ClassificationRules = DEFAULT_RULES,
) -> tuple[InstructionHistogram, int]:
    """Histogram of a text disassembly listing and the count of unknown mnemonics.

    Unknown mnemonics are left out of the normalization.
    """
    counts, unknown = count_classes(listing, device, rules)
    return build_histogram(counts), unknown
