"""Machine description for the simulator (a scaled-down Hopper-like SM)."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

from ..errors import ConfigError

REF_ELEMS = 64          # latencies are quoted per 8x8 reference tile


@dataclass(frozen=True)
class MachineConfig:
    tma_latency_per_tile: int = 400
    tma_engine_count: int = 4
    mma_latency_per_tile: int = 128
    cuda_op_latency: int = 32
    store_latency_per_tile: int = 200
    smem_bytes: int = 4096
    regs_per_wg: int = 384
    reg_overhead: int = 64
    num_sms: int = 4
    cta_launch_overhead: int = 1000
    warp_group_size: int = 4

    def __post_init__(self):
        for f in ("tma_latency_per_tile", "mma_latency_per_tile", "cuda_op_latency",
                  "store_latency_per_tile", "tma_engine_count", "num_sms"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be >= 1, got {getattr(self, f)}")
        if self.smem_bytes <= 0:
            raise ConfigError("smem_bytes must be positive")
        if self.regs_per_wg <= 0:
            raise ConfigError("regs_per_wg must be positive")
        if self.cta_launch_overhead < 0 or self.reg_overhead < 0:
            raise ConfigError("overheads must be non-negative")
        if self.warp_group_size != 4:
            raise ConfigError("a warp group is 4 warps")

    def scaled(self, per_tile, elems):
        return max(1, -(-per_tile * elems // REF_ELEMS))

    def tma_cycles(self, elems):
        return self.scaled(self.tma_latency_per_tile, elems)

    def mma_cycles(self, m, n, k):
        # reference MMA is 8x8x8
        return max(1, -(-self.mma_latency_per_tile * m * n * k // (REF_ELEMS * 8)))

    def cuda_cycles(self, elems):
        return self.scaled(self.cuda_op_latency, elems)

    def store_cycles(self, elems):
        return self.scaled(self.store_latency_per_tile, elems)

    def with_overrides(self, **kw):
        return replace(self, **kw)


def parse_machine(text: str) -> MachineConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    known = {f.name for f in fields(MachineConfig)}
    kw = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {no}: expected key = value")
        if key not in known:
            raise ConfigError(f"line {no}: unknown key {key!r}")
        try:
            kw[key] = int(val.strip())
        except ValueError:
            raise ConfigError(f"line {no}: {key} must be an integer, got {val.strip()!r}") from None
    return MachineConfig(**kw)


def load_machine(path) -> MachineConfig:
    with open(path) as f:
        return parse_machine(f.read())


def format_machine(mc: MachineConfig) -> str:
    return "".join(f"{f.name} = {getattr(mc, f.name)}\n" for f in fields(mc))
