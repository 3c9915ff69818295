"""Benchmark configuration: INI-style file with flat sections, flags on top.

Grammar (every key optional; lists are comma separated)::

    [topology]
    nodes = 1,2,4,8
    gpus_per_node = 4

    [params]
    alpha_intra_us = 0.5
    alpha_inter_us = 2
    beta_intra = inf            # bytes per second
    beta_inter = 25e9
    eta = 2

    [run]
    algorithms = ring,tree,nvrar
    msg_bytes = 64KiB,128KiB,1MiB
    blocks = 1,2,4
    chunk_bytes = auto,4096     # auto: one chunk per block
    bc_pairs = 32:32768,8:16384 # explicit (B, C) cells, replaces blocks x chunk_bytes
    iters = 10
    warmup = 2
    transport = virtual         # or concurrent
    seed = 0
    max_delay_us = 0
    timeout_s = 5
    dtype = int32
    baseline = ring

    [workload]
    batch_size = 8
    hidden_dim = 8192
    dtype = bf16
    num_layers = 80
    gemm_k = 57344              # default 7 * hidden_dim

    [gemm]
    tile_m = 128
    tile_n = 128
    tile_cost_ns = 0            # seconds per tile per unit of K, in ns

Sizes accept B, KB/KiB, MB/MiB, GB/GiB suffixes; KB and KiB both mean 1024.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import List, Optional, Tuple

from ..costmodel import CostParams, exact
from ..errors import InvalidArgument
from ..workload import BYTES_PER_ELEMENT

_SIZE_RE = re.compile(r"^\s*(\d+)\s*([KMG]?)(i?)B?\s*$", re.IGNORECASE)
_UNITS = {"": 1, "K": 1024, "M": 1024**2, "G": 1024**3}


def parse_size(text) -> int:
    if isinstance(text, int):
        return text
    m = _SIZE_RE.match(str(text))
    if not m:
        raise InvalidArgument(f"cannot parse size {text!r}")
    return int(m.group(1)) * _UNITS[m.group(2).upper()]


def parse_list(text, convert=str) -> list:
    if isinstance(text, (list, tuple)):
        return [convert(x) for x in text]
    return [convert(x.strip()) for x in str(text).split(",") if x.strip()]


def _int(text) -> int:
    try:
        return int(str(text).strip())
    except ValueError:
        raise InvalidArgument(f"expected an integer, got {text!r}") from None


def _chunk(text) -> Optional[int]:
    text = str(text).strip()
    return None if text.lower() in ("auto", "none", "") else parse_size(text)


def _pair(text) -> Tuple[int, Optional[int]]:
    try:
        b, c = str(text).split(":")
    except ValueError:
        raise InvalidArgument(f"bc pair must look like B:C, got {text!r}") from None
    return _int(b), _chunk(c)


def _bandwidth(text):
    text = str(text).strip()
    if text.lower() in ("inf", "infinity"):
        return math.inf
    try:
        return Fraction(text)
    except ValueError:
        raise InvalidArgument(f"cannot parse bandwidth {text!r}") from None


@dataclass
class BenchSpec:
    nodes: List[int] = field(default_factory=lambda: [1])
    gpus_per_node: int = 1
    alpha_intra_us: str = "0.5"
    alpha_inter_us: str = "2"
    beta_intra: object = math.inf
    beta_inter: object = math.inf
    eta: str = "2"
    algorithms: List[str] = field(default_factory=lambda: ["ring", "tree", "nvrar"])
    msg_bytes: List[int] = field(default_factory=lambda: [128 * 1024])
    blocks: List[int] = field(default_factory=lambda: [1])
    chunk_bytes: List[Optional[int]] = field(default_factory=lambda: [None])
    bc_pairs: List[Tuple[int, Optional[int]]] = field(default_factory=list)
    iters: int = 10
    warmup: int = 2
    transport: str = "virtual"
    seed: int = 0
    max_delay_us: str = "0"
    timeout_s: float = 5.0
    dtype: str = "int32"
    baseline: str = "ring"
    batch_size: int = 8
    hidden_dim: int = 8192
    elem: str = "bf16"
    num_layers: int = 1
    gemm_k: Optional[int] = None
    tile_m: int = 128
    tile_n: int = 128
    tile_cost_ns: str = "0"

    def cost_params(self) -> CostParams:
        return CostParams.from_microseconds(exact(self.alpha_intra_us), exact(self.alpha_inter_us),
                                            self.beta_intra, self.beta_inter, exact(self.eta))

    def bc_grid(self) -> List[Tuple[int, Optional[int]]]:
        if self.bc_pairs:
            return list(self.bc_pairs)
        return [(b, c) for b in self.blocks for c in self.chunk_bytes]

    def validate(self) -> "BenchSpec":
        self.cost_params()
        for alg in self.algorithms:
            if alg not in ("ring", "tree", "nvrar"):
                raise InvalidArgument(f"unknown algorithm {alg!r}")
        if self.baseline not in ("ring", "tree", "nvrar"):
            raise InvalidArgument(f"unknown baseline {self.baseline!r}")
        if self.transport not in ("virtual", "concurrent"):
            raise InvalidArgument(f"transport must be virtual or concurrent, got {self.transport!r}")
        if self.iters < 1 or self.warmup < 0:
            raise InvalidArgument("iters must be >= 1 and warmup >= 0")
        if self.dtype not in ("int32", "float32"):
            raise InvalidArgument(f"dtype must be int32 or float32, got {self.dtype!r}")
        if self.elem not in BYTES_PER_ELEMENT:
            raise InvalidArgument(f"workload dtype must be one of {sorted(BYTES_PER_ELEMENT)}")
        for m in self.msg_bytes:
            if m < 0 or m % 4:
                raise InvalidArgument(f"message size must be a non-negative multiple of 4, got {m}")
        if not self.nodes or any(n < 1 for n in self.nodes) or self.gpus_per_node < 1:
            raise InvalidArgument("node counts and gpus_per_node must be >= 1")
        return self


# (section, key) -> (BenchSpec attribute, converter)
_KEYS = {
    ("topology", "nodes"): ("nodes", lambda v: parse_list(v, _int)),
    ("topology", "gpus_per_node"): ("gpus_per_node", _int),
    ("params", "alpha_intra_us"): ("alpha_intra_us", str),
    ("params", "alpha_inter_us"): ("alpha_inter_us", str),
    ("params", "beta_intra"): ("beta_intra", _bandwidth),
    ("params", "beta_inter"): ("beta_inter", _bandwidth),
    ("params", "eta"): ("eta", str),
    ("run", "algorithms"): ("algorithms", parse_list),
    ("run", "msg_bytes"): ("msg_bytes", lambda v: parse_list(v, parse_size)),
    ("run", "blocks"): ("blocks", lambda v: parse_list(v, _int)),
    ("run", "chunk_bytes"): ("chunk_bytes", lambda v: parse_list(v, _chunk)),
    ("run", "bc_pairs"): ("bc_pairs", lambda v: parse_list(v, _pair)),
    ("run", "iters"): ("iters", _int),
    ("run", "warmup"): ("warmup", _int),
    ("run", "transport"): ("transport", str),
    ("run", "seed"): ("seed", _int),
    ("run", "max_delay_us"): ("max_delay_us", str),
    ("run", "timeout_s"): ("timeout_s", float),
    ("run", "dtype"): ("dtype", str),
    ("run", "baseline"): ("baseline", str),
    ("workload", "batch_size"): ("batch_size", _int),
    ("workload", "hidden_dim"): ("hidden_dim", _int),
    ("workload", "dtype"): ("elem", str),
    ("workload", "num_layers"): ("num_layers", _int),
    ("workload", "gemm_k"): ("gemm_k", _int),
    ("gemm", "tile_m"): ("tile_m", _int),
    ("gemm", "tile_n"): ("tile_n", _int),
    ("gemm", "tile_cost_ns"): ("tile_cost_ns", str),
}

# flag dest -> converter, applied when the flag was given
FLAG_CONVERTERS = {attr: conv for (attr, conv) in _KEYS.values()}


def load_config(path) -> dict:
    """Read a config file into BenchSpec keyword overrides."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        parser.read_file(fh)
    overrides = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            try:
                attr, conv = _KEYS[(section, key)]
            except KeyError:
                raise InvalidArgument(f"unknown config key [{section}] {key}") from None
            overrides[attr] = conv(value)
    return overrides


def build_spec(config_path=None, flags: dict = None) -> BenchSpec:
    """Defaults, then the config file, then explicit flags (flags win)."""
    values = {}
    if config_path is not None:
        values.update(load_config(config_path))
    for attr, raw in (flags or {}).items():
        if raw is not None:
            values[attr] = FLAG_CONVERTERS.get(attr, lambda v: v)(raw)
    return replace(BenchSpec(), **values).validate()
