"""Synthetic block-stack definitions and the built-in architecture catalog.

Two block families are supported, each a repeatable unit with a closed-form
trainable-parameter count:

* ``conv``: Conv2d(3x3, C -> C, bias) -> BatchNorm2d(affine) -> ReLU.
  Parameters per block: 9*C^2 + C (conv) + 2*C (batchnorm) = 9*C^2 + 3*C.
* ``mha``: packed QKV projection (d -> 3d, bias) -> multi-head attention
  -> output projection (d -> d, bias) -> residual add -> LayerNorm -> ReLU.
  Parameters per block: (3*d^2 + 3*d) + (d^2 + d) = 4*d^2 + 4*d.
  The LayerNorm in the op sequence carries no learnable affine, so it
  contributes nothing to the count.

Stacks repeat one block ``depth`` times; every block keeps the full width,
so the stack count is exactly ``depth`` times the per-block count.

Fixed stack hyperparameters: conv stacks consume 3x244x244 input (a plan may
override the input shape), mha stacks consume sequences of length 10 at the
embedding width.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

BLOCK_KINDS = ("conv", "mha")

# Fixed hyperparameters for realized stacks.
CONV_KERNEL = 3
CONV_DEFAULT_INPUT = (3, 244, 244)
MHA_SEQ_LEN = 10


class UnknownModelError(KeyError):
    """Raised when a catalog lookup names an architecture we do not ship."""


@dataclass(frozen=True)
class BlockStackSpec:
    """A homogeneous stack of ``depth`` blocks of one kind at one width."""

    kind: str
    width: int
    depth: int

    def __post_init__(self) -> None:
        if self.kind not in BLOCK_KINDS:
            raise ValueError(f"unknown block kind {self.kind!r}; expected one of {BLOCK_KINDS}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")

    @property
    def key(self) -> str:
        """Stable human-readable identifier, e.g. ``block:conv:w64:d6``."""
        return f"block:{self.kind}:w{self.width}:d{self.depth}"


@dataclass(frozen=True)
class CatalogEntry:
    """One published off-the-shelf architecture."""

    name: str
    style: str  # Convolutional | Transformer | Hybrid
    params: int
    macs: int


def conv_block_params(width: int) -> int:
    """Trainable parameters of one conv block at channel width ``width``."""
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    return 9 * width * width + 3 * width


def mha_block_params(width: int) -> int:
    """Trainable parameters of one attention block at embedding width ``width``."""
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    return 4 * width * width + 4 * width


def block_params(kind: str, width: int) -> int:
    if kind == "conv":
        return conv_block_params(width)
    if kind == "mha":
        return mha_block_params(width)
    raise ValueError(f"unknown block kind {kind!r}; expected one of {BLOCK_KINDS}")


def stack_params(spec: BlockStackSpec) -> int:
    """Trainable parameters of a whole stack: depth times the per-block count."""
    return spec.depth * block_params(spec.kind, spec.width)


def _load_catalog() -> dict[str, CatalogEntry]:
    text = resources.files(__package__).joinpath("data/catalog.csv").read_text(encoding="utf-8")
    entries: dict[str, CatalogEntry] = {}
    for row in csv.DictReader(text.splitlines()):
        entry = CatalogEntry(
            name=row["name"],
            style=row["style"],
            params=int(row["params"]),
            macs=int(row["macs"]),
        )
        entries[entry.name] = entry
    return entries


CATALOG: dict[str, CatalogEntry] = _load_catalog()


def catalog_lookup(name: str) -> CatalogEntry:
    """Return the catalog entry for ``name``.

    Raises UnknownModelError for names outside the shipped catalog.
    """
    try:
        return CATALOG[name]
    except KeyError:
        raise UnknownModelError(name) from None


def catalog_names() -> tuple[str, ...]:
    return tuple(CATALOG)
