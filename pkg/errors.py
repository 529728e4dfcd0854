"""
Exception hierarchy shared by every EvoStruct module.

The CLI maps configuration/manifest problems to exit code 2 and every other
EvoStructError to exit code 1.
"""

from __future__ import annotations


class EvoStructError(Exception):
    """Base class for all pipeline errors."""


# --- Structure ingestion -----------------------------------------------------

class StructureError(EvoStructError):
    pass


class MissingChain(StructureError):
    def __init__(self, chain_id: str, path: str = ""):
        self.chain_id = chain_id
        self.path = path
        super().__init__(f"chain {chain_id!r} not found in {path or 'structure'}")


class MalformedRecord(StructureError):
    def __init__(self, line_no: int, reason: str, path: str = ""):
        self.line_no = line_no
        self.reason = reason
        self.path = path
        super().__init__(f"{path or 'structure'}:{line_no}: {reason}")


class EmptyCDR(StructureError):
    def __init__(self, cdr: str, detail: str = ""):
        self.cdr = cdr
        msg = f"CDR {cdr} is empty"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class ManifestError(EvoStructError):
    pass


# --- Geometry / numerics -----------------------------------------------------

class GeometryError(EvoStructError):
    pass


class DegenerateFrame(GeometryError):
    pass


class ShapeMismatch(EvoStructError):
    def __init__(self, op: str, detail: str = ""):
        self.op = op
        super().__init__(f"shape mismatch in {op}: {detail}")


class NonFiniteGradient(EvoStructError):
    def __init__(self, names: list[str]):
        self.names = names
        super().__init__(f"non-finite gradient in {', '.join(names)}")


class NonFiniteActivation(EvoStructError):
    def __init__(self, layer: int):
        self.layer = layer
        super().__init__(f"non-finite activation after encoder layer {layer}")


class OutOfRange(EvoStructError):
    pass


# --- Language model backend --------------------------------------------------

class UnknownToken(EvoStructError):
    def __init__(self, token: str, position: int):
        self.token = token
        self.position = position
        super().__init__(f"unknown token {token!r} at position {position}")


class CacheMiss(EvoStructError):
    pass


# --- Training / evaluation ---------------------------------------------------

class LabelOutOfRange(EvoStructError):
    pass


class EmptyDataset(EvoStructError):
    pass


class NoContacts(EvoStructError):
    pass


class ConfigError(EvoStructError):
    def __init__(self, message: str, path: str = "", field: str = ""):
        self.path = path
        self.field = field
        where = ":".join(p for p in (path, field) if p)
        super().__init__(f"{where}: {message}" if where else message)


class ConfigHashMismatch(EvoStructError):
    pass


class PredictionFormatError(EvoStructError):
    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"{path}: {reason}")
