"""Masked-LM scorer server speaking the clozetag wire protocol.

Two backends: a pinned-semantics stub for protocol conformance testing
(no model weights needed) and a transformers-backed masked LM for real
runs.  See protocol/PROTOCOL.md at the repository root for the wire
contract this package implements.
"""

__version__ = "0.1.0"
