"""Networked human-evaluation service: batches, gates, storage, HTTP API."""

from .batches import (AnnotationCoordinator, AnnotatorFlag, Batch, BatchItem,
                      GateResult, NleSlot, ServiceError, assemble_batches,
                      batch_from_dict, batch_to_dict, check_gates, export,
                      flag_annotators, join_predictions,
                      mark_for_reannotation, read_batches, write_batches)
from .server import AnnotationHTTPServer, start_server
from .store import AppendLog, StoreError

__all__ = [
    "AnnotationHTTPServer",
    "start_server",
    "AnnotationCoordinator",
    "AnnotatorFlag",
    "AppendLog",
    "Batch",
    "BatchItem",
    "GateResult",
    "NleSlot",
    "ServiceError",
    "StoreError",
    "assemble_batches",
    "batch_from_dict",
    "batch_to_dict",
    "check_gates",
    "export",
    "flag_annotators",
    "join_predictions",
    "mark_for_reannotation",
    "read_batches",
    "write_batches",
]
