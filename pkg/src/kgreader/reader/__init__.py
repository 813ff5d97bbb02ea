from .batching import Batch, Preprocessor, PreparedExample, collate
from .config import ABLATIONS, ReaderConfig
from .gnn import GraphBatch, extract_node_attrs, fuse, gnn_layer, run_gnn
from .model import ContractError, EncoderStates, Reader, init_params
from .retrieval import score_passage, top_k

__all__ = [
    "ABLATIONS", "Batch", "ContractError", "EncoderStates", "GraphBatch", "Preprocessor", "PreparedExample",
    "Reader", "ReaderConfig", "collate", "extract_node_attrs", "fuse", "gnn_layer", "init_params",
    "run_gnn", "score_passage", "top_k",
]
