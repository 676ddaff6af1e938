"""Cell-grounded verification toolkit for multi-step table reasoning."""

from .engine import ToolCall, TableState, execute, state_hash
from .plan import Plan, PlanStep, TargetRef, compile_mask, parse_plan
from .table import AttentionStandard, CellMask, MaskSource, SpanIndex, Table, parse_table, serialize
from .verifier import CalibrationParams, CellAttention, fit_calibration, r_attn

__all__ = [
    "AttentionStandard", "CalibrationParams", "CellAttention", "CellMask", "MaskSource", "Plan",
    "PlanStep", "SpanIndex", "Table", "TableState", "TargetRef", "ToolCall", "compile_mask",
    "execute", "fit_calibration", "parse_plan", "parse_table", "r_attn", "serialize", "state_hash",
]
__version__ = "0.1.0"
