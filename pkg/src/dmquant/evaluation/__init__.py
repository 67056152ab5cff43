"""Hold-out protocol, error metrics and report emission."""

from .metrics import (DEFAULT_MAPE_FLOOR, DEFAULT_T_THRESHOLD, TTestResult, aggregate, mape,
                      quantile_boxes, rmse, t_matrix, t_test)
from .protocol import (BASELINES, DEFAULT_GRIDS, DEFAULT_TESTS, FNN_VARIANTS, MODEL_ORDER,
                       EvaluationReport, ProtocolSettings, TestPlan, default_plan, run_protocol,
                       validate_plan)
from .report import emit_report

__all__ = [
    "BASELINES", "DEFAULT_GRIDS", "DEFAULT_MAPE_FLOOR", "DEFAULT_TESTS", "DEFAULT_T_THRESHOLD",
    "EvaluationReport", "FNN_VARIANTS", "MODEL_ORDER", "ProtocolSettings", "TTestResult",
    "TestPlan", "aggregate", "default_plan", "emit_report", "mape", "quantile_boxes", "rmse",
    "run_protocol", "t_matrix", "t_test", "validate_plan",
]
