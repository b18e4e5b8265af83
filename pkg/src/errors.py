"""
Error taxonomy for the toolkit

Every failure raised on purpose is a D3RError carrying a machine-readable
error code, a message and a suggestion. The CLI maps them to stable exit
codes: 1 usage, 2 data/integrity, 3 runtime.
"""

from typing import Optional


class D3RError(Exception):
    """Base exception for all toolkit errors"""

    exit_code: int = 3

    def __init__(self, error_code: str, message: str, suggestion: Optional[str] = None):
        self.error_code = error_code
        self.message = message
        self.suggestion = suggestion
        super().__init__(message)


class UsageError(D3RError):
    """Invalid flags, presets or configuration values"""
    exit_code = 1


class ConfigurationError(D3RError):
    """Dataset root or category directory is missing"""
    exit_code = 2


class DataIntegrityError(D3RError):
    """Dataset contents violate the expected layout or image contract"""
    exit_code = 2


class CheckpointError(D3RError):
    """Checkpoint file is unreadable, truncated or from another format version"""
    exit_code = 2


class ModelError(D3RError):
    """Shape contract or forward/backward bookkeeping violated"""
    exit_code = 3


class UndefinedMetricError(D3RError):
    """Metric is mathematically undefined for the given input"""
    exit_code = 3


class TrainingError(D3RError):
    """Training cannot proceed"""
    exit_code = 3


_EXPLANATIONS = {
    "missing_directory": (
        "📁 Dataset directory not found\n\n"
        "The loader expects the MVTec AD layout:\n"
        "  <root>/<category>/train/good/*.png\n"
        "  <root>/<category>/test/<defect_type>/*.png\n"
        "  <root>/<category>/ground_truth/<defect_type>/<stem>_mask.png"
    ),
    "missing_mask": (
        "🩹 Defective test image without ground truth\n\n"
        "Every test image outside test/good needs a matching mask file."
    ),
    "empty_split": (
        "📭 Empty split\n\n"
        "Training needs defect-free images under train/good."
    ),
    "bad_magic": (
        "💾 Not a checkpoint\n\n"
        "The file does not start with the D3RCKPT magic string."
    ),
    "version_mismatch": (
        "💾 Checkpoint format version mismatch\n\n"
        "The file was written by an incompatible version of the toolkit."
    ),
    "truncated": (
        "💾 Truncated checkpoint\n\n"
        "The file ended before all tensors were read; no state was loaded."
    ),
    "single_class": (
        "⚖️ Metric undefined\n\n"
        "ROC AUC needs at least one positive and one negative sample."
    ),
}


def explain_error(err: D3RError) -> str:
    """
    Turns a toolkit error into a user-facing explanation

    Args:
        err: Raised toolkit error

    Returns:
        Explanation with the suggestion line appended when there is one
    """
    explanation = _EXPLANATIONS.get(err.error_code)
    if explanation is None:
        explanation = f"❌ {err.message}"
    else:
        explanation = f"{explanation}\n\nDetails: {err.message}"

    if err.suggestion:
        explanation += f"\n\n💡 {err.suggestion}"
    return explanation
