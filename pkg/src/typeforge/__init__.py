"""typeforge: precise Python type-error detection via constraint-guided,
LLM-driven unit test generation with reflective false-positive filtering."""

from .analysis import (
    AnalysisStepRecord,
    ChainAnalysis,
    RiskAssessment,
    analyze_chain,
    assess_risk,
    infer_focal_constraints,
    propagate_step,
    select_constraints,
)
from .constraints import (
    ChainConstraints,
    FieldSpec,
    MethodConstraint,
    ParamConstraint,
    magic_method_vocabulary,
    parse_constraint,
    serialize_constraint,
    validate_against_signature,
)
from .evaluation import (
    FocalPair,
    MetricsReport,
    OutcomeLabel,
    compute_metrics,
    emit_report,
    label_buggy_pair,
    label_nonbuggy,
)
from .gateway import Cassette, ChatTurn, Conversation, LLMGateway, ModelConfig, request_digest
from .harness import OutcomeKind, RunResult, TestOutcome, classify_outcome, dispatch, execute
from .pipeline import DetectReport, MethodRecord, RunConfig, detect_method, detect_project
from .project_model import (
    CallGraph,
    FunctionRef,
    InvocationChain,
    SourceIndex,
    build_call_graph,
    extract_chains,
    find_entry_points,
    index_project,
    sample_representative_chain,
)
from .reflection import (
    FewShotAsset,
    FinalVerdict,
    ReflectionVerdict,
    check_semantic_validity,
    check_type_consistency,
    meta_evaluate,
    refine,
)
from .testgen import (
    GeneratedTest,
    IntraFileContext,
    assemble_memory,
    collect_intra_file_context,
    generate_test,
    self_debug,
    strip_assertions,
    summarize_method,
)

__version__ = "0.1.0"
