"""semdtm: machine-checkable semantic contracts for chained array
transformations, with fault-injection campaigns and design-diversity
ensembles to quantify what the contracts catch."""

from .arrays import (
    Discrepancy,
    GridParseError,
    NdArray,
    compare,
    load_text,
    parse_csv,
    parse_grid,
    render_grid,
)
from .chain import (
    ChainResult,
    ChainSpec,
    ChainValidationError,
    Diagnostic,
    PipelineError,
    ProvenanceRecord,
    Stage,
    execute_chain,
    export_report,
    load_pipeline,
    load_sources,
    run_chain,
    validate_chain,
)
from .constraints import (
    ConstraintCheckError,
    ConstraintExpr,
    ConstraintParseError,
    PredicateAtom,
    Violation,
    check,
    list_predicates,
    parse_constraints,
    render_constraints,
)
from .ensemble import (
    EnsembleReport,
    VariantSet,
    list_variant_sets,
    make_variant_set,
    run_ensemble,
)
from .faults import (
    FAULT_KINDS,
    CampaignReport,
    FaultSpec,
    TrialRecord,
    inject,
    run_campaign,
    summarize,
)
from .modules import (
    CheckOutcome,
    DtmModule,
    contract_text,
    make_module,
    run_checked,
    run_raw,
)
from .transforms import TransformError, transform_names

__version__ = "0.1.0"
