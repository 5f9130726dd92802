"""Chain-of-thought faithfulness toolkit: python surface of the C++ core."""

from cotfaith._core import (
    AgreementReport,
    CotfaithError,
    EffectEstimate,
    Example,
    HintKind,
    HintSpec,
    HintedPrompt,
    LensParams,
    LrGridPoint,
    SampleTally,
    agreement,
    bca_interval,
    classify_pattern,
    efficacy,
    faithful_at_k,
    faithful_at_k_curve,
    faithful_at_k_rational,
    lens_decode,
    lexical_match,
    load_corpus,
    make_hint,
    percentile_interval,
    render_prompt,
    segment_steps,
    select_learning_rate,
    table_counts,
)

__all__ = [
    "AgreementReport",
    "CotfaithError",
    "EffectEstimate",
    "Example",
    "HintKind",
    "HintSpec",
    "HintedPrompt",
    "LensParams",
    "LrGridPoint",
    "SampleTally",
    "agreement",
    "bca_interval",
    "classify_pattern",
    "efficacy",
    "faithful_at_k",
    "faithful_at_k_curve",
    "faithful_at_k_rational",
    "lens_decode",
    "lexical_match",
    "load_corpus",
    "make_hint",
    "percentile_interval",
    "render_prompt",
    "segment_steps",
    "select_learning_rate",
    "table_counts",
]
