"""strandbench: a verification workbench for strand-space protocol runs,
skeletons, shape analysis sentences, security goals, and stateful
protocol annotations."""

from .terms import (
    AConst,
    DConst,
    Enc,
    Pair,
    SConst,
    Sort,
    SortError,
    Substitution,
    Tag,
    Term,
    Var,
    carried_by,
    invert_key,
    is_atom,
    is_ground,
    match,
    sort_of,
)
from .strands import (
    Event,
    Node,
    StrandSpace,
    Trace,
    evt,
    non_originating,
    originates_at,
    recv,
    send,
    uniquely_originates,
)
from .roles import (
    BOTTOM,
    Lifted,
    Protocol,
    RoleItem,
    RoleTemplate,
    Up,
    adversary_roles,
    htin,
    inst,
    listener_role,
)
from .bundles import (
    Bundle,
    NotARunError,
    RoleAssignment,
    check_run,
    precedes,
    validate_bundle,
)
from .skeletons import (
    HomWitness,
    Instance,
    Skeleton,
    compose,
    origination_node,
    verify_hom,
    verify_hom_to_bundle,
)
from .formulas import (
    Assignment,
    Goal,
    ShapeSentence,
    SkeletonFormula,
    build_shape_sentence,
    entail,
    eval_goal,
    eval_sentence,
    eval_sigma,
    satisfy,
    skeleton_formula,
)
from .statemodel import (
    CheckBox,
    CompatibilityWitness,
    Incompatible,
    NewCard,
    StateModel,
    acp_protocol,
    annotated_nodes,
    annotations_of,
    check_compatibility,
    check_or_issue,
    find_bridge_witness,
)

__all__ = [name for name in dir() if not name.startswith("_")]
