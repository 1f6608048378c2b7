from .evaluate import EvaluationError, evaluate
from .parser import (
    ConstDecl,
    DatatypeDecl,
    Declaration,
    Env,
    Script,
    is_identifier,
    parse_script,
    parse_term,
    print_declaration,
    print_script,
)
from .terms import (
    BOOL,
    FALSE,
    INT,
    REAL,
    TRUE,
    And,
    App,
    BoolLit,
    Constructor,
    Implies,
    IntLit,
    Not,
    Or,
    RealLit,
    Sort,
    Term,
    Value,
    Var,
    conj,
    constructors_used,
    datatype_sort,
    format_decimal,
    format_value,
    free_vars,
    iter_subterms,
    node_count,
    print_term,
    rename,
    value_term,
)

__all__ = [name for name in dir() if not name.startswith("_")]
