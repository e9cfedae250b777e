"""Hypothesis strategies for payoff ASTs."""

from hypothesis import strategies as st

from gexp.payoff import Binary, Const, Extremum, PayoffExpr, Pow, Unary, Var


def nodes(arity: int = 1, max_leaves: int = 8, max_const: float = 3.0, allow_exp: bool = False):
    leaves = st.one_of(
        st.builds(Const, st.floats(0, max_const, allow_nan=False, allow_infinity=False)),
        st.builds(Var, st.integers(1, arity)),
    )

    def extend(children):
        ops = [
            st.builds(Unary, st.sampled_from(["neg", "abs"] + (["exp"] if allow_exp else [])), children),
            st.builds(Binary, st.sampled_from(["+", "-", "*"]), children, children),
            st.builds(Pow, children, st.integers(0, 2)),
            st.builds(Extremum, st.sampled_from(["min", "max"]), st.lists(children, min_size=2, max_size=3).map(tuple)),
        ]
        return st.one_of(*ops)

    return st.recursive(leaves, extend, max_leaves=max_leaves)


def payoffs(arity: int = 1, **kw):
    return nodes(arity, **kw).map(lambda n: PayoffExpr(n, arity))
