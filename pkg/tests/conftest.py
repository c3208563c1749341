import pytest

from lemmaforge.kernel import Fact, FactEnv, ORIGIN_AXIOM, parse_statement


def axiom(text: str):
    return parse_statement(text, keywords=("axiom",))


@pytest.fixture(scope="session")
def arith_env() -> FactEnv:
    """add over successor naturals: the two-axiom toy environment."""
    return FactEnv(
        [
            Fact(ORIGIN_AXIOM, axiom("axiom add_Z: add(0, y) = y")),
            Fact(ORIGIN_AXIOM, axiom("axiom add_S: add(S(x), y) = S(add(x, y))")),
        ]
    )


@pytest.fixture(scope="session")
def small_corpus():
    from lemmaforge.synth import GenParams, generate_synthetic_corpus

    return generate_synthetic_corpus(7, GenParams(files=4, statements_per_file=8))
