from pathlib import Path
from tempfile import mkdtemp

import pytest

from crystalfold.embed import build_embedding
from crystalfold.quotient import build_context
from crystalfold.registry import get_group


@pytest.fixture(scope="module")
def temp_dir():
    return Path(mkdtemp())


@pytest.fixture(scope="module")
def p1_ctx():
    return build_context(get_group("p1"))


@pytest.fixture(scope="module")
def p2_ctx():
    return build_context(get_group("p2"))


@pytest.fixture(scope="module")
def line_ctx():
    return build_context(get_group("line-p1"))


@pytest.fixture(scope="module")
def line_embedding(line_ctx):
    return build_embedding(line_ctx, 0.02)


@pytest.fixture(scope="module")
def p1_embedding(p1_ctx):
    return build_embedding(p1_ctx, 0.1)
