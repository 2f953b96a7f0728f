import pytest

from srqr.certify import run_criterion


@pytest.mark.parametrize("i", range(1, 11))
def test_criterion(i, capsys):
    result = run_criterion(i)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.line()
