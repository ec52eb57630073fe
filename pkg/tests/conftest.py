import numpy as np
import pytest

from basketrec.corpus import Basket, TransactionLog, Vocabulary


@pytest.fixture
def write_csv(tmp_path):
    def _write(rows, name="baskets.csv", header="user_id,basket_id,item_id"):
        path = tmp_path / name
        path.write_text("\n".join([header, *(",".join(r) for r in rows)]) + "\n", encoding="utf-8")
        return path

    return _write


def make_log(baskets, n_users=None, n_items=None):
    """TransactionLog from ``[(user, items), ...]`` with dense ids used as external ids."""
    n_users = n_users if n_users is not None else max(u for u, _ in baskets) + 1
    n_items = n_items if n_items is not None else max(max(i) for _, i in baskets) + 1
    vocab = Vocabulary([f"u{u}" for u in range(n_users)], [f"i{i}" for i in range(n_items)])
    return TransactionLog([Basket(u, f"b{k}", tuple(items)) for k, (u, items) in enumerate(baskets)], vocab)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed once at the end of the run
VERDICTS: list[tuple[int, str, bool, str]] = []


def record_verdict(number: int, name: str, passed: bool, detail: str) -> None:
    VERDICTS.append((number, name, bool(passed), detail))
    assert passed, f"criterion {number} ({name}) failed: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(VERDICTS):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {name}: {detail}")
