"""Acceptance run: every named recipe at its default (full) settings.

Each test records one ``CRITERION k: PASS/FAIL`` line, printed together at the
end of the session.
"""

import pytest

from conftest import ACCEPTANCE_LINES
from lerwlab.config import default_config
from lerwlab.experiments import EXPERIMENTS, all_passed, run_experiment

ORDER = sorted(EXPERIMENTS.values(), key=lambda e: e.criterion)


def _describe(records):
    checks = [r for r in records if r.passed is not None]
    failed = [r for r in checks if not r.passed]
    worst = failed[0] if failed else None
    text = f"{len(checks) - len(failed)}/{len(checks)} checks"
    if worst is not None:
        err = f" +- {worst.std_error:.3g}" if worst.std_error is not None else ""
        text += f"; first failure {worst.method} = {worst.value:.6g}{err}"
    return text


@pytest.mark.slow
@pytest.mark.parametrize("exp", ORDER, ids=[f"{e.criterion:02d}-{e.name}" for e in ORDER])
def test_criterion(exp):
    records = run_experiment(default_config(exp.name, seed=1))
    ok = all_passed(records)
    verdict = "PASS" if ok else "FAIL"
    line = f"CRITERION {exp.criterion}: {verdict} {exp.name} ({_describe(records)})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
