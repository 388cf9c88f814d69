import pytest

from cadrl.corpus import TaskSpec, derive_nl_prompt, derive_struct_prompt, split_for
from cadrl.lang import parse_source


def make_task(source: str, task_id: str = "t-000000") -> TaskSpec:
    program = parse_source(source)
    return TaskSpec(task_id, derive_nl_prompt(program, 0), derive_struct_prompt(program),
                    program.to_source(), len(program.features), split_for(task_id))


@pytest.fixture
def box_task():
    return make_task("PLANE XY RECT 2.0 1.0 EXTRUDE 1.0")


# One summary line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
