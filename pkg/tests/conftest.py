import pytest

_VERDICTS: dict = {}


class Verdict:
    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.lines = []
        self.failed = False

    def check(self, ok, detail: str):
        """Record one measured fact; the criterion passes only if every check does."""
        ok = bool(ok)
        self.failed |= not ok
        self.lines.append(("ok " if ok else "BAD") + " " + detail)
        return ok

    def line(self) -> str:
        status = "FAIL" if self.failed or not self.lines else "PASS"
        facts = "; ".join(l[4:] for l in self.lines) or "did not finish"
        return f"criterion {self.number:>2} {status}  {self.title}: {facts}"


@pytest.fixture
def verdict(request):
    """Per-criterion recorder: ``verdict(n, title)`` returns a Verdict collected for the run summary."""
    made = []

    def make(number, title):
        v = Verdict(number, title)
        made.append(v)
        return v

    yield make
    report = getattr(request.node, "rep_call", None)
    for v in made:
        if report is None or not report.passed:
            v.failed = True
        _VERDICTS[v.number] = v
        print(v.line())


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call":
        item.rep_call = report


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[n].line())
