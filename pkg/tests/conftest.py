"""Collects the acceptance suite's one-line verdicts and prints them after the run."""

VERDICTS: list[str] = []


def record_verdict(number: int, title: str, passed: bool, detail: str) -> None:
    VERDICTS.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})")
    print(VERDICTS[-1])


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
