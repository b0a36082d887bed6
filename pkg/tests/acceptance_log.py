"""Shared record of acceptance outcomes, printed by the terminal-summary hook."""

LINES: list[str] = []


def record(number: int, title: str, passed: bool, detail: str) -> str:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    LINES.append(line)
    print(line)
    return line
