"""Shared record of acceptance outcomes, printed at the end of the session."""

RESULTS = []


def record(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok
