"""One pass/fail line per acceptance criterion."""

RESULTS = {}


def report(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)
    print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return bool(ok)
