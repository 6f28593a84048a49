"""Shared record of acceptance outcomes, printed in the pytest terminal summary."""

import functools
import time

RESULTS: dict = {}


def criterion(number: int, title: str, budget_s: float | None = None):
    """Record ``PASS``/``FAIL`` for one criterion and enforce its runtime budget."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            detail = ""
            try:
                detail = fn(*args, **kwargs) or ""
                elapsed = time.perf_counter() - t0
                if budget_s is not None:
                    assert elapsed < budget_s, f"runtime {elapsed:.1f} s exceeds {budget_s:g} s"
            except BaseException as exc:
                line = f"FAIL  {number:2d}. {title}: {exc}".splitlines()[0]
                RESULTS[number] = line
                print(line)
                raise
            line = f"PASS  {number:2d}. {title} ({elapsed:.2f} s) {detail}".rstrip()
            RESULTS[number] = line
            print(line)

        return run

    return wrap
