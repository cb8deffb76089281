"""Shared pass/fail record for the acceptance suite (printed by conftest)."""

RESULTS: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    # A criterion split over several tests passes only if every part does.
    prev_ok, prev_detail = RESULTS.get(n, (True, ""))
    RESULTS[n] = (prev_ok and bool(ok), f"{prev_detail}; {detail}" if prev_detail else detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
