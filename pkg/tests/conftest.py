import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}

RESULTS_LOG = Path(__file__).resolve().parent.parent / "acceptance_results.json"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {k}: {detail}")
    passed = sum(ok for ok, _ in ACCEPTANCE.values())
    terminalreporter.write_line(f"{passed}/{len(ACCEPTANCE)} criteria passed")
    payload = {str(k): {"passed": ok, "detail": d} for k, (ok, d) in sorted(ACCEPTANCE.items())}
    RESULTS_LOG.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
