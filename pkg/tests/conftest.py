def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance-criterion result lines after the test summary."""
    try:
        from test_acceptance import CRITERIA
    except ImportError:
        return
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
