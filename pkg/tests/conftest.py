import helpers


def pytest_terminal_summary(terminalreporter):
    if not helpers.ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(helpers.ACCEPTANCE):
        terminalreporter.write_line(helpers.ACCEPTANCE[num])
