"""
Tests to verify that the examples in the README run, and that every
command line shown there is accepted by the parser.
"""

import concurrent.futures
import re
import shlex
import sys
import traceback
import types
from pathlib import Path

import pytest

from rifl import cli
from rifl.caching import clear_cache_dir

README = Path(__file__).parent.absolute() / "../README.md"


def extract_code_blocks(file, language="python"):
    content = Path(file).read_text(encoding="utf-8")
    pattern = re.compile(
        rf"(<!-- skip ?test -->\s*)?```{language}\r?\n(.*?)```",
        re.DOTALL,
    )
    return [code for skip, code in pattern.findall(content) if not skip]


def extract_cli_lines(file):
    return [
        line.strip()
        for block in extract_code_blocks(file, "bash")
        for line in block.splitlines()
        if line.strip().startswith("rifl ")
    ]


def run_code(code):
    dynamic_module = types.ModuleType("dynamic_module")
    try:
        exec(code, dynamic_module.__dict__)
        return None
    except Exception:
        return sys.exc_info()


@pytest.mark.parametrize("code", extract_code_blocks(README))
def test_readme_code(code):
    clear_cache_dir()
    print("### CODE BLOCK")
    print(code)
    print("### OUTPUT")

    with concurrent.futures.ThreadPoolExecutor() as executor:
        future = executor.submit(run_code, code)
        try:
            result = future.result(timeout=300)
        except concurrent.futures.TimeoutError:
            pytest.fail("Timeout exceeded for docs test")

    clear_cache_dir()

    if result is not None:
        exc_type, exc_value, exc_traceback = result
        print("Exception occurred:")
        traceback.print_exception(exc_type, exc_value, exc_traceback)
        pytest.fail(f"Exception occurred: {exc_type.__name__}: {exc_value}")


def test_readme_has_cli_examples():
    commands = {shlex.split(line)[1] for line in extract_cli_lines(README)}
    assert commands == {"site-export", "aggregate", "tune", "simulate"}


@pytest.mark.parametrize("line", extract_cli_lines(README))
def test_readme_cli_parses(line):
    args = cli.build_parser().parse_args(shlex.split(line)[1:])
    assert args.command in cli._COMMANDS
