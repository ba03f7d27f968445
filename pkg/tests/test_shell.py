"""Test the command interpreter and the command-line entry point."""

from io import StringIO

from pytest import raises

import cloudcast

from cloudcast import commands, shell
from cloudcast.errors import CloudcastNameError

from .utils import execute_shell


def capture():
    out = StringIO()
    cloudcast.set_output(out)
    return out


def test_shell_commands():
    out = capture()
    execute_shell('setglobal clusters 2\n'
                  'echo making ${clusters} clusters\n'
                  'config force 1\n'
                  'version\n'
                  'help synth\n')
    text = out.getvalue()
    assert 'making 2 clusters' in text
    assert 'cloudcast version: 1.0' in text
    assert 'Help for command synth' in text
    assert commands.options['force'] is True


def test_shell_errors_are_logged():
    out = capture()
    execute_shell('forecast everything\nconfig nada\necho done\n')
    text = out.getvalue()
    assert "unknown cloudcast command: 'forecast'" in text
    assert 'done' in text


def test_shell_fail():
    with raises(CloudcastNameError):
        execute_shell('forecast everything', fail_on_unknown=True)


def test_shell_completion():
    loop = shell.CommandLoop(stdin=StringIO())
    try:
        assert shell.get_command_shell() is loop
        assert loop.prompt == 'runs: runs\n>> '
        assert 'do_scenario' in loop.get_names()
        line = 'scenario --scenario all'
        assert loop.complete_scenario('all', line, len(line) - 3,
                                      len(line)) == [
            'all', 'all_ft', 'all_but_one', 'all_but_one_ft']
        assert loop.complete_scenario('all', 'scenario all', 9, 12) == []
    finally:
        shell.CommandLoop.reset()


def test_main_version():
    with raises(SystemExit) as e:
        shell.main(['-v'])
    assert e.value.code == 0


def test_main_scripts(tmp_path, monkeypatch):
    monkeypatch.setattr(shell.parse, 'first_error', None)
    good = tmp_path / 'good.ccast'
    good.write_text('setglobal name demo\necho hello ${name}\n')
    bad = tmp_path / 'bad.ccast'
    bad.write_text('echo before\nforecast everything\n')
    log_file = tmp_path / 'out.log'

    with raises(SystemExit) as e:
        shell.main(['-o', str(log_file), str(good)])
    assert e.value.code == 0
    assert 'hello demo' in log_file.read_text()
    assert '1 of 1 files SUCCEEDED.' in log_file.read_text()

    with raises(SystemExit) as e:
        shell.main(['-o', str(log_file), str(tmp_path)])
    assert e.value.code == 1
    text = log_file.read_text()
    assert '1 of 2 files SUCCEEDED.' in text
    assert 'First error: CloudcastNameError raised on line 2' in text


def test_main_invalid_options(tmp_path):
    with raises(SystemExit) as e:
        shell.main(['-q'])
    assert 'incompatible' in str(e.value.code)
    with raises(SystemExit) as e:
        shell.main(['-l', 'chatty', str(tmp_path)])
    assert 'Valid log levels' in str(e.value.code)
    with raises(SystemExit) as e:
        shell.main(['-c', str(tmp_path / 'missing.json'), str(tmp_path)])
    assert 'Invalid run configuration' in str(e.value.code)
