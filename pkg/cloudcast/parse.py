"""Code parsing and evaluation for cloudcast pipeline scripts.

A script holds one command per line, followed by its arguments:

    # comments start with a hash
    setglobal data demo-data
    synth --clusters 2 --data-root ${data}
    split --mode bivariate --data-root ${data}

Arguments may be quoted.  Arguments of the form --name value, --name=value
or a trailing --flag become keyword arguments of the command.
"""

import re
import sys

from io import StringIO

from pyparsing import (
    alphas, alphanums, CharsNotIn, Combine, Group, Literal, Opt,
    ParseException, printables, pyparsing_common, remove_quotes,
    rest_of_line, Suppress, Word, ZeroOrMore, delimited_list)

from . import log, namespaces
from .errors import CloudcastException, CloudcastNameError


# pyparsing stuff

# basically, a valid Python identifier:
command = Word(alphas + '_', alphanums + '_')
command = command.set_results_name('command')
command.set_name('command')

# arguments to it.

_bslash = '\\'
_sglQuote = Literal("'")
_dblQuote = Literal('"')
_escapables = printables
_escapedChar = Word(_bslash, _escapables, exact=2)
dblQuotedString = Combine(
    _dblQuote + ZeroOrMore(CharsNotIn('\\"\n\r') | _escapedChar | '""') +
    _dblQuote).streamline().set_name("string enclosed in double quotes")
sglQuotedString = Combine(
    _sglQuote + ZeroOrMore(CharsNotIn("\\'\n\r") | _escapedChar | "''") +
    _sglQuote).streamline().set_name('string enclosed in single quotes')
quotedArg = (dblQuotedString | sglQuotedString)
quotedArg.set_parse_action(remove_quotes)
quotedArg.set_name('quotedArg')

plainArgChars = printables.replace('#', '').replace('"', '').replace("'", "")
plainArg = Word(plainArgChars)
plainArg.set_name('plainArg')

arguments = Group(ZeroOrMore(quotedArg | plainArg))
arguments = arguments.set_results_name('arguments')
arguments.set_name('arguments')

# comment line.
comment = Literal('#') + rest_of_line
comment = comment.suppress()
comment.set_name('comment')

full_command = comment | (command + arguments + Opt(comment))
full_command.set_name('full_command')

# lists of seeds like 0-9 or 1,3,5 and of levels like 95,97.5,99
_integer = pyparsing_common.signed_integer
int_range = Group(_integer + Opt(Suppress('-') + _integer))
int_list = delimited_list(int_range, ',')
number_list = delimited_list(pyparsing_common.number, ',')


command_list = []  # filled in by namespaces.init_global_dict().

first_error = None  # the first error of the scripts run so far


def parse_int_list(text):
    """Parse a list of integers with ranges, like '0-4,7'."""
    if isinstance(text, int):
        return [text]
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    try:
        groups = int_list.parse_string(str(text), parse_all=True)
    except ParseException as e:
        raise CloudcastException("invalid integer list '%s': %s" % (text, e))
    values = []
    for group in groups:
        first, last = group[0], group[-1]
        if last < first:
            raise CloudcastException("empty range '%d-%d'" % (first, last))
        values.extend(range(first, last + 1))
    return values


def parse_number_list(text):
    """Parse a comma-separated list of numbers, like '95,97,99'."""
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in
                number_list.parse_string(str(text), parse_all=True)]
    except ParseException as e:
        raise CloudcastException("invalid number list '%s': %s" % (text, e))


def split_options(args):
    """Separate positional arguments from --name value options.

    Return the positional arguments and a dict of keyword arguments;
    dashes in option names become underscores and an option without a
    value is True.
    """
    positional, options = [], {}
    args = list(args)
    i = 0
    while i < len(args):
        arg = args[i]
        if isinstance(arg, str) and arg.startswith('--') and len(arg) > 2:
            name, eq, value = arg[2:].partition('=')
            name = name.replace('-', '_')
            if not eq:
                if i + 1 < len(args) and not str(
                        args[i + 1]).startswith('--'):
                    i += 1
                    value = args[i]
                else:
                    value = True
            options[name] = value
        else:
            positional.append(arg)
        i += 1
    return positional, options


def process_args(args, globals_dict, locals_dict):
    """Process string arguments.

    Take a list of string arguments parsed via pyparsing and substitute
    the ${variables} in them.

    Return a new list.
    """
    return [variable_substitution(arg, globals_dict, locals_dict)
            for arg in args]


def execute_command(cmd, args, globals_dict, locals_dict, cmdinfo):
    """Actually execute the command.

    Side effects: __args__ and __kwargs__ are set to the arguments,
    __cmd__ is set to the command.
    """
    if cmd not in command_list:
        raise CloudcastNameError("unknown cloudcast command: '%s'" % (cmd,))
    positional, options = split_options(args)
    locals_dict['__cmd__'] = cmd
    locals_dict['__args__'] = positional
    locals_dict['__kwargs__'] = options

    eval_str = "%s(*__args__, **__kwargs__)" % (cmd,)

    # compile the code object so that we can get 'cmdinfo' into the
    # error tracebacks
    codeobj = compile(eval_str, cmdinfo, 'eval')

    return eval(codeobj, globals_dict, locals_dict)


_log_commands = log.debug


def parse_command(line, globals_dict, locals_dict):
    """Parse command."""
    try:
        res = full_command.parse_string(line)
    except ParseException as e:
        log.error('PARSE ERROR: %s', e)
        res = None
    if res:
        _log_commands("cloudcast: executing cmd '%s'", line.strip())
        args = process_args(res.arguments.as_list(), globals_dict,
                            locals_dict)
        return res.command, args
    return None, None  # e.g. a comment


def execute_string(buf, **kw):
    """Execute commands from a string buffer."""
    if isinstance(buf, bytes):
        buf = buf.decode('utf-8')

    fp = StringIO(buf)

    kw['source'] = '<string buffer>'
    _execute_script(fp, **kw)


def execute_file(filename, **kw):
    """Execute commands from a file."""
    log.info('\n>> Running cloudcast file %s', filename)

    kw['source'] = filename
    if filename == '-':
        _execute_script(sys.stdin, **kw)
    else:
        with open(filename, encoding='utf-8') as inp:
            _execute_script(inp, **kw)


def _execute_script(inp, **kw):
    """Execute lines taken from a file-like iterator."""
    global first_error

    # initialize new local dictionary and get global and current local
    namespaces.new_local_dict()
    globals_dict, locals_dict = namespaces.get_glocals()

    # should we catch exceptions on failure?
    catch_errors = kw.get('never_fail')

    # sourceinfo stuff
    sourceinfo = kw.get('source', "<input>")

    try:

        for n, line in enumerate(inp, 1):
            line = line.strip()
            if not line:  # skip empty lines
                continue

            cmdinfo = '%s:%d' % (sourceinfo, n)
            log.debug('AT LINE: %s', cmdinfo)

            cmd, args = parse_command(line, globals_dict, locals_dict)
            if cmd is None:
                continue

            try:
                execute_command(cmd, args, globals_dict, locals_dict, cmdinfo)
            except SystemExit:
                # abort script execution if a SystemExit is raised
                return
            except Exception as e:
                error_type = e.__class__.__name__ or 'Error'
                error = "%s raised on line %d of '%s'" % (
                    error_type, n, sourceinfo)
                if line:
                    error += " while executing\n>> %s" % (line,)
                log.error("\nOops! %s", error)
                if not first_error:
                    first_error = error
                log.error("\nError: %s", str(e).strip())
                if not catch_errors:
                    raise

    finally:
        namespaces.pop_local_dict()


def log_commands(flag):
    """Turn printing of commands as they are executed on or off."""
    global _log_commands
    old_flag = _log_commands is log.info
    _log_commands = log.info if flag else log.debug
    return old_flag


_re_variable = re.compile("\\${(.*?)}")


def variable_substitution(raw_str, globals_dict, locals_dict):
    s = []
    pos = 0
    for m in _re_variable.finditer(raw_str):
        s.append(raw_str[pos:m.start()])
        try:
            s.append(str(eval(m.group(1), globals_dict, locals_dict)))
        except NameError:
            s.append(m.group())
        pos = m.end()
    s.append(raw_str[pos:])
    return ''.join(s)
