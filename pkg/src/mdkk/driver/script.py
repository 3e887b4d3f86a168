"""Input-script tokenizer with a per-command validation table.

Scripts are line-oriented: '#' starts a comment, a trailing '&' continues
the logical line, tokens are whitespace-separated.  Every command is checked
against COMMAND_SPECS at parse time so unknown names, bad arity, and
malformed numbers are rejected with the offending line number before
anything executes.
"""

from __future__ import annotations

import difflib


class ParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class Command:
    """One script command: a name, raw argument tokens, and its source line."""

    def __init__(self, name: str, args: list[str], line_no: int):
        self.name = name
        self.args = list(args)
        self.line_no = line_no

    @property
    def tokens(self) -> list[str]:
        return [self.name, *self.args]

    def __repr__(self):
        return f"Command({' '.join(self.tokens)!r}, line {self.line_no})"

    def __eq__(self, other):
        return isinstance(other, Command) and self.tokens == other.tokens


class Script:
    """Ordered command list; execution order is source order."""

    def __init__(self, commands: list[Command]):
        self.commands = list(commands)

    def __iter__(self):
        return iter(self.commands)

    def __len__(self):
        return len(self.commands)

    def token_stream(self) -> list[list[str]]:
        return [c.tokens for c in self.commands]


def _check_float(tok: str, line_no: int, what: str) -> None:
    try:
        float(tok)
    except ValueError:
        raise ParseError(line_no, f"malformed number {tok!r} for {what}") from None


def _check_int(tok: str, line_no: int, what: str) -> None:
    try:
        int(tok)
    except ValueError:
        raise ParseError(line_no, f"malformed integer {tok!r} for {what}") from None


def _fixed(*types):
    """Signature of fixed arity: each entry is float/int/str/choice tuple."""
    def validate(args, line_no, name):
        if len(args) != len(types):
            raise ParseError(line_no, f"{name} expects {len(types)} argument(s), "
                                      f"got {len(args)}")
        for tok, ty in zip(args, types):
            if ty == "float":
                _check_float(tok, line_no, name)
            elif ty == "int":
                _check_int(tok, line_no, name)
            elif isinstance(ty, tuple):
                if tok not in ty:
                    raise ParseError(line_no, f"{name}: expected one of {ty}, got {tok!r}")
            # "str": any token
    return validate


def _validate_pair_style(args, line_no, name):
    if not args:
        raise ParseError(line_no, "pair_style expects a style name")
    style = args[0]
    if style.startswith("snap"):
        if len(args) != 3:
            raise ParseError(line_no, "pair_style snap expects: cutoff coeff_file")
        _check_float(args[1], line_no, "pair_style cutoff")
    else:
        if len(args) != 2:
            raise ParseError(line_no, f"pair_style {style} expects: cutoff")
        _check_float(args[1], line_no, "pair_style cutoff")


def _validate_onoff(n_on_args, on_types):
    def validate(args, line_no, name):
        if not args:
            raise ParseError(line_no, f"{name} expects 'on <params>' or 'off'")
        if args[0] == "off":
            if len(args) != 1:
                raise ParseError(line_no, f"{name} off takes no parameters")
            return
        if args[0] != "on":
            raise ParseError(line_no, f"{name}: expected 'on' or 'off', got {args[0]!r}")
        if len(args) != 1 + n_on_args:
            raise ParseError(line_no, f"{name} on expects {n_on_args} parameter(s), "
                                      f"got {len(args) - 1}")
        for tok, ty in zip(args[1:], on_types):
            if ty == "float":
                _check_float(tok, line_no, name)
    return validate


def _validate_bench(args, line_no, name):
    if len(args) != 4:
        raise ParseError(line_no, "bench expects: potential sizes reps out_csv")
    for part in args[1].split(","):
        _check_int(part, line_no, "bench sizes")
    _check_int(args[2], line_no, "bench reps")


COMMAND_SPECS = {
    "units": _fixed(("lj",)),
    "boundary": _fixed(("p",), ("p",), ("p",)),
    "lattice": _fixed(("fcc", "sc"), "float"),
    "create_box": _fixed("int", "int", "int"),
    "create_atoms": _fixed(),
    "mass": _fixed("float"),
    "velocity": _fixed("float", "int"),
    "pair_style": _validate_pair_style,
    "pair_coeff": _fixed("float", "float"),
    "qeq": _validate_onoff(4, ["float"] * 4),
    "torsion": _validate_onoff(7, ["float"] * 7),
    "suffix": _fixed("str"),
    "timestep": _fixed("float"),
    "thermo": _fixed("int"),
    "run": _fixed("int"),
    "bench": _validate_bench,
}


def parse_script(text: str) -> Script:
    """Tokenize and validate a script; raises ParseError with line numbers."""
    commands = []
    pending: list[str] = []
    pending_line = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        continued = False
        stripped = body.rstrip()
        if stripped.endswith("&"):
            continued = True
            stripped = stripped[:-1]
        tokens = stripped.split()
        if tokens and not pending:
            pending_line = line_no
        pending.extend(tokens)
        # a line terminates the pending command only if it contributed tokens
        # and does not itself continue; blank/comment lines never terminate
        if continued or not tokens:
            continue
        name, *args = pending
        if name not in COMMAND_SPECS:
            near = difflib.get_close_matches(name, COMMAND_SPECS, n=3)
            hint = f"; did you mean {', '.join(near)}?" if near else ""
            raise ParseError(pending_line, f"unknown command {name!r}{hint}")
        COMMAND_SPECS[name](args, pending_line, name)
        commands.append(Command(name, args, pending_line))
        pending = []
    if pending:
        name, *args = pending
        if name not in COMMAND_SPECS:
            raise ParseError(pending_line, f"unknown command {name!r}")
        COMMAND_SPECS[name](args, pending_line, name)
        commands.append(Command(name, args, pending_line))
    return Script(commands)


def serialize(script: Script) -> str:
    """One command per line; parse(serialize(s)) reproduces s token-for-token."""
    return "\n".join(" ".join(c.tokens) for c in script.commands) + "\n"
