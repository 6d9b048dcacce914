"""Small shared helpers."""


def fmt_num(x) -> str:
    """Format a number for CSV output: integral values without a trailing
    ``.0``, everything else via the shortest round-trip float repr."""
    f = float(x)
    return str(int(f)) if f.is_integer() else repr(f)
