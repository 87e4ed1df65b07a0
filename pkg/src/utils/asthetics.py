from typing import Iterable, Sequence

from colorama import Fore, Style

RULE = "─" * 60


def format_banner(msg: str, color: str = Fore.YELLOW) -> str:
    """
    Formats a message as a framed banner for run headers and final verdicts.

    Args:
        msg (str): Text inside the banner.
        color (str): colorama foreground colour.

    Returns:
        str: Banner with coloured borders.
    """

    top = color + "*" * 60 + Fore.RESET
    mid = color + msg + Fore.RESET
    bot = color + "*" * 60 + Fore.RESET
    return f"\n{top}\n{mid}\n{bot}\n"


def format_value(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        if value == float("inf"):
            return "never"
        return f"{value:.4g}"
    return str(value)


def format_table(headers: Sequence[str], rows: Iterable[Sequence], width: int = 14) -> str:
    """
    Left-aligned, pipe-separated table with a rule under the header.

    Args:
        headers (Sequence[str]): Column titles.
        rows (Iterable[Sequence]): Row values; floats are printed with 4 significant digits.
        width (int): Column width.

    Returns:
        str: The table as one string.
    """
    lines = [" | ".join(f"{h:<{width}}" for h in headers), "─" * ((width + 3) * len(headers) - 3)]
    for row in rows:
        lines.append(" | ".join(f"{format_value(v):<{width}}" for v in row))
    return "\n".join(lines)


def print_section(title: str, body: str) -> None:
    """Cyan section title, a rule, the body and a closing rule."""
    print(Fore.CYAN + title + Style.RESET_ALL)
    print(RULE)
    print(body)
    print(RULE + "\n")


def print_error(msg: str) -> None:
    print(Fore.RED + f"ERROR: {msg}" + Style.RESET_ALL)
