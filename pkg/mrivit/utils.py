import csv
from decimal import ROUND_HALF_UP, Decimal


def round_half_up(value, places=0):
    """Round ``value`` half away from zero on its decimal representation.

    ``Decimal(repr(value))`` is used so that ``0.1 * 1645`` (printed as
    ``164.50000000000003`` or ``164.5``) rounds to 165 either way.
    """
    exponent = Decimal(1).scaleb(-places)
    rounded = Decimal(repr(float(value))).quantize(exponent, rounding=ROUND_HALF_UP)
    if places == 0:
        return int(rounded)
    return float(rounded)


def format_fixed(value, places=4):
    """Format with ``places`` decimals after round-half-up."""
    exponent = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(value))).quantize(exponent, rounding=ROUND_HALF_UP))


def write_csv(path, header, rows):
    """Write a CSV file with ``\\n`` line endings so outputs are byte-stable."""
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path):
    """Return the rows of a CSV file as dicts keyed by its header."""
    with open(path, newline='', encoding='utf-8') as handle:
        return list(csv.DictReader(handle))


def format_table(header, rows):
    """Align ``rows`` under ``header``: first column left, the others right."""
    rows = [[str(cell) for cell in row] for row in [header] + list(rows)]
    widths = [max(len(row[column]) for row in rows) for column in range(len(header))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])]
        cells += [cell.rjust(width) for cell, width in zip(row[1:], widths[1:])]
        lines.append('  '.join(cells).rstrip())
    return '\n'.join(lines) + '\n'
