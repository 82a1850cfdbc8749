#!/usr/bin/env python3
"""Parser for duration strings.

Author, Copyright, and License
------------------------------
Copyright (c) 2022-2024 Hauke Daempfling (haukex@zero-g.net)
at the Leibniz Institute of Freshwater Ecology and Inland Fisheries (IGB),
Berlin, Germany, https://www.igb-berlin.de/

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License
along with this program. If not, see https://www.gnu.org/licenses/
"""
import re
import math

_split_re = re.compile(r'''(?<=[a-z])\s*(?=[0-9.])|(?<=[0-9.])\s+(?=[0-9.])''', re.IGNORECASE)
_dur_re = re.compile(r'''\A\s*(\d+(?:\.\d*)?|\.\d+)\s*(ms|us|[dhms])?\s*\Z''', re.IGNORECASE)

UNIT_US :dict[str, int] = { 'd': 86_400_000_000, 'h': 3_600_000_000, 'm': 60_000_000,
                            's': 1_000_000, 'ms': 1_000, 'us': 1 }

def parse_duration(string :str, *, default_unit :str = 's') -> int:
    """Parse a duration string into whole microseconds.

    Parses strings such as "1m 30s", "2.5s", "250ms" or "1h5m". Values without
    a unit are in ``default_unit``. Values are summed, e.g. "1m 1m 30s" is the
    same as "2m30s". The result is rounded half up to the microsecond."""
    if default_unit not in UNIT_US:
        raise ValueError(f"unknown unit {default_unit!r}")
    if not string or string.isspace(): return 0
    total = 0.0
    for part in _split_re.split(string):
        if m := _dur_re.fullmatch(part):
            unit = m.group(2).lower() if m.group(2) else default_unit
            total += float(m.group(1)) * UNIT_US[unit]
        else: raise ValueError(f"invalid duration string {string!r}")
    return math.floor(total + 0.5)

if __name__ == '__main__':  # pragma: no cover
    import sys
    for x in sys.argv[1:]: print(f"{parse_duration(x)}")
    sys.exit(0)
